use std::fs;
use std::io::Write;
use std::path::Path;

use super::vocab::Vocabulary;
use crate::nn::PAD;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: Option<f64>,
    /// 1-based source line, 0 when synthesized.
    pub line: usize,
}

/// Examples of one file, partitioned by label presence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Corpus {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    /// Lines whose text tokenized to nothing.
    pub dropped: usize,
}

/// Training and validation examples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorpusSplit {
    pub labeled: Vec<Example>,
    pub unlabeled: Vec<Example>,
    pub validation: Vec<Example>,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'..='\u{201F}' | '\u{2026}' | '\u{2013}' | '\u{2014}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00A1}'
        )
}

/// Lowercase, split on Unicode whitespace, trim punctuation from both ends
/// of each token, drop empties.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(is_punct).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Exactly `max_len` ids: unknown → UNK, keep the first `max_len`,
/// right-pad with PAD.
pub fn encode_document<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = tokens
        .iter()
        .take(max_len)
        .map(|t| vocab.id_or_unk(t.as_ref()))
        .collect();
    ids.resize(max_len, PAD);
    ids
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_label(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, path)
}

/// TSV lines `label<TAB>text`; an empty label marks an unlabeled example.
pub fn parse_corpus(text: &str, path: &Path) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let Some((label, body)) = line.split_once('\t') else {
            return Err(Error::parse(path, lineno, "missing TAB between label and text"));
        };
        let label = if label.is_empty() {
            None
        } else {
            let v: f64 = label
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::parse(path, lineno, format!("unparsable label `{label}`")))?;
            Some(v)
        };
        let tokens = tokenize(body);
        if tokens.is_empty() {
            corpus.dropped += 1;
            continue;
        }
        let ex = Example {
            tokens,
            label,
            line: lineno,
        };
        if ex.label.is_some() {
            corpus.labeled.push(ex);
        } else {
            corpus.unlabeled.push(ex);
        }
    }
    Ok(corpus)
}

pub fn write_corpus<'a>(path: &Path, examples: impl IntoIterator<Item = &'a Example>) -> Result<()> {
    let mut out = Vec::new();
    for ex in examples {
        if let Some(v) = ex.label {
            out.extend(format_label(v).bytes());
        }
        writeln!(out, "\t{}", ex.tokens.join(" ")).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::UNK;

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("Hello, World"), ["hello", "world"]);
        assert!(tokenize("  ").is_empty());
        assert_eq!(tokenize("don't stop"), ["don't", "stop"]);
        assert_eq!(tokenize("\u{201C}Quoted\u{201D} ... end!"), ["quoted", "end"]);
    }

    #[test]
    fn encode_pads_truncates_and_maps_unknowns() {
        let vocab = Vocabulary::from_tokens(["a", "b", "c"]).unwrap();
        assert_eq!(encode_document(&["a", "b"], &vocab, 4), [2, 3, 0, 0]);
        assert_eq!(encode_document(&["a", "b", "c", "a", "b"], &vocab, 3), [2, 3, 4]);
        assert_eq!(encode_document(&["zzz"], &vocab, 1), [UNK]);
        assert_eq!(encode_document(&["<pad>"], &vocab, 1), [UNK]);
    }

    #[test]
    fn corpus_lines() {
        let p = Path::new("c.tsv");
        let c = parse_corpus("3.5\thello world\n\tjust text\n", p).unwrap();
        assert_eq!(c.labeled.len(), 1);
        assert_eq!(c.labeled[0].label, Some(3.5));
        assert_eq!(c.labeled[0].tokens, ["hello", "world"]);
        assert_eq!(c.unlabeled.len(), 1);
        assert_eq!(c.unlabeled[0].line, 2);

        let err = parse_corpus("1\tok\nabc\ttext\n", p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        assert!(parse_corpus("no tab here\n", p).is_err());
    }

    #[test]
    fn empty_text_is_dropped() {
        let c = parse_corpus("1\t  ...  \n2\tfine\n", Path::new("c.tsv")).unwrap();
        assert_eq!(c.dropped, 1);
        assert_eq!(c.labeled.len(), 1);
    }

    #[test]
    fn label_formatting_round_trips() {
        for v in [0.1, 1.0 / 3.0, -4.5e-17, 9.0, 123456.789] {
            assert_eq!(format_label(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
