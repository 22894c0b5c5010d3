use std::fs;
use std::io::Write;
use std::path::Path;

use super::vocab::Vocabulary;
use crate::nn::EmbeddingTable;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Reads a word-vector file: one record per line, a token followed by N
/// space-separated reals. PAD gets the zero row, UNK the mean of all
/// loaded vectors. The table is returned frozen.
pub fn load_embeddings(path: &Path) -> Result<(Vocabulary, EmbeddingTable)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&text, path)
}

pub fn parse_embeddings(text: &str, path: &Path) -> Result<(Vocabulary, EmbeddingTable)> {
    let mut vocab = Vocabulary::new();
    let mut rows: Vec<f64> = Vec::new();
    let mut dim = None;
    for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        if token.is_empty() || token.contains('\t') {
            return Err(Error::parse(path, lineno, "missing or malformed token"));
        }
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, lineno, format!("unparsable real `{f}`")))
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::parse(path, lineno, "no vector values"));
        }
        match dim {
            None => dim = Some(values.len()),
            Some(n) if n != values.len() => {
                return Err(Error::parse(
                    path,
                    lineno,
                    format!("expected {n} values, found {}", values.len()),
                ))
            }
            _ => {}
        }
        vocab
            .push(token)
            .map_err(|_| Error::parse(path, lineno, format!("duplicate token `{token}`")))?;
        rows.extend(values);
    }
    let Some(n) = dim else {
        return Err(Error::parse(path, 0, "embedding file is empty"));
    };
    let count = rows.len() / n;
    let mut unk = vec![0.0; n];
    for row in rows.chunks(n) {
        unk.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    unk.iter_mut().for_each(|a| *a /= count as f64);
    let mut data = vec![0.0; n];
    data.extend(unk);
    data.extend(rows);
    let table = EmbeddingTable::new(Tensor::new([count + 2, n], data)?, false)?;
    Ok((vocab, table))
}

/// Writes real tokens (ids ≥ 2) and their rows, lossless at 17 digits.
pub fn write_embeddings(path: &Path, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    let n = table.dim();
    let mut out = Vec::new();
    for (i, word) in vocab.words().enumerate() {
        let row = &table.matrix().data()[(i + 2) * n..(i + 3) * n];
        write!(out, "{word}").unwrap();
        for v in row {
            write!(out, " {}", super::format_label(*v)).unwrap();
        }
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("vectors.txt")
    }

    #[test]
    fn two_line_file() {
        let (vocab, table) = parse_embeddings("cat 1 2 3\ndog -1 0 0.5\n", p()).unwrap();
        assert_eq!(vocab.len(), 4);
        assert_eq!(table.vocab_size(), 4);
        assert_eq!(table.dim(), 3);
        let m = table.matrix().data();
        assert_eq!(&m[..3], &[0.0, 0.0, 0.0]);
        let expected = [0.0, 1.0, 1.75];
        for (a, b) in m[3..6].iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(&m[6..9], &[1.0, 2.0, 3.0]);
        assert_eq!(vocab.id("dog"), Some(3));
        assert!(!table.trainable);
    }

    #[test]
    fn dimension_is_enforced() {
        let err = parse_embeddings("cat 1 2 3\ndog 1 2 3 4\n", p()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicates_and_garbage_rejected() {
        assert!(parse_embeddings("cat 1\ncat 2\n", p()).is_err());
        assert!(parse_embeddings("cat 1 x\n", p()).is_err());
        assert!(parse_embeddings("", p()).is_err());
        assert!(parse_embeddings("cat 1e400\n", p()).is_err());
    }

    #[test]
    fn scientific_notation_parses() {
        let (_, t) = parse_embeddings("a 1.5e-3 -2E2\n", p()).unwrap();
        assert_eq!(&t.matrix().data()[4..], &[1.5e-3, -200.0]);
    }
}
