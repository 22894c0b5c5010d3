use crate::{Error, Result};

/// How generator rows reach the discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenerationPath {
    /// Expected embedding under each row distribution.
    Soft,
    /// One-hot argmax forward, identity gradient backward.
    StraightThrough,
}

impl std::str::FromStr for GenerationPath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(GenerationPath::Soft),
            "straight-through" => Ok(GenerationPath::StraightThrough),
            other => Err(Error::Invalid(format!(
                "generation path must be `soft` or `straight-through`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for GenerationPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GenerationPath::Soft => "soft",
            GenerationPath::StraightThrough => "straight-through",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// V, including PAD and UNK.
    pub vocab_size: usize,
    /// N.
    pub embed_dim: usize,
    /// D, the fixed document length.
    pub max_len: usize,
    pub hidden: usize,
    pub noise_dim: usize,
    pub channels: usize,
    pub kernel: usize,
    pub n_blocks: usize,
    pub temperature: f64,
    pub conditional: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 12,
            embed_dim: 8,
            max_len: 12,
            hidden: 32,
            noise_dim: 16,
            channels: 16,
            kernel: 3,
            n_blocks: 4,
            temperature: 1.0,
            conditional: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("max_len", self.max_len),
            ("hidden", self.hidden),
            ("noise_dim", self.noise_dim),
            ("channels", self.channels),
            ("kernel", self.kernel),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::Invalid(format!("{key} must be positive")));
            }
        }
        if self.vocab_size < 3 {
            return Err(Error::Invalid("vocab_size must exceed the two reserved tokens".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Invalid(format!("kernel must be odd, got {}", self.kernel)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Closed-form scalar parameter count of (generator, discriminator).
    pub fn parameter_counts(&self) -> (usize, usize) {
        let (v, n, h, z) = (self.vocab_size, self.embed_dim, self.hidden, self.noise_dim);
        let (c, k) = (self.channels, self.kernel);
        let init = 2 * ((z + 1) * h + h);
        let lstm = 4 * h * n + 4 * h * h + 4 * h;
        let out = v * h + v;
        let input_conv = c * n * k;
        let blocks = self.n_blocks * (2 * c * c * k + 4 * c);
        let fc = c * c + c;
        let heads = 2 * (c + 1);
        (init + lstm + out, input_conv + blocks + fc + heads)
    }
}
