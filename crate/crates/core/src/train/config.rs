use crate::model::GenerationPath;
use crate::{Error, Result};

/// Storage precision of trainable parameters. Arithmetic is always `f64`;
/// `F32` rounds every parameter to single precision after each update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F64,
    F32,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            other => Err(Error::Invalid(format!("precision must be f64 or f32, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Precision::F64 => "f64",
            Precision::F32 => "f32",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Weight of the MAE term in the discriminator objective.
    pub lambda_reg: f64,
    pub batch_labeled: usize,
    pub batch_unlabeled: usize,
    pub batch_generated: usize,
    pub epochs: usize,
    pub seed: u64,
    pub d_steps: usize,
    pub precision: Precision,
    pub generation_path: GenerationPath,
    /// Also fit the regression head on generated documents against their
    /// conditioning labels.
    pub regress_generated: bool,
    /// Fit the regression head in standardized label units.
    pub standardize_labels: bool,
    /// Ignore the unlabeled pool entirely (supervised ablation).
    pub use_unlabeled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda_reg: 1.0,
            batch_labeled: 16,
            batch_unlabeled: 16,
            batch_generated: 16,
            epochs: 30,
            seed: 0,
            d_steps: 1,
            precision: Precision::F64,
            generation_path: GenerationPath::Soft,
            regress_generated: false,
            standardize_labels: true,
            use_unlabeled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Invalid(format!("{key} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Invalid("adam_eps must be > 0".into()));
        }
        if !(self.lambda_reg >= 0.0 && self.lambda_reg.is_finite()) {
            return Err(Error::Invalid(format!("lambda_reg must be ≥ 0, got {}", self.lambda_reg)));
        }
        for (key, v) in [
            ("batch_labeled", self.batch_labeled),
            ("batch_unlabeled", self.batch_unlabeled),
            ("batch_generated", self.batch_generated),
            ("d_steps", self.d_steps),
        ] {
            if v == 0 {
                return Err(Error::Invalid(format!("{key} must be positive")));
            }
        }
        Ok(())
    }
}
