/// MAE and RMSE of predictions against labels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub mae: f64,
    pub rmse: f64,
}

impl EvalMetrics {
    /// `None` for empty or mismatched inputs.
    pub fn compute(pred: &[f64], labels: &[f64]) -> Option<Self> {
        if pred.is_empty() || pred.len() != labels.len() {
            return None;
        }
        let n = pred.len() as f64;
        let (abs, sq) = pred
            .iter()
            .zip(labels)
            .fold((0.0, 0.0), |(a, s), (p, y)| (a + (p - y).abs(), s + (p - y).powi(2)));
        Some(EvalMetrics {
            mae: abs / n,
            rmse: (sq / n).sqrt(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub d_loss: f64,
    pub g_loss: f64,
    pub train_mae: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricHistory {
    pub records: Vec<EpochRecord>,
}

impl MetricHistory {
    pub const CSV_HEADER: &'static str = "epoch,d_loss,g_loss,train_mae,val_mae,val_rmse";

    /// Shortest round-trip decimal for every value.
    pub fn csv_row(r: &EpochRecord) -> String {
        format!(
            "{},{},{},{},{},{}",
            r.epoch, r.d_loss, r.g_loss, r.train_mae, r.val_mae, r.val_rmse
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&Self::csv_row(r));
            s.push('\n');
        }
        s
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&EpochRecord>, r| match best {
                Some(b) if b.val_mae <= r.val_mae => Some(b),
                _ => Some(r),
            })
    }
}
