//! Synthetic training harnesses: bag-supervised classification with the
//! matching loss, and a noisy-copy sequence task with the alignment loss.

mod bags;
mod data;
mod seq;

pub use bags::{bag_accuracy, make_bags, train_bags, BagModel};
pub use data::{
    gen_bag_dataset, gen_seq_dataset, read_jsonl, write_jsonl, BagDataset, BagDatasetSpec,
    BagRecord, SeqDataset, SeqPair, SeqTaskSpec, EOS,
};
pub use seq::{evaluate_seq, train_seq, SeqEval, SeqModel};

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::DEFAULT_GAMMA;
use crate::error::{Error, Result};
use crate::tape::{GumbelConfig, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mle,
    Matching,
    Gsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedKind {
    #[default]
    Softmax,
    GumbelSt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseResample {
    #[default]
    PerStep,
    PerEpoch,
}

/// Everything a training run depends on. Missing fields take the defaults
/// below; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub feed: FeedKind,
    pub bag_size: usize,
    pub gamma: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub bag_threshold: f64,
    pub hidden: usize,
    pub gumbel: GumbelConfig,
    pub noise_resample: NoiseResample,
    pub bag_data: BagDatasetSpec,
    pub seq_data: SeqTaskSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Matching,
            feed: FeedKind::Softmax,
            bag_size: 1,
            gamma: DEFAULT_GAMMA,
            epochs: 30,
            learning_rate: 0.001,
            batch_size: 64,
            seed: DEFAULT_SEED,
            bag_threshold: 0.75,
            hidden: 32,
            gumbel: GumbelConfig::default(),
            noise_resample: NoiseResample::PerStep,
            bag_data: BagDatasetSpec::default(),
            seq_data: SeqTaskSpec::default(),
        }
    }
}

pub const DEFAULT_SEED: u64 = 20_190_601;

impl TrainConfig {
    /// Defaults for the bag task.
    pub fn bags(bag_size: usize) -> Self {
        Self {
            bag_size,
            ..Self::default()
        }
    }

    /// Defaults for the sequence task.
    pub fn seq(loss: LossKind, feed: FeedKind) -> Self {
        Self {
            loss,
            feed,
            epochs: 20,
            learning_rate: 0.001,
            batch_size: 32,
            hidden: 48,
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.bag_size < 1 {
            return bad("bag_size must be >= 1".into());
        }
        if self.loss == LossKind::Gsa && !(self.gamma > 1.0) {
            return bad(format!("gamma must be > 1 for the alignment loss, got {}", self.gamma));
        }
        if !(self.bag_threshold > 0.0 && self.bag_threshold <= 1.0) {
            return bad(format!("bag_threshold must be in (0, 1], got {}", self.bag_threshold));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.batch_size < 1 || self.hidden < 1 {
            return bad("batch_size and hidden must be >= 1".into());
        }
        self.gumbel.validate()?;
        self.bag_data.validate()?;
        self.seq_data.validate()?;
        Ok(())
    }
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub metric: String,
    pub value: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,split,metric,value,seconds";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.split, self.metric, self.value, self.seconds
        )
    }
}

/// Collects metric rows and optionally streams them to a writer as they
/// arrive, so an aborted run leaves its partial metrics behind.
pub struct Recorder {
    rows: Vec<MetricsRow>,
    sink: Option<Box<dyn Write>>,
    start: Instant,
}

impl std::fmt::Debug for Recorder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Recorder").field("rows", &self.rows.len()).finish()
    }
}

impl Default for Recorder {
    fn default() -> Self {
        Self::new()
    }
}

impl Recorder {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            sink: None,
            start: Instant::now(),
        }
    }

    pub fn streaming(mut sink: Box<dyn Write>) -> Result<Self> {
        writeln!(sink, "{METRICS_HEADER}")?;
        sink.flush()?;
        Ok(Self {
            rows: Vec::new(),
            sink: Some(sink),
            start: Instant::now(),
        })
    }

    pub fn record(&mut self, epoch: usize, split: &str, metric: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("metric {split}/{metric} at epoch {epoch}")));
        }
        let row = MetricsRow {
            epoch,
            split: split.into(),
            metric: metric.into(),
            value,
            seconds: self.start.elapsed().as_secs_f64(),
        };
        if let Some(sink) = self.sink.as_mut() {
            writeln!(sink, "{}", row.csv_line())?;
            sink.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<MetricsRow> {
        self.rows
    }
}

/// Result of a finished run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub params: ParamStore,
}

impl TrainOutcome {
    /// Value of `split/metric` at `epoch`, if logged.
    pub fn metric(&self, epoch: usize, split: &str, metric: &str) -> Option<f64> {
        find_metric(&self.metrics, epoch, split, metric)
    }

    pub fn last_epoch(&self) -> usize {
        self.metrics.iter().map(|r| r.epoch).max().unwrap_or(0)
    }
}

pub fn find_metric(rows: &[MetricsRow], epoch: usize, split: &str, metric: &str) -> Option<f64> {
    rows.iter()
        .find(|r| r.epoch == epoch && r.split == split && r.metric == metric)
        .map(|r| r.value)
}

/// Independent stream for a named purpose within a run.
pub(crate) fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose.wrapping_mul(1 << 32).wrapping_add(index));
    rng
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(TrainConfig::from_json(r#"{"epochs": 3}"#).is_ok());
        let err = TrainConfig::from_json(r#"{"epochz": 3}"#).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn gamma_checked_for_alignment_only() {
        let mut cfg = TrainConfig::seq(LossKind::Gsa, FeedKind::Softmax);
        cfg.gamma = 1.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("gamma must be > 1"), "{msg}");
        cfg.loss = LossKind::Mle;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn threshold_range() {
        let mut cfg = TrainConfig::bags(4);
        cfg.bag_threshold = 0.0;
        assert!(cfg.validate().is_err());
        cfg.bag_threshold = 1.0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn csv_lines() {
        let mut rec = Recorder::new();
        rec.record(3, "test", "accuracy", 0.5).unwrap();
        assert!(rec.rows()[0].csv_line().starts_with("3,test,accuracy,0.5,"));
        assert!(rec.record(3, "test", "accuracy", f64::NAN).is_err());
    }

    #[test]
    fn streams_are_independent() {
        use rand::Rng;
        let a: u64 = stream(1, 1, 0).random();
        let b: u64 = stream(1, 1, 1).random();
        let c: u64 = stream(1, 1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
