use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::stream;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// End-of-sequence token; also used as padding.
pub const EOS: usize = 0;

const DATA_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BagDatasetSpec {
    pub classes: usize,
    pub samples: usize,
    pub feature_dim: usize,
    /// Class centers are drawn from `N(0, separation^2 * I)`.
    pub separation: f64,
    pub seed: u64,
}

impl Default for BagDatasetSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            samples: 5000,
            feature_dim: 10,
            separation: 3.0,
            seed: 7,
        }
    }
}

impl BagDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.samples < self.classes || self.feature_dim == 0 {
            return Err(Error::InvalidInput(format!(
                "bag data needs classes >= 2, samples >= classes, feature_dim >= 1: {self:?}"
            )));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidInput("separation must be >= 0".into()));
        }
        Ok(())
    }
}

/// Features with per-sample labels, split 80/20.
#[derive(Debug, Clone, PartialEq)]
pub struct BagDataset {
    pub classes: usize,
    pub train_x: Matrix,
    pub train_y: Vec<usize>,
    pub test_x: Matrix,
    pub test_y: Vec<usize>,
}

/// Line record for bag datasets on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BagRecord {
    pub split: String,
    pub label: usize,
    pub features: Vec<f64>,
}

impl BagDataset {
    pub fn records(&self) -> Vec<BagRecord> {
        let rec = |split: &str, x: &Matrix, y: &[usize]| -> Vec<BagRecord> {
            y.iter()
                .enumerate()
                .map(|(i, &label)| BagRecord {
                    split: split.into(),
                    label,
                    features: x.row(i).to_vec(),
                })
                .collect()
        };
        let mut out = rec("train", &self.train_x, &self.train_y);
        out.extend(rec("test", &self.test_x, &self.test_y));
        out
    }
}

/// Gaussian clusters with unit noise around random class centers.
pub fn gen_bag_dataset(spec: &BagDatasetSpec) -> Result<BagDataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, DATA_STREAM, 0);
    let dim = spec.feature_dim;
    let scale = spec.separation;
    let centers = Matrix::from_fn(spec.classes, dim, |_, _| {
        scale * rng.sample::<f64, _>(StandardNormal)
    });
    let labels: Vec<usize> = (0..spec.samples).map(|_| rng.random_range(0..spec.classes)).collect();
    let x = Matrix::from_fn(spec.samples, dim, |i, j| {
        centers[(labels[i], j)] + rng.sample::<f64, _>(StandardNormal)
    });
    let n_train = spec.samples * 4 / 5;
    let take = |lo: usize, hi: usize| Matrix::from_fn(hi - lo, dim, |i, j| x[(lo + i, j)]);
    Ok(BagDataset {
        classes: spec.classes,
        train_x: take(0, n_train),
        train_y: labels[..n_train].to_vec(),
        test_x: take(n_train, spec.samples),
        test_y: labels[n_train..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeqTaskSpec {
    /// Token count including [`EOS`].
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub drop_prob: f64,
    pub insert_prob: f64,
    pub examples: usize,
    pub seed: u64,
}

impl Default for SeqTaskSpec {
    fn default() -> Self {
        Self {
            vocab: 6,
            min_len: 2,
            max_len: 5,
            drop_prob: 0.1,
            insert_prob: 0.1,
            examples: 2000,
            seed: 11,
        }
    }
}

impl SeqTaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 || self.min_len < 1 || self.max_len < self.min_len || self.examples < 2 {
            return Err(Error::InvalidInput(format!(
                "sequence task needs vocab >= 3, 1 <= min_len <= max_len, examples >= 2: {self:?}"
            )));
        }
        for p in [self.drop_prob, self.insert_prob] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidInput(format!("corruption probability {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    /// Longest possible target including the final [`EOS`].
    pub fn max_target_len(&self) -> usize {
        2 * self.max_len + 1
    }

    /// Longest source including the final [`EOS`].
    pub fn max_source_len(&self) -> usize {
        self.max_len + 1
    }
}

/// Source tokens and their corrupted copy; `target` ends with [`EOS`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl SeqPair {
    /// The uncorrupted copy: `source` followed by [`EOS`].
    pub fn reference(&self) -> Vec<usize> {
        let mut r = self.source.clone();
        r.push(EOS);
        r
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqDataset {
    pub train: Vec<SeqPair>,
    pub test: Vec<SeqPair>,
}

/// Uniform random sources; each kept token may be dropped, and after each
/// source position a random token may be inserted.
pub fn gen_seq_dataset(spec: &SeqTaskSpec) -> Result<SeqDataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, DATA_STREAM, 1);
    let mut pairs = Vec::with_capacity(spec.examples);
    for _ in 0..spec.examples {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let source: Vec<usize> = (0..len).map(|_| rng.random_range(1..spec.vocab)).collect();
        let mut target = Vec::with_capacity(2 * len + 1);
        for &t in &source {
            if rng.random::<f64>() >= spec.drop_prob {
                target.push(t);
            }
            if rng.random::<f64>() < spec.insert_prob {
                target.push(rng.random_range(1..spec.vocab));
            }
        }
        target.push(EOS);
        pairs.push(SeqPair { source, target });
    }
    let n_train = spec.examples * 4 / 5;
    let test = pairs.split_off(n_train);
    Ok(SeqDataset { train: pairs, test })
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut out: W, items: &[T]) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Io(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::InvalidInput(format!("line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub(crate) fn shuffled<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bag_dataset_is_seeded() {
        let spec = BagDatasetSpec {
            samples: 200,
            ..Default::default()
        };
        let a = gen_bag_dataset(&spec).unwrap();
        assert_eq!(a, gen_bag_dataset(&spec).unwrap());
        assert_eq!(a.train_y.len(), 160);
        assert_eq!(a.test_x.rows(), 40);
        let other = gen_bag_dataset(&BagDatasetSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn clean_copy_without_corruption() {
        let spec = SeqTaskSpec {
            drop_prob: 0.0,
            insert_prob: 0.0,
            examples: 50,
            ..Default::default()
        };
        let d = gen_seq_dataset(&spec).unwrap();
        for p in d.train.iter().chain(&d.test) {
            assert_eq!(p.target, p.reference());
            assert!(p.source.iter().all(|&t| t != EOS && t < spec.vocab));
        }
        assert_eq!(d, gen_seq_dataset(&spec).unwrap());
    }

    #[test]
    fn drop_rate_shortens_targets() {
        let spec = SeqTaskSpec {
            drop_prob: 0.1,
            insert_prob: 0.0,
            examples: 10_000,
            ..Default::default()
        };
        let d = gen_seq_dataset(&spec).unwrap();
        let all: Vec<&SeqPair> = d.train.iter().chain(&d.test).collect();
        let n = all.len() as f64;
        let src: f64 = all.iter().map(|p| p.source.len() as f64).sum::<f64>() / n;
        let tgt: f64 = all.iter().map(|p| p.target.len() as f64).sum::<f64>() / n;
        let expect = 0.9 * src + 1.0;
        assert!((tgt - expect).abs() <= 0.02 * expect, "{tgt} vs {expect}");
    }

    #[test]
    fn jsonl_round_trip() {
        let d = gen_seq_dataset(&SeqTaskSpec {
            examples: 10,
            ..Default::default()
        })
        .unwrap();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &d.train).unwrap();
        let back: Vec<SeqPair> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, d.train);
        assert!(read_jsonl::<SeqPair, _>("{\"source\": [1]}\n".as_bytes()).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(SeqTaskSpec {
            vocab: 2,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(BagDatasetSpec {
            classes: 1,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
