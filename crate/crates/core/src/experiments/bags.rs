use rand::{Rng, RngCore};

use super::data::{gen_bag_dataset, shuffled};
use super::{stream, LossKind, Recorder, TrainConfig, TrainOutcome};
use crate::assignment::{filter_bag, BagBatch, MatchingLayer};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{adam_step, AdamConfig, Bindings, ParamStore, Tape, Var};

const INIT_STREAM: u64 = 2;
const BAG_STREAM: u64 = 3;

/// Two-layer ReLU network `dim -> hidden -> classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct BagModel {
    pub store: ParamStore,
}

impl BagModel {
    pub fn new<R: Rng + ?Sized>(dim: usize, hidden: usize, classes: usize, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        store.insert_glorot("w1", dim, hidden, rng)?;
        store.insert_zeros("b1", 1, hidden)?;
        store.insert_glorot("w2", hidden, classes, rng)?;
        store.insert_zeros("b2", 1, classes)?;
        Ok(Self { store })
    }

    /// Row-wise log-probabilities for a feature matrix.
    pub fn log_probs(&self, tape: &mut Tape, p: &Bindings, x: Var) -> Result<Var> {
        let h = tape.matmul(x, p.get("w1"))?;
        let h = tape.add_bias(h, p.get("b1"))?;
        let h = tape.relu(h);
        let o = tape.matmul(h, p.get("w2"))?;
        let o = tape.add_bias(o, p.get("b2"))?;
        Ok(tape.log_softmax(o))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape)?;
        let xv = tape.leaf(x.clone())?;
        let lp = self.log_probs(&mut tape, &p, xv)?;
        let lp = tape.value(lp);
        Ok((0..lp.rows())
            .map(|i| {
                let row = lp.row(i);
                (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect())
    }
}

/// Fraction of samples whose predicted class equals its own label.
pub fn bag_accuracy(model: &BagModel, x: &Matrix, y: &[usize]) -> Result<f64> {
    let pred = model.predict(x)?;
    let hits = pred.iter().zip(y).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / y.len().max(1) as f64)
}

/// Shuffles the samples, cuts them into bags of `b` (dropping the remainder),
/// keeps bags passing the distinct-class filter, and hides the pairing behind
/// a random permutation of each bag's labels.
pub fn make_bags(x: &Matrix, y: &[usize], b: usize, threshold: f64, epoch_seed: u64) -> Vec<BagBatch> {
    let mut rng = stream(epoch_seed, BAG_STREAM, 0);
    let order = shuffled(y.len(), &mut rng);
    let mut bags = Vec::new();
    for chunk in order.chunks_exact(b) {
        let labels: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
        if !filter_bag(&labels, threshold) {
            continue;
        }
        let sigma = shuffled(b, &mut rng);
        bags.push(BagBatch {
            features: Matrix::from_fn(b, x.cols(), |i, j| x[(chunk[i], j)]),
            labels: sigma.iter().map(|&s| labels[s]).collect(),
            hidden_sigma: sigma,
        });
    }
    bags
}

/// Trains the classifier from bags and logs per-epoch test accuracy.
pub fn train_bags(cfg: &TrainConfig, rec: &mut Recorder) -> Result<TrainOutcome> {
    cfg.validate()?;
    let b = cfg.bag_size;
    match cfg.loss {
        LossKind::Matching => {}
        LossKind::Mle if b == 1 => {}
        LossKind::Mle => {
            return Err(Error::InvalidInput(
                "the cross-entropy loss needs bag_size 1; use the matching loss for bags".into(),
            ))
        }
        LossKind::Gsa => {
            return Err(Error::InvalidInput("the bag task takes the matching or mle loss".into()))
        }
    }
    let data = gen_bag_dataset(&cfg.bag_data)?;
    let d = data.classes;
    let mut init = stream(cfg.seed, INIT_STREAM, 0);
    let mut model = BagModel::new(data.train_x.cols(), cfg.hidden, d, &mut init)?;
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let per_step = (cfg.batch_size / b).max(1);

    rec.record(0, "test", "accuracy", bag_accuracy(&model, &data.test_x, &data.test_y)?)?;
    for epoch in 1..=cfg.epochs {
        let epoch_seed = stream(cfg.seed, BAG_STREAM, epoch as u64).next_u64();
        let bags = make_bags(&data.train_x, &data.train_y, b, cfg.bag_threshold, epoch_seed);
        if bags.is_empty() {
            return Err(Error::InvalidInput(format!(
                "no bag of size {b} reaches the distinct-class threshold {}",
                cfg.bag_threshold
            )));
        }
        let mut total = 0.0;
        for group in bags.chunks(per_step) {
            let samples = group.len() * b;
            let x = Matrix::from_fn(samples, data.train_x.cols(), |i, j| group[i / b].features[(i % b, j)]);
            let mut tape = Tape::new();
            let p = model.store.bind(&mut tape)?;
            let xv = tape.leaf(x)?;
            let lp = model.log_probs(&mut tape, &p, xv)?;
            let sum = if b == 1 {
                let labels: Vec<usize> = group.iter().map(|g| g.labels[0]).collect();
                tape.nll(lp, &labels)?
            } else {
                let mut parts = Vec::with_capacity(group.len());
                for (k, bag) in group.iter().enumerate() {
                    let rows = tape.slice_rows(lp, k * b, b)?;
                    let layer = MatchingLayer::new(bag.labels.clone(), d)?;
                    parts.push(tape.comb(rows, &layer)?);
                }
                let stacked = tape.vstack(&parts)?;
                tape.sum(stacked)
            };
            let loss = tape.scale(sum, 1.0 / samples as f64);
            total += tape.scalar(sum);
            let grads = model.store.collect(&tape.backward(loss)?, &p);
            adam_step(&mut model.store, &grads, adam)?;
        }
        let n = (bags.len() * b) as f64;
        rec.record(epoch, "train", "loss", total / n)?;
        rec.record(epoch, "train", "bags", bags.len() as f64)?;
        rec.record(epoch, "test", "accuracy", bag_accuracy(&model, &data.test_x, &data.test_y)?)?;
    }
    Ok(TrainOutcome {
        metrics: rec.rows().to_vec(),
        params: model.store,
    })
}
