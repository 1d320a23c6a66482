//! Wall-clock timing of one solve plus its backward pass.

use std::time::{Duration, Instant};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alignment::{GapGradient, GsaLayer, DEFAULT_GAMMA};
use crate::assignment::AssignmentLayer;
use crate::error::{Error, Result};
use crate::grad::{CombLayer, SparseJacobian};
use crate::lpref::{random_feasible_lp, AffineLpLayer, MAX_CONSTRAINTS, MAX_VARS};
use crate::tape::log_softmax_rows;
use crate::matrix::Matrix;

const MIN_SAMPLE: Duration = Duration::from_millis(20);
const ALIGN_CLASSES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchKind {
    Assignment,
    Gsa,
    Lp,
}

impl BenchKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchKind::Assignment => "assignment",
            BenchKind::Gsa => "gsa",
            BenchKind::Lp => "lp",
        }
    }

    fn max_size(self) -> usize {
        match self {
            BenchKind::Assignment => 1024,
            BenchKind::Gsa => 2048,
            BenchKind::Lp => MAX_VARS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub kind: &'static str,
    pub size: usize,
    pub repeat: usize,
    /// Mean seconds per forward/backward pair.
    pub seconds: f64,
    /// Solver runs per forward/backward pair.
    pub solves_per_pair: f64,
}

impl BenchRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{}", self.kind, self.size, self.repeat, self.seconds)
    }
}

pub const BENCH_HEADER: &str = "kind,size,repeat,seconds";

fn instance(kind: BenchKind, size: usize, rng: &mut ChaCha8Rng) -> Result<(Box<dyn CombLayer>, Vec<f64>)> {
    Ok(match kind {
        BenchKind::Assignment => {
            let w = (0..size * size).map(|_| rng.random_range(0.0..1.0)).collect();
            (Box::new(AssignmentLayer::new(size)), w)
        }
        BenchKind::Gsa => {
            let logits = Matrix::from_fn(size, ALIGN_CLASSES, |_, _| rng.random_range(-2.0..2.0));
            let targets = (0..size).map(|_| rng.random_range(0..ALIGN_CLASSES)).collect();
            let layer = GsaLayer::new(targets, size, ALIGN_CLASSES, DEFAULT_GAMMA, GapGradient::Differentiate)?;
            (Box::new(layer), log_softmax_rows(&logits).into_vec())
        }
        BenchKind::Lp => {
            let m = (size / 2).clamp(1, MAX_CONSTRAINTS);
            let base = random_feasible_lp(rng, size, m);
            let layer = AffineLpLayer::new(base, size, Some(SparseJacobian::identity(size)), None, None)?;
            (Box::new(layer), vec![0.0; size])
        }
    })
}

/// Times `repeats` fresh random instances per size. Each sample repeats the
/// forward/backward pair until at least 20 ms have elapsed.
pub fn run_bench(kind: BenchKind, sizes: &[usize], repeats: usize, rng: &mut ChaCha8Rng) -> Result<Vec<BenchRow>> {
    if sizes.is_empty() || repeats == 0 {
        return Err(Error::InvalidInput("need at least one size and one repeat".into()));
    }
    if let Some(&bad) = sizes.iter().find(|&&s| s < 2 || s > kind.max_size()) {
        return Err(Error::InvalidInput(format!(
            "{} size {bad} outside 2..={}",
            kind.name(),
            kind.max_size()
        )));
    }
    let mut rows = Vec::new();
    for &size in sizes {
        for repeat in 0..repeats {
            let (layer, w) = instance(kind, size, rng)?;
            let start = Instant::now();
            let mut pairs = 0usize;
            while pairs == 0 || start.elapsed() < MIN_SAMPLE {
                let out = layer.forward(&w)?;
                std::hint::black_box(out.backward(1.0)?);
                pairs += 1;
            }
            let seconds = start.elapsed().as_secs_f64() / pairs as f64;
            rows.push(BenchRow {
                kind: kind.name(),
                size,
                repeat,
                seconds,
                solves_per_pair: layer.solve_count() as f64 / pairs as f64,
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln(seconds)` against `ln(size)`, using the
/// median time at each size.
pub fn fit_exponent(rows: &[BenchRow]) -> Option<f64> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    if sizes.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = sizes
        .iter()
        .map(|&s| {
            let mut t: Vec<f64> = rows.iter().filter(|r| r.size == s).map(|r| r.seconds).collect();
            t.sort_by(f64::total_cmp);
            ((s as f64).ln(), t[t.len() / 2].ln())
        })
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
