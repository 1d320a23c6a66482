//! Global sequence alignment as a minimum-cost path on the lattice DAG.
//!
//! Node `(i, k)` means `i` predicted and `k` target tokens consumed. Every
//! node except the terminal `(T_p, T_t)` has up to three out-edges:
//!
//! - `Diag`: `(i, k) -> (i+1, k+1)`, cost `m[i][k]`
//! - `GapPred` (horizontal): `(i, k) -> (i, k+1)`, cost `gamma * m[min(i, T_p-1)][k]`
//! - `GapTarg` (vertical): `(i, k) -> (i+1, k)`, cost `gamma * m[i][min(k, T_t-1)]`
//!
//! A gap is priced as `gamma` times the diagonal move from the same node; on
//! the last row/column, where no diagonal exists, the nearest match cell is used.
//! Every path cost is linear in `m`, so `z*(m)` is concave and the path's
//! coefficient matrix is a supergradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment::{check_labels, check_log_distribution, clamped};
use crate::error::{Error, Result};
use crate::grad::{
    assemble_gengrad, Chain, CombLayer, EfficiencyClass, LayerOutput, SolveCounter, SolverOutcome,
    SparseJacobian,
};
use crate::matrix::Matrix;

/// Gap scale used in the experiments.
pub const DEFAULT_GAMMA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignGrid {
    m: Matrix,
    gamma: f64,
}

impl AlignGrid {
    pub fn new(m: Matrix, gamma: f64) -> Result<Self> {
        if !(gamma > 1.0) || !gamma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "gap scale gamma must be > 1, got {gamma}"
            )));
        }
        if m.rows() == 0 || m.cols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "alignment needs non-empty sequences, got {}x{}",
                m.rows(),
                m.cols()
            )));
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("match costs".into()));
        }
        Ok(Self { m, gamma })
    }

    /// Predicted length `T_p`.
    pub fn tp(&self) -> usize {
        self.m.rows()
    }

    /// Target length `T_t`.
    pub fn tt(&self) -> usize {
        self.m.cols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn match_costs(&self) -> &Matrix {
        &self.m
    }

    /// Match cell that prices the move `mv` leaving node `(i, k)`.
    #[inline]
    pub fn cell(&self, mv: Move, i: usize, k: usize) -> (usize, usize) {
        match mv {
            Move::Diag => (i, k),
            Move::GapPred => (i.min(self.tp() - 1), k),
            Move::GapTarg => (i, k.min(self.tt() - 1)),
        }
    }

    /// Multiplier of the cell cost for move `mv`.
    #[inline]
    pub fn coefficient(&self, mv: Move) -> f64 {
        match mv {
            Move::Diag => 1.0,
            Move::GapPred | Move::GapTarg => self.gamma,
        }
    }

    #[inline]
    pub fn edge_cost(&self, mv: Move, i: usize, k: usize) -> f64 {
        self.coefficient(mv) * self.m[self.cell(mv, i, k)]
    }

    /// Whether move `mv` exists out of node `(i, k)`.
    #[inline]
    pub fn has_move(&self, mv: Move, i: usize, k: usize) -> bool {
        match mv {
            Move::Diag => i < self.tp() && k < self.tt(),
            Move::GapPred => k < self.tt(),
            Move::GapTarg => i < self.tp(),
        }
    }

    /// Copy of the grid with match costs transposed (sequences swapped).
    pub fn transposed(&self) -> Self {
        Self {
            m: self.m.transpose(),
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Move {
    /// Match predicted token `i` with target token `k`.
    Diag,
    /// Gap in the predicted sequence: advances the target index only.
    GapPred,
    /// Gap in the target sequence: advances the predicted index only.
    GapTarg,
}

impl Move {
    pub const ALL: [Move; 3] = [Move::Diag, Move::GapPred, Move::GapTarg];

    #[inline]
    pub fn step(self, (i, k): (usize, usize)) -> (usize, usize) {
        match self {
            Move::Diag => (i + 1, k + 1),
            Move::GapPred => (i, k + 1),
            Move::GapTarg => (i + 1, k),
        }
    }

    /// Node the move must start from to land on `(i, k)`, if any.
    #[inline]
    fn source(self, (i, k): (usize, usize)) -> Option<(usize, usize)> {
        match self {
            Move::Diag if i > 0 && k > 0 => Some((i - 1, k - 1)),
            Move::GapPred if k > 0 => Some((i, k - 1)),
            Move::GapTarg if i > 0 => Some((i - 1, k)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathEdge {
    pub mv: Move,
    pub from: (usize, usize),
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignResult {
    /// Edges from `(0, 0)` to `(T_p, T_t)`.
    pub path: Vec<PathEdge>,
    pub z_star: f64,
    /// Coefficient of each match cell in the optimal path cost.
    pub edge_grad: BTreeMap<(usize, usize), f64>,
    pub unique: bool,
}

/// Whether gap costs are differentiated through during backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapGradient {
    /// Gap edge `gamma * m[cell]` contributes `gamma` to `cell`.
    #[default]
    Differentiate,
    /// Gap costs are treated as constants.
    Constant,
}

/// `m[i][k] = -<logP[i], Y[k]>` with log-probabilities floored at `ln(1e-12)`.
pub fn build_grid(logp: &Matrix, targets: &[usize], gamma: f64) -> Result<AlignGrid> {
    check_labels(targets, logp.cols())?;
    if targets.is_empty() || logp.rows() == 0 {
        return Err(Error::DimensionMismatch(
            "alignment needs non-empty sequences".into(),
        ));
    }
    let m = Matrix::from_fn(logp.rows(), targets.len(), |i, k| {
        -clamped(logp[(i, targets[k])])
    });
    AlignGrid::new(m, gamma)
}

/// Minimum-cost monotone path by dynamic programming over the node lattice.
///
/// Ties pick the incoming move in the order `Diag`, `GapPred`, `GapTarg`.
pub fn solve_gsa(grid: &AlignGrid) -> AlignResult {
    let (tp, tt) = (grid.tp(), grid.tt());
    let width = tt + 1;
    let idx = |i: usize, k: usize| i * width + k;
    let mut dist = vec![f64::INFINITY; (tp + 1) * width];
    let mut count = vec![0u64; (tp + 1) * width];
    let mut back = vec![Move::Diag; (tp + 1) * width];
    dist[0] = 0.0;
    count[0] = 1;

    for i in 0..=tp {
        for k in 0..=tt {
            if i == 0 && k == 0 {
                continue;
            }
            let mut best = f64::INFINITY;
            let mut best_mv = Move::Diag;
            let mut cands = [(Move::Diag, f64::INFINITY, 0u64); 3];
            for (slot, mv) in Move::ALL.into_iter().enumerate() {
                if let Some((si, sk)) = mv.source((i, k)) {
                    let cand = dist[idx(si, sk)] + grid.edge_cost(mv, si, sk);
                    cands[slot] = (mv, cand, count[idx(si, sk)]);
                    if cand < best {
                        best = cand;
                        best_mv = mv;
                    }
                }
            }
            let tol = 1e-9 * (1.0 + best.abs());
            let paths = cands
                .iter()
                .filter(|(_, c, _)| *c <= best + tol)
                .fold(0u64, |acc, (_, _, n)| acc.saturating_add(*n));
            dist[idx(i, k)] = best;
            count[idx(i, k)] = paths;
            back[idx(i, k)] = best_mv;
        }
    }

    let mut path = Vec::with_capacity(tp + tt);
    let mut node = (tp, tt);
    while node != (0, 0) {
        let mv = back[idx(node.0, node.1)];
        let from = mv.source(node).expect("backpointer leads to a valid source");
        path.push(PathEdge {
            mv,
            from,
            cost: grid.edge_cost(mv, from.0, from.1),
        });
        node = from;
    }
    path.reverse();

    let edge_grad = path_coefficients(grid, &path, GapGradient::Differentiate);
    AlignResult {
        z_star: dist[idx(tp, tt)],
        path,
        edge_grad,
        unique: count[idx(tp, tt)] == 1,
    }
}

fn path_coefficients(
    grid: &AlignGrid,
    path: &[PathEdge],
    mode: GapGradient,
) -> BTreeMap<(usize, usize), f64> {
    let mut grad = BTreeMap::new();
    for e in path {
        if e.mv != Move::Diag && mode == GapGradient::Constant {
            continue;
        }
        *grad.entry(grid.cell(e.mv, e.from.0, e.from.1)).or_insert(0.0) +=
            grid.coefficient(e.mv);
    }
    grad
}

/// Supergradient of `m -> z*(m)` as a dense `T_p x T_t` matrix.
pub fn gsa_gengrad(result: &AlignResult, grid: &AlignGrid) -> Matrix {
    gsa_gengrad_with(result, grid, GapGradient::Differentiate)
}

pub fn gsa_gengrad_with(result: &AlignResult, grid: &AlignGrid, mode: GapGradient) -> Matrix {
    let mut g = Matrix::zeros(grid.tp(), grid.tt());
    let coeffs = match mode {
        GapGradient::Differentiate => result.edge_grad.clone(),
        GapGradient::Constant => path_coefficients(grid, &result.path, mode),
    };
    for ((i, k), c) in coeffs {
        g[(i, k)] = c;
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct GsaLoss {
    pub loss: f64,
    /// Gradient w.r.t. the log-probabilities (`T_p x d`).
    pub grad_logp: Matrix,
    pub result: AlignResult,
}

/// Alignment loss of predicted log-probabilities against target tokens.
pub fn gsa_loss(logp: &Matrix, targets: &[usize], gamma: f64) -> Result<GsaLoss> {
    gsa_loss_with(logp, targets, gamma, GapGradient::Differentiate)
}

pub fn gsa_loss_with(
    logp: &Matrix,
    targets: &[usize],
    gamma: f64,
    mode: GapGradient,
) -> Result<GsaLoss> {
    check_log_distribution(logp)?;
    let grid = build_grid(logp, targets, gamma)?;
    let result = solve_gsa(&grid);
    let g = gsa_gengrad_with(&result, &grid, mode);
    let mut grad = Matrix::zeros(logp.rows(), logp.cols());
    for i in 0..grid.tp() {
        for (k, &y) in targets.iter().enumerate() {
            grad[(i, y)] -= g[(i, k)];
        }
    }
    Ok(GsaLoss {
        loss: result.z_star,
        grad_logp: grad,
        result,
    })
}

/// Alignment viewed as a shortest-path LP over lattice edges: `u` is the path
/// indicator and the edge costs `c(w)` depend on `w = logP (T_p x d)`.
#[derive(Debug)]
pub struct GsaLayer {
    targets: Vec<usize>,
    pred_len: usize,
    classes: usize,
    gamma: f64,
    mode: GapGradient,
    counter: SolveCounter,
}

impl GsaLayer {
    pub fn new(
        targets: Vec<usize>,
        pred_len: usize,
        classes: usize,
        gamma: f64,
        mode: GapGradient,
    ) -> Result<Self> {
        check_labels(&targets, classes)?;
        if !(gamma > 1.0) {
            return Err(Error::InvalidInput(format!(
                "gap scale gamma must be > 1, got {gamma}"
            )));
        }
        Ok(Self {
            targets,
            pred_len,
            classes,
            gamma,
            mode,
            counter: SolveCounter::default(),
        })
    }

    fn edge_index(&self, mv: Move, (i, k): (usize, usize)) -> usize {
        let node = i * (self.targets.len() + 1) + k;
        3 * node + mv as usize
    }

    fn num_edges(&self) -> usize {
        3 * (self.pred_len + 1) * (self.targets.len() + 1)
    }
}

impl CombLayer for GsaLayer {
    fn efficiency(&self) -> EfficiencyClass {
        EfficiencyClass::PrimalEff
    }

    fn param_dim(&self) -> usize {
        self.pred_len * self.classes
    }

    fn forward(&self, w: &[f64]) -> Result<LayerOutput> {
        let logp = Matrix::from_vec(self.pred_len, self.classes, w.to_vec())?;
        let grid = build_grid(&logp, &self.targets, self.gamma)?;
        self.counter.bump();
        let result = solve_gsa(&grid);

        let mut u = vec![0.0; self.num_edges()];
        for e in &result.path {
            u[self.edge_index(e.mv, e.from)] = 1.0;
        }
        let outcome = SolverOutcome {
            z_star: result.z_star,
            u_star: Some(u),
            v_star: None,
            unique: result.unique,
        };
        let gengrad = assemble_gengrad(&outcome, self.efficiency())?;

        let mut entries = Vec::new();
        for i in 0..=grid.tp() {
            for k in 0..=grid.tt() {
                for mv in Move::ALL {
                    if !grid.has_move(mv, i, k) {
                        continue;
                    }
                    if mv != Move::Diag && self.mode == GapGradient::Constant {
                        continue;
                    }
                    let (ci, ck) = grid.cell(mv, i, k);
                    entries.push((
                        self.edge_index(mv, (i, k)),
                        ci * self.classes + self.targets[ck],
                        -grid.coefficient(mv),
                    ));
                }
            }
        }
        let chain = Chain::primal(SparseJacobian::new(
            self.num_edges(),
            self.param_dim(),
            entries,
        )?);
        Ok(LayerOutput {
            outcome,
            gengrad,
            chain,
        })
    }

    fn solve_count(&self) -> usize {
        self.counter.get()
    }
}
