//! Minimum-cost perfect bipartite matching and the bag matching loss.
//!
//! [`solve_assignment`] runs the O(b^3) Hungarian method with row/column
//! potentials. The optimal permutation matrix is a supergradient of the
//! concave map `C -> z*(C)`, so the matching loss is differentiated by
//! treating the matching as constant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{
    assemble_gengrad, Chain, CombLayer, EfficiencyClass, GenGrad, LayerOutput, LpSpec,
    SolveCounter, SolverOutcome, SparseJacobian,
};
use crate::matrix::Matrix;
use crate::LOG_PROB_FLOOR;

/// Gap below which an alternative matching counts as tied with the optimum.
pub const UNIQUENESS_GAP: f64 = 1e-9;

/// Square cost matrix, `C[j][k]` = cost of pairing left item `j` with right item `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix")]
pub struct CostMatrix(Matrix);

impl CostMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::NonSquare {
                rows: m.rows(),
                cols: m.cols(),
            });
        }
        if !m.is_finite() {
            return Err(Error::NonFinite("cost matrix".into()));
        }
        Ok(Self(m))
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Bag size.
    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(j, &k)| self.0[(j, k)]).sum()
    }
}

impl TryFrom<Matrix> for CostMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        Self::new(m)
    }
}

impl std::ops::Index<(usize, usize)> for CostMatrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.0[idx]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingResult {
    /// Left item `j` is matched to right item `perm[j]`.
    pub perm: Vec<usize>,
    pub z_star: f64,
    pub duals_u: Vec<f64>,
    pub duals_v: Vec<f64>,
    pub unique: bool,
    /// Cost difference to the best different matching (`inf` when `b < 2`).
    pub second_best_gap: f64,
}

impl MatchingResult {
    /// The 0/1 permutation matrix `M` with `M[j][perm[j]] = 1`.
    pub fn permutation_matrix(&self) -> Matrix {
        let n = self.perm.len();
        let mut m = Matrix::zeros(n, n);
        for (j, &k) in self.perm.iter().enumerate() {
            m[(j, k)] = 1.0;
        }
        m
    }
}

/// Solves `min_M <C, M>_F` over permutation matrices.
///
/// Among tied optima the lexicographically smallest `perm` is returned.
pub fn solve_assignment(c: &CostMatrix) -> Result<MatchingResult> {
    let n = c.size();
    if n == 0 {
        return Ok(MatchingResult {
            perm: Vec::new(),
            z_star: 0.0,
            duals_u: Vec::new(),
            duals_v: Vec::new(),
            unique: true,
            second_best_gap: f64::INFINITY,
        });
    }
    let (mut perm, duals_u, duals_v) = hungarian(c.matrix());

    let reduced = |j: usize, k: usize| (c[(j, k)] - duals_u[j] - duals_v[k]).max(0.0);
    let gap = second_best_gap(n, &perm, &reduced);

    let tie_tol = 1e-11 * (1.0 + c.matrix().max_abs());
    if gap <= tie_tol {
        lexicographic_min(n, &mut perm, |j, k| reduced(j, k) <= tie_tol);
    }

    Ok(MatchingResult {
        z_star: c.cost_of(&perm),
        perm,
        duals_u,
        duals_v,
        unique: gap > UNIQUENESS_GAP,
        second_best_gap: gap,
    })
}

/// Shortest-augmenting-path Hungarian method. Returns the assignment and
/// potentials `u`, `v` with `u[j] + v[k] <= C[j][k]`, tight on matched pairs.
fn hungarian(c: &Matrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = c.rows();
    // 1-based bookkeeping; index 0 is the virtual column/row.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    (perm, u[1..].to_vec(), v[1..].to_vec())
}

/// Cost gap between the optimum and the best different permutation.
///
/// Any other permutation differs from `perm` by disjoint cycles of row
/// reassignments; with reduced costs (zero on `perm`) the cheapest one is the
/// minimum-weight cycle in the digraph `j -> j'` weighted by `r[j][perm[j']]`.
fn second_best_gap(n: usize, perm: &[usize], reduced: &impl Fn(usize, usize) -> f64) -> f64 {
    if n < 2 {
        return f64::INFINITY;
    }
    let mut dist = vec![f64::INFINITY; n * n];
    for j in 0..n {
        for jp in 0..n {
            if j != jp {
                dist[j * n + jp] = reduced(j, perm[jp]);
            }
        }
    }
    for mid in 0..n {
        for a in 0..n {
            let d_am = dist[a * n + mid];
            if d_am == f64::INFINITY {
                continue;
            }
            for b in 0..n {
                let cand = d_am + dist[mid * n + b];
                if cand < dist[a * n + b] {
                    dist[a * n + b] = cand;
                }
            }
        }
    }
    (0..n).map(|j| dist[j * n + j]).fold(f64::INFINITY, f64::min)
}

/// Rewrites `perm` (a perfect matching in the `tight` graph) into the
/// lexicographically smallest perfect matching of that graph.
fn lexicographic_min(n: usize, perm: &mut [usize], tight: impl Fn(usize, usize) -> bool) {
    let mut owner = vec![0usize; n];
    for (j, &k) in perm.iter().enumerate() {
        owner[k] = j;
    }
    let mut prev_row = vec![usize::MAX; n];
    for j in 0..n {
        for k in 0..perm[j] {
            let r = owner[k];
            if r <= j || !tight(j, k) {
                continue;
            }
            // Row r loses column k and must reach perm[j] through an
            // alternating path over rows > j.
            let target = perm[j];
            prev_row.iter_mut().for_each(|x| *x = usize::MAX);
            let mut queue = std::collections::VecDeque::from([r]);
            prev_row[r] = r;
            let mut found = None;
            'bfs: while let Some(x) = queue.pop_front() {
                for y in 0..n {
                    if y == k || y == perm[x] || !tight(x, y) {
                        continue;
                    }
                    if y == target {
                        found = Some(x);
                        break 'bfs;
                    }
                    let o = owner[y];
                    if o > j && prev_row[o] == usize::MAX {
                        prev_row[o] = x;
                        queue.push_back(o);
                    }
                }
            }
            let Some(mut x) = found else { continue };
            // Walk back: the last row takes `target`, every other row takes
            // the old column of its successor.
            let mut col = target;
            loop {
                let next_col = perm[x];
                perm[x] = col;
                owner[col] = x;
                if x == r {
                    break;
                }
                col = next_col;
                x = prev_row[x];
            }
            perm[j] = k;
            owner[k] = j;
            break;
        }
    }
}

/// One element of the generalized gradient of `z*` w.r.t. `C`: the
/// permutation matrix, flattened row-major.
pub fn assignment_gengrad(result: &MatchingResult) -> GenGrad {
    GenGrad {
        d_c: Some(result.permutation_matrix().into_vec()),
        d_b: None,
        d_a: None,
        unique: result.unique,
    }
}

/// The assignment problem as an LP over `vec(M)` with row-sum then column-sum
/// constraints.
pub fn birkhoff_lp(c: &CostMatrix) -> LpSpec {
    let n = c.size();
    let mut a = Matrix::zeros(2 * n, n * n);
    for j in 0..n {
        for k in 0..n {
            a[(j, j * n + k)] = 1.0;
            a[(n + k, j * n + k)] = 1.0;
        }
    }
    LpSpec::new(c.matrix().as_slice().to_vec(), a, vec![1.0; 2 * n])
        .expect("valid cost matrix gives a valid LP")
}

/// Rejects a row whose log-sum-exp deviates from zero by more than `1e-6`.
pub(crate) fn check_log_distribution(logp: &Matrix) -> Result<()> {
    for i in 0..logp.rows() {
        let row = logp.row(i);
        if row.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::NonFinite(format!("log-probability row {i}")));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        if lse.abs() > 1e-6 {
            return Err(Error::InvalidInput(format!(
                "row {i} of log-probabilities has log-sum-exp {lse:.3e}, expected 0"
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_labels(labels: &[usize], d: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= d) {
        Some(y) => Err(Error::InvalidInput(format!("label {y} outside {d} classes"))),
        None => Ok(()),
    }
}

#[inline]
pub(crate) fn clamped(logp: f64) -> f64 {
    logp.max(LOG_PROB_FLOOR)
}

/// `C[j][k] = -<log p_j, Y_k>` with log-probabilities floored at `ln(1e-12)`.
pub fn build_cost_matrix(logp: &Matrix, labels: &[usize]) -> Result<CostMatrix> {
    let b = labels.len();
    if logp.rows() != b {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {b} labels",
            logp.rows()
        )));
    }
    check_labels(labels, logp.cols())?;
    CostMatrix::new(Matrix::from_fn(b, b, |j, k| -clamped(logp[(j, labels[k])])))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchingLoss {
    pub loss: f64,
    /// Gradient of the loss w.r.t. the log-probabilities (`b x d`).
    pub grad_logp: Matrix,
    pub matching: MatchingResult,
}

/// Bag loss: minimum total cross-entropy over all pairings of predictions
/// with the (shuffled) labels, given as class indices.
pub fn matching_loss(logp: &Matrix, labels: &[usize]) -> Result<MatchingLoss> {
    check_log_distribution(logp)?;
    let cost = build_cost_matrix(logp, labels)?;
    let matching = solve_assignment(&cost)?;
    let mut grad = Matrix::zeros(logp.rows(), logp.cols());
    for (j, &k) in matching.perm.iter().enumerate() {
        grad[(j, labels[k])] = -1.0;
    }
    Ok(MatchingLoss {
        loss: matching.z_star,
        grad_logp: grad,
        matching,
    })
}

/// Accepts a bag iff `distinct classes / b >= threshold`.
pub fn filter_bag(labels: &[usize], threshold: f64) -> bool {
    if labels.is_empty() {
        return false;
    }
    let mut seen = labels.to_vec();
    seen.sort_unstable();
    seen.dedup();
    seen.len() as f64 >= threshold * labels.len() as f64
}

/// A bag of samples with labels presented in a hidden shuffled order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagBatch {
    /// One feature row per sample (`b x feature_dim`).
    pub features: Matrix,
    /// Class labels, permuted: `labels[i]` is the label of sample `hidden_sigma[i]`.
    pub labels: Vec<usize>,
    /// Kept for evaluation by the data generator; the loss never reads it.
    pub hidden_sigma: Vec<usize>,
}

impl BagBatch {
    pub fn size(&self) -> usize {
        self.labels.len()
    }
}

/// Layer with `w = vec(C)`: the cost matrix itself is the parameter.
#[derive(Debug)]
pub struct AssignmentLayer {
    size: usize,
    counter: SolveCounter,
}

impl AssignmentLayer {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            counter: SolveCounter::default(),
        }
    }
}

fn matching_outcome(result: &MatchingResult) -> SolverOutcome {
    let mut v = result.duals_u.clone();
    v.extend_from_slice(&result.duals_v);
    SolverOutcome {
        z_star: result.z_star,
        u_star: Some(result.permutation_matrix().into_vec()),
        v_star: Some(v),
        unique: result.unique,
    }
}

impl CombLayer for AssignmentLayer {
    fn efficiency(&self) -> EfficiencyClass {
        EfficiencyClass::PrimalEff
    }

    fn param_dim(&self) -> usize {
        self.size * self.size
    }

    fn forward(&self, w: &[f64]) -> Result<LayerOutput> {
        let cost = CostMatrix::new(Matrix::from_vec(self.size, self.size, w.to_vec())?)?;
        self.counter.bump();
        let result = solve_assignment(&cost)?;
        let outcome = matching_outcome(&result);
        let gengrad = assemble_gengrad(&outcome, self.efficiency())?;
        Ok(LayerOutput {
            outcome,
            gengrad,
            chain: Chain::primal(SparseJacobian::identity(self.param_dim())),
        })
    }

    fn solve_count(&self) -> usize {
        self.counter.get()
    }
}

/// Layer with `w = log-probabilities (b x d)` and `C[j][k] = -logP[j][labels[k]]`.
#[derive(Debug)]
pub struct MatchingLayer {
    labels: Vec<usize>,
    classes: usize,
    counter: SolveCounter,
}

impl MatchingLayer {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        check_labels(&labels, classes)?;
        Ok(Self {
            labels,
            classes,
            counter: SolveCounter::default(),
        })
    }
}

impl CombLayer for MatchingLayer {
    fn efficiency(&self) -> EfficiencyClass {
        EfficiencyClass::PrimalEff
    }

    fn param_dim(&self) -> usize {
        self.labels.len() * self.classes
    }

    fn forward(&self, w: &[f64]) -> Result<LayerOutput> {
        let b = self.labels.len();
        let logp = Matrix::from_vec(b, self.classes, w.to_vec())?;
        let cost = build_cost_matrix(&logp, &self.labels)?;
        self.counter.bump();
        let result = solve_assignment(&cost)?;
        let outcome = matching_outcome(&result);
        let gengrad = assemble_gengrad(&outcome, self.efficiency())?;
        // Clamping is passed straight through: dC[j][k]/dlogP[j][labels[k]] = -1.
        let entries = (0..b)
            .flat_map(|j| (0..b).map(move |k| (j, k)))
            .map(|(j, k)| (j * b + k, j * self.classes + self.labels[k], -1.0))
            .collect();
        let chain = Chain::primal(SparseJacobian::new(b * b, self.param_dim(), entries)?);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpref::enumerate_permutations;

    fn cm(rows: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_diagonal() {
        let r = solve_assignment(&cm(&[&[0.0, 1.0], &[1.0, 0.0]])).unwrap();
        assert_eq!(r.perm, vec![0, 1]);
        assert_eq!(r.z_star, 0.0);
        assert_eq!(r.permutation_matrix(), Matrix::identity(2));
        assert!(r.unique);
    }

    #[test]
    fn two_by_two_enumerated() {
        let c = cm(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let r = solve_assignment(&c).unwrap();
        assert_eq!(r.perm, vec![0, 1]);
        assert_eq!(r.z_star, 2.0);
        assert_eq!(enumerate_permutations(&c).0, 2.0);
    }

    #[test]
    fn three_by_three_enumerated() {
        let c = cm(&[&[4.0, 1.0, 3.0], &[2.0, 0.0, 5.0], &[3.0, 2.0, 2.0]]);
        let r = solve_assignment(&c).unwrap();
        let (z, argmin) = enumerate_permutations(&c);
        assert_eq!(z, 5.0);
        assert_eq!(argmin, vec![vec![1, 0, 2]]);
        assert_eq!(r.perm, vec![1, 0, 2]);
        assert_eq!(r.z_star, 5.0);
        let g = assignment_gengrad(&r);
        assert_eq!(
            g.d_c.unwrap(),
            vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn perturbing_an_active_edge() {
        let base = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let z0 = solve_assignment(&CostMatrix::from_rows(&base).unwrap()).unwrap().z_star;
        let eps = 1e-6;
        let mut bumped = base;
        bumped[0][1] += eps;
        let z1 = solve_assignment(&CostMatrix::from_rows(&bumped).unwrap()).unwrap().z_star;
        assert!(((z1 - z0) - eps).abs() < 1e-12);
    }

    #[test]
    fn ties_break_lexicographically() {
        let n = 4;
        let c = CostMatrix::new(Matrix::from_fn(n, n, |_, _| 1.0)).unwrap();
        let r = solve_assignment(&c).unwrap();
        assert_eq!(r.perm, vec![0, 1, 2, 3]);
        assert!(!r.unique);

        // Two identical label columns: swapping them is a tie.
        let c = cm(&[&[5.0, 1.0, 1.0], &[0.5, 3.0, 3.0], &[2.0, 2.0, 2.0]]);
        let r = solve_assignment(&c).unwrap();
        assert_eq!(r.perm, vec![1, 0, 2]);
        assert!(!r.unique);
        assert_eq!(r.second_best_gap, 0.0);
    }

    #[test]
    fn duals_certify_optimality() {
        let c = cm(&[&[4.0, 1.0, 3.0], &[2.0, 0.0, 5.0], &[3.0, 2.0, 2.0]]);
        let r = solve_assignment(&c).unwrap();
        let total: f64 = r.duals_u.iter().chain(&r.duals_v).sum();
        assert!((total - r.z_star).abs() < 1e-12);
        for j in 0..3 {
            for k in 0..3 {
                assert!(r.duals_u[j] + r.duals_v[k] <= c[(j, k)] + 1e-12);
            }
        }
        let lp = birkhoff_lp(&c);
        let outcome = matching_outcome(&r);
        assert!(outcome.duality_gap(&lp).unwrap() < 1e-12);
        assert!(lp.primal_residual(outcome.u_star.as_ref().unwrap()) < 1e-12);
    }

    #[test]
    fn rejects_bad_matrices() {
        let rect = Matrix::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]).unwrap();
        assert!(matches!(
            CostMatrix::new(rect),
            Err(Error::NonSquare { rows: 2, cols: 3 })
        ));
        let nan = Matrix::from_rows(&[[1.0, f64::NAN], [0.0, 1.0]]).unwrap();
        assert!(matches!(CostMatrix::new(nan), Err(Error::NonFinite(_))));
    }

    #[test]
    fn matching_loss_two_items() {
        let logp = Matrix::from_rows(&[
            [0.9_f64.ln(), 0.1_f64.ln()],
            [0.2_f64.ln(), 0.8_f64.ln()],
        ])
        .unwrap();
        // Y = (e2, e1)
        let out = matching_loss(&logp, &[1, 0]).unwrap();
        assert_eq!(out.matching.perm, vec![1, 0]);
        assert!((out.loss - 0.328_504_066_972_035_1).abs() < 1e-12);
        assert!((out.loss - 0.3285).abs() < 1e-4);
        let expected = Matrix::from_rows(&[[-1.0, 0.0], [0.0, -1.0]]).unwrap();
        assert_eq!(out.grad_logp, expected);
        let cost = build_cost_matrix(&logp, &[1, 0]).unwrap();
        assert!((cost[(0, 0)] - 2.302_585).abs() < 1e-6);
        assert!((cost[(0, 1)] - 0.105_361).abs() < 1e-6);
        assert!((cost[(1, 0)] - 0.223_144).abs() < 1e-6);
        assert!((cost[(1, 1)] - 1.609_438).abs() < 1e-6);
    }

    #[test]
    fn matching_loss_perfect_predictions() {
        // One-hot rows clamped: the off-target entries sit at the floor.
        let logp = Matrix::from_rows(&[[0.0, f64::NEG_INFINITY], [f64::NEG_INFINITY, 0.0]]).unwrap();
        let out = matching_loss(&logp, &[1, 0]).unwrap();
        assert_eq!(out.loss, 0.0);
        assert_eq!(out.matching.perm, vec![1, 0]);
        assert_eq!(out.grad_logp[(0, 0)], -1.0);
        assert_eq!(out.grad_logp[(1, 1)], -1.0);
    }

    #[test]
    fn matching_loss_bag_of_one_is_cross_entropy() {
        let logp = Matrix::from_rows(&[[0.3_f64.ln(), 0.7_f64.ln()]]).unwrap();
        let out = matching_loss(&logp, &[1]).unwrap();
        assert!((out.loss + 0.7_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn matching_loss_validates_rows() {
        let logp = Matrix::from_rows(&[[0.0, 0.0]]).unwrap();
        assert!(matches!(
            matching_loss(&logp, &[0]),
            Err(Error::InvalidInput(_))
        ));
        let logp = Matrix::from_rows(&[[0.5_f64.ln(), 0.5_f64.ln()]]).unwrap();
        assert!(matching_loss(&logp, &[2]).is_err());
        assert!(matches!(
            matching_loss(&logp, &[0, 1]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn bag_filter_threshold() {
        assert!(filter_bag(&[0, 1, 2, 3, 4, 5, 0, 1], 0.75));
        assert!(!filter_bag(&[0, 1, 2, 3, 4, 0, 1, 2], 0.75));
        assert!(filter_bag(&[0, 1, 2, 2], 0.75));
        assert!(filter_bag(&[7], 0.75));
    }

    #[test]
    fn matching_layer_matches_direct_gradient() {
        let logp = Matrix::from_rows(&[
            [0.9_f64.ln(), 0.1_f64.ln()],
            [0.2_f64.ln(), 0.8_f64.ln()],
        ])
        .unwrap();
        let layer = MatchingLayer::new(vec![1, 0], 2).unwrap();
        let out = layer.forward(logp.as_slice()).unwrap();
        let direct = matching_loss(&logp, &[1, 0]).unwrap();
        assert_eq!(out.outcome.z_star, direct.loss);
        assert_eq!(out.backward(1.0).unwrap(), direct.grad_logp.into_vec());
        assert_eq!(layer.solve_count(), 1);
    }
}
