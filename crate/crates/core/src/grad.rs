//! LP data, the combinatorial-layer contract and generalized-gradient assembly.
//!
//! A combinatorial problem parameterized by `w` is viewed through an LP
//! `min c^T u  s.t.  A u = b, u >= 0` whose data depend on `w`. From one solver
//! run with primal witness `u*` and dual witness `v*` the generalized gradients
//! of the optimal value are
//!
//! ```text
//! dz*/dc = u*,   dz*/db = v*,   dz*/dA = -v* u*^T
//! ```
//!
//! and the gradient with respect to `w` follows by composing with the chain
//! maps `dc/dw`, `db/dw`, `dA/dw`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

/// Absolute plus relative tolerance: `|diff| <= abs + rel * scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    #[inline]
    pub fn bound(&self, scale: f64) -> f64 {
        self.abs + self.rel * scale.abs()
    }

    #[inline]
    pub fn allows(&self, diff: f64, scale: f64) -> bool {
        diff.abs() <= self.bound(scale)
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::new(crate::DEFAULT_TOL, crate::DEFAULT_TOL)
    }
}

/// Dense LP in equality standard form: `min c^T u  s.t.  A u = b, u >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSpec {
    c: Vec<f64>,
    a: Matrix,
    b: Vec<f64>,
}

impl LpSpec {
    pub fn new(c: Vec<f64>, a: Matrix, b: Vec<f64>) -> Result<Self> {
        if c.len() != a.cols() {
            return Err(Error::DimensionMismatch(format!(
                "|c| = {} but A has {} columns",
                c.len(),
                a.cols()
            )));
        }
        if b.len() != a.rows() {
            return Err(Error::DimensionMismatch(format!(
                "|b| = {} but A has {} rows",
                b.len(),
                a.rows()
            )));
        }
        if !c.iter().chain(&b).all(|x| x.is_finite()) || !a.is_finite() {
            return Err(Error::NonFinite("LP data".into()));
        }
        Ok(Self { c, a, b })
    }

    pub fn from_rows(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let a = if a.is_empty() {
            Matrix::zeros(0, c.len())
        } else {
            Matrix::from_rows(a)?
        };
        Self::new(c.to_vec(), a, b.to_vec())
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Number of variables.
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    /// Number of equality constraints.
    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn with_c(&self, c: Vec<f64>) -> Result<Self> {
        Self::new(c, self.a.clone(), self.b.clone())
    }

    pub fn with_b(&self, b: Vec<f64>) -> Result<Self> {
        Self::new(self.c.clone(), self.a.clone(), b)
    }

    pub fn with_a(&self, a: Matrix) -> Result<Self> {
        Self::new(self.c.clone(), a, self.b.clone())
    }

    /// Largest violation of `A u = b` and `u >= 0`.
    pub fn primal_residual(&self, u: &[f64]) -> f64 {
        let mut worst = u.iter().fold(0.0_f64, |m, &x| m.max(-x));
        for i in 0..self.a.rows() {
            let lhs = dot(self.a.row(i), u);
            worst = worst.max((lhs - self.b[i]).abs());
        }
        worst
    }
}

/// Optimal value plus whichever witnesses the solver reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOutcome {
    pub z_star: f64,
    pub u_star: Option<Vec<f64>>,
    pub v_star: Option<Vec<f64>>,
    /// True when the reported optimum is known to be unique.
    pub unique: bool,
}

impl SolverOutcome {
    /// `|c.u* - b.v*|`, or `None` unless both witnesses are present.
    pub fn duality_gap(&self, spec: &LpSpec) -> Option<f64> {
        let u = self.u_star.as_ref()?;
        let v = self.v_star.as_ref()?;
        Some((dot(spec.c(), u) - dot(spec.b(), v)).abs())
    }
}

/// Which blocks of the LP depend on the parameters `w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dependencies {
    pub c: bool,
    pub b: bool,
    pub a: bool,
}

/// How a problem's parameters enter its LP formulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EfficiencyClass {
    /// Only the cost vector depends on `w`.
    PrimalEff,
    /// Only the right-hand side depends on `w`.
    DualEff,
    /// Any of `c`, `b`, `A` may depend on `w`.
    PrimalDualEff(Dependencies),
}

impl EfficiencyClass {
    pub fn dependencies(&self) -> Dependencies {
        match *self {
            EfficiencyClass::PrimalEff => Dependencies {
                c: true,
                b: false,
                a: false,
            },
            EfficiencyClass::DualEff => Dependencies {
                c: false,
                b: true,
                a: false,
            },
            EfficiencyClass::PrimalDualEff(d) => d,
        }
    }

    pub fn needs_primal(&self) -> bool {
        let d = self.dependencies();
        d.c || d.a
    }

    pub fn needs_dual(&self) -> bool {
        let d = self.dependencies();
        d.b || d.a
    }
}

/// One element of the generalized gradient of `z*` with respect to the LP data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenGrad {
    pub d_c: Option<Vec<f64>>,
    pub d_b: Option<Vec<f64>>,
    pub d_a: Option<Matrix>,
    /// Whether the witnesses were unique, i.e. the gradient is an ordinary one.
    pub unique: bool,
}

/// Builds the gradient components implied by `cls` from the solver witnesses.
pub fn assemble_gengrad(outcome: &SolverOutcome, cls: EfficiencyClass) -> Result<GenGrad> {
    let deps = cls.dependencies();
    let u = if cls.needs_primal() {
        Some(
            outcome
                .u_star
                .as_ref()
                .ok_or(Error::MissingWitness("primal solution u*"))?,
        )
    } else {
        None
    };
    let v = if cls.needs_dual() {
        Some(
            outcome
                .v_star
                .as_ref()
                .ok_or(Error::MissingWitness("dual solution v*"))?,
        )
    } else {
        None
    };
    let d_a = match (deps.a, u, v) {
        (true, Some(u), Some(v)) => Some(Matrix::from_fn(v.len(), u.len(), |i, j| 0.0 - v[i] * u[j])),
        _ => None,
    };
    Ok(GenGrad {
        d_c: if deps.c { u.cloned() } else { None },
        d_b: if deps.b { v.cloned() } else { None },
        d_a,
        unique: outcome.unique,
    })
}

/// Like [`assemble_gengrad`], additionally checking witness lengths against `spec`.
pub fn assemble_gengrad_for(
    spec: &LpSpec,
    outcome: &SolverOutcome,
    cls: EfficiencyClass,
) -> Result<GenGrad> {
    if let Some(u) = &outcome.u_star {
        if u.len() != spec.num_vars() {
            return Err(Error::DimensionMismatch(format!(
                "|u*| = {} but LP has {} variables",
                u.len(),
                spec.num_vars()
            )));
        }
    }
    if let Some(v) = &outcome.v_star {
        if v.len() != spec.num_constraints() {
            return Err(Error::DimensionMismatch(format!(
                "|v*| = {} but LP has {} constraints",
                v.len(),
                spec.num_constraints()
            )));
        }
    }
    assemble_gengrad(outcome, cls)
}

/// Sparse linear map given by `(output index, input index, value)` triplets.
///
/// For the `A` block the output index is the row-major position `i * p + j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseJacobian {
    out_dim: usize,
    in_dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseJacobian {
    pub fn new(out_dim: usize, in_dim: usize, entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(&(o, i, _)) = entries.iter().find(|(o, i, _)| *o >= out_dim || *i >= in_dim) {
            return Err(Error::DimensionMismatch(format!(
                "jacobian entry ({o}, {i}) outside {out_dim}x{in_dim}"
            )));
        }
        Ok(Self {
            out_dim,
            in_dim,
            entries,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            out_dim: n,
            in_dim: n,
            entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        }
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        Self {
            out_dim: n,
            in_dim: n,
            entries: (0..n).map(|i| (i, i, s)).collect(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    /// `J x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.out_dim];
        for &(o, i, v) in &self.entries {
            out[o] += v * x[i];
        }
        out
    }

    /// `J^T y`, accumulated into `acc` scaled by `alpha`.
    pub fn transpose_apply_into(&self, y: &[f64], alpha: f64, acc: &mut [f64]) {
        for &(o, i, v) in &self.entries {
            acc[i] += alpha * v * y[o];
        }
    }
}

/// Chain maps `dc/dw`, `db/dw`, `dA/dw` evaluated at the current `w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub param_dim: usize,
    pub dc: Option<SparseJacobian>,
    pub db: Option<SparseJacobian>,
    pub da: Option<SparseJacobian>,
}

impl Chain {
    pub fn primal(dc: SparseJacobian) -> Self {
        Self {
            param_dim: dc.in_dim(),
            dc: Some(dc),
            db: None,
            da: None,
        }
    }

    pub fn dual(db: SparseJacobian) -> Self {
        Self {
            param_dim: db.in_dim(),
            dc: None,
            db: Some(db),
            da: None,
        }
    }
}

fn check_block(name: &str, jac: &SparseJacobian, witness_len: usize, param_dim: usize) -> Result<()> {
    if jac.in_dim() != param_dim {
        return Err(Error::DimensionMismatch(format!(
            "d{name}/dw has input dim {} but w has dim {param_dim}",
            jac.in_dim()
        )));
    }
    if jac.out_dim() != witness_len {
        return Err(Error::DimensionMismatch(format!(
            "d{name}/dw has output dim {} but the gradient block has length {witness_len}",
            jac.out_dim()
        )));
    }
    Ok(())
}

/// Gradient of the loss with respect to `w`:
/// `upstream * ((dc/dw)^T u* + (db/dw)^T v* - <dA/dw, v* u*^T>)`.
///
/// Blocks without a chain map contribute nothing.
pub fn comb_loss_backward(gg: &GenGrad, chain: &Chain, upstream: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; chain.param_dim];
    if let Some(dc) = &chain.dc {
        let u = gg.d_c.as_ref().ok_or(Error::MissingWitness("d_c for dc/dw"))?;
        check_block("c", dc, u.len(), chain.param_dim)?;
        dc.transpose_apply_into(u, upstream, &mut out);
    }
    if let Some(db) = &chain.db {
        let v = gg.d_b.as_ref().ok_or(Error::MissingWitness("d_b for db/dw"))?;
        check_block("b", db, v.len(), chain.param_dim)?;
        db.transpose_apply_into(v, upstream, &mut out);
    }
    if let Some(da) = &chain.da {
        let d_a = gg.d_a.as_ref().ok_or(Error::MissingWitness("d_A for dA/dw"))?;
        check_block("A", da, d_a.as_slice().len(), chain.param_dim)?;
        // d_a already carries the minus sign of -v* u*^T.
        da.transpose_apply_into(d_a.as_slice(), upstream, &mut out);
    }
    Ok(out)
}

/// Counts solver invocations made by a layer.
#[derive(Debug, Default)]
pub struct SolveCounter(AtomicUsize);

impl SolveCounter {
    pub fn bump(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn get(&self) -> usize {
        self.0.load(Ordering::Relaxed)
    }
}

/// Result of a layer's forward pass: the solve plus everything backward needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub outcome: SolverOutcome,
    pub gengrad: GenGrad,
    pub chain: Chain,
}

impl LayerOutput {
    pub fn backward(&self, upstream: f64) -> Result<Vec<f64>> {
        comb_loss_backward(&self.gengrad, &self.chain, upstream)
    }
}

/// A combinatorial problem parameterized by `w`, solved by a black-box solver.
pub trait CombLayer {
    fn efficiency(&self) -> EfficiencyClass;

    /// Dimension of `w`.
    fn param_dim(&self) -> usize;

    /// Builds the instance at `w`, runs the solver once and assembles the gradient.
    fn forward(&self, w: &[f64]) -> Result<LayerOutput>;

    /// Number of solver runs performed so far.
    fn solve_count(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Curvature {
    /// Value is concave in the checked block: `f(w') <= f(w) + g.(w' - w)`.
    Concave,
    /// Value is convex in the checked block: `f(w') >= f(w) + g.(w' - w)`.
    Convex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupergradientReport {
    pub curvature: Curvature,
    pub trials: usize,
    /// Samples where `f` failed to evaluate (outside the domain).
    pub skipped: usize,
    /// Largest signed violation of the inequality; `<= 0` means it held.
    pub worst_violation: f64,
    pub pass: bool,
}

/// Samples points in the cube of half-width `radius` around `w` and checks the
/// linear over/under-estimator inequality for the candidate gradient `g`.
pub fn supergradient_check<F, R>(
    mut f: F,
    w: &[f64],
    g: &[f64],
    curvature: Curvature,
    trials: usize,
    radius: f64,
    tol: Tolerance,
    rng: &mut R,
) -> Result<SupergradientReport>
where
    F: FnMut(&[f64]) -> Result<f64>,
    R: Rng + ?Sized,
{
    if w.len() != g.len() {
        return Err(Error::DimensionMismatch(format!(
            "point has dim {} but gradient has dim {}",
            w.len(),
            g.len()
        )));
    }
    let z0 = f(w)?;
    let mut worst = f64::NEG_INFINITY;
    let mut pass = true;
    let mut skipped = 0;
    let mut w2 = vec![0.0; w.len()];
    for _ in 0..trials {
        for (dst, &x) in w2.iter_mut().zip(w) {
            *dst = x + radius * rng.random_range(-1.0..=1.0);
        }
        let z1 = match f(&w2) {
            Ok(z) => z,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let lin: f64 = g.iter().zip(w2.iter().zip(w)).map(|(gi, (a, b))| gi * (a - b)).sum();
        let violation = match curvature {
            Curvature::Concave => z1 - z0 - lin,
            Curvature::Convex => z0 + lin - z1,
        };
        worst = worst.max(violation);
        if violation > tol.bound(z0.abs().max(z1.abs())) {
            pass = false;
        }
    }
    Ok(SupergradientReport {
        curvature,
        trials,
        skipped,
        worst_violation: if worst.is_finite() { worst } else { 0.0 },
        pass,
    })
}
