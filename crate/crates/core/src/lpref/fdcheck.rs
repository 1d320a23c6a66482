//! Finite-difference verification of the LP value gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{LpSpec, SolverOutcome};
use crate::matrix::{dot, Matrix};

use super::simplex::solve_lp;

/// Default finite-difference step.
pub const FD_EPS: f64 = 1e-5;
/// Default relative tolerance for difference quotients.
pub const FD_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub direction: Vec<f64>,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub pass: bool,
}

impl FdReport {
    /// Passes iff `|analytic - numeric| <= rel_tol * max(1, |analytic|)`.
    pub fn new(direction: Vec<f64>, analytic: f64, numeric: f64, rel_tol: f64) -> Self {
        let abs_error = (analytic - numeric).abs();
        Self {
            direction,
            analytic,
            numeric,
            abs_error,
            pass: abs_error <= rel_tol * analytic.abs().max(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub c_block: FdReport,
    pub b_block: FdReport,
    pub a_block: FdReport,
}

impl Theorem1Report {
    pub fn pass(&self) -> bool {
        self.c_block.pass && self.b_block.pass && self.a_block.pass
    }
}

fn unit_direction<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = dot(&d, &d).sqrt();
        if norm > 1e-3 {
            return d.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Compares one-sided difference quotients of `z*` along random unit
/// directions in `c`, `b` and `A` with `u*.d`, `v*.d` and `<-v* u*^T, D>`.
///
/// Requires a unique, nondegenerate optimum; otherwise the check is skipped
/// with [`Error::DegenerateInstance`].
pub fn check_theorem1<R: Rng + ?Sized>(
    spec: &LpSpec,
    outcome: &SolverOutcome,
    eps: f64,
    rel_tol: f64,
    rng: &mut R,
) -> Result<Theorem1Report> {
    if !outcome.unique {
        return Err(Error::DegenerateInstance(
            "optimum is not unique and nondegenerate".into(),
        ));
    }
    let u = outcome
        .u_star
        .as_ref()
        .ok_or(Error::MissingWitness("primal solution u*"))?;
    let v = outcome
        .v_star
        .as_ref()
        .ok_or(Error::MissingWitness("dual solution v*"))?;
    let (m, p) = (spec.num_constraints(), spec.num_vars());
    let z0 = outcome.z_star;

    let dc = unit_direction(rng, p);
    let c2: Vec<f64> = spec.c().iter().zip(&dc).map(|(c, d)| c + eps * d).collect();
    let zc = solve_lp(&spec.with_c(c2)?)?.z_star;
    let c_block = FdReport::new(dc.clone(), dot(u, &dc), (zc - z0) / eps, rel_tol);

    let db = unit_direction(rng, m);
    let b2: Vec<f64> = spec.b().iter().zip(&db).map(|(b, d)| b + eps * d).collect();
    let zb = solve_lp(&spec.with_b(b2)?)?.z_star;
    let b_block = FdReport::new(db.clone(), dot(v, &db), (zb - z0) / eps, rel_tol);

    let da = unit_direction(rng, m * p);
    let a2 = Matrix::from_fn(m, p, |i, j| spec.a()[(i, j)] + eps * da[i * p + j]);
    let za = solve_lp(&spec.with_a(a2)?)?.z_star;
    let analytic_a: f64 = (0..m)
        .flat_map(|i| (0..p).map(move |j| (i, j)))
        .map(|(i, j)| -v[i] * u[j] * da[i * p + j])
        .sum();
    let a_block = FdReport::new(da, analytic_a, (za - z0) / eps, rel_tol);

    Ok(Theorem1Report {
        c_block,
        b_block,
        a_block,
    })
}

/// Random feasible, bounded LP: `A` uniform in `[-1, 1]`, `b = A u0` for a
/// strictly positive `u0`, and `c` uniform in `[0.1, 1.1]`.
pub fn random_feasible_lp<R: Rng + ?Sized>(rng: &mut R, p: usize, m: usize) -> LpSpec {
    let a = Matrix::from_fn(m, p, |_, _| rng.random_range(-1.0..1.0));
    let u0: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..1.0)).collect();
    let b: Vec<f64> = (0..m).map(|i| dot(a.row(i), &u0)).collect();
    let c: Vec<f64> = (0..p).map(|_| rng.random_range(0.1..1.1)).collect();
    LpSpec::new(c, a, b).expect("finite random data")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn small_lp_three_blocks() {
        let spec = LpSpec::from_rows(&[1.0, 2.0], &[vec![1.0, 1.0]], &[1.0]).unwrap();
        let out = solve_lp(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rep = check_theorem1(&spec, &out, FD_EPS, FD_REL_TOL, &mut rng).unwrap();
        assert!(rep.pass(), "{rep:?}");
        // b-block: dz/db = 1, so the analytic value is the direction itself.
        assert_eq!(rep.b_block.analytic, rep.b_block.direction[0]);
    }

    #[test]
    fn a_entry_perturbation() {
        let spec = LpSpec::from_rows(&[1.0, 2.0], &[vec![1.0, 1.0]], &[1.0]).unwrap();
        let z0 = solve_lp(&spec).unwrap().z_star;
        let eps = 1e-6;
        let bumped = spec
            .with_a(Matrix::from_rows(&[[1.0 + eps, 1.0]]).unwrap())
            .unwrap();
        let z1 = solve_lp(&bumped).unwrap().z_star;
        assert!(((z1 - z0) / eps + 1.0).abs() < 1e-5);
    }

    #[test]
    fn degenerate_is_flagged() {
        let spec = LpSpec::from_rows(&[1.0, 1.0], &[vec![1.0, 1.0]], &[1.0]).unwrap();
        let out = solve_lp(&spec).unwrap();
        assert!(!out.unique);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            check_theorem1(&spec, &out, FD_EPS, FD_REL_TOL, &mut rng),
            Err(Error::DegenerateInstance(_))
        ));
    }

    #[test]
    fn corrupted_witness_fails() {
        let spec = LpSpec::from_rows(&[1.0, 2.0], &[vec![1.0, 1.0]], &[1.0]).unwrap();
        let mut out = solve_lp(&spec).unwrap();
        out.u_star = Some(vec![0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep = check_theorem1(&spec, &out, FD_EPS, FD_REL_TOL, &mut rng).unwrap();
        assert!(!rep.c_block.pass);
    }
}
