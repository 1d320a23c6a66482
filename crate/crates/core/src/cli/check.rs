//! Gradient checks on single instances or seeded random suites.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alignment::{gsa_gengrad, solve_gsa, AlignGrid};
use crate::assignment::{solve_assignment, CostMatrix};
use crate::error::{Error, Result};
use crate::grad::{supergradient_check, Curvature, LpSpec, SolverOutcome, Tolerance};
use crate::lpref::{check_theorem1, random_feasible_lp, solve_lp, FD_REL_TOL};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRow {
    pub instance: usize,
    pub check: String,
    /// `None` when the check does not apply (degenerate instance).
    pub pass: Option<bool>,
    pub detail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub kind: String,
    pub checks: Vec<CheckRow>,
    pub failed: usize,
    pub skipped: usize,
    pub pass: bool,
}

impl CheckReport {
    pub fn new(kind: &str, checks: Vec<CheckRow>) -> Self {
        let failed = checks.iter().filter(|c| c.pass == Some(false)).count();
        let skipped = checks.iter().filter(|c| c.pass.is_none()).count();
        Self {
            kind: kind.into(),
            failed,
            skipped,
            pass: failed == 0,
            checks,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CheckSettings {
    pub eps: f64,
    pub trials: usize,
    pub tol: Tolerance,
    /// Added to every entry of the candidate gradient.
    pub perturb: f64,
}

fn unit<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = dot(&d, &d).sqrt().max(1e-12);
    d.into_iter().map(|x| x / norm).collect()
}

/// Supergradient inequality plus, away from ties, a one-sided difference
/// quotient along a random direction.
fn concave_checks<F>(
    instance: usize,
    mut f: F,
    w: &[f64],
    g: &[f64],
    locally_linear: bool,
    s: &CheckSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CheckRow>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let radius = 0.5 * (1.0 + w.iter().fold(0.0_f64, |m, x| m.max(x.abs())));
    let rep = supergradient_check(&mut f, w, g, Curvature::Concave, s.trials, radius, s.tol, rng)?;
    let mut rows = vec![CheckRow {
        instance,
        check: "supergradient".into(),
        pass: Some(rep.pass),
        detail: rep.worst_violation,
    }];
    let local = if locally_linear {
        let d = unit(rng, w.len());
        let w2: Vec<f64> = w.iter().zip(&d).map(|(x, y)| x + s.eps * y).collect();
        let numeric = (f(&w2)? - f(w)?) / s.eps;
        let analytic = dot(g, &d);
        let err = (numeric - analytic).abs();
        CheckRow {
            instance,
            check: "directional".into(),
            pass: Some(err <= FD_REL_TOL * analytic.abs().max(1.0)),
            detail: err,
        }
    } else {
        CheckRow {
            instance,
            check: "directional".into(),
            pass: None,
            detail: 0.0,
        }
    };
    rows.push(local);
    Ok(rows)
}

fn shifted(g: Vec<f64>, delta: f64) -> Vec<f64> {
    g.into_iter().map(|x| x + delta).collect()
}

pub fn check_assignment(
    instance: usize,
    c: &CostMatrix,
    grad: Option<&Matrix>,
    s: &CheckSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CheckRow>> {
    let n = c.size();
    let res = solve_assignment(c)?;
    let g = match grad {
        Some(g) if (g.rows(), g.cols()) == (n, n) => g.as_slice().to_vec(),
        Some(_) => return Err(Error::DimensionMismatch("gradient must match the cost matrix".into())),
        None => res.permutation_matrix().into_vec(),
    };
    // The optimum cannot change while no permutation moves by half the gap.
    let stable = res.unique && res.second_best_gap > 2.0 * s.eps * (n as f64).sqrt();
    let f = |w: &[f64]| -> Result<f64> {
        Ok(solve_assignment(&CostMatrix::new(Matrix::from_vec(n, n, w.to_vec())?)?)?.z_star)
    };
    concave_checks(instance, f, c.matrix().as_slice(), &shifted(g, s.perturb), stable, s, rng)
}

pub fn check_gsa(
    instance: usize,
    grid: &AlignGrid,
    grad: Option<&Matrix>,
    s: &CheckSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CheckRow>> {
    let (tp, tt, gamma) = (grid.tp(), grid.tt(), grid.gamma());
    let res = solve_gsa(grid);
    let g = match grad {
        Some(g) if (g.rows(), g.cols()) == (tp, tt) => g.as_slice().to_vec(),
        Some(_) => return Err(Error::DimensionMismatch("gradient must match the match costs".into())),
        None => gsa_gengrad(&res, grid).into_vec(),
    };
    let f = |w: &[f64]| -> Result<f64> {
        Ok(solve_gsa(&AlignGrid::new(Matrix::from_vec(tp, tt, w.to_vec())?, gamma)?).z_star)
    };
    concave_checks(instance, f, grid.match_costs().as_slice(), &shifted(g, s.perturb), res.unique, s, rng)
}

/// Three-block difference-quotient check. A candidate `(u, v)` replaces the
/// solver witnesses when given.
pub fn check_lp(
    instance: usize,
    spec: &LpSpec,
    candidate: Option<(Vec<f64>, Vec<f64>)>,
    s: &CheckSettings,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<CheckRow>> {
    let mut outcome: SolverOutcome = solve_lp(spec)?;
    if let Some((u, v)) = candidate {
        if u.len() != spec.num_vars() || v.len() != spec.num_constraints() {
            return Err(Error::DimensionMismatch("gradient blocks must match c and b".into()));
        }
        outcome.u_star = Some(u);
        outcome.v_star = Some(v);
    }
    for w in [outcome.u_star.as_mut(), outcome.v_star.as_mut()].into_iter().flatten() {
        w.iter_mut().for_each(|x| *x += s.perturb);
    }
    let rows = match check_theorem1(spec, &outcome, s.eps, FD_REL_TOL, rng) {
        Ok(rep) => [("c", rep.c_block), ("b", rep.b_block), ("A", rep.a_block)]
            .into_iter()
            .map(|(name, b)| CheckRow {
                instance,
                check: format!("{name}-block"),
                pass: Some(b.pass),
                detail: b.abs_error,
            })
            .collect(),
        Err(Error::DegenerateInstance(_)) => ["c", "b", "A"]
            .into_iter()
            .map(|name| CheckRow {
                instance,
                check: format!("{name}-block"),
                pass: None,
                detail: 0.0,
            })
            .collect(),
        Err(e) => return Err(e),
    };
    Ok(rows)
}

/// Seeded random instances of each kind.
pub fn random_suite(kind: &str, instances: usize, s: &CheckSettings, rng: &mut ChaCha8Rng) -> Result<CheckReport> {
    let mut rows = Vec::new();
    for i in 0..instances {
        match kind {
            "assignment" => {
                let n = 2 + i % 7;
                let c = CostMatrix::new(Matrix::from_fn(n, n, |_, _| rng.random_range(0.0..1.0)))?;
                rows.extend(check_assignment(i, &c, None, s, rng)?);
            }
            "gsa" => {
                let (tp, tt) = (1 + i % 6, 1 + (i / 6) % 6);
                let m = Matrix::from_fn(tp, tt, |_, _| rng.random_range(0.0..5.0));
                let grid = AlignGrid::new(m, crate::alignment::DEFAULT_GAMMA)?;
                rows.extend(check_gsa(i, &grid, None, s, rng)?);
            }
            "lp" => {
                let p = 3 + i % 6;
                let m = 1 + i % (p - 1).min(5);
                let spec = random_feasible_lp(rng, p, m);
                rows.extend(check_lp(i, &spec, None, s, rng)?);
            }
            other => return Err(Error::InvalidInput(format!("unknown kind {other}"))),
        }
    }
    Ok(CheckReport::new(kind, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn settings(perturb: f64) -> CheckSettings {
        CheckSettings {
            eps: 1e-5,
            trials: 50,
            tol: Tolerance::default(),
            perturb,
        }
    }

    #[test]
    fn suites_pass() {
        for kind in ["assignment", "gsa", "lp"] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let rep = random_suite(kind, 14, &settings(0.0), &mut rng).unwrap();
            assert!(rep.pass, "{kind}: {rep:?}");
        }
    }

    #[test]
    fn perturbed_gradients_fail() {
        for kind in ["assignment", "gsa", "lp"] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let rep = random_suite(kind, 14, &settings(0.1), &mut rng).unwrap();
            assert!(!rep.pass, "{kind}");
        }
    }
}
