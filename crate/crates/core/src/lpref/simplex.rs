//! Dense two-phase tableau simplex with Bland's rule.
//!
//! Reference-scale only (`p <= 20` variables, `m <= 12` constraints). The
//! dual is recovered from the optimal basis by solving `B^T y = c_B`.

use crate::error::{Error, Result};
use crate::grad::{LpSpec, SolverOutcome};
use crate::matrix::{dot, solve_linear, Matrix};

pub const MAX_VARS: usize = 20;
pub const MAX_CONSTRAINTS: usize = 12;

const PIVOT_TOL: f64 = 1e-10;
const MAX_PIVOTS: usize = 10_000;
/// Margin for declaring reduced costs / basic values strictly positive.
const STRICT_TOL: f64 = 1e-9;

/// Solver output together with basis information.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub outcome: SolverOutcome,
    /// Basic column per constraint row; `None` marks a redundant row.
    pub basis: Vec<Option<usize>>,
    /// Reduced costs `c - A^T v` of all variables.
    pub reduced_costs: Vec<f64>,
}

/// Solves `min c^T u  s.t.  A u = b, u >= 0`.
pub fn solve_lp(spec: &LpSpec) -> Result<SolverOutcome> {
    solve_lp_detailed(spec).map(|s| s.outcome)
}

pub fn solve_lp_detailed(spec: &LpSpec) -> Result<LpSolution> {
    let (m, p) = (spec.num_constraints(), spec.num_vars());
    if p > MAX_VARS || m > MAX_CONSTRAINTS {
        return Err(Error::InvalidInput(format!(
            "reference simplex handles at most {MAX_VARS} variables and {MAX_CONSTRAINTS} \
             constraints, got {p} and {m}"
        )));
    }
    let mut tab = Tableau::new(spec);
    tab.phase_one()?;
    tab.phase_two(spec.c())?;
    tab.extract(spec)
}

struct Tableau {
    m: usize,
    p: usize,
    /// `m x (p + m + 1)`: real columns, artificial columns, right-hand side.
    t: Matrix,
    basis: Vec<usize>,
    /// Row signs applied so that the right-hand side is nonnegative.
    sign: Vec<f64>,
}

impl Tableau {
    fn new(spec: &LpSpec) -> Self {
        let (m, p) = (spec.num_constraints(), spec.num_vars());
        let mut t = Matrix::zeros(m, p + m + 1);
        let mut sign = vec![1.0; m];
        for i in 0..m {
            if spec.b()[i] < 0.0 {
                sign[i] = -1.0;
            }
            for j in 0..p {
                t[(i, j)] = sign[i] * spec.a()[(i, j)];
            }
            t[(i, p + i)] = 1.0;
            t[(i, p + m)] = sign[i] * spec.b()[i];
        }
        Self {
            m,
            p,
            t,
            basis: (p..p + m).collect(),
            sign,
        }
    }

    fn rhs(&self, r: usize) -> f64 {
        self.t[(r, self.p + self.m)]
    }

    fn reduced_costs(&self, cost: &[f64]) -> Vec<f64> {
        let n = self.p + self.m;
        let mut d = cost.to_vec();
        for r in 0..self.m {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for (j, dj) in d.iter_mut().enumerate().take(n) {
                    *dj -= cb * self.t[(r, j)];
                }
            }
        }
        d
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.t.cols();
        let piv = self.t[(row, col)];
        for j in 0..width {
            self.t[(row, j)] /= piv;
        }
        for r in 0..self.m {
            if r == row {
                continue;
            }
            let f = self.t[(r, col)];
            if f == 0.0 {
                continue;
            }
            for j in 0..width {
                let delta = f * self.t[(row, j)];
                self.t[(r, j)] -= delta;
            }
            self.t[(r, col)] = 0.0;
        }
        self.basis[row] = col;
    }

    /// Runs simplex iterations over entering columns `< allowed`.
    fn iterate(&mut self, cost: &[f64], allowed: usize) -> Result<()> {
        for _ in 0..MAX_PIVOTS {
            let d = self.reduced_costs(cost);
            // Bland: smallest improving index enters.
            let Some(col) = (0..allowed)
                .find(|&j| d[j] < -PIVOT_TOL && !self.basis.contains(&j))
            else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.m {
                let a = self.t[(r, col)];
                if a <= PIVOT_TOL {
                    continue;
                }
                let ratio = self.rhs(r) / a;
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((lr, lratio)) => {
                        if ratio < lratio - 1e-12
                            || (ratio <= lratio + 1e-12 && self.basis[r] < self.basis[lr])
                        {
                            Some((r, ratio))
                        } else {
                            Some((lr, lratio))
                        }
                    }
                };
            }
            match leave {
                Some((row, _)) => self.pivot(row, col),
                None => return Err(Error::Unbounded),
            }
        }
        Err(Error::Solver(format!(
            "simplex exceeded {MAX_PIVOTS} pivots"
        )))
    }

    fn phase_one(&mut self) -> Result<()> {
        let n = self.p + self.m;
        let mut cost = vec![0.0; n];
        cost[self.p..].iter_mut().for_each(|c| *c = 1.0);
        self.iterate(&cost, n).map_err(|e| match e {
            Error::Unbounded => Error::Solver("phase one reported unbounded".into()),
            other => other,
        })?;
        let infeas: f64 = (0..self.m)
            .filter(|&r| self.basis[r] >= self.p)
            .map(|r| self.rhs(r))
            .sum();
        let scale = 1.0 + (0..self.m).map(|r| self.rhs(r).abs()).fold(0.0, f64::max);
        if infeas > 1e-9 * scale {
            return Err(Error::Infeasible);
        }
        // Drive remaining artificials out of the basis where possible.
        for r in 0..self.m {
            if self.basis[r] < self.p {
                continue;
            }
            if let Some(col) = (0..self.p)
                .filter(|j| !self.basis.contains(j))
                .find(|&j| self.t[(r, j)].abs() > 1e-9)
            {
                self.pivot(r, col);
            }
        }
        Ok(())
    }

    fn phase_two(&mut self, c: &[f64]) -> Result<()> {
        let mut cost = c.to_vec();
        cost.extend(std::iter::repeat(0.0).take(self.m));
        self.iterate(&cost, self.p)
    }

    fn extract(&self, spec: &LpSpec) -> Result<LpSolution> {
        let (m, p) = (self.m, self.p);
        let mut u = vec![0.0; p];
        for r in 0..m {
            if self.basis[r] < p {
                u[self.basis[r]] = self.rhs(r).max(0.0);
            }
        }

        // B has the sign-adjusted columns of the basic variables.
        let bmat = Matrix::from_fn(m, m, |i, r| {
            let col = self.basis[r];
            if col < p {
                self.sign[i] * spec.a()[(i, col)]
            } else if col - p == i {
                1.0
            } else {
                0.0
            }
        });
        let cb: Vec<f64> = self
            .basis
            .iter()
            .map(|&col| if col < p { spec.c()[col] } else { 0.0 })
            .collect();
        let y = if m == 0 {
            Vec::new()
        } else {
            solve_linear(&bmat.transpose(), &cb)
                .ok_or_else(|| Error::Solver("optimal basis is singular".into()))?
        };
        let v: Vec<f64> = y.iter().zip(&self.sign).map(|(yi, s)| yi * s).collect();

        let reduced_costs: Vec<f64> = (0..p)
            .map(|j| spec.c()[j] - (0..m).map(|i| spec.a()[(i, j)] * v[i]).sum::<f64>())
            .collect();
        let redundant = self.basis.iter().any(|&col| col >= p);
        let primal_unique = (0..p)
            .filter(|j| !self.basis.contains(j))
            .all(|j| reduced_costs[j] > STRICT_TOL);
        let nondegenerate = (0..m).all(|r| self.basis[r] < p && self.rhs(r) > STRICT_TOL);

        Ok(LpSolution {
            outcome: SolverOutcome {
                z_star: dot(spec.c(), &u),
                u_star: Some(u),
                v_star: Some(v),
                unique: primal_unique && nondegenerate && !redundant,
            },
            basis: self
                .basis
                .iter()
                .map(|&col| (col < p).then_some(col))
                .collect(),
            reduced_costs,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_variable_lp() {
        let spec = LpSpec::from_rows(&[1.0, 2.0], &[vec![1.0, 1.0]], &[1.0]).unwrap();
        let out = solve_lp(&spec).unwrap();
        assert_eq!(out.z_star, 1.0);
        assert_eq!(out.u_star.unwrap(), vec![1.0, 0.0]);
        assert_eq!(out.v_star.unwrap(), vec![1.0]);
        assert!(out.unique);
    }

    #[test]
    fn bounded_with_unbounded_direction() {
        let spec = LpSpec::from_rows(&[1.0, 0.0], &[vec![1.0, -1.0]], &[1.0]).unwrap();
        let out = solve_lp(&spec).unwrap();
        assert_eq!(out.z_star, 1.0);
        assert_eq!(out.u_star.unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn negative_rhs_is_infeasible() {
        let spec = LpSpec::from_rows(&[1.0, 1.0], &[vec![1.0, 1.0]], &[-1.0]).unwrap();
        assert_eq!(solve_lp(&spec), Err(Error::Infeasible));
    }

    #[test]
    fn unbounded_detected() {
        let spec = LpSpec::from_rows(&[-1.0, 0.0], &[vec![1.0, -1.0]], &[1.0]).unwrap();
        assert_eq!(solve_lp(&spec), Err(Error::Unbounded));
    }

    #[test]
    fn negative_rhs_dual_sign() {
        // min x1 + 2 x2  s.t. -x1 - x2 = -1: dual flips sign.
        let spec = LpSpec::from_rows(&[1.0, 2.0], &[vec![-1.0, -1.0]], &[-1.0]).unwrap();
        let out = solve_lp(&spec).unwrap();
        assert_eq!(out.z_star, 1.0);
        assert_eq!(out.v_star.clone().unwrap(), vec![-1.0]);
        assert!(out.duality_gap(&spec).unwrap() < 1e-12);
    }

    #[test]
    fn redundant_rows_keep_valid_dual() {
        // 2x2 assignment: four constraints of rank three.
        let c = [1.0, 2.0, 2.0, 1.0];
        let a = vec![
            vec![1.0, 1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 1.0],
            vec![1.0, 0.0, 1.0, 0.0],
            vec![0.0, 1.0, 0.0, 1.0],
        ];
        let spec = LpSpec::from_rows(&c, &a, &[1.0; 4]).unwrap();
        let sol = solve_lp_detailed(&spec).unwrap();
        assert_eq!(sol.outcome.z_star, 2.0);
        assert_eq!(sol.outcome.u_star.clone().unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        assert!(sol.outcome.duality_gap(&spec).unwrap() < 1e-12);
        assert!(sol.reduced_costs.iter().all(|&r| r >= -1e-12));
        assert!(!sol.outcome.unique);
    }

    #[test]
    fn size_caps() {
        let spec = LpSpec::from_rows(&[1.0; 21], &[vec![1.0; 21]], &[1.0]).unwrap();
        assert!(matches!(solve_lp(&spec), Err(Error::InvalidInput(_))));
    }
}
