use crate::error::{Error, Result};
use crate::grad::{
    assemble_gengrad_for, Chain, CombLayer, Dependencies, EfficiencyClass, LayerOutput, LpSpec,
    SolveCounter, SparseJacobian,
};
use crate::matrix::Matrix;

use super::simplex::solve_lp;

/// LP whose data move affinely with `w`:
/// `c = c0 + Jc w`, `b = b0 + Jb w`, `vec(A) = vec(A0) + JA w`.
#[derive(Debug)]
pub struct AffineLpLayer {
    base: LpSpec,
    param_dim: usize,
    dc: Option<SparseJacobian>,
    db: Option<SparseJacobian>,
    da: Option<SparseJacobian>,
    counter: SolveCounter,
}

impl AffineLpLayer {
    pub fn new(
        base: LpSpec,
        param_dim: usize,
        dc: Option<SparseJacobian>,
        db: Option<SparseJacobian>,
        da: Option<SparseJacobian>,
    ) -> Result<Self> {
        let (m, p) = (base.num_constraints(), base.num_vars());
        for (name, jac, out) in [("c", &dc, p), ("b", &db, m), ("A", &da, m * p)] {
            if let Some(j) = jac {
                if j.in_dim() != param_dim || j.out_dim() != out {
                    return Err(Error::DimensionMismatch(format!(
                        "d{name}/dw is {}x{}, expected {out}x{param_dim}",
                        j.out_dim(),
                        j.in_dim()
                    )));
                }
            }
        }
        if dc.is_none() && db.is_none() && da.is_none() {
            return Err(Error::InvalidInput(
                "layer must depend on w through at least one block".into(),
            ));
        }
        Ok(Self {
            base,
            param_dim,
            dc,
            db,
            da,
            counter: SolveCounter::default(),
        })
    }

    /// The LP instance at `w`.
    pub fn instance(&self, w: &[f64]) -> Result<LpSpec> {
        if w.len() != self.param_dim {
            return Err(Error::DimensionMismatch(format!(
                "w has dim {}, expected {}",
                w.len(),
                self.param_dim
            )));
        }
        let shift = |base: &[f64], jac: &Option<SparseJacobian>| -> Vec<f64> {
            let mut out = base.to_vec();
            if let Some(j) = jac {
                for (o, d) in out.iter_mut().zip(j.apply(w)) {
                    *o += d;
                }
            }
            out
        };
        let c = shift(self.base.c(), &self.dc);
        let b = shift(self.base.b(), &self.db);
        let a = shift(self.base.a().as_slice(), &self.da);
        LpSpec::new(
            c,
            Matrix::from_vec(self.base.num_constraints(), self.base.num_vars(), a)?,
            b,
        )
    }
}

impl CombLayer for AffineLpLayer {
    fn efficiency(&self) -> EfficiencyClass {
        match (self.dc.is_some(), self.db.is_some(), self.da.is_some()) {
            (true, false, false) => EfficiencyClass::PrimalEff,
            (false, true, false) => EfficiencyClass::DualEff,
            (c, b, a) => EfficiencyClass::PrimalDualEff(Dependencies { c, b, a }),
        }
    }

    fn param_dim(&self) -> usize {
        self.param_dim
    }

    fn forward(&self, w: &[f64]) -> Result<LayerOutput> {
        let spec = self.instance(w)?;
        self.counter.bump();
        let outcome = solve_lp(&spec)?;
        let gengrad = assemble_gengrad_for(&spec, &outcome, self.efficiency())?;
        Ok(LayerOutput {
            outcome,
            gengrad,
            chain: Chain {
                param_dim: self.param_dim,
                dc: self.dc.clone(),
                db: self.db.clone(),
                da: self.da.clone(),
            },
        })
    }

    fn solve_count(&self) -> usize {
        self.counter.get()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_follows_dependencies() {
        let base = LpSpec::from_rows(&[1.0, 2.0], &[vec![1.0, 1.0]], &[1.0]).unwrap();
        let layer = AffineLpLayer::new(base.clone(), 1, None, Some(SparseJacobian::identity(1)), None)
            .unwrap();
        assert_eq!(layer.efficiency(), EfficiencyClass::DualEff);
        // z*(b) = b * min(c): gradient 1 at b = 1 + w.
        let out = layer.forward(&[0.5]).unwrap();
        assert_eq!(out.outcome.z_star, 1.5);
        assert_eq!(out.backward(1.0).unwrap(), vec![1.0]);
        assert_eq!(layer.solve_count(), 1);

        assert!(AffineLpLayer::new(base, 1, None, None, None).is_err());
    }

    #[test]
    fn all_blocks_match_finite_differences() {
        // w scales c0, shifts b and the (0, 0) entry of A.
        let base = LpSpec::from_rows(
            &[1.0, 2.0, 0.5],
            &[vec![1.0, 1.0, 1.0], vec![1.0, -1.0, 2.0]],
            &[2.0, 1.0],
        )
        .unwrap();
        let dc = SparseJacobian::new(3, 3, vec![(0, 0, 1.0), (1, 0, 2.0), (2, 0, 0.5)]).unwrap();
        let db = SparseJacobian::new(2, 3, vec![(0, 1, 1.0), (1, 1, -0.5)]).unwrap();
        let da = SparseJacobian::new(6, 3, vec![(0, 2, 1.0), (4, 2, 0.3)]).unwrap();
        let layer = AffineLpLayer::new(base, 3, Some(dc), Some(db), Some(da)).unwrap();
        let w = [0.1, 0.2, -0.1];
        let out = layer.forward(&w).unwrap();
        assert!(out.outcome.unique);
        let g = out.backward(1.0).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let mut wp = w;
            wp[i] += h;
            let mut wm = w;
            wm[i] -= h;
            let zp = layer.forward(&wp).unwrap().outcome.z_star;
            let zm = layer.forward(&wm).unwrap().outcome.z_star;
            let fd = (zp - zm) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "component {i}: {fd} vs {}", g[i]);
        }
    }
}
