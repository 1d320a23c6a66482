//! JSON input schemas for `solve` and `gradcheck`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::alignment::{build_grid, AlignGrid, DEFAULT_GAMMA};
use crate::assignment::CostMatrix;
use crate::error::{Error, Result};
use crate::grad::LpSpec;
use crate::matrix::Matrix;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentInput {
    pub cost: Vec<Vec<f64>>,
}

/// Either explicit match costs or log-probabilities plus target tokens.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsaInput {
    pub match_costs: Option<Vec<Vec<f64>>>,
    pub logp: Option<Vec<Vec<f64>>>,
    pub targets: Option<Vec<usize>>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LpInput {
    pub c: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// A parsed alignment instance.
#[derive(Debug, Clone)]
pub struct GsaInstance {
    pub grid: AlignGrid,
    /// Present when the instance was given as log-probabilities.
    pub logp: Option<(Matrix, Vec<usize>)>,
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_json(&text)
}

pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("malformed input: {e}")))
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix> {
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("{what} is empty")));
    }
    Matrix::from_rows(rows)
}

impl AssignmentInput {
    pub fn cost_matrix(&self) -> Result<CostMatrix> {
        CostMatrix::new(matrix(&self.cost, "cost")?)
    }
}

impl GsaInput {
    pub fn instance(&self) -> Result<GsaInstance> {
        let gamma = self.gamma.unwrap_or(DEFAULT_GAMMA);
        match (&self.match_costs, &self.logp, &self.targets) {
            (Some(m), None, None) => Ok(GsaInstance {
                grid: AlignGrid::new(matrix(m, "match_costs")?, gamma)?,
                logp: None,
            }),
            (None, Some(lp), Some(t)) => {
                let lp = matrix(lp, "logp")?;
                Ok(GsaInstance {
                    grid: build_grid(&lp, t, gamma)?,
                    logp: Some((lp, t.clone())),
                })
            }
            _ => Err(Error::InvalidInput(
                "alignment input needs either match_costs, or logp with targets".into(),
            )),
        }
    }
}

impl LpInput {
    pub fn spec(&self) -> Result<LpSpec> {
        LpSpec::new(self.c.clone(), matrix(&self.a, "A")?, self.b.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schemas() {
        let a: AssignmentInput = parse_json(r#"{"cost": [[0, 1], [1, 0]]}"#).unwrap();
        assert_eq!(a.cost_matrix().unwrap().size(), 2);
        assert!(parse_json::<AssignmentInput>(r#"{"cost": [[0]], "x": 1}"#).is_err());
        let ragged: AssignmentInput = parse_json(r#"{"cost": [[0, 1], [1]]}"#).unwrap();
        assert!(ragged.cost_matrix().is_err());

        let g: GsaInput = parse_json(r#"{"match_costs": [[1, 5], [5, 1]], "gamma": 1.5}"#).unwrap();
        assert_eq!(g.instance().unwrap().grid.tp(), 2);
        let g: GsaInput = parse_json(r#"{"match_costs": [[1]], "gamma": 1.0}"#).unwrap();
        assert!(g.instance().is_err());
        let g: GsaInput = parse_json(r#"{"logp": [[0, -30]], "targets": [0]}"#).unwrap();
        assert!(g.instance().unwrap().logp.is_some());
        let g: GsaInput = parse_json(r#"{"logp": [[0, -30]]}"#).unwrap();
        assert!(g.instance().is_err());

        let l: LpInput = parse_json(r#"{"c": [1, 2], "A": [[1, 1]], "b": [1]}"#).unwrap();
        assert_eq!(l.spec().unwrap().num_vars(), 2);
        let l: LpInput = parse_json(r#"{"c": [1], "A": [[1, 1]], "b": [1]}"#).unwrap();
        assert!(l.spec().is_err());
    }
}
