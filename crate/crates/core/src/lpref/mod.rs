//! Reference machinery: a dense simplex solver with dual recovery, brute-force
//! oracles, and finite-difference checks of the value gradients.

mod layer;
mod oracle;
mod simplex;
mod fdcheck;

pub use layer::AffineLpLayer;
pub use oracle::{
    count_paths, enumerate_paths, enumerate_permutations, enumerate_vertices, Vertex, VertexSet,
};
pub use simplex::{solve_lp, solve_lp_detailed, LpSolution, MAX_CONSTRAINTS, MAX_VARS};
pub use fdcheck::{
    check_theorem1, random_feasible_lp, FdReport, Theorem1Report, FD_EPS, FD_REL_TOL,
};
