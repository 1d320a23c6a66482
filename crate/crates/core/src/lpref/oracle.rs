//! Brute-force oracles: LP vertices, permutations, alignment paths.

use serde::{Deserialize, Serialize};

use crate::alignment::{AlignGrid, Move};
use crate::assignment::CostMatrix;
use crate::error::{Error, Result};
use crate::grad::LpSpec;
use crate::matrix::{dot, solve_linear, Matrix};

const VERTEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub basis: Vec<usize>,
    pub u: Vec<f64>,
    pub objective: f64,
}

/// Distinct basic feasible solutions of an LP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSet {
    pub vertices: Vec<Vertex>,
}

impl VertexSet {
    pub fn min_objective(&self) -> f64 {
        self.vertices
            .iter()
            .map(|v| v.objective)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Rank of the rows of `m` (Gaussian elimination with partial pivoting).
fn rank(m: &Matrix) -> usize {
    let mut a = m.clone();
    let (rows, cols) = (a.rows(), a.cols());
    let scale = a.max_abs().max(1.0);
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let piv = (r..rows)
            .max_by(|&x, &y| a[(x, c)].abs().total_cmp(&a[(y, c)].abs()))
            .unwrap();
        if a[(piv, c)].abs() <= 1e-10 * scale {
            continue;
        }
        for j in 0..cols {
            let tmp = a[(r, j)];
            a[(r, j)] = a[(piv, j)];
            a[(piv, j)] = tmp;
        }
        for i in r + 1..rows {
            let f = a[(i, c)] / a[(r, c)];
            for j in c..cols {
                a[(i, j)] -= f * a[(r, j)];
            }
        }
        r += 1;
    }
    r
}

fn select_rows(m: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), m.cols(), |i, j| m[(rows[i], j)])
}

fn combinations(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    if k > n {
        return;
    }
    loop {
        visit(&idx);
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Enumerates all vertices by trying every basis of the independent rows.
pub fn enumerate_vertices(spec: &LpSpec) -> Result<VertexSet> {
    let (m, p) = (spec.num_constraints(), spec.num_vars());
    if p > 10 || m > 6 {
        return Err(Error::InvalidInput(format!(
            "vertex enumeration handles at most 10 variables and 6 constraints, got {p} and {m}"
        )));
    }
    let a = spec.a();
    let augmented = Matrix::from_fn(m, p + 1, |i, j| if j < p { a[(i, j)] } else { spec.b()[i] });

    // Greedily keep linearly independent rows.
    let mut keep: Vec<usize> = Vec::new();
    for i in 0..m {
        keep.push(i);
        if rank(&select_rows(a, &keep)) < keep.len() {
            keep.pop();
        }
    }
    if rank(&augmented) > keep.len() {
        return Err(Error::Infeasible);
    }
    let r = keep.len();
    let a_red = select_rows(a, &keep);
    let b_red: Vec<f64> = keep.iter().map(|&i| spec.b()[i]).collect();

    let mut vertices: Vec<Vertex> = Vec::new();
    combinations(p, r, |cols| {
        let bmat = Matrix::from_fn(r, r, |i, j| a_red[(i, cols[j])]);
        let Some(ub) = (if r == 0 { Some(Vec::new()) } else { solve_linear(&bmat, &b_red) }) else {
            return;
        };
        if ub.iter().any(|&x| x < -VERTEX_TOL) {
            return;
        }
        let mut u = vec![0.0; p];
        for (&col, &x) in cols.iter().zip(&ub) {
            u[col] = x.max(0.0);
        }
        if spec.primal_residual(&u) > VERTEX_TOL * (1.0 + spec.b().iter().fold(0.0_f64, |s, x| s.max(x.abs()))) {
            return;
        }
        let dup = vertices.iter().any(|v| {
            v.u.iter().zip(&u).all(|(x, y)| (x - y).abs() <= VERTEX_TOL)
        });
        if !dup {
            vertices.push(Vertex {
                basis: cols.to_vec(),
                objective: dot(spec.c(), &u),
                u,
            });
        }
    });
    if vertices.is_empty() {
        return Err(Error::Infeasible);
    }
    Ok(VertexSet { vertices })
}

/// Exhaustive minimum over all `b!` permutations and the full argmin set.
pub fn enumerate_permutations(c: &CostMatrix) -> (f64, Vec<Vec<usize>>) {
    let n = c.size();
    let mut best = f64::INFINITY;
    for_each_permutation(n, |perm| {
        best = best.min(c.cost_of(perm));
    });
    let tol = 1e-12 * (1.0 + best.abs());
    let mut argmin = Vec::new();
    for_each_permutation(n, |perm| {
        if c.cost_of(perm) <= best + tol {
            argmin.push(perm.to_vec());
        }
    });
    argmin.sort();
    (best, argmin)
}

/// Visits permutations of `0..n` in lexicographic order.
fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(pos: usize, perm: &mut Vec<usize>, used: &mut [bool], visit: &mut dyn FnMut(&[usize])) {
        if pos == used.len() {
            visit(perm);
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                perm.push(k);
                rec(pos + 1, perm, used, visit);
                perm.pop();
                used[k] = false;
            }
        }
    }
    let mut used = vec![false; n];
    rec(0, &mut Vec::with_capacity(n), &mut used, &mut visit);
}

/// Exhaustive minimum over all monotone lattice paths and the argmin set.
pub fn enumerate_paths(grid: &AlignGrid) -> (f64, Vec<Vec<Move>>) {
    let mut best = f64::INFINITY;
    walk_paths(grid, &mut |cost, _| best = best.min(cost));
    let tol = 1e-12 * (1.0 + best.abs());
    let mut argmin = Vec::new();
    walk_paths(grid, &mut |cost, moves| {
        if cost <= best + tol {
            argmin.push(moves.to_vec());
        }
    });
    (best, argmin)
}

/// Number of monotone paths (Delannoy number) for a grid.
pub fn count_paths(grid: &AlignGrid) -> usize {
    let mut n = 0;
    walk_paths(grid, &mut |_, _| n += 1);
    n
}

fn walk_paths(grid: &AlignGrid, visit: &mut dyn FnMut(f64, &[Move])) {
    fn rec(
        grid: &AlignGrid,
        node: (usize, usize),
        cost: f64,
        moves: &mut Vec<Move>,
        visit: &mut dyn FnMut(f64, &[Move]),
    ) {
        if node == (grid.tp(), grid.tt()) {
            visit(cost, moves);
            return;
        }
        for mv in Move::ALL {
            if grid.has_move(mv, node.0, node.1) {
                moves.push(mv);
                rec(
                    grid,
                    mv.step(node),
                    cost + grid.edge_cost(mv, node.0, node.1),
                    moves,
                    visit,
                );
                moves.pop();
            }
        }
    }
    rec(grid, (0, 0), 0.0, &mut Vec::new(), visit);
}
