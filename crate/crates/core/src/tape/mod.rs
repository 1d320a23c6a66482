//! Minimal reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Tape`] records every operation in creation order; [`Tape::backward`]
//! walks it in reverse and accumulates gradients additively, so a value used
//! twice receives the sum of both contributions. Combinatorial layers enter the
//! tape through [`Tape::comb`], whose backward pass applies the layer's
//! generalized gradient instead of differentiating through the solver.

mod gumbel;
mod params;

pub use gumbel::{gumbel_noise, GumbelConfig};
pub use params::{adam_step, sgd_step, AdamConfig, Bindings, ParamStore, CHECKPOINT_HEADER};

use rand::Rng;

use crate::error::{Error, Result};
use crate::grad::{CombLayer, LayerOutput};
use crate::matrix::Matrix;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    LogSoftmax(Var),
    Nll(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    Embed(Var, Vec<usize>),
    Concat(Var, Var),
    VStack(Vec<Var>),
    SelectRow(Var, usize),
    SliceRows(Var, usize, usize),
    GumbelSt { input: Var, soft: Matrix, tau: f64 },
    Comb { input: Var, output: Box<LayerOutput> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`; zeros if `v` did not influence the output.
    pub fn get(&self, v: Var) -> Matrix {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn shape(m: &Matrix) -> (usize, usize) {
    (m.rows(), m.cols())
}

fn mismatch(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::ShapeMismatch(format!("{op}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

fn add_into(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    let (ad, bd) = (a.as_slice(), b.as_slice());
    let od = out.as_mut_slice();
    for i in 0..n {
        for t in 0..k {
            let x = ad[i * k + t];
            if x == 0.0 {
                continue;
            }
            let brow = &bd[t * m..(t + 1) * m];
            let orow = &mut od[i * m..(i + 1) * m];
            for (o, y) in orow.iter_mut().zip(brow) {
                *o += x * y;
            }
        }
    }
    out
}

/// Row-wise numerically stable log-softmax.
pub fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for j in 0..x.cols() {
            out[(i, j)] = row[j] - lse;
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1x1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    fn shape_of(&self, v: Var) -> (usize, usize) {
        shape(&self.nodes[v.0].value)
    }

    /// Input or parameter tensor.
    pub fn leaf(&mut self, value: Matrix) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite("tape leaf".into()));
        }
        Ok(self.push(value, Op::Leaf))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa.1 != sb.0 {
            return Err(mismatch("matmul", sa, sb));
        }
        let v = matmul(self.value(a), self.value(b));
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(mismatch("add", sa, sb));
        }
        let mut v = self.value(a).clone();
        for (x, y) in v.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *x += y;
        }
        Ok(self.push(v, Op::Add(a, b)))
    }

    /// Adds a `1 x c` row to every row of an `r x c` tensor.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(bias));
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(mismatch("add_bias", sa, sb));
        }
        let brow = self.value(bias).row(0).to_vec();
        let mut v = self.value(a).clone();
        let cols = sa.1;
        for (idx, x) in v.as_mut_slice().iter_mut().enumerate() {
            *x += brow[idx % cols];
        }
        Ok(self.push(v, Op::AddBias(a, bias)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa != sb {
            return Err(mismatch("mul", sa, sb));
        }
        let mut v = self.value(a).clone();
        for (x, y) in v.as_mut_slice().iter_mut().zip(self.value(b).as_slice()) {
            *x *= y;
        }
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.as_mut_slice().iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a, s))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let mut v = self.value(a).clone();
        v.as_mut_slice().iter_mut().for_each(|x| *x = f(*x));
        self.push(v, op)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmax(a))
    }

    /// `-sum_i logP[i][targets[i]]` as a `1x1` tensor.
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let (r, c) = self.shape_of(logp);
        if targets.len() != r {
            return Err(Error::ShapeMismatch(format!(
                "nll: {r} rows but {} targets",
                targets.len()
            )));
        }
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::ShapeMismatch(format!("nll: target {t} outside {c} classes")));
        }
        let lp = self.value(logp);
        let s: f64 = targets.iter().enumerate().map(|(i, &t)| -lp[(i, t)]).sum();
        Ok(self.push(Matrix::from_vec(1, 1, vec![s])?, Op::Nll(logp, targets.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).as_slice().iter().sum();
        self.push(Matrix::from_fn(1, 1, |_, _| s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a).as_slice();
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(Matrix::from_fn(1, 1, |_, _| s), Op::Mean(a))
    }

    /// Gathers rows `indices` of `table`.
    pub fn embed(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.shape_of(table);
        if let Some(i) = indices.iter().find(|&&i| i >= r) {
            return Err(Error::ShapeMismatch(format!("embed: index {i} outside {r} rows")));
        }
        let t = self.value(table);
        let v = Matrix::from_fn(indices.len(), c, |i, j| t[(indices[i], j)]);
        Ok(self.push(v, Op::Embed(table, indices.to_vec())))
    }

    /// Column-wise concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape_of(a), self.shape_of(b));
        if sa.0 != sb.0 {
            return Err(mismatch("concat", sa, sb));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let v = Matrix::from_fn(sa.0, sa.1 + sb.1, |i, j| {
            if j < sa.1 {
                va[(i, j)]
            } else {
                vb[(i, j - sa.1)]
            }
        });
        Ok(self.push(v, Op::Concat(a, b)))
    }

    /// Row-wise concatenation of tensors with equal column counts.
    pub fn vstack(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::ShapeMismatch("vstack of nothing".into()));
        };
        let cols = self.shape_of(first).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let s = self.shape_of(p);
            if s.1 != cols {
                return Err(mismatch("vstack", self.shape_of(first), s));
            }
            data.extend_from_slice(self.value(p).as_slice());
            rows += s.0;
        }
        let v = Matrix::from_vec(rows, cols, data)?;
        Ok(self.push(v, Op::VStack(parts.to_vec())))
    }

    pub fn select_row(&mut self, a: Var, row: usize) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        if row >= r {
            return Err(Error::ShapeMismatch(format!("select_row: {row} outside {r} rows")));
        }
        let v = Matrix::from_vec(1, c, self.value(a).row(row).to_vec())?;
        Ok(self.push(v, Op::SelectRow(a, row)))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape_of(a);
        if len == 0 || start + len > r {
            return Err(Error::ShapeMismatch(format!(
                "slice_rows: {start}..{} outside {r} rows",
                start + len
            )));
        }
        let data = self.value(a).as_slice()[start * c..(start + len) * c].to_vec();
        let v = Matrix::from_vec(len, c, data)?;
        Ok(self.push(v, Op::SliceRows(a, start, len)))
    }

    /// Straight-through Gumbel-softmax with explicitly supplied noise.
    ///
    /// Forward emits `onehot(argmax((x + g) / tau))` per row; backward uses
    /// the Jacobian of `softmax((x + g) / tau)`.
    pub fn gumbel_softmax_st_with_noise(&mut self, logits: Var, noise: &Matrix, tau: f64) -> Result<Var> {
        let s = self.shape_of(logits);
        if shape(noise) != s {
            return Err(mismatch("gumbel_softmax_st", s, shape(noise)));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidInput(format!("temperature must be > 0, got {tau}")));
        }
        let x = self.value(logits);
        let z = Matrix::from_fn(s.0, s.1, |i, j| (x[(i, j)] + noise[(i, j)]) / tau);
        let soft = log_softmax_rows(&z);
        let soft = Matrix::from_fn(s.0, s.1, |i, j| soft[(i, j)].exp());
        let mut hard = Matrix::zeros(s.0, s.1);
        for i in 0..s.0 {
            let row = z.row(i);
            let arg = (0..s.1).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            hard[(i, arg)] = 1.0;
        }
        Ok(self.push(hard, Op::GumbelSt { input: logits, soft, tau }))
    }

    pub fn gumbel_softmax_st<R: Rng + ?Sized>(&mut self, logits: Var, tau: f64, rng: &mut R) -> Result<Var> {
        let (r, c) = self.shape_of(logits);
        let noise = gumbel_noise(r, c, rng);
        self.gumbel_softmax_st_with_noise(logits, &noise, tau)
    }

    /// Runs the combinatorial layer once on the flattened value of `input`
    /// and records `z*` as a `1x1` tensor.
    pub fn comb(&mut self, input: Var, layer: &dyn CombLayer) -> Result<Var> {
        let w = self.value(input).as_slice();
        if w.len() != layer.param_dim() {
            return Err(Error::ShapeMismatch(format!(
                "combinatorial layer expects {} parameters, got {}",
                layer.param_dim(),
                w.len()
            )));
        }
        let output = layer.forward(w)?;
        let z = output.outcome.z_star;
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![z])?,
            Op::Comb {
                input,
                output: Box::new(output),
            },
        ))
    }

    /// Reverse sweep from a `1x1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape_of(output) != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar output, got {:?}",
                self.shape_of(output)
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Matrix>> = (0..n).map(|_| None).collect();
        grads[output.0] = Some(Matrix::from_fn(1, 1, |_, _| 1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = matmul(&g, &self.value(*b).transpose());
                    let gb = matmul(&self.value(*a).transpose(), &g);
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    add_into(&mut grads[a.0], g.clone());
                    add_into(&mut grads[b.0], g.clone());
                }
                Op::AddBias(a, bias) => {
                    let cols = g.cols();
                    let mut gb = Matrix::zeros(1, cols);
                    for i in 0..g.rows() {
                        for j in 0..cols {
                            gb[(0, j)] += g[(i, j)];
                        }
                    }
                    add_into(&mut grads[a.0], g.clone());
                    add_into(&mut grads[bias.0], gb);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * vb[(i, j)]);
                    let gb = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * va[(i, j)]);
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Op::Scale(a, s) => {
                    let mut ga = g.clone();
                    ga.as_mut_slice().iter_mut().for_each(|x| *x *= s);
                    add_into(&mut grads[a.0], ga);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        g[(i, j)] * (1.0 - y[(i, j)] * y[(i, j)])
                    });
                    add_into(&mut grads[a.0], ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                        if x[(i, j)] > 0.0 {
                            g[(i, j)]
                        } else {
                            0.0
                        }
                    });
                    add_into(&mut grads[a.0], ga);
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * y[(i, j)]);
                    add_into(&mut grads[a.0], ga);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for i in 0..g.rows() {
                        let gsum: f64 = g.row(i).iter().sum();
                        for j in 0..g.cols() {
                            ga[(i, j)] = g[(i, j)] - y[(i, j)].exp() * gsum;
                        }
                    }
                    add_into(&mut grads[a.0], ga);
                }
                Op::Nll(logp, targets) => {
                    let (r, c) = self.shape_of(*logp);
                    let mut ga = Matrix::zeros(r, c);
                    let up = g.as_slice()[0];
                    for (i, &t) in targets.iter().enumerate() {
                        ga[(i, t)] = -up;
                    }
                    add_into(&mut grads[logp.0], ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape_of(*a);
                    let up = g.as_slice()[0];
                    add_into(&mut grads[a.0], Matrix::from_fn(r, c, |_, _| up));
                }
                Op::Mean(a) => {
                    let (r, c) = self.shape_of(*a);
                    let up = g.as_slice()[0] / (r * c).max(1) as f64;
                    add_into(&mut grads[a.0], Matrix::from_fn(r, c, |_, _| up));
                }
                Op::Embed(table, indices) => {
                    let (r, c) = self.shape_of(*table);
                    let mut gt = Matrix::zeros(r, c);
                    for (row, &ix) in indices.iter().enumerate() {
                        for j in 0..c {
                            gt[(ix, j)] += g[(row, j)];
                        }
                    }
                    add_into(&mut grads[table.0], gt);
                }
                Op::Concat(a, b) => {
                    let ca = self.shape_of(*a).1;
                    let cb = self.shape_of(*b).1;
                    let ga = Matrix::from_fn(g.rows(), ca, |i, j| g[(i, j)]);
                    let gb = Matrix::from_fn(g.rows(), cb, |i, j| g[(i, j + ca)]);
                    add_into(&mut grads[a.0], ga);
                    add_into(&mut grads[b.0], gb);
                }
                Op::VStack(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let (r, c) = self.shape_of(*p);
                        let gp = Matrix::from_fn(r, c, |i, j| g[(offset + i, j)]);
                        add_into(&mut grads[p.0], gp);
                        offset += r;
                    }
                }
                Op::SelectRow(a, row) => {
                    let (r, c) = self.shape_of(*a);
                    let mut ga = Matrix::zeros(r, c);
                    for j in 0..c {
                        ga[(*row, j)] = g[(0, j)];
                    }
                    add_into(&mut grads[a.0], ga);
                }
                Op::SliceRows(a, start, len) => {
                    let (r, c) = self.shape_of(*a);
                    let mut ga = Matrix::zeros(r, c);
                    ga.as_mut_slice()[start * c..(start + len) * c].copy_from_slice(g.as_slice());
                    add_into(&mut grads[a.0], ga);
                }
                Op::GumbelSt { input, soft, tau } => {
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let dotp: f64 = (0..g.cols()).map(|j| soft[(i, j)] * g[(i, j)]).sum();
                        for j in 0..g.cols() {
                            ga[(i, j)] = soft[(i, j)] * (g[(i, j)] - dotp) / tau;
                        }
                    }
                    add_into(&mut grads[input.0], ga);
                }
                Op::Comb { input, output } => {
                    let gw = output.backward(g.as_slice()[0])?;
                    let (r, c) = self.shape_of(*input);
                    add_into(&mut grads[input.0], Matrix::from_vec(r, c, gw)?);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| shape(&n.value)).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assignment::{matching_loss, MatchingLayer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn log_softmax_uniform() {
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[0.0, 0.0]])).unwrap();
        let y = t.log_softmax(x);
        let v = t.value(y);
        let l2 = std::f64::consts::LN_2;
        assert!((v[(0, 0)] + l2).abs() < 1e-15 && (v[(0, 1)] + l2).abs() < 1e-15);
    }

    #[test]
    fn tanh_derivative_at_zero() {
        let mut t = Tape::new();
        let x = t.leaf(Matrix::zeros(2, 3)).unwrap();
        let y = t.tanh(x);
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x), Matrix::from_fn(2, 3, |_, _| 1.0));
    }

    #[test]
    fn fan_out_accumulates() {
        // y = tanh(x) + x * x  ->  dy/dx = 1 - tanh^2 + 2x
        let mut t = Tape::new();
        let x = t.leaf(m(&[&[0.3, -1.2]])).unwrap();
        let a = t.tanh(x);
        let b = t.mul(x, x).unwrap();
        let y = t.add(a, b).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap().get(x);
        for (j, &xv) in [0.3_f64, -1.2].iter().enumerate() {
            let expect = 1.0 - xv.tanh().powi(2) + 2.0 * xv;
            assert!((g[(0, j)] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3)).unwrap();
        let b = t.leaf(Matrix::zeros(2, 3)).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch(_))));
        let c = t.leaf(Matrix::zeros(3, 2)).unwrap();
        assert!(matches!(t.add(a, c), Err(Error::ShapeMismatch(_))));
        assert!(t.nll(a, &[0]).is_err());
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(m(&[&[1.0]])).unwrap();
        let b = t.leaf(m(&[&[2.0, 3.0]])).unwrap();
        let s = t.sum(a);
        assert_eq!(t.backward(s).unwrap().get(b), Matrix::zeros(1, 2));
    }

    #[test]
    fn gumbel_output_is_one_hot() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = Tape::new();
        let x = t.leaf(Matrix::from_fn(4, 5, |i, j| (i * j) as f64 * 0.1)).unwrap();
        let y = t.gumbel_softmax_st(x, 2.0, &mut rng).unwrap();
        for i in 0..4 {
            let row = t.value(y).row(i);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
            assert!(row.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn comb_node_matches_direct_loss() {
        let logp = m(&[&[0.9_f64.ln(), 0.1_f64.ln()], &[0.2_f64.ln(), 0.8_f64.ln()]]);
        let layer = MatchingLayer::new(vec![1, 0], 2).unwrap();
        let mut t = Tape::new();
        let x = t.leaf(logp.clone()).unwrap();
        let z = t.comb(x, &layer).unwrap();
        let g = t.backward(z).unwrap().get(x);
        let direct = matching_loss(&logp, &[1, 0]).unwrap();
        assert_eq!(t.scalar(z), direct.loss);
        assert_eq!(g, direct.grad_logp);
        assert_eq!(layer.solve_count(), 1);
    }
}
