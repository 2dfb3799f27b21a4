//! Reverse-mode automatic differentiation over a dynamically built
//! expression graph.
//!
//! The tape is rebuilt for every objective evaluation: model code pushes
//! operations, values are computed eagerly, and [`Tape::grad`] walks the
//! nodes in reverse to accumulate adjoints. Matrix primitives (matmul,
//! Cholesky, triangular solve, log-determinant) carry hand-derived
//! adjoints; every registered primitive is checked against central finite
//! differences in the test suite.

use crate::error::{contract, CoreError, Result};
use crate::param::{ParamId, ParamStore, Transform};
use crate::tensor::{self, Tensor};
use std::collections::HashMap;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Log(usize),
    Sqrt(usize),
    Square(usize),
    Recip(usize),
    Relu(usize),
    Softplus(usize),
    SumAll(usize),
    SumAxis0(usize),
    SumAxis1(usize),
    AddRow(usize, usize),
    AddCol(usize, usize),
    MulRow(usize, usize),
    ScaleBy(usize, usize),
    AddScaledEye(usize, usize),
    Cholesky(usize),
    TriSolve { l: usize, b: usize, transpose: bool },
    LogDet(usize),
    DiagPart(usize),
    DiagEmbed(usize),
    SoftmaxRows(usize),
    LogSumExpRows(usize),
    PickPerRow { a: usize, idx: Vec<usize> },
    ConcatCols(Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Neg(..) => "neg",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Sqrt(..) => "sqrt",
            Op::Square(..) => "square",
            Op::Recip(..) => "recip",
            Op::Relu(..) => "relu",
            Op::Softplus(..) => "softplus",
            Op::SumAll(..) => "sum",
            Op::SumAxis0(..) => "sum_axis0",
            Op::SumAxis1(..) => "sum_axis1",
            Op::AddRow(..) => "add_row",
            Op::AddCol(..) => "add_col",
            Op::MulRow(..) => "mul_row",
            Op::ScaleBy(..) => "scale_by",
            Op::AddScaledEye(..) => "add_scaled_eye",
            Op::Cholesky(..) => "cholesky",
            Op::TriSolve { .. } => "tri_solve",
            Op::LogDet(..) => "logdet",
            Op::DiagPart(..) => "diag_part",
            Op::DiagEmbed(..) => "diag_embed",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSumExpRows(..) => "logsumexp_rows",
            Op::PickPerRow { .. } => "pick_per_row",
            Op::ConcatCols(..) => "concat_cols",
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    // Cholesky factor cached for logdet backward
    cache: Option<Tensor>,
}

/// Gradients of one scalar output with respect to tape leaves, grouped by
/// parameter id.
#[derive(Debug)]
pub struct Gradients {
    node_grads: Vec<Option<Tensor>>,
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient w.r.t. an arbitrary tape node (zero tensors are omitted).
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.node_grads[v.0].as_ref()
    }

    /// Gradient w.r.t. a parameter's raw (pre-transform) tensor.
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn by_param(&self) -> &HashMap<ParamId, Tensor> {
        &self.by_param
    }
}

/// Dynamically built expression graph with eager forward evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.shape();
        (s[0], s[1])
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.push_cached(op, value, None)
    }

    fn push_cached(&mut self, op: Op, value: Tensor, cache: Option<Tensor>) -> Var {
        self.nodes.push(Node { op, value, cache });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf { param: None }, t)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Tensor::scalar(x))
    }

    /// Inject a parameter: its raw tensor becomes a leaf and the positivity
    /// transform (if any) is applied as a tape op, so adjoints land on the
    /// raw parameterization.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let leaf = self.push(Op::Leaf { param: Some(id) }, store.raw(id).clone());
        match store.transform(id) {
            Transform::Identity => leaf,
            Transform::Exp => self.exp(leaf),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.add(&self.nodes[b.0].value);
        self.push(Op::Add(a.0, b.0), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.sub(&self.nodes[b.0].value);
        self.push(Op::Sub(a.0, b.0), v)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.scale(-1.0);
        self.push(Op::Neg(a.0), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.mul_elem(&self.nodes[b.0].value);
        self.push(Op::Mul(a.0, b.0), v)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.zip_map(&self.nodes[b.0].value, |x, y| x / y);
        self.push(Op::Div(a.0, b.0), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.scale(c);
        self.push(Op::Scale(a.0, c), v)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.map(|x| x + c);
        self.push(Op::AddConst(a.0), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.nodes[a.0].value.matmul(&self.nodes[b.0].value);
        self.push(Op::MatMul(a.0, b.0), v)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.transpose();
        self.push(Op::Transpose(a.0), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(f64::exp);
        self.push(Op::Exp(a.0), v)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(f64::ln);
        self.push(Op::Log(a.0), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(f64::sqrt);
        self.push(Op::Sqrt(a.0), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| x * x);
        self.push(Op::Square(a.0), v)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| 1.0 / x);
        self.push(Op::Recip(a.0), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(|x| x.max(0.0));
        self.push(Op::Relu(a.0), v)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.map(softplus);
        self.push(Op::Softplus(a.0), v)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.nodes[a.0].value.sum());
        self.push(Op::SumAll(a.0), v)
    }

    /// Column sums: `[n, m] -> [1, m]`.
    pub fn sum_axis0(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (n, m) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(1, m);
        for i in 0..n {
            for j in 0..m {
                out.data_mut()[j] += t.at(i, j);
            }
        }
        self.push(Op::SumAxis0(a.0), out)
    }

    /// Row sums: `[n, m] -> [n, 1]`.
    pub fn sum_axis1(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (n, m) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(n, 1);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..m {
                s += t.at(i, j);
            }
            out.data_mut()[i] = s;
        }
        self.push(Op::SumAxis1(a.0), out)
    }

    /// `a[n,m] + r[1,m]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, r: Var) -> Var {
        let (t, rv) = (&self.nodes[a.0].value, &self.nodes[r.0].value);
        assert_eq!(rv.rows(), 1, "add_row wants a [1,m] row");
        assert_eq!(t.cols(), rv.cols());
        let mut out = t.clone();
        let (n, m) = (t.rows(), t.cols());
        for i in 0..n {
            for j in 0..m {
                out.data_mut()[i * m + j] += rv.data()[j];
            }
        }
        self.push(Op::AddRow(a.0, r.0), out)
    }

    /// `a[n,m] + c[n,1]` broadcast over columns.
    pub fn add_col(&mut self, a: Var, c: Var) -> Var {
        let (t, cv) = (&self.nodes[a.0].value, &self.nodes[c.0].value);
        assert_eq!(cv.cols(), 1, "add_col wants a [n,1] column");
        assert_eq!(t.rows(), cv.rows());
        let mut out = t.clone();
        let (n, m) = (t.rows(), t.cols());
        for i in 0..n {
            for j in 0..m {
                out.data_mut()[i * m + j] += cv.data()[i];
            }
        }
        self.push(Op::AddCol(a.0, c.0), out)
    }

    /// `a[n,m] * r[1,m]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Var {
        let (t, rv) = (&self.nodes[a.0].value, &self.nodes[r.0].value);
        assert_eq!(rv.rows(), 1, "mul_row wants a [1,m] row");
        assert_eq!(t.cols(), rv.cols());
        let mut out = t.clone();
        let (n, m) = (t.rows(), t.cols());
        for i in 0..n {
            for j in 0..m {
                out.data_mut()[i * m + j] *= rv.data()[j];
            }
        }
        self.push(Op::MulRow(a.0, r.0), out)
    }

    /// Elementwise product with a scalar node.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let sv = self.nodes[s.0].value.scalar_value();
        let v = self.nodes[a.0].value.scale(sv);
        self.push(Op::ScaleBy(a.0, s.0), v)
    }

    /// `a + s*I` for square `a` and scalar node `s`.
    pub fn add_scaled_eye(&mut self, a: Var, s: Var) -> Var {
        let sv = self.nodes[s.0].value.scalar_value();
        let t = &self.nodes[a.0].value;
        assert_eq!(t.rows(), t.cols(), "add_scaled_eye wants a square matrix");
        let mut out = t.clone();
        let n = t.rows();
        for i in 0..n {
            out.data_mut()[i * n + i] += sv;
        }
        self.push(Op::AddScaledEye(a.0, s.0), out)
    }

    /// Lower Cholesky factor with the jitter ladder. The jitter offset is
    /// treated as a constant in the backward pass.
    pub fn cholesky(&mut self, a: Var) -> Result<Var> {
        let f = tensor::cholesky(&self.nodes[a.0].value)?;
        Ok(self.push(Op::Cholesky(a.0), f.lower))
    }

    /// Solve `L x = b` (or `L^T x = b`) where `l` is lower-triangular.
    pub fn tri_solve(&mut self, l: Var, b: Var, transpose: bool) -> Var {
        let v = tensor::solve_lower(&self.nodes[l.0].value, &self.nodes[b.0].value, transpose);
        self.push(Op::TriSolve { l: l.0, b: b.0, transpose }, v)
    }

    /// log det of a symmetric positive definite matrix.
    pub fn logdet(&mut self, a: Var) -> Result<Var> {
        let f = tensor::cholesky(&self.nodes[a.0].value)?;
        let ld = 2.0 * f.lower.diag().iter().map(|x| x.ln()).sum::<f64>();
        Ok(self.push_cached(Op::LogDet(a.0), Tensor::scalar(ld), Some(f.lower)))
    }

    /// Diagonal of a square matrix as a `[n, 1]` column.
    pub fn diag_part(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        assert_eq!(t.rows(), t.cols());
        let v = Tensor::col(&t.diag());
        self.push(Op::DiagPart(a.0), v)
    }

    /// `[n, 1]` column embedded as an `n x n` diagonal matrix.
    pub fn diag_embed(&mut self, v: Var) -> Var {
        let t = &self.nodes[v.0].value;
        assert_eq!(t.cols(), 1, "diag_embed wants a column vector");
        let n = t.rows();
        let mut out = Tensor::zeros(n, n);
        for i in 0..n {
            out.data_mut()[i * n + i] = t.data()[i];
        }
        self.push(Op::DiagEmbed(v.0), out)
    }

    /// Row-wise softmax, stabilized by max subtraction and clamped away
    /// from exact zero so downstream logs stay finite.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (n, m) = (t.rows(), t.cols());
        let mut out = Tensor::zeros(n, m);
        for i in 0..n {
            let row = t.row_slice(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for &x in row {
                denom += (x - mx).exp();
            }
            for j in 0..m {
                let p = ((row[j] - mx).exp() / denom).max(1e-300);
                out.data_mut()[i * m + j] = p;
            }
        }
        self.push(Op::SoftmaxRows(a.0), out)
    }

    /// Row-wise log-sum-exp: `[n, m] -> [n, 1]`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let n = t.rows();
        let mut out = Tensor::zeros(n, 1);
        for i in 0..n {
            let row = t.row_slice(i);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = row.iter().map(|&x| (x - mx).exp()).sum();
            out.data_mut()[i] = mx + s.ln();
        }
        self.push(Op::LogSumExpRows(a.0), out)
    }

    /// Per-row element pick: `out[i] = a[i, idx[i]]`.
    pub fn pick_per_row(&mut self, a: Var, idx: &[usize]) -> Var {
        let t = &self.nodes[a.0].value;
        assert_eq!(t.rows(), idx.len());
        let m = t.cols();
        let data: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| {
            assert!(j < m, "pick index {j} out of range for {m} columns");
            t.at(i, j)
        }).collect();
        self.push(Op::PickPerRow { a: a.0, idx: idx.to_vec() }, Tensor::col(&data))
    }

    /// Stack equal-height blocks side by side: `[n,w_1] .. [n,w_k] -> [n, sum w]`.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols wants at least one block");
        let n = self.nodes[parts[0].0].value.rows();
        let total: usize = parts.iter().map(|p| {
            let t = &self.nodes[p.0].value;
            assert_eq!(t.rows(), n, "concat_cols blocks must share row count");
            t.cols()
        }).sum();
        let mut out = Tensor::zeros(n, total);
        let mut offset = 0;
        for p in parts {
            let t = &self.nodes[p.0].value;
            let w = t.cols();
            for i in 0..n {
                for j in 0..w {
                    out.data_mut()[i * total + offset + j] = t.at(i, j);
                }
            }
            offset += w;
        }
        self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), out)
    }

    /// Mean over all entries.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.nodes[a.0].value.len();
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of squared entries.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let sq = self.square(a);
        self.sum(sq)
    }

    /// Reverse pass from a scalar seed node. Returns per-node and
    /// per-parameter gradients.
    pub fn grad(&self, seed: Var) -> Result<Gradients> {
        if !self.nodes[seed.0].value.is_scalar() {
            return Err(contract(format!(
                "grad seed must be scalar, node {} has shape {:?}",
                seed.0,
                self.nodes[seed.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(Tensor::scalar(1.0));

        for i in (0..=seed.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            if !g.all_finite() {
                return Err(CoreError::NumericFailure(format!(
                    "non-finite adjoint at node {} ({})",
                    i,
                    self.nodes[i].op.name()
                )));
            }
            self.backward_step(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let mut by_param: HashMap<ParamId, Tensor> = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &grads[i] {
                    by_param
                        .entry(id)
                        .and_modify(|acc| *acc = acc.add(g))
                        .or_insert_with(|| g.clone());
                }
            }
        }
        Ok(Gradients { node_grads: grads, by_param })
    }

    fn backward_step(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |k: usize| &self.nodes[k].value;
        let mut acc = |k: usize, delta: Tensor| {
            grads[k] = Some(match grads[k].take() {
                Some(existing) => existing.add(&delta),
                None => delta,
            });
        };
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Neg(a) => acc(*a, g.scale(-1.0)),
            Op::Mul(a, b) => {
                acc(*a, g.mul_elem(val(*b)));
                acc(*b, g.mul_elem(val(*a)));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, g.zip_map(bv, |gi, bi| gi / bi));
                let av = val(*a);
                let mut d = g.mul_elem(av);
                d = d.zip_map(bv, |x, bi| -x / (bi * bi));
                acc(*b, d);
            }
            Op::Scale(a, c) => acc(*a, g.scale(*c)),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::MatMul(a, b) => {
                acc(*a, g.matmul(&val(*b).transpose()));
                acc(*b, val(*a).transpose().matmul(g));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Exp(a) => acc(*a, g.mul_elem(&self.nodes[i].value)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |gi, ai| gi / ai)),
            Op::Sqrt(a) => acc(*a, g.zip_map(&self.nodes[i].value, |gi, yi| gi / (2.0 * yi))),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gi, ai| 2.0 * gi * ai)),
            Op::Recip(a) => {
                let y = &self.nodes[i].value;
                acc(*a, g.zip_map(y, |gi, yi| -gi * yi * yi));
            }
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |gi, ai| if ai > 0.0 { gi } else { 0.0 })),
            Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |gi, ai| gi * sigmoid(ai))),
            Op::SumAll(a) => {
                let gv = g.scalar_value();
                let t = val(*a);
                acc(*a, Tensor::full(t.rows(), t.cols(), gv));
            }
            Op::SumAxis0(a) => {
                let t = val(*a);
                let (n, m) = (t.rows(), t.cols());
                let mut d = Tensor::zeros(n, m);
                for r in 0..n {
                    for c in 0..m {
                        d.data_mut()[r * m + c] = g.data()[c];
                    }
                }
                acc(*a, d);
            }
            Op::SumAxis1(a) => {
                let t = val(*a);
                let (n, m) = (t.rows(), t.cols());
                let mut d = Tensor::zeros(n, m);
                for r in 0..n {
                    for c in 0..m {
                        d.data_mut()[r * m + c] = g.data()[r];
                    }
                }
                acc(*a, d);
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                let (n, m) = (g.rows(), g.cols());
                let mut d = Tensor::zeros(1, m);
                for c in 0..m {
                    let mut s = 0.0;
                    for row in 0..n {
                        s += g.at(row, c);
                    }
                    d.data_mut()[c] = s;
                }
                acc(*r, d);
            }
            Op::AddCol(a, cidx) => {
                acc(*a, g.clone());
                let (n, m) = (g.rows(), g.cols());
                let mut d = Tensor::zeros(n, 1);
                for row in 0..n {
                    let mut s = 0.0;
                    for c in 0..m {
                        s += g.at(row, c);
                    }
                    d.data_mut()[row] = s;
                }
                acc(*cidx, d);
            }
            Op::MulRow(a, r) => {
                let rv = val(*r);
                let (n, m) = (g.rows(), g.cols());
                let mut da = Tensor::zeros(n, m);
                for row in 0..n {
                    for c in 0..m {
                        da.data_mut()[row * m + c] = g.at(row, c) * rv.data()[c];
                    }
                }
                acc(*a, da);
                let av = val(*a);
                let mut dr = Tensor::zeros(1, m);
                for c in 0..m {
                    let mut s = 0.0;
                    for row in 0..n {
                        s += g.at(row, c) * av.at(row, c);
                    }
                    dr.data_mut()[c] = s;
                }
                acc(*r, dr);
            }
            Op::ScaleBy(a, s) => {
                let sv = val(*s).scalar_value();
                acc(*a, g.scale(sv));
                acc(*s, Tensor::scalar(g.dot(val(*a))));
            }
            Op::AddScaledEye(a, s) => {
                acc(*a, g.clone());
                let tr: f64 = g.diag().iter().sum();
                acc(*s, Tensor::scalar(tr));
            }
            Op::Cholesky(a) => {
                let l = &self.nodes[i].value;
                acc(*a, cholesky_backward(l, g));
            }
            Op::TriSolve { l, b, transpose } => {
                let lv = val(*l);
                let y = &self.nodes[i].value;
                // For x = L^-1 b: bbar = L^-T xbar, Lbar = -tril(bbar x^T).
                // For x = L^-T b: bbar = L^-1 xbar, Lbar = -tril(x bbar^T).
                let u = tensor::solve_lower(lv, g, !*transpose);
                let lbar = if *transpose {
                    y.matmul(&u.transpose())
                } else {
                    u.matmul(&y.transpose())
                };
                acc(*l, tril(&lbar.scale(-1.0)));
                acc(*b, u);
            }
            Op::LogDet(a) => {
                let l = self.nodes[i].cache.as_ref().expect("logdet cache");
                let n = l.rows();
                let inv = tensor::cholesky_solve(l, &Tensor::eye(n));
                let gv = g.scalar_value();
                let sym = inv.transpose().add(&inv).scale(0.5 * gv);
                acc(*a, sym);
            }
            Op::DiagPart(a) => {
                let n = val(*a).rows();
                let mut d = Tensor::zeros(n, n);
                for k in 0..n {
                    d.data_mut()[k * n + k] = g.data()[k];
                }
                acc(*a, d);
            }
            Op::DiagEmbed(v) => {
                acc(*v, Tensor::col(&g.diag()));
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let (n, m) = (y.rows(), y.cols());
                let mut d = Tensor::zeros(n, m);
                for r in 0..n {
                    let mut dotp = 0.0;
                    for c in 0..m {
                        dotp += g.at(r, c) * y.at(r, c);
                    }
                    for c in 0..m {
                        d.data_mut()[r * m + c] = y.at(r, c) * (g.at(r, c) - dotp);
                    }
                }
                acc(*a, d);
            }
            Op::LogSumExpRows(a) => {
                let t = val(*a);
                let y = &self.nodes[i].value;
                let (n, m) = (t.rows(), t.cols());
                let mut d = Tensor::zeros(n, m);
                for r in 0..n {
                    for c in 0..m {
                        d.data_mut()[r * m + c] = g.data()[r] * (t.at(r, c) - y.data()[r]).exp();
                    }
                }
                acc(*a, d);
            }
            Op::PickPerRow { a, idx } => {
                let t = val(*a);
                let (n, m) = (t.rows(), t.cols());
                let mut d = Tensor::zeros(n, m);
                for (r, &c) in idx.iter().enumerate() {
                    d.data_mut()[r * m + c] = g.data()[r];
                }
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let n = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.nodes[p].value.cols();
                    let mut d = Tensor::zeros(n, w);
                    for i in 0..n {
                        for j in 0..w {
                            d.data_mut()[i * w + j] = g.data()[i * total + offset + j];
                        }
                    }
                    acc(p, d);
                    offset += w;
                }
            }
        }
    }
}

fn tril(t: &Tensor) -> Tensor {
    let (n, m) = (t.rows(), t.cols());
    let mut out = Tensor::zeros(n, m);
    for i in 0..n {
        for j in 0..=i.min(m - 1) {
            out.data_mut()[i * m + j] = t.at(i, j);
        }
    }
    out
}

/// Reverse-mode rule for the Cholesky factorization, following the
/// level-3 blocked derivation specialized to full matrices: with
/// `P = Phi(L^T Lbar)` (lower triangle, halved diagonal), the input
/// adjoint is the symmetrization of `L^-T P L^-1`.
fn cholesky_backward(l: &Tensor, lbar: &Tensor) -> Tensor {
    let n = l.rows();
    let mut p = l.transpose().matmul(lbar);
    // Phi: keep lower triangle, halve the diagonal
    for i in 0..n {
        for j in 0..n {
            if j > i {
                p.data_mut()[i * n + j] = 0.0;
            } else if j == i {
                p.data_mut()[i * n + j] *= 0.5;
            }
        }
    }
    let x = tensor::solve_lower(l, &p, true);
    // abar = X L^-1, via L^T Y = X^T, abar = Y^T
    let y = tensor::solve_lower(l, &x.transpose(), true);
    let abar = y.transpose();
    abar.transpose().add(&abar).scale(0.5)
}
