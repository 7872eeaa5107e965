//! Reverse-mode differentiation over 2-D `f64` matrices.
//!
//! A [`Graph`] records every operation as a node on a tape. Parameters are
//! borrowed from a [`ParamStore`] without copying; [`Graph::backward`] walks
//! the tape in reverse and returns per-parameter gradients.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::numerics::{ensure_finite, ParamId, ParamStore, Tensor};

/// Lower bound applied to probabilities before every `-ln`.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Slice {
        src: Var,
        r0: usize,
        c0: usize,
    },
    GatherRows(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    BinaryNll {
        scores: Var,
        replaced: Vec<bool>,
    },
}

struct Node<'p> {
    rows: usize,
    cols: usize,
    value: Cow<'p, [f64]>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Empty gradient set sized for `store`.
    pub fn for_store(store: &ParamStore) -> Self {
        Gradients {
            grads: vec![None; store.len()],
        }
    }

    pub fn set(&mut self, id: ParamId, grad: Vec<f64>) {
        self.grads[id.index()] = Some(grad);
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.grads.get(id.index()).and_then(|g| g.as_deref())
    }

    /// Adds every gradient into the matching tensor's gradient slot.
    pub fn accumulate_into(self, store: &mut ParamStore) {
        for (i, g) in self.grads.into_iter().enumerate() {
            if let Some(g) = g {
                store.get_mut(ParamId(i)).accumulate_grad(&g);
            }
        }
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major buffers.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: strides describe buffers whose lengths were checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_K * (x + GELU_C * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        value: Cow<'p, [f64]>,
        op: Op,
        needs_grad: bool,
    ) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(
        &mut self,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        op: Op,
        parents: &[Var],
    ) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push(rows, cols, Cow::Owned(value), op, needs_grad)
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let (r, c) = self.dims(v);
        Tensor::new(vec![r, c], self.value(v).to_vec()).expect("node shape is consistent")
    }

    // ---- leaves -------------------------------------------------------------

    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.matrix_dims();
        self.push(r, c, Cow::Owned(t.data().to_vec()), Op::Leaf, false)
    }

    pub fn constant_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows * cols != data.len() {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} constant with {} values",
                data.len()
            )));
        }
        Ok(self.push(rows, cols, Cow::Owned(data), Op::Leaf, false))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(
            rows,
            cols,
            Cow::Owned(vec![0.0; rows * cols]),
            Op::Leaf,
            false,
        )
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let params = self.params;
        let t = params.get(id);
        let (r, c) = t.matrix_dims();
        let needs = !params.is_frozen(id);
        self.push(r, c, Cow::Borrowed(t.data()), Op::Param(id), needs)
    }

    // ---- linear algebra -----------------------------------------------------

    /// `a [M x K] . b [K x N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension(format!("matmul {m}x{k} . {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            false,
            self.value(b),
            false,
            &mut out,
            0.0,
        );
        Ok(self.push_op(m, n, out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a [M x K] . b^T` where `b` is `[N x K]`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_nt {m}x{k} . ({n}x{k2})^T"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a),
            false,
            self.value(b),
            true,
            &mut out,
            0.0,
        );
        Ok(self.push_op(m, n, out, Op::MatMulNT(a, b), &[a, b]))
    }

    // ---- elementwise --------------------------------------------------------

    fn same_dims(&self, a: Var, b: Var, what: &str) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::Dimension(format!("{what}: {da:?} vs {db:?}")));
        }
        Ok(da)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_dims(a, b, "add")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push_op(r, c, out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `[1 x N]` row to every row of `a [M x N]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        if self.dims(row) != (1, n) {
            return Err(Error::Dimension(format!(
                "add_row {m}x{n} + {:?}",
                self.dims(row)
            )));
        }
        let rv = self.value(row);
        let out = self
            .value(a)
            .chunks(n.max(1))
            .flat_map(|r| r.iter().zip(rv).map(|(x, y)| x + y))
            .collect();
        Ok(self.push_op(m, n, out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_dims(a, b, "mul")?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push_op(r, c, out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push_op(r, c, out, Op::Scale(a, s), &[a])
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = self.dims(a);
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push_op(r, c, out, op, &[a])
    }

    /// Elementwise logistic function; saturates without producing NaN.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu_scalar, Op::Gelu(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if c == 0 {
            return Err(Error::Dimension("softmax over zero classes".into()));
        }
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        Ok(self.push_op(r, c, out, Op::SoftmaxRows(a), &[a]))
    }

    /// Per-row layer normalization with learned gain and bias `[1 x C]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return Err(Error::Dimension(format!("layer_norm width {c}")));
        }
        let xv = self.value(x);
        let (g, b) = (self.value(gamma), self.value(beta));
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push_op(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        ))
    }

    // ---- structure ----------------------------------------------------------

    /// Per-row concatenation, left operand first.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts.first().map(|&p| self.dims(p).0).unwrap_or(0);
        if parts.iter().any(|&p| self.dims(p).0 != rows) {
            return Err(Error::Dimension("concat_cols: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        Ok(self.push_op(rows, cols, out, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map(|&p| self.dims(p).1).unwrap_or(0);
        if parts.iter().any(|&p| self.dims(p).1 != cols) {
            return Err(Error::Dimension("concat_rows: column counts differ".into()));
        }
        let rows: usize = parts.iter().map(|&p| self.dims(p).0).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push_op(rows, cols, out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rectangular window `[r0, r0+rows) x [c0, c0+cols)`.
    pub fn slice(
        &mut self,
        src: Var,
        r0: usize,
        rows: usize,
        c0: usize,
        cols: usize,
    ) -> Result<Var> {
        let (sr, sc) = self.dims(src);
        if r0 + rows > sr || c0 + cols > sc {
            return Err(Error::Index(format!(
                "slice [{r0}+{rows}, {c0}+{cols}] of {sr}x{sc}"
            )));
        }
        let v = self.value(src);
        let mut out = Vec::with_capacity(rows * cols);
        for i in r0..r0 + rows {
            out.extend_from_slice(&v[i * sc + c0..i * sc + c0 + cols]);
        }
        Ok(self.push_op(rows, cols, out, Op::Slice { src, r0, c0 }, &[src]))
    }

    pub fn slice_rows(&mut self, src: Var, r0: usize, rows: usize) -> Result<Var> {
        let c = self.dims(src).1;
        self.slice(src, r0, rows, 0, c)
    }

    /// Row `i` of the output is row `indices[i]` of `src` (embedding lookup).
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let (sr, sc) = self.dims(src);
        if let Some(&bad) = indices.iter().find(|&&i| i >= sr) {
            return Err(Error::Index(format!("row {bad} of {sr}-row matrix")));
        }
        let v = self.value(src);
        let mut out = Vec::with_capacity(indices.len() * sc);
        for &i in indices {
            out.extend_from_slice(&v[i * sc..(i + 1) * sc]);
        }
        Ok(self.push_op(
            indices.len(),
            sc,
            out,
            Op::GatherRows(src, indices.to_vec()),
            &[src],
        ))
    }

    // ---- reductions and losses ----------------------------------------------

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push_op(1, 1, vec![s], Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Usage("mean of empty matrix".into()));
        }
        let s = self.value(a).iter().sum::<f64>() / n as f64;
        Ok(self.push_op(1, 1, vec![s], Op::Mean(a), &[a]))
    }

    /// Mean over rows of `-ln(max(probs[row][label], 1e-12))`.
    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(probs);
        if labels.len() != r || r == 0 {
            return Err(Error::Dimension(format!(
                "{} labels for {r} rows",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Index(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let p = self.value(probs);
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -p[i * c + l].max(LOG_CLAMP).ln())
            .sum::<f64>()
            / r as f64;
        Ok(self.push_op(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            &[probs],
        ))
    }

    /// Mean binary negative log-likelihood of per-row "real" probabilities:
    /// `-ln(s)` where `replaced` is false, `-ln(1-s)` where true, both clamped.
    pub fn binary_nll(&mut self, scores: Var, replaced: &[bool]) -> Result<Var> {
        let (r, c) = self.dims(scores);
        if c != 1 || replaced.len() != r || r == 0 {
            return Err(Error::Dimension(format!(
                "binary_nll on {r}x{c} scores with {} targets",
                replaced.len()
            )));
        }
        let s = self.value(scores);
        let loss = s
            .iter()
            .zip(replaced)
            .map(|(&p, &fake)| {
                if fake {
                    -(1.0 - p).max(LOG_CLAMP).ln()
                } else {
                    -p.max(LOG_CLAMP).ln()
                }
            })
            .sum::<f64>()
            / r as f64;
        Ok(self.push_op(
            1,
            1,
            vec![loss],
            Op::BinaryNll {
                scores,
                replaced: replaced.to_vec(),
            },
            &[scores],
        ))
    }

    // ---- backward -----------------------------------------------------------

    /// Reverse pass from a scalar node. Non-finite loss or gradients are errors.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.dims(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward from non-scalar {:?}",
                self.dims(loss)
            )));
        }
        ensure_finite(self.value(loss), "loss")?;
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients {
            grads: vec![None; self.params.len()],
        };

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &g, &mut grads, &mut out)?;
        }
        for g in out.grads.iter().flatten() {
            ensure_finite(g, "gradient")?;
        }
        Ok(out)
    }

    fn grad_buf<'a>(&self, grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
        let node = &self.nodes[v.0];
        if !node.needs_grad {
            return None;
        }
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; node.value.len()]))
    }

    fn backward_node(
        &self,
        node: &Node<'p>,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut Gradients,
    ) -> Result<()> {
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => match &mut out.grads[id.index()] {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g.to_vec()),
            },
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_buf(grads, *a) {
                    gemm(m, n, k, g, false, bv, true, ga, 1.0);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    gemm(k, m, n, av, true, g, false, gb, 1.0);
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_buf(grads, *a) {
                    gemm(m, n, k, g, false, bv, false, ga, 1.0);
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    gemm(n, m, k, g, true, av, false, gb, 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.grad_buf(grads, v) {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gr) = self.grad_buf(grads, *row) {
                    for r in g.chunks(cols.max(1)) {
                        gr.iter_mut().zip(r).for_each(|(x, y)| *x += y);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *b) {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * s);
                }
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((x, gi), s) in ga.iter_mut().zip(g).zip(y.iter()) {
                        *x += gi * s * (1.0 - s);
                    }
                }
            }
            Op::Tanh(a) => {
                let y = &node.value;
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((x, gi), t) in ga.iter_mut().zip(g).zip(y.iter()) {
                        *x += gi * (1.0 - t * t);
                    }
                }
            }
            Op::Gelu(a) => {
                let xv = self.value(*a);
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((x, gi), xi) in ga.iter_mut().zip(g).zip(xv) {
                        *x += gi * gelu_grad(*xi);
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                if let Some(ga) = self.grad_buf(grads, *a) {
                    for ((gr, yr), dr) in
                        g.chunks(cols).zip(y.chunks(cols)).zip(ga.chunks_mut(cols))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((d, gi), yi) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yi * (gi - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma);
                if let Some(gg) = self.grad_buf(grads, *gamma) {
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((acc, gi), hi) in gg.iter_mut().zip(gr).zip(hr) {
                            *acc += gi * hi;
                        }
                    }
                }
                if let Some(gb) = self.grad_buf(grads, *beta) {
                    for gr in g.chunks(cols) {
                        gb.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(gx) = self.grad_buf(grads, *x) {
                    let n = cols as f64;
                    for i in 0..rows {
                        let gr = &g[i * cols..(i + 1) * cols];
                        let hr = &xhat[i * cols..(i + 1) * cols];
                        let dh: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dh.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for j in 0..cols {
                            gx[i * cols + j] += inv_std[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = self.dims(p).1;
                    if let Some(gp) = self.grad_buf(grads, p) {
                        for i in 0..rows {
                            let src = &g[i * cols + off..i * cols + off + pc];
                            gp[i * pc..(i + 1) * pc]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                    off += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if let Some(gp) = self.grad_buf(grads, p) {
                        gp.iter_mut()
                            .zip(&g[off..off + n])
                            .for_each(|(a, b)| *a += b);
                    }
                    off += n;
                }
            }
            Op::Slice { src, r0, c0 } => {
                let sc = self.dims(*src).1;
                if let Some(gs) = self.grad_buf(grads, *src) {
                    for i in 0..rows {
                        let dst = &mut gs[(r0 + i) * sc + c0..(r0 + i) * sc + c0 + cols];
                        dst.iter_mut()
                            .zip(&g[i * cols..(i + 1) * cols])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::GatherRows(src, indices) => {
                if let Some(gs) = self.grad_buf(grads, *src) {
                    for (i, &r) in indices.iter().enumerate() {
                        let dst = &mut gs[r * cols..(r + 1) * cols];
                        dst.iter_mut()
                            .zip(&g[i * cols..(i + 1) * cols])
                            .for_each(|(a, b)| *a += b);
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = self.grad_buf(grads, *a) {
                    let s = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::CrossEntropy { probs, labels } => {
                let c = self.dims(*probs).1;
                let p = self.value(*probs);
                let n = labels.len() as f64;
                if let Some(gp) = self.grad_buf(grads, *probs) {
                    for (i, &l) in labels.iter().enumerate() {
                        let pi = p[i * c + l];
                        if pi > LOG_CLAMP {
                            gp[i * c + l] -= g[0] / (pi * n);
                        }
                    }
                }
            }
            Op::BinaryNll { scores, replaced } => {
                let s = self.value(*scores);
                let n = replaced.len() as f64;
                if let Some(gs) = self.grad_buf(grads, *scores) {
                    for (i, &fake) in replaced.iter().enumerate() {
                        if fake {
                            let q = 1.0 - s[i];
                            if q > LOG_CLAMP {
                                gs[i] += g[0] / (q * n);
                            }
                        } else if s[i] > LOG_CLAMP {
                            gs[i] -= g[0] / (s[i] * n);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax of one row, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
