//! Reverse-mode autodiff on an append-only arena tape.
//!
//! Every op validates shapes, computes its value eagerly, and scans the
//! result for non-finite entries before it is admitted to the tape. The
//! node list is its own topological order, so `backward` is a single
//! reverse sweep.

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul_raw, softmax_into, transpose_raw, Tensor};

/// Handle into a [`Tape`] arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(TensorId, TensorId),
    /// x[r,c] + row[1,c], broadcast over rows.
    AddRow(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Div(TensorId, TensorId),
    Scale(TensorId, f64),
    AddScalar(TensorId),
    MatMul(TensorId, TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    Gelu(TensorId),
    SoftmaxRows(TensorId),
    /// Row-wise beta^-1 * ln(sum e^(beta*x)); [r,c] -> [r,1].
    LogSumExpRows(TensorId, f64),
    SumAll(TensorId),
    SliceCols {
        input: TensorId,
        start: usize,
        len: usize,
    },
    ConcatCols(TensorId, TensorId),
    LayerNormRows {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    },
    /// Mean over rows of -ln softmax(logits)[target]; targets are constants.
    CrossEntropyRows {
        logits: TensorId,
        targets: Vec<usize>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation graph; indices are the topological order.
pub struct Tape {
    nodes: Vec<Node>,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn gelu_val(x: f64) -> f64 {
    let t = (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

fn gelu_deriv(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient written by the last `backward`, if this node required one.
    pub fn grad(&self, id: TensorId) -> Option<&Vec<f64>> {
        self.nodes[id.0].value.grad.as_ref()
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        self.nodes[id.0].value.data[0]
    }

    fn push(&mut self, op: &'static str, value: Tensor, node_op: Op, requires_grad: bool) -> Result<TensorId> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node {
            value,
            op: node_op,
            requires_grad,
        });
        Ok(TensorId(self.nodes.len() - 1))
    }

    fn needs(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn want_2d(&self, op: &'static str, id: TensorId) -> Result<(usize, usize)> {
        let s = &self.nodes[id.0].value.shape;
        if s.len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: s.clone(),
                rhs: vec![0, 0],
            });
        }
        Ok((s[0], s[1]))
    }

    // ── Graph construction ──

    pub fn leaf(&mut self, t: Tensor) -> Result<TensorId> {
        let rg = t.requires_grad;
        self.push("leaf", t, Op::Leaf, rg)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<TensorId> {
        let mut t = t;
        t.requires_grad = false;
        self.push("constant", t, Op::Leaf, false)
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape.clone(), data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push("add", out, Op::Add(a, b), rg)
    }

    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> Result<TensorId> {
        let (r, c) = self.want_2d("add_row", x)?;
        let (rr, rc) = self.want_2d("add_row", row)?;
        if rr != 1 || rc != c {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: vec![r, c],
                rhs: vec![rr, rc],
            });
        }
        let tx = &self.nodes[x.0].value;
        let trow = &self.nodes[row.0].value;
        let mut data = tx.data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += trow.data[j];
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        let rg = self.needs(x) || self.needs(row);
        self.push("add_row", out, Op::AddRow(x, row), rg)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch {
                op: "mul",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape.clone(), data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape != tb.shape {
            return Err(Error::ShapeMismatch {
                op: "div",
                lhs: ta.shape.clone(),
                rhs: tb.shape.clone(),
            });
        }
        let data: Vec<f64> = ta.data.iter().zip(&tb.data).map(|(x, y)| x / y).collect();
        let out = Tensor::new(ta.shape.clone(), data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push("div", out, Op::Div(a, b), rg)
    }

    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        if !factor.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "scale: factor must be finite, got {factor}"
            )));
        }
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta.data.iter().map(|x| x * factor).collect();
        let out = Tensor::new(ta.shape.clone(), data)?;
        let rg = self.needs(a);
        self.push("scale", out, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: TensorId, value: f64) -> Result<TensorId> {
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "add_scalar: addend must be finite, got {value}"
            )));
        }
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta.data.iter().map(|x| x + value).collect();
        let out = Tensor::new(ta.shape.clone(), data)?;
        let rg = self.needs(a);
        self.push("add_scalar", out, Op::AddScalar(a), rg)
    }

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, k) = self.want_2d("matmul", a)?;
        let (k2, n) = self.want_2d("matmul", b)?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let data = matmul_raw(&self.nodes[a.0].value.data, &self.nodes[b.0].value.data, m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    pub fn transpose(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.want_2d("transpose", a)?;
        let data = transpose_raw(&self.nodes[a.0].value.data, r, c);
        let out = Tensor::new(vec![c, r], data)?;
        let rg = self.needs(a);
        self.push("transpose", out, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let ta = &self.nodes[a.0].value;
        let numel: usize = shape.iter().product();
        if numel != ta.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape.clone(),
                rhs: shape,
            });
        }
        let out = Tensor::new(shape, ta.data.clone())?;
        let rg = self.needs(a);
        self.push("reshape", out, Op::Reshape(a), rg)
    }

    pub fn gelu(&mut self, a: TensorId) -> Result<TensorId> {
        let ta = &self.nodes[a.0].value;
        let data: Vec<f64> = ta.data.iter().map(|&x| gelu_val(x)).collect();
        let out = Tensor::new(ta.shape.clone(), data)?;
        let rg = self.needs(a);
        self.push("gelu", out, Op::Gelu(a), rg)
    }

    pub fn softmax_rows(&mut self, a: TensorId) -> Result<TensorId> {
        let (r, c) = self.want_2d("softmax_rows", a)?;
        let ta = &self.nodes[a.0].value;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            softmax_into(&ta.data[i * c..(i + 1) * c], &mut data[i * c..(i + 1) * c]);
        }
        let out = Tensor::new(vec![r, c], data)?;
        let rg = self.needs(a);
        self.push("softmax_rows", out, Op::SoftmaxRows(a), rg)
    }

    pub fn logsumexp_rows(&mut self, a: TensorId, beta: f64) -> Result<TensorId> {
        if beta <= 0.0 || !beta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "logsumexp_rows: beta must be positive and finite, got {beta}"
            )));
        }
        let (r, c) = self.want_2d("logsumexp_rows", a)?;
        let ta = &self.nodes[a.0].value;
        let mut data = vec![0.0; r];
        for i in 0..r {
            let row = &ta.data[i * c..(i + 1) * c];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&x| (beta * (x - m)).exp()).sum();
            data[i] = m + sum.ln() / beta;
        }
        let out = Tensor::new(vec![r, 1], data)?;
        let rg = self.needs(a);
        self.push("logsumexp_rows", out, Op::LogSumExpRows(a, beta), rg)
    }

    pub fn sum_all(&mut self, a: TensorId) -> Result<TensorId> {
        let ta = &self.nodes[a.0].value;
        let s: f64 = ta.data.iter().sum();
        let out = Tensor::new(vec![1], vec![s])?;
        let rg = self.needs(a);
        self.push("sum_all", out, Op::SumAll(a), rg)
    }

    pub fn slice_cols(&mut self, a: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let (r, c) = self.want_2d("slice_cols", a)?;
        if start + len > c || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice_cols",
                lhs: vec![r, c],
                rhs: vec![start, len],
            });
        }
        let ta = &self.nodes[a.0].value;
        let mut data = vec![0.0; r * len];
        for i in 0..r {
            data[i * len..(i + 1) * len]
                .copy_from_slice(&ta.data[i * c + start..i * c + start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        let rg = self.needs(a);
        self.push("slice_cols", out, Op::SliceCols { input: a, start, len }, rg)
    }

    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ra, ca) = self.want_2d("concat_cols", a)?;
        let (rb, cb) = self.want_2d("concat_cols", b)?;
        if ra != rb {
            return Err(Error::ShapeMismatch {
                op: "concat_cols",
                lhs: vec![ra, ca],
                rhs: vec![rb, cb],
            });
        }
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let c = ca + cb;
        let mut data = vec![0.0; ra * c];
        for i in 0..ra {
            data[i * c..i * c + ca].copy_from_slice(&ta.data[i * ca..(i + 1) * ca]);
            data[i * c + ca..(i + 1) * c].copy_from_slice(&tb.data[i * cb..(i + 1) * cb]);
        }
        let out = Tensor::new(vec![ra, c], data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push("concat_cols", out, Op::ConcatCols(a, b), rg)
    }

    /// Row-wise layer norm with learnable gain/shift: gamma * (x-mu)/sqrt(var+eps) + beta.
    pub fn layer_norm_rows(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let (r, c) = self.want_2d("layer_norm_rows", x)?;
        let (gr, gc) = self.want_2d("layer_norm_rows", gamma)?;
        let (br, bc) = self.want_2d("layer_norm_rows", beta)?;
        if gr != 1 || gc != c || br != 1 || bc != c {
            return Err(Error::ShapeMismatch {
                op: "layer_norm_rows",
                lhs: vec![r, c],
                rhs: vec![gr.max(br), gc.max(bc)],
            });
        }
        if eps <= 0.0 || !eps.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "layer_norm_rows: eps must be positive and finite, got {eps}"
            )));
        }
        let tx = &self.nodes[x.0].value;
        let tg = &self.nodes[gamma.0].value;
        let tb = &self.nodes[beta.0].value;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data[i * c..(i + 1) * c];
            let mean: f64 = row.iter().sum::<f64>() / c as f64;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                data[i * c + j] = tg.data[j] * (row[j] - mean) * inv + tb.data[j];
            }
        }
        let out = Tensor::new(vec![r, c], data)?;
        let rg = self.needs(x) || self.needs(gamma) || self.needs(beta);
        self.push(
            "layer_norm_rows",
            out,
            Op::LayerNormRows { x, gamma, beta, eps },
            rg,
        )
    }

    /// Mean over rows of the negative log softmax probability of the target class.
    pub fn cross_entropy_rows(&mut self, logits: TensorId, targets: &[usize]) -> Result<TensorId> {
        let (r, c) = self.want_2d("cross_entropy_rows", logits)?;
        if targets.len() != r {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_rows",
                lhs: vec![r, c],
                rhs: vec![targets.len()],
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidParameter(format!(
                "cross_entropy_rows: target class {bad} out of range for {c} classes"
            )));
        }
        let tl = &self.nodes[logits.0].value;
        let mut total = 0.0;
        let mut probs = vec![0.0; c];
        for i in 0..r {
            let row = &tl.data[i * c..(i + 1) * c];
            softmax_into(row, &mut probs);
            total -= probs[targets[i]].ln();
        }
        let out = Tensor::new(vec![1], vec![total / r as f64])?;
        let rg = self.needs(logits);
        self.push(
            "cross_entropy_rows",
            out,
            Op::CrossEntropyRows {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    // ── Backward ──

    /// Reverse sweep from a scalar root; writes gradients into every node
    /// that requires them. Erroring on a non-scalar root keeps d(out)/d(in)
    /// well-defined without an implicit reduction.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        let root_numel = self.nodes[root.0].value.numel();
        if root_numel != 1 {
            return Err(Error::Contract(format!(
                "backward: root must be a scalar, got shape {:?}",
                self.nodes[root.0].value.shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, a, |_| g.clone());
                    self.accumulate(&mut grads, b, |_| g.clone());
                }
                Op::AddRow(x, row) => {
                    let c = self.nodes[row.0].value.cols();
                    let r = self.nodes[x.0].value.rows();
                    self.accumulate(&mut grads, x, |_| g.clone());
                    self.accumulate(&mut grads, row, |_| {
                        let mut rg = vec![0.0; c];
                        for i in 0..r {
                            for j in 0..c {
                                rg[j] += g[i * c + j];
                            }
                        }
                        rg
                    });
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[b.0].value.data)
                        .map(|(gi, bi)| gi * bi)
                        .collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(gi, ai)| gi * ai)
                        .collect();
                    self.accumulate(&mut grads, a, |_| da.clone());
                    self.accumulate(&mut grads, b, |_| db.clone());
                }
                Op::Div(a, b) => {
                    let bd = &self.nodes[b.0].value.data;
                    let zd = &self.nodes[idx].value.data;
                    let da: Vec<f64> = g.iter().zip(bd).map(|(gi, bi)| gi / bi).collect();
                    let db: Vec<f64> = g
                        .iter()
                        .zip(zd.iter().zip(bd))
                        .map(|(gi, (zi, bi))| -gi * zi / bi)
                        .collect();
                    self.accumulate(&mut grads, a, |_| da.clone());
                    self.accumulate(&mut grads, b, |_| db.clone());
                }
                Op::Scale(a, f) => {
                    self.accumulate(&mut grads, a, |_| g.iter().map(|gi| gi * f).collect());
                }
                Op::AddScalar(a) => {
                    self.accumulate(&mut grads, a, |_| g.clone());
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    let nn = self.nodes[b.0].value.cols();
                    // da = g * b^T, db = a^T * g
                    let bt = transpose_raw(&self.nodes[b.0].value.data, k, nn);
                    let da = matmul_raw(&g, &bt, m, nn, k);
                    let at = transpose_raw(&self.nodes[a.0].value.data, m, k);
                    let db = matmul_raw(&at, &g, k, m, nn);
                    self.accumulate(&mut grads, a, |_| da.clone());
                    self.accumulate(&mut grads, b, |_| db.clone());
                }
                Op::Transpose(a) => {
                    let (r, c) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                    self.accumulate(&mut grads, a, |_| transpose_raw(&g, r, c));
                }
                Op::Reshape(a) => {
                    self.accumulate(&mut grads, a, |_| g.clone());
                }
                Op::Gelu(a) => {
                    let da: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(gi, &xi)| gi * gelu_deriv(xi))
                        .collect();
                    self.accumulate(&mut grads, a, |_| da.clone());
                }
                Op::SoftmaxRows(a) => {
                    let (r, c) = (self.nodes[idx].value.rows(), self.nodes[idx].value.cols());
                    let s = &self.nodes[idx].value.data;
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let srow = &s[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let dot: f64 = srow.iter().zip(grow).map(|(si, gi)| si * gi).sum();
                        for j in 0..c {
                            da[i * c + j] = srow[j] * (grow[j] - dot);
                        }
                    }
                    self.accumulate(&mut grads, a, |_| da.clone());
                }
                Op::LogSumExpRows(a, beta) => {
                    // d lse / dx_j = softmax(beta * x)_j
                    let (r, c) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    let xd = &self.nodes[a.0].value.data;
                    let mut da = vec![0.0; r * c];
                    let mut w = vec![0.0; c];
                    for i in 0..r {
                        let row = &xd[i * c..(i + 1) * c];
                        let scaled: Vec<f64> = row.iter().map(|&x| beta * x).collect();
                        softmax_into(&scaled, &mut w);
                        for j in 0..c {
                            da[i * c + j] = g[i] * w[j];
                        }
                    }
                    self.accumulate(&mut grads, a, |_| da.clone());
                }
                Op::SumAll(a) => {
                    let n = self.nodes[a.0].value.numel();
                    self.accumulate(&mut grads, a, |_| vec![g[0]; n]);
                }
                Op::SliceCols { input, start, len } => {
                    let (r, c) = (
                        self.nodes[input.0].value.rows(),
                        self.nodes[input.0].value.cols(),
                    );
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        for j in 0..len {
                            da[i * c + start + j] = g[i * len + j];
                        }
                    }
                    self.accumulate(&mut grads, input, |_| da.clone());
                }
                Op::ConcatCols(a, b) => {
                    let (r, ca) = (self.nodes[a.0].value.rows(), self.nodes[a.0].value.cols());
                    let cb = self.nodes[b.0].value.cols();
                    let c = ca + cb;
                    let mut da = vec![0.0; r * ca];
                    let mut db = vec![0.0; r * cb];
                    for i in 0..r {
                        da[i * ca..(i + 1) * ca].copy_from_slice(&g[i * c..i * c + ca]);
                        db[i * cb..(i + 1) * cb].copy_from_slice(&g[i * c + ca..(i + 1) * c]);
                    }
                    self.accumulate(&mut grads, a, |_| da.clone());
                    self.accumulate(&mut grads, b, |_| db.clone());
                }
                Op::LayerNormRows { x, gamma, beta, eps } => {
                    let (r, c) = (self.nodes[x.0].value.rows(), self.nodes[x.0].value.cols());
                    let xd = self.nodes[x.0].value.data.clone();
                    let gd = &self.nodes[gamma.0].value.data;
                    let mut dx = vec![0.0; r * c];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for i in 0..r {
                        let row = &xd[i * c..(i + 1) * c];
                        let grow = &g[i * c..(i + 1) * c];
                        let mean: f64 = row.iter().sum::<f64>() / c as f64;
                        let var: f64 =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
                        let inv = 1.0 / (var + eps).sqrt();
                        // gg = g * gamma; dx = inv*(gg - mean(gg) - xhat*mean(gg*xhat))
                        let mut mean_gg = 0.0;
                        let mut mean_ggx = 0.0;
                        for j in 0..c {
                            let xhat = (row[j] - mean) * inv;
                            let gg = grow[j] * gd[j];
                            mean_gg += gg;
                            mean_ggx += gg * xhat;
                            dgamma[j] += grow[j] * xhat;
                            dbeta[j] += grow[j];
                        }
                        mean_gg /= c as f64;
                        mean_ggx /= c as f64;
                        for j in 0..c {
                            let xhat = (row[j] - mean) * inv;
                            let gg = grow[j] * gd[j];
                            dx[i * c + j] = inv * (gg - mean_gg - xhat * mean_ggx);
                        }
                    }
                    self.accumulate(&mut grads, x, |_| dx.clone());
                    self.accumulate(&mut grads, gamma, |_| dgamma.clone());
                    self.accumulate(&mut grads, beta, |_| dbeta.clone());
                }
                Op::CrossEntropyRows { logits, targets } => {
                    let (r, c) = (
                        self.nodes[logits.0].value.rows(),
                        self.nodes[logits.0].value.cols(),
                    );
                    let ld = &self.nodes[logits.0].value.data;
                    let mut dl = vec![0.0; r * c];
                    let mut probs = vec![0.0; c];
                    let scale = g[0] / r as f64;
                    for i in 0..r {
                        softmax_into(&ld[i * c..(i + 1) * c], &mut probs);
                        for j in 0..c {
                            dl[i * c + j] = scale * probs[j];
                        }
                        dl[i * c + targets[i]] -= scale;
                    }
                    self.accumulate(&mut grads, logits, |_| dl.clone());
                }
            }
        }

        for idx in 0..n {
            if self.nodes[idx].requires_grad {
                if let Some(g) = grads[idx].take() {
                    self.nodes[idx].value.grad = Some(g);
                }
            }
        }
        Ok(())
    }

    fn accumulate<F>(&self, grads: &mut [Option<Vec<f64>>], target: TensorId, make: F)
    where
        F: FnOnce(&Tensor) -> Vec<f64>,
    {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        let contribution = make(&self.nodes[target.0].value);
        match &mut grads[target.0] {
            Some(existing) => {
                for (e, c) in existing.iter_mut().zip(&contribution) {
                    *e += c;
                }
            }
            slot => *slot = Some(contribution),
        }
    }
}
