//! Reverse-mode differentiation over a linear tape of eagerly evaluated ops.
//!
//! Values are computed on recording; `backward` walks the tape in reverse
//! and accumulates adjoints in the same fixed order every run.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    /// Named trainable leaf.
    Param(String),
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// (n,d) + (1,d), row broadcast.
    AddBias(usize, usize),
    MatMul(usize, usize),
    Scale(usize, f64),
    Silu(usize),
    /// Row gather by fixed indices.
    GatherRows(usize, Vec<usize>),
    /// Scatter-add rows into `out_rows` target rows; accumulation runs in
    /// ascending source-row order.
    ScatterAddRows(usize, Vec<usize>),
    /// Sum across columns, (n,d) -> (n,1).
    RowSum(usize),
    /// (n,d) * (n,1) column-scalar broadcast.
    ScaleRows(usize, usize),
    SumAll(usize),
    /// Horizontal concatenation.
    ConcatCols(Vec<usize>),
}

struct Node {
    op: Op,
    value: Tensor,
}

/// One forward computation; create a fresh tape per evaluation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value)
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        self.push(Op::Param(name.to_string()), value)
    }

    fn same_shape(&self, ctx: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let sa = self.nodes[a.0].value.shape();
        let sb = self.nodes[b.0].value.shape();
        if sa != sb {
            return Err(Error::shape(ctx, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(sa)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("add", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(Op::Add(a.0, b.0), Tensor { rows: r, cols: c, data }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("sub", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x - y)
            .collect();
        Ok(self.push(Op::Sub(a.0, b.0), Tensor { rows: r, cols: c, data }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.same_shape("mul", a, b)?;
        let data = self.nodes[a.0]
            .value
            .data
            .iter()
            .zip(&self.nodes[b.0].value.data)
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Op::Mul(a.0, b.0), Tensor { rows: r, cols: c, data }))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, c) = self.nodes[a.0].value.shape();
        let (br, bc) = self.nodes[bias.0].value.shape();
        if br != 1 || bc != c {
            return Err(Error::shape("add_bias", format!("(1, {c})"), format!("({br}, {bc})")));
        }
        let mut out = self.nodes[a.0].value.clone();
        for row in 0..r {
            for col in 0..c {
                out.data[row * c + col] += self.nodes[bias.0].value.data[col];
            }
        }
        Ok(self.push(Op::AddBias(a.0, bias.0), out))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.nodes[a.0].value.shape();
        let (br, bc) = self.nodes[b.0].value.shape();
        if ac != br {
            return Err(Error::shape("matmul", format!("inner dim {ac}"), format!("{br}")));
        }
        let mut out = Tensor::zeros(ar, bc);
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        for i in 0..ar {
            for k in 0..ac {
                let aik = av.data[i * ac + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv.data[k * bc..(k + 1) * bc];
                let orow = &mut out.data[i * bc..(i + 1) * bc];
                for j in 0..bc {
                    orow[j] += aik * brow[j];
                }
            }
        }
        Ok(self.push(Op::MatMul(a.0, b.0), out))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        for v in &mut out.data {
            *v *= factor;
        }
        self.push(Op::Scale(a.0, factor), out)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let mut out = self.nodes[a.0].value.clone();
        for v in &mut out.data {
            *v = *v / (1.0 + (-*v).exp());
        }
        self.push(Op::Silu(a.0), out)
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let (r, c) = self.nodes[a.0].value.shape();
        let mut out = Tensor::zeros(indices.len(), c);
        for (dst, &src) in indices.iter().enumerate() {
            if src >= r {
                return Err(Error::invalid(format!("gather index {src} out of range {r}")));
            }
            out.data[dst * c..(dst + 1) * c]
                .copy_from_slice(&self.nodes[a.0].value.data[src * c..(src + 1) * c]);
        }
        Ok(self.push(Op::GatherRows(a.0, indices.to_vec()), out))
    }

    pub fn scatter_add_rows(&mut self, a: Var, indices: &[usize], out_rows: usize) -> Result<Var> {
        let (r, c) = self.nodes[a.0].value.shape();
        if indices.len() != r {
            return Err(Error::shape("scatter_add_rows", r, indices.len()));
        }
        let mut out = Tensor::zeros(out_rows, c);
        for (src, &dst) in indices.iter().enumerate() {
            if dst >= out_rows {
                return Err(Error::invalid(format!("scatter index {dst} out of range {out_rows}")));
            }
            for col in 0..c {
                out.data[dst * c + col] += self.nodes[a.0].value.data[src * c + col];
            }
        }
        Ok(self.push(Op::ScatterAddRows(a.0, indices.to_vec()), out))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, c) = self.nodes[a.0].value.shape();
        let mut out = Tensor::zeros(r, 1);
        for row in 0..r {
            out.data[row] = self.nodes[a.0].value.data[row * c..(row + 1) * c].iter().sum();
        }
        self.push(Op::RowSum(a.0), out)
    }

    pub fn scale_rows(&mut self, a: Var, scales: Var) -> Result<Var> {
        let (r, c) = self.nodes[a.0].value.shape();
        let (sr, sc) = self.nodes[scales.0].value.shape();
        if sr != r || sc != 1 {
            return Err(Error::shape("scale_rows", format!("({r}, 1)"), format!("({sr}, {sc})")));
        }
        let mut out = Tensor::zeros(r, c);
        for row in 0..r {
            let s = self.nodes[scales.0].value.data[row];
            for col in 0..c {
                out.data[row * c + col] = self.nodes[a.0].value.data[row * c + col] * s;
            }
        }
        Ok(self.push(Op::ScaleRows(a.0, scales.0), out))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total: f64 = self.nodes[a.0].value.data.iter().sum();
        self.push(Op::SumAll(a.0), Tensor::scalar(total))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::invalid("concat_cols needs at least one input"));
        }
        let rows = self.nodes[parts[0].0].value.rows;
        let mut cols = 0;
        for p in parts {
            if self.nodes[p.0].value.rows != rows {
                return Err(Error::shape(
                    "concat_cols",
                    rows,
                    self.nodes[p.0].value.rows,
                ));
            }
            cols += self.nodes[p.0].value.cols;
        }
        let mut out = Tensor::zeros(rows, cols);
        for row in 0..rows {
            let mut offset = 0;
            for p in parts {
                let pc = self.nodes[p.0].value.cols;
                out.data[row * cols + offset..row * cols + offset + pc]
                    .copy_from_slice(&self.nodes[p.0].value.data[row * pc..(row + 1) * pc]);
                offset += pc;
            }
        }
        Ok(self.push(Op::ConcatCols(parts.iter().map(|p| p.0).collect()), out))
    }

    /// Backpropagates from a scalar `loss` node and returns the gradient of
    /// every named parameter leaf.
    pub fn backward(&self, loss: Var) -> Result<BTreeMap<String, Tensor>> {
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "backward root must be scalar, got {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.rows, n.value.cols))
            .collect();
        grads[loss.0].data[0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            if grads[idx].data.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = grads[idx].clone();
            match &self.nodes[idx].op {
                Op::Param(_) | Op::Constant => {}
                Op::Add(a, b) => {
                    for (dst, src) in grads[*a].data.iter_mut().zip(&g.data) {
                        *dst += src;
                    }
                    for (dst, src) in grads[*b].data.iter_mut().zip(&g.data) {
                        *dst += src;
                    }
                }
                Op::Sub(a, b) => {
                    for (dst, src) in grads[*a].data.iter_mut().zip(&g.data) {
                        *dst += src;
                    }
                    for (dst, src) in grads[*b].data.iter_mut().zip(&g.data) {
                        *dst -= src;
                    }
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.data.len() {
                        grads[a].data[i] += g.data[i] * self.nodes[b].value.data[i];
                    }
                    for i in 0..g.data.len() {
                        grads[b].data[i] += g.data[i] * self.nodes[a].value.data[i];
                    }
                }
                Op::AddBias(a, bias) => {
                    let c = g.cols;
                    for (dst, src) in grads[*a].data.iter_mut().zip(&g.data) {
                        *dst += src;
                    }
                    for row in 0..g.rows {
                        for col in 0..c {
                            grads[*bias].data[col] += g.data[row * c + col];
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    let (ar, ac) = self.nodes[a].value.shape();
                    let bc = self.nodes[b].value.cols;
                    // dA = g · Bᵀ
                    for i in 0..ar {
                        for k in 0..ac {
                            let mut acc = 0.0;
                            for j in 0..bc {
                                acc += g.data[i * bc + j] * self.nodes[b].value.data[k * bc + j];
                            }
                            grads[a].data[i * ac + k] += acc;
                        }
                    }
                    // dB = Aᵀ · g
                    for k in 0..ac {
                        for j in 0..bc {
                            let mut acc = 0.0;
                            for i in 0..ar {
                                acc += self.nodes[a].value.data[i * ac + k] * g.data[i * bc + j];
                            }
                            grads[b].data[k * bc + j] += acc;
                        }
                    }
                }
                Op::Scale(a, f) => {
                    let f = *f;
                    for (dst, src) in grads[*a].data.iter_mut().zip(&g.data) {
                        *dst += f * src;
                    }
                }
                Op::Silu(a) => {
                    let a = *a;
                    for i in 0..g.data.len() {
                        let x = self.nodes[a].value.data[i];
                        let s = 1.0 / (1.0 + (-x).exp());
                        grads[a].data[i] += g.data[i] * (s * (1.0 + x * (1.0 - s)));
                    }
                }
                Op::GatherRows(a, indices) => {
                    let c = g.cols;
                    for (dst_row, &src_row) in indices.iter().enumerate() {
                        for col in 0..c {
                            grads[*a].data[src_row * c + col] += g.data[dst_row * c + col];
                        }
                    }
                }
                Op::ScatterAddRows(a, indices) => {
                    let c = g.cols;
                    for (src_row, &dst_row) in indices.iter().enumerate() {
                        for col in 0..c {
                            grads[*a].data[src_row * c + col] += g.data[dst_row * c + col];
                        }
                    }
                }
                Op::RowSum(a) => {
                    let c = self.nodes[*a].value.cols;
                    for row in 0..g.rows {
                        for col in 0..c {
                            grads[*a].data[row * c + col] += g.data[row];
                        }
                    }
                }
                Op::ScaleRows(a, s) => {
                    let (a, s) = (*a, *s);
                    let c = g.cols;
                    for row in 0..g.rows {
                        let sv = self.nodes[s].value.data[row];
                        let mut acc = 0.0;
                        for col in 0..c {
                            grads[a].data[row * c + col] += g.data[row * c + col] * sv;
                            acc += g.data[row * c + col] * self.nodes[a].value.data[row * c + col];
                        }
                        grads[s].data[row] += acc;
                    }
                }
                Op::SumAll(a) => {
                    let gv = g.data[0];
                    for dst in grads[*a].data.iter_mut() {
                        *dst += gv;
                    }
                }
                Op::ConcatCols(parts) => {
                    let cols = g.cols;
                    for row in 0..g.rows {
                        let mut offset = 0;
                        for &p in parts {
                            let pc = self.nodes[p].value.cols;
                            for col in 0..pc {
                                grads[p].data[row * pc + col] += g.data[row * cols + offset + col];
                            }
                            offset += pc;
                        }
                    }
                }
            }
        }

        let mut out = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                let entry = out.entry(name.clone()).or_insert_with(|| {
                    Tensor::zeros(node.value.rows, node.value.cols)
                });
                for (dst, src) in entry.data.iter_mut().zip(&grads[idx].data) {
                    *dst += src;
                }
            }
        }
        Ok(out)
    }
}
