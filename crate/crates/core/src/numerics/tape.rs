//! Reverse-mode autodiff over a linear tape of tensor ops.
//!
//! The op set is exactly what the transformer needs: dense/batched matmul,
//! row softmax and layer norm, GELU/SiLU, rotary rotation, embedding lookup,
//! concat/slice/permute plumbing, and the MSE loss. Non-finite values
//! propagate untouched; nothing clamps or silently repairs NaN.
//!
//! Replaying an identical graph yields bitwise-identical values and
//! gradients: every kernel iterates in a fixed order and there is no
//! threading.

use std::rc::Rc;

use thiserror::Error;

use super::tensor::{mm_nn, mm_nt, mm_tn, Tensor};

/// Handle to a node on a [`Tape`]. Plain index, cheap to copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("gradient target must be scalar, got shape {0:?}")]
    LossNotScalar(Vec<usize>),
    #[error("backward called twice without recording new forward ops")]
    BackwardTwice,
}

/// Variance floor for row layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

// Tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
const GELU_A: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_B: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_A * (x + GELU_B * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    let t = (GELU_A * (x + GELU_B * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_A * (1.0 + 3.0 * GELU_B * x * x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// x[..., d] + row[d]
    AddRow(Var, Var),
    /// x[..., d] * row[d]
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Matmul(Var, Var),
    Bmm(Var, Var),
    /// a[b,m,k] * b[b,n,k]^T -> [b,m,n]; the attention-logit shape.
    BmmTb(Var, Var),
    Permute102(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Silu(Var),
    EmbedRows(Var, Vec<usize>),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    /// Pairwise rotation of the last axis; angles[i * d/2 + p] applies to
    /// token i's pair (2p, 2p+1). Linear, so backward rotates by -angle.
    Rope(Var, Rc<Vec<f64>>),
    MeanAll(Var),
    SumAll(Var),
    Mse(Var, Rc<Tensor>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Growing record of one forward computation.
pub struct Tape {
    nodes: Vec<Node>,
    backward_at: Option<usize>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), backward_at: None }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "add", |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "sub", |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip(a, b, "mul", |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    fn zip(&self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "{what}: shape mismatch");
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape().to_vec(), data)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.rowwise(a, row, "add_row", |x, r| x + r);
        self.push(out, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.rowwise(a, row, "mul_row", |x, r| x * r);
        self.push(out, Op::MulRow(a, row))
    }

    fn rowwise(&self, a: Var, row: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tr) = (self.value(a), self.value(row));
        let d = ta.last_dim();
        assert_eq!(tr.numel(), d, "{what}: row has {} values, last dim is {d}", tr.numel());
        let mut data = Vec::with_capacity(ta.numel());
        for chunk in ta.data().chunks_exact(d) {
            for (x, r) in chunk.iter().zip(tr.data()) {
                data.push(f(*x, *r));
            }
        }
        Tensor::from_vec(ta.shape().to_vec(), data)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.shape().to_vec(), t.data().iter().map(|&x| x * c).collect());
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.shape().to_vec(), t.data().iter().map(|&x| x + c).collect());
        self.push(out, Op::AddScalar(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rank(), 2, "matmul lhs must be rank 2");
        assert_eq!(tb.rank(), 2, "matmul rhs must be rank 2");
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let (k2, n) = (tb.shape()[0], tb.shape()[1]);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = Tensor::zeros(vec![m, n]);
        mm_nn(ta.data(), tb.data(), out.data_mut(), m, k, n);
        self.push(out, Op::Matmul(a, b))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rank(), 3, "bmm lhs must be rank 3");
        assert_eq!(tb.rank(), 3, "bmm rhs must be rank 3");
        let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        assert_eq!(tb.shape()[0], bs, "bmm batch mismatch");
        assert_eq!(tb.shape()[1], k, "bmm inner dims");
        let n = tb.shape()[2];
        let mut out = Tensor::zeros(vec![bs, m, n]);
        for i in 0..bs {
            mm_nn(
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * k * n..(i + 1) * k * n],
                &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.push(out, Op::Bmm(a, b))
    }

    pub fn bmm_tb(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rank(), 3, "bmm_tb lhs must be rank 3");
        assert_eq!(tb.rank(), 3, "bmm_tb rhs must be rank 3");
        let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        assert_eq!(tb.shape()[0], bs, "bmm_tb batch mismatch");
        assert_eq!(tb.shape()[2], k, "bmm_tb inner dims");
        let n = tb.shape()[1];
        let mut out = Tensor::zeros(vec![bs, m, n]);
        for i in 0..bs {
            mm_nt(
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * n * k..(i + 1) * n * k],
                &mut out.data_mut()[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        self.push(out, Op::BmmTb(a, b))
    }

    pub fn permute102(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert_eq!(t.rank(), 3, "permute102 needs rank 3");
        let (d0, d1, d2) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        let out = permute102_data(t.data(), d0, d1, d2);
        self.push(Tensor::from_vec(vec![d1, d0, d2], out), Op::Permute102(a))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let out = self.value(a).clone().reshaped(shape);
        self.push(out, Op::Reshape(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let d = t.last_dim();
        assert!(d > 0, "softmax over empty rows");
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks_exact(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let start = data.len();
            for &x in row {
                let e = (x - max).exp();
                sum += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= sum;
            }
        }
        let out = Tensor::from_vec(t.shape().to_vec(), data);
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let d = t.last_dim();
        assert!(d > 0, "layer_norm over empty rows");
        let mut data = Vec::with_capacity(t.numel());
        let mut inv_std = Vec::with_capacity(t.leading());
        for row in t.data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(r);
            for &x in row {
                data.push((x - mean) * r);
            }
        }
        let out = Tensor::from_vec(t.shape().to_vec(), data);
        self.push(out, Op::LayerNormRows { x: a, inv_std })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.shape().to_vec(), t.data().iter().map(|&x| gelu(x)).collect());
        self.push(out, Op::Gelu(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out = Tensor::from_vec(t.shape().to_vec(), t.data().iter().map(|&x| silu(x)).collect());
        self.push(out, Op::Silu(a))
    }

    /// Gathers `indices` rows of a [v, d] table.
    pub fn embed_rows(&mut self, table: Var, indices: Vec<usize>) -> Var {
        let t = self.value(table);
        assert_eq!(t.rank(), 2, "embedding table must be rank 2");
        let (v, d) = (t.shape()[0], t.shape()[1]);
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in &indices {
            assert!(i < v, "embedding index {i} out of range {v}");
            data.extend_from_slice(&t.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::from_vec(vec![indices.len(), d], data);
        self.push(out, Op::EmbedRows(table, indices))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rank(), 2, "concat_rows lhs must be rank 2");
        assert_eq!(tb.rank(), 2, "concat_rows rhs must be rank 2");
        assert_eq!(ta.shape()[1], tb.shape()[1], "concat_rows width mismatch");
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let out = Tensor::from_vec(vec![ta.shape()[0] + tb.shape()[0], ta.shape()[1]], data);
        self.push(out, Op::ConcatRows(a, b))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        assert_eq!(t.rank(), 2, "slice_rows needs rank 2");
        let (rows, d) = (t.shape()[0], t.shape()[1]);
        assert!(start + len <= rows, "slice_rows {start}+{len} out of {rows}");
        let data = t.data()[start * d..(start + len) * d].to_vec();
        let out = Tensor::from_vec(vec![len, d], data);
        self.push(out, Op::SliceRows(a, start))
    }

    /// Applies rotary rotation across the last axis of a [b, n, d] tensor.
    /// `angles` holds n * d/2 entries.
    pub fn rope(&mut self, a: Var, angles: Rc<Vec<f64>>) -> Var {
        let t = self.value(a);
        assert_eq!(t.rank(), 3, "rope needs rank 3");
        let (bs, n, d) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        assert_eq!(d % 2, 0, "rope head dim must be even");
        assert_eq!(angles.len(), n * d / 2, "rope angle table size");
        let out = rope_data(t.data(), &angles, bs, n, d, 1.0);
        self.push(Tensor::from_vec(t.shape().to_vec(), out), Op::Rope(a, angles))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        assert!(t.numel() > 0, "mean of empty tensor");
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::MeanAll(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    /// Mean squared error against a constant target of identical shape.
    pub fn mse(&mut self, a: Var, target: Rc<Tensor>) -> Var {
        let t = self.value(a);
        assert_eq!(t.shape(), target.shape(), "mse target shape mismatch");
        let n = t.numel() as f64;
        let s: f64 = t.data().iter().zip(target.data()).map(|(&p, &g)| (p - g) * (p - g)).sum();
        self.push(Tensor::scalar(s / n), Op::Mse(a, target))
    }

    /// Reverse pass from a scalar loss; returns gradients for `wrt` in order.
    /// Parameters that do not influence the loss get zero gradients.
    pub fn gradient(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>, NumericsError> {
        if !self.value(loss).is_scalar() {
            return Err(NumericsError::LossNotScalar(self.value(loss).shape().to_vec()));
        }
        if self.backward_at == Some(self.nodes.len()) {
            return Err(NumericsError::BackwardTwice);
        }
        self.backward_at = Some(self.nodes.len());

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                // leaves keep their gradient so callers can read it back;
                // interior grads are dropped once propagated
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }

        Ok(wrt
            .iter()
            .map(|v| {
                grads[v.0]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(self.value(*v).shape().to_vec()))
            })
            .collect())
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.data(), None);
                self.accum(grads, *b, g.data(), None);
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.data(), None);
                self.accum_scaled(grads, *b, g.data(), -1.0);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accum_prod(grads, *a, g.data(), vb);
                self.accum_prod(grads, *b, g.data(), va);
            }
            Op::AddRow(a, row) => {
                self.accum(grads, *a, g.data(), None);
                let d = self.value(*row).numel();
                let mut rg = vec![0.0; d];
                for chunk in g.data().chunks_exact(d) {
                    for (acc, &x) in rg.iter_mut().zip(chunk) {
                        *acc += x;
                    }
                }
                self.accum(grads, *row, &rg, None);
            }
            Op::MulRow(a, row) => {
                let d = self.value(*row).numel();
                let rv = self.value(*row).data();
                let av = self.value(*a).data();
                let mut ag = Vec::with_capacity(g.numel());
                for chunk in g.data().chunks_exact(d) {
                    for (x, r) in chunk.iter().zip(rv) {
                        ag.push(x * r);
                    }
                }
                self.accum(grads, *a, &ag, None);
                let mut rg = vec![0.0; d];
                for (gc, ac) in g.data().chunks_exact(d).zip(av.chunks_exact(d)) {
                    for ((acc, &gx), &ax) in rg.iter_mut().zip(gc).zip(ac) {
                        *acc += gx * ax;
                    }
                }
                self.accum(grads, *row, &rg, None);
            }
            Op::Scale(a, c) => self.accum_scaled(grads, *a, g.data(), *c),
            Op::AddScalar(a) => self.accum(grads, *a, g.data(), None),
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.shape()[0], ta.shape()[1]);
                let n = tb.shape()[1];
                let mut da = vec![0.0; m * k];
                mm_nt(g.data(), tb.data(), &mut da, m, n, k);
                self.accum(grads, *a, &da, None);
                let mut db = vec![0.0; k * n];
                mm_tn(ta.data(), g.data(), &mut db, m, k, n);
                self.accum(grads, *b, &db, None);
            }
            Op::Bmm(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[2];
                let mut da = vec![0.0; bs * m * k];
                let mut db = vec![0.0; bs * k * n];
                for i in 0..bs {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    mm_nt(gi, &tb.data()[i * k * n..(i + 1) * k * n], &mut da[i * m * k..(i + 1) * m * k], m, n, k);
                    mm_tn(&ta.data()[i * m * k..(i + 1) * m * k], gi, &mut db[i * k * n..(i + 1) * k * n], m, k, n);
                }
                self.accum(grads, *a, &da, None);
                self.accum(grads, *b, &db, None);
            }
            Op::BmmTb(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
                let n = tb.shape()[1];
                let mut da = vec![0.0; bs * m * k];
                let mut db = vec![0.0; bs * n * k];
                for i in 0..bs {
                    let gi = &g.data()[i * m * n..(i + 1) * m * n];
                    // d a = g * b ; d b = g^T * a
                    mm_nn(gi, &tb.data()[i * n * k..(i + 1) * n * k], &mut da[i * m * k..(i + 1) * m * k], m, n, k);
                    mm_tn(gi, &ta.data()[i * m * k..(i + 1) * m * k], &mut db[i * n * k..(i + 1) * n * k], m, n, k);
                }
                self.accum(grads, *a, &da, None);
                self.accum(grads, *b, &db, None);
            }
            Op::Permute102(a) => {
                let s = g.shape();
                let back = permute102_data(g.data(), s[0], s[1], s[2]);
                self.accum(grads, *a, &back, None);
            }
            Op::Reshape(a) => self.accum(grads, *a, g.data(), None),
            Op::SoftmaxRows(a) => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut dx = Vec::with_capacity(g.numel());
                for (gr, yr) in g.data().chunks_exact(d).zip(y.chunks_exact(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(&gx, &yx)| gx * yx).sum();
                    for (&gx, &yx) in gr.iter().zip(yr) {
                        dx.push(yx * (gx - dot));
                    }
                }
                self.accum(grads, *a, &dx, None);
            }
            Op::LayerNormRows { x, inv_std } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut dx = Vec::with_capacity(g.numel());
                for ((gr, yr), &r) in g.data().chunks_exact(d).zip(y.chunks_exact(d)).zip(inv_std) {
                    let gmean: f64 = gr.iter().sum::<f64>() / d as f64;
                    let gymean: f64 = gr.iter().zip(yr).map(|(&gx, &yx)| gx * yx).sum::<f64>() / d as f64;
                    for (&gx, &yx) in gr.iter().zip(yr) {
                        dx.push(r * (gx - gmean - yx * gymean));
                    }
                }
                self.accum(grads, *x, &dx, None);
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).data();
                let dx: Vec<f64> = g.data().iter().zip(xv).map(|(&gx, &x)| gx * gelu_prime(x)).collect();
                self.accum(grads, *a, &dx, None);
            }
            Op::Silu(a) => {
                let xv = self.value(*a).data();
                let dx: Vec<f64> = g.data().iter().zip(xv).map(|(&gx, &x)| gx * silu_prime(x)).collect();
                self.accum(grads, *a, &dx, None);
            }
            Op::EmbedRows(table, indices) => {
                let t = self.value(*table);
                let d = t.shape()[1];
                let slot = self.grad_slot(grads, *table);
                for (pos, &row) in indices.iter().enumerate() {
                    let gi = &g.data()[pos * d..(pos + 1) * d];
                    let acc = &mut slot.data_mut()[row * d..(row + 1) * d];
                    for (a, &x) in acc.iter_mut().zip(gi) {
                        *a += x;
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let na = self.value(*a).numel();
                self.accum(grads, *a, &g.data()[..na], None);
                self.accum(grads, *b, &g.data()[na..], None);
            }
            Op::SliceRows(a, start) => {
                let d = node.value.last_dim();
                let slot = self.grad_slot(grads, *a);
                let dst = &mut slot.data_mut()[start * d..start * d + g.numel()];
                for (acc, &x) in dst.iter_mut().zip(g.data()) {
                    *acc += x;
                }
            }
            Op::Rope(a, angles) => {
                let s = g.shape();
                let back = rope_data(g.data(), angles, s[0], s[1], s[2], -1.0);
                self.accum(grads, *a, &back, None);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).numel();
                let gx = g.data()[0] / n as f64;
                let slot = self.grad_slot(grads, *a);
                for acc in slot.data_mut() {
                    *acc += gx;
                }
            }
            Op::SumAll(a) => {
                let gx = g.data()[0];
                let slot = self.grad_slot(grads, *a);
                for acc in slot.data_mut() {
                    *acc += gx;
                }
            }
            Op::Mse(a, target) => {
                let av = self.value(*a);
                let n = av.numel() as f64;
                let gx = g.data()[0];
                let dx: Vec<f64> =
                    av.data().iter().zip(target.data()).map(|(&p, &t)| gx * 2.0 * (p - t) / n).collect();
                self.accum(grads, *a, &dx, None);
            }
        }
    }

    fn grad_slot<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> &'g mut Tensor {
        grads[v.0].get_or_insert_with(|| Tensor::zeros(self.value(v).shape().to_vec()))
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, add: &[f64], _tag: Option<()>) {
        let slot = self.grad_slot(grads, v);
        for (acc, &x) in slot.data_mut().iter_mut().zip(add) {
            *acc += x;
        }
    }

    fn accum_scaled(&self, grads: &mut [Option<Tensor>], v: Var, add: &[f64], c: f64) {
        let slot = self.grad_slot(grads, v);
        for (acc, &x) in slot.data_mut().iter_mut().zip(add) {
            *acc += c * x;
        }
    }

    fn accum_prod(&self, grads: &mut [Option<Tensor>], v: Var, g: &[f64], other: &[f64]) {
        let slot = self.grad_slot(grads, v);
        for ((acc, &gx), &ox) in slot.data_mut().iter_mut().zip(g).zip(other) {
            *acc += gx * ox;
        }
    }
}

fn permute102_data(src: &[f64], d0: usize, d1: usize, d2: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..d0 {
        for j in 0..d1 {
            let from = (i * d1 + j) * d2;
            let to = (j * d0 + i) * d2;
            out[to..to + d2].copy_from_slice(&src[from..from + d2]);
        }
    }
    out
}

fn rope_data(src: &[f64], angles: &[f64], bs: usize, n: usize, d: usize, sign: f64) -> Vec<f64> {
    let half = d / 2;
    let mut out = Vec::with_capacity(src.len());
    for b in 0..bs {
        for i in 0..n {
            let row = &src[(b * n + i) * d..(b * n + i + 1) * d];
            for p in 0..half {
                let theta = sign * angles[i * half + p];
                let (s, c) = theta.sin_cos();
                let (x0, x1) = (row[2 * p], row[2 * p + 1]);
                out.push(x0 * c - x1 * s);
                out.push(x0 * s + x1 * c);
            }
        }
    }
    out
}
