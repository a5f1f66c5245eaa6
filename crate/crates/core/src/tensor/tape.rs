//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in creation order, which is already a
//! topological order. [`Tape::backward`] walks the records once in reverse and
//! accumulates gradients into every node that needs one.
//!
//! ```
//! use plan2vec_core::tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap());
//! let n = tape.lp_norm_rows(x, 2.0).unwrap();
//! let loss = tape.sum(n);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[0.6, 0.8]);
//! ```

use super::{gemm, gemm_strided, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Floor on `|v|` for fractional ℓp norms, keeping `|v|^(p-1)` finite.
const LP_FLOOR: f32 = 1e-12;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Scale(Var, f32),
    Relu(Var),
    Softplus(Var),
    ConcatCols(Vec<Var>),
    LpNormRows(Var, f32),
    SmoothL1 {
        pred: Var,
        target: Vec<f32>,
        beta: f32,
        hinge: Vec<bool>,
    },
    LogSoftmax(Var),
    NceLoss(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Takes the gradient out, or a zero tensor of `like`'s shape if `var`
    /// did not influence the loss.
    pub fn take_or_zero(&mut self, var: Var, like: &Tensor) -> Tensor {
        self.grads
            .get_mut(var.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn smooth_l1(r: f32, beta: f32) -> f32 {
    if r.abs() < beta {
        0.5 * r * r / beta
    } else {
        r.abs() - 0.5 * beta
    }
}

fn smooth_l1_grad(r: f32, beta: f32) -> f32 {
    if r.abs() < beta {
        r / beta
    } else {
        r.signum()
    }
}

/// Smooth-L1 (Huber with β) of a scalar residual.
pub fn smooth_l1_scalar(residual: f32, beta: f32) -> f32 {
    smooth_l1(residual, beta)
}

fn lp_norm_row(row: &[f32], p: f32) -> f32 {
    if p == 1.0 {
        row.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        row.iter().map(|v| v * v).sum::<f32>().sqrt()
    } else {
        let s: f32 = row
            .iter()
            .filter(|v| **v != 0.0)
            .map(|v| (p * v.abs().max(LP_FLOOR).ln()).exp())
            .sum();
        if s == 0.0 {
            0.0
        } else {
            s.powf(1.0 / p)
        }
    }
}

/// ℓp norm of a slice, using the same arithmetic as the tape op.
pub fn lp_norm(v: &[f32], p: f32) -> f32 {
    lp_norm_row(v, p)
}

fn log_softmax_row(row: &[f32], out: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f32>().ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = v - lse;
    }
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        if k != k2 {
            return Err(TensorError::Mismatch {
                op: "matmul",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), needs))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::Mismatch {
                op,
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    /// Adds a bias row `b: [1, n]` (or `[n]`) to every row of `a: [m, n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(a).dims2();
        let (br, bn) = self.value(b).dims2();
        if br != 1 || bn != n {
            return Err(TensorError::Mismatch {
                op: "add_row",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let bias = self.value(b).data();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_exact_mut(n) {
            for (x, bb) in row.iter_mut().zip(bias) {
                *x += bb;
            }
        }
        let needs = self.needs(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let needs = self.needs(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let v = self.value(a);
        let value = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|x| x * c).collect(),
        };
        let needs = self.needs(&[a]);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|x| x.max(0.0)).collect(),
        };
        let needs = self.needs(&[a]);
        self.push(value, Op::Relu(a), needs)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = Tensor {
            shape: v.shape().to_vec(),
            data: v.data().iter().map(|x| softplus(*x)).collect(),
        };
        let needs = self.needs(&[a]);
        self.push(value, Op::Softplus(a), needs)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let Some(first) = parts.first() else {
            return Err(TensorError::InvalidParameter {
                op: "concat_cols",
                reason: "no inputs".into(),
            });
        };
        let (m, _) = self.value(*first).dims2();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = self.value(*p).dims2();
            if r != m {
                return Err(TensorError::Mismatch {
                    op: "concat_cols",
                    lhs: self.value(*first).shape().to_vec(),
                    rhs: self.value(*p).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        let needs = self.needs(parts);
        Ok(self.push(Tensor::matrix(m, total, data)?, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Row-wise ℓp norm: `[m, n] -> [m, 1]`. Requires `p >= 1`.
    pub fn lp_norm_rows(&mut self, a: Var, p: f32) -> Result<Var, TensorError> {
        if !(p >= 1.0 && p.is_finite()) {
            return Err(TensorError::InvalidParameter {
                op: "lp_norm_rows",
                reason: format!("p must be finite and >= 1, got {p}"),
            });
        }
        let (m, n) = self.value(a).dims2();
        let data: Vec<f32> = (0..m)
            .map(|r| lp_norm_row(&self.value(a).data()[r * n..(r + 1) * n], p))
            .collect();
        let needs = self.needs(&[a]);
        Ok(self.push(Tensor::matrix(m, 1, data)?, Op::LpNormRows(a, p), needs))
    }

    /// Mean smooth-L1 loss between `pred` and `target` (same element count).
    pub fn smooth_l1(&mut self, pred: Var, target: &[f32], beta: f32) -> Result<Var, TensorError> {
        let hinge = vec![false; target.len()];
        self.smooth_l1_masked(pred, target, beta, &hinge)
    }

    /// Smooth-L1 where elements flagged in `hinge` only penalize
    /// `pred < target` (one-sided margin).
    pub fn smooth_l1_masked(
        &mut self,
        pred: Var,
        target: &[f32],
        beta: f32,
        hinge: &[bool],
    ) -> Result<Var, TensorError> {
        let pv = self.value(pred);
        if pv.len() != target.len() || hinge.len() != target.len() {
            return Err(TensorError::Mismatch {
                op: "smooth_l1",
                lhs: pv.shape().to_vec(),
                rhs: vec![target.len()],
            });
        }
        if pv.is_empty() {
            return Err(TensorError::Unexpected {
                op: "smooth_l1",
                expected: "a non-empty prediction",
                got: pv.shape().to_vec(),
            });
        }
        let total: f32 = pv
            .data()
            .iter()
            .zip(target)
            .zip(hinge)
            .map(|((p, t), h)| {
                let r = p - t;
                if *h && r > 0.0 {
                    0.0
                } else {
                    smooth_l1(r, beta)
                }
            })
            .sum();
        let value = Tensor::scalar(total / target.len() as f32);
        let needs = self.needs(&[pred]);
        Ok(self.push(
            value,
            Op::SmoothL1 {
                pred,
                target: target.to_vec(),
                beta,
                hinge: hinge.to_vec(),
            },
            needs,
        ))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).dims2();
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            log_softmax_row(&self.value(a).data()[r * n..(r + 1) * n], &mut data[r * n..(r + 1) * n]);
        }
        let value = Tensor { shape: vec![m, n], data };
        let needs = self.needs(&[a]);
        self.push(value, Op::LogSoftmax(a), needs)
    }

    /// Noise-contrastive loss over logits `[m, 1 + k]` whose column 0 holds
    /// the positive pair: mean over rows of `-log softmax(row)[0]`.
    pub fn nce_loss(&mut self, logits: Var) -> Result<Var, TensorError> {
        let (m, n) = self.value(logits).dims2();
        if n < 2 || m == 0 {
            return Err(TensorError::Unexpected {
                op: "nce_loss",
                expected: "logits [m, 1 + k] with m >= 1, k >= 1",
                got: self.value(logits).shape().to_vec(),
            });
        }
        let mut row = vec![0.0; n];
        let mut total = 0.0;
        for r in 0..m {
            log_softmax_row(&self.value(logits).data()[r * n..(r + 1) * n], &mut row);
            total -= row[0];
        }
        let needs = self.needs(&[logits]);
        Ok(self.push(Tensor::scalar(total / m as f32), Op::NceLoss(logits), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f32>() / v.len().max(1) as f32;
        let needs = self.needs(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Propagates `d loss / d node` for every node that needs a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::Unexpected {
                op: "backward",
                expected: "a scalar loss",
                got: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.filter(|_| matches!(node.op, Op::Leaf) && node.needs_grad)
                    .map(|data| Tensor {
                        shape: node.value.shape().to_vec(),
                        data,
                    })
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f32>>], var: Var, f: impl FnOnce(&mut [f32])) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        let slot = grads[var.0].get_or_insert_with(|| vec![0.0; self.nodes[var.0].value.len()]);
        f(slot);
    }

    fn backprop_node(&self, node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2();
                let (_, n) = bv.dims2();
                // dA = G · Bᵀ, dB = Aᵀ · G
                self.accumulate(grads, *a, |ga| {
                    gemm_strided(m, n, k, g, (n as isize, 1), bv.data(), (1, n as isize), ga, true);
                });
                self.accumulate(grads, *b, |gb| {
                    gemm_strided(k, m, n, av.data(), (1, k as isize), g, (n as isize, 1), gb, true);
                });
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    self.accumulate(grads, *v, |gv| {
                        gv.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                    });
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
                let n = self.value(*b).len();
                self.accumulate(grads, *b, |gb| {
                    for row in g.chunks_exact(n) {
                        gb.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
                self.accumulate(grads, *b, |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                });
            }
            Op::Relu(a) => {
                let input = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(input) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Softplus(a) => {
                let input = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for ((x, y), v) in ga.iter_mut().zip(g).zip(input) {
                        *x += y * sigmoid(*v);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2();
                let mut offset = 0;
                for p in parts {
                    let (_, w) = self.value(*p).dims2();
                    self.accumulate(grads, *p, |gp| {
                        for r in 0..m {
                            let src = &g[r * total + offset..r * total + offset + w];
                            gp[r * w..(r + 1) * w].iter_mut().zip(src).for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::LpNormRows(a, p) => {
                let input = self.value(*a);
                let (m, n) = input.dims2();
                let norms = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        let norm = norms[r];
                        if norm == 0.0 {
                            continue;
                        }
                        let row = &input.data()[r * n..(r + 1) * n];
                        let out = &mut ga[r * n..(r + 1) * n];
                        for (o, v) in out.iter_mut().zip(row) {
                            if *v == 0.0 {
                                continue;
                            }
                            let d = if *p == 1.0 {
                                v.signum()
                            } else if *p == 2.0 {
                                v / norm
                            } else {
                                let ratio = v.abs().max(LP_FLOOR) / norm;
                                v.signum() * ((p - 1.0) * ratio.ln()).exp()
                            };
                            *o += g[r] * d;
                        }
                    }
                });
            }
            Op::SmoothL1 {
                pred,
                target,
                beta,
                hinge,
            } => {
                let pv = self.value(*pred).data();
                let scale = g[0] / target.len() as f32;
                self.accumulate(grads, *pred, |gp| {
                    for (i, x) in gp.iter_mut().enumerate() {
                        let r = pv[i] - target[i];
                        if hinge[i] && r > 0.0 {
                            continue;
                        }
                        *x += scale * smooth_l1_grad(r, *beta);
                    }
                });
            }
            Op::LogSoftmax(a) => {
                // d/dx_j = g_j - softmax_j * Σ g
                let (m, n) = node.value.dims2();
                let out = node.value.data();
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        let gs: f32 = g[r * n..(r + 1) * n].iter().sum();
                        for j in 0..n {
                            ga[r * n + j] += g[r * n + j] - out[r * n + j].exp() * gs;
                        }
                    }
                });
            }
            Op::NceLoss(a) => {
                let input = self.value(*a);
                let (m, n) = input.dims2();
                let scale = g[0] / m as f32;
                let mut row = vec![0.0; n];
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        log_softmax_row(&input.data()[r * n..(r + 1) * n], &mut row);
                        for j in 0..n {
                            let indicator = if j == 0 { 1.0 } else { 0.0 };
                            ga[r * n + j] += scale * (row[j].exp() - indicator);
                        }
                    }
                });
            }
            Op::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f32;
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0] / n));
            }
        }
    }
}
