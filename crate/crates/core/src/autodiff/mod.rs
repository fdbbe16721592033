//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass in creation order,
//! which is a topological order by construction. [`Tape::backward`] walks the
//! records in reverse and visits each node once.

mod conv;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod params_io;

use std::collections::HashMap;

pub use conv::ConvSpec;
use conv::ConvGeom;

use crate::error::TensorError;
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Identifies a trainable parameter tensor: bank index and slot within the bank.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamKey {
    pub bank: usize,
    pub slot: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Mul,
    Min,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    Relu(Var),
    Sigmoid(Var),
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Reshape(Var),
    SoftmaxCe {
        logits: Var,
        label: usize,
        probs: Vec<f64>,
    },
    L1(Var),
    Add(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Gather {
        x: Var,
        row: usize,
        col: usize,
    },
}

/// Records one forward pass and computes exact gradients in reverse.
#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamKey, Var>,
    backward_done: bool,
}

fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], values: &[Tensor], v: Var) -> &'a mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; values[v.0].numel()])
}

fn same_rank_broadcast(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, y) => Some(y),
            (x, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// Calls `f(out_index, a_index, b_index)` for every element of the broadcast output.
fn for_each_broadcast(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let numel: usize = out.iter().product();
    if numel == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..numel {
        f(o, ia, ib);
        for d in (0..rank).rev() {
            idx[d] += 1;
            ia += sa[d];
            ib += sb[d];
            if idx[d] < out[d] {
                break;
            }
            ia -= sa[d] * out[d];
            ib -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    // Clamped so outputs stay strictly inside (0, 1) even where the exact
    // value rounds to an endpoint.
    const HI: f64 = 1.0 - f64::EPSILON / 2.0;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, HI)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(!self.backward_done, "recording after backward");
        self.values.push(value);
        self.ops.push(op);
        self.needs_grad.push(needs_grad);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a trainable parameter; repeated calls with one key return one node.
    pub fn param(&mut self, key: ParamKey, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.leaf(value.clone());
        self.params.insert(key, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v`, zero-filled if backward never reached it.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.values[v.0].shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("grad matches value shape"),
            None => Tensor::zeros(&shape),
        }
    }

    /// Gradients of every recorded parameter, sorted by key.
    pub fn param_grads(&self) -> Vec<(ParamKey, Tensor)> {
        let mut keys: Vec<_> = self.params.iter().map(|(&k, &v)| (k, v)).collect();
        keys.sort();
        keys.into_iter().map(|(k, v)| (k, self.grad_tensor(v))).collect()
    }

    pub fn param_var(&self, key: ParamKey) -> Option<Var> {
        self.params.get(&key).copied()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
        self.backward_done = false;
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var, TensorError> {
        let geom = ConvGeom::new(
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
            spec,
        )?;
        let out = conv::forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let value = Tensor::new(vec![geom.cout, geom.hout, geom.wout], out)?;
        let ng = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs_grad[x.0];
        self.push(value, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid_scalar);
        let ng = self.needs_grad[x.0];
        self.push(value, Op::Sigmoid(x), ng)
    }

    /// Elementwise product, minimum or maximum with same-rank broadcasting
    /// (a `1xRxC` mask spreads over the channels of a `CxRxC` map).
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        let out_shape = same_rank_broadcast(sa, sb).ok_or_else(|| TensorError::ShapeMismatch {
            op: match kind {
                BinaryKind::Mul => "mul",
                BinaryKind::Min => "min",
                BinaryKind::Max => "max",
            },
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        })?;
        let f = match kind {
            BinaryKind::Mul => |x: f64, y: f64| x * y,
            BinaryKind::Min => |x: f64, y: f64| if y < x { y } else { x },
            BinaryKind::Max => |x: f64, y: f64| if y > x { y } else { x },
        };
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let data = if sa == sb {
            da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect()
        } else {
            let mut out = vec![0.0; out_shape.iter().product()];
            let stra = broadcast_strides(sa, &out_shape);
            let strb = broadcast_strides(sb, &out_shape);
            for_each_broadcast(&out_shape, &stra, &strb, |o, i, j| out[o] = f(da[i], db[j]));
            out
        };
        let value = Tensor::new(out_shape, data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Binary { kind, a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Min, a, b)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(BinaryKind::Max, a, b)
    }

    /// Stacks `b`'s channels after `a`'s.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ca, ha, wa) = self.value(a).chw()?;
        let (cb, hb, wb) = self.value(b).chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: self.value(a).shape().to_vec(),
                rhs: self.value(b).shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.value(a).data());
        data.extend_from_slice(self.value(b).data());
        let value = Tensor::new(vec![ca + cb, ha, wa], data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Concat { a, b }, ng))
    }

    /// Max pooling without padding; gradient goes to the first maximum in each window.
    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var, TensorError> {
        let (c, h, w) = self.value(x).chw()?;
        let bad = |reason: String| TensorError::InvalidArgument {
            op: "maxpool2d",
            reason,
        };
        if kernel == 0 || stride == 0 {
            return Err(bad("kernel and stride must be positive".into()));
        }
        if kernel > h || kernel > w {
            return Err(bad(format!("kernel {kernel} larger than {h}x{w}")));
        }
        if !(h - kernel).is_multiple_of(stride) || !(w - kernel).is_multiple_of(stride) {
            return Err(bad(format!("{h}x{w} not tiled by kernel {kernel} stride {stride}")));
        }
        let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (ch * h + oy * stride) * w + ox * stride;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let i = (ch * h + oy * stride + ky) * w + ox * stride + kx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![c, ho, wo], out)?;
        let ng = self.needs_grad[x.0];
        Ok(self.push(value, Op::MaxPool { x, argmax }, ng))
    }

    /// `y = W x + b` for a vector `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let (xs, ws, bs) = (self.value(x).shape(), self.value(w).shape(), self.value(b).shape());
        let (m, n) = match *ws {
            [m, n] => (m, n),
            _ => {
                return Err(TensorError::Rank {
                    op: "linear weight",
                    expected: 2,
                    shape: ws.to_vec(),
                })
            }
        };
        if xs != [n] || bs != [m] {
            return Err(TensorError::ShapeMismatch {
                op: "linear (input/bias vs weight)",
                lhs: [xs, bs].concat(),
                rhs: ws.to_vec(),
            });
        }
        let (xd, wd) = (self.value(x).data(), self.value(w).data());
        let out: Vec<f64> = self
            .value(b)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &bi)| bi + wd[i * n..(i + 1) * n].iter().zip(xd).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let value = Tensor::new(vec![m], out)?;
        let ng = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Linear { x, w, b }, ng))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let value = self.value(x).clone().reshaped(shape)?;
        let ng = self.needs_grad[x.0];
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// `-log softmax(logits)[label]`, computed with max subtraction.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var, TensorError> {
        let lv = self.value(logits);
        if lv.rank() != 1 || lv.numel() < 2 {
            return Err(TensorError::InvalidArgument {
                op: "softmax_cross_entropy",
                reason: format!("need a vector of at least 2 logits, got {:?}", lv.shape()),
            });
        }
        let k = lv.numel();
        if label >= k {
            return Err(TensorError::LabelOutOfRange { label, classes: k });
        }
        let probs = softmax(lv.data());
        let max = lv.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.data().iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        let loss = lse - lv.data()[label];
        let ng = self.needs_grad[logits.0];
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, label, probs }, ng))
    }

    /// Sum of absolute values.
    pub fn l1_mass(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|v| v.abs()).sum();
        let ng = self.needs_grad[x.0];
        self.push(Tensor::scalar(s), Op::L1(x), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: va.shape().to_vec(),
                rhs: vb.shape().to_vec(),
            });
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let ng = self.needs_grad[x.0];
        self.push(value, Op::Scale(x, factor), ng)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let ng = self.needs_grad[x.0];
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Feature vector `x[:, row, col]` as a `Cx1x1` tensor.
    pub fn gather_position(&mut self, x: Var, row: usize, col: usize) -> Result<Var, TensorError> {
        let (c, h, w) = self.value(x).chw()?;
        if row >= h || col >= w {
            return Err(TensorError::InvalidArgument {
                op: "gather_position",
                reason: format!("({row}, {col}) outside {h}x{w}"),
            });
        }
        let xv = self.value(x);
        let data = (0..c).map(|ch| xv.get3(ch, row, col)).collect();
        let value = Tensor::new(vec![c, 1, 1], data)?;
        let ng = self.needs_grad[x.0];
        Ok(self.push(value, Op::Gather { x, row, col }, ng))
    }

    /// Populates gradients of every node reachable from the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.values[loss.0].numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.values[loss.0].shape().to_vec()));
        }
        self.backward_done = true;
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let Tape {
            values,
            ops,
            needs_grad,
            grads,
            ..
        } = self;
        let wants = |v: &Var| needs_grad[v.0];
        match &ops[i] {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (xv, wv) = (values[x.0].data(), values[w.0].data());
                if wants(b) {
                    conv::backward_bias(g, geom, grad_slot(grads, values, *b));
                }
                if wants(w) {
                    conv::backward_weight(xv, g, geom, grad_slot(grads, values, *w));
                }
                if wants(x) {
                    conv::backward_input(wv, g, geom, grad_slot(grads, values, *x));
                }
            }
            Op::Relu(x) => {
                let out = values[i].data();
                let dx = grad_slot(grads, values, *x);
                for ((d, &o), &gi) in dx.iter_mut().zip(out).zip(g) {
                    if o > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Sigmoid(x) => {
                let out = values[i].data();
                let dx = grad_slot(grads, values, *x);
                for ((d, &s), &gi) in dx.iter_mut().zip(out).zip(g) {
                    *d += gi * s * (1.0 - s);
                }
            }
            Op::Binary { kind, a, b } => {
                let out_shape = values[i].shape().to_vec();
                let (sa, sb) = (values[a.0].shape().to_vec(), values[b.0].shape().to_vec());
                let stra = broadcast_strides(&sa, &out_shape);
                let strb = broadcast_strides(&sb, &out_shape);
                let (av, bv) = (values[a.0].data(), values[b.0].data());
                // Ties route to the first operand.
                let to_a = |x: f64, y: f64| match kind {
                    BinaryKind::Min => !(y < x),
                    BinaryKind::Max => !(y > x),
                    BinaryKind::Mul => true,
                };
                if wants(a) {
                    let da = grad_slot(grads, values, *a);
                    for_each_broadcast(&out_shape, &stra, &strb, |o, ia, ib| {
                        da[ia] += match kind {
                            BinaryKind::Mul => g[o] * bv[ib],
                            _ if to_a(av[ia], bv[ib]) => g[o],
                            _ => 0.0,
                        };
                    });
                }
                if wants(b) {
                    let db = grad_slot(grads, values, *b);
                    for_each_broadcast(&out_shape, &stra, &strb, |o, ia, ib| {
                        db[ib] += match kind {
                            BinaryKind::Mul => g[o] * av[ia],
                            _ if !to_a(av[ia], bv[ib]) => g[o],
                            _ => 0.0,
                        };
                    });
                }
            }
            Op::Concat { a, b } => {
                let na = values[a.0].numel();
                if wants(a) {
                    let da = grad_slot(grads, values, *a);
                    da.iter_mut().zip(&g[..na]).for_each(|(d, gi)| *d += gi);
                }
                if wants(b) {
                    let db = grad_slot(grads, values, *b);
                    db.iter_mut().zip(&g[na..]).for_each(|(d, gi)| *d += gi);
                }
            }
            Op::MaxPool { x, argmax } => {
                let dx = grad_slot(grads, values, *x);
                for (&src, &gi) in argmax.iter().zip(g) {
                    dx[src] += gi;
                }
            }
            Op::Linear { x, w, b } => {
                let n = values[x.0].numel();
                let (xv, wv) = (values[x.0].data(), values[w.0].data());
                if wants(b) {
                    let db = grad_slot(grads, values, *b);
                    db.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                }
                if wants(w) {
                    let dw = grad_slot(grads, values, *w);
                    for (row, &gi) in dw.chunks_mut(n).zip(g) {
                        if gi != 0.0 {
                            row.iter_mut().zip(xv).for_each(|(d, &xj)| *d += gi * xj);
                        }
                    }
                }
                if wants(x) {
                    let dx = grad_slot(grads, values, *x);
                    for (row, &gi) in wv.chunks(n).zip(g) {
                        if gi != 0.0 {
                            dx.iter_mut().zip(row).for_each(|(d, &wij)| *d += gi * wij);
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                let dx = grad_slot(grads, values, *x);
                dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if wants(v) {
                        let dv = grad_slot(grads, values, *v);
                        dv.iter_mut().zip(g).for_each(|(d, gi)| *d += gi);
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                label,
                probs,
            } => {
                let dl = grad_slot(grads, values, *logits);
                for (k, (d, p)) in dl.iter_mut().zip(probs).enumerate() {
                    let target = if k == *label { 1.0 } else { 0.0 };
                    *d += g[0] * (p - target);
                }
            }
            Op::L1(x) => {
                let xv = values[x.0].data();
                let dx = grad_slot(grads, values, *x);
                for (d, &v) in dx.iter_mut().zip(xv) {
                    if v > 0.0 {
                        *d += g[0];
                    } else if v < 0.0 {
                        *d -= g[0];
                    }
                }
            }
            Op::Scale(x, f) => {
                let dx = grad_slot(grads, values, *x);
                dx.iter_mut().zip(g).for_each(|(d, gi)| *d += gi * f);
            }
            Op::Sum(x) => {
                let dx = grad_slot(grads, values, *x);
                dx.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Gather { x, row, col } => {
                let (_, h, w) = values[x.0].chw().expect("gather input is rank 3");
                let dx = grad_slot(grads, values, *x);
                for (ch, &gi) in g.iter().enumerate() {
                    dx[(ch * h + row) * w + col] += gi;
                }
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
