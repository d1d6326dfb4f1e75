//! Reverse-mode autodiff tape.
//!
//! Every operation appends a node holding its forward value and enough of
//! its inputs to run the backward kernel. Nodes only reference earlier
//! nodes, so the graph is acyclic by construction and `backward` is a single
//! reverse sweep.

use crate::error::{shape_err, NnError, Result};
use crate::kernels::{self, ConvDims};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Per-sample loss of a prediction against a fixed target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Npcc { eps: f64 },
    Mse,
    Com { eps: f64 },
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, dims: ConvDims },
    AvgPool { x: Var, n: usize },
    Relu { x: Var },
    Upsample2x { x: Var },
    TConv2x { x: Var, w: Var, b: Var },
    Concat { a: Var, b: Var },
    Linear { x: Var, w: Var, b: Var },
    Loss { pred: Var, target: Vec<T>, kind: LossKind },
}

impl<T> Op<T> {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::TConv2x { x, w, b } | Op::Linear { x, w, b } => vec![*x, *w, *b],
            Op::AvgPool { x, .. } | Op::Relu { x } | Op::Upsample2x { x } => vec![*x],
            Op::Concat { a, b } => vec![*a, *b],
            Op::Loss { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation graph with gradient storage.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            _ => op.parents().iter().any(|p| self.nodes[p.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Input or constant; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Trainable leaf; receives a gradient on `backward`.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` call, if this node was reachable or
    /// is a parameter.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    fn dims4(&self, v: Var, layer: &str) -> Result<(usize, usize, usize, usize)> {
        let t = &self.nodes[v.0].value;
        t.dims4()
            .ok_or_else(|| NnError::Config(format!("{layer}: expected a 4-D tensor, got shape {:?}", t.shape())))
    }

    /// Same-padded stride-1 convolution; weight `[cout, cin, k, k]`, bias `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, cin, h, wd) = self.dims4(x, "conv2d")?;
        let ws = self.value(w).shape().to_vec();
        let [cout, wcin, k, k2] = ws[..] else {
            return Err(shape_err("conv2d weight", &[0, cin, 0, 0], &ws));
        };
        if wcin != cin || k != k2 || k % 2 == 0 {
            return Err(shape_err("conv2d", &[cout, cin, k, k], &ws));
        }
        if self.value(b).shape() != [cout] {
            return Err(shape_err("conv2d bias", &[cout], self.value(b).shape()));
        }
        let dims = ConvDims {
            batch,
            cin,
            cout,
            h,
            w: wd,
            k,
        };
        let mut out = Tensor::zeros(vec![batch, cout, h, wd]);
        kernels::conv2d_forward(dims, self.value(x).data(), self.value(w).data(), self.value(b).data(), out.data_mut());
        Ok(self.push(out, Op::Conv2d { x, w, b, dims }))
    }

    pub fn avg_pool(&mut self, x: Var, n: usize) -> Result<Var> {
        let (batch, c, h, w) = self.dims4(x, "avg_pool2d")?;
        if n < 2 || h % n != 0 || w % n != 0 {
            return Err(NnError::Config(format!("avg_pool2d: window {n} does not tile {h}x{w}")));
        }
        let mut out = Tensor::zeros(vec![batch, c, h / n, w / n]);
        kernels::avg_pool_forward(batch * c, h, w, n, self.value(x).data(), out.data_mut());
        Ok(self.push(out, Op::AvgPool { x, n }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let out = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(out, Op::Relu { x })
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let (batch, c, h, w) = self.dims4(x, "upsample_bilinear2x")?;
        let mut out = Tensor::zeros(vec![batch, c, 2 * h, 2 * w]);
        kernels::upsample2x_forward(batch * c, h, w, self.value(x).data(), out.data_mut());
        Ok(self.push(out, Op::Upsample2x { x }))
    }

    /// Kernel-2 stride-2 transposed convolution; weight `[cin, cout, 2, 2]`.
    pub fn tconv2x(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (batch, cin, h, wd) = self.dims4(x, "transposed_conv2x")?;
        let ws = self.value(w).shape().to_vec();
        let [wcin, cout, 2, 2] = ws[..] else {
            return Err(shape_err("transposed_conv2x weight", &[cin, 0, 2, 2], &ws));
        };
        if wcin != cin {
            return Err(shape_err("transposed_conv2x", &[cin, cout, 2, 2], &ws));
        }
        if self.value(b).shape() != [cout] {
            return Err(shape_err("transposed_conv2x bias", &[cout], self.value(b).shape()));
        }
        let mut out = Tensor::zeros(vec![batch, cout, 2 * h, 2 * wd]);
        kernels::tconv2x_forward(
            batch,
            cin,
            cout,
            h,
            wd,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            out.data_mut(),
        );
        Ok(self.push(out, Op::TConv2x { x, w, b }))
    }

    /// Channel concatenation of two `[n, _, h, w]` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ca, h, w) = self.dims4(a, "concat")?;
        let (nb, cb, hb, wb) = self.dims4(b, "concat")?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(shape_err("concat", &[n, cb, h, w], &[nb, cb, hb, wb]));
        }
        let (sa, sb) = (ca * h * w, cb * h * w);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (sa + sb));
        for i in 0..n {
            data.extend_from_slice(&da[i * sa..(i + 1) * sa]);
            data.extend_from_slice(&db[i * sb..(i + 1) * sb]);
        }
        let out = Tensor::new(vec![n, ca + cb, h, w], data)?;
        Ok(self.push(out, Op::Concat { a, b }))
    }

    /// Fully connected map of each sample's flattened features; weight
    /// `[fout, fin]`. The output is reshaped to `out_shape` per sample.
    pub fn linear(&mut self, x: Var, w: Var, b: Var, out_shape: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let batch = xs[0];
        let fin: usize = xs[1..].iter().product();
        let ws = self.value(w).shape().to_vec();
        let fout: usize = out_shape.iter().product();
        if ws != [fout, fin] {
            return Err(shape_err("linear", &[fout, fin], &ws));
        }
        if self.value(b).shape() != [fout] {
            return Err(shape_err("linear bias", &[fout], self.value(b).shape()));
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(out_shape);
        let mut out = Tensor::zeros(shape);
        kernels::linear_forward(
            batch,
            fin,
            fout,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            out.data_mut(),
        );
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    /// Batch-mean loss of `pred` against `target` (same shape, first axis is
    /// the batch). Produces a scalar node.
    pub fn loss(&mut self, pred: Var, target: &Tensor<T>, kind: LossKind) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(shape_err("loss", target.shape(), p.shape()));
        }
        let batch = p.shape()[0];
        let m = p.numel() / batch;
        let mut total = 0.0;
        for i in 0..batch {
            let (ps, ts) = (&p.data()[i * m..(i + 1) * m], &target.data()[i * m..(i + 1) * m]);
            total += match kind {
                LossKind::Npcc { eps } => kernels::npcc_sample(ps, ts, eps, 1.0, None).ok_or(NnError::Degenerate)?,
                LossKind::Mse => kernels::mse_sample(ps, ts, 1.0, None),
                LossKind::Com { eps } => {
                    kernels::npcc_sample(ps, ts, eps, 1.0, None).ok_or(NnError::Degenerate)?
                        + kernels::mse_sample(ps, ts, 1.0, None)
                }
            };
        }
        let value = Tensor::scalar(T::from_f64_lossy(total / batch as f64));
        Ok(self.push(
            value,
            Op::Loss {
                pred,
                target: target.data().to_vec(),
                kind,
            },
        ))
    }

    fn take_grad(&mut self, v: Var) -> Vec<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.numel()])
    }

    /// Back-propagates from a scalar node. Afterwards every parameter holds
    /// a gradient (zero when the loss does not depend on it).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).numel() != 1 {
            return Err(NnError::NotScalar(shape));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.backward_node(&op, i, &g);
            self.nodes[i].op = op;
            self.grads[i] = Some(g);
        }

        for i in 0..self.nodes.len() {
            if self.nodes[i].requires_grad && matches!(self.nodes[i].op, Op::Leaf) && self.grads[i].is_none() {
                self.grads[i] = Some(vec![T::zero(); self.nodes[i].value.numel()]);
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&mut self, op: &Op<T>, i: usize, g: &[T]) {
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, dims } => {
                let mut gx = self.wants(x).then(|| self.take_grad(x));
                let mut gw = self.take_grad(w);
                let mut gb = self.take_grad(b);
                kernels::conv2d_backward(
                    dims,
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    g,
                    gx.as_deref_mut(),
                    &mut gw,
                    &mut gb,
                );
                self.restore(x, gx);
                self.grads[w.0] = Some(gw);
                self.grads[b.0] = Some(gb);
            }
            Op::AvgPool { x, n } => {
                let (batch, c, h, w) = self.nodes[x.0].value.dims4().expect("4-D");
                let mut gx = self.take_grad(x);
                kernels::avg_pool_backward(batch * c, h, w, n, g, &mut gx);
                self.grads[x.0] = Some(gx);
            }
            Op::Relu { x } => {
                let mut gx = self.take_grad(x);
                for ((d, &gi), &y) in gx.iter_mut().zip(g).zip(self.nodes[i].value.data()) {
                    if y > T::zero() {
                        *d += gi;
                    }
                }
                self.grads[x.0] = Some(gx);
            }
            Op::Upsample2x { x } => {
                let (batch, c, h, w) = self.nodes[x.0].value.dims4().expect("4-D");
                let mut gx = self.take_grad(x);
                kernels::upsample2x_backward(batch * c, h, w, g, &mut gx);
                self.grads[x.0] = Some(gx);
            }
            Op::TConv2x { x, w, b } => {
                let (batch, cin, h, wd) = self.nodes[x.0].value.dims4().expect("4-D");
                let cout = self.nodes[b.0].value.numel();
                let mut gx = self.wants(x).then(|| self.take_grad(x));
                let mut gw = self.take_grad(w);
                let mut gb = self.take_grad(b);
                kernels::tconv2x_backward(
                    batch,
                    cin,
                    cout,
                    h,
                    wd,
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    g,
                    gx.as_deref_mut(),
                    &mut gw,
                    &mut gb,
                );
                self.restore(x, gx);
                self.grads[w.0] = Some(gw);
                self.grads[b.0] = Some(gb);
            }
            Op::Concat { a, b } => {
                let (n, ca, h, w) = self.nodes[a.0].value.dims4().expect("4-D");
                let cb = self.nodes[b.0].value.dims4().expect("4-D").1;
                let (sa, sb) = (ca * h * w, cb * h * w);
                if self.wants(a) {
                    let mut ga = self.take_grad(a);
                    for s in 0..n {
                        let src = &g[s * (sa + sb)..s * (sa + sb) + sa];
                        ga[s * sa..(s + 1) * sa].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                    self.grads[a.0] = Some(ga);
                }
                if self.wants(b) {
                    let mut gb = self.take_grad(b);
                    for s in 0..n {
                        let src = &g[s * (sa + sb) + sa..(s + 1) * (sa + sb)];
                        gb[s * sb..(s + 1) * sb].iter_mut().zip(src).for_each(|(d, &v)| *d += v);
                    }
                    self.grads[b.0] = Some(gb);
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let batch = xs[0];
                let fin = self.nodes[x.0].value.numel() / batch;
                let fout = self.nodes[b.0].value.numel();
                let mut gx = self.wants(x).then(|| self.take_grad(x));
                let mut gw = self.take_grad(w);
                let mut gb = self.take_grad(b);
                kernels::linear_backward(
                    batch,
                    fin,
                    fout,
                    self.nodes[x.0].value.data(),
                    self.nodes[w.0].value.data(),
                    g,
                    gx.as_deref_mut(),
                    &mut gw,
                    &mut gb,
                );
                self.restore(x, gx);
                self.grads[w.0] = Some(gw);
                self.grads[b.0] = Some(gb);
            }
            Op::Loss { pred, ref target, kind } => {
                let p = &self.nodes[pred.0].value;
                let batch = p.shape()[0];
                let m = p.numel() / batch;
                let scale = g[0].as_f64() / batch as f64;
                let mut gp = self.grads[pred.0].take().unwrap_or_else(|| vec![T::zero(); p.numel()]);
                for s in 0..batch {
                    let ps = &p.data()[s * m..(s + 1) * m];
                    let ts = &target[s * m..(s + 1) * m];
                    let gs = &mut gp[s * m..(s + 1) * m];
                    match kind {
                        LossKind::Npcc { eps } => {
                            kernels::npcc_sample(ps, ts, eps, scale, Some(gs));
                        }
                        LossKind::Mse => {
                            kernels::mse_sample(ps, ts, scale, Some(gs));
                        }
                        LossKind::Com { eps } => {
                            kernels::npcc_sample(ps, ts, eps, scale, Some(&mut *gs));
                            kernels::mse_sample(ps, ts, scale, Some(gs));
                        }
                    }
                }
                self.grads[pred.0] = Some(gp);
            }
        }
    }

    fn restore(&mut self, v: Var, g: Option<Vec<T>>) {
        if let Some(g) = g {
            self.grads[v.0] = Some(g);
        }
    }
}
