//! A small reverse-mode differentiation tape covering the operations the
//! compact CNN needs.
//!
//! Feature maps are 4-D `[batch, channels, rows, time]`. Every operation is
//! generic over [`Scalar`] so the same graph runs in `f32` for training and in
//! `f64` for finite-difference verification. Reductions for batch-norm
//! statistics and the loss accumulate in `f64`.

use std::fmt::Debug;

use crate::error::{Error, Result};

pub trait Scalar:
    num_traits::Float + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    fn lift(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn lift(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn lift(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != values.len() || shape.contains(&0) {
            return Err(Error::Shape {
                expected: shape,
                got: vec![values.len()],
            });
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            values: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::lift(v.as_f64())).collect(),
        }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.values.len() {
            return Err(Error::Shape {
                expected: shape,
                got: self.shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Rows `[start, end)` along the leading axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor<T> {
        let row: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            values: self.values[start * row..end * row].to_vec(),
        }
    }
}

/// `y = x·W + b` for `x [n, d]`, `W [d, m]`, `b [m]`, accumulating each output
/// from the bias in increasing `d`. Shared by the network head and the
/// linear-probe evaluation so both take the same floating-point path.
pub fn affine_rows<T: Scalar>(x: &[T], w: &[T], b: &[T], d: usize, m: usize) -> Vec<T> {
    let n = x.len() / d;
    let mut y = Vec::with_capacity(n * m);
    for i in 0..n {
        let xi = &x[i * d..(i + 1) * d];
        y.extend_from_slice(b);
        let yi = &mut y[i * m..(i + 1) * m];
        for (k, &xv) in xi.iter().enumerate() {
            let wk = &w[k * m..(k + 1) * m];
            for (o, &wv) in yi.iter_mut().zip(wk) {
                *o = *o + xv * wv;
            }
        }
    }
    y
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    /// `x [b, cin, h, t]`, `w [cout, cin/groups, k]`, same padding along time.
    Conv1d { x: Var, w: Var, groups: usize },
    /// `x [b, g, h, t]`, `w [g·d, h]` → `[b, g·d, 1, t]`.
    SpatialDepthwise { x: Var, w: Var },
    /// `x [b, cin, 1, t]`, `w [cout, cin]`.
    Pointwise { x: Var, w: Var },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    /// Per-channel constant scale and shift (batch norm in inference mode).
    Affine { x: Var, scale: Vec<T> },
    Elu { x: Var },
    AvgPool { x: Var, k: usize },
    Mask { x: Var, mask: Vec<T> },
    Flatten { x: Var },
    Linear { x: Var, w: Var, b: Var },
    SoftmaxCrossEntropy { x: Var, labels: Vec<usize>, probs: Vec<T> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Batch statistics recorded by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    /// Elements per channel.
    pub count: usize,
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn same_pad(k: usize) -> usize {
    (k - 1) / 2
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn shape_err(expected: &[usize], got: &[usize]) -> Error {
        Error::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub fn conv1d(&mut self, x: Var, w: Var, groups: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 3 || xs[1] % groups != 0 || ws[0] % groups != 0 {
            return Err(Self::shape_err(&ws, &xs));
        }
        let (b, cin, h, t) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
        if cin_g * groups != cin {
            return Err(Self::shape_err(&[cout, cin / groups, k], &ws));
        }
        let cout_g = cout / groups;
        let pl = same_pad(k);
        let xv = self.value(x).values();
        let wv = self.value(w).values();
        let mut y = vec![T::zero(); b * cout * h * t];
        for bi in 0..b {
            for o in 0..cout {
                let g = o / cout_g;
                for ci in 0..cin_g {
                    let c = g * cin_g + ci;
                    let wk = &wv[(o * cin_g + ci) * k..(o * cin_g + ci + 1) * k];
                    for hi in 0..h {
                        let xrow = &xv[((bi * cin + c) * h + hi) * t..][..t];
                        let yrow = &mut y[((bi * cout + o) * h + hi) * t..][..t];
                        for (kk, &wkk) in wk.iter().enumerate() {
                            // y[t0] += w[kk] * x[t0 + kk - pl]
                            let lo = pl.saturating_sub(kk);
                            let hi_t = (t + pl).saturating_sub(kk).min(t);
                            if lo >= hi_t {
                                continue;
                            }
                            let off = lo + kk - pl;
                            for (yv, &xv) in yrow[lo..hi_t].iter_mut().zip(&xrow[off..]) {
                                *yv = *yv + wkk * xv;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor {
            shape: vec![b, cout, h, t],
            values: y,
        };
        Ok(self.push(value, Op::Conv1d { x, w, groups }, &[x, w]))
    }

    pub fn spatial_depthwise(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || ws.len() != 2 || ws[1] != xs[2] || ws[0] % xs[1] != 0 {
            return Err(Self::shape_err(&ws, &xs));
        }
        let (b, g, h, t) = (xs[0], xs[1], xs[2], xs[3]);
        let cout = ws[0];
        let d = cout / g;
        let xv = self.value(x).values();
        let wv = self.value(w).values();
        let mut y = vec![T::zero(); b * cout * t];
        for bi in 0..b {
            for o in 0..cout {
                let gi = o / d;
                let yrow = &mut y[(bi * cout + o) * t..][..t];
                for hi in 0..h {
                    let wo = wv[o * h + hi];
                    let xrow = &xv[((bi * g + gi) * h + hi) * t..][..t];
                    for (yv, &xv) in yrow.iter_mut().zip(xrow) {
                        *yv = *yv + wo * xv;
                    }
                }
            }
        }
        let value = Tensor {
            shape: vec![b, cout, 1, t],
            values: y,
        };
        Ok(self.push(value, Op::SpatialDepthwise { x, w }, &[x, w]))
    }

    pub fn pointwise(&mut self, x: Var, w: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 4 || xs[2] != 1 || ws.len() != 2 || ws[1] != xs[1] {
            return Err(Self::shape_err(&ws, &xs));
        }
        let (b, cin, t) = (xs[0], xs[1], xs[3]);
        let cout = ws[0];
        let xv = self.value(x).values();
        let wv = self.value(w).values();
        let mut y = vec![T::zero(); b * cout * t];
        for bi in 0..b {
            for o in 0..cout {
                let yrow = &mut y[(bi * cout + o) * t..][..t];
                for c in 0..cin {
                    let wo = wv[o * cin + c];
                    let xrow = &xv[(bi * cin + c) * t..][..t];
                    for (yv, &xv) in yrow.iter_mut().zip(xrow) {
                        *yv = *yv + wo * xv;
                    }
                }
            }
        }
        let value = Tensor {
            shape: vec![b, cout, 1, t],
            values: y,
        };
        Ok(self.push(value, Op::Pointwise { x, w }, &[x, w]))
    }

    /// Training-mode batch norm over axis 1; statistics over all other axes.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let xs = self.value(x).shape().to_vec();
        let ch = xs[1];
        if self.value(gamma).len() != ch || self.value(beta).len() != ch {
            return Err(Self::shape_err(&[ch], self.value(gamma).shape()));
        }
        let (b, inner) = (xs[0], xs[2..].iter().product::<usize>());
        let count = b * inner;
        let xv = self.value(x).values();
        let gv = self.value(gamma).values();
        let bv = self.value(beta).values();
        let mut mean = vec![0f64; ch];
        let mut var = vec![0f64; ch];
        for c in 0..ch {
            let mut s = 0f64;
            for bi in 0..b {
                s += xv[(bi * ch + c) * inner..][..inner]
                    .iter()
                    .map(|v| v.as_f64())
                    .sum::<f64>();
            }
            let m = s / count as f64;
            let mut ss = 0f64;
            for bi in 0..b {
                ss += xv[(bi * ch + c) * inner..][..inner]
                    .iter()
                    .map(|v| (v.as_f64() - m).powi(2))
                    .sum::<f64>();
            }
            mean[c] = m;
            var[c] = ss / count as f64;
        }
        let inv_std: Vec<T> = var.iter().map(|v| T::lift(1.0 / (v + eps).sqrt())).collect();
        let mut xhat = vec![T::zero(); xv.len()];
        let mut y = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for c in 0..ch {
                let base = (bi * ch + c) * inner;
                let m = T::lift(mean[c]);
                for i in base..base + inner {
                    let h = (xv[i] - m) * inv_std[c];
                    xhat[i] = h;
                    y[i] = gv[c] * h + bv[c];
                }
            }
        }
        let value = Tensor {
            shape: xs,
            values: y,
        };
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        );
        Ok((v, BatchStats { mean, var, count }))
    }

    /// `y = scale[c]·x + shift[c]` with constant per-channel coefficients.
    pub fn channel_affine(&mut self, x: Var, scale: Vec<T>, shift: &[T]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ch = xs[1];
        if scale.len() != ch || shift.len() != ch {
            return Err(Self::shape_err(&[ch], &[scale.len()]));
        }
        let inner: usize = xs[2..].iter().product();
        let xv = self.value(x).values();
        let mut y = Vec::with_capacity(xv.len());
        for (i, chunk) in xv.chunks(inner).enumerate() {
            let c = i % ch;
            y.extend(chunk.iter().map(|&v| scale[c] * v + shift[c]));
        }
        let value = Tensor {
            shape: xs,
            values: y,
        };
        Ok(self.push(value, Op::Affine { x, scale }, &[x]))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let values = src
            .values()
            .iter()
            .map(|&v| if v > T::zero() { v } else { v.exp_m1() })
            .collect();
        let value = Tensor {
            shape: src.shape().to_vec(),
            values,
        };
        self.push(value, Op::Elu { x }, &[x])
    }

    /// Average pooling along the last axis with window and stride `k`.
    pub fn avg_pool(&mut self, x: Var, k: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let t = *xs.last().unwrap();
        if k == 0 || t % k != 0 {
            return Err(Error::invalid("pool", format!("{t} samples not divisible by {k}")));
        }
        let inv = T::lift(1.0 / k as f64);
        let values = self
            .value(x)
            .values()
            .chunks(k)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let mut shape = xs;
        *shape.last_mut().unwrap() = t / k;
        Ok(self.push(Tensor { shape, values }, Op::AvgPool { x, k }, &[x]))
    }

    /// Elementwise product with a constant mask (inverted dropout).
    pub fn mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        let src = self.value(x);
        if mask.len() != src.len() {
            return Err(Self::shape_err(src.shape(), &[mask.len()]));
        }
        let values = src.values().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor {
            shape: src.shape().to_vec(),
            values,
        };
        Ok(self.push(value, Op::Mask { x, mask }, &[x]))
    }

    pub fn flatten(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let b = src.shape()[0];
        let value = Tensor {
            shape: vec![b, src.len() / b],
            values: src.values().to_vec(),
        };
        self.push(value, Op::Flatten { x }, &[x])
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || ws[0] != xs[1] || self.value(b).len() != ws[1] {
            return Err(Self::shape_err(&ws, &xs));
        }
        let (d, m) = (ws[0], ws[1]);
        let values = affine_rows(self.value(x).values(), self.value(w).values(), self.value(b).values(), d, m);
        let value = Tensor {
            shape: vec![xs[0], m],
            values,
        };
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// Mean softmax cross-entropy over rows of `x [n, classes]`; scalar output.
    pub fn softmax_cross_entropy(&mut self, x: Var, labels: &[usize]) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let (n, m) = (xs[0], xs[1]);
        if labels.len() != n || labels.iter().any(|&l| l >= m) {
            return Err(Error::invalid("labels", "length or class index out of range"));
        }
        let xv = self.value(x).values();
        let mut probs = Vec::with_capacity(n * m);
        let mut loss = 0f64;
        for (row, &label) in xv.chunks(m).zip(labels) {
            let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
            let lse = max + z.ln();
            loss += lse - row[label].as_f64();
            probs.extend(row.iter().map(|v| T::lift((v.as_f64() - lse).exp())));
        }
        loss /= n as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        let value = Tensor {
            shape: vec![1],
            values: vec![T::lift(loss)],
        };
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                x,
                labels: labels.to_vec(),
                probs,
            },
            &[x],
        ))
    }

    /// Reverse sweep from scalar `root`. Returns one gradient slot per node;
    /// only nodes that depend on a `requires_grad` leaf are populated.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one(); self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &dy, &mut grads);
            grads[i] = Some(dy);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) {
        let accumulate = |grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>| match &mut grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.iter_mut().zip(g) {
                    *e = *e + x;
                }
            }
            slot @ None => *slot = Some(g),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv1d { x, w, groups } => {
                let xs = self.value(*x).shape();
                let ws = self.value(*w).shape();
                let (b, cin, h, t) = (xs[0], xs[1], xs[2], xs[3]);
                let (cout, cin_g, k) = (ws[0], ws[1], ws[2]);
                let cout_g = cout / groups;
                let pl = same_pad(k);
                let xv = self.value(*x).values();
                let wv = self.value(*w).values();
                let want_x = self.wants(*x);
                let want_w = self.wants(*w);
                let mut dx = vec![T::zero(); if want_x { xv.len() } else { 0 }];
                let mut dw = vec![T::zero(); if want_w { wv.len() } else { 0 }];
                for bi in 0..b {
                    for o in 0..cout {
                        let g = o / cout_g;
                        for ci in 0..cin_g {
                            let c = g * cin_g + ci;
                            let widx = (o * cin_g + ci) * k;
                            for hi in 0..h {
                                let xoff = ((bi * cin + c) * h + hi) * t;
                                let dyrow = &dy[((bi * cout + o) * h + hi) * t..][..t];
                                for kk in 0..k {
                                    let lo = pl.saturating_sub(kk);
                                    let hi_t = (t + pl).saturating_sub(kk).min(t);
                                    if lo >= hi_t {
                                        continue;
                                    }
                                    let off = xoff + lo + kk - pl;
                                    let len = hi_t - lo;
                                    if want_w {
                                        let xr = &xv[off..off + len];
                                        let s = dyrow[lo..hi_t]
                                            .iter()
                                            .zip(xr)
                                            .fold(T::zero(), |a, (&d, &xv)| a + d * xv);
                                        dw[widx + kk] = dw[widx + kk] + s;
                                    }
                                    if want_x {
                                        let wkk = wv[widx + kk];
                                        for (d, &g) in dx[off..off + len].iter_mut().zip(&dyrow[lo..hi_t]) {
                                            *d = *d + wkk * g;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                if want_x {
                    accumulate(grads, *x, dx);
                }
                if want_w {
                    accumulate(grads, *w, dw);
                }
            }
            Op::SpatialDepthwise { x, w } => {
                let xs = self.value(*x).shape();
                let (b, g, h, t) = (xs[0], xs[1], xs[2], xs[3]);
                let cout = self.value(*w).shape()[0];
                let d = cout / g;
                let xv = self.value(*x).values();
                let wv = self.value(*w).values();
                let mut dx = vec![T::zero(); xv.len()];
                let mut dw = vec![T::zero(); wv.len()];
                for bi in 0..b {
                    for o in 0..cout {
                        let gi = o / d;
                        let dyrow = &dy[(bi * cout + o) * t..][..t];
                        for hi in 0..h {
                            let xo = ((bi * g + gi) * h + hi) * t;
                            let xrow = &xv[xo..xo + t];
                            dw[o * h + hi] = dw[o * h + hi]
                                + dyrow.iter().zip(xrow).fold(T::zero(), |a, (&d, &x)| a + d * x);
                            let wo = wv[o * h + hi];
                            for (dxv, &g) in dx[xo..xo + t].iter_mut().zip(dyrow) {
                                *dxv = *dxv + wo * g;
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    accumulate(grads, *w, dw);
                }
            }
            Op::Pointwise { x, w } => {
                let xs = self.value(*x).shape();
                let (b, cin, t) = (xs[0], xs[1], xs[3]);
                let cout = self.value(*w).shape()[0];
                let xv = self.value(*x).values();
                let wv = self.value(*w).values();
                let mut dx = vec![T::zero(); xv.len()];
                let mut dw = vec![T::zero(); wv.len()];
                for bi in 0..b {
                    for o in 0..cout {
                        let dyrow = &dy[(bi * cout + o) * t..][..t];
                        for c in 0..cin {
                            let xo = (bi * cin + c) * t;
                            dw[o * cin + c] = dw[o * cin + c]
                                + dyrow
                                    .iter()
                                    .zip(&xv[xo..xo + t])
                                    .fold(T::zero(), |a, (&d, &x)| a + d * x);
                            let wo = wv[o * cin + c];
                            for (dxv, &g) in dx[xo..xo + t].iter_mut().zip(dyrow) {
                                *dxv = *dxv + wo * g;
                            }
                        }
                    }
                }
                if self.wants(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    accumulate(grads, *w, dw);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let xs = self.value(*x).shape();
                let (b, ch) = (xs[0], xs[1]);
                let inner: usize = xs[2..].iter().product();
                let n = (b * inner) as f64;
                let gv = self.value(*gamma).values();
                let mut sum_dy = vec![0f64; ch];
                let mut sum_dy_xhat = vec![0f64; ch];
                for bi in 0..b {
                    for c in 0..ch {
                        let base = (bi * ch + c) * inner;
                        for i in base..base + inner {
                            sum_dy[c] += dy[i].as_f64();
                            sum_dy_xhat[c] += (dy[i] * xhat[i]).as_f64();
                        }
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); dy.len()];
                    for bi in 0..b {
                        for c in 0..ch {
                            let base = (bi * ch + c) * inner;
                            let k = gv[c] * inv_std[c] * T::lift(1.0 / n);
                            let (sd, sdx) = (T::lift(sum_dy[c]), T::lift(sum_dy_xhat[c]));
                            let nn = T::lift(n);
                            for i in base..base + inner {
                                dx[i] = k * (nn * dy[i] - sd - xhat[i] * sdx);
                            }
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, sum_dy_xhat.iter().map(|&v| T::lift(v)).collect());
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, sum_dy.iter().map(|&v| T::lift(v)).collect());
                }
            }
            Op::Affine { x, scale } => {
                if self.wants(*x) {
                    let ch = scale.len();
                    let inner: usize = self.value(*x).shape()[2..].iter().product();
                    let mut dx = Vec::with_capacity(dy.len());
                    for (i, chunk) in dy.chunks(inner).enumerate() {
                        dx.extend(chunk.iter().map(|&g| g * scale[i % ch]));
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Elu { x } => {
                let xv = self.value(*x).values();
                let yv = node.value.values();
                let dx = dy
                    .iter()
                    .zip(xv.iter().zip(yv))
                    .map(|(&g, (&xi, &yi))| if xi > T::zero() { g } else { g * (yi + T::one()) })
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::AvgPool { x, k } => {
                let inv = T::lift(1.0 / *k as f64);
                let dx = dy
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g * inv, *k))
                    .collect();
                accumulate(grads, *x, dx);
            }
            Op::Mask { x, mask } => {
                let dx = dy.iter().zip(mask).map(|(&g, &m)| g * m).collect();
                accumulate(grads, *x, dx);
            }
            Op::Flatten { x } => accumulate(grads, *x, dy.to_vec()),
            Op::Linear { x, w, b } => {
                let xs = self.value(*x).shape();
                let (n, d) = (xs[0], xs[1]);
                let m = self.value(*w).shape()[1];
                let xv = self.value(*x).values();
                let wv = self.value(*w).values();
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * d];
                    for i in 0..n {
                        for k in 0..d {
                            dx[i * d + k] = (0..m).fold(T::zero(), |a, j| a + dy[i * m + j] * wv[k * m + j]);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); d * m];
                    for i in 0..n {
                        for k in 0..d {
                            for j in 0..m {
                                dw[k * m + j] = dw[k * m + j] + xv[i * d + k] * dy[i * m + j];
                            }
                        }
                    }
                    accumulate(grads, *w, dw);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); m];
                    for row in dy.chunks(m) {
                        for (a, &g) in db.iter_mut().zip(row) {
                            *a = *a + g;
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::SoftmaxCrossEntropy { x, labels, probs } => {
                let m = self.value(*x).shape()[1];
                let n = labels.len();
                let scale = dy[0] * T::lift(1.0 / n as f64);
                let mut dx = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    dx[i * m + l] = dx[i * m + l] - T::one();
                }
                for v in &mut dx {
                    *v = *v * scale;
                }
                accumulate(grads, *x, dx);
            }
        }
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to `v`, zeros if `v` did not influence the root.
    pub fn get(&self, v: Var, tape: &Tape<T>) -> Tensor<T> {
        let shape = tape.value(v).shape().to_vec();
        match &self.grads[v.0] {
            Some(g) => Tensor {
                shape,
                values: g.clone(),
            },
            None => Tensor::zeros(&shape),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Checks every partial of `inputs` by central differences.
    fn check(
        inputs: Vec<Tensor<f64>>,
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
    ) {
        let eval = |vals: &[Tensor<f64>]| {
            let mut tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone(), true)).collect();
            let root = build(&mut tape, &vars);
            (tape, vars, root)
        };
        let (tape, vars, root) = eval(&inputs);
        let grads = tape.backward(root);
        let h = 1e-5;
        for (vi, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v, &tape);
            for j in 0..inputs[vi].len() {
                let mut plus = inputs.clone();
                plus[vi].values_mut()[j] += h;
                let mut minus = inputs.clone();
                minus[vi].values_mut()[j] -= h;
                let fp = { let (t, _, r) = eval(&plus); t.value(r).values()[0] };
                let fm = { let (t, _, r) = eval(&minus); t.value(r).values()[0] };
                let numeric = (fp - fm) / (2.0 * h);
                let a = analytic.values()[j];
                assert!(
                    (a - numeric).abs() <= 1e-6 * (1.0 + a.abs().max(numeric.abs())),
                    "input {vi}[{j}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    /// Reduces any tensor to a scalar with a fixed random projection.
    fn project(tape: &mut Tape<f64>, y: Var) -> Var {
        let flat = tape.flatten(y);
        let d = tape.value(flat).shape()[1];
        let n = tape.value(flat).shape()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = tape.leaf(random(&[d, 3], &mut rng), false);
        let b = tape.leaf(Tensor::zeros(&[3]), false);
        let z = tape.linear(flat, w, b).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        tape.softmax_cross_entropy(z, &labels).unwrap()
    }

    #[test]
    fn conv1d_grouped_and_even_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (cin, cout, groups, k) in [(1, 3, 1, 4), (4, 4, 4, 5), (2, 4, 2, 6)] {
            let x = random(&[2, cin, 2, 9], &mut rng);
            let w = random(&[cout, cin / groups, k], &mut rng);
            check(vec![x, w], |t, v| {
                let y = t.conv1d(v[0], v[1], groups).unwrap();
                project(t, y)
            });
        }
    }

    #[test]
    fn conv1d_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&[1, 1, 1, 7], &mut rng);
        let w = random(&[1, 1, 4], &mut rng);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(x.clone(), false), tape.leaf(w.clone(), false));
        let y = tape.conv1d(xv, wv, 1).unwrap();
        // padding 1 on the left, 2 on the right
        for t in 0..7 {
            let mut expected = 0.0;
            for k in 0..4 {
                let idx = t as i64 + k as i64 - 1;
                if (0..7).contains(&idx) {
                    expected += w.values()[k] * x.values()[idx as usize];
                }
            }
            assert!((tape.value(y).values()[t] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn spatial_pointwise_bn_elu_pool_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[3, 2, 3, 8], &mut rng);
        let ws = random(&[4, 3], &mut rng);
        let g = random(&[4], &mut rng);
        let b = random(&[4], &mut rng);
        let wp = random(&[3, 4], &mut rng);
        check(vec![x, ws, g, b, wp], |t, v| {
            let y = t.spatial_depthwise(v[0], v[1]).unwrap();
            let (y, _) = t.batch_norm(y, v[2], v[3], 1e-3).unwrap();
            let y = t.elu(y);
            let y = t.avg_pool(y, 2).unwrap();
            let y = t.pointwise(y, v[4]).unwrap();
            project(t, y)
        });
    }

    #[test]
    fn mask_affine_linear_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 2, 1, 3], &mut rng);
        let w = random(&[6, 4], &mut rng);
        let b = random(&[4], &mut rng);
        check(vec![x, w, b], |t, v| {
            let y = t.channel_affine(v[0], vec![0.5, -2.0], &[0.1, 0.2]).unwrap();
            let y = t.mask(y, vec![0.0, 2.0, 2.0, 0.0, 2.0, 2.0, 2.0, 0.0, 2.0, 2.0, 0.0, 2.0]).unwrap();
            let y = t.flatten(y);
            let z = t.linear(y, v[1], v[2]).unwrap();
            t.softmax_cross_entropy(z, &[1, 3]).unwrap()
        });
    }

    #[test]
    fn uniform_logits_loss_is_log_classes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[5, 4]), true);
        let l = tape.softmax_cross_entropy(x, &[0, 1, 2, 3, 0]).unwrap();
        assert!((tape.value(l).values()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[1, 2, 1, 8]), false);
        let w = tape.leaf(Tensor::zeros(&[3, 3]), false);
        assert!(tape.pointwise(x, w).is_err());
        assert!(tape.avg_pool(x, 3).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
