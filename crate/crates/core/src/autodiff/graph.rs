//! Tape of recorded primitive applications and the reverse sweep over it.
//!
//! Nodes are appended in evaluation order, so the node list itself is a
//! topological order: every input of node `i` has an index below `i`.
//! Layout conventions: images are `[N, C, H, W]`, dense activations `[N, F]`,
//! dense weights `[out, in]`, convolution kernels `[O, C, kh, kw]`.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, Scalar};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-supplied primitive: `(inputs, output, output_grad)`
/// to one gradient buffer per input.
pub type CustomBackward<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>, &[T]) -> Vec<Vec<T>> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        geom: ConvGeom,
        // im2col buffers of the whole batch; kept only when the kernel needs a gradient
        cols: Vec<T>,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    Relu {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    SliceChannels {
        x: Var,
        start: usize,
    },
    GlobalAvgPool {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Custom {
        name: &'static str,
        inputs: Vec<Var>,
        backward: CustomBackward<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ChannelBias { .. } => "channel_bias",
            Op::Relu { .. } => "relu",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Dense { .. } => "dense",
            Op::Add { .. } => "add",
            Op::Concat { .. } => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::Reshape { .. } => "reshape",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Mse { .. } => "mse",
            Op::Custom { name, .. } => name,
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, k, .. } => vec![*x, *k],
            Op::ChannelBias { x, b } => vec![*x, *b],
            Op::Relu { x }
            | Op::MaxPool { x, .. }
            | Op::SliceChannels { x, .. }
            | Op::GlobalAvgPool { x }
            | Op::Reshape { x } => vec![*x],
            Op::Dense { x, w, b } => vec![*x, *w, *b],
            Op::Add { a, b } => vec![*a, *b],
            Op::Concat { xs } => xs.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Mse { pred, target } => vec![*pred, *target],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Computation graph doubling as the gradient tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    /// Number of recorded nodes, leaves included.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The recorded tape as `(primitive name, inputs)` in evaluation order.
    pub fn tape(&self) -> Vec<(&'static str, Vec<Var>)> {
        self.nodes.iter().map(|n| (n.op.name(), n.op.inputs())).collect()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// 2-D cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ks = self.shape(kernel).to_vec();
        if xs.len() != 4 || ks.len() != 4 || xs[1] != ks[1] {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ks[0], ks[2], ks[3]);
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape("conv2d", &xs, &ks));
        }
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
        };
        let keep_cols = self.nodes[kernel.0].requires_grad;
        let (patch, positions) = (geom.patch(), geom.positions());
        let mut out = vec![T::zero(); n * o * positions];
        let mut cols = if keep_cols { vec![T::zero(); n * patch * positions] } else { Vec::new() };
        let mut scratch = vec![T::zero(); patch * positions];
        {
            let xv = self.nodes[x.0].value.data();
            let kv = self.nodes[kernel.0].value.data();
            for s in 0..n {
                let col = if keep_cols {
                    &mut cols[s * patch * positions..(s + 1) * patch * positions]
                } else {
                    &mut scratch[..]
                };
                im2col(&xv[s * c * h * w..(s + 1) * c * h * w], &geom, col);
                T::gemm(
                    o,
                    patch,
                    positions,
                    T::one(),
                    kv,
                    patch as isize,
                    1,
                    col,
                    positions as isize,
                    1,
                    T::zero(),
                    &mut out[s * o * positions..(s + 1) * o * positions],
                    positions as isize,
                    1,
                );
            }
        }
        let value = Tensor::new(vec![n, o, geom.ho, geom.wo], out)?;
        let rg = self.any_grad(&[x, kernel]);
        Ok(self.push(value, Op::Conv2d { x, k: kernel, geom, cols }, rg))
    }

    /// Adds `b[c]` to every spatial position of channel `c`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() < 2 || bs.len() != 1 || xs[1] != bs[0] {
            return Err(Error::shape("channel_bias", &xs, &bs));
        }
        let inner: usize = xs[2..].iter().product();
        let c = xs[1];
        let bv = self.nodes[b.0].value.data();
        let mut out = self.nodes[x.0].value.data().to_vec();
        for (i, v) in out.iter_mut().enumerate() {
            *v += bv[(i / inner) % c];
        }
        let value = Tensor::new(xs, out)?;
        let rg = self.any_grad(&[x, b]);
        Ok(self.push(value, Op::ChannelBias { x, b }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        let out: Vec<T> = src.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let value = Tensor::new(src.shape().to_vec(), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Relu { x }, rg))
    }

    /// Max pooling with a square window; padded cells never win.
    pub fn maxpool2d(&mut self, x: Var, window: usize, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 || window == 0 || stride == 0 || pad >= window {
            return Err(Error::shape("maxpool2d", &xs, &[window, stride, pad]));
        }
        let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h + 2 * pad < window || w + 2 * pad < window {
            return Err(Error::shape("maxpool2d", &xs, &[window, stride, pad]));
        }
        let ho = (h + 2 * pad - window) / stride + 1;
        let wo = (w + 2 * pad - window) / stride + 1;
        let xv = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for dy in 0..window {
                        let iy = (oy * stride + dy) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for dx in 0..window {
                            let ix = (ox * stride + dx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if best_idx == usize::MAX || xv[idx] > best {
                                best = xv[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// `y = x W^T + b` for `x: [N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let bs = self.shape(b).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(Error::shape("dense", &xs, &ws));
        }
        if bs.len() != 1 || bs[0] != ws[0] {
            return Err(Error::shape("dense", &ws, &bs));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let bv = self.nodes[b.0].value.data();
        let mut out: Vec<T> = (0..n * fout).map(|i| bv[i % fout]).collect();
        T::gemm(
            n,
            fin,
            fout,
            T::one(),
            self.nodes[x.0].value.data(),
            fin as isize,
            1,
            self.nodes[w.0].value.data(),
            1,
            fin as isize,
            T::one(),
            &mut out,
            fout as isize,
            1,
        );
        let value = Tensor::new(vec![n, fout], out)?;
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Dense { x, w, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::shape("add", sa, sb));
        }
        let av = self.nodes[a.0].value.data();
        let bv = self.nodes[b.0].value.data();
        let out = av.iter().zip(bv).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(sa.to_vec(), out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Concatenates along dimension 1; all other dimensions must agree.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = match xs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return Err(Error::InvalidArgument("concat of zero tensors".into())),
        };
        if first.len() < 2 {
            return Err(Error::shape("concat_channels", &first, &[]));
        }
        let mut channels = 0;
        for v in xs {
            let s = self.shape(*v);
            if s.len() != first.len() || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::shape("concat_channels", &first, s));
            }
            channels += s[1];
        }
        let n = first[0];
        let inner: usize = first[2..].iter().product();
        let mut out = Vec::with_capacity(n * channels * inner);
        for s in 0..n {
            for v in xs {
                let t = &self.nodes[v.0].value;
                let block = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[s * block..(s + 1) * block]);
            }
        }
        let mut shape = first.clone();
        shape[1] = channels;
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(xs);
        Ok(self.push(value, Op::Concat { xs: xs.to_vec() }, rg))
    }

    /// Channels `start..start + len` along dimension 1.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() < 2 || start + len > xs[1] || len == 0 {
            return Err(Error::shape("slice_channels", &xs, &[start, len]));
        }
        let inner: usize = xs[2..].iter().product();
        let src = self.nodes[x.0].value.data();
        let mut out = Vec::with_capacity(xs[0] * len * inner);
        for s in 0..xs[0] {
            let off = (s * xs[1] + start) * inner;
            out.extend_from_slice(&src[off..off + len * inner]);
        }
        let mut shape = xs.clone();
        shape[1] = len;
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::SliceChannels { x, start }, rg))
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        if xs.len() != 4 {
            return Err(Error::shape("global_avg_pool", &xs, &[]));
        }
        let area = xs[2] * xs[3];
        let scale = T::one() / from_usize::<T>(area);
        let out = self.nodes[x.0].value.data().chunks(area).map(|p| p.iter().copied().sum::<T>() * scale).collect();
        let value = Tensor::new(vec![xs[0], xs[1]], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool { x }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let src = &self.nodes[x.0].value;
        if shape.iter().product::<usize>() != src.len() {
            return Err(Error::shape("reshape", src.shape(), &shape));
        }
        let value = Tensor::new(shape, src.data().to_vec())?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape { x }, rg))
    }

    /// `[N, C, H, W] -> [N, C*H*W]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(x, vec![n, rest])
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    ///
    /// Accepts `[N, K]` logits, or `[K]` for a single sample.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.shape(logits).to_vec();
        let (n, k) = match ls.as_slice() {
            [k] => (1, *k),
            [n, k] => (*n, *k),
            _ => return Err(Error::shape("softmax_cross_entropy", &ls, &[labels.len()])),
        };
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(Error::shape("softmax_cross_entropy", &ls, &[labels.len()]));
        }
        let lv = self.nodes[logits.0].value.data();
        let mut probs = vec![T::zero(); n * k];
        let mut total = T::zero();
        for s in 0..n {
            let row = &lv[s * k..(s + 1) * k];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &v) in probs[s * k..(s + 1) * k].iter_mut().zip(row) {
                *p = (v - max).exp();
                z += *p;
            }
            for p in &mut probs[s * k..(s + 1) * k] {
                *p /= z;
            }
            total += max + z.ln() - row[labels[s]];
        }
        let value = Tensor::scalar(total / from_usize::<T>(n));
        let rg = self.any_grad(&[logits]);
        Ok(self.push(value, Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs }, rg))
    }

    /// Mean of squared differences over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (sp, st) = (self.shape(pred), self.shape(target));
        if sp != st {
            return Err(Error::shape("mse", sp, st));
        }
        let pv = self.nodes[pred.0].value.data();
        let tv = self.nodes[target.0].value.data();
        let sum: T = pv.iter().zip(tv).map(|(&p, &t)| (p - t) * (p - t)).sum();
        let value = Tensor::scalar(sum / from_usize::<T>(pv.len()));
        let rg = self.any_grad(&[pred, target]);
        Ok(self.push(value, Op::Mse { pred, target }, rg))
    }

    /// Records an externally defined primitive with its own backward rule.
    pub fn custom(&mut self, name: &'static str, inputs: &[Var], value: Tensor<T>, backward: CustomBackward<T>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(value, Op::Custom { name, inputs: inputs.to_vec(), backward }, rg)
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(contrib) {
                    *a += b;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Afterwards every node that requires a gradient holds one; nodes not
    /// on any path to `loss` hold zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if self.nodes[loss.0].requires_grad {
            self.nodes[loss.0].grad = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            if !matches!(self.nodes[i].op, Op::Leaf) {
                for (v, contrib) in self.node_backward(i, &g) {
                    self.accumulate(v, contrib);
                }
            }
            self.nodes[i].grad = Some(g);
        }
        for node in &mut self.nodes {
            if node.requires_grad && node.grad.is_none() {
                node.grad = Some(vec![T::zero(); node.value.len()]);
            }
        }
        Ok(())
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, i: usize, g: &[T]) -> Vec<(Var, Vec<T>)> {
        let node = &self.nodes[i];
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, k, geom, cols } => {
                let (patch, positions) = (geom.patch(), geom.positions());
                let kv = self.nodes[k.0].value.data();
                if self.needs(*k) {
                    let mut dk = vec![T::zero(); geom.o * patch];
                    for s in 0..geom.n {
                        T::gemm(
                            geom.o,
                            positions,
                            patch,
                            T::one(),
                            &g[s * geom.o * positions..(s + 1) * geom.o * positions],
                            positions as isize,
                            1,
                            &cols[s * patch * positions..(s + 1) * patch * positions],
                            1,
                            positions as isize,
                            T::one(),
                            &mut dk,
                            patch as isize,
                            1,
                        );
                    }
                    out.push((*k, dk));
                }
                if self.needs(*x) {
                    let plane = geom.c * geom.h * geom.w;
                    let mut dx = vec![T::zero(); geom.n * plane];
                    let mut dcol = vec![T::zero(); patch * positions];
                    for s in 0..geom.n {
                        T::gemm(
                            patch,
                            geom.o,
                            positions,
                            T::one(),
                            kv,
                            1,
                            patch as isize,
                            &g[s * geom.o * positions..(s + 1) * geom.o * positions],
                            positions as isize,
                            1,
                            T::zero(),
                            &mut dcol,
                            positions as isize,
                            1,
                        );
                        col2im(&dcol, geom, &mut dx[s * plane..(s + 1) * plane]);
                    }
                    out.push((*x, dx));
                }
            }
            Op::ChannelBias { x, b } => {
                if self.needs(*x) {
                    out.push((*x, g.to_vec()));
                }
                if self.needs(*b) {
                    let s = node.value.shape();
                    let c = s[1];
                    let inner: usize = s[2..].iter().product();
                    let mut db = vec![T::zero(); c];
                    for (j, chunk) in g.chunks(inner).enumerate() {
                        db[j % c] += chunk.iter().copied().sum::<T>();
                    }
                    out.push((*b, db));
                }
            }
            Op::Relu { x } => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&y, &gy)| if y > T::zero() { gy } else { T::zero() })
                    .collect();
                out.push((*x, d));
            }
            Op::MaxPool { x, argmax } => {
                let mut d = vec![T::zero(); self.nodes[x.0].value.len()];
                for (&idx, &gy) in argmax.iter().zip(g) {
                    d[idx] += gy;
                }
                out.push((*x, d));
            }
            Op::Dense { x, w, b } => {
                let xs = self.nodes[x.0].value.shape();
                let (n, fin) = (xs[0], xs[1]);
                let fout = node.value.shape()[1];
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(
                        n,
                        fout,
                        fin,
                        T::one(),
                        g,
                        fout as isize,
                        1,
                        self.nodes[w.0].value.data(),
                        fin as isize,
                        1,
                        T::zero(),
                        &mut dx,
                        fin as isize,
                        1,
                    );
                    out.push((*x, dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(
                        fout,
                        n,
                        fin,
                        T::one(),
                        g,
                        1,
                        fout as isize,
                        self.nodes[x.0].value.data(),
                        fin as isize,
                        1,
                        T::zero(),
                        &mut dw,
                        fin as isize,
                        1,
                    );
                    out.push((*w, dw));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); fout];
                    for row in g.chunks(fout) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    out.push((*b, db));
                }
            }
            Op::Add { a, b } => {
                out.push((*a, g.to_vec()));
                out.push((*b, g.to_vec()));
            }
            Op::Concat { xs } => {
                let shape = node.value.shape();
                let (n, total) = (shape[0], shape[1]);
                let inner: usize = shape[2..].iter().product();
                let mut offset = 0;
                for v in xs {
                    let c = self.nodes[v.0].value.shape()[1];
                    if self.needs(*v) {
                        let mut d = Vec::with_capacity(n * c * inner);
                        for s in 0..n {
                            let off = (s * total + offset) * inner;
                            d.extend_from_slice(&g[off..off + c * inner]);
                        }
                        out.push((*v, d));
                    }
                    offset += c;
                }
            }
            Op::SliceChannels { x, start } => {
                let xs = self.nodes[x.0].value.shape();
                let len = node.value.shape()[1];
                let inner: usize = xs[2..].iter().product();
                let mut d = vec![T::zero(); self.nodes[x.0].value.len()];
                for s in 0..xs[0] {
                    let dst = (s * xs[1] + start) * inner;
                    let src = s * len * inner;
                    d[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                out.push((*x, d));
            }
            Op::GlobalAvgPool { x } => {
                let xs = self.nodes[x.0].value.shape();
                let area = xs[2] * xs[3];
                let scale = T::one() / from_usize::<T>(area);
                let d = g.iter().flat_map(|&gy| std::iter::repeat_n(gy * scale, area)).collect();
                out.push((*x, d));
            }
            Op::Reshape { x } => out.push((*x, g.to_vec())),
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let n = labels.len();
                let k = probs.len() / n;
                let scale = g[0] / from_usize::<T>(n);
                let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                for (s, &l) in labels.iter().enumerate() {
                    d[s * k + l] -= scale;
                }
                out.push((*logits, d));
            }
            Op::Mse { pred, target } => {
                let pv = self.nodes[pred.0].value.data();
                let tv = self.nodes[target.0].value.data();
                let scale = lit::<T>(2.0) * g[0] / from_usize::<T>(pv.len());
                let d: Vec<T> = pv.iter().zip(tv).map(|(&p, &t)| (p - t) * scale).collect();
                if self.needs(*target) {
                    out.push((*target, d.iter().map(|&v| -v).collect()));
                }
                out.push((*pred, d));
            }
            Op::Custom { inputs, backward, .. } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                for (v, d) in inputs.iter().zip(backward(&vals, &node.value, g)) {
                    out.push((*v, d));
                }
            }
        }
        out.retain(|(v, _)| self.needs(*v));
        out
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let positions = g.positions();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut col[row * positions..(row + 1) * positions];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let positions = g.positions();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &col[row * positions..(row + 1) * positions];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn relu_forward() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv_of_ones_is_nine() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let k = g.constant(Tensor::full(vec![1, 1, 3, 3], 1.0));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(g.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv_stride_and_padding_shapes() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(vec![2, 3, 8, 6], 1.0));
        let k = g.constant(Tensor::full(vec![4, 3, 3, 3], 1.0));
        let y = g.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4, 4, 3]);
        // corner sees a 2x2 patch of ones per channel
        assert_eq!(g.value(y).data()[0], 12.0);
    }

    #[test]
    fn uniform_logits_cross_entropy_is_ln4() {
        let mut g = Graph::new();
        let l = g.constant(t(&[4], &[0.0; 4]));
        let loss = g.softmax_cross_entropy(l, &[2]).unwrap();
        assert!((g.value(loss).data()[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn maxpool_picks_maximum() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = g.maxpool2d(x, 2, 2, 0).unwrap();
        assert_eq!(g.value(y).data(), &[4.0]);
    }

    #[test]
    fn mse_gradient_uses_mean_convention() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[3.0]));
        let zero = g.constant(t(&[1], &[0.0]));
        let loss = g.mse(x, zero).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
        assert_eq!(g.grad(loss).unwrap(), &[1.0]);
    }

    #[test]
    fn relu_inactive_unit_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[-2.0]));
        let y = g.relu(x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0]);
    }

    #[test]
    fn unreachable_params_get_zero_grad() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let unused = g.param(t(&[3], &[1.0, 1.0, 1.0]));
        let zero = g.constant(t(&[2], &[0.0, 0.0]));
        let loss = g.mse(x, zero).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(unused).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::<f64>::zeros(vec![2, 3]));
        let b = g.constant(Tensor::<f64>::zeros(vec![3, 2]));
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_fn(vec![2, 1, 2, 2], |i| i as f64));
        let b = g.constant(Tensor::from_fn(vec![2, 3, 2, 2], |i| 100.0 + i as f64));
        let c = g.concat_channels(&[a, b]).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 4, 2, 2]);
        let a2 = g.slice_channels(c, 0, 1).unwrap();
        let b2 = g.slice_channels(c, 1, 3).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));
    }

    #[test]
    fn tape_is_topologically_ordered() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(vec![1, 1, 4, 4], |i| i as f64 - 7.0));
        let k = g.param(Tensor::full(vec![2, 1, 3, 3], 0.1));
        let y = g.conv2d(x, k, 1, 1).unwrap();
        let y = g.relu(y).unwrap();
        let y = g.global_avg_pool(y).unwrap();
        let _ = g.softmax_cross_entropy(y, &[1]).unwrap();
        for (i, (_, inputs)) in g.tape().iter().enumerate() {
            assert!(inputs.iter().all(|v| v.index() < i));
        }
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut g = Graph::new();
            let x = g.param(Tensor::from_fn(vec![2, 2, 5, 5], |i| ((i * 7) % 11) as f64 - 5.0));
            let k = g.param(Tensor::from_fn(vec![3, 2, 3, 3], |i| ((i * 3) % 5) as f64 * 0.1));
            let y = g.conv2d(x, k, 1, 1).unwrap();
            let y = g.maxpool2d(y, 2, 2, 0).unwrap();
            let y = g.global_avg_pool(y).unwrap();
            let loss = g.softmax_cross_entropy(y, &[0, 2]).unwrap();
            g.backward(loss).unwrap();
            (g.grad(x).unwrap().to_vec(), g.grad(k).unwrap().to_vec())
        };
        let (a, b) = (run(), run());
        assert_eq!(
            a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(
            a.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.1.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
