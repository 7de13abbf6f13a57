use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::spec::{denormalize, Arch, Head, ModelSpec};
use crate::scalar::{lit, Scalar};

/// Output of a single forward pass, in physical units for regression.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Class { class: usize, logits: Vec<f64> },
    PositionForce { position_mm: f64, force_n: f64 },
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// Parameter slot: name, shape and He fan-in (0 for zero-initialized biases).
struct Slot {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
}

#[derive(Default)]
struct Layout {
    slots: Vec<Slot>,
}

impl Layout {
    fn conv(&mut self, name: &str, out: usize, inp: usize, k: usize) {
        self.slots.push(Slot { name: format!("{name}.w"), shape: vec![out, inp, k, k], fan_in: inp * k * k });
        self.slots.push(Slot { name: format!("{name}.b"), shape: vec![out], fan_in: 0 });
    }

    fn dense(&mut self, name: &str, out: usize, inp: usize) {
        self.slots.push(Slot { name: format!("{name}.w"), shape: vec![out, inp], fan_in: inp });
        self.slots.push(Slot { name: format!("{name}.b"), shape: vec![out], fan_in: 0 });
    }
}

/// Channel widths of the conv-relu-pool stages for base width `w`.
fn stage_widths(arch: Arch, w: usize) -> Vec<usize> {
    match arch {
        Arch::Cnn5 => vec![w, 2 * w, 2 * w, 4 * w],
        _ => vec![w, 2 * w],
    }
}

const RESIDUAL_BLOCKS: usize = 3;
const INCEPTION_BLOCKS: usize = 2;

/// Convolutional learner with parameters stored by name.
///
/// Shapes for a `3 x H x W` input and base width `w` (default 8), with every
/// 3x3 convolution padded to keep its size and every pool halving it:
///
/// * `Cnn3`: conv(w) pool, conv(2w) pool, dense
/// * `Cnn5`: conv(w) pool, conv(2w) pool, conv(2w) pool, conv(4w) pool, dense
/// * `MicroResNet`: the `Cnn3` trunk as stem, three blocks
///   `x + conv(relu(conv(x)))` at 2w channels, global average pool, dense
/// * `MicroInception`: the same stem, two inception blocks with 1x1, 3x3, 5x5
///   and pool branches of w channels each, global average pool, dense
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: ModelSpec,
    input_shape: [usize; 3],
    input_norm: InputNorm,
    params: Vec<NamedTensor<T>>,
}

/// Fixed per-channel standardization applied before the first convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    pub fn identity(channels: usize) -> Self {
        InputNorm { mean: vec![0.0; channels], std: vec![1.0; channels] }
    }

    /// Channel statistics of `[C, H, W]` planes; a flat channel keeps std 1.
    pub fn fit<'a, T: Scalar>(channels: usize, planes: impl IntoIterator<Item = &'a [T]>) -> Self {
        let mut sum = vec![0.0; channels];
        let mut sq = vec![0.0; channels];
        let mut n = 0usize;
        for plane in planes {
            let per = plane.len() / channels;
            for (c, chunk) in plane.chunks(per).enumerate() {
                for v in chunk {
                    let v = v.to_f64().unwrap();
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            n += per;
        }
        if n == 0 {
            return Self::identity(channels);
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let s = (q / n as f64 - m * m).max(0.0).sqrt();
                if s > 1e-6 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        InputNorm { mean, std }
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.std.iter().all(|&s| s == 1.0)
    }
}

impl<T: Scalar> Network<T> {
    /// Builds a freshly initialized network for `[channels, height, width]` inputs.
    pub fn build(spec: &ModelSpec, input_shape: [usize; 3]) -> Result<Self> {
        let layout = Self::layout(spec, input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed());
        let params = layout
            .slots
            .into_iter()
            .map(|slot| {
                let len: usize = slot.shape.iter().product();
                let data: Vec<T> = if slot.fan_in == 0 {
                    let fill = if spec.head == Head::RegressPosForce && slot.name == "fc.b" { 0.5 } else { 0.0 };
                    vec![lit(fill); len]
                } else {
                    let normal = Normal::new(0.0, (2.0 / slot.fan_in as f64).sqrt()).unwrap();
                    (0..len).map(|_| lit(normal.sample(&mut rng))).collect()
                };
                Ok(NamedTensor { name: slot.name, value: Tensor::new(slot.shape, data)? })
            })
            .collect::<Result<_>>()?;
        Ok(Network { spec: spec.clone(), input_shape, input_norm: InputNorm::identity(input_shape[0]), params })
    }

    /// Reassembles a network from stored parameters, checking names and shapes.
    pub fn from_params(spec: &ModelSpec, input_shape: [usize; 3], params: Vec<NamedTensor<T>>) -> Result<Self> {
        let layout = Self::layout(spec, input_shape)?;
        if layout.slots.len() != params.len() {
            return Err(Error::Dimension { expected: layout.slots.len(), got: params.len() });
        }
        for (slot, p) in layout.slots.iter().zip(&params) {
            if slot.name != p.name || slot.shape != p.value.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    slot.name,
                    slot.shape
                )));
            }
        }
        Ok(Network { spec: spec.clone(), input_shape, input_norm: InputNorm::identity(input_shape[0]), params })
    }

    fn layout(spec: &ModelSpec, input_shape: [usize; 3]) -> Result<Layout> {
        spec.validate()?;
        if !spec.arch.is_network() {
            return Err(Error::InvalidArgument(format!("{} is not a network", spec.arch.display_name())));
        }
        let [c, h, w] = input_shape;
        let base = spec.get("width").unwrap_or(8.0) as usize;
        let stages = stage_widths(spec.arch, base);
        if h >> stages.len() == 0 || w >> stages.len() == 0 || c == 0 {
            return Err(Error::InvalidArgument(format!(
                "input {c}x{h}x{w} too small for {} pooling stages",
                stages.len()
            )));
        }
        let out = spec.head.outputs();
        let mut l = Layout::default();
        let mut prev = c;
        for (i, &ch) in stages.iter().enumerate() {
            l.conv(&format!("conv{}", i + 1), ch, prev, 3);
            prev = ch;
        }
        match spec.arch {
            Arch::Cnn3 | Arch::Cnn5 => {
                let (fh, fw) = (h >> stages.len(), w >> stages.len());
                l.dense("fc", out, prev * fh * fw);
            }
            Arch::MicroResNet => {
                for b in 0..RESIDUAL_BLOCKS {
                    l.conv(&format!("res{b}.conv1"), prev, prev, 3);
                    l.conv(&format!("res{b}.conv2"), prev, prev, 3);
                }
                l.dense("fc", out, prev);
            }
            Arch::MicroInception => {
                let q = base;
                for b in 0..INCEPTION_BLOCKS {
                    l.conv(&format!("inc{b}.b1"), q, prev, 1);
                    l.conv(&format!("inc{b}.b3r"), q, prev, 1);
                    l.conv(&format!("inc{b}.b3"), q, q, 3);
                    l.conv(&format!("inc{b}.b5r"), q.div_ceil(2), prev, 1);
                    l.conv(&format!("inc{b}.b5"), q, q.div_ceil(2), 5);
                    l.conv(&format!("inc{b}.bp"), q, prev, 1);
                    prev = 4 * q;
                }
                l.dense("fc", out, prev);
            }
            _ => unreachable!(),
        }
        Ok(l)
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.input_norm
    }

    pub fn with_input_norm(mut self, norm: InputNorm) -> Result<Self> {
        let c = self.input_shape[0];
        if norm.mean.len() != c || norm.std.len() != c {
            return Err(Error::Dimension { expected: c, got: norm.mean.len().min(norm.std.len()) });
        }
        if norm.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || norm.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument("input normalization must be finite with positive std".into()));
        }
        self.input_norm = norm;
        Ok(self)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn params(&self) -> &[NamedTensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [NamedTensor<T>] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Adds the parameters to `g`, trainable or frozen.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Vec<Var> {
        self.params.iter().map(|p| g.leaf(p.value.clone(), trainable)).collect()
    }

    /// Forward pass of a `[N, C, H, W]` batch; returns `[N, outputs]`.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, params: &[Var]) -> Result<Var> {
        self.forward_traced(g, x, params, &mut |_, _| {})
    }

    /// Like [`Network::forward`], reporting named intermediate activations.
    fn forward_traced(
        &self,
        g: &mut Graph<T>,
        x: Var,
        params: &[Var],
        trace: &mut dyn FnMut(&str, Var),
    ) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::Dimension { expected: self.params.len(), got: params.len() });
        }
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 4 || shape[1..] != self.input_shape {
            let expected = [&[shape.first().copied().unwrap_or(1)][..], &self.input_shape[..]].concat();
            return Err(Error::shape("network input", &expected, &shape));
        }
        let mut p = params.iter().copied();
        let mut next = move || p.next().expect("layout and parameter list agree");
        let stages = stage_widths(self.spec.arch, 0).len();
        let mut h = self.normalize_input(g, x)?;
        for _ in 0..stages {
            h = conv_relu(g, h, next(), next(), 1)?;
            h = g.maxpool2d(h, 2, 2, 0)?;
        }
        trace("stem", h);
        let h = match self.spec.arch {
            Arch::Cnn3 | Arch::Cnn5 => g.flatten(h)?,
            Arch::MicroResNet => {
                for _ in 0..RESIDUAL_BLOCKS {
                    h = residual_block(g, h, [next(), next(), next(), next()])?;
                }
                g.global_avg_pool(h)?
            }
            Arch::MicroInception => {
                for b in 0..INCEPTION_BLOCKS {
                    let b1 = conv_relu(g, h, next(), next(), 0)?;
                    let r3 = conv_relu(g, h, next(), next(), 0)?;
                    let b3 = conv_relu(g, r3, next(), next(), 1)?;
                    let r5 = conv_relu(g, h, next(), next(), 0)?;
                    let b5 = conv_relu(g, r5, next(), next(), 2)?;
                    let pooled = g.maxpool2d(h, 3, 1, 1)?;
                    let bp = conv_relu(g, pooled, next(), next(), 0)?;
                    for (name, v) in [("1x1", b1), ("3x3", b3), ("5x5", b5), ("pool", bp)] {
                        trace(&format!("inc{b}.{name}"), v);
                    }
                    h = g.concat_channels(&[b1, b3, b5, bp])?;
                }
                g.global_avg_pool(h)?
            }
            _ => unreachable!(),
        };
        g.dense(h, next(), next())
    }

    /// `(x - mean) / std` per channel, as a frozen 1x1 convolution.
    fn normalize_input(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        if self.input_norm.is_identity() {
            return Ok(x);
        }
        let c = self.input_shape[0];
        let mut k = vec![T::zero(); c * c];
        for i in 0..c {
            k[i * c + i] = lit(1.0 / self.input_norm.std[i]);
        }
        let bias = (0..c).map(|i| lit(-self.input_norm.mean[i] / self.input_norm.std[i])).collect();
        let k = g.constant(Tensor::new(vec![c, c, 1, 1], k)?);
        let b = g.constant(Tensor::new(vec![c], bias)?);
        let y = g.conv2d(x, k, 1, 0)?;
        g.channel_bias(y, b)
    }

    /// Raw head outputs (logits or normalized targets) for a `[N, C, H, W]` batch.
    pub fn predict_batch(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, &params)?;
        Ok(g.value(out).clone())
    }

    /// Single-image prediction for a `[C, H, W]` tensor.
    pub fn predict(&self, img: &Tensor<T>) -> Result<Prediction> {
        let mut shape = vec![1];
        shape.extend_from_slice(img.shape());
        let out = self.predict_batch(&img.clone().reshape(shape)?)?;
        let values: Vec<f64> = out.data().iter().map(|v| v.to_f64().unwrap()).collect();
        Ok(self.interpret(&values))
    }

    /// Converts one row of head outputs into a prediction.
    pub fn interpret(&self, outputs: &[f64]) -> Prediction {
        match self.spec.head {
            Head::Classify4 => Prediction::Class { class: argmax(outputs), logits: outputs.to_vec() },
            Head::RegressPosForce => {
                let (position_mm, force_n) = denormalize(outputs[0], outputs[1]);
                Prediction::PositionForce { position_mm, force_n }
            }
        }
    }

    /// Mean squared activation of each inception branch (1x1, 3x3, 5x5, pool)
    /// per block, for a single `[C, H, W]` input.
    pub fn branch_energies(&self, img: &Tensor<T>) -> Result<Vec<[f64; 4]>> {
        if self.spec.arch != Arch::MicroInception {
            return Err(Error::InvalidArgument("branch energies need an inception network".into()));
        }
        let mut g = Graph::new();
        let params = self.bind(&mut g, false);
        let mut shape = vec![1];
        shape.extend_from_slice(img.shape());
        let x = g.constant(img.clone().reshape(shape)?);
        let mut taps = Vec::new();
        self.forward_traced(&mut g, x, &params, &mut |name, v| {
            if name.starts_with("inc") {
                taps.push(v);
            }
        })?;
        let energy = |v: Var| {
            let t = g.value(v);
            t.data().iter().map(|x| x.to_f64().unwrap().powi(2)).sum::<f64>() / t.len() as f64
        };
        Ok(taps.chunks(4).map(|c| [energy(c[0]), energy(c[1]), energy(c[2]), energy(c[3])]).collect())
    }
}

fn conv_relu<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var, pad: usize) -> Result<Var> {
    let y = g.conv2d(x, w, 1, pad)?;
    let y = g.channel_bias(y, b)?;
    g.relu(y)
}

/// `x + conv2(relu(conv1(x)))` with 3x3 same-size convolutions.
/// Parameters are `[conv1.w, conv1.b, conv2.w, conv2.b]`.
pub fn residual_block<T: Scalar>(g: &mut Graph<T>, x: Var, p: [Var; 4]) -> Result<Var> {
    let h = conv_relu(g, x, p[0], p[1], 1)?;
    let h = g.conv2d(h, p[2], 1, 1)?;
    let h = g.channel_bias(h, p[3])?;
    g.add(x, h)
}
