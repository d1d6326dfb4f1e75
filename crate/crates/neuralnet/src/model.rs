use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NnError, Result};
use crate::layers::LayerSpec;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Sequential network: layer topology plus one tensor per trainable slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    layers: Vec<LayerSpec>,
    input: [usize; 3],
    params: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
}

/// Which network a model was built as, kept in checkpoint metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum Architecture {
    InterNet { variant: u8, bin_factor: usize, channels: usize },
    SpeckleNet { channels: usize },
    Custom,
}

impl<T: Scalar> Model<T> {
    /// Validates the topology against `input = [c, h, w]` and initializes
    /// weights fan-in-scaled uniform from `seed`; biases likewise with the
    /// `1/sqrt(fan_in)` bound.
    pub fn new(layers: Vec<LayerSpec>, input: [usize; 3], seed: u64) -> Result<Self> {
        let mut rng = speckle_core::rng::seeded(seed);
        let mut params = Vec::new();
        for layer in &layers {
            for (shape, fan_in) in layer.param_shapes().into_iter().zip(layer.fan_ins()) {
                let is_bias = shape.len() == 1;
                let bound = if is_bias {
                    1.0 / (fan_in as f64).sqrt()
                } else {
                    (6.0 / fan_in as f64).sqrt()
                };
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
                    .collect();
                params.push(Tensor::new(shape, data)?);
            }
        }
        Self::from_parts(layers, input, params)
    }

    /// Assembles a model from explicit parameters, checking every shape.
    pub fn from_parts(layers: Vec<LayerSpec>, input: [usize; 3], params: Vec<Tensor<T>>) -> Result<Self> {
        let mut shape = input;
        let mut expected = Vec::new();
        for layer in &layers {
            layer.validate()?;
            shape = layer.output_shape(shape)?;
            expected.extend(layer.param_shapes());
        }
        if expected.len() != params.len() {
            return Err(NnError::Config(format!(
                "topology needs {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (e, p) in expected.iter().zip(&params) {
            if e.as_slice() != p.shape() {
                return Err(shape_err("parameter", e, p.shape()));
            }
        }
        let grads = vec![None; params.len()];
        Ok(Self {
            layers,
            input,
            params,
            grads,
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// `[c, h, w]` of one input sample.
    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.layers
            .iter()
            .try_fold(self.input, |s, l| l.output_shape(s))
            .expect("validated at construction")
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn grads(&self) -> &[Option<Vec<T>>] {
        &self.grads
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Element type conversion, e.g. to `f64` for gradient checks.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            layers: self.layers.clone(),
            input: self.input,
            params: self.params.iter().map(Tensor::cast).collect(),
            grads: vec![None; self.params.len()],
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [c, h, w] = self.input;
        match *shape {
            [n, sc, sh, sw] if n > 0 && [sc, sh, sw] == [c, h, w] => Ok(()),
            _ => Err(shape_err("input", &[shape.first().copied().unwrap_or(1), c, h, w], shape)),
        }
    }

    /// Records the forward pass of `x` on `tape`. Returns the output node and
    /// the parameter nodes (trainable when `train` is set).
    pub fn forward_on(&self, tape: &mut Tape<T>, x: Var, train: bool) -> Result<(Var, Vec<Var>)> {
        self.check_input(tape.value(x).shape())?;
        let param_vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| if train { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        let mut slot = 0;
        let mut h = x;
        for layer in &self.layers {
            let p = &param_vars[slot..slot + layer.param_shapes().len()];
            slot += p.len();
            h = match *layer {
                LayerSpec::Conv2d { .. } => tape.conv2d(h, p[0], p[1])?,
                LayerSpec::AvgPool2d { window } => tape.avg_pool(h, window)?,
                LayerSpec::Relu => tape.relu(h),
                LayerSpec::UpsampleBilinear2x => tape.upsample2x(h)?,
                LayerSpec::TransposedConv2x { .. } => tape.tconv2x(h, p[0], p[1])?,
                LayerSpec::DenseBlock { .. } => {
                    let t = tape.tconv2x(h, p[0], p[1])?;
                    let t = tape.relu(t);
                    let u = tape.conv2d(t, p[2], p[3])?;
                    let u = tape.relu(u);
                    tape.concat(t, u)?
                }
                LayerSpec::Linear { channels, height, width } => {
                    tape.linear(h, p[0], p[1], &[channels, height, width])?
                }
            };
        }
        Ok((h, param_vars))
    }

    /// Inference on a `[n, c, h, w]` batch.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let (y, _) = self.forward_on(&mut tape, x, false)?;
        Ok(tape.value(y).clone())
    }

    /// Adds the tape's parameter gradients into the model's accumulators.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, param_vars: &[Var]) -> Result<()> {
        if param_vars.len() != self.params.len() {
            return Err(NnError::Config("parameter handle count mismatch".into()));
        }
        for (i, v) in param_vars.iter().enumerate() {
            let g = tape.grad(*v).ok_or(NnError::NoGradient(i))?;
            match &mut self.grads[i] {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(g.to_vec()),
            }
        }
        Ok(())
    }

    /// Overwrites the accumulated gradient of parameter `index`.
    pub fn set_grad(&mut self, index: usize, grad: Vec<T>) -> Result<()> {
        let n = self.params.get(index).map(Tensor::numel).ok_or_else(|| NnError::Config(format!("no parameter {index}")))?;
        if grad.len() != n {
            return Err(shape_err("gradient", &[n], &[grad.len()]));
        }
        self.grads[index] = Some(grad);
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Takes the accumulated gradients, failing if any parameter lacks one.
    pub(crate) fn take_grads(&mut self) -> Result<Vec<Vec<T>>> {
        if let Some(i) = self.grads.iter().position(Option::is_none) {
            return Err(NnError::NoGradient(i));
        }
        Ok(self.grads.iter_mut().map(|g| g.take().expect("checked")).collect())
    }
}

fn check_channels(channels: usize) -> Result<()> {
    if channels < 4 {
        return Err(NnError::Config(format!("channels must be >= 4, got {channels}")));
    }
    Ok(())
}

/// InterNet topology mapping a `(side) x (side)` binned raster to
/// `(side * n) x (side * n)`.
///
/// Encoder: two 3x3 conv+relu, one 2x average pool, then a fully connected
/// map over the pooled features. Decoder: `log2(n) + 1` stages of either
/// bilinear 2x + 3x3 conv + relu (variant 1) or a dense block around a
/// transposed conv (variant 2), then a 1x1 conv to one channel.
pub fn internet_layers(variant: u8, n: usize, channels: usize, side: usize) -> Result<Vec<LayerSpec>> {
    if !n.is_power_of_two() || !(4..=32).contains(&n) {
        return Err(NnError::Config(format!("bin factor {n} must be a power of two in [4, 32]")));
    }
    if !matches!(variant, 1 | 2) {
        return Err(NnError::Config(format!("InterNet variant must be 1 or 2, got {variant}")));
    }
    check_channels(channels)?;
    if side < 2 || !side.is_multiple_of(2) {
        return Err(NnError::Config(format!("input side {side} must be even")));
    }
    let c = channels;
    let m = side / 2;
    let mut layers = vec![
        LayerSpec::Conv2d { cin: 1, cout: c, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { cin: c, cout: c, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::AvgPool2d { window: 2 },
        LayerSpec::Linear {
            channels: c,
            height: m,
            width: m,
        },
    ];
    let stages = n.trailing_zeros() as usize + 1;
    let mut cur = c;
    for _ in 0..stages {
        if variant == 1 {
            layers.push(LayerSpec::UpsampleBilinear2x);
            layers.push(LayerSpec::Conv2d { cin: cur, cout: c, kernel: 3 });
            layers.push(LayerSpec::Relu);
            cur = c;
        } else {
            layers.push(LayerSpec::DenseBlock { cin: cur, growth: c });
            cur = 2 * c;
        }
    }
    layers.push(LayerSpec::Conv2d { cin: cur, cout: 1, kernel: 1 });
    Ok(layers)
}

pub fn build_internet<T: Scalar>(variant: u8, n: usize, channels: usize, side: usize, seed: u64) -> Result<Model<T>> {
    Model::new(internet_layers(variant, n, channels, side)?, [1, side, side], seed)
}

/// SpeckleNet topology for `side x side` speckle to `side x side` digit:
/// two conv+relu+pool stages and a further pool to `side / 8`, a fully
/// connected map with relu, then three bilinear 2x stages (the last two
/// followed by conv+relu) and a 1x1 output conv.
pub fn specklenet_layers(channels: usize, side: usize) -> Result<Vec<LayerSpec>> {
    check_channels(channels)?;
    if side < 8 || !side.is_multiple_of(8) {
        return Err(NnError::Config(format!("SpeckleNet input side {side} must be a multiple of 8")));
    }
    let c = channels;
    let m = side / 8;
    Ok(vec![
        LayerSpec::Conv2d { cin: 1, cout: c, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::AvgPool2d { window: 2 },
        LayerSpec::Conv2d { cin: c, cout: c, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::AvgPool2d { window: 2 },
        LayerSpec::AvgPool2d { window: 2 },
        LayerSpec::Linear {
            channels: c,
            height: m,
            width: m,
        },
        LayerSpec::Relu,
        LayerSpec::UpsampleBilinear2x,
        LayerSpec::UpsampleBilinear2x,
        LayerSpec::Conv2d { cin: c, cout: c, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::UpsampleBilinear2x,
        LayerSpec::Conv2d { cin: c, cout: c, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { cin: c, cout: 1, kernel: 1 },
    ])
}

pub fn build_specklenet<T: Scalar>(channels: usize, side: usize, seed: u64) -> Result<Model<T>> {
    Model::new(specklenet_layers(channels, side)?, [1, side, side], seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn internet_shape_contract() {
        let m = build_internet::<f32>(1, 4, 8, 16, 1).unwrap();
        assert_eq!(m.output_shape(), [1, 64, 64]);
        let x = Tensor::new(vec![2, 1, 16, 16], (0..512).map(|v| (v % 13) as f32 / 13.0).collect()).unwrap();
        let y = m.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 1, 64, 64]);
        assert!(y.is_finite());
    }

    #[test]
    fn internet_rejects_bad_factor() {
        for n in [2, 6, 64] {
            assert!(build_internet::<f32>(1, n, 8, 16, 1).is_err());
        }
        assert!(build_internet::<f32>(3, 4, 8, 16, 1).is_err());
    }

    #[test]
    fn dense_variant_has_more_parameters() {
        for c in [4, 8, 12] {
            let v1 = build_internet::<f32>(1, 4, c, 16, 0).unwrap();
            let v2 = build_internet::<f32>(2, 4, c, 16, 0).unwrap();
            assert!(v2.param_count() > v1.param_count());
        }
    }

    #[test]
    fn desk_networks_fit_the_parameter_budget() {
        // conv 1->12, conv 12->12, linear over 12x8x8, three decoder convs, 1x1 head
        let by_hand = (9 * 12 + 12) + (9 * 144 + 12) + (768 * 768 + 768) + 3 * (9 * 144 + 12) + 13;
        assert_eq!(build_internet::<f32>(1, 4, 12, 16, 0).unwrap().param_count(), by_hand);
        for m in [build_internet::<f32>(2, 4, 12, 16, 0).unwrap(), build_specklenet::<f32>(12, 64, 0).unwrap()] {
            assert!(m.param_count() < 1_000_000, "{}", m.param_count());
        }
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let m = build_internet::<f32>(1, 4, 4, 16, 1).unwrap();
        let x = Tensor::<f32>::zeros(vec![1, 1, 8, 8]);
        assert!(matches!(m.forward(&x), Err(NnError::Shape { .. })));
    }

    #[test]
    fn specklenet_contract() {
        let a = build_specklenet::<f32>(4, 32, 1).unwrap();
        let b = build_specklenet::<f32>(4, 32, 2).unwrap();
        assert_ne!(a.params(), b.params());
        let x = Tensor::new(vec![1, 1, 32, 32], (0..1024).map(|v| ((v * 7) % 11) as f32).collect()).unwrap();
        let y1 = a.forward(&x).unwrap();
        assert_eq!(y1.shape(), &[1, 1, 32, 32]);
        assert_eq!(y1, a.forward(&x).unwrap());
    }
}
