//! Central finite-difference verification of the backward kernels, run in
//! `f64`.

use rand::Rng as _;

use crate::error::Result;
use crate::layers::LayerSpec;
use crate::model::Model;
use crate::tape::{LossKind, Tape};
use crate::tensor::Tensor;

const STEP: f64 = 1e-6;
/// Coordinates probed per tensor; all of them when the tensor is smaller.
const PROBES: usize = 48;
/// Gradient norms below this are treated as zero.
const ZERO_FLOOR: f64 = 1e-6;

/// Worst relative error seen across trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub trials: usize,
    pub max_rel_err: f64,
}

fn random_tensor(rng: &mut impl rand::Rng, shape: Vec<usize>, kink_safe: bool) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mut v: f64 = rng.gen_range(-1.0..1.0);
            // keep away from the relu kink so the finite difference is smooth
            if kink_safe && v.abs() < 0.05 {
                v += 0.1f64.copysign(v);
            }
            v
        })
        .collect();
    Tensor::new(shape, data).expect("shape")
}

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
    // gradients that vanish analytically (e.g. a bias under a
    // shift-invariant loss) are compared against an absolute floor
    diff / scale.max(ZERO_FLOOR)
}

/// Loss of `model` on `x` against `target`, with the analytic gradients of
/// the input and every parameter.
fn eval(model: &Model<f64>, x: &Tensor<f64>, target: &Tensor<f64>, kind: LossKind, grads: bool) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let (out, params) = model.forward_on(&mut tape, xv, true)?;
    let loss = tape.loss(out, target, kind)?;
    let value = tape.value(loss).data()[0];
    if !grads {
        return Ok((value, vec![]));
    }
    tape.backward(loss)?;
    let mut all = vec![tape.grad(xv).expect("input grad").to_vec()];
    all.extend(params.iter().map(|p| tape.grad(*p).expect("param grad").to_vec()));
    Ok((value, all))
}

/// Checks one network (input and parameter gradients) under `kind`.
pub fn check_model(layers: &[LayerSpec], input: [usize; 3], batch: usize, kind: LossKind, trials: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = crate::rng(seed);
    let mut worst = 0.0f64;
    let kink_safe = layers.iter().any(|l| matches!(l, LayerSpec::Relu | LayerSpec::DenseBlock { .. }));
    for trial in 0..trials {
        let model = Model::<f64>::new(layers.to_vec(), input, seed.wrapping_add(trial as u64))?;
        let mut xs = vec![batch];
        xs.extend(input);
        let x = random_tensor(&mut rng, xs, kink_safe);
        let mut ys = vec![batch];
        ys.extend(model.output_shape());
        let target = random_tensor(&mut rng, ys, false);
        let (_, analytic) = eval(&model, &x, &target, kind, true)?;

        // slot 0 is the input, then the parameters in order
        for (slot, grad) in analytic.iter().enumerate() {
            let n = grad.len();
            let coords: Vec<usize> = if n <= PROBES {
                (0..n).collect()
            } else {
                (0..PROBES).map(|_| rng.gen_range(0..n)).collect()
            };
            let mut numeric = Vec::with_capacity(coords.len());
            for &i in &coords {
                let f = |delta: f64| -> Result<f64> {
                    let mut m = model.clone();
                    let mut xp = x.clone();
                    if slot == 0 {
                        xp.data_mut()[i] += delta;
                    } else {
                        m.params_mut()[slot - 1].data_mut()[i] += delta;
                    }
                    Ok(eval(&m, &xp, &target, kind, false)?.0)
                };
                numeric.push((f(STEP)? - f(-STEP)?) / (2.0 * STEP));
            }
            let picked: Vec<f64> = coords.iter().map(|&i| grad[i]).collect();
            worst = worst.max(rel_err(&picked, &numeric));
        }
    }
    Ok(GradCheck {
        trials,
        max_rel_err: worst,
    })
}

/// Checks a single layer on random 2-channel 8x8 inputs, batch 2.
pub fn check_layer(layer: LayerSpec, kind: LossKind, trials: usize, seed: u64) -> Result<GradCheck> {
    check_model(&[layer], [2, 8, 8], 2, kind, trials, seed)
}

/// Checks a loss directly against its prediction: the "network" is a
/// single identity 1x1 convolution, so the input gradient is the loss
/// gradient.
pub fn check_loss(kind: LossKind, trials: usize, seed: u64) -> Result<GradCheck> {
    let mut rng = crate::rng(seed);
    let mut worst = 0.0f64;
    let ident = [LayerSpec::Conv2d { cin: 1, cout: 1, kernel: 1 }];
    for _ in 0..trials {
        let model = Model::from_parts(
            ident.to_vec(),
            [1, 8, 8],
            vec![Tensor::new(vec![1, 1, 1, 1], vec![1.0])?, Tensor::new(vec![1], vec![0.0])?],
        )?;
        let x = random_tensor(&mut rng, vec![2, 1, 8, 8], false);
        let target = random_tensor(&mut rng, vec![2, 1, 8, 8], false);
        let (_, analytic) = eval(&model, &x, &target, kind, true)?;
        let mut numeric = Vec::with_capacity(x.numel());
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += STEP;
            let up = eval(&model, &xp, &target, kind, false)?.0;
            xp.data_mut()[i] -= 2.0 * STEP;
            let down = eval(&model, &xp, &target, kind, false)?.0;
            numeric.push((up - down) / (2.0 * STEP));
        }
        worst = worst.max(rel_err(&analytic[0], &numeric));
    }
    Ok(GradCheck {
        trials,
        max_rel_err: worst,
    })
}

/// One instance of every layer kind, sized for 2-channel 8x8 inputs.
pub fn all_layer_kinds() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv2d { cin: 2, cout: 3, kernel: 3 },
        LayerSpec::Conv2d { cin: 2, cout: 2, kernel: 1 },
        LayerSpec::AvgPool2d { window: 2 },
        LayerSpec::AvgPool2d { window: 4 },
        LayerSpec::Relu,
        LayerSpec::UpsampleBilinear2x,
        LayerSpec::TransposedConv2x { cin: 2, cout: 3 },
        LayerSpec::DenseBlock { cin: 2, growth: 2 },
        LayerSpec::Linear { channels: 2, height: 8, width: 8 },
    ]
}
