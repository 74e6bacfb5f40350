//! Central finite-difference verification of analytic gradients. Runs in
//! f64 throughout; finite differences are unreliable at lower precision.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{Context, Layer};
use crate::losses::cross_entropy;
use crate::model::MtlModel;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8) per checked
    /// coordinate, in parameter order.
    pub rel_errors: Vec<f64>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().cloned().fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn forward_sequence(
    layers: &[Layer],
    input: &Tensor,
) -> Result<(Tensor, Vec<Context>, Option<(usize, Vec<usize>)>)> {
    let batch = input.shape()[0];
    let mut current = input.clone();
    let mut ctxs = Vec::new();
    let mut flatten: Option<(usize, Vec<usize>)> = None;
    for (i, layer) in layers.iter().enumerate() {
        if matches!(layer, Layer::Linear { .. }) && current.rank() == 4 {
            let shape = current.shape().to_vec();
            let flat: usize = shape[1..].iter().product();
            current = current.reshape(&[batch, flat])?;
            flatten = Some((i, shape));
        }
        let (out, ctx) = layer.forward(&current)?;
        ctxs.push(ctx);
        current = out;
    }
    Ok((current, ctxs, flatten))
}

fn sequence_loss(layers: &[Layer], input: &Tensor, targets: &[usize]) -> Result<f64> {
    let (logits, _, _) = forward_sequence(layers, input)?;
    Ok(cross_entropy(&logits, targets)?.loss)
}

fn sequence_param_grads(
    layers: &[Layer],
    input: &Tensor,
    targets: &[usize],
) -> Result<Vec<Tensor>> {
    let (logits, ctxs, flatten) = forward_sequence(layers, input)?;
    let ce = cross_entropy(&logits, targets)?;
    let mut grads_rev: Vec<Tensor> = Vec::new();
    let mut current = ce.grad;
    for (i, (layer, ctx)) in layers.iter().zip(&ctxs).enumerate().rev() {
        let g = layer.backward(ctx, &current)?;
        if let Some(b) = g.bias {
            grads_rev.push(b);
        }
        if let Some(w) = g.weight {
            grads_rev.push(w);
        }
        current = g.input;
        if let Some((at, shape)) = &flatten {
            if *at == i {
                current = current.reshape(shape)?;
            }
        }
    }
    grads_rev.reverse();
    Ok(grads_rev)
}

/// Exhaustive finite-difference check of every parameter of a small layer
/// sequence ending in cross-entropy. Intended for networks under ~10^4
/// parameters.
pub fn grad_check_sequence(
    layers: &mut Vec<Layer>,
    input: &Tensor,
    targets: &[usize],
    h: f64,
) -> Result<GradCheckReport> {
    let analytic = sequence_param_grads(layers, input, targets)?;
    let mut rel_errors = Vec::new();
    let n_params = layers.iter().map(|l| l.parameters().len()).sum::<usize>();
    assert_eq!(analytic.len(), n_params);
    let mut param_idx = 0;
    for li in 0..layers.len() {
        let n_tensors = layers[li].parameters().len();
        for ti in 0..n_tensors {
            let len = layers[li].parameters()[ti].len();
            for ci in 0..len {
                let original = layers[li].parameters()[ti].data()[ci];
                layers[li].parameters_mut()[ti].data_mut()[ci] = original + h;
                let plus = sequence_loss(layers, input, targets)?;
                layers[li].parameters_mut()[ti].data_mut()[ci] = original - h;
                let minus = sequence_loss(layers, input, targets)?;
                layers[li].parameters_mut()[ti].data_mut()[ci] = original;
                let numeric = (plus - minus) / (2.0 * h);
                rel_errors.push(relative_error(analytic[param_idx].data()[ci], numeric));
            }
            param_idx += 1;
        }
    }
    let checked = rel_errors.len();
    Ok(GradCheckReport {
        rel_errors,
        checked,
    })
}

/// Finite-difference check of a model under an arbitrary scalar loss,
/// sampling a seeded subset of coordinates per parameter tensor. `loss`
/// must hold any data-dependent constants (like the batch factor) fixed.
pub fn grad_check_sampled<F>(
    model: &mut MtlModel,
    loss: F,
    analytic: &[Tensor],
    samples_per_tensor: usize,
    seed: u64,
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&MtlModel) -> Result<f64>,
{
    let n_tensors = model.parameters().len();
    assert_eq!(analytic.len(), n_tensors);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rel_errors = Vec::new();
    for ti in 0..n_tensors {
        let len = model.parameters()[ti].len();
        let coords: Vec<usize> = if len <= samples_per_tensor {
            (0..len).collect()
        } else {
            (0..samples_per_tensor).map(|_| rng.gen_range(0..len)).collect()
        };
        for ci in coords {
            let original = model.parameters()[ti].data()[ci];
            model.parameters_mut()[ti].data_mut()[ci] = original + h;
            let plus = loss(model)?;
            model.parameters_mut()[ti].data_mut()[ci] = original - h;
            let minus = loss(model)?;
            model.parameters_mut()[ti].data_mut()[ci] = original;
            let numeric = (plus - minus) / (2.0 * h);
            rel_errors.push(relative_error(analytic[ti].data()[ci], numeric));
        }
    }
    let checked = rel_errors.len();
    Ok(GradCheckReport {
        rel_errors,
        checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{conv2d_init, linear_init};
    use rand::Rng;

    fn rand_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn single_linear_layer_passes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layers = vec![linear_init(6, 4, &mut rng)];
        let input = rand_input(&mut rng, &[3, 6]);
        let report = grad_check_sequence(&mut layers, &input, &[0, 2, 3], DEFAULT_STEP).unwrap();
        assert!(report.passes(1e-3), "max err {}", report.max_rel_error());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layers = vec![conv2d_init(2, 2, &mut rng), Layer::MaxPool2, linear_init(18, 3, &mut rng)];
        let input = rand_input(&mut rng, &[2, 2, 6, 6]);
        let report = grad_check_sequence(&mut layers, &input, &[0, 1], DEFAULT_STEP).unwrap();
        assert!(report.passes(1e-3), "max err {}", report.max_rel_error());
    }

    #[test]
    fn dead_relu_path_has_zero_numeric_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // bias the input strongly negative so relu kills the first unit
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![-100.0, 0.0]).unwrap();
        let mut layers = vec![
            Layer::Linear { weight: w, bias: b },
            Layer::Relu,
            linear_init(2, 2, &mut rng),
        ];
        let input = rand_input(&mut rng, &[2, 2]);
        let analytic = sequence_param_grads(&layers, &input, &[0, 1]).unwrap();
        // first unit's weights are dead: analytic zero
        assert!(analytic[0].data()[0].abs() < 1e-12);
        let report = grad_check_sequence(&mut layers, &input, &[0, 1], DEFAULT_STEP).unwrap();
        // with both sides ~0, relative error stays tiny through the 1e-8 floor
        assert!(report.passes(1e-3), "max err {}", report.max_rel_error());
    }
}
