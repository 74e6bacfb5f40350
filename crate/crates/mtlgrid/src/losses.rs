//! Cross-entropy and the three training objectives: the plain baseline
//! loss, the sigma-weighted multi-task loss, and the factored loss where
//! a per-batch correctness factor scales the main term.

use crate::error::{Error, Result};
use crate::tasks::{self, FactorMode};
use crate::tensor::{softmax, Tensor};

/// Scalar losses of one step, with the factor when the objective uses one.
/// `total` always equals the documented combination of the components.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBundle {
    pub total: f64,
    pub main: f64,
    pub digit: Option<f64>,
    pub script: Option<f64>,
    pub aux: Option<f64>,
    pub factor: Option<f64>,
}

/// Gradients of the bundle's `total` with respect to each head's logits.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub main: Tensor,
    pub digit: Option<Tensor>,
    pub script: Option<Tensor>,
    pub aux: Option<Tensor>,
}

pub struct CrossEntropyOut {
    pub loss: f64,
    /// (softmax - onehot) / B
    pub grad: Tensor,
}

/// Mean over the batch of -log softmax(logits)[target].
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<CrossEntropyOut> {
    if logits.rank() != 2 || logits.shape()[0] != targets.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            expected: format!("[{}, K]", targets.len()),
            actual: format!("{:?}", logits.shape()),
        });
    }
    let (b, k) = (logits.shape()[0], logits.shape()[1]);
    for (i, &t) in targets.iter().enumerate() {
        if t >= k {
            return Err(Error::LabelOutOfRange {
                label: t,
                classes: k,
                index: i,
            });
        }
    }
    let probs = softmax(logits, 1);
    let mut grad = probs.clone();
    let g = grad.data_mut();
    let mut loss = 0.0;
    let bf = b as f64;
    for (i, &t) in targets.iter().enumerate() {
        let p = probs.data()[i * k + t];
        loss -= p.max(f64::MIN_POSITIVE).ln();
        g[i * k + t] -= 1.0;
    }
    for v in g.iter_mut() {
        *v /= bf;
    }
    Ok(CrossEntropyOut {
        loss: loss / bf,
        grad,
    })
}

pub fn loss_base(main_logits: &Tensor, labels: &[usize]) -> Result<(LossBundle, LossGrads)> {
    let ce = cross_entropy(main_logits, labels)?;
    Ok((
        LossBundle {
            total: ce.loss,
            main: ce.loss,
            digit: None,
            script: None,
            aux: None,
            factor: None,
        },
        LossGrads {
            main: ce.grad,
            digit: None,
            script: None,
            aux: None,
        },
    ))
}

/// total = main + sigma1 * digit + sigma2 * script. Digit and script
/// targets come straight from the label's column and row.
#[allow(clippy::too_many_arguments)]
pub fn loss_wloss(
    main_logits: &Tensor,
    digit_logits: &Tensor,
    script_logits: &Tensor,
    labels: &[usize],
    cols: usize,
    sigma1: f64,
    sigma2: f64,
) -> Result<(LossBundle, LossGrads)> {
    let digit_targets: Vec<usize> = labels.iter().map(|&l| l % cols).collect();
    let script_targets: Vec<usize> = labels.iter().map(|&l| l / cols).collect();
    let main = cross_entropy(main_logits, labels)?;
    let digit = cross_entropy(digit_logits, &digit_targets)?;
    let script = cross_entropy(script_logits, &script_targets)?;
    let total = main.loss + sigma1 * digit.loss + sigma2 * script.loss;
    let scale = |mut t: Tensor, s: f64| {
        for v in t.data_mut() {
            *v *= s;
        }
        t
    };
    Ok((
        LossBundle {
            total,
            main: main.loss,
            digit: Some(digit.loss),
            script: Some(script.loss),
            aux: None,
            factor: None,
        },
        LossGrads {
            main: main.grad,
            digit: Some(scale(digit.grad, sigma1)),
            script: Some(scale(script.grad, sigma2)),
            aux: None,
        },
    ))
}

/// total = factor * main + aux. Aux targets are derived from the main
/// head's current argmax and the factor is a constant w.r.t. gradients,
/// so d total / d main_logits = factor * d CE / d main_logits.
pub fn loss_new(
    main_logits: &Tensor,
    aux_logits: &Tensor,
    labels: &[usize],
    rows: usize,
    cols: usize,
    factor_mode: FactorMode,
) -> Result<(LossBundle, LossGrads)> {
    let aux_labels = tasks::batch_aux_labels(main_logits, labels, rows, cols)?;
    let stat = tasks::compute_factor(&aux_labels, factor_mode)?;
    let aux_targets: Vec<usize> = aux_labels.iter().map(|&a| a as usize).collect();
    let main = cross_entropy(main_logits, labels)?;
    let aux = cross_entropy(aux_logits, &aux_targets)?;
    let total = stat.factor * main.loss + aux.loss;
    let mut main_grad = main.grad;
    for v in main_grad.data_mut() {
        *v *= stat.factor;
    }
    Ok((
        LossBundle {
            total,
            main: main.loss,
            digit: None,
            script: None,
            aux: Some(aux.loss),
            factor: Some(stat.factor),
        },
        LossGrads {
            main: main_grad,
            digit: None,
            script: None,
            aux: Some(aux.grad),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_logits(rng: &mut ChaCha8Rng, b: usize, k: usize) -> Tensor {
        Tensor::from_vec(&[b, k], (0..b * k).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        for k in [2usize, 10, 30, 77] {
            let logits = Tensor::zeros(&[3, k]);
            let ce = cross_entropy(&logits, &[0, k - 1, k / 2]).unwrap();
            assert!((ce.loss - (k as f64).ln()).abs() < 1e-9, "K={}", k);
        }
    }

    #[test]
    fn closed_form_two_class() {
        let logits = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let ce = cross_entropy(&logits, &[0]).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((ce.loss - expected).abs() < 1e-12);
        assert!((expected - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let logits = rand_logits(&mut rng, 8, 30);
        let targets: Vec<usize> = (0..8).map(|_| rng.gen_range(0..30)).collect();
        let ce = cross_entropy(&logits, &targets).unwrap();
        for row in ce.grad.data().chunks_exact(30) {
            assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn target_out_of_range_rejected() {
        let logits = Tensor::zeros(&[1, 4]);
        assert!(cross_entropy(&logits, &[4]).is_err());
    }

    #[test]
    fn base_equals_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let logits = rand_logits(&mut rng, 5, 30);
        let labels: Vec<usize> = (0..5).map(|_| rng.gen_range(0..30)).collect();
        let ce = cross_entropy(&logits, &labels).unwrap();
        let (bundle, grads) = loss_base(&logits, &labels).unwrap();
        assert_eq!(bundle.total, ce.loss);
        assert_eq!(grads.main.data(), ce.grad.data());
    }

    #[test]
    fn wloss_with_zero_sigmas_is_base() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let b = rng.gen_range(1..9);
            let main = rand_logits(&mut rng, b, 30);
            let digit = rand_logits(&mut rng, b, 10);
            let script = rand_logits(&mut rng, b, 3);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..30)).collect();
            let (w, _) = loss_wloss(&main, &digit, &script, &labels, 10, 0.0, 0.0).unwrap();
            let (base, _) = loss_base(&main, &labels).unwrap();
            assert!((w.total - base.total).abs() < 1e-9);
        }
    }

    #[test]
    fn wloss_combines_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let main = rand_logits(&mut rng, 4, 30);
        let digit = rand_logits(&mut rng, 4, 10);
        let script = rand_logits(&mut rng, 4, 3);
        let labels = vec![0usize, 13, 22, 29];
        let (a, _) = loss_wloss(&main, &digit, &script, &labels, 10, 0.2, 0.3).unwrap();
        let expected =
            a.main + 0.2 * a.digit.unwrap() + 0.3 * a.script.unwrap();
        assert!((a.total - expected).abs() < 1e-12);

        // linear in sigma at fixed logits
        let (b, _) = loss_wloss(&main, &digit, &script, &labels, 10, 0.4, 0.3).unwrap();
        assert!((b.total - a.total - 0.2 * a.digit.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn loss_new_factor_floor_and_saturation() {
        // every prediction misses both row and column: truth 23 (row 2, col 3),
        // argmax forced to 14 (row 1, col 4)
        let b = 4;
        let mut wrong = vec![0.0; b * 30];
        let mut right = vec![0.0; b * 30];
        for i in 0..b {
            wrong[i * 30 + 14] = 9.0;
            right[i * 30 + 23] = 9.0;
        }
        let labels = vec![23usize; b];
        let aux = Tensor::zeros(&[b, 4]);

        let wrong_logits = Tensor::from_vec(&[b, 30], wrong).unwrap();
        let (bundle, _) =
            loss_new(&wrong_logits, &aux, &labels, 3, 10, FactorMode::Normalized).unwrap();
        assert_eq!(bundle.factor, Some(1.0));
        assert!((bundle.total - (bundle.main + bundle.aux.unwrap())).abs() < 1e-12);

        let right_logits = Tensor::from_vec(&[b, 30], right).unwrap();
        let (bundle, _) =
            loss_new(&right_logits, &aux, &labels, 3, 10, FactorMode::Normalized).unwrap();
        assert_eq!(bundle.factor, Some(2.0));
    }

    #[test]
    fn loss_new_main_grad_is_factor_times_ce_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let main = rand_logits(&mut rng, 6, 30);
        let aux = rand_logits(&mut rng, 6, 4);
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..30)).collect();
        let (bundle, grads) =
            loss_new(&main, &aux, &labels, 3, 10, FactorMode::Normalized).unwrap();
        let ce = cross_entropy(&main, &labels).unwrap();
        let f = bundle.factor.unwrap();
        for (g, c) in grads.main.data().iter().zip(ce.grad.data()) {
            assert!((g - f * c).abs() < 1e-9);
        }
    }
}
