// Finite-difference verification of the analytic gradients: a small
// trunk-shaped network checked exhaustively, then each objective's full
// model checked on a sampled subset of coordinates.

use mtlgrid::data::GridTaskSpec;
use mtlgrid::gradcheck::{grad_check_sampled, grad_check_sequence, DEFAULT_STEP};
use mtlgrid::layers::{conv2d_init, linear_init, Layer};
use mtlgrid::model::{build_model, HeadKind, Objective};
use mtlgrid::tasks::{batch_aux_labels, compute_factor, FactorMode};
use mtlgrid::tensor::Tensor;
use mtlgrid::train::{objective_grads, objective_loss_value, RunConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // small trunk-shaped net, every parameter checked
    let mut layers = vec![
        conv2d_init(1, 2, &mut rng),
        Layer::Relu,
        Layer::MaxPool2,
        conv2d_init(2, 3, &mut rng),
        Layer::Relu,
        Layer::MaxPool2,
        linear_init(3 * 3 * 3, 8, &mut rng),
        Layer::Relu,
        linear_init(8, 5, &mut rng),
    ];
    let input = Tensor::from_vec(
        &[2, 1, 12, 12],
        (0..288).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let report = grad_check_sequence(&mut layers, &input, &[1, 4], DEFAULT_STEP).unwrap();
    println!(
        "small trunk: {} coordinates, max relative error {:.2e}",
        report.checked,
        report.max_rel_error()
    );

    // each objective on the real architecture, sampled coordinates.
    // continuous random images: clamped pixel plateaus create exact
    // maxpool ties where the subgradient is ambiguous.
    let spec = GridTaskSpec::multiscript();
    let images = Tensor::from_vec(
        &[2, 1, 28, 28],
        (0..2 * 784).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap();
    let labels = vec![4, 17];
    for objective in [Objective::Base, Objective::Wloss, Objective::New] {
        let mut model = build_model(&spec, objective, 7);
        let cfg = RunConfig::new(objective.name(), objective, spec.clone());
        let trace = model.forward(&images).unwrap();
        let pinned = match objective {
            Objective::New => {
                let main_logits = trace.logits(HeadKind::Main).unwrap();
                let aux = batch_aux_labels(main_logits, &labels, 3, 10).unwrap();
                let factor = compute_factor(&aux, FactorMode::Normalized).unwrap().factor;
                Some((factor, aux.iter().map(|&a| a as usize).collect::<Vec<_>>()))
            }
            _ => None,
        };
        let (_, analytic) = objective_grads(&model, &images, &labels, &cfg).unwrap();
        let report = grad_check_sampled(
            &mut model,
            |m| {
                objective_loss_value(
                    m,
                    &images,
                    &labels,
                    &cfg,
                    pinned.as_ref().map(|(f, t)| (*f, t.as_slice())),
                )
            },
            &analytic,
            6,
            11,
            1e-5,
        )
        .unwrap();
        println!(
            "{:>5} objective: {} sampled coordinates, max relative error {:.2e}",
            objective.name(),
            report.checked,
            report.max_rel_error()
        );
    }
}
