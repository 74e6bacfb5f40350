// Acceptance gate: one test per criterion, each printing a PASS/FAIL line.
// Run with `cargo test --test acceptance -- --nocapture` to see the lines.
//
// The training criteria (6 and 7) train real models on the synthetic corpus
// and take several minutes on a laptop; everything else finishes in seconds.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtlgrid::data::{
    read_idx, read_idx_images, write_idx_images, write_idx_labels,
    GridTaskSpec,
};
use mtlgrid::error::Error;
use mtlgrid::gradcheck::{grad_check_sampled, grad_check_sequence};
use mtlgrid::layers::{conv2d_init, linear_init, Layer};
use mtlgrid::losses::{cross_entropy, loss_base, loss_wloss};
use mtlgrid::model::{build_model, HeadKind, Objective};
use mtlgrid::report::{round2, summarize};
use mtlgrid::synth::{synth_dataset, synth_raw, synth_single_script, Difficulty};
use mtlgrid::tasks::{batch_aux_labels, compute_factor, derive_aux_label, FactorMode};
use mtlgrid::tensor::Tensor;
use mtlgrid::train::{objective_grads, objective_loss_value, run_experiment, RunConfig};

fn criterion(n: usize, name: &str, body: impl FnOnce()) {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(body));
    let verdict = if outcome.is_ok() { "PASS" } else { "FAIL" };
    println!(
        "criterion {}: {} - {} ({:.1}s)",
        n,
        verdict,
        name,
        start.elapsed().as_secs_f64()
    );
    if let Err(cause) = outcome {
        panic::resume_unwind(cause);
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Exhaustive finite-difference check with step refinement: a kink of the
/// piecewise-linear net inside the difference interval shrinks away as h
/// does, while a genuinely wrong gradient stays wrong at every step size.
fn sequence_passes(layers: &mut Vec<Layer>, input: &Tensor, targets: &[usize]) -> bool {
    for h in [1e-5, 1e-6, 1e-7] {
        let report = grad_check_sequence(layers, input, targets, h).unwrap();
        if report.passes(1e-3) {
            return true;
        }
    }
    false
}

#[test]
fn criterion_1_gradient_oracle() {
    criterion(1, "gradient oracle over 100+ random configurations", || {
        let start = Instant::now();
        let mut configs = 0usize;

        // 90 random small layer sequences, every coordinate checked
        for seed in 0..90u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let classes = rng.gen_range(2..=6);
            let batch = rng.gen_range(1..=3);
            let targets: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
            let (mut layers, input) = match seed % 3 {
                0 => {
                    let d_in = rng.gen_range(3..=10);
                    let layers = vec![linear_init(d_in, classes, &mut rng)];
                    let input = rand_tensor(&mut rng, &[batch, d_in], -1.0, 1.0);
                    (layers, input)
                }
                1 => {
                    let d_in = rng.gen_range(3..=8);
                    let hidden = rng.gen_range(2..=6);
                    let layers = vec![
                        linear_init(d_in, hidden, &mut rng),
                        Layer::Relu,
                        linear_init(hidden, classes, &mut rng),
                    ];
                    let input = rand_tensor(&mut rng, &[batch, d_in], -1.0, 1.0);
                    (layers, input)
                }
                _ => {
                    let c_in = rng.gen_range(1..=2);
                    let c_out = rng.gen_range(1..=3);
                    let side = 6;
                    let layers = vec![
                        conv2d_init(c_in, c_out, &mut rng),
                        Layer::Relu,
                        Layer::MaxPool2,
                        linear_init(c_out * (side / 2) * (side / 2), classes, &mut rng),
                    ];
                    let input = rand_tensor(&mut rng, &[batch, c_in, side, side], 0.0, 1.0);
                    (layers, input)
                }
            };
            assert!(
                sequence_passes(&mut layers, &input, &targets),
                "sequence config seed {} failed at every step size",
                seed
            );
            configs += 1;
        }

        // every objective on the full architecture, sampled coordinates;
        // the factored objective is checked with its factor held constant
        let spec = GridTaskSpec::multiscript();
        for objective in [Objective::Base, Objective::Wloss, Objective::New] {
            for seed in [11u64, 12, 13, 14] {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xACCE);
                let images = rand_tensor(&mut rng, &[2, 1, 28, 28], 0.0, 1.0);
                let labels = vec![rng.gen_range(0..30), rng.gen_range(0..30)];
                let mut model = build_model(&spec, objective, seed);
                let cfg = RunConfig::new(objective.name(), objective, spec.clone());
                let pinned = match objective {
                    Objective::New => {
                        let trace = model.forward(&images).unwrap();
                        let aux = batch_aux_labels(
                            trace.logits(HeadKind::Main).unwrap(),
                            &labels,
                            3,
                            10,
                        )
                        .unwrap();
                        let factor =
                            compute_factor(&aux, FactorMode::Normalized).unwrap().factor;
                        Some((factor, aux.iter().map(|&a| a as usize).collect::<Vec<_>>()))
                    }
                    _ => None,
                };
                let (_, analytic) = objective_grads(&model, &images, &labels, &cfg).unwrap();
                // same step refinement as the sequence checks: relu and
                // maxpool kinks inside the interval vanish as h shrinks
                let mut worst = f64::MAX;
                for h in [1e-5, 1e-6, 1e-7] {
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
                        4,
                        seed,
                        h,
                    )
                    .unwrap();
                    worst = report.max_rel_error();
                    if report.passes(1e-3) {
                        break;
                    }
                }
                assert!(
                    worst <= 1e-3,
                    "{} objective seed {}: max rel error {}",
                    objective.name(),
                    seed,
                    worst
                );
                configs += 1;
            }
        }

        assert!(configs >= 100, "only {} configurations checked", configs);
        assert!(
            start.elapsed().as_secs() < 120,
            "gradient oracle took {:?}",
            start.elapsed()
        );
    });
}

#[test]
fn criterion_2_aux_label_oracle() {
    criterion(2, "aux-label brute-force oracle, exhaustive", || {
        let start = Instant::now();
        // independent oracle: compare row and column equality directly
        let oracle = |pred: usize, truth: usize, cols: usize| -> u8 {
            let row_ok = pred / cols == truth / cols;
            let col_ok = pred % cols == truth % cols;
            match (row_ok, col_ok) {
                (false, false) => 0,
                (false, true) => 1,
                (true, false) => 2,
                (true, true) => 3,
            }
        };
        let mut pairs = 0usize;
        for (rows, cols) in [(3usize, 10usize), (11, 7)] {
            for pred in 0..rows * cols {
                for truth in 0..rows * cols {
                    assert_eq!(
                        derive_aux_label(pred, truth, rows, cols).unwrap(),
                        oracle(pred, truth, cols),
                        "pred {} truth {} on {}x{}",
                        pred,
                        truth,
                        rows,
                        cols
                    );
                    pairs += 1;
                }
            }
        }
        assert_eq!(pairs, 900 + 5_929);
        assert!(start.elapsed().as_secs() < 1, "took {:?}", start.elapsed());
    });
}

#[test]
fn criterion_3_closed_form_losses() {
    criterion(3, "closed-form cross-entropy and zero-sigma equivalence", || {
        for k in [2usize, 10, 30, 77] {
            let logits = Tensor::zeros(&[1, k]);
            let out = cross_entropy(&logits, &[k / 2]).unwrap();
            assert!(
                (out.loss - (k as f64).ln()).abs() < 1e-9,
                "uniform logits over {}: {} vs ln {}",
                k,
                out.loss,
                k
            );
        }
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..1_000 {
            let b = rng.gen_range(1..=16);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..30)).collect();
            let main = rand_tensor(&mut rng, &[b, 30], -3.0, 3.0);
            let digit = rand_tensor(&mut rng, &[b, 10], -3.0, 3.0);
            let script = rand_tensor(&mut rng, &[b, 3], -3.0, 3.0);
            let (weighted, _) =
                loss_wloss(&main, &digit, &script, &labels, 10, 0.0, 0.0).unwrap();
            let (base, _) = loss_base(&main, &labels).unwrap();
            assert!(
                (weighted.total - base.total).abs() < 1e-9,
                "sigma=0 weighted {} vs base {}",
                weighted.total,
                base.total
            );
        }
    });
}

#[test]
fn criterion_4_factor_properties() {
    criterion(4, "factor bounds, permutation invariance, monotonicity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        for _ in 0..10_000 {
            let b = rng.gen_range(1..=64);
            let mut aux: Vec<u8> = (0..b).map(|_| rng.gen_range(0..=3)).collect();
            let stat = compute_factor(&aux, FactorMode::Normalized).unwrap();
            assert!((1.0..=2.0).contains(&stat.factor), "factor {}", stat.factor);

            // permutation invariance: shuffle and recompute
            for i in (1..aux.len()).rev() {
                aux.swap(i, rng.gen_range(0..=i));
            }
            let shuffled = compute_factor(&aux, FactorMode::Normalized).unwrap();
            assert_eq!(stat.factor.to_bits(), shuffled.factor.to_bits());

            // monotone in each element: raising one aux value raises the factor
            let i = rng.gen_range(0..aux.len());
            if aux[i] < 3 {
                let before = compute_factor(&aux, FactorMode::Normalized).unwrap().factor;
                aux[i] += 1;
                let after = compute_factor(&aux, FactorMode::Normalized).unwrap().factor;
                assert!(after > before, "{} -> {} not monotone", before, after);
            }
        }
        // exact saturation at the extremes
        for b in [1usize, 7, 32] {
            assert_eq!(
                compute_factor(&vec![0u8; b], FactorMode::Normalized).unwrap().factor,
                1.0
            );
            assert_eq!(
                compute_factor(&vec![3u8; b], FactorMode::Normalized).unwrap().factor,
                2.0
            );
        }
    });
}

/// Writes per-script IDX train/test fixtures and returns the comma lists
/// (train images, train labels, test images, test labels).
fn write_multiscript_fixture(
    dir: &Path,
    train_per_class: &[usize],
    test_per_class: usize,
) -> (String, String, String, String) {
    let mut lists = (String::new(), String::new(), String::new(), String::new());
    for script in 0..3 {
        let (tri, trl) =
            synth_single_script(10, script, train_per_class[script], 100 + script as u64, Difficulty::Standard);
        let (tei, tel) =
            synth_single_script(10, script, test_per_class, 200 + script as u64, Difficulty::Standard);
        let paths = [
            (format!("script{}-train-images.idx", script), tri, trl.len(), true),
            (format!("script{}-test-images.idx", script), tei, tel.len(), true),
        ];
        let tri_path = dir.join(&paths[0].0);
        let tei_path = dir.join(&paths[1].0);
        let trl_path = dir.join(format!("script{}-train-labels.idx", script));
        let tel_path = dir.join(format!("script{}-test-labels.idx", script));
        write_idx_images(&tri_path, &paths[0].1, paths[0].2).unwrap();
        write_idx_labels(&trl_path, &trl).unwrap();
        write_idx_images(&tei_path, &paths[1].1, paths[1].2).unwrap();
        write_idx_labels(&tel_path, &tel).unwrap();
        let sep = if script == 0 { "" } else { "," };
        lists.0.push_str(&format!("{}{}", sep, tri_path.display()));
        lists.1.push_str(&format!("{}{}", sep, trl_path.display()));
        lists.2.push_str(&format!("{}{}", sep, tei_path.display()));
        lists.3.push_str(&format!("{}{}", sep, tel_path.display()));
    }
    lists
}

#[test]
fn criterion_5_cli_determinism() {
    criterion(5, "two identical train invocations, byte-identical metrics", || {
        let dir = tempfile::tempdir().unwrap();
        // 340 + 330 + 330 = 1,000 training samples
        let (tri, trl, tei, tel) =
            write_multiscript_fixture(dir.path(), &[34, 33, 33], 5);
        let run = |out: &Path| {
            let status = Command::new(env!("CARGO_BIN_EXE_mtlgrid"))
                .args([
                    "train",
                    "--model",
                    "new",
                    "--spec",
                    "3x10",
                    "--seed",
                    "7",
                    "--epochs",
                    "2",
                    "--train-images",
                    &tri,
                    "--train-labels",
                    &trl,
                    "--test-images",
                    &tei,
                    "--test-labels",
                    &tel,
                    "--out",
                ])
                .arg(out)
                .status()
                .unwrap();
            assert!(status.success());
        };
        let out_a = dir.path().join("run-a");
        let out_b = dir.path().join("run-b");
        run(&out_a);
        run(&out_b);
        let a = std::fs::read(out_a.join("metrics.csv")).unwrap();
        let b = std::fs::read(out_b.join("metrics.csv")).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "metrics.csv differs between identical invocations");
    });
}

#[test]
fn criterion_6_desk_scale_training() {
    criterion(6, "desk-scale baseline vs factored objective across seeds", || {
        let spec = GridTaskSpec::multiscript();
        // 2,000 train / 500 test per script
        let train = synth_dataset(&spec, 200, 1, Difficulty::Standard);
        let test = synth_dataset(&spec, 50, 2, Difficulty::Standard);

        let seeds = [0u64, 1, 2];
        let mut jobs = Vec::new();
        for &seed in &seeds {
            for objective in [Objective::Base, Objective::New] {
                jobs.push((seed, objective));
            }
        }
        // one thread per run so multi-core machines finish well inside the
        // runtime target; results keyed by (seed, objective)
        let results: Vec<((u64, Objective), (f64, f64))> = std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|&(seed, objective)| {
                    let (train, test, spec) = (&train, &test, &spec);
                    scope.spawn(move || {
                        let mut cfg =
                            RunConfig::new(objective.name(), objective, spec.clone());
                        cfg.epochs = 15;
                        cfg.repeats = 1;
                        cfg.seed = seed;
                        let out = run_experiment(&cfg, train, test, None).unwrap();
                        let row = out.record.test_rows()[0];
                        let per_script: Vec<f64> = row
                            .metrics
                            .acc_per_script
                            .iter()
                            .map(|a| a.expect("all scripts present"))
                            .collect();
                        let (avg, range) = summarize(&per_script);
                        ((seed, objective), (avg, range))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });

        let get = |seed: u64, objective: Objective| -> (f64, f64) {
            results
                .iter()
                .find(|(k, _)| *k == (seed, objective))
                .map(|(_, v)| *v)
                .unwrap()
        };
        let mut avg_wins = 0;
        let mut range_wins = 0;
        for &seed in &seeds {
            let (base_avg, base_range) = get(seed, Objective::Base);
            let (new_avg, new_range) = get(seed, Objective::New);
            println!(
                "  seed {}: base avg {:.2} range {:.2} | new avg {:.2} range {:.2}",
                seed, base_avg, base_range, new_avg, new_range
            );
            assert!(
                base_avg >= 90.0,
                "baseline below 90% at seed {}: {:.2}",
                seed,
                base_avg
            );
            if new_avg >= base_avg {
                avg_wins += 1;
            }
            if new_range <= base_range {
                range_wins += 1;
            }
        }
        assert!(
            avg_wins >= 2,
            "factored objective won average accuracy in only {}/3 seeds",
            avg_wins
        );
        assert!(
            range_wins >= 2,
            "factored objective won range in only {}/3 seeds",
            range_wins
        );
    });
}

#[test]
fn criterion_7_single_script_sanity() {
    criterion(7, "single-script model reaches 95% via the CLI", || {
        let dir = tempfile::tempdir().unwrap();
        // 10,000-sample single-script subset, 2,000 test
        let (tri, trl) = synth_single_script(10, 0, 1_000, 300, Difficulty::Standard);
        let (tei, tel) = synth_single_script(10, 0, 200, 301, Difficulty::Standard);
        let paths = [
            dir.path().join("script0-train-images.idx"),
            dir.path().join("script0-train-labels.idx"),
            dir.path().join("script0-test-images.idx"),
            dir.path().join("script0-test-labels.idx"),
        ];
        write_idx_images(&paths[0], &tri, trl.len()).unwrap();
        write_idx_labels(&paths[1], &trl).unwrap();
        write_idx_images(&paths[2], &tei, tel.len()).unwrap();
        write_idx_labels(&paths[3], &tel).unwrap();

        let out = dir.path().join("run-lat");
        let status = Command::new(env!("CARGO_BIN_EXE_mtlgrid"))
            .args(["train", "--model", "lat", "--epochs", "10", "--repeats", "1", "--seed", "5"])
            .arg("--data-dir")
            .arg(dir.path())
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());

        let row = mtlgrid::cli::score_row_from_csv(&out.join("metrics.csv")).unwrap();
        println!("  single-script test accuracy {:.2}%", row.overall);
        assert!(
            row.overall >= 95.0,
            "test accuracy {:.2}% below 95%",
            row.overall
        );
    });
}

#[test]
fn criterion_8_report_arithmetic() {
    criterion(8, "score-table average and range arithmetic", || {
        let (avg, range) = summarize(&[97.18, 97.94, 96.13]);
        assert!((round2(avg) - 97.08).abs() <= 0.005, "average {}", avg);
        assert!((round2(range) - 1.81).abs() <= 0.005, "range {}", range);
        let (_, range) = summarize(&[97.85, 98.07, 97.23]);
        assert!((round2(range) - 0.84).abs() <= 0.005, "range {}", range);
    });
}

#[test]
fn criterion_9_idx_round_trip() {
    criterion(9, "IDX write/read round trip and malformed-file diagnostics", || {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridTaskSpec::multiscript();
        let (images, labels) = synth_raw(&spec, 2, 9, Difficulty::Standard);
        let img_path = dir.path().join("images.idx");
        let lab_path = dir.path().join("labels.idx");
        write_idx_images(&img_path, &images, labels.len()).unwrap();
        write_idx_labels(&lab_path, &labels).unwrap();

        let (tensor, read_labels) = read_idx(&img_path, &lab_path).unwrap();
        assert_eq!(
            read_labels,
            labels.iter().map(|&l| l as usize).collect::<Vec<_>>()
        );
        let restored: Vec<u8> = tensor
            .data()
            .iter()
            .map(|&v| (v * 255.0).round() as u8)
            .collect();
        assert_eq!(restored, images, "pixel bytes not reproduced bitwise");

        // malformed cases hit their designated diagnostics
        let good = std::fs::read(&img_path).unwrap();

        let bad = dir.path().join("bad.idx");
        let mut bytes = good.clone();
        bytes[3] = 0x01; // label magic in an image file
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(read_idx_images(&bad), Err(Error::BadMagic { .. })));

        std::fs::write(&bad, &good[..good.len() - 10]).unwrap();
        assert!(matches!(read_idx_images(&bad), Err(Error::Truncated { .. })));

        let mut bytes = good.clone();
        bytes[11] = 27; // 27x28 images
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(read_idx_images(&bad), Err(Error::BadImageSize { .. })));

        let short = dir.path().join("short-labels.idx");
        write_idx_labels(&short, &labels[..labels.len() - 1]).unwrap();
        assert!(matches!(
            read_idx(&img_path, &short),
            Err(Error::CountMismatch { .. })
        ));
    });
}
