//! Adam, the epoch loop for all objectives, the repeated-run experiment
//! protocol with best-validation model selection, and the metrics table.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{batches, stratified_split, Batch, Dataset, GridTaskSpec};
use crate::error::{Error, Result};
use crate::losses::{self, LossBundle};
use crate::model::{build_model, HeadKind, MtlModel, Objective};
use crate::tasks::FactorMode;
use crate::tensor::{argmax_rows, Tensor};

pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &MtlModel, lr: f64) -> Self {
        let m = model.parameters().iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        let v = m.clone();
        AdamState {
            m,
            v,
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::ShapeMismatch {
                op: "adam step",
                expected: format!("{} gradient tensors", params.len()),
                actual: format!("{}", grads.len()),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !p.same_shape(g) {
                return Err(Error::ShapeMismatch {
                    op: "adam step",
                    expected: format!("{:?}", p.shape()),
                    actual: format!("{:?}", g.shape()),
                });
            }
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for i in 0..pd.len() {
                let gi = g.data()[i];
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Reporting name: base, wloss, new, lat, arab, kan, ...
    pub name: String,
    pub objective: Objective,
    pub spec: GridTaskSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub repeats: usize,
    pub sigma1: f64,
    pub sigma2: f64,
    pub factor_mode: FactorMode,
    pub val_fraction: f64,
    /// Column offset for single-script runs so e.g. Kannada lands in
    /// acc_script_2 of the combined table.
    pub script_col_offset: usize,
}

impl RunConfig {
    pub fn new(name: &str, objective: Objective, spec: GridTaskSpec) -> Self {
        RunConfig {
            name: name.to_string(),
            objective,
            spec,
            epochs: 15,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            repeats: 3,
            sigma1: 0.2,
            sigma2: 0.3,
            factor_mode: FactorMode::Normalized,
            val_fraction: 0.16,
            script_col_offset: 0,
        }
    }

    pub fn run_id(&self) -> String {
        format!(
            "{}-{}x{}-s{}",
            self.name, self.spec.rows, self.spec.cols, self.seed
        )
    }

    fn script_columns(&self) -> usize {
        (self.spec.rows + self.script_col_offset).max(3)
    }
}

/// Aggregated metrics of one pass over one split.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub loss_main: f64,
    pub loss_digit: Option<f64>,
    pub loss_script: Option<f64>,
    pub loss_aux: Option<f64>,
    pub loss_total: f64,
    pub factor_mean: Option<f64>,
    pub acc_overall: f64,
    /// Indexed by script; None when the split holds no samples of it.
    pub acc_per_script: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub repeat: usize,
    pub epoch: usize,
    pub split: &'static str,
    pub metrics: EpochMetrics,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: RunConfig,
    pub rows: Vec<MetricsRow>,
}

fn split_rank(split: &str) -> u8 {
    match split {
        "train" => 0,
        "val" => 1,
        _ => 2,
    }
}

impl RunRecord {
    pub fn csv_header(n_script_cols: usize) -> String {
        let mut h = String::from(
            "run_id,model,seed,repeat,epoch,split,loss_main,loss_digit,loss_script,loss_aux,loss_total,factor_mean,acc_overall",
        );
        for i in 0..n_script_cols {
            write!(h, ",acc_script_{}", i).unwrap();
        }
        h
    }

    pub fn to_csv(&self) -> String {
        let n_cols = self.config.script_columns();
        let mut rows = self.rows.clone();
        rows.sort_by_key(|r| (r.repeat, r.epoch, split_rank(r.split)));
        let mut out = Self::csv_header(n_cols);
        out.push('\n');
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{:.6}", x)).unwrap_or_default();
        for row in &rows {
            let m = &row.metrics;
            write!(
                out,
                "{},{},{},{},{},{},{:.6},{},{},{},{:.6},{},{:.6}",
                self.config.run_id(),
                self.config.name,
                self.config.seed,
                row.repeat,
                row.epoch,
                row.split,
                m.loss_main,
                fmt_opt(m.loss_digit),
                fmt_opt(m.loss_script),
                fmt_opt(m.loss_aux),
                m.loss_total,
                fmt_opt(m.factor_mean),
                m.acc_overall
            )
            .unwrap();
            for i in 0..n_cols {
                let shifted = i
                    .checked_sub(self.config.script_col_offset)
                    .and_then(|j| m.acc_per_script.get(j))
                    .copied()
                    .flatten();
                write!(out, ",{}", fmt_opt(shifted)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn test_rows(&self) -> Vec<&MetricsRow> {
        self.rows.iter().filter(|r| r.split == "test").collect()
    }
}

struct StepOutcome {
    bundle: LossBundle,
    grads: Vec<Tensor>,
    predictions: Vec<usize>,
}

fn forward_backward(model: &MtlModel, batch: &Batch, cfg: &RunConfig) -> Result<StepOutcome> {
    let trace = model.forward(&batch.images)?;
    let main_logits = trace.logits(HeadKind::Main).expect("main head");
    let predictions = argmax_rows(main_logits);
    let (bundle, grads) = match cfg.objective {
        Objective::Base | Objective::Single => {
            let (bundle, lg) = losses::loss_base(main_logits, &batch.labels)?;
            let g = model.backward(&trace, &[(HeadKind::Main, &lg.main)])?;
            (bundle, g)
        }
        Objective::Wloss => {
            let digit_logits = trace
                .logits(HeadKind::Digit)
                .ok_or(Error::MissingHead { head: "digit" })?;
            let script_logits = trace
                .logits(HeadKind::Script)
                .ok_or(Error::MissingHead { head: "script" })?;
            let (bundle, lg) = losses::loss_wloss(
                main_logits,
                digit_logits,
                script_logits,
                &batch.labels,
                cfg.spec.cols,
                cfg.sigma1,
                cfg.sigma2,
            )?;
            let dg = lg.digit.unwrap();
            let sg = lg.script.unwrap();
            let g = model.backward(
                &trace,
                &[
                    (HeadKind::Main, &lg.main),
                    (HeadKind::Digit, &dg),
                    (HeadKind::Script, &sg),
                ],
            )?;
            (bundle, g)
        }
        Objective::New => {
            let aux_logits = trace
                .logits(HeadKind::Aux)
                .ok_or(Error::MissingHead { head: "aux" })?;
            let (bundle, lg) = losses::loss_new(
                main_logits,
                aux_logits,
                &batch.labels,
                cfg.spec.rows,
                cfg.spec.cols,
                cfg.factor_mode,
            )?;
            let ag = lg.aux.unwrap();
            let g = model.backward(
                &trace,
                &[(HeadKind::Main, &lg.main), (HeadKind::Aux, &ag)],
            )?;
            (bundle, g)
        }
    };
    Ok(StepOutcome {
        bundle,
        grads,
        predictions,
    })
}

/// One loss-and-gradient evaluation of the configured objective on raw
/// images and labels. Shared by training, the gradient checks, and the
/// examples.
pub fn objective_grads(
    model: &MtlModel,
    images: &Tensor,
    labels: &[usize],
    cfg: &RunConfig,
) -> Result<(LossBundle, Vec<Tensor>)> {
    let batch = Batch {
        images: images.clone(),
        labels: labels.to_vec(),
        row_labels: labels.iter().map(|&l| l / cfg.spec.cols).collect(),
        col_labels: labels.iter().map(|&l| l % cfg.spec.cols).collect(),
    };
    let outcome = forward_backward(model, &batch, cfg)?;
    Ok((outcome.bundle, outcome.grads))
}

/// Objective loss value only, with the factor and aux targets of the `new`
/// objective optionally pinned. Used by finite-difference checks.
pub fn objective_loss_value(
    model: &MtlModel,
    images: &Tensor,
    labels: &[usize],
    cfg: &RunConfig,
    pinned_new: Option<(f64, &[usize])>,
) -> Result<f64> {
    let trace = model.forward(images)?;
    let main_logits = trace.logits(HeadKind::Main).expect("main head");
    match cfg.objective {
        Objective::Base | Objective::Single => {
            Ok(losses::cross_entropy(main_logits, labels)?.loss)
        }
        Objective::Wloss => {
            let (bundle, _) = losses::loss_wloss(
                main_logits,
                trace.logits(HeadKind::Digit).unwrap(),
                trace.logits(HeadKind::Script).unwrap(),
                labels,
                cfg.spec.cols,
                cfg.sigma1,
                cfg.sigma2,
            )?;
            Ok(bundle.total)
        }
        Objective::New => {
            let aux_logits = trace.logits(HeadKind::Aux).unwrap();
            match pinned_new {
                Some((factor, aux_targets)) => {
                    let main = losses::cross_entropy(main_logits, labels)?;
                    let aux = losses::cross_entropy(aux_logits, aux_targets)?;
                    Ok(factor * main.loss + aux.loss)
                }
                None => {
                    let (bundle, _) = losses::loss_new(
                        main_logits,
                        aux_logits,
                        labels,
                        cfg.spec.rows,
                        cfg.spec.cols,
                        cfg.factor_mode,
                    )?;
                    Ok(bundle.total)
                }
            }
        }
    }
}

struct Accumulator {
    n: f64,
    loss_main: f64,
    loss_digit: f64,
    loss_script: f64,
    loss_aux: f64,
    loss_total: f64,
    factor: f64,
    batches: f64,
    correct_per_script: Vec<usize>,
    total_per_script: Vec<usize>,
}

impl Accumulator {
    fn new(rows: usize) -> Self {
        Accumulator {
            n: 0.0,
            loss_main: 0.0,
            loss_digit: 0.0,
            loss_script: 0.0,
            loss_aux: 0.0,
            loss_total: 0.0,
            factor: 0.0,
            batches: 0.0,
            correct_per_script: vec![0; rows],
            total_per_script: vec![0; rows],
        }
    }

    fn add(&mut self, bundle: &LossBundle, preds: &[usize], labels: &[usize], cols: usize) {
        let b = labels.len() as f64;
        self.n += b;
        self.batches += 1.0;
        self.loss_main += bundle.main * b;
        self.loss_digit += bundle.digit.unwrap_or(0.0) * b;
        self.loss_script += bundle.script.unwrap_or(0.0) * b;
        self.loss_aux += bundle.aux.unwrap_or(0.0) * b;
        self.loss_total += bundle.total * b;
        self.factor += bundle.factor.unwrap_or(0.0);
        for (&p, &t) in preds.iter().zip(labels) {
            let script = t / cols;
            self.total_per_script[script] += 1;
            if p == t {
                self.correct_per_script[script] += 1;
            }
        }
    }

    fn finish(self, objective: Objective) -> EpochMetrics {
        let n = self.n.max(1.0);
        let correct: usize = self.correct_per_script.iter().sum();
        let total: usize = self.total_per_script.iter().sum();
        let acc_per_script = self
            .correct_per_script
            .iter()
            .zip(&self.total_per_script)
            .map(|(&c, &t)| {
                if t == 0 {
                    None
                } else {
                    Some(100.0 * c as f64 / t as f64)
                }
            })
            .collect();
        EpochMetrics {
            loss_main: self.loss_main / n,
            loss_digit: matches!(objective, Objective::Wloss).then(|| self.loss_digit / n),
            loss_script: matches!(objective, Objective::Wloss).then(|| self.loss_script / n),
            loss_aux: matches!(objective, Objective::New).then(|| self.loss_aux / n),
            loss_total: self.loss_total / n,
            factor_mean: matches!(objective, Objective::New)
                .then(|| self.factor / self.batches.max(1.0)),
            acc_overall: 100.0 * correct as f64 / total.max(1) as f64,
            acc_per_script,
        }
    }
}

fn check_finite(
    bundle: &LossBundle,
    repeat: usize,
    epoch: usize,
    batch: usize,
) -> Result<()> {
    let checks: [(&'static str, f64); 2] = [("main", bundle.main), ("total", bundle.total)];
    for (component, value) in checks {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                repeat,
                epoch,
                batch,
                component,
            });
        }
    }
    Ok(())
}

/// One optimization pass over the training indices.
pub fn train_epoch(
    model: &mut MtlModel,
    adam: &mut AdamState,
    dataset: &Dataset,
    indices: &[usize],
    epoch: usize,
    repeat: usize,
    cfg: &RunConfig,
) -> Result<EpochMetrics> {
    let mut acc = Accumulator::new(cfg.spec.rows);
    for (bi, batch) in
        batches::batch_iterator(dataset, indices, cfg.batch_size, cfg.seed, epoch).enumerate()
    {
        let outcome = forward_backward(model, &batch, cfg)?;
        check_finite(&outcome.bundle, repeat, epoch, bi)?;
        acc.add(&outcome.bundle, &outcome.predictions, &batch.labels, cfg.spec.cols);
        let mut params = model.parameters_mut();
        adam.apply(&mut params, &outcome.grads)?;
    }
    Ok(acc.finish(cfg.objective))
}

/// Forward-only pass over the given indices, in index order.
pub fn evaluate(
    model: &MtlModel,
    dataset: &Dataset,
    indices: &[usize],
    cfg: &RunConfig,
) -> Result<EpochMetrics> {
    let mut acc = Accumulator::new(cfg.spec.rows);
    for chunk in indices.chunks(cfg.batch_size.max(64)) {
        let batch = batches::gather_batch(dataset, chunk);
        let trace = model.forward(&batch.images)?;
        let main_logits = trace.logits(HeadKind::Main).expect("main head");
        let preds = argmax_rows(main_logits);
        let bundle = match cfg.objective {
            Objective::Base | Objective::Single => losses::loss_base(main_logits, &batch.labels)?.0,
            Objective::Wloss => {
                losses::loss_wloss(
                    main_logits,
                    trace.logits(HeadKind::Digit).unwrap(),
                    trace.logits(HeadKind::Script).unwrap(),
                    &batch.labels,
                    cfg.spec.cols,
                    cfg.sigma1,
                    cfg.sigma2,
                )?
                .0
            }
            Objective::New => {
                losses::loss_new(
                    main_logits,
                    trace.logits(HeadKind::Aux).unwrap(),
                    &batch.labels,
                    cfg.spec.rows,
                    cfg.spec.cols,
                    cfg.factor_mode,
                )?
                .0
            }
        };
        acc.add(&bundle, &preds, &batch.labels, cfg.spec.cols);
    }
    Ok(acc.finish(cfg.objective))
}

pub struct ExperimentOutput {
    pub record: RunRecord,
    /// Best-validation model per repeat, in repeat order.
    pub best_models: Vec<MtlModel>,
}

/// The full protocol: for each repeat, train with a derived seed, evaluate
/// train and validation splits every epoch, pick the best-validation epoch's
/// weights, and evaluate those once on the test set.
pub fn run_experiment(
    cfg: &RunConfig,
    train_data: &Dataset,
    test_data: &Dataset,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutput> {
    let mut rows = Vec::new();
    let mut best_models = Vec::new();
    for repeat in 1..=cfg.repeats {
        let repeat_seed = cfg.seed + repeat as u64;
        let mut repeat_cfg = cfg.clone();
        repeat_cfg.seed = repeat_seed;
        let mut model = build_model(&cfg.spec, cfg.objective, repeat_seed);
        let split = stratified_split(train_data, cfg.val_fraction, repeat_seed)?;
        let mut adam = AdamState::new(&model, cfg.lr);
        let mut best: Option<(f64, usize, MtlModel)> = None;
        for epoch in 1..=cfg.epochs {
            let train_metrics = train_epoch(
                &mut model,
                &mut adam,
                train_data,
                &split.train,
                epoch,
                repeat,
                &repeat_cfg,
            )?;
            let val_metrics = evaluate(&model, train_data, &split.val, &repeat_cfg)?;
            let val_acc = val_metrics.acc_overall;
            rows.push(MetricsRow {
                repeat,
                epoch,
                split: "train",
                metrics: train_metrics,
            });
            rows.push(MetricsRow {
                repeat,
                epoch,
                split: "val",
                metrics: val_metrics,
            });
            let improved = match &best {
                None => true,
                Some((acc, _, _)) => val_acc > *acc,
            };
            if improved {
                best = Some((val_acc, epoch, model.clone()));
            }
        }
        let (_, best_epoch, best_model) = best.expect("epochs >= 1");
        let test_indices: Vec<usize> = (0..test_data.len()).collect();
        let test_metrics = evaluate(&best_model, test_data, &test_indices, &repeat_cfg)?;
        rows.push(MetricsRow {
            repeat,
            epoch: best_epoch,
            split: "test",
            metrics: test_metrics,
        });
        if let Some(dir) = out_dir {
            best_model.save_checkpoint(&dir.join(format!("checkpoint-repeat{}.ckpt", repeat)))?;
        }
        best_models.push(best_model);
    }
    let record = RunRecord {
        config: cfg.clone(),
        rows,
    };
    if let Some(dir) = out_dir {
        record.write_csv(&dir.join("metrics.csv"))?;
    }
    Ok(ExperimentOutput {
        record,
        best_models,
    })
}
