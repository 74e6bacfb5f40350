//! Command-line front end: `inspect`, `train`, and `report` subcommands
//! binding config resolution, data loading, training, and score tables.
//! Precedence per key is flag > config file > built-in default.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{self, Dataset, GridTaskSpec};
use crate::error::{Error, Result};
use crate::model::Objective;
use crate::report::{score_row, ScoreRow, ScoreTable};
use crate::tasks::FactorMode;
use crate::train::{run_experiment, RunConfig};

#[derive(Parser)]
#[command(name = "mtlgrid", about = "Multi-task training on grid-structured classification tasks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Summarize IDX dataset files: counts, class histogram, pixel range
    Inspect(InspectArgs),
    /// Train a model and write metrics, curves, and checkpoints
    Train(TrainArgs),
    /// Combine completed run directories into one score table
    Report(ReportArgs),
}

#[derive(Args)]
struct InspectArgs {
    /// IDX image file
    #[arg(long)]
    images: PathBuf,
    /// IDX label file
    #[arg(long)]
    labels: PathBuf,
    /// Optional grid metadata file (rows=, cols=, names=)
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args, Default)]
struct TrainArgs {
    /// key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// base | wloss | new | lat | arab | kan | single:<script>
    #[arg(long)]
    model: Option<String>,
    /// Grid shape RxC, e.g. 3x10 or 11x7
    #[arg(long)]
    spec: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    sigma1: Option<f64>,
    #[arg(long)]
    sigma2: Option<f64>,
    /// normalized | mean | raw_sum
    #[arg(long = "factor-mode")]
    factor_mode: Option<String>,
    /// Output directory for metrics.csv and checkpoints
    #[arg(long)]
    out: Option<PathBuf>,
    /// Default root for data files
    #[arg(long = "data-dir", env = "MTL_DATA_DIR")]
    data_dir: Option<PathBuf>,
    /// Comma-separated per-script train image files (one per script)
    #[arg(long = "train-images")]
    train_images: Option<String>,
    #[arg(long = "train-labels")]
    train_labels: Option<String>,
    #[arg(long = "test-images")]
    test_images: Option<String>,
    #[arg(long = "test-labels")]
    test_labels: Option<String>,
    /// Grid metadata file (selects grid-dataset mode)
    #[arg(long)]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Completed run directories (each holding a metrics.csv)
    dirs: Vec<PathBuf>,
    /// Also write the table as CSV to this path
    #[arg(long)]
    csv: Option<PathBuf>,
}

const CONFIG_KEYS: &[&str] = &[
    "model", "spec", "epochs", "batch_size", "lr", "seed", "repeats", "sigma1", "sigma2",
    "factor_mode", "out", "data_dir", "train_images", "train_labels", "test_images",
    "test_labels", "meta", "val_fraction",
];

fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("{}: bad config line `{}`", path.display(), line))
        })?;
        let key = key.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "{}: unknown config key `{}`",
                path.display(),
                key
            )));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

fn parse_from<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Config(format!("bad value `{}` for {}", v, key))),
    }
}

struct ModelChoice {
    name: String,
    objective: Objective,
    /// For single-script models: which script of the grid to train on.
    single_script: Option<usize>,
}

fn parse_model(name: &str, spec: &GridTaskSpec) -> Result<ModelChoice> {
    let single = |idx: usize, name: &str| ModelChoice {
        name: name.to_string(),
        objective: Objective::Single,
        single_script: Some(idx),
    };
    match name {
        "base" => Ok(ModelChoice {
            name: name.into(),
            objective: Objective::Base,
            single_script: None,
        }),
        "wloss" => Ok(ModelChoice {
            name: name.into(),
            objective: Objective::Wloss,
            single_script: None,
        }),
        "new" => Ok(ModelChoice {
            name: name.into(),
            objective: Objective::New,
            single_script: None,
        }),
        "lat" => Ok(single(0, "lat")),
        "arab" => Ok(single(1, "arab")),
        "kan" => Ok(single(2, "kan")),
        other => {
            if let Some(script) = other.strip_prefix("single:") {
                let idx = script.parse::<usize>().ok().or_else(|| {
                    spec.script_names
                        .iter()
                        .position(|n| n.eq_ignore_ascii_case(script))
                });
                match idx {
                    Some(i) if i < spec.rows => Ok(single(i, other)),
                    _ => Err(Error::Config(format!(
                        "unknown script `{}` for single-task model",
                        script
                    ))),
                }
            } else {
                Err(Error::Config(format!("unknown model `{}`", other)))
            }
        }
    }
}

fn split_paths(value: &str) -> Vec<PathBuf> {
    value
        .split(',')
        .map(|s| PathBuf::from(s.trim()))
        .filter(|p| !p.as_os_str().is_empty())
        .collect()
}

struct DataPaths {
    train_images: Vec<PathBuf>,
    train_labels: Vec<PathBuf>,
    test_images: Vec<PathBuf>,
    test_labels: Vec<PathBuf>,
    meta: Option<PathBuf>,
}

impl DataPaths {
    fn all(&self) -> Vec<&PathBuf> {
        let mut v: Vec<&PathBuf> = Vec::new();
        v.extend(&self.train_images);
        v.extend(&self.train_labels);
        v.extend(&self.test_images);
        v.extend(&self.test_labels);
        v.extend(&self.meta);
        v
    }

    fn validate(&self) -> Result<()> {
        for path in self.all() {
            if !path.exists() {
                return Err(Error::io(
                    path,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
        Ok(())
    }
}

fn resolve_paths(
    args: &TrainArgs,
    file: &BTreeMap<String, String>,
    spec: &GridTaskSpec,
    single_script: Option<usize>,
) -> Result<DataPaths> {
    let pick = |flag: &Option<String>, key: &str| -> Option<String> {
        flag.clone().or_else(|| file.get(key).cloned())
    };
    let data_dir = args
        .data_dir
        .clone()
        .or_else(|| file.get("data_dir").map(PathBuf::from));
    let meta = args.meta.clone().or_else(|| file.get("meta").map(PathBuf::from));

    let scripts: Vec<usize> = match single_script {
        Some(s) => vec![s],
        None => (0..spec.rows).collect(),
    };
    let defaults = |stage: &str, kind: &str| -> Result<Vec<PathBuf>> {
        let dir = data_dir.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "no {}-{} paths given and no data_dir/MTL_DATA_DIR set",
                stage, kind
            ))
        })?;
        if meta.is_some() {
            return Ok(vec![dir.join(format!("grid-{}-{}.idx", stage, kind))]);
        }
        Ok(scripts
            .iter()
            .map(|s| dir.join(format!("script{}-{}-{}.idx", s, stage, kind)))
            .collect())
    };
    let resolve = |flag: &Option<String>, key: &str, stage: &str, kind: &str| -> Result<Vec<PathBuf>> {
        match pick(flag, key) {
            Some(v) => Ok(split_paths(&v)),
            None => defaults(stage, kind),
        }
    };
    let paths = DataPaths {
        train_images: resolve(&args.train_images, "train_images", "train", "images")?,
        train_labels: resolve(&args.train_labels, "train_labels", "train", "labels")?,
        test_images: resolve(&args.test_images, "test_images", "test", "images")?,
        test_labels: resolve(&args.test_labels, "test_labels", "test", "labels")?,
        meta,
    };
    let expected = if paths.meta.is_some() { 1 } else { scripts.len() };
    for (name, list) in [
        ("train-images", &paths.train_images),
        ("train-labels", &paths.train_labels),
        ("test-images", &paths.test_images),
        ("test-labels", &paths.test_labels),
    ] {
        if list.len() != expected {
            return Err(Error::Config(format!(
                "expected {} {} path(s), got {}",
                expected,
                name,
                list.len()
            )));
        }
    }
    Ok(paths)
}

fn load_split(
    images: &[PathBuf],
    labels: &[PathBuf],
    meta: &Option<PathBuf>,
    spec: &GridTaskSpec,
    single_script: Option<usize>,
) -> Result<Dataset> {
    if let Some(meta_path) = meta {
        return data::load_grid_dataset(&images[0], &labels[0], meta_path);
    }
    match single_script {
        Some(script) => {
            let (imgs, labs) = data::read_idx(&images[0], &labels[0])?;
            let single_spec =
                GridTaskSpec::single(&spec.script_names[script], spec.cols);
            Dataset::new(imgs, labs, single_spec)
        }
        None => {
            let mut per_script = Vec::new();
            for (ip, lp) in images.iter().zip(labels) {
                per_script.push(data::read_idx(ip, lp)?);
            }
            data::assemble_multiscript(per_script, spec.clone())
        }
    }
}

fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let (images, labels) = data::read_idx(&args.images, &args.labels)?;
    let spec = match &args.meta {
        Some(m) => Some(data::read_grid_meta(m)?),
        None => None,
    };
    let classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut histogram = vec![0usize; classes];
    for &l in &labels {
        histogram[l] += 1;
    }
    let min = images.data().iter().cloned().fold(f64::MAX, f64::min);
    let max = images.data().iter().cloned().fold(f64::MIN, f64::max);
    println!("items: {}", labels.len());
    println!("image shape: {:?}", &images.shape()[1..]);
    println!("classes: {}", classes);
    if let Some(spec) = &spec {
        println!(
            "grid: {} rows x {} cols = {} classes",
            spec.rows,
            spec.cols,
            spec.classes()
        );
        for &l in &labels {
            if l >= spec.classes() {
                return Err(Error::LabelOutOfRange {
                    label: l,
                    classes: spec.classes(),
                    index: 0,
                });
            }
        }
    }
    println!("pixel range: [{:.6}, {:.6}]", min, max);
    println!("class histogram:");
    for (c, n) in histogram.iter().enumerate() {
        println!("  {:>3}: {}", c, n);
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = match &args.config {
        Some(path) => read_config_file(path)?,
        None => BTreeMap::new(),
    };
    let spec_str = args
        .spec
        .clone()
        .or_else(|| file.get("spec").cloned())
        .unwrap_or_else(|| "3x10".to_string());
    let grid = GridTaskSpec::parse(&spec_str)?;
    let model_name = args
        .model
        .clone()
        .or_else(|| file.get("model").cloned())
        .ok_or_else(|| Error::Config("no --model given".into()))?;
    let choice = parse_model(&model_name, &grid)?;

    let run_spec = match choice.single_script {
        Some(s) => GridTaskSpec::single(&grid.script_names[s], grid.cols),
        None => grid.clone(),
    };
    let mut cfg = RunConfig::new(&choice.name, choice.objective, run_spec);
    cfg.script_col_offset = choice.single_script.unwrap_or(0);
    // Amharic-style grids default to the other sigma preset
    if grid.rows == 11 && grid.cols == 7 {
        cfg.sigma1 = 0.65;
        cfg.sigma2 = 0.35;
    }
    if let Some(v) = parse_from::<usize>(&file, "epochs")? {
        cfg.epochs = v;
    }
    if let Some(v) = parse_from::<usize>(&file, "batch_size")? {
        cfg.batch_size = v;
    }
    if let Some(v) = parse_from::<f64>(&file, "lr")? {
        cfg.lr = v;
    }
    if let Some(v) = parse_from::<u64>(&file, "seed")? {
        cfg.seed = v;
    }
    if let Some(v) = parse_from::<usize>(&file, "repeats")? {
        cfg.repeats = v;
    }
    if let Some(v) = parse_from::<f64>(&file, "sigma1")? {
        cfg.sigma1 = v;
    }
    if let Some(v) = parse_from::<f64>(&file, "sigma2")? {
        cfg.sigma2 = v;
    }
    if let Some(v) = parse_from::<f64>(&file, "val_fraction")? {
        cfg.val_fraction = v;
    }
    if let Some(v) = file.get("factor_mode") {
        cfg.factor_mode = FactorMode::parse(v)?;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.repeats {
        cfg.repeats = v;
    }
    if let Some(v) = args.sigma1 {
        cfg.sigma1 = v;
    }
    if let Some(v) = args.sigma2 {
        cfg.sigma2 = v;
    }
    if let Some(v) = &args.factor_mode {
        cfg.factor_mode = FactorMode::parse(v)?;
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || cfg.repeats == 0 {
        return Err(Error::Config("epochs, batch_size, and repeats must be positive".into()));
    }
    if cfg.sigma1 < 0.0 || cfg.sigma2 < 0.0 {
        return Err(Error::Config("sigma weights must be nonnegative".into()));
    }

    let paths = resolve_paths(args, &file, &grid, choice.single_script)?;
    paths.validate()?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| file.get("out").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}", cfg.run_id())));
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let train_data = load_split(
        &paths.train_images,
        &paths.train_labels,
        &paths.meta,
        &grid,
        choice.single_script,
    )?;
    let test_data = load_split(
        &paths.test_images,
        &paths.test_labels,
        &paths.meta,
        &grid,
        choice.single_script,
    )?;

    println!(
        "training {} on {} samples ({} test), {} epochs x {} repeats, seed {}",
        cfg.run_id(),
        train_data.len(),
        test_data.len(),
        cfg.epochs,
        cfg.repeats,
        cfg.seed
    );
    let output = run_experiment(&cfg, &train_data, &test_data, Some(&out_dir))?;
    let row = score_row(&output.record);
    println!("wrote {}", out_dir.join("metrics.csv").display());
    print_score_rows(&output.record.config.spec, vec![row], None)?;
    Ok(())
}

fn print_score_rows(
    spec: &GridTaskSpec,
    rows: Vec<ScoreRow>,
    csv: Option<&Path>,
) -> Result<()> {
    let n_cols = rows
        .iter()
        .map(|r| r.per_script.len())
        .max()
        .unwrap_or(spec.rows)
        .max(3.min(spec.rows.max(3)));
    let script_names = if n_cols == 3 {
        vec!["Latin".to_string(), "Arabic".to_string(), "Kannada".to_string()]
    } else {
        (0..n_cols).map(|i| format!("Row{}", i)).collect()
    };
    let table = ScoreTable {
        script_names,
        rows,
    };
    print!("{}", table.render_text());
    if let Some(path) = csv {
        fs::write(path, table.render_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Minimal parse of a run directory's metrics.csv back into a score row.
pub fn score_row_from_csv(path: &Path) -> Result<ScoreRow> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Config(format!("{}: empty metrics file", path.display())))?;
    let columns: Vec<&str> = header.split(',').collect();
    let col = |name: &str| -> Result<usize> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column {}", path.display(), name)))
    };
    let split_col = col("split")?;
    let model_col = col("model")?;
    let overall_col = col("acc_overall")?;
    let first_script_col = col("acc_script_0")?;
    let n_scripts = columns.len() - first_script_col;

    let mut model = String::new();
    let mut overall_sum = 0.0;
    let mut count = 0usize;
    let mut sums = vec![(0.0f64, 0usize); n_scripts];
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() || cells[split_col] != "test" {
            continue;
        }
        model = cells[model_col].to_string();
        overall_sum += cells[overall_col].parse::<f64>().map_err(|_| {
            Error::Config(format!("{}: bad acc_overall `{}`", path.display(), cells[overall_col]))
        })?;
        count += 1;
        for i in 0..n_scripts {
            let cell = cells[first_script_col + i];
            if !cell.is_empty() {
                sums[i].0 += cell.parse::<f64>().map_err(|_| {
                    Error::Config(format!("{}: bad accuracy `{}`", path.display(), cell))
                })?;
                sums[i].1 += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::Config(format!(
            "{}: no test rows found",
            path.display()
        )));
    }
    let per_script: Vec<Option<f64>> = sums
        .iter()
        .map(|&(s, n)| (n > 0).then(|| s / n as f64))
        .collect();
    let present: Vec<f64> = per_script.iter().flatten().copied().collect();
    let (average, range) = if present.len() == n_scripts && n_scripts > 1 {
        let (a, r) = crate::report::summarize(&present);
        (Some(a), Some(r))
    } else {
        (None, None)
    };
    Ok(ScoreRow {
        model,
        per_script,
        average,
        range,
        overall: overall_sum / count as f64,
    })
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    if args.dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    for dir in &args.dirs {
        let metrics = dir.join("metrics.csv");
        rows.push(score_row_from_csv(&metrics)?);
    }
    let n_cols = rows.iter().map(|r| r.per_script.len()).max().unwrap();
    let script_names = if n_cols <= 3 {
        vec!["Latin".to_string(), "Arabic".to_string(), "Kannada".to_string()]
    } else {
        (0..n_cols).map(|i| format!("Row{}", i)).collect()
    };
    let table = ScoreTable {
        script_names,
        rows,
    };
    print!("{}", table.render_text());
    if let Some(path) = &args.csv {
        fs::write(path, table.render_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Exit code per failure category: 2 config, 3 data/I-O, 4 training
/// divergence, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::Truncated { .. }
        | Error::CountMismatch { .. }
        | Error::BadImageSize { .. }
        | Error::LabelOutOfRange { .. }
        | Error::CheckpointBadMagic { .. }
        | Error::CheckpointBadVersion { .. }
        | Error::CheckpointCorrupt { .. } => 3,
        Error::NonFiniteLoss { .. } => 4,
        _ => 1,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Inspect(args) => cmd_inspect(args),
        Command::Train(args) => cmd_train(args),
        Command::Report(args) => cmd_report(args),
    }
}
