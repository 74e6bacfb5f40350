//! Procedural grid-structured datasets. Each class image blends a
//! column-keyed pattern with a row-keyed pattern, so the label space
//! genuinely factors the way the real multi-script corpora do. Used by
//! the test suites, fixtures, and the runnable examples; no downloaded
//! corpus is required anywhere in the crate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, GridTaskSpec};
use crate::tensor::Tensor;

const SIDE: usize = 28;
const PROTO: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    /// Mild jitter; tiny models separate this quickly. For smoke tests.
    Easy,
    /// Shifts and noise sized so a compact CNN lands in the mid-90s.
    Standard,
}

impl Difficulty {
    fn noise(self) -> f64 {
        match self {
            Difficulty::Easy => 0.05,
            Difficulty::Standard => 0.35,
        }
    }

    fn max_shift(self) -> i64 {
        match self {
            Difficulty::Easy => 1,
            Difficulty::Standard => 2,
        }
    }
}

/// Smooth random 28x28 pattern keyed by `key`: a coarse seeded grid,
/// bilinearly upsampled.
fn prototype(key: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let coarse: Vec<f64> = (0..PROTO * PROTO).map(|_| rng.gen_range(0.0..1.0)).collect();
    let mut out = vec![0.0; SIDE * SIDE];
    let scale = (PROTO - 1) as f64 / (SIDE - 1) as f64;
    for y in 0..SIDE {
        let fy = y as f64 * scale;
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(PROTO - 1);
        let ty = fy - y0 as f64;
        for x in 0..SIDE {
            let fx = x as f64 * scale;
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(PROTO - 1);
            let tx = fx - x0 as f64;
            let a = coarse[y0 * PROTO + x0] * (1.0 - tx) + coarse[y0 * PROTO + x1] * tx;
            let b = coarse[y1 * PROTO + x0] * (1.0 - tx) + coarse[y1 * PROTO + x1] * tx;
            out[y * SIDE + x] = a * (1.0 - ty) + b * ty;
        }
    }
    out
}

fn class_prototype(row: usize, col: usize) -> Vec<f64> {
    let col_pattern = prototype(0x7031_0000 + col as u64);
    let row_pattern = prototype(0x5C81_0000 + row as u64);
    col_pattern
        .iter()
        .zip(&row_pattern)
        .map(|(c, r)| 0.55 * c + 0.45 * r)
        .collect()
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn render_sample(
    proto: &[f64],
    rng: &mut ChaCha8Rng,
    difficulty: Difficulty,
) -> Vec<u8> {
    let shift = difficulty.max_shift();
    let dy = rng.gen_range(-shift..=shift);
    let dx = rng.gen_range(-shift..=shift);
    let sigma = difficulty.noise();
    let mut out = vec![0u8; SIDE * SIDE];
    for y in 0..SIDE as i64 {
        for x in 0..SIDE as i64 {
            let sy = y - dy;
            let sx = x - dx;
            let base = if (0..SIDE as i64).contains(&sy) && (0..SIDE as i64).contains(&sx) {
                proto[(sy as usize) * SIDE + sx as usize]
            } else {
                0.0
            };
            let v = (base + sigma * box_muller(rng)).clamp(0.0, 1.0);
            out[(y as usize) * SIDE + x as usize] = (v * 255.0).round() as u8;
        }
    }
    out
}

/// Raw bytes form, ready to be written as IDX fixtures: balanced classes,
/// `n_per_class` samples each, sample order interleaved over classes.
pub fn synth_raw(
    spec: &GridTaskSpec,
    n_per_class: usize,
    seed: u64,
    difficulty: Difficulty,
) -> (Vec<u8>, Vec<u8>) {
    let classes = spec.classes();
    let protos: Vec<Vec<f64>> = (0..classes)
        .map(|label| class_prototype(label / spec.cols, label % spec.cols))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(classes * n_per_class * SIDE * SIDE);
    let mut labels = Vec::with_capacity(classes * n_per_class);
    for _ in 0..n_per_class {
        for label in 0..classes {
            images.extend_from_slice(&render_sample(&protos[label], &mut rng, difficulty));
            labels.push(label as u8);
        }
    }
    (images, labels)
}

pub fn synth_dataset(
    spec: &GridTaskSpec,
    n_per_class: usize,
    seed: u64,
    difficulty: Difficulty,
) -> Dataset {
    let (images, labels) = synth_raw(spec, n_per_class, seed, difficulty);
    let n = labels.len();
    let data: Vec<f64> = images.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(
        Tensor::from_vec(&[n, 1, SIDE, SIDE], data).unwrap(),
        labels.iter().map(|&l| l as usize).collect(),
        spec.clone(),
    )
    .unwrap()
}

/// A single-script digit dataset (labels 0..cols-1), as produced by one
/// script's IDX pair before multi-script assembly. `script_row` keys the
/// script-specific pattern so different scripts look different.
pub fn synth_single_script(
    cols: usize,
    script_row: usize,
    n_per_class: usize,
    seed: u64,
    difficulty: Difficulty,
) -> (Vec<u8>, Vec<u8>) {
    let protos: Vec<Vec<f64>> = (0..cols).map(|d| class_prototype(script_row, d)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n_per_class {
        for digit in 0..cols {
            images.extend_from_slice(&render_sample(&protos[digit], &mut rng, difficulty));
            labels.push(digit as u8);
        }
    }
    (images, labels)
}
