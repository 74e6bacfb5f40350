//! Grid task specs, in-memory datasets, and the assembly of the combined
//! multi-script dataset from per-script IDX pairs.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::idx;

/// The (rows, cols) factorization of the label space. Multi-script digits
/// use 3x10 (script x digit); the Amharic grid uses 11x7.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridTaskSpec {
    pub rows: usize,
    pub cols: usize,
    pub script_names: Vec<String>,
}

impl GridTaskSpec {
    pub fn new(rows: usize, cols: usize, script_names: Vec<String>) -> Self {
        assert!(rows > 0 && cols > 0);
        assert_eq!(script_names.len(), rows);
        GridTaskSpec {
            rows,
            cols,
            script_names,
        }
    }

    pub fn multiscript() -> Self {
        GridTaskSpec::new(
            3,
            10,
            vec!["Latin".into(), "Arabic".into(), "Kannada".into()],
        )
    }

    pub fn amharic() -> Self {
        GridTaskSpec::new(11, 7, (0..11).map(|r| format!("Row{}", r)).collect())
    }

    pub fn single(name: &str, cols: usize) -> Self {
        GridTaskSpec::new(1, cols, vec![name.to_string()])
    }

    pub fn classes(&self) -> usize {
        self.rows * self.cols
    }

    /// Parse "RxC" strings like "3x10" or "11x7".
    pub fn parse(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once('x')
            .ok_or_else(|| Error::Config(format!("bad spec `{}`, expected RxC", s)))?;
        let rows: usize = r
            .parse()
            .map_err(|_| Error::Config(format!("bad spec rows in `{}`", s)))?;
        let cols: usize = c
            .parse()
            .map_err(|_| Error::Config(format!("bad spec cols in `{}`", s)))?;
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("spec `{}` has a zero extent", s)));
        }
        if rows == 3 && cols == 10 {
            return Ok(GridTaskSpec::multiscript());
        }
        if rows == 11 && cols == 7 {
            return Ok(GridTaskSpec::amharic());
        }
        Ok(GridTaskSpec::new(
            rows,
            cols,
            (0..rows).map(|r| format!("Row{}", r)).collect(),
        ))
    }
}

/// Immutable after load; images are (N, 1, 28, 28) with values in [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub spec: GridTaskSpec,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, spec: GridTaskSpec) -> Result<Self> {
        for (index, &label) in labels.iter().enumerate() {
            if label >= spec.classes() {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: spec.classes(),
                    index,
                });
            }
        }
        Ok(Dataset {
            images,
            labels,
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Combine per-script digit datasets into one grid dataset. Input datasets
/// carry digit labels 0..C-1 and must be ordered by script index.
pub fn assemble_multiscript(
    per_script: Vec<(Tensor, Vec<usize>)>,
    spec: GridTaskSpec,
) -> Result<Dataset> {
    assert_eq!(per_script.len(), spec.rows);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (script_idx, (imgs, labs)) in per_script.into_iter().enumerate() {
        for (index, &digit) in labs.iter().enumerate() {
            if digit >= spec.cols {
                return Err(Error::LabelOutOfRange {
                    label: digit,
                    classes: spec.cols,
                    index,
                });
            }
            labels.push(script_idx * spec.cols + digit);
        }
        images.extend_from_slice(imgs.data());
    }
    let n = labels.len();
    let images = Tensor::from_vec(&[n, 1, 28, 28], images)?;
    Dataset::new(images, labels, spec)
}

/// Grid metadata: UTF-8 key=value lines with rows=, cols=, names= (comma-
/// separated, optional).
pub fn read_grid_meta(path: &Path) -> Result<GridTaskSpec> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = None;
    let mut cols = None;
    let mut names = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}: bad meta line `{}`", path.display(), line)))?;
        match key.trim() {
            "rows" => {
                rows = Some(value.trim().parse::<usize>().map_err(|_| {
                    Error::Config(format!("{}: bad rows `{}`", path.display(), value))
                })?)
            }
            "cols" => {
                cols = Some(value.trim().parse::<usize>().map_err(|_| {
                    Error::Config(format!("{}: bad cols `{}`", path.display(), value))
                })?)
            }
            "names" => {
                names = Some(
                    value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .collect::<Vec<_>>(),
                )
            }
            other => {
                return Err(Error::Config(format!(
                    "{}: unknown meta key `{}`",
                    path.display(),
                    other
                )))
            }
        }
    }
    let rows = rows.ok_or_else(|| Error::Config(format!("{}: missing rows=", path.display())))?;
    let cols = cols.ok_or_else(|| Error::Config(format!("{}: missing cols=", path.display())))?;
    let names = names.unwrap_or_else(|| (0..rows).map(|r| format!("Row{}", r)).collect());
    if names.len() != rows {
        return Err(Error::Config(format!(
            "{}: {} names for {} rows",
            path.display(),
            names.len(),
            rows
        )));
    }
    Ok(GridTaskSpec::new(rows, cols, names))
}

/// Load a dataset whose grid shape comes from a metadata file, e.g. the
/// 11x7 Amharic character grid.
pub fn load_grid_dataset(
    images_path: &Path,
    labels_path: &Path,
    meta_path: &Path,
) -> Result<Dataset> {
    let spec = read_grid_meta(meta_path)?;
    let (images, labels) = idx::read_idx(images_path, labels_path)?;
    Dataset::new(images, labels, spec)
}
