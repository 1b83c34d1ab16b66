//! Datasets, file formats and run configuration.

mod checkpoint;
mod config;
mod export;
mod synthetic;

use std::fs;
use std::path::Path;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, ArrayData, CheckpointEntry, ModelCheckpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{dataset_preset, load_config, PretrainOn, TrainConfig, PRESETS};
pub use export::{embeddings_csv, export_embeddings};
pub use synthetic::{synthetic_dataset, SyntheticVariant, SYNTHETIC_CLASSES};

use crate::error::{invalid, Error, Result};

/// Equal-length univariate series with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub name: String,
    values: Vec<f64>,
    series_len: usize,
    labels: Option<Vec<usize>>,
    /// Original label text of each internal class index.
    label_map: Vec<String>,
    pub normalized: bool,
    /// Rows before this index came from the archive's training file.
    pub original_train_len: Option<usize>,
}

impl TimeSeriesDataset {
    /// Builds a dataset from rows and optional raw label text; labels are
    /// remapped to `0..classes` in ascending order of their original value.
    pub fn new(name: impl Into<String>, rows: Vec<Vec<f64>>, labels: Option<Vec<String>>) -> Result<Self> {
        let name = name.into();
        if rows.is_empty() {
            return Err(invalid!("dataset `{name}` has no series"));
        }
        let series_len = rows[0].len();
        if series_len == 0 {
            return Err(invalid!("dataset `{name}` has empty series"));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != series_len) {
            return Err(invalid!(
                "series {i} has length {}, expected {series_len}",
                rows[i].len()
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(invalid!("dataset `{name}` contains non-finite values"));
        }
        let (labels, label_map) = match labels {
            None => (None, Vec::new()),
            Some(raw) => {
                if raw.len() != rows.len() {
                    return Err(invalid!("{} labels for {} series", raw.len(), rows.len()));
                }
                let (ids, map) = remap_labels(&raw);
                (Some(ids), map)
            }
        };
        Ok(Self {
            name,
            values: rows.into_iter().flatten().collect(),
            series_len,
            labels,
            label_map,
            normalized: false,
            original_train_len: None,
        })
    }

    /// Number of series.
    pub fn len(&self) -> usize {
        self.values.len() / self.series_len
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn series_len(&self) -> usize {
        self.series_len
    }

    pub fn series(&self, i: usize) -> &[f64] {
        &self.values[i * self.series_len..(i + 1) * self.series_len]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.series_len)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Internal index → original label text.
    pub fn label_map(&self) -> &[String] {
        &self.label_map
    }

    /// Original label text → internal index.
    pub fn internal_label(&self, original: &str) -> Option<usize> {
        self.label_map.iter().position(|l| l == original)
    }

    pub fn num_classes(&self) -> usize {
        self.label_map.len()
    }

    /// Labels, or an error naming `purpose` when the dataset is unlabeled.
    pub fn require_labels(&self, purpose: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| invalid!("{purpose} needs a labeled dataset; `{}` has no labels", self.name))
    }

    /// Rows at `indices`, keeping the label table.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.series_len);
        for &i in indices {
            values.extend_from_slice(self.series(i));
        }
        Self {
            name: self.name.clone(),
            values,
            series_len: self.series_len,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            label_map: self.label_map.clone(),
            normalized: self.normalized,
            original_train_len: None,
        }
    }

    pub fn without_labels(&self) -> Self {
        Self {
            labels: None,
            label_map: Vec::new(),
            ..self.clone()
        }
    }

    /// Appends `other` (an archive's test file) after `self` (its training
    /// file), remapping labels over the union.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.series_len != other.series_len {
            return Err(invalid!(
                "cannot join series of length {} and {}",
                self.series_len,
                other.series_len
            ));
        }
        let raw = match (self.raw_labels(), other.raw_labels()) {
            (Some(mut a), Some(b)) => {
                a.extend(b);
                Some(a)
            }
            (None, None) => None,
            _ => return Err(invalid!("cannot join a labeled and an unlabeled dataset")),
        };
        let rows: Vec<Vec<f64>> = self.rows().chain(other.rows()).map(|r| r.to_vec()).collect();
        let mut joined = Self::new(self.name.clone(), rows, raw)?;
        joined.normalized = self.normalized && other.normalized;
        joined.original_train_len = Some(self.len());
        Ok(joined)
    }

    fn raw_labels(&self) -> Option<Vec<String>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|&i| self.label_map[i].clone()).collect())
    }
}

/// Internal ids ordered by numeric value when every label parses as a
/// number, lexicographically otherwise.
fn remap_labels(raw: &[String]) -> (Vec<usize>, Vec<String>) {
    let mut distinct: Vec<String> = raw.to_vec();
    let numeric: Option<Vec<f64>> = distinct.iter().map(|s| s.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        distinct.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
        distinct.dedup_by(|a, b| a.parse::<f64>().unwrap() == b.parse::<f64>().unwrap());
    } else {
        distinct.sort();
        distinct.dedup();
    }
    let ids = raw
        .iter()
        .map(|l| match l.parse::<f64>() {
            Ok(v) if numeric.is_some() => distinct.iter().position(|d| d.parse::<f64>().unwrap() == v).unwrap(),
            _ => distinct.iter().position(|d| d == l).unwrap(),
        })
        .collect();
    (ids, distinct)
}

/// Cell separator of a text data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Tab,
    Comma,
    /// Runs of spaces or tabs (the older UCR `.txt` layout).
    Whitespace,
}

impl Delimiter {
    /// Guess from the first non-empty line.
    pub fn detect(text: &str) -> Self {
        let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
        if line.contains('\t') {
            Delimiter::Tab
        } else if line.contains(',') {
            Delimiter::Comma
        } else {
            Delimiter::Whitespace
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }
}

/// What to do with missing (`NaN` or empty) cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingValues {
    /// Linear interpolation between neighbours; leading and trailing gaps
    /// take the nearest observed value.
    #[default]
    Interpolate,
    Reject,
}

fn parse_rows(
    text: &str,
    delimiter: Delimiter,
    labeled: bool,
    missing: MissingValues,
) -> Result<(Vec<Vec<f64>>, Vec<String>)> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells = delimiter.split(line);
        let (label, cells) = if labeled {
            let label = cells[0];
            if label.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    column: Some(1),
                    message: "missing label".into(),
                });
            }
            (Some(label), &cells[1..])
        } else {
            (None, &cells[..])
        };
        if cells.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                column: None,
                message: "row has no values".into(),
            });
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    column: None,
                    message: format!("row has {} values, expected {w}", cells.len()),
                })
            }
            _ => {}
        }
        let offset = usize::from(labeled) + 1;
        let mut row = Vec::with_capacity(cells.len());
        for (c, cell) in cells.iter().enumerate() {
            let v = if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                f64::NAN
            } else {
                cell.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    column: Some(c + offset),
                    message: format!("`{cell}` is not a number"),
                })?
            };
            if v.is_infinite() {
                return Err(Error::Parse {
                    line: line_no,
                    column: Some(c + offset),
                    message: "infinite value".into(),
                });
            }
            row.push(v);
        }
        if row.iter().any(|v| v.is_nan()) {
            match missing {
                MissingValues::Reject => {
                    let c = row.iter().position(|v| v.is_nan()).unwrap();
                    return Err(Error::Parse {
                        line: line_no,
                        column: Some(c + offset),
                        message: "missing value".into(),
                    });
                }
                MissingValues::Interpolate => {
                    if !fill_gaps(&mut row) {
                        return Err(Error::Parse {
                            line: line_no,
                            column: None,
                            message: "row has no observed values".into(),
                        });
                    }
                }
            }
        }
        labels.extend(label.map(str::to_string));
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: 0,
            column: None,
            message: "file contains no data rows".into(),
        });
    }
    Ok((rows, labels))
}

/// Replaces NaNs in place; false when nothing was observed.
pub fn fill_gaps(row: &mut [f64]) -> bool {
    let observed: Vec<usize> = (0..row.len()).filter(|&i| !row[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (observed.first(), observed.last()) else {
        return false;
    };
    for i in 0..first {
        row[i] = row[first];
    }
    for i in last + 1..row.len() {
        row[i] = row[last];
    }
    for w in observed.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            row[i] = row[a] + t * (row[b] - row[a]);
        }
    }
    true
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn stem(path: &Path) -> String {
    let s = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    s.strip_suffix("_TRAIN")
        .or_else(|| s.strip_suffix("_TEST"))
        .unwrap_or(&s)
        .to_string()
}

/// Label-first rows, one series per line. `delimiter: None` detects it.
pub fn load_ucr(
    path: impl AsRef<Path>,
    delimiter: Option<Delimiter>,
    missing: MissingValues,
) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let text = read(path)?;
    let delimiter = delimiter.unwrap_or_else(|| Delimiter::detect(&text));
    let (rows, labels) = parse_rows(&text, delimiter, true, missing)?;
    TimeSeriesDataset::new(stem(path), rows, Some(labels))
}

/// Archive train and test files joined into one dataset (train rows first).
pub fn load_ucr_pair(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
    delimiter: Option<Delimiter>,
    missing: MissingValues,
) -> Result<TimeSeriesDataset> {
    load_ucr(train, delimiter, missing)?.concat(&load_ucr(test, delimiter, missing)?)
}

/// Unlabeled matrix, one series per line (e.g. pre-segmented recordings).
pub fn load_matrix(
    path: impl AsRef<Path>,
    delimiter: Option<Delimiter>,
    missing: MissingValues,
) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let text = read(path)?;
    let delimiter = delimiter.unwrap_or_else(|| Delimiter::detect(&text));
    let (rows, _) = parse_rows(&text, delimiter, false, missing)?;
    TimeSeriesDataset::new(stem(path), rows, None)
}

/// Writes label-first, tab-separated rows (values only when unlabeled),
/// using the shortest text that parses back to the same `f64`.
pub fn save_ucr(ds: &TimeSeriesDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (i, row) in ds.rows().enumerate() {
        if let Some(l) = ds.labels() {
            out.push_str(&ds.label_map[l[i]]);
            out.push('\t');
        }
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join("\t"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

const CONSTANT_STD: f64 = 1e-8;

/// Per-series z-normalization; near-constant series are only centered.
pub fn znormalize(ds: &TimeSeriesDataset) -> TimeSeriesDataset {
    let mut out = ds.clone();
    let len = out.series_len;
    for row in out.values.chunks_mut(len) {
        let mean = row.iter().sum::<f64>() / len as f64;
        let std = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt();
        let scale = if std < CONSTANT_STD { 1.0 } else { std };
        row.iter_mut().for_each(|v| *v = (*v - mean) / scale);
    }
    out.normalized = true;
    out
}

#[cfg(test)]
mod tests;
