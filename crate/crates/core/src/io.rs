//! CSV and JSON persistence for matrices and count tensors.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CountTensor;

/// Shortest decimal that parses back to the same `f64`; integral values
/// below 2^53 are written without a fractional part.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:?}")
    }
}

pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        if cols.is_some_and(|c| c != rec.len()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: format!("row {} has {} fields, expected {}", line + 1, rec.len(), cols.unwrap_or(0)),
            });
        }
        cols = Some(rec.len());
        for field in rec.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                message: format!("row {}: cannot parse {field:?} as a number", line + 1),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        message: "empty matrix file".into(),
    })?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    /// Relative to the manifest's directory unless absolute.
    pub slice_paths: Vec<PathBuf>,
}

/// Writes `slice_000.csv, ...` and `manifest.json` into `dir`; returns the
/// manifest path.
pub fn write_tensor(dir: &Path, a: &CountTensor) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = a.n_times().saturating_sub(1).to_string().len().max(3);
    let mut slice_paths = Vec::with_capacity(a.n_times());
    for (t, s) in a.slices().iter().enumerate() {
        let name = PathBuf::from(format!("slice_{t:0width$}.csv"));
        write_matrix_csv(&dir.join(&name), s)?;
        slice_paths.push(name);
    }
    let manifest = TensorManifest {
        n: a.n(),
        t: a.n_times(),
        slice_paths,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

/// Loads a tensor from its manifest. Integral slices load as counts;
/// otherwise the nonnegative real variant is used.
pub fn read_tensor(manifest_path: &Path) -> Result<CountTensor> {
    let manifest: TensorManifest = read_json(manifest_path)?;
    if manifest.slice_paths.len() != manifest.t {
        return Err(Error::Parse {
            path: manifest_path.to_path_buf(),
            message: format!("manifest lists {} slices but T = {}", manifest.slice_paths.len(), manifest.t),
        });
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut slices = Vec::with_capacity(manifest.t);
    for p in &manifest.slice_paths {
        let full = if p.is_absolute() { p.clone() } else { base.join(p) };
        let s = read_matrix_csv(&full)?;
        if s.shape() != (manifest.n, manifest.n) {
            return Err(Error::Parse {
                path: full,
                message: format!("slice is {:?}, manifest declares n = {}", s.shape(), manifest.n),
            });
        }
        slices.push(s);
    }
    if slices.iter().all(|s| s.iter().all(|v| v.fract() == 0.0)) {
        CountTensor::new(slices)
    } else {
        CountTensor::from_real(slices)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 1e22, 3.0, -0.0, 123456789.0, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt_f64(7.0), "7");
    }
}
