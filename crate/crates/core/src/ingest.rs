//! On-disk data model.
//!
//! Matrices are stored in the `MAT1` format: the four ASCII bytes `MAT1`,
//! the row and column counts as little-endian `u32`, then `rows * cols`
//! little-endian IEEE-754 binary32 values in row-major order. A JSON
//! manifest ties the query, topic, outcome and per-unit activation matrices
//! of one dataset together. Everything is held as `f64` once loaded.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mediation::{LocalizationMetrics, Mode};

pub const MAGIC: &[u8; 4] = b"MAT1";
const HEADER_LEN: usize = 12;
const OUTCOME_TOL: f64 = 1e-6;

/// Encode a matrix as `MAT1` bytes. Values are rounded to binary32.
pub fn encode_matrix(data: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
    let (rows, cols) = data.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot store an empty {rows}x{cols} matrix"
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for ((row, col), &v) in data.indexed_iter() {
        let narrowed = v as f32;
        if !v.is_finite() || !narrowed.is_finite() {
            return Err(Error::NonFinite { row, col });
        }
        out.extend_from_slice(&narrowed.to_le_bytes());
    }
    Ok(out)
}

/// Decode `MAT1` bytes; `path` only labels errors.
pub fn decode_matrix(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                path: path.to_path_buf(),
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found: magic,
        });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if rows == 0 || cols == 0 {
        return Err(Error::ZeroDimension {
            path: path.to_path_buf(),
            rows,
            cols,
        });
    }
    let (r, c) = (rows as usize, cols as usize);
    let expected = r * c * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }
    let mut values = Vec::with_capacity(r * c);
    for (idx, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: idx / c,
                col: idx % c,
            });
        }
        values.push(v as f64);
    }
    Ok(Array2::from_shape_vec((r, c), values).expect("shape checked above"))
}

/// Write `data` to `path` in `MAT1` format. Nothing is written if any entry
/// is non-finite.
pub fn write_matrix(path: impl AsRef<Path>, data: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(data)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRef {
    /// Relative paths resolve against the manifest's directory.
    pub path: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRef {
    pub name: String,
    pub path: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub m: usize,
    pub queries: MatrixRef,
    pub topics: MatrixRef,
    pub outcomes: MatrixRef,
    pub units: Vec<UnitRef>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub name: String,
    pub activations: Array2<f64>,
}

/// Row-aligned records: query embeddings, topic vectors, binary outcomes and
/// one activation matrix per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub queries: Array2<f64>,
    pub topics: Array2<f64>,
    pub outcomes: Vec<bool>,
    pub units: Vec<Unit>,
}

impl Dataset {
    /// Build a dataset, checking row alignment and unit name uniqueness.
    pub fn new(
        queries: Array2<f64>,
        topics: Array2<f64>,
        outcomes: Vec<bool>,
        units: Vec<Unit>,
    ) -> Result<Self> {
        let m = queries.nrows();
        if topics.nrows() != m {
            return Err(Error::RowMismatch {
                what: "topics".into(),
                rows: topics.nrows(),
                m,
            });
        }
        if outcomes.len() != m {
            return Err(Error::RowMismatch {
                what: "outcomes".into(),
                rows: outcomes.len(),
                m,
            });
        }
        if units.is_empty() {
            return Err(Error::NoUnits);
        }
        let mut seen = HashSet::new();
        for unit in &units {
            if unit.activations.nrows() != m {
                return Err(Error::RowMismatch {
                    what: format!("unit {}", unit.name),
                    rows: unit.activations.nrows(),
                    m,
                });
            }
            if !seen.insert(unit.name.as_str()) {
                return Err(Error::DuplicateUnit(unit.name.clone()));
            }
        }
        Ok(Self {
            queries,
            topics,
            outcomes,
            units,
        })
    }

    pub fn len(&self) -> usize {
        self.queries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.nrows() == 0
    }

    pub fn positives(&self) -> usize {
        self.outcomes.iter().filter(|&&y| y).count()
    }

    pub fn unit_index(&self, name: &str) -> Option<usize> {
        self.units.iter().position(|u| u.name == name)
    }

    pub fn outcome_matrix(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.len(), 1), |(i, _)| {
            if self.outcomes[i] {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Keep only the named units, in the order given.
    pub fn select_units(&self, names: &[String]) -> Result<Dataset> {
        let units = names
            .iter()
            .map(|name| {
                self.units
                    .iter()
                    .find(|u| &u.name == name)
                    .cloned()
                    .ok_or_else(|| Error::UnknownUnit(name.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            self.queries.clone(),
            self.topics.clone(),
            self.outcomes.clone(),
            units,
        )
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn load_checked(base: &Path, what: &str, path: &str, rows: usize, cols: usize, m: usize) -> Result<Array2<f64>> {
    let data = read_matrix(resolve(base, path))?;
    if data.nrows() != rows || data.ncols() != cols {
        return Err(Error::ShapeMismatch {
            what: what.to_string(),
            expected_rows: rows,
            expected_cols: cols,
            rows: data.nrows(),
            cols: data.ncols(),
        });
    }
    if data.nrows() != m {
        return Err(Error::RowMismatch {
            what: what.to_string(),
            rows: data.nrows(),
            m,
        });
    }
    Ok(data)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load and validate every matrix referenced by a manifest.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
    let manifest_path = manifest_path.as_ref();
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let m = manifest.m;
    if m == 0 {
        return Err(Error::Manifest {
            path: manifest_path.to_path_buf(),
            message: "m must be positive".into(),
        });
    }
    if manifest.outcomes.cols != 1 {
        return Err(Error::Manifest {
            path: manifest_path.to_path_buf(),
            message: format!("outcomes must have one column, got {}", manifest.outcomes.cols),
        });
    }
    if manifest.units.is_empty() {
        return Err(Error::NoUnits);
    }
    let mut names = HashSet::new();
    for unit in &manifest.units {
        if !names.insert(unit.name.as_str()) {
            return Err(Error::DuplicateUnit(unit.name.clone()));
        }
    }

    let q = &manifest.queries;
    let queries = load_checked(base, "queries", &q.path, q.rows, q.cols, m)?;
    let t = &manifest.topics;
    let topics = load_checked(base, "topics", &t.path, t.rows, t.cols, m)?;
    let o = &manifest.outcomes;
    let raw_outcomes = load_checked(base, "outcomes", &o.path, o.rows, o.cols, m)?;
    let outcomes = raw_outcomes
        .column(0)
        .iter()
        .enumerate()
        .map(|(row, &value)| {
            if (value - 1.0).abs() <= OUTCOME_TOL {
                Ok(true)
            } else if value.abs() <= OUTCOME_TOL {
                Ok(false)
            } else {
                Err(Error::NonBinaryOutcome { row, value })
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let units = manifest
        .units
        .iter()
        .map(|u| {
            let what = format!("unit {}", u.name);
            load_checked(base, &what, &u.path, u.rows, u.cols, m).map(|activations| Unit {
                name: u.name.clone(),
                activations,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(queries, topics, outcomes, units)
}

/// Write a dataset as `MAT1` matrices plus `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn write_dataset(dir: impl AsRef<Path>, dataset: &Dataset) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = dataset.len();

    let write = |name: &str, data: ArrayView2<'_, f64>| -> Result<MatrixRef> {
        write_matrix(dir.join(name), data)?;
        Ok(MatrixRef {
            path: name.to_string(),
            rows: data.nrows(),
            cols: data.ncols(),
        })
    };

    let queries = write("queries.mat", dataset.queries.view())?;
    let topics = write("topics.mat", dataset.topics.view())?;
    let outcomes = write("outcomes.mat", dataset.outcome_matrix().view())?;
    let mut units = Vec::with_capacity(dataset.units.len());
    for (idx, unit) in dataset.units.iter().enumerate() {
        let r = write(&format!("unit_{idx:03}.mat"), unit.activations.view())?;
        units.push(UnitRef {
            name: unit.name.clone(),
            path: r.path,
            rows: r.rows,
            cols: r.cols,
        });
    }
    let manifest = Manifest {
        m,
        queries,
        topics,
        outcomes,
        units,
    };
    let path = dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// One line of an AIE report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub unit_index: usize,
    pub unit_name: String,
    pub mode: Mode,
    pub aie: f64,
    pub n_terms: usize,
    pub winsor_lo: f64,
    pub winsor_hi: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Localization metrics keyed by mode name.
    #[serde(default)]
    pub metrics: BTreeMap<String, LocalizationMetrics>,
    /// Echo of the configuration that produced the rows.
    #[serde(default)]
    pub config: serde_json::Value,
}

pub const REPORT_HEADER: [&str; 8] = [
    "unit_index",
    "unit_name",
    "mode",
    "aie",
    "n_terms",
    "winsor_lo",
    "winsor_hi",
    "seed",
];

/// Write `report` as CSV to `path` and as JSON next to it (same stem,
/// `.json` extension). Rows are written sorted by unit index; rows of the
/// same unit keep their relative order.
pub fn save_report(path: impl AsRef<Path>, report: &Report) -> Result<()> {
    let path = path.as_ref();
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut sorted = report.clone();
    sorted.rows.sort_by_key(|r| r.unit_index);

    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        };
        w.write_record(REPORT_HEADER).map_err(csv_err)?;
        for r in &sorted.rows {
            w.write_record([
                r.unit_index.to_string(),
                r.unit_name.clone(),
                r.mode.to_string(),
                r.aie.to_string(),
                r.n_terms.to_string(),
                r.winsor_lo.to_string(),
                r.winsor_hi.to_string(),
                r.seed.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;

    write_json(path.with_extension("json"), &sorted)
}

/// Read the rows of a CSV report written by [`save_report`].
pub fn read_report_csv(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    })?;
    reader
        .deserialize()
        .map(|r| {
            r.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                source: e,
            })
        })
        .collect()
}
