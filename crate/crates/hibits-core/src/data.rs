//! Time-indexed binary-series datasets: validation, the CSV column schema,
//! lagged-response construction and train/test splitting.
//!
//! CSV schema: mandatory `t` (strictly increasing integer time index) and
//! `y` (0/1 response); every other column must be prefixed `x1_` (fixed
//! effects) or `x2_` (GP inputs). A `x1_log_<name>` / `x2_log_<name>`
//! column has the natural log applied at load and is stored under
//! `x?_ln_<name>`, so files written by the tool reload without a second
//! transform.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical name of the auto-built lagged-response column.
pub const LAG_COL: &str = "x1_lag";
/// Canonical name of the time-derived GP input column.
pub const TIME_X2_COL: &str = "x2_time";

/// Responses, fixed-effect covariates and GP inputs on a shared time index.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySeriesDataset {
    pub t: Vec<i64>,
    pub y: Vec<u8>,
    pub x1: DMatrix<f64>,
    pub x1_names: Vec<String>,
    pub x2: DMatrix<f64>,
    pub x2_names: Vec<String>,
    /// Column index (into `x1`) of the lagged response, when declared.
    pub lag_col: Option<usize>,
    /// Rows whose predecessor is missing from the time grid (t jump > 1).
    pub gap_rows: Vec<usize>,
}

impl BinarySeriesDataset {
    pub fn new(
        t: Vec<i64>,
        y: Vec<u8>,
        x1: DMatrix<f64>,
        x1_names: Vec<String>,
        x2: DMatrix<f64>,
        x2_names: Vec<String>,
        lag_col: Option<usize>,
    ) -> Result<Self> {
        let n = t.len();
        if y.len() != n || x1.nrows() != n || x2.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "t/y/x1/x2 row counts {n}/{}/{}/{} differ",
                y.len(),
                x1.nrows(),
                x2.nrows()
            )));
        }
        if x1_names.len() != x1.ncols() || x2_names.len() != x2.ncols() {
            return Err(Error::DimensionMismatch(
                "column name counts do not match matrix widths".into(),
            ));
        }
        for i in 1..n {
            if t[i] <= t[i - 1] {
                return Err(Error::Load {
                    row: i + 1,
                    column: "t".into(),
                    message: format!(
                        "time index must be strictly increasing ({} after {})",
                        t[i],
                        t[i - 1]
                    ),
                });
            }
        }
        if let Some(i) = y.iter().position(|&v| v > 1) {
            return Err(Error::Load {
                row: i + 1,
                column: "y".into(),
                message: format!("response must be 0 or 1, got {}", y[i]),
            });
        }
        if let Some(c) = lag_col {
            if c >= x1.ncols() {
                return Err(Error::Schema(format!(
                    "lag column index {c} out of range for {} columns",
                    x1.ncols()
                )));
            }
        }
        let gap_rows: Vec<usize> = (1..n).filter(|&i| t[i] - t[i - 1] > 1).collect();
        // A declared lag column must actually hold y_{i-1} wherever the
        // time grid is consecutive.
        if let Some(c) = lag_col {
            for i in 1..n {
                if t[i] - t[i - 1] == 1 && x1[(i, c)] != f64::from(y[i - 1]) {
                    return Err(Error::Load {
                        row: i + 1,
                        column: x1_names[c].clone(),
                        message: format!(
                            "lag value {} does not match previous response {}",
                            x1[(i, c)],
                            y[i - 1]
                        ),
                    });
                }
            }
        }
        Ok(Self {
            t,
            y,
            x1,
            x1_names,
            x2,
            x2_names,
            lag_col,
            gap_rows,
        })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// True when the GP input is exactly the time-derived column.
    pub fn x2_is_time(&self) -> bool {
        self.x2_names.len() == 1
            && self.x2_names[0] == TIME_X2_COL
            && (0..self.len()).all(|i| self.x2[(i, 0)] == self.t[i] as f64)
    }

    /// Append a lagged-response column built from `y`. The first row has no
    /// predecessor and is dropped; rows following a time gap keep the
    /// previous row's response and are reported through `gap_rows`.
    pub fn add_lag_column(&self) -> Result<Self> {
        if self.lag_col.is_some() || self.x1_names.iter().any(|n| n == LAG_COL) {
            return Err(Error::Schema("dataset already has a lag column".into()));
        }
        let n = self.len();
        if n < 2 {
            return Err(Error::InvalidInput(
                "need at least two rows to build a lag column".into(),
            ));
        }
        let m = n - 1;
        let mut x1 = DMatrix::zeros(m, self.x1.ncols() + 1);
        for i in 0..m {
            for c in 0..self.x1.ncols() {
                x1[(i, c)] = self.x1[(i + 1, c)];
            }
            x1[(i, self.x1.ncols())] = f64::from(self.y[i]);
        }
        let mut names = self.x1_names.clone();
        names.push(LAG_COL.to_string());
        Self::new(
            self.t[1..].to_vec(),
            self.y[1..].to_vec(),
            x1,
            names,
            self.x2.rows(1, m).into_owned(),
            self.x2_names.clone(),
            Some(self.x1_names.len()),
        )
    }

    /// Remove the lagged-response column (the missing-data mode).
    pub fn drop_lag_column(&self) -> Result<Self> {
        let c = self
            .lag_col
            .ok_or_else(|| Error::Schema("dataset has no lag column to drop".into()))?;
        let keep: Vec<usize> = (0..self.x1.ncols()).filter(|&i| i != c).collect();
        let x1 = self.x1.select_columns(keep.iter());
        let names = keep.iter().map(|&i| self.x1_names[i].clone()).collect();
        Self::new(
            self.t.clone(),
            self.y.clone(),
            x1,
            names,
            self.x2.clone(),
            self.x2_names.clone(),
            None,
        )
    }

    /// Rows at the given (sorted, in-range) indices as a new dataset.
    fn take_rows(&self, rows: &[usize]) -> Result<Self> {
        let x1 = self.x1.select_rows(rows.iter());
        let x2 = self.x2.select_rows(rows.iter());
        Self::new(
            rows.iter().map(|&i| self.t[i]).collect(),
            rows.iter().map(|&i| self.y[i]).collect(),
            x1,
            self.x1_names.clone(),
            x2,
            self.x2_names.clone(),
            self.lag_col,
        )
    }
}

/// How to carve a dataset into training and testing pieces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SplitSpec {
    /// First `train` rows, then the next `test` rows (time-respecting).
    Sequential { train: usize, test: usize },
    /// Random rows without replacement, each piece re-sorted by time.
    Random { train: usize, test: usize, seed: u64 },
}

/// Split into `(train, test)` pieces.
pub fn split_data(
    data: &BinarySeriesDataset,
    spec: SplitSpec,
) -> Result<(BinarySeriesDataset, BinarySeriesDataset)> {
    let (train_n, test_n) = match spec {
        SplitSpec::Sequential { train, test } | SplitSpec::Random { train, test, .. } => {
            (train, test)
        }
    };
    if train_n == 0 || test_n == 0 {
        return Err(Error::InvalidInput(
            "train and test sizes must be positive".into(),
        ));
    }
    if train_n + test_n > data.len() {
        return Err(Error::InvalidInput(format!(
            "train + test = {} exceeds {} rows",
            train_n + test_n,
            data.len()
        )));
    }
    match spec {
        SplitSpec::Sequential { .. } => {
            let train_rows: Vec<usize> = (0..train_n).collect();
            let test_rows: Vec<usize> = (train_n..train_n + test_n).collect();
            Ok((data.take_rows(&train_rows)?, data.take_rows(&test_rows)?))
        }
        SplitSpec::Random { seed, .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx: Vec<usize> = (0..data.len()).collect();
            idx.shuffle(&mut rng);
            let mut train_rows: Vec<usize> = idx[..train_n].to_vec();
            let mut test_rows: Vec<usize> = idx[train_n..train_n + test_n].to_vec();
            train_rows.sort_unstable();
            test_rows.sort_unstable();
            Ok((data.take_rows(&train_rows)?, data.take_rows(&test_rows)?))
        }
    }
}

fn classify_header(h: &str) -> Result<Option<(bool, String)>> {
    // Returns (is_x1, stored_name); None for t / y.
    if h == "t" || h == "y" {
        return Ok(None);
    }
    for (prefix, is_x1) in [("x1_", true), ("x2_", false)] {
        if let Some(rest) = h.strip_prefix(prefix) {
            if rest.is_empty() {
                return Err(Error::Schema(format!("column '{h}' has an empty name")));
            }
            return Ok(Some((is_x1, h.to_string())));
        }
    }
    Err(Error::Schema(format!(
        "column '{h}' is neither t, y, nor prefixed x1_/x2_"
    )))
}

fn is_log_flagged(name: &str) -> bool {
    name.strip_prefix("x1_")
        .or_else(|| name.strip_prefix("x2_"))
        .is_some_and(|rest| rest.starts_with("log_"))
}

fn consume_log_flag(name: &str) -> String {
    name.replacen("_log_", "_ln_", 1)
}

/// Load a dataset from CSV, validating the schema and value constraints.
///
/// Columns flagged `x?_log_<name>` are log-transformed and stored as
/// `x?_ln_<name>`; datasets with no `x2_` column get the time-derived GP
/// input (`x2_time` = t).
pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<BinarySeriesDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;

    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut t_col = None;
    let mut y_col = None;
    let mut x1_cols: Vec<(usize, String)> = Vec::new();
    let mut x2_cols: Vec<(usize, String)> = Vec::new();
    for (idx, h) in headers.iter().enumerate() {
        match h.as_str() {
            "t" => t_col = Some(idx),
            "y" => y_col = Some(idx),
            _ => match classify_header(h)? {
                Some((true, name)) => x1_cols.push((idx, name)),
                Some((false, name)) => x2_cols.push((idx, name)),
                None => unreachable!(),
            },
        }
    }
    let t_col = t_col.ok_or_else(|| Error::Schema("missing mandatory column 't'".into()))?;
    let y_col = y_col.ok_or_else(|| Error::Schema("missing mandatory column 'y'".into()))?;

    let mut t = Vec::new();
    let mut y = Vec::new();
    let mut x1_rows: Vec<Vec<f64>> = Vec::new();
    let mut x2_rows: Vec<Vec<f64>> = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        let field = |col: usize| -> &str { record.get(col).unwrap_or("") };
        let parse_f64 = |col: usize, name: &str| -> Result<f64> {
            field(col).parse::<f64>().map_err(|_| Error::Load {
                row,
                column: name.to_string(),
                message: format!("malformed numeric value '{}'", field(col)),
            })
        };

        let ti = field(t_col).parse::<i64>().map_err(|_| Error::Load {
            row,
            column: "t".into(),
            message: format!("malformed integer time index '{}'", field(t_col)),
        })?;
        if let Some(&prev) = t.last() {
            if ti == prev {
                return Err(Error::Load {
                    row,
                    column: "t".into(),
                    message: format!("duplicate time index {ti}"),
                });
            }
        }
        t.push(ti);

        let yv = parse_f64(y_col, "y")?;
        if yv != 0.0 && yv != 1.0 {
            return Err(Error::Load {
                row,
                column: "y".into(),
                message: format!("response must be 0 or 1, got {yv}"),
            });
        }
        y.push(yv as u8);

        let read_block = |cols: &[(usize, String)]| -> Result<Vec<f64>> {
            cols.iter()
                .map(|(idx, name)| {
                    let v = parse_f64(*idx, name)?;
                    if is_log_flagged(name) {
                        if v <= 0.0 {
                            return Err(Error::Load {
                                row,
                                column: name.clone(),
                                message: format!("log transform needs a positive value, got {v}"),
                            });
                        }
                        Ok(v.ln())
                    } else {
                        Ok(v)
                    }
                })
                .collect()
        };
        x1_rows.push(read_block(&x1_cols)?);
        x2_rows.push(read_block(&x2_cols)?);
    }

    let n = t.len();
    let x1 = DMatrix::from_fn(n, x1_cols.len(), |i, j| x1_rows[i][j]);
    let x1_names: Vec<String> = x1_cols.iter().map(|(_, n)| consume_log_flag(n)).collect();
    let (x2, x2_names) = if x2_cols.is_empty() {
        (
            DMatrix::from_fn(n, 1, |i, _| t[i] as f64),
            vec![TIME_X2_COL.to_string()],
        )
    } else {
        (
            DMatrix::from_fn(n, x2_cols.len(), |i, j| x2_rows[i][j]),
            x2_cols.iter().map(|(_, n)| consume_log_flag(n)).collect(),
        )
    };
    let lag_col = x1_names.iter().position(|n| n == LAG_COL);
    BinarySeriesDataset::new(t, y, x1, x1_names, x2, x2_names, lag_col)
}

/// Write a dataset in the schema `load_csv` reads. Atomic: the file appears
/// complete or not at all.
pub fn save_csv<P: AsRef<Path>>(data: &BinarySeriesDataset, path: P) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec!["t".to_string(), "y".to_string()];
        header.extend(data.x1_names.iter().cloned());
        header.extend(data.x2_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..data.len() {
            let mut record = vec![data.t[i].to_string(), data.y[i].to_string()];
            for c in 0..data.x1.ncols() {
                record.push(format_f64(data.x1[(i, c)]));
            }
            for c in 0..data.x2.ncols() {
                record.push(format_f64(data.x2[(i, c)]));
            }
            w.write_record(&record)?;
        }
        w.flush()?;
    }
    write_atomic(path, &buf)
}

/// Shortest representation that round-trips through f64 parsing.
pub fn format_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains(['.', 'e', 'E']) && v.is_finite() {
        s.push_str(".0");
    }
    s
}

/// Write bytes through a temporary file renamed into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut tmp = tempfile::NamedTempFile::new_in(dir.unwrap_or_else(|| Path::new(".")))?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}
