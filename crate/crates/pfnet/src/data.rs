//! CSV ingestion, normalization, differencing, chronological splitting, and
//! sliding-window supervised sample construction.
//!
//! Layout convention: an `n × T` matrix is stored row-major by variable, so
//! `values[i * t_len + t]` is variable `i` at timestep `t`. CSV files are the
//! transpose: one line per timestep, one field per variable, no header.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file contains no data rows")]
    Empty { path: String },
    #[error("line {line}: expected {expected} fields, got {got}")]
    Ragged { line: usize, expected: usize, got: usize },
    #[error("line {line}, column {column}: '{field}' is not a finite number")]
    BadField { line: usize, column: usize, field: String },
    #[error("series too short: need at least {needed} timesteps for window {window} and horizon {horizon}, got {got}")]
    TooShort { needed: usize, got: usize, window: usize, horizon: usize },
    #[error("the {which} split received no samples")]
    EmptySplit { which: &'static str },
    #[error("{0}")]
    Contract(String),
}

/// Raw or normalized multivariate series: `n` variables over `t_len`
/// timesteps, plus the per-variable divisor applied so far.
#[derive(Debug, Clone)]
pub struct SeriesMatrix {
    pub values: Vec<f64>,
    pub n: usize,
    pub t_len: usize,
    /// Per-variable normalization divisor; all ones for raw data.
    pub scale: Vec<f64>,
}

impl SeriesMatrix {
    pub fn from_values(values: Vec<f64>, n: usize, t_len: usize) -> Result<SeriesMatrix, DataError> {
        if values.len() != n * t_len || n == 0 || t_len == 0 {
            return Err(DataError::Contract(format!(
                "value buffer of length {} does not form an {n}x{t_len} matrix",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(DataError::Contract(format!("non-finite value {bad} in series")));
        }
        Ok(SeriesMatrix {
            values,
            n,
            t_len,
            scale: vec![1.0; n],
        })
    }

    /// Headerless CSV (or TSV), one timestep per line.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<SeriesMatrix, DataError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut columns: Vec<Vec<f64>> = Vec::new(); // one Vec per timestep
        let mut n = 0usize;
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            let delim = if line.contains(',') { ',' } else { '\t' };
            let fields: Vec<&str> = line.split(delim).collect();
            if columns.is_empty() {
                n = fields.len();
            } else if fields.len() != n {
                return Err(DataError::Ragged {
                    line: line_no,
                    expected: n,
                    got: fields.len(),
                });
            }
            let mut col = Vec::with_capacity(n);
            for (j, field) in fields.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| DataError::BadField {
                    line: line_no,
                    column: j + 1,
                    field: field.trim().to_string(),
                })?;
                if !v.is_finite() {
                    return Err(DataError::BadField {
                        line: line_no,
                        column: j + 1,
                        field: field.trim().to_string(),
                    });
                }
                col.push(v);
            }
            columns.push(col);
        }
        if columns.is_empty() {
            return Err(DataError::Empty {
                path: path.display().to_string(),
            });
        }
        let t_len = columns.len();
        let mut values = vec![0.0; n * t_len];
        for (t, col) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                values[i * t_len + t] = *v;
            }
        }
        SeriesMatrix::from_values(values, n, t_len)
    }

    pub fn value(&self, var: usize, t: usize) -> f64 {
        self.values[var * self.t_len + t]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.value(i, t)).collect()
    }

    /// Divide each variable by its maximum absolute value over the training
    /// prefix (`floor(train_fraction · T)` timesteps). A variable that is all
    /// zero on the prefix keeps scale 1.
    pub fn normalize(&self, train_fraction: f64) -> Result<SeriesMatrix, DataError> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(DataError::Contract(format!(
                "train_fraction must be in (0, 1], got {train_fraction}"
            )));
        }
        let prefix = ((train_fraction * self.t_len as f64).floor() as usize).max(1);
        let mut out = self.clone();
        for i in 0..self.n {
            let row = &self.values[i * self.t_len..(i + 1) * self.t_len];
            let max_abs = row[..prefix].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let divisor = if max_abs > 0.0 { max_abs } else { 1.0 };
            for v in &mut out.values[i * self.t_len..(i + 1) * self.t_len] {
                *v /= divisor;
            }
            out.scale[i] = self.scale[i] * divisor;
        }
        Ok(out)
    }

    /// Apply a previously recorded scale vector (checkpoint replay path).
    pub fn apply_scale(&self, scale: &[f64]) -> Result<SeriesMatrix, DataError> {
        if scale.len() != self.n {
            return Err(DataError::Contract(format!(
                "scale vector has {} entries for {} variables",
                scale.len(),
                self.n
            )));
        }
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(DataError::Contract("scale entries must be strictly positive".into()));
        }
        let mut out = self.clone();
        for i in 0..self.n {
            for v in &mut out.values[i * self.t_len..(i + 1) * self.t_len] {
                *v /= scale[i];
            }
            out.scale[i] = self.scale[i] * scale[i];
        }
        Ok(out)
    }

    /// Multiply values back by the stored scale.
    pub fn denormalize(&self) -> SeriesMatrix {
        let mut out = self.clone();
        for i in 0..self.n {
            for v in &mut out.values[i * self.t_len..(i + 1) * self.t_len] {
                *v *= self.scale[i];
            }
            out.scale[i] = 1.0;
        }
        out
    }

    /// First differences: column `j` of the result is `x_{j+1} − x_j`.
    pub fn difference(&self) -> Result<Vec<f64>, DataError> {
        difference(&self.values, self.n, self.t_len)
    }
}

/// First differences of a row-major `n × t` matrix, giving `n × (t−1)`.
pub fn difference(values: &[f64], n: usize, t: usize) -> Result<Vec<f64>, DataError> {
    if t < 2 {
        return Err(DataError::Contract(format!(
            "difference needs at least 2 timesteps, got {t}"
        )));
    }
    let mut out = vec![0.0; n * (t - 1)];
    for i in 0..n {
        let row = &values[i * t..(i + 1) * t];
        for j in 0..t - 1 {
            out[i * (t - 1) + j] = row[j + 1] - row[j];
        }
    }
    Ok(out)
}

/// Chronological split fractions over the time axis; the test fraction is
/// the remainder.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64) -> Result<SplitSpec, DataError> {
        let test = 1.0 - train - val;
        if train <= 0.0 || val <= 0.0 || test <= 0.0 {
            return Err(DataError::Contract(format!(
                "split fractions must be positive and sum to 1: train {train}, val {val}, test {test:.6}"
            )));
        }
        Ok(SplitSpec { train, val })
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.6, val: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Model inputs for one anchor: the raw window, its first differences, and
/// the last observation.
#[derive(Debug, Clone)]
pub struct InputWindows {
    /// `n × P`, row-major.
    pub raw_window: Vec<f64>,
    /// `n × (P−1)`, row-major.
    pub diff_window: Vec<f64>,
    /// Final column of the raw window.
    pub last_obs: Vec<f64>,
}

/// One supervised instance anchored at timestep `t` (0-based index of the
/// window's final column): inputs cover `[t−P+1, t]`, the trend target is
/// `x_{t+h−1}`, the fluctuation target `x_{t+h} − x_{t+h−1}`, and the final
/// target their exact sum `x_{t+h}`.
#[derive(Debug, Clone)]
pub struct WindowedSample {
    pub input: InputWindows,
    pub target_trend: Vec<f64>,
    pub target_fluct: Vec<f64>,
    pub target_final: Vec<f64>,
    pub anchor: usize,
}

/// Windowed view over a normalized series with chronological split
/// assignment. Samples are materialized on demand from the shared matrices.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub n: usize,
    pub window: usize,
    pub horizon: usize,
    pub t_len: usize,
    pub scale: Vec<f64>,
    values: Vec<f64>,
    diffs: Vec<f64>,
    train_anchors: Vec<usize>,
    val_anchors: Vec<usize>,
    test_anchors: Vec<usize>,
}

/// Build the three ordered sample sets. A sample belongs to the split that
/// contains the chronological position of its final target.
pub fn build_samples(
    series: &SeriesMatrix,
    window: usize,
    horizon: usize,
    split: &SplitSpec,
) -> Result<Dataset, DataError> {
    if window < 2 {
        return Err(DataError::Contract(format!(
            "window must be at least 2 so the differenced window is nonempty, got {window}"
        )));
    }
    if horizon < 1 {
        return Err(DataError::Contract("horizon must be at least 1".into()));
    }
    let t = series.t_len;
    if t < window + horizon {
        return Err(DataError::TooShort {
            needed: window + horizon,
            got: t,
            window,
            horizon,
        });
    }
    let diffs = series.difference()?;

    let train_end = (split.train * t as f64).floor() as usize;
    let val_end = ((split.train + split.val) * t as f64).floor() as usize;

    let mut train_anchors = Vec::new();
    let mut val_anchors = Vec::new();
    let mut test_anchors = Vec::new();
    for anchor in (window - 1)..=(t - 1 - horizon) {
        let target_pos = anchor + horizon + 1; // 1-based position of x_{t+h}
        if target_pos <= train_end {
            train_anchors.push(anchor);
        } else if target_pos <= val_end {
            val_anchors.push(anchor);
        } else {
            test_anchors.push(anchor);
        }
    }
    if train_anchors.is_empty() {
        return Err(DataError::EmptySplit { which: "train" });
    }
    if val_anchors.is_empty() {
        return Err(DataError::EmptySplit { which: "validation" });
    }
    if test_anchors.is_empty() {
        return Err(DataError::EmptySplit { which: "test" });
    }
    Ok(Dataset {
        n: series.n,
        window,
        horizon,
        t_len: t,
        scale: series.scale.clone(),
        values: series.values.clone(),
        diffs,
        train_anchors,
        val_anchors,
        test_anchors,
    })
}

impl Dataset {
    pub fn anchors(&self, split: Split) -> &[usize] {
        match split {
            Split::Train => &self.train_anchors,
            Split::Val => &self.val_anchors,
            Split::Test => &self.test_anchors,
        }
    }

    pub fn len(&self, split: Split) -> usize {
        self.anchors(split).len()
    }

    pub fn total_samples(&self) -> usize {
        self.train_anchors.len() + self.val_anchors.len() + self.test_anchors.len()
    }

    pub fn input_at(&self, anchor: usize) -> InputWindows {
        input_windows_at(&self.values, &self.diffs, self.n, self.t_len, self.window, anchor)
    }

    pub fn sample(&self, anchor: usize) -> WindowedSample {
        let n = self.n;
        let t = self.t_len;
        let h = self.horizon;
        let mut target_trend = Vec::with_capacity(n);
        let mut target_fluct = Vec::with_capacity(n);
        let mut target_final = Vec::with_capacity(n);
        for i in 0..n {
            let trend = self.values[i * t + anchor + h - 1];
            let fin = self.values[i * t + anchor + h];
            target_trend.push(trend);
            target_final.push(fin);
            target_fluct.push(fin - trend);
        }
        WindowedSample {
            input: self.input_at(anchor),
            target_trend,
            target_fluct,
            target_final,
            anchor,
        }
    }

    pub fn samples(&self, split: Split) -> Vec<WindowedSample> {
        self.anchors(split).iter().map(|&a| self.sample(a)).collect()
    }

    /// Truth matrix for a split, column-major `n × M` (one column per sample).
    pub fn truth_matrix(&self, split: Split) -> Vec<f64> {
        let anchors = self.anchors(split);
        let mut out = Vec::with_capacity(anchors.len() * self.n);
        for &a in anchors {
            for i in 0..self.n {
                out.push(self.values[i * self.t_len + a + self.horizon]);
            }
        }
        out
    }
}

/// Extract the model inputs anchored at `anchor` from shared matrices;
/// usable without targets (forecasting past the end of the series).
pub fn input_windows_at(
    values: &[f64],
    diffs: &[f64],
    n: usize,
    t_len: usize,
    window: usize,
    anchor: usize,
) -> InputWindows {
    let start = anchor + 1 - window;
    let mut raw_window = Vec::with_capacity(n * window);
    let mut diff_window = Vec::with_capacity(n * (window - 1));
    let mut last_obs = Vec::with_capacity(n);
    for i in 0..n {
        raw_window.extend_from_slice(&values[i * t_len + start..i * t_len + anchor + 1]);
        diff_window.extend_from_slice(&diffs[i * (t_len - 1) + start..i * (t_len - 1) + anchor]);
        last_obs.push(values[i * t_len + anchor]);
    }
    InputWindows {
        raw_window,
        diff_window,
        last_obs,
    }
}

/// Contiguous chronological batch ranges over `len` samples; the final
/// partial batch is kept.
pub fn batch_ranges(len: usize, batch: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + batch).min(len);
        out.push((start, end));
        start = end;
    }
    out
}

/// Audit record of a built dataset: window, horizon, scale vector, and the
/// anchor range of every split.
pub fn write_split_manifest(path: impl AsRef<Path>, ds: &Dataset) -> std::io::Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "window {}", ds.window)?;
    writeln!(f, "horizon {}", ds.horizon)?;
    writeln!(f, "timesteps {}", ds.t_len)?;
    writeln!(f, "variables {}", ds.n)?;
    let scale: Vec<String> = ds.scale.iter().map(|v| format!("{v:e}")).collect();
    writeln!(f, "scale {}", scale.join(" "))?;
    for (name, anchors) in [
        ("train", &ds.train_anchors),
        ("validation", &ds.val_anchors),
        ("test", &ds.test_anchors),
    ] {
        writeln!(
            f,
            "{name} count {} anchors {}..{}",
            anchors.len(),
            anchors.first().unwrap(),
            anchors.last().unwrap()
        )?;
    }
    Ok(())
}
