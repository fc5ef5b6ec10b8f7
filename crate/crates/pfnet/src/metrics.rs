//! Forecast evaluation: relative squared error, relative absolute error,
//! and mean per-variable Pearson correlation, always over the full test
//! prediction matrix.
//!
//! Definitions, normative for this crate:
//!   RSE  = √Σ(pred−truth)² / √Σ(truth−mean)²   (mean over all test entries)
//!   RAE  = Σ|pred−truth| / Σ|truth−mean|
//!   CORR = mean over variables of Pearson(pred_i, truth_i) across time,
//!          skipping variables whose truth or prediction has zero variance.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("prediction and truth dimensions differ: {pred} vs {truth} entries")]
    ShapeMismatch { pred: usize, truth: usize },
    #[error("need at least 2 samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("truth matrix is constant; relative errors are undefined")]
    DegenerateTruth,
    #[error("every variable has zero variance; correlation is undefined")]
    UndefinedCorrelation,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct MetricsReport {
    pub rse: f64,
    pub rae: f64,
    pub corr: f64,
    pub samples: usize,
    pub variables: usize,
    /// Variables excluded from CORR for zero variance.
    pub corr_skipped: usize,
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rse {:.6} rae {:.6} corr {:.6}", self.rse, self.rae, self.corr)
    }
}

impl MetricsReport {
    /// Flat `key=value` serialization.
    pub fn to_kv(&self) -> String {
        format!(
            "rse={:e}\nrae={:e}\ncorr={:e}\nsamples={}\nvariables={}\ncorr_skipped={}\n",
            self.rse, self.rae, self.corr, self.samples, self.variables, self.corr_skipped
        )
    }

    pub fn write_kv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_kv().as_bytes())
    }

    pub fn value(&self, which: crate::config::SelectMetric) -> f64 {
        match which {
            crate::config::SelectMetric::Rse => self.rse,
            crate::config::SelectMetric::Rae => self.rae,
        }
    }
}

/// Column-by-column collector so batched evaluation produces exactly the
/// same matrices as a single pass.
#[derive(Debug, Clone)]
pub struct MetricsAccum {
    n: usize,
    pred: Vec<f64>,  // column-major n × M
    truth: Vec<f64>, // column-major n × M
}

impl MetricsAccum {
    pub fn new(n: usize) -> MetricsAccum {
        MetricsAccum {
            n,
            pred: Vec::new(),
            truth: Vec::new(),
        }
    }

    pub fn push(&mut self, pred_col: &[f64], truth_col: &[f64]) {
        debug_assert_eq!(pred_col.len(), self.n);
        debug_assert_eq!(truth_col.len(), self.n);
        self.pred.extend_from_slice(pred_col);
        self.truth.extend_from_slice(truth_col);
    }

    pub fn samples(&self) -> usize {
        self.truth.len() / self.n
    }

    pub fn finalize(&self) -> Result<MetricsReport, MetricsError> {
        compute_metrics(&self.pred, &self.truth, self.n)
    }
}

/// `pred` and `truth` are column-major `n × M` matrices (entry `(i, j)` at
/// `j·n + i`).
pub fn compute_metrics(pred: &[f64], truth: &[f64], n: usize) -> Result<MetricsReport, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let m = truth.len() / n;
    if m < 2 || truth.len() != n * m {
        return Err(MetricsError::TooFewSamples { got: m });
    }

    let total = truth.len() as f64;
    let mean: f64 = truth.iter().sum::<f64>() / total;

    let mut sq_err = 0.0;
    let mut abs_err = 0.0;
    let mut sq_dev = 0.0;
    let mut abs_dev = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        sq_err += (p - t) * (p - t);
        abs_err += (p - t).abs();
        sq_dev += (t - mean) * (t - mean);
        abs_dev += (t - mean).abs();
    }
    if sq_dev == 0.0 || abs_dev == 0.0 {
        return Err(MetricsError::DegenerateTruth);
    }
    let rse = sq_err.sqrt() / sq_dev.sqrt();
    let rae = abs_err / abs_dev;

    let mut corr_sum = 0.0;
    let mut kept = 0usize;
    for i in 0..n {
        let mf = m as f64;
        let mut pm = 0.0;
        let mut tm = 0.0;
        for j in 0..m {
            pm += pred[j * n + i];
            tm += truth[j * n + i];
        }
        pm /= mf;
        tm /= mf;
        let mut cov = 0.0;
        let mut pv = 0.0;
        let mut tv = 0.0;
        for j in 0..m {
            let dp = pred[j * n + i] - pm;
            let dt = truth[j * n + i] - tm;
            cov += dp * dt;
            pv += dp * dp;
            tv += dt * dt;
        }
        if pv == 0.0 || tv == 0.0 {
            continue;
        }
        corr_sum += cov / (pv.sqrt() * tv.sqrt());
        kept += 1;
    }
    if kept == 0 {
        return Err(MetricsError::UndefinedCorrelation);
    }
    Ok(MetricsReport {
        rse,
        rae,
        corr: corr_sum / kept as f64,
        samples: m,
        variables: n,
        corr_skipped: n - kept,
    })
}
