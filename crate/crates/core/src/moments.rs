//! Core numeric types shared by every layer: paired mean/variance vectors,
//! scalar Gaussians and weight matrices, plus the elementary moment kernels.

use crate::error::{Error, Result};

/// Variance floor applied wherever a propagated variance is consumed by a
/// formula that divides by it.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Per-dimension means and variances of a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl MomentVector {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::usage(format!(
                "moment vector has {} means but {} variances",
                means.len(),
                variances.len()
            )));
        }
        if let Some(v) = variances.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::domain(format!("negative or NaN variance {v}")));
        }
        Ok(Self { means, variances })
    }

    /// Point masses at `means`.
    pub fn deterministic(means: Vec<f64>) -> Self {
        let variances = vec![0.0; means.len()];
        Self { means, variances }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            means: vec![0.0; len],
            variances: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// A univariate Gaussian stored as mean and variance (not standard deviation).
///
/// Pooling may yield a zero variance; the loss functions reject non-positive
/// variances at their boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianScalar {
    pub mu: f64,
    pub sigma2: f64,
}

impl GaussianScalar {
    pub fn new(mu: f64, sigma2: f64) -> Self {
        Self { mu, sigma2 }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    pub(crate) fn check_positive(&self, what: &str) -> Result<()> {
        if self.sigma2 > 0.0 && self.sigma2.is_finite() {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "{what} variance must be positive, got {}",
                self.sigma2
            )))
        }
    }
}

/// Weights of a fully connected layer, `rows` inputs by `cols` outputs,
/// stored row-major, with one bias per output.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub bias: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
            bias: vec![0.0; cols],
        }
    }

    pub fn new(rows: usize, cols: usize, values: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols || bias.len() != cols {
            return Err(Error::usage(format!(
                "weight matrix {rows}x{cols} needs {} values and {cols} biases, got {} and {}",
                rows * cols,
                values.len(),
                bias.len()
            )));
        }
        if values.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::domain("weight matrix contains non-finite entries"));
        }
        Ok(Self {
            rows,
            cols,
            values,
            bias,
        })
    }

    /// Builds a matrix from nested rows (one inner vector per input).
    pub fn from_rows(rows: &[Vec<f64>], bias: Vec<f64>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::usage("ragged weight rows"));
        }
        let values = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, values, bias)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn param_count(&self) -> usize {
        self.values.len() + self.bias.len()
    }
}

/// Streaming mean/variance accumulator (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    /// Population moments; `(0, 0)` for an empty window.
    pub fn finish(&self) -> (f64, f64) {
        if self.n == 0 {
            (0.0, 0.0)
        } else {
            (self.mean, (self.m2 / self.n as f64).max(0.0))
        }
    }
}

/// Mean and population variance (divide by `n`) of a pooling window.
pub fn mean_var_of_window(values: &[f64]) -> Result<GaussianScalar> {
    if values.is_empty() {
        return Err(Error::domain("cannot pool an empty window"));
    }
    let mut acc = Welford::default();
    values.iter().for_each(|&v| acc.push(v));
    let (mu, sigma2) = acc.finish();
    Ok(GaussianScalar { mu, sigma2 })
}

/// Entrywise square of the weights with a zero bias: the map that carries
/// diagonal variances through a linear layer.
pub fn elementwise_square(w: &WeightMatrix) -> WeightMatrix {
    WeightMatrix {
        rows: w.rows,
        cols: w.cols,
        values: w.values.iter().map(|v| v * v).collect(),
        bias: vec![0.0; w.cols],
    }
}

pub fn clamp_variance(v: &[f64], floor: f64) -> Vec<f64> {
    debug_assert!(floor >= 0.0);
    v.iter().map(|&x| x.max(floor)).collect()
}
