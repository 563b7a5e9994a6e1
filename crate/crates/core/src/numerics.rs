//! Numeric kernels shared by the samplers.
//!
//! Everything in the sampling loops is carried in log space. [`LogValue`]
//! wraps the natural log of a nonnegative quantity, with negative infinity
//! standing for an exact zero. The order-statistics helpers describe how the
//! enclosed measure shrinks per iteration, and [`gram_schmidt`] builds the
//! orthonormal frames used by the sphere walk and the simplex chart.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    /// A seed vector was (numerically) a combination of the ones before it.
    #[error("seed vector {index} is linearly dependent on its predecessors (residual norm {residual:e})")]
    Degenerate { index: usize, residual: f64 },
    #[error("seed vector {index} has dimension {found}, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("no seed vectors supplied")]
    Empty,
}

/// Natural log of a nonnegative quantity. `-inf` encodes zero.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogValue(f64);

impl LogValue {
    pub const ZERO: LogValue = LogValue(f64::NEG_INFINITY);
    pub const ONE: LogValue = LogValue(0.0);

    /// Wraps a value that is already a natural log.
    #[inline]
    pub const fn from_ln(ln: f64) -> Self {
        LogValue(ln)
    }

    /// Takes the log of a linear-scale value. Negative inputs are a bug.
    #[inline]
    pub fn from_linear(x: f64) -> Self {
        debug_assert!(!(x < 0.0), "log of negative value {x}");
        LogValue(x.ln())
    }

    #[inline]
    pub const fn ln(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn exp(self) -> f64 {
        self.0.exp()
    }

    #[inline]
    pub fn is_zero(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// `log(exp(self) + exp(other))`.
    #[inline]
    pub fn log_add(self, other: LogValue) -> LogValue {
        log_add(self, other)
    }

    /// Multiplication in linear scale.
    #[inline]
    pub fn mul(self, other: LogValue) -> LogValue {
        if self.is_zero() || other.is_zero() {
            LogValue::ZERO
        } else {
            LogValue(self.0 + other.0)
        }
    }

    /// Total order treating `NaN` as the smallest value.
    pub fn total_cmp(&self, other: &LogValue) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl From<f64> for LogValue {
    fn from(ln: f64) -> Self {
        LogValue(ln)
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// Logarithmic addition, `log(exp x + exp y)`.
///
/// The larger argument is factored out so the exponential never overflows;
/// either argument may be `-inf`.
#[inline]
pub fn log_add(x: LogValue, y: LogValue) -> LogValue {
    let (hi, lo) = if x.0 >= y.0 { (x.0, y.0) } else { (y.0, x.0) };
    if lo == f64::NEG_INFINITY {
        return LogValue(hi);
    }
    LogValue(hi + (lo - hi).exp().ln_1p())
}

/// Folds [`log_add`] over an iterator. Empty input is zero.
pub fn log_sum<I: IntoIterator<Item = LogValue>>(values: I) -> LogValue {
    values.into_iter().fold(LogValue::ZERO, log_add)
}

/// Order statistics of the largest of `N` uniform draws on `[0, W]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrderStats {
    n_objects: usize,
    log_w: LogValue,
}

impl OrderStats {
    pub fn new(n_objects: usize, log_w: LogValue) -> Self {
        assert!(n_objects >= 1, "order statistics need at least one object");
        OrderStats { n_objects, log_w }
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn log_w(&self) -> LogValue {
        self.log_w
    }

    /// Mean of `w_max`: `(1 - 1/(N+1)) W`.
    pub fn expected_w_max(&self) -> f64 {
        let n = self.n_objects as f64;
        (1.0 - 1.0 / (n + 1.0)) * self.log_w.exp()
    }

    /// Standard deviation of `w_max`: `sqrt(N / ((N+1)^2 (N+2))) W`.
    pub fn std_w_max(&self) -> f64 {
        let n = self.n_objects as f64;
        (n / ((n + 1.0).powi(2) * (n + 2.0))).sqrt() * self.log_w.exp()
    }

    /// Density of the shrinkage ratio `t = w_max / W`, `N t^(N-1)` on `[0, 1]`.
    pub fn shrinkage_density(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        let n = self.n_objects as f64;
        n * t.powf(n - 1.0)
    }

    /// Upper limit of the log-abscissa after `t` iterations: `-t/N + log W`.
    pub fn log_abscissa(&self, t: usize) -> LogValue {
        LogValue(-(t as f64) / self.n_objects as f64 + self.log_w.0)
    }
}

/// Log of the surface measure of the unit sphere in `m` dimensions.
pub fn ln_sphere_surface_area(m: usize) -> f64 {
    assert!(m >= 1, "sphere dimension must be positive");
    let m = m as f64;
    m.ln() + 0.5 * m * PI.ln() - ln_gamma(0.5 * m + 1.0)
}

/// Surface measure of the unit `(m-1)`-sphere embedded in `m` dimensions,
/// `m pi^(m/2) / Gamma(m/2 + 1)`.
pub fn sphere_surface_area(m: usize) -> f64 {
    ln_sphere_surface_area(m).exp()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A set of orthonormal columns in `R^m`.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis {
    columns: Vec<Vec<f64>>,
    ambient_dim: usize,
}

impl OrthonormalBasis {
    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn basis_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    /// `B c`, the ambient vector with coordinates `c` in this basis.
    pub fn combine(&self, coords: &[f64]) -> Vec<f64> {
        assert_eq!(coords.len(), self.columns.len());
        let mut out = vec![0.0; self.ambient_dim];
        for (c, col) in coords.iter().zip(&self.columns) {
            for (o, x) in out.iter_mut().zip(col) {
                *o += c * x;
            }
        }
        out
    }

    /// `B^T x`.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|col| dot(col, x)).collect()
    }

    /// Largest entry of `|B^T B - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let k = self.columns.len();
        let mut worst: f64 = 0.0;
        for i in 0..k {
            for j in i..k {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(&self.columns[i], &self.columns[j]) - target).abs());
            }
        }
        worst
    }
}

const DEGENERATE_RESIDUAL: f64 = 1e-12;
const REORTHOGONALIZE_ABOVE: usize = 20;

/// Orthonormalizes `seeds` in order (modified Gram-Schmidt).
///
/// The first output column is the normalized first seed. Above 20 ambient
/// dimensions each residual gets a second projection pass.
pub fn gram_schmidt(seeds: &[Vec<f64>]) -> Result<OrthonormalBasis, NumericsError> {
    let m = seeds.first().ok_or(NumericsError::Empty)?.len();
    let passes = if m > REORTHOGONALIZE_ABOVE { 2 } else { 1 };
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(seeds.len());
    for (index, seed) in seeds.iter().enumerate() {
        if seed.len() != m {
            return Err(NumericsError::DimensionMismatch {
                index,
                expected: m,
                found: seed.len(),
            });
        }
        let scale = norm(seed);
        let mut v = seed.clone();
        for _ in 0..passes {
            for col in &columns {
                let c = dot(col, &v);
                for (vi, qi) in v.iter_mut().zip(col) {
                    *vi -= c * qi;
                }
            }
        }
        let residual = norm(&v);
        if !(residual > DEGENERATE_RESIDUAL * scale) {
            return Err(NumericsError::Degenerate { index, residual });
        }
        v.iter_mut().for_each(|x| *x /= residual);
        columns.push(v);
    }
    Ok(OrthonormalBasis {
        columns,
        ambient_dim: m,
    })
}
