//! Dirichlet posteriors over the probability simplex and the geometry of
//! rays cast from an interior center.
//!
//! Densities are with respect to Lebesgue measure on the first `M - 1`
//! coordinates. Chart coordinates use an orthonormal basis of the simplex
//! plane, whose volume element is `sqrt(M)` times larger.

use rand::Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::numerics::{gram_schmidt, LogValue, OrthonormalBasis};

const RADIUS_REL_TOL: f64 = 1e-10;
const RADIUS_MAX_ITER: usize = 200;

#[derive(Debug, Error, PartialEq)]
pub enum DirichletError {
    #[error("count {index} is {value}; counts must be at least 1")]
    CountBelowOne { index: usize, value: f64 },
    #[error("need at least 2 counts, got {0}")]
    TooFewCounts(usize),
    #[error("shape {rows}x{cols} does not match {len} counts")]
    Shape { rows: usize, cols: usize, len: usize },
    #[error("expected {expected} components, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("center has log density {center} below the constraint {constraint}")]
    CenterBelowConstraint { center: f64, constraint: f64 },
    #[error("direction does not leave the center")]
    NoPositiveRadius,
    #[error("center is not interior: component {index} is {value}")]
    CenterNotInterior { index: usize, value: f64 },
}

/// Observed counts, flattened row-major when they come from a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    counts: Vec<f64>,
    shape: Option<(usize, usize)>,
}

impl CountTable {
    pub fn new(counts: Vec<f64>) -> Result<Self, DirichletError> {
        if counts.len() < 2 {
            return Err(DirichletError::TooFewCounts(counts.len()));
        }
        for (index, &value) in counts.iter().enumerate() {
            if !(value >= 1.0) || !value.is_finite() {
                return Err(DirichletError::CountBelowOne { index, value });
            }
        }
        Ok(CountTable { counts, shape: None })
    }

    pub fn with_shape(mut self, rows: usize, cols: usize) -> Result<Self, DirichletError> {
        if rows * cols != self.counts.len() {
            return Err(DirichletError::Shape {
                rows,
                cols,
                len: self.counts.len(),
            });
        }
        self.shape = Some((rows, cols));
        Ok(self)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn shape(&self) -> Option<(usize, usize)> {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Normalized Dirichlet log density.
pub fn log_dirichlet_posterior(theta: &[f64], counts: &CountTable) -> Result<LogValue, DirichletError> {
    if theta.len() != counts.dim() {
        return Err(DirichletError::DimensionMismatch {
            expected: counts.dim(),
            found: theta.len(),
        });
    }
    Ok(LogValue::from_ln(log_norm(counts) + log_kernel(theta, counts.counts())))
}

fn log_norm(counts: &CountTable) -> f64 {
    ln_gamma(counts.total()) - counts.counts().iter().map(|&r| ln_gamma(r)).sum::<f64>()
}

fn log_kernel(theta: &[f64], r: &[f64]) -> f64 {
    let mut s = 0.0;
    for (&t, &ri) in theta.iter().zip(r) {
        if ri == 1.0 {
            continue;
        }
        if t <= 0.0 {
            return f64::NEG_INFINITY;
        }
        s += (ri - 1.0) * t.ln();
    }
    s
}

/// Posterior as a reusable closure-like object.
#[derive(Clone, Debug)]
pub struct DirichletPosterior {
    counts: CountTable,
    log_norm: f64,
}

impl DirichletPosterior {
    pub fn new(counts: CountTable) -> Self {
        let log_norm = log_norm(&counts);
        DirichletPosterior { counts, log_norm }
    }

    pub fn counts(&self) -> &CountTable {
        &self.counts
    }

    pub fn ln_density(&self, theta: &[f64]) -> f64 {
        self.log_norm + log_kernel(theta, self.counts.counts())
    }

    pub fn mean(&self) -> Vec<f64> {
        let n = self.counts.total();
        self.counts.counts().iter().map(|r| r / n).collect()
    }

    /// Marginal variance of each component.
    pub fn variance(&self) -> Vec<f64> {
        let n = self.counts.total();
        self.mean().iter().map(|m| m * (1.0 - m) / (n + 1.0)).collect()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CenterRule {
    /// `r_i / n`. Serialized as the CLI spelling so reports replay.
    #[default]
    #[serde(rename = "paper")]
    CountShares,
    /// `(r_i - 1) / (n - M)`, needs every count above 1.
    AnalyticMode,
    Custom(Vec<f64>),
}

/// `r_i / n`.
pub fn dirichlet_center(counts: &CountTable) -> Vec<f64> {
    let n = counts.total();
    counts.counts().iter().map(|r| r / n).collect()
}

pub fn center_for(rule: &CenterRule, counts: &CountTable) -> Result<Vec<f64>, DirichletError> {
    let c = match rule {
        CenterRule::CountShares => dirichlet_center(counts),
        CenterRule::AnalyticMode => {
            let denom = counts.total() - counts.dim() as f64;
            counts.counts().iter().map(|r| (r - 1.0) / denom).collect()
        }
        CenterRule::Custom(c) => {
            if c.len() != counts.dim() {
                return Err(DirichletError::DimensionMismatch {
                    expected: counts.dim(),
                    found: c.len(),
                });
            }
            let s: f64 = c.iter().sum();
            c.iter().map(|x| x / s).collect()
        }
    };
    for (index, &value) in c.iter().enumerate() {
        if !(value > 0.0) {
            return Err(DirichletError::CenterNotInterior { index, value });
        }
    }
    Ok(c)
}

/// Orthonormal coordinates on the simplex plane around a center.
#[derive(Clone, Debug, PartialEq)]
pub struct SimplexChart {
    center: Vec<f64>,
    basis: OrthonormalBasis,
}

impl SimplexChart {
    pub fn new(center: Vec<f64>) -> Result<Self, DirichletError> {
        let m = center.len();
        if m < 2 {
            return Err(DirichletError::TooFewCounts(m));
        }
        let seeds: Vec<Vec<f64>> = (0..m - 1)
            .map(|i| {
                let mut u = vec![0.0; m];
                u[i] = 1.0;
                u[m - 1] = -1.0;
                u
            })
            .collect();
        let basis = gram_schmidt(&seeds).expect("vertex differences are independent");
        Ok(SimplexChart { center, basis })
    }

    pub fn for_counts(counts: &CountTable) -> Self {
        SimplexChart::new(dirichlet_center(counts)).expect("counts have M >= 2")
    }

    pub fn with_center(&self, center: Vec<f64>) -> Self {
        assert_eq!(center.len(), self.center.len());
        SimplexChart {
            center,
            basis: self.basis.clone(),
        }
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    /// `M`.
    pub fn simplex_dim(&self) -> usize {
        self.center.len()
    }

    /// `M - 1`.
    pub fn chart_dim(&self) -> usize {
        self.center.len() - 1
    }

    /// `center + W x`.
    pub fn to_simplex(&self, x: &[f64]) -> Vec<f64> {
        let d = self.basis.combine(x);
        self.center.iter().zip(&d).map(|(c, di)| c + di).collect()
    }

    /// Chart coordinates of a point in the plane.
    pub fn to_chart(&self, theta: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = theta.iter().zip(&self.center).map(|(t, c)| t - c).collect();
        self.basis.project(&diff)
    }
}

/// Distance from the center to the simplex boundary along chart direction `e`.
pub fn simplex_boundary_radius(chart: &SimplexChart, e: &[f64]) -> Result<f64, DirichletError> {
    let delta = chart.basis.combine(e);
    let mut best = f64::INFINITY;
    for (&c, &d) in chart.center.iter().zip(&delta) {
        if d < 0.0 {
            best = best.min((-c / d).max(0.0));
        }
    }
    if best.is_finite() {
        Ok(best)
    } else {
        Err(DirichletError::NoPositiveRadius)
    }
}

/// Largest `rho` along `e` with posterior at least `log_l_star`, by bisection.
pub fn likelihood_radius(
    chart: &SimplexChart,
    e: &[f64],
    posterior: &DirichletPosterior,
    log_l_star: f64,
) -> Result<f64, DirichletError> {
    let at_center = posterior.ln_density(&chart.center);
    if at_center < log_l_star {
        return Err(DirichletError::CenterBelowConstraint {
            center: at_center,
            constraint: log_l_star,
        });
    }
    let r_max = simplex_boundary_radius(chart, e)?;
    if log_l_star == f64::NEG_INFINITY {
        return Ok(r_max);
    }
    let delta = chart.basis.combine(e);
    let density_at = |rho: f64| -> f64 {
        let theta: Vec<f64> = chart
            .center
            .iter()
            .zip(&delta)
            .map(|(c, d)| (c + rho * d).max(0.0))
            .collect();
        posterior.ln_density(&theta)
    };
    // a flat posterior satisfies a constraint equal to its peak everywhere
    if density_at(r_max) >= log_l_star {
        return Ok(r_max);
    }
    if log_l_star == at_center {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, r_max);
    for _ in 0..RADIUS_MAX_ITER {
        if hi - lo <= RADIUS_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if density_at(mid) >= log_l_star {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Log volume of the simplex in its own plane: `ln(sqrt(M) / (M-1)!)`.
pub fn log_simplex_volume(m: usize) -> LogValue {
    assert!(m >= 2);
    LogValue::from_ln(0.5 * (m as f64).ln() - ln_gamma(m as f64))
}

/// Uniform point on the simplex from normalized exponential spacings.
pub fn uniform_simplex_point<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = x.iter().sum();
    x.iter_mut().for_each(|v| *v /= s);
    x
}
