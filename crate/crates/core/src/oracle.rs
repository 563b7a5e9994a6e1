//! Brute-force references in at most three dimensions: midpoint grids,
//! sorted area curves and pyramid sums over a planar contour.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{ConstrainedSampler, NSObject, SamplerError, Target};

pub const MAX_GRID_DIM: usize = 3;

/// Peak of [`ellipse_likelihood`], `1 / (2 pi sqrt(0.75))`.
pub const ELLIPSE_PEAK: f64 = 0.183_776_298_473_930_7;

/// Bracket and absolute tolerance of the contour radius search.
const RAY_BRACKET: f64 = 20.0;
const RAY_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("grid dimension {0} is outside 1..=3")]
    Dimension(usize),
    #[error("axis {axis}: bounds [{lower}, {upper}] or {cells} cells invalid")]
    Axis {
        axis: usize,
        lower: f64,
        upper: f64,
        cells: usize,
    },
    #[error("bounds and cell counts differ in length")]
    Mismatch,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    cells: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self, OracleError> {
        if lower.len() != upper.len() || lower.len() != cells.len() {
            return Err(OracleError::Mismatch);
        }
        if lower.is_empty() || lower.len() > MAX_GRID_DIM {
            return Err(OracleError::Dimension(lower.len()));
        }
        for axis in 0..lower.len() {
            let (l, u, c) = (lower[axis], upper[axis], cells[axis]);
            if !(l.is_finite() && u.is_finite() && u > l && c >= 1) {
                return Err(OracleError::Axis {
                    axis,
                    lower: l,
                    upper: u,
                    cells: c,
                });
            }
        }
        Ok(GridSpec { lower, upper, cells })
    }

    /// Same bounds and count on every axis.
    pub fn cube(dim: usize, lower: f64, upper: f64, cells: usize) -> Result<Self, OracleError> {
        GridSpec::new(vec![lower; dim], vec![upper; dim], vec![cells; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }

    fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    /// Measure of one cell.
    pub fn cell_measure(&self) -> f64 {
        (0..self.dim()).map(|a| self.width(a)).product()
    }

    pub fn measure(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    /// Per-axis indices of flat cell `i`; the first axis varies slowest.
    fn unflatten(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            idx[a] = i % self.cells[a];
            i /= self.cells[a];
        }
        idx
    }

    pub fn cell_center(&self, i: usize) -> Vec<f64> {
        self.unflatten(i)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.lower[a] + (k as f64 + 0.5) * self.width(a))
            .collect()
    }

    /// Flat index of the cell containing `x`, clamping onto the grid.
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let mut i = 0;
        for a in 0..self.dim() {
            let k = ((x[a] - self.lower[a]) / self.width(a)).floor();
            let k = (k.max(0.0) as usize).min(self.cells[a] - 1);
            i = i * self.cells[a] + k;
        }
        i
    }

    fn point_in_cell<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Vec<f64> {
        self.unflatten(i)
            .iter()
            .enumerate()
            .map(|(a, &k)| self.lower[a] + (k as f64 + rng.random::<f64>()) * self.width(a))
            .collect()
    }
}

/// Midpoint rule. Ordinates are summed in index order and scaled once, so a
/// constant integrand integrates exactly.
pub fn grid_integrate<F: Fn(&[f64]) -> f64>(f: F, spec: &GridSpec) -> f64 {
    let total: f64 = (0..spec.n_cells()).map(|i| f(&spec.cell_center(i))).sum();
    total * spec.measure() / spec.n_cells() as f64
}

/// Cell ordinates sorted descending, paired with the cumulative measure up
/// to and including each cell.
pub fn sorted_area_curve<F: Fn(&[f64]) -> f64>(f: F, spec: &GridSpec) -> Vec<(f64, f64)> {
    let dw = spec.cell_measure();
    let mut g: Vec<f64> = (0..spec.n_cells()).map(|i| f(&spec.cell_center(i))).collect();
    g.sort_by(|a, b| b.total_cmp(a));
    g.into_iter()
        .enumerate()
        .map(|(i, gi)| ((i + 1) as f64 * dw, gi))
        .collect()
}

/// Area under a step curve from [`sorted_area_curve`].
pub fn curve_integral(curve: &[(f64, f64)]) -> f64 {
    let mut prev = 0.0;
    curve
        .iter()
        .map(|&(w, g)| {
            let a = g * (w - prev);
            prev = w;
            a
        })
        .sum()
}

pub fn write_curve_csv<W: Write>(curve: &[(f64, f64)], mut out: W) -> io::Result<()> {
    writeln!(out, "w,g")?;
    for (w, g) in curve {
        writeln!(out, "{w},{g}")?;
    }
    Ok(())
}

/// Bivariate normal with unit variances and correlation -0.7.
pub fn correlated_gaussian(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[1]);
    (1.0f64 - 0.49).sqrt() / (2.0 * PI) * (-0.5 * (a * a + 1.4 * a * b + b * b)).exp()
}

/// Bivariate normal with unit variances and correlation -0.5.
pub fn ellipse_likelihood(x: f64, y: f64) -> f64 {
    ELLIPSE_PEAK * (-(x * x + x * y + y * y) / 1.5).exp()
}

/// Exact area of `{ellipse_likelihood >= l_star}`.
pub fn ellipse_contour_area(l_star: f64) -> f64 {
    let c = 2.0 * (ELLIPSE_PEAK / l_star).ln();
    PI * c * 0.75f64.sqrt()
}

/// Distance from the origin to the `l_star` contour at `angle`.
pub fn ray_radius<L: Fn(f64, f64) -> f64>(l: &L, angle: f64, l_star: f64) -> f64 {
    let (c, s) = (angle.cos(), angle.sin());
    let (mut lo, mut hi) = (0.0, RAY_BRACKET);
    if l(hi * c, hi * s) >= l_star {
        return hi;
    }
    while hi - lo > RAY_TOL {
        let mid = 0.5 * (lo + hi);
        if l(mid * c, mid * s) >= l_star {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `(angle, R)` at the centers of `n` equal arcs.
pub fn sector_radii<L: Fn(f64, f64) -> f64>(l: &L, l_star: f64, n: usize) -> Vec<(f64, f64)> {
    let ds = 2.0 * PI / n as f64;
    (0..n)
        .map(|i| {
            let angle = (i as f64 + 0.5) * ds;
            (angle, ray_radius(l, angle, l_star))
        })
        .collect()
}

/// `sum R_i^2 / 2 dS` over `n` equal arcs.
pub fn pyramid_sum<L: Fn(f64, f64) -> f64>(l: &L, l_star: f64, n: usize) -> f64 {
    let ds = 2.0 * PI / n as f64;
    sector_radii(l, l_star, n)
        .iter()
        .map(|(_, r)| r * r / 2.0 * ds)
        .sum()
}

pub fn ellipse_pyramid_sum(l_star: f64, n_sectors: usize) -> f64 {
    pyramid_sum(&ellipse_likelihood, l_star, n_sectors)
}

/// Exact constrained draws for a target that is constant on grid cells.
///
/// Flat cells would tie, so the target carries a negligible increasing key
/// (cell rank, then position along the first axis) that makes every level
/// set of measure zero.
#[derive(Clone, Debug)]
pub struct GridCellSampler {
    spec: GridSpec,
    log_values: Vec<f64>,
    /// Cell indices sorted by value, ascending.
    order: Vec<usize>,
    rank: Vec<usize>,
}

const TIE_BREAK: f64 = 1e-9;

impl GridCellSampler {
    /// `log_f` is evaluated once per cell center.
    pub fn new<F: Fn(&[f64]) -> f64>(log_f: F, spec: GridSpec) -> Self {
        let log_values: Vec<f64> = (0..spec.n_cells()).map(|i| log_f(&spec.cell_center(i))).collect();
        let mut order: Vec<usize> = (0..log_values.len()).collect();
        order.sort_by(|&a, &b| log_values[a].total_cmp(&log_values[b]).then(a.cmp(&b)));
        let mut rank = vec![0; order.len()];
        for (r, &cell) in order.iter().enumerate() {
            rank[cell] = r;
        }
        GridCellSampler {
            spec,
            log_values,
            order,
            rank,
        }
    }

    /// Position of `x` along the first axis inside its cell, in [0, 1).
    fn frac(&self, cell: usize, x: &[f64]) -> f64 {
        let k = self.spec.unflatten(cell)[0] as f64;
        let t = (x[0] - self.spec.lower[0]) / self.spec.width(0) - k;
        t.clamp(0.0, 1.0 - f64::EPSILON)
    }

    /// The piecewise-constant target the sampler draws under.
    pub fn log_target(&self, x: &[f64]) -> f64 {
        let cell = self.spec.cell_of(x);
        let key = (self.rank[cell] as f64 + self.frac(cell, x)) / self.order.len() as f64;
        self.log_values[cell] + TIE_BREAK * key
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Exact sum over cells.
    pub fn exact_sum(&self) -> f64 {
        let dw = self.spec.cell_measure();
        self.log_values.iter().map(|v| v.exp() * dw).sum()
    }
}

impl ConstrainedSampler for GridCellSampler {
    fn initial_objects(
        &mut self,
        n: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<NSObject>, SamplerError> {
        Ok((0..n)
            .map(|_| {
                let cell = rng.random_range(0..self.spec.n_cells());
                let theta = self.spec.point_in_cell(cell, rng);
                let log_f = target(&theta);
                NSObject { theta, log_f }
            })
            .collect())
    }

    fn draw_above(
        &mut self,
        _log_f_min: f64,
        live: &[NSObject],
        discarded: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NSObject, SamplerError> {
        let floor = &live[discarded].theta;
        let cell = self.spec.cell_of(floor);
        let (rank, frac) = (self.rank[cell], self.frac(cell, floor));
        // region above the key, in units of one cell
        let rest = 1.0 - frac;
        let total = rest + (self.order.len() - rank - 1) as f64;
        let u = rng.random::<f64>() * total;
        let mut theta;
        if u < rest || rank + 1 == self.order.len() {
            theta = self.spec.point_in_cell(cell, rng);
            let k = self.spec.unflatten(cell)[0] as f64;
            let t = frac + rng.random::<f64>() * rest;
            theta[0] = self.spec.lower[0] + (k + t) * self.spec.width(0);
        } else {
            let above = rank + 1 + ((u - rest) as usize).min(self.order.len() - rank - 2);
            theta = self.spec.point_in_cell(self.order[above], rng);
        }
        let log_f = target(&theta);
        Ok(NSObject { theta, log_f })
    }
}
