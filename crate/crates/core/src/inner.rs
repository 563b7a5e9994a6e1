//! Inner nested sampling: a constrained region seen from a center point as
//! a bundle of thin pyramids, one per stored direction.
//!
//! A region star-shaped about `center` has volume `V = ∫ R(e)^m / m dS`
//! over unit directions `e`. Running nested sampling over the sphere with
//! `f(e) = R(e)^m / m` yields directions in order of increasing radius, each
//! carrying a slice `dS_q` of the sphere. The resulting [`DifferentialAtlas`]
//! both estimates `V` and supports uniform draws from the region.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    run_nested_sampling, ConstrainedSampler, EngineError, NSConfig, NSObject, SamplerError,
    Target, TerminationReason, WeightedSample,
};
use crate::numerics::{ln_sphere_surface_area, log_sum, LogValue};
use crate::sphere::{continue_walk, random_direction, Direction, WalkState};

#[derive(Debug, Error)]
pub enum InnerError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("radius at q={q} grew from {old} to {new}; contours must shrink")]
    ConstraintInversion { q: usize, old: f64, new: f64 },
    #[error("atlas has no differential with positive volume")]
    Empty,
    #[error("center {0} has wrong dimension")]
    CenterDimension(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Differential {
    /// 1-based discard index.
    pub index_q: usize,
    pub direction: Vec<f64>,
    pub radius: f64,
    pub log_ds: LogValue,
    pub log_dv: LogValue,
}

/// A rejected direction kept to replace a differential's center line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spare {
    pub direction: Vec<f64>,
    pub radius: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkStats {
    pub random_draws: u64,
    pub random_rejections: u64,
    pub walks: u64,
    pub walk_accepts: u64,
    pub walk_rejects: u64,
}

impl WalkStats {
    pub fn walk_acceptance(&self) -> f64 {
        let total = self.walk_accepts + self.walk_rejects;
        if total == 0 {
            f64::NAN
        } else {
            self.walk_accepts as f64 / total as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    pub n_objects: usize,
    pub rng_seed: u64,
    /// Defaults to `N^2`.
    pub termination_factor: Option<f64>,
    pub max_iterations: Option<usize>,
    /// Consecutive random rejections before switching to the walk.
    pub walk_threshold: u64,
    /// Accepted steps per walk.
    pub walk_accepts: u64,
    pub spare_cap: usize,
    /// Keep the walk's step score from one replacement to the next.
    pub carry_step: bool,
}

impl InnerConfig {
    pub fn new(n_objects: usize, rng_seed: u64) -> Self {
        InnerConfig {
            n_objects,
            rng_seed,
            termination_factor: None,
            max_iterations: None,
            walk_threshold: 50,
            walk_accepts: 20,
            spare_cap: 4,
            carry_step: true,
        }
    }

    fn ns_config(&self, m: usize) -> NSConfig {
        let mut cfg = NSConfig::new(
            self.n_objects,
            LogValue::from_ln(ln_sphere_surface_area(m)),
            self.rng_seed,
        );
        if let Some(f) = self.termination_factor {
            cfg = cfg.with_termination_factor(f);
        }
        if let Some(cap) = self.max_iterations {
            cfg = cfg.with_max_iterations(cap);
        }
        cfg
    }
}

/// Log of the sphere slice carried by the `q`-th discarded direction.
pub fn log_ds(q: usize, n_objects: usize, m: usize) -> LogValue {
    assert!(q >= 1);
    let n1 = (n_objects + 1) as f64;
    LogValue::from_ln(
        -n1.ln() + (q - 1) as f64 * (-1.0 / n1).ln_1p() + ln_sphere_surface_area(m),
    )
}

fn log_dv(radius: f64, m: usize, log_ds: LogValue) -> LogValue {
    if radius <= 0.0 {
        return LogValue::ZERO;
    }
    LogValue::from_ln(m as f64 * radius.ln() - (m as f64).ln() + log_ds.ln())
}

fn log_f_of_radius(radius: f64, m: usize) -> f64 {
    if radius <= 0.0 {
        f64::NEG_INFINITY
    } else {
        m as f64 * radius.ln() - (m as f64).ln()
    }
}

fn radius_of_log_f(log_f: f64, m: usize) -> f64 {
    ((log_f + (m as f64).ln()) / m as f64).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DifferentialAtlas {
    differentials: Vec<Differential>,
    ambient_dim: usize,
    n_objects: usize,
    center: Vec<f64>,
    log_v_star: LogValue,
    cumulative: Vec<f64>,
    safety: Vec<Vec<Spare>>,
    spare_cap: usize,
    walk_stats: WalkStats,
    termination: TerminationReason,
}

impl DifferentialAtlas {
    fn assemble(
        differentials: Vec<Differential>,
        ambient_dim: usize,
        n_objects: usize,
        center: Vec<f64>,
        safety: Vec<Vec<Spare>>,
        spare_cap: usize,
        walk_stats: WalkStats,
        termination: TerminationReason,
    ) -> Result<Self, InnerError> {
        let log_v_star = log_sum(differentials.iter().map(|d| d.log_dv));
        if !log_v_star.is_finite() {
            return Err(InnerError::Empty);
        }
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = differentials
            .iter()
            .map(|d| {
                acc += (d.log_dv.ln() - log_v_star.ln()).exp();
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Ok(DifferentialAtlas {
            differentials,
            ambient_dim,
            n_objects,
            center,
            log_v_star,
            cumulative,
            safety,
            spare_cap,
            walk_stats,
            termination,
        })
    }

    pub fn differentials(&self) -> &[Differential] {
        &self.differentials
    }

    pub fn len(&self) -> usize {
        self.differentials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.differentials.is_empty()
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn log_v_star(&self) -> LogValue {
        self.log_v_star
    }

    pub fn safety(&self) -> &[Vec<Spare>] {
        &self.safety
    }

    pub fn walk_stats(&self) -> WalkStats {
        self.walk_stats
    }

    pub fn termination(&self) -> TerminationReason {
        self.termination
    }

    /// Differential holding cumulative fraction `u` in `[0, 1]`, and the
    /// fraction of that differential's volume below `u`.
    pub fn locate(&self, u: f64) -> (usize, f64) {
        let q = self
            .cumulative
            .partition_point(|&c| c < u)
            .min(self.cumulative.len() - 1);
        let lo = if q == 0 { 0.0 } else { self.cumulative[q - 1] };
        let width = self.cumulative[q] - lo;
        let frac = if width > 0.0 { ((u - lo) / width).clamp(0.0, 1.0) } else { 1.0 };
        (q, frac)
    }

    /// Height of the sub-pyramid of differential `q` holding volume `v`:
    /// `(m v / dS_q)^(1/m)`.
    pub fn sub_pyramid_radius(&self, q: usize, log_v: LogValue) -> f64 {
        let d = &self.differentials[q];
        if log_v.is_zero() {
            return 0.0;
        }
        let m = self.ambient_dim as f64;
        (((m.ln() + log_v.ln() - d.log_ds.ln()) / m).exp()).min(d.radius)
    }

    /// Distance and differential of one uniform draw.
    pub fn draw_radius<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, f64) {
        let (q, frac) = self.locate(rng.random::<f64>());
        let log_v = LogValue::from_ln(frac.ln() + self.differentials[q].log_dv.ln());
        (q, self.sub_pyramid_radius(q, log_v))
    }

    /// A uniform point from the union of the pyramids.
    pub fn draw_uniform_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (q, rho) = self.draw_radius(rng);
        self.point_along(&self.differentials[q].direction, rho)
    }

    fn point_along(&self, e: &[f64], rho: f64) -> Vec<f64> {
        self.center.iter().zip(e).map(|(c, x)| c + rho * x).collect()
    }

    /// Recomputes radii for a tighter constraint.
    pub fn refresh_radii<F>(&self, radius_fn: F, mode: RefreshMode) -> Result<Self, InnerError>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mode = match mode {
            RefreshMode::Interpolated { every } if every <= 1 => RefreshMode::Full,
            other => other,
        };
        let q_max = self.differentials.len();
        let step = match mode {
            RefreshMode::Full => 1,
            RefreshMode::Interpolated { every } => every.max(1),
        };
        // knots at every `step`-th index plus the last one
        let mut knots: Vec<usize> = (0..q_max).step_by(step).collect();
        if knots.last() != Some(&(q_max - 1)) {
            knots.push(q_max - 1);
        }
        let mut ratio = vec![f64::NAN; q_max];
        let mut new_radius = vec![f64::NAN; q_max];
        for &k in &knots {
            let d = &self.differentials[k];
            let r = radius_fn(&d.direction);
            check_shrink(d.index_q, d.radius, r)?;
            new_radius[k] = r;
            ratio[k] = if d.radius > 0.0 { r / d.radius } else { 0.0 };
        }
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            for q in a + 1..b {
                let s = (q - a) as f64 / (b - a) as f64;
                ratio[q] = ratio[a] + s * (ratio[b] - ratio[a]);
                new_radius[q] = self.differentials[q].radius * ratio[q];
            }
        }

        let m = self.ambient_dim;
        let differentials = self
            .differentials
            .iter()
            .zip(&new_radius)
            .map(|(d, &r)| Differential {
                radius: r,
                log_dv: log_dv(r, m, d.log_ds),
                ..d.clone()
            })
            .collect();
        let mut safety = Vec::with_capacity(q_max);
        for (q, spares) in self.safety.iter().enumerate() {
            let mut out = Vec::with_capacity(spares.len());
            for s in spares {
                let r = match mode {
                    RefreshMode::Full => {
                        let r = radius_fn(&s.direction);
                        check_shrink(self.differentials[q].index_q, s.radius, r)?;
                        r
                    }
                    RefreshMode::Interpolated { .. } => s.radius * ratio[q],
                };
                out.push(Spare {
                    direction: s.direction.clone(),
                    radius: r,
                });
            }
            safety.push(out);
        }
        DifferentialAtlas::assemble(
            differentials,
            m,
            self.n_objects,
            self.center.clone(),
            safety,
            self.spare_cap,
            self.walk_stats,
            self.termination,
        )
    }

    /// Files a rejected direction under the differential nearest in radius.
    pub fn store_spare(&mut self, spare: Spare) {
        let radii: Vec<f64> = self.differentials.iter().map(|d| d.radius).collect();
        file_spare(&radii, &mut self.safety, self.spare_cap, spare);
    }

    /// Writes `q,e1..em,R,dS,dV,log_dS,log_dV`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "q")?;
        for i in 1..=self.ambient_dim {
            write!(out, ",e{i}")?;
        }
        writeln!(out, ",R,dS,dV,log_dS,log_dV")?;
        for d in &self.differentials {
            write!(out, "{}", d.index_q)?;
            for x in &d.direction {
                write!(out, ",{x}")?;
            }
            writeln!(
                out,
                ",{},{},{},{},{}",
                d.radius,
                d.log_ds.exp(),
                d.log_dv.exp(),
                d.log_ds.ln(),
                d.log_dv.ln()
            )?;
        }
        Ok(())
    }
}

fn check_shrink(q: usize, old: f64, new: f64) -> Result<(), InnerError> {
    if new > old * (1.0 + 1e-9) + f64::MIN_POSITIVE || new.is_nan() {
        Err(InnerError::ConstraintInversion { q, old, new })
    } else {
        Ok(())
    }
}

fn file_spare(radii: &[f64], safety: &mut [Vec<Spare>], cap: usize, spare: Spare) {
    if radii.is_empty() || cap == 0 || !spare.radius.is_finite() {
        return;
    }
    let idx = radii.partition_point(|&r| r < spare.radius);
    let q = match idx {
        0 => 0,
        i if i == radii.len() => i - 1,
        i if (spare.radius - radii[i - 1]).abs() <= (radii[i] - spare.radius).abs() => i - 1,
        i => i,
    };
    let list = &mut safety[q];
    list.push(spare);
    if list.len() > cap {
        let r_q = radii[q];
        let far = list
            .iter()
            .enumerate()
            .max_by(|a, b| (a.1.radius - r_q).abs().total_cmp(&(b.1.radius - r_q).abs()))
            .map(|(i, _)| i)
            .expect("non-empty");
        list.remove(far);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefreshMode {
    Full,
    /// Recompute every `every`-th radius and interpolate the shrink ratio
    /// linearly in `q` between them.
    Interpolated { every: usize },
}

/// Nested sampling over directions: random draws until they stall, then a
/// walk from a surviving direction.
struct SphereSampler<'a> {
    m: usize,
    cfg: &'a InnerConfig,
    walking: bool,
    radii: Vec<f64>,
    safety: Vec<Vec<Spare>>,
    stats: WalkStats,
    walk: Option<WalkState>,
}

impl ConstrainedSampler for SphereSampler<'_> {
    fn initial_objects(
        &mut self,
        n: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<NSObject>, SamplerError> {
        Ok((0..n)
            .map(|_| {
                let e = random_direction(self.m, rng).into_inner();
                let log_f = target(&e);
                NSObject { theta: e, log_f }
            })
            .collect())
    }

    fn draw_above(
        &mut self,
        log_f_min: f64,
        live: &[NSObject],
        discarded: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NSObject, SamplerError> {
        if !self.walking {
            for _ in 0..self.cfg.walk_threshold {
                self.stats.random_draws += 1;
                let e = random_direction(self.m, rng).into_inner();
                let log_f = target(&e);
                if log_f >= log_f_min {
                    return Ok(NSObject { theta: e, log_f });
                }
                self.stats.random_rejections += 1;
                let spare = Spare {
                    radius: radius_of_log_f(log_f, self.m),
                    direction: e,
                };
                file_spare(&self.radii, &mut self.safety, self.cfg.spare_cap, spare);
            }
            self.walking = true;
        }

        let pick = rng.random_range(0..live.len() - 1);
        let start = if pick >= discarded { pick + 1 } else { pick };
        let start = Direction::new(live[start].theta.clone())
            .map_err(|e| SamplerError::Other(e.to_string()))?;
        let mut state = match (self.cfg.carry_step, self.walk.take()) {
            (true, Some(mut s)) => {
                s.restart_at(start);
                s
            }
            _ => WalkState::new(start),
        };
        let mut last = f64::NEG_INFINITY;
        continue_walk(
            &mut state,
            |e| {
                let lf = target(e.components());
                let ok = lf >= log_f_min;
                if ok {
                    last = lf;
                }
                ok
            },
            self.cfg.walk_accepts,
            rng,
        )
        .map_err(|e| match e {
            crate::sphere::WalkError::Stalled { iterations } => SamplerError::Stalled { iterations },
            other => SamplerError::Other(other.to_string()),
        })?;
        self.stats.walks += 1;
        self.stats.walk_accepts += state.accepted;
        self.stats.walk_rejects += state.rejected;
        let theta = state.current().components().to_vec();
        self.walk = Some(state);
        Ok(NSObject { theta, log_f: last })
    }

    fn on_discard(&mut self, sample: &WeightedSample) {
        self.radii.push(radius_of_log_f(sample.log_g.ln(), self.m));
        self.safety.push(Vec::new());
    }
}

/// Runs inner nested sampling over directions in `m` dimensions.
///
/// `radius_fn` maps a unit direction to the distance from `center` to the
/// constraint surface along it.
pub fn build_atlas<F>(
    radius_fn: F,
    m: usize,
    center: Vec<f64>,
    cfg: &InnerConfig,
) -> Result<DifferentialAtlas, InnerError>
where
    F: Fn(&[f64]) -> f64,
{
    if center.len() != m {
        return Err(InnerError::CenterDimension(center.len()));
    }
    let ns_cfg = cfg.ns_config(m);
    let target = |e: &[f64]| log_f_of_radius(radius_fn(e), m);
    let mut sampler = SphereSampler {
        m,
        cfg,
        walking: false,
        radii: Vec::new(),
        safety: Vec::new(),
        stats: WalkStats::default(),
        walk: None,
    };
    let result = run_nested_sampling(&target, &mut sampler, &ns_cfg)?;

    let differentials = result
        .samples
        .iter()
        .zip(&sampler.radii)
        .map(|(s, &radius)| {
            let q = s.iteration;
            let lds = log_ds(q, cfg.n_objects, m);
            Differential {
                index_q: q,
                direction: s.theta.clone(),
                radius,
                log_ds: lds,
                log_dv: log_dv(radius, m, lds),
            }
        })
        .collect();
    DifferentialAtlas::assemble(
        differentials,
        m,
        cfg.n_objects,
        center,
        sampler.safety,
        cfg.spare_cap,
        sampler.stats,
        result.termination,
    )
}

/// Where a drawn point came from.
#[derive(Clone, Debug, PartialEq)]
pub struct AtlasDraw {
    pub point: Vec<f64>,
    pub q: usize,
    pub rho: f64,
    /// Index into the differential's spares, when one replaced the center line.
    pub spare: Option<usize>,
}

/// Uniform draws that switch to spare directions when a differential comes
/// up again.
#[derive(Clone, Debug, Default)]
pub struct AtlasDrawer {
    uses: Vec<u32>,
}

impl AtlasDrawer {
    pub fn new() -> Self {
        AtlasDrawer::default()
    }

    /// Times differential `q` has been drawn.
    pub fn uses(&self, q: usize) -> u32 {
        self.uses.get(q).copied().unwrap_or(0)
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, atlas: &DifferentialAtlas, rng: &mut R) -> AtlasDraw {
        if self.uses.len() < atlas.len() {
            self.uses.resize(atlas.len(), 0);
        }
        let (q, rho) = atlas.draw_radius(rng);
        let k = self.uses[q] as usize;
        self.uses[q] += 1;
        let d = &atlas.differentials[q];
        match k.checked_sub(1).and_then(|i| atlas.safety[q].get(i).map(|s| (i, s))) {
            Some((i, s)) if d.radius > 0.0 => {
                let rho_s = rho * s.radius / d.radius;
                AtlasDraw {
                    point: atlas.point_along(&s.direction, rho_s),
                    q,
                    rho: rho_s,
                    spare: Some(i),
                }
            }
            _ => AtlasDraw {
                point: atlas.point_along(&d.direction, rho),
                q,
                rho,
                spare: None,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sphere_surface_area;
    use rand::SeedableRng;
    use std::f64::consts::PI;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn log_ds_examples() {
        assert!((log_ds(1, 1, 2).ln() - PI.ln()).abs() < 1e-12);
        assert!((log_ds(2, 1, 2).ln() - (PI / 2.0).ln()).abs() < 1e-12);
        let total: f64 = (1..4000).map(|q| log_ds(q, 50, 3).exp()).sum();
        assert!((total - sphere_surface_area(3)).abs() < 1e-9);
    }

    #[test]
    fn disc_atlas_volume_and_radii() {
        let rho0 = 1.7;
        let atlas = build_atlas(|_| rho0, 2, vec![0.0, 0.0], &InnerConfig::new(200, 1)).unwrap();
        let v = atlas.log_v_star().exp();
        assert!((v - PI * rho0 * rho0).abs() < 0.02 * PI * rho0 * rho0, "{v}");
        for d in atlas.differentials() {
            assert!((d.radius - rho0).abs() < 1e-12);
        }
    }

    #[test]
    fn radii_rise_with_q_and_weights_normalize() {
        let radius = |e: &[f64]| 1.0 / (e[0] * e[0] / 4.0 + e[1] * e[1] + e[2] * e[2] / 9.0).sqrt();
        let atlas = build_atlas(radius, 3, vec![0.0; 3], &InnerConfig::new(100, 2)).unwrap();
        for w in atlas.differentials().windows(2) {
            assert!(w[1].radius >= w[0].radius);
            assert_eq!(w[1].index_q, w[0].index_q + 1);
        }
        let total: f64 = atlas
            .differentials()
            .iter()
            .map(|d| (d.log_dv.ln() - atlas.log_v_star().ln()).exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
        for d in atlas.differentials() {
            let expect = 3.0 * d.radius.ln() - 3f64.ln() + d.log_ds.ln();
            assert!((d.log_dv.ln() - expect).abs() < 1e-12);
        }
        // ellipsoid with semi-axes 2, 1, 3
        let v = atlas.log_v_star().exp();
        let exact = 4.0 / 3.0 * PI * 6.0;
        assert!((v / exact - 1.0).abs() < 0.1, "{v} vs {exact}");
    }

    fn single(radius: f64) -> DifferentialAtlas {
        let lds = LogValue::from_ln(PI.ln());
        DifferentialAtlas::assemble(
            vec![Differential {
                index_q: 1,
                direction: vec![1.0, 0.0],
                radius,
                log_ds: lds,
                log_dv: log_dv(radius, 2, lds),
            }],
            2,
            1,
            vec![0.0, 0.0],
            vec![Vec::new()],
            4,
            WalkStats::default(),
            TerminationReason::SelfContribution,
        )
        .unwrap()
    }

    #[test]
    fn single_differential_radius_law() {
        let atlas = single(1.0);
        let mut r = rng(3);
        let n = 100_000;
        let mean = (0..n).map(|_| atlas.draw_radius(&mut r).1).sum::<f64>() / n as f64;
        assert!((mean - 2.0 / 3.0).abs() < 0.01);

        let full = atlas.differentials()[0].log_dv;
        assert!((atlas.sub_pyramid_radius(0, full) - 1.0).abs() < 1e-12);
        assert_eq!(atlas.sub_pyramid_radius(0, LogValue::ZERO), 0.0);
        assert!(atlas.sub_pyramid_radius(0, LogValue::from_ln(-60.0)) < 1e-12);
    }

    #[test]
    fn disc_draws_have_uniform_squared_radius() {
        let atlas = build_atlas(|_| 2.0, 2, vec![0.5, -1.0], &InnerConfig::new(100, 4)).unwrap();
        let mut r = rng(5);
        let n = 100_000;
        let mut u: Vec<f64> = (0..n)
            .map(|_| {
                let p = atlas.draw_uniform_point(&mut r);
                let d2 = (p[0] - 0.5).powi(2) + (p[1] + 1.0).powi(2);
                assert!(d2.sqrt() <= 2.0 + 1e-12);
                d2 / 4.0
            })
            .collect();
        u.sort_by(f64::total_cmp);
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &x)| (x - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - x).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 1.628 / (n as f64).sqrt(), "D={ks}");
    }

    #[test]
    fn refresh_examples() {
        let radius = |e: &[f64]| 1.0 / (e[0] * e[0] / 4.0 + e[1] * e[1]).sqrt();
        let atlas = build_atlas(radius, 2, vec![0.0; 2], &InnerConfig::new(60, 6)).unwrap();

        let same = atlas.refresh_radii(radius, RefreshMode::Full).unwrap();
        for (a, b) in atlas.differentials().iter().zip(same.differentials()) {
            assert!((a.radius - b.radius).abs() < 1e-12);
        }
        assert!((same.log_v_star().ln() - atlas.log_v_star().ln()).abs() < 1e-12);

        let half = atlas.refresh_radii(|e| 0.5 * radius(e), RefreshMode::Full).unwrap();
        let drop = atlas.log_v_star().ln() - half.log_v_star().ln();
        assert!((drop - 2.0 * 2f64.ln()).abs() < 1e-9);

        let k1 = atlas
            .refresh_radii(|e| 0.5 * radius(e), RefreshMode::Interpolated { every: 1 })
            .unwrap();
        assert_eq!(k1, half);

        let k10 = atlas
            .refresh_radii(|e| 0.5 * radius(e), RefreshMode::Interpolated { every: 10 })
            .unwrap();
        assert!((k10.log_v_star().ln() - half.log_v_star().ln()).abs() < 1e-9);

        let err = atlas.refresh_radii(|e| 1.5 * radius(e), RefreshMode::Full).unwrap_err();
        assert!(matches!(err, InnerError::ConstraintInversion { .. }));
    }

    #[test]
    fn spares_file_and_evict() {
        let mut atlas = single(1.0);
        atlas.store_spare(Spare { direction: vec![0.0, 1.0], radius: 0.9 });
        assert_eq!(atlas.safety()[0].len(), 1);
        for r in [0.5, 0.95, 0.97] {
            atlas.store_spare(Spare { direction: vec![0.0, 1.0], radius: r });
        }
        assert_eq!(atlas.safety()[0].len(), 4);
        atlas.store_spare(Spare { direction: vec![0.0, -1.0], radius: 0.99 });
        let radii: Vec<f64> = atlas.safety()[0].iter().map(|s| s.radius).collect();
        assert_eq!(radii, vec![0.9, 0.95, 0.97, 0.99]);

        // nearest of several differentials
        let mut safety = vec![Vec::new(); 3];
        file_spare(&[1.0, 2.0, 3.0], &mut safety, 4, Spare { direction: vec![1.0], radius: 2.4 });
        file_spare(&[1.0, 2.0, 3.0], &mut safety, 4, Spare { direction: vec![1.0], radius: 9.0 });
        assert_eq!(safety[1].len(), 1);
        assert_eq!(safety[2].len(), 1);
    }

    #[test]
    fn repeated_draw_uses_spare() {
        let mut atlas = single(1.0);
        atlas.store_spare(Spare { direction: vec![0.0, 1.0], radius: 0.8 });
        let mut drawer = AtlasDrawer::new();
        let mut r = rng(7);
        let first = drawer.draw(&atlas, &mut r);
        assert_eq!(first.spare, None);
        assert!(first.point[1].abs() < 1e-15);
        let second = drawer.draw(&atlas, &mut r);
        assert_eq!(second.spare, Some(0));
        assert!(second.point[0].abs() < 1e-15);
        assert!(second.rho <= 0.8);
        let third = drawer.draw(&atlas, &mut r);
        assert_eq!(third.spare, None);
        assert_eq!(drawer.uses(0), 3);
    }

    #[test]
    fn random_phase_collects_spares_within_cap() {
        let radius = |e: &[f64]| 1.0 + 0.5 * e[0];
        let atlas = build_atlas(radius, 3, vec![0.0; 3], &InnerConfig::new(40, 8)).unwrap();
        let stats = atlas.walk_stats();
        assert!(stats.random_rejections > 0);
        let stored: usize = atlas.safety().iter().map(Vec::len).sum();
        assert!(stored > 0);
        assert!(atlas.safety().iter().all(|s| s.len() <= 4));
        // a spare sits nearer its own differential than the previous one
        for (q, spares) in atlas.safety().iter().enumerate().skip(1) {
            let prev = atlas.differentials()[q - 1].radius;
            for s in spares {
                assert!(s.radius >= prev - 1e-12);
            }
        }
    }
}
