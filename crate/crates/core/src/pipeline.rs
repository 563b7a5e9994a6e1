//! End-to-end runs: the Dirichlet posterior pipeline (warm-up, atlas, nested
//! sampling with atlas proposals, moments), the simplex volume check and
//! plain nested sampling of an expression over a box.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dirichlet::{
    center_for, likelihood_radius, simplex_boundary_radius, uniform_simplex_point, CenterRule, CountTable,
    DirichletError, DirichletPosterior, SimplexChart,
};
use crate::engine::{
    run_nested_sampling, BoxRejectionSampler, ConstrainedSampler, EngineError, NSConfig, NSObject, NSRunResult,
    SamplerError, Target,
};
use crate::expr::{EvalError, FunctionalExpr};
use crate::inner::{build_atlas, AtlasDrawer, DifferentialAtlas, InnerConfig, InnerError, RefreshMode};
use crate::numerics::LogValue;

pub const DEFAULT_OBJECTS: usize = 100;
pub const DEFAULT_INNER_OBJECTS: usize = 1000;
/// Warm-up scatter size per live object.
pub const WARMUP_FACTOR: usize = 10;
pub const REFRESH_WINDOW: usize = 100;
pub const REFRESH_REJECT_RATIO: f64 = 0.9;
/// Proposals allowed for one replacement before giving up.
pub const MAX_PROPOSALS: u64 = 1_000_000;

/// Correlated Gaussian on `[-5, 5]^2`, the default `integrate` target.
pub const GAUSSIAN_INTEGRAND: &str = "sqrt(1 - 0.49) / (2 * 3.141592653589793) * exp(-0.5 * (t1^2 + 1.4*t1*t2 + t2^2))";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Warmup,
    Atlas,
    Seeding,
    Sampling,
    Moments,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Warmup => "warm-up",
            Stage::Atlas => "atlas",
            Stage::Seeding => "seeding",
            Stage::Sampling => "sampling",
            Stage::Moments => "moments",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage}: {source}")]
    Dirichlet {
        stage: Stage,
        #[source]
        source: DirichletError,
    },
    #[error("{stage}: {source}")]
    Inner {
        stage: Stage,
        #[source]
        source: InnerError,
    },
    #[error("{stage}: {source}")]
    Engine {
        stage: Stage,
        #[source]
        source: EngineError,
    },
    #[error("{stage}: {source}")]
    Sampler {
        stage: Stage,
        #[source]
        source: SamplerError,
    },
    #[error("integrand at {point:?}: {source}")]
    Integrand {
        point: Vec<f64>,
        #[source]
        source: EvalError,
    },
    #[error("integrand is negative ({value}) at {point:?}")]
    NegativeIntegrand { point: Vec<f64>, value: f64 },
    #[error("box bounds: {0}")]
    Bounds(String),
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Dirichlet { stage, .. }
            | PipelineError::Inner { stage, .. }
            | PipelineError::Engine { stage, .. }
            | PipelineError::Sampler { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// Independent seed for sub-run `stream` of a run seeded with `seed`.
pub fn stream_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_WARMUP: u64 = 1;
const STREAM_INNER: u64 = 2;
const STREAM_PROPER: u64 = 3;
const STREAM_SEEDING: u64 = 4;
/// Rebuild `k` uses stream `STREAM_REBUILD + k`.
const STREAM_REBUILD: u64 = 16;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirichletConfig {
    pub n_objects: usize,
    pub inner_objects: usize,
    pub seed: u64,
    pub termination_factor: Option<f64>,
    pub max_iterations: Option<usize>,
    pub center: CenterRule,
    pub warmup_points: usize,
    pub refresh: RefreshMode,
}

impl DirichletConfig {
    pub fn new(seed: u64) -> Self {
        DirichletConfig {
            n_objects: DEFAULT_OBJECTS,
            inner_objects: DEFAULT_INNER_OBJECTS,
            seed,
            termination_factor: None,
            max_iterations: None,
            center: CenterRule::CountShares,
            warmup_points: WARMUP_FACTOR * DEFAULT_OBJECTS,
            refresh: RefreshMode::Full,
        }
    }

    /// Sets the live-object count and rescales the warm-up scatter with it.
    pub fn with_objects(mut self, n: usize) -> Self {
        self.n_objects = n;
        self.warmup_points = WARMUP_FACTOR * n;
        self
    }

    pub fn with_inner_objects(mut self, n: usize) -> Self {
        self.inner_objects = n;
        self
    }

    fn inner_config(&self, seed: u64) -> InnerConfig {
        let mut cfg = InnerConfig::new(self.inner_objects, seed);
        cfg.termination_factor = self.termination_factor;
        cfg
    }
}

/// Counters from the atlas-backed proposals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalStats {
    pub proposals: u64,
    pub rejections: u64,
    pub refreshes: u64,
    pub rebuilds: u64,
}

#[derive(Clone, Debug)]
pub struct DirichletRun {
    pub result: NSRunResult,
    /// Atlas as it stood when sampling stopped.
    pub atlas: DifferentialAtlas,
    /// Differentials in the atlas built for the warm-up constraint.
    pub initial_atlas_size: usize,
    pub log_l0: f64,
    pub center: Vec<f64>,
    pub stats: ProposalStats,
}

/// Proposals from a differential atlas in chart coordinates, refreshed as the
/// constraint rises.
struct AtlasSampler<'a> {
    posterior: &'a DirichletPosterior,
    cfg: &'a DirichletConfig,
    /// Fixed chart whose origin is the initial center.
    chart: SimplexChart,
    atlas: DifferentialAtlas,
    atlas_log_l: f64,
    drawer: AtlasDrawer,
    window: VecDeque<bool>,
    seeds: Vec<NSObject>,
    stats: ProposalStats,
}

impl AtlasSampler<'_> {
    fn theta_of(&self, x: &[f64]) -> Vec<f64> {
        // points on the boundary can round a hair below zero
        self.chart.to_simplex(x).into_iter().map(|t| t.max(0.0)).collect()
    }

    fn propose(&mut self, log_f_min: f64, target: &Target<'_>, rng: &mut ChaCha8Rng) -> Option<NSObject> {
        self.stats.proposals += 1;
        let draw = self.drawer.draw(&self.atlas, rng);
        let theta = self.theta_of(&draw.point);
        let log_f = target(&theta);
        let ok = log_f >= log_f_min;
        if self.window.len() == REFRESH_WINDOW {
            self.window.pop_front();
        }
        self.window.push_back(ok);
        if ok {
            Some(NSObject { theta, log_f })
        } else {
            self.stats.rejections += 1;
            None
        }
    }

    fn refresh_due(&self) -> bool {
        let rejected = self.window.iter().filter(|ok| !**ok).count();
        self.window.len() == REFRESH_WINDOW && rejected as f64 > REFRESH_REJECT_RATIO * REFRESH_WINDOW as f64
    }

    /// Tightens the atlas to `log_l`, rebuilding it around the best live
    /// object once the center itself falls below the constraint.
    fn refresh(&mut self, log_l: f64, live: &[NSObject]) -> Result<(), InnerError> {
        self.window.clear();
        if log_l <= self.atlas_log_l {
            return Ok(());
        }
        let center_theta = self.chart.to_simplex(self.atlas.center());
        let posterior = self.posterior;
        if posterior.ln_density(&center_theta) >= log_l {
            let local = self.chart.with_center(center_theta);
            let radius = |e: &[f64]| likelihood_radius(&local, e, posterior, log_l).unwrap_or(0.0);
            self.atlas = self.atlas.refresh_radii(radius, self.cfg.refresh)?;
            self.stats.refreshes += 1;
        } else {
            let best = live
                .iter()
                .max_by(|a, b| a.log_f.total_cmp(&b.log_f))
                .expect("live set is non-empty");
            let local = self.chart.with_center(best.theta.clone());
            let radius = |e: &[f64]| likelihood_radius(&local, e, posterior, log_l).unwrap_or(0.0);
            let seed = stream_seed(self.cfg.seed, STREAM_REBUILD + self.stats.rebuilds);
            let center = self.chart.to_chart(&best.theta);
            self.atlas = build_atlas(radius, self.chart.chart_dim(), center, &self.cfg.inner_config(seed))?;
            self.drawer = AtlasDrawer::new();
            self.stats.rebuilds += 1;
        }
        self.atlas_log_l = log_l;
        Ok(())
    }
}

impl ConstrainedSampler for AtlasSampler<'_> {
    fn initial_objects(
        &mut self,
        n: usize,
        _target: &Target<'_>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<NSObject>, SamplerError> {
        debug_assert_eq!(n, self.seeds.len());
        Ok(std::mem::take(&mut self.seeds))
    }

    fn draw_above(
        &mut self,
        log_f_min: f64,
        live: &[NSObject],
        _discarded: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NSObject, SamplerError> {
        for _ in 0..MAX_PROPOSALS {
            if self.refresh_due() {
                self.refresh(log_f_min, live)
                    .map_err(|e| SamplerError::Other(e.to_string()))?;
            }
            if let Some(obj) = self.propose(log_f_min, target, rng) {
                return Ok(obj);
            }
        }
        Err(SamplerError::Exhausted {
            attempts: MAX_PROPOSALS,
        })
    }
}

/// Nested sampling of the Dirichlet posterior for `counts`.
///
/// The live objects are simplex points; the integration measure is Lebesgue
/// measure on the first `M - 1` coordinates, so the evidence is the posterior
/// mass above the warm-up constraint, close to 1.
pub fn run_dirichlet(counts: &CountTable, cfg: &DirichletConfig) -> Result<DirichletRun, PipelineError> {
    let posterior = DirichletPosterior::new(counts.clone());
    let m_simplex = counts.dim();
    let center = center_for(&cfg.center, counts).map_err(|source| PipelineError::Dirichlet {
        stage: Stage::Warmup,
        source,
    })?;
    let chart = SimplexChart::new(center.clone()).map_err(|source| PipelineError::Dirichlet {
        stage: Stage::Warmup,
        source,
    })?;

    // warm-up scatter: the lowest posterior value sets the first constraint
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_WARMUP));
    let lowest = (0..cfg.warmup_points.max(1))
        .map(|_| {
            let theta = uniform_simplex_point(m_simplex, &mut rng);
            let log_f = posterior.ln_density(&theta);
            NSObject { theta, log_f }
        })
        .min_by(|a, b| a.log_f.total_cmp(&b.log_f))
        .expect("at least one warm-up point");
    let log_l0 = lowest.log_f;

    let radius = |e: &[f64]| likelihood_radius(&chart, e, &posterior, log_l0).unwrap_or(0.0);
    if let Err(source) = likelihood_radius(&chart, &unit(chart.chart_dim()), &posterior, log_l0) {
        return Err(PipelineError::Dirichlet {
            stage: Stage::Atlas,
            source,
        });
    }
    let inner_cfg = cfg.inner_config(stream_seed(cfg.seed, STREAM_INNER));
    let atlas = build_atlas(radius, chart.chart_dim(), vec![0.0; chart.chart_dim()], &inner_cfg).map_err(
        |source| PipelineError::Inner {
            stage: Stage::Atlas,
            source,
        },
    )?;
    let initial_atlas_size = atlas.len();
    // chart measure is sqrt(M) times the measure on M - 1 coordinates
    let log_w = LogValue::from_ln(atlas.log_v_star().ln() - 0.5 * (m_simplex as f64).ln());

    let target = |theta: &[f64]| posterior.ln_density(theta);
    let mut sampler = AtlasSampler {
        posterior: &posterior,
        cfg,
        chart,
        atlas,
        atlas_log_l: log_l0,
        drawer: AtlasDrawer::new(),
        window: VecDeque::with_capacity(REFRESH_WINDOW),
        seeds: Vec::new(),
        stats: ProposalStats::default(),
    };

    let mut seed_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_SEEDING));
    let mut seeds = Vec::with_capacity(cfg.n_objects);
    for _ in 1..cfg.n_objects {
        let obj = sampler
            .draw_above(log_l0, &[], 0, &target, &mut seed_rng)
            .map_err(|source| PipelineError::Sampler {
                stage: Stage::Seeding,
                source,
            })?;
        seeds.push(obj);
    }
    seeds.push(lowest);
    sampler.seeds = seeds;
    sampler.window.clear();

    let mut ns_cfg = NSConfig::new(cfg.n_objects, log_w, stream_seed(cfg.seed, STREAM_PROPER));
    if let Some(f) = cfg.termination_factor {
        ns_cfg = ns_cfg.with_termination_factor(f);
    }
    if let Some(cap) = cfg.max_iterations {
        ns_cfg = ns_cfg.with_max_iterations(cap);
    }
    let result = run_nested_sampling(&target, &mut sampler, &ns_cfg).map_err(|source| PipelineError::Engine {
        stage: Stage::Sampling,
        source,
    })?;
    Ok(DirichletRun {
        result,
        atlas: sampler.atlas,
        initial_atlas_size,
        log_l0,
        center,
        stats: sampler.stats,
    })
}

fn unit(m: usize) -> Vec<f64> {
    let mut e = vec![0.0; m];
    e[0] = 1.0;
    e
}

/// Atlas of the whole `M`-simplex around its centroid; its `log_v_star`
/// estimates `ln(sqrt(M) / (M-1)!)`.
pub fn run_inner_volume(
    m_simplex: usize,
    inner_objects: usize,
    seed: u64,
    termination_factor: Option<f64>,
) -> Result<DifferentialAtlas, PipelineError> {
    let chart = SimplexChart::new(vec![1.0 / m_simplex as f64; m_simplex]).map_err(|source| {
        PipelineError::Dirichlet {
            stage: Stage::Atlas,
            source,
        }
    })?;
    let radius = |e: &[f64]| simplex_boundary_radius(&chart, e).unwrap_or(0.0);
    let mut cfg = InnerConfig::new(inner_objects, stream_seed(seed, STREAM_INNER));
    cfg.termination_factor = termination_factor;
    build_atlas(radius, chart.chart_dim(), vec![0.0; chart.chart_dim()], &cfg).map_err(|source| {
        PipelineError::Inner {
            stage: Stage::Atlas,
            source,
        }
    })
}

/// An integrand over an axis-aligned box, integrated against Lebesgue measure.
#[derive(Clone, Debug)]
pub struct BoxModel {
    pub integrand: FunctionalExpr,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxModel {
    pub fn new(integrand: FunctionalExpr, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, PipelineError> {
        if lower.len() != integrand.dim() || upper.len() != integrand.dim() {
            return Err(PipelineError::Bounds(format!(
                "{} lower and {} upper bounds for {} variables",
                lower.len(),
                upper.len(),
                integrand.dim()
            )));
        }
        if let Some(i) = (0..lower.len()).find(|&i| !(lower[i].is_finite() && upper[i].is_finite() && upper[i] > lower[i])) {
            return Err(PipelineError::Bounds(format!(
                "axis {} has [{}, {}]",
                i + 1,
                lower[i],
                upper[i]
            )));
        }
        Ok(BoxModel {
            integrand,
            lower,
            upper,
        })
    }

    /// The default `integrate` problem.
    pub fn gaussian() -> Self {
        let integrand = FunctionalExpr::parse(GAUSSIAN_INTEGRAND, 2).expect("built-in integrand parses");
        BoxModel::new(integrand, vec![-5.0; 2], vec![5.0; 2]).expect("built-in bounds are valid")
    }
}

/// Nested sampling with box rejection proposals.
pub fn integrate_box(
    model: &BoxModel,
    n_objects: usize,
    seed: u64,
    termination_factor: Option<f64>,
) -> Result<NSRunResult, PipelineError> {
    let failure: RefCell<Option<PipelineError>> = RefCell::new(None);
    let target = |x: &[f64]| -> f64 {
        match model.integrand.eval(x) {
            Ok(v) if v >= 0.0 => v.ln(),
            Ok(value) => {
                failure.borrow_mut().get_or_insert(PipelineError::NegativeIntegrand {
                    point: x.to_vec(),
                    value,
                });
                f64::NEG_INFINITY
            }
            Err(source) => {
                failure.borrow_mut().get_or_insert(PipelineError::Integrand {
                    point: x.to_vec(),
                    source,
                });
                f64::NEG_INFINITY
            }
        }
    };
    let mut sampler = BoxRejectionSampler::new(model.lower.clone(), model.upper.clone());
    let mut cfg = NSConfig::new(n_objects, sampler.log_volume(), seed);
    if let Some(f) = termination_factor {
        cfg = cfg.with_termination_factor(f);
    }
    let result = run_nested_sampling(&target, &mut sampler, &cfg);
    if let Some(err) = failure.into_inner() {
        return Err(err);
    }
    result.map_err(|source| PipelineError::Engine {
        stage: Stage::Sampling,
        source,
    })
}
