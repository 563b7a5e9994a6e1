//! The nested sampling loop.
//!
//! `N` live objects are kept above a rising constraint. Each iteration the
//! object with the smallest integrand value is discarded, its area element
//! is added to the evidence (in log space), and exactly one replacement is
//! drawn from the region above the discarded value. Abscissas follow the
//! deterministic schedule `w_t = W exp(-t/N)`, so a run is fully determined
//! by its seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{log_add, LogValue};

/// Target function: a point maps to the natural log of the integrand.
pub type Target<'a> = dyn Fn(&[f64]) -> f64 + 'a;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("no point above the constraint after {attempts} proposals")]
    Exhausted { attempts: u64 },
    #[error("random walk stalled after {iterations} consecutive rejections")]
    Stalled { iterations: u64 },
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("constrained sampler failed at iteration {iteration}: {source}")]
    SamplerExhausted {
        iteration: usize,
        #[source]
        source: SamplerError,
    },
    #[error("sampler returned {found} initial objects, expected {expected}")]
    InitialCount { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// One live object.
#[derive(Clone, Debug, PartialEq)]
pub struct NSObject {
    pub theta: Vec<f64>,
    pub log_f: f64,
}

/// A discarded object together with its area element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub theta: Vec<f64>,
    pub log_g: LogValue,
    pub log_a: LogValue,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    MaxKnownBound,
    SelfContribution,
    IterationCap,
}

impl TerminationReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            TerminationReason::MaxKnownBound => "max-known-bound",
            TerminationReason::SelfContribution => "self-contribution",
            TerminationReason::IterationCap => "iteration-cap",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSConfig {
    pub n_objects: usize,
    /// Log of the measure of the sampled domain.
    pub log_w: LogValue,
    /// Stop once an area element is below `Z / termination_factor`.
    pub termination_factor: f64,
    pub max_iterations: usize,
    pub rng_seed: u64,
    /// Known upper bound of the log integrand, switches to the bound-based rule.
    pub known_log_max_f: Option<f64>,
}

/// Decades of dynamic range assumed when sizing the iteration cap.
const DEFAULT_DECADES: usize = 10;
const ITERATION_CAP_LIMIT: usize = 1_000_000;

impl NSConfig {
    /// Defaults: termination factor `N^2`, iteration cap `50 N` per decade
    /// over 10 decades, at most `10^6`.
    pub fn new(n_objects: usize, log_w: LogValue, rng_seed: u64) -> Self {
        let n = n_objects as f64;
        NSConfig {
            n_objects,
            log_w,
            termination_factor: n * n,
            max_iterations: (50 * n_objects * DEFAULT_DECADES).min(ITERATION_CAP_LIMIT),
            rng_seed,
            known_log_max_f: None,
        }
    }

    pub fn with_termination_factor(mut self, factor: f64) -> Self {
        self.termination_factor = factor;
        self
    }

    pub fn with_max_iterations(mut self, cap: usize) -> Self {
        self.max_iterations = cap;
        self
    }

    pub fn with_known_log_max(mut self, log_max_f: f64) -> Self {
        self.known_log_max_f = Some(log_max_f);
        self
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_objects < 2 {
            return Err(EngineError::Config(format!(
                "need at least 2 objects, got {}",
                self.n_objects
            )));
        }
        if !(self.termination_factor > 1.0) {
            return Err(EngineError::Config(format!(
                "termination factor must exceed 1, got {}",
                self.termination_factor
            )));
        }
        if self.max_iterations == 0 {
            return Err(EngineError::Config("max_iterations must be positive".into()));
        }
        if self.log_w.ln().is_nan() || self.log_w.ln() == f64::INFINITY {
            return Err(EngineError::Config(format!("invalid log W {}", self.log_w)));
        }
        Ok(())
    }

    /// `log(1 - exp(-1/N))`, the log width factor of every shell.
    fn log_shell_factor(&self) -> f64 {
        (-(-1.0 / self.n_objects as f64).exp_m1()).ln()
    }
}

/// Draws replacement objects for the engine.
///
/// Implementations evaluate the target themselves so they can test
/// candidates against the constraint; the engine rechecks the returned value
/// in debug builds.
pub trait ConstrainedSampler {
    /// The `n` starting objects.
    fn initial_objects(
        &mut self,
        n: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<NSObject>, SamplerError>;

    /// One object with `log_f >= log_f_min`. `live[discarded]` is the object
    /// being replaced; the others are survivors.
    fn draw_above(
        &mut self,
        log_f_min: f64,
        live: &[NSObject],
        discarded: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NSObject, SamplerError>;

    /// Called once per iteration after the discarded sample is recorded.
    fn on_discard(&mut self, _sample: &WeightedSample) {}
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSRunResult {
    pub log_z: LogValue,
    pub samples: Vec<WeightedSample>,
    pub iterations: usize,
    pub termination: TerminationReason,
    pub n_objects: usize,
    pub log_w: LogValue,
}

impl NSRunResult {
    /// `exp(log_A - log_Z)` per sample.
    pub fn normalized_weights(&self) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| (s.log_a.ln() - self.log_z.ln()).exp())
            .collect()
    }

    /// Per-iteration trace rows.
    pub fn trace(&self) -> Vec<TraceRow> {
        let mut log_z = LogValue::ZERO;
        let last = self.samples.len();
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                log_z = log_add(log_z, s.log_a);
                TraceRow {
                    t: s.iteration,
                    log_w: -(s.iteration as f64) / self.n_objects as f64 + self.log_w.ln(),
                    log_g: s.log_g.ln(),
                    log_a: s.log_a.ln(),
                    log_z: log_z.ln(),
                    terminated: i + 1 == last
                        && self.termination != TerminationReason::IterationCap,
                }
            })
            .collect()
    }

    /// Writes the trace as CSV: `t,log_w,log_g,log_A,log_Z,termination_flag`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,log_w,log_g,log_A,log_Z,termination_flag")?;
        for row in self.trace() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                row.t, row.log_w, row.log_g, row.log_a, row.log_z, row.terminated as u8
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    /// Log abscissa after this iteration.
    pub log_w: f64,
    pub log_g: f64,
    pub log_a: f64,
    pub log_z: f64,
    pub terminated: bool,
}

/// Log of the `t`-th area element:
/// `-(t-1)/N + log W + log(1 - exp(-1/N)) + log g`.
pub fn log_area_element(t: usize, cfg: &NSConfig, log_g: LogValue) -> LogValue {
    assert!(t >= 1, "iterations are numbered from 1");
    if log_g.is_zero() {
        return LogValue::ZERO;
    }
    let n = cfg.n_objects as f64;
    LogValue::from_ln(-((t - 1) as f64) / n + cfg.log_w.ln() + cfg.log_shell_factor() + log_g.ln())
}

/// Applies the stopping rule after iteration `t`.
///
/// With a known maximum, stops when the largest possible next element
/// `exp(-t/N) W (1 - exp(-1/N)) max f` is below `Z / factor`; otherwise when
/// the latest element itself is.
pub fn check_termination(
    t: usize,
    log_a: LogValue,
    log_z: LogValue,
    cfg: &NSConfig,
) -> Option<TerminationReason> {
    let threshold = log_z.ln() - cfg.termination_factor.ln();
    match cfg.known_log_max_f {
        Some(log_max) => {
            let bound = -(t as f64) / cfg.n_objects as f64
                + cfg.log_w.ln()
                + cfg.log_shell_factor()
                + log_max;
            (bound < threshold).then_some(TerminationReason::MaxKnownBound)
        }
        None => (log_a.ln() < threshold).then_some(TerminationReason::SelfContribution),
    }
}

/// Heap key ordering by `log_f`, then index, so the lowest index wins ties.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Slot {
    log_f: f64,
    index: usize,
}

impl Eq for Slot {}

impl Ord for Slot {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .log_f
            .total_cmp(&self.log_f)
            .then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for Slot {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Runs nested sampling of `target` with `sampler` proposing replacements.
pub fn run_nested_sampling<S: ConstrainedSampler + ?Sized>(
    target: &Target<'_>,
    sampler: &mut S,
    cfg: &NSConfig,
) -> Result<NSRunResult, EngineError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut live = sampler
        .initial_objects(cfg.n_objects, target, &mut rng)
        .map_err(|source| EngineError::SamplerExhausted {
            iteration: 0,
            source,
        })?;
    if live.len() != cfg.n_objects {
        return Err(EngineError::InitialCount {
            expected: cfg.n_objects,
            found: live.len(),
        });
    }

    let mut heap: BinaryHeap<Slot> = live
        .iter()
        .enumerate()
        .map(|(index, o)| Slot { log_f: o.log_f, index })
        .collect();
    let mut log_z = LogValue::ZERO;
    let mut samples = Vec::new();
    let mut termination = TerminationReason::IterationCap;

    for t in 1..=cfg.max_iterations {
        let idx = heap.pop().expect("live set is non-empty").index;
        let log_g = LogValue::from_ln(live[idx].log_f);
        let log_a = log_area_element(t, cfg, log_g);
        log_z = log_add(log_z, log_a);
        let sample = WeightedSample {
            theta: live[idx].theta.clone(),
            log_g,
            log_a,
            iteration: t,
        };
        sampler.on_discard(&sample);
        samples.push(sample);

        if let Some(reason) = check_termination(t, log_a, log_z, cfg) {
            termination = reason;
            break;
        }
        if t == cfg.max_iterations {
            break;
        }

        let fresh = sampler
            .draw_above(log_g.ln(), &live, idx, target, &mut rng)
            .map_err(|source| EngineError::SamplerExhausted { iteration: t, source })?;
        debug_assert!(fresh.log_f >= log_g.ln(), "replacement below constraint");
        debug_assert!(
            {
                let again = target(&fresh.theta);
                again == fresh.log_f || (again - fresh.log_f).abs() <= 1e-9 * again.abs().max(1.0)
            },
            "sampler log_f disagrees with target"
        );
        heap.push(Slot {
            log_f: fresh.log_f,
            index: idx,
        });
        live[idx] = fresh;
    }

    Ok(NSRunResult {
        log_z,
        iterations: samples.len(),
        samples,
        termination,
        n_objects: cfg.n_objects,
        log_w: cfg.log_w,
    })
}

/// `sum_t h(theta_t) exp(log_A_t - log_Z)`.
pub fn posterior_expectation<H: Fn(&[f64]) -> f64>(result: &NSRunResult, h: H) -> f64 {
    result
        .samples
        .iter()
        .filter(|s| !s.log_a.is_zero())
        .map(|s| h(&s.theta) * (s.log_a.ln() - result.log_z.ln()).exp())
        .sum()
}

/// Uniform proposals on an axis-aligned box, accepted above the constraint.
#[derive(Clone, Debug)]
pub struct BoxRejectionSampler {
    lower: Vec<f64>,
    upper: Vec<f64>,
    max_attempts: u64,
    proposals: u64,
}

impl BoxRejectionSampler {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(lower.iter().zip(&upper).all(|(l, u)| u > l));
        BoxRejectionSampler {
            lower,
            upper,
            max_attempts: 100_000_000,
            proposals: 0,
        }
    }

    pub fn with_max_attempts(mut self, max_attempts: u64) -> Self {
        self.max_attempts = max_attempts;
        self
    }

    /// Log of the box volume, the `W` of a run on this domain.
    pub fn log_volume(&self) -> LogValue {
        LogValue::from_ln(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| (u - l).ln())
                .sum(),
        )
    }

    /// Total proposals made so far.
    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    fn uniform_point(&mut self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.proposals += 1;
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l + (u - l) * rng.random::<f64>())
            .collect()
    }
}

impl ConstrainedSampler for BoxRejectionSampler {
    fn initial_objects(
        &mut self,
        n: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<NSObject>, SamplerError> {
        Ok((0..n)
            .map(|_| {
                let theta = self.uniform_point(rng);
                let log_f = target(&theta);
                NSObject { theta, log_f }
            })
            .collect())
    }

    fn draw_above(
        &mut self,
        log_f_min: f64,
        _live: &[NSObject],
        _discarded: usize,
        target: &Target<'_>,
        rng: &mut ChaCha8Rng,
    ) -> Result<NSObject, SamplerError> {
        for _ in 0..self.max_attempts {
            let theta = self.uniform_point(rng);
            let log_f = target(&theta);
            if log_f >= log_f_min {
                return Ok(NSObject { theta, log_f });
            }
        }
        Err(SamplerError::Exhausted {
            attempts: self.max_attempts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize) -> NSConfig {
        NSConfig::new(n, LogValue::ONE, 1)
    }

    #[test]
    fn area_element_examples() {
        let c = cfg(1);
        let a1 = log_area_element(1, &c, LogValue::ONE).ln();
        assert!((a1 - (1.0 - (-1f64).exp()).ln()).abs() < 1e-12);
        assert!((a1 - (-0.458675)).abs() < 1e-6);
        let a2 = log_area_element(2, &c, LogValue::ONE).ln();
        assert!((a2 - (-1.458675)).abs() < 1e-6);
        assert!(log_area_element(9, &c, LogValue::ZERO).is_zero());
    }

    #[test]
    fn uniform_prior_form_drops_log_w() {
        // f = L / W on a domain of measure W: log W cancels
        let w = 37.5f64;
        let c = NSConfig::new(20, LogValue::from_linear(w), 1);
        let log_l = -2.3;
        for t in [1, 5, 80] {
            let a = log_area_element(t, &c, LogValue::from_ln(log_l - w.ln())).ln();
            let expected =
                -((t - 1) as f64) / 20.0 + (1.0 - (-1.0f64 / 20.0).exp()).ln() + log_l;
            assert!((a - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn termination_examples() {
        let c = cfg(10);
        let a = log_area_element(1, &c, LogValue::ONE);
        assert_eq!(check_termination(1, a, a, &c), None);

        // known max equal to the current ordinate with almost nothing left
        let c = cfg(10).with_known_log_max(0.0);
        let log_z = LogValue::ONE;
        assert_eq!(
            check_termination(400, LogValue::ZERO, log_z, &c),
            Some(TerminationReason::MaxKnownBound)
        );
    }

    /// Closed form for f = 1 on W = 1: A_t = e^{-(t-1)/N}(1 - e^{-1/N}) and
    /// Z_t = 1 - e^{-t/N}. Finds the first t with A_t < Z_t / N^2 by plain
    /// iteration over the geometric series.
    fn constant_stop(n: usize) -> (usize, f64) {
        let n_f = n as f64;
        let mut t = 1;
        loop {
            let a = (-((t - 1) as f64) / n_f).exp() * (1.0 - (-1.0 / n_f).exp());
            let z = 1.0 - (-(t as f64) / n_f).exp();
            if a < z / (n_f * n_f) {
                return (t, z);
            }
            t += 1;
        }
    }

    #[test]
    fn constant_integrand_stops_where_closed_form_says() {
        for n in [2usize, 10, 37] {
            let mut sampler = BoxRejectionSampler::new(vec![0.0], vec![1.0]);
            let result =
                run_nested_sampling(&|_: &[f64]| 0.0, &mut sampler, &cfg(n)).unwrap();
            let (t_stop, z) = constant_stop(n);
            assert_eq!(result.iterations, t_stop, "N={n}");
            assert_eq!(result.termination, TerminationReason::SelfContribution);
            assert!((result.log_z.exp() - z).abs() < 1e-12);
        }
        // N = 10 stops at t = 25 with Z = 1 - e^{-2.5}
        assert_eq!(constant_stop(10).0, 25);
        assert!((constant_stop(10).1 - 0.917915).abs() < 1e-6);
    }

    #[test]
    fn constant_integrand_truncation_bound() {
        for (n, c, w) in [(10usize, 1.0f64, 1.0f64), (25, 3.0, 0.5), (100, 0.2, 8.0)] {
            let mut sampler = BoxRejectionSampler::new(vec![0.0], vec![w]);
            let cfg = NSConfig::new(n, LogValue::from_linear(w), 3);
            let result = run_nested_sampling(&|_: &[f64]| c.ln(), &mut sampler, &cfg).unwrap();
            let z = result.log_z.exp();
            let n_f = n as f64;
            let bound = c * w / (n_f * n_f)
                + c * w * (1.0 - 1.0 / (n_f + 1.0)).powi(result.iterations as i32);
            assert!((z - c * w).abs() <= bound, "N={n}: {z} vs {}", c * w);
        }
    }

    #[test]
    fn weights_normalize_and_expectations() {
        let target = |x: &[f64]| -0.5 * (x[0] * x[0] + x[1] * x[1]);
        let mut sampler = BoxRejectionSampler::new(vec![-5.0, -5.0], vec![5.0, 5.0]);
        let cfg = NSConfig::new(200, sampler.log_volume(), 9);
        let result = run_nested_sampling(&target, &mut sampler, &cfg).unwrap();

        let wsum: f64 = result.normalized_weights().iter().sum();
        assert!((wsum - 1.0).abs() < 1e-9);
        assert!((posterior_expectation(&result, |_| 1.0) - 1.0).abs() < 1e-9);
        assert!((posterior_expectation(&result, |_| 4.5) - 4.5).abs() < 1e-9);
        let folded = crate::numerics::log_sum(result.samples.iter().map(|s| s.log_a));
        assert!((folded.ln() - result.log_z.ln()).abs() < 1e-9);

        let mean_x = posterior_expectation(&result, |x| x[0]);
        assert!(mean_x.abs() < 4.0 / (result.iterations as f64).sqrt());

        // ordinates rise, evidence never falls
        let trace = result.trace();
        for w in trace.windows(2) {
            assert!(w[1].log_g >= w[0].log_g);
            assert!(w[1].log_z >= w[0].log_z);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let target = |x: &[f64]| -(x[0] - 0.3).powi(2) * 40.0;
        let run = || {
            let mut sampler = BoxRejectionSampler::new(vec![0.0], vec![1.0]);
            run_nested_sampling(&target, &mut sampler, &NSConfig::new(30, LogValue::ONE, 42))
                .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn iteration_cap_and_sampler_failure() {
        let target = |x: &[f64]| -x[0] * x[0] * 1e4;
        let mut sampler = BoxRejectionSampler::new(vec![-1.0], vec![1.0]);
        let c = NSConfig::new(10, LogValue::from_linear(2.0), 5).with_max_iterations(7);
        let result = run_nested_sampling(&target, &mut sampler, &c).unwrap();
        assert_eq!(result.iterations, 7);
        assert_eq!(result.termination, TerminationReason::IterationCap);

        let mut starved = BoxRejectionSampler::new(vec![-1.0], vec![1.0]).with_max_attempts(3);
        let c = NSConfig::new(10, LogValue::from_linear(2.0), 5);
        let err = run_nested_sampling(&target, &mut starved, &c).unwrap_err();
        assert!(matches!(err, EngineError::SamplerExhausted { iteration, .. } if iteration >= 1));
    }

    #[test]
    fn rejects_single_object() {
        let mut sampler = BoxRejectionSampler::new(vec![0.0], vec![1.0]);
        let err = run_nested_sampling(&|_: &[f64]| 0.0, &mut sampler, &cfg(1)).unwrap_err();
        assert!(matches!(err, EngineError::Config(_)));
    }

    #[test]
    fn trace_csv_has_header_and_flag() {
        let mut sampler = BoxRejectionSampler::new(vec![0.0], vec![1.0]);
        let result = run_nested_sampling(&|_: &[f64]| 0.0, &mut sampler, &cfg(4)).unwrap();
        let mut buf = Vec::new();
        result.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,log_w,log_g,log_A,log_Z,termination_flag");
        assert_eq!(lines.len(), result.iterations + 1);
        assert!(lines.last().unwrap().ends_with(",1"));
        assert!(lines[1].ends_with(",0"));
    }
}
