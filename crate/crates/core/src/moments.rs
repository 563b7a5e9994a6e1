//! Posterior moments of a functional and model comparison by evidence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::NSRunResult;
use crate::expr::{EvalError, FunctionalExpr};
use crate::numerics::{log_sum, LogValue};

#[derive(Debug, Error, PartialEq)]
pub enum MomentError {
    #[error("functional failed at iteration {iteration}: {source}")]
    Eval {
        iteration: usize,
        #[source]
        source: EvalError,
    },
    #[error("run has no weighted samples")]
    Empty,
    #[error("every model has zero evidence")]
    AllZeroEvidence,
    #[error("{evidences} evidences but {priors} priors")]
    LengthMismatch { evidences: usize, priors: usize },
}

/// First two moments of `u` and the one-standard-deviation band around the mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub m1: f64,
    pub m2: f64,
    pub variance: f64,
    pub lower: f64,
    pub upper: f64,
    pub log_z: LogValue,
    pub iterations: usize,
    pub seed: u64,
}

/// Moments of an arbitrary function of the samples.
pub fn estimate_moments_with<F>(result: &NSRunResult, seed: u64, mut u: F) -> Result<MomentReport, MomentError>
where
    F: FnMut(&[f64]) -> Result<f64, EvalError>,
{
    if result.samples.is_empty() || !result.log_z.is_finite() {
        return Err(MomentError::Empty);
    }
    let mut weighted = Vec::with_capacity(result.samples.len());
    for s in &result.samples {
        if s.log_a.is_zero() {
            continue;
        }
        let w = (s.log_a.ln() - result.log_z.ln()).exp();
        let v = u(&s.theta).map_err(|source| MomentError::Eval {
            iteration: s.iteration,
            source,
        })?;
        weighted.push((w, v));
    }
    let m1: f64 = weighted.iter().map(|(w, v)| w * v).sum();
    let m2: f64 = weighted.iter().map(|(w, v)| w * v * v).sum();
    // centered second pass: equals m2 - m1^2 without the cancellation
    let variance: f64 = weighted.iter().map(|(w, v)| w * (v - m1) * (v - m1)).sum();
    let sd = variance.sqrt();
    Ok(MomentReport {
        m1,
        m2,
        variance,
        lower: m1 - sd,
        upper: m1 + sd,
        log_z: result.log_z,
        iterations: result.iterations,
        seed,
    })
}

pub fn estimate_moments(result: &NSRunResult, u: &FunctionalExpr, seed: u64) -> Result<MomentReport, MomentError> {
    estimate_moments_with(result, seed, |theta| u.eval(theta))
}

/// `(u(theta_t), weight_t)` for every sample with positive weight.
pub fn weighted_values(result: &NSRunResult, u: &FunctionalExpr) -> Result<Vec<(f64, f64)>, MomentError> {
    result
        .samples
        .iter()
        .filter(|s| !s.log_a.is_zero())
        .map(|s| {
            let v = u.eval(&s.theta).map_err(|source| MomentError::Eval {
                iteration: s.iteration,
                source,
            })?;
            Ok((v, (s.log_a.ln() - result.log_z.ln()).exp()))
        })
        .collect()
}

/// Posterior model probabilities `p_j Z_j / sum_k p_k Z_k`.
pub fn model_posterior(
    log_evidences: &[LogValue],
    log_priors: Option<&[LogValue]>,
) -> Result<Vec<f64>, MomentError> {
    if let Some(p) = log_priors {
        if p.len() != log_evidences.len() {
            return Err(MomentError::LengthMismatch {
                evidences: log_evidences.len(),
                priors: p.len(),
            });
        }
    }
    let joint: Vec<LogValue> = log_evidences
        .iter()
        .enumerate()
        .map(|(j, z)| match log_priors {
            Some(p) => z.mul(p[j]),
            None => *z,
        })
        .collect();
    let total = log_sum(joint.iter().copied());
    if !total.is_finite() {
        return Err(MomentError::AllZeroEvidence);
    }
    Ok(joint.iter().map(|j| (j.ln() - total.ln()).exp()).collect())
}
