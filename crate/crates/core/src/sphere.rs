//! Directions on the unit sphere and a constrained random walk over them.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{dot, gram_schmidt, norm, OrthonormalBasis};

/// Angles are kept inside `(ANGLE_EPS, pi/2 - ANGLE_EPS)`.
pub const ANGLE_EPS: f64 = 1e-9;

/// Consecutive rejections per requested acceptance before a walk gives up.
pub const STALL_FACTOR: u64 = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum WalkError {
    #[error("starting direction violates the constraint")]
    StartRejected,
    #[error("walk stalled after {iterations} consecutive rejections")]
    Stalled { iterations: u64 },
    #[error("direction has zero length")]
    ZeroLength,
}

/// A unit vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Normalizes `v`.
    pub fn new(mut v: Vec<f64>) -> Result<Self, WalkError> {
        let n = norm(&v);
        if !(n > 1e-300) || !n.is_finite() {
            return Err(WalkError::ZeroLength);
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(Direction(v))
    }

    /// Axis direction `i` in `m` dimensions.
    pub fn axis(m: usize, i: usize) -> Self {
        let mut v = vec![0.0; m];
        v[i] = 1.0;
        Direction(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Direction {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Uniform direction on the unit sphere in `m` dimensions.
pub fn random_direction<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Direction {
    assert!(m >= 1);
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(d) = Direction::new(v) {
            return d;
        }
    }
}

/// Orthonormal basis with `anchor` as its first column, completed from the
/// identity columns.
///
/// The identity column most aligned with the anchor is the one dropped, which
/// keeps every Gram-Schmidt residual well away from zero.
pub fn rotation_basis(anchor: &Direction) -> OrthonormalBasis {
    let m = anchor.dim();
    let skip = anchor
        .components()
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut seeds = Vec::with_capacity(m);
    seeds.push(anchor.components().to_vec());
    seeds.extend((0..m).filter(|&i| i != skip).map(|i| Direction::axis(m, i).into_inner()));
    gram_schmidt(&seeds).expect("anchor plus remaining axes are independent")
}

/// `asin(u^step)`, clamped into the open quarter turn.
pub fn angle_from_score(step_score: f64, u: f64) -> f64 {
    let s = u.powf(step_score);
    let alpha = if s >= 1.0 { FRAC_PI_2 } else { s.asin() };
    alpha.clamp(ANGLE_EPS, FRAC_PI_2 - ANGLE_EPS)
}

/// Position and step control of a walk.
#[derive(Clone, Debug)]
pub struct WalkState {
    current: Direction,
    basis: OrthonormalBasis,
    pub step_score: f64,
    pub accepted: u64,
    pub rejected: u64,
}

impl WalkState {
    pub fn new(start: Direction) -> Self {
        let basis = rotation_basis(&start);
        WalkState {
            current: start,
            basis,
            step_score: 0.0,
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn current(&self) -> &Direction {
        &self.current
    }

    /// Moves to `next` keeping the step score; counters are reset.
    pub fn restart_at(&mut self, next: Direction) {
        self.basis = rotation_basis(&next);
        self.current = next;
        self.accepted = 0;
        self.rejected = 0;
    }

    pub fn acceptance_rate(&self) -> f64 {
        let total = self.accepted + self.rejected;
        if total == 0 {
            0.0
        } else {
            self.accepted as f64 / total as f64
        }
    }

    /// Angle for the next proposal from the current score.
    pub fn draw_angle<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        angle_from_score(self.step_score, open_unit(rng))
    }

    /// Scores the last proposal, then draws the next angle.
    pub fn modulate_angle<R: Rng + ?Sized>(&mut self, accepted_last: bool, rng: &mut R) -> f64 {
        if accepted_last {
            self.step_score -= 0.5;
        } else {
            self.step_score += 0.5;
        }
        self.draw_angle(rng)
    }

    /// A direction at angle `alpha` from the current one, uniform over all
    /// such directions.
    pub fn propose_step<R: Rng + ?Sized>(&self, alpha: f64, rng: &mut R) -> Direction {
        let m = self.current.dim();
        let v = random_direction(m - 1, rng);
        let mut coeffs = Vec::with_capacity(m);
        coeffs.push(alpha.cos());
        coeffs.extend(v.components().iter().map(|x| alpha.sin() * x));
        Direction::new(self.basis.combine(&coeffs)).expect("rotation of a unit vector")
    }

    fn accept(&mut self, next: Direction) {
        self.basis = rotation_basis(&next);
        self.current = next;
        self.accepted += 1;
    }
}

/// Uniform on the open interval (0, 1).
fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Walks from `start` until `n_accepts` proposals satisfied `accept`.
pub fn constrained_walk<R, F>(
    start: Direction,
    accept: F,
    n_accepts: u64,
    rng: &mut R,
) -> Result<(Direction, WalkState), WalkError>
where
    R: Rng + ?Sized,
    F: FnMut(&Direction) -> bool,
{
    let mut state = WalkState::new(start);
    continue_walk(&mut state, accept, n_accepts, rng)?;
    Ok((state.current.clone(), state))
}

/// Runs `n_accepts` more acceptances on an existing state, keeping its score.
pub fn continue_walk<R, F>(
    state: &mut WalkState,
    mut accept: F,
    n_accepts: u64,
    rng: &mut R,
) -> Result<(), WalkError>
where
    R: Rng + ?Sized,
    F: FnMut(&Direction) -> bool,
{
    if !accept(&state.current) {
        return Err(WalkError::StartRejected);
    }
    let stall_limit = STALL_FACTOR * n_accepts.max(1);
    let mut streak = 0u64;
    let mut done = 0u64;
    let mut alpha = state.draw_angle(rng);
    while done < n_accepts {
        let proposal = state.propose_step(alpha, rng);
        let ok = accept(&proposal);
        if ok {
            state.accept(proposal);
            done += 1;
            streak = 0;
        } else {
            state.rejected += 1;
            streak += 1;
            if streak >= stall_limit {
                return Err(WalkError::Stalled { iterations: streak });
            }
        }
        alpha = state.modulate_angle(ok, rng);
    }
    Ok(())
}

/// Largest deviation of `|e|` from 1.
pub fn unit_error(e: &[f64]) -> f64 {
    (norm(e) - 1.0).abs()
}

/// Cosine of the angle between two directions.
pub fn cos_between(a: &Direction, b: &Direction) -> f64 {
    dot(a.components(), b.components())
}
