//! Aggregate impact curves and metaorder simulation on a fitted VAR.

mod scaling;
mod simulate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use scaling::{
    aggregate_imbalance_impact, fit_sigmoid, instantaneous_impact, sigmoid, Bucket, ImbalanceCurve, ImpactScaling,
};
pub use simulate::{simulate_metaorder, Background, ImpactMap, MetaorderSide, SimulationOptions};

#[derive(Debug, Error, PartialEq)]
pub enum ImpactError {
    #[error("insufficient data: need {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("need at least two bin sizes with 10 buckets each")]
    InsufficientCurves,
    #[error("sigmoid fit diverged")]
    FitDiverged,
    #[error("background too short: need {needed} steps per segment and {min_starts} start points, got {got} start points")]
    ShortBackground { needed: usize, min_starts: usize, got: usize },
    #[error("horizon {horizon} must exceed metaorder duration {k}")]
    ShortHorizon { horizon: usize, k: usize },
    #[error("peak impact is zero")]
    ZeroPeak,
    #[error("perturbed flow left the Box-Cox domain at segment {segment}, step {step}")]
    OutOfDomain { segment: usize, step: usize },
    #[error("no normalisation constants for day {0}")]
    MissingDay(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactCurve<T> {
    pub q: T,
    pub k: usize,
    pub horizon: usize,
    /// Mean cumulative return difference in ticks, for steps `0..=horizon`.
    pub mean: Vec<T>,
    pub stderr: Vec<T>,
    /// Number of simulated background paths.
    pub paths: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reversion<T> {
    pub peak: T,
    pub plateau: T,
    /// `(peak - plateau) / peak`.
    pub reversion_fraction: T,
}

/// Peak over steps `0..=k` (largest magnitude), plateau as the mean of the
/// last `horizon / 4` steps.
pub fn peak_and_reversion<T: Scalar>(path: &[T], k: usize) -> Result<Reversion<T>, ImpactError> {
    let horizon = path.len().saturating_sub(1);
    if horizon <= k {
        return Err(ImpactError::ShortHorizon { horizon, k });
    }
    let peak = path[..=k]
        .iter()
        .copied()
        .fold(T::zero(), |m, v| if v.abs() > m.abs() { v } else { m });
    if peak == T::zero() {
        return Err(ImpactError::ZeroPeak);
    }
    let tail = (horizon / 4).max(1);
    let plateau = path[path.len() - tail..].iter().fold(T::zero(), |s, &v| s + v) / T::from_usize_lossy(tail);
    Ok(Reversion {
        peak,
        plateau,
        reversion_fraction: (peak - plateau) / peak,
    })
}

impl<T: Scalar> ImpactCurve<T> {
    pub fn reversion(&self) -> Result<Reversion<T>, ImpactError> {
        peak_and_reversion(&self.mean, self.k)
    }
}
