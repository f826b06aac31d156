//! Deseasonalisation, Box-Cox transforms and causal normalisation, turning raw
//! price-change records into standardised `T'` vectors.

mod box_cox;
mod normalize;
mod profile;

pub use box_cox::{box_cox, box_cox_log_likelihood, fit_box_cox_lambda, inverse_box_cox, BoxCoxParams};
pub use normalize::{
    normalize, per_day_normalize, rolling_normalize, DayNorm, NormalizationScheme, NormalizationState,
};
pub use profile::{
    deseasonalize, estimate_intraday_profile, fit_exponential_decay, fit_profile_exponentials, ExpFit,
    IntradayProfile, ProfileFit,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coarse_grain::{bin_records, PriceChangeRecord};
use crate::flow::{Vec8, VOLUMES};
use crate::ingest::SessionClock;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("Box-Cox input must be positive, got {0}")]
    NonPositiveInput(f64),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("profile fit diverged")]
    FitDiverged,
    #[error("fitted intraday profile is not positive at session minute {minute}")]
    NonPositiveProfile { minute: usize },
    #[error("component {component} has zero variance over the window for day {day}")]
    ZeroVariance { component: &'static str, day: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformedVector<T> {
    pub day: u32,
    pub index: u32,
    pub values: Vec8<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Records per bin at the second coarse-graining scale.
    pub bin: usize,
    pub scheme: NormalizationScheme,
    /// Added to every binned volume before Box-Cox.
    pub bc_offset: f64,
    /// Regime split of the intraday profile, wall clock.
    pub split_hour: u32,
    pub split_minute: u32,
    /// With `false`, λ = 1 everywhere (an affine map).
    pub box_cox: bool,
    /// Fixed exponents instead of the likelihood fit.
    pub lambda_v: Option<f64>,
    pub lambda_t: Option<f64>,
    pub deseasonalize: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            bin: 20,
            scheme: NormalizationScheme::Rolling { window: 20 },
            bc_offset: 1.0,
            split_hour: 15,
            split_minute: 30,
            box_cox: true,
            lambda_v: None,
            lambda_t: None,
            deseasonalize: true,
        }
    }
}

/// Everything needed to map original-space vectors to `T'` and back.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSidecar<T> {
    pub bin: usize,
    pub box_cox: BoxCoxParams<T>,
    pub profile: Option<ProfileFit<T>>,
    pub profile_bins: Vec<T>,
    pub normalization: NormalizationState<T>,
}

#[derive(Clone, Debug)]
pub struct PreprocessOutput<T> {
    /// Binned records in original units (after deseasonalisation), all days.
    pub binned: Vec<PriceChangeRecord<T>>,
    /// Normalised vectors for the days past the burn-in.
    pub vectors: Vec<TransformedVector<T>>,
    pub sidecar: PreprocessSidecar<T>,
}

/// Profile, deseasonalise, bin, Box-Cox and normalise.
pub fn preprocess<T: Scalar>(
    raw: &[PriceChangeRecord<T>],
    session: &SessionClock,
    config: &PreprocessConfig,
) -> Result<PreprocessOutput<T>, PreprocessError> {
    if config.bin == 0 {
        return Err(PreprocessError::InsufficientData("bin size must be at least 1".into()));
    }
    let (seasonal, profile, profile_bins) = if config.deseasonalize {
        let profile = estimate_intraday_profile(raw, session)?;
        let split = session.minute_at_clock(config.split_hour, config.split_minute);
        let fit = fit_profile_exponentials(&profile.minute_bins, split)?;
        (deseasonalize(raw, &fit, session)?, Some(fit), profile.minute_bins)
    } else {
        (raw.to_vec(), None, Vec::new())
    };
    let binned = bin_records(&seasonal, config.bin);
    let offset = T::lit(config.bc_offset);
    let params = if config.box_cox {
        let lambda_v = match config.lambda_v {
            Some(l) => T::lit(l),
            None => {
                let pooled: Vec<T> = binned
                    .iter()
                    .flat_map(|r| {
                        let v = r.to_vector();
                        VOLUMES.map(|j| v[j] + offset)
                    })
                    .collect();
                fit_box_cox_lambda(&pooled)?
            }
        };
        let lambda_t = match config.lambda_t {
            Some(l) => T::lit(l),
            None => {
                let dts: Vec<T> = binned.iter().map(|r| r.dt).collect();
                fit_box_cox_lambda(&dts)?
            }
        };
        BoxCoxParams {
            lambda_v,
            lambda_t,
            a: T::one(),
            offset,
        }
    } else {
        BoxCoxParams {
            offset,
            ..BoxCoxParams::identity()
        }
    };
    let mut transformed = Vec::with_capacity(binned.len());
    for r in &binned {
        let x = r.to_vector();
        if !(x[0] > T::zero()) {
            return Err(PreprocessError::NonPositiveInput(x[0].to_f64_lossy()));
        }
        if let Some(&j) = VOLUMES.iter().find(|&&j| !(x[j] + offset > T::zero())) {
            return Err(PreprocessError::NonPositiveInput((x[j] + offset).to_f64_lossy()));
        }
        transformed.push(TransformedVector {
            day: r.day,
            index: r.index,
            values: params.transform(&x),
        });
    }
    let (vectors, normalization) = normalize(&transformed, config.scheme)?;
    Ok(PreprocessOutput {
        binned,
        vectors,
        sidecar: PreprocessSidecar {
            bin: config.bin,
            box_cox: params,
            profile,
            profile_bins,
            normalization,
        },
    })
}

impl<T: Scalar> PreprocessSidecar<T> {
    /// Original-space (deseasonalised, binned) vector to `T'` for a given day.
    pub fn forward(&self, day: u32, x: &Vec8<T>) -> Option<Vec8<T>> {
        self.normalization.apply(day, &self.box_cox.transform(x))
    }

    pub fn backward(&self, day: u32, t: &Vec8<T>) -> Option<Vec8<T>> {
        Some(self.box_cox.inverse(&self.normalization.invert(day, t)?))
    }
}
