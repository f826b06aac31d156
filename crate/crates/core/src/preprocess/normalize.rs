use serde::{Deserialize, Serialize};

use super::{PreprocessError, TransformedVector};
use crate::flow::{Vec8, COMPONENT_NAMES, C_A, C_B, DIM, EX_A, EX_B, LO_A, LO_B, RET};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormalizationScheme {
    /// Trailing window of `window` previous days.
    Rolling { window: usize },
    /// Each day standardised by its own moments (not causal).
    PerDay,
}

/// Mean and scale applied to one day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DayNorm<T> {
    pub day: u32,
    pub mean: Vec8<T>,
    pub scale: Vec8<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationState<T> {
    pub scheme: NormalizationScheme,
    pub days: Vec<DayNorm<T>>,
}

impl<T: Scalar> NormalizationState<T> {
    pub fn for_day(&self, day: u32) -> Option<&DayNorm<T>> {
        self.days
            .binary_search_by_key(&day, |d| d.day)
            .ok()
            .map(|i| &self.days[i])
    }

    /// Applies the stored constants of `day` to a transformed vector.
    pub fn apply(&self, day: u32, t: &Vec8<T>) -> Option<Vec8<T>> {
        let n = self.for_day(day)?;
        Some(std::array::from_fn(|j| (t[j] - n.mean[j]) / n.scale[j]))
    }

    pub fn invert(&self, day: u32, t: &Vec8<T>) -> Option<Vec8<T>> {
        let n = self.for_day(day)?;
        Some(std::array::from_fn(|j| t[j] * n.scale[j] + n.mean[j]))
    }

    /// Bid and ask constants replaced by their average and the return mean
    /// set to zero, so that `apply` commutes exactly with the bid-ask swap.
    pub fn symmetrized(&self) -> Self {
        let two = T::lit(2.0);
        let days = self
            .days
            .iter()
            .map(|d| {
                let (mut mean, mut scale) = (d.mean, d.scale);
                for (b, a) in [(LO_B, LO_A), (C_B, C_A), (EX_B, EX_A)] {
                    let m = (mean[b] + mean[a]) / two;
                    let s = (scale[b] + scale[a]) / two;
                    (mean[b], mean[a], scale[b], scale[a]) = (m, m, s, s);
                }
                mean[RET] = T::zero();
                DayNorm { day: d.day, mean, scale }
            })
            .collect();
        Self { scheme: self.scheme, days }
    }
}

struct DayMoments<T> {
    day: u32,
    mean: Vec8<T>,
    range: std::ops::Range<usize>,
}

fn split_days<T: Scalar>(vectors: &[TransformedVector<T>]) -> Vec<DayMoments<T>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=vectors.len() {
        if i == vectors.len() || vectors[i].day != vectors[start].day {
            let n = T::from_usize_lossy(i - start);
            let mut mean = [T::zero(); DIM];
            for v in &vectors[start..i] {
                for j in 0..DIM {
                    mean[j] += v.values[j];
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            out.push(DayMoments {
                day: vectors[start].day,
                mean,
                range: start..i,
            });
            start = i;
        }
    }
    out
}

fn check_scale<T: Scalar>(var: &Vec8<T>, mean: &Vec8<T>, day: u32) -> Result<Vec8<T>, PreprocessError> {
    let mut s = [T::one(); DIM];
    for j in 0..DIM {
        let floor = T::lit(16.0) * T::epsilon() * mean[j].abs().max(T::one());
        if !(var[j] > floor * floor) {
            return Err(PreprocessError::ZeroVariance {
                component: COMPONENT_NAMES[j],
                day,
            });
        }
        s[j] = var[j].sqrt();
    }
    Ok(s)
}

/// Causal normalisation by the equal-weighted average of the `window`
/// preceding days' moments.
///
/// The deviation in the variance is taken from the current trailing mean of
/// day `d`, for every contributing day. Days without records do not count
/// towards the window. Only days with at least `window` predecessors are
/// emitted.
pub fn rolling_normalize<T: Scalar>(
    vectors: &[TransformedVector<T>],
    window: usize,
) -> Result<(Vec<TransformedVector<T>>, NormalizationState<T>), PreprocessError> {
    assert!(window >= 1, "window must be at least one day");
    let days = split_days(vectors);
    if days.len() < window + 1 {
        return Err(PreprocessError::InsufficientData(format!(
            "rolling normalisation needs {} days, got {}",
            window + 1,
            days.len()
        )));
    }
    let w = T::from_usize_lossy(window);
    let mut out = Vec::new();
    let mut state = Vec::new();
    for d in window..days.len() {
        let past = &days[d - window..d];
        let mut mu = [T::zero(); DIM];
        for p in past {
            for j in 0..DIM {
                mu[j] += p.mean[j];
            }
        }
        mu.iter_mut().for_each(|m| *m /= w);
        let mut var = [T::zero(); DIM];
        for p in past {
            let n = T::from_usize_lossy(p.range.len());
            let mut ss = [T::zero(); DIM];
            for v in &vectors[p.range.clone()] {
                for j in 0..DIM {
                    let e = v.values[j] - mu[j];
                    ss[j] += e * e;
                }
            }
            for j in 0..DIM {
                var[j] += ss[j] / n;
            }
        }
        var.iter_mut().for_each(|v| *v /= w);
        let scale = check_scale(&var, &mu, days[d].day)?;
        for v in &vectors[days[d].range.clone()] {
            out.push(TransformedVector {
                day: v.day,
                index: v.index,
                values: std::array::from_fn(|j| (v.values[j] - mu[j]) / scale[j]),
            });
        }
        state.push(DayNorm {
            day: days[d].day,
            mean: mu,
            scale,
        });
    }
    Ok((
        out,
        NormalizationState {
            scheme: NormalizationScheme::Rolling { window },
            days: state,
        },
    ))
}

/// Standardises each day by its own mean and population variance.
pub fn per_day_normalize<T: Scalar>(
    vectors: &[TransformedVector<T>],
) -> Result<(Vec<TransformedVector<T>>, NormalizationState<T>), PreprocessError> {
    let days = split_days(vectors);
    if days.is_empty() {
        return Err(PreprocessError::InsufficientData("no vectors to normalise".into()));
    }
    let mut out = Vec::with_capacity(vectors.len());
    let mut state = Vec::with_capacity(days.len());
    for d in &days {
        let n = T::from_usize_lossy(d.range.len());
        let mut var = [T::zero(); DIM];
        for v in &vectors[d.range.clone()] {
            for j in 0..DIM {
                let e = v.values[j] - d.mean[j];
                var[j] += e * e;
            }
        }
        var.iter_mut().for_each(|v| *v /= n);
        let scale = check_scale(&var, &d.mean, d.day)?;
        for v in &vectors[d.range.clone()] {
            out.push(TransformedVector {
                day: v.day,
                index: v.index,
                values: std::array::from_fn(|j| (v.values[j] - d.mean[j]) / scale[j]),
            });
        }
        state.push(DayNorm {
            day: d.day,
            mean: d.mean,
            scale,
        });
    }
    Ok((
        out,
        NormalizationState {
            scheme: NormalizationScheme::PerDay,
            days: state,
        },
    ))
}

pub fn normalize<T: Scalar>(
    vectors: &[TransformedVector<T>],
    scheme: NormalizationScheme,
) -> Result<(Vec<TransformedVector<T>>, NormalizationState<T>), PreprocessError> {
    match scheme {
        NormalizationScheme::Rolling { window } => rolling_normalize(vectors, window),
        NormalizationScheme::PerDay => per_day_normalize(vectors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn day_of(day: u32, rows: &[Vec8<f64>]) -> Vec<TransformedVector<f64>> {
        rows.iter()
            .enumerate()
            .map(|(i, r)| TransformedVector { day, index: i as u32, values: *r })
            .collect()
    }

    #[test]
    fn standardised_days_pass_through() {
        let rows = [[1.0; 8], [-1.0; 8]];
        let mut v = Vec::new();
        for d in 0..25 {
            v.extend(day_of(d, &rows));
        }
        let (out, state) = rolling_normalize(&v, 20).unwrap();
        assert_eq!(out.len(), 10);
        assert_eq!(out[0].day, 20);
        for o in &out {
            assert!(o.values.iter().all(|x| (x.abs() - 1.0).abs() < 1e-15));
        }
        assert_eq!(state.for_day(24).unwrap().scale, [1.0; 8]);
        assert!(state.for_day(3).is_none());
    }

    #[test]
    fn constant_component_is_rejected() {
        let rows = [[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0], [2.0, 2.0, 3.0, 5.0, 5.0, 6.0, 7.0, 9.0]];
        let mut v = Vec::new();
        for d in 0..4 {
            v.extend(day_of(d, &rows));
        }
        let err = rolling_normalize(&v, 2).unwrap_err();
        assert!(matches!(err, PreprocessError::ZeroVariance { component: "v_lo_b", .. }), "{err:?}");
        assert!(matches!(rolling_normalize(&v, 4), Err(PreprocessError::InsufficientData(_))));
    }

    #[test]
    fn stationary_data_is_standardised() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut v = Vec::new();
        for d in 0..120u32 {
            for i in 0..1000u32 {
                let values = std::array::from_fn(|j| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    3.0 + j as f64 + 2.0 * z
                });
                v.push(TransformedVector { day: d, index: i, values });
            }
        }
        let (out, _) = rolling_normalize(&v, 20).unwrap();
        let n = out.len() as f64;
        for j in 0..8 {
            let m = out.iter().map(|o| o.values[j]).sum::<f64>() / n;
            let var = out.iter().map(|o| (o.values[j] - m).powi(2)).sum::<f64>() / n;
            assert!(m.abs() < 0.02, "mean {m}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
    }

    #[test]
    fn causal() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut v = Vec::new();
        for d in 0..30u32 {
            for i in 0..50u32 {
                let values: Vec8<f64> = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                v.push(TransformedVector { day: d, index: i, values });
            }
        }
        let (before, _) = rolling_normalize(&v, 5).unwrap();
        let mut changed = v.clone();
        for x in changed.iter_mut().filter(|x| x.day == 22) {
            x.values[3] += 10.0;
        }
        let (after, _) = rolling_normalize(&changed, 5).unwrap();
        for (a, b) in before.iter().zip(&after) {
            if a.day < 22 {
                assert_eq!(a, b);
            }
        }
    }
}
