use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::coarse_grain::{day_runs, PriceChangeRecord};
use crate::ingest::SessionClock;
use crate::linalg::Matrix;
use crate::optim::{golden_section_min, levenberg_marquardt, LmOptions};
use crate::scalar::Scalar;

/// `A exp(-t/τ) + B` with `t` in minutes from the start of its regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpFit<T> {
    pub a: T,
    pub tau: T,
    pub b: T,
    /// Root-mean-square residual over the fitted bins.
    pub rms: T,
    pub converged: bool,
    /// False when the decay time is not pinned down by the data (flat curve,
    /// or τ at the edge of the search range).
    pub tau_identified: bool,
}

impl<T: Scalar> ExpFit<T> {
    pub fn value(&self, t: T) -> T {
        self.a * (-t / self.tau).exp() + self.b
    }
}

/// Two-regime fit of a per-minute profile, split at `split_minute`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileFit<T> {
    pub split_minute: usize,
    pub regimes: [ExpFit<T>; 2],
}

impl<T: Scalar> ProfileFit<T> {
    /// Fitted level at the centre of session minute `m`.
    pub fn value_at_minute(&self, m: usize) -> T {
        let centre = T::from_usize_lossy(m) + T::lit(0.5);
        if m < self.split_minute {
            self.regimes[0].value(centre)
        } else {
            self.regimes[1].value(centre - T::from_usize_lossy(self.split_minute))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntradayProfile<T> {
    /// Common unit-mean profile, one value per session minute.
    pub minute_bins: Vec<T>,
    /// Unit-mean profile of each of the six flows (empty for all-zero flows).
    pub per_flow: Vec<Vec<T>>,
    pub days: usize,
}

/// Per-minute average of each flow across days, normalised to unit mean and
/// averaged into one common profile.
pub fn estimate_intraday_profile<T: Scalar>(
    records: &[PriceChangeRecord<T>],
    session: &SessionClock,
) -> Result<IntradayProfile<T>, PreprocessError> {
    let minutes = session.minutes();
    if records.is_empty() || minutes == 0 {
        return Err(PreprocessError::InsufficientData("no records for the intraday profile".into()));
    }
    let runs = day_runs(records);
    let per_day: Vec<Vec<[T; 6]>> = runs
        .par_iter()
        .map(|r| {
            let mut bins = vec![[T::zero(); 6]; minutes];
            for rec in &records[r.clone()] {
                let m = session.minute_of(rec.t_ns);
                let v = rec.to_vector();
                for k in 0..6 {
                    bins[m][k] += v[k + 1];
                }
            }
            bins
        })
        .collect();
    let ndays = T::from_usize_lossy(per_day.len());
    let mut totals = vec![[T::zero(); 6]; minutes];
    for day in &per_day {
        for (t, d) in totals.iter_mut().zip(day) {
            for k in 0..6 {
                t[k] += d[k];
            }
        }
    }
    let mut per_flow = Vec::with_capacity(6);
    let mut common = vec![T::zero(); minutes];
    let mut used = 0usize;
    for k in 0..6 {
        let avg: Vec<T> = totals.iter().map(|t| t[k] / ndays).collect();
        let mean = avg.iter().fold(T::zero(), |s, &x| s + x) / T::from_usize_lossy(minutes);
        if mean > T::zero() {
            let norm: Vec<T> = avg.iter().map(|&x| x / mean).collect();
            for (c, &x) in common.iter_mut().zip(&norm) {
                *c += x;
            }
            per_flow.push(norm);
            used += 1;
        } else {
            per_flow.push(Vec::new());
        }
    }
    if used == 0 {
        return Err(PreprocessError::InsufficientData("all flows are zero".into()));
    }
    let k = T::from_usize_lossy(used);
    common.iter_mut().for_each(|c| *c /= k);
    Ok(IntradayProfile {
        minute_bins: common,
        per_flow,
        days: per_day.len(),
    })
}

fn linear_ab<T: Scalar>(ts: &[T], ys: &[T], tau: T) -> (T, T, T) {
    // least squares for y ≈ A e + B with e = exp(-t/τ)
    let n = T::from_usize_lossy(ts.len());
    let (mut se, mut see, mut sy, mut sey) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (&t, &y) in ts.iter().zip(ys) {
        let e = (-t / tau).exp();
        se += e;
        see += e * e;
        sy += y;
        sey += e * y;
    }
    let det = n * see - se * se;
    let (a, b) = if det.abs() > T::epsilon() * n * see {
        ((n * sey - se * sy) / det, (see * sy - se * sey) / det)
    } else {
        (T::zero(), sy / n)
    };
    let sse = ts
        .iter()
        .zip(ys)
        .fold(T::zero(), |s, (&t, &y)| {
            let r = a * (-t / tau).exp() + b - y;
            s + r * r
        });
    (a, b, sse)
}

/// Least-squares fit of `A exp(-t/τ) + B`.
///
/// τ is profiled out (A, B solved linearly for each τ) and searched on a log
/// grid refined by golden section; the result is then polished jointly.
pub fn fit_exponential_decay<T: Scalar>(ts: &[T], ys: &[T]) -> ExpFit<T> {
    let n = ts.len();
    let span = ts.iter().fold(T::zero(), |m, &t| m.max(t)) - ts.iter().fold(T::infinity(), |m, &t| m.min(t));
    let lo = (T::lit(0.05)).ln();
    let hi = (T::lit(50.0) * span.max(T::one())).ln();
    let steps = 240usize;
    let h = (hi - lo) / T::from_usize_lossy(steps);
    let sse_at = |log_tau: T| linear_ab(ts, ys, log_tau.exp()).2;
    let mut best = 0;
    let mut best_v = T::infinity();
    for i in 0..=steps {
        let v = sse_at(lo + h * T::from_usize_lossy(i));
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    let a_br = lo + h * T::from_usize_lossy(best.saturating_sub(1));
    let b_br = lo + h * T::from_usize_lossy((best + 1).min(steps));
    let (log_tau, _) = golden_section_min(sse_at, a_br, b_br, T::lit(1e-10));
    let tau0 = log_tau.exp();
    let (a0, b0, _) = linear_ab(ts, ys, tau0);
    let at_edge = best == 0 || best == steps;

    let scale = ys.iter().fold(T::zero(), |m, &y| m.max(y.abs())).max(T::min_positive_value());
    let flat = a0.abs() <= T::lit(1e-6) * scale;

    let (a, tau, b, converged) = if flat {
        (a0, tau0, b0, true)
    } else {
        // polish in (A, ln τ, B) so τ stays positive
        let res = |p: &[T]| -> Vec<T> {
            let tau = p[1].exp();
            ts.iter().zip(ys).map(|(&t, &y)| p[0] * (-t / tau).exp() + p[2] - y).collect()
        };
        let jac = |p: &[T], _r: &[T]| -> Matrix<T> {
            let tau = p[1].exp();
            Matrix::from_fn(n, 3, |i, j| {
                let e = (-ts[i] / tau).exp();
                match j {
                    0 => e,
                    1 => p[0] * e * ts[i] / tau,
                    _ => T::one(),
                }
            })
        };
        let out = levenberg_marquardt(res, jac, &[a0, tau0.ln(), b0], LmOptions::default());
        let (a1, tau1, b1) = (out.x[0], out.x[1].exp(), out.x[2]);
        let sse1 = linear_ab(ts, ys, tau1).2;
        if out.cost.is_finite() && T::lit(2.0) * out.cost <= best_v.min(sse1) * (T::one() + T::lit(1e-9)) + T::min_positive_value() {
            (a1, tau1, b1, out.converged)
        } else {
            (a0, tau0, b0, out.converged)
        }
    };
    let sse = ts.iter().zip(ys).fold(T::zero(), |s, (&t, &y)| {
        let r = a * (-t / tau).exp() + b - y;
        s + r * r
    });
    ExpFit {
        a,
        tau,
        b,
        rms: (sse / T::from_usize_lossy(n.max(1))).sqrt(),
        converged: converged && sse.is_finite(),
        tau_identified: !flat && !at_edge,
    }
}

/// Fits both regimes of a per-minute profile; `t` is measured from each
/// regime's start at bin centres.
pub fn fit_profile_exponentials<T: Scalar>(bins: &[T], split_minute: usize) -> Result<ProfileFit<T>, PreprocessError> {
    if split_minute < 6 || bins.len() < split_minute + 6 {
        return Err(PreprocessError::InsufficientData(format!(
            "profile fit needs 6 bins per regime ({} bins, split at {})",
            bins.len(),
            split_minute
        )));
    }
    let fit_range = |start: usize, end: usize| {
        let ts: Vec<T> = (start..end).map(|m| T::from_usize_lossy(m - start) + T::lit(0.5)).collect();
        fit_exponential_decay(&ts, &bins[start..end])
    };
    let regimes = [fit_range(0, split_minute), fit_range(split_minute, bins.len())];
    for r in &regimes {
        if !(r.a.is_finite() && r.tau.is_finite() && r.b.is_finite()) {
            return Err(PreprocessError::FitDiverged);
        }
    }
    Ok(ProfileFit { split_minute, regimes })
}

/// Divides every volume by the fitted profile at its minute of the session.
pub fn deseasonalize<T: Scalar>(
    records: &[PriceChangeRecord<T>],
    fit: &ProfileFit<T>,
    session: &SessionClock,
) -> Result<Vec<PriceChangeRecord<T>>, PreprocessError> {
    let levels: Vec<T> = (0..session.minutes()).map(|m| fit.value_at_minute(m)).collect();
    if let Some(m) = levels.iter().position(|&v| !(v > T::zero())) {
        return Err(PreprocessError::NonPositiveProfile { minute: m });
    }
    Ok(records
        .iter()
        .map(|r| {
            let s = levels[session.minute_of(r.t_ns)];
            let mut v = r.to_vector();
            for x in &mut v[1..7] {
                *x /= s;
            }
            r.with_vector(&v)
        })
        .collect())
}
