//! Descriptive statistics and reference distributions.

use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::scalar::Scalar;

pub fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::nan();
    }
    xs.iter().fold(T::zero(), |s, &x| s + x) / T::from_usize_lossy(xs.len())
}

/// Population variance (divides by `n`).
pub fn variance<T: Scalar>(xs: &[T]) -> T {
    let m = mean(xs);
    xs.iter().fold(T::zero(), |s, &x| s + (x - m) * (x - m)) / T::from_usize_lossy(xs.len())
}

/// Demeaned sample autocorrelation for lags `0..=max_lag`, biased (1/n) normalisation.
///
/// Returns `None` when the series is shorter than `max_lag + 2` or constant.
pub fn autocorrelation<T: Scalar>(xs: &[T], max_lag: usize) -> Option<Vec<T>> {
    let n = xs.len();
    if n < max_lag + 2 {
        return None;
    }
    let m = mean(xs);
    let centred: Vec<T> = xs.iter().map(|&x| x - m).collect();
    let c0 = centred.iter().fold(T::zero(), |s, &x| s + x * x);
    if c0 <= T::zero() {
        return None;
    }
    Some(
        (0..=max_lag)
            .map(|lag| {
                let c = centred[..n - lag]
                    .iter()
                    .zip(&centred[lag..])
                    .fold(T::zero(), |s, (&a, &b)| s + a * b);
                c / c0
            })
            .collect(),
    )
}

/// Ljung-Box portmanteau statistic over lags `1..=h` and its chi-square p-value.
pub fn ljung_box(acf: &[f64], n: usize, h: usize) -> (f64, f64) {
    let nf = n as f64;
    let q = (1..=h.min(acf.len().saturating_sub(1)))
        .map(|k| acf[k] * acf[k] / (nf - k as f64))
        .sum::<f64>()
        * nf
        * (nf + 2.0);
    let p = match ChiSquared::new(h as f64) {
        Ok(dist) => 1.0 - dist.cdf(q),
        Err(_) => f64::NAN,
    };
    (q, p)
}

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if !t.is_finite() {
        return if t.is_nan() { f64::NAN } else { 0.0 };
    }
    match StudentsT::new(0.0, 1.0, df) {
        Ok(dist) => (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0),
        Err(_) => f64::NAN,
    }
}
