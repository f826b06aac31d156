use serde::{Deserialize, Serialize};

use super::PreprocessError;
use crate::flow::{Vec8, DT, RET, VOLUMES};
use crate::optim::golden_section_min;
use crate::scalar::Scalar;

/// `(x^λ - 1)/λ`, or `ln x` at λ = 0.
pub fn box_cox<T: Scalar>(x: T, lambda: T) -> Result<T, PreprocessError> {
    if !(x > T::zero()) {
        return Err(PreprocessError::NonPositiveInput(x.to_f64_lossy()));
    }
    Ok(box_cox_unchecked(x, lambda))
}

#[inline]
pub(crate) fn box_cox_unchecked<T: Scalar>(x: T, lambda: T) -> T {
    if lambda == T::zero() {
        x.ln()
    } else if lambda == T::one() {
        x - T::one()
    } else {
        (lambda * x.ln()).exp_m1() / lambda
    }
}

/// Inverse of [`box_cox`]; NaN when `1 + λy < 0`.
pub fn inverse_box_cox<T: Scalar>(y: T, lambda: T) -> T {
    if lambda == T::zero() {
        y.exp()
    } else if lambda == T::one() {
        y + T::one()
    } else {
        let base = lambda * y;
        if base < -T::one() {
            return T::nan();
        }
        (base.ln_1p() / lambda).exp()
    }
}

/// Box-Cox profile log-likelihood of the Gaussian model, up to a constant.
pub fn box_cox_log_likelihood<T: Scalar>(samples: &[T], log_sum: T, lambda: T) -> T {
    let n = T::from_usize_lossy(samples.len());
    let mut mean = T::zero();
    for &x in samples {
        mean += box_cox_unchecked(x, lambda);
    }
    mean /= n;
    let mut ss = T::zero();
    for &x in samples {
        let d = box_cox_unchecked(x, lambda) - mean;
        ss += d * d;
    }
    let var = ss / n;
    -n / T::lit(2.0) * var.ln() + (lambda - T::one()) * log_sum
}

/// Maximum-likelihood Box-Cox exponent on `[-1, 2]`, resolved to 1e-4.
pub fn fit_box_cox_lambda<T: Scalar>(samples: &[T]) -> Result<T, PreprocessError> {
    if samples.len() < 100 {
        return Err(PreprocessError::InsufficientData(format!(
            "Box-Cox fit needs at least 100 samples, got {}",
            samples.len()
        )));
    }
    if let Some(&bad) = samples.iter().find(|&&x| !(x > T::zero())) {
        return Err(PreprocessError::NonPositiveInput(bad.to_f64_lossy()));
    }
    let log_sum = samples.iter().fold(T::zero(), |s, &x| s + x.ln());
    let nll = |l: T| {
        let v = -box_cox_log_likelihood(samples, log_sum, l);
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    };
    // coarse scan guards against a non-unimodal profile, golden section refines
    let (lo, hi) = (T::lit(-1.0), T::lit(2.0));
    let steps = 30;
    let h = (hi - lo) / T::from_usize_lossy(steps);
    let mut best = 0;
    let mut best_v = T::infinity();
    for i in 0..=steps {
        let v = nll(lo + h * T::from_usize_lossy(i));
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    let a = (lo + h * T::from_usize_lossy(best.saturating_sub(1))).max(lo);
    let b = (lo + h * T::from_usize_lossy((best + 1).min(steps))).min(hi);
    let (lambda, _) = golden_section_min(nll, a, b, T::lit(1e-5));
    Ok(lambda)
}

/// Exponents and offset applied to the 8-vector before normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxParams<T> {
    pub lambda_v: T,
    pub lambda_t: T,
    /// Scale inside the transform, fixed to 1.
    pub a: T,
    /// Added to every volume before transforming.
    pub offset: T,
}

impl<T: Scalar> BoxCoxParams<T> {
    /// λ = 1 and no offset: the transform reduces to `x - 1`.
    pub fn identity() -> Self {
        Self {
            lambda_v: T::one(),
            lambda_t: T::one(),
            a: T::one(),
            offset: T::zero(),
        }
    }

    /// Original-space vector to transformed vector; the return passes through.
    pub fn transform(&self, x: &Vec8<T>) -> Vec8<T> {
        let mut t = *x;
        t[DT] = box_cox_unchecked(self.a * x[DT], self.lambda_t);
        for &j in &VOLUMES {
            t[j] = box_cox_unchecked(self.a * (x[j] + self.offset), self.lambda_v);
        }
        t[RET] = x[RET];
        t
    }

    pub fn inverse(&self, t: &Vec8<T>) -> Vec8<T> {
        let mut x = *t;
        x[DT] = inverse_box_cox(t[DT], self.lambda_t) / self.a;
        for &j in &VOLUMES {
            x[j] = inverse_box_cox(t[j], self.lambda_v) / self.a - self.offset;
        }
        x[RET] = t[RET];
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn closed_forms() {
        for l in [-1.0, 0.0, 0.2, 1.7] {
            assert_eq!(box_cox(1.0f64, l).unwrap(), 0.0);
        }
        assert!((box_cox(std::f64::consts::E, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((box_cox(4.0f64, 0.5).unwrap() - 2.0).abs() < 1e-14);
        assert!(matches!(box_cox(0.0f64, 0.5), Err(PreprocessError::NonPositiveInput(_))));
        assert!(matches!(box_cox(-2.0f64, 0.0), Err(PreprocessError::NonPositiveInput(_))));
    }

    #[test]
    fn lognormal_samples_give_log_transform() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..20_000)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.exp()
            })
            .collect();
        let l = fit_box_cox_lambda(&xs).unwrap();
        assert!(l.abs() < 0.04, "lambda {l}");
    }

    #[test]
    fn shifted_gaussian_needs_no_curvature() {
        // Normal quantiles rather than draws: at a 1% coefficient of variation
        // the likelihood is so flat in λ that sampling skew dominates.
        let n = 20_000;
        let normal = Normal::new(100.0, 1.0).unwrap();
        let xs: Vec<f64> = (1..=n).map(|i| normal.inverse_cdf(i as f64 / (n + 1) as f64)).collect();
        let l = fit_box_cox_lambda(&xs).unwrap();
        assert!((l - 1.0).abs() < 0.1, "lambda {l}");
    }

    #[test]
    fn fit_rejects_bad_input() {
        assert!(matches!(fit_box_cox_lambda(&[1.0f64; 10]), Err(PreprocessError::InsufficientData(_))));
        let mut xs = vec![1.0f64; 200];
        xs[7] = 0.0;
        assert!(matches!(fit_box_cox_lambda(&xs), Err(PreprocessError::NonPositiveInput(_))));
    }

    #[test]
    fn identity_params_are_affine() {
        let p = BoxCoxParams::<f64>::identity();
        let x = [2.0, 3.0, 0.5, 7.0, 1.0, 0.0, 4.0, -2.0];
        let t = p.transform(&x);
        assert_eq!(t, [1.0, 2.0, -0.5, 6.0, 0.0, -1.0, 3.0, -2.0]);
        assert_eq!(p.inverse(&t), x);
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(log_x in -6.0f64..6.0, lambda in -0.6f64..0.6) {
            let x = 10f64.powf(log_x);
            let back = inverse_box_cox(box_cox(x, lambda).unwrap(), lambda);
            prop_assert!(((back - x) / x).abs() < 1e-12, "x={} lambda={} back={}", x, lambda, back);
        }

        #[test]
        fn params_round_trip(v in proptest::array::uniform8(0.01f64..1e4), lv in 0.0f64..0.5, lt in 0.0f64..0.5) {
            let p = BoxCoxParams { lambda_v: lv, lambda_t: lt, a: 1.0, offset: 1.0 };
            let back = p.inverse(&p.transform(&v));
            for (a, b) in back.iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
            }
        }
    }
}
