//! Aggregate-imbalance response curves `R_N(I)` and the rescaling
//! `R_N(I) = g(N) F(I / h(N))` with `F(x) = x / (1 + |x|^α)^(α/β)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ImpactError;
use crate::coarse_grain::{day_runs, PriceChangeRecord};
use crate::linalg::Matrix;
use crate::optim::{levenberg_marquardt, LmOptions};
use crate::scalar::Scalar;

/// The sigmoid. Odd by construction: only `|x|` enters the denominator.
pub fn sigmoid<T: Scalar>(x: T, alpha: T, beta: T) -> T {
    x / (T::one() + x.abs().powf(alpha)).powf(alpha / beta)
}

/// `∂F/∂x`, `∂F/∂α`, `∂F/∂β` at `x`.
fn sigmoid_grad<T: Scalar>(x: T, alpha: T, beta: T) -> (T, T, T, T) {
    let ax = x.abs();
    let e = alpha / beta;
    let pa = if ax > T::zero() { ax.powf(alpha) } else { T::zero() };
    let base = T::one() + pa;
    let f = x / base.powf(e);
    let dfdx = (T::one() + pa - e * alpha * pa) / base.powf(e + T::one());
    let lb = base.ln();
    let dpa_da = if ax > T::zero() { pa * ax.ln() } else { T::zero() };
    // ln F = ln x - e ln(base)
    let dfda = f * -(lb / beta + e * dpa_da / base);
    let dfdb = f * (alpha * lb / (beta * beta));
    (f, dfdx, dfda, dfdb)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bucket<T> {
    /// Mean aggregated imbalance in the bucket.
    pub imbalance: T,
    /// Mean aggregated mid-price change.
    pub response: T,
    pub count: usize,
    pub stderr: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceCurve<T> {
    pub n: usize,
    pub windows: usize,
    pub buckets: Vec<Bucket<T>>,
}

impl<T: Scalar> ImbalanceCurve<T> {
    /// Least-squares slope through the origin over buckets with `|I|` below
    /// `frac` of the largest bucket imbalance.
    pub fn small_imbalance_slope(&self, frac: T) -> T {
        let max = self.buckets.iter().fold(T::zero(), |m, b| m.max(b.imbalance.abs()));
        let (mut sxy, mut sxx) = (T::zero(), T::zero());
        for b in &self.buckets {
            if b.imbalance.abs() <= frac * max {
                sxy += b.imbalance * b.response;
                sxx += b.imbalance * b.imbalance;
            }
        }
        sxy / sxx
    }
}

/// Response of the mid-price to the execution imbalance aggregated over `n`
/// consecutive records, with windows sliding by one record inside each day.
pub fn aggregate_imbalance_impact<T: Scalar>(
    records: &[PriceChangeRecord<T>],
    n: usize,
    buckets: usize,
) -> Result<ImbalanceCurve<T>, ImpactError> {
    let needed = 100 * n.max(1);
    if n == 0 || records.len() < needed {
        return Err(ImpactError::InsufficientData { needed, got: records.len() });
    }
    let mut exact: Vec<(T, T)> = Vec::new();
    for run in day_runs(records) {
        for w in records[run].windows(n) {
            let i = w.iter().fold(T::zero(), |s, r| s + (r.v_ex_a - r.v_ex_b));
            let ret = w.iter().fold(T::zero(), |s, r| s + r.ret);
            exact.push((i, ret));
        }
    }
    let windows = exact.len();
    let nb = buckets.max(1).min(windows);
    if windows < nb * 2 {
        return Err(ImpactError::InsufficientData { needed: 2 * nb, got: windows });
    }
    exact.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let out = (0..nb)
        .map(|b| {
            let lo = b * windows / nb;
            let hi = (b + 1) * windows / nb;
            let chunk = &exact[lo..hi];
            let m = T::from_usize_lossy(chunk.len());
            let mi = chunk.iter().fold(T::zero(), |s, p| s + p.0) / m;
            let mr = chunk.iter().fold(T::zero(), |s, p| s + p.1) / m;
            let var = chunk.iter().fold(T::zero(), |s, p| s + (p.1 - mr) * (p.1 - mr)) / m;
            Bucket {
                imbalance: mi,
                response: mr,
                count: chunk.len(),
                stderr: (var / m).sqrt(),
            }
        })
        .collect();
    Ok(ImbalanceCurve { n, windows, buckets: out })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImpactScaling<T> {
    pub ns: Vec<usize>,
    /// Relative scales, equal to one at the smallest `N`.
    pub g: Vec<T>,
    pub h: Vec<T>,
    /// Absolute units: `R_N(I) = response_unit g(N) F(I / (imbalance_unit h(N)))`.
    pub response_unit: T,
    pub imbalance_unit: T,
    pub alpha: T,
    pub beta: T,
    /// Root-mean-square collapse residual over all buckets.
    pub rms: T,
}

impl<T: Scalar> ImpactScaling<T> {
    /// `(g, h)` at `n`, log-log interpolated between fitted sizes and
    /// extrapolated from the nearest two outside them.
    pub fn scales(&self, n: usize) -> (T, T) {
        if let Some(i) = self.ns.iter().position(|&m| m == n) {
            return (self.g[i], self.h[i]);
        }
        if self.ns.len() == 1 {
            return (self.g[0], self.h[0]);
        }
        let k = self.ns.partition_point(|&m| m < n).clamp(1, self.ns.len() - 1);
        let (n0, n1) = (self.ns[k - 1], self.ns[k]);
        let x = |m: usize| T::from_usize_lossy(m).ln();
        let w = (x(n) - x(n0)) / (x(n1) - x(n0));
        let interp = |a: T, b: T| (a.ln() + w * (b.ln() - a.ln())).exp();
        (interp(self.g[k - 1], self.g[k]), interp(self.h[k - 1], self.h[k]))
    }

    pub fn response(&self, n: usize, imbalance: T) -> T {
        let (g, h) = self.scales(n);
        self.response_unit * g * sigmoid(imbalance / (self.imbalance_unit * h), self.alpha, self.beta)
    }
}

/// Return change from adding `delta` to a window imbalance `imbalance`.
pub fn instantaneous_impact<T: Scalar>(imbalance: T, delta: T, scaling: &ImpactScaling<T>, n: usize) -> T {
    if delta == T::zero() {
        return T::zero();
    }
    scaling.response(n, imbalance + delta) - scaling.response(n, imbalance)
}

/// Joint least squares over `α, β` and `g(N), h(N)`, with `g = h = 1` at the
/// smallest `N`. Parameters are fitted in logs to keep them positive.
pub fn fit_sigmoid<T: Scalar>(curves: &[ImbalanceCurve<T>]) -> Result<ImpactScaling<T>, ImpactError> {
    let mut curves: Vec<&ImbalanceCurve<T>> = curves.iter().collect();
    curves.sort_by_key(|c| c.n);
    curves.dedup_by_key(|c| c.n);
    if curves.len() < 2 || curves.iter().any(|c| c.buckets.len() < 10) {
        return Err(ImpactError::InsufficientCurves);
    }
    let m = curves.len();
    // residuals are scaled by the bucket standard errors when every bucket has one
    let mut errs: Vec<T> = curves.iter().flat_map(|cv| cv.buckets.iter().map(|b| b.stderr)).collect();
    let weighted = errs.iter().all(|e| *e > T::zero() && e.is_finite());
    let weight_floor = if weighted {
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        errs[errs.len() / 2] * T::lit(1e-3)
    } else {
        T::zero()
    };
    let points: Vec<(usize, T, T, T)> = curves
        .iter()
        .enumerate()
        .flat_map(|(c, cv)| {
            cv.buckets.iter().map(move |b| {
                let w = if weighted { T::one() / b.stderr.max(weight_floor) } else { T::one() };
                (c, b.imbalance, b.response, w)
            })
        })
        .collect();
    // θ = [ln α, ln β, ln r_u, ln i_u, ln g_1.., ln h_1..]
    let np = 4 + 2 * (m - 1);
    let unpack = |th: &[T], c: usize| -> (T, T, T, T) {
        let (g, h) = if c == 0 {
            (T::one(), T::one())
        } else {
            (th[3 + c].exp(), th[2 + m + c].exp())
        };
        (th[0].exp(), th[1].exp(), th[2].exp() * g, th[3].exp() * h)
    };
    let residuals = |th: &[T]| -> Vec<T> {
        points
            .iter()
            .map(|&(c, i, r, w)| {
                let (a, b, g, h) = unpack(th, c);
                w * (g * sigmoid(i / h, a, b) - r)
            })
            .collect()
    };
    let jacobian = |th: &[T], _r: &[T]| -> Matrix<T> {
        let mut j = Matrix::zeros(points.len(), np);
        for (row, &(c, i, _, w)) in points.iter().enumerate() {
            let (a, b, g, h) = unpack(th, c);
            let g = g * w;
            let x = i / h;
            let (f, dfdx, dfda, dfdb) = sigmoid_grad(x, a, b);
            j[(row, 0)] = g * dfda * a;
            j[(row, 1)] = g * dfdb * b;
            j[(row, 2)] = g * f;
            j[(row, 3)] = -g * dfdx * x;
            if c > 0 {
                j[(row, 3 + c)] = g * f;
                j[(row, 2 + m + c)] = -g * dfdx * x;
            }
        }
        j
    };

    // starting scales from the spread of each curve
    let spread = |cv: &ImbalanceCurve<T>, resp: bool| {
        let k = T::from_usize_lossy(cv.buckets.len());
        cv.buckets
            .iter()
            .fold(T::zero(), |s, b| s + if resp { b.response.abs() } else { b.imbalance.abs() })
            / k
    };
    let (i0, r0) = (spread(curves[0], false), spread(curves[0], true));
    if !(i0 > T::zero() && r0 > T::zero()) {
        return Err(ImpactError::FitDiverged);
    }
    let mut base = vec![T::zero(); np];
    base[2] = r0.ln();
    base[3] = i0.ln();
    for c in 1..m {
        base[3 + c] = (spread(curves[c], true) / r0).ln();
        base[2 + m + c] = (spread(curves[c], false) / i0).ln();
    }
    let starts: Vec<(f64, f64)> = [0.5, 1.0, 2.0, 3.0]
        .iter()
        .flat_map(|&a| [0.5, 1.0, 2.0, 4.0].map(move |b| (a, b)))
        .collect();
    let best = starts
        .par_iter()
        .map(|&(a, b)| {
            let mut x0 = base.clone();
            x0[0] = T::lit(a).ln();
            x0[1] = T::lit(b).ln();
            levenberg_marquardt(&residuals, &jacobian, &x0, LmOptions::default())
        })
        .filter(|r| r.cost.is_finite() && r.x.iter().all(|v| v.is_finite()))
        .collect::<Vec<_>>()
        .into_iter()
        .min_by(|a, b| a.cost.partial_cmp(&b.cost).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or(ImpactError::FitDiverged)?;
    let th = &best.x;
    let mut g = vec![T::one()];
    let mut h = vec![T::one()];
    for c in 1..m {
        g.push(th[3 + c].exp());
        h.push(th[2 + m + c].exp());
    }
    let (alpha, beta) = (th[0].exp(), th[1].exp());
    let (response_unit, imbalance_unit) = (th[2].exp(), th[3].exp());
    let scales_ok = g.iter().chain(&h).chain([&response_unit, &imbalance_unit]).all(|v| v.is_finite() && *v > T::zero());
    if !(alpha.is_finite() && beta.is_finite() && scales_ok) {
        return Err(ImpactError::FitDiverged);
    }
    Ok(ImpactScaling {
        ns: curves.iter().map(|c| c.n).collect(),
        g,
        h,
        response_unit,
        imbalance_unit,
        alpha,
        beta,
        rms: {
            let sse = points.iter().fold(T::zero(), |s, &(c, i, r, _)| {
                let (a, b, g, h) = unpack(th, c);
                let e = g * sigmoid(i / h, a, b) - r;
                s + e * e
            });
            (sse / T::from_usize_lossy(points.len())).sqrt()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, Normal};

    proptest! {
        #[test]
        fn sigmoid_is_odd(x in -1e3f64..1e3, a in 0.1f64..5.0, b in 0.1f64..5.0) {
            prop_assert_eq!(sigmoid(-x, a, b), -sigmoid(x, a, b));
        }
    }

    #[test]
    fn sigmoid_small_x_is_identity() {
        assert_eq!(sigmoid(0.0, 2.0, 1.0), 0.0);
        for &(a, b) in &[(2.0, 1.0), (1.5, 3.0), (0.8, 0.5)] {
            let x = 1e-6f64;
            assert!((sigmoid(x, a, b) / x - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        for &(x, a, b) in &[(0.7, 2.0, 1.0), (-1.9, 1.3, 2.5), (3.0, 0.6, 0.9)] {
            let (_, dx, da, db) = sigmoid_grad(x, a, b);
            let h = 1e-6;
            let fd = |f: &dyn Fn(f64) -> f64, v: f64| (f(v + h) - f(v - h)) / (2.0 * h);
            assert!((dx - fd(&|v| sigmoid(v, a, b), x)).abs() < 1e-7);
            assert!((da - fd(&|v| sigmoid(x, v, b), a)).abs() < 1e-7);
            assert!((db - fd(&|v| sigmoid(x, a, v), b)).abs() < 1e-7);
        }
    }

    fn record(day: u32, index: u32, ex_b: f64, ex_a: f64, ret: f64) -> PriceChangeRecord<f64> {
        PriceChangeRecord {
            day,
            index,
            t_ns: index as i64,
            dt: 1.0,
            v_lo_b: 0.0,
            v_lo_a: 0.0,
            v_c_b: 0.0,
            v_c_a: 0.0,
            v_ex_b: ex_b,
            v_ex_a: ex_a,
            ret,
            span: 1,
        }
    }

    #[test]
    fn planted_linear_response_slope() {
        let c = 0.05;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let vol = Normal::new(10.0, 3.0).unwrap();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut recs = Vec::new();
        for day in 0..20u32 {
            for i in 0..2000u32 {
                let (b, a): (f64, f64) = (vol.sample(&mut rng), vol.sample(&mut rng));
                recs.push(record(day, i, b, a, c * (a - b) + noise.sample(&mut rng)));
            }
        }
        let curve = aggregate_imbalance_impact(&recs, 10, 20).unwrap();
        let slope = curve.small_imbalance_slope(1.0);
        assert!((slope - c).abs() < 0.05 * c, "slope {slope}");
    }

    #[test]
    fn insufficient_records() {
        let recs: Vec<_> = (0..99).map(|i| record(0, i, 1.0, 1.0, 0.0)).collect();
        assert!(matches!(
            aggregate_imbalance_impact(&recs, 1, 10),
            Err(ImpactError::InsufficientData { needed: 100, got: 99 })
        ));
    }

    #[test]
    fn zero_delta_has_no_impact_and_saturation_reduces_it() {
        let s = ImpactScaling::<f64> {
            ns: vec![20],
            g: vec![1.5],
            h: vec![4.0],
            response_unit: 1.0,
            imbalance_unit: 1.0,
            alpha: 1.0,
            beta: 2.0,
            rms: 0.0,
        };
        assert_eq!(instantaneous_impact(3.0, 0.0, &s, 20), 0.0);
        let small = instantaneous_impact(0.0, 1e-6, &s, 20);
        assert!((small / 1e-6 - 1.5 / 4.0).abs() < 1e-5);
        assert!(instantaneous_impact(40.0, 0.5, &s, 20) < instantaneous_impact(0.0, 0.5, &s, 20));
    }

    #[test]
    fn scales_interpolate_in_logs() {
        let s = ImpactScaling::<f64> {
            ns: vec![10, 40],
            g: vec![1.0, 4.0],
            h: vec![1.0, 16.0],
            response_unit: 1.0,
            imbalance_unit: 1.0,
            alpha: 1.0,
            beta: 1.0,
            rms: 0.0,
        };
        let (g, h) = s.scales(20);
        assert!((g - 2.0).abs() < 1e-12 && (h - 4.0).abs() < 1e-12);
    }
}
