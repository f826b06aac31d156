//! Symmetry-constrained VAR(p) on mode-space series.
//!
//! Lags never reach across day boundaries: the series is given as one
//! segment per day and each segment contributes rows from its `p`-th element
//! on. Coefficients linking modes of different symmetry are excluded from the
//! regressions and are therefore exactly zero.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Symmetry, Vec8, DIM};
use crate::linalg::{cholesky_inverse, general_eigen, Matrix};
use crate::pca_modes::ModeBasis;
use crate::scalar::Scalar;
use crate::stats::{ljung_box, t_two_sided_p};

#[derive(Debug, Error, PartialEq)]
pub enum VarError {
    #[error("regressor matrix is rank deficient for equation {equation}")]
    RankDeficient { equation: usize },
    #[error("insufficient data: need more than {needed} usable rows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("history of {got} vectors is shorter than the lag order {p}")]
    ShortHistory { p: usize, got: usize },
    #[error("lag order must be at least 1")]
    ZeroLag,
    #[error("expected {DIM} symmetry labels, got {0}")]
    BadLabels(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarOptions {
    /// Heteroskedasticity-robust (HC0) standard errors.
    pub robust: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VarModel<T> {
    pub p: usize,
    /// Φ_1 … Φ_p.
    pub phis: Vec<Matrix<T>>,
    #[serde(with = "nan_as_null")]
    pub std_errors: Vec<Matrix<T>>,
    /// NaN for structurally excluded entries.
    #[serde(with = "nan_as_null")]
    pub p_values: Vec<Matrix<f64>>,
    /// Residual covariance (divides by the number of rows).
    pub sigma_eps: Matrix<T>,
    pub labels: Vec<Symmetry>,
    pub n_obs: usize,
    pub robust: bool,
    pub spectral_radius: T,
    pub unstable: bool,
}

/// JSON has no NaN; excluded entries are written as `null`.
mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::Matrix;
    use crate::scalar::Scalar;

    #[derive(Serialize, Deserialize)]
    struct Repr<T> {
        rows: usize,
        cols: usize,
        data: Vec<Option<T>>,
    }

    pub fn serialize<T: Scalar, S: Serializer>(v: &[Matrix<T>], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|m| Repr {
                rows: m.rows(),
                cols: m.cols(),
                data: m.as_slice().iter().map(|x| (!x.is_nan()).then_some(*x)).collect(),
            })
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, T: Scalar, D: Deserializer<'de>>(d: D) -> Result<Vec<Matrix<T>>, D::Error> {
        let reprs: Vec<Repr<T>> = Vec::deserialize(d)?;
        reprs
            .into_iter()
            .map(|r| {
                if r.data.len() != r.rows * r.cols {
                    return Err(serde::de::Error::custom("matrix data length does not match its shape"));
                }
                Ok(Matrix::from_vec(r.rows, r.cols, r.data.into_iter().map(|x| x.unwrap_or(T::nan())).collect()))
            })
            .collect()
    }
}

/// Whether mode `b` may enter the equation of mode `a`.
pub fn allowed(labels: &[Symmetry], a: usize, b: usize) -> bool {
    labels[a] == labels[b]
}

/// Companion matrix of `Y_n = Σ Φ_k Y_{n-k}`.
pub fn companion_matrix<T: Scalar>(phis: &[Matrix<T>]) -> Matrix<T> {
    let p = phis.len();
    let d = phis.first().map_or(0, |m| m.rows());
    let mut c = Matrix::zeros(d * p, d * p);
    for (k, phi) in phis.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                c[(i, k * d + j)] = phi[(i, j)];
            }
        }
    }
    for i in d..d * p {
        c[(i, i - d)] = T::one();
    }
    c
}

pub fn companion_spectral_radius<T: Scalar>(phis: &[Matrix<T>]) -> T {
    if phis.is_empty() {
        return T::zero();
    }
    general_eigen(&companion_matrix(phis)).spectral_radius()
}

fn regressor_index(labels: &[Symmetry], a: usize, p: usize) -> Vec<(usize, usize)> {
    let mut idx = Vec::new();
    for k in 0..p {
        for b in 0..DIM {
            if allowed(labels, a, b) {
                idx.push((k, b));
            }
        }
    }
    idx
}

fn rows<T: Scalar>(segments: &[&[Vec8<T>]], p: usize) -> usize {
    segments.iter().map(|s| s.len().saturating_sub(p)).sum()
}

/// Full cross-product sums over all `8p` regressors and 8 targets, one
/// segment per task, reduced in segment order.
struct Moments<T> {
    xx: Matrix<T>,
    xy: Matrix<T>,
}

fn moments<T: Scalar>(segments: &[&[Vec8<T>]], p: usize) -> Moments<T> {
    let m = DIM * p;
    let parts: Vec<Moments<T>> = segments
        .par_iter()
        .map(|seg| {
            let mut xx = Matrix::zeros(m, m);
            let mut xy = Matrix::zeros(m, DIM);
            let mut x = vec![T::zero(); m];
            for n in p..seg.len() {
                for k in 0..p {
                    x[k * DIM..(k + 1) * DIM].copy_from_slice(&seg[n - 1 - k]);
                }
                for i in 0..m {
                    for j in i..m {
                        xx[(i, j)] += x[i] * x[j];
                    }
                    for a in 0..DIM {
                        xy[(i, a)] += x[i] * seg[n][a];
                    }
                }
            }
            Moments { xx, xy }
        })
        .collect();
    let mut total = Moments {
        xx: Matrix::zeros(m, m),
        xy: Matrix::zeros(m, DIM),
    };
    for part in parts {
        total.xx = total.xx.add(&part.xx);
        total.xy = total.xy.add(&part.xy);
    }
    for i in 0..m {
        for j in 0..i {
            total.xx[(i, j)] = total.xx[(j, i)];
        }
    }
    total
}

/// Ordinary least squares, one equation per mode, without intercept.
pub fn fit_var<T: Scalar>(
    segments: &[&[Vec8<T>]],
    p: usize,
    labels: &[Symmetry],
    opts: VarOptions,
) -> Result<VarModel<T>, VarError> {
    if p == 0 {
        return Err(VarError::ZeroLag);
    }
    if labels.len() != DIM {
        return Err(VarError::BadLabels(labels.len()));
    }
    let n = rows(segments, p);
    let needed = DIM * p + 50;
    if n <= needed {
        return Err(VarError::InsufficientData { needed, got: n });
    }
    let mom = moments(segments, p);
    let nf = T::from_usize_lossy(n);

    struct Equation<T> {
        idx: Vec<(usize, usize)>,
        coef: Vec<T>,
        inv: Matrix<T>,
    }
    let equations: Vec<Equation<T>> = (0..DIM)
        .into_par_iter()
        .map(|a| {
            let idx = regressor_index(labels, a, p);
            let flat: Vec<usize> = idx.iter().map(|&(k, b)| k * DIM + b).collect();
            let g = Matrix::from_fn(flat.len(), flat.len(), |i, j| mom.xx[(flat[i], flat[j])]);
            let rhs: Vec<T> = flat.iter().map(|&i| mom.xy[(i, a)]).collect();
            let l = g.cholesky().ok_or(VarError::RankDeficient { equation: a })?;
            // a pivot far below the diagonal scale means a collinear regressor
            let dmax = (0..flat.len()).fold(T::zero(), |m, i| m.max(g[(i, i)]));
            let pmin = (0..flat.len()).fold(T::infinity(), |m, i| m.min(l[(i, i)] * l[(i, i)]));
            if !(pmin > T::lit(1e-12) * dmax) {
                return Err(VarError::RankDeficient { equation: a });
            }
            let coef = crate::linalg::cholesky_solve(&l, &rhs);
            Ok(Equation {
                idx,
                coef,
                inv: cholesky_inverse(&l),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut phis = vec![Matrix::zeros(DIM, DIM); p];
    for (a, eq) in equations.iter().enumerate() {
        for (&(k, b), &c) in eq.idx.iter().zip(&eq.coef) {
            phis[k][(a, b)] = c;
        }
    }

    // residual pass: covariance, and the HC0 meat when requested
    let m = DIM * p;
    struct ResidualSums<T> {
        sigma: Matrix<T>,
        meat: Vec<Matrix<T>>,
    }
    let robust = opts.robust;
    let parts: Vec<ResidualSums<T>> = segments
        .par_iter()
        .map(|seg| {
            let mut sigma = Matrix::zeros(DIM, DIM);
            let mut meat = if robust { vec![Matrix::zeros(m, m); DIM] } else { Vec::new() };
            let mut x = vec![T::zero(); m];
            for n in p..seg.len() {
                let e = residual(&phis, seg, n);
                for i in 0..DIM {
                    for j in 0..DIM {
                        sigma[(i, j)] += e[i] * e[j];
                    }
                }
                if robust {
                    for k in 0..p {
                        x[k * DIM..(k + 1) * DIM].copy_from_slice(&seg[n - 1 - k]);
                    }
                    for a in 0..DIM {
                        let w = e[a] * e[a];
                        for i in 0..m {
                            for j in 0..m {
                                meat[a][(i, j)] += w * x[i] * x[j];
                            }
                        }
                    }
                }
            }
            ResidualSums { sigma, meat }
        })
        .collect();
    let mut sse = Matrix::zeros(DIM, DIM);
    let mut meat = if robust { vec![Matrix::zeros(m, m); DIM] } else { Vec::new() };
    for part in parts {
        sse = sse.add(&part.sigma);
        for (acc, x) in meat.iter_mut().zip(&part.meat) {
            *acc = acc.add(x);
        }
    }

    let mut std_errors = vec![Matrix::from_fn(DIM, DIM, |_, _| T::nan()); p];
    let mut p_values = vec![Matrix::from_fn(DIM, DIM, |_, _| f64::NAN); p];
    for (a, eq) in equations.iter().enumerate() {
        let kreg = eq.idx.len();
        let df = n - kreg;
        let s2 = sse[(a, a)] / T::from_usize_lossy(df);
        let flat: Vec<usize> = eq.idx.iter().map(|&(k, b)| k * DIM + b).collect();
        let cov = if robust {
            let mm = Matrix::from_fn(kreg, kreg, |i, j| meat[a][(flat[i], flat[j])]);
            eq.inv.matmul(&mm).matmul(&eq.inv)
        } else {
            eq.inv.scale(s2)
        };
        for (r, &(k, b)) in eq.idx.iter().enumerate() {
            let se = cov[(r, r)].max(T::zero()).sqrt();
            std_errors[k][(a, b)] = se;
            let t = (eq.coef[r] / se).to_f64_lossy();
            p_values[k][(a, b)] = t_two_sided_p(t, df as f64);
        }
    }
    let radius = companion_spectral_radius(&phis);
    Ok(VarModel {
        p,
        phis,
        std_errors,
        p_values,
        sigma_eps: sse.scale(T::one() / nf),
        labels: labels.to_vec(),
        n_obs: n,
        robust,
        spectral_radius: radius,
        unstable: !(radius < T::one()),
    })
}

fn residual<T: Scalar>(phis: &[Matrix<T>], seg: &[Vec8<T>], n: usize) -> Vec8<T> {
    let pred = forecast(phis, &seg[..n]);
    std::array::from_fn(|i| seg[n][i] - pred[i])
}

/// `Σ_k Φ_k Y_{n-k}`, with `history` ending at `Y_{n-1}`.
fn forecast<T: Scalar>(phis: &[Matrix<T>], history: &[Vec8<T>]) -> Vec8<T> {
    let mut y = [T::zero(); DIM];
    let len = history.len();
    for (k, phi) in phis.iter().enumerate() {
        let past = &history[len - 1 - k];
        for i in 0..DIM {
            for j in 0..DIM {
                y[i] += phi[(i, j)] * past[j];
            }
        }
    }
    y
}

/// One-step forecast from the most recent `p` vectors of `history`.
pub fn predict<T: Scalar>(model: &VarModel<T>, history: &[Vec8<T>]) -> Result<Vec8<T>, VarError> {
    if history.len() < model.p {
        return Err(VarError::ShortHistory {
            p: model.p,
            got: history.len(),
        });
    }
    Ok(forecast(&model.phis, history))
}

/// (actual, forecast) pairs for every row that has a full in-day history.
pub fn one_step_pairs<T: Scalar>(model: &VarModel<T>, segments: &[&[Vec8<T>]]) -> Vec<(Vec8<T>, Vec8<T>)> {
    let p = model.p;
    segments
        .iter()
        .flat_map(|seg| (p..seg.len()).map(move |n| (seg[n], forecast(&model.phis, &seg[..n]))))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreSpace {
    Mode,
    Original,
}

/// `1 - SSE/SST` per target; SST is taken around the sample's own mean.
pub fn r2_from_pairs<T: Scalar>(pairs: &[(Vec8<T>, Vec8<T>)]) -> Vec8<T> {
    let n = T::from_usize_lossy(pairs.len().max(1));
    let mut mean = [T::zero(); DIM];
    for (a, _) in pairs {
        for i in 0..DIM {
            mean[i] += a[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut sse = [T::zero(); DIM];
    let mut sst = [T::zero(); DIM];
    for (a, f) in pairs {
        for i in 0..DIM {
            sse[i] += (a[i] - f[i]) * (a[i] - f[i]);
            sst[i] += (a[i] - mean[i]) * (a[i] - mean[i]);
        }
    }
    std::array::from_fn(|i| T::one() - sse[i] / sst[i])
}

pub fn r2_scores<T: Scalar>(
    model: &VarModel<T>,
    segments: &[&[Vec8<T>]],
    basis: &ModeBasis<T>,
    space: ScoreSpace,
) -> Vec8<T> {
    let pairs = one_step_pairs(model, segments);
    match space {
        ScoreSpace::Mode => r2_from_pairs(&pairs),
        ScoreSpace::Original => {
            let mapped: Vec<_> = pairs
                .iter()
                .map(|(a, f)| (basis.reconstruct(a), basis.reconstruct(f)))
                .collect();
            r2_from_pairs(&mapped)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable<T> {
    pub p: usize,
    pub mode_in: Vec8<T>,
    pub mode_out: Option<Vec8<T>>,
    pub original_in: Vec8<T>,
    pub original_out: Option<Vec8<T>>,
}

pub fn score_table<T: Scalar>(
    model: &VarModel<T>,
    train: &[&[Vec8<T>]],
    test: &[&[Vec8<T>]],
    basis: &ModeBasis<T>,
) -> ScoreTable<T> {
    let has_test = rows(test, model.p) > 1;
    ScoreTable {
        p: model.p,
        mode_in: r2_scores(model, train, basis, ScoreSpace::Mode),
        mode_out: has_test.then(|| r2_scores(model, test, basis, ScoreSpace::Mode)),
        original_in: r2_scores(model, train, basis, ScoreSpace::Original),
        original_out: has_test.then(|| r2_scores(model, test, basis, ScoreSpace::Original)),
    }
}

/// Display copy with entries whose p-value exceeds `threshold` set to zero.
pub fn significance_filter<T: Scalar>(phi: &Matrix<T>, p_values: &Matrix<f64>, threshold: f64) -> Matrix<T> {
    Matrix::from_fn(phi.rows(), phi.cols(), |i, j| {
        let pv = p_values[(i, j)];
        if pv.is_nan() || pv > threshold {
            T::zero()
        } else {
            phi[(i, j)]
        }
    })
}

/// Lag-1 dynamics expressed on `T'` components: `U D Φ₁ D⁻¹ Uᵀ`, from
/// `T' = U D Y + m`. Only an approximation of a transition matrix on the raw
/// flows, since Box-Cox sits in between.
pub fn rotate_to_variable_space<T: Scalar>(phi1: &Matrix<T>, basis: &ModeBasis<T>) -> Matrix<T> {
    let u = basis.u_matrix();
    let ud = Matrix::from_fn(DIM, DIM, |i, a| u[(i, a)] * basis.proj_scale[a]);
    let dinv_ut = Matrix::from_fn(DIM, DIM, |a, j| u[(j, a)] / basis.proj_scale[a]);
    ud.matmul(phi1).matmul(&dinv_ut)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualDiagnostics {
    /// `acf[α][ℓ]` for ℓ = 0..=max_lag.
    pub acf: Vec<Vec<f64>>,
    pub ljung_box_q: Vec<f64>,
    pub ljung_box_p: Vec<f64>,
    pub n: usize,
    /// Residual norm per row, for spotting anomalous stretches.
    pub norms: Vec<f64>,
}

/// Residual autocorrelation pooled across segments: one global mean, and
/// lag products only within a segment.
pub fn residual_diagnostics<T: Scalar>(model: &VarModel<T>, segments: &[&[Vec8<T>]], max_lag: usize) -> ResidualDiagnostics {
    let p = model.p;
    let res: Vec<Vec<Vec8<f64>>> = segments
        .iter()
        .map(|seg| {
            (p..seg.len())
                .map(|n| residual(&model.phis, seg, n).map(|x| x.to_f64_lossy()))
                .collect()
        })
        .collect();
    let n: usize = res.iter().map(Vec::len).sum();
    let mut acf = vec![vec![0.0; max_lag + 1]; DIM];
    let mut q = vec![f64::NAN; DIM];
    let mut pv = vec![f64::NAN; DIM];
    for a in 0..DIM {
        let mean = res.iter().flatten().map(|e| e[a]).sum::<f64>() / n.max(1) as f64;
        let c0: f64 = res.iter().flatten().map(|e| (e[a] - mean).powi(2)).sum();
        if c0 <= 0.0 {
            continue;
        }
        for lag in 0..=max_lag {
            let mut c = 0.0;
            for seg in &res {
                for t in lag..seg.len() {
                    c += (seg[t][a] - mean) * (seg[t - lag][a] - mean);
                }
            }
            acf[a][lag] = c / c0;
        }
        let (qq, pp) = ljung_box(&acf[a], n, max_lag);
        q[a] = qq;
        pv[a] = pp;
    }
    let norms = res
        .iter()
        .flatten()
        .map(|e| e.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    ResidualDiagnostics {
        acf,
        ljung_box_q: q,
        ljung_box_p: pv,
        n,
        norms,
    }
}
