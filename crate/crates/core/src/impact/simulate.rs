//! Metaorder do-operation on a fitted VAR.
//!
//! The perturbation is carried as a difference against an observed
//! background path. At each step the model propagates the mode-space
//! difference, the result is mapped back to original flows through the
//! inverse normalisation and Box-Cox, the same-side execution increment
//! predicted by the model is dropped, the metaorder volume is added, and the
//! return difference is read off the instantaneous impact map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ImpactCurve, ImpactError, ImpactScaling};
use crate::flow::{swap, Vec8, DIM, EX_A, EX_B, RET};
use crate::pca_modes::ModeBasis;
use crate::preprocess::PreprocessSidecar;
use crate::scalar::Scalar;
use crate::var_model::VarModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaorderSide {
    /// Market orders at the ask.
    #[default]
    Buy,
    /// Market orders at the bid.
    Sell,
}

/// Return change as a function of the window execution imbalance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactMap<T> {
    Sigmoid { scaling: ImpactScaling<T>, n: usize },
    Linear { slope: T },
}

impl<T: Scalar> ImpactMap<T> {
    fn delta(&self, before: T, after: T) -> T {
        if before == after {
            return T::zero();
        }
        match self {
            ImpactMap::Sigmoid { scaling, n } => scaling.response(*n, after) - scaling.response(*n, before),
            ImpactMap::Linear { slope } => *slope * (after - before),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    /// Volume added per step, in the units of the binned flows.
    pub q: f64,
    pub k: usize,
    pub horizon: usize,
    pub side: MetaorderSide,
    /// Spacing between start points inside a segment.
    pub stride: usize,
    pub min_paths: usize,
    pub max_paths: Option<usize>,
    /// Drop the model-induced same-side execution increment.
    pub suppress_same_side: bool,
    /// Drop the induced execution increments on both sides.
    pub full_suppression: bool,
    /// Average each start with its bid-ask mirrored background.
    pub mirror_background: bool,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            q: 1.0,
            k: 4,
            horizon: 40,
            side: MetaorderSide::Buy,
            stride: 41,
            min_paths: 100,
            max_paths: None,
            suppress_same_side: true,
            full_suppression: false,
            mirror_background: false,
        }
    }
}

/// Observed binned flows of one day, in original (deseasonalised) units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background<T> {
    pub day: u32,
    pub vectors: Vec<Vec8<T>>,
}

struct Setup<'a, T> {
    model: &'a VarModel<T>,
    basis: &'a ModeBasis<T>,
    sidecar: &'a PreprocessSidecar<T>,
    map: &'a ImpactMap<T>,
    opts: &'a SimulationOptions,
}

fn sub<T: Scalar>(a: &Vec8<T>, b: &Vec8<T>) -> Vec8<T> {
    std::array::from_fn(|j| a[j] - b[j])
}

impl<T: Scalar> Setup<'_, T> {
    fn path(&self, segment: usize, day: u32, xs: &[Vec8<T>]) -> Result<Vec<T>, ImpactError> {
        let o = self.opts;
        let (same, other) = match o.side {
            MetaorderSide::Buy => (EX_A, EX_B),
            MetaorderSide::Sell => (EX_B, EX_A),
        };
        let q = T::lit(o.q);
        let fwd = |x: &Vec8<T>| self.sidecar.forward(day, x).ok_or(ImpactError::MissingDay(day));
        let bwd = |t: &Vec8<T>| self.sidecar.backward(day, t).ok_or(ImpactError::MissingDay(day));
        let mut dys: Vec<Vec8<T>> = Vec::with_capacity(o.horizon + 1);
        let mut path = Vec::with_capacity(o.horizon + 1);
        let mut cum = T::zero();
        for (step, x_obs) in xs.iter().enumerate().take(o.horizon + 1) {
            let t_obs = fwd(x_obs)?;
            let mut m = [T::zero(); DIM];
            for (lag, phi) in self.model.phis.iter().enumerate().take(step) {
                let d = &dys[step - 1 - lag];
                for (i, mi) in m.iter_mut().enumerate() {
                    for (j, dj) in d.iter().enumerate() {
                        *mi += phi[(i, j)] * *dj;
                    }
                }
            }
            let mut x = *x_obs;
            if m.iter().any(|v| *v != T::zero()) {
                let shift = self.basis.to_flow_direction(&m);
                let t_imp: Vec8<T> = std::array::from_fn(|j| t_obs[j] + shift[j]);
                let change = sub(&bwd(&t_imp)?, &bwd(&t_obs)?);
                for j in 0..DIM {
                    x[j] = x_obs[j] + change[j];
                }
            }
            if o.suppress_same_side || o.full_suppression {
                x[same] = x_obs[same];
            }
            if o.full_suppression {
                x[other] = x_obs[other];
            }
            if step < o.k {
                x[same] += q;
            }
            let dr = self.map.delta(x_obs[EX_A] - x_obs[EX_B], x[EX_A] - x[EX_B]);
            x[RET] = x_obs[RET] + dr;
            let t_per = fwd(&x)?;
            if t_per.iter().any(|v| !v.is_finite()) {
                return Err(ImpactError::OutOfDomain { segment, step });
            }
            dys.push(self.basis.to_mode_direction(&sub(&t_per, &t_obs)));
            cum += dr;
            path.push(cum);
        }
        Ok(path)
    }
}

/// Mean cumulative return difference of a metaorder against the observed
/// background, over start points spaced by `stride` in every segment.
pub fn simulate_metaorder<T: Scalar>(
    model: &VarModel<T>,
    basis: &ModeBasis<T>,
    sidecar: &PreprocessSidecar<T>,
    map: &ImpactMap<T>,
    background: &[Background<T>],
    opts: &SimulationOptions,
) -> Result<ImpactCurve<T>, ImpactError> {
    if opts.horizon <= opts.k {
        return Err(ImpactError::ShortHorizon {
            horizon: opts.horizon,
            k: opts.k,
        });
    }
    let h = opts.horizon;
    let p = model.p;
    let stride = opts.stride.max(1);
    let mut starts: Vec<(usize, usize)> = Vec::new();
    for (seg, b) in background.iter().enumerate() {
        let mut s = p;
        while s + h < b.vectors.len() {
            starts.push((seg, s));
            s += stride;
        }
    }
    if let Some(cap) = opts.max_paths {
        starts.truncate(cap);
    }
    if starts.len() < opts.min_paths.max(1) {
        return Err(ImpactError::ShortBackground {
            needed: h + p + 1,
            min_starts: opts.min_paths,
            got: starts.len(),
        });
    }
    let setup = Setup {
        model,
        basis,
        sidecar,
        map,
        opts,
    };
    let half = T::lit(0.5);
    let samples: Vec<Vec<T>> = starts
        .par_iter()
        .map(|&(seg, s)| {
            let b = &background[seg];
            let xs = &b.vectors[s..=s + h];
            let direct = setup.path(seg, b.day, xs)?;
            if !opts.mirror_background {
                return Ok(direct);
            }
            let mirrored: Vec<Vec8<T>> = xs.iter().map(|x| swap(x)).collect();
            let other = setup.path(seg, b.day, &mirrored)?;
            Ok(direct.iter().zip(&other).map(|(a, b)| (*a + *b) * half).collect())
        })
        .collect::<Result<_, ImpactError>>()?;

    let n = T::from_usize_lossy(samples.len());
    let mut mean = vec![T::zero(); h + 1];
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += *v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); h + 1];
    for s in &samples {
        for ((acc, v), m) in var.iter_mut().zip(s).zip(&mean) {
            *acc += (*v - *m) * (*v - *m);
        }
    }
    let denom = T::from_usize_lossy(samples.len().saturating_sub(1).max(1));
    let stderr = var.iter().map(|v| (*v / denom / n).sqrt()).collect();
    Ok(ImpactCurve {
        q: T::lit(opts.q),
        k: opts.k,
        horizon: h,
        mean,
        stderr,
        paths: samples.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Symmetry;
    use crate::linalg::Matrix;
    use crate::pca_modes::symmetrize_from_covariance;
    use crate::preprocess::{BoxCoxParams, DayNorm, NormalizationScheme, NormalizationState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, LogNormal};

    fn fixture(box_cox: bool) -> (VarModel<f64>, ModeBasis<f64>, PreprocessSidecar<f64>, Vec<Background<f64>>) {
        let cov = Matrix::from_fn(8, 8, |i, j| if i == j { 1.0 } else { 0.0 });
        let mut cov = cov;
        cov[(1, 2)] = 0.4;
        cov[(2, 1)] = 0.4;
        cov[(5, 6)] = 0.3;
        cov[(6, 5)] = 0.3;
        cov[(6, 7)] = 0.2;
        cov[(7, 6)] = 0.2;
        cov[(5, 7)] = -0.2;
        cov[(7, 5)] = -0.2;
        let basis = symmetrize_from_covariance(&cov).unwrap();
        let labels = basis.labels.clone();
        let phi = Matrix::from_fn(8, 8, |i, j| {
            if labels[i] != labels[j] {
                0.0
            } else if i == j {
                0.4
            } else {
                0.05 * ((i + 2 * j) % 5) as f64 - 0.1
            }
        });
        let model = VarModel {
            p: 1,
            phis: vec![phi],
            std_errors: vec![],
            p_values: vec![],
            sigma_eps: Matrix::identity(8),
            labels,
            n_obs: 0,
            robust: false,
            spectral_radius: 0.5,
            unstable: false,
        };
        let bc = if box_cox {
            BoxCoxParams { lambda_v: 0.2, lambda_t: 0.1, a: 1.0, offset: 1.0 }
        } else {
            BoxCoxParams::identity()
        };
        let sidecar = PreprocessSidecar {
            bin: 20,
            box_cox: bc,
            profile: None,
            profile_bins: vec![],
            normalization: NormalizationState {
                scheme: NormalizationScheme::PerDay,
                days: vec![DayNorm {
                    day: 0,
                    mean: [1.0, 2.0, 2.0, 1.5, 1.5, 1.0, 1.0, 0.0],
                    scale: [0.5, 1.0, 1.0, 0.8, 0.8, 0.7, 0.7, 3.0],
                }],
            },
        };
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let ln = LogNormal::new(3.0, 0.5).unwrap();
        let vectors: Vec<Vec8<f64>> = (0..5000)
            .map(|_| {
                let mut v: Vec8<f64> = std::array::from_fn(|_| ln.sample(&mut rng));
                v[RET] = (v[EX_A] - v[EX_B]) / 10.0;
                v
            })
            .collect();
        (model, basis, sidecar, vec![Background { day: 0, vectors }])
    }

    fn linear_map() -> ImpactMap<f64> {
        ImpactMap::Linear { slope: 0.05 }
    }

    #[test]
    fn zero_volume_gives_zero_path() {
        let (m, b, s, bg) = fixture(true);
        let opts = SimulationOptions { q: 0.0, ..Default::default() };
        let c = simulate_metaorder(&m, &b, &s, &linear_map(), &bg, &opts).unwrap();
        assert!(c.mean.iter().all(|v| *v == 0.0));
        assert!(c.paths >= 90);
    }

    #[test]
    fn identity_transform_is_linear_in_volume() {
        let (m, b, s, bg) = fixture(false);
        let run = |q| {
            let opts = SimulationOptions { q, ..Default::default() };
            simulate_metaorder(&m, &b, &s, &linear_map(), &bg, &opts).unwrap()
        };
        let (c1, c3) = (run(1.0), run(3.0));
        for (a, b) in c1.mean.iter().zip(&c3.mean) {
            assert!((3.0 * a - b).abs() <= 1e-9 * b.abs().max(1e-12), "{a} {b}");
        }
    }

    #[test]
    fn sell_mirrors_buy_on_symmetric_setup() {
        let (m, b, mut s, bg) = fixture(true);
        s.normalization = s.normalization.symmetrized();
        assert!(b.labels.iter().all(|l| *l != Symmetry::Mixed));
        let mk = |side| SimulationOptions { side, mirror_background: true, q: 2.0, ..Default::default() };
        let buy = simulate_metaorder(&m, &b, &s, &linear_map(), &bg, &mk(MetaorderSide::Buy)).unwrap();
        let sell = simulate_metaorder(&m, &b, &s, &linear_map(), &bg, &mk(MetaorderSide::Sell)).unwrap();
        assert!(buy.mean[0] > 0.0);
        for (a, b) in buy.mean.iter().zip(&sell.mean) {
            assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn short_background_is_rejected() {
        let (m, b, s, mut bg) = fixture(true);
        bg[0].vectors.truncate(500);
        let r = simulate_metaorder(&m, &b, &s, &linear_map(), &bg, &SimulationOptions::default());
        assert!(matches!(r, Err(ImpactError::ShortBackground { .. })));
    }
}
