//! Eigen-analysis of Φ₁ and the marginal-stability roots of
//! `M_p(γ) = Σ_k γ^{-k} Φ_k`.
//!
//! A real γ is a root when `M_p(γ)` has a unit eigenvalue. Roots are located
//! on a grid by changes in the number of real eigenvalues of `M_p(γ)` above
//! one, refined by bisection, and validated by the residual `‖M Z - Z‖`.
//! Real positive eigenvalues of the companion matrix are exactly the roots,
//! so they serve both as a cross-check and to recover roots where no
//! eigenvalue crosses one (tangencies, or pairs inside one grid cell).

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{canonical_sign, Symmetry, Vec8, DIM};
use crate::linalg::{general_eigen, norm, Matrix};
use crate::pca_modes::ModeBasis;
use crate::scalar::Scalar;
use crate::var_model::{companion_matrix, VarModel};

#[derive(Debug, Error, PartialEq)]
pub enum StabilityError {
    #[error("no unit-eigenvalue root in ({lo}, {hi}]")]
    NoRootInInterval { lo: f64, hi: f64 },
    #[error("need γ for at least 3 lag orders, got {0}")]
    InsufficientPoints(usize),
    #[error("model has no lag matrices")]
    EmptyModel,
}

/// Residual bound every reported root satisfies.
pub const RESIDUAL_TOL: f64 = 1e-8;
/// Eigenvalues of `M_p(γ)` within this of one count towards the multiplicity.
pub const MULTIPLICITY_TOL: f64 = 1e-9;
pub const COMPANION_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub lo: f64,
    pub hi: f64,
    pub grid: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.5,
            grid: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phi1Spectrum<T> {
    pub values: Vec<Complex<T>>,
    /// Unit eigenvector for real eigenvalues, `None` for complex ones.
    pub vectors: Vec<Option<Vec<T>>>,
    pub labels: Vec<Symmetry>,
}

/// Symmetric (anti-symmetric) when the mode-space vector has no weight on
/// modes of the other label.
pub fn block_label<T: Scalar>(v: &[T], labels: &[Symmetry]) -> Symmetry {
    let tol = T::lit(1e-10) * norm(v).max(T::min_positive_value());
    let weight = |s: Symmetry| {
        v.iter()
            .zip(labels)
            .filter(|(_, &l)| l == s)
            .fold(T::zero(), |m, (&x, _)| m.max(x.abs()))
    };
    let ws = weight(Symmetry::Symmetric);
    let wa = weight(Symmetry::AntiSymmetric);
    let wm = weight(Symmetry::Mixed);
    if wm > tol {
        Symmetry::Mixed
    } else if wa <= tol && ws > tol {
        Symmetry::Symmetric
    } else if ws <= tol && wa > tol {
        Symmetry::AntiSymmetric
    } else {
        Symmetry::Mixed
    }
}

/// Eigenvalues of Φ₁, sorted by decreasing real part, with block labels.
pub fn eigen_analysis_phi1<T: Scalar>(model: &VarModel<T>) -> Result<Phi1Spectrum<T>, StabilityError> {
    let phi = model.phis.first().ok_or(StabilityError::EmptyModel)?;
    let eig = general_eigen(phi);
    let n = eig.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.values[b]
            .re
            .partial_cmp(&eig.values[a].re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(eig.values[b].im.partial_cmp(&eig.values[a].im).unwrap_or(std::cmp::Ordering::Equal))
    });
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for k in order {
        values.push(eig.values[k]);
        if eig.values[k].im == T::zero() {
            let mut v = eig.real_vector(k);
            canonical_sign(&mut v);
            labels.push(block_label(&v, &model.labels));
            vectors.push(Some(v));
        } else {
            // a complex pair spans one block as well; label by both columns
            let pair = if eig.values[k].im > T::zero() { k + 1 } else { k - 1 };
            let (lo, hi) = (k.min(pair), k.max(pair));
            let mut w = eig.vectors.column(lo);
            for (x, y) in w.iter_mut().zip(eig.vectors.column(hi)) {
                *x = x.abs() + y.abs();
            }
            labels.push(block_label(&w, &model.labels));
            vectors.push(None);
        }
    }
    Ok(Phi1Spectrum { values, vectors, labels })
}

/// `Σ_k γ^{-k} Φ_k`.
pub fn m_matrix<T: Scalar>(phis: &[Matrix<T>], gamma: T) -> Matrix<T> {
    let d = phis[0].rows();
    let mut m = Matrix::zeros(d, d);
    let mut w = T::one();
    for phi in phis {
        w = w / gamma;
        m = m.add(&phi.scale(w));
    }
    m
}

fn count_above_one<T: Scalar>(phis: &[Matrix<T>], gamma: T) -> usize {
    general_eigen(&m_matrix(phis, gamma))
        .values
        .iter()
        .filter(|z| z.im == T::zero() && z.re > T::one())
        .count()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RootSource {
    /// Found by the grid scan and bisection.
    Bisection,
    /// Only seen as a real companion eigenvalue.
    Companion,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRoot<T> {
    pub gamma: T,
    pub multiplicity: usize,
    /// Unit eigenvectors of `M_p(γ)` for eigenvalues within tolerance of one.
    pub directions: Vec<Vec<T>>,
    /// Largest `‖M_p(γ) Z - Z‖` over the directions.
    pub residual: T,
    /// Distance to the nearest real companion eigenvalue.
    pub companion_gap: T,
    pub source: RootSource,
}

/// Unit-eigenvalue directions of `M_p(γ)`; `None` when no eigenvalue meets
/// the residual bound.
fn unit_directions<T: Scalar>(phis: &[Matrix<T>], gamma: T) -> Option<(Vec<Vec<T>>, T)> {
    let m = m_matrix(phis, gamma);
    let eig = general_eigen(&m);
    let real: Vec<usize> = eig.real_indices(T::zero());
    let best = real
        .iter()
        .copied()
        .min_by(|&a, &b| {
            (eig.values[a].re - T::one())
                .abs()
                .partial_cmp(&(eig.values[b].re - T::one()).abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
    let closest = eig.values[best].re;
    let mut dirs = Vec::new();
    let mut worst = T::zero();
    for &k in &real {
        let v = eig.values[k].re;
        if (v - closest).abs() > T::lit(MULTIPLICITY_TOL) {
            continue;
        }
        let mut z = eig.real_vector(k);
        canonical_sign(&mut z);
        let mz = m.matvec(&z);
        let r = norm(&mz.iter().zip(&z).map(|(a, b)| *a - *b).collect::<Vec<_>>());
        worst = worst.max(r);
        dirs.push(z);
    }
    if worst <= T::lit(RESIDUAL_TOL) && !dirs.is_empty() {
        Some((dirs, worst))
    } else {
        None
    }
}

/// Bisection on the count of real eigenvalues above one, down to the
/// resolution of the scalar type.
fn bisect<T: Scalar>(phis: &[Matrix<T>], mut a: T, mut b: T, mut na: usize) -> T {
    let two = T::lit(2.0);
    loop {
        let m = (a + b) / two;
        if !(m > a && m < b) {
            return m;
        }
        let nm = count_above_one(phis, m);
        if nm != na {
            b = m;
        } else {
            a = m;
            na = nm;
        }
    }
}

fn search_interval<T: Scalar>(phis: &[Matrix<T>], a: T, b: T, na: usize, nb: usize, depth: usize, out: &mut Vec<T>) {
    if na == nb || depth > 40 || !(b > a) {
        return;
    }
    let c = bisect(phis, a, b, na);
    out.push(c);
    // other crossings inside the same cell
    let delta = T::lit(1e-9) * T::one().max(c.abs());
    let (l, r) = (c - delta, c + delta);
    if l > a {
        let nl = count_above_one(phis, l);
        search_interval(phis, a, l, na, nl, depth + 1, out);
    }
    if r < b {
        let nr = count_above_one(phis, r);
        search_interval(phis, r, b, nr, nb, depth + 1, out);
    }
}

/// All real γ in `(lo, hi]` at which `M_p(γ)` has a unit eigenvalue, sorted
/// by decreasing γ.
pub fn find_unit_root_gamma<T: Scalar>(phis: &[Matrix<T>], opts: SearchOptions) -> Result<Vec<GammaRoot<T>>, StabilityError> {
    if phis.is_empty() {
        return Err(StabilityError::EmptyModel);
    }
    let lo = T::lit(opts.lo);
    let hi = T::lit(opts.hi);
    let g = opts.grid.max(2);
    let step = (hi - lo) / T::from_usize_lossy(g);
    let grid: Vec<T> = (1..=g).map(|i| lo + step * T::from_usize_lossy(i)).collect();
    let counts: Vec<usize> = grid.par_iter().map(|&x| count_above_one(phis, x)).collect();

    let mut candidates: Vec<T> = (0..g - 1)
        .into_par_iter()
        .map(|i| {
            let mut found = Vec::new();
            search_interval(phis, grid[i], grid[i + 1], counts[i], counts[i + 1], 0, &mut found);
            found
        })
        .flatten()
        .collect();
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));

    let companion = general_eigen(&companion_matrix(phis));
    let comp_real: Vec<T> = companion
        .values
        .iter()
        .filter(|z| z.im == T::zero())
        .map(|z| z.re)
        .collect();
    let gap = |x: T| comp_real.iter().fold(T::infinity(), |m, &c| m.min((c - x).abs()));

    let mut roots: Vec<GammaRoot<T>> = Vec::new();
    let same = |a: T, b: T| (a - b).abs() <= T::lit(1e-9) * T::one().max(a.abs());
    for c in candidates {
        if roots.iter().any(|r| same(r.gamma, c)) {
            continue;
        }
        // crossings of a complex pair onto the real axis fail the residual
        if let Some((dirs, res)) = unit_directions(phis, c) {
            roots.push(GammaRoot {
                gamma: c,
                multiplicity: dirs.len(),
                directions: dirs,
                residual: res,
                companion_gap: gap(c),
                source: RootSource::Bisection,
            });
        }
    }
    for &c in &comp_real {
        if !(c > lo && c <= hi) || roots.iter().any(|r| same(r.gamma, c)) {
            continue;
        }
        if let Some((dirs, res)) = unit_directions(phis, c) {
            roots.push(GammaRoot {
                gamma: c,
                multiplicity: dirs.len(),
                directions: dirs,
                residual: res,
                companion_gap: T::zero(),
                source: RootSource::Companion,
            });
        }
    }
    if roots.is_empty() {
        return Err(StabilityError::NoRootInInterval { lo: opts.lo, hi: opts.hi });
    }
    roots.sort_by(|a, b| b.gamma.abs().partial_cmp(&a.gamma.abs()).unwrap_or(std::cmp::Ordering::Equal));
    Ok(roots)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaFit<T> {
    /// Limit of γ(p) as p → ∞.
    pub intercept: T,
    /// γ(p) ≈ intercept - c/p.
    pub c: T,
    pub rms: T,
}

/// Least-squares line of γ against 1/p.
pub fn extrapolate_gamma<T: Scalar>(points: &[(usize, T)]) -> Result<GammaFit<T>, StabilityError> {
    if points.len() < 3 {
        return Err(StabilityError::InsufficientPoints(points.len()));
    }
    let n = T::from_usize_lossy(points.len());
    let xs: Vec<T> = points.iter().map(|&(p, _)| T::one() / T::from_usize_lossy(p)).collect();
    let mx = xs.iter().fold(T::zero(), |s, &x| s + x) / n;
    let my = points.iter().fold(T::zero(), |s, &(_, y)| s + y) / n;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (&x, &(_, y)) in xs.iter().zip(points) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let slope = if sxx > T::zero() { sxy / sxx } else { T::zero() };
    let intercept = my - slope * mx;
    let rms = (xs
        .iter()
        .zip(points)
        .fold(T::zero(), |s, (&x, &(_, y))| {
            let r = y - intercept - slope * x;
            s + r * r
        })
        / n)
        .sqrt();
    Ok(GammaFit {
        intercept,
        c: -slope,
        rms,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagEntry<T> {
    pub p: usize,
    pub roots: Vec<GammaRoot<T>>,
    pub companion_radius: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch<T> {
    /// γ per lag order (index p - 1), `None` where the branch has no root.
    pub gammas: Vec<Option<T>>,
    pub directions: Vec<Option<Vec<T>>>,
    /// Lag orders where the direction match disagreed with the |γ| ranking.
    pub ambiguous: Vec<usize>,
    pub fit: Option<GammaFit<T>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport<T> {
    pub spectrum: Option<Phi1Spectrum<T>>,
    pub per_lag: Vec<LagEntry<T>>,
    /// The two largest roots tracked across p.
    pub branches: Vec<Branch<T>>,
    pub labels: Vec<Symmetry>,
}

fn abs_cos<T: Scalar>(a: &[T], b: &[T]) -> T {
    let d = a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);
    (d / (norm(a) * norm(b))).abs()
}

/// Roots for each model (one per lag order, ascending), and the two leading
/// branches followed by direction continuity.
pub fn stability_report<T: Scalar>(models: &[VarModel<T>], opts: SearchOptions, n_branches: usize) -> StabilityReport<T> {
    let per_lag: Vec<LagEntry<T>> = models
        .par_iter()
        .map(|m| LagEntry {
            p: m.p,
            roots: find_unit_root_gamma(&m.phis, opts).unwrap_or_default(),
            companion_radius: m.spectral_radius,
        })
        .collect();
    let spectrum = models.iter().find(|m| m.p == 1).and_then(|m| eigen_analysis_phi1(m).ok());
    let labels = models.first().map(|m| m.labels.clone()).unwrap_or_default();

    let mut branches: Vec<Branch<T>> = (0..n_branches)
        .map(|_| Branch {
            gammas: Vec::new(),
            directions: Vec::new(),
            ambiguous: Vec::new(),
            fit: None,
        })
        .collect();
    for entry in &per_lag {
        let ranked: Vec<(T, Vec<T>)> = entry
            .roots
            .iter()
            .flat_map(|r| r.directions.iter().map(move |z| (r.gamma, z.clone())))
            .collect();
        let mut taken = vec![false; ranked.len()];
        for branch in branches.iter_mut() {
            let choice = (0..ranked.len()).find(|&i| !taken[i]);
            // keep the |γ| ranking; direction continuity only flags crossings
            if let (Some(z0), Some(_)) = (branch.directions.iter().rev().find_map(|d| d.clone()), choice) {
                let best = (0..ranked.len()).filter(|&i| !taken[i]).max_by(|&i, &j| {
                    abs_cos(&ranked[i].1, &z0)
                        .partial_cmp(&abs_cos(&ranked[j].1, &z0))
                        .unwrap_or(std::cmp::Ordering::Equal)
                });
                if best != choice {
                    branch.ambiguous.push(entry.p);
                }
            }
            match choice {
                Some(i) => {
                    taken[i] = true;
                    branch.gammas.push(Some(ranked[i].0));
                    branch.directions.push(Some(ranked[i].1.clone()));
                }
                None => {
                    branch.gammas.push(None);
                    branch.directions.push(None);
                }
            }
        }
    }
    for branch in &mut branches {
        let pts: Vec<(usize, T)> = per_lag
            .iter()
            .zip(&branch.gammas)
            .filter_map(|(e, g)| g.map(|g| (e.p, g)))
            .collect();
        branch.fit = extrapolate_gamma(&pts).ok();
    }
    StabilityReport {
        spectrum,
        per_lag,
        branches,
        labels,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Direction<T> {
    pub p: usize,
    pub gamma: T,
    /// Flow-space direction, unit norm, largest component positive.
    pub flow: Vec8<T>,
    pub label: Symmetry,
}

/// Root directions mapped to flow space through the mode basis.
pub fn dominant_directions<T: Scalar>(report: &StabilityReport<T>, basis: &ModeBasis<T>) -> Vec<Direction<T>> {
    let mut out = Vec::new();
    for entry in &report.per_lag {
        for root in &entry.roots {
            for z in &root.directions {
                let mut x = basis.to_flow_direction(z);
                let n = norm(&x);
                if n > T::zero() {
                    x.iter_mut().for_each(|v| *v /= n);
                }
                canonical_sign(&mut x);
                out.push(Direction {
                    p: entry.p,
                    gamma: root.gamma,
                    flow: x,
                    label: block_label(z, &basis.labels),
                });
            }
        }
    }
    debug_assert!(out.iter().all(|d| d.flow.len() == DIM));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(c: &[f64]) -> Vec<Matrix<f64>> {
        c.iter().map(|&x| Matrix::from_rows(&[[x]])).collect()
    }

    #[test]
    fn p1_roots_are_positive_spectrum() {
        let phi = Matrix::<f64>::from_rows(&[[0.6, 0.2, 0.0], [0.1, 0.3, 0.0], [0.0, 0.0, -0.4]]);
        let roots = find_unit_root_gamma(&[phi.clone()], SearchOptions::default()).unwrap();
        let mut expect: Vec<f64> = general_eigen(&phi)
            .values
            .iter()
            .filter(|z| z.im == 0.0 && z.re > 0.0)
            .map(|z| z.re)
            .collect();
        expect.sort_by(|a, b| b.partial_cmp(a).unwrap());
        assert_eq!(roots.len(), expect.len());
        for (r, e) in roots.iter().zip(&expect) {
            assert!((r.gamma - e).abs() < 1e-10);
            assert!(r.residual <= RESIDUAL_TOL);
            assert!(r.companion_gap < COMPANION_TOL);
        }
    }

    #[test]
    fn scalar_quadratic() {
        let roots = find_unit_root_gamma(&scalar(&[0.5, 0.25]), SearchOptions::default()).unwrap();
        assert_eq!(roots.len(), 1);
        assert!((roots[0].gamma - (0.5 + 1.25f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_roots_report_multiplicity() {
        let roots = find_unit_root_gamma(&[Matrix::<f64>::identity(8).scale(0.5)], SearchOptions::default()).unwrap();
        assert_eq!(roots.len(), 1);
        assert_eq!(roots[0].multiplicity, 8);
        assert!((roots[0].gamma - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_roots() {
        let r = find_unit_root_gamma(&scalar(&[-0.5]), SearchOptions::default());
        assert!(matches!(r, Err(StabilityError::NoRootInInterval { .. })));
    }

    #[test]
    fn scalar_kernel_eigenvalue_decreases() {
        let phis = scalar(&[0.3, 0.2, 0.1]);
        let mut last = f64::INFINITY;
        for i in 1..=150 {
            let g = i as f64 * 0.01;
            let v = m_matrix(&phis, g)[(0, 0)];
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn extrapolation_exact_lines() {
        let pts: Vec<(usize, f64)> = (1..=10).map(|p| (p, 1.0 - 0.8 / p as f64)).collect();
        let f = extrapolate_gamma(&pts).unwrap();
        assert!((f.intercept - 1.0).abs() < 1e-12 && (f.c - 0.8).abs() < 1e-12);
        let flat: Vec<(usize, f64)> = (1..=5).map(|p| (p, 0.6)).collect();
        let f = extrapolate_gamma(&flat).unwrap();
        assert!((f.intercept - 0.6).abs() < 1e-14 && f.c.abs() < 1e-14);
        assert!(matches!(extrapolate_gamma(&pts[..2]), Err(StabilityError::InsufficientPoints(2))));
    }

    #[test]
    fn block_diagonal_eigenvectors_stay_in_blocks() {
        use rand::{Rng, SeedableRng};
        use Symmetry::*;
        let labels = vec![Symmetric, AntiSymmetric, Symmetric, Symmetric, AntiSymmetric, AntiSymmetric, AntiSymmetric, Symmetric];
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
        let phi = Matrix::<f64>::from_fn(8, 8, |i, j| if labels[i] == labels[j] { rng.random_range(-0.4..0.4) } else { 0.0 });
        let model = VarModel {
            p: 1,
            phis: vec![phi],
            std_errors: vec![],
            p_values: vec![],
            sigma_eps: Matrix::identity(8),
            labels: labels.clone(),
            n_obs: 0,
            robust: false,
            spectral_radius: 0.0,
            unstable: false,
        };
        let eig = eigen_analysis_phi1(&model).unwrap();
        for (v, l) in eig.vectors.iter().zip(&eig.labels) {
            assert_ne!(*l, Mixed);
            if let Some(v) = v {
                for (x, ml) in v.iter().zip(&labels) {
                    if ml != l {
                        assert!(x.abs() < 1e-10);
                    }
                }
            }
        }
    }
}
