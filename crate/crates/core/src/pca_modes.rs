//! Correlation of `T'` vectors, its eigenmodes, and the bid-ask symmetrised
//! microstructure modes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{canonical_sign, paired_dot, swap, swap_matrix, to_vec8, Symmetry, Vec8, C_A, C_B, DIM, DT, EX_A, EX_B, LO_A, LO_B, RET};
use crate::linalg::{dot, norm, orthonormalize, symmetric_eigen, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum PcaError {
    #[error("insufficient data: need at least {needed} vectors, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("covariance is not symmetric (max asymmetry {0})")]
    NotSymmetric(f64),
    #[error("vector is not an eigenvector of the swap (residual {0})")]
    NotSymmetryEigenvector(f64),
    #[error("component {0} has zero variance")]
    ZeroVariance(usize),
}

pub const MIN_VECTORS: usize = 100;
/// Eigenvalues closer than this are treated as degenerate.
pub const TIE_TOL: f64 = 1e-9;
/// Tolerance of the swap-eigenvector test.
pub const SYMMETRY_TOL: f64 = 1e-9;

const CHUNK: usize = 8192;

/// Sample correlation matrix, two-pass, summed in fixed chunk order.
pub fn estimate_covariance<T: Scalar>(vectors: &[Vec8<T>]) -> Result<Matrix<T>, PcaError> {
    let cov = sample_covariance(vectors)?;
    let sd: Vec<T> = (0..DIM).map(|i| cov[(i, i)].sqrt()).collect();
    if let Some(i) = sd.iter().position(|s| !(*s > T::zero())) {
        return Err(PcaError::ZeroVariance(i));
    }
    Ok(Matrix::from_fn(DIM, DIM, |i, j| {
        if i == j {
            T::one()
        } else {
            cov[(i, j)] / (sd[i] * sd[j])
        }
    }))
}

/// Population covariance (divides by `n`).
pub fn sample_covariance<T: Scalar>(vectors: &[Vec8<T>]) -> Result<Matrix<T>, PcaError> {
    let n = vectors.len();
    if n < MIN_VECTORS {
        return Err(PcaError::InsufficientData { needed: MIN_VECTORS, got: n });
    }
    let sums: Vec<Vec8<T>> = vectors
        .par_chunks(CHUNK)
        .map(|c| {
            let mut s = [T::zero(); DIM];
            for v in c {
                for i in 0..DIM {
                    s[i] += v[i];
                }
            }
            s
        })
        .collect();
    let nf = T::from_usize_lossy(n);
    let mut mean = [T::zero(); DIM];
    for s in &sums {
        for i in 0..DIM {
            mean[i] += s[i];
        }
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let parts: Vec<[[T; DIM]; DIM]> = vectors
        .par_chunks(CHUNK)
        .map(|c| {
            let mut s = [[T::zero(); DIM]; DIM];
            for v in c {
                let d: Vec8<T> = std::array::from_fn(|i| v[i] - mean[i]);
                for i in 0..DIM {
                    for j in i..DIM {
                        s[i][j] += d[i] * d[j];
                    }
                }
            }
            s
        })
        .collect();
    let mut acc = [[T::zero(); DIM]; DIM];
    for p in &parts {
        for i in 0..DIM {
            for j in i..DIM {
                acc[i][j] += p[i][j];
            }
        }
    }
    Ok(Matrix::from_fn(DIM, DIM, |i, j| {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        acc[a][b] / nf
    }))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSpan {
    pub first_day: u32,
    pub last_day: u32,
    pub vectors: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeBasis<T> {
    /// Descending.
    pub eigvals: Vec<T>,
    /// `eigvecs[α]` is mode α as a flow-space 8-vector.
    pub eigvecs: Vec<Vec8<T>>,
    pub labels: Vec<Symmetry>,
    /// Mean and standard deviation of each raw projection over the training span.
    pub proj_mean: Vec8<T>,
    pub proj_scale: Vec8<T>,
    pub training: Option<TrainingSpan>,
}

impl<T: Scalar> ModeBasis<T> {
    /// Eigenvectors as matrix columns.
    pub fn u_matrix(&self) -> Matrix<T> {
        Matrix::from_fn(DIM, DIM, |i, a| self.eigvecs[a][i])
    }

    pub fn covariance(&self) -> Matrix<T> {
        let u = self.u_matrix();
        let mut c = Matrix::zeros(DIM, DIM);
        for i in 0..DIM {
            for j in 0..DIM {
                let mut s = T::zero();
                for a in 0..DIM {
                    s += u[(i, a)] * self.eigvals[a] * u[(j, a)];
                }
                c[(i, j)] = s;
            }
        }
        c
    }

    pub fn mode_names(&self) -> Vec<String> {
        self.labels
            .iter()
            .enumerate()
            .map(|(a, l)| format!("{}{}", a + 1, l.tag()))
            .collect()
    }

    /// Sets the projection constants from training vectors.
    pub fn fit_projection(&mut self, vectors: &[Vec8<T>], span: Option<TrainingSpan>) -> Result<(), PcaError> {
        if vectors.len() < 2 {
            return Err(PcaError::InsufficientData { needed: 2, got: vectors.len() });
        }
        self.proj_mean = [T::zero(); DIM];
        self.proj_scale = [T::one(); DIM];
        let raw: Vec<Vec8<T>> = vectors.iter().map(|v| self.raw_projection(v)).collect();
        let n = T::from_usize_lossy(raw.len());
        let mut mean = [T::zero(); DIM];
        for y in &raw {
            for a in 0..DIM {
                mean[a] += y[a];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [T::zero(); DIM];
        for y in &raw {
            for a in 0..DIM {
                var[a] += (y[a] - mean[a]) * (y[a] - mean[a]);
            }
        }
        for a in 0..DIM {
            let s = (var[a] / n).sqrt();
            if !(s > T::zero()) {
                return Err(PcaError::ZeroVariance(a));
            }
            self.proj_scale[a] = s;
        }
        self.proj_mean = mean;
        self.training = span;
        Ok(())
    }

    fn raw_projection(&self, x: &Vec8<T>) -> Vec8<T> {
        std::array::from_fn(|a| dot(&self.eigvecs[a], x))
    }

    /// `Y_α = (U_α · x - m_α) / s_α`.
    pub fn project(&self, x: &Vec8<T>) -> Vec8<T> {
        let r = self.raw_projection(x);
        std::array::from_fn(|a| (r[a] - self.proj_mean[a]) / self.proj_scale[a])
    }

    pub fn reconstruct(&self, y: &Vec8<T>) -> Vec8<T> {
        let mut x = [T::zero(); DIM];
        for a in 0..DIM {
            let c = self.proj_scale[a] * y[a] + self.proj_mean[a];
            for i in 0..DIM {
                x[i] += c * self.eigvecs[a][i];
            }
        }
        x
    }

    /// Mode-space direction to flow space, without the mean: `U D y`.
    pub fn to_flow_direction(&self, y: &[T]) -> Vec8<T> {
        let mut x = [T::zero(); DIM];
        for a in 0..DIM {
            let c = self.proj_scale[a] * y[a];
            for i in 0..DIM {
                x[i] += c * self.eigvecs[a][i];
            }
        }
        x
    }

    /// Flow-space direction to mode space: `D⁻¹ Uᵀ x`.
    pub fn to_mode_direction(&self, x: &[T]) -> Vec8<T> {
        std::array::from_fn(|a| paired_dot(&self.eigvecs[a], x) / self.proj_scale[a])
    }
}

pub fn project<T: Scalar>(vectors: &[Vec8<T>], basis: &ModeBasis<T>) -> Vec<Vec8<T>> {
    vectors.par_iter().map(|v| basis.project(v)).collect()
}

fn swap_residual<T: Scalar>(u: &[T], sign: T) -> T {
    let pu = swap(u);
    pu.iter().zip(u).fold(T::zero(), |m, (&a, &b)| m.max((a - sign * b).abs()))
}

/// Symmetric if `P U = U`, anti-symmetric if `P U = -U`, within 1e-9.
pub fn classify_mode<T: Scalar>(u: &[T]) -> Result<Symmetry, PcaError> {
    let tol = T::lit(SYMMETRY_TOL);
    let plus = swap_residual(u, T::one());
    let minus = swap_residual(u, -T::one());
    if plus <= tol {
        Ok(Symmetry::Symmetric)
    } else if minus <= tol {
        Ok(Symmetry::AntiSymmetric)
    } else {
        Err(PcaError::NotSymmetryEigenvector(plus.min(minus).to_f64_lossy()))
    }
}

fn label_of<T: Scalar>(u: &[T]) -> Symmetry {
    classify_mode(u).unwrap_or(Symmetry::Mixed)
}

fn index_of_largest<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

fn is_tie<T: Scalar>(a: T, b: T) -> bool {
    (a - b).abs() <= T::lit(TIE_TOL) * T::one().max(a.abs())
}

/// Replaces each degenerate group of eigenvectors (columns of `vecs`, values
/// descending) by the orthonormalised projections of the coordinate axes
/// onto the group's eigenspace, ordered by the position of their largest
/// component.
fn canonical_groups<T: Scalar>(vals: &[T], vecs: &Matrix<T>) -> Vec<Vec<T>> {
    let n = vals.len();
    let mut out: Vec<Vec<T>> = (0..n).map(|k| vecs.column(k)).collect();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && is_tie(vals[start], vals[end]) {
            end += 1;
        }
        if end - start > 1 {
            let group: Vec<Vec<T>> = out[start..end].to_vec();
            let candidates: Vec<Vec<T>> = (0..n)
                .map(|i| {
                    let mut p = vec![T::zero(); n];
                    for q in &group {
                        let c = q[i];
                        for (pk, &qk) in p.iter_mut().zip(q) {
                            *pk += c * qk;
                        }
                    }
                    p
                })
                .collect();
            let mut basis = orthonormalize(&candidates, T::lit(1e-6));
            basis.truncate(end - start);
            basis.sort_by_key(|v| index_of_largest(v));
            if basis.len() == end - start {
                out.splice(start..end, basis);
            }
        }
        start = end;
    }
    for v in &mut out {
        canonical_sign(v);
    }
    out
}

/// Descending eigenpairs of a symmetric matrix, largest component positive,
/// degenerate groups resolved deterministically. Labels are `Mixed` unless a
/// mode happens to be an exact swap eigenvector.
pub fn eigendecompose<T: Scalar>(cov: &Matrix<T>) -> Result<ModeBasis<T>, PcaError> {
    let asym = cov.asymmetry();
    if asym > T::lit(1e-12) * T::one().max(cov.max_abs()) {
        return Err(PcaError::NotSymmetric(asym.to_f64_lossy()));
    }
    let (vals, vecs) = symmetric_eigen(cov);
    let cols = canonical_groups(&vals, &vecs);
    let eigvecs: Vec<Vec8<T>> = cols.iter().map(|c| to_vec8(c)).collect();
    Ok(ModeBasis {
        labels: eigvecs.iter().map(|u| label_of(u)).collect(),
        eigvals: vals,
        eigvecs,
        proj_mean: [T::zero(); DIM],
        proj_scale: [T::one(); DIM],
        training: None,
    })
}

/// `½ (C + P C P)`.
pub fn symmetrize_covariance<T: Scalar>(cov: &Matrix<T>) -> Matrix<T> {
    let p = swap_matrix::<T>();
    let pcp = p.matmul(cov).matmul(&p);
    let half = T::lit(0.5);
    Matrix::from_fn(DIM, DIM, |i, j| half * (cov[(i, j)] + pcp[(i, j)]))
}

/// Orthonormal bases of the +1 and -1 eigenspaces of the swap, as flow-space
/// vectors. Each column maps exactly onto ±itself under the swap.
fn block_bases<T: Scalar>() -> [Vec<Vec8<T>>; 2] {
    let r = T::lit(0.5).sqrt();
    let unit = |i: usize| -> Vec8<T> { std::array::from_fn(|k| if k == i { T::one() } else { T::zero() }) };
    let pair = |b: usize, a: usize, s: T| -> Vec8<T> {
        std::array::from_fn(|k| {
            if k == b {
                r
            } else if k == a {
                s * r
            } else {
                T::zero()
            }
        })
    };
    let one = T::one();
    [
        vec![unit(DT), pair(LO_B, LO_A, one), pair(C_B, C_A, one), pair(EX_B, EX_A, one)],
        vec![pair(LO_B, LO_A, -one), pair(C_B, C_A, -one), pair(EX_B, EX_A, -one), unit(RET)],
    ]
}

/// Eigenbasis of the symmetrised covariance. Each block is diagonalised in
/// its own coordinates so every mode is an exact swap eigenvector; the two
/// blocks are then merged by descending eigenvalue, symmetric first on ties.
pub fn symmetrize_from_covariance<T: Scalar>(cov: &Matrix<T>) -> Result<ModeBasis<T>, PcaError> {
    let asym = cov.asymmetry();
    if asym > T::lit(1e-12) * T::one().max(cov.max_abs()) {
        return Err(PcaError::NotSymmetric(asym.to_f64_lossy()));
    }
    let c = symmetrize_covariance(cov);
    let mut modes: Vec<(T, Symmetry, Vec8<T>)> = Vec::with_capacity(DIM);
    for (basis, label) in block_bases::<T>().into_iter().zip([Symmetry::Symmetric, Symmetry::AntiSymmetric]) {
        let k = basis.len();
        let cb: Vec<Vec<T>> = basis.iter().map(|b| c.matvec(b)).collect();
        let block = Matrix::from_fn(k, k, |i, j| dot(&basis[i], &cb[j]));
        let block = Matrix::from_fn(k, k, |i, j| T::lit(0.5) * (block[(i, j)] + block[(j, i)]));
        let (vals, vecs) = symmetric_eigen(&block);
        let coords = canonical_groups(&vals, &vecs);
        for (v, w) in vals.into_iter().zip(coords) {
            let mut u = [T::zero(); DIM];
            for (b, &wk) in basis.iter().zip(&w) {
                for i in 0..DIM {
                    u[i] += wk * b[i];
                }
            }
            canonical_sign(&mut u);
            modes.push((v, label, u));
        }
    }
    // stable merge: descending value, symmetric block first on ties
    modes.sort_by(|a, b| {
        if is_tie(a.0, b.0) {
            a.1.cmp(&b.1)
        } else {
            b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal)
        }
    });
    Ok(ModeBasis {
        eigvals: modes.iter().map(|m| m.0).collect(),
        labels: modes.iter().map(|m| m.1).collect(),
        eigvecs: modes.iter().map(|m| m.2).collect(),
        proj_mean: [T::zero(); DIM],
        proj_scale: [T::one(); DIM],
        training: None,
    })
}

/// Symmetrises a fitted basis via the covariance it represents. Projection
/// constants are reset and must be refitted.
pub fn symmetrize_modes<T: Scalar>(basis: &ModeBasis<T>) -> ModeBasis<T> {
    let c = basis.covariance();
    let c = Matrix::from_fn(DIM, DIM, |i, j| T::lit(0.5) * (c[(i, j)] + c[(j, i)]));
    let mut out = symmetrize_from_covariance(&c).expect("covariance rebuilt symmetric");
    out.training = basis.training.clone();
    out
}

/// Largest deviation from orthonormality of the basis.
pub fn orthonormality_error<T: Scalar>(basis: &ModeBasis<T>) -> T {
    let mut worst = T::zero();
    for a in 0..DIM {
        for b in 0..DIM {
            let target = if a == b { T::one() } else { T::zero() };
            worst = worst.max((dot(&basis.eigvecs[a], &basis.eigvecs[b]) - target).abs());
        }
    }
    worst
}

/// |cos| between two vectors.
pub fn alignment<T: Scalar>(a: &[T], b: &[T]) -> T {
    (dot(a, b) / (norm(a) * norm(b))).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_gaussian_vectors;
    use proptest::prelude::*;

    fn random_spd(seed: u64) -> Matrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let a = Matrix::<f64>::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0));
        let c = a.matmul(&a.transpose());
        let d: Vec<f64> = (0..8).map(|i| c[(i, i)].sqrt()).collect();
        Matrix::from_fn(8, 8, |i, j| if i == j { 1.0 } else { c[(i, j)] / (d[i] * d[j]) })
    }

    #[test]
    fn identity_gives_canonical_basis() {
        let b = eigendecompose(&Matrix::<f64>::identity(8)).unwrap();
        for a in 0..8 {
            assert_eq!(b.eigvals[a], 1.0);
            for i in 0..8 {
                assert_eq!(b.eigvecs[a][i], if a == i { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn spiked_model() {
        let v: Vec<f64> = [1.0, 2.0, -1.0, 0.5, 0.3, -0.7, 1.1, 0.2].to_vec();
        let nv = norm(&v);
        let v: Vec<f64> = v.iter().map(|x| x / nv).collect();
        let c = 0.7;
        let cov = Matrix::from_fn(8, 8, |i, j| c * v[i] * v[j] + if i == j { 1.0 - c } else { 0.0 });
        let b = eigendecompose(&cov).unwrap();
        assert!(alignment(&b.eigvecs[0], &v) > 0.999);
        assert!((b.eigvals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_component_correlates_fully() {
        let raw = generate_gaussian_vectors(&Matrix::identity(8), 1000, 1).unwrap();
        let dup: Vec<Vec8<f64>> = raw
            .iter()
            .map(|v| {
                let mut w = *v;
                w[3] = w[2];
                w
            })
            .collect();
        let c = estimate_covariance(&dup).unwrap();
        assert!((c[(2, 3)] - 1.0).abs() < 1e-12);
        assert!(matches!(estimate_covariance(&dup[..50]), Err(PcaError::InsufficientData { .. })));
    }

    #[test]
    fn symmetrised_modes_are_exact_swap_eigenvectors() {
        let cov = random_spd(4);
        let b = symmetrize_from_covariance(&cov).unwrap();
        let p = swap_matrix::<f64>();
        for (u, l) in b.eigvecs.iter().zip(&b.labels) {
            assert_eq!(classify_mode(u).unwrap(), *l);
            let pu = swap(u);
            let pp = swap(&pu);
            assert_eq!(&pp, u);
        }
        assert!(orthonormality_error(&b) < 1e-12);
        assert!((b.eigvals.iter().sum::<f64>() - 8.0).abs() < 1e-12);
        assert!(b.eigvals.windows(2).all(|w| w[0] >= w[1]));
        let s = symmetrize_covariance(&cov);
        assert!(s.matmul(&p).sub(&p.matmul(&s)).max_abs() < 1e-12);
    }

    #[test]
    fn already_symmetric_covariance_unchanged() {
        let s = symmetrize_covariance(&random_spd(9));
        let plain = eigendecompose(&s).unwrap();
        let sym = symmetrize_from_covariance(&s).unwrap();
        for a in 0..8 {
            assert!((plain.eigvals[a] - sym.eigvals[a]).abs() < 1e-12);
            assert!(alignment(&plain.eigvecs[a], &sym.eigvecs[a]) > 1.0 - 1e-10);
        }
    }

    #[test]
    fn small_asymmetry_shifts_eigenvalues_little() {
        let s = symmetrize_covariance(&random_spd(10));
        let eps = 0.01;
        let mut pert = s.clone();
        pert[(LO_B, EX_B)] += eps;
        pert[(EX_B, LO_B)] += eps;
        let a = symmetrize_from_covariance(&s).unwrap();
        let b = symmetrize_from_covariance(&pert).unwrap();
        for k in 0..8 {
            assert!((a.eigvals[k] - b.eigvals[k]).abs() < eps);
        }
    }

    #[test]
    fn classify() {
        let s = [0.0, 0.5, 0.5, 0.1, 0.1, 0.3, 0.3, 0.0];
        assert_eq!(classify_mode(&s).unwrap(), Symmetry::Symmetric);
        let r = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(classify_mode(&r).unwrap(), Symmetry::AntiSymmetric);
        let m = [0.0, 0.5, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(classify_mode(&m), Err(PcaError::NotSymmetryEigenvector(_))));
    }

    #[test]
    fn projection_round_trip_and_scaled_mode() {
        let cov = random_spd(2);
        let xs = generate_gaussian_vectors(&cov, 5000, 2).unwrap();
        let mut b = symmetrize_from_covariance(&estimate_covariance(&xs).unwrap()).unwrap();
        b.fit_projection(&xs, None).unwrap();
        let ys = project(&xs, &b);
        for (x, y) in xs.iter().zip(&ys).take(100) {
            let back = b.reconstruct(y);
            for i in 0..8 {
                assert!((back[i] - x[i]).abs() < 1e-9);
            }
        }
        for a in 0..8 {
            let m = ys.iter().map(|y| y[a]).sum::<f64>() / ys.len() as f64;
            let v = ys.iter().map(|y| (y[a] - m).powi(2)).sum::<f64>() / ys.len() as f64;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-10);
        }
        // raw projection of a scaled mode has a single nonzero entry
        let mut plain = b.clone();
        plain.proj_mean = [0.0; 8];
        plain.proj_scale = [1.0; 8];
        let x: Vec8<f64> = std::array::from_fn(|i| 2.5 * b.eigvecs[0][i]);
        let y = plain.project(&x);
        assert!((y[0] - 2.5).abs() < 1e-12);
        assert!(y[1..].iter().all(|v| v.abs() < 1e-12));
    }

    proptest! {
        #[test]
        fn bid_ask_relabelling_is_invariant(seed in 0u64..500) {
            let cov = random_spd(seed);
            let p = swap_matrix::<f64>();
            let flipped = p.matmul(&cov).matmul(&p);
            let a = symmetrize_from_covariance(&cov).unwrap();
            let b = symmetrize_from_covariance(&flipped).unwrap();
            prop_assert_eq!(&a.labels, &b.labels);
            for k in 0..8 {
                prop_assert!((a.eigvals[k] - b.eigvals[k]).abs() < 1e-12);
            }
        }
    }
}
