//! Real nonsymmetric eigenproblem: Householder reduction to Hessenberg form
//! followed by shifted double-step QR (EISPACK `orthes` / `hqr2`), with
//! back-substitution for eigenvectors.

use num_complex::Complex;

use super::Matrix;
use crate::scalar::Scalar;

/// Eigenvalues and eigenvectors of a real square matrix.
///
/// For a real eigenvalue at index `k`, column `k` of `vectors` is its
/// eigenvector. For a conjugate pair at `(k, k+1)` with positive imaginary
/// part first, columns `k` and `k+1` hold the real and imaginary parts of
/// the eigenvector of `values[k]`.
#[derive(Clone, Debug)]
pub struct GeneralEigen<T> {
    pub values: Vec<Complex<T>>,
    pub vectors: Matrix<T>,
}

impl<T: Scalar> GeneralEigen<T> {
    pub fn spectral_radius(&self) -> T {
        self.values.iter().fold(T::zero(), |m, z| m.max(z.norm()))
    }

    /// Indices of eigenvalues whose imaginary part is below `tol`.
    pub fn real_indices(&self, tol: T) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&k| self.values[k].im.abs() <= tol)
            .collect()
    }

    /// Unit-norm real eigenvector for a real eigenvalue index.
    pub fn real_vector(&self, k: usize) -> Vec<T> {
        let mut v = self.vectors.column(k);
        let n = super::norm(&v);
        if n > T::zero() {
            v.iter_mut().for_each(|x| *x /= n);
        }
        v
    }
}

/// Full eigen-decomposition of a general real matrix.
pub fn general_eigen<T: Scalar>(a: &Matrix<T>) -> GeneralEigen<T> {
    assert!(a.is_square(), "general_eigen needs a square matrix");
    let n = a.rows();
    if n == 0 {
        return GeneralEigen {
            values: Vec::new(),
            vectors: Matrix::zeros(0, 0),
        };
    }
    let mut h: Vec<Vec<T>> = a.to_rows();
    let mut v = vec![vec![T::zero(); n]; n];
    let mut d = vec![T::zero(); n];
    let mut e = vec![T::zero(); n];
    orthes(&mut h, &mut v);
    hqr2(&mut h, &mut v, &mut d, &mut e);

    let values = d
        .iter()
        .zip(&e)
        .map(|(&re, &im)| Complex::new(re, im))
        .collect();
    let vectors = Matrix::from_fn(n, n, |i, j| v[i][j]);
    GeneralEigen { values, vectors }
}

fn orthes<T: Scalar>(h: &mut [Vec<T>], v: &mut [Vec<T>]) {
    let n = h.len();
    let mut ort = vec![T::zero(); n];
    let low = 0usize;
    let high = n - 1;

    if high >= 2 {
        for m in (low + 1)..=(high - 1) {
            let mut scale = T::zero();
            for i in m..=high {
                scale += h[i][m - 1].abs();
            }
            if scale != T::zero() {
                let mut hh = T::zero();
                for i in (m..=high).rev() {
                    ort[i] = h[i][m - 1] / scale;
                    hh += ort[i] * ort[i];
                }
                let mut g = hh.sqrt();
                if ort[m] > T::zero() {
                    g = -g;
                }
                hh -= ort[m] * g;
                ort[m] -= g;

                for j in m..n {
                    let mut f = T::zero();
                    for i in (m..=high).rev() {
                        f += ort[i] * h[i][j];
                    }
                    f /= hh;
                    for i in m..=high {
                        h[i][j] -= f * ort[i];
                    }
                }
                for i in 0..=high {
                    let mut f = T::zero();
                    for j in (m..=high).rev() {
                        f += ort[j] * h[i][j];
                    }
                    f /= hh;
                    for j in m..=high {
                        h[i][j] -= f * ort[j];
                    }
                }
                ort[m] = scale * ort[m];
                h[m][m - 1] = scale * g;
            }
        }
    }

    for (i, row) in v.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = if i == j { T::one() } else { T::zero() };
        }
    }

    if high >= 2 {
        for m in ((low + 1)..=(high - 1)).rev() {
            if h[m][m - 1] != T::zero() {
                for i in (m + 1)..=high {
                    ort[i] = h[i][m - 1];
                }
                for j in m..=high {
                    let mut g = T::zero();
                    for i in m..=high {
                        g += ort[i] * v[i][j];
                    }
                    g = (g / ort[m]) / h[m][m - 1];
                    for i in m..=high {
                        v[i][j] += g * ort[i];
                    }
                }
            }
        }
    }
}

fn cdiv<T: Scalar>(xr: T, xi: T, yr: T, yi: T) -> (T, T) {
    if yr.abs() > yi.abs() {
        let r = yi / yr;
        let d = yr + r * yi;
        ((xr + r * xi) / d, (xi - r * xr) / d)
    } else {
        let r = yr / yi;
        let d = yi + r * yr;
        ((r * xr + xi) / d, (r * xi - xr) / d)
    }
}

#[allow(clippy::many_single_char_names)]
fn hqr2<T: Scalar>(h: &mut [Vec<T>], v: &mut [Vec<T>], d: &mut [T], e: &mut [T]) {
    let nn = h.len() as isize;
    let mut n = nn - 1;
    let low: isize = 0;
    let high = nn - 1;
    let eps = T::epsilon();
    let zero = T::zero();
    let one = T::one();
    let two = T::lit(2.0);
    let mut exshift = zero;
    let (mut p, mut q, mut r, mut s, mut z) = (zero, zero, zero, zero, zero);
    let (mut t, mut w, mut x, mut y);

    macro_rules! hm {
        ($i:expr, $j:expr) => {
            h[($i) as usize][($j) as usize]
        };
    }
    macro_rules! vm {
        ($i:expr, $j:expr) => {
            v[($i) as usize][($j) as usize]
        };
    }

    let mut norm = zero;
    for i in 0..nn {
        for j in (i - 1).max(0)..nn {
            norm += hm!(i, j).abs();
        }
    }

    let mut iter = 0;
    while n >= low {
        let mut l = n;
        while l > low {
            s = hm!(l - 1, l - 1).abs() + hm!(l, l).abs();
            if s == zero {
                s = norm;
            }
            if hm!(l, l - 1).abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == n {
            // one root
            hm!(n, n) = hm!(n, n) + exshift;
            d[n as usize] = hm!(n, n);
            e[n as usize] = zero;
            n -= 1;
            iter = 0;
        } else if l == n - 1 {
            // two roots
            w = hm!(n, n - 1) * hm!(n - 1, n);
            p = (hm!(n - 1, n - 1) - hm!(n, n)) / two;
            q = p * p + w;
            z = q.abs().sqrt();
            hm!(n, n) = hm!(n, n) + exshift;
            hm!(n - 1, n - 1) = hm!(n - 1, n - 1) + exshift;
            x = hm!(n, n);

            if q >= zero {
                z = if p >= zero { p + z } else { p - z };
                d[(n - 1) as usize] = x + z;
                d[n as usize] = d[(n - 1) as usize];
                if z != zero {
                    d[n as usize] = x - w / z;
                }
                e[(n - 1) as usize] = zero;
                e[n as usize] = zero;
                x = hm!(n, n - 1);
                s = x.abs() + z.abs();
                p = x / s;
                q = z / s;
                r = (p * p + q * q).sqrt();
                p /= r;
                q /= r;

                for j in (n - 1)..nn {
                    z = hm!(n - 1, j);
                    hm!(n - 1, j) = q * z + p * hm!(n, j);
                    hm!(n, j) = q * hm!(n, j) - p * z;
                }
                for i in 0..=n {
                    z = hm!(i, n - 1);
                    hm!(i, n - 1) = q * z + p * hm!(i, n);
                    hm!(i, n) = q * hm!(i, n) - p * z;
                }
                for i in low..=high {
                    z = vm!(i, n - 1);
                    vm!(i, n - 1) = q * z + p * vm!(i, n);
                    vm!(i, n) = q * vm!(i, n) - p * z;
                }
            } else {
                d[(n - 1) as usize] = x + p;
                d[n as usize] = x + p;
                e[(n - 1) as usize] = z;
                e[n as usize] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            x = hm!(n, n);
            y = zero;
            w = zero;
            if l < n {
                y = hm!(n - 1, n - 1);
                w = hm!(n, n - 1) * hm!(n - 1, n);
            }

            // Wilkinson's ad hoc shift
            if iter == 10 {
                exshift += x;
                for i in low..=n {
                    hm!(i, i) = hm!(i, i) - x;
                }
                s = hm!(n, n - 1).abs() + hm!(n - 1, n - 2).abs();
                x = T::lit(0.75) * s;
                y = x;
                w = T::lit(-0.4375) * s * s;
            }

            // MATLAB's ad hoc shift
            if iter == 30 {
                s = (y - x) / two;
                s = s * s + w;
                if s > zero {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / two + s);
                    for i in low..=n {
                        hm!(i, i) = hm!(i, i) - s;
                    }
                    exshift += s;
                    x = T::lit(0.964);
                    y = x;
                    w = x;
                }
            }

            iter += 1;
            if iter > 10_000 {
                // Give up on this block; leave remaining values as diagonal.
                for i in low..=n {
                    d[i as usize] = hm!(i, i);
                    e[i as usize] = zero;
                }
                break;
            }

            let mut m = n - 2;
            while m >= l {
                z = hm!(m, m);
                r = x - z;
                s = y - z;
                p = (r * s - w) / hm!(m + 1, m) + hm!(m, m + 1);
                q = hm!(m + 1, m + 1) - z - r - s;
                r = hm!(m + 2, m + 1);
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                if hm!(m, m - 1).abs() * (q.abs() + r.abs())
                    < eps * (p.abs() * (hm!(m - 1, m - 1).abs() + z.abs() + hm!(m + 1, m + 1).abs()))
                {
                    break;
                }
                m -= 1;
            }

            for i in (m + 2)..=n {
                hm!(i, i - 2) = zero;
                if i > m + 2 {
                    hm!(i, i - 3) = zero;
                }
            }

            // double QR step on rows l..n, columns m..n
            let mut k = m;
            while k <= n - 1 {
                let notlast = k != n - 1;
                if k != m {
                    p = hm!(k, k - 1);
                    q = hm!(k + 1, k - 1);
                    r = if notlast { hm!(k + 2, k - 1) } else { zero };
                    x = p.abs() + q.abs() + r.abs();
                    if x == zero {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < zero {
                    s = -s;
                }
                if s != zero {
                    if k != m {
                        hm!(k, k - 1) = -s * x;
                    } else if l != m {
                        hm!(k, k - 1) = -hm!(k, k - 1);
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..nn {
                        p = hm!(k, j) + q * hm!(k + 1, j);
                        if notlast {
                            p += r * hm!(k + 2, j);
                            hm!(k + 2, j) = hm!(k + 2, j) - p * z;
                        }
                        hm!(k, j) = hm!(k, j) - p * x;
                        hm!(k + 1, j) = hm!(k + 1, j) - p * y;
                    }
                    for i in 0..=n.min(k + 3) {
                        p = x * hm!(i, k) + y * hm!(i, k + 1);
                        if notlast {
                            p += z * hm!(i, k + 2);
                            hm!(i, k + 2) = hm!(i, k + 2) - p * r;
                        }
                        hm!(i, k) = hm!(i, k) - p;
                        hm!(i, k + 1) = hm!(i, k + 1) - p * q;
                    }
                    for i in low..=high {
                        p = x * vm!(i, k) + y * vm!(i, k + 1);
                        if notlast {
                            p += z * vm!(i, k + 2);
                            vm!(i, k + 2) = vm!(i, k + 2) - p * r;
                        }
                        vm!(i, k) = vm!(i, k) - p;
                        vm!(i, k + 1) = vm!(i, k + 1) - p * q;
                    }
                }
                k += 1;
            }
        }
    }

    if norm == zero {
        return;
    }

    // Back-substitute to find vectors of the upper triangular form.
    let mut n = nn - 1;
    while n >= 0 {
        p = d[n as usize];
        q = e[n as usize];

        if q == zero {
            let mut l = n;
            hm!(n, n) = one;
            let mut i = n - 1;
            while i >= 0 {
                w = hm!(i, i) - p;
                r = zero;
                for j in l..=n {
                    r += hm!(i, j) * hm!(j, n);
                }
                if e[i as usize] < zero {
                    z = w;
                    s = r;
                } else {
                    l = i;
                    if e[i as usize] == zero {
                        hm!(i, n) = if w != zero { -r / w } else { -r / (eps * norm) };
                    } else {
                        x = hm!(i, i + 1);
                        y = hm!(i + 1, i);
                        let di = d[i as usize] - p;
                        q = di * di + e[i as usize] * e[i as usize];
                        t = (x * s - z * r) / q;
                        hm!(i, n) = t;
                        hm!(i + 1, n) = if x.abs() > z.abs() {
                            (-r - w * t) / x
                        } else {
                            (-s - y * t) / z
                        };
                    }
                    t = hm!(i, n).abs();
                    if (eps * t) * t > one {
                        for j in i..=n {
                            hm!(j, n) = hm!(j, n) / t;
                        }
                    }
                }
                i -= 1;
            }
        } else if q < zero {
            let mut l = n - 1;
            if hm!(n, n - 1).abs() > hm!(n - 1, n).abs() {
                hm!(n - 1, n - 1) = q / hm!(n, n - 1);
                hm!(n - 1, n) = -(hm!(n, n) - p) / hm!(n, n - 1);
            } else {
                let (cr, ci) = cdiv(zero, -hm!(n - 1, n), hm!(n - 1, n - 1) - p, q);
                hm!(n - 1, n - 1) = cr;
                hm!(n - 1, n) = ci;
            }
            hm!(n, n - 1) = zero;
            hm!(n, n) = one;
            let mut i = n - 2;
            while i >= 0 {
                let mut ra = zero;
                let mut sa = zero;
                for j in l..=n {
                    ra += hm!(i, j) * hm!(j, n - 1);
                    sa += hm!(i, j) * hm!(j, n);
                }
                w = hm!(i, i) - p;
                if e[i as usize] < zero {
                    z = w;
                    r = ra;
                    s = sa;
                } else {
                    l = i;
                    if e[i as usize] == zero {
                        let (cr, ci) = cdiv(-ra, -sa, w, q);
                        hm!(i, n - 1) = cr;
                        hm!(i, n) = ci;
                    } else {
                        x = hm!(i, i + 1);
                        y = hm!(i + 1, i);
                        let di = d[i as usize] - p;
                        let mut vr = di * di + e[i as usize] * e[i as usize] - q * q;
                        let vi = di * two * q;
                        if vr == zero && vi == zero {
                            vr = eps * norm * (w.abs() + q.abs() + x.abs() + y.abs() + z.abs());
                        }
                        let (cr, ci) = cdiv(
                            x * r - z * ra + q * sa,
                            x * s - z * sa - q * ra,
                            vr,
                            vi,
                        );
                        hm!(i, n - 1) = cr;
                        hm!(i, n) = ci;
                        if x.abs() > z.abs() + q.abs() {
                            hm!(i + 1, n - 1) = (-ra - w * hm!(i, n - 1) + q * hm!(i, n)) / x;
                            hm!(i + 1, n) = (-sa - w * hm!(i, n) - q * hm!(i, n - 1)) / x;
                        } else {
                            let (cr, ci) =
                                cdiv(-r - y * hm!(i, n - 1), -s - y * hm!(i, n), z, q);
                            hm!(i + 1, n - 1) = cr;
                            hm!(i + 1, n) = ci;
                        }
                    }
                    t = hm!(i, n - 1).abs().max(hm!(i, n).abs());
                    if (eps * t) * t > one {
                        for j in i..=n {
                            hm!(j, n - 1) = hm!(j, n - 1) / t;
                            hm!(j, n) = hm!(j, n) / t;
                        }
                    }
                }
                i -= 1;
            }
        }
        n -= 1;
    }

    // Back transformation to eigenvectors of the original matrix.
    let mut j = nn - 1;
    while j >= low {
        for i in low..=high {
            z = zero;
            for k in low..=j.min(high) {
                z += vm!(i, k) * hm!(k, j);
            }
            vm!(i, j) = z;
        }
        j -= 1;
    }
}
