//! Small derivative-free and least-squares optimizers.

use crate::linalg::{cholesky_solve, Matrix};
use crate::scalar::Scalar;

/// Golden-section minimisation of a unimodal function on `[a, b]`.
///
/// Stops when the bracket is narrower than `tol`; returns the midpoint of
/// the final bracket and its function value.
pub fn golden_section_min<T: Scalar>(mut f: impl FnMut(T) -> T, a: T, b: T, tol: T) -> (T, T) {
    let inv_phi = (T::lit(5.0).sqrt() - T::one()) / T::lit(2.0);
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut guard = 0;
    while (b - a).abs() > tol && guard < 500 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        guard += 1;
    }
    let x = (a + b) / T::lit(2.0);
    let fx = f(x);
    if fx <= fc && fx <= fd {
        (x, fx)
    } else if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LmOptions<T> {
    pub max_iter: usize,
    /// Relative cost decrease below which an accepted step counts as converged.
    pub ftol: T,
    /// Relative step size below which the iteration stops.
    pub xtol: T,
    /// Infinity norm of the gradient below which the iteration stops.
    pub gtol: T,
}

impl<T: Scalar> Default for LmOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 500,
            ftol: T::lit(1e-15),
            xtol: T::lit(1e-13),
            gtol: T::lit(1e-15),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LmResult<T> {
    pub x: Vec<T>,
    /// Half the residual sum of squares at `x`.
    pub cost: T,
    pub iterations: usize,
    pub converged: bool,
}

/// Central-difference Jacobian of a residual function.
pub fn numeric_jacobian<T: Scalar>(residuals: &impl Fn(&[T]) -> Vec<T>, x: &[T], m: usize) -> Matrix<T> {
    let n = x.len();
    let step = T::epsilon().cbrt();
    let mut jac = Matrix::zeros(m, n);
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = step * x[j].abs().max(T::one());
        xp[j] = x[j] + h;
        let rp = residuals(&xp);
        xp[j] = x[j] - h;
        let rm = residuals(&xp);
        xp[j] = x[j];
        let denom = T::lit(2.0) * h;
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / denom;
        }
    }
    jac
}

fn half_sq<T: Scalar>(r: &[T]) -> T {
    r.iter().fold(T::zero(), |s, &v| s + v * v) / T::lit(2.0)
}

/// Levenberg-Marquardt with Marquardt diagonal scaling.
///
/// `jacobian` receives the current point and its residual vector. Use
/// [`numeric_jacobian`] when no analytic form is at hand.
pub fn levenberg_marquardt<T, R, J>(residuals: R, jacobian: J, x0: &[T], opts: LmOptions<T>) -> LmResult<T>
where
    T: Scalar,
    R: Fn(&[T]) -> Vec<T>,
    J: Fn(&[T], &[T]) -> Matrix<T>,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut r = residuals(&x);
    let mut cost = half_sq(&r);
    let mut mu = T::lit(1e-3);
    let mut converged = false;
    let mut iterations = 0;

    if !cost.is_finite() {
        return LmResult { x, cost, iterations, converged };
    }

    'outer: while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(&x, &r);
        let jt = jac.transpose();
        let jtj = jt.matmul(&jac);
        let grad = jt.matvec(&r);
        let gmax = grad.iter().fold(T::zero(), |m, g| m.max(g.abs()));
        if gmax <= opts.gtol {
            converged = true;
            break;
        }

        loop {
            let mut a = jtj.clone();
            for i in 0..n {
                let d = jtj[(i, i)].max(T::lit(1e-30));
                a[(i, i)] += mu * d;
            }
            let step = match a.cholesky() {
                Some(l) => cholesky_solve(&l, &grad.iter().map(|&g| -g).collect::<Vec<_>>()),
                None => {
                    mu *= T::lit(10.0);
                    if mu > T::lit(1e30) {
                        break 'outer;
                    }
                    continue;
                }
            };
            let x_new: Vec<T> = x.iter().zip(&step).map(|(&a, &b)| a + b).collect();
            let r_new = residuals(&x_new);
            let cost_new = half_sq(&r_new);
            if cost_new.is_finite() && cost_new <= cost {
                let xnorm = x.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
                let snorm = step.iter().fold(T::zero(), |s, &v| s + v * v).sqrt();
                let rel_drop = if cost > T::zero() {
                    (cost - cost_new) / cost
                } else {
                    T::zero()
                };
                x = x_new;
                r = r_new;
                cost = cost_new;
                mu = (mu / T::lit(3.0)).max(T::lit(1e-20));
                if snorm <= opts.xtol * (xnorm + opts.xtol) || rel_drop <= opts.ftol || cost == T::zero() {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            mu *= T::lit(4.0);
            if mu > T::lit(1e30) {
                // No descent direction left at machine precision.
                converged = true;
                break 'outer;
            }
        }
    }
    LmResult { x, cost, iterations, converged }
}
