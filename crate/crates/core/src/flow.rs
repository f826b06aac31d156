//! Layout of the 8-component flow vector and the bid-ask swap.

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const DIM: usize = 8;

pub const DT: usize = 0;
pub const LO_B: usize = 1;
pub const LO_A: usize = 2;
pub const C_B: usize = 3;
pub const C_A: usize = 4;
pub const EX_B: usize = 5;
pub const EX_A: usize = 6;
pub const RET: usize = 7;

/// The six volume components, in vector order.
pub const VOLUMES: [usize; 6] = [LO_B, LO_A, C_B, C_A, EX_B, EX_A];

pub const COMPONENT_NAMES: [&str; DIM] = ["dt", "v_lo_b", "v_lo_a", "v_c_b", "v_c_a", "v_ex_b", "v_ex_a", "ret"];

pub type Vec8<T> = [T; DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Symmetry {
    Symmetric,
    AntiSymmetric,
    /// Only produced for bases that were never symmetrized.
    Mixed,
}

impl Symmetry {
    pub fn tag(self) -> &'static str {
        match self {
            Symmetry::Symmetric => "S",
            Symmetry::AntiSymmetric => "A",
            Symmetry::Mixed => "M",
        }
    }

    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Symmetry::AntiSymmetric => -T::one(),
            _ => T::one(),
        }
    }
}

/// Bid-ask swap P: exchanges each bid/ask volume pair, keeps dt, negates the return.
pub fn swap<T: Scalar>(x: &[T]) -> Vec8<T> {
    debug_assert_eq!(x.len(), DIM);
    [x[DT], x[LO_A], x[LO_B], x[C_A], x[C_B], x[EX_A], x[EX_B], -x[RET]]
}

pub fn swap_matrix<T: Scalar>() -> Matrix<T> {
    let mut p = Matrix::zeros(DIM, DIM);
    p[(DT, DT)] = T::one();
    for (b, a) in [(LO_B, LO_A), (C_B, C_A), (EX_B, EX_A)] {
        p[(b, a)] = T::one();
        p[(a, b)] = T::one();
    }
    p[(RET, RET)] = -T::one();
    p
}

/// Flips `v` so that its largest-magnitude entry is positive (first index on ties).
pub fn canonical_sign<T: Scalar>(v: &mut [T]) {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < T::zero()) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Dot product that sums each bid/ask pair before the rest, so that
/// `paired_dot(u, swap(x))` is bit-exactly `±paired_dot(u, x)` for P-eigenvectors `u`.
pub fn paired_dot<T: Scalar>(u: &[T], x: &[T]) -> T {
    let pair = |b: usize, a: usize| u[b] * x[b] + u[a] * x[a];
    u[DT] * x[DT] + pair(LO_B, LO_A) + pair(C_B, C_A) + pair(EX_B, EX_A) + u[RET] * x[RET]
}

pub fn to_vec8<T: Copy>(s: &[T]) -> Vec8<T> {
    [s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]]
}
