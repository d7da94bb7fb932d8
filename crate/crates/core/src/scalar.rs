//! Floating point abstraction shared by every numerical module.

use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar type the library is generic over (`f32` or `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    fn lit(x: f64) -> Self;

    fn as_f64(self) -> f64;

    /// Solves the dense system `a x = b` (row-major `a`, size `n x n`) by LU
    /// with partial pivoting. Returns `None` when the matrix is singular.
    fn solve_dense(a: Vec<Self>, b: Vec<Self>, n: usize) -> Option<Vec<Self>>;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline(always)]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline(always)]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn solve_dense(a: Vec<Self>, b: Vec<Self>, n: usize) -> Option<Vec<Self>> {
                let m = nalgebra::DMatrix::<$t>::from_row_slice(n, n, &a);
                let rhs = nalgebra::DVector::<$t>::from_vec(b);
                m.lu().solve(&rhs).map(|x| x.as_slice().to_vec())
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Surface measure of the unit sphere `S^{n-1}` for `n = 1, 2`.
pub fn sphere_measure<T: Real>(n: usize) -> T {
    match n {
        1 => T::lit(2.0),
        _ => T::lit(2.0) * T::PI(),
    }
}

/// Pairwise (tree) summation: order-independent of thread scheduling and
/// more accurate than a running sum.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().fold(T::zero(), |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Max of a slice ignoring NaN; `-inf` on empty input.
pub fn max_of<T: Real>(xs: impl IntoIterator<Item = T>) -> T {
    xs.into_iter().fold(T::neg_infinity(), |a, b| a.max(b))
}

pub fn min_of<T: Real>(xs: impl IntoIterator<Item = T>) -> T {
    xs.into_iter().fold(T::infinity(), |a, b| a.min(b))
}
