use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar element type of a [`Tensor`](crate::Tensor).
///
/// Implemented for `f32` (training and inference) and `f64` (gradient checks).
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: callers pass slices whose extents cover every strided
                // index touched (checked by `gemm` below), and `c` is a distinct
                // contiguous m×n buffer.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

const TRANSPOSE_MIN_ROWS: usize = 16;

/// Transpose of a row-major `rows×cols` matrix, in cache-sized tiles.
pub(crate) fn transpose_into<T: Real>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    const TILE: usize = 32;
    let mut out = vec![T::zero(); rows * cols];
    for r0 in (0..rows).step_by(TILE) {
        for c0 in (0..cols).step_by(TILE) {
            for r in r0..(r0 + TILE).min(rows) {
                for c in c0..(c0 + TILE).min(cols) {
                    out[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
    out
}

/// Row-major matrix product `c (+)= op(a) · op(b)`.
///
/// `a` is stored as `m×k` (or `k×m` when `trans_a`), `b` as `k×n` (or `n×k`
/// when `trans_b`). With `accumulate` the product is added to `c`.
///
/// A single-row left operand takes a dedicated axpy loop: the blocked kernel
/// packs both operands and is several times slower for matrix-vector shapes.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k, "gemm: lhs extent");
    assert_eq!(b.len(), k * n, "gemm: rhs extent");
    assert_eq!(c.len(), m * n, "gemm: output extent");
    if m == 1 && !trans_b {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = T::zero());
        }
        // a is a row vector either way when m == 1
        for (i, &ai) in a.iter().enumerate() {
            if ai == T::zero() {
                continue;
            }
            let row = &b[i * n..(i + 1) * n];
            for (cj, &bj) in c.iter_mut().zip(row) {
                *cj += ai * bj;
            }
        }
        return;
    }
    if trans_b && m >= TRANSPOSE_MIN_ROWS {
        // Packing a column-strided rhs is markedly slower than one explicit
        // transpose once the product has a few rows.
        let bt = transpose_into(b, n, k);
        return gemm(m, k, n, a, trans_a, &bt, false, c, accumulate);
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            c.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    T::gemm_strided(m, k, n, a, rsa, csa, b, rsb, csb, beta, c);
}

/// Logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Hyperbolic tangent as `2·sigmoid(2x) − 1`, which is several times faster
/// than the libm routine in `f32`.
#[inline]
pub fn tanh<T: Real>(x: T) -> T {
    let two = T::one() + T::one();
    two / (T::one() + (-(x + x)).exp()) - T::one()
}
