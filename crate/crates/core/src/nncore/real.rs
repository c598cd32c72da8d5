use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type the network can run in. `f32` is the production precision;
/// `f64` exists for gradient checking.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` for an `m x k` by `k x n` product with
    /// arbitrary (row, column) strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    ((rows - 1) as isize * rs + (cols - 1) as isize * cs) as usize + 1
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                assert!(a_strides.0 >= 0 && a_strides.1 >= 0);
                assert!(b_strides.0 >= 0 && b_strides.1 >= 0);
                assert!(c_strides.0 >= 0 && c_strides.1 >= 0);
                assert!(span(m, k, a_strides) <= a.len(), "gemm: lhs out of bounds");
                assert!(span(k, n, b_strides) <= b.len(), "gemm: rhs out of bounds");
                assert!(span(m, n, c_strides) <= c.len(), "gemm: out out of bounds");
                // SAFETY: every index touched by the kernel is bounded by the
                // span checks above and the slices outlive the call.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Borrowed row-major matrix.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
}

impl<'a, T: Real> Mat<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Mat { data, rows, cols }
    }

    fn strides(&self, transpose: bool) -> (isize, isize) {
        if transpose {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }

    fn shape(&self, transpose: bool) -> (usize, usize) {
        if transpose {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }
}

/// Dot product with four independent accumulators so it vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] = acc[l] + x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail = tail + x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out (+)= op(a) * op(b)` into a row-major `out`. `accumulate` keeps the
/// existing contents of `out`.
pub(crate) fn matmul<T: Real>(
    a: Mat<'_, T>,
    ta: bool,
    b: Mat<'_, T>,
    tb: bool,
    out: &mut [T],
    accumulate: bool,
) {
    let (m, k) = a.shape(ta);
    let (k2, n) = b.shape(tb);
    assert_eq!(k, k2, "matmul inner dimension");
    assert_eq!(out.len(), m * n, "matmul output size");
    let beta = if accumulate { T::one() } else { T::zero() };
    if k == 0 {
        if !accumulate {
            out.fill(T::zero());
        }
        return;
    }
    // Packing dominates for vector shapes; handle them directly.
    if n == 1 {
        // b is a contiguous vector whichever way it is viewed
        let v = b.data;
        if !accumulate {
            out.fill(T::zero());
        }
        if ta {
            for (r, &w) in v.iter().enumerate() {
                let row = &a.data[r * a.cols..(r + 1) * a.cols];
                for (o, &x) in out.iter_mut().zip(row) {
                    *o = *o + w * x;
                }
            }
        } else {
            for (i, o) in out.iter_mut().enumerate() {
                *o = *o + dot(&a.data[i * k..(i + 1) * k], v);
            }
        }
        return;
    }
    if k == 1 {
        for i in 0..m {
            let ai = a.data[i];
            let row = &mut out[i * n..(i + 1) * n];
            for (o, &bj) in row.iter_mut().zip(b.data) {
                *o = if accumulate { *o + ai * bj } else { ai * bj };
            }
        }
        return;
    }
    T::gemm_raw(
        m,
        k,
        n,
        T::one(),
        a.data,
        a.strides(ta),
        b.data,
        b.strides(tb),
        beta,
        out,
        (n as isize, 1),
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_with_transposes() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 2.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut out = vec![0.0; m * n];
        matmul(
            Mat::new(&a, m, k),
            false,
            Mat::new(&b, k, n),
            false,
            &mut out,
            false,
        );
        assert_eq!(out.len(), want.len());
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T stored as k x m, b^T stored as n x k
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut out2 = vec![1.0; m * n];
        matmul(
            Mat::new(&at, k, m),
            true,
            Mat::new(&bt, n, k),
            true,
            &mut out2,
            true,
        );
        for (x, y) in out2.iter().zip(&want) {
            assert!((x - (y + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn vector_shapes_match_naive() {
        for (m, k, n) in [(7, 9, 1), (6, 1, 5), (1, 1, 1), (5, 3, 1)] {
            let a: Vec<f64> = (0..m * k).map(|v| (v as f64 * 0.7).cos()).collect();
            let b: Vec<f64> = (0..k * n).map(|v| v as f64 * 0.25 - 1.0).collect();
            let want = naive(&a, &b, m, k, n);
            let mut out = vec![2.0; m * n];
            matmul(
                Mat::new(&a, m, k),
                false,
                Mat::new(&b, k, n),
                false,
                &mut out,
                false,
            );
            for (x, y) in out.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
            let mut at = vec![0.0; k * m];
            for i in 0..m {
                for p in 0..k {
                    at[p * m + i] = a[i * k + p];
                }
            }
            let mut acc = vec![1.0; m * n];
            matmul(
                Mat::new(&at, k, m),
                true,
                Mat::new(&b, n, k),
                true,
                &mut acc,
                true,
            );
            for (x, y) in acc.iter().zip(&want) {
                assert!((x - (y + 1.0)).abs() < 1e-12);
            }
        }
    }
}
