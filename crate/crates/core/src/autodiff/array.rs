//! Dense row-major n-d array with an f32/f64-dispatched gemm backend.

use rayon::prelude::*;

/// Scalar type the engine is generic over. Training runs at `f32`; the
/// finite-difference gradient checker runs the same graphs at `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn into_f64(self) -> f64;
    /// C = alpha * A(m x k) * B(k x n) + beta * C, arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn into_f64(self) -> f64 {
        f64::from(self)
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major dense array. Rank 0 (`shape == []`) is a scalar.
#[derive(Clone, PartialEq)]
pub struct Array<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Array<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Array { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Array { shape: shape.to_vec(), data: vec![F::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Array { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn scalar(v: F) -> Self {
        Array { shape: vec![], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// Scalar value of a rank-0/1-element array.
    pub fn item(&self) -> F {
        assert_eq!(self.numel(), 1, "item() on non-scalar {:?}", self.shape);
        self.data[0]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn convert<G: Real>(&self) -> Array<G> {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|v| G::from_f64(v.into_f64())).collect() }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Array<F> {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.data.iter()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Leading dimensions product: numel / last_dim.
    pub fn n_rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }
}

impl<F: Real> std::fmt::Debug for Array<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Array{:?}", self.shape)?;
        if self.numel() <= 12 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.numel())
        }
    }
}

/// Above this output size the gemm is split over row blocks.
const PAR_GEMM_CELLS: usize = 1 << 18;

/// C(m x n) = A(m x k) . B(k x n); transposition handled by stride swap.
pub(crate) fn gemm_into<F: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[F],
    ta: bool,
    b: &[F],
    tb: bool,
    c: &mut [F],
    beta: F,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let threads = rayon::current_num_threads();
    if threads > 1 && m * n * k > PAR_GEMM_CELLS && m >= 2 * threads {
        // Split output rows; each block is an independent gemm, so the
        // result is bitwise identical to the single-threaded product.
        let rows_per = m.div_ceil(threads);
        c.par_chunks_mut(rows_per * n).enumerate().for_each(|(blk, c_blk)| {
            let r0 = blk * rows_per;
            let rows = c_blk.len() / n;
            let a_off = if ta { r0 as isize } else { (r0 * k) as isize };
            unsafe {
                F::gemm(
                    rows,
                    k,
                    n,
                    F::one(),
                    a.as_ptr().offset(a_off),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c_blk.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
    } else {
        unsafe {
            F::gemm(
                m,
                k,
                n,
                F::one(),
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

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = a[i * k + p];
                for j in 0..n {
                    c[i * n + j] += av * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm_into(m, k, n, &a, false, &b, false, &mut c, 0.0);
        let want = naive_matmul(m, k, n, &a, &b);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_transposed_operands() {
        let (m, k, n) = (4, 6, 3);
        // at is k x m laid out row-major, interpreted as A^T.
        let at: Vec<f64> = (0..k * m).map(|i| i as f64 * 0.1).collect();
        let bt: Vec<f64> = (0..n * k).map(|i| (i as f64).sqrt()).collect();
        let mut a = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                a[i * k + p] = at[p * m + i];
            }
        }
        let mut b = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                b[p * n + j] = bt[j * k + p];
            }
        }
        let mut c1 = vec![0.0; m * n];
        gemm_into(m, k, n, &at, true, &bt, true, &mut c1, 0.0);
        let want = naive_matmul(m, k, n, &a, &b);
        for (x, y) in c1.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
