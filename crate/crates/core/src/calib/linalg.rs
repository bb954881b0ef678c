use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network.
pub trait Real: Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + 'static {
    /// `C = alpha * A * B + beta * C` with arbitrary strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-overlapping matrices
    /// of the given sizes.
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

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("representable")
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

fn beta<T: Real>(accumulate: bool) -> T {
    if accumulate {
        T::one()
    } else {
        T::zero()
    }
}

/// `out[m×n] (+)= a[m×k] · b[n×k]ᵀ`, all row-major.
pub(crate) fn matmul_abt<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], out: &mut [T], accumulate: bool) {
    assert!(a.len() == m * k && b.len() == n * k && out.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: lengths checked above; `out` is a distinct mutable slice.
    unsafe {
        T::gemm(
            m, k, n, T::one(), a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize,
            beta(accumulate), out.as_mut_ptr(), n as isize, 1,
        )
    }
}

/// `out[m×k] (+)= a[m×n] · b[n×k]`, all row-major.
pub(crate) fn matmul_ab<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], out: &mut [T], accumulate: bool) {
    assert!(a.len() == m * n && b.len() == n * k && out.len() == m * k);
    if m == 0 || k == 0 {
        return;
    }
    // SAFETY: lengths checked above.
    unsafe {
        T::gemm(
            m, n, k, T::one(), a.as_ptr(), n as isize, 1, b.as_ptr(), k as isize, 1,
            beta(accumulate), out.as_mut_ptr(), k as isize, 1,
        )
    }
}

/// `out[n×k] (+)= a[m×n]ᵀ · b[m×k]`, all row-major.
pub(crate) fn matmul_atb<T: Real>(m: usize, n: usize, k: usize, a: &[T], b: &[T], out: &mut [T], accumulate: bool) {
    assert!(a.len() == m * n && b.len() == m * k && out.len() == n * k);
    if n == 0 || k == 0 {
        return;
    }
    // SAFETY: lengths checked above.
    unsafe {
        T::gemm(
            n, m, k, T::one(), a.as_ptr(), 1, n as isize, b.as_ptr(), k as isize, 1,
            beta(accumulate), out.as_mut_ptr(), k as isize, 1,
        )
    }
}
