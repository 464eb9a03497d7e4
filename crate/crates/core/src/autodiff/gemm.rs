//! Strided matrix product on slices, backed by `matrixmultiply`.

/// A strided `rows x cols` view starting at the beginning of `data`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    /// Row-major matrix with `cols` columns.
    pub fn rows(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transpose of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    /// Row-major block at `offset` inside a wider matrix with row stride `rs`.
    pub fn block(data: &'a [f64], offset: usize, rs: usize) -> Self {
        Self { data: &data[offset..], rs, cs: 1 }
    }

    /// Transpose of [`View::block`].
    pub fn block_t(data: &'a [f64], offset: usize, rs: usize) -> Self {
        Self { data: &data[offset..], rs: 1, cs: rs }
    }

    fn check(&self, rows: usize, cols: usize) {
        if rows > 0 && cols > 0 {
            assert!((rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len(), "gemm operand out of bounds");
        }
    }
}

/// `c = alpha * a * b + beta * c` with `a: m x k`, `b: k x n` and `c: m x n`
/// stored at `c` with row stride `rsc` (column stride 1).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: View, b: View, beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    a.check(m, k);
    b.check(k, n);
    assert!((m - 1) * rsc + n - 1 < c.len(), "gemm output out of bounds");
    // SAFETY: every index touched by dgemm lies inside the slices checked
    // above, and `c` is exclusively borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// `out[n x m] += a[n x k] * b[k x m]`, all row-major.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    gemm(n, k, m, 1.0, View::rows(a, k), View::rows(b, m), 1.0, out, m);
}
