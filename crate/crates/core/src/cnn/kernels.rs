//! Strided matrix product used by the conv and dense layers.

/// Read-only strided view: element `(i, j)` is `data[i * rs + j * cs]`.
/// Rows may overlap, which lets a valid convolution read its windows in place.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], rs: usize, cs: usize) -> Self {
        View { data, rs, cs }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len()
    }
}

/// `out += a · b` where `a` is `m x k`, `b` is `k x n` and `out` is a dense
/// row-major `m x n` matrix.
pub(crate) fn matmul_acc(a: View, b: View, m: usize, k: usize, n: usize, out: &mut [f64]) {
    assert!(
        a.fits(m, k) && b.fits(k, n) && out.len() >= m * n,
        "matmul operands out of bounds"
    );
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the assertion above keeps every strided access inside its slice,
    // and `out` is a unique borrow disjoint from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
