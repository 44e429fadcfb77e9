//! Dense 4-D tensors in (batch, channel, height, width) order.

use std::fmt::{self, Debug};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type of the numeric kernels.
///
/// `f32` is the production precision; `f64` is used for gradient
/// verification where finite differences need the extra headroom.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c <- alpha * a * b + beta * c` on strided row/column-major views.
    ///
    /// # Safety
    /// Every index reachable through the given dims and strides must be in
    /// bounds of the respective pointer.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
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

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    unsafe fn gemm_raw(
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

impl Real for f64 {
    const NAME: &'static str = "f64";

    unsafe fn gemm_raw(
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

/// A strided read-only matrix view over a slice.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Bounds-checked GEMM: `c[m x n] <- a[m x k] * b[k x n] + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: MatRef<'_, T>,
    b: MatRef<'_, T>,
    beta: T,
    c: &mut [T],
    rsc: usize,
    csc: usize,
) {
    assert!(a.data.len() >= span(m, k, a.row_stride, a.col_stride));
    assert!(b.data.len() >= span(k, n, b.row_stride, b.col_stride));
    assert!(c.len() >= span(m, n, rsc, csc));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above cover every element addressed by the kernel.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        )
    }
}

/// Tensor dimensions.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Dims { n, c, h, w }
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }
}

impl Debug for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor4<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor4")
            .field("dims", &self.dims)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor4<T> {
    pub fn zeros(dims: Dims) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(Tensor4 {
            dims,
            data: vec![T::zero(); dims.len()],
        })
    }

    pub fn full(dims: Dims, value: T) -> Result<Self> {
        Self::check_dims(dims)?;
        Ok(Tensor4 {
            dims,
            data: vec![value; dims.len()],
        })
    }

    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        Self::check_dims(dims)?;
        if data.len() != dims.len() {
            return Err(Error::shape(format!(
                "{} values supplied for dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    fn check_dims(dims: Dims) -> Result<()> {
        if dims.n == 0 || dims.c == 0 || dims.h == 0 || dims.w == 0 {
            return Err(Error::shape(format!("all dims must be >= 1, got {dims:?}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn item(&self, i: usize) -> &[T] {
        let len = self.dims.item_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        let d = self.dims;
        self.data[((n * d.c + c) * d.h + h) * d.w + w]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let d = self.dims;
        self.data[((n * d.c + c) * d.h + h) * d.w + w] = value;
    }

    /// Fails with a numeric error naming `context` if any value is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::numeric(format!(
                "{context}: non-finite value at flat index {i}"
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            dims: self.dims,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            dims: self.dims,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap_or_else(U::nan))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_dims_and_wrong_length() {
        assert!(Tensor4::<f32>::zeros(Dims::new(0, 1, 2, 2)).is_err());
        assert!(Tensor4::<f32>::from_vec(Dims::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn indexing_is_row_major_nchw() {
        let t = Tensor4::from_vec(Dims::new(2, 2, 2, 3), (0..24).map(|v| v as f64).collect())
            .unwrap();
        assert_eq!(t.get(1, 0, 1, 2), 17.0);
        assert_eq!(t.item(1)[0], 12.0);
    }

    #[test]
    fn finite_check_reports_position() {
        let mut t = Tensor4::<f32>::zeros(Dims::new(1, 1, 2, 2)).unwrap();
        assert!(t.ensure_finite("x").is_ok());
        t.data_mut()[3] = f32::NAN;
        let err = t.ensure_finite("x").unwrap_err().to_string();
        assert!(err.contains("index 3"), "{err}");
    }
}
