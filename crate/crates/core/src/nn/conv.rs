//! 3x3 same-padded cross-correlation.
//!
//! Each batch item is lowered to column form (`im2col`) one strip of rows at a
//! time and multiplied against the flattened kernel. Weight gradients are
//! accumulated per item and summed in item order.

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{gemm, Dims, MatRef, Real, Tensor4};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Upper bound on the column buffer size per strip, in elements.
const STRIP_ELEMS: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams<T> {
    /// Shape (out_channels, in_channels, 3, 3).
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub weights: Tensor4<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvParams<T> {
    pub fn new(weights: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let d = weights.dims();
        if d.h != KERNEL || d.w != KERNEL {
            return Err(Error::shape(format!("kernel must be 3x3, got {}x{}", d.h, d.w)));
        }
        if bias.len() != d.n {
            return Err(Error::shape(format!(
                "bias has {} entries for {} output channels",
                bias.len(),
                d.n
            )));
        }
        weights.ensure_finite("conv weights")?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::numeric("conv bias is not finite"));
        }
        Ok(ConvParams { weights, bias })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Result<Self> {
        Ok(ConvParams {
            weights: Tensor4::zeros(Dims::new(out_channels, in_channels, KERNEL, KERNEL))?,
            bias: vec![T::zero(); out_channels],
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims().n
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims().c
    }

    fn fan(&self) -> usize {
        self.in_channels() * TAPS
    }
}

fn strip_rows(k: usize, w: usize, h: usize) -> usize {
    (STRIP_ELEMS / (k * w).max(1)).clamp(1, h)
}

/// Writes the column form of rows `r0..r1` of a (cin, h, w) item into `cols`
/// as a (cin*9) x ((r1-r0)*w) row-major matrix.
fn im2col<T: Real>(x: &[T], cin: usize, h: usize, w: usize, r0: usize, r1: usize, cols: &mut [T]) {
    let n = (r1 - r0) * w;
    for ci in 0..cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[(ci * TAPS + ky * KERNEL + kx) * n..][..n];
                for (ri, r) in (r0..r1).enumerate() {
                    let dst = &mut row[ri * w..(ri + 1) * w];
                    let src_row = r + ky;
                    if src_row < 1 || src_row > h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[(src_row - 1) * w..src_row * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the item.
fn col2im<T: Real>(cols: &[T], cin: usize, h: usize, w: usize, r0: usize, r1: usize, gx: &mut [T]) {
    let n = (r1 - r0) * w;
    for ci in 0..cin {
        let plane = &mut gx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[(ci * TAPS + ky * KERNEL + kx) * n..][..n];
                for (ri, r) in (r0..r1).enumerate() {
                    let src_row = r + ky;
                    if src_row < 1 || src_row > h {
                        continue;
                    }
                    let g = &row[ri * w..(ri + 1) * w];
                    let dst = &mut plane[(src_row - 1) * w..src_row * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&g[1..]).for_each(|(d, &s)| *d = *d + s),
                        1 => dst.iter_mut().zip(g).for_each(|(d, &s)| *d = *d + s),
                        _ => dst[1..].iter_mut().zip(&g[..w - 1]).for_each(|(d, &s)| *d = *d + s),
                    }
                }
            }
        }
    }
}

fn check_input<T: Real>(input: &Tensor4<T>, params: &ConvParams<T>, pad: usize) -> Result<()> {
    if pad != 1 {
        return Err(Error::usage(format!("only pad = 1 is supported for 3x3 kernels, got {pad}")));
    }
    if input.dims().c != params.in_channels() {
        return Err(Error::shape(format!(
            "input has {} channels, kernel expects {}",
            input.dims().c,
            params.in_channels()
        )));
    }
    Ok(())
}

/// Same-size cross-correlation of `input` with `params`, zero padding `pad` (must be 1).
pub fn conv2d_forward<T: Real>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    pad: usize,
) -> Result<Tensor4<T>> {
    check_input(input, params, pad)?;
    input.ensure_finite("conv2d input")?;
    let d = input.dims();
    let cout = params.out_channels();
    let k = params.fan();
    let hw = d.plane();
    let out_dims = Dims::new(d.n, cout, d.h, d.w);
    let mut out = Tensor4::zeros(out_dims)?;
    let rows = strip_rows(k, d.w, d.h);
    let weights = params.weights.data();

    exec::for_each_chunk(
        out.data_mut(),
        out_dims.item_len(),
        Vec::<T>::new,
        |cols, i, out_item| {
            let x = input.item(i);
            for (co, plane) in out_item.chunks_mut(hw).enumerate() {
                plane.fill(params.bias[co]);
            }
            let mut r0 = 0;
            while r0 < d.h {
                let r1 = (r0 + rows).min(d.h);
                let n = (r1 - r0) * d.w;
                cols.resize(k * n, T::zero());
                im2col(x, d.c, d.h, d.w, r0, r1, cols);
                gemm(
                    cout,
                    k,
                    n,
                    MatRef { data: weights, row_stride: k, col_stride: 1 },
                    MatRef { data: cols, row_stride: n, col_stride: 1 },
                    T::one(),
                    &mut out_item[r0 * d.w..],
                    hw,
                    1,
                );
                r0 = r1;
            }
        },
    );
    Ok(out)
}

/// Gradients of `sum(grad_output * conv2d_forward(input))` with respect to the
/// input, the weights, and the bias.
pub fn conv2d_backward<T: Real>(
    input: &Tensor4<T>,
    params: &ConvParams<T>,
    grad_output: &Tensor4<T>,
) -> Result<(Tensor4<T>, ConvGrads<T>)> {
    check_input(input, params, 1)?;
    let d = input.dims();
    let cout = params.out_channels();
    let expected = Dims::new(d.n, cout, d.h, d.w);
    if grad_output.dims() != expected {
        return Err(Error::shape(format!(
            "grad_output dims {:?}, expected {:?}",
            grad_output.dims(),
            expected
        )));
    }
    grad_output.ensure_finite("conv2d grad_output")?;
    let k = params.fan();
    let hw = d.plane();
    let rows = strip_rows(k, d.w, d.h);
    let weights = params.weights.data();

    let mut grad_input = Tensor4::zeros(d)?;
    let per_item: Vec<(Vec<T>, Vec<T>)> = exec::map_indices(
        d.n,
        Vec::<T>::new,
        |cols, i| {
            let x = input.item(i);
            let go = grad_output.item(i);
            let mut gw = vec![T::zero(); cout * k];
            let gb: Vec<T> = go.chunks(hw).map(|p| p.iter().copied().sum()).collect();
            let mut r0 = 0;
            while r0 < d.h {
                let r1 = (r0 + rows).min(d.h);
                let n = (r1 - r0) * d.w;
                cols.resize(k * n, T::zero());
                im2col(x, d.c, d.h, d.w, r0, r1, cols);
                // gw[cout x k] += go[cout x n] * cols^T[n x k]
                gemm(
                    cout,
                    n,
                    k,
                    MatRef { data: &go[r0 * d.w..], row_stride: hw, col_stride: 1 },
                    MatRef { data: cols, row_stride: 1, col_stride: n },
                    T::one(),
                    &mut gw,
                    k,
                    1,
                );
                r0 = r1;
            }
            (gw, gb)
        },
    );

    exec::for_each_chunk(
        grad_input.data_mut(),
        d.item_len(),
        Vec::<T>::new,
        |gcols, i, gx| {
            let go = grad_output.item(i);
            let mut r0 = 0;
            while r0 < d.h {
                let r1 = (r0 + rows).min(d.h);
                let n = (r1 - r0) * d.w;
                gcols.resize(k * n, T::zero());
                // gcols[k x n] = W^T[k x cout] * go[cout x n]
                gemm(
                    k,
                    cout,
                    n,
                    MatRef { data: weights, row_stride: 1, col_stride: k },
                    MatRef { data: &go[r0 * d.w..], row_stride: hw, col_stride: 1 },
                    T::zero(),
                    gcols,
                    n,
                    1,
                );
                col2im(gcols, d.c, d.h, d.w, r0, r1, gx);
                r0 = r1;
            }
        },
    );

    let mut gw = vec![T::zero(); cout * k];
    let mut gb = vec![T::zero(); cout];
    for (iw, ib) in &per_item {
        gw.iter_mut().zip(iw).for_each(|(a, &b)| *a = *a + b);
        gb.iter_mut().zip(ib).for_each(|(a, &b)| *a = *a + b);
    }
    let grads = ConvGrads {
        weights: Tensor4::from_vec(params.weights.dims(), gw)?,
        bias: gb,
    };
    Ok((grad_input, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Dims, rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_vec(dims, (0..dims.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Direct quadruple loop, written independently of the im2col path.
    fn naive(x: &Tensor4<f64>, p: &ConvParams<f64>) -> Tensor4<f64> {
        let d = x.dims();
        let cout = p.out_channels();
        let mut out = Tensor4::zeros(Dims::new(d.n, cout, d.h, d.w)).unwrap();
        for n in 0..d.n {
            for co in 0..cout {
                for r in 0..d.h as isize {
                    for c in 0..d.w as isize {
                        let mut acc = p.bias[co];
                        for ci in 0..d.c {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sr, sc) = (r + ky - 1, c + kx - 1);
                                    if sr < 0 || sc < 0 || sr >= d.h as isize || sc >= d.w as isize {
                                        continue;
                                    }
                                    acc += p.weights.get(co, ci, ky as usize, kx as usize)
                                        * x.get(n, ci, sr as usize, sc as usize);
                                }
                            }
                        }
                        out.set(n, co, r as usize, c as usize, acc);
                    }
                }
            }
        }
        out
    }

    fn params(cout: usize, cin: usize, rng: &mut ChaCha8Rng) -> ConvParams<f64> {
        let w = random(Dims::new(cout, cin, 3, 3), rng);
        let b = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
        ConvParams::new(w, b).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(Dims::new(2, 1, 5, 7), &mut rng);
        let mut p = ConvParams::<f64>::zeros(1, 1).unwrap();
        p.weights.set(0, 0, 1, 1, 1.0);
        let y = conv2d_forward(&x, &p, 1).unwrap();
        assert_eq!(y, x);
        let (gx, _) = conv2d_backward(&x, &p, &y).unwrap();
        assert_eq!(gx, y);
    }

    #[test]
    fn all_ones_counts_window_overlap() {
        let x = Tensor4::full(Dims::new(1, 1, 3, 3), 1.0f64).unwrap();
        let p = ConvParams::new(Tensor4::full(Dims::new(1, 1, 3, 3), 1.0).unwrap(), vec![0.0])
            .unwrap();
        let y = conv2d_forward(&x, &p, 1).unwrap();
        assert_eq!(y.get(0, 0, 1, 1), 9.0);
        for (r, c) in [(0, 0), (0, 2), (2, 0), (2, 2)] {
            assert_eq!(y.get(0, 0, r, c), 4.0);
        }
        assert_eq!(y.get(0, 0, 0, 1), 6.0);
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(Dims::new(2, 3, 8, 8), &mut rng);
        let p = params(4, 3, &mut rng);
        let fast = conv2d_forward(&x, &p, 1).unwrap();
        let slow = naive(&x, &p);
        for (a, b) in fast.data().iter().zip(slow.data()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(Dims::new(2, 2, 4, 5), &mut rng);
        let p = params(3, 2, &mut rng);
        let go = Tensor4::zeros(Dims::new(2, 3, 4, 5)).unwrap();
        let (gx, g) = conv2d_backward(&x, &p, &go).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(Dims::new(1, 2, 4, 4), &mut rng);
        let p = params(1, 3, &mut rng);
        assert!(matches!(conv2d_forward(&x, &p, 1), Err(Error::Shape(_))));
        let p = params(1, 2, &mut rng);
        assert!(matches!(conv2d_forward(&x, &p, 0), Err(Error::Usage(_))));
        let mut bad = x.clone();
        bad.data_mut()[5] = f64::INFINITY;
        assert!(matches!(conv2d_forward(&bad, &p, 1), Err(Error::Numeric(_))));
        let go = Tensor4::zeros(Dims::new(1, 2, 4, 4)).unwrap();
        assert!(matches!(conv2d_backward(&x, &p, &go), Err(Error::Shape(_))));
    }

    #[test]
    fn single_row_and_column_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dims in [Dims::new(1, 2, 1, 6), Dims::new(1, 2, 6, 1), Dims::new(1, 2, 1, 1)] {
            let x = random(dims, &mut rng);
            let p = params(2, 2, &mut rng);
            let fast = conv2d_forward(&x, &p, 1).unwrap();
            let slow = naive(&x, &p);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
