//! Per-channel batch normalization over (N, H, W).

use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{Real, Tensor4};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: T,
    /// Weight of the previous running statistic in the EMA update.
    pub momentum: T,
}

impl<T: Real> BatchNormParams<T> {
    /// Identity affine transform with running statistics (0, 1).
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: T::lit(DEFAULT_EPSILON),
            momentum: T::lit(DEFAULT_MOMENTUM),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// State saved by a forward pass for [`batchnorm_backward`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    mode: BnMode,
    x_hat: Option<Tensor4<T>>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
}

impl<T> BatchNormCache<T> {
    pub fn mode(&self) -> BnMode {
        self.mode
    }
}

/// Per-channel sums over every item and pixel, reduced in item order.
fn channel_sums<T: Real>(x: &Tensor4<T>, f: impl Fn(usize, T) -> T + Sync + Send) -> Vec<T> {
    let d = x.dims();
    let hw = d.plane();
    let partial: Vec<Vec<T>> = exec::map_indices(
        d.n,
        || (),
        |_, i| {
            x.item(i)
                .chunks(hw)
                .enumerate()
                .map(|(c, plane)| plane.iter().map(|&v| f(c, v)).sum())
                .collect()
        },
    );
    let mut total = vec![T::zero(); d.c];
    for p in &partial {
        total.iter_mut().zip(p).for_each(|(t, &v)| *t = *t + v);
    }
    total
}

fn check_channels<T: Real>(x: &Tensor4<T>, params: &BatchNormParams<T>) -> Result<()> {
    if x.dims().c != params.channels() {
        return Err(Error::shape(format!(
            "input has {} channels, batch norm has {}",
            x.dims().c,
            params.channels()
        )));
    }
    Ok(())
}

/// Normalizes `x` per channel and applies the affine transform.
///
/// In train mode batch statistics are used and the running statistics are
/// updated (the running variance uses the unbiased estimate). In infer mode
/// only the running statistics are read and the returned cache cannot be
/// used for a backward pass.
pub fn batchnorm_forward<T: Real>(
    x: &Tensor4<T>,
    params: &mut BatchNormParams<T>,
    mode: BnMode,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    check_channels(x, params)?;
    x.ensure_finite("batchnorm input")?;
    let d = x.dims();
    let hw = d.plane();
    match mode {
        BnMode::Infer => {
            let y = batchnorm_infer(x, params)?;
            Ok((
                y,
                BatchNormCache { mode, x_hat: None, inv_std: Vec::new(), gamma: Vec::new() },
            ))
        }
        BnMode::Train => {
            let count = d.n * hw;
            if count < 2 {
                return Err(Error::DegenerateVariance(format!(
                    "train mode needs at least 2 samples per channel, got {count}"
                )));
            }
            let m = T::from_usize(count).unwrap();
            let mean: Vec<T> = channel_sums(x, |_, v| v).into_iter().map(|s| s / m).collect();
            let var: Vec<T> = channel_sums(x, |c, v| (v - mean[c]) * (v - mean[c]))
                .into_iter()
                .map(|s| s / m)
                .collect();
            let inv_std: Vec<T> = var.iter().map(|&v| (v + params.epsilon).sqrt().recip()).collect();

            let mut x_hat = Tensor4::zeros(d)?;
            exec::for_each_chunk(x_hat.data_mut(), d.item_len(), || (), |_, i, out| {
                for (c, (dst, src)) in out.chunks_mut(hw).zip(x.item(i).chunks(hw)).enumerate() {
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o = (v - mean[c]) * inv_std[c];
                    }
                }
            });
            let mut y = x_hat.clone();
            let (gamma, beta) = (&params.gamma, &params.beta);
            exec::for_each_chunk(y.data_mut(), d.item_len(), || (), |_, _, out| {
                for (c, plane) in out.chunks_mut(hw).enumerate() {
                    plane.iter_mut().for_each(|v| *v = gamma[c] * *v + beta[c]);
                }
            });

            let unbias = m / (m - T::one());
            let keep = params.momentum;
            for c in 0..d.c {
                params.running_mean[c] = keep * params.running_mean[c] + (T::one() - keep) * mean[c];
                params.running_var[c] =
                    keep * params.running_var[c] + (T::one() - keep) * var[c] * unbias;
            }
            Ok((
                y,
                BatchNormCache {
                    mode,
                    x_hat: Some(x_hat),
                    inv_std,
                    gamma: params.gamma.clone(),
                },
            ))
        }
    }
}

/// Inference-mode normalization with the running statistics; read-only.
pub fn batchnorm_infer<T: Real>(x: &Tensor4<T>, params: &BatchNormParams<T>) -> Result<Tensor4<T>> {
    check_channels(x, params)?;
    let d = x.dims();
    let hw = d.plane();
    let (scale, shift): (Vec<T>, Vec<T>) = (0..d.c)
        .map(|c| {
            let s = params.gamma[c] / (params.running_var[c] + params.epsilon).sqrt();
            (s, params.beta[c] - s * params.running_mean[c])
        })
        .unzip();
    let mut y = x.clone();
    exec::for_each_chunk(y.data_mut(), d.item_len(), || (), |_, _, out| {
        for (c, plane) in out.chunks_mut(hw).enumerate() {
            plane.iter_mut().for_each(|v| *v = scale[c] * *v + shift[c]);
        }
    });
    Ok(y)
}

/// Returns `(grad_x, grad_gamma, grad_beta)` for a train-mode forward.
pub fn batchnorm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    grad_out: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let x_hat = match (&cache.mode, &cache.x_hat) {
        (BnMode::Train, Some(x_hat)) => x_hat,
        _ => return Err(Error::usage("batchnorm backward needs a train-mode forward cache")),
    };
    let d = x_hat.dims();
    if grad_out.dims() != d {
        return Err(Error::shape(format!(
            "grad_out dims {:?} do not match cached forward {:?}",
            grad_out.dims(),
            d
        )));
    }
    grad_out.ensure_finite("batchnorm grad_out")?;
    let hw = d.plane();
    let grad_beta = channel_sums(grad_out, |_, v| v);
    let grad_gamma = {
        let partial: Vec<Vec<T>> = exec::map_indices(d.n, || (), |_, i| {
            grad_out
                .item(i)
                .chunks(hw)
                .zip(x_hat.item(i).chunks(hw))
                .map(|(g, xh)| g.iter().zip(xh).map(|(&a, &b)| a * b).sum())
                .collect()
        });
        let mut total = vec![T::zero(); d.c];
        for p in &partial {
            total.iter_mut().zip(p).for_each(|(t, &v)| *t = *t + v);
        }
        total
    };
    let m = T::from_usize(d.n * hw).unwrap();
    let mut grad_x = Tensor4::zeros(d)?;
    exec::for_each_chunk(grad_x.data_mut(), d.item_len(), || (), |_, i, out| {
        let planes = out
            .chunks_mut(hw)
            .zip(grad_out.item(i).chunks(hw))
            .zip(x_hat.item(i).chunks(hw));
        for (c, ((dst, g), xh)) in planes.enumerate() {
            let k = cache.gamma[c] * cache.inv_std[c] / m;
            for ((o, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
                *o = k * (m * gv - grad_beta[c] - xv * grad_gamma[c]);
            }
        }
    });
    Ok((grad_x, grad_gamma, grad_beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Dims, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_vec(dims, (0..dims.len()).map(|_| rng.gen_range(-3.0..5.0)).collect())
            .unwrap()
    }

    #[test]
    fn train_mode_standardizes_each_channel() {
        let x = random(Dims::new(3, 2, 5, 4), 1);
        let mut p = BatchNormParams::<f64>::new(2);
        let (y, _) = batchnorm_forward(&x, &mut p, BnMode::Train).unwrap();
        let hw = 20;
        for c in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|n| y.item(n)[c * hw..(c + 1) * hw].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() <= 1e-6, "{mean}");
            // epsilon shrinks the variance slightly below one.
            assert!((var - 1.0).abs() <= 1e-5, "{var}");
        }
    }

    #[test]
    fn infer_with_identity_statistics_is_near_identity() {
        let x = random(Dims::new(2, 3, 4, 4), 2);
        let mut p = BatchNormParams::<f64>::new(3);
        let (y, cache) = batchnorm_forward(&x, &mut p, BnMode::Infer).unwrap();
        let scale = 1.0 / (1.0 + DEFAULT_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-12);
        }
        assert!(matches!(batchnorm_backward(&cache, &y), Err(Error::Usage(_))));
    }

    #[test]
    fn running_stats_follow_ema() {
        let x = random(Dims::new(4, 1, 3, 3), 3);
        let mut p = BatchNormParams::<f64>::new(1);
        batchnorm_forward(&x, &mut p, BnMode::Train).unwrap();
        let vals = x.data();
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((p.running_mean[0] - 0.1 * mean).abs() < 1e-12);
        assert!((p.running_var[0] - (0.9 + 0.1 * var)).abs() < 1e-12);
        assert!(p.running_var[0] >= 0.0);
    }

    #[test]
    fn single_sample_per_channel_is_degenerate() {
        let x = random(Dims::new(1, 2, 1, 1), 4);
        let mut p = BatchNormParams::<f64>::new(2);
        assert!(matches!(
            batchnorm_forward(&x, &mut p, BnMode::Train),
            Err(Error::DegenerateVariance(_))
        ));
        // infer mode has no such restriction
        assert!(batchnorm_forward(&x, &mut p, BnMode::Infer).is_ok());
    }

    #[test]
    fn backward_rejects_mismatched_gradient() {
        let x = random(Dims::new(2, 1, 3, 3), 5);
        let mut p = BatchNormParams::<f64>::new(1);
        let (_, cache) = batchnorm_forward(&x, &mut p, BnMode::Train).unwrap();
        let g = Tensor4::zeros(Dims::new(1, 1, 3, 3)).unwrap();
        assert!(matches!(batchnorm_backward(&cache, &g), Err(Error::Shape(_))));
    }
}
