//! Central finite-difference checks of the hand-written backward passes,
//! run in 64-bit.
//!
//! Every check perturbs one scalar at a time by `±step` and compares
//! `(f(x+h) - f(x-h)) / 2h` with the analytic gradient. Perturbations that
//! flip a ReLU are skipped: the objective is not differentiable there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::model::{loss, LossInputs, SarCnnModel};
use crate::nn::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, relu_backward, relu_forward,
    BatchNormParams, BnMode, ConvParams,
};
use crate::tensor::{Dims, Tensor4};

pub const DEFAULT_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-3;

/// `|analytic - numeric| / max(|analytic|, |numeric|, REL_FLOOR)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl BlockCheck {
    fn new(name: impl Into<String>) -> Self {
        BlockCheck { name: name.into(), max_rel_error: 0.0, checked: 0, skipped: 0 }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        self.max_rel_error = self.max_rel_error.max(rel_error(analytic, numeric));
        self.checked += 1;
    }
}

/// Worst error over a set of block checks.
pub fn worst(checks: &[BlockCheck]) -> f64 {
    checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn normal_tensor(rng: &mut ChaCha8Rng, dims: Dims) -> Tensor4<f64> {
    Tensor4::from_vec(dims, normal_vec(rng, dims.len())).expect("dims match")
}

fn dot(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Checks one block; `perturb(i, h)` evaluates the objective with scalar `i`
/// shifted by `h`, or `None` when the shift crosses a kink.
fn check_block(
    name: &str,
    len: usize,
    analytic: &[f64],
    step: f64,
    mut perturb: impl FnMut(usize, f64) -> Result<Option<f64>>,
) -> Result<BlockCheck> {
    let mut check = BlockCheck::new(name);
    for i in 0..len {
        let plus = perturb(i, step)?;
        let minus = perturb(i, -step)?;
        match (plus, minus) {
            (Some(p), Some(m)) => check.record(analytic[i], (p - m) / (2.0 * step)),
            _ => check.skipped += 1,
        }
    }
    Ok(check)
}

/// Convolution backward against finite differences of `sum(g * conv(x))`.
pub fn check_conv(dims: Dims, out_channels: usize, seed: u64, step: f64) -> Result<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_tensor(&mut rng, dims);
    let w = normal_tensor(&mut rng, Dims::new(out_channels, dims.c, 3, 3));
    let b = normal_vec(&mut rng, out_channels);
    let g = normal_tensor(&mut rng, Dims::new(dims.n, out_channels, dims.h, dims.w));
    let params = ConvParams::new(w, b)?;
    let (gx, gp) = conv2d_backward(&x, &params, &g)?;
    let objective = |x: &Tensor4<f64>, p: &ConvParams<f64>| -> Result<f64> { Ok(dot(&g, &conv2d_forward(x, p, 1)?)) };

    let mut out = Vec::new();
    out.push(check_block("conv.input", x.len(), gx.data(), step, |i, h| {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        objective(&xp, &params).map(Some)
    })?);
    out.push(check_block("conv.weights", params.weights.len(), gp.weights.data(), step, |i, h| {
        let mut p = params.clone();
        p.weights.data_mut()[i] += h;
        objective(&x, &p).map(Some)
    })?);
    out.push(check_block("conv.bias", params.bias.len(), &gp.bias, step, |i, h| {
        let mut p = params.clone();
        p.bias[i] += h;
        objective(&x, &p).map(Some)
    })?);
    Ok(out)
}

/// Train-mode batch norm backward against finite differences.
pub fn check_batchnorm(dims: Dims, seed: u64, step: f64) -> Result<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_tensor(&mut rng, dims).map(|v| 0.5 + 2.0 * v);
    let g = normal_tensor(&mut rng, dims);
    let mut params = BatchNormParams::<f64>::new(dims.c);
    params.gamma = normal_vec(&mut rng, dims.c);
    params.beta = normal_vec(&mut rng, dims.c);
    let (_, cache) = batchnorm_forward(&x, &mut params.clone(), BnMode::Train)?;
    let (gx, ggamma, gbeta) = batchnorm_backward(&cache, &g)?;
    let objective = |x: &Tensor4<f64>, p: &BatchNormParams<f64>| -> Result<f64> {
        let (y, _) = batchnorm_forward(x, &mut p.clone(), BnMode::Train)?;
        Ok(dot(&g, &y))
    };

    let mut out = Vec::new();
    out.push(check_block("batchnorm.input", x.len(), gx.data(), step, |i, h| {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        objective(&xp, &params).map(Some)
    })?);
    out.push(check_block("batchnorm.gamma", dims.c, &ggamma, step, |i, h| {
        let mut p = params.clone();
        p.gamma[i] += h;
        objective(&x, &p).map(Some)
    })?);
    out.push(check_block("batchnorm.beta", dims.c, &gbeta, step, |i, h| {
        let mut p = params.clone();
        p.beta[i] += h;
        objective(&x, &p).map(Some)
    })?);
    Ok(out)
}

/// ReLU backward on inputs kept at least `1e-3` away from zero.
pub fn check_relu(dims: Dims, seed: u64, step: f64) -> Result<BlockCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_tensor(&mut rng, dims).map(|v| if v.abs() < 1e-3 { v.signum() * 1e-3 + v } else { v });
    let g = normal_tensor(&mut rng, dims);
    let gx = relu_backward(&x, &g)?;
    check_block("relu.input", x.len(), gx.data(), step, |i, h| {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        Ok(Some(dot(&g, &relu_forward(&xp)?)))
    })
}

/// Loss gradient with respect to the predicted residual.
pub fn check_loss(dims: Dims, seed: u64, step: f64) -> Result<BlockCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pred = normal_tensor(&mut rng, dims);
    let ratio = normal_tensor(&mut rng, dims);
    let c = rng.gen_range(-1.0..0.0);
    let (_, grad) = loss(&LossInputs { residual_pred: &pred, log_ratio: &ratio, c })?;
    check_block("loss.residual", pred.len(), grad.data(), step, |i, h| {
        let mut p = pred.clone();
        p.data_mut()[i] += h;
        Ok(Some(loss(&LossInputs { residual_pred: &p, log_ratio: &ratio, c })?.0))
    })
}

/// Gradient of `loss(forward(x))` for every parameter block and the input of
/// a freshly built model with randomized biases and batch-norm affine terms.
pub fn check_model(depth: usize, width: usize, dims: Dims, seed: u64, step: f64) -> Result<Vec<BlockCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = SarCnnModel::<f64>::build(depth, width, rng.gen())?;
    for block in model.params_mut() {
        if block.len() <= width {
            // biases and batch-norm terms start at 0/1; make them generic
            block.iter_mut().for_each(|v| *v += 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
    }
    model.set_training(true);
    let x = normal_tensor(&mut rng, dims);
    let ratio = normal_tensor(&mut rng, dims).map(|v| 0.5 * v);
    let c = -0.2886;

    let eval = |m: &SarCnnModel<f64>, x: &Tensor4<f64>| -> Result<(f64, Vec<bool>)> {
        let mut m = m.clone();
        let (pred, trace) = m.forward_train(x)?;
        let value = loss(&LossInputs { residual_pred: &pred, log_ratio: &ratio, c })?.0;
        Ok((value, trace.active_units()))
    };
    let (pred, trace) = model.clone().forward_train(&x)?;
    let pattern = trace.active_units();
    let (_, grad) = loss(&LossInputs { residual_pred: &pred, log_ratio: &ratio, c })?;
    let grads = model.backward(&trace, &grad)?;
    let smooth = |(value, units): (f64, Vec<bool>)| (units == pattern).then_some(value);

    let names = block_names(&model);
    let analytic: Vec<Vec<f64>> = grads.flat().iter().map(|g| g.to_vec()).collect();
    let mut out = Vec::new();
    for (k, (name, a)) in names.iter().zip(&analytic).enumerate() {
        out.push(check_block(name, a.len(), a, step, |i, h| {
            let mut m = model.clone();
            m.params_mut()[k][i] += h;
            eval(&m, &x).map(smooth)
        })?);
    }
    out.push(check_block("input", x.len(), grads.input.data(), step, |i, h| {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        eval(&model, &xp).map(smooth)
    })?);
    Ok(out)
}

fn block_names(model: &SarCnnModel<f64>) -> Vec<String> {
    let mut names = Vec::new();
    for (i, layer) in model.layers().iter().enumerate() {
        names.push(format!("layer{}.weights", i + 1));
        names.push(format!("layer{}.bias", i + 1));
        if layer.norm.is_some() {
            names.push(format!("layer{}.gamma", i + 1));
            names.push(format!("layer{}.beta", i + 1));
        }
    }
    names
}
