//! Central finite-difference checks for analytic gradients.

use crate::error::{Error, Result};
use crate::nn::{Batch, BatchNormParams, ConvLayer, DenseLayer};

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Worst relative error between `analytic` and the central difference of
/// `loss` around `params`, perturbing one coordinate at a time.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], step: f64, mut loss: F) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-6..=1e-3).contains(&step) {
        return Err(Error::Parameter(format!("finite-difference step {step} outside [1e-6, 1e-3]")));
    }
    if params.len() != analytic.len() {
        return Err(Error::shape(format!("{} parameters vs {} analytic gradients", params.len(), analytic.len())));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = loss(&probe);
        probe[i] = params[i] - step;
        let down = loss(&probe);
        probe[i] = params[i];
        let numeric = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Fixed projection weights turning a layer output into a scalar loss.
pub fn projection(len: usize) -> Vec<f64> {
    (0..len).map(|i| (0.7 * i as f64 + 0.3).sin()).collect()
}

fn project(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(a, b)| a * b).sum()
}

/// Checks kernel, bias and input gradients of a convolution.
pub fn conv_layer_error(layer: &ConvLayer<f64>, input: &Batch<f64>, step: f64) -> Result<f64> {
    let (y, cache) = layer.forward_train(input)?;
    let r = projection(y.data.len());
    let grad_out = Batch::new(y.n, y.height, y.width, y.channels, r.clone())?;
    let (dx, grads) = layer.backward(&cache, &grad_out)?;
    let loss_of = |l: &ConvLayer<f64>, x: &Batch<f64>| l.forward(x).map(|y| project(&y.data, &r)).unwrap_or(f64::NAN);

    let kernel_err = grad_check(&layer.kernel, &grads.kernel, step, |k| {
        let mut l = layer.clone();
        l.kernel.copy_from_slice(k);
        loss_of(&l, input)
    })?;
    let bias_err = grad_check(&layer.bias, &grads.bias, step, |b| {
        let mut l = layer.clone();
        l.bias.copy_from_slice(b);
        loss_of(&l, input)
    })?;
    let input_err = grad_check(&input.data, &dx.data, step, |v| {
        let mut x = input.clone();
        x.data.copy_from_slice(v);
        loss_of(layer, &x)
    })?;
    Ok(kernel_err.max(bias_err).max(input_err))
}

/// Checks weight, bias and input gradients of a dense layer.
pub fn dense_layer_error(layer: &DenseLayer<f64>, input: &Batch<f64>, step: f64) -> Result<f64> {
    let (y, cache) = layer.forward_train(input)?;
    let r = projection(y.data.len());
    let grad_out = Batch::vectors(y.n, y.channels, r.clone())?;
    let (dx, grads) = layer.backward(&cache, &grad_out)?;
    let loss_of = |l: &DenseLayer<f64>, x: &Batch<f64>| l.forward(x).map(|y| project(&y.data, &r)).unwrap_or(f64::NAN);

    let w_err = grad_check(&layer.weights, &grads.weights, step, |w| {
        let mut l = layer.clone();
        l.weights.copy_from_slice(w);
        loss_of(&l, input)
    })?;
    let b_err = grad_check(&layer.bias, &grads.bias, step, |b| {
        let mut l = layer.clone();
        l.bias.copy_from_slice(b);
        loss_of(&l, input)
    })?;
    let x_err = grad_check(&input.data, &dx.data, step, |v| {
        let mut x = input.clone();
        x.data.copy_from_slice(v);
        loss_of(layer, &x)
    })?;
    Ok(w_err.max(b_err).max(x_err))
}

/// Checks gamma, beta and input gradients of train-mode batch norm.
pub fn batch_norm_error(params: &BatchNormParams<f64>, input: &Batch<f64>, step: f64) -> Result<f64> {
    let mut bn = params.clone();
    let (y, cache) = bn.forward_train(input)?;
    let r = projection(y.data.len());
    let grad_out = Batch::new(y.n, y.height, y.width, y.channels, r.clone())?;
    let (dx, grads) = bn.backward(&cache, &grad_out)?;
    let loss_of = |p: &BatchNormParams<f64>, x: &Batch<f64>| {
        let mut p = p.clone();
        p.forward_train(x).map(|(y, _)| project(&y.data, &r)).unwrap_or(f64::NAN)
    };

    let g_err = grad_check(&params.gamma, &grads.gamma, step, |g| {
        let mut p = params.clone();
        p.gamma.copy_from_slice(g);
        loss_of(&p, input)
    })?;
    let b_err = grad_check(&params.beta, &grads.beta, step, |b| {
        let mut p = params.clone();
        p.beta.copy_from_slice(b);
        loss_of(&p, input)
    })?;
    let x_err = grad_check(&input.data, &dx.data, step, |v| {
        let mut x = input.clone();
        x.data.copy_from_slice(v);
        loss_of(params, &x)
    })?;
    Ok(g_err.max(b_err).max(x_err))
}
