//! Finite-difference verification of the backward rules.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{no_grad, Tensor};

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compares the recorded gradient of a scalar-valued function against central
/// differences at every coordinate of `x`, returning the worst relative error
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// Run in 64-bit mode; single precision is too noisy for the quotient.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&Tensor<f64>) -> Result<Tensor<f64>>,
{
    let base = x.to_vec();
    let shape = x.shape().to_vec();

    let xp = Tensor::param(base.clone(), &shape)?;
    let loss = f(&xp)?;
    if loss.numel() != 1 {
        return Err(Error::InvalidArg(format!(
            "grad_check: function must be scalar-valued, got shape {:?}",
            loss.shape()
        )));
    }
    loss.backward()?;
    let analytic = xp
        .grad()
        .ok_or_else(|| Error::InvalidArg("grad_check: no gradient reached x".into()))?;

    let eval = |data: Vec<f64>| -> Result<f64> {
        let xi = Tensor::from_vec(data, &shape)?;
        no_grad(|| f(&xi)).map(|t| t.item())
    };

    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Central-difference check over randomly sampled coordinates of a parameter
/// set, for models too large to perturb exhaustively.
///
/// `f` must re-run the forward pass against the current parameter values.
/// Returns the worst relative error across `samples` coordinates.
pub fn grad_check_params<F, R>(
    f: F,
    params: &[(String, Tensor<f64>)],
    samples: usize,
    h: f64,
    rng: &mut R,
) -> Result<f64>
where
    F: Fn() -> Result<Tensor<f64>>,
    R: Rng,
{
    for (_, p) in params {
        p.zero_grad();
    }
    let loss = f()?;
    if loss.numel() != 1 {
        return Err(Error::InvalidArg(format!(
            "grad_check_params: function must be scalar-valued, got shape {:?}",
            loss.shape()
        )));
    }
    loss.backward()?;

    let mut worst = 0.0f64;
    for _ in 0..samples {
        let pi = rng.gen_range(0..params.len());
        let (name, p) = &params[pi];
        let grad = p
            .grad()
            .ok_or_else(|| Error::MissingGrad(name.clone()))?;
        let ci = rng.gen_range(0..p.numel());
        let analytic = grad[ci];

        let original = p.to_vec();
        let mut bumped = original.clone();
        bumped[ci] += h;
        p.set_data(bumped);
        let plus = no_grad(|| f())?.item();
        let mut bumped = original.clone();
        bumped[ci] -= h;
        p.set_data(bumped);
        let minus = no_grad(|| f())?.item();
        p.set_data(original);

        let numeric = (plus - minus) / (2.0 * h);
        worst = worst.max(rel_error(analytic, numeric));
    }
    Ok(worst)
}
