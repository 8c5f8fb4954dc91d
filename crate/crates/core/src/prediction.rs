//! Point prediction of θ_i and of the area mean μ_i = h_λ^{-1}(θ_i).
//!
//! Given the data, θ_i | y_i ~ N(θ̃_i, σ_i²) with
//! θ̃_i = γ_i h_λ(y_i) + (1 − γ_i) x_i'β, γ_i = A/(A + D_i), σ_i² = A D_i/(A + D_i).
//! The best predictor of μ_i is E[h_λ^{-1}(θ_i) | y_i], evaluated with a
//! Gauss–Hermite rule (closed form on the log scale).

use serde::{Deserialize, Serialize};

use crate::error::{PtfhError, Result};
use crate::estimation::FitResult;
use crate::model::{AreaRecord, ModelKind, ModelParams, Scale};
use crate::quadrature::GaussHermite;
use crate::transform::{dpt_inv, dpt_inv_raw, TransformParam};

pub const DEFAULT_QUAD_ORDER: usize = 50;

/// Conditional law of θ_i given y_i.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaPosterior {
    pub theta: f64,
    pub gamma: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaPrediction {
    pub area_id: String,
    pub theta_hat: f64,
    pub gamma: f64,
    pub sigma2: f64,
    /// EBP of μ_i (EBLUP on the raw scale for FH, which may be negative).
    pub mu_hat: f64,
    /// h_λ^{-1}(θ̂_i).
    pub mu_naive: f64,
}

fn check_inputs(y: f64, d: f64, params: &ModelParams) -> Result<()> {
    if !(y.is_finite() && y > 0.0) {
        return Err(PtfhError::Domain(format!("y must be positive and finite, got {y}")));
    }
    if !(d.is_finite() && d > 0.0) {
        return Err(PtfhError::Domain(format!("D must be positive and finite, got {d}")));
    }
    if !(params.a.is_finite() && params.a >= 0.0) {
        return Err(PtfhError::Domain(format!("A must be finite and >= 0, got {}", params.a)));
    }
    Ok(())
}

/// Shrinkage predictor of θ on the model scale.
pub fn best_theta(y: f64, x: &[f64], params: &ModelParams, d: f64) -> Result<ThetaPosterior> {
    check_inputs(y, d, params)?;
    let h = params.scale.forward(y)?;
    Ok(posterior(h, params.linear_predictor(x), params.a, d))
}

#[inline]
pub(crate) fn posterior(h: f64, xb: f64, a: f64, d: f64) -> ThetaPosterior {
    let gamma = a / (a + d);
    ThetaPosterior { theta: gamma * h + (1.0 - gamma) * xb, gamma, sigma2: a * d / (a + d) }
}

fn dpt_lambda(params: &ModelParams) -> Result<TransformParam> {
    params
        .scale
        .lambda()
        .ok_or_else(|| PtfhError::Config("prediction of mu requires a dual power scale".into()))
}

fn checked_mean(v: f64, theta: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(PtfhError::Overflow(format!("conditional mean overflows at theta = {theta}")));
    }
    if v <= 0.0 {
        return Err(PtfhError::Overflow(format!("conditional mean underflows at theta = {theta}")));
    }
    Ok(v)
}

/// `E[h_λ^{-1}(T)]` for `T ~ N(θ, σ²)` by Gauss–Hermite quadrature only.
pub fn conditional_mean_quadrature(theta: f64, sigma2: f64, lambda: TransformParam, order: usize) -> Result<f64> {
    if !(theta.is_finite() && sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(PtfhError::Domain(format!("invalid normal law N({theta}, {sigma2})")));
    }
    let rule = GaussHermite::cached(order)?;
    let l = lambda.value();
    let v = rule.expect_normal(theta, sigma2.sqrt(), |t| dpt_inv_raw(t, l));
    checked_mean(v, theta)
}

/// `E[h_λ^{-1}(T)]` for `T ~ N(θ, σ²)`: closed form `exp(θ + σ²/2)` on the
/// log scale, point mass when σ² = 0, quadrature otherwise.
pub fn conditional_mean(theta: f64, sigma2: f64, lambda: TransformParam, order: usize) -> Result<f64> {
    if !(theta.is_finite() && sigma2.is_finite() && sigma2 >= 0.0) {
        return Err(PtfhError::Domain(format!("invalid normal law N({theta}, {sigma2})")));
    }
    if lambda.is_log() {
        return checked_mean((theta + 0.5 * sigma2).exp(), theta);
    }
    if sigma2 == 0.0 {
        return dpt_inv(theta, lambda);
    }
    conditional_mean_quadrature(theta, sigma2, lambda, order)
}

/// Empirical best predictor of μ.
pub fn ebp_mu(y: f64, x: &[f64], params: &ModelParams, d: f64, quad_order: usize) -> Result<f64> {
    let lambda = dpt_lambda(params)?;
    let post = best_theta(y, x, params, d)?;
    conditional_mean(post.theta, post.sigma2, lambda, quad_order)
}

/// Plain back-transform `h_λ^{-1}(θ̃)`.
pub fn naive_mu(y: f64, x: &[f64], params: &ModelParams, d: f64) -> Result<f64> {
    let lambda = dpt_lambda(params)?;
    dpt_inv(best_theta(y, x, params, d)?.theta, lambda)
}

/// Log-FH comparator `exp(θ̃ + σ²/2)`.
pub fn slud_maiti_mu_log(y: f64, x: &[f64], params_log: &ModelParams, d: f64) -> Result<f64> {
    match params_log.scale {
        Scale::Dpt(l) if l.is_log() => {}
        _ => return Err(PtfhError::Config("log-scale predictor requires a log-FH fit".into())),
    }
    let post = best_theta(y, x, params_log, d)?;
    checked_mean((post.theta + 0.5 * post.sigma2).exp(), post.theta)
}

/// FH EBLUP `γ̂ y + (1 − γ̂) x'β̂` on the raw scale.
pub fn fh_eblup(y: f64, x: &[f64], params_fh: &ModelParams, d: f64) -> Result<f64> {
    if params_fh.scale != Scale::Identity {
        return Err(PtfhError::Config("EBLUP requires an untransformed FH fit".into()));
    }
    Ok(best_theta(y, x, params_fh, d)?.theta)
}

/// Point predictor of μ matching the model kind (EBP, log-FH EBP, FH EBLUP).
pub fn predict_mu(kind: ModelKind, y: f64, x: &[f64], params: &ModelParams, d: f64, quad_order: usize) -> Result<f64> {
    match kind {
        ModelKind::Ptfh => ebp_mu(y, x, params, d, quad_order),
        ModelKind::Logfh => slud_maiti_mu_log(y, x, params, d),
        ModelKind::Fh => fh_eblup(y, x, params, d),
    }
}

/// Per-area predictions at a fitted model, using the fit's sampling variances.
pub fn predict_areas(data: &[AreaRecord], fit: &FitResult, quad_order: usize) -> Result<Vec<AreaPrediction>> {
    if data.len() != fit.d_used.len() {
        return Err(PtfhError::Data(format!(
            "fit has {} areas, data has {}",
            fit.d_used.len(),
            data.len()
        )));
    }
    data.iter()
        .zip(&fit.d_used)
        .map(|(r, &d)| {
            let post = best_theta(r.y, &r.x, &fit.params, d)?;
            let mu_hat = predict_mu(fit.kind, r.y, &r.x, &fit.params, d, quad_order)?;
            let mu_naive = match fit.params.scale {
                Scale::Identity => post.theta,
                Scale::Dpt(l) => dpt_inv(post.theta, l)?,
            };
            Ok(AreaPrediction {
                area_id: r.area_id.clone(),
                theta_hat: post.theta,
                gamma: post.gamma,
                sigma2: post.sigma2,
                mu_hat,
                mu_naive,
            })
        })
        .collect()
}
