//! Model assessment: standardized residuals, a Kolmogorov–Smirnov normality
//! test, marginal AIC, a bootstrap interval for λ, and a penalized-spline
//! regression used to check the linear mean structure on the model scale.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{PtfhError, Result};
use crate::estimation::{fit, loglik_with_d, FitResult, SearchSettings};
use crate::linalg::{mean, sample_variance};
use crate::model::{AreaRecord, ModelKind, SamplingVariance, Scale};
use crate::optimize::{grid_then_golden, linspace};
use crate::rng::{normal, stream, tag};

/// `e_i = (h_λ̂(y_i) − x_i'β̂) / √(Â + D_i)`.
pub fn standardized_residuals(data: &[AreaRecord], fit: &FitResult) -> Result<Vec<f64>> {
    if data.len() != fit.d_used.len() {
        return Err(PtfhError::Data(format!("fit has {} areas, data has {}", fit.d_used.len(), data.len())));
    }
    data.iter()
        .zip(&fit.d_used)
        .map(|(r, &d)| {
            let h = fit.params.scale.forward(r.y)?;
            Ok((h - fit.params.linear_predictor(&r.x)) / (fit.params.a + d).sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov limiting survival function `P(K > t)`.
pub fn kolmogorov_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 0.2 {
        // the alternating series converges slowly here; the value is 1 to
        // double precision
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * t * t).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test of `e` against N(0, 1) with the asymptotic p-value.
pub fn ks_normal_test(e: &[f64]) -> Result<KsTest> {
    let n = e.len();
    if n < 5 {
        return Err(PtfhError::Data(format!("KS test needs at least 5 values, got {n}")));
    }
    if e.iter().any(|v| !v.is_finite()) {
        return Err(PtfhError::Data("KS test input must be finite".into()));
    }
    if e.iter().all(|v| *v == e[0]) {
        return Err(PtfhError::Data("KS test input is degenerate (all values equal)".into()));
    }
    let mut sorted = e.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let std = Normal::standard();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &v) in sorted.iter().enumerate() {
        let f = std.cdf(v);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    Ok(KsTest { statistic: d, p_value: kolmogorov_survival(nf.sqrt() * d) })
}

/// Maximized log density of y on the original scale, with all constants.
pub fn normalized_loglik(data: &[AreaRecord], fit: &FitResult) -> Result<f64> {
    let l = loglik_with_d(data, &fit.params, &fit.d_used)?;
    let m = data.len() as f64;
    let base = 0.5 * l - 0.5 * m * (2.0 * std::f64::consts::PI).ln();
    Ok(match fit.params.scale {
        Scale::Identity => base,
        // h'(y) = (y^{λ−1} + y^{−λ−1}) / 2
        Scale::Dpt(_) => base - m * std::f64::consts::LN_2,
    })
}

/// Free parameters counted by the AIC: β, A and (for PTFH) λ.
pub fn parameter_count(kind: ModelKind, p: usize) -> usize {
    match kind {
        ModelKind::Ptfh => p + 2,
        ModelKind::Logfh | ModelKind::Fh => p + 1,
    }
}

pub fn marginal_aic(data: &[AreaRecord], fit: &FitResult) -> Result<f64> {
    let k = parameter_count(fit.kind, fit.params.beta.len());
    Ok(-2.0 * normalized_loglik(data, fit)? + 2.0 * k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaInterval {
    pub lo: f64,
    pub hi: f64,
    pub level: f64,
    /// Bootstrap estimates λ̂* in replicate order (failed replicates omitted).
    pub lambdas: Vec<f64>,
    pub failures: usize,
    /// False when more than 10% of the refits failed.
    pub valid: bool,
}

/// Type-7 sample quantile of sorted values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile interval for λ from `b` parametric-bootstrap refits.
pub fn lambda_bootstrap_ci(
    data: &[AreaRecord],
    fitted: &FitResult,
    b: usize,
    level: f64,
    seed: u64,
    search: &SearchSettings,
) -> Result<LambdaInterval> {
    lambda_bootstrap_ci_with(data, fitted, b, level, seed, &|sample, _| fit(sample, search))
}

/// [`lambda_bootstrap_ci`] with a caller-supplied refit.
pub fn lambda_bootstrap_ci_with(
    data: &[AreaRecord],
    fitted: &FitResult,
    b: usize,
    level: f64,
    seed: u64,
    refitter: &(dyn Fn(&[AreaRecord], usize) -> Result<FitResult> + Sync),
) -> Result<LambdaInterval> {
    if fitted.kind != ModelKind::Ptfh {
        return Err(PtfhError::Config("a λ interval needs a PTFH fit".into()));
    }
    if b < 100 {
        return Err(PtfhError::Config(format!("need at least 100 bootstrap samples, got {b}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(PtfhError::Config(format!("level must be in (0, 1), got {level}")));
    }
    if data.len() != fitted.d_used.len() {
        return Err(PtfhError::Data("fit and data disagree on the number of areas".into()));
    }
    let params = &fitted.params;
    let d = &fitted.d_used;
    let outcomes: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut sample = Vec::with_capacity(data.len());
            for (i, r) in data.iter().enumerate() {
                let mut rng = stream(seed, &[tag::LAMBDA_CI, rep as u64, i as u64]);
                let t = params.linear_predictor(&r.x) + params.a.sqrt() * normal(&mut rng) + d[i].sqrt() * normal(&mut rng);
                let y = params.scale.inverse_raw(t);
                if !(y.is_finite() && y > 0.0) {
                    return None;
                }
                sample.push(AreaRecord { y, sampling: SamplingVariance::Known(d[i]), ..r.clone() });
            }
            let star = refitter(&sample, rep).ok()?;
            if !star.convergence.tolerance_met {
                return None;
            }
            star.params.lambda()
        })
        .collect();
    let lambdas: Vec<f64> = outcomes.iter().flatten().copied().collect();
    if lambdas.is_empty() {
        return Err(PtfhError::Numerical("every bootstrap refit failed".into()));
    }
    let failures = b - lambdas.len();
    let mut sorted = lambdas.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let alpha = 1.0 - level;
    Ok(LambdaInterval {
        lo: quantile_sorted(&sorted, alpha / 2.0),
        hi: quantile_sorted(&sorted, 1.0 - alpha / 2.0),
        level,
        lambdas,
        failures,
        valid: failures * 10 <= b,
    })
}

/// Penalized spline of given degree with `k` truncated-power knots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineConfig {
    pub k: usize,
    pub degree: usize,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig { k: 20, degree: 1 }
    }
}

impl SplineConfig {
    pub fn with_degree(degree: usize) -> Self {
        SplineConfig { degree, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(PtfhError::Config(format!("need at least 2 knots, got {}", self.k)));
        }
        if !(1..=3).contains(&self.degree) {
            return Err(PtfhError::Config(format!("spline degree must be 1, 2 or 3, got {}", self.degree)));
        }
        Ok(())
    }
}

/// First and last knots at the 10% and 90% sample quantiles of `w`, the rest
/// evenly spaced between them.
pub fn spline_knots(w: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(PtfhError::Config(format!("need at least 2 knots, got {k}")));
    }
    if w.is_empty() || w.iter().any(|v| !v.is_finite()) {
        return Err(PtfhError::Data("spline covariate must be non-empty and finite".into()));
    }
    let mut sorted = w.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let lo = quantile_sorted(&sorted, 0.1);
    let hi = quantile_sorted(&sorted, 0.9);
    if !(hi > lo) {
        return Err(PtfhError::Data("spline covariate has no spread between its 10% and 90% quantiles".into()));
    }
    Ok(linspace(lo, hi, k))
}

fn poly_row(w: f64, degree: usize) -> Vec<f64> {
    (0..=degree).map(|j| w.powi(j as i32)).collect()
}

fn basis_row(w: f64, knots: &[f64], degree: usize) -> Vec<f64> {
    knots.iter().map(|&kappa| (w - kappa).max(0.0).powi(degree as i32)).collect()
}

/// Fitted penalized spline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFit {
    pub config: SplineConfig,
    pub knots: Vec<f64>,
    pub beta: Vec<f64>,
    /// Conditional mean of the spline coefficients.
    pub gamma: Vec<f64>,
    pub a: f64,
    pub alpha: f64,
    /// Profile log-likelihood without the 2π constant.
    pub loglik: f64,
    pub a_at_floor: bool,
    pub alpha_at_floor: bool,
    /// Fitted mean at the observed covariates.
    pub fitted: Vec<f64>,
}

impl SplineFit {
    pub fn evaluate(&self, w: f64) -> f64 {
        let poly: f64 = poly_row(w, self.config.degree).iter().zip(&self.beta).map(|(x, b)| x * b).sum();
        let spline: f64 = basis_row(w, &self.knots, self.config.degree).iter().zip(&self.gamma).map(|(z, g)| z * g).sum();
        poly + spline
    }
}

pub const SPLINE_FLOOR: f64 = 1e-8;
const SPLINE_GRID: usize = 15;
const SPLINE_LOG_TOL: f64 = 1e-4;

/// Marginal likelihood of the spline model; `Σ = α Z Z' + diag(A + D)` is
/// handled through the Woodbury identity so each evaluation costs O(m K²).
struct SplineProblem {
    x: DMatrix<f64>,
    zb: DMatrix<f64>,
    z: DVector<f64>,
    d: Vec<f64>,
}

struct SplineSolution {
    beta: DVector<f64>,
    gamma: DVector<f64>,
    loglik: f64,
}

impl SplineProblem {
    fn solve(&self, a: f64, alpha: f64) -> Result<SplineSolution> {
        let m = self.z.len();
        let k = self.zb.ncols();
        let wv = DVector::from_iterator(m, self.d.iter().map(|d| 1.0 / (a + d)));
        let logdet_v: f64 = self.d.iter().map(|d| (a + d).ln()).sum();
        // Z'WZ, Z'WX, Z'Wz
        let wz_b = DMatrix::from_fn(m, k, |i, j| wv[i] * self.zb[(i, j)]);
        let ztwz = self.zb.transpose() * &wz_b;
        let mut inner = &ztwz * alpha;
        for j in 0..k {
            inner[(j, j)] += 1.0;
        }
        let chol = inner
            .cholesky()
            .ok_or_else(|| PtfhError::Numerical("spline covariance is not positive definite".into()))?;
        let logdet_inner = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();

        // u'Σ^{-1}v = u'Wv − α (Z'Wu)' M^{-1} (Z'Wv)
        let sinv = |u: &DMatrix<f64>, v: &DMatrix<f64>| -> DMatrix<f64> {
            let wu = DMatrix::from_fn(u.nrows(), u.ncols(), |i, j| wv[i] * u[(i, j)]);
            let wv_m = DMatrix::from_fn(v.nrows(), v.ncols(), |i, j| wv[i] * v[(i, j)]);
            let zu = self.zb.transpose() * &wu;
            let zv = self.zb.transpose() * &wv_m;
            u.transpose() * &wv_m - (zu.transpose() * chol.solve(&zv)) * alpha
        };
        let zmat = DMatrix::from_column_slice(m, 1, self.z.as_slice());
        let xtx = sinv(&self.x, &self.x);
        let xtz = sinv(&self.x, &zmat);
        let beta_chol = xtx
            .cholesky()
            .ok_or_else(|| PtfhError::RankDeficient { p: self.x.ncols(), m })?;
        let beta = beta_chol.solve(&xtz).column(0).into_owned();
        let resid = &self.z - &self.x * &beta;
        let rmat = DMatrix::from_column_slice(m, 1, resid.as_slice());
        let quad = sinv(&rmat, &rmat)[(0, 0)];
        // γ̂ = α M^{-1} Z'W r
        let zwr = self.zb.transpose() * DVector::from_iterator(m, (0..m).map(|i| wv[i] * resid[i]));
        let gamma = chol.solve(&zwr) * alpha;
        Ok(SplineSolution { beta, gamma, loglik: -0.5 * (logdet_v + logdet_inner + quad) })
    }
}

fn spline_problem(z: &[f64], w: &[f64], d: &[f64], config: &SplineConfig) -> Result<(SplineProblem, Vec<f64>)> {
    config.validate()?;
    let m = z.len();
    if w.len() != m || d.len() != m {
        return Err(PtfhError::Data(format!("z, w and D have lengths {m}, {}, {}", w.len(), d.len())));
    }
    if m <= config.degree + 1 {
        return Err(PtfhError::RankDeficient { p: config.degree + 1, m });
    }
    if z.iter().chain(w).any(|v| !v.is_finite()) || d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(PtfhError::Data("spline inputs must be finite with D > 0".into()));
    }
    let knots = spline_knots(w, config.k)?;
    let x = DMatrix::from_fn(m, config.degree + 1, |i, j| w[i].powi(j as i32));
    let zb = DMatrix::from_fn(m, config.k, |i, j| (w[i] - knots[j]).max(0.0).powi(config.degree as i32));
    Ok((SplineProblem { x, zb, z: DVector::from_column_slice(z), d: d.to_vec() }, knots))
}

fn a_upper(z: &[f64]) -> f64 {
    (10.0 * sample_variance(z)).max(100.0 * SPLINE_FLOOR)
}

/// Maximizes over ln A at fixed α.
fn best_a(problem: &SplineProblem, alpha: f64, a_max: f64) -> Result<(f64, f64)> {
    let grid = linspace(SPLINE_FLOOR.ln(), a_max.ln(), SPLINE_GRID);
    let out = grid_then_golden(|la| Ok(problem.solve(la.exp(), alpha)?.loglik), &grid, SPLINE_LOG_TOL, 200)?;
    Ok((out.x.exp(), out.value))
}

fn finish(problem: &SplineProblem, config: SplineConfig, knots: Vec<f64>, a: f64, alpha: f64, w: &[f64]) -> Result<SplineFit> {
    let sol = problem.solve(a, alpha)?;
    let mut out = SplineFit {
        config,
        knots,
        beta: sol.beta.iter().copied().collect(),
        gamma: sol.gamma.iter().copied().collect(),
        a,
        alpha,
        loglik: sol.loglik,
        a_at_floor: a <= SPLINE_FLOOR * (1.0 + 1e-9),
        alpha_at_floor: alpha <= SPLINE_FLOOR * (1.0 + 1e-9),
        fitted: Vec::new(),
    };
    out.fitted = w.iter().map(|&wi| out.evaluate(wi)).collect();
    Ok(out)
}

/// ML fit of `z_i = Σ_j β_j w_i^j + Σ_ℓ γ_ℓ (w_i − κ_ℓ)_+^p + v_i + ε_i` with
/// `γ ~ N(0, α I)`, `v ~ N(0, A)`, `ε ~ N(0, D_i)`.
pub fn spline_gof_fit(z: &[f64], w: &[f64], d: &[f64], config: &SplineConfig) -> Result<SplineFit> {
    let (problem, knots) = spline_problem(z, w, d, config)?;
    let a_max = a_upper(z);
    let scale_z = (0..problem.zb.nrows()).map(|i| problem.zb.row(i).norm_squared()).sum::<f64>() / problem.zb.nrows() as f64;
    let alpha_max = (10.0 * sample_variance(z) / scale_z.max(1e-12)).max(100.0 * SPLINE_FLOOR);
    let grid = linspace(SPLINE_FLOOR.ln(), alpha_max.ln(), SPLINE_GRID);
    let outer = grid_then_golden(|la| Ok(best_a(&problem, la.exp(), a_max)?.1), &grid, SPLINE_LOG_TOL, 200)?;
    let alpha = outer.x.exp();
    let (a, _) = best_a(&problem, alpha, a_max)?;
    finish(&problem, *config, knots, a, alpha, w)
}

/// Spline fit with α held fixed (α = 0 gives the polynomial-only fit).
pub fn spline_fit_fixed_alpha(z: &[f64], w: &[f64], d: &[f64], config: &SplineConfig, alpha: f64) -> Result<SplineFit> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(PtfhError::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    let (problem, knots) = spline_problem(z, w, d, config)?;
    let (a, _) = best_a(&problem, alpha, a_upper(z))?;
    finish(&problem, *config, knots, a, alpha, w)
}

/// Dense marginal covariance `α Z Z' + A I + diag(D)`.
pub fn spline_covariance(w: &[f64], d: &[f64], config: &SplineConfig, a: f64, alpha: f64) -> Result<DMatrix<f64>> {
    config.validate()?;
    let knots = spline_knots(w, config.k)?;
    let m = w.len();
    let zb = DMatrix::from_fn(m, config.k, |i, j| (w[i] - knots[j]).max(0.0).powi(config.degree as i32));
    let mut s = &zb * zb.transpose() * alpha;
    for i in 0..m {
        s[(i, i)] += a + d[i];
    }
    Ok(s)
}

/// Summary statistics of standardized residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub mean: f64,
    pub sd: f64,
    pub ks: KsTest,
}

pub fn residual_summary(e: &[f64]) -> Result<ResidualSummary> {
    Ok(ResidualSummary { mean: mean(e), sd: sample_variance(e).sqrt(), ks: ks_normal_test(e)? })
}
