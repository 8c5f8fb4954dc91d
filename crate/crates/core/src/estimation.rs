//! Maximum likelihood fitting.
//!
//! For a fixed scale the model is a classical Fay–Herriot model on the
//! transformed responses: β is profiled out by GLS and A is found by a
//! log-spaced grid followed by golden-section refinement. λ is found the same
//! way over `[0, λ_max]`, re-resolving replicate-based sampling variances at
//! every λ evaluated.
//!
//! The objective is
//! `L(φ) = −Σ log(A+D_i) − Σ (h_λ(y_i) − x_i'β)² / (A+D_i) + 2 Σ log(y_i^{λ−1} + y_i^{−λ−1})`,
//! i.e. twice the log-likelihood without the Gaussian normalizing constants
//! (see [`crate::diagnostics::normalized_loglik`] for the full density).

use serde::{Deserialize, Serialize};

use crate::error::{PtfhError, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve, sample_variance};
use crate::model::{covariate_width, AreaRecord, ModelKind, ModelParams, SamplingVariance, Scale};
use crate::optimize::{grid_then_golden, linspace, logspace};
use crate::transform::TransformParam;

/// Lower clamp for the random-effect variance.
pub const A_FLOOR: f64 = 1e-8;
/// Golden-section tolerance on A.
pub const A_TOL: f64 = 1e-8;
/// Golden-section tolerance on λ.
pub const LAMBDA_TOL: f64 = 1e-5;
pub const DEFAULT_LAMBDA_MAX: f64 = 2.0;
pub const DEFAULT_GRID_POINTS: usize = 21;

const A_GRID_POINTS: usize = 20;
const MAX_GOLDEN_ITER: usize = 300;
const RANK_TOL: f64 = 1e-12;

/// λ search configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub lambda_max: f64,
    pub tol: f64,
    pub grid_points: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings { lambda_max: DEFAULT_LAMBDA_MAX, tol: LAMBDA_TOL, grid_points: DEFAULT_GRID_POINTS }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_max.is_finite() && self.lambda_max >= 0.0) {
            return Err(PtfhError::Config(format!("lambda_max must be >= 0, got {}", self.lambda_max)));
        }
        if !(self.tol > 0.0) {
            return Err(PtfhError::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.grid_points < 2 {
            return Err(PtfhError::Config("lambda grid needs at least 2 points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    /// Golden-section iterations of the outer (λ) search.
    pub iterations: usize,
    pub tolerance_met: bool,
    pub lambda_at_boundary: bool,
    pub a_at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub kind: ModelKind,
    pub params: ModelParams,
    /// `L(φ̂)` as defined in the module docs.
    pub loglik: f64,
    /// `(λ, profile L)` for every λ evaluated, in search order.
    pub profile: Vec<(f64, f64)>,
    /// Sampling variances used at the estimate.
    pub d_used: Vec<f64>,
    pub convergence: Convergence,
}

impl FitResult {
    pub fn sorted_profile(&self) -> Vec<(f64, f64)> {
        let mut p = self.profile.clone();
        p.sort_by(|a, b| a.0.total_cmp(&b.0));
        p
    }

    /// Copy of the data with `d_used` as known sampling variances.
    pub fn data_with_used_d(&self, data: &[AreaRecord]) -> Vec<AreaRecord> {
        data.iter().zip(&self.d_used).map(|(r, &d)| r.with_d(d)).collect()
    }
}

/// Fit at a fixed λ.
#[derive(Debug, Clone, PartialEq)]
pub struct GivenLambdaFit {
    pub beta: Vec<f64>,
    pub a: f64,
    pub profile_loglik: f64,
    pub d: Vec<f64>,
    pub a_at_floor: bool,
    pub a_at_ceiling: bool,
}

/// Row-major design matrix with a verified full column rank.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub m: usize,
    pub p: usize,
    pub x: Vec<f64>,
}

impl Design {
    pub fn new(data: &[AreaRecord]) -> Result<Design> {
        let p = covariate_width(data)?;
        let m = data.len();
        if m <= p {
            return Err(PtfhError::Data(format!("need more areas than covariates (m = {m}, p = {p})")));
        }
        let mut x = Vec::with_capacity(m * p);
        for r in data {
            x.extend_from_slice(&r.x);
        }
        let mut xtx = vec![0.0; p * p];
        for i in 0..m {
            let row = &x[i * p..(i + 1) * p];
            for j in 0..p {
                for k in 0..=j {
                    xtx[j * p + k] += row[j] * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                xtx[k * p + j] = xtx[j * p + k];
            }
        }
        if !cholesky_in_place(&mut xtx, p, RANK_TOL) {
            return Err(PtfhError::RankDeficient { p, m });
        }
        Ok(Design { m, p, x })
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }
}

/// Sample variance (divisor n−1) of replicates mapped to `scale`.
pub(crate) fn replicate_variance(z: &[f64], scale: Scale) -> Result<f64> {
    if z.len() < 2 {
        return Err(PtfhError::Data(format!("need at least 2 replicates, got {}", z.len())));
    }
    let mut t = Vec::with_capacity(z.len());
    for &v in z {
        t.push(scale.forward(v)?);
    }
    let var = sample_variance(&t);
    if !var.is_finite() {
        return Err(PtfhError::Numerical("replicate variance is not finite".into()));
    }
    if var <= 0.0 {
        return Err(PtfhError::Data("replicates are degenerate (zero variance)".into()));
    }
    Ok(var)
}

/// `D_i(λ)`: sample variance of `h_λ(z_ik)` over the replicates.
pub fn d_from_replicates(replicates: &[f64], lambda: TransformParam) -> Result<f64> {
    replicate_variance(replicates, Scale::Dpt(lambda))
}

/// Sampling variances on `scale`, recomputed from replicates where present.
pub fn resolve_d(data: &[AreaRecord], scale: Scale) -> Result<Vec<f64>> {
    data.iter()
        .map(|r| match &r.sampling {
            SamplingVariance::Known(d) => Ok(*d),
            SamplingVariance::Replicates(z) => replicate_variance(z, scale)
                .map_err(|e| PtfhError::Data(format!("area {}: {e}", r.area_id))),
        })
        .collect()
}

fn transformed_responses(data: &[AreaRecord], scale: Scale) -> Result<(Vec<f64>, f64)> {
    let mut h = Vec::with_capacity(data.len());
    let mut jac = 0.0;
    for r in data {
        let t = scale.forward_raw(r.y);
        if !t.is_finite() {
            return Err(PtfhError::Numerical(format!(
                "transformed response of area {} is not finite",
                r.area_id
            )));
        }
        h.push(t);
        jac += scale.log_jacobian_raw(r.y);
    }
    Ok((h, jac))
}

/// `L(φ)` at explicit sampling variances `d`.
pub fn loglik_with_d(data: &[AreaRecord], params: &ModelParams, d: &[f64]) -> Result<f64> {
    if d.len() != data.len() {
        return Err(PtfhError::Data(format!("{} variances for {} areas", d.len(), data.len())));
    }
    let p = covariate_width(data)?;
    if params.beta.len() != p {
        return Err(PtfhError::Data(format!("beta has length {}, expected {p}", params.beta.len())));
    }
    let (h, jac) = transformed_responses(data, params.scale)?;
    let mut acc = 0.0;
    for ((r, &hi), &di) in data.iter().zip(&h).zip(d) {
        let v = params.a + di;
        if !(v > 0.0) {
            return Err(PtfhError::Domain(format!("A + D must be positive for area {}", r.area_id)));
        }
        let res = hi - params.linear_predictor(&r.x);
        acc += -v.ln() - res * res / v;
    }
    Ok(acc + 2.0 * jac)
}

/// `L(φ)` with sampling variances resolved at the scale of `params`.
pub fn loglik(data: &[AreaRecord], params: &ModelParams) -> Result<f64> {
    let d = resolve_d(data, params.scale)?;
    loglik_with_d(data, params, &d)
}

/// Fixed-scale problem: profiles β out of `L` for any A.
struct ScaleProblem<'a> {
    design: &'a Design,
    h: Vec<f64>,
    d: Vec<f64>,
    jac: f64,
    xtwx: Vec<f64>,
    beta: Vec<f64>,
}

impl<'a> ScaleProblem<'a> {
    fn new(design: &'a Design, data: &[AreaRecord], scale: Scale) -> Result<Self> {
        let d = resolve_d(data, scale)?;
        let (h, jac) = transformed_responses(data, scale)?;
        let p = design.p;
        Ok(ScaleProblem { design, h, d, jac, xtwx: vec![0.0; p * p], beta: vec![0.0; p] })
    }

    /// GLS estimate of β at A, stored in `self.beta`.
    fn gls(&mut self, a: f64) -> Result<()> {
        let p = self.design.p;
        self.xtwx.iter_mut().for_each(|v| *v = 0.0);
        self.beta.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..self.design.m {
            let w = 1.0 / (a + self.d[i]);
            let row = self.design.row(i);
            for j in 0..p {
                let wj = w * row[j];
                self.beta[j] += wj * self.h[i];
                for k in 0..=j {
                    self.xtwx[j * p + k] += wj * row[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                self.xtwx[k * p + j] = self.xtwx[j * p + k];
            }
        }
        if !cholesky_in_place(&mut self.xtwx, p, RANK_TOL) {
            return Err(PtfhError::RankDeficient { p, m: self.design.m });
        }
        cholesky_solve(&self.xtwx, p, &mut self.beta);
        Ok(())
    }

    fn residual(&self, i: usize) -> f64 {
        let row = self.design.row(i);
        self.h[i] - row.iter().zip(&self.beta).map(|(x, b)| x * b).sum::<f64>()
    }

    /// Profile `L` at A.
    fn value(&mut self, a: f64) -> Result<f64> {
        self.gls(a)?;
        let mut acc = 0.0;
        for i in 0..self.design.m {
            let v = a + self.d[i];
            let r = self.residual(i);
            acc += -v.ln() - r * r / v;
        }
        Ok(acc + 2.0 * self.jac)
    }

    /// Derivative of the profile `L` in A (β enters only through the
    /// envelope, so the partial derivative is exact).
    fn score(&mut self, a: f64) -> Result<f64> {
        self.gls(a)?;
        let mut acc = 0.0;
        for i in 0..self.design.m {
            let v = a + self.d[i];
            let r = self.residual(i);
            acc += r * r / (v * v) - 1.0 / v;
        }
        Ok(acc)
    }

    fn maximize(mut self) -> Result<GivenLambdaFit> {
        let var_h = sample_variance(&self.h);
        let a_max = (10.0 * var_h).max(100.0 * A_FLOOR);
        let grid = logspace(A_FLOOR, a_max, A_GRID_POINTS);

        let mut values = Vec::with_capacity(grid.len());
        let mut best_k = 0;
        for (k, &a) in grid.iter().enumerate() {
            let v = self.value(a)?;
            if !v.is_finite() {
                return Err(PtfhError::Numerical(format!("profile likelihood not finite at A = {a}")));
            }
            values.push(v);
            if v > values[best_k] {
                best_k = k;
            }
        }
        let last = grid.len() - 1;
        let (mut a_hat, mut at_floor, mut at_ceiling) = (grid[best_k], false, false);
        if best_k == 0 && self.score(A_FLOOR)? <= 0.0 {
            a_hat = A_FLOOR;
            at_floor = true;
        } else if best_k == last && self.score(a_max)? >= 0.0 {
            a_hat = a_max;
            at_ceiling = true;
        } else {
            let lo = grid[best_k.saturating_sub(1)];
            let hi = grid[(best_k + 1).min(last)];
            let out = crate::optimize::golden_section_max(|a| self.value(a), lo, hi, A_TOL, MAX_GOLDEN_ITER)?;
            if out.value >= values[best_k] {
                a_hat = out.x;
            }
            a_hat = self.polish(a_hat, lo, hi)?;
            if a_hat <= A_FLOOR {
                a_hat = A_FLOOR;
                at_floor = true;
            }
        }
        let profile_loglik = self.value(a_hat)?;
        Ok(GivenLambdaFit {
            beta: self.beta.clone(),
            a: a_hat,
            profile_loglik,
            d: self.d,
            a_at_floor: at_floor,
            a_at_ceiling: at_ceiling,
        })
    }

    /// Bisection on the score around the golden-section estimate; the
    /// likelihood is too flat near its peak to resolve A to `A_TOL` by
    /// function comparisons alone.
    fn polish(&mut self, a_hat: f64, lo_bound: f64, hi_bound: f64) -> Result<f64> {
        let delta = 1e-5 * (1.0 + a_hat);
        let mut lo = (a_hat - delta).max(lo_bound).max(A_FLOOR);
        let mut hi = (a_hat + delta).min(hi_bound);
        let (s_lo, s_hi) = (self.score(lo)?, self.score(hi)?);
        if !(s_lo > 0.0 && s_hi < 0.0) {
            return Ok(a_hat);
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.score(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

fn fit_given_scale_with(design: &Design, data: &[AreaRecord], scale: Scale) -> Result<GivenLambdaFit> {
    ScaleProblem::new(design, data, scale)?.maximize()
}

fn validate_data(data: &[AreaRecord]) -> Result<Design> {
    for r in data {
        r.validate()?;
    }
    Design::new(data)
}

/// β̂ and Â at a fixed λ, with the profile value of `L`.
pub fn fit_given_lambda(data: &[AreaRecord], lambda: TransformParam) -> Result<GivenLambdaFit> {
    let design = validate_data(data)?;
    fit_given_scale_with(&design, data, Scale::Dpt(lambda))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    kind: ModelKind,
    data: &[AreaRecord],
    scale: Scale,
    best: GivenLambdaFit,
    profile: Vec<(f64, f64)>,
    iterations: usize,
    tolerance_met: bool,
    lambda_at_boundary: bool,
) -> Result<FitResult> {
    let params = ModelParams { beta: best.beta, a: best.a, scale };
    let loglik = loglik_with_d(data, &params, &best.d)?;
    Ok(FitResult {
        kind,
        params,
        loglik,
        profile,
        d_used: best.d,
        convergence: Convergence {
            iterations,
            tolerance_met,
            lambda_at_boundary,
            a_at_boundary: best.a_at_floor || best.a_at_ceiling,
        },
    })
}

fn fit_on_window(
    design: &Design,
    data: &[AreaRecord],
    settings: &SearchSettings,
    lo: f64,
    hi: f64,
    grid_points: usize,
) -> Result<FitResult> {
    let grid = if hi > lo { linspace(lo, hi, grid_points) } else { vec![lo] };
    let search = grid_then_golden(
        |l| Ok(fit_given_scale_with(design, data, Scale::Dpt(TransformParam::new(l)?))?.profile_loglik),
        &grid,
        settings.tol,
        MAX_GOLDEN_ITER,
    )?;
    let lambda = TransformParam::new(search.x)?;
    let best = fit_given_scale_with(design, data, Scale::Dpt(lambda))?;
    let at_boundary = search.x <= settings.tol || search.x >= settings.lambda_max - settings.tol;
    assemble(
        ModelKind::Ptfh,
        data,
        Scale::Dpt(lambda),
        best,
        search.evaluations,
        search.iterations,
        search.converged,
        at_boundary,
    )
}

/// Full PTFH fit: coarse λ grid on `[0, λ_max]` then golden-section refinement.
pub fn fit(data: &[AreaRecord], settings: &SearchSettings) -> Result<FitResult> {
    settings.validate()?;
    let design = validate_data(data)?;
    fit_on_window(&design, data, settings, 0.0, settings.lambda_max, settings.grid_points)
}

/// PTFH refit restricted to `[center − 0.5, center + 0.5] ∩ [0, λ_max]`,
/// falling back to the full range when the estimate lands on an interior
/// edge of the window.
pub fn refit_near(data: &[AreaRecord], center: f64, settings: &SearchSettings) -> Result<FitResult> {
    settings.validate()?;
    let design = validate_data(data)?;
    let lo = (center - 0.5).max(0.0);
    let hi = (center + 0.5).min(settings.lambda_max);
    if lo <= 0.0 && hi >= settings.lambda_max {
        return fit_on_window(&design, data, settings, 0.0, settings.lambda_max, settings.grid_points);
    }
    let points = (settings.grid_points / 2).max(3) + 1;
    let out = fit_on_window(&design, data, settings, lo, hi, points)?;
    let l = out.params.lambda().unwrap_or(0.0);
    let hit_lo = lo > 0.0 && l <= lo + settings.tol;
    let hit_hi = hi < settings.lambda_max && l >= hi - settings.tol;
    if hit_lo || hit_hi {
        return fit_on_window(&design, data, settings, 0.0, settings.lambda_max, settings.grid_points);
    }
    Ok(out)
}

fn fit_fixed(data: &[AreaRecord], scale: Scale, kind: ModelKind) -> Result<FitResult> {
    let design = validate_data(data)?;
    let best = fit_given_scale_with(&design, data, scale)?;
    let lambda = scale.lambda().map(TransformParam::value).unwrap_or(f64::NAN);
    let profile = vec![(lambda, best.profile_loglik)];
    assemble(kind, data, scale, best, profile, 0, true, false)
}

/// log-FH: λ fixed at 0; replicate variances are taken on the log scale.
pub fn fit_logfh(data: &[AreaRecord]) -> Result<FitResult> {
    fit_fixed(data, Scale::log(), ModelKind::Logfh)
}

/// Classical FH on raw responses; replicate variances on the raw scale.
pub fn fit_fh(data: &[AreaRecord]) -> Result<FitResult> {
    fit_fixed(data, Scale::Identity, ModelKind::Fh)
}

pub fn fit_model(kind: ModelKind, data: &[AreaRecord], settings: &SearchSettings) -> Result<FitResult> {
    match kind {
        ModelKind::Ptfh => fit(data, settings),
        ModelKind::Logfh => fit_logfh(data),
        ModelKind::Fh => fit_fh(data),
    }
}

/// Refit used inside parametric bootstraps: PTFH searches near `center`.
pub fn refit_model(
    kind: ModelKind,
    data: &[AreaRecord],
    settings: &SearchSettings,
    center: Option<f64>,
) -> Result<FitResult> {
    match (kind, center) {
        (ModelKind::Ptfh, Some(c)) => refit_near(data, c, settings),
        _ => fit_model(kind, data, settings),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, stream};
    use crate::transform::dpt_inv;
    use approx::assert_relative_eq;

    fn lam(v: f64) -> TransformParam {
        TransformParam::new(v).unwrap()
    }

    fn rec(y: f64, x: Vec<f64>, d: f64) -> AreaRecord {
        AreaRecord::with_known_d("a", y, x, d).unwrap()
    }

    #[test]
    fn single_area_loglik() {
        let data = vec![rec(1.0, vec![1.0], 0.4)];
        let params = ModelParams::ptfh(vec![0.0], 0.6, 0.37).unwrap();
        assert_relative_eq!(loglik(&data, &params).unwrap(), 2.0 * 2f64.ln(), max_relative = 1e-15);
    }

    #[test]
    fn two_area_loglik_by_hand() {
        // λ = 1: h(2) = 0.75, h(3) = 4/3; choose β so both residuals equal 0.25
        let (y1, y2) = (2.0f64, 3.0f64);
        let data = vec![rec(y1, vec![1.0, 0.0], 0.5), rec(y2, vec![1.0, 1.0], 0.5)];
        let params = ModelParams::ptfh(vec![0.5, 4.0 / 3.0 - 0.75], 1.5, 1.0).unwrap();
        let (r, v) = (0.25f64, 2.0f64);
        let jac = (1.0 + y1.powi(-2)).ln() + (1.0 + y2.powi(-2)).ln();
        let expected = -2.0 * v.ln() - 2.0 * r * r / v + 2.0 * jac;
        assert_relative_eq!(loglik(&data, &params).unwrap(), expected, max_relative = 1e-14);
    }

    #[test]
    fn loglik_matches_naive_power_form() {
        let mut rng = stream(3, &[99]);
        let m = 30;
        let l: f64 = 0.45;
        let data: Vec<AreaRecord> = (0..m)
            .map(|i| {
                let x = 4.0 * (i as f64 + 0.5) / m as f64;
                let t = 1.0 + x + 1.2 * normal(&mut rng);
                rec(dpt_inv(t, lam(l)).unwrap(), vec![1.0, x], 0.2 + 0.05 * (i % 5) as f64)
            })
            .collect();
        let params = ModelParams::ptfh(vec![0.9, 1.1], 1.3, l).unwrap();
        let mut naive = 0.0;
        for r in &data {
            let d = match r.sampling {
                SamplingVariance::Known(d) => d,
                _ => unreachable!(),
            };
            let h = (r.y.powf(l) - r.y.powf(-l)) / (2.0 * l);
            let res = h - (0.9 + 1.1 * r.x[1]);
            naive += -(1.3 + d).ln() - res * res / (1.3 + d)
                + 2.0 * (r.y.powf(l - 1.0) + r.y.powf(-l - 1.0)).ln();
        }
        assert_relative_eq!(loglik(&data, &params).unwrap(), naive, max_relative = 1e-11);
    }

    #[test]
    fn replicate_variances() {
        let e = std::f64::consts::E;
        assert!(matches!(d_from_replicates(&[e, e], lam(0.0)), Err(PtfhError::Data(_))));
        assert_relative_eq!(d_from_replicates(&[1.0, e * e], lam(0.0)).unwrap(), 2.0, max_relative = 1e-14);
        assert!(d_from_replicates(&[1.0], lam(0.0)).is_err());
    }

    #[test]
    fn unresolved_or_bad_d_is_rejected() {
        let data = vec![rec(1.0, vec![1.0], 0.4)];
        let params = ModelParams::ptfh(vec![0.0], 0.6, 0.5).unwrap();
        assert!(loglik_with_d(&data, &params, &[]).is_err());
    }

    #[test]
    fn intercept_only_equal_d_gives_mean() {
        let ys = [0.5, 1.2, 2.0, 3.3, 0.9, 1.7];
        let data: Vec<AreaRecord> = ys.iter().map(|&y| rec(y, vec![1.0], 0.3)).collect();
        let l = lam(0.4);
        let fit = fit_given_lambda(&data, l).unwrap();
        let mean = ys.iter().map(|&y| crate::transform::dpt(y, l).unwrap()).sum::<f64>() / ys.len() as f64;
        assert_relative_eq!(fit.beta[0], mean, max_relative = 1e-13);
    }

    #[test]
    fn three_area_weighted_mean() {
        let data = vec![rec(1.0f64.exp(), vec![1.0], 0.5), rec(2.0f64.exp(), vec![1.0], 1.0), rec(4.0f64.exp(), vec![1.0], 2.0)];
        let design = Design::new(&data).unwrap();
        let mut problem = ScaleProblem::new(&design, &data, Scale::log()).unwrap();
        problem.gls(1.0).unwrap();
        let w = [1.0 / 1.5, 1.0 / 2.0, 1.0 / 3.0];
        let expected = (w[0] * 1.0 + w[1] * 2.0 + w[2] * 4.0) / (w[0] + w[1] + w[2]);
        assert_relative_eq!(problem.beta[0], expected, max_relative = 1e-14);
    }

    #[test]
    fn fh_intercept_only_matches_closed_form() {
        // L(A) = -m log(A+D) - S/(A+D): maximizer A = S/m - D
        let ys = [3.1, 4.7, 2.2, 5.9, 3.8, 4.4, 6.1, 2.9, 3.3, 5.0];
        let d = 0.4;
        let data: Vec<AreaRecord> = ys.iter().map(|&y| rec(y, vec![1.0], d)).collect();
        let fit = fit_fh(&data).unwrap();
        let m = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / m;
        let s: f64 = ys.iter().map(|y| (y - mean).powi(2)).sum();
        let expected = (s / m - d).max(A_FLOOR);

        // independent fine-grid oracle on the profile
        let prof = |a: f64| -m * (a + d).ln() - s / (a + d);
        let (mut best_a, mut best_v) = (0.0, f64::NEG_INFINITY);
        for k in 0..=200_000 {
            let a = 4.0 * k as f64 / 200_000.0;
            if prof(a) > best_v {
                best_v = prof(a);
                best_a = a;
            }
        }
        assert!((best_a - expected).abs() < 4.0 / 200_000.0);
        assert!((fit.params.a - expected).abs() < 1e-8, "{} vs {}", fit.params.a, expected);
        assert_relative_eq!(fit.params.beta[0], mean, max_relative = 1e-12);
    }

    #[test]
    fn fh_small_spread_clamps_a_at_floor() {
        let ys = [3.0, 3.1, 2.9, 3.05, 2.95];
        let data: Vec<AreaRecord> = ys.iter().map(|&y| rec(y, vec![1.0], 1.0)).collect();
        let fit = fit_fh(&data).unwrap();
        assert_eq!(fit.params.a, A_FLOOR);
        assert!(fit.convergence.a_at_boundary);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let data = vec![rec(1.0, vec![1.0, 2.0], 0.5), rec(2.0, vec![1.0, 2.0], 0.5), rec(3.0, vec![1.0, 2.0], 0.5)];
        assert!(matches!(fit_given_lambda(&data, lam(0.5)), Err(PtfhError::RankDeficient { .. })));
        let few = vec![rec(1.0, vec![1.0, 2.0], 0.5), rec(2.0, vec![1.0, 3.0], 0.5)];
        assert!(matches!(fit(&few, &SearchSettings::default()), Err(PtfhError::Data(_))));
    }

    fn simulated(seed: u64, m: usize, lambda: f64) -> Vec<AreaRecord> {
        let mut rng = stream(seed, &[1]);
        (0..m)
            .map(|i| {
                let x = 4.0 * ((i * 7919) % m) as f64 / m as f64;
                let d: f64 = [0.2, 0.4, 0.6, 0.8, 1.0][i % 5];
                let t = 1.0 + x + 1.5f64.sqrt() * normal(&mut rng) + d.sqrt() * normal(&mut rng);
                rec(dpt_inv(t, lam(lambda)).unwrap(), vec![1.0, x], d)
            })
            .collect()
    }

    #[test]
    fn fit_properties() {
        let data = simulated(5, 60, 0.5);
        let fit = fit(&data, &SearchSettings::default()).unwrap();
        let lhat = fit.params.lambda().unwrap();
        assert!((0.0..=2.0).contains(&lhat));
        assert_relative_eq!(loglik_with_d(&data, &fit.params, &fit.d_used).unwrap(), fit.loglik, max_relative = 1e-10);
        for &(l, v) in &fit.profile {
            let again = fit_given_lambda(&data, lam(l)).unwrap().profile_loglik;
            assert!((again - v).abs() <= 1e-8 * v.abs().max(1.0));
            assert!(fit.loglik >= v);
        }
        let sorted = fit.sorted_profile();
        assert!(sorted.windows(2).all(|w| w[0].0 <= w[1].0));

        // GLS normal equations at the estimate
        let scale = fit.params.scale;
        let mut ne = [0.0; 2];
        for (r, &d) in data.iter().zip(&fit.d_used) {
            let res = scale.forward(r.y).unwrap() - fit.params.linear_predictor(&r.x);
            for j in 0..2 {
                ne[j] += r.x[j] * res / (fit.params.a + d);
            }
        }
        assert!(ne.iter().all(|v| v.abs() < 1e-8), "{ne:?}");
    }

    #[test]
    fn covariate_scaling_equivariance() {
        let data = simulated(9, 40, 0.7);
        let c = 3.5;
        let scaled: Vec<AreaRecord> = data
            .iter()
            .map(|r| AreaRecord { x: vec![r.x[0], r.x[1] * c], ..r.clone() })
            .collect();
        let f1 = fit(&data, &SearchSettings::default()).unwrap();
        let f2 = fit(&scaled, &SearchSettings::default()).unwrap();
        assert!((f1.params.beta[1] / c - f2.params.beta[1]).abs() < 1e-8);
        assert!((f1.params.beta[0] - f2.params.beta[0]).abs() < 1e-8);
        assert!((f1.params.a - f2.params.a).abs() < 1e-8);
        assert!((f1.params.lambda().unwrap() - f2.params.lambda().unwrap()).abs() < 1e-8);
    }

    #[test]
    fn logfh_is_ptfh_pinned_at_zero() {
        let data = simulated(13, 30, 0.1);
        let pinned = fit(&data, &SearchSettings { lambda_max: 0.0, ..Default::default() }).unwrap();
        let log = fit_logfh(&data).unwrap();
        assert_eq!(pinned.params, log.params);
        assert_eq!(pinned.loglik, log.loglik);
        assert_eq!(pinned.d_used, log.d_used);
    }

    #[test]
    fn replicates_are_resolved_per_lambda() {
        let mut rng = stream(21, &[2]);
        let data: Vec<AreaRecord> = (0..30)
            .map(|i| {
                let x = (i % 6) as f64 * 0.5;
                let t = 1.0 + x + normal(&mut rng);
                let z: Vec<f64> = (0..10).map(|_| dpt_inv(0.7 * normal(&mut rng), lam(0.4)).unwrap()).collect();
                AreaRecord::with_replicates(format!("{i}"), dpt_inv(t, lam(0.4)).unwrap(), vec![1.0, x], z).unwrap()
            })
            .collect();
        let fit = fit(&data, &SearchSettings::default()).unwrap();
        let lhat = fit.params.scale.lambda().unwrap();
        let expected = resolve_d(&data, Scale::Dpt(lhat)).unwrap();
        assert_eq!(fit.d_used, expected);
        let reps = fit_logfh(&data).unwrap();
        assert_eq!(reps.d_used, resolve_d(&data, Scale::log()).unwrap());
    }

    #[test]
    fn refit_near_agrees_with_full_search() {
        let data = simulated(17, 50, 0.6);
        let full = fit(&data, &SearchSettings::default()).unwrap();
        let near = refit_near(&data, full.params.lambda().unwrap(), &SearchSettings::default()).unwrap();
        assert!((near.params.lambda().unwrap() - full.params.lambda().unwrap()).abs() < 1e-4);
        // far-off center triggers the fallback
        let off = refit_near(&data, 1.9, &SearchSettings::default()).unwrap();
        assert!((off.params.lambda().unwrap() - full.params.lambda().unwrap()).abs() < 1e-4);
    }

    #[test]
    fn deterministic_profile() {
        let data = simulated(23, 30, 0.3);
        let a = fit(&data, &SearchSettings::default()).unwrap();
        let b = fit(&data, &SearchSettings::default()).unwrap();
        assert_eq!(a, b);
    }
}
