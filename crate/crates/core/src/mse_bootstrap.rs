//! Mean squared error of the EBP.
//!
//! `MSE_i = g1_i(φ) + g2_i`, where g1 is the MSE of the best predictor with
//! φ known and g2 the extra error from estimating φ. g1 is evaluated by
//! Monte Carlo through
//!
//! g1 = E[h^{-1}(x'β + z1)² − h^{-1}(x'β + c1 z1 + c2 z2) h^{-1}(x'β + c1 z1 − c2 z2)]
//!
//! with z1, z2 ~ N(0, A), c1 = √((1+a)/2), c2 = √((1−a)/2), a = A/(A+D).
//! A parametric bootstrap corrects the bias of g1(φ̂) and estimates g2.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PtfhError, Result};
use crate::estimation::{refit_model, FitResult, SearchSettings};
use crate::linalg::pairwise_sum;
use crate::model::{AreaRecord, ModelParams, Scale, SamplingVariance};
use crate::prediction::{conditional_mean, posterior, DEFAULT_QUAD_ORDER};
use crate::rng::{normal, stream, tag};

pub const DEFAULT_BOOT: usize = 100;
pub const DEFAULT_MC_SAMPLES: usize = 10_000;
pub const MIN_MC_SAMPLES: usize = 1000;

/// Bias correction applied to the plug-in g1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correction {
    /// `2 g1(φ̂) − E*[g1(φ̂*)]`
    Additive,
    /// `g1(φ̂)² / E*[g1(φ̂*)]`, never negative.
    Multiplicative,
}

impl fmt::Display for Correction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Correction::Additive => "additive",
            Correction::Multiplicative => "multiplicative",
        })
    }
}

impl FromStr for Correction {
    type Err = PtfhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(Correction::Additive),
            "multiplicative" => Ok(Correction::Multiplicative),
            other => Err(PtfhError::Config(format!("unknown correction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSettings {
    /// Bootstrap replicates.
    pub b: usize,
    /// Monte-Carlo draws for g1.
    pub s: usize,
    pub seed: u64,
    pub correction: Correction,
    /// Report `g2*` instead of a negative additive total.
    pub clamp_negative: bool,
    pub quad_order: usize,
    /// Search used for the bootstrap refits.
    pub search: SearchSettings,
}

impl Default for MseSettings {
    fn default() -> Self {
        MseSettings {
            b: DEFAULT_BOOT,
            s: DEFAULT_MC_SAMPLES,
            seed: crate::rng::DEFAULT_SEED,
            correction: Correction::Additive,
            clamp_negative: false,
            quad_order: DEFAULT_QUAD_ORDER,
            search: SearchSettings::default(),
        }
    }
}

impl MseSettings {
    pub fn validate(&self) -> Result<()> {
        if self.b < 1 {
            return Err(PtfhError::Config("bootstrap replicates must be >= 1".into()));
        }
        if self.s < MIN_MC_SAMPLES {
            return Err(PtfhError::Config(format!(
                "Monte-Carlo samples must be >= {MIN_MC_SAMPLES}, got {}",
                self.s
            )));
        }
        if self.quad_order < 2 {
            return Err(PtfhError::Config("quadrature order must be >= 2".into()));
        }
        self.search.validate()
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

/// Standard normal pairs shared by every g1 evaluation of one report.
#[derive(Debug, Clone)]
pub struct CommonDraws {
    pairs: Vec<(f64, f64)>,
}

impl CommonDraws {
    pub fn generate<R: Rng + ?Sized>(s: usize, rng: &mut R) -> Self {
        CommonDraws { pairs: (0..s).map(|_| (normal(rng), normal(rng))).collect() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// g1 at linear predictor `xb`, random-effect variance `a`, sampling
    /// variance `d` on `scale`.
    pub fn g1(&self, scale: Scale, xb: f64, a: f64, d: f64) -> Result<McEstimate> {
        if !(a.is_finite() && a >= 0.0) {
            return Err(PtfhError::Domain(format!("A must be finite and >= 0, got {a}")));
        }
        if !(d.is_finite() && d > 0.0) {
            return Err(PtfhError::Domain(format!("D must be positive and finite, got {d}")));
        }
        if self.pairs.is_empty() {
            return Err(PtfhError::Config("g1 needs at least one draw".into()));
        }
        if a == 0.0 {
            return Ok(McEstimate { value: 0.0, se: 0.0 });
        }
        let ratio = a / (a + d);
        let sa = a.sqrt();
        let c1 = (0.5 * (1.0 + ratio)).sqrt() * sa;
        let c2 = (0.5 * (1.0 - ratio)).sqrt() * sa;
        let mut terms = Vec::with_capacity(self.pairs.len());
        for (k, &(u1, u2)) in self.pairs.iter().enumerate() {
            let own = scale.inverse_raw(xb + sa * u1);
            let shared = xb + c1 * u1;
            let t = own * own - scale.inverse_raw(shared + c2 * u2) * scale.inverse_raw(shared - c2 * u2);
            if !t.is_finite() {
                return Err(PtfhError::Overflow(format!("g1 draw {k}: inverse transform is not finite")));
            }
            terms.push(t);
        }
        Ok(mean_and_se(&terms))
    }
}

fn mean_and_se(v: &[f64]) -> McEstimate {
    let n = v.len() as f64;
    let m = pairwise_sum(v) / n;
    if v.len() < 2 {
        return McEstimate { value: m, se: 0.0 };
    }
    let dev: Vec<f64> = v.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&dev) / (n - 1.0);
    McEstimate { value: m, se: (var / n).sqrt() }
}

/// Monte-Carlo g1 for one area with `s` fresh pairs from `rng`.
pub fn g1_mc<R: Rng + ?Sized>(params: &ModelParams, x: &[f64], d: f64, s: usize, rng: &mut R) -> Result<McEstimate> {
    let draws = CommonDraws::generate(s, rng);
    draws.g1(params.scale, params.linear_predictor(x), params.a, d)
}

/// Conditional mean of μ given the posterior of θ on `scale`.
fn mu_tilde(scale: Scale, theta: f64, sigma2: f64, quad_order: usize) -> Result<f64> {
    match scale {
        Scale::Identity => Ok(theta),
        Scale::Dpt(l) => conditional_mean(theta, sigma2, l, quad_order),
    }
}

/// `μ̃(y, φ)` with a given sampling variance.
pub fn mu_tilde_at(y: f64, x: &[f64], params: &ModelParams, d: f64, quad_order: usize) -> Result<f64> {
    let h = params.scale.forward(y)?;
    let post = posterior(h, params.linear_predictor(x), params.a, d);
    mu_tilde(params.scale, post.theta, post.sigma2, quad_order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaMse {
    pub area_id: String,
    pub g1_plugin: f64,
    pub g1_corrected: f64,
    pub g2_star: f64,
    /// `g1_corrected + g2_star`, or `g2_star` when negative and clamping is on.
    pub mse_total: f64,
    /// `g1_corrected + g2_star` as computed.
    pub mse_raw: f64,
    pub negative: bool,
    pub clamped: bool,
}

impl AreaMse {
    /// Plug-in estimate without bias correction, `g1(φ̂) + g2*`.
    pub fn naive(&self) -> f64 {
        self.g1_plugin + self.g2_star
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub areas: Vec<AreaMse>,
    pub settings: MseSettings,
    /// Replicates that entered the bootstrap averages.
    pub replicates_used: usize,
    /// Indices of dropped replicates (failed generation or refit).
    pub failed_replicates: Vec<usize>,
    /// False when more than 10% of the replicates failed.
    pub valid: bool,
}

impl MseReport {
    pub fn failures(&self) -> usize {
        self.failed_replicates.len()
    }
}

/// Refits a bootstrap sample; the second argument is the replicate index.
pub type Refitter<'a> = dyn Fn(&[AreaRecord], usize) -> Result<FitResult> + Sync + 'a;

struct Replicate {
    g1: Vec<f64>,
    g2: Vec<f64>,
}

/// g1 for every area, evaluating each distinct (x'β, D) once.
fn g1_all(draws: &CommonDraws, params: &ModelParams, xs: &[&[f64]], d: &[f64]) -> Result<Vec<f64>> {
    let mut seen: HashMap<(u64, u64), f64> = HashMap::new();
    xs.iter()
        .zip(d)
        .map(|(x, &di)| {
            let xb = params.linear_predictor(x);
            let key = (xb.to_bits(), di.to_bits());
            if let Some(&v) = seen.get(&key) {
                return Ok(v);
            }
            let v = draws.g1(params.scale, xb, params.a, di)?.value;
            seen.insert(key, v);
            Ok(v)
        })
        .collect()
}

/// Parametric-bootstrap MSE of the EBP at `fit`.
pub fn bootstrap_mse(data: &[AreaRecord], fit: &FitResult, settings: &MseSettings) -> Result<MseReport> {
    let center = fit.params.lambda();
    let search = settings.search.clone();
    let kind = fit.kind;
    let refit = move |sample: &[AreaRecord], _b: usize| refit_model(kind, sample, &search, center);
    bootstrap_mse_with(data, fit, settings, &refit)
}

/// [`bootstrap_mse`] with a caller-supplied refit.
pub fn bootstrap_mse_with(
    data: &[AreaRecord],
    fit: &FitResult,
    settings: &MseSettings,
    refitter: &Refitter<'_>,
) -> Result<MseReport> {
    settings.validate()?;
    let m = data.len();
    if m != fit.d_used.len() {
        return Err(PtfhError::Data(format!("fit has {} areas, data has {m}", fit.d_used.len())));
    }
    let params = &fit.params;
    let d = &fit.d_used;
    let xs: Vec<&[f64]> = data.iter().map(|r| r.x.as_slice()).collect();
    let draws = CommonDraws::generate(settings.s, &mut stream(settings.seed, &[tag::G1_CRN]));

    let g1_hat = g1_all(&draws, params, &xs, d)?;
    let mu_hat: Vec<f64> = data
        .iter()
        .zip(d)
        .map(|(r, &di)| mu_tilde_at(r.y, &r.x, params, di, settings.quad_order))
        .collect::<Result<_>>()?;

    let run = |b: usize| -> Option<Replicate> {
        let mut sample = Vec::with_capacity(m);
        for (i, r) in data.iter().enumerate() {
            let mut rng = stream(settings.seed, &[tag::BOOTSTRAP, b as u64, i as u64]);
            let v = params.a.sqrt() * normal(&mut rng);
            let e = d[i].sqrt() * normal(&mut rng);
            let y = params.scale.inverse_raw(params.linear_predictor(&r.x) + v + e);
            if !(y.is_finite() && y > 0.0) {
                return None;
            }
            sample.push(AreaRecord {
                area_id: r.area_id.clone(),
                y,
                x: r.x.clone(),
                sampling: SamplingVariance::Known(d[i]),
            });
        }
        let star = refitter(&sample, b).ok()?;
        if !star.convergence.tolerance_met {
            return None;
        }
        let g1 = g1_all(&draws, &star.params, &xs, d).ok()?;
        let mut g2 = Vec::with_capacity(m);
        for (i, r) in data.iter().enumerate() {
            let mu = mu_tilde_at(r.y, &r.x, &star.params, d[i], settings.quad_order).ok()?;
            g2.push((mu - mu_hat[i]) * (mu - mu_hat[i]));
        }
        Some(Replicate { g1, g2 })
    };

    let outcomes: Vec<Option<Replicate>> = (0..settings.b).into_par_iter().map(run).collect();
    let failed_replicates: Vec<usize> = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_none())
        .map(|(b, _)| b)
        .collect();
    let ok: Vec<&Replicate> = outcomes.iter().flatten().collect();
    if ok.is_empty() {
        return Err(PtfhError::Numerical("every bootstrap replicate failed".into()));
    }
    let valid = failed_replicates.len() * 10 <= settings.b;

    let mut areas = Vec::with_capacity(m);
    for i in 0..m {
        let g1_star: Vec<f64> = ok.iter().map(|r| r.g1[i]).collect();
        let g2_terms: Vec<f64> = ok.iter().map(|r| r.g2[i]).collect();
        let g1_star_mean = pairwise_sum(&g1_star) / ok.len() as f64;
        let g2_star = pairwise_sum(&g2_terms) / ok.len() as f64;
        let g1 = g1_hat[i];
        let g1_corrected = match settings.correction {
            Correction::Additive => 2.0 * g1 - g1_star_mean,
            Correction::Multiplicative => {
                if g1 == 0.0 {
                    0.0
                } else {
                    g1 * g1 / g1_star_mean
                }
            }
        };
        let mse_raw = g1_corrected + g2_star;
        let negative = mse_raw < 0.0;
        let clamped = negative && settings.clamp_negative;
        areas.push(AreaMse {
            area_id: data[i].area_id.clone(),
            g1_plugin: g1,
            g1_corrected,
            g2_star,
            mse_total: if clamped { g2_star } else { mse_raw },
            mse_raw,
            negative,
            clamped,
        });
    }
    Ok(MseReport { areas, settings: settings.clone(), replicates_used: ok.len(), failed_replicates, valid })
}
