//! Monte-Carlo studies: prediction error of PTFH against its comparators,
//! and calibration of the bootstrap MSE estimator.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PtfhError, Result};
use crate::estimation::{fit, fit_fh, fit_logfh, SearchSettings};
use crate::linalg::{mean, pairwise_sum};
use crate::model::{AreaRecord, SamplingVariance};
use crate::mse_bootstrap::{bootstrap_mse, MseSettings};
use crate::prediction::{predict_areas, DEFAULT_QUAD_ORDER};
use crate::rng::{normal, scaled_t5, stream, tag};
use crate::transform::{dpt_inv_raw, TransformParam};

/// Number of auxiliary observations per area in both studies.
pub const DEFAULT_AUX: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyScale {
    Desk,
    Full,
}

impl FromStr for StudyScale {
    type Err = PtfhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(StudyScale::Desk),
            "full" => Ok(StudyScale::Full),
            other => Err(PtfhError::Config(format!("unknown study scale '{other}'"))),
        }
    }
}

/// Distribution of the random effects `v_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectDist {
    Normal,
    /// Student-t with 5 degrees of freedom scaled to variance A.
    T5Scaled,
}

/// One simulated data set with the quantities being predicted.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub d_true: Vec<f64>,
    /// Auxiliary observations `z_ik`, empty when not generated.
    pub aux: Vec<Vec<f64>>,
    /// `μ_i = h_λ^{-1}(x_i'β + v_i)`.
    pub truth: Vec<f64>,
}

impl SimulatedData {
    fn id(i: usize) -> String {
        format!("a{}", i + 1)
    }

    /// Records carrying the true sampling variances.
    pub fn records_known(&self) -> Vec<AreaRecord> {
        (0..self.y.len())
            .map(|i| AreaRecord {
                area_id: Self::id(i),
                y: self.y[i],
                x: self.x[i].clone(),
                sampling: SamplingVariance::Known(self.d_true[i]),
            })
            .collect()
    }

    /// Records carrying the auxiliary observations.
    pub fn records_aux(&self) -> Result<Vec<AreaRecord>> {
        if self.aux.len() != self.y.len() {
            return Err(PtfhError::Config("no auxiliary observations were generated".into()));
        }
        Ok((0..self.y.len())
            .map(|i| AreaRecord {
                area_id: Self::id(i),
                y: self.y[i],
                x: self.x[i].clone(),
                sampling: SamplingVariance::Replicates(self.aux[i].clone()),
            })
            .collect())
    }
}

/// Inputs shared by both studies' generators.
struct Generator<'a> {
    seed: u64,
    family: u64,
    x: &'a [Vec<f64>],
    xb: Vec<f64>,
    d: &'a [f64],
    a: f64,
    lambda: f64,
    effect: EffectDist,
    n_aux: usize,
    sampling_noise: bool,
}

impl Generator<'_> {
    fn draw(&self, r: usize) -> SimulatedData {
        let m = self.x.len();
        let mut out = SimulatedData {
            x: self.x.to_vec(),
            y: Vec::with_capacity(m),
            d_true: self.d.to_vec(),
            aux: Vec::with_capacity(if self.n_aux > 0 { m } else { 0 }),
            truth: Vec::with_capacity(m),
        };
        for i in 0..m {
            let mut rng = stream(self.seed, &[self.family, r as u64, i as u64]);
            let v = match self.effect {
                EffectDist::Normal => self.a.sqrt() * normal(&mut rng),
                EffectDist::T5Scaled => scaled_t5(&mut rng, self.a),
            };
            let e = if self.sampling_noise { self.d[i].sqrt() * normal(&mut rng) } else { 0.0 };
            out.truth.push(dpt_inv_raw(self.xb[i] + v, self.lambda));
            out.y.push(dpt_inv_raw(self.xb[i] + v + e, self.lambda));
            if self.n_aux > 0 {
                let mut aux_rng = stream(self.seed, &[tag::AUX, self.family, r as u64, i as u64]);
                let sd = self.d[i].sqrt();
                out.aux.push((0..self.n_aux).map(|_| dpt_inv_raw(sd * normal(&mut aux_rng), self.lambda)).collect());
            }
        }
        out
    }
}

fn check_pattern(d_pattern: &[f64], m: usize) -> Result<()> {
    if d_pattern.is_empty() || d_pattern.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
        return Err(PtfhError::Config("D pattern entries must be positive".into()));
    }
    if m == 0 || !m.is_multiple_of(d_pattern.len()) {
        return Err(PtfhError::Config(format!(
            "m = {m} is not divisible by the {} groups",
            d_pattern.len()
        )));
    }
    Ok(())
}

/// Group index of each area: consecutive blocks of equal size.
pub fn group_of(m: usize, groups: usize) -> Vec<usize> {
    let per = m / groups;
    (0..m).map(|i| i / per).collect()
}

fn expand_pattern(d_pattern: &[f64], m: usize) -> Vec<f64> {
    group_of(m, d_pattern.len()).into_iter().map(|g| d_pattern[g]).collect()
}

// ---------------------------------------------------------------------------
// prediction study

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// PTFH fitted with the true sampling variances.
    PtfhTrueD,
    /// PTFH with D_i(λ) from the auxiliary observations.
    Ptfh,
    LogFh,
    Fh,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PtfhTrueD, Method::Ptfh, Method::LogFh, Method::Fh];

    pub fn label(&self) -> &'static str {
        match self {
            Method::PtfhTrueD => "PTFH-t",
            Method::Ptfh => "PTFH",
            Method::LogFh => "log-FH",
            Method::Fh => "FH",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredStudyConfig {
    pub m: usize,
    /// Sampling variance of each group; areas are split into equal blocks.
    pub d_pattern: Vec<f64>,
    pub beta0: f64,
    pub beta1: f64,
    pub a: f64,
    pub lambda: f64,
    pub effect_dist: EffectDist,
    pub r: usize,
    pub n_aux: usize,
    pub seed: u64,
    pub search: SearchSettings,
    pub quad_order: usize,
    /// Test hook: when false, ε_i = 0.
    pub sampling_noise: bool,
}

impl PredStudyConfig {
    pub fn new(lambda: f64, scale: StudyScale) -> Self {
        PredStudyConfig {
            m: 30,
            d_pattern: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            beta0: 1.0,
            beta1: 1.0,
            a: 1.5,
            lambda,
            effect_dist: EffectDist::Normal,
            r: match scale {
                StudyScale::Desk => 1000,
                StudyScale::Full => 10_000,
            },
            n_aux: DEFAULT_AUX,
            seed: crate::rng::DEFAULT_SEED,
            search: SearchSettings::default(),
            quad_order: DEFAULT_QUAD_ORDER,
            sampling_noise: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_pattern(&self.d_pattern, self.m)?;
        TransformParam::new(self.lambda)?;
        if !(self.a.is_finite() && self.a >= 0.0) {
            return Err(PtfhError::Config(format!("A must be >= 0, got {}", self.a)));
        }
        if self.r == 0 {
            return Err(PtfhError::Config("replicate count must be positive".into()));
        }
        if self.n_aux == 1 {
            return Err(PtfhError::Config("need 0 or at least 2 auxiliary observations".into()));
        }
        self.search.validate()
    }

    /// Covariates drawn once from U(0, 4) and held fixed across replicates.
    pub fn covariates(&self) -> Vec<f64> {
        let mut rng = stream(self.seed, &[tag::COVARIATES]);
        (0..self.m).map(|_| rng.random_range(0.0..4.0)).collect()
    }

    fn generator<'a>(&self, x: &'a [Vec<f64>], d: &'a [f64]) -> Generator<'a> {
        Generator {
            seed: self.seed,
            family: tag::MODEL,
            x,
            xb: x.iter().map(|r| self.beta0 + self.beta1 * r[1]).collect(),
            d,
            a: self.a,
            lambda: self.lambda,
            effect: self.effect_dist,
            n_aux: self.n_aux,
            sampling_noise: self.sampling_noise,
        }
    }
}

/// Data set `r` of the prediction study.
pub fn gen_pred_data(config: &PredStudyConfig, r: usize) -> Result<SimulatedData> {
    config.validate()?;
    let x: Vec<Vec<f64>> = config.covariates().into_iter().map(|c| vec![1.0, c]).collect();
    let d = expand_pattern(&config.d_pattern, config.m);
    Ok(config.generator(&x, &d).draw(r))
}

/// Fits `method` and returns its predictions of μ.
pub fn predict_method(method: Method, data: &SimulatedData, search: &SearchSettings, quad_order: usize) -> Result<Vec<f64>> {
    let records = match method {
        Method::PtfhTrueD => data.records_known(),
        _ => data.records_aux()?,
    };
    let fitted = match method {
        Method::PtfhTrueD | Method::Ptfh => fit(&records, search)?,
        Method::LogFh => fit_logfh(&records)?,
        Method::Fh => fit_fh(&records)?,
    };
    if !fitted.convergence.tolerance_met {
        return Err(PtfhError::Numerical(format!("{method} search did not converge")));
    }
    Ok(predict_areas(&records, &fitted, quad_order)?.into_iter().map(|p| p.mu_hat).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Per-area CV in percent.
    pub cv: Vec<f64>,
    /// Per-area ARB in percent.
    pub arb: Vec<f64>,
    pub group_cv: Vec<f64>,
    pub group_arb: Vec<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredStudyReport {
    pub config: PredStudyConfig,
    pub covariates: Vec<f64>,
    pub methods: Vec<MethodSummary>,
    /// `errors[r][k]`: relative errors (μ̂ − μ)/μ of method k in replicate
    /// r, or None when the fit failed.
    pub errors: Vec<Vec<Option<Vec<f64>>>>,
}

impl PredStudyReport {
    pub fn method(&self, method: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == method)
    }
}

/// Predictor used by the study; the default fits each method.
pub type Predictor<'a> = dyn Fn(Method, &SimulatedData) -> Result<Vec<f64>> + Sync + 'a;

pub fn run_pred_study(config: &PredStudyConfig) -> Result<PredStudyReport> {
    let search = config.search.clone();
    let order = config.quad_order;
    run_pred_study_with(config, &Method::ALL, &move |m, d| predict_method(m, d, &search, order))
}

pub fn run_pred_study_with(config: &PredStudyConfig, methods: &[Method], predictor: &Predictor<'_>) -> Result<PredStudyReport> {
    config.validate()?;
    let covariates = config.covariates();
    let x: Vec<Vec<f64>> = covariates.iter().map(|&c| vec![1.0, c]).collect();
    let d = expand_pattern(&config.d_pattern, config.m);
    let generator = config.generator(&x, &d);

    let errors: Vec<Vec<Option<Vec<f64>>>> = (0..config.r)
        .into_par_iter()
        .map(|r| {
            let data = generator.draw(r);
            methods
                .iter()
                .map(|&method| {
                    let mu_hat = predictor(method, &data).ok()?;
                    let rel: Vec<f64> = mu_hat.iter().zip(&data.truth).map(|(h, t)| (h - t) / t).collect();
                    rel.iter().all(|e| e.is_finite()).then_some(rel)
                })
                .collect()
        })
        .collect();

    let groups = group_of(config.m, config.d_pattern.len());
    let mut summaries = Vec::with_capacity(methods.len());
    for (k, &method) in methods.iter().enumerate() {
        let ok: Vec<&Vec<f64>> = errors.iter().filter_map(|row| row[k].as_ref()).collect();
        let failures = config.r - ok.len();
        if ok.is_empty() {
            return Err(PtfhError::Numerical(format!("{method}: every replicate failed")));
        }
        let mut cv = Vec::with_capacity(config.m);
        let mut arb = Vec::with_capacity(config.m);
        for i in 0..config.m {
            let e: Vec<f64> = ok.iter().map(|row| row[i]).collect();
            let sq: Vec<f64> = e.iter().map(|v| v * v).collect();
            cv.push(100.0 * mean(&sq).sqrt());
            arb.push(100.0 * mean(&e).abs());
        }
        summaries.push(MethodSummary {
            method,
            group_cv: group_means(&cv, &groups, config.d_pattern.len()),
            group_arb: group_means(&arb, &groups, config.d_pattern.len()),
            cv,
            arb,
            failures,
        });
    }
    Ok(PredStudyReport { config: config.clone(), covariates, methods: summaries, errors })
}

/// Arithmetic mean of `values` within each group.
pub fn group_means(values: &[f64], groups: &[usize], n_groups: usize) -> Vec<f64> {
    (0..n_groups)
        .map(|g| {
            let members: Vec<f64> = values.iter().zip(groups).filter(|(_, &gi)| gi == g).map(|(v, _)| *v).collect();
            mean(&members)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// MSE study

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DPattern {
    A,
    B,
    C,
}

impl DPattern {
    pub fn values(&self) -> [f64; 5] {
        match self {
            DPattern::A => [0.3, 0.4, 0.5, 0.6, 0.7],
            DPattern::B => [0.2, 0.4, 0.5, 0.6, 2.0],
            DPattern::C => [0.1, 0.4, 0.5, 0.6, 4.0],
        }
    }
}

impl FromStr for DPattern {
    type Err = PtfhError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "a" => Ok(DPattern::A),
            "b" => Ok(DPattern::B),
            "c" => Ok(DPattern::C),
            other => Err(PtfhError::Config(format!("unknown D pattern '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseStudyConfig {
    pub m: usize,
    pub mu: f64,
    pub a: f64,
    pub lambda: f64,
    pub pattern: DPattern,
    /// Runs used to simulate the true MSE.
    pub r1: usize,
    /// Runs used to evaluate the estimator.
    pub r2: usize,
    pub mse: MseSettings,
    pub known_d: bool,
    pub n_aux: usize,
    pub seed: u64,
}

impl MseStudyConfig {
    pub fn new(lambda: f64, pattern: DPattern, scale: StudyScale) -> Self {
        let (r1, r2) = match scale {
            StudyScale::Desk => (2000, 200),
            StudyScale::Full => (5000, 2000),
        };
        MseStudyConfig {
            m: 30,
            mu: 0.0,
            a: 1.0,
            lambda,
            pattern,
            r1,
            r2,
            mse: MseSettings::default(),
            known_d: true,
            n_aux: DEFAULT_AUX,
            seed: crate::rng::DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_pattern(&self.pattern.values(), self.m)?;
        TransformParam::new(self.lambda)?;
        if self.r1 == 0 || self.r2 == 0 {
            return Err(PtfhError::Config("replicate counts must be positive".into()));
        }
        if !self.known_d && self.n_aux < 2 {
            return Err(PtfhError::Config("estimated D needs at least 2 auxiliary observations".into()));
        }
        self.mse.validate()
    }

    fn generator<'a>(&self, family: u64, x: &'a [Vec<f64>], d: &'a [f64]) -> Generator<'a> {
        Generator {
            seed: self.seed,
            family,
            x,
            xb: vec![self.mu; self.m],
            d,
            a: self.a,
            lambda: self.lambda,
            effect: EffectDist::Normal,
            n_aux: if self.known_d { 0 } else { self.n_aux },
            sampling_noise: true,
        }
    }

    fn records(&self, data: &SimulatedData) -> Result<Vec<AreaRecord>> {
        if self.known_d {
            Ok(data.records_known())
        } else {
            data.records_aux()
        }
    }
}

/// Simulated true MSE of the PTFH EBP per area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueMse {
    pub mse: Vec<f64>,
    pub failures: usize,
}

pub fn simulate_true_mse(config: &MseStudyConfig) -> Result<TrueMse> {
    config.validate()?;
    let x = vec![vec![1.0]; config.m];
    let d = expand_pattern(&config.pattern.values(), config.m);
    let generator = config.generator(tag::MSE_TRUE, &x, &d);
    let rows: Vec<Option<Vec<f64>>> = (0..config.r1)
        .into_par_iter()
        .map(|r| {
            let data = generator.draw(r);
            let records = config.records(&data).ok()?;
            let fitted = fit(&records, &config.mse.search).ok()?;
            if !fitted.convergence.tolerance_met {
                return None;
            }
            let pred = predict_areas(&records, &fitted, config.mse.quad_order).ok()?;
            Some(pred.iter().zip(&data.truth).map(|(p, t)| (p.mu_hat - t) * (p.mu_hat - t)).collect())
        })
        .collect();
    let ok: Vec<&Vec<f64>> = rows.iter().flatten().collect();
    if ok.is_empty() {
        return Err(PtfhError::Numerical("every true-MSE replicate failed".into()));
    }
    let mse = (0..config.m).map(|i| mean(&ok.iter().map(|row| row[i]).collect::<Vec<_>>())).collect();
    Ok(TrueMse { mse, failures: config.r1 - ok.len() })
}

/// Corrected and naive MSE estimates for one simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseEstimates {
    pub corrected: Vec<f64>,
    pub naive: Vec<f64>,
    pub valid: bool,
}

/// Estimator under study: data set and replicate index to estimates.
pub type MseEstimator<'a> = dyn Fn(&SimulatedData, usize) -> Result<MseEstimates> + Sync + 'a;

/// Bootstrap seed for replicate `r` of a study.
fn replicate_seed(seed: u64, r: usize) -> u64 {
    use rand::RngCore;
    stream(seed, &[tag::MSE_EST, u64::MAX, r as u64]).next_u64()
}

/// The parametric-bootstrap estimator applied to one data set.
pub fn bootstrap_estimates(config: &MseStudyConfig, data: &SimulatedData, r: usize) -> Result<MseEstimates> {
    let records = config.records(data)?;
    let fitted = fit(&records, &config.mse.search)?;
    if !fitted.convergence.tolerance_met {
        return Err(PtfhError::Numerical("PTFH search did not converge".into()));
    }
    let settings = MseSettings { seed: replicate_seed(config.seed, r), ..config.mse.clone() };
    let rep = bootstrap_mse(&records, &fitted, &settings)?;
    Ok(MseEstimates {
        corrected: rep.areas.iter().map(|a| a.mse_total).collect(),
        naive: rep.areas.iter().map(|a| a.naive()).collect(),
        valid: rep.valid,
    })
}

/// max / mean / min of a per-area statistic within each group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub max: f64,
    pub mean: f64,
    pub min: f64,
}

fn group_stats(values: &[f64], groups: &[usize], n_groups: usize) -> Vec<GroupStats> {
    (0..n_groups)
        .map(|g| {
            let v: Vec<f64> = values.iter().zip(groups).filter(|(_, &gi)| gi == g).map(|(v, _)| *v).collect();
            GroupStats {
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                mean: mean(&v),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    /// Per-area RB in percent.
    pub rb: Vec<f64>,
    /// Per-area CV in percent.
    pub cv: Vec<f64>,
    pub group_rb: Vec<GroupStats>,
    pub group_cv: Vec<GroupStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseStudyReport {
    pub config: MseStudyConfig,
    pub true_mse: TrueMse,
    pub corrected: EstimatorSummary,
    /// `g1(φ̂) + g2*` without bias correction.
    pub naive: EstimatorSummary,
    pub failures: usize,
    pub invalid_reports: usize,
    /// Per-replicate corrected estimates, None for failed replicates.
    pub estimates: Vec<Option<MseEstimates>>,
}

pub fn run_mse_study(config: &MseStudyConfig) -> Result<MseStudyReport> {
    let truth = simulate_true_mse(config)?;
    run_mse_study_with(config, truth, &|data, r| bootstrap_estimates(config, data, r))
}

pub fn run_mse_study_with(config: &MseStudyConfig, truth: TrueMse, estimator: &MseEstimator<'_>) -> Result<MseStudyReport> {
    config.validate()?;
    if truth.mse.len() != config.m {
        return Err(PtfhError::Config("true MSE length does not match m".into()));
    }
    let x = vec![vec![1.0]; config.m];
    let d = expand_pattern(&config.pattern.values(), config.m);
    let generator = config.generator(tag::MSE_EST, &x, &d);
    let estimates: Vec<Option<MseEstimates>> =
        (0..config.r2).into_par_iter().map(|r| estimator(&generator.draw(r), r).ok()).collect();
    let ok: Vec<&MseEstimates> = estimates.iter().flatten().collect();
    if ok.is_empty() {
        return Err(PtfhError::Numerical("every estimator replicate failed".into()));
    }
    let groups = group_of(config.m, 5);
    let summarize = |pick: &dyn Fn(&MseEstimates) -> &Vec<f64>| {
        let mut rb = Vec::with_capacity(config.m);
        let mut cv = Vec::with_capacity(config.m);
        for i in 0..config.m {
            let t = truth.mse[i];
            let rel: Vec<f64> = ok.iter().map(|e| (pick(e)[i] - t) / t).collect();
            let sq: Vec<f64> = rel.iter().map(|v| v * v).collect();
            rb.push(100.0 * pairwise_sum(&rel) / rel.len() as f64);
            cv.push(100.0 * mean(&sq).sqrt());
        }
        EstimatorSummary {
            group_rb: group_stats(&rb, &groups, 5),
            group_cv: group_stats(&cv, &groups, 5),
            rb,
            cv,
        }
    };
    let corrected = summarize(&|e| &e.corrected);
    let naive = summarize(&|e| &e.naive);
    Ok(MseStudyReport {
        config: config.clone(),
        failures: config.r2 - ok.len(),
        invalid_reports: ok.iter().filter(|e| !e.valid).count(),
        true_mse: truth,
        corrected,
        naive,
        estimates,
    })
}
