use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use ptfh::diagnostics::{
    lambda_bootstrap_ci, marginal_aic, spline_gof_fit, standardized_residuals, ks_normal_test, SplineConfig,
};
use ptfh::estimation::{fit_fh, fit_logfh};
use ptfh::io::{self, Dataset, OutputSet, Table};
use ptfh::mse_bootstrap::{bootstrap_mse, Correction, MseSettings, DEFAULT_BOOT, DEFAULT_MC_SAMPLES};
use ptfh::optimize::linspace;
use ptfh::prediction::{predict_areas, DEFAULT_QUAD_ORDER};
use ptfh::rng::DEFAULT_SEED;
use ptfh::simulation::{
    run_mse_study, run_pred_study, DPattern, EffectDist, MseStudyConfig, PredStudyConfig, StudyScale,
};
use ptfh::{fit_model, ModelKind, PtfhError, Result, SearchSettings};

#[derive(Parser, Debug)]
#[command(name = "ptfh", version, about = "Dual power transformed Fay-Herriot models")]
struct Cli {
    /// Worker threads (outputs do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model and write the fit summary and λ profile.
    Fit(FitArgs),
    /// Fit, predict area means and (optionally) their RMSE.
    Predict(PredictArgs),
    /// Bootstrap MSE of the empirical best predictor.
    Mse(MseArgs),
    /// Run a simulation study.
    Simulate(SimulateArgs),
    /// Residual, AIC, λ interval and spline goodness-of-fit diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Ptfh,
    Logfh,
    Fh,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Ptfh => ModelKind::Ptfh,
            ModelArg::Logfh => ModelKind::Logfh,
            ModelArg::Fh => ModelKind::Fh,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CorrectionArg {
    Additive,
    Multiplicative,
}

impl From<CorrectionArg> for Correction {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::Additive => Correction::Additive,
            CorrectionArg::Multiplicative => Correction::Multiplicative,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StudyArg {
    Pred,
    Mse,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PatternArg {
    A,
    B,
    C,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EffectArg {
    Normal,
    T5,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum DMode {
    Known,
    Estimated,
    Both,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "ptfh-out")]
    out: PathBuf,
    /// Random seed (default: $PTFH_SEED, else a fixed constant).
    #[arg(long)]
    seed: Option<u64>,
    /// Upper end of the λ search range.
    #[arg(long, default_value_t = 2.0)]
    lambda_max: f64,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Input CSV (columns: [area_id,] y, x1..xp, and D or z1..zk).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "ptfh")]
    model: ModelArg,
}

#[derive(Args, Debug)]
struct BootArgs {
    /// Bootstrap replicates.
    #[arg(long = "boot", default_value_t = DEFAULT_BOOT)]
    boot: usize,
    /// Monte-Carlo draws for g1.
    #[arg(long = "mc-samples", default_value_t = DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, value_enum, default_value = "additive")]
    correction: CorrectionArg,
    /// Report g2* instead of negative additive totals.
    #[arg(long)]
    clamp_negative: bool,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    #[arg(long = "quad-order", default_value_t = DEFAULT_QUAD_ORDER)]
    quad_order: usize,
    /// Bootstrap replicates for the RMSE column; 0 skips it.
    #[arg(long = "boot", default_value_t = DEFAULT_BOOT)]
    boot: usize,
    #[arg(long = "mc-samples", default_value_t = DEFAULT_MC_SAMPLES)]
    mc_samples: usize,
    #[arg(long, value_enum, default_value = "additive")]
    correction: CorrectionArg,
}

#[derive(Args, Debug)]
struct MseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    boot: BootArgs,
    #[arg(long = "quad-order", default_value_t = DEFAULT_QUAD_ORDER)]
    quad_order: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum)]
    study: StudyArg,
    /// D pattern of the MSE study.
    #[arg(long, value_enum, default_value = "a")]
    pattern: PatternArg,
    #[arg(long, value_enum, default_value = "desk")]
    scale: ScaleArg,
    /// True λ values (comma separated); defaults to the study's design values.
    #[arg(long, value_delimiter = ',')]
    lambda: Vec<f64>,
    /// Random-effect distribution of the prediction study.
    #[arg(long, value_enum, default_value = "normal")]
    effect: EffectArg,
    /// Sampling variances used by the MSE study.
    #[arg(long = "d-mode", value_enum, default_value = "known")]
    d_mode: DMode,
    /// Override the replicate count R of the prediction study.
    #[arg(long)]
    reps: Option<usize>,
    /// Override R1 (true-MSE runs) of the MSE study.
    #[arg(long)]
    r1: Option<usize>,
    /// Override R2 (estimator runs) of the MSE study.
    #[arg(long)]
    r2: Option<usize>,
    #[arg(long = "quad-order", default_value_t = DEFAULT_QUAD_ORDER)]
    quad_order: usize,
    #[command(flatten)]
    boot: BootArgs,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Bootstrap samples for the λ interval; 0 skips it.
    #[arg(long = "boot", default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Spline knots.
    #[arg(long, default_value_t = 20)]
    knots: usize,
    /// Points of the curve grid.
    #[arg(long = "grid-points", default_value_t = 200)]
    grid_points: usize,
}

fn resolve_seed(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("PTFH_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| PtfhError::Config(format!("PTFH_SEED must be an unsigned integer, got '{v}'"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

fn search(common: &Common) -> Result<SearchSettings> {
    let s = SearchSettings { lambda_max: common.lambda_max, ..Default::default() };
    s.validate()?;
    Ok(s)
}

fn load(path: &Path) -> Result<(Dataset, io::FileDigest)> {
    Ok((io::parse_dataset(path)?, io::digest_file(path)?))
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let seed = resolve_seed(a.common.seed)?;
    let (ds, digest) = load(&a.data.data)?;
    let kind: ModelKind = a.data.model.into();
    let fitted = fit_model(kind, &ds.records, &search(&a.common)?)?;
    let aic = marginal_aic(&ds.records, &fitted)?;
    let mut out = OutputSet::default();
    out.add_table("fit_summary.csv", &io::fit_summary_table(&[(&fitted, Some(aic))]))?;
    if kind == ModelKind::Ptfh {
        out.add_table("profile.csv", &io::profile_table(&fitted))?;
    }
    let config = json!({ "model": kind.name(), "lambda_max": a.common.lambda_max });
    out.write(&a.common.out, "fit", seed, config, vec![digest])
}

fn mse_settings(seed: u64, common: &Common, boot: usize, s: usize, correction: Correction, clamp: bool, quad_order: usize) -> Result<MseSettings> {
    let settings = MseSettings {
        b: boot,
        s,
        seed,
        correction,
        clamp_negative: clamp,
        quad_order,
        search: search(common)?,
    };
    settings.validate()?;
    Ok(settings)
}

fn cmd_predict(a: &PredictArgs) -> Result<()> {
    let seed = resolve_seed(a.common.seed)?;
    let (ds, digest) = load(&a.data.data)?;
    let kind: ModelKind = a.data.model.into();
    let fitted = fit_model(kind, &ds.records, &search(&a.common)?)?;
    let preds = predict_areas(&ds.records, &fitted, a.quad_order)?;
    let report = if a.boot > 0 {
        let settings = mse_settings(seed, &a.common, a.boot, a.mc_samples, a.correction.into(), false, a.quad_order)?;
        Some(bootstrap_mse(&ds.records, &fitted, &settings)?)
    } else {
        None
    };
    let aic = marginal_aic(&ds.records, &fitted)?;
    let mut out = OutputSet::default();
    out.add_table("fit_summary.csv", &io::fit_summary_table(&[(&fitted, Some(aic))]))?;
    out.add_table("predictions.csv", &io::prediction_table(&ds.records, &fitted, &preds, report.as_ref()))?;
    let config = json!({
        "model": kind.name(),
        "lambda_max": a.common.lambda_max,
        "quad_order": a.quad_order,
        "boot": a.boot,
        "mc_samples": a.mc_samples,
        "correction": Correction::from(a.correction).to_string(),
        "bootstrap_failures": report.as_ref().map(|r| r.failures()),
        "bootstrap_valid": report.as_ref().map(|r| r.valid),
    });
    out.write(&a.common.out, "predict", seed, config, vec![digest])
}

fn cmd_mse(a: &MseArgs) -> Result<()> {
    let seed = resolve_seed(a.common.seed)?;
    let (ds, digest) = load(&a.data.data)?;
    let kind: ModelKind = a.data.model.into();
    let fitted = fit_model(kind, &ds.records, &search(&a.common)?)?;
    let settings = mse_settings(
        seed,
        &a.common,
        a.boot.boot,
        a.boot.mc_samples,
        a.boot.correction.into(),
        a.boot.clamp_negative,
        a.quad_order,
    )?;
    let report = bootstrap_mse(&ds.records, &fitted, &settings)?;
    let preds = predict_areas(&ds.records, &fitted, a.quad_order)?;
    let mut out = OutputSet::default();
    out.add_table("mse.csv", &io::mse_table(&report))?;
    out.add_table("predictions.csv", &io::prediction_table(&ds.records, &fitted, &preds, Some(&report)))?;
    let config = json!({
        "model": kind.name(),
        "settings": settings,
        "replicates_used": report.replicates_used,
        "failed_replicates": report.failed_replicates,
        "valid": report.valid,
    });
    out.write(&a.common.out, "mse", seed, config, vec![digest])
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let seed = resolve_seed(a.common.seed)?;
    let scale = match a.scale {
        ScaleArg::Desk => StudyScale::Desk,
        ScaleArg::Full => StudyScale::Full,
    };
    let search = search(&a.common)?;
    let mut out = OutputSet::default();
    let config = match a.study {
        StudyArg::Pred => {
            let lambdas = if a.lambda.is_empty() { vec![0.1, 0.4, 0.7, 1.0] } else { a.lambda.clone() };
            let mut reports = Vec::new();
            let mut configs = Vec::new();
            for &l in &lambdas {
                let mut cfg = PredStudyConfig::new(l, scale);
                cfg.seed = seed;
                cfg.search = search.clone();
                cfg.quad_order = a.quad_order;
                cfg.effect_dist = match a.effect {
                    EffectArg::Normal => EffectDist::Normal,
                    EffectArg::T5 => EffectDist::T5Scaled,
                };
                if let Some(r) = a.reps {
                    cfg.r = r;
                }
                reports.push(run_pred_study(&cfg)?);
                configs.push(cfg);
            }
            out.add_table("pred_study.csv", &io::pred_study_table(&reports))?;
            let mut errors = Table::new(&["lambda", "replicate", "method", "area", "rel_error"]);
            for rep in &reports {
                errors.rows.extend(io::pred_errors_table(rep).rows);
            }
            out.add_table("pred_errors.csv", &errors)?;
            json!({ "study": "pred", "configs": configs })
        }
        StudyArg::Mse => {
            let lambdas = if a.lambda.is_empty() { vec![0.2, 0.6, 1.0] } else { a.lambda.clone() };
            let pattern = match a.pattern {
                PatternArg::A => DPattern::A,
                PatternArg::B => DPattern::B,
                PatternArg::C => DPattern::C,
            };
            let modes: Vec<bool> = match a.d_mode {
                DMode::Known => vec![true],
                DMode::Estimated => vec![false],
                DMode::Both => vec![true, false],
            };
            let mut reports = Vec::new();
            let mut configs = Vec::new();
            for &l in &lambdas {
                for &known in &modes {
                    let mut cfg = MseStudyConfig::new(l, pattern, scale);
                    cfg.seed = seed;
                    cfg.known_d = known;
                    cfg.mse = mse_settings(
                        seed,
                        &a.common,
                        a.boot.boot,
                        a.boot.mc_samples,
                        a.boot.correction.into(),
                        a.boot.clamp_negative,
                        a.quad_order,
                    )?;
                    if let Some(r) = a.r1 {
                        cfg.r1 = r;
                    }
                    if let Some(r) = a.r2 {
                        cfg.r2 = r;
                    }
                    reports.push(run_mse_study(&cfg)?);
                    configs.push(cfg);
                }
            }
            out.add_table("mse_study.csv", &io::mse_study_table(&reports))?;
            let mut truth = Table::new(&["pattern", "lambda", "d", "area", "true_mse", "rb_corrected", "rb_naive"]);
            for rep in &reports {
                for i in 0..rep.config.m {
                    truth.push(vec![
                        format!("{:?}", rep.config.pattern).to_lowercase(),
                        io::num(rep.config.lambda),
                        if rep.config.known_d { "known" } else { "estimated" }.into(),
                        (i + 1).to_string(),
                        io::num(rep.true_mse.mse[i]),
                        io::num(rep.corrected.rb[i]),
                        io::num(rep.naive.rb[i]),
                    ]);
                }
            }
            out.add_table("mse_areas.csv", &truth)?;
            let failures: Vec<_> = reports
                .iter()
                .map(|r| json!({ "true_mse_failures": r.true_mse.failures, "estimator_failures": r.failures, "invalid_reports": r.invalid_reports }))
                .collect();
            json!({ "study": "mse", "configs": configs, "failures": failures })
        }
    };
    out.write(&a.common.out, "simulate", seed, config, Vec::new())
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let seed = resolve_seed(a.common.seed)?;
    let (ds, digest) = load(&a.data)?;
    if ds.p < 1 {
        return Err(PtfhError::Data("diagnostics need at least one covariate column x1".into()));
    }
    let search = search(&a.common)?;
    let data = &ds.records;
    let ptfh = fit_model(ModelKind::Ptfh, data, &search)?;
    let logfh = fit_logfh(data)?;
    let fh = fit_fh(data)?;
    let e = standardized_residuals(data, &ptfh)?;
    let ks = ks_normal_test(&e)?;
    let aics = [
        ("ptfh", marginal_aic(data, &ptfh)?),
        ("logfh", marginal_aic(data, &logfh)?),
        ("fh", marginal_aic(data, &fh)?),
    ];
    let ci = if a.boot > 0 { Some(lambda_bootstrap_ci(data, &ptfh, a.boot, a.level, seed, &search)?) } else { None };

    let z: Vec<f64> = data.iter().map(|r| ptfh.params.scale.forward(r.y)).collect::<Result<_>>()?;
    let w = ds.covariate(1);
    let splines = (1..=3)
        .map(|degree| spline_gof_fit(&z, &w, &ptfh.d_used, &SplineConfig { k: a.knots, degree }))
        .collect::<Result<Vec<_>>>()?;
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let grid = linspace(lo, hi, a.grid_points.max(2));

    let mut spline_summary = Table::new(&["degree", "A", "alpha", "loglik", "A_at_floor", "alpha_at_floor"]);
    for s in &splines {
        spline_summary.push(vec![
            s.config.degree.to_string(),
            io::num(s.a),
            io::num(s.alpha),
            io::num(s.loglik),
            s.a_at_floor.to_string(),
            s.alpha_at_floor.to_string(),
        ]);
    }
    let mut points = Table::new(&["area_id", "w", "z"]);
    for ((r, wi), zi) in data.iter().zip(&w).zip(&z) {
        points.push(vec![r.area_id.clone(), io::num(*wi), io::num(*zi)]);
    }

    let mut out = OutputSet::default();
    out.add_table("fit_summary.csv", &io::fit_summary_table(&[(&ptfh, Some(aics[0].1)), (&logfh, Some(aics[1].1)), (&fh, Some(aics[2].1))]))?;
    out.add_table("residuals.csv", &io::residual_table(data, &e))?;
    out.add_table("diagnostics.csv", &io::diagnostics_table(&ks, &aics, ci.as_ref()))?;
    out.add_table("spline_fits.csv", &spline_summary)?;
    out.add_table("curve.csv", &io::curve_table(&grid, &splines, &ptfh.params.beta))?;
    out.add_table("points.csv", &points)?;
    let config = json!({
        "lambda_max": a.common.lambda_max,
        "boot": a.boot,
        "level": a.level,
        "knots": a.knots,
        "grid_points": a.grid_points,
    });
    out.write(&a.common.out, "diagnose", seed, config, vec![digest])
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(PtfhError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| PtfhError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Mse(a) => cmd_mse(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Diagnose(a) => cmd_diagnose(a),
    }
}

fn emit_error(kind: &str, message: &str, code: i32) {
    let body = json!({ "error": { "kind": kind, "message": message, "exit_code": code } });
    eprintln!("{body}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            emit_error("usage", &e.to_string(), 2);
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            emit_error(e.kind(), &e.to_string(), code);
            ExitCode::from(code as u8)
        }
    }
}
