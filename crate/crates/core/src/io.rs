//! CSV datasets, CSV reports and the JSON run manifest.
//!
//! Input files carry a header with `y`, covariates `x1..xp`, and either a
//! `D` column or replicate columns `z1..zk`; an `area_id` column is
//! optional. An intercept is prepended to the covariates when records are
//! built.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::diagnostics::{KsTest, LambdaInterval, SplineFit};
use crate::error::{PtfhError, Result};
use crate::estimation::FitResult;
use crate::model::{AreaRecord, SamplingVariance};
use crate::mse_bootstrap::MseReport;
use crate::prediction::AreaPrediction;
use crate::rng::{normal, stream, tag};
use crate::simulation::{MseStudyReport, PredStudyReport};
use crate::transform::dpt_inv_raw;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Whether the source had an `area_id` column (otherwise ids are row numbers).
    pub has_area_id: bool,
    /// Number of covariates excluding the intercept.
    pub p: usize,
    /// Number of replicate columns, 0 when `D` is given.
    pub k: usize,
    pub records: Vec<AreaRecord>,
}

impl Dataset {
    pub fn m(&self) -> usize {
        self.records.len()
    }

    /// Covariate `j` (1-based, excluding the intercept) of every area.
    pub fn covariate(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r.x[j]).collect()
    }
}

enum Column {
    AreaId,
    Y,
    X(usize),
    D,
    Z(usize),
}

fn classify(name: &str) -> Option<Column> {
    let indexed = |prefix: &str| -> Option<usize> {
        let rest = name.strip_prefix(prefix)?;
        if rest.is_empty() || rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        rest.parse().ok()
    };
    match name {
        "area_id" => Some(Column::AreaId),
        "y" => Some(Column::Y),
        "D" => Some(Column::D),
        _ => indexed("x").map(Column::X).or_else(|| indexed("z").map(Column::Z)),
    }
}

/// Checks that indexed columns are exactly 1..=n.
fn check_contiguous(found: &mut [usize], prefix: &str) -> Result<usize> {
    found.sort_unstable();
    for (pos, &j) in found.iter().enumerate() {
        if j != pos + 1 {
            return Err(PtfhError::Data(format!("columns {prefix}1..{prefix}{} must be contiguous; missing {prefix}{}", found.len(), pos + 1)));
        }
    }
    Ok(found.len())
}

fn parse_value(field: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| PtfhError::Row {
        row,
        message: format!("column {column}: '{field}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(PtfhError::Row { row, message: format!("column {column}: value must be finite") });
    }
    Ok(v)
}

pub fn parse_dataset_reader<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| PtfhError::Data(format!("malformed CSV header: {e}")))?
        .clone();
    let mut seen = std::collections::HashSet::new();
    for h in headers.iter() {
        if !seen.insert(h) {
            return Err(PtfhError::Data(format!("duplicate column '{h}'")));
        }
    }
    let mut id_col = None;
    let mut y_col = None;
    let mut d_col = None;
    let mut x_cols: Vec<(usize, usize)> = Vec::new();
    let mut z_cols: Vec<(usize, usize)> = Vec::new();
    for (c, h) in headers.iter().enumerate() {
        match classify(h) {
            Some(Column::AreaId) => id_col = Some(c),
            Some(Column::Y) => y_col = Some(c),
            Some(Column::D) => d_col = Some(c),
            Some(Column::X(j)) => x_cols.push((j, c)),
            Some(Column::Z(j)) => z_cols.push((j, c)),
            None => return Err(PtfhError::Data(format!("unknown column '{h}'"))),
        }
    }
    let y_col = y_col.ok_or_else(|| PtfhError::Data("missing column 'y'".into()))?;
    if d_col.is_some() && !z_cols.is_empty() {
        return Err(PtfhError::Data(format!(
            "both 'D' and replicate columns ({}) are present; give exactly one",
            z_cols.iter().map(|(j, _)| format!("z{j}")).collect::<Vec<_>>().join(", ")
        )));
    }
    if d_col.is_none() && z_cols.is_empty() {
        return Err(PtfhError::Data("need either a 'D' column or replicate columns z1..zk".into()));
    }
    let p = check_contiguous(&mut x_cols.iter().map(|(j, _)| *j).collect::<Vec<_>>(), "x")?;
    let k = check_contiguous(&mut z_cols.iter().map(|(j, _)| *j).collect::<Vec<_>>(), "z")?;
    if k == 1 {
        return Err(PtfhError::Data("need at least 2 replicate columns".into()));
    }
    x_cols.sort_unstable();
    z_cols.sort_unstable();

    let mut records = Vec::new();
    for (idx, result) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = result.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            PtfhError::Row { row, message: format!("malformed CSV at line {line}: {e}") }
        })?;
        if rec.iter().any(|f| f.is_empty()) {
            return Err(PtfhError::Row { row, message: "missing value".into() });
        }
        let y = parse_value(&rec[y_col], row, "y")?;
        if y <= 0.0 {
            return Err(PtfhError::Row { row, message: format!("y must be positive, got {y}") });
        }
        let mut x = Vec::with_capacity(p + 1);
        x.push(1.0);
        for &(j, c) in &x_cols {
            x.push(parse_value(&rec[c], row, &format!("x{j}"))?);
        }
        let sampling = match d_col {
            Some(c) => {
                let d = parse_value(&rec[c], row, "D")?;
                if d <= 0.0 {
                    return Err(PtfhError::Row { row, message: format!("D must be positive, got {d}") });
                }
                SamplingVariance::Known(d)
            }
            None => {
                let mut z = Vec::with_capacity(k);
                for &(j, c) in &z_cols {
                    let v = parse_value(&rec[c], row, &format!("z{j}"))?;
                    if v <= 0.0 {
                        return Err(PtfhError::Row { row, message: format!("z{j} must be positive, got {v}") });
                    }
                    z.push(v);
                }
                SamplingVariance::Replicates(z)
            }
        };
        let area_id = match id_col {
            Some(c) => rec[c].to_string(),
            None => row.to_string(),
        };
        records.push(AreaRecord { area_id, y, x, sampling });
    }
    if records.is_empty() {
        return Err(PtfhError::Data("dataset has no rows".into()));
    }
    Ok(Dataset { has_area_id: id_col.is_some(), p, k, records })
}

pub fn parse_dataset(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| PtfhError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset_reader(file)
}

/// Writes `ds` in the input format.
pub fn emit_dataset<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = Vec::new();
    if ds.has_area_id {
        header.push("area_id".into());
    }
    header.push("y".into());
    header.extend((1..=ds.p).map(|j| format!("x{j}")));
    if ds.k == 0 {
        header.push("D".into());
    } else {
        header.extend((1..=ds.k).map(|j| format!("z{j}")));
    }
    w.write_record(&header).map_err(csv_err)?;
    for r in &ds.records {
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        if ds.has_area_id {
            row.push(r.area_id.clone());
        }
        row.push(num(r.y));
        row.extend(r.x[1..].iter().map(|v| num(*v)));
        match &r.sampling {
            SamplingVariance::Known(d) => row.push(num(*d)),
            SamplingVariance::Replicates(z) => row.extend(z.iter().map(|v| num(*v))),
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> PtfhError {
    PtfhError::Io(e.to_string())
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Simple in-memory CSV table.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.into_inner().map_err(|e| PtfhError::Io(e.to_string()))
    }
}

pub fn fit_summary_table(fits: &[(&FitResult, Option<f64>)]) -> Table {
    let p = fits.iter().map(|(f, _)| f.params.beta.len()).max().unwrap_or(0);
    let mut header = vec!["model".to_string(), "lambda".into(), "A".into()];
    header.extend((0..p).map(|j| format!("beta{j}")));
    header.extend(["loglik".to_string(), "aic".into(), "converged".into(), "lambda_at_boundary".into(), "A_at_boundary".into()]);
    let mut t = Table { header, rows: Vec::new() };
    for (f, aic) in fits {
        let mut row = vec![f.kind.name().to_string(), f.params.lambda().map(num).unwrap_or_default(), num(f.params.a)];
        row.extend((0..p).map(|j| f.params.beta.get(j).map(|b| num(*b)).unwrap_or_default()));
        row.extend([
            num(f.loglik),
            aic.map(num).unwrap_or_default(),
            f.convergence.tolerance_met.to_string(),
            f.convergence.lambda_at_boundary.to_string(),
            f.convergence.a_at_boundary.to_string(),
        ]);
        t.push(row);
    }
    t
}

pub fn profile_table(fit: &FitResult) -> Table {
    let mut t = Table::new(&["lambda", "profile_loglik"]);
    for (l, v) in fit.sorted_profile() {
        t.push(vec![num(l), num(v)]);
    }
    t
}

/// Per-area predictions; `rmse` comes from a bootstrap MSE report when given.
pub fn prediction_table(data: &[AreaRecord], fit: &FitResult, preds: &[AreaPrediction], mse: Option<&MseReport>) -> Table {
    let mut t = Table::new(&["area_id", "y", "D", "theta_hat", "gamma", "mu_hat", "mu_naive", "rmse"]);
    for (i, (r, p)) in data.iter().zip(preds).enumerate() {
        let rmse = mse.map(|m| num(m.areas[i].mse_total.max(0.0).sqrt())).unwrap_or_default();
        t.push(vec![
            r.area_id.clone(),
            num(r.y),
            num(fit.d_used[i]),
            num(p.theta_hat),
            num(p.gamma),
            num(p.mu_hat),
            num(p.mu_naive),
            rmse,
        ]);
    }
    t
}

pub fn mse_table(report: &MseReport) -> Table {
    let mut t = Table::new(&["area_id", "g1_plugin", "g1_corrected", "g2_star", "mse_total", "mse_raw", "negative", "clamped"]);
    for a in &report.areas {
        t.push(vec![
            a.area_id.clone(),
            num(a.g1_plugin),
            num(a.g1_corrected),
            num(a.g2_star),
            num(a.mse_total),
            num(a.mse_raw),
            a.negative.to_string(),
            a.clamped.to_string(),
        ]);
    }
    t
}

/// Group-level CV and ARB in the layout of the prediction-study tables.
pub fn pred_study_table(reports: &[PredStudyReport]) -> Table {
    let mut t = Table::new(&["lambda", "effect", "group", "method", "cv", "arb", "failures"]);
    for rep in reports {
        for s in &rep.methods {
            for g in 0..s.group_cv.len() {
                t.push(vec![
                    num(rep.config.lambda),
                    format!("{:?}", rep.config.effect_dist).to_lowercase(),
                    format!("G{}", g + 1),
                    s.method.label().into(),
                    num(s.group_cv[g]),
                    num(s.group_arb[g]),
                    s.failures.to_string(),
                ]);
            }
        }
    }
    t
}

/// Relative errors per replicate, method and area.
pub fn pred_errors_table(rep: &PredStudyReport) -> Table {
    let mut t = Table::new(&["lambda", "replicate", "method", "area", "rel_error"]);
    for (r, row) in rep.errors.iter().enumerate() {
        for (k, errs) in row.iter().enumerate() {
            if let Some(errs) = errs {
                for (i, e) in errs.iter().enumerate() {
                    t.push(vec![num(rep.config.lambda), r.to_string(), rep.methods[k].method.label().into(), (i + 1).to_string(), num(*e)]);
                }
            }
        }
    }
    t
}

/// max / mean / min of RB and CV per group, as in the MSE-study tables.
pub fn mse_study_table(reports: &[MseStudyReport]) -> Table {
    let mut t = Table::new(&["pattern", "lambda", "d", "estimator", "stat", "group", "rb", "cv"]);
    for rep in reports {
        let d = if rep.config.known_d { "known" } else { "estimated" };
        for (name, s) in [("corrected", &rep.corrected), ("naive", &rep.naive)] {
            for stat in ["max", "mean", "min"] {
                for g in 0..s.group_rb.len() {
                    let pick = |x: &crate::simulation::GroupStats| match stat {
                        "max" => x.max,
                        "mean" => x.mean,
                        _ => x.min,
                    };
                    t.push(vec![
                        format!("{:?}", rep.config.pattern).to_lowercase(),
                        num(rep.config.lambda),
                        d.into(),
                        name.into(),
                        stat.into(),
                        format!("G{}", g + 1),
                        num(pick(&s.group_rb[g])),
                        num(pick(&s.group_cv[g])),
                    ]);
                }
            }
        }
    }
    t
}

pub fn residual_table(data: &[AreaRecord], e: &[f64]) -> Table {
    let mut t = Table::new(&["area_id", "std_residual"]);
    for (r, v) in data.iter().zip(e) {
        t.push(vec![r.area_id.clone(), num(*v)]);
    }
    t
}

pub fn diagnostics_table(ks: &KsTest, aics: &[(&str, f64)], ci: Option<&LambdaInterval>) -> Table {
    let mut t = Table::new(&["metric", "value"]);
    t.push(vec!["ks_statistic".into(), num(ks.statistic)]);
    t.push(vec!["ks_p_value".into(), num(ks.p_value)]);
    for (name, v) in aics {
        t.push(vec![format!("aic_{name}"), num(*v)]);
    }
    if let Some(ci) = ci {
        t.push(vec!["lambda_ci_level".into(), num(ci.level)]);
        t.push(vec!["lambda_ci_lo".into(), num(ci.lo)]);
        t.push(vec!["lambda_ci_hi".into(), num(ci.hi)]);
        t.push(vec!["lambda_ci_failures".into(), ci.failures.to_string()]);
    }
    t
}

/// Fitted curves on a dense grid of `w`: splines of each degree and the
/// PTFH regression line `β0 + β1 w`.
pub fn curve_table(w_grid: &[f64], splines: &[SplineFit], ptfh_beta: &[f64]) -> Table {
    let mut header = vec!["w".to_string()];
    header.extend(splines.iter().map(|s| format!("spline_p{}", s.config.degree)));
    header.push("ptfh".into());
    let mut t = Table { header, rows: Vec::new() };
    for &w in w_grid {
        let mut row = vec![num(w)];
        row.extend(splines.iter().map(|s| num(s.evaluate(w))));
        row.push(num(ptfh_beta[0] + ptfh_beta.get(1).copied().unwrap_or(0.0) * w));
        t.push(row);
    }
    t
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub name: String,
    pub sha256: String,
}

/// Run manifest written next to the outputs.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Outputs collected in memory and written in one pass at the end of a run.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add_table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.files.push((name.to_string(), table.to_bytes()?));
        Ok(())
    }

    pub fn add_bytes(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Writes every file plus `manifest.json` into `dir`.
    pub fn write(self, dir: &Path, command: &str, seed: u64, config: serde_json::Value, inputs: Vec<FileDigest>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| PtfhError::Io(format!("{}: {e}", dir.display())))?;
        let mut outputs = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| PtfhError::Io(format!("{}: {e}", path.display())))?;
            outputs.push(FileDigest { name: name.clone(), sha256: sha256_hex(bytes) });
        }
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config,
            inputs,
            outputs,
        };
        let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| PtfhError::Io(e.to_string()))?;
        json.push(b'\n');
        let path = dir.join("manifest.json");
        fs::write(&path, json).map_err(|e| PtfhError::Io(format!("{}: {e}", path.display())))?;
        Ok(())
    }
}

pub fn digest_file(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| PtfhError::Io(format!("{}: {e}", path.display())))?;
    Ok(FileDigest { name: path.display().to_string(), sha256: sha256_hex(&bytes) })
}

pub const FIXTURE_AREAS: usize = 47;
pub const FIXTURE_REPLICATES: usize = 8;

/// Synthetic dataset shaped like the application data: 47 areas, one
/// covariate, 8 auxiliary observations per area, PTFH with λ = 0.4.
pub fn synthetic_fixture() -> Dataset {
    let (lambda, b0, b1, a): (f64, f64, f64, f64) = (0.4, 0.5, 1.0, 0.3);
    let mut rng = stream(crate::rng::DEFAULT_SEED, &[tag::FIXTURE]);
    let records = (0..FIXTURE_AREAS)
        .map(|i| {
            use rand::Rng;
            let x1: f64 = rng.random_range(1.0..4.0);
            let d: f64 = rng.random_range(0.1..0.6);
            let t = b0 + b1 * x1 + a.sqrt() * normal(&mut rng) + d.sqrt() * normal(&mut rng);
            let z: Vec<f64> = (0..FIXTURE_REPLICATES).map(|_| dpt_inv_raw(d.sqrt() * normal(&mut rng), lambda)).collect();
            // round to keep the file readable; the rounded values are the data
            let round = |v: f64| (v * 1e6).round() / 1e6;
            AreaRecord {
                area_id: format!("area{:02}", i + 1),
                y: round(dpt_inv_raw(t, lambda)),
                x: vec![1.0, round(x1)],
                sampling: SamplingVariance::Replicates(z.into_iter().map(round).collect()),
            }
        })
        .collect();
    Dataset { has_area_id: true, p: 1, k: FIXTURE_REPLICATES, records }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_file() {
        let ds = parse_dataset_reader("y,x1,D\n1.5,0.2,0.3\n2.0,0.4,0.5\n0.7,1.0,0.1\n".as_bytes()).unwrap();
        assert_eq!((ds.m(), ds.p, ds.k), (3, 1, 0));
        assert_eq!(ds.records[2].x, vec![1.0, 1.0]);
        assert_eq!(ds.records[0].area_id, "1");
        assert_eq!(ds.records[1].sampling, SamplingVariance::Known(0.5));
    }

    #[test]
    fn rejects_both_variance_sources() {
        let err = parse_dataset_reader("y,x1,D,z1,z2\n1,1,1,1,1\n".as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'D'") && msg.contains("z1") && msg.contains("z2"), "{msg}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn reports_offending_row() {
        let mut text = String::from("area_id,y,x1,D\n");
        for i in 1..=8 {
            let y = if i == 7 { 0.0 } else { 1.0 + i as f64 };
            text.push_str(&format!("a{i},{y},{i},0.5\n"));
        }
        match parse_dataset_reader(text.as_bytes()).unwrap_err() {
            PtfhError::Row { row, .. } => assert_eq!(row, 7),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_headers_and_values() {
        for text in [
            "y,x1,x1,D\n1,1,1,1\n",
            "y,x2,D\n1,1,1\n",
            "y,w,D\n1,1,1\n",
            "x1,D\n1,1\n",
            "y,x1\n1,1\n",
            "y,x1,z1\n1,1,1\n",
            "y,x1,D\n1,,1\n",
            "y,x1,D\n1,abc,1\n",
            "y,x1,D\n1,1,-1\n",
            "y,x1,z1,z2\n1,1,1,0\n",
            "y,x1,D\n",
        ] {
            assert!(parse_dataset_reader(text.as_bytes()).is_err(), "{text}");
        }
    }

    #[test]
    fn emit_parse_round_trip() {
        let fixture = synthetic_fixture();
        let mut buf = Vec::new();
        emit_dataset(&fixture, &mut buf).unwrap();
        assert_eq!(parse_dataset_reader(buf.as_slice()).unwrap(), fixture);

        let ds = parse_dataset_reader("y,x1,x2,D\n0.1,0.30000000000000004,1e-300,2\n".as_bytes()).unwrap();
        let mut buf = Vec::new();
        emit_dataset(&ds, &mut buf).unwrap();
        assert_eq!(parse_dataset_reader(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn bundled_fixture_matches_generator() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixture.csv");
        let on_disk = fs::read(&path).unwrap();
        let mut buf = Vec::new();
        emit_dataset(&synthetic_fixture(), &mut buf).unwrap();
        assert_eq!(on_disk, buf);
        let ds = parse_dataset(&path).unwrap();
        assert_eq!((ds.m(), ds.p, ds.k), (47, 1, 8));
    }

    #[test]
    fn digests() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
