//! Configuration-driven experiments behind the `massdirac` binary: spectra,
//! mass endomorphisms, family sweeps, continuity checks, pole fits and the
//! KO lookup. Every command returns CSV text plus a JSON metadata document;
//! both are functions of the configuration alone unless wall-time recording
//! is switched on.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bg::assemble_bg_dirac;
use crate::error::{Error, Result};
use crate::mass::{mass_endomorphism, mass_spectrum, MassOptions};
use crate::metric::{BumpShape, FamilyDocument, MetricFamily, MetricSpec, BUMP_INNER, BUMP_OUTER, DEFAULT_AMPLITUDE};
use crate::polefit::{pole_fit, FitConfig};
use crate::spectral::{low_spectrum, EigenConfig, SolverConfig};
use crate::torus::{CutoffProfile, SpinorBundle};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
/// Null encoding in CSV output.
pub const NA: &str = "NA";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilyDocument,
    pub t_schedule: Vec<f64>,
    /// Eigenvalues requested from the eigensolver.
    pub k_eigs: usize,
    /// Hermitian-part eigenvalues of `α` per sweep row; `None` means all.
    pub top_eigs: Option<usize>,
    pub solver: SolverConfig,
    pub eigen: EigenConfig,
    /// Output stem: `<output_path>.csv` and `<output_path>.json`.
    pub output_path: String,
    /// Adds a wall-time column; output is then no longer reproducible.
    pub record_wall_time: bool,
    pub continuity: ContinuityConfig,
    pub polefit: PoleFitConfig,
    pub ko: KoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            family: FamilyDocument::default(),
            t_schedule: vec![0.4, 0.2, 0.1, 0.05],
            k_eigs: 4,
            top_eigs: None,
            solver: SolverConfig::default(),
            eigen: EigenConfig::default(),
            output_path: "massdirac_out".into(),
            record_wall_time: false,
            continuity: ContinuityConfig::default(),
            polefit: PoleFitConfig::default(),
            ko: KoConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuityConfig {
    /// Direction `k` of the perturbation `g + s·k`.
    pub direction: BumpShape,
    pub s_schedule: Vec<f64>,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self {
            direction: BumpShape {
                seed: 2,
                amplitude: DEFAULT_AMPLITUDE,
                r_inner: BUMP_INNER,
                r_outer: BUMP_OUTER,
            },
            s_schedule: vec![0.08, 0.04, 0.02, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoleFitConfig {
    pub fit: FitConfig,
    /// Sweep column fitted against `t`.
    pub column: String,
    /// Earlier sweep CSV to fit instead of running the sweep.
    pub input: Option<String>,
}

impl Default for PoleFitConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            column: "alpha_norm".into(),
            input: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KoConfig {
    pub max_n: u32,
}

impl Default for KoConfig {
    fn default() -> Self {
        Self { max_n: 16 }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads a config file (or the defaults) and applies `key=value`
    /// overrides on dotted paths, e.g. `family.delta=[1,1,1]`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(e.to_string()))?
            }
            None => serde_json::to_value(Self::default())?,
        };
        for item in overrides {
            apply_override(&mut value, item)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        check_schedule("t_schedule", &self.t_schedule)?;
        check_schedule("continuity.s_schedule", &self.continuity.s_schedule)?;
        if self.k_eigs == 0 {
            return Err(Error::Config("k_eigs must be positive".into()));
        }
        if self.output_path.is_empty() {
            return Err(Error::Config("output_path is empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn cutoff(&self) -> Result<CutoffProfile> {
        self.family.cutoff()
    }

    fn eigen_request(&self, bundle: &SpinorBundle) -> usize {
        // invertibility is only meaningful once the whole potential kernel is resolved
        self.k_eigs.max(bundle.spinor_dim())
    }
}

fn check_schedule(name: &str, values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} must be finite")));
    }
    let up = values.windows(2).all(|w| w[0] < w[1]);
    let down = values.windows(2).all(|w| w[0] > w[1]);
    if !(up || down) {
        return Err(Error::Config(format!("{name} must be distinct and sorted")));
    }
    Ok(())
}

fn apply_override(root: &mut Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override path `{key}` crosses a non-object")))?;
        if i + 1 == parts.len() {
            obj.insert((*part).to_string(), parsed);
            return Ok(());
        }
        node = obj.entry((*part).to_string()).or_insert_with(|| json!({}));
    }
    Err(Error::Config(format!("empty override key in `{item}`")))
}

/// CSV body and JSON metadata of one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub csv: String,
    pub meta: Value,
}

impl Artifact {
    /// Writes `<stem>.csv` and `<stem>.json`; returns both paths.
    pub fn write(&self, stem: &str) -> Result<(PathBuf, PathBuf)> {
        let csv_path = PathBuf::from(format!("{stem}.csv"));
        let json_path = PathBuf::from(format!("{stem}.json"));
        if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&csv_path, &self.csv)?;
        let mut text = serde_json::to_string_pretty(&self.meta)?;
        text.push('\n');
        std::fs::write(&json_path, text)?;
        Ok((csv_path, json_path))
    }
}

fn metadata(command: &str, cfg: &ExperimentConfig, summary: Value) -> Value {
    json!({
        "tool": "massdirac",
        "version": TOOL_VERSION,
        "command": command,
        "config_hash": cfg.hash(),
        "config": cfg,
        "summary": summary,
    })
}

fn csv_text(header: &[String], rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for r in rows {
        w.write_record(r).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), num)
}

fn family_at(cfg: &ExperimentConfig) -> Result<(SpinorBundle, MetricFamily)> {
    let bundle = cfg.family.bundle()?;
    let family = cfg.family.family(&bundle)?;
    Ok((bundle, family))
}

/// Low spectrum of the metric at `family.t`.
pub fn cmd_spectrum(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (bundle, family) = family_at(cfg)?;
    let op = assemble_bg_dirac(&bundle, &family.at(&bundle, cfg.family.t)?)?;
    let report = low_spectrum(&op, cfg.k_eigs, &cfg.eigen)?;
    let rows: Vec<Vec<String>> = report
        .eigenvalues
        .iter()
        .zip(&report.residuals)
        .enumerate()
        .map(|(i, (l, r))| vec![i.to_string(), num(*l), num(*r)])
        .collect();
    let header = ["index", "eigenvalue", "residual"].map(String::from);
    Ok(Artifact {
        csv: csv_text(&header, &rows)?,
        meta: metadata("spectrum", cfg, serde_json::to_value(&report)?),
    })
}

/// Mass endomorphism of the metric at `family.t`.
pub fn cmd_mass(cfg: &ExperimentConfig) -> Result<Artifact> {
    let (bundle, family) = family_at(cfg)?;
    let op = assemble_bg_dirac(&bundle, &family.at(&bundle, cfg.family.t)?)?;
    let spectrum = low_spectrum(&op, cfg.eigen_request(&bundle), &cfg.eigen)?;
    if !spectrum.invertible {
        return Err(Error::NotInvertible {
            gap: spectrum.gap,
            threshold: spectrum.gap_threshold,
        });
    }
    let opts = MassOptions {
        solver: cfg.solver,
        gap_threshold: None,
    };
    let alpha = mass_endomorphism(&op, &cfg.cutoff()?, &opts)?;
    let eig = mass_spectrum(&alpha.alpha)?;
    let ns = alpha.alpha.nrows();
    let mut rows = Vec::new();
    for i in 0..ns {
        for j in 0..ns {
            let v = alpha.alpha[(i, j)];
            rows.push(vec![i.to_string(), j.to_string(), num(v.re), num(v.im)]);
        }
    }
    let header = ["row", "col", "re", "im"].map(String::from);
    let summary = json!({
        "gap": spectrum.gap,
        "mass": alpha.record(Some(cfg.family.clone())),
        "norm": eig.norm,
        "hermitian_eigenvalues": eig.eigenvalues,
    });
    Ok(Artifact {
        csv: csv_text(&header, &rows)?,
        meta: metadata("mass", cfg, summary),
    })
}

/// One row of a family sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t: f64,
    pub gap: Option<f64>,
    pub invertible: Option<bool>,
    pub alpha_norm: Option<f64>,
    /// Hermitian-part eigenvalues of `α`, decreasing modulus.
    pub eigenvalues: Option<Vec<f64>>,
    pub hermitian_deviation: Option<f64>,
    pub residual: Option<f64>,
    /// `ok` or the reason the α fields are null.
    pub status: String,
    pub wall_time: Option<f64>,
}

impl SweepRow {
    fn failed(t: f64, gap: Option<f64>, invertible: Option<bool>, status: String) -> Self {
        Self {
            t,
            gap,
            invertible,
            alpha_norm: None,
            eigenvalues: None,
            hermitian_deviation: None,
            residual: None,
            status,
            wall_time: None,
        }
    }
}

fn sweep_row(cfg: &ExperimentConfig, bundle: &SpinorBundle, spec: &MetricSpec, t: f64) -> Result<SweepRow> {
    let start = Instant::now();
    let metric = match spec.sample(bundle) {
        Ok(h) => h,
        Err(e) if e.is_solver_failure() || matches!(e, Error::NotPositive { .. }) => {
            return Ok(SweepRow::failed(t, None, None, e.to_string()));
        }
        Err(e) => return Err(e),
    };
    let op = assemble_bg_dirac(bundle, &metric)?;
    let spectrum = match low_spectrum(&op, cfg.eigen_request(bundle), &cfg.eigen) {
        Ok(s) => s,
        Err(e) if e.is_solver_failure() => return Ok(SweepRow::failed(t, None, None, e.to_string())),
        Err(e) => return Err(e),
    };
    let mut row = if !spectrum.invertible {
        SweepRow::failed(
            t,
            Some(spectrum.gap),
            Some(false),
            format!("not invertible: gap {:e} <= {:e}", spectrum.gap, spectrum.gap_threshold),
        )
    } else {
        let opts = MassOptions {
            solver: cfg.solver,
            gap_threshold: None,
        };
        match mass_endomorphism(&op, &cfg.cutoff()?, &opts) {
            Ok(a) => {
                let eig = mass_spectrum(&a.alpha)?;
                let top = cfg.top_eigs.unwrap_or(eig.eigenvalues.len()).min(eig.eigenvalues.len());
                SweepRow {
                    t,
                    gap: Some(spectrum.gap),
                    invertible: Some(true),
                    alpha_norm: Some(eig.norm),
                    eigenvalues: Some(eig.eigenvalues[..top].to_vec()),
                    hermitian_deviation: Some(a.hermitian_deviation),
                    residual: Some(a.per_column_residuals.iter().copied().fold(0.0, f64::max)),
                    status: "ok".into(),
                    wall_time: None,
                }
            }
            Err(e) if e.is_solver_failure() => {
                SweepRow::failed(t, Some(spectrum.gap), Some(true), e.to_string())
            }
            Err(e) => return Err(e),
        }
    };
    if cfg.record_wall_time {
        row.wall_time = Some(start.elapsed().as_secs_f64());
    }
    Ok(row)
}

/// Sweep rows in schedule order; rows are computed concurrently.
pub fn sweep_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let (bundle, family) = family_at(cfg)?;
    cfg.cutoff()?;
    cfg.t_schedule
        .par_iter()
        .map(|&t| sweep_row(cfg, &bundle, &family.spec_at(t), t))
        .collect()
}

fn sweep_width(cfg: &ExperimentConfig, rows: &[SweepRow]) -> usize {
    let found = rows.iter().filter_map(|r| r.eigenvalues.as_ref().map(Vec::len)).max();
    found.unwrap_or_else(|| {
        let ns = crate::clifford::spinor_dim(cfg.family.n);
        cfg.top_eigs.unwrap_or(ns).min(ns)
    })
}

pub fn sweep_csv(cfg: &ExperimentConfig, rows: &[SweepRow]) -> Result<String> {
    let width = sweep_width(cfg, rows);
    let mut header: Vec<String> = ["t", "gap", "invertible", "alpha_norm"].map(String::from).to_vec();
    header.extend((1..=width).map(|i| format!("eig_{i}")));
    header.extend(["hermitian_deviation", "residual", "status"].map(String::from));
    if cfg.record_wall_time {
        header.push("wall_time_s".into());
    }
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut line = vec![
                num(r.t),
                opt(r.gap),
                r.invertible.map_or_else(|| NA.to_string(), |b| b.to_string()),
                opt(r.alpha_norm),
            ];
            for i in 0..width {
                line.push(opt(r.eigenvalues.as_ref().and_then(|e| e.get(i).copied())));
            }
            line.push(opt(r.hermitian_deviation));
            line.push(opt(r.residual));
            line.push(r.status.clone());
            if cfg.record_wall_time {
                line.push(opt(r.wall_time));
            }
            line
        })
        .collect();
    csv_text(&header, &body)
}

pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Artifact> {
    let rows = sweep_rows(cfg)?;
    let failures = rows.iter().filter(|r| r.status != "ok").count();
    let summary = json!({
        "rows": rows.len(),
        "failures": failures,
        "longest_failure_run": longest_failure_run(&rows),
    });
    Ok(Artifact {
        csv: sweep_csv(cfg, &rows)?,
        meta: metadata("sweep", cfg, summary),
    })
}

/// Longest run of consecutive rows without an `α`.
pub fn longest_failure_run(rows: &[SweepRow]) -> usize {
    let (mut best, mut run) = (0, 0);
    for r in rows {
        if r.alpha_norm.is_none() {
            run += 1;
            best = best.max(run);
        } else {
            run = 0;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityRow {
    pub s: f64,
    pub difference: Option<f64>,
    /// `difference(s) / difference(previous s)`.
    pub ratio: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub rows: Vec<ContinuityRow>,
    /// Least-squares line `difference ≈ intercept + slope · s`.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub base_gap: f64,
}

fn operator_norm(a: &DMatrix<Complex64>) -> f64 {
    a.clone().svd(false, false).singular_values.max()
}

pub fn continuity(cfg: &ExperimentConfig) -> Result<ContinuityReport> {
    let dir = &cfg.continuity.direction;
    if dir.r_inner < cfg.family.r_u {
        return Err(Error::Config(format!(
            "direction support starts at r = {} inside the protected radius {}: the perturbed metric would leave the flat region",
            dir.r_inner, cfg.family.r_u
        )));
    }
    dir.build(cfg.family.n)?;
    let (bundle, family) = family_at(cfg)?;
    let eta = cfg.cutoff()?;
    let opts = MassOptions {
        solver: cfg.solver,
        gap_threshold: None,
    };
    let base_t = cfg.family.t;
    let metric_at = |s: f64| MetricSpec {
        terms: vec![(base_t, family.shape.clone()), (s, dir.clone())],
    };
    let base = assemble_bg_dirac(&bundle, &metric_at(0.0).sample(&bundle)?)?;
    let base_spec = low_spectrum(&base, cfg.eigen_request(&bundle), &cfg.eigen)?;
    if !base_spec.invertible {
        return Err(Error::NotInvertible {
            gap: base_spec.gap,
            threshold: base_spec.gap_threshold,
        });
    }
    let alpha0 = mass_endomorphism(&base, &eta, &opts)?.alpha;
    let diffs: Vec<std::result::Result<f64, String>> = cfg
        .continuity
        .s_schedule
        .par_iter()
        .map(|&s| -> Result<std::result::Result<f64, String>> {
            let metric = match metric_at(s).sample(&bundle) {
                Ok(h) => h,
                Err(e @ Error::NotPositive { .. }) => return Ok(Err(e.to_string())),
                Err(e) => return Err(e),
            };
            let op = assemble_bg_dirac(&bundle, &metric)?;
            let spec = match low_spectrum(&op, cfg.eigen_request(&bundle), &cfg.eigen) {
                Ok(r) => r,
                Err(e) if e.is_solver_failure() => return Ok(Err(e.to_string())),
                Err(e) => return Err(e),
            };
            if !spec.invertible {
                return Ok(Err(format!("not invertible: gap {:e}", spec.gap)));
            }
            match mass_endomorphism(&op, &eta, &opts) {
                Ok(a) => Ok(Ok(operator_norm(&(a.alpha - &alpha0)))),
                Err(e) if e.is_solver_failure() => Ok(Err(e.to_string())),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut previous: Option<f64> = None;
    for (&s, d) in cfg.continuity.s_schedule.iter().zip(diffs) {
        match d {
            Ok(v) => {
                let ratio = previous.filter(|p| *p != 0.0).map(|p| v / p);
                rows.push(ContinuityRow {
                    s,
                    difference: Some(v),
                    ratio,
                    status: "ok".into(),
                });
                previous = Some(v);
            }
            Err(reason) => rows.push(ContinuityRow {
                s,
                difference: None,
                ratio: None,
                status: reason,
            }),
        }
    }
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.difference.map(|d| (r.s, d))).collect();
    let (slope, intercept) = line_fit(&pts);
    Ok(ContinuityReport {
        rows,
        slope,
        intercept,
        base_gap: base_spec.gap,
    })
}

fn line_fit(pts: &[(f64, f64)]) -> (Option<f64>, Option<f64>) {
    let k = pts.len() as f64;
    if pts.len() < 2 {
        return (None, None);
    }
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / k, sy / k);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return (None, None);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (Some(slope), Some(my - slope * mx))
}

pub fn cmd_continuity(cfg: &ExperimentConfig) -> Result<Artifact> {
    let report = continuity(cfg)?;
    let header = ["s", "difference", "ratio", "status"].map(String::from);
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![num(r.s), opt(r.difference), opt(r.ratio), r.status.clone()])
        .collect();
    let summary = json!({
        "slope": report.slope,
        "intercept": report.intercept,
        "base_gap": report.base_gap,
    });
    Ok(Artifact {
        csv: csv_text(&header, &rows)?,
        meta: metadata("continuity", cfg, summary),
    })
}

/// `(t, value)` samples of one sweep column, null rows dropped.
pub fn read_sweep_column(text: &str, column: &str) -> Result<Vec<(f64, f64)>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_error)?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("sweep CSV has no column `{name}`")))
    };
    let (ti, vi) = (find("t")?, find(column)?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_error)?;
        let (t, v) = (&rec[ti], &rec[vi]);
        if v == NA {
            continue;
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Config(format!("bad number `{s}`: {e}")));
        out.push((parse(t)?, parse(v)?));
    }
    Ok(out)
}

fn sweep_value(row: &SweepRow, column: &str) -> Result<Option<f64>> {
    if column == "alpha_norm" {
        return Ok(row.alpha_norm);
    }
    if let Some(i) = column.strip_prefix("eig_").and_then(|s| s.parse::<usize>().ok()) {
        if i >= 1 {
            return Ok(row.eigenvalues.as_ref().and_then(|e| e.get(i - 1).copied()));
        }
    }
    Err(Error::Config(format!("cannot fit column `{column}`")))
}

pub fn cmd_polefit(cfg: &ExperimentConfig) -> Result<Artifact> {
    let samples: Vec<(f64, f64)> = match &cfg.polefit.input {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {path}: {e}")))?;
            read_sweep_column(&text, &cfg.polefit.column)?
        }
        None => {
            let mut out = Vec::new();
            for row in sweep_rows(cfg)? {
                if let Some(v) = sweep_value(&row, &cfg.polefit.column)? {
                    out.push((row.t, v));
                }
            }
            out
        }
    };
    let (t, y): (Vec<f64>, Vec<f64>) = samples.iter().copied().unzip();
    let report = pole_fit(&t, &y, &cfg.polefit.fit)?;
    let fit = crate::polefit::fit_rational(&t, &y, report.num_degree, report.den_degree)?;
    let header = ["t", "value", "fit"].map(String::from);
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|&(ti, yi)| vec![num(ti), num(yi), num(fit.eval(ti))])
        .collect();
    Ok(Artifact {
        csv: csv_text(&header, &rows)?,
        meta: metadata("polefit", cfg, serde_json::to_value(&report)?),
    })
}

/// `KO_n(pt)` as an abelian group.
pub fn ko_group(n: i64) -> Result<&'static str> {
    if n < 0 {
        return Err(Error::Config(format!("KO group needs n >= 0, got {n}")));
    }
    Ok(match n % 8 {
        0 | 4 => "Z",
        1 | 2 => "Z/2Z",
        _ => "0",
    })
}

pub fn cmd_ko(cfg: &ExperimentConfig) -> Result<Artifact> {
    let rows: Vec<Vec<String>> = (0..=i64::from(cfg.ko.max_n))
        .map(|n| Ok(vec![n.to_string(), ko_group(n)?.to_string()]))
        .collect::<Result<_>>()?;
    let header = ["n", "group"].map(String::from);
    Ok(Artifact {
        csv: csv_text(&header, &rows)?,
        meta: metadata("ko", cfg, json!({ "max_n": cfg.ko.max_n })),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Spectrum,
    Mass,
    Sweep,
    Continuity,
    Polefit,
    Ko,
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<Artifact> {
    match command {
        Command::Spectrum => cmd_spectrum(cfg),
        Command::Mass => cmd_mass(cfg),
        Command::Sweep => cmd_sweep(cfg),
        Command::Continuity => cmd_continuity(cfg),
        Command::Polefit => cmd_polefit(cfg),
        Command::Ko => cmd_ko(cfg),
    }
}

/// Process exit code for an error: 2 for configuration problems, 3 for
/// solver failures.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_solver_failure() {
        3
    } else {
        2
    }
}
