//! Run configuration, dataset loaders, and artifact formats.
//!
//! Tabular data travels as CSV, parameter sets and reports as JSON. Every
//! emitted report embeds the full run configuration so any artifact can be
//! regenerated from itself. Writes are atomic (temp file + rename) so an
//! interrupted run never leaves a partial artifact in place.
//!
//! Unit convention: return files are decimal by default (0.01 = 1%) and are
//! converted to percent on load; pass `percent_units = true` for files
//! already in percent. Everything downstream works in percent.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{
    ContributionRow, EngineError, EvaluationReport, ModelVariant, Obligor, Portfolio,
    RegimeWeight, DEFAULT_EXPOSURE,
};
use crate::estimation::{EstimationError, LoadingSet, ReturnSeries};
use crate::recovery::{hazard_from_spread, RecoveryError, SpreadQuote};
use crate::stats::{MixtureParams, NormalParams, StatsError};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access '{path}': {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in '{path}': {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("invalid JSON in '{path}': {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("'{path}' is missing required column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("'{path}' line {line}, column '{column}': {message}")]
    Field {
        path: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("duplicate obligor id '{id}' at '{path}' line {line}")]
    DuplicateObligorRow { path: String, line: u64, id: String },
    #[error(transparent)]
    Series(#[from] EstimationError),
    #[error("obligor '{id}': {source}")]
    Recovery {
        id: String,
        #[source]
        source: RecoveryError,
    },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("no loadings found for obligor '{id}'; run the `estimate-loadings` subcommand first")]
    MissingLoadings { id: String },
    #[error("missing artifact '{path}'; run the `{producer}` subcommand first")]
    MissingArtifact { path: String, producer: &'static str },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

fn io_err(path: &Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}

fn csv_err(path: &Path, source: csv::Error) -> IoError {
    IoError::Csv { path: path.display().to_string(), source }
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Everything a simulation / evaluation run depends on. Serialized into each
/// report so the artifact is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub n_scenarios: usize,
    pub horizon_t: f64,
    /// Mean of the simulation-time factor law (percent units).
    pub z_mean: f64,
    /// Dispersion of the factor law; variance or std per the flag below.
    pub z_value: f64,
    pub z_value_is_variance: bool,
    /// Recovery floor applied to rows that do not set their own.
    pub r_bar_default: f64,
    pub variants: Vec<ModelVariant>,
    pub regime_weight: RegimeWeight,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_scenarios: 10_000,
            horizon_t: 1.0,
            z_mean: -0.03,
            z_value: 3.05,
            z_value_is_variance: true,
            r_bar_default: 0.0,
            variants: ModelVariant::ALL.to_vec(),
            regime_weight: RegimeWeight::Posterior,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), IoError> {
        if self.n_scenarios == 0 {
            return Err(IoError::BadConfig("n_scenarios must be at least 1".into()));
        }
        if !(self.horizon_t.is_finite() && self.horizon_t > 0.0) {
            return Err(IoError::BadConfig(format!(
                "horizon must be finite and > 0, got {}",
                self.horizon_t
            )));
        }
        if self.variants.is_empty() {
            return Err(IoError::BadConfig("at least one model variant is required".into()));
        }
        self.z_dist()?;
        Ok(())
    }

    /// The simulation-time factor law.
    pub fn z_dist(&self) -> Result<NormalParams, StatsError> {
        if self.z_value_is_variance {
            NormalParams::from_mean_variance(self.z_mean, self.z_value)
        } else {
            NormalParams::new(self.z_mean, self.z_value)
        }
    }
}

// ---------------------------------------------------------------------------
// Return series CSV
// ---------------------------------------------------------------------------

/// Load a `date,return` CSV. Dates are ISO-8601; rows may arrive unsorted
/// (sorted on load with a warning); duplicate dates are an error. Values are
/// converted to percent unless the file is already percent-denominated.
pub fn load_returns_csv(path: &Path, percent_units: bool) -> Result<ReturnSeries, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let date_idx = column_index(&headers, path, "date")?;
    let value_idx = column_index(&headers, path, "return")?;

    let mut observations = Vec::new();
    let mut last_date: Option<NaiveDate> = None;
    let mut unsorted = false;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let date_raw = record.get(date_idx).unwrap_or("").trim();
        let date = NaiveDate::parse_from_str(date_raw, "%Y-%m-%d").map_err(|e| IoError::Field {
            path: path.display().to_string(),
            line,
            column: "date".into(),
            message: format!("'{date_raw}' is not an ISO-8601 date: {e}"),
        })?;
        let value = parse_f64(&record, value_idx, path, line, "return")?.ok_or_else(|| {
            IoError::Field {
                path: path.display().to_string(),
                line,
                column: "return".into(),
                message: "value is empty".into(),
            }
        })?;
        if let Some(prev) = last_date {
            if date < prev {
                unsorted = true;
            }
        }
        last_date = Some(date);
        let percent = if percent_units { value } else { value * 100.0 };
        observations.push((date, percent));
    }
    if unsorted {
        log::warn!("'{}' is not date-sorted; sorting on load", path.display());
    }
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    Ok(ReturnSeries::new(label, observations)?)
}

fn column_index(headers: &csv::StringRecord, path: &Path, name: &str) -> Result<usize, IoError> {
    headers
        .iter()
        .position(|h| h.trim().eq_ignore_ascii_case(name))
        .ok_or_else(|| IoError::MissingColumn {
            path: path.display().to_string(),
            column: name.to_string(),
        })
}

fn parse_f64(
    record: &csv::StringRecord,
    idx: usize,
    path: &Path,
    line: u64,
    column: &str,
) -> Result<Option<f64>, IoError> {
    let raw = record.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Ok(None);
    }
    raw.parse::<f64>().map(Some).map_err(|_| IoError::Field {
        path: path.display().to_string(),
        line,
        column: column.to_string(),
        message: format!("'{raw}' is not a number"),
    })
}

// ---------------------------------------------------------------------------
// Portfolio CSV
// ---------------------------------------------------------------------------

/// One resolved portfolio row: the default probability is settled (directly
/// supplied or implied from the spread), the exposure default applied, and
/// the loadings still pending estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioEntry {
    pub obligor_id: String,
    pub hazard_p: f64,
    pub recovery: f64,
    /// Row-level recovery floor; falls back to the run-level default.
    pub recovery_floor: Option<f64>,
    pub exposure: f64,
    pub returns_file: Option<String>,
}

/// Load `portfolio.csv`: columns `obligor_id,hazard_p,spread,recovery,
/// recovery_floor,exposure,returns_file`, where `hazard_p` may be blank when
/// `spread` is present (the hazard is then spread / (1 - recovery)), and
/// `recovery_floor` / `exposure` / `returns_file` may be blank.
pub fn load_portfolio(path: &Path) -> Result<Vec<PortfolioEntry>, IoError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let idx_id = column_index(&headers, path, "obligor_id")?;
    let idx_hazard = column_index(&headers, path, "hazard_p")?;
    let idx_spread = column_index(&headers, path, "spread")?;
    let idx_recovery = column_index(&headers, path, "recovery")?;
    let idx_floor = column_index(&headers, path, "recovery_floor")?;
    let idx_exposure = column_index(&headers, path, "exposure")?;
    let idx_returns = column_index(&headers, path, "returns_file")?;

    let mut entries: Vec<PortfolioEntry> = Vec::new();
    let mut seen = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |column: &str, message: String| IoError::Field {
            path: path.display().to_string(),
            line,
            column: column.to_string(),
            message,
        };

        let obligor_id = record.get(idx_id).unwrap_or("").trim().to_string();
        if obligor_id.is_empty() {
            return Err(field("obligor_id", "value is empty".into()));
        }
        if let Some(prev) = seen.insert(obligor_id.clone(), line) {
            let _ = prev;
            return Err(IoError::DuplicateObligorRow {
                path: path.display().to_string(),
                line,
                id: obligor_id,
            });
        }

        let recovery = parse_f64(&record, idx_recovery, path, line, "recovery")?
            .ok_or_else(|| field("recovery", "value is empty".into()))?;
        if !(recovery.is_finite() && (0.0..1.0).contains(&recovery)) {
            return Err(field("recovery", format!("{recovery} is not inside [0, 1)")));
        }

        let hazard_direct = parse_f64(&record, idx_hazard, path, line, "hazard_p")?;
        let spread = parse_f64(&record, idx_spread, path, line, "spread")?;
        let hazard_p = match (hazard_direct, spread) {
            (Some(h), _) => h,
            (None, Some(s)) => {
                let quote = SpreadQuote::new(obligor_id.clone(), s, recovery)
                    .map_err(|e| field("spread", e.to_string()))?;
                hazard_from_spread(&quote)
            }
            (None, None) => {
                return Err(field(
                    "hazard_p",
                    "row supplies neither hazard_p nor spread".into(),
                ));
            }
        };
        if !(hazard_p > 0.0 && hazard_p < 1.0) {
            return Err(field(
                "hazard_p",
                format!("resolved default probability {hazard_p} is not inside (0, 1)"),
            ));
        }

        let recovery_floor = parse_f64(&record, idx_floor, path, line, "recovery_floor")?;
        let exposure =
            parse_f64(&record, idx_exposure, path, line, "exposure")?.unwrap_or(DEFAULT_EXPOSURE);
        let returns_file = {
            let raw = record.get(idx_returns).unwrap_or("").trim();
            (!raw.is_empty()).then(|| raw.to_string())
        };

        entries.push(PortfolioEntry {
            obligor_id,
            hazard_p,
            recovery,
            recovery_floor,
            exposure,
            returns_file,
        });
    }
    if entries.is_empty() {
        return Err(IoError::BadConfig(format!(
            "portfolio '{}' contains no rows",
            path.display()
        )));
    }
    Ok(entries)
}

/// Join portfolio rows with their estimated loadings and calibrate each
/// obligor's recovery. Rows without a recovery floor use `r_bar_default`.
pub fn build_obligors(
    entries: &[PortfolioEntry],
    loadings: &[LoadingSet],
    r_bar_default: f64,
) -> Result<Portfolio, IoError> {
    let by_id: HashMap<&str, &LoadingSet> =
        loadings.iter().map(|l| (l.obligor_id(), l)).collect();
    let mut obligors = Vec::with_capacity(entries.len());
    for entry in entries {
        let loading = by_id
            .get(entry.obligor_id.as_str())
            .ok_or_else(|| IoError::MissingLoadings { id: entry.obligor_id.clone() })?;
        let floor = entry.recovery_floor.unwrap_or(r_bar_default);
        let rs = crate::recovery::RecoverySpec::new(entry.recovery, floor, entry.hazard_p)
            .map_err(|source| IoError::Recovery { id: entry.obligor_id.clone(), source })?;
        obligors.push(Obligor::new(
            entry.obligor_id.clone(),
            entry.exposure,
            rs,
            (*loading).clone(),
        )?);
    }
    Ok(Portfolio::new(obligors)?)
}

// ---------------------------------------------------------------------------
// Mixture JSON artifact
// ---------------------------------------------------------------------------

/// Inputs that produced a mixture fit, embedded for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureProvenance {
    pub returns_file: String,
    pub percent_units: bool,
    pub tol: f64,
    pub max_iter: usize,
}

/// The `mixture.json` artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureArtifact {
    pub omega: f64,
    pub hectic: NormalParams,
    pub quiet: NormalParams,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub config: MixtureProvenance,
}

impl MixtureArtifact {
    pub fn params(&self) -> Result<MixtureParams, StatsError> {
        MixtureParams::new(self.omega, self.hectic, self.quiet)
    }
}

pub fn write_mixture_json(path: &Path, artifact: &MixtureArtifact) -> Result<(), IoError> {
    write_json(path, artifact)
}

pub fn read_mixture_json(path: &Path) -> Result<MixtureArtifact, IoError> {
    require_artifact(path, "estimate-mixture")?;
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// Loadings CSV artifact
// ---------------------------------------------------------------------------

pub fn write_loadings_csv(path: &Path, loadings: &[LoadingSet]) -> Result<(), IoError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(["obligor_id", "alpha", "alpha_q", "alpha_h"])
        .map_err(|e| csv_err(path, e))?;
    for l in loadings {
        wtr.write_record([
            l.obligor_id(),
            &l.alpha().to_string(),
            &l.alpha_q().to_string(),
            &l.alpha_h().to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    let bytes = wtr.into_inner().expect("in-memory CSV writer cannot fail to flush");
    write_atomic(path, &bytes)
}

pub fn read_loadings_csv(path: &Path) -> Result<Vec<LoadingSet>, IoError> {
    require_artifact(path, "estimate-loadings")?;
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let idx_id = column_index(&headers, path, "obligor_id")?;
    let idx_alpha = column_index(&headers, path, "alpha")?;
    let idx_q = column_index(&headers, path, "alpha_q")?;
    let idx_h = column_index(&headers, path, "alpha_h")?;
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(idx_id).unwrap_or("").trim().to_string();
        let need = |v: Option<f64>, column: &str| {
            v.ok_or_else(|| IoError::Field {
                path: path.display().to_string(),
                line,
                column: column.to_string(),
                message: "value is empty".into(),
            })
        };
        let alpha = need(parse_f64(&record, idx_alpha, path, line, "alpha")?, "alpha")?;
        let alpha_q = need(parse_f64(&record, idx_q, path, line, "alpha_q")?, "alpha_q")?;
        let alpha_h = need(parse_f64(&record, idx_h, path, line, "alpha_h")?, "alpha_h")?;
        out.push(LoadingSet::new(id, alpha, alpha_h, alpha_q)?);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Evaluation report artifacts
// ---------------------------------------------------------------------------

/// The `report.json` artifact: the evaluation plus the config that made it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportArtifact {
    pub config: RunConfig,
    #[serde(flatten)]
    pub report: EvaluationReport,
}

/// Write `report.json` and `report.csv` into `out_dir`.
pub fn write_report(out_dir: &Path, artifact: &ReportArtifact) -> Result<(), IoError> {
    write_json(&out_dir.join("report.json"), artifact)?;

    let path = out_dir.join("report.csv");
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record([
        "variant",
        "actual_loss",
        "expected_loss",
        "ae",
        "abs_ae",
        "mae",
        "ratio",
    ])
    .map_err(|e| csv_err(&path, e))?;
    for m in &artifact.report.models {
        wtr.write_record([
            m.variant.to_string(),
            m.actual_loss.to_string(),
            m.expected_loss.to_string(),
            m.ae.to_string(),
            m.abs_ae.to_string(),
            m.mae.to_string(),
            m.ratio.map(|r| r.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(&path, e))?;
    }
    let bytes = wtr.into_inner().expect("in-memory CSV writer cannot fail to flush");
    write_atomic(&path, &bytes)
}

/// The `scenarios.json` artifact: a reproducibility summary of one simulated
/// scenario panel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub config: RunConfig,
    pub n_obligors: usize,
    pub sample_mean_z: f64,
    pub sample_var_z: f64,
    pub mean_pi_hectic: f64,
}

pub fn write_simulation_summary(path: &Path, summary: &SimulationSummary) -> Result<(), IoError> {
    write_json(path, summary)
}

// ---------------------------------------------------------------------------
// Contribution CSV artifacts
// ---------------------------------------------------------------------------

/// Write `contribution_2d.csv` (systematic vs idiosyncratic) and
/// `contribution_3d.csv` (plus the mean latent value) into `out_dir`.
pub fn write_contribution_csvs(out_dir: &Path, rows: &[ContributionRow]) -> Result<(), IoError> {
    let path2 = out_dir.join("contribution_2d.csv");
    let mut w2 = csv::Writer::from_writer(Vec::new());
    w2.write_record(["scenario", "group", "systematic", "idiosyncratic"])
        .map_err(|e| csv_err(&path2, e))?;
    for r in rows {
        w2.write_record([
            r.scenario.to_string(),
            r.group.to_string(),
            r.systematic.to_string(),
            r.idiosyncratic.to_string(),
        ])
        .map_err(|e| csv_err(&path2, e))?;
    }
    let bytes = w2.into_inner().expect("in-memory CSV writer cannot fail to flush");
    write_atomic(&path2, &bytes)?;

    let path3 = out_dir.join("contribution_3d.csv");
    let mut w3 = csv::Writer::from_writer(Vec::new());
    w3.write_record(["scenario", "group", "systematic", "idiosyncratic", "mean_latent"])
        .map_err(|e| csv_err(&path3, e))?;
    for r in rows {
        w3.write_record([
            r.scenario.to_string(),
            r.group.to_string(),
            r.systematic.to_string(),
            r.idiosyncratic.to_string(),
            r.mean_latent.to_string(),
        ])
        .map_err(|e| csv_err(&path3, e))?;
    }
    let bytes = w3.into_inner().expect("in-memory CSV writer cannot fail to flush");
    write_atomic(&path3, &bytes)
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Error unless `path` exists; names the subcommand that produces it.
pub fn require_artifact(path: &Path, producer: &'static str) -> Result<(), IoError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(IoError::MissingArtifact { path: path.display().to_string(), producer })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Write via a sibling temp file and an atomic rename, so readers never see
/// a partial artifact and failed runs leave nothing behind.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
    }
    let dir = parent.unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.flush().map_err(|e| io_err(path, e))?;
    tmp.persist(path)
        .map_err(|e| io_err(path, e.error))?;
    Ok(())
}
