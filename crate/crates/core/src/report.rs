//! Report documents and their on-disk formats.
//!
//! `report.json` holds a [`CommandReport`]. `trials.csv` has the header
//! [`TRIALS_HEADER`] and one row per trial in index order. `sweep.csv` has
//! the header [`SWEEP_HEADER`] and one row per grid point in grid order;
//! cells are empty where a row failed. Floats are written with 17
//! significant digits so they re-parse to the same bits.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Format, SweepVariable};
use crate::error::{Error, Result};
use crate::lhv::{Alphabet, BellCertificate, ScaleSearch};
use crate::protocol::{Decision, RunReport, TrialRecord};
use crate::spatial::{Detectability, GEstimate, GaussianPacket, QuadratureG, Region};
use crate::spin::SettingSet;

pub const TRIALS_HEADER: [&str; 5] = ["index", "i", "j", "A", "B"];
pub const SWEEP_HEADER: [&str; 9] = [
    "value",
    "g",
    "s",
    "std_error",
    "qber",
    "decision",
    "g_threshold",
    "chsh_bound",
    "error",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature_deviation: Option<f64>,
    pub quadrature_tolerance: f64,
    pub monte_carlo_deviation: f64,
    pub monte_carlo_tolerance: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GFactorReport {
    pub packet: GaussianPacket,
    pub region_a: Region,
    pub region_b: Region,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<GEstimate>,
    pub quadrature: QuadratureG,
    pub monte_carlo: GEstimate,
    /// Single-particle detection probabilities.
    pub g_alice: f64,
    pub g_bob: f64,
    /// Analytic value for boxes, quadrature otherwise.
    pub g: f64,
    pub detectability: Detectability,
    pub threshold: f64,
    pub agreement: Agreement,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub alphabet: Alphabet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_constraint: Option<f64>,
    pub search: ScaleSearch,
    /// Scale at which the certificate below was computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<BellCertificate>,
    /// Setting pairs with a non-zero certificate coefficient.
    #[serde(default)]
    pub binding_pairs: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub settings: SettingSet,
    pub entries: Vec<ThresholdEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    pub value: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qber: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub variable: SweepVariable,
    pub base_seed: u64,
    pub g_threshold: f64,
    pub chsh_bound: f64,
    pub rows: Vec<SweepRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
#[allow(clippy::large_enum_variant)]
pub enum CommandReport {
    Gfactor(GFactorReport),
    LhvThreshold(ThresholdReport),
    Run(Box<RunReport>),
    Sweep(SweepReport),
}

pub fn report_to_json(report: &CommandReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn parse_report_json(text: &str) -> Result<CommandReport> {
    Ok(serde_json::from_str(text)?)
}

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidArgument(format!("csv: {other:?}")),
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidArgument(e.to_string()))
}

pub fn trials_to_csv(trials: &[TrialRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRIALS_HEADER).map_err(csv_error)?;
    for t in trials {
        w.write_record([
            t.index.to_string(),
            t.alice_setting.to_string(),
            t.bob_setting.to_string(),
            t.alice.to_string(),
            t.bob.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

/// One parsed `trials.csv` row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialRow {
    pub index: u64,
    pub i: usize,
    pub j: usize,
    pub alice: i8,
    pub bob: i8,
}

fn reader<'a>(text: &'a str, header: &[&str]) -> Result<csv::Reader<&'a [u8]>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let got = r.headers().map_err(csv_error)?;
    if !got.iter().eq(header.iter().copied()) {
        return Err(Error::InvalidArgument(format!(
            "unexpected header {:?}",
            got.iter().collect::<Vec<_>>()
        )));
    }
    Ok(r)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: usize) -> Result<T> {
    rec.get(k)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::InvalidArgument(format!("row {line}: bad field {k}")))
}

fn optional<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: usize) -> Result<Option<T>> {
    match rec.get(k) {
        Some("") => Ok(None),
        _ => field(rec, k, line).map(Some),
    }
}

pub fn parse_trials_csv(text: &str) -> Result<Vec<TrialRow>> {
    let mut r = reader(text, &TRIALS_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let row = TrialRow {
            index: field(&rec, 0, line)?,
            i: field(&rec, 1, line)?,
            j: field(&rec, 2, line)?,
            alice: field(&rec, 3, line)?,
            bob: field(&rec, 4, line)?,
        };
        if ![row.alice, row.bob].iter().all(|v| (-1..=1).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "row {line}: outcomes must be -1, 0 or 1"
            )));
        }
        out.push(row);
    }
    Ok(out)
}

fn decision_name(d: Decision) -> &'static str {
    match d {
        Decision::SecureAccept => "secure_accept",
        Decision::EveDetected => "eve_detected",
        Decision::Inconclusive => "inconclusive",
    }
}

fn parse_decision(s: &str) -> Option<Decision> {
    match s {
        "secure_accept" => Some(Decision::SecureAccept),
        "eve_detected" => Some(Decision::EveDetected),
        "inconclusive" => Some(Decision::Inconclusive),
        _ => None,
    }
}

pub fn sweep_to_csv(report: &SweepReport) -> Result<String> {
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_HEADER).map_err(csv_error)?;
    for row in &report.rows {
        w.write_record([
            format_float(row.value),
            opt(row.g),
            opt(row.s),
            opt(row.std_error),
            opt(row.qber),
            row.decision.map(decision_name).unwrap_or_default().to_string(),
            format_float(report.g_threshold),
            format_float(report.chsh_bound),
            row.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

/// One parsed `sweep.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCsvRow {
    pub value: f64,
    pub g: Option<f64>,
    pub s: Option<f64>,
    pub std_error: Option<f64>,
    pub qber: Option<f64>,
    pub decision: Option<Decision>,
    pub g_threshold: f64,
    pub chsh_bound: f64,
    pub error: Option<String>,
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepCsvRow>> {
    let mut r = reader(text, &SWEEP_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let decision = match rec.get(5) {
            Some("") => None,
            Some(s) => Some(
                parse_decision(s)
                    .ok_or_else(|| Error::InvalidArgument(format!("row {line}: bad decision")))?,
            ),
            None => return Err(Error::InvalidArgument(format!("row {line}: missing decision"))),
        };
        out.push(SweepCsvRow {
            value: field(&rec, 0, line)?,
            g: optional(&rec, 1, line)?,
            s: optional(&rec, 2, line)?,
            std_error: optional(&rec, 3, line)?,
            qber: optional(&rec, 4, line)?,
            decision,
            g_threshold: field(&rec, 6, line)?,
            chsh_bound: field(&rec, 7, line)?,
            error: rec.get(8).filter(|s| !s.is_empty()).map(str::to_string),
        });
    }
    Ok(out)
}

/// Everything a command produces, plus the exit code it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub report: CommandReport,
    pub trials: Option<Vec<TrialRecord>>,
    pub exit_code: i32,
}

/// Writes the bundle into `dir`; returns the files written.
pub fn write_bundle(bundle: &Bundle, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, contents: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents)?;
        written.push(path);
        Ok(())
    };
    if formats.contains(&Format::Json) {
        put("report.json", report_to_json(&bundle.report)?)?;
    }
    if formats.contains(&Format::Csv) {
        if let Some(trials) = &bundle.trials {
            put("trials.csv", trials_to_csv(trials)?)?;
        }
        if let CommandReport::Sweep(sweep) = &bundle.report {
            put("sweep.csv", sweep_to_csv(sweep)?)?;
        }
    }
    Ok(written)
}
