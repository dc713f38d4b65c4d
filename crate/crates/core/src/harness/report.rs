//! Run reports and their json, csv and markdown renderings.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::{CascadeConfig, CascadeRun};
use crate::error::{CrvError, Result};
use crate::model::{Dataset, Network};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool_version: String,
    pub config_hash: String,
    pub model_hash: String,
    pub data_hash: String,
    pub dataset: String,
    pub n_inputs: usize,
    pub attack_seed: u64,
    /// Seconds since the epoch; omitted in cost-unit mode so reports repeat.
    pub created_unix: Option<u64>,
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub epsilon: f64,
    pub verifier: String,
    pub ra: f64,
    /// Mean time per verified input.
    pub runtime: f64,
    /// Relative saving against the tightest verifier run alone.
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub metadata: ReportMeta,
    pub config: CascadeConfig,
    pub runs: Vec<CascadeRun>,
    pub summary: Vec<SummaryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = CrvError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "md-table" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(CrvError::Config(format!(
                "unknown report format `{other}` (json, csv, md-table)"
            ))),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Relative saving of `runtime` against `reference`.
pub fn speedup(reference: f64, runtime: f64) -> Option<f64> {
    (reference > 0.0).then(|| (reference - runtime) / reference)
}

pub fn format_speedup(s: Option<f64>) -> String {
    match s {
        Some(v) => format!("{:.2}%", v * 100.0),
        None => "—".to_string(),
    }
}

/// Summary rows for one run: the tightest verifier alone, each stage, and the
/// whole cascade. Speedups are left empty when the cascade is that verifier.
pub fn summarize(run: &CascadeRun) -> Vec<SummaryRow> {
    let m = &run.metrics;
    let n_ver = m.n_eligible.max(1) as f64;
    let reference = m.tightest_mean_time;
    let trivial = run.stages.len() == 1 && run.baseline.as_ref().is_none_or(|b| b.verifier == run.stages[0]);
    let sp = |t: f64| if trivial { None } else { speedup(reference, t) };
    let mut rows = Vec::new();
    if let Some(b) = &run.baseline {
        rows.push(SummaryRow {
            epsilon: run.epsilon,
            verifier: format!("{} alone", b.verifier),
            ra: b.certified.len() as f64 / m.n_inputs.max(1) as f64,
            runtime: b.mean_time,
            speedup: None,
        });
    }
    if run.stages.len() > 1 {
        for s in &m.stages {
            rows.push(SummaryRow {
                epsilon: run.epsilon,
                verifier: s.spec.clone(),
                ra: s
                    .ra_standalone
                    .unwrap_or(s.certified_here as f64 / m.n_inputs.max(1) as f64),
                runtime: s.mean_time,
                speedup: sp(s.mean_time),
            });
        }
    }
    let cascade_time = m.tvc / n_ver;
    rows.push(SummaryRow {
        epsilon: run.epsilon,
        verifier: format!("cascade[{}]", run.stages.join(" -> ")),
        ra: m.ra,
        runtime: cascade_time,
        speedup: sp(cascade_time),
    });
    rows
}

impl CascadeReport {
    pub fn new(config: &CascadeConfig, net: &Network, data: &Dataset, runs: Vec<CascadeRun>) -> Self {
        let created_unix = match config.timing {
            crate::cascade::Timing::CostUnits => None,
            crate::cascade::Timing::Wall => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .ok()
                .map(|d| d.as_secs()),
        };
        let summary = runs.iter().flat_map(summarize).collect();
        CascadeReport {
            metadata: ReportMeta {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                config_hash: sha256_hex(config.to_toml().as_bytes()),
                model_hash: sha256_hex(net.to_json().as_bytes()),
                data_hash: sha256_hex(data.to_csv().as_bytes()),
                dataset: data.name.clone(),
                n_inputs: data.len(),
                attack_seed: config.attack.seed,
                created_unix,
            },
            config: config.clone(),
            runs,
            summary,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CrvError::Schema(format!("report: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }
}

pub fn emit_report(report: &CascadeReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => report.to_json(),
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["epsilon", "verifier", "ra", "runtime", "speedup"])
                .expect("in-memory write");
            for r in &report.summary {
                w.write_record([
                    format!("{}", r.epsilon),
                    r.verifier.clone(),
                    format!("{}", r.ra),
                    format!("{}", r.runtime),
                    r.speedup.map(|s| format!("{s}")).unwrap_or_default(),
                ])
                .expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
        }
        ReportFormat::Markdown => {
            let mut s = String::from("| epsilon | verifier | RA | runtime | speedup |\n|---|---|---|---|---|\n");
            for r in &report.summary {
                let _ = writeln!(
                    s,
                    "| {} | {} | {:.2}% | {:.4} | {} |",
                    r.epsilon,
                    r.verifier,
                    r.ra * 100.0,
                    r.runtime,
                    format_speedup(r.speedup)
                );
            }
            s
        }
    }
}

/// Reads back the csv rendering.
pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| CrvError::Schema(format!("summary csv: {e}")))?;
        let num = |k: usize| -> Result<f64> {
            rec.get(k)
                .unwrap_or("")
                .parse()
                .map_err(|_| CrvError::Schema(format!("summary csv: bad number in column {k}")))
        };
        rows.push(SummaryRow {
            epsilon: num(0)?,
            verifier: rec.get(1).unwrap_or("").to_string(),
            ra: num(2)?,
            runtime: num(3)?,
            speedup: match rec.get(4) {
                Some("") | None => None,
                Some(_) => Some(num(4)?),
            },
        });
    }
    Ok(rows)
}
