//! Files written for a finished evaluation.
//!
//! ```text
//! <dir>/summary.csv
//! <dir>/summary.json
//! <dir>/runs/<optimizer>__<trial>__r<k>.record.json
//! <dir>/runs/<optimizer>__<trial>__r<k>.jsonl   one line per model call
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{summarize, RunRecord, Stat, SuiteSummary};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("no run records under {0}")]
    Empty(PathBuf),
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn slug(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn stem(r: &RunRecord) -> String {
    format!("{}__{}__r{}", slug(&r.optimizer), slug(&r.trial_id), r.run_index)
}

pub const CSV_HEADER: [&str; 17] = [
    "optimizer",
    "runs",
    "Final beam difference (μm) mean",
    "Final beam difference (μm) sd",
    "Normalised beam improvement (%) mean",
    "Normalised beam improvement (%) sd",
    "Normalised integrated MAE (%) mean",
    "Normalised integrated MAE (%) sd",
    "Number of successful steps mean",
    "Number of successful steps sd",
    "successes",
    "outright",
    "partial",
    "single_trial",
    "tier",
    "excluded_runs",
    "filled_runs",
];

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        "n/a".into()
    }
}

fn stat_cells(s: &Stat) -> [String; 2] {
    [num(s.mean), num(s.sd)]
}

fn csv_bytes(summaries: &[SuiteSummary]) -> Result<Vec<u8>, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for s in summaries {
        let steps = s
            .successful_steps
            .as_ref()
            .map_or(["n/a".to_string(), "n/a".to_string()], stat_cells);
        let mut row = vec![s.optimizer.clone(), s.runs.len().to_string()];
        row.extend(stat_cells(&s.final_beam_difference_um));
        row.extend(stat_cells(&s.normalized_improvement_pct));
        row.extend(stat_cells(&s.normalized_integrated_mae_pct));
        row.extend(steps);
        row.extend([
            s.tiers.successes.to_string(),
            s.tiers.outright.to_string(),
            s.tiers.partial.to_string(),
            s.tiers.single_trial.to_string(),
            s.tiers.best().to_string(),
            s.excluded_runs.to_string(),
            s.filled_runs.to_string(),
        ]);
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| ReportError::Csv(e.into_error().into()))
}

/// Groups records per optimizer, in name order.
pub fn summaries(records: &[RunRecord]) -> Vec<SuiteSummary> {
    let mut groups: BTreeMap<&str, Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(&r.optimizer).or_default().push(r.clone());
    }
    groups.values().map(|g| summarize(g)).collect()
}

fn write_summary(dir: &Path, summaries: &[SuiteSummary]) -> Result<(), ReportError> {
    let csv_path = dir.join("summary.csv");
    fs::write(&csv_path, csv_bytes(summaries)?).map_err(io(&csv_path))?;
    let json_path = dir.join("summary.json");
    let mut json = serde_json::to_vec_pretty(summaries).map_err(|source| ReportError::Json {
        path: json_path.clone(),
        source,
    })?;
    json.push(b'\n');
    fs::write(&json_path, json).map_err(io(&json_path))
}

/// Writes run records, transcripts and the summaries.
pub fn write_report(dir: &Path, records: &[RunRecord]) -> Result<Vec<SuiteSummary>, ReportError> {
    let runs = dir.join("runs");
    fs::create_dir_all(&runs).map_err(io(&runs))?;
    for r in records {
        let path = runs.join(format!("{}.record.json", stem(r)));
        let body = serde_json::to_vec_pretty(r).map_err(|source| ReportError::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, body).map_err(io(&path))?;

        let path = runs.join(format!("{}.jsonl", stem(r)));
        let mut out = Vec::new();
        for call in &r.transcripts {
            serde_json::to_writer(&mut out, call).map_err(|source| ReportError::Json {
                path: path.clone(),
                source,
            })?;
            out.write_all(b"\n").map_err(io(&path))?;
        }
        fs::write(&path, out).map_err(io(&path))?;
    }
    let s = summaries(records);
    write_summary(dir, &s)?;
    Ok(s)
}

/// Reads every `*.record.json` below `dir/runs`, in file name order.
pub fn load_records(dir: &Path) -> Result<Vec<RunRecord>, ReportError> {
    let runs = dir.join("runs");
    let mut paths: Vec<PathBuf> = fs::read_dir(&runs)
        .map_err(io(&runs))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".record.json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(io(p))?;
            serde_json::from_str(&text).map_err(|source| ReportError::Json {
                path: p.clone(),
                source,
            })
        })
        .collect()
}

/// Recomputes the summaries of an output directory from its run records.
pub fn read_report_dir(dir: &Path) -> Result<Vec<SuiteSummary>, ReportError> {
    let records = load_records(dir)?;
    if records.is_empty() {
        return Err(ReportError::Empty(dir.to_path_buf()));
    }
    let s = summaries(&records);
    write_summary(dir, &s)?;
    Ok(s)
}
