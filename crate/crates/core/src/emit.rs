//! Trace, update-log and summary files.

use std::fs;
use std::path::{Path, PathBuf};

use crate::estimator::UpdateEvent;
use crate::experiment::{ExperimentError, RunOutput, RunSummary, TraceRecord};

pub const TRACE_HEADER: [&str; 10] = ["t", "y", "u", "v", "p", "eta", "update", "cut", "eps", "I_zeta"];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Csv {
        path: path.display().to_string(),
        source,
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(TRACE_HEADER).map_err(csv_err(path))?;
    for r in trace {
        w.write_record([
            r.t.to_string(),
            r.y.to_string(),
            r.u.to_string(),
            r.v.to_string(),
            r.p.to_string(),
            r.eta.to_string(),
            (r.update as u8).to_string(),
            (r.cut as u8).to_string(),
            r.eps.to_string(),
            r.i_zeta.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_updates_csv(path: &Path, updates: &[UpdateEvent], n: usize, m: usize) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["t".to_string(), "I_zeta".into(), "eps".into()];
    header.extend((1..=n).map(|i| format!("a{i}")));
    header.extend((1..=m).map(|j| format!("b{j}")));
    header.push("delta_w".into());
    header.push("delta".into());
    w.write_record(&header).map_err(csv_err(path))?;
    for u in updates {
        let mut row = vec![u.t.to_string(), u.criterion.to_string(), u.eps.to_string()];
        row.extend(u.zeta.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_summary_json(path: &Path, summary: &RunSummary) -> Result<(), ExperimentError> {
    let text = serde_json::to_string_pretty(summary).map_err(|source| ExperimentError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// Paths written by [`emit`].
#[derive(Debug, Clone)]
pub struct EmittedFiles {
    pub trace: PathBuf,
    pub updates: PathBuf,
    pub summary: PathBuf,
}

/// Writes `trace.csv`, `updates.csv` and `summary.json` under `dir`.
pub fn emit(out: &RunOutput, dir: &Path) -> Result<EmittedFiles, ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = EmittedFiles {
        trace: dir.join("trace.csv"),
        updates: dir.join("updates.csv"),
        summary: dir.join("summary.json"),
    };
    write_trace_csv(&files.trace, &out.trace)?;
    write_updates_csv(&files.updates, &out.updates, out.config.plant.n(), out.config.plant.m())?;
    write_summary_json(&files.summary, &out.summary)?;
    Ok(files)
}
