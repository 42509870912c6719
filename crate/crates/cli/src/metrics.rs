//! Per-run metrics CSV files and experiment summary files.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use gcnn::optim::EvalPoint;
use gcnn::stats::{parse_percent, RunSummary};

use crate::CliError;

pub const CSV_HEADER: &str = "iteration,lr,train_loss,test_accuracy";

/// Appends one row per evaluation point, flushing each row.
pub struct MetricsWriter {
    file: File,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
        writeln!(file, "{CSV_HEADER}").map_err(|e| CliError::io(path, e))?;
        Ok(MetricsWriter {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, p: &EvalPoint) -> Result<(), CliError> {
        writeln!(self.file, "{}", format_row(p))
            .and_then(|_| self.file.flush())
            .map_err(|e| CliError::io(&self.path, e))
    }
}

/// Shortest round-trip formatting, so rows reproduce exactly.
pub fn format_row(p: &EvalPoint) -> String {
    format!("{},{},{},{}", p.iteration, p.lr, p.train_loss, p.test_accuracy)
}

pub fn parse_row(line: &str) -> Option<EvalPoint> {
    let mut it = line.trim().split(',');
    let point = EvalPoint {
        iteration: it.next()?.parse().ok()?,
        lr: it.next()?.parse().ok()?,
        train_loss: it.next()?.parse().ok()?,
        test_accuracy: it.next()?.parse().ok()?,
    };
    it.next().is_none().then_some(point)
}

pub fn read_metrics(path: &Path) -> Result<Vec<EvalPoint>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let bad = |msg: String| CliError::Runtime(format!("{}: {msg}", path.display()));
    match lines.next() {
        Some(Ok(h)) if h.trim() == CSV_HEADER => {}
        _ => return Err(bad(format!("missing header `{CSV_HEADER}`"))),
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        points.push(parse_row(&line).ok_or_else(|| bad(format!("line {}: malformed row `{line}`", i + 2)))?);
    }
    Ok(points)
}

/// Final test accuracies of a set of runs, read back from their CSV files.
pub fn summarize_csvs(paths: &[PathBuf]) -> Result<RunSummary, CliError> {
    let mut acc = Vec::with_capacity(paths.len());
    for path in paths {
        let last = read_metrics(path)?
            .pop()
            .ok_or_else(|| CliError::Runtime(format!("{}: no rows", path.display())))?;
        acc.push(last.test_accuracy);
    }
    Ok(RunSummary::new(acc))
}

pub fn write_summary(path: &Path, name: &str, summary: &RunSummary) -> Result<(), CliError> {
    let accuracies: Vec<String> = summary.accuracies.iter().map(f64::to_string).collect();
    let text = format!(
        "name = {name}\nruns = {}\nsummary = {}\naccuracies = {}\n",
        summary.count(),
        summary.format_percent(),
        accuracies.join(", ")
    );
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_summary(path: &Path) -> Result<(String, RunSummary), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let bad = |msg: &str| CliError::Runtime(format!("{}: {msg}", path.display()));
    let mut name = None;
    let mut accuracies = None;
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        match k.trim() {
            "name" => name = Some(v.trim().to_string()),
            "accuracies" => {
                accuracies = Some(
                    v.split(',')
                        .map(|a| a.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| bad("malformed accuracies"))?,
                )
            }
            _ => {}
        }
    }
    let accuracies = accuracies.ok_or_else(|| bad("no `accuracies` line"))?;
    let name = name.unwrap_or_else(|| path.display().to_string());
    Ok((name, RunSummary::new(accuracies)))
}

/// A group for `compare`: a summary file, or `label=MEAN±STD%@N` typed in
/// directly (e.g. a published table cell).
#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub label: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Group {
    pub fn from_summary(label: String, s: &RunSummary) -> Self {
        Group {
            label,
            mean: 100.0 * s.mean(),
            std: 100.0 * s.std(),
            count: s.count(),
        }
    }

    pub fn parse_inline(arg: &str) -> Option<Group> {
        let (label, rest) = arg.split_once('=')?;
        let (cell, n) = rest.split_once('@')?;
        let (mean, std) = parse_percent(cell)?;
        Some(Group {
            label: label.trim().to_string(),
            mean,
            std,
            count: n.trim().parse().ok()?,
        })
    }

    pub fn resolve(arg: &str) -> Result<Group, CliError> {
        if arg.contains('±') {
            return Group::parse_inline(arg)
                .ok_or_else(|| CliError::Usage(format!("bad group `{arg}` (expected LABEL=MEAN±STD%@N)")));
        }
        let (name, s) = read_summary(Path::new(arg))?;
        Ok(Group::from_summary(name, &s))
    }
}
