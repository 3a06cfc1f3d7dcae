//! Confusion matrices, domain statistics, run summaries and their file formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledSample;
use crate::error::{Error, IoContext, Result};
use crate::scalar::Scalar;
use crate::spectral;
use crate::trainer::{mean_std, EpochRecord, EvalReport, StepLog};

pub const HISTORY_FILE: &str = "history.csv";
pub const STEPS_FILE: &str = "steps.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// `counts[i][j]`: samples of true class `i` predicted as `j`.
pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::ClassMismatch(format!("class {} outside 0..{n_classes}", p.max(l))));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

/// Mean spectra of one `(domain, class)` cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpectra {
    pub domain_id: u32,
    pub class_id: usize,
    pub samples: usize,
    pub mean_amplitude: Vec<f64>,
    pub mean_phase: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStats {
    pub cells: Vec<CellSpectra>,
    /// Mean per-bin absolute difference of amplitude spectra across domains.
    pub amplitude_distance: f64,
    /// Mean per-bin absolute difference of phase spectra across domains.
    pub phase_distance: f64,
    /// `amplitude_distance / phase_distance`; `None` when either is zero.
    pub rho: Option<f64>,
    /// Pairwise `(d1, d2, amplitude distance, phase distance)`.
    pub pairs: Vec<(u32, u32, f64, f64)>,
}

/// Per-domain mean amplitude and phase spectra and their cross-domain distances.
///
/// Distances compare cells of the same class in two different domains.
pub fn domain_stats<T: Scalar>(samples: &[LabeledSample<T>], classes: Option<&[usize]>) -> Result<DomainStats> {
    let mut sums: BTreeMap<(u32, usize), (usize, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut shape: Option<&[usize]> = None;
    for s in samples {
        if classes.is_some_and(|c| !c.contains(&s.class_id)) {
            continue;
        }
        if *shape.get_or_insert(s.signal.shape()) != s.signal.shape() {
            return Err(Error::Shape("samples of different shapes".into()));
        }
        let polar = spectral::polar(&spectral::dft2(&s.signal)?);
        let entry = sums
            .entry((s.domain_id, s.class_id))
            .or_insert_with(|| (0, vec![0.0; polar.amplitude.len()], vec![0.0; polar.amplitude.len()]));
        entry.0 += 1;
        for (acc, v) in entry.1.iter_mut().zip(polar.amplitude.data()) {
            *acc += v.to_f64_lossy();
        }
        for (acc, v) in entry.2.iter_mut().zip(polar.phase.data()) {
            *acc += v.to_f64_lossy();
        }
    }
    let cells: Vec<CellSpectra> = sums
        .into_iter()
        .map(|((domain_id, class_id), (n, a, p))| CellSpectra {
            domain_id,
            class_id,
            samples: n,
            mean_amplitude: a.into_iter().map(|v| v / n as f64).collect(),
            mean_phase: p.into_iter().map(|v| v / n as f64).collect(),
        })
        .collect();
    let mut domains: Vec<u32> = cells.iter().map(|c| c.domain_id).collect();
    domains.dedup();
    if domains.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "domain statistics need at least two domains, got {}",
            domains.len()
        )));
    }
    let mad = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    let mut pairs = Vec::new();
    let (mut amp_all, mut pha_all, mut n_all) = (0.0, 0.0, 0usize);
    for (i, &d1) in domains.iter().enumerate() {
        for &d2 in &domains[i + 1..] {
            let (mut amp, mut pha, mut n) = (0.0, 0.0, 0usize);
            for c1 in cells.iter().filter(|c| c.domain_id == d1) {
                if let Some(c2) = cells.iter().find(|c| c.domain_id == d2 && c.class_id == c1.class_id) {
                    amp += mad(&c1.mean_amplitude, &c2.mean_amplitude);
                    pha += mad(&c1.mean_phase, &c2.mean_phase);
                    n += 1;
                }
            }
            if n > 0 {
                pairs.push((d1, d2, amp / n as f64, pha / n as f64));
                amp_all += amp;
                pha_all += pha;
                n_all += n;
            }
        }
    }
    if n_all == 0 {
        return Err(Error::InvalidArgument("no class is shared by two domains".into()));
    }
    let amplitude_distance = amp_all / n_all as f64;
    let phase_distance = pha_all / n_all as f64;
    let rho = (amplitude_distance > 0.0 && phase_distance > 0.0).then(|| amplitude_distance / phase_distance);
    Ok(DomainStats {
        cells,
        amplitude_distance,
        phase_distance,
        rho,
        pairs,
    })
}

/// Aggregate of a multi-seed task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub task: String,
    pub variant: String,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub seconds: f64,
}

impl RunSummary {
    pub fn new(task: impl Into<String>, variant: impl Into<String>, accuracies: Vec<f64>, seconds: f64) -> Self {
        let (mean, std) = mean_std(&accuracies);
        Self {
            task: task.into(),
            variant: variant.into(),
            accuracies,
            mean,
            std,
            seconds,
        }
    }
}

/// Per-run metrics written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub seconds: f64,
    #[serde(flatten)]
    pub eval: EvalReport,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Manifest(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

fn read_rows<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_history(path: &Path, epochs: &[EpochRecord]) -> Result<()> {
    write_rows(path, epochs)
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    read_rows(path)
}

pub fn write_steps(path: &Path, steps: &[StepLog]) -> Result<()> {
    write_rows(path, steps)
}

pub fn read_steps(path: &Path) -> Result<Vec<StepLog>> {
    read_rows(path)
}

/// Confusion matrix as CSV: a header of predicted classes, one row per true class.
pub fn write_confusion(path: &Path, m: &[Vec<usize>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = std::iter::once("true\\pred".to_string())
        .chain((0..m.len()).map(|j| j.to_string()))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, row) in m.iter().enumerate() {
        let rec: Vec<String> = std::iter::once(i.to_string()).chain(row.iter().map(|v| v.to_string())).collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_confusion(path: &Path) -> Result<Vec<Vec<usize>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut m = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse().map_err(|_| Error::Manifest(format!("{}: bad count `{v}`", path.display()))))
            .collect::<Result<Vec<usize>>>()?;
        m.push(row);
    }
    if m.iter().any(|r| r.len() != m.len()) {
        return Err(Error::Manifest(format!("{}: confusion matrix is not square", path.display())));
    }
    Ok(m)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").at(path)
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    Ok(serde_json::from_str(&fs::read_to_string(path).at(path)?)?)
}

/// Embedding rows for external projection tools.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub domain_id: u32,
    pub class_id: usize,
    pub vector: Vec<f64>,
}

pub fn write_embeddings(path: &Path, rows: &[EmbeddingRow]) -> Result<()> {
    let dim = rows.first().map_or(0, |r| r.vector.len());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = ["domain", "class"]
        .into_iter()
        .map(String::from)
        .chain((0..dim).map(|j| format!("e{j}")))
        .collect();
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        if r.vector.len() != dim {
            return Err(Error::Shape("embeddings of different widths".into()));
        }
        let rec: Vec<String> = [r.domain_id.to_string(), r.class_id.to_string()]
            .into_iter()
            .chain(r.vector.iter().map(|v| v.to_string()))
            .collect();
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().at(path)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let bad = |v: &str| Error::Manifest(format!("{}: bad value `{v}`", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| bad("<missing>"));
        out.push(EmbeddingRow {
            domain_id: field(0)?.parse().map_err(|_| bad(&rec[0]))?,
            class_id: field(1)?.parse().map_err(|_| bad(&rec[1]))?,
            vector: rec.iter().skip(2).map(|v| v.parse().map_err(|_| bad(v))).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// Plain-text table with right-aligned columns.
pub fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:>w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(headers.to_vec(), &mut out);
    let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// `mean ± std` in percent.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{:.2}±{:.2}", 100.0 * mean, 100.0 * std)
}
