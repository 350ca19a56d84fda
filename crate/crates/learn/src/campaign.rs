//! Condition x variant experiment matrices, run artifacts and comparison tables.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dt_core::Condition;

use crate::env::Variant;
use crate::train::{read_curves_csv, train_run, write_curves_csv, write_policy, EpisodeStats, RunResult, RunSpec, RunSummary};
use crate::LearnError;

pub fn cell_name(condition: Condition, variant: Variant) -> String {
    format!("{condition}_{variant}")
}

pub fn run_dir(root: &Path, condition: Condition, variant: Variant, run: usize) -> PathBuf {
    root.join(cell_name(condition, variant)).join(format!("run_{run}"))
}

/// Writes curves.csv, summary.json and policy.bin. The summary goes last so
/// its presence marks a complete run.
pub fn save_run(dir: &Path, result: &RunResult) -> Result<(), LearnError> {
    let io = |e: std::io::Error| LearnError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let f = fs::File::create(dir.join("curves.csv")).map_err(io)?;
    write_curves_csv(BufWriter::new(f), &result.episodes).map_err(io)?;
    let f = fs::File::create(dir.join("policy.bin")).map_err(io)?;
    write_policy(BufWriter::new(f), &result.policy).map_err(io)?;
    let json = serde_json::to_string_pretty(&result.summary).expect("summary serializes");
    fs::write(dir.join("summary.json"), json + "\n").map_err(io)?;
    Ok(())
}

/// State of a run directory when resuming a campaign.
#[derive(Debug)]
pub enum RunStatus {
    Missing,
    Complete(RunSummary, Vec<EpisodeStats>),
    Corrupt(String),
}

pub fn inspect_run(dir: &Path, condition: Condition, variant: Variant, run: usize) -> RunStatus {
    if !dir.exists() {
        return RunStatus::Missing;
    }
    let summary = match fs::read_to_string(dir.join("summary.json")) {
        Ok(s) => s,
        // No summary yet: the run was interrupted before finishing.
        Err(_) => return RunStatus::Missing,
    };
    let summary: RunSummary = match serde_json::from_str(&summary) {
        Ok(s) => s,
        Err(e) => return RunStatus::Corrupt(format!("summary.json: {e}")),
    };
    if summary.condition != condition || summary.variant != variant || summary.run != run {
        return RunStatus::Corrupt("summary.json describes a different run".into());
    }
    let episodes = match fs::read_to_string(dir.join("curves.csv")).map_err(|e| LearnError::Io(e.to_string())).and_then(|t| read_curves_csv(&t)) {
        Ok(e) => e,
        Err(e) => return RunStatus::Corrupt(e.to_string()),
    };
    if episodes.len() != summary.episodes {
        return RunStatus::Corrupt("curves.csv and summary.json disagree".into());
    }
    if let Err(e) = crate::train::load_policy(&dir.join("policy.bin")) {
        return RunStatus::Corrupt(e.to_string());
    }
    RunStatus::Complete(summary, episodes)
}

/// Trains every `(spec, run)` job on a pool of `jobs` threads. Results come
/// back in job order, so output never depends on scheduling.
pub fn train_many(jobs: &[(RunSpec, usize)], threads: usize) -> Vec<Result<RunResult, LearnError>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool");
    pool.install(|| jobs.par_iter().map(|(spec, k)| train_run(spec, *k)).collect())
}

/// Like `train_many`, but hands each result to `sink` as soon as its run
/// finishes and keeps only the summary and curves.
pub fn train_streaming<F>(jobs: &[(RunSpec, usize)], threads: usize, sink: F) -> Vec<Result<(RunSummary, Vec<EpisodeStats>), LearnError>>
where
    F: Fn(&RunResult) -> Result<(), LearnError> + Sync,
{
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().expect("thread pool");
    pool.install(|| {
        jobs.par_iter()
            .map(|(spec, k)| {
                let r = train_run(spec, *k)?;
                sink(&r)?;
                Ok((r.summary, r.episodes))
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation; zero for fewer than two values.
    pub fn of(xs: &[f64]) -> MeanStd {
        if xs.is_empty() {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

pub const METRICS: [&str; 4] = ["si", "total_knowledge", "complete_categories", "reward"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub condition: Condition,
    pub variant: Variant,
    pub runs: usize,
    /// Keyed like `METRICS`, in that order.
    pub during_training: Vec<MeanStd>,
    pub end_of_training: Vec<MeanStd>,
}

impl TableRow {
    pub fn end(&self, metric: &str) -> Option<MeanStd> {
        METRICS.iter().position(|m| *m == metric).map(|i| self.end_of_training[i])
    }

    pub fn during(&self, metric: &str) -> Option<MeanStd> {
        METRICS.iter().position(|m| *m == metric).map(|i| self.during_training[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub rows: Vec<TableRow>,
}

impl Table {
    /// One row per `(condition, variant)` in `matrix` order; runs with other
    /// cells are ignored.
    pub fn build(matrix: &[(Condition, Variant)], summaries: &[RunSummary]) -> Table {
        let rows = matrix
            .iter()
            .map(|&(c, v)| {
                let mut cell: Vec<&RunSummary> = summaries.iter().filter(|s| s.condition == c && s.variant == v).collect();
                cell.sort_by_key(|s| s.run);
                let col = |f: &dyn Fn(&RunSummary) -> f64| MeanStd::of(&cell.iter().map(|s| f(s)).collect::<Vec<_>>());
                let pick = |during: bool| -> Vec<MeanStd> {
                    METRICS
                        .iter()
                        .map(|m| {
                            col(&|s: &RunSummary| {
                                let ms = if during { &s.during_training } else { &s.end_of_training };
                                ms.get(m).unwrap()
                            })
                        })
                        .collect()
                };
                TableRow { condition: c, variant: v, runs: cell.len(), during_training: pick(true), end_of_training: pick(false) }
            })
            .collect();
        Table { rows }
    }

    pub fn row(&self, condition: Condition, variant: Variant) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.condition == condition && r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("condition,variant,runs");
        for phase in ["during", "end"] {
            for m in METRICS {
                let _ = write!(s, ",{phase}_{m}_mean,{phase}_{m}_std");
            }
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(s, "{},{},{}", r.condition, r.variant, r.runs);
            for ms in r.during_training.iter().chain(&r.end_of_training) {
                let _ = write!(s, ",{:.6},{:.6}", ms.mean, ms.std);
            }
            s.push('\n');
        }
        s
    }

    /// Aligned text with two blocks, during training and end of training.
    /// Values print as `mean_std`.
    pub fn to_text(&self, color: bool) -> String {
        let mut out = String::new();
        for (title, during) in [("During training (averaged)", true), ("End of training (final 10% of episodes)", false)] {
            let header: Vec<String> = ["condition", "variant", "runs", "SI", "total knowledge", "complete categories", "reward"]
                .iter()
                .map(|s| s.to_string())
                .collect();
            let mut lines = vec![header];
            for r in &self.rows {
                let ms = if during { &r.during_training } else { &r.end_of_training };
                let mut line = vec![r.condition.to_string(), r.variant.to_string(), r.runs.to_string()];
                line.extend(ms.iter().map(|m| format!("{:.2}_{:.2}", m.mean, m.std)));
                lines.push(line);
            }
            let widths: Vec<usize> = (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].len()).max().unwrap()).collect();
            if color {
                let _ = writeln!(out, "\x1b[1m{title}\x1b[0m");
            } else {
                let _ = writeln!(out, "{title}");
            }
            for (i, l) in lines.iter().enumerate() {
                let cells: Vec<String> = l
                    .iter()
                    .zip(&widths)
                    .enumerate()
                    .map(|(c, (v, w))| if c < 2 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                    .collect();
                let _ = writeln!(out, "{}", cells.join("  ").trim_end());
                if i == 0 {
                    let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                    let _ = writeln!(out, "{}", "-".repeat(total));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Gaussian smoothing with width `sigma` in samples, truncated at 3 sigma
/// and renormalized at the edges. `sigma = 0` returns the input.
pub fn gaussian_smooth(xs: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 || xs.is_empty() {
        return xs.to_vec();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let n = xs.len() as isize;
    (0..n)
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for (k, w) in kernel.iter().enumerate() {
                let j = i + k as isize - r;
                if (0..n).contains(&j) {
                    num += w * xs[j as usize];
                    den += w;
                }
            }
            num / den
        })
        .collect()
}

/// Per-window mean of each metric across runs: windows are rollouts, and a
/// run contributes to a window only if an episode ended in it.
pub fn window_curve(runs: &[&[EpisodeStats]]) -> Vec<(usize, [f64; 4])> {
    let last = runs.iter().flat_map(|r| r.iter().map(|e| e.window)).max();
    let Some(last) = last else { return Vec::new() };
    let mut sums = vec![([0.0f64; 4], 0usize); last + 1];
    for eps in runs {
        let mut w = 0;
        while w < eps.len() {
            let win = eps[w].window;
            let end = w + eps[w..].iter().take_while(|e| e.window == win).count();
            let m = crate::train::Metrics::mean_of(&eps[w..end]);
            let slot = &mut sums[win];
            for (i, name) in METRICS.iter().enumerate() {
                slot.0[i] += m.get(name).unwrap();
            }
            slot.1 += 1;
            w = end;
        }
    }
    sums.into_iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(w, (s, n))| (w, s.map(|x| x / n as f64)))
        .collect()
}

/// CSV of raw and smoothed per-window curves for one cell.
pub fn curves_report(runs: &[&[EpisodeStats]], sigma: f64) -> String {
    let curve = window_curve(runs);
    let smoothed: Vec<Vec<f64>> = (0..4).map(|i| gaussian_smooth(&curve.iter().map(|c| c.1[i]).collect::<Vec<_>>(), sigma)).collect();
    let mut s = String::from("window");
    for m in METRICS {
        let _ = write!(s, ",{m},{m}_smoothed");
    }
    s.push('\n');
    for (row, (w, vals)) in curve.iter().enumerate() {
        let _ = write!(s, "{w}");
        for i in 0..4 {
            let _ = write!(s, ",{:.6},{:.6}", vals[i], smoothed[i][row]);
        }
        s.push('\n');
    }
    s
}
