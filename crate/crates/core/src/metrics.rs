//! Error norms against exact value functions and convergence studies.
//!
//! Per-level relative error over the retained nodes of level `n`:
//!
//! ```text
//! E2(t_n) = sqrt( Σ_i |v(x_i, t_n) - V^n(x_i)|² / Σ_i |v(x_i, t_n)|² )
//! ```
//!
//! aggregated in time as `Err22 = sqrt(Δt Σ_n E2(t_n)²)` and
//! `Errinf2 = max_n E2(t_n)`.

use std::io::{Read, Write};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dp::backward_sweep;
use crate::dp::ValueSweepResult;
use crate::error::{Result, TsaError};
use crate::problem::{BenchmarkProblem, DiscreteControlSet, ExactValueFn};
use crate::tree::{build_tree_with, BuildOptions, PruningPolicy, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelError {
    pub level: usize,
    pub e2: f64,
    /// Set when the exact values vanish on the level and `e2` is the absolute ℓ2 error.
    pub absolute: bool,
}

/// Relative ℓ2 error of level `n`.
///
/// Fails with [`TsaError::DegenerateNorm`] if the exact values are all zero.
pub fn level_error(
    tree: &Tree,
    sweep: &ValueSweepResult,
    exact: &ExactValueFn,
    n: usize,
) -> Result<LevelError> {
    let (num, den) = level_sums(tree, sweep, exact, n)?;
    if den == 0.0 {
        return Err(TsaError::DegenerateNorm { level: n });
    }
    Ok(LevelError {
        level: n,
        e2: (num / den).sqrt(),
        absolute: false,
    })
}

fn level_sums(
    tree: &Tree,
    sweep: &ValueSweepResult,
    exact: &ExactValueFn,
    n: usize,
) -> Result<(f64, f64)> {
    if n > tree.steps() || sweep.levels() != tree.steps() + 1 {
        return Err(TsaError::invalid(format!("level {n} out of range")));
    }
    let t = tree.time(n);
    let exact: Vec<f64> = (0..tree.level_len(n))
        .map(|i| exact(tree.state(n, i), t))
        .collect();
    Ok(squared_sums(&exact, sweep.values(n)))
}

/// `(Σ |e - a|², Σ |e|²)`.
fn squared_sums(exact: &[f64], approx: &[f64]) -> (f64, f64) {
    exact
        .iter()
        .zip(approx)
        .fold((0.0, 0.0), |(num, den), (e, a)| {
            (num + (e - a) * (e - a), den + e * e)
        })
}

/// Relative ℓ2 distance `‖exact - approx‖ / ‖exact‖`, or `None` if `exact` is zero.
pub fn relative_l2_error(exact: &[f64], approx: &[f64]) -> Option<f64> {
    let (num, den) = squared_sums(exact, approx);
    (den != 0.0).then(|| (num / den).sqrt())
}

/// Errors for every level, falling back to the absolute ℓ2 error where the
/// relative one is undefined.
pub fn level_errors(
    tree: &Tree,
    sweep: &ValueSweepResult,
    exact: &ExactValueFn,
) -> Result<Vec<LevelError>> {
    (0..=tree.steps())
        .map(|n| match level_error(tree, sweep, exact, n) {
            Err(TsaError::DegenerateNorm { .. }) => {
                let (num, _) = level_sums(tree, sweep, exact, n)?;
                Ok(LevelError {
                    level: n,
                    e2: num.sqrt(),
                    absolute: true,
                })
            }
            other => other,
        })
        .collect()
}

/// `sqrt(Δt Σ_n E2(t_n)²)`.
pub fn err_22(levels: &[LevelError], dt: f64) -> f64 {
    (dt * levels.iter().map(|l| l.e2 * l.e2).sum::<f64>()).sqrt()
}

/// `max_n E2(t_n)`.
pub fn err_inf2(levels: &[LevelError]) -> f64 {
    levels.iter().map(|l| l.e2).fold(0.0, f64::max)
}

/// Observed order between a step `Δt` and `Δt / 2`: `log2(coarse / fine)`.
pub fn estimate_order(err_coarse: f64, err_fine: f64) -> Result<f64> {
    if !(err_coarse > 0.0 && err_fine > 0.0) {
        return Err(TsaError::invalid(format!(
            "orders need positive errors, got {err_coarse} and {err_fine}"
        )));
    }
    Ok((err_coarse / err_fine).log2())
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub dt: f64,
    pub nodes: u64,
    pub cpu_s: f64,
    pub err22: f64,
    pub errinf2: f64,
    pub order22: Option<f64>,
    pub orderinf2: Option<f64>,
}

/// Per-row details that only go into the JSON form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowDetails {
    pub eps: f64,
    pub merge_count: u64,
    pub root_value: f64,
    /// Levels where the absolute error replaced the relative one.
    pub absolute_levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub benchmark: String,
    pub x0: Vec<f64>,
    pub controls: usize,
    pub pruning: PruningPolicy,
    pub rows: Vec<StudyRow>,
    pub details: Vec<RowDetails>,
}

impl ConvergenceReport {
    /// Writes `dt,nodes,cpu_s,err22,errinf2,order22,orderinf2`; missing orders are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        if self.rows.is_empty() {
            w.write_record([
                "dt",
                "nodes",
                "cpu_s",
                "err22",
                "errinf2",
                "order22",
                "orderinf2",
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Average observed order over the whole study, `log2(err_first / err_last) / (rows - 1)`.
    pub fn overall_order(&self, select: impl Fn(&StudyRow) -> f64) -> Option<f64> {
        let first = self.rows.first()?;
        let last = self.rows.last()?;
        if self.rows.len() < 2 {
            return None;
        }
        estimate_order(select(first), select(last))
            .ok()
            .map(|o| o / (self.rows.len() - 1) as f64)
    }
}

/// Parses rows written by [`ConvergenceReport::write_csv`].
pub fn read_csv_rows<R: Read>(input: R) -> Result<Vec<StudyRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(TsaError::from))
        .collect()
}

/// A study that stopped early; `report` holds the rows completed so far.
#[derive(Debug, thiserror::Error)]
#[error("study stopped after {} rows: {source}", report.rows.len())]
pub struct StudyFailure {
    pub report: Box<ConvergenceReport>,
    #[source]
    pub source: TsaError,
}

#[derive(Debug, Clone)]
pub struct StudyConfig {
    pub x0: Vec<f64>,
    pub dts: Vec<f64>,
    pub pruning: PruningPolicy,
    /// Defaults to the benchmark's own control set.
    pub controls: Option<DiscreteControlSet>,
    pub build: BuildOptions,
}

impl StudyConfig {
    pub fn new(x0: Vec<f64>, dts: Vec<f64>, pruning: PruningPolicy) -> Self {
        Self {
            x0,
            dts,
            pruning,
            controls: None,
            build: BuildOptions::default(),
        }
    }
}

fn check_halving(dts: &[f64]) -> Result<()> {
    if dts.is_empty() {
        return Err(TsaError::invalid("empty dt list"));
    }
    for w in dts.windows(2) {
        if ((w[0] / w[1]) - 2.0).abs() > 1e-12 {
            return Err(TsaError::invalid(format!(
                "dt list must halve at each step, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Builds, sweeps and measures one tree per `Δt`; orders compare consecutive rows.
pub fn run_study(
    benchmark: &BenchmarkProblem,
    config: &StudyConfig,
) -> Result<ConvergenceReport, StudyFailure> {
    let controls = config
        .controls
        .clone()
        .unwrap_or_else(|| benchmark.default_controls.clone());
    let mut report = ConvergenceReport {
        benchmark: benchmark.name().to_string(),
        x0: config.x0.clone(),
        controls: controls.len(),
        pruning: config.pruning,
        rows: Vec::new(),
        details: Vec::new(),
    };
    if let Err(source) = check_halving(&config.dts) {
        return Err(StudyFailure {
            report: Box::new(report),
            source,
        });
    }

    for &dt in &config.dts {
        let started = Instant::now();
        let outcome = (|| {
            let tree = build_tree_with(
                &benchmark.problem,
                &controls,
                &config.x0,
                dt,
                config.pruning,
                &config.build,
            )?;
            let sweep = backward_sweep(&tree, &benchmark.problem)?;
            let levels = level_errors(&tree, &sweep, benchmark.exact_fn())?;
            Ok::<_, TsaError>((tree, sweep, levels))
        })();
        let (tree, sweep, levels) = match outcome {
            Ok(v) => v,
            Err(source) => {
                return Err(StudyFailure {
                    report: Box::new(report),
                    source,
                })
            }
        };
        let cpu_s = started.elapsed().as_secs_f64();

        let err22 = err_22(&levels, dt);
        let errinf2 = err_inf2(&levels);
        let (order22, orderinf2) = match report.rows.last() {
            Some(prev) => (
                estimate_order(prev.err22, err22).ok(),
                estimate_order(prev.errinf2, errinf2).ok(),
            ),
            None => (None, None),
        };
        report.rows.push(StudyRow {
            dt,
            nodes: tree.total_nodes() as u64,
            cpu_s,
            err22,
            errinf2,
            order22,
            orderinf2,
        });
        report.details.push(RowDetails {
            eps: tree.tolerance(),
            merge_count: tree.merge_count() as u64,
            root_value: sweep.root_value(),
            absolute_levels: levels
                .iter()
                .filter(|l| l.absolute)
                .map(|l| l.level)
                .collect(),
        });
    }
    Ok(report)
}
