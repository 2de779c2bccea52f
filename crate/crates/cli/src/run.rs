use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use tsa_core::{
    backward_sweep, brute_force_value, build_tree_with, run_study, synthesize_trajectory,
    BenchmarkProblem, BuildOptions, ConvergenceReport, PruningPolicy, StudyConfig, Tree,
    ValueSweepResult,
};

use crate::config::{Command, Format, RunConfig};
use crate::error::CliError;

/// Relative agreement required by `verify`, with the absolute floor at `|V| < 1`.
pub const VERIFY_TOLERANCE: f64 = 1e-12;

pub fn run(config: &RunConfig) -> Result<(), CliError> {
    let benchmark = config.benchmark.build_on(config.interval)?;
    match config.command {
        Command::Solve => solve(config, &benchmark),
        Command::Convergence => convergence(config, &benchmark),
        Command::PruneStudy => prune_study(config, &benchmark),
        Command::Trajectory => trajectory(config, &benchmark),
        Command::Verify => verify(config, &benchmark),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path.display(), e))
}

/// Runs `emit` against `--out` if given, stdout otherwise.
fn with_output(
    out: Option<&Path>,
    emit: impl FnOnce(&mut dyn Write) -> Result<(), CliError>,
) -> Result<(), CliError> {
    match out {
        Some(path) => {
            let mut w = create(path)?;
            emit(&mut w)?;
            w.flush().map_err(|e| CliError::io(path.display(), e))
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            emit(&mut w)?;
            w.flush().map_err(|e| CliError::io("stdout", e))
        }
    }
}

fn solve_tree(
    config: &RunConfig,
    benchmark: &BenchmarkProblem,
) -> Result<(Tree, ValueSweepResult), CliError> {
    let controls = config.controls.resolve(benchmark)?;
    let options = BuildOptions {
        node_cap: config.node_cap,
    };
    let tree = build_tree_with(
        &benchmark.problem,
        &controls,
        &config.x0,
        config.dt(),
        config.pruning,
        &options,
    )?;
    let sweep = backward_sweep(&tree, &benchmark.problem)?;
    Ok((tree, sweep))
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Serialize)]
struct SolveSummary {
    benchmark: String,
    x0: String,
    dt: f64,
    controls: usize,
    pruning: String,
    eps: f64,
    nodes: u64,
    merges: u64,
    root_value: f64,
    exact_value: f64,
}

fn solve(config: &RunConfig, benchmark: &BenchmarkProblem) -> Result<(), CliError> {
    let (tree, sweep) = solve_tree(config, benchmark)?;
    let summary = SolveSummary {
        benchmark: benchmark.name().to_string(),
        x0: join(&config.x0),
        dt: config.dt(),
        controls: tree.controls().len(),
        pruning: config.pruning.to_string(),
        eps: tree.tolerance(),
        nodes: tree.total_nodes() as u64,
        merges: tree.merge_count() as u64,
        root_value: sweep.root_value(),
        exact_value: benchmark.exact_min_value(&config.x0, config.interval.0),
    };

    println!("benchmark   {}", summary.benchmark);
    println!("x0          {}", summary.x0);
    println!("dt          {}", summary.dt);
    println!("controls    {}", summary.controls);
    println!("pruning     {} (eps {})", summary.pruning, summary.eps);
    println!("nodes       {}", summary.nodes);
    println!("merges      {}", summary.merges);
    println!("root_value  {}", summary.root_value);
    println!("exact_value {}", summary.exact_value);

    if let Some(path) = &config.out {
        with_output(Some(path), |w| write_record(w, config.format, &summary))?;
    }
    if let Some(path) = &config.dump_tree {
        let mut w = create(path)?;
        tree.write_csv(&mut w)?;
        w.flush().map_err(|e| CliError::io(path.display(), e))?;
    }
    Ok(())
}

fn write_record<T: Serialize>(
    w: &mut dyn Write,
    format: Format,
    record: &T,
) -> Result<(), CliError> {
    match format {
        Format::Csv => {
            let mut csv = csv::Writer::from_writer(w);
            csv.serialize(record).map_err(tsa_core::TsaError::from)?;
            csv.flush().map_err(|e| CliError::io("output", e))?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, record).map_err(tsa_core::TsaError::from)?;
            writeln!(w).map_err(|e| CliError::io("output", e))?;
        }
    }
    Ok(())
}

fn write_report(
    w: &mut dyn Write,
    format: Format,
    report: &ConvergenceReport,
) -> Result<(), CliError> {
    match format {
        Format::Csv => report.write_csv(w)?,
        Format::Json => {
            report.write_json(&mut *w)?;
            writeln!(w).map_err(|e| CliError::io("output", e))?;
        }
    }
    Ok(())
}

fn study(
    config: &RunConfig,
    benchmark: &BenchmarkProblem,
    pruning: PruningPolicy,
) -> (ConvergenceReport, Option<CliError>) {
    let study = StudyConfig {
        x0: config.x0.clone(),
        dts: config.dts.clone(),
        pruning,
        controls: match config.controls.resolve(benchmark) {
            Ok(c) => Some(c),
            Err(e) => {
                let empty = ConvergenceReport {
                    benchmark: benchmark.name().to_string(),
                    x0: config.x0.clone(),
                    controls: 0,
                    pruning,
                    rows: Vec::new(),
                    details: Vec::new(),
                };
                return (empty, Some(e));
            }
        },
        build: BuildOptions {
            node_cap: config.node_cap,
        },
    };
    match run_study(benchmark, &study) {
        Ok(report) => (report, None),
        Err(failure) => (*failure.report, Some(failure.source.into())),
    }
}

fn print_table(report: &ConvergenceReport) {
    let order = |o: Option<f64>| o.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    println!(
        "{} x0=({}) pruning {}",
        report.benchmark,
        join(&report.x0),
        report.pruning
    );
    println!(
        "{:>10} {:>10} {:>9} {:>10} {:>10} {:>6} {:>6}",
        "dt", "nodes", "cpu_s", "err22", "errinf2", "ord22", "ordinf"
    );
    for r in &report.rows {
        println!(
            "{:>10} {:>10} {:>9.3} {:>10.3e} {:>10.3e} {:>6} {:>6}",
            r.dt,
            r.nodes,
            r.cpu_s,
            r.err22,
            r.errinf2,
            order(r.order22),
            order(r.orderinf2)
        );
    }
}

fn convergence(config: &RunConfig, benchmark: &BenchmarkProblem) -> Result<(), CliError> {
    let (report, failure) = study(config, benchmark, config.pruning);
    // a partial report is still written before the error surfaces
    with_output(config.out.as_deref(), |w| {
        write_report(w, config.format, &report)
    })?;
    if config.out.is_some() {
        print_table(&report);
    }
    failure.map_or(Ok(()), Err)
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

fn prune_study(config: &RunConfig, benchmark: &BenchmarkProblem) -> Result<(), CliError> {
    let mut reports = Vec::new();
    let mut failure = None;
    for &rule in &config.rules {
        let (report, err) = study(config, benchmark, rule);
        reports.push(report);
        if err.is_some() {
            failure = err;
            break;
        }
    }

    match &config.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))?;
            for (i, report) in reports.iter().enumerate() {
                let name = format!(
                    "{i:02}_{}.{}",
                    slug(&report.pruning.to_string()),
                    config.format.extension()
                );
                let path = dir.join(name);
                with_output(Some(&path), |w| write_report(w, config.format, report))?;
            }
            for report in &reports {
                print_table(report);
                if let Some(o) = report.overall_order(|r| r.err22) {
                    println!("overall order22 {o:.3}");
                }
                println!();
            }
        }
        None => with_output(None, |w| match config.format {
            Format::Csv => {
                let mut csv = csv::Writer::from_writer(w);
                csv.write_record([
                    "pruning",
                    "dt",
                    "nodes",
                    "cpu_s",
                    "err22",
                    "errinf2",
                    "order22",
                    "orderinf2",
                ])
                .map_err(tsa_core::TsaError::from)?;
                let opt = |o: Option<f64>| o.map(|v| v.to_string()).unwrap_or_default();
                for report in &reports {
                    for r in &report.rows {
                        csv.write_record([
                            report.pruning.to_string(),
                            r.dt.to_string(),
                            r.nodes.to_string(),
                            r.cpu_s.to_string(),
                            r.err22.to_string(),
                            r.errinf2.to_string(),
                            opt(r.order22),
                            opt(r.orderinf2),
                        ])
                        .map_err(tsa_core::TsaError::from)?;
                    }
                }
                csv.flush().map_err(|e| CliError::io("stdout", e))
            }
            Format::Json => {
                serde_json::to_writer_pretty(&mut *w, &reports)
                    .map_err(tsa_core::TsaError::from)?;
                writeln!(w).map_err(|e| CliError::io("stdout", e))
            }
        })?,
    }
    failure.map_or(Ok(()), Err)
}

#[derive(Serialize)]
struct TrajectoryRecord {
    benchmark: String,
    dt: f64,
    pruning: String,
    times: Vec<f64>,
    states: Vec<Vec<f64>>,
    controls: Vec<Vec<f64>>,
    values: Vec<f64>,
    accumulated_cost: f64,
}

fn trajectory(config: &RunConfig, benchmark: &BenchmarkProblem) -> Result<(), CliError> {
    let (tree, sweep) = solve_tree(config, benchmark)?;
    let traj = synthesize_trajectory(&tree, &sweep, &benchmark.problem)?;
    let times: Vec<f64> = (0..=tree.steps()).map(|n| tree.time(n)).collect();
    with_output(config.out.as_deref(), |w| match config.format {
        Format::Csv => {
            let d = tree.state_dim();
            let k = tree.controls().dim();
            let mut csv = csv::Writer::from_writer(w);
            let mut header = vec!["n".to_string(), "t".to_string()];
            header.extend((0..d).map(|i| format!("x{i}")));
            header.extend((0..k).map(|i| format!("u{i}")));
            header.push("value".to_string());
            csv.write_record(&header)
                .map_err(tsa_core::TsaError::from)?;
            for (n, state) in traj.states.iter().enumerate() {
                let mut record = vec![n.to_string(), times[n].to_string()];
                record.extend(state.iter().map(|v| v.to_string()));
                match traj.controls.get(n) {
                    Some(u) => record.extend(u.iter().map(|v| v.to_string())),
                    None => record.extend((0..k).map(|_| String::new())),
                }
                record.push(traj.values[n].to_string());
                csv.write_record(&record)
                    .map_err(tsa_core::TsaError::from)?;
            }
            csv.flush().map_err(|e| CliError::io("output", e))
        }
        Format::Json => write_record(
            w,
            Format::Json,
            &TrajectoryRecord {
                benchmark: benchmark.name().to_string(),
                dt: tree.dt(),
                pruning: config.pruning.to_string(),
                times: times.clone(),
                states: traj.states.clone(),
                controls: traj.controls.clone(),
                values: traj.values.clone(),
                accumulated_cost: traj.accumulated_cost,
            },
        ),
    })?;
    if config.out.is_some() {
        println!("accumulated_cost {}", traj.accumulated_cost);
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyRecord {
    benchmark: String,
    dt: f64,
    controls: usize,
    sequences: u64,
    dp_value: f64,
    oracle_value: f64,
    abs_diff: f64,
    passed: bool,
}

fn verify(config: &RunConfig, benchmark: &BenchmarkProblem) -> Result<(), CliError> {
    let controls = config.controls.resolve(benchmark)?;
    let oracle = brute_force_value(&benchmark.problem, &controls, &config.x0, config.dt())?;
    let (_, sweep) = solve_tree(config, benchmark)?;
    let dp = sweep.root_value();
    let diff = (dp - oracle.min_cost).abs();
    let scale = dp.abs().max(oracle.min_cost.abs()).max(1.0);
    let record = VerifyRecord {
        benchmark: benchmark.name().to_string(),
        dt: config.dt(),
        controls: controls.len(),
        sequences: oracle.sequences_evaluated,
        dp_value: dp,
        oracle_value: oracle.min_cost,
        abs_diff: diff,
        passed: diff <= VERIFY_TOLERANCE * scale,
    };
    println!("sequences    {}", record.sequences);
    println!("dp_value     {}", record.dp_value);
    println!("oracle_value {}", record.oracle_value);
    println!("|dV|         {:e}", record.abs_diff);
    if let Some(path) = &config.out {
        with_output(Some(path), |w| write_record(w, config.format, &record))?;
    }
    if record.passed {
        println!("ok");
        Ok(())
    } else {
        Err(CliError::Mismatch(format!(
            "|dV| = {diff:e} exceeds {VERIFY_TOLERANCE:e} * {scale}"
        )))
    }
}
