use std::path::Path;
use std::process::{Command, Output};

use tsa_core::{
    make_test1, make_test2, read_csv_rows, run_study, ConvergenceReport, PruningPolicy,
    StudyConfig, StudyRow,
};

fn tsa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsa"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn field(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(key))
        .unwrap_or_else(|| panic!("no '{key}' line in:\n{text}"))
        .trim()
        .to_string()
}

fn without_cpu(rows: &[StudyRow]) -> Vec<StudyRow> {
    rows.iter()
        .map(|r| StudyRow {
            cpu_s: 0.0,
            ..r.clone()
        })
        .collect()
}

fn rows_from(path: &Path) -> Vec<StudyRow> {
    read_csv_rows(std::fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn convergence_node_column_for_unpruned_test1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1.csv");
    let run = tsa(&[
        "convergence",
        "--benchmark",
        "test1",
        "--x0",
        "1,1",
        "--dts",
        "0.2,0.1,0.05",
        "--prune",
        "off",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{run:?}");
    let nodes: Vec<u64> = rows_from(&out).iter().map(|r| r.nodes).collect();
    assert_eq!(nodes, vec![63, 2047, 2_097_151]);
}

#[test]
fn verify_passes_on_test2() {
    let run = tsa(&[
        "verify",
        "--benchmark",
        "test2",
        "--x0",
        "1,1",
        "--dt",
        "0.125",
        "--controls",
        "2",
    ]);
    assert_eq!(run.status.code(), Some(0), "{run:?}");
    let text = stdout(&run);
    assert_eq!(field(&text, "sequences"), "256");
    let diff: f64 = field(&text, "|dV|").parse().unwrap();
    assert!(diff <= 1e-12);
}

#[test]
fn solve_prints_root_value() {
    let run = tsa(&[
        "solve",
        "--benchmark",
        "test1",
        "--x0",
        "1,0",
        "--dt",
        "0.5",
        "--prune",
        "off",
    ]);
    assert!(run.status.success());
    let text = stdout(&run);
    let root: f64 = field(&text, "root_value").parse().unwrap();
    assert!((root + 1.625).abs() < 1e-12);
    assert_eq!(field(&text, "nodes"), "7");
    assert_eq!(field(&text, "merges"), "0");
}

#[test]
fn csv_report_round_trips_against_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t2.csv");
    let run = tsa(&[
        "convergence",
        "--benchmark",
        "test2",
        "--dts",
        "0.2,0.1,0.05",
        "--prune",
        "eps=dt^2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let from_cli = rows_from(&out);

    let config = StudyConfig::new(
        vec![1.0, 1.0],
        vec![0.2, 0.1, 0.05],
        PruningPolicy::power(1.0, 2.0).unwrap(),
    );
    let report = run_study(&make_test2(), &config).unwrap();
    assert_eq!(without_cpu(&from_cli), without_cpu(&report.rows));
}

#[test]
fn json_report_round_trips_against_library() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1.json");
    let run = tsa(&[
        "convergence",
        "--benchmark",
        "test1",
        "--x0",
        "0,0",
        "--dts",
        "0.2,0.1",
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let parsed: ConvergenceReport =
        serde_json::from_reader(std::fs::File::open(&out).unwrap()).unwrap();

    let config = StudyConfig::new(vec![0.0, 0.0], vec![0.2, 0.1], PruningPolicy::Off);
    let report = run_study(&make_test1(), &config).unwrap();
    assert_eq!(without_cpu(&parsed.rows), without_cpu(&report.rows));
    assert_eq!(parsed.details, report.details);
    assert_eq!(parsed.benchmark, "test1");
}

#[test]
fn outputs_are_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut dumps = Vec::new();
    let mut trajectories = Vec::new();
    let mut reports = Vec::new();
    for (i, threads) in ["1", "4", "4"].iter().enumerate() {
        let dump = dir.path().join(format!("tree{i}.csv"));
        let traj = dir.path().join(format!("traj{i}.csv"));
        let report = dir.path().join(format!("report{i}.csv"));
        let common = [
            "--benchmark",
            "test2",
            "--x0",
            "0.3,-0.7",
            "--threads",
            threads,
        ];
        let pruned = [
            common.as_slice(),
            &["--prune", "eps=0.5*dt^2", "--controls", "3"],
        ]
        .concat();

        let run = tsa(&[
            &[
                "solve",
                "--dt",
                "0.05",
                "--dump-tree",
                dump.to_str().unwrap(),
            ],
            pruned.as_slice(),
        ]
        .concat());
        assert!(run.status.success());
        let run = tsa(&[
            &[
                "trajectory",
                "--dt",
                "0.05",
                "--out",
                traj.to_str().unwrap(),
            ],
            pruned.as_slice(),
        ]
        .concat());
        assert!(run.status.success());
        let run = tsa(&[
            &[
                "convergence",
                "--dts",
                "0.1,0.05",
                "--out",
                report.to_str().unwrap(),
            ],
            pruned.as_slice(),
        ]
        .concat());
        assert!(run.status.success());

        dumps.push(std::fs::read(&dump).unwrap());
        trajectories.push(std::fs::read(&traj).unwrap());
        reports.push(without_cpu(&rows_from(&report)));
    }
    assert!(dumps.windows(2).all(|w| w[0] == w[1]));
    assert!(trajectories.windows(2).all(|w| w[0] == w[1]));
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn tree_dump_has_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    let dump = dir.path().join("tree.csv");
    let run = tsa(&[
        "solve",
        "--benchmark",
        "test1",
        "--dt",
        "0.25",
        "--dump-tree",
        dump.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let mut reader = csv::Reader::from_path(&dump).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["level", "index", "s0", "s1", "c0", "c1"]);
    assert_eq!(reader.records().count(), 31);
}

#[test]
fn trajectory_columns() {
    let run = tsa(&["trajectory", "--benchmark", "test2", "--dt", "0.25"]);
    assert!(run.status.success());
    let text = stdout(&run);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,t,x0,x1,u0,value"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5);
    // no control is applied at the final time
    assert!(rows[4].split(',').nth(4).unwrap().is_empty());
}

#[test]
fn prune_study_writes_one_report_per_rule() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("study");
    let run = tsa(&[
        "prune-study",
        "--benchmark",
        "test1",
        "--dts",
        "0.2,0.1",
        "--rules",
        "dt,dt^3/2,off",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success(), "{run:?}");
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["00_eps_1_dt_1.csv", "01_eps_1_dt_1_5.csv", "02_off.csv"]
    );
    let unpruned = rows_from(&out.join("02_off.csv"));
    assert_eq!(
        unpruned.iter().map(|r| r.nodes).collect::<Vec<_>>(),
        [63, 2047]
    );
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        "benchmark = \"test2\"\nx0 = [1.0, 0.0]\ndt = 0.5\nprune = \"off\"\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();

    let from_file = tsa(&["solve", "--config", cfg]);
    assert!(from_file.status.success());
    assert_eq!(field(&stdout(&from_file), "benchmark"), "test2");

    let overridden = tsa(&["solve", "--config", cfg, "--benchmark", "test1"]);
    assert!(overridden.status.success());
    let text = stdout(&overridden);
    assert_eq!(field(&text, "benchmark"), "test1");
    let root: f64 = field(&text, "root_value").parse().unwrap();
    assert!((root + 1.625).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "benchmark = \"test1\"\nfrobnicate = 3\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["solve", "--config", bad.to_str().unwrap(), "--dt", "0.5"],
        vec!["solve", "--config", "/nonexistent/run.toml", "--dt", "0.5"],
        vec!["solve", "--benchmark", "test1"],
        vec!["solve", "--benchmark", "test1", "--dt", "0.3"],
        vec![
            "solve",
            "--benchmark",
            "test1",
            "--dt",
            "0.5",
            "--x0",
            "1,2,3",
        ],
        vec!["convergence", "--benchmark", "test1", "--dts", "0.2,0.15"],
        vec![
            "verify",
            "--benchmark",
            "test1",
            "--dt",
            "0.5",
            "--prune",
            "eps=0.1",
        ],
        vec![
            "solve",
            "--benchmark",
            "test1",
            "--dt",
            "0.5",
            "--prune",
            "eps=banana",
        ],
        vec![
            "solve",
            "--benchmark",
            "test1",
            "--dt",
            "0.5",
            "--controls",
            "2",
            "--control-list",
            "1",
        ],
        vec![
            "solve",
            "--benchmark",
            "test1",
            "--dt",
            "0.5",
            "--control-list",
            "1,1",
        ],
    ];
    for args in cases {
        let run = tsa(&args);
        assert_eq!(run.status.code(), Some(2), "{args:?}: {run:?}");
    }
}

#[test]
fn capacity_errors_exit_with_3_and_keep_partial_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("partial.csv");
    let run = tsa(&[
        "convergence",
        "--benchmark",
        "test1",
        "--dts",
        "0.2,0.1,0.05",
        "--node-cap",
        "5000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(3));
    let rows = rows_from(&out);
    assert_eq!(rows.iter().map(|r| r.nodes).collect::<Vec<_>>(), [63, 2047]);

    let run = tsa(&["verify", "--benchmark", "test2", "--dt", "0.01"]);
    assert_eq!(run.status.code(), Some(3));
}
