//! Run configuration: command-line flags layered over an optional TOML file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::Deserialize;
use tsa_core::{
    discretize_controls, evenly_spaced_controls, BenchmarkKind, BenchmarkProblem,
    DiscreteControlSet, PruningPolicy, DEFAULT_NODE_CAP,
};

use crate::error::CliError;

pub const DEFAULT_X0: [f64; 2] = [1.0, 1.0];
pub const DEFAULT_DTS: [f64; 3] = [0.2, 0.1, 0.05];
pub const DEFAULT_RULES: [&str; 4] = ["dt", "dt^3/2", "dt^7/4", "dt^2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Convergence,
    PruneStudy,
    Trajectory,
    Verify,
}

impl Command {
    fn takes_dt_list(self) -> bool {
        matches!(self, Command::Convergence | Command::PruneStudy)
    }
}

/// Comma-separated floats, e.g. `1,-0.5`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| parse_finite(v.trim()))
            .collect::<Result<_, _>>()
            .map(FloatList)
    }
}

fn parse_finite(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

/// `lo:hi:step` for a scalar control grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
    pub step: f64,
}

impl FromStr for Bounds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        let [lower, upper, step] = parts[..] else {
            return Err(format!("expected lo:hi:step, got '{s}'"));
        };
        Ok(Bounds {
            lower: parse_finite(lower.trim())?,
            upper: parse_finite(upper.trim())?,
            step: parse_finite(step.trim())?,
        })
    }
}

fn parse_pruning(s: &str) -> Result<PruningPolicy, String> {
    s.parse::<PruningPolicy>().map_err(|e| e.to_string())
}

/// Comma-separated pruning rules, e.g. `dt,dt^3/2,off`.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleList(pub Vec<PruningPolicy>);

impl FromStr for RuleList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|r| parse_pruning(r.trim()))
            .collect::<Result<_, _>>()
            .map(RuleList)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlSpec {
    Default,
    Count(usize),
    List(Vec<f64>),
    Bounds(Bounds),
}

impl ControlSpec {
    pub fn resolve(&self, benchmark: &BenchmarkProblem) -> Result<DiscreteControlSet, CliError> {
        let set = match self {
            ControlSpec::Default => return Ok(benchmark.default_controls.clone()),
            ControlSpec::Count(m) => evenly_spaced_controls(-1.0, 1.0, *m)?,
            ControlSpec::List(values) => DiscreteControlSet::from_scalars(values)?,
            ControlSpec::Bounds(b) => discretize_controls(&[b.lower], &[b.upper], b.step)?,
        };
        Ok(set)
    }
}

/// Flags shared by every subcommand. Each overrides the same key in `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat TOML file with the same keys as the flags (underscores for dashes).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// test1 or test2.
    #[arg(long, value_parser = |s: &str| s.parse::<BenchmarkKind>().map_err(|e| e.to_string()))]
    pub benchmark: Option<BenchmarkKind>,

    /// Initial state, comma separated [default: 1,1].
    #[arg(long, allow_hyphen_values = true, value_name = "X1,X2")]
    pub x0: Option<FloatList>,

    /// Initial time [default: 0].
    #[arg(long, allow_hyphen_values = true)]
    pub t0: Option<f64>,

    /// Final time T [default: 1].
    #[arg(long = "t-final", allow_hyphen_values = true)]
    pub t_final: Option<f64>,

    /// Number of controls, evenly spaced on [-1, 1].
    #[arg(long, value_name = "M", group = "control_spec")]
    pub controls: Option<usize>,

    /// Explicit scalar controls, comma separated.
    #[arg(
        long,
        allow_hyphen_values = true,
        value_name = "U1,U2,..",
        group = "control_spec"
    )]
    pub control_list: Option<FloatList>,

    /// Control grid lo:hi:step.
    #[arg(
        long,
        allow_hyphen_values = true,
        value_name = "LO:HI:STEP",
        group = "control_spec"
    )]
    pub control_bounds: Option<Bounds>,

    /// off, eps=VALUE or eps=C*dt^p [default: off].
    #[arg(long, value_parser = parse_pruning)]
    pub prune: Option<PruningPolicy>,

    /// Abort tree construction beyond this many nodes.
    #[arg(long)]
    pub node_cap: Option<usize>,

    /// Output file (a directory for prune-study). Defaults to stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum)]
    pub format: Option<Format>,

    /// Worker threads; 0 uses all cores. Results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Command-specific flags.
#[derive(Debug, Clone, Default)]
pub struct CommandArgs {
    pub dt: Option<f64>,
    pub dts: Option<FloatList>,
    pub rules: Option<RuleList>,
    pub dump_tree: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    benchmark: Option<String>,
    x0: Option<Vec<f64>>,
    t0: Option<f64>,
    t_final: Option<f64>,
    dt: Option<f64>,
    dts: Option<Vec<f64>>,
    controls: Option<usize>,
    control_list: Option<Vec<f64>>,
    control_bounds: Option<String>,
    prune: Option<String>,
    rules: Option<Vec<String>>,
    node_cap: Option<usize>,
    out: Option<PathBuf>,
    dump_tree: Option<PathBuf>,
    format: Option<Format>,
    threads: Option<usize>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))
    }

    fn control_spec(&self) -> Result<Option<ControlSpec>, CliError> {
        let given = [
            self.controls.is_some(),
            self.control_list.is_some(),
            self.control_bounds.is_some(),
        ];
        if given.iter().filter(|&&g| g).count() > 1 {
            return Err(CliError::usage(
                "config sets more than one of controls, control_list, control_bounds",
            ));
        }
        if let Some(m) = self.controls {
            return Ok(Some(ControlSpec::Count(m)));
        }
        if let Some(list) = &self.control_list {
            return Ok(Some(ControlSpec::List(list.clone())));
        }
        if let Some(b) = &self.control_bounds {
            return b
                .parse()
                .map(|b| Some(ControlSpec::Bounds(b)))
                .map_err(CliError::Usage);
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub benchmark: BenchmarkKind,
    pub x0: Vec<f64>,
    pub interval: (f64, f64),
    /// Single step for solve/trajectory/verify, halving list otherwise.
    pub dts: Vec<f64>,
    pub controls: ControlSpec,
    pub pruning: PruningPolicy,
    pub rules: Vec<PruningPolicy>,
    pub node_cap: usize,
    pub out: Option<PathBuf>,
    pub dump_tree: Option<PathBuf>,
    pub format: Format,
    pub threads: usize,
}

impl RunConfig {
    pub fn dt(&self) -> f64 {
        self.dts[0]
    }

    pub fn resolve(
        command: Command,
        common: CommonArgs,
        extra: CommandArgs,
    ) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };

        if command.takes_dt_list() && file.dt.is_some() {
            return Err(CliError::usage("dt is not used by this command; use dts"));
        }
        if !command.takes_dt_list() && file.dts.is_some() {
            return Err(CliError::usage(
                "dts is only used by convergence and prune-study",
            ));
        }
        if command != Command::PruneStudy && file.rules.is_some() {
            return Err(CliError::usage("rules is only used by prune-study"));
        }
        if command != Command::Solve && file.dump_tree.is_some() {
            return Err(CliError::usage("dump_tree is only used by solve"));
        }

        let benchmark = match (common.benchmark, &file.benchmark) {
            (Some(b), _) => b,
            (None, Some(name)) => name
                .parse()
                .map_err(|e: tsa_core::TsaError| CliError::usage(e.to_string()))?,
            (None, None) => return Err(CliError::usage("no benchmark given (--benchmark)")),
        };
        let x0 = common
            .x0
            .map(|l| l.0)
            .or(file.x0.clone())
            .unwrap_or_else(|| DEFAULT_X0.to_vec());
        let interval = (
            common.t0.or(file.t0).unwrap_or(0.0),
            common.t_final.or(file.t_final).unwrap_or(1.0),
        );

        let dts = if command.takes_dt_list() {
            extra
                .dts
                .map(|l| l.0)
                .or(file.dts.clone())
                .unwrap_or_else(|| DEFAULT_DTS.to_vec())
        } else {
            vec![extra
                .dt
                .or(file.dt)
                .ok_or_else(|| CliError::usage("no time step given (--dt)"))?]
        };

        let flag_controls = if let Some(m) = common.controls {
            Some(ControlSpec::Count(m))
        } else if let Some(list) = common.control_list {
            Some(ControlSpec::List(list.0))
        } else {
            common.control_bounds.map(ControlSpec::Bounds)
        };
        let controls = match flag_controls {
            Some(spec) => spec,
            None => file.control_spec()?.unwrap_or(ControlSpec::Default),
        };

        let pruning = match (common.prune, &file.prune) {
            (Some(p), _) => p,
            (None, Some(s)) => parse_pruning(s).map_err(CliError::Usage)?,
            (None, None) => PruningPolicy::Off,
        };
        let rules = match (extra.rules, &file.rules) {
            (Some(r), _) => r.0,
            (None, Some(list)) => list
                .iter()
                .map(|s| parse_pruning(s))
                .collect::<Result<_, _>>()
                .map_err(CliError::Usage)?,
            (None, None) => DEFAULT_RULES
                .iter()
                .map(|s| parse_pruning(s).expect("built-in rule"))
                .collect(),
        };

        let config = RunConfig {
            command,
            benchmark,
            x0,
            interval,
            dts,
            controls,
            pruning,
            rules,
            node_cap: common
                .node_cap
                .or(file.node_cap)
                .unwrap_or(DEFAULT_NODE_CAP),
            out: common.out.or(file.out),
            dump_tree: extra.dump_tree.or(file.dump_tree),
            format: common.format.or(file.format).unwrap_or(Format::Csv),
            threads: common.threads.or(file.threads).unwrap_or(0),
        };
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), CliError> {
        let finite = self.x0.iter().chain(&self.dts).all(|v| v.is_finite())
            && self.interval.0.is_finite()
            && self.interval.1.is_finite();
        if !finite {
            return Err(CliError::usage("numeric settings must be finite"));
        }
        if self.x0.len() != 2 {
            return Err(CliError::usage(format!(
                "{} has a 2-dimensional state, x0 has {} entries",
                self.benchmark,
                self.x0.len()
            )));
        }
        if self.dts.iter().any(|&dt| dt <= 0.0) {
            return Err(CliError::usage("time steps must be positive"));
        }
        if self.command == Command::Verify && self.pruning != PruningPolicy::Off {
            return Err(CliError::usage(
                "verify compares against the unpruned tree; drop --prune",
            ));
        }
        if self.node_cap == 0 {
            return Err(CliError::usage("node cap must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn common(benchmark: BenchmarkKind) -> CommonArgs {
        CommonArgs {
            benchmark: Some(benchmark),
            ..Default::default()
        }
    }

    #[test]
    fn float_list_parses_negatives() {
        assert_eq!("-1, 0.5".parse::<FloatList>().unwrap().0, vec![-1.0, 0.5]);
        assert!("1,nan".parse::<FloatList>().is_err());
        assert!("1,,2".parse::<FloatList>().is_err());
    }

    #[test]
    fn bounds_need_three_parts() {
        let b: Bounds = "-1:1:0.5".parse().unwrap();
        assert_eq!((b.lower, b.upper, b.step), (-1.0, 1.0, 0.5));
        assert!("-1:1".parse::<Bounds>().is_err());
    }

    #[test]
    fn defaults_fill_in() {
        let c = RunConfig::resolve(
            Command::Convergence,
            common(BenchmarkKind::Test2),
            CommandArgs::default(),
        )
        .unwrap();
        assert_eq!(c.x0, DEFAULT_X0);
        assert_eq!(c.dts, DEFAULT_DTS);
        assert_eq!(c.pruning, PruningPolicy::Off);
        assert_eq!(c.controls, ControlSpec::Default);
        assert_eq!(c.rules.len(), 4);
    }

    #[test]
    fn solve_requires_dt() {
        let err = RunConfig::resolve(
            Command::Solve,
            common(BenchmarkKind::Test1),
            CommandArgs::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CliError::Usage(_)));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "benchmark = \"test2\"\nx0 = [0.5, -0.5]\ndt = 0.25\nprune = \"eps=dt^2\"\ncontrol_list = [-1.0, 0.0, 1.0]\n",
        )
        .unwrap();
        let args = CommonArgs {
            config: Some(path),
            benchmark: Some(BenchmarkKind::Test1),
            controls: Some(4),
            ..Default::default()
        };
        let extra = CommandArgs {
            dt: Some(0.5),
            ..Default::default()
        };
        let c = RunConfig::resolve(Command::Solve, args, extra).unwrap();
        assert_eq!(c.benchmark, BenchmarkKind::Test1);
        assert_eq!(c.x0, vec![0.5, -0.5]);
        assert_eq!(c.dt(), 0.5);
        assert_eq!(c.pruning, PruningPolicy::power(1.0, 2.0).unwrap());
        assert_eq!(c.controls, ControlSpec::Count(4));
    }

    #[test]
    fn file_rejects_inconsistent_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "benchmark = \"test1\"\ndts = [0.2, 0.1]\n").unwrap();
        let args = CommonArgs {
            config: Some(path.clone()),
            ..Default::default()
        };
        let extra = CommandArgs {
            dt: Some(0.5),
            ..Default::default()
        };
        assert!(RunConfig::resolve(Command::Solve, args, extra).is_err());

        std::fs::write(
            &path,
            "benchmark = \"test1\"\ncontrols = 3\ncontrol_list = [1.0]\n",
        )
        .unwrap();
        let args = CommonArgs {
            config: Some(path),
            ..Default::default()
        };
        assert!(RunConfig::resolve(Command::Convergence, args, CommandArgs::default()).is_err());
    }

    #[test]
    fn verify_refuses_pruning() {
        let args = CommonArgs {
            prune: Some(PruningPolicy::fixed(0.1).unwrap()),
            ..common(BenchmarkKind::Test2)
        };
        let extra = CommandArgs {
            dt: Some(0.25),
            ..Default::default()
        };
        assert!(RunConfig::resolve(Command::Verify, args, extra).is_err());
    }
}
