//! Tree-structure dynamic programming for finite-horizon optimal control.
//!
//! The value function is computed on the tree of states reachable by explicit
//! Euler steps under a finite control set, instead of on a fixed space grid.
//! A same-level merge tolerance bounds the tree size.
//!
//! ```
//! use tsa_core::{backward_sweep, build_tree, make_test1, PruningPolicy};
//!
//! let bench = make_test1();
//! let tree = build_tree(&bench.problem, &bench.default_controls, &[1.0, 0.0], 0.5, PruningPolicy::Off).unwrap();
//! let sweep = backward_sweep(&tree, &bench.problem).unwrap();
//! assert!((sweep.root_value() + 1.625).abs() < 1e-12);
//! ```

pub mod dp;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod problem;
pub mod tree;

pub use dp::{backward_sweep, synthesize_trajectory, SynthesizedTrajectory, ValueSweepResult};
pub use error::{NodeLocation, Result, TsaError};
pub use metrics::{
    err_22, err_inf2, estimate_order, level_error, level_errors, read_csv_rows, relative_l2_error,
    run_study, ConvergenceReport, LevelError, RowDetails, StudyConfig, StudyFailure, StudyRow,
};
pub use oracle::{brute_force_value, sequence_cost, EnumerationResult};
pub use problem::{
    discretize_controls, evenly_spaced_controls, make_test1, make_test1_on, make_test2,
    make_test2_on, BenchmarkKind, BenchmarkProblem, ControlProblem, DiscreteControlSet,
    RegularityConstants,
};
pub use tree::{
    build_tree, build_tree_with, euler_step, prune_lookup, unpruned_cardinality, BuildOptions,
    PruningPolicy, SpatialIndex, Tree, DEFAULT_NODE_CAP,
};
