//! Finite-horizon control problems and the two analytic benchmarks.
//!
//! The solver always minimizes
//!
//! ```text
//! J(x, t; u) = ∫_t^T L(y, u, s) e^{-λ(s-t)} ds + g(y(T)) e^{-λ(T-t)},   y' = f(y, u, s)
//! ```
//!
//! Problems whose natural statement is a maximization are stored negated.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TsaError};

/// `f(x, u, t)` written into the output slice.
pub type DynamicsFn = dyn Fn(&[f64], &[f64], f64, &mut [f64]) + Send + Sync;
/// `L(x, u, t)`.
pub type RunningCostFn = dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync;
/// `g(x)`.
pub type TerminalCostFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
/// Exact value function `v(x, t)` of a benchmark.
pub type ExactValueFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;

/// A deterministic finite-horizon optimal control problem.
///
/// Immutable once built; cloning shares the callables.
#[derive(Clone)]
pub struct ControlProblem {
    state_dim: usize,
    control_dim: usize,
    t0: f64,
    horizon: f64,
    discount: f64,
    dynamics: Arc<DynamicsFn>,
    running_cost: Arc<RunningCostFn>,
    terminal_cost: Arc<TerminalCostFn>,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("state_dim", &self.state_dim)
            .field("control_dim", &self.control_dim)
            .field("t0", &self.t0)
            .field("horizon", &self.horizon)
            .field("discount", &self.discount)
            .finish_non_exhaustive()
    }
}

impl ControlProblem {
    /// Builds a problem on `[t0, horizon]`.
    ///
    /// Fails if `state_dim` or `control_dim` is zero, `discount` is negative
    /// or non-finite, or `t0 >= horizon`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state_dim: usize,
        control_dim: usize,
        (t0, horizon): (f64, f64),
        discount: f64,
        dynamics: Arc<DynamicsFn>,
        running_cost: Arc<RunningCostFn>,
        terminal_cost: Arc<TerminalCostFn>,
    ) -> Result<Self> {
        if state_dim == 0 {
            return Err(TsaError::invalid("state dimension must be at least 1"));
        }
        if control_dim == 0 {
            return Err(TsaError::invalid("control dimension must be at least 1"));
        }
        if !(discount.is_finite() && discount >= 0.0) {
            return Err(TsaError::invalid(format!(
                "discount must be finite and >= 0, got {discount}"
            )));
        }
        if !(t0.is_finite() && horizon.is_finite() && horizon > t0) {
            return Err(TsaError::invalid(format!(
                "horizon must satisfy t0 < T, got ({t0}, {horizon})"
            )));
        }
        Ok(Self {
            state_dim,
            control_dim,
            t0,
            horizon,
            discount,
            dynamics,
            running_cost,
            terminal_cost,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Final time `T`.
    pub fn final_time(&self) -> f64 {
        self.horizon
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    #[inline]
    pub fn dynamics(&self, x: &[f64], u: &[f64], t: f64, out: &mut [f64]) {
        (self.dynamics)(x, u, t, out)
    }

    #[inline]
    pub fn running_cost(&self, x: &[f64], u: &[f64], t: f64) -> f64 {
        (self.running_cost)(x, u, t)
    }

    #[inline]
    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        (self.terminal_cost)(x)
    }

    /// Same problem with the terminal cost replaced.
    pub fn with_terminal_cost(&self, terminal_cost: Arc<TerminalCostFn>) -> Self {
        Self {
            terminal_cost,
            ..self.clone()
        }
    }

    /// Same problem with a different discount rate.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.state_dim,
            self.control_dim,
            (self.t0, self.horizon),
            discount,
            self.dynamics.clone(),
            self.running_cost.clone(),
            self.terminal_cost.clone(),
        )
    }

    /// Number of Euler steps `N̄` for a step `dt`.
    ///
    /// The ratio `(T - t0) / dt` must lie within `1e-9` of a positive integer.
    pub fn steps_for(&self, dt: f64) -> Result<usize> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(TsaError::invalid(format!(
                "time step must be > 0, got {dt}"
            )));
        }
        let ratio = (self.horizon - self.t0) / dt;
        let steps = ratio.round();
        if steps < 1.0 || (ratio - steps).abs() > 1e-9 {
            return Err(TsaError::invalid(format!(
                "horizon length {} is not an integer multiple of dt = {dt}",
                self.horizon - self.t0
            )));
        }
        Ok(steps as usize)
    }
}

/// Finite, ordered set of control vectors `u_1, ..., u_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteControlSet {
    dim: usize,
    values: Vec<f64>,
}

impl DiscreteControlSet {
    /// Builds a set from explicit control vectors, kept in the given order.
    pub fn from_controls(controls: Vec<Vec<f64>>) -> Result<Self> {
        let dim = controls
            .first()
            .map(Vec::len)
            .ok_or_else(|| TsaError::invalid("control set must not be empty"))?;
        if dim == 0 {
            return Err(TsaError::invalid("control vectors must not be empty"));
        }
        if controls.iter().any(|c| c.len() != dim) {
            return Err(TsaError::invalid("control vectors have mixed dimensions"));
        }
        if controls.iter().flatten().any(|v| !v.is_finite()) {
            return Err(TsaError::invalid("control values must be finite"));
        }
        for (i, a) in controls.iter().enumerate() {
            if controls[..i].iter().any(|b| b == a) {
                return Err(TsaError::invalid(format!("duplicate control {a:?}")));
            }
        }
        Ok(Self {
            dim,
            values: controls.into_iter().flatten().collect(),
        })
    }

    /// Scalar controls.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_controls(values.iter().map(|&v| vec![v]).collect())
    }

    /// Number of controls `M`.
    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Dimension `m` of each control vector.
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    /// Returns true if every control of `self` is also in `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.dim == other.dim && self.iter().all(|u| other.iter().any(|v| v == u))
    }
}

/// Grid points `lower, lower + step, ...` up to `upper`, always ending at `upper`.
fn axis_points(lower: f64, upper: f64, step: f64) -> Vec<f64> {
    let span = upper - lower;
    let last = (span / step + 1e-9).floor() as usize;
    let mut points: Vec<f64> = (0..=last).map(|k| lower + k as f64 * step).collect();
    let tol = 1e-9 * step;
    match points.last_mut() {
        Some(p) if (upper - *p).abs() <= tol => *p = upper,
        _ => points.push(upper),
    }
    points
}

/// Tensor grid over the box `[lower, upper]` with spacing `step` in every direction.
///
/// Each axis includes its upper endpoint even when `step` does not divide the
/// range. Controls are ordered lexicographically (first coordinate slowest).
pub fn discretize_controls(lower: &[f64], upper: &[f64], step: f64) -> Result<DiscreteControlSet> {
    if !(step.is_finite() && step > 0.0) {
        return Err(TsaError::invalid(format!(
            "control step must be > 0, got {step}"
        )));
    }
    if lower.is_empty() || lower.len() != upper.len() {
        return Err(TsaError::invalid(
            "control bounds must be non-empty and of equal length",
        ));
    }
    if lower.iter().chain(upper).any(|v| !v.is_finite()) {
        return Err(TsaError::invalid("control bounds must be finite"));
    }
    if lower.iter().zip(upper).any(|(l, u)| l > u) {
        return Err(TsaError::invalid("empty control range: lower > upper"));
    }

    let axes: Vec<Vec<f64>> = lower
        .iter()
        .zip(upper)
        .map(|(&l, &u)| axis_points(l, u, step))
        .collect();

    let mut controls: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in &axes {
        controls = controls
            .into_iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&v| {
                    let mut c = prefix.clone();
                    c.push(v);
                    c
                })
            })
            .collect();
    }
    DiscreteControlSet::from_controls(controls)
}

/// `count` scalar controls evenly spaced on `[lower, upper]`; a single control sits at the midpoint.
pub fn evenly_spaced_controls(lower: f64, upper: f64, count: usize) -> Result<DiscreteControlSet> {
    match count {
        0 => Err(TsaError::invalid("need at least one control")),
        1 => DiscreteControlSet::from_scalars(&[0.5 * (lower + upper)]),
        _ => {
            let set =
                discretize_controls(&[lower], &[upper], (upper - lower) / (count - 1) as f64)?;
            debug_assert_eq!(set.len(), count);
            Ok(set)
        }
    }
}

/// Bounds and Lipschitz constants of `f`, `L`, `g`. `None` means unknown.
///
/// Only used to check value bounds in tests and reports; the solver ignores them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RegularityConstants {
    pub bound_f: Option<f64>,
    pub bound_running: Option<f64>,
    pub bound_terminal: Option<f64>,
    pub lipschitz_f: Option<f64>,
    pub lipschitz_running: Option<f64>,
    pub lipschitz_terminal: Option<f64>,
}

impl RegularityConstants {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.bound_f,
            self.bound_running,
            self.bound_terminal,
            self.lipschitz_f,
            self.lipschitz_running,
            self.lipschitz_terminal,
        ];
        if all.iter().flatten().any(|v| v.is_nan() || *v < 0.0) {
            return Err(TsaError::invalid("regularity constants must be >= 0"));
        }
        Ok(())
    }

    /// Upper bound on `|V(·, t)|` implied by the cost bounds, if they are known.
    ///
    /// With zero running cost this is `M_g`; otherwise `(T - t) M_L + M_g`.
    pub fn value_bound(&self, time_to_go: f64) -> Option<f64> {
        let g = self.bound_terminal?;
        let l = self.bound_running.unwrap_or(0.0);
        Some(time_to_go * l + g)
    }
}

/// Named benchmarks with a known exact value function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Test1,
    Test2,
}

impl BenchmarkKind {
    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Test1 => "test1",
            BenchmarkKind::Test2 => "test2",
        }
    }

    pub fn build(self) -> BenchmarkProblem {
        match self {
            BenchmarkKind::Test1 => make_test1(),
            BenchmarkKind::Test2 => make_test2(),
        }
    }

    /// The benchmark posed on `[t0, T]` instead of `[0, 1]`.
    pub fn build_on(self, interval: (f64, f64)) -> Result<BenchmarkProblem> {
        match self {
            BenchmarkKind::Test1 => make_test1_on(interval),
            BenchmarkKind::Test2 => make_test2_on(interval),
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = TsaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "test1" => Ok(BenchmarkKind::Test1),
            "test2" => Ok(BenchmarkKind::Test2),
            other => Err(TsaError::invalid(format!("unknown benchmark '{other}'"))),
        }
    }
}

/// A control problem paired with its exact (minimization-convention) value function.
#[derive(Clone)]
pub struct BenchmarkProblem {
    pub kind: BenchmarkKind,
    pub problem: ControlProblem,
    pub default_controls: DiscreteControlSet,
    exact: Arc<ExactValueFn>,
}

impl fmt::Debug for BenchmarkProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchmarkProblem")
            .field("kind", &self.kind)
            .field("problem", &self.problem)
            .field("default_controls", &self.default_controls)
            .finish_non_exhaustive()
    }
}

impl BenchmarkProblem {
    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    #[inline]
    pub fn exact_min_value(&self, x: &[f64], t: f64) -> f64 {
        (self.exact)(x, t)
    }

    pub fn exact_fn(&self) -> &ExactValueFn {
        &*self.exact
    }
}

fn bang_bang() -> DiscreteControlSet {
    DiscreteControlSet::from_scalars(&[-1.0, 1.0]).expect("static control set")
}

/// `f = (u, x1²)`, `L = 0`, `g = -x2`, `λ = 0` on `[0, 1]` (see [`make_test1_on`]).
///
/// Exact value: `v = -x2 - x1²(T-t) - (T-t)³/3 - |x1|(T-t)²`, which has a kink
/// along `x1 = 0`.
pub fn make_test1() -> BenchmarkProblem {
    make_test1_on((0.0, 1.0)).expect("unit interval is valid")
}

pub fn make_test1_on(interval: (f64, f64)) -> Result<BenchmarkProblem> {
    let final_time = interval.1;
    let problem = ControlProblem::new(
        2,
        1,
        interval,
        0.0,
        Arc::new(|x: &[f64], u: &[f64], _t: f64, out: &mut [f64]| {
            out[0] = u[0];
            out[1] = x[0] * x[0];
        }),
        Arc::new(|_x: &[f64], _u: &[f64], _t: f64| 0.0),
        Arc::new(|x: &[f64]| -x[1]),
    )?;
    Ok(BenchmarkProblem {
        kind: BenchmarkKind::Test1,
        problem,
        default_controls: bang_bang(),
        exact: Arc::new(move |x: &[f64], t: f64| {
            let s = final_time - t;
            -x[1] - x[0] * x[0] * s - s * s * s / 3.0 - x[0].abs() * s * s
        }),
    })
}

/// Linear pendulum `f = (x2, -x1 + u)`, `L = 0`, `g = -x1`, `λ = 0` on `[0, 1]`.
///
/// The natural problem maximizes `x1(T)`; the stored exact value is the
/// negated maximum `-(x1 cos s + x2 sin s + |cos s - 1|)` with `s = T - t`.
pub fn make_test2() -> BenchmarkProblem {
    make_test2_on((0.0, 1.0)).expect("unit interval is valid")
}

pub fn make_test2_on(interval: (f64, f64)) -> Result<BenchmarkProblem> {
    let final_time = interval.1;
    let problem = ControlProblem::new(
        2,
        1,
        interval,
        0.0,
        Arc::new(|x: &[f64], u: &[f64], _t: f64, out: &mut [f64]| {
            out[0] = x[1];
            out[1] = -x[0] + u[0];
        }),
        Arc::new(|_x: &[f64], _u: &[f64], _t: f64| 0.0),
        Arc::new(|x: &[f64]| -x[0]),
    )?;
    Ok(BenchmarkProblem {
        kind: BenchmarkKind::Test2,
        problem,
        default_controls: bang_bang(),
        exact: Arc::new(move |x: &[f64], t: f64| {
            let s = final_time - t;
            let (sin, cos) = s.sin_cos();
            -(x[0] * cos + x[1] * sin + (cos - 1.0).abs())
        }),
    })
}
