//! Exhaustive enumeration of piecewise-constant control sequences.
//!
//! Ground truth for the unpruned tree: every one of the `M^N̄` sequences is
//! rolled out with explicit Euler and its discrete cost
//! `Δt Σ_k L(y_k, u_k, t_k) e^{-λ(t_k - t0)} + g(y_N̄) e^{-λ(T - t0)}`
//! is evaluated directly. No tree is built.

use rayon::prelude::*;

use crate::error::{Result, TsaError};
use crate::problem::{ControlProblem, DiscreteControlSet};

/// Largest number of sequences `brute_force_value` will enumerate.
pub const MAX_SEQUENCES: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationResult {
    pub min_cost: f64,
    /// Control indices of the lexicographically smallest minimizer.
    pub argmin_sequence: Vec<usize>,
    pub sequences_evaluated: u64,
}

/// Discrete cost of one control sequence (given as control indices) from `x0` at `t0`.
pub fn sequence_cost(
    problem: &ControlProblem,
    controls: &DiscreteControlSet,
    x0: &[f64],
    dt: f64,
    sequence: &[usize],
) -> Result<f64> {
    let steps = problem.steps_for(dt)?;
    if sequence.len() != steps {
        return Err(TsaError::invalid(format!(
            "sequence has {} controls, horizon needs {steps}",
            sequence.len()
        )));
    }
    if let Some(&j) = sequence.iter().find(|&&j| j >= controls.len()) {
        return Err(TsaError::invalid(format!("control index {j} out of range")));
    }
    let mut x = x0.to_vec();
    let mut f = vec![0.0; x.len()];
    let mut cost = 0.0;
    for (k, &j) in sequence.iter().enumerate() {
        let t = problem.t0() + k as f64 * dt;
        let u = controls.get(j);
        let weight = dt * (-problem.discount() * (t - problem.t0())).exp();
        cost += weight * problem.running_cost(&x, u, t);
        problem.dynamics(&x, u, t, &mut f);
        for (xi, fi) in x.iter_mut().zip(&f) {
            *xi += dt * fi;
        }
    }
    let horizon = steps as f64 * dt;
    Ok(cost + problem.terminal_cost(&x) * (-problem.discount() * horizon).exp())
}

struct Search<'a> {
    problem: &'a ControlProblem,
    controls: &'a DiscreteControlSet,
    dt: f64,
    steps: usize,
    // scratch per depth: state at the start of step k
    states: Vec<Vec<f64>>,
    f: Vec<f64>,
    path: Vec<usize>,
    best: f64,
    best_path: Vec<usize>,
    count: u64,
}

impl Search<'_> {
    fn descend(&mut self, depth: usize, cost: f64) {
        if depth == self.steps {
            let horizon = self.steps as f64 * self.dt;
            let total = cost
                + self.problem.terminal_cost(&self.states[depth])
                    * (-self.problem.discount() * horizon).exp();
            self.count += 1;
            // NaN never wins; strict `<` keeps the lexicographically first minimizer
            if total < self.best || (self.best_path.is_empty() && !total.is_nan()) {
                self.best = total;
                self.best_path.clone_from(&self.path);
            }
            return;
        }
        let t = self.problem.t0() + depth as f64 * self.dt;
        let weight = self.dt * (-self.problem.discount() * (t - self.problem.t0())).exp();
        for j in 0..self.controls.len() {
            let u = self.controls.get(j);
            let (head, tail) = self.states.split_at_mut(depth + 1);
            let x = &head[depth];
            let step_cost = weight * self.problem.running_cost(x, u, t);
            self.problem.dynamics(x, u, t, &mut self.f);
            for ((y, xi), fi) in tail[0].iter_mut().zip(x).zip(&self.f) {
                *y = xi + self.dt * fi;
            }
            self.path.push(j);
            self.descend(depth + 1, cost + step_cost);
            self.path.pop();
        }
    }
}

/// Minimum discrete cost over all control sequences, by depth-first enumeration.
///
/// The first step's branches are searched in parallel and reduced
/// deterministically (lower cost, then lower first index).
pub fn brute_force_value(
    problem: &ControlProblem,
    controls: &DiscreteControlSet,
    x0: &[f64],
    dt: f64,
) -> Result<EnumerationResult> {
    if x0.len() != problem.state_dim() {
        return Err(TsaError::invalid("initial state has the wrong dimension"));
    }
    if controls.dim() != problem.control_dim() {
        return Err(TsaError::invalid("controls have the wrong dimension"));
    }
    let steps = problem.steps_for(dt)?;
    enumerate(problem, controls, x0, dt, steps)
}

fn enumerate(
    problem: &ControlProblem,
    controls: &DiscreteControlSet,
    x0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<EnumerationResult> {
    let m = controls.len() as u128;
    let total = (0..steps).try_fold(1u128, |acc, _| {
        acc.checked_mul(m).filter(|&v| v <= MAX_SEQUENCES)
    });
    let Some(total) = total else {
        return Err(TsaError::Capacity {
            level: steps,
            count: m.saturating_pow(steps as u32),
            cap: MAX_SEQUENCES,
        });
    };

    let d = problem.state_dim();
    let new_search = || Search {
        problem,
        controls,
        dt,
        steps,
        states: vec![vec![0.0; d]; steps + 1],
        f: vec![0.0; d],
        path: Vec::with_capacity(steps),
        best: f64::INFINITY,
        best_path: Vec::new(),
        count: 0,
    };

    let (min_cost, argmin_sequence, count) = if steps == 0 {
        let mut s = new_search();
        s.states[0].copy_from_slice(x0);
        s.descend(0, 0.0);
        (s.best, s.best_path, s.count)
    } else {
        let branches: Vec<(f64, Vec<usize>, u64)> = (0..controls.len())
            .into_par_iter()
            .map(|j| {
                let mut s = new_search();
                s.states[0].copy_from_slice(x0);
                let t = problem.t0();
                let u = controls.get(j);
                let first = dt * problem.running_cost(x0, u, t);
                problem.dynamics(x0, u, t, &mut s.f);
                for ((y, xi), fi) in s.states[1].iter_mut().zip(x0).zip(&s.f) {
                    *y = xi + dt * fi;
                }
                s.path.push(j);
                s.descend(1, first);
                (s.best, s.best_path, s.count)
            })
            .collect();
        let count = branches.iter().map(|b| b.2).sum();
        let (best, path, _) = branches
            .into_iter()
            .filter(|b| !b.1.is_empty())
            .reduce(|a, b| if b.0 < a.0 { b } else { a })
            .ok_or(TsaError::Numerical {
                what: "sequence cost",
                at: None,
            })?;
        (best, path, count)
    };
    debug_assert_eq!(count as u128, total);
    if !min_cost.is_finite() {
        return Err(TsaError::Numerical {
            what: "sequence cost",
            at: None,
        });
    }
    Ok(EnumerationResult {
        min_cost,
        argmin_sequence,
        sequences_evaluated: count,
    })
}
