//! Backward value sweep on a built tree and greedy optimal-path extraction.

use rayon::prelude::*;

use crate::error::{NodeLocation, Result, TsaError};
use crate::problem::ControlProblem;
use crate::tree::Tree;

/// Node values `V^n` and minimizing control indices, aligned with the tree levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSweepResult {
    values: Vec<Vec<f64>>,
    argmin: Vec<Vec<u32>>,
}

impl ValueSweepResult {
    pub fn values(&self, n: usize) -> &[f64] {
        &self.values[n]
    }

    /// Minimizing control index per node of level `n < N̄`.
    pub fn argmin_control(&self, n: usize) -> &[u32] {
        &self.argmin[n]
    }

    pub fn root_value(&self) -> f64 {
        self.values[0][0]
    }

    pub fn levels(&self) -> usize {
        self.values.len()
    }
}

fn check_compatible(tree: &Tree, problem: &ControlProblem) -> Result<()> {
    if tree.state_dim() != problem.state_dim() || tree.controls().dim() != problem.control_dim() {
        return Err(TsaError::invalid("tree and problem dimensions differ"));
    }
    Ok(())
}

/// Minimum over controls of `e^{-λΔt} V^{n+1}(child) + Δt L(x, u, t_n)`.
///
/// Ties keep the smallest control index.
#[inline]
fn node_min(
    tree: &Tree,
    problem: &ControlProblem,
    next: &[f64],
    n: usize,
    i: usize,
    decay: f64,
) -> (f64, u32) {
    let x = tree.state(n, i);
    let t = tree.time(n);
    let dt = tree.dt();
    let mut best = (f64::INFINITY, 0u32);
    for (j, &child) in tree.children(n, i).iter().enumerate() {
        let q =
            decay * next[child as usize] + dt * problem.running_cost(x, tree.controls().get(j), t);
        if !q.is_finite() {
            return (f64::NAN, j as u32);
        }
        if q < best.0 {
            best = (q, j as u32);
        }
    }
    best
}

/// Fills `V^N̄ = g` and then every level down to the root.
///
/// Children are read through the stored edges, so on a pruned tree this
/// evaluates the value function of the perturbed (merged) dynamics. Nodes of
/// a level are minimized in parallel; the result does not depend on the
/// thread count.
pub fn backward_sweep(tree: &Tree, problem: &ControlProblem) -> Result<ValueSweepResult> {
    check_compatible(tree, problem)?;
    let steps = tree.steps();
    let decay = (-problem.discount() * tree.dt()).exp();

    let last: Vec<f64> = tree.levels()[steps]
        .states()
        .par_chunks(tree.state_dim())
        .map(|x| problem.terminal_cost(x))
        .collect();
    if let Some(i) = last.iter().position(|v| !v.is_finite()) {
        return Err(TsaError::Numerical {
            what: "terminal cost",
            at: Some(NodeLocation {
                level: steps,
                node: i,
                control: None,
            }),
        });
    }

    let mut values = vec![Vec::new(); steps + 1];
    let mut argmin = vec![Vec::new(); steps];
    values[steps] = last;
    for n in (0..steps).rev() {
        let next = &values[n + 1];
        let (v, a): (Vec<f64>, Vec<u32>) = (0..tree.level_len(n))
            .into_par_iter()
            .map(|i| node_min(tree, problem, next, n, i, decay))
            .unzip();
        if let Some(i) = v.iter().position(|q| q.is_nan()) {
            return Err(TsaError::Numerical {
                what: "running cost or value",
                at: Some(NodeLocation {
                    level: n,
                    node: i,
                    control: Some(a[i] as usize),
                }),
            });
        }
        values[n] = v;
        argmin[n] = a;
    }
    Ok(ValueSweepResult { values, argmin })
}

/// The greedy path from the root along minimizing edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizedTrajectory {
    /// `N̄ + 1` states.
    pub states: Vec<Vec<f64>>,
    /// `N̄` control vectors.
    pub controls: Vec<Vec<f64>>,
    /// Control indices into the tree's control set.
    pub control_indices: Vec<usize>,
    /// `V^n` at each visited node.
    pub values: Vec<f64>,
    /// Discrete cost `Δt Σ L e^{-λ(t_k - t0)} + g e^{-λ(T - t0)}` along the path.
    pub accumulated_cost: f64,
}

/// Follows `argmin_control` edges from the root to the last level.
///
/// On a tree the greedy path attains the swept root value; on a pruned tree
/// the states along stored edges include the merge perturbations.
pub fn synthesize_trajectory(
    tree: &Tree,
    sweep: &ValueSweepResult,
    problem: &ControlProblem,
) -> Result<SynthesizedTrajectory> {
    check_compatible(tree, problem)?;
    if sweep.levels() != tree.steps() + 1 {
        return Err(TsaError::invalid("sweep does not belong to this tree"));
    }
    let steps = tree.steps();
    let dt = tree.dt();
    let lambda = problem.discount();
    let t0 = tree.time(0);

    let mut node = 0usize;
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut control_indices = Vec::with_capacity(steps);
    let mut values = Vec::with_capacity(steps + 1);
    let mut running = 0.0;
    for n in 0..steps {
        let x = tree.state(n, node);
        let j = sweep.argmin_control(n)[node] as usize;
        let u = tree.controls().get(j);
        let t = tree.time(n);
        running += dt * (-lambda * (t - t0)).exp() * problem.running_cost(x, u, t);
        states.push(x.to_vec());
        controls.push(u.to_vec());
        control_indices.push(j);
        values.push(sweep.values(n)[node]);
        node = tree.children(n, node)[j] as usize;
    }
    let x_final = tree.state(steps, node);
    let terminal = problem.terminal_cost(x_final) * (-lambda * (tree.time(steps) - t0)).exp();
    states.push(x_final.to_vec());
    values.push(sweep.values(steps)[node]);

    Ok(SynthesizedTrajectory {
        states,
        controls,
        control_indices,
        values,
        accumulated_cost: running + terminal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{make_test1, make_test2, DiscreteControlSet};
    use crate::tree::{build_tree, PruningPolicy};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn one_step_tie_picks_first_control() {
        let b = make_test1();
        let tree = build_tree(
            &b.problem,
            &b.default_controls,
            &[1.0, 0.0],
            1.0,
            PruningPolicy::Off,
        )
        .unwrap();
        assert_eq!(tree.state(1, 0), &[0.0, 1.0]);
        assert_eq!(tree.state(1, 1), &[2.0, 1.0]);
        let sweep = backward_sweep(&tree, &b.problem).unwrap();
        assert_eq!(sweep.root_value(), -1.0);
        assert_eq!(sweep.argmin_control(0)[0], 0);
    }

    #[test]
    fn two_step_test1_value() {
        // best sequence (+1, ±1): x2(T) = 0.5 * 1 + 0.5 * 1.5^2 = 1.625
        let b = make_test1();
        let tree = build_tree(
            &b.problem,
            &b.default_controls,
            &[1.0, 0.0],
            0.5,
            PruningPolicy::Off,
        )
        .unwrap();
        let sweep = backward_sweep(&tree, &b.problem).unwrap();
        assert_relative_eq!(sweep.root_value(), -1.625, max_relative = 1e-15);
    }

    #[test]
    fn discount_applied_once() {
        let lambda = 0.7;
        let b = make_test2();
        let p = b.problem.with_discount(lambda).unwrap();
        let tree = build_tree(
            &p,
            &b.default_controls,
            &[0.3, -0.2],
            1.0,
            PruningPolicy::Off,
        )
        .unwrap();
        let sweep = backward_sweep(&tree, &p).unwrap();
        let min_g = (0..2)
            .map(|i| p.terminal_cost(tree.state(1, i)))
            .fold(f64::INFINITY, f64::min);
        assert_relative_eq!(
            sweep.root_value(),
            (-lambda).exp() * min_g,
            max_relative = 1e-15
        );
    }

    #[test]
    fn terminal_values_are_exact() {
        let b = make_test2();
        let tree = build_tree(
            &b.problem,
            &b.default_controls,
            &[1.0, 1.0],
            0.1,
            PruningPolicy::Off,
        )
        .unwrap();
        let sweep = backward_sweep(&tree, &b.problem).unwrap();
        let n = tree.steps();
        for i in 0..tree.level_len(n) {
            assert_eq!(
                sweep.values(n)[i],
                b.problem.terminal_cost(tree.state(n, i))
            );
        }
    }

    #[test]
    fn non_finite_cost_reported() {
        let b = make_test1();
        let p = ControlProblem::new(
            2,
            1,
            (0.0, 1.0),
            0.0,
            Arc::new(|_: &[f64], u: &[f64], _: f64, out: &mut [f64]| {
                out[0] = u[0];
                out[1] = 0.0;
            }),
            Arc::new(|_: &[f64], u: &[f64], _: f64| if u[0] > 0.0 { f64::NAN } else { 0.0 }),
            Arc::new(|x: &[f64]| x[0]),
        )
        .unwrap();
        let tree = build_tree(
            &p,
            &b.default_controls,
            &[0.0, 0.0],
            0.5,
            PruningPolicy::Off,
        )
        .unwrap();
        match backward_sweep(&tree, &p) {
            Err(TsaError::Numerical { at: Some(loc), .. }) => {
                assert_eq!(loc.level, 1);
                assert_eq!(loc.node, 0);
                assert_eq!(loc.control, Some(1));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn trajectory_realizes_root_value() {
        let b = make_test2();
        let tree = build_tree(
            &b.problem,
            &b.default_controls,
            &[1.0, 1.0],
            0.2,
            PruningPolicy::Off,
        )
        .unwrap();
        let sweep = backward_sweep(&tree, &b.problem).unwrap();
        let traj = synthesize_trajectory(&tree, &sweep, &b.problem).unwrap();
        assert_eq!(traj.states.len(), 6);
        assert_eq!(traj.controls.len(), 5);
        assert_relative_eq!(
            traj.accumulated_cost,
            sweep.root_value(),
            max_relative = 1e-12
        );
        assert_eq!(traj.values[0], sweep.root_value());
    }

    #[test]
    fn trajectory_with_running_cost_and_discount() {
        let p = ControlProblem::new(
            1,
            1,
            (0.0, 1.0),
            0.4,
            Arc::new(|x: &[f64], u: &[f64], _: f64, out: &mut [f64]| out[0] = -0.5 * x[0] + u[0]),
            Arc::new(|x: &[f64], u: &[f64], t: f64| x[0] * x[0] + 0.1 * u[0] * u[0] + t),
            Arc::new(|x: &[f64]| (x[0] - 1.0).powi(2)),
        )
        .unwrap();
        let c = DiscreteControlSet::from_scalars(&[-1.0, 0.0, 0.5, 1.0]).unwrap();
        for pruning in [PruningPolicy::Off, PruningPolicy::power(1.0, 2.0).unwrap()] {
            let tree = build_tree(&p, &c, &[0.2], 0.125, pruning).unwrap();
            let sweep = backward_sweep(&tree, &p).unwrap();
            let traj = synthesize_trajectory(&tree, &sweep, &p).unwrap();
            assert_relative_eq!(
                traj.accumulated_cost,
                sweep.root_value(),
                max_relative = 1e-12
            );
        }
    }
}
