//! Level-by-level tree of Euler-reachable states.
//!
//! Level `n` holds the states reachable at `t_n = t0 + nΔt` from the root by
//! piecewise-constant discrete controls. Every node on levels `0..N̄` has one
//! child edge per control. With pruning, a candidate state closer than `ε_T`
//! to an already retained node of the same level is not stored; the parent's
//! edge is redirected to the nearest such node instead.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NodeLocation, Result, TsaError};
use crate::problem::{ControlProblem, DiscreteControlSet};

pub const DEFAULT_NODE_CAP: usize = 50_000_000;

/// How the merge tolerance `ε_T` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PruningPolicy {
    Off,
    /// Constant `ε_T`.
    Fixed {
        eps: f64,
    },
    /// `ε_T = coefficient · Δt^exponent`, evaluated when the tree is built.
    Power {
        coefficient: f64,
        exponent: f64,
    },
}

impl PruningPolicy {
    pub fn fixed(eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(TsaError::invalid(format!(
                "pruning tolerance must be >= 0, got {eps}"
            )));
        }
        Ok(PruningPolicy::Fixed { eps })
    }

    pub fn power(coefficient: f64, exponent: f64) -> Result<Self> {
        if !(coefficient.is_finite() && coefficient >= 0.0 && exponent.is_finite()) {
            return Err(TsaError::invalid(format!(
                "invalid tolerance rule {coefficient}*dt^{exponent}"
            )));
        }
        Ok(PruningPolicy::Power {
            coefficient,
            exponent,
        })
    }

    /// The merge radius for a given time step. Zero means no merging.
    pub fn tolerance(&self, dt: f64) -> f64 {
        match *self {
            PruningPolicy::Off => 0.0,
            PruningPolicy::Fixed { eps } => eps,
            PruningPolicy::Power {
                coefficient,
                exponent,
            } => coefficient * dt.powf(exponent),
        }
    }
}

impl fmt::Display for PruningPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruningPolicy::Off => f.write_str("off"),
            PruningPolicy::Fixed { eps } => write!(f, "eps={eps}"),
            PruningPolicy::Power {
                coefficient,
                exponent,
            } => write!(f, "eps={coefficient}*dt^{exponent}"),
        }
    }
}

/// Accepts `off`, `eps=0.01`, `eps=C*dt^p`, `eps=dt^p`, `eps=C*dt` (the
/// `eps=` prefix is optional).
impl FromStr for PruningPolicy {
    type Err = TsaError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || TsaError::invalid(format!("cannot parse pruning spec '{s}'"));
        let spec: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let spec = spec.to_ascii_lowercase();
        if spec == "off" || spec == "none" {
            return Ok(PruningPolicy::Off);
        }
        let rhs = spec.strip_prefix("eps=").unwrap_or(&spec);
        if !rhs.contains("dt") {
            return PruningPolicy::fixed(rhs.parse().map_err(|_| bad())?);
        }
        let (coef, rest) = match rhs.split_once('*') {
            Some((c, r)) => (c.parse::<f64>().map_err(|_| bad())?, r),
            None => (1.0, rhs),
        };
        let exponent = match rest.strip_prefix("dt").ok_or_else(bad)? {
            "" => 1.0,
            p => {
                let p = p.strip_prefix('^').ok_or_else(bad)?;
                match p.split_once('/') {
                    Some((a, b)) => {
                        a.parse::<f64>().map_err(|_| bad())?
                            / b.parse::<f64>().map_err(|_| bad())?
                    }
                    None => p.parse().map_err(|_| bad())?,
                }
            }
        };
        PruningPolicy::power(coef, exponent)
    }
}

/// Euclidean distance between two states.
#[inline]
pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
fn euler_into(problem: &ControlProblem, x: &[f64], u: &[f64], t: f64, dt: f64, out: &mut [f64]) {
    problem.dynamics(x, u, t, out);
    for (o, xi) in out.iter_mut().zip(x) {
        *o = xi + dt * *o;
    }
}

/// One explicit Euler step `x + Δt f(x, u, t)`.
pub fn euler_step(
    problem: &ControlProblem,
    x: &[f64],
    u: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(TsaError::invalid(format!(
            "time step must be > 0, got {dt}"
        )));
    }
    let mut out = vec![0.0; x.len()];
    euler_into(problem, x, u, t, dt, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(TsaError::Numerical {
            what: "dynamics",
            at: None,
        });
    }
    Ok(out)
}

/// Uniform hash grid with cell edge `ε_T` over the nodes of one level.
///
/// Any node within `ε_T` of a query point lies in one of the `3^d` cells
/// surrounding the query's own cell.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    cell: f64,
    dim: usize,
    cells: HashMap<Vec<i64>, Vec<u32>>,
    key: Vec<i64>,
}

impl SpatialIndex {
    pub fn new(dim: usize, cell: f64) -> Self {
        assert!(cell > 0.0, "cell edge must be positive");
        Self {
            // slightly inflated so rounding in x / cell never splits a pair at distance exactly cell
            cell: cell * (1.0 + 1e-9),
            dim,
            cells: HashMap::new(),
            key: vec![0; dim],
        }
    }

    /// Indexes every state of a flat `n × dim` array.
    pub fn from_states(states: &[f64], dim: usize, cell: f64) -> Self {
        let mut index = Self::new(dim, cell);
        for (i, s) in states.chunks_exact(dim).enumerate() {
            index.insert(s, i);
        }
        index
    }

    #[inline]
    fn cell_of(&self, x: f64) -> i64 {
        (x / self.cell).floor() as i64
    }

    pub fn insert(&mut self, state: &[f64], node: usize) {
        let key: Vec<i64> = state.iter().map(|&x| self.cell_of(x)).collect();
        self.cells.entry(key).or_default().push(node as u32);
    }

    /// Calls `visit` for every node stored in the `3^d` cells around `point`.
    fn for_each_neighbor(&mut self, point: &[f64], mut visit: impl FnMut(usize)) {
        let base: Vec<i64> = point.iter().map(|&x| self.cell_of(x)).collect();
        let mut offset = vec![-1i64; self.dim];
        loop {
            for ((k, b), o) in self.key.iter_mut().zip(&base).zip(&offset) {
                *k = b.saturating_add(*o);
            }
            if let Some(nodes) = self.cells.get(self.key.as_slice()) {
                nodes.iter().for_each(|&n| visit(n as usize));
            }
            // odometer over {-1, 0, 1}^d
            let mut axis = 0;
            loop {
                if axis == self.dim {
                    return;
                }
                if offset[axis] < 1 {
                    offset[axis] += 1;
                    break;
                }
                offset[axis] = -1;
                axis += 1;
            }
        }
    }
}

/// Nearest existing node of a level within distance `eps` of `candidate`.
///
/// Ties in distance go to the smallest node index. Returns `None` if no node
/// is within `eps` or if `eps` is zero.
pub fn prune_lookup(
    states: &[f64],
    index: &mut SpatialIndex,
    candidate: &[f64],
    eps: f64,
) -> Option<usize> {
    if eps.is_nan() || eps <= 0.0 {
        return None;
    }
    let dim = candidate.len();
    let mut best: Option<(f64, usize)> = None;
    index.for_each_neighbor(candidate, |node| {
        let d = distance(&states[node * dim..(node + 1) * dim], candidate);
        if d <= eps {
            best = match best {
                Some((bd, bn)) if (bd, bn) <= (d, node) => Some((bd, bn)),
                _ => Some((d, node)),
            };
        }
    });
    best.map(|(_, n)| n)
}

/// Nodes of one time level: flat states (`len × d`) and child edges (`len × M`).
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    states: Vec<f64>,
    children: Vec<u32>,
}

impl Level {
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Flat child-edge array, empty on the last level.
    pub fn children(&self) -> &[u32] {
        &self.children
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    /// Maximum total node count before construction aborts.
    pub node_cap: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            node_cap: DEFAULT_NODE_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    levels: Vec<Level>,
    state_dim: usize,
    controls: DiscreteControlSet,
    t0: f64,
    dt: f64,
    pruning: PruningPolicy,
    eps: f64,
    merge_count: usize,
}

impl Tree {
    /// Number of time steps `N̄`; there are `N̄ + 1` levels.
    pub fn steps(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn controls(&self) -> &DiscreteControlSet {
        &self.controls
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t0 + n as f64 * self.dt
    }

    pub fn pruning(&self) -> PruningPolicy {
        self.pruning
    }

    /// The merge radius actually used for this tree.
    pub fn tolerance(&self) -> f64 {
        self.eps
    }

    /// Candidates absorbed into an existing node.
    pub fn merge_count(&self) -> usize {
        self.merge_count
    }

    pub fn level_len(&self, n: usize) -> usize {
        self.levels[n].states.len() / self.state_dim
    }

    pub fn total_nodes(&self) -> usize {
        (0..self.levels.len()).map(|n| self.level_len(n)).sum()
    }

    #[inline]
    pub fn state(&self, n: usize, i: usize) -> &[f64] {
        let d = self.state_dim;
        &self.levels[n].states[i * d..(i + 1) * d]
    }

    /// Child indices into level `n + 1`, one per control.
    #[inline]
    pub fn children(&self, n: usize, i: usize) -> &[u32] {
        let m = self.controls.len();
        let c = &self.levels[n].children;
        if c.is_empty() {
            &[]
        } else {
            &c[i * m..(i + 1) * m]
        }
    }

    pub fn root(&self) -> &[f64] {
        self.state(0, 0)
    }

    /// Writes one CSV row per node: `level,index,s0..s{d-1},c0..c{M-1}`.
    ///
    /// Child columns are empty on the last level.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let m = self.controls.len();
        let mut header = vec!["level".to_string(), "index".to_string()];
        header.extend((0..self.state_dim).map(|k| format!("s{k}")));
        header.extend((0..m).map(|j| format!("c{j}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for n in 0..self.levels.len() {
            for i in 0..self.level_len(n) {
                record.clear();
                record.push(n.to_string());
                record.push(i.to_string());
                record.extend(self.state(n, i).iter().map(f64::to_string));
                let children = self.children(n, i);
                if children.is_empty() {
                    record.extend(std::iter::repeat_n(String::new(), m));
                } else {
                    record.extend(children.iter().map(u32::to_string));
                }
                w.write_record(&record)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of nodes of an unpruned tree, `Σ_{i=0}^{N̄} M^i`.
///
/// Saturates at `u128::MAX`.
pub fn unpruned_cardinality(controls: u64, steps: u32) -> u128 {
    let m = controls as u128;
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for i in 0..=steps {
        total = total.saturating_add(level);
        if i < steps {
            level = level.saturating_mul(m);
        }
    }
    total
}

/// Builds the tree with the default node cap.
pub fn build_tree(
    problem: &ControlProblem,
    controls: &DiscreteControlSet,
    x0: &[f64],
    dt: f64,
    pruning: PruningPolicy,
) -> Result<Tree> {
    build_tree_with(problem, controls, x0, dt, pruning, &BuildOptions::default())
}

/// Builds the tree.
///
/// Candidate states of a level are generated in parallel; retention and
/// merging are committed sequentially in canonical order (parents by index,
/// then controls in order), so the output does not depend on the thread count.
pub fn build_tree_with(
    problem: &ControlProblem,
    controls: &DiscreteControlSet,
    x0: &[f64],
    dt: f64,
    pruning: PruningPolicy,
    options: &BuildOptions,
) -> Result<Tree> {
    let d = problem.state_dim();
    if x0.len() != d {
        return Err(TsaError::invalid(format!(
            "initial state has {} components, problem expects {d}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(TsaError::invalid("initial state must be finite"));
    }
    if controls.dim() != problem.control_dim() {
        return Err(TsaError::invalid(format!(
            "controls have dimension {}, problem expects {}",
            controls.dim(),
            problem.control_dim()
        )));
    }
    if options.node_cap > u32::MAX as usize {
        return Err(TsaError::invalid(
            "node cap must fit in 32-bit node indices",
        ));
    }
    let steps = problem.steps_for(dt)?;
    let eps = pruning.tolerance(dt);
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(TsaError::invalid(format!(
            "pruning tolerance evaluates to {eps}"
        )));
    }
    let m = controls.len();

    let mut levels = Vec::with_capacity(steps + 1);
    levels.push(Level {
        states: x0.to_vec(),
        children: Vec::new(),
    });
    let mut total = 1usize;
    let mut merge_count = 0usize;

    for n in 0..steps {
        let t = problem.t0() + n as f64 * dt;
        let parents = levels[n].states.len() / d;
        let produced = parents * m;
        if eps == 0.0 && total + produced > options.node_cap {
            return Err(TsaError::Capacity {
                level: n + 1,
                count: (total + produced) as u128,
                cap: options.node_cap as u128,
            });
        }

        let mut candidates = vec![0.0; produced * d];
        {
            let parent_states = &levels[n].states;
            candidates
                .par_chunks_mut(m * d)
                .zip(parent_states.par_chunks(d))
                .for_each(|(out, x)| {
                    for (j, slot) in out.chunks_exact_mut(d).enumerate() {
                        euler_into(problem, x, controls.get(j), t, dt, slot);
                    }
                });
        }
        if let Some(k) = candidates.iter().position(|v| !v.is_finite()) {
            let c = k / d;
            return Err(TsaError::Numerical {
                what: "dynamics",
                at: Some(NodeLocation {
                    level: n,
                    node: c / m,
                    control: Some(c % m),
                }),
            });
        }

        let (next, edges) = if eps == 0.0 {
            (candidates, (0..produced as u32).collect())
        } else {
            let mut index = SpatialIndex::new(d, eps);
            let mut kept: Vec<f64> = Vec::new();
            let mut edges = Vec::with_capacity(produced);
            for cand in candidates.chunks_exact(d) {
                match prune_lookup(&kept, &mut index, cand, eps) {
                    Some(existing) => {
                        edges.push(existing as u32);
                        merge_count += 1;
                    }
                    None => {
                        let id = kept.len() / d;
                        if total + id + 1 > options.node_cap {
                            return Err(TsaError::Capacity {
                                level: n + 1,
                                count: (total + id + 1) as u128,
                                cap: options.node_cap as u128,
                            });
                        }
                        kept.extend_from_slice(cand);
                        index.insert(cand, id);
                        edges.push(id as u32);
                    }
                }
            }
            (kept, edges)
        };
        total += next.len() / d;
        levels[n].children = edges;
        levels.push(Level {
            states: next,
            children: Vec::new(),
        });
    }

    Ok(Tree {
        levels,
        state_dim: d,
        controls: controls.clone(),
        t0: problem.t0(),
        dt,
        pruning,
        eps,
        merge_count,
    })
}
