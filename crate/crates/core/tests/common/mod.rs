#![allow(dead_code)]

use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tsa_core::{ControlProblem, DiscreteControlSet, Tree};

/// `x' = A x + b u + c(1 + t)`, `L = q·x + r u + s u²`, `g = p·x + w |x|² + 5`
/// with coefficients drawn from `seed`. Scalar control, dimension 1 to 3.
pub fn random_affine_problem(seed: u64) -> (ControlProblem, Vec<f64>) {
    let mut rng = StdRng::seed_from_u64(seed);
    let d = rng.gen_range(1..=3usize);
    let mut draw = |n: usize, scale: f64| -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
    };
    let a = draw(d * d, 1.0);
    let b = draw(d, 1.0);
    let c = draw(d, 0.5);
    let q = draw(d, 1.0);
    let p = draw(d, 1.0);
    let x0 = draw(d, 1.0);
    let coef = draw(3, 1.0);
    let (r, s, w) = (coef[0], coef[1].abs(), coef[2].abs() * 0.5);
    let lambda = coef[0].abs();

    let problem = ControlProblem::new(
        d,
        1,
        (0.0, 1.0),
        lambda,
        Arc::new(move |x: &[f64], u: &[f64], t: f64, out: &mut [f64]| {
            for i in 0..x.len() {
                let ax: f64 = (0..x.len()).map(|j| a[i * x.len() + j] * x[j]).sum();
                out[i] = ax + b[i] * u[0] + c[i] * (1.0 + t);
            }
        }),
        Arc::new(move |x: &[f64], u: &[f64], _t: f64| {
            q.iter().zip(x).map(|(qi, xi)| qi * xi).sum::<f64>() + r * u[0] + s * u[0] * u[0]
        }),
        Arc::new(move |x: &[f64]| {
            p.iter().zip(x).map(|(pi, xi)| pi * xi).sum::<f64>()
                + w * x.iter().map(|v| v * v).sum::<f64>()
                + 5.0
        }),
    )
    .unwrap();
    (problem, x0)
}

/// All `(M, N̄)` with `M^N̄ <= 4096`, `M <= 16`, `1 <= N̄ <= 12`.
pub fn small_enumerations() -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for m in 1..=16usize {
        for n in 1..=12u32 {
            if m.pow(n) <= 4096 {
                out.push((m, n as usize));
            }
        }
    }
    out
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs())
}

/// Smallest pairwise distance among the nodes of level `n` (brute force).
pub fn min_pairwise_distance(tree: &Tree, n: usize) -> f64 {
    let len = tree.level_len(n);
    let mut best = f64::INFINITY;
    for i in 0..len {
        for j in i + 1..len {
            let d = tsa_core::tree::distance(tree.state(n, i), tree.state(n, j));
            best = best.min(d);
        }
    }
    best
}

pub fn controls(m: usize) -> DiscreteControlSet {
    tsa_core::evenly_spaced_controls(-1.0, 1.0, m).unwrap()
}
