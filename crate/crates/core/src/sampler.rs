//! Euler-type reverse sampler and its exact law.
//!
//! One step from `t` down to `s` uses the first-order transition
//!
//! ```text
//! p(x_s | x_t) ~ 1{x_s = x_t} + (t - s) * sigma(t) * Q(x_t, x_s) * score(t, x_t)[x_s]
//! ```
//!
//! with the self-score fixed at one. Large steps can push the diagonal below
//! zero, so every row is clamped and renormalised.

use nalgebra::DMatrix;

use crate::ctmc::ForwardProcess;
use crate::error::{Error, Result};
use crate::posterior::sanitize_distribution;
use crate::score::ScoreTable;
use crate::util::sample_categorical;
use crate::Rng;

/// Sampling times `t_0 = eps < t_1 < ... < t_K = T`, stored ascending and
/// walked from the top.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::domain("a time grid needs at least one step"));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::domain("grid times must be strictly increasing"));
        }
        Ok(Self { times })
    }

    /// `steps` equal steps on `[eps, T]`.
    pub fn uniform(steps: usize, process: &ForwardProcess) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("step count must be positive"));
        }
        let (lo, hi) = (process.min_time(), process.horizon());
        let mut times: Vec<f64> = (0..=steps).map(|k| lo + (hi - lo) * k as f64 / steps as f64).collect();
        times[steps] = hi;
        Self::new(times)
    }

    /// Log-spaced grid on `[eps, T]`, denser near the data end.
    pub fn geometric(steps: usize, process: &ForwardProcess) -> Result<Self> {
        if steps == 0 {
            return Err(Error::domain("step count must be positive"));
        }
        let (lo, hi) = (process.min_time(), process.horizon());
        let mut times: Vec<f64> = (0..=steps)
            .map(|k| lo * (hi / lo).powf(k as f64 / steps as f64))
            .collect();
        times[0] = lo;
        times[steps] = hi;
        Self::new(times)
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Ascending times.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `(t, s)` pairs from `T` downwards.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.windows(2).rev().map(|w| (w[1], w[0]))
    }
}

/// Row-stochastic one-step kernel, entry `(x_t, x_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepKernel {
    pub t: f64,
    pub s: f64,
    pub probs: DMatrix<f64>,
    /// Largest L1 distance between a raw Euler row and its clamped version.
    pub violation: f64,
}

/// One Euler row from state `x` given its scores. Returns the row and the
/// L1 correction applied by the clamp.
pub fn euler_row(process: &ForwardProcess, t: f64, s: f64, x: usize, scores: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = process.size();
    if scores.len() != n || x >= n {
        return Err(Error::shape(format!("expected {n} scores and a state below {n}")));
    }
    if s > t {
        return Err(Error::domain(format!("Euler step needs s <= t, got s={s}, t={t}")));
    }
    let scale = (t - s) * process.schedule.sigma(t)?;
    let rates = process.generator.rates();
    let raw: Vec<f64> = (0..n)
        .map(|y| {
            let jump = scale * rates[(x, y)] * scores[y];
            if y == x {
                1.0 + jump
            } else {
                jump
            }
        })
        .collect();
    let clean =
        sanitize_distribution(&raw).map_err(|e| Error::Degenerate(format!("Euler row {x} at t={t}, s={s}: {e}")))?;
    Ok((clean.probs, clean.violation))
}

/// Euler kernel for an arbitrary score source.
pub fn euler_step_kernel_with<F>(process: &ForwardProcess, t: f64, s: f64, mut scores: F) -> Result<StepKernel>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let n = process.size();
    let mut probs = DMatrix::zeros(n, n);
    let mut violation: f64 = 0.0;
    for x in 0..n {
        let (row, v) = euler_row(process, t, s, x, &scores(x)?)?;
        violation = violation.max(v);
        for (y, p) in row.into_iter().enumerate() {
            probs[(x, y)] = p;
        }
    }
    Ok(StepKernel { t, s, probs, violation })
}

/// Euler kernel using the table's scores at time `t`.
pub fn euler_step_kernel(table: &ScoreTable, process: &ForwardProcess, t: f64, s: f64) -> Result<StepKernel> {
    if s < table.edges()[0] {
        return Err(Error::domain(format!("step target {s} below the score domain")));
    }
    euler_step_kernel_with(process, t, s, |x| table.eval(t, x))
}

/// Law of the uniform generator's terminal state.
pub fn terminal_distribution(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Exact output law of the K-step sampler started from `init` at `T`.
pub fn pushforward_exact(
    table: &ScoreTable,
    process: &ForwardProcess,
    grid: &TimeGrid,
    init: &[f64],
) -> Result<Vec<f64>> {
    let n = process.size();
    if init.len() != n {
        return Err(Error::shape(format!(
            "initial law has {} entries, expected {n}",
            init.len()
        )));
    }
    let mass: f64 = init.iter().sum();
    if (mass - 1.0).abs() > 1e-10 || init.iter().any(|&p| p < 0.0) {
        return Err(Error::domain("initial law is not a probability vector"));
    }
    let mut law = init.to_vec();
    for (t, s) in grid.intervals() {
        let step = euler_step_kernel(table, process, t, s)?;
        law = (0..n)
            .map(|y| (0..n).map(|x| law[x] * step.probs[(x, y)]).sum())
            .collect();
    }
    Ok(law)
}

/// Draws one trajectory `X_T, ..., X_eps` (ordered from `T` down).
pub fn sample_trajectory(
    table: &ScoreTable,
    process: &ForwardProcess,
    grid: &TimeGrid,
    rng: &mut Rng,
) -> Result<Vec<usize>> {
    let n = process.size();
    let mut x = sample_categorical(&terminal_distribution(n), rng);
    let mut path = Vec::with_capacity(grid.steps() + 1);
    path.push(x);
    for (t, s) in grid.intervals() {
        let (row, _) = euler_row(process, t, s, x, &table.eval(t, x)?)?;
        x = sample_categorical(&row, rng);
        path.push(x);
    }
    Ok(path)
}

/// `KL(p || q)` in nats; infinite when `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi <= 0.0 {
                0.0
            } else if qi <= 0.0 {
                f64::INFINITY
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum()
}
