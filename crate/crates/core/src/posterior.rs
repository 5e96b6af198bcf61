//! Recovering the reverse conditional `p(x0 | x_t = x)` from concrete scores.
//!
//! For fixed `x` the ratios `r[y] = p_t(y) / p_t(x)` and the posterior are
//! linked by `r = A(x) p`, with `A(x)[y][x0] = p(y | x0) / p(x | x0)` built
//! from the forward kernel alone. Solving that system turns any score model
//! into an estimate of the posterior.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::ctmc::ForwardKernel;
use crate::error::{Error, Result};
use crate::score::ScoreTable;

/// Solves are refused above this 1-norm condition estimate.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct RatioMatrix {
    pub t: f64,
    pub x: usize,
    matrix: DMatrix<f64>,
    lu: LU<f64, Dyn, Dyn>,
    cond_estimate: f64,
}

impl RatioMatrix {
    /// Builds `A(x)` from the kernel `p_{t|0}`. Requires column `x` of the
    /// kernel to be strictly positive.
    pub fn build(kernel: &ForwardKernel, x: usize) -> Result<Self> {
        let n = kernel.size();
        if x >= n {
            return Err(Error::domain(format!("state {x} outside [0, {n})")));
        }
        let p = &kernel.probs;
        if let Some(x0) = (0..n).find(|&x0| !(p[(x0, x)] > 0.0)) {
            return Err(Error::SingularKernel(format!(
                "p(x_t = {x} | x0 = {x0}) = 0 at t = {}",
                kernel.t
            )));
        }
        let matrix = DMatrix::from_fn(n, n, |y, x0| if y == x { 1.0 } else { p[(x0, y)] / p[(x0, x)] });
        let lu = matrix.clone().lu();
        let cond_estimate = match lu.try_inverse() {
            Some(inv) => one_norm(&matrix) * one_norm(&inv),
            None => f64::INFINITY,
        };
        Ok(Self {
            t: kernel.t,
            x,
            matrix,
            lu,
            cond_estimate,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `||A||_1 * ||A^-1||_1`.
    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    fn check_conditioning(&self) -> Result<()> {
        if !(self.cond_estimate <= MAX_CONDITION) {
            return Err(Error::IllConditioned {
                cond: self.cond_estimate,
                limit: MAX_CONDITION,
            });
        }
        Ok(())
    }

    /// Solves `A p = ratios`. The raw solution is returned unprojected.
    pub fn recover(&self, ratios: &[f64]) -> Result<Vec<f64>> {
        let n = self.matrix.nrows();
        if ratios.len() != n {
            return Err(Error::shape(format!("expected {n} ratios, got {}", ratios.len())));
        }
        self.check_conditioning()?;
        let sol = self
            .lu
            .solve(&DVector::from_column_slice(ratios))
            .ok_or_else(|| Error::Singular(format!("ratio matrix at t = {} is singular", self.t)))?;
        Ok(sol.iter().copied().collect())
    }

    /// Solves the adjoint system `A^T v = rhs`, used to pull gradients back
    /// from the posterior to the ratios.
    pub fn adjoint_solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.check_conditioning()?;
        let sol = self
            .matrix
            .transpose()
            .lu()
            .solve(&DVector::from_column_slice(rhs))
            .ok_or_else(|| Error::Singular(format!("ratio matrix at t = {} is singular", self.t)))?;
        Ok(sol.iter().copied().collect())
    }

    /// `A p - r`, the residual of a candidate solution.
    pub fn residual(&self, solution: &[f64], ratios: &[f64]) -> Vec<f64> {
        let p = DVector::from_column_slice(solution);
        (&self.matrix * p).iter().zip(ratios).map(|(a, r)| a - r).collect()
    }
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// The model's raw estimate of `p(x0 | x_t = x)`: scores at `(kernel.t, x)`
/// pushed through the ratio system. Entry `x` of the scores is one, which
/// supplies the constant column of the solve.
pub fn model_conditional(table: &ScoreTable, kernel: &ForwardKernel, x: usize) -> Result<Vec<f64>> {
    let scores = table.eval(kernel.t, x)?;
    RatioMatrix::build(kernel, x)?.recover(&scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sanitized {
    pub probs: Vec<f64>,
    /// L1 distance between the raw input and the returned distribution.
    pub violation: f64,
}

/// Clamps negatives to zero and renormalises.
pub fn sanitize_distribution(raw: &[f64]) -> Result<Sanitized> {
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("non-finite entry".into()));
    }
    let total: f64 = raw.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("no positive mass".into()));
    }
    let probs: Vec<f64> = raw.iter().map(|v| v.max(0.0) / total).collect();
    let violation = raw.iter().zip(&probs).map(|(a, b)| (a - b).abs()).sum();
    Ok(Sanitized { probs, violation })
}
