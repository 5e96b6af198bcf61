//! Exact dense-enumeration ground truth: marginals, concrete scores, Bayes
//! posteriors, and numerical checks of the identities used by distillation.
//!
//! Nothing in here samples. Every quantity is a finite sum.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::ctmc::{ForwardKernel, ForwardProcess};
use crate::error::{Error, Result};

/// The clean-data law `p_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataDistribution {
    probs: Vec<f64>,
}

impl DataDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::domain("data probabilities must be finite and non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("data probabilities sum to {sum}")));
        }
        if probs.iter().filter(|&&p| p > 1e-6).count() < 2 {
            return Err(Error::domain(
                "data distribution needs at least two states with mass > 1e-6",
            ));
        }
        Ok(Self { probs })
    }

    /// Normalises non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::domain("weights must have positive total"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    /// Deterministic geometrically decaying law, `p_i ∝ 2^-i`.
    pub fn peaked(n: usize) -> Result<Self> {
        let weights: Vec<f64> = (0..n).map(|i| 0.5f64.powi(i as i32)).collect();
        Self::from_weights(&weights)
    }

    /// Flat Dirichlet draw.
    pub fn random(n: usize, seed: u64) -> Result<Self> {
        let mut rng = crate::seeded_rng(seed);
        let weights: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut rng)).collect();
        Self::from_weights(&weights)
    }

    /// Log-normal weights with unit log-scale 1.5: one or two states
    /// typically dominate while every state keeps positive mass.
    pub fn peaked_random(n: usize, seed: u64) -> Result<Self> {
        let mut rng = crate::seeded_rng(seed);
        let weights: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (1.5 * z).exp()
            })
            .collect();
        Self::from_weights(&weights)
    }

    pub fn size(&self) -> usize {
        self.probs.len()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Inverse-CDF draw of a clean state.
    pub fn sample(&self, rng: &mut crate::Rng) -> usize {
        crate::util::sample_categorical(&self.probs, rng)
    }
}

/// `p_t` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactMarginal {
    pub t: f64,
    pub probs: Vec<f64>,
}

pub fn exact_marginal(data: &DataDistribution, kernel: &ForwardKernel) -> Result<ExactMarginal> {
    let n = data.size();
    if kernel.size() != n {
        return Err(Error::shape(format!(
            "kernel has {} states, data has {n}",
            kernel.size()
        )));
    }
    let probs = (0..n)
        .map(|y| (0..n).map(|x0| kernel.probs[(x0, y)] * data.probs[x0]).sum())
        .collect();
    Ok(ExactMarginal { t: kernel.t, probs })
}

/// Concrete score at `x`: `r[y] = p_t(y) / p_t(x)`, with `r[x] = 1` exactly.
pub fn exact_ratios(marginal: &ExactMarginal, x: usize) -> Result<Vec<f64>> {
    let px = marginal_mass(marginal, x)?;
    Ok(marginal
        .probs
        .iter()
        .enumerate()
        .map(|(y, &py)| if y == x { 1.0 } else { py / px })
        .collect())
}

/// Bayes posterior `p(x0 | x_t = x) = p(x | x0) p0(x0) / p_t(x)`.
pub fn exact_posterior(
    data: &DataDistribution,
    kernel: &ForwardKernel,
    marginal: &ExactMarginal,
    x: usize,
) -> Result<Vec<f64>> {
    let px = marginal_mass(marginal, x)?;
    if kernel.size() != data.size() {
        return Err(Error::shape("kernel and data sizes differ"));
    }
    Ok((0..data.size())
        .map(|x0| kernel.probs[(x0, x)] * data.probs[x0] / px)
        .collect())
}

fn marginal_mass(marginal: &ExactMarginal, x: usize) -> Result<f64> {
    let px = *marginal
        .probs
        .get(x)
        .ok_or_else(|| Error::domain(format!("state {x} out of range")))?;
    if !(px > 0.0) {
        return Err(Error::domain(format!("p_t({x}) = 0, ratios undefined")));
    }
    Ok(px)
}

/// All posteriors at time `t`, row `x` holding `p(. | x_t = x)`.
pub fn posterior_matrix(data: &DataDistribution, process: &ForwardProcess, t: f64) -> Result<DMatrix<f64>> {
    let kernel = process.kernel(t)?;
    let marginal = exact_marginal(data, &kernel)?;
    let n = data.size();
    let mut out = DMatrix::zeros(n, n);
    for x in 0..n {
        let post = exact_posterior(data, &kernel, &marginal, x)?;
        for (x0, v) in post.into_iter().enumerate() {
            out[(x, x0)] = v;
        }
    }
    Ok(out)
}

/// Exact reverse transition `p(x_s | x_t)` for `s <= t`, row `x_t`, column `x_s`.
pub fn exact_reverse_conditional(
    data: &DataDistribution,
    process: &ForwardProcess,
    s: f64,
    t: f64,
) -> Result<DMatrix<f64>> {
    let ps = exact_marginal(data, &process.kernel(s)?)?;
    let pt = exact_marginal(data, &process.kernel(t)?)?;
    let step = process.kernel_between(s, t)?;
    let n = data.size();
    let mut out = DMatrix::zeros(n, n);
    for xt in 0..n {
        let denom = marginal_mass(&pt, xt)?;
        for xs in 0..n {
            out[(xt, xs)] = step.probs[(xs, xt)] * ps.probs[xs] / denom;
        }
    }
    Ok(out)
}

/// Largest deviation, over `(x0, x_t)`, between `p(x0 | x_t)` and the
/// mixture `sum_{x_s} p(x_s | x_t) p(x0 | x_s)`, all computed exactly.
pub fn check_markov_mixture(data: &DataDistribution, process: &ForwardProcess, s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0) || s > t {
        return Err(Error::domain(format!("need 0 < s <= t, got s={s}, t={t}")));
    }
    let direct = posterior_matrix(data, process, t)?;
    let intermediate = posterior_matrix(data, process, s)?;
    let mixing = exact_reverse_conditional(data, process, s, t)?;
    let mixed = mixing * intermediate;
    Ok((mixed - direct).amax())
}

/// Explicit joint law over `(x0, x_s, x_t)`, stored densely in that index order.
///
/// `x_t` is the state the teacher sees and `x_s` the one the student sees.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleJoint {
    dims: [usize; 3],
    probs: Vec<f64>,
}

impl TripleJoint {
    pub fn new(dims: [usize; 3], probs: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) || probs.len() != dims.iter().product::<usize>() {
            return Err(Error::shape("joint table does not match its dimensions"));
        }
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::domain("joint probabilities must be non-negative"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-10 {
            return Err(Error::domain(format!("joint sums to {sum}")));
        }
        Ok(Self { dims, probs })
    }

    /// Random joint with i.i.d. exponential weights.
    pub fn random(dims: [usize; 3], rng: &mut crate::Rng) -> Result<Self> {
        let len: usize = dims.iter().product();
        let weights: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        Self::new(dims, weights.into_iter().map(|w| w / total).collect())
    }

    /// Joint of the forward chain `x0 -> x_t -> x_s` where the teacher sees
    /// the less noisy `x_t` (time `teacher_time`) and the student sees the
    /// noisier `x_s` (time `student_time >= teacher_time`).
    pub fn from_forward_chain(
        data: &DataDistribution,
        process: &ForwardProcess,
        teacher_time: f64,
        student_time: f64,
    ) -> Result<Self> {
        let n = data.size();
        let first = process.kernel(teacher_time)?;
        let second = process.kernel_between(teacher_time, student_time)?;
        let mut probs = vec![0.0; n * n * n];
        for x0 in 0..n {
            for xs in 0..n {
                for xt in 0..n {
                    probs[(x0 * n + xs) * n + xt] = data.probs()[x0] * first.probs[(x0, xt)] * second.probs[(xt, xs)];
                }
            }
        }
        Self::new([n, n, n], probs)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn prob(&self, x0: usize, xs: usize, xt: usize) -> f64 {
        let [_, ns, nt] = self.dims;
        self.probs[(x0 * ns + xs) * nt + xt]
    }

    /// `p(x0 | x_t)` as a real vector, the optimal squared-error teacher.
    pub fn clean_mean_given_teacher_state(&self) -> Vec<Vec<f64>> {
        let [n0, ns, nt] = self.dims;
        (0..nt)
            .map(|xt| {
                let col: Vec<f64> = (0..n0)
                    .map(|x0| (0..ns).map(|xs| self.prob(x0, xs, xt)).sum())
                    .collect();
                let total: f64 = col.iter().sum();
                col.into_iter()
                    .map(|v| if total > 0.0 { v / total } else { 0.0 })
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenReport {
    pub teacher_mse: f64,
    pub student_mse: f64,
    /// `E_{x_s} Var(teacher(x_t) | x_s)`; equals `teacher_mse - student_mse`.
    pub teacher_variance: f64,
}

/// Squared reconstruction errors of a teacher and of its optimal student.
///
/// The clean state is embedded one-hot in `R^{n0}` and `teacher_values[x_t]`
/// is the teacher's prediction in that space. The student is the
/// conditional mean `gamma(x_s) = E[teacher(x_t) | x_s]`. For every fixed
/// `(x0, x_s)`, errors average `x_t` over `p(x_t | x_s)`, so the student error
/// never exceeds the teacher error.
pub fn jensen_gap_check(joint: &TripleJoint, teacher_values: &[Vec<f64>]) -> Result<JensenReport> {
    let [n0, ns, nt] = joint.dims();
    if teacher_values.len() != nt || teacher_values.iter().any(|v| v.len() != n0) {
        return Err(Error::shape(format!("expected {nt} teacher vectors of length {n0}")));
    }
    let sq_dist_to_onehot = |v: &[f64], x0: usize| -> f64 {
        v.iter()
            .enumerate()
            .map(|(k, &vk)| {
                let d = vk - if k == x0 { 1.0 } else { 0.0 };
                d * d
            })
            .sum()
    };

    let mut teacher_mse = 0.0;
    let mut student_mse = 0.0;
    let mut teacher_variance = 0.0;
    for xs in 0..ns {
        let p_xt_xs: Vec<f64> = (0..nt)
            .map(|xt| (0..n0).map(|x0| joint.prob(x0, xs, xt)).sum())
            .collect();
        let p_xs: f64 = p_xt_xs.iter().sum();
        if p_xs == 0.0 {
            continue;
        }
        let cond: Vec<f64> = p_xt_xs.iter().map(|p| p / p_xs).collect();
        let student: Vec<f64> = (0..n0)
            .map(|k| (0..nt).map(|xt| cond[xt] * teacher_values[xt][k]).sum())
            .collect();
        for x0 in 0..n0 {
            let p_x0_xs: f64 = (0..nt).map(|xt| joint.prob(x0, xs, xt)).sum();
            if p_x0_xs == 0.0 {
                continue;
            }
            student_mse += p_x0_xs * sq_dist_to_onehot(&student, x0);
            let teacher_err: f64 = (0..nt)
                .map(|xt| cond[xt] * sq_dist_to_onehot(&teacher_values[xt], x0))
                .sum();
            teacher_mse += p_x0_xs * teacher_err;
        }
        let var: f64 = (0..nt)
            .map(|xt| {
                cond[xt]
                    * teacher_values[xt]
                        .iter()
                        .zip(&student)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
            })
            .sum();
        teacher_variance += p_xs * var;
    }
    Ok(JensenReport {
        teacher_mse,
        student_mse,
        teacher_variance,
    })
}
