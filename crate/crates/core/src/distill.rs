//! Conditional distribution matching distillation.
//!
//! Each training item draws `t`, an intermediate `s = max(eps, t - dt)` with
//! `dt ~ U(0, T/K)`, a clean `x0`, its noised `x_t`, and a detached `x_s` from
//! the student's own Euler step. The student's estimate of `p(x0 | x_t)` at
//! time `t` is then pulled towards the frozen teacher's estimate of
//! `p(x0 | x_s)` at time `s` by cross-entropy:
//!
//! ```text
//! L = -w(t) * sum_x0 q_teacher(x0) * log q_student(x0)
//! ```
//!
//! Both estimates come from the ratio-matrix solve in [`crate::posterior`].
//! The gradient with respect to the student's log-ratios is exact: it runs
//! back through the simplex projection, the linear solve (via the adjoint
//! system) and the exponential parameterisation.

use rand::Rng as _;

use crate::ctmc::ForwardProcess;
use crate::error::{Error, Result};
use crate::oracle::DataDistribution;
use crate::posterior::{sanitize_distribution, RatioMatrix};
use crate::sampler::euler_row;
use crate::score::ScoreTable;
use crate::util::sample_categorical;
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightFn {
    Constant,
    /// `T / t`, capped at `T / eps`.
    InverseT,
}

pub fn weight_value(weight: WeightFn, t: f64, process: &ForwardProcess) -> f64 {
    match weight {
        WeightFn::Constant => 1.0,
        WeightFn::InverseT => {
            let horizon = process.horizon();
            (horizon / t).min(horizon / process.min_time())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    /// Target number of sampling steps `K`.
    pub steps: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_fn: WeightFn,
    pub seed: u64,
    pub batch: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            iterations: 20_000,
            learning_rate: 0.1,
            weight_fn: WeightFn::Constant,
            seed: 0,
            batch: 8,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::domain("K must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::domain("learning_rate must be positive"));
        }
        if self.batch == 0 {
            return Err(Error::domain("batch must be at least 1"));
        }
        Ok(())
    }
}

/// Summary of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Times of the first item in the batch.
    pub t: f64,
    pub s: f64,
    /// Batch means; NaN when every item was skipped.
    pub loss: f64,
    pub viol_teacher: f64,
    pub viol_student: f64,
    /// Euclidean norm of the batch-averaged gradient.
    pub grad_norm: f64,
}

/// Draws `(t, s)`: `t ~ U[eps, T]`, `dt ~ U(0, T/K)`, `s = max(eps, t - dt)`.
pub fn sample_times(config: &DistillConfig, process: &ForwardProcess, rng: &mut Rng) -> (f64, f64) {
    let (eps, horizon) = (process.min_time(), process.horizon());
    let t = eps + (horizon - eps) * rng.random::<f64>();
    let dt = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u * horizon / config.steps as f64;
        }
    };
    (t, (t - dt).max(eps))
}

/// Loss of one training item together with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingLoss {
    pub loss: f64,
    /// `KL(q_teacher || q_student)`, the part of the loss that depends on the student.
    pub kl: f64,
    pub teacher: Vec<f64>,
    pub student: Vec<f64>,
    pub viol_teacher: f64,
    pub viol_student: f64,
    /// Student bucket the gradient belongs to.
    pub bucket: usize,
    /// Gradient with respect to the log-ratio row `(bucket, x_t)`; the
    /// self entry is always zero.
    pub grad: Vec<f64>,
}

/// Evaluates the matching loss for fixed `(t, s, x_t, x_s)` and its
/// gradient with respect to the student's log-ratios at `(b(t), x_t)`.
#[allow(clippy::too_many_arguments)]
pub fn matching_loss(
    student: &ScoreTable,
    teacher: &ScoreTable,
    process: &ForwardProcess,
    t: f64,
    s: f64,
    xt: usize,
    xs: usize,
    weight: f64,
) -> Result<MatchingLoss> {
    let teacher_kernel = process.kernel(s)?;
    let teacher_raw = RatioMatrix::build(&teacher_kernel, xs)?.recover(&teacher.eval(s, xs)?)?;
    let q_teacher = sanitize_distribution(&teacher_raw)?;

    let student_kernel = process.kernel(t)?;
    let ratio_matrix = RatioMatrix::build(&student_kernel, xt)?;
    let scores = student.eval(t, xt)?;
    let student_raw = ratio_matrix.recover(&scores)?;
    let q_student = sanitize_distribution(&student_raw)?;

    let (qt, qs) = (&q_teacher.probs, &q_student.probs);
    if let Some(i) = (0..qt.len()).find(|&i| qt[i] > 0.0 && qs[i] <= 0.0) {
        return Err(Error::Degenerate(format!(
            "student assigns zero mass to x0 = {i} where the teacher has {:.3e}",
            qt[i]
        )));
    }
    let mut cross_entropy = 0.0;
    let mut kl = 0.0;
    for i in 0..qt.len() {
        if qt[i] > 0.0 {
            cross_entropy -= qt[i] * qs[i].ln();
            kl += qt[i] * (qt[i] / qs[i]).ln();
        }
    }

    // dL/dq_i = -w qt_i / qs_i. Through q = u / sum(u), u = max(p, 0), and
    // with sum_i qt_i = 1 on the support of qs, dL/du_j = w (1 - qt_j / qs_j) / Z.
    let mass: f64 = student_raw.iter().map(|v| v.max(0.0)).sum();
    let grad_raw: Vec<f64> = (0..qs.len())
        .map(|j| {
            if student_raw[j] > 0.0 {
                weight * (1.0 - qt[j] / qs[j]) / mass
            } else {
                0.0
            }
        })
        .collect();
    let grad_ratios = ratio_matrix.adjoint_solve(&grad_raw)?;
    let grad = grad_ratios
        .iter()
        .zip(&scores)
        .enumerate()
        .map(|(y, (g, r))| if y == xt { 0.0 } else { g * r })
        .collect();

    Ok(MatchingLoss {
        loss: weight * cross_entropy,
        kl,
        teacher: q_teacher.probs,
        student: q_student.probs,
        viol_teacher: q_teacher.violation,
        viol_student: q_student.violation,
        bucket: student.bucket_of(t)?,
        grad,
    })
}

/// What happened in one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutcome {
    pub record: IterationRecord,
    pub skipped_items: usize,
    pub last_error: Option<Error>,
}

impl IterationOutcome {
    pub fn skipped(&self) -> bool {
        self.record.loss.is_nan()
    }
}

/// One stochastic gradient step on a batch of independent items.
///
/// Items that fail numerically (ill-conditioned solve, degenerate
/// projection) are skipped and counted; the step averages over the rest.
#[allow(clippy::too_many_arguments)]
pub fn distill_iteration(
    student: &mut ScoreTable,
    teacher: &ScoreTable,
    data: &DataDistribution,
    process: &ForwardProcess,
    config: &DistillConfig,
    iter: usize,
    rng: &mut Rng,
) -> Result<IterationOutcome> {
    let mut grad_sum = vec![0.0; student.params().len()];
    let (mut loss_sum, mut viol_t_sum, mut viol_s_sum) = (0.0, 0.0, 0.0);
    let mut used = 0usize;
    let mut skipped_items = 0usize;
    let mut last_error = None;
    let mut first_times = None;

    for _ in 0..config.batch {
        let (t, s) = sample_times(config, process, rng);
        first_times.get_or_insert((t, s));
        let x0 = data.sample(rng);
        let xt = process.kernel(t)?.sample(x0, rng)?;
        let item = euler_row(process, t, s, xt, &student.eval(t, xt)?).and_then(|(row, _)| {
            let xs = sample_categorical(&row, rng);
            let weight = weight_value(config.weight_fn, t, process);
            matching_loss(student, teacher, process, t, s, xt, xs, weight)
        });
        match item {
            Ok(item) => {
                let offset = student.row_offset(item.bucket, xt);
                for (g, v) in grad_sum[offset..offset + item.grad.len()].iter_mut().zip(&item.grad) {
                    *g += v;
                }
                loss_sum += item.loss;
                viol_t_sum += item.viol_teacher;
                viol_s_sum += item.viol_student;
                used += 1;
            }
            Err(e) if e.is_numerical() => {
                skipped_items += 1;
                last_error = Some(e);
            }
            Err(e) => return Err(e),
        }
    }

    let (t, s) = first_times.unwrap_or((f64::NAN, f64::NAN));
    if used == 0 {
        return Ok(IterationOutcome {
            record: IterationRecord {
                iter,
                t,
                s,
                loss: f64::NAN,
                viol_teacher: f64::NAN,
                viol_student: f64::NAN,
                grad_norm: 0.0,
            },
            skipped_items,
            last_error,
        });
    }
    let scale = 1.0 / used as f64;
    for g in grad_sum.iter_mut() {
        *g *= scale;
    }
    let grad_norm = grad_sum.iter().map(|g| g * g).sum::<f64>().sqrt();
    student.descend(&grad_sum, config.learning_rate);

    Ok(IterationOutcome {
        record: IterationRecord {
            iter,
            t,
            s,
            loss: loss_sum * scale,
            viol_teacher: viol_t_sum * scale,
            viol_student: viol_s_sum * scale,
            grad_norm,
        },
        skipped_items,
        last_error,
    })
}

#[derive(Debug, Clone)]
pub struct DistillOutcome {
    pub student: ScoreTable,
    pub records: Vec<IterationRecord>,
    pub skipped_iterations: usize,
    pub skipped_items: usize,
}

/// Full training run: the student starts as a copy of the teacher.
/// Deterministic for a given seed.
pub fn run_distillation(
    teacher: &ScoreTable,
    data: &DataDistribution,
    process: &ForwardProcess,
    config: &DistillConfig,
) -> Result<DistillOutcome> {
    config.validate()?;
    if teacher.states() != process.size() || data.size() != process.size() {
        return Err(Error::shape("teacher, data and process sizes differ"));
    }
    let mut student = teacher.clone_as_student();
    let mut rng = crate::seeded_rng(config.seed);
    let mut records = Vec::with_capacity(config.iterations);
    let mut skipped_iterations = 0;
    let mut skipped_items = 0;
    for iter in 0..config.iterations {
        let outcome = distill_iteration(&mut student, teacher, data, process, config, iter, &mut rng)?;
        skipped_items += outcome.skipped_items;
        if outcome.skipped() {
            skipped_iterations += 1;
            if 2 * skipped_iterations > config.iterations {
                return Err(Error::TooManySkipped {
                    skipped: skipped_iterations,
                    total: config.iterations,
                    last_error: outcome.last_error.map(|e| e.to_string()).unwrap_or_default(),
                });
            }
        }
        records.push(outcome.record);
    }
    Ok(DistillOutcome {
        student,
        records,
        skipped_iterations,
        skipped_items,
    })
}
