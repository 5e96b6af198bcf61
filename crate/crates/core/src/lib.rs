//! Conditional distribution matching distillation for discrete diffusion
//! models over small finite state spaces.
//!
//! The crate is organised bottom-up:
//!
//! - [`ctmc`]: state space, base generator, noise schedule and the exact
//!   forward transition kernels of the time-scaled CTMC.
//! - [`oracle`]: brute-force marginals, concrete scores and Bayes posteriors,
//!   plus numerical checks of the identities the distillation relies on.
//! - [`score`]: tabular teacher/student concrete-score models.
//! - [`posterior`]: conditional ratio matrices and recovery of the reverse
//!   conditional `p(x0 | x_t)` from concrete scores.
//! - [`sampler`]: Euler reverse sampler, exact pushforward of its law and KL
//!   evaluation.
//! - [`distill`]: the distillation training loop with analytic gradients.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctmc;
pub mod distill;
pub mod error;
pub mod oracle;
pub mod posterior;
pub mod sampler;
pub mod score;
mod util;

pub use ctmc::{BaseGenerator, ForwardKernel, ForwardProcess, NoiseSchedule, ScheduleKind, StateSpace};
pub use distill::{DistillConfig, DistillOutcome, IterationRecord, WeightFn};
pub use error::{Error, Result};
pub use oracle::{DataDistribution, ExactMarginal};
pub use posterior::{RatioMatrix, Sanitized};
pub use sampler::{StepKernel, TimeGrid};
pub use score::{Role, ScoreTable};

/// Seeded random source used everywhere randomness is consumed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's random source from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
