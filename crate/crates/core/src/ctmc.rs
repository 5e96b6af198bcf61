//! Forward continuous-time Markov chain with generator `Q_t = sigma(t) * Q`.
//!
//! Because every `Q_t` is a scalar multiple of one base matrix they all
//! commute, and the forward transition kernel has the closed form
//!
//! ```text
//! P_{t|0} = S * diag(exp(lambda * tau(t))) * S^-1,   tau(t) = int_0^t sigma(u) du
//! ```
//!
//! where `Q = S diag(lambda) S^-1`. Kernels are row-stochastic with entry
//! `(i, j) = p(x_t = j | x_0 = i)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::util::sample_categorical;
use crate::Rng;

/// Entries in `[-CLAMP_TOL, 0)` are rounding noise and get zeroed.
pub const CLAMP_TOL: f64 = 1e-12;
/// Allowed row-sum drift of a kernel before renormalisation.
pub const ROW_SUM_TOL: f64 = 1e-8;
/// Smallest time used by score evaluation, as a fraction of the horizon.
pub const MIN_TIME_FRACTION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateSpace {
    size: usize,
}

impl StateSpace {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::domain("state space must contain at least one state"));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// A CTMC rate matrix together with its eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseGenerator {
    rates: DMatrix<f64>,
    eigenvectors: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors_inv: DMatrix<f64>,
}

impl BaseGenerator {
    /// The uniform generator `E - N*I`: every state jumps to every other
    /// state at unit rate.
    ///
    /// The eigendecomposition is written down directly. The all-ones vector
    /// spans the eigenvalue-0 space and the Helmert contrasts form an
    /// orthonormal basis of its complement, where every eigenvalue is `-N`.
    pub fn uniform(space: StateSpace) -> Self {
        let n = space.size();
        let nf = n as f64;
        let rates = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - nf } else { 1.0 });

        let mut eigenvectors = DMatrix::zeros(n, n);
        let inv_sqrt_n = 1.0 / nf.sqrt();
        for i in 0..n {
            eigenvectors[(i, 0)] = inv_sqrt_n;
        }
        for k in 1..n {
            let kf = k as f64;
            let norm = (kf * (kf + 1.0)).sqrt();
            for i in 0..k {
                eigenvectors[(i, k)] = 1.0 / norm;
            }
            eigenvectors[(k, k)] = -kf / norm;
        }
        let eigenvalues = DVector::from_fn(n, |k, _| if k == 0 { 0.0 } else { -nf });
        let eigenvectors_inv = eigenvectors.transpose();

        Self {
            rates,
            eigenvectors,
            eigenvalues,
            eigenvectors_inv,
        }
    }

    /// Builds a generator from a symmetric rate matrix using a numerical
    /// symmetric eigensolver.
    pub fn from_symmetric(rates: DMatrix<f64>) -> Result<Self> {
        validate_rates(&rates)?;
        let n = rates.nrows();
        for i in 0..n {
            for j in 0..i {
                if (rates[(i, j)] - rates[(j, i)]).abs() > 1e-12 {
                    return Err(Error::domain("rate matrix is not symmetric"));
                }
            }
        }
        let eig = SymmetricEigen::new(rates.clone());
        let eigenvectors_inv = eig.eigenvectors.transpose();
        Self::from_parts(rates, eig.eigenvectors, eig.eigenvalues, eigenvectors_inv)
    }

    /// Assembles a generator from an explicit decomposition, checking that it
    /// reconstructs the rate matrix.
    pub fn from_parts(
        rates: DMatrix<f64>,
        eigenvectors: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        eigenvectors_inv: DMatrix<f64>,
    ) -> Result<Self> {
        validate_rates(&rates)?;
        let n = rates.nrows();
        if eigenvectors.shape() != (n, n) || eigenvectors_inv.shape() != (n, n) || eigenvalues.len() != n {
            return Err(Error::shape("eigendecomposition does not match the rate matrix"));
        }
        let generator = Self {
            rates,
            eigenvectors,
            eigenvalues,
            eigenvectors_inv,
        };
        let err = generator.reconstruction_error();
        if err > 1e-10 {
            return Err(Error::Numerical(format!(
                "eigendecomposition reconstructs Q only to {err:.3e}"
            )));
        }
        Ok(generator)
    }

    pub fn size(&self) -> usize {
        self.rates.nrows()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors_inv(&self) -> &DMatrix<f64> {
        &self.eigenvectors_inv
    }

    /// Max entrywise deviation of `S diag(lambda) S^-1` from `Q`.
    pub fn reconstruction_error(&self) -> f64 {
        let rebuilt = &self.eigenvectors * DMatrix::from_diagonal(&self.eigenvalues) * &self.eigenvectors_inv;
        (rebuilt - &self.rates).amax()
    }

    /// `exp(tau * Q)` through the eigendecomposition, with tiny negative
    /// entries clamped and rows renormalised.
    pub fn transition_matrix(&self, tau: f64) -> Result<DMatrix<f64>> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(Error::domain(format!(
                "integrated noise must be finite and >= 0, got {tau}"
            )));
        }
        let n = self.size();
        if tau == 0.0 {
            return Ok(DMatrix::identity(n, n));
        }
        let decay = self.eigenvalues.map(|l| (l * tau).exp());
        let mut p = &self.eigenvectors * DMatrix::from_diagonal(&decay) * &self.eigenvectors_inv;
        for i in 0..n {
            let mut sum = 0.0;
            for j in 0..n {
                let v = p[(i, j)];
                if v < -CLAMP_TOL || !v.is_finite() {
                    return Err(Error::Numerical(format!(
                        "kernel entry ({i}, {j}) = {v:.3e} at tau = {tau}"
                    )));
                }
                if v < 0.0 {
                    p[(i, j)] = 0.0;
                }
                sum += p[(i, j)];
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Numerical(format!("kernel row {i} sums to {sum} at tau = {tau}")));
            }
            for j in 0..n {
                p[(i, j)] /= sum;
            }
        }
        Ok(p)
    }
}

fn validate_rates(rates: &DMatrix<f64>) -> Result<()> {
    let n = rates.nrows();
    if n == 0 || rates.ncols() != n {
        return Err(Error::shape("rate matrix must be square and non-empty"));
    }
    for i in 0..n {
        let mut sum = 0.0;
        for j in 0..n {
            let v = rates[(i, j)];
            if !v.is_finite() {
                return Err(Error::domain("rate matrix has non-finite entries"));
            }
            if i != j && v < 0.0 {
                return Err(Error::domain(format!("negative off-diagonal rate at ({i}, {j})")));
            }
            sum += v;
        }
        if sum.abs() > 1e-12 {
            return Err(Error::domain(format!("row {i} of the rate matrix sums to {sum}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    /// `sigma(t) = rate`.
    Constant { rate: f64 },
    /// `sigma(t) = scale * base^t`.
    Geometric { scale: f64, base: f64 },
}

/// Scalar time-scaling `sigma(t)` of the base generator on `[0, horizon]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    horizon: f64,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("terminal time must be positive, got {horizon}")));
        }
        let ok = match kind {
            ScheduleKind::Constant { rate } => rate > 0.0 && rate.is_finite(),
            ScheduleKind::Geometric { scale, base } => {
                scale > 0.0 && scale.is_finite() && base > 0.0 && base.is_finite()
            }
        };
        if !ok {
            return Err(Error::domain(format!("invalid schedule parameters {kind:?}")));
        }
        Ok(Self { kind, horizon })
    }

    pub fn constant(rate: f64, horizon: f64) -> Result<Self> {
        Self::new(ScheduleKind::Constant { rate }, horizon)
    }

    pub fn geometric(scale: f64, base: f64, horizon: f64) -> Result<Self> {
        Self::new(ScheduleKind::Geometric { scale, base }, horizon)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Terminal time `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Smallest time at which scores and posteriors are evaluated.
    pub fn min_time(&self) -> f64 {
        MIN_TIME_FRACTION * self.horizon
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Constant { rate } => rate,
            ScheduleKind::Geometric { scale, base } => scale * base.powf(t),
        })
    }

    /// `int_0^t sigma(u) du` in closed form.
    pub fn integrated(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.kind {
            ScheduleKind::Constant { rate } => rate * t,
            ScheduleKind::Geometric { scale, base } => {
                let log_base = base.ln();
                if log_base == 0.0 {
                    scale * t
                } else {
                    scale * (t * log_base).exp_m1() / log_base
                }
            }
        })
    }
}

/// Row-stochastic forward kernel between two times.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardKernel {
    /// Time the kernel transports to.
    pub t: f64,
    /// Integrated noise the kernel spans.
    pub tau: f64,
    pub probs: DMatrix<f64>,
}

impl ForwardKernel {
    pub fn size(&self) -> usize {
        self.probs.nrows()
    }

    pub fn row(&self, from: usize) -> Vec<f64> {
        self.probs.row(from).iter().copied().collect()
    }

    /// Draws the noised state given the starting state `x0`.
    pub fn sample(&self, x0: usize, rng: &mut Rng) -> Result<usize> {
        if x0 >= self.size() {
            return Err(Error::domain(format!("state {x0} outside [0, {})", self.size())));
        }
        Ok(sample_categorical(&self.row(x0), rng))
    }
}

/// Base generator paired with its noise schedule: the full forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardProcess {
    pub generator: BaseGenerator,
    pub schedule: NoiseSchedule,
}

impl ForwardProcess {
    pub fn new(generator: BaseGenerator, schedule: NoiseSchedule) -> Self {
        Self { generator, schedule }
    }

    pub fn size(&self) -> usize {
        self.generator.size()
    }

    pub fn horizon(&self) -> f64 {
        self.schedule.horizon()
    }

    pub fn min_time(&self) -> f64 {
        self.schedule.min_time()
    }

    /// `p_{t|0}`.
    pub fn kernel(&self, t: f64) -> Result<ForwardKernel> {
        let tau = self.schedule.integrated(t)?;
        Ok(ForwardKernel {
            t,
            tau,
            probs: self.generator.transition_matrix(tau)?,
        })
    }

    /// `p_{t|s}` for `s <= t`.
    pub fn kernel_between(&self, s: f64, t: f64) -> Result<ForwardKernel> {
        if s > t {
            return Err(Error::domain(format!("kernel_between needs s <= t, got s={s}, t={t}")));
        }
        let tau = (self.schedule.integrated(t)? - self.schedule.integrated(s)?).max(0.0);
        Ok(ForwardKernel {
            t,
            tau,
            probs: self.generator.transition_matrix(tau)?,
        })
    }

    /// The time-`t` generator `sigma(t) * Q`.
    pub fn rate_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.generator.rates() * self.schedule.sigma(t)?)
    }

    /// Reverse-time generator built from concrete scores:
    /// `Qrev(x, y) = ratios[x][y] * Q_t(y, x)` off the diagonal, rows summing to zero.
    pub fn reverse_rate_matrix(&self, t: f64, ratios: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let n = self.size();
        if ratios.len() != n || ratios.iter().any(|r| r.len() != n) {
            return Err(Error::shape(format!("expected {n} ratio vectors of length {n}")));
        }
        if let Some((x, y)) = (0..n)
            .flat_map(|x| (0..n).map(move |y| (x, y)))
            .find(|&(x, y)| !(ratios[x][y] > 0.0) || !ratios[x][y].is_finite())
        {
            return Err(Error::domain(format!(
                "ratio ({x}, {y}) = {} is not positive",
                ratios[x][y]
            )));
        }
        let forward = self.rate_matrix(t)?;
        let mut reverse = DMatrix::zeros(n, n);
        for x in 0..n {
            let mut out = 0.0;
            for y in 0..n {
                if y != x {
                    let rate = ratios[x][y] * forward[(y, x)];
                    reverse[(x, y)] = rate;
                    out += rate;
                }
            }
            reverse[(x, x)] = -out;
        }
        Ok(reverse)
    }
}

/// `exp(tau * Q)` by scaling and squaring a 40-term Taylor series.
///
/// Independent of the eigendecomposition; used to cross-check kernels.
pub fn transition_matrix_series(generator: &BaseGenerator, tau: f64) -> DMatrix<f64> {
    const TERMS: usize = 40;
    let n = generator.size();
    let a = generator.rates() * tau;
    let norm = (0..n)
        .map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = a * scale;
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=TERMS {
        term = &term * &a / k as f64;
        result += &term;
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn uniform_process(n: usize, rate: f64) -> ForwardProcess {
        ForwardProcess::new(
            BaseGenerator::uniform(StateSpace::new(n).unwrap()),
            NoiseSchedule::constant(rate, 1.0).unwrap(),
        )
    }

    #[test]
    fn uniform_generator_small_cases() {
        let g2 = BaseGenerator::uniform(StateSpace::new(2).unwrap());
        assert_eq!(g2.rates(), &DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -1.0]));
        let g1 = BaseGenerator::uniform(StateSpace::new(1).unwrap());
        assert_eq!(g1.rates(), &DMatrix::from_element(1, 1, 0.0));
        assert_eq!(g1.transition_matrix(3.0).unwrap(), DMatrix::identity(1, 1));
    }

    #[test]
    fn uniform_generator_matches_numerical_eigensolver() {
        let g = BaseGenerator::uniform(StateSpace::new(3).unwrap());
        assert!(g.reconstruction_error() < 1e-10);
        let numeric = SymmetricEigen::new(g.rates().clone());
        let mut ours: Vec<f64> = g.eigenvalues().iter().copied().collect();
        let mut theirs: Vec<f64> = numeric.eigenvalues.iter().copied().collect();
        ours.sort_by(f64::total_cmp);
        theirs.sort_by(f64::total_cmp);
        for (a, b) in ours.iter().zip(&theirs) {
            assert!((a - b).abs() < 1e-12, "{ours:?} vs {theirs:?}");
        }
        assert_eq!(ours, vec![-3.0, -3.0, 0.0]);
    }

    #[test]
    fn generator_invariants_hold_for_many_sizes() {
        for n in 1..=16 {
            let g = BaseGenerator::uniform(StateSpace::new(n).unwrap());
            for i in 0..n {
                assert!(g.rates().row(i).sum().abs() < 1e-12);
            }
            assert!(g.reconstruction_error() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn from_parts_rejects_bad_decomposition() {
        let g = BaseGenerator::uniform(StateSpace::new(3).unwrap());
        let wrong = DVector::from_vec(vec![0.0, -3.0, -2.0]);
        let err = BaseGenerator::from_parts(
            g.rates().clone(),
            g.eigenvectors().clone(),
            wrong,
            g.eigenvectors_inv().clone(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
        let bad_rates = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 1.0, -2.0]);
        assert!(BaseGenerator::from_symmetric(bad_rates).is_err());
    }

    #[test]
    fn integrated_noise_closed_forms() {
        let c = NoiseSchedule::constant(1.0, 1.0).unwrap();
        assert_eq!(c.integrated(0.5).unwrap(), 0.5);
        assert_eq!(c.integrated(0.0).unwrap(), 0.0);
        let g = NoiseSchedule::geometric(0.1, 50.0, 1.0).unwrap();
        assert_eq!(g.integrated(0.0).unwrap(), 0.0);
        assert!(c.integrated(1.5).is_err());
        assert!(c.integrated(-1e-9).is_err());
        let flat = NoiseSchedule::geometric(2.0, 1.0, 1.0).unwrap();
        assert_eq!(flat.integrated(0.25).unwrap(), 0.5);
    }

    #[test]
    fn geometric_integral_matches_quadrature() {
        // Composite Simpson with 2^16 panels; error ~ h^4 * max|f''''| is far below 1e-10.
        for (scale, base, horizon) in [(0.1, 50.0, 1.0), (2.0, 0.3, 2.5), (0.5, 1e3, 1.0)] {
            let sched = NoiseSchedule::geometric(scale, base, horizon).unwrap();
            let panels = 1usize << 16;
            let h = horizon / panels as f64;
            let f = |t: f64| scale * base.powf(t);
            let mut acc = f(0.0) + f(horizon);
            for k in 1..panels {
                acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
            }
            let quad = acc * h / 3.0;
            let exact = sched.integrated(horizon).unwrap();
            assert!((quad - exact).abs() < 1e-10, "{quad} vs {exact}");
        }
    }

    #[test]
    fn integrated_noise_is_strictly_increasing() {
        let sched = NoiseSchedule::geometric(0.2, 20.0, 1.0).unwrap();
        let mut prev = -1.0;
        for k in 0..=100 {
            let v = sched.integrated(k as f64 / 100.0).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn kernel_at_zero_is_exact_identity() {
        let proc = uniform_process(5, 1.0);
        assert_eq!(proc.kernel(0.0).unwrap().probs, DMatrix::identity(5, 5));
    }

    #[test]
    fn two_state_kernel_at_half_decay() {
        let proc = uniform_process(2, 1.0);
        let t = 2f64.ln() / 2.0;
        let k = proc.kernel(t).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.75, 0.25, 0.25, 0.75]);
        assert!((&k.probs - &expected).amax() < 1e-12);
        let series = transition_matrix_series(&proc.generator, t);
        assert!((&series - &expected).amax() < 1e-10);
    }

    #[test]
    fn series_oracle_basic_properties() {
        let g = BaseGenerator::uniform(StateSpace::new(8).unwrap());
        assert_eq!(transition_matrix_series(&g, 0.0), DMatrix::identity(8, 8));
        let p = transition_matrix_series(&g, 3.0);
        for i in 0..8 {
            assert!((p.row(i).sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn closed_form_matches_series_for_random_times() {
        let mut rng = crate::seeded_rng(11);
        for _ in 0..30 {
            let n = rng.random_range(2..=16);
            let g = BaseGenerator::uniform(StateSpace::new(n).unwrap());
            let tau = rng.random_range(0.0..3.0);
            let diff = (g.transition_matrix(tau).unwrap() - transition_matrix_series(&g, tau)).amax();
            assert!(diff < 1e-9, "n={n} tau={tau} diff={diff}");
        }
    }

    #[test]
    fn non_uniform_symmetric_generator_matches_series() {
        // Birth-death chain on 5 states.
        let n = 5;
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n - 1 {
            let r = 0.5 + i as f64;
            q[(i, i + 1)] = r;
            q[(i + 1, i)] = r;
        }
        for i in 0..n {
            let s: f64 = q.row(i).sum();
            q[(i, i)] = -s;
        }
        let g = BaseGenerator::from_symmetric(q).unwrap();
        for tau in [0.01, 0.3, 2.0] {
            let diff = (g.transition_matrix(tau).unwrap() - transition_matrix_series(&g, tau)).amax();
            assert!(diff < 1e-9);
        }
    }

    #[test]
    fn uniform_kernel_converges_at_analytic_rate() {
        for n in [2, 4, 7] {
            let g = BaseGenerator::uniform(StateSpace::new(n).unwrap());
            for tau in [0.1, 0.5, 1.0, 3.0] {
                let p = g.transition_matrix(tau).unwrap();
                let bound = (-(n as f64) * tau).exp();
                assert!(p.iter().all(|&v| (v - 1.0 / n as f64).abs() <= bound + 1e-15));
            }
        }
    }

    #[test]
    fn chapman_kolmogorov_composition() {
        let proc = ForwardProcess::new(
            BaseGenerator::uniform(StateSpace::new(6).unwrap()),
            NoiseSchedule::geometric(0.1, 40.0, 1.0).unwrap(),
        );
        for (s, t) in [(0.1, 0.2), (0.3, 0.9), (0.5, 0.5), (0.0, 1.0)] {
            let composed = proc.kernel(s).unwrap().probs * proc.kernel_between(s, t).unwrap().probs;
            assert!((composed - proc.kernel(t).unwrap().probs).amax() < 1e-9);
        }
    }

    #[test]
    fn forward_sample_identity_and_frequency() {
        let proc = uniform_process(3, 1.0);
        let id = proc.kernel(0.0).unwrap();
        let mut rng = crate::seeded_rng(1);
        for x0 in 0..3 {
            assert_eq!(id.sample(x0, &mut rng).unwrap(), x0);
        }
        assert!(id.sample(3, &mut rng).is_err());

        let k = uniform_process(2, 1.0).kernel(2f64.ln() / 2.0).unwrap();
        let draws = 100_000;
        let hits = (0..draws).filter(|_| k.sample(0, &mut rng).unwrap() == 0).count();
        let freq = hits as f64 / draws as f64;
        let se = (0.75f64 * 0.25 / draws as f64).sqrt();
        assert!((freq - 0.75).abs() < 3.0 * se, "freq={freq}");
    }

    #[test]
    fn forward_sample_is_deterministic_per_seed() {
        let k = uniform_process(4, 1.0).kernel(0.3).unwrap();
        let run = |seed| {
            let mut rng = crate::seeded_rng(seed);
            (0..50).map(|i| k.sample(i % 4, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
    }

    #[test]
    fn reverse_rates_at_unit_ratios_equal_forward_rates() {
        let proc = uniform_process(4, 2.0);
        let ones = vec![vec![1.0; 4]; 4];
        let rev = proc.reverse_rate_matrix(0.3, &ones).unwrap();
        assert!((rev - proc.rate_matrix(0.3).unwrap()).amax() < 1e-15);
    }

    #[test]
    fn reverse_rates_rows_sum_to_zero() {
        let proc = uniform_process(5, 1.3);
        let mut rng = crate::seeded_rng(4);
        let ratios: Vec<Vec<f64>> = (0..5)
            .map(|x| {
                (0..5)
                    .map(|y| if x == y { 1.0 } else { rng.random_range(0.01..10.0) })
                    .collect()
            })
            .collect();
        let rev = proc.reverse_rate_matrix(0.7, &ratios).unwrap();
        for i in 0..5 {
            assert!(rev.row(i).sum().abs() < 1e-12);
        }
        let mut bad = ratios.clone();
        bad[1][2] = 0.0;
        assert!(matches!(proc.reverse_rate_matrix(0.7, &bad), Err(Error::Domain(_))));
    }
}
