use rand::Rng as _;

use crate::Rng;

/// Inverse-CDF draw from a probability vector. Falls back to the last
/// state with positive mass when rounding leaves the cumulative sum short.
pub(crate) fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let total: f64 = probs.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if target < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn never_draws_zero_mass_states() {
        let mut rng = crate::seeded_rng(3);
        let probs = [0.0, 0.5, 0.0, 0.5, 0.0];
        for _ in 0..2000 {
            let i = sample_categorical(&probs, &mut rng);
            assert!(i == 1 || i == 3);
        }
    }
}
