//! Random parameter sets and initial states for property checks and
//! simulation-based verification.

use rand::Rng;

use crate::model::{ModelParameters, State};

/// Draws rates until the threshold ordering holds with a small margin.
/// Capacity is chosen so the disease-free susceptible level spans both
/// sides of the first threshold.
pub fn random_admissible<R: Rng + ?Sized>(rng: &mut R) -> ModelParameters {
    loop {
        let b = rng.random_range(1.0..6.0);
        let mu0 = b * rng.random_range(0.05..0.8);
        let alpha1 = rng.random_range(0.2..1.0);
        let alpha2 = rng.random_range(0.2..1.0);
        let alpha3 = rng.random_range(0.01..0.3);
        let beta1 = rng.random_range(0.005..0.1);
        let beta2 = rng.random_range(0.005..0.1);
        let gamma1 = rng.random_range(0.01..0.3);
        let gamma2 = rng.random_range(0.01..0.3);
        let eta1 = rng.random_range(0.01..0.5);
        let eta2 = rng.random_range(0.01..0.5);
        let sigma1 = rng.random_range(0.3..4.0);
        let sigma2 = sigma1 * rng.random_range(1.05..3.0);
        let sigma3 = sigma2 * rng.random_range(1.05..3.0);
        let mu1 = alpha1 * sigma1;
        let mu2 = alpha2 * sigma2;
        let mu3 = (alpha3 + beta1 + beta2) * sigma3;
        let s_star_star = rng.random_range(0.5 * sigma1..1.5 * sigma3);
        let k = s_star_star / (1.0 - mu0 / b);
        let p = ModelParameters {
            b,
            k,
            mu0,
            mu1,
            mu2,
            mu3,
            rho1: mu1 * rng.random_range(0.1..0.9),
            rho2: mu2 * rng.random_range(0.1..0.9),
            rho3: mu3 * rng.random_range(0.1..0.9),
            mu4p: rng.random_range(0.05..1.0),
            alpha1,
            alpha2,
            alpha3,
            beta1,
            beta2,
            gamma1,
            gamma2,
            eta1,
            eta2,
        };
        if p.check_admissible_with_margin(1e-6).is_accepted() {
            return p;
        }
    }
}

/// Strictly positive state with every class drawn from `[lo, hi)` and
/// recovered drawn from `[0, hi)`.
pub fn random_initial_state<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> State {
    State::new(
        0.0,
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(lo..hi),
        rng.random_range(0.0..hi),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn draws_are_admissible_and_reproducible() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p = random_admissible(&mut a);
            assert!(p.require_admissible().is_ok());
            assert_eq!(p, random_admissible(&mut b));
        }
    }

    #[test]
    fn both_sides_of_first_threshold_are_drawn() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<_> = (0..200).map(|_| random_admissible(&mut rng)).collect();
        let above = draws.iter().filter(|p| p.s_star_star() > p.mu1 / p.alpha1).count();
        assert!(above > 20 && above < 190, "{above}");
    }

    #[test]
    fn initial_states_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = random_initial_state(&mut rng, 0.1, 5.0);
            assert!(s.classes().iter().all(|v| *v >= 0.1 && *v < 5.0));
            assert!(s.r >= 0.0);
        }
    }
}
