//! Shared fixtures for the criterion benches.

use coinfection_core::ModelParameters;

/// Reference rates at capacity `k`.
pub fn reference(k: f64) -> ModelParameters {
    ModelParameters {
        b: 4.0,
        k,
        mu0: 1.0,
        mu1: 1.0,
        mu2: 1.2,
        mu3: 1.5,
        rho1: 0.5,
        rho2: 0.6,
        rho3: 0.75,
        mu4p: 0.25,
        alpha1: 0.5,
        alpha2: 0.4,
        alpha3: 0.1,
        beta1: 0.05,
        beta2: 0.05,
        gamma1: 0.1,
        gamma2: 0.1,
        eta1: 0.2,
        eta2: 0.2,
    }
}

/// Rates with weak coinfection coupling, whose coexistence branch appears at
/// a moderate capacity.
pub fn weak_coupling(k: f64) -> ModelParameters {
    ModelParameters { beta1: 1e-3, beta2: 1e-3, gamma1: 1e-3, gamma2: 1e-3, eta1: 0.25, eta2: 0.25, ..reference(k) }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_admissible() {
        assert!(reference(4.0).require_admissible().is_ok());
        assert!(weak_coupling(21.0).require_admissible().is_ok());
    }
}
