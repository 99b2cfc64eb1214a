//! Parameters, derived thresholds and right-hand sides of the coinfection model.
//!
//! The state is ordered `(S, I1, I2, I12, R)`. The susceptible class grows
//! logistically towards the carrying capacity `K`; infected classes do not
//! reproduce. The recovered class `R` never feeds back into the first four
//! equations and is carried along passively.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate constants of the reduced (susceptible-only logistic) model.
///
/// `mu1..mu3` are *total* removal rates of the infected classes, i.e.
/// recovery plus death. They must dominate the matching recovery rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParameters {
    pub b: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub mu4p: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub eta1: f64,
    pub eta2: f64,
}

/// How the logistic birth term of each class measures crowding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Crowding {
    /// `b_i (1 - N / K_i)` with `N` the whole population.
    #[default]
    Total,
    /// `b_i (1 - X_i / K_i)` with `X_i` the density of the class itself.
    Own,
}

/// Per-class birth rates and carrying capacities of the five-class model.
///
/// The susceptible class uses `base.b` and `k1`; `base.k` is not read by
/// [`rhs_full`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullModelParameters {
    pub base: ModelParameters,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub crowding: Crowding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedQuantities {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub alpha3_hat: f64,
    pub s_star_star: f64,
}

/// A point of a trajectory. Densities are in individuals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub t: f64,
    pub s: f64,
    pub i1: f64,
    pub i2: f64,
    pub i12: f64,
    pub r: f64,
}

impl State {
    pub fn new(t: f64, s: f64, i1: f64, i2: f64, i12: f64, r: f64) -> Self {
        State { t, s, i1, i2, i12, r }
    }

    pub fn from_array(t: f64, y: [f64; 5]) -> Self {
        State::new(t, y[0], y[1], y[2], y[3], y[4])
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.s, self.i1, self.i2, self.i12, self.r]
    }

    /// `(S, I1, I2, I12)`, the coordinates every analysis works on.
    pub fn classes(&self) -> [f64; 4] {
        [self.s, self.i1, self.i2, self.i12]
    }

    pub fn total(&self) -> f64 {
        self.s + self.i1 + self.i2 + self.i12 + self.r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Admissibility {
    /// Strict threshold ordering and `b > mu0`.
    Admissible,
    /// Admissible with every cross-transmission rate zero.
    LotkaVolterra,
    Inadmissible(Vec<String>),
}

impl Admissibility {
    pub fn is_accepted(&self) -> bool {
        !matches!(self, Admissibility::Inadmissible(_))
    }
}

impl fmt::Display for Admissibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Admissibility::Admissible => write!(f, "admissible"),
            Admissibility::LotkaVolterra => write!(f, "admissible (Lotka-Volterra limit)"),
            Admissibility::Inadmissible(reasons) => write!(f, "inadmissible: {}", reasons.join("; ")),
        }
    }
}

/// Anything that produces the time derivative of `(S, I1, I2, I12, R)`.
pub trait Dynamics {
    fn rhs(&self, y: &[f64; 5]) -> [f64; 5];
}

impl ModelParameters {
    pub fn alpha3_hat(&self) -> f64 {
        self.alpha3 + self.beta1 + self.beta2
    }

    pub fn s_star_star(&self) -> f64 {
        self.k * (1.0 - self.mu0 / self.b)
    }

    pub fn with_k(&self, k: f64) -> Self {
        ModelParameters { k, ..*self }
    }

    /// Same rates with `beta1 = beta2 = gamma1 = gamma2 = 0`.
    pub fn lotka_volterra_limit(&self) -> Self {
        ModelParameters { beta1: 0.0, beta2: 0.0, gamma1: 0.0, gamma2: 0.0, ..*self }
    }

    pub fn is_lotka_volterra(&self) -> bool {
        self.beta1 == 0.0 && self.beta2 == 0.0 && self.gamma1 == 0.0 && self.gamma2 == 0.0
    }

    /// `beta1 > 0`, `beta2 > 0` and `gamma1 + gamma2 > 0`.
    pub fn nonvanishing(&self) -> bool {
        self.beta1 > 0.0 && self.beta2 > 0.0 && self.gamma1 + self.gamma2 > 0.0
    }

    fn fields(&self) -> [(&'static str, f64); 19] {
        [
            ("b", self.b),
            ("K", self.k),
            ("mu0", self.mu0),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("mu3", self.mu3),
            ("rho1", self.rho1),
            ("rho2", self.rho2),
            ("rho3", self.rho3),
            ("mu4p", self.mu4p),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("eta1", self.eta1),
            ("eta2", self.eta2),
        ]
    }

    /// Field-level checks: finiteness, signs, `K > 0`, `mu_i >= rho_i`.
    pub fn validate(&self) -> Result<()> {
        for (field, value) in self.fields() {
            if !value.is_finite() {
                return Err(Error::InvalidParameter { field, reason: format!("{value} is not finite") });
            }
            if value < 0.0 {
                return Err(Error::InvalidParameter { field, reason: format!("{value} is negative") });
            }
        }
        if self.k <= 0.0 {
            return Err(Error::InvalidParameter { field: "K", reason: "carrying capacity must be positive".into() });
        }
        for (field, mu, rho) in
            [("mu1", self.mu1, self.rho1), ("mu2", self.mu2, self.rho2), ("mu3", self.mu3, self.rho3)]
        {
            if mu < rho {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("total removal rate {mu} is below its recovery rate {rho}"),
                });
            }
        }
        Ok(())
    }

    pub fn derive(&self) -> Result<DerivedQuantities> {
        self.validate()?;
        if self.b <= self.mu0 {
            return Err(Error::Inadmissible(format!("b ≤ μ0 ({} ≤ {})", self.b, self.mu0)));
        }
        let alpha3_hat = self.alpha3_hat();
        for (name, value) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3 + beta1 + beta2", alpha3_hat)]
        {
            if value == 0.0 {
                return Err(Error::Degenerate(format!("{name} vanishes, threshold undefined")));
            }
        }
        Ok(DerivedQuantities {
            sigma1: self.mu1 / self.alpha1,
            sigma2: self.mu2 / self.alpha2,
            sigma3: self.mu3 / alpha3_hat,
            alpha3_hat,
            s_star_star: self.s_star_star(),
        })
    }

    pub fn check_admissible(&self) -> Admissibility {
        self.check_admissible_with_margin(0.0)
    }

    /// Threshold ordering must hold with at least `margin` of separation.
    pub fn check_admissible_with_margin(&self, margin: f64) -> Admissibility {
        let mut reasons = Vec::new();
        if let Err(e) = self.validate() {
            reasons.push(e.to_string());
            return Admissibility::Inadmissible(reasons);
        }
        if self.b <= self.mu0 {
            reasons.push("b ≤ μ0".to_string());
        }
        if self.alpha1 == 0.0 || self.alpha2 == 0.0 || self.alpha3_hat() == 0.0 {
            reasons.push("a transmission rate defining a threshold vanishes".to_string());
        } else {
            let s1 = self.mu1 / self.alpha1;
            let s2 = self.mu2 / self.alpha2;
            let s3 = self.mu3 / self.alpha3_hat();
            if !(s1 + margin < s2) {
                reasons.push(format!("σ1 < σ2 fails ({s1} vs {s2})"));
            }
            if !(s2 + margin < s3) {
                reasons.push(format!("σ2 < σ3 fails ({s2} vs {s3})"));
            }
        }
        if !reasons.is_empty() {
            Admissibility::Inadmissible(reasons)
        } else if self.is_lotka_volterra() {
            Admissibility::LotkaVolterra
        } else {
            Admissibility::Admissible
        }
    }

    /// Fails with [`Error::Inadmissible`] unless [`check_admissible`](Self::check_admissible) accepts.
    pub fn require_admissible(&self) -> Result<DerivedQuantities> {
        self.validate()?;
        match self.check_admissible() {
            Admissibility::Inadmissible(reasons) => Err(Error::Inadmissible(reasons.join("; "))),
            _ => self.derive(),
        }
    }

    /// Stable 64-bit digest of the parameter record, used to tie trajectories
    /// to the parameters that produced them.
    pub fn digest(&self) -> u64 {
        // FNV-1a over the bit patterns.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, v) in self.fields() {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Right-hand side of the reduced model at `(S, I1, I2, I12, R)`.
pub fn rhs_sub(p: &ModelParameters, y: &[f64; 5]) -> [f64; 5] {
    let [s, i1, i2, i12, r] = *y;
    let ds = (p.b * (1.0 - s / p.k) - p.alpha1 * i1 - p.alpha2 * i2 - p.alpha3_hat() * i12 - p.mu0) * s;
    let di1 = (p.alpha1 * s - p.eta1 * i12 - p.gamma1 * i2 - p.mu1) * i1 + p.beta1 * s * i12;
    let di2 = (p.alpha2 * s - p.eta2 * i12 - p.gamma2 * i1 - p.mu2) * i2 + p.beta2 * s * i12;
    let di12 = (p.alpha3 * s + p.eta1 * i1 + p.eta2 * i2 - p.mu3) * i12 + (p.gamma1 + p.gamma2) * i1 * i2;
    let dr = p.rho1 * i1 + p.rho2 * i2 + p.rho3 * i12 - p.mu4p * r;
    [ds, di1, di2, di12, dr]
}

/// Right-hand side of the five-class model with per-class logistic births.
pub fn rhs_full(fp: &FullModelParameters, y: &[f64; 5]) -> [f64; 5] {
    let p = &fp.base;
    let [s, i1, i2, i12, r] = *y;
    let n = s + i1 + i2 + i12 + r;
    let crowd = |own: f64| match fp.crowding {
        Crowding::Total => n,
        Crowding::Own => own,
    };
    let g1 = p.b * (1.0 - crowd(s) / fp.k1);
    let g2 = fp.b2 * (1.0 - crowd(i1) / fp.k2);
    let g3 = fp.b3 * (1.0 - crowd(i2) / fp.k3);
    let g4 = fp.b4 * (1.0 - crowd(i12) / fp.k4);
    let g5 = fp.b5 * (1.0 - crowd(r) / fp.k5);
    let ds = (g1 - p.alpha1 * i1 - p.alpha2 * i2 - p.alpha3_hat() * i12 - p.mu0) * s;
    let di1 = (g2 + p.alpha1 * s - p.eta1 * i12 - p.gamma1 * i2 - p.mu1) * i1 + p.beta1 * s * i12;
    let di2 = (g3 + p.alpha2 * s - p.eta2 * i12 - p.gamma2 * i1 - p.mu2) * i2 + p.beta2 * s * i12;
    let di12 = (g4 + p.alpha3 * s + p.eta1 * i1 + p.eta2 * i2 - p.mu3) * i12 + (p.gamma1 + p.gamma2) * i1 * i2;
    let dr = (g5 - p.mu4p) * r + p.rho1 * i1 + p.rho2 * i2 + p.rho3 * i12;
    [ds, di1, di2, di12, dr]
}

/// Analytic Jacobian of the first four equations of the reduced model with
/// respect to `(S, I1, I2, I12)`.
pub fn jacobian_sub(p: &ModelParameters, y: &[f64; 4]) -> [[f64; 4]; 4] {
    let [s, i1, i2, i12] = *y;
    let a3h = p.alpha3_hat();
    let g12 = p.gamma1 + p.gamma2;
    let growth = p.b * (1.0 - s / p.k) - p.alpha1 * i1 - p.alpha2 * i2 - a3h * i12 - p.mu0;
    [
        [growth - p.b * s / p.k, -p.alpha1 * s, -p.alpha2 * s, -a3h * s],
        [
            p.alpha1 * i1 + p.beta1 * i12,
            p.alpha1 * s - p.eta1 * i12 - p.gamma1 * i2 - p.mu1,
            -p.gamma1 * i1,
            -p.eta1 * i1 + p.beta1 * s,
        ],
        [
            p.alpha2 * i2 + p.beta2 * i12,
            -p.gamma2 * i2,
            p.alpha2 * s - p.eta2 * i12 - p.gamma2 * i1 - p.mu2,
            -p.eta2 * i2 + p.beta2 * s,
        ],
        [
            p.alpha3 * i12,
            p.eta1 * i12 + g12 * i2,
            p.eta2 * i12 + g12 * i1,
            p.alpha3 * s + p.eta1 * i1 + p.eta2 * i2 - p.mu3,
        ],
    ]
}

impl Dynamics for ModelParameters {
    fn rhs(&self, y: &[f64; 5]) -> [f64; 5] {
        rhs_sub(self, y)
    }
}

impl Dynamics for FullModelParameters {
    fn rhs(&self, y: &[f64; 5]) -> [f64; 5] {
        rhs_full(self, y)
    }
}

impl FullModelParameters {
    /// Extension with no births outside the susceptible class.
    pub fn susceptible_births_only(base: ModelParameters) -> Self {
        FullModelParameters {
            base,
            b2: 0.0,
            b3: 0.0,
            b4: 0.0,
            b5: 0.0,
            k1: base.k,
            k2: base.k,
            k3: base.k,
            k4: base.k,
            k5: base.k,
            crowding: Crowding::Total,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let fields = [
            ("b2", self.b2),
            ("b3", self.b3),
            ("b4", self.b4),
            ("b5", self.b5),
            ("K1", self.k1),
            ("K2", self.k2),
            ("K3", self.k3),
            ("K4", self.k4),
            ("K5", self.k5),
        ];
        for (field, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParameter {
                    field,
                    reason: format!("{value} must be finite and nonnegative"),
                });
            }
            if field.starts_with('K') && value == 0.0 {
                return Err(Error::InvalidParameter { field, reason: "carrying capacity must be positive".into() });
            }
        }
        Ok(())
    }
}

/// JSON parameter document: the reduced-model fields plus an optional
/// `"full"` extension object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterDocument {
    pub b: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub mu4p: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub eta1: f64,
    pub eta2: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<FullExtension>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FullExtension {
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub b5: f64,
    #[serde(rename = "K1")]
    pub k1: f64,
    #[serde(rename = "K2")]
    pub k2: f64,
    #[serde(rename = "K3")]
    pub k3: f64,
    #[serde(rename = "K4")]
    pub k4: f64,
    #[serde(rename = "K5")]
    pub k5: f64,
    #[serde(default)]
    pub crowding: Crowding,
}

impl ParameterDocument {
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ParameterDocument = serde_json::from_str(text)?;
        doc.params().validate()?;
        if let Some(full) = doc.full_params() {
            full.validate()?;
        }
        Ok(doc)
    }

    pub fn params(&self) -> ModelParameters {
        ModelParameters {
            b: self.b,
            k: self.k,
            mu0: self.mu0,
            mu1: self.mu1,
            mu2: self.mu2,
            mu3: self.mu3,
            rho1: self.rho1,
            rho2: self.rho2,
            rho3: self.rho3,
            mu4p: self.mu4p,
            alpha1: self.alpha1,
            alpha2: self.alpha2,
            alpha3: self.alpha3,
            beta1: self.beta1,
            beta2: self.beta2,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            eta1: self.eta1,
            eta2: self.eta2,
        }
    }

    pub fn full_params(&self) -> Option<FullModelParameters> {
        self.full.map(|f| FullModelParameters {
            base: self.params(),
            b2: f.b2,
            b3: f.b3,
            b4: f.b4,
            b5: f.b5,
            k1: f.k1,
            k2: f.k2,
            k3: f.k3,
            k4: f.k4,
            k5: f.k5,
            crowding: f.crowding,
        })
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::ModelParameters;

    /// Reference rates used throughout the tests (`K = 4`).
    pub fn p_ref() -> ModelParameters {
        ModelParameters {
            b: 4.0,
            k: 4.0,
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
}
