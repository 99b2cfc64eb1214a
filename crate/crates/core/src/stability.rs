//! Local stability of the equilibria, by spectrum and by block criteria, and
//! the sufficient conditions for global stability.

use std::fmt;

use nalgebra::{Complex, Matrix4};
use serde::Serialize;

use crate::equilibria::{
    closed_form, i1_star, i2_star, inf_norm4, residual, Equilibrium, EquilibriumKind, RESIDUAL_TOL,
};
use crate::error::{Error, Result};
use crate::model::{jacobian_sub, ModelParameters};

/// Real parts within this band of zero are reported as marginal.
pub const EPS_SPEC: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl From<Complex<f64>> for Eigenvalue {
    fn from(z: Complex<f64>) -> Self {
        Eigenvalue { re: z.re, im: z.im }
    }
}

/// Coefficients `[c0, c1, c2, c3, 1]` of `det(λI − m)` (Faddeev–LeVerrier).
pub fn char_poly(m: &[[f64; 4]; 4]) -> [f64; 5] {
    let a = Matrix4::from_fn(|r, c| m[r][c]);
    let mut coeffs = [0.0; 5];
    coeffs[4] = 1.0;
    let mut mk = Matrix4::<f64>::zeros();
    for k in 1..=4 {
        mk = a * mk + Matrix4::identity() * coeffs[5 - k];
        coeffs[4 - k] = -(a * mk).trace() / k as f64;
    }
    coeffs
}

fn poly_eval(c: &[f64; 5], z: Complex<f64>) -> (Complex<f64>, Complex<f64>) {
    let mut p = Complex::new(c[4], 0.0);
    let mut dp = Complex::new(0.0, 0.0);
    for &ci in c[..4].iter().rev() {
        dp = dp * z + p;
        p = p * z + ci;
    }
    (p, dp)
}

/// Scale against which characteristic-polynomial residuals are judged.
pub fn residual_scale(m: &[[f64; 4]; 4]) -> f64 {
    let n = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    (1.0 + n).powi(4)
}

fn det_shifted(m: &[[f64; 4]; 4], z: Complex<f64>) -> f64 {
    let a = Matrix4::from_fn(|r, c| Complex::new(m[r][c], 0.0) - if r == c { z } else { Complex::new(0.0, 0.0) });
    a.determinant().norm()
}

/// `|det(m − λI)|`, evaluated directly rather than through the coefficients.
pub fn char_poly_residual(m: &[[f64; 4]; 4], lambda: Eigenvalue) -> f64 {
    det_shifted(m, Complex::new(lambda.re, lambda.im))
}

/// All four eigenvalues, real part descending, ties by imaginary part
/// descending. Schur values are polished by Newton steps on the
/// characteristic polynomial when that lowers the residual.
pub fn eigenvalues_4x4(m: &[[f64; 4]; 4]) -> Result<[Eigenvalue; 4]> {
    for (r, row) in m.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    let a = Matrix4::from_fn(|r, c| m[r][c]);
    let raw = a.complex_eigenvalues();
    let coeffs = char_poly(m);
    let mut out = [Eigenvalue { re: 0.0, im: 0.0 }; 4];
    for (slot, z0) in out.iter_mut().zip(raw.iter()) {
        let mut z = *z0;
        let mut rz = det_shifted(m, z);
        for _ in 0..3 {
            if rz == 0.0 {
                break;
            }
            let (p, dp) = poly_eval(&coeffs, z);
            if dp.norm() == 0.0 {
                break;
            }
            let cand = z - p / dp;
            let rc = det_shifted(m, cand);
            if rc.is_finite() && rc < rz {
                z = cand;
                rz = rc;
            } else {
                break;
            }
        }
        // Keep real roots real.
        if z0.im == 0.0 {
            z.im = 0.0;
        }
        *slot = z.into();
    }
    out.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Marginal => "marginal",
        })
    }
}

impl Verdict {
    pub fn from_max_re(max_re: f64) -> Self {
        if max_re < -EPS_SPEC {
            Verdict::Stable
        } else if max_re > EPS_SPEC {
            Verdict::Unstable
        } else {
            Verdict::Marginal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalVerdict {
    Yes,
    No,
    NotCovered,
}

/// Quadratic `Δ(λ) = a2·λ² + a1·λ + a0` whose positive root bounds the
/// strain-1 level for which the single-strain state is stable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LambdaThreshold {
    /// Positive root; infinite when Δ stays positive on `(0, ∞)`.
    pub lambda: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
}

impl LambdaThreshold {
    pub fn delta(&self, x: f64) -> f64 {
        (self.a2 * x + self.a1) * x + self.a0
    }

    /// Magnitude scale of the terms of Δ at `x`.
    pub fn scale(&self, x: f64) -> f64 {
        self.a0.abs() + self.a1.abs() * x.abs() + self.a2.abs() * x * x
    }
}

/// Δ evaluated directly in factored form.
pub fn delta_factored(p: &ModelParameters, x: f64) -> f64 {
    let s1 = p.mu1 / p.alpha1;
    let s2 = p.mu2 / p.alpha2;
    (-p.alpha2 * (s2 - s1) - p.gamma2 * x) * (p.alpha3 * s1 + p.eta1 * x - p.mu3)
        - p.beta2 * s1 * (p.gamma1 + p.gamma2) * x
}

/// Positive root of `a2·x² + a1·x + a0` for `a2 ≤ 0 < a0`; infinite when
/// the linear case has none.
pub fn positive_root(a2: f64, a1: f64, a0: f64) -> f64 {
    if a2 == 0.0 {
        return if a1 < 0.0 { -a0 / a1 } else { f64::INFINITY };
    }
    // Opposite signs of a2 and a0 leave exactly one positive root.
    let disc = a1 * a1 - 4.0 * a2 * a0;
    let q = -0.5 * (a1 + a1.signum() * disc.sqrt());
    let (r1, r2) = (q / a2, a0 / q);
    if r1 > 0.0 {
        r1
    } else {
        r2
    }
}

pub fn lambda_threshold(p: &ModelParameters) -> Result<LambdaThreshold> {
    let d = p.require_admissible()?;
    let a = p.alpha2 * (d.sigma2 - d.sigma1);
    let c0 = p.alpha3 * d.sigma1 - p.mu3;
    let a2 = -p.gamma2 * p.eta1;
    let a1 = -a * p.eta1 - p.gamma2 * c0 - p.beta2 * d.sigma1 * (p.gamma1 + p.gamma2);
    let a0 = -a * c0;
    if !(a0 > 0.0) {
        return Err(Error::Inadmissible(format!("Δ(0) = {a0} is not positive")));
    }
    let lambda = positive_root(a2, a1, a0);
    let t = LambdaThreshold { lambda, a0, a1, a2 };
    if lambda.is_finite() {
        let res = t.delta(lambda).abs();
        if res > 1e-12 * t.scale(lambda) {
            return Err(Error::Precondition(format!("Δ(Λ) = {res:e} is not small")));
        }
    }
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GlobalConditions {
    #[serde(rename = "g2")]
    pub g2_global: bool,
    #[serde(rename = "g3")]
    pub g3_global: bool,
    pub sigma0: f64,
    pub sigma_hat: f64,
    /// `min{α2(σ2−σ1)/γ1, α̂3(σ3−σ1)/η1}`: the largest strain-1 level for which
    /// the single-strain state is known to be globally stable.
    pub i1_bound: f64,
}

fn ratio_or_inf(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

pub fn global_conditions(p: &ModelParameters) -> Result<GlobalConditions> {
    let d = p.require_admissible()?;
    let lt = lambda_threshold(p)?;
    let i1_bound = ratio_or_inf(p.alpha2 * (d.sigma2 - d.sigma1), p.gamma1)
        .min(ratio_or_inf(d.alpha3_hat * (d.sigma3 - d.sigma1), p.eta1));
    let i1 = i1_star(p);
    let scale = p.k * p.alpha1 / p.b;
    Ok(GlobalConditions {
        g2_global: d.s_star_star <= d.sigma1,
        g3_global: d.s_star_star > d.sigma1 && i1 <= i1_bound,
        sigma0: d.sigma1 + scale * i1_bound,
        sigma_hat: d.sigma1 + scale * lt.lambda,
        i1_bound,
    })
}

/// Block quantities of the single-strain states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockCriteria {
    /// Infection block at G3.
    #[serde(rename = "B")]
    pub b_block: [[f64; 2]; 2],
    #[serde(rename = "det_B")]
    pub det_b: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    #[serde(rename = "Delta0")]
    pub delta0: f64,
    #[serde(rename = "I1_star")]
    pub i1_star: f64,
    /// Strain-1/coinfection block at G4.
    #[serde(rename = "D")]
    pub d_block: [[f64; 2]; 2],
    #[serde(rename = "det_D")]
    pub det_d: f64,
    #[serde(rename = "trace_D")]
    pub trace_d: f64,
    #[serde(rename = "I2_star")]
    pub i2_star: f64,
}

fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

pub fn block_criteria(p: &ModelParameters) -> Result<BlockCriteria> {
    let d = p.require_admissible()?;
    let lt = lambda_threshold(p)?;
    let (s1, s2) = (d.sigma1, d.sigma2);
    let i1 = i1_star(p);
    let i2 = i2_star(p);
    let b_block = [
        [-p.alpha2 * (s2 - s1) - p.gamma2 * i1, p.beta2 * s1],
        [(p.gamma1 + p.gamma2) * i1, p.alpha3 * s1 + p.eta1 * i1 - p.mu3],
    ];
    let d_block = [
        [p.alpha1 * (s2 - s1) - p.gamma1 * i2, p.beta1 * s2],
        [(p.gamma1 + p.gamma2) * i2, p.alpha3 * s2 + p.eta2 * i2 - p.mu3],
    ];
    Ok(BlockCriteria {
        b_block,
        det_b: det2(&b_block),
        lambda: lt.lambda,
        delta0: lt.a0,
        i1_star: i1,
        d_block,
        det_d: det2(&d_block),
        trace_d: d_block[0][0] + d_block[1][1],
        i2_star: i2,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub kind: EquilibriumKind,
    pub y: [f64; 4],
    pub eigenvalues: [Eigenvalue; 4],
    pub max_re: f64,
    pub local_stable: bool,
    pub marginal: bool,
    pub spectral: Verdict,
    /// Closed-form verdict; absent for G5.
    pub criterion: Option<Verdict>,
    pub criteria: BlockCriteria,
    pub global: GlobalConditions,
    pub global_stable: GlobalVerdict,
}

impl StabilityReport {
    pub fn to_json(&self) -> Result<String> {
        crate::export::to_json_string(self)
    }
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn check_kind(p: &ModelParameters, eq: &Equilibrium) -> Result<()> {
    let scale = 1.0 + inf_norm4(&eq.y);
    if eq.kind == EquilibriumKind::G5 {
        if !eq.y.iter().all(|&v| v > 0.0) {
            return Err(Error::KindMismatch {
                kind: "G5".into(),
                detail: format!("{:?} is not strictly positive", eq.y),
            });
        }
        let r = inf_norm4(&residual(p, &eq.y));
        if r > RESIDUAL_TOL * scale {
            return Err(Error::KindMismatch { kind: "G5".into(), detail: format!("residual {r:e}") });
        }
        return Ok(());
    }
    let reference = closed_form(p, eq.kind)?;
    let dist = reference.y.iter().zip(&eq.y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    if dist > 1e-9 * scale {
        return Err(Error::KindMismatch {
            kind: eq.kind.to_string(),
            detail: format!("{:?} differs from {:?}", eq.y, reference.y),
        });
    }
    Ok(())
}

fn criterion_verdict(p: &ModelParameters, eq: &Equilibrium, c: &BlockCriteria) -> Option<Verdict> {
    let ss = p.s_star_star();
    let s1 = p.mu1 / p.alpha1;
    let s2 = p.mu2 / p.alpha2;
    match eq.kind {
        EquilibriumKind::G1 => Some(Verdict::Unstable),
        EquilibriumKind::G2 => Some(if rel_close(ss, s1) {
            Verdict::Marginal
        } else if ss < s1 {
            Verdict::Stable
        } else {
            Verdict::Unstable
        }),
        EquilibriumKind::G3 => Some(if rel_close(ss, s1) {
            Verdict::Marginal
        } else if ss > s1 && c.det_b > 0.0 {
            Verdict::Stable
        } else {
            Verdict::Unstable
        }),
        EquilibriumKind::G4 => {
            Some(if ss > s2 && c.det_d > 0.0 && c.trace_d < 0.0 { Verdict::Stable } else { Verdict::Unstable })
        }
        EquilibriumKind::G5 => None,
    }
}

/// Spectral and closed-form classification of one equilibrium.
pub fn classify_local(p: &ModelParameters, eq: &Equilibrium) -> Result<StabilityReport> {
    check_kind(p, eq)?;
    let criteria = block_criteria(p)?;
    let global = global_conditions(p)?;
    let j = jacobian_sub(p, &eq.y);
    let eigenvalues = eigenvalues_4x4(&j)?;
    let max_re = eigenvalues[0].re;
    let spectral = Verdict::from_max_re(max_re);
    let criterion = criterion_verdict(p, eq, &criteria);
    let global_stable = match (eq.kind, spectral) {
        (_, Verdict::Unstable) | (EquilibriumKind::G1, _) => GlobalVerdict::No,
        (EquilibriumKind::G2, _) if global.g2_global => GlobalVerdict::Yes,
        (EquilibriumKind::G2, _) => GlobalVerdict::No,
        (EquilibriumKind::G3, _) if global.g3_global => GlobalVerdict::Yes,
        _ => GlobalVerdict::NotCovered,
    };
    Ok(StabilityReport {
        kind: eq.kind,
        y: eq.y,
        eigenvalues,
        max_re,
        local_stable: spectral == Verdict::Stable,
        marginal: spectral == Verdict::Marginal,
        spectral,
        criterion,
        criteria,
        global,
        global_stable,
    })
}
