//! Equilibrium points: closed forms for the boundary states, a damped Newton
//! search for coexistence points, and the balance relations every
//! equilibrium must satisfy.

use std::fmt;
use std::io::Write;

use log::debug;
use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{jacobian_sub, ModelParameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EquilibriumKind {
    /// Trivial state.
    G1,
    /// Disease free.
    G2,
    /// Strain 1 only.
    G3,
    /// Strain 2 only.
    G4,
    /// Coexistence with coinfection; every coordinate positive.
    G5,
}

impl fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for EquilibriumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "G1" => Ok(EquilibriumKind::G1),
            "G2" => Ok(EquilibriumKind::G2),
            "G3" => Ok(EquilibriumKind::G3),
            "G4" => Ok(EquilibriumKind::G4),
            "G5" => Ok(EquilibriumKind::G5),
            other => Err(Error::Usage(format!("unknown equilibrium kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    /// `(S, I1, I2, I12)`.
    pub y: [f64; 4],
    /// Recovered level implied by the infected coordinates.
    pub r_star: f64,
    /// ∞-norm of the balance equations at `y`.
    pub residual: f64,
    /// False for closed forms whose existence condition fails (they are still
    /// emitted so branches can be followed through the threshold).
    pub exists: bool,
}

/// Acceptance threshold for a residual, relative to the size of `y`.
pub const RESIDUAL_TOL: f64 = 1e-10;
pub const BALANCE_TOL: f64 = 1e-9;
/// Relative gap below which a closed form is treated as sitting on its
/// existence boundary.
pub const EXISTENCE_TOL: f64 = 1e-12;

pub fn inf_norm4(y: &[f64; 4]) -> f64 {
    y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

impl Equilibrium {
    pub fn new(params: &ModelParameters, kind: EquilibriumKind, y: [f64; 4], exists: bool) -> Self {
        Equilibrium { kind, y, r_star: r_star(params, &y), residual: inf_norm4(&residual(params, &y)), exists }
    }

    pub fn is_valid(&self) -> bool {
        self.exists && self.residual <= RESIDUAL_TOL * (1.0 + inf_norm4(&self.y))
    }
}

fn r_star(p: &ModelParameters, y: &[f64; 4]) -> f64 {
    let inflow = p.rho1 * y[1] + p.rho2 * y[2] + p.rho3 * y[3];
    if inflow == 0.0 {
        0.0
    } else {
        inflow / p.mu4p
    }
}

/// Left-hand sides of the four balance equations at `y = (Y0, Y1, Y2, Y3)`.
pub fn residual(p: &ModelParameters, y: &[f64; 4]) -> [f64; 4] {
    let [y0, y1, y2, y3] = *y;
    [
        (p.b * (1.0 - y0 / p.k) - p.alpha1 * y1 - p.alpha2 * y2 - (p.beta1 + p.beta2 + p.alpha3) * y3 - p.mu0) * y0,
        (p.alpha1 * y0 - p.eta1 * y3 - p.gamma1 * y2 - p.mu1) * y1 + p.beta1 * y0 * y3,
        (p.alpha2 * y0 - p.eta2 * y3 - p.gamma2 * y1 - p.mu2) * y2 + p.beta2 * y0 * y3,
        (p.alpha3 * y0 + p.eta1 * y1 + p.eta2 * y2 - p.mu3) * y3 + (p.gamma1 + p.gamma2) * y1 * y2,
    ]
}

/// `I1*`, the strain-1 level of the single-strain state.
pub fn i1_star(p: &ModelParameters) -> f64 {
    p.b / (p.k * p.alpha1) * (p.s_star_star() - p.mu1 / p.alpha1)
}

/// `I2*`, the strain-2 level of the single-strain state.
pub fn i2_star(p: &ModelParameters) -> f64 {
    p.b / (p.k * p.alpha2) * (p.s_star_star() - p.mu2 / p.alpha2)
}

fn above(s: f64, threshold: f64) -> bool {
    s - threshold > EXISTENCE_TOL * s.abs().max(threshold.abs())
}

/// G1..G4 in order, each with its existence flag.
pub fn closed_form_equilibria(p: &ModelParameters) -> Result<Vec<Equilibrium>> {
    let d = p.require_admissible()?;
    let ss = d.s_star_star;
    Ok(vec![
        Equilibrium::new(p, EquilibriumKind::G1, [0.0; 4], true),
        Equilibrium::new(p, EquilibriumKind::G2, [ss, 0.0, 0.0, 0.0], true),
        Equilibrium::new(p, EquilibriumKind::G3, [d.sigma1, i1_star(p), 0.0, 0.0], above(ss, d.sigma1)),
        Equilibrium::new(p, EquilibriumKind::G4, [d.sigma2, 0.0, i2_star(p), 0.0], above(ss, d.sigma2)),
    ])
}

/// Closed-form record of one kind (G1..G4).
pub fn closed_form(p: &ModelParameters, kind: EquilibriumKind) -> Result<Equilibrium> {
    closed_form_equilibria(p)?
        .into_iter()
        .find(|e| e.kind == kind)
        .ok_or_else(|| Error::Usage(format!("{kind} has no closed form")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BalanceReport {
    /// `α1Y1 + α2Y2 + α̂3Y3 − (b/K)(S** − Y0)`.
    pub law1_error: f64,
    /// `μ1Y1 + μ2Y2 + μ3Y3 − (b/K)(S** − Y0)Y0`.
    pub law2_error: f64,
    /// A priori bound on `‖Y‖∞` for equilibria other than G1 and G2.
    pub coordinate_bound: f64,
    pub tolerance: f64,
}

/// A priori bound on the coordinates of any equilibrium other than G2.
pub fn coordinate_bound(p: &ModelParameters) -> f64 {
    let r = p.b - p.mu0;
    let a3h = p.alpha3_hat();
    (r / p.alpha1).max(r / p.alpha2).max(r / a3h).max(p.mu3 / a3h)
}

/// Checks both balance laws, the `Y0` box and the coordinate bound.
pub fn balance_checks(p: &ModelParameters, eq: &Equilibrium) -> Result<BalanceReport> {
    if eq.kind == EquilibriumKind::G1 {
        return Err(Error::Usage("balance relations do not apply to the trivial state".into()));
    }
    let d = p.derive()?;
    let [y0, y1, y2, y3] = eq.y;
    let tol = BALANCE_TOL * (1.0 + inf_norm4(&eq.y));
    let gap = p.b / p.k * (d.s_star_star - y0);
    let law1_error = p.alpha1 * y1 + p.alpha2 * y2 + d.alpha3_hat * y3 - gap;
    let law2_error = p.mu1 * y1 + p.mu2 * y2 + p.mu3 * y3 - gap * y0;
    let bound = coordinate_bound(p);
    let report = BalanceReport { law1_error, law2_error, coordinate_bound: bound, tolerance: tol };

    if law1_error.abs() > tol {
        return Err(Error::Balance { relation: "law1", detail: format!("error {law1_error:e} exceeds {tol:e}") });
    }
    if law2_error.abs() > tol {
        return Err(Error::Balance { relation: "law2", detail: format!("error {law2_error:e} exceeds {tol:e}") });
    }
    if !(y0 > 0.0 && y0 <= d.s_star_star + tol) {
        return Err(Error::Balance { relation: "Y0 box", detail: format!("Y0 = {y0} outside (0, {}]", d.s_star_star) });
    }
    let disease_free = y1 == 0.0 && y2 == 0.0 && y3 == 0.0;
    if !disease_free {
        let hi = d.s_star_star.min(d.sigma3);
        if (d.s_star_star - y0).abs() > tol && !(y0 >= d.sigma1 - tol && y0 <= hi + tol) {
            return Err(Error::Balance {
                relation: "threshold box",
                detail: format!("Y0 = {y0} outside [{}, {hi}]", d.sigma1),
            });
        }
        if inf_norm4(&eq.y) > bound + tol {
            return Err(Error::Balance {
                relation: "coordinate bound",
                detail: format!("‖Y‖∞ = {} exceeds {bound}", inf_norm4(&eq.y)),
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonSettings {
    pub max_iter: usize,
    pub max_halvings: usize,
    pub shrink: f64,
    /// Converged when `‖residual‖∞ ≤ tol · (1 + ‖y‖∞)`.
    pub tol: f64,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        NewtonSettings { max_iter: 50, max_halvings: 30, shrink: 0.5, tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NewtonOutcome {
    Converged { y: [f64; 4], iterations: usize },
    SingularJacobian { y: [f64; 4] },
    LineSearchFailed { y: [f64; 4] },
    MaxIterations { y: [f64; 4] },
}

fn sq_norm(v: &[f64; 4]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Damped Newton iteration on the balance equations with step halving.
pub fn newton(p: &ModelParameters, seed: [f64; 4], s: &NewtonSettings) -> NewtonOutcome {
    let mut y = seed;
    let mut r = residual(p, &y);
    for it in 0..s.max_iter {
        if inf_norm4(&r) <= s.tol * (1.0 + inf_norm4(&y)) {
            return NewtonOutcome::Converged { y, iterations: it };
        }
        let j = jacobian_sub(p, &y);
        let jm = Matrix4::from_fn(|i, c| j[i][c]);
        let rhs = Vector4::new(-r[0], -r[1], -r[2], -r[3]);
        let Some(dy) = jm.lu().solve(&rhs) else {
            return NewtonOutcome::SingularJacobian { y };
        };
        if dy.iter().any(|v| !v.is_finite()) {
            return NewtonOutcome::SingularJacobian { y };
        }
        let merit = sq_norm(&r);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=s.max_halvings {
            let trial = [y[0] + step * dy[0], y[1] + step * dy[1], y[2] + step * dy[2], y[3] + step * dy[3]];
            let rt = residual(p, &trial);
            if sq_norm(&rt) < merit {
                accepted = Some((trial, rt));
                break;
            }
            step *= s.shrink;
        }
        match accepted {
            Some((ny, nr)) => {
                y = ny;
                r = nr;
            }
            None => {
                // Stalled at roundoff level counts as converged.
                if inf_norm4(&r) <= 1e3 * s.tol * (1.0 + inf_norm4(&y)) {
                    return NewtonOutcome::Converged { y, iterations: it };
                }
                return NewtonOutcome::LineSearchFailed { y };
            }
        }
    }
    if inf_norm4(&r) <= s.tol * (1.0 + inf_norm4(&y)) {
        NewtonOutcome::Converged { y, iterations: s.max_iter }
    } else {
        NewtonOutcome::MaxIterations { y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct G5Search {
    /// Grid points per coordinate for the default seeding.
    pub grid_density: usize,
    /// Explicit seeds; when set, only these are used.
    pub seeds: Option<Vec<[f64; 4]>>,
    pub newton: NewtonSettings,
    /// Roots closer than this are merged.
    pub dedup_distance: f64,
    /// Every coordinate must exceed `positivity_floor · (1 + ‖y‖∞)`.
    pub positivity_floor: f64,
}

impl Default for G5Search {
    fn default() -> Self {
        G5Search {
            grid_density: 8,
            seeds: None,
            newton: NewtonSettings::default(),
            dedup_distance: 1e-6,
            positivity_floor: 1e-10,
        }
    }
}

/// Direction of the unstable eigenvector of the Jacobian at G3, oriented into
/// the positive `(I2, I12)` quadrant. `None` when the infection block has no
/// positive real eigenvalue.
pub fn g3_unstable_direction(p: &ModelParameters) -> Option<[f64; 4]> {
    let d = p.derive().ok()?;
    let i1 = i1_star(p);
    let j = jacobian_sub(p, &[d.sigma1, i1, 0.0, 0.0]);
    let (b11, b12, b21, b22) = (j[2][2], j[2][3], j[3][2], j[3][3]);
    let tr = b11 + b22;
    let det = b11 * b22 - b12 * b21;
    let disc = tr * tr - 4.0 * det;
    if disc < 0.0 {
        return None;
    }
    let mu = 0.5 * (tr + disc.sqrt());
    if !(mu > 0.0) {
        return None;
    }
    // Two candidate null vectors of (B − μI); take the better conditioned one.
    let c1 = (b12, mu - b11);
    let c2 = (mu - b22, b21);
    let (mut w2, mut w3) = if c1.0.hypot(c1.1) >= c2.0.hypot(c2.1) { c1 } else { c2 };
    if w2 == 0.0 && w3 == 0.0 {
        return None;
    }
    if w2 + w3 < 0.0 {
        w2 = -w2;
        w3 = -w3;
    }
    // (A - μI) u = -X w for the susceptible/strain-1 block.
    let a = Matrix4::from_fn(|r, c| if r < 2 && c < 2 { j[r][c] } else { 0.0 });
    let a2 = nalgebra::Matrix2::new(a[(0, 0)] - mu, a[(0, 1)], a[(1, 0)], a[(1, 1)] - mu);
    let xw = nalgebra::Vector2::new(j[0][2] * w2 + j[0][3] * w3, j[1][2] * w2 + j[1][3] * w3);
    let u = a2.lu().solve(&(-xw))?;
    let v = [u[0], u[1], w2, w3];
    let n = inf_norm4(&v);
    (n > 0.0 && n.is_finite()).then(|| v.map(|x| x / n))
}

/// Seeds `G3 + ε v` along the unstable direction for a ladder of `ε`.
pub fn seeds_near_g3(p: &ModelParameters) -> Vec<[f64; 4]> {
    let Some(v) = g3_unstable_direction(p) else {
        return Vec::new();
    };
    let Ok(d) = p.derive() else {
        return Vec::new();
    };
    let g3 = [d.sigma1, i1_star(p), 0.0, 0.0];
    let scale = 1.0 + inf_norm4(&g3);
    let mut seeds = Vec::new();
    for exp in 0..=12 {
        let eps = scale * 10f64.powf(-0.5 * exp as f64 - 1.0);
        seeds.push([g3[0] + eps * v[0], g3[1] + eps * v[1], g3[2] + eps * v[2], g3[3] + eps * v[3]]);
    }
    seeds
}

fn grid_seeds(p: &ModelParameters, n: usize) -> Vec<[f64; 4]> {
    let Ok(d) = p.derive() else {
        return Vec::new();
    };
    let lo = d.sigma1;
    let hi = d.s_star_star.min(d.sigma3);
    if n == 0 || hi < lo {
        return Vec::new();
    }
    let bound = coordinate_bound(p);
    let y0_at = |i: usize| if n == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
    let other_at = |i: usize| bound * (i + 1) as f64 / n as f64;
    let mut seeds = Vec::with_capacity(n.pow(4));
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for e in 0..n {
                    seeds.push([y0_at(a), other_at(b), other_at(c), other_at(e)]);
                }
            }
        }
    }
    seeds
}

fn lex_cmp(a: &[f64; 4], b: &[f64; 4]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// Solves from every seed and returns the distinct converged roots, sorted.
pub fn solve_from_seeds(
    p: &ModelParameters,
    seeds: &[[f64; 4]],
    newton_settings: &NewtonSettings,
    dedup: f64,
) -> Vec<[f64; 4]> {
    let mut roots: Vec<[f64; 4]> = Vec::new();
    for (i, seed) in seeds.iter().enumerate() {
        match newton(p, *seed, newton_settings) {
            NewtonOutcome::Converged { y, .. } => roots.push(y),
            other => debug!("seed {i} {seed:?} skipped: {other:?}"),
        }
    }
    roots.sort_by(lex_cmp);
    let mut out: Vec<[f64; 4]> = Vec::new();
    for r in roots {
        let dup = out.iter().any(|q| {
            let dist = q.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            dist < dedup
        });
        if !dup {
            out.push(r);
        }
    }
    out
}

/// Numerical search for coexistence equilibria.
///
/// Only strictly positive roots that pass the residual, balance and box
/// checks are returned. An empty list means none was found from the seeds
/// used; it does not prove there is none.
pub fn find_g5(p: &ModelParameters, opts: &G5Search) -> Result<Vec<Equilibrium>> {
    let d = p.require_admissible()?;
    if d.s_star_star <= d.sigma1 {
        return Ok(Vec::new());
    }
    let seeds = match &opts.seeds {
        Some(s) => s.clone(),
        None => {
            let mut s = seeds_near_g3(p);
            s.extend(grid_seeds(p, opts.grid_density));
            s
        }
    };
    let roots = solve_from_seeds(p, &seeds, &opts.newton, opts.dedup_distance);
    let mut found = Vec::new();
    for y in roots {
        let floor = opts.positivity_floor * (1.0 + inf_norm4(&y));
        if !y.iter().all(|&v| v > floor) {
            continue;
        }
        let eq = Equilibrium::new(p, EquilibriumKind::G5, y, true);
        if !eq.is_valid() {
            continue;
        }
        if let Err(e) = balance_checks(p, &eq) {
            debug!("root {y:?} rejected: {e}");
            continue;
        }
        found.push(eq);
    }
    Ok(found)
}

/// JSON array of `{kind, y, r_star, residual, exists}` records.
pub fn write_equilibria_json<W: Write>(eqs: &[Equilibrium], out: W) -> Result<()> {
    crate::export::write_json(out, eqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::p_ref;
    use proptest::prelude::*;

    fn get(eqs: &[Equilibrium], kind: EquilibriumKind) -> Equilibrium {
        *eqs.iter().find(|e| e.kind == kind).unwrap()
    }

    #[test]
    fn reference_closed_forms() {
        let eqs = closed_form_equilibria(&p_ref()).unwrap();
        let g3 = get(&eqs, EquilibriumKind::G3);
        assert!(g3.exists);
        assert!((g3.y[0] - 2.0).abs() < 1e-15 && (g3.y[1] - 2.0).abs() < 1e-14);
        let g4 = get(&eqs, EquilibriumKind::G4);
        assert!(!g4.exists);
        assert!((g4.y[0] - 3.0).abs() < 1e-14 && g4.y[2].abs() < 1e-13);
        assert_eq!(get(&eqs, EquilibriumKind::G1).residual, 0.0);
        for e in &eqs {
            assert!(e.residual <= RESIDUAL_TOL * (1.0 + inf_norm4(&e.y)));
        }
        let p = p_ref();
        assert!((g3.r_star - p.rho1 * 2.0 / p.mu4p).abs() < 1e-14);
    }

    #[test]
    fn small_capacity_only_trivial_and_disease_free() {
        let eqs = closed_form_equilibria(&p_ref().with_k(2.0)).unwrap();
        let exists: Vec<_> = eqs.iter().filter(|e| e.exists).map(|e| e.kind).collect();
        assert_eq!(exists, vec![EquilibriumKind::G1, EquilibriumKind::G2]);
        assert_eq!(get(&eqs, EquilibriumKind::G2).y, [1.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn residual_examples() {
        let p = p_ref();
        assert_eq!(residual(&p, &[3.0, 0.0, 0.0, 0.0]), [0.0; 4]);
        let r = residual(&p, &[2.0, 2.0, 0.0, 0.0]);
        assert!(r.iter().all(|v| v.abs() < 1e-15));
        let r = residual(&p, &[2.0, 2.0, 0.1, 0.0]);
        // (α2·2 − γ2·2 − μ2)·0.1
        assert!((r[2] - (-0.06)).abs() < 1e-15, "{}", r[2]);
    }

    #[test]
    fn balance_laws_at_reference_points() {
        let p = p_ref();
        let eqs = closed_form_equilibria(&p).unwrap();
        let g3 = get(&eqs, EquilibriumKind::G3);
        let rep = balance_checks(&p, &g3).unwrap();
        // law1: 0.5·2 = (4/4)(3 − 2)
        assert!(rep.law1_error.abs() < 1e-14);
        assert!((rep.coordinate_bound - 15.0).abs() < 1e-12);
        let g2 = get(&eqs, EquilibriumKind::G2);
        let rep = balance_checks(&p, &g2).unwrap();
        assert_eq!((rep.law1_error, rep.law2_error), (0.0, 0.0));
        assert!(balance_checks(&p, &get(&eqs, EquilibriumKind::G1)).is_err());
        let bogus = Equilibrium::new(&p, EquilibriumKind::G3, [2.0, 2.5, 0.0, 0.0], true);
        match balance_checks(&p, &bogus) {
            Err(Error::Balance { relation, .. }) => assert_eq!(relation, "law1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn no_coexistence_point_in_reference_regime() {
        let found = find_g5(&p_ref(), &G5Search::default()).unwrap();
        assert!(found.is_empty(), "{found:?}");
    }

    #[test]
    fn explicit_seed_search_is_reproducible() {
        let p = p_ref().with_k(40.0);
        let opts = G5Search { grid_density: 4, ..G5Search::default() };
        let a = find_g5(&p, &opts).unwrap();
        let b = find_g5(&p, &opts).unwrap();
        assert_eq!(a, b);
        let seeded = G5Search { seeds: Some(vec![[3.0, 1.0, 1.0, 1.0], [2.5, 3.0, 0.5, 0.2]]), ..G5Search::default() };
        let c = find_g5(&p, &seeded).unwrap();
        let d = find_g5(&p, &seeded).unwrap();
        assert_eq!(c.len(), d.len());
        for (x, y) in c.iter().zip(&d) {
            assert_eq!(x.y.map(f64::to_bits), y.y.map(f64::to_bits));
        }
    }

    #[test]
    fn g3_meets_g2_at_threshold() {
        let p = p_ref();
        // S** = σ1 ⇔ K = 8/3 for these rates
        let pk = p.with_k(8.0 / 3.0);
        let eqs = closed_form_equilibria(&pk).unwrap();
        let g2 = get(&eqs, EquilibriumKind::G2);
        let g3 = get(&eqs, EquilibriumKind::G3);
        assert!(!g3.exists);
        let dist = g2.y.iter().zip(g3.y).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(dist <= 1e-9, "{dist}");
    }

    #[test]
    fn newton_recovers_g3_from_nearby_seed() {
        let p = p_ref();
        match newton(&p, [2.1, 1.9, 0.01, 0.01], &NewtonSettings::default()) {
            NewtonOutcome::Converged { y, .. } => {
                assert!((y[0] - 2.0).abs() < 1e-10 && (y[1] - 2.0).abs() < 1e-10, "{y:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lotka_volterra_roots_satisfy_reduced_system() {
        let p = p_ref().lotka_volterra_limit().with_k(30.0);
        let opts = G5Search { grid_density: 5, ..G5Search::default() };
        for eq in find_g5(&p, &opts).unwrap() {
            let [y0, y1, y2, y3] = eq.y;
            // With H ≡ 0 each infected equation factors into rate · class.
            let f1 = (p.alpha1 * y0 - p.eta1 * y3 - p.mu1) * y1;
            let f2 = (p.alpha2 * y0 - p.eta2 * y3 - p.mu2) * y2;
            let f3 = (p.alpha3 * y0 + p.eta1 * y1 + p.eta2 * y2 - p.mu3) * y3;
            assert!(f1.abs() < 1e-9 && f2.abs() < 1e-9 && f3.abs() < 1e-9);
        }
    }

    #[test]
    fn json_records() {
        let eqs = closed_form_equilibria(&p_ref()).unwrap();
        let mut buf = Vec::new();
        write_equilibria_json(&eqs, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let first = &v[2];
        assert_eq!(first["kind"], "G3");
        assert_eq!(first["y"].as_array().unwrap().len(), 4);
        assert!(first["r_star"].is_number() && first["residual"].is_number() && first["exists"].is_boolean());
    }

    proptest! {
        #[test]
        fn closed_forms_balance_over_capacity(k in 0.3f64..60.0) {
            let p = p_ref().with_k(k);
            for eq in closed_form_equilibria(&p).unwrap() {
                prop_assert!(eq.residual <= RESIDUAL_TOL * (1.0 + inf_norm4(&eq.y)));
                if eq.exists && eq.kind != EquilibriumKind::G1 {
                    prop_assert!(balance_checks(&p, &eq).is_ok(), "{:?}", eq);
                }
            }
        }
    }
}
