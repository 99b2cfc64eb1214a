//! Carrying-capacity sweeps and the branch of coexistence points that leaves
//! the single-strain state when its infection block loses stability.

use std::fmt;
use std::io::Write;

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::equilibria::{
    closed_form, closed_form_equilibria, find_g5, i1_star, inf_norm4, seeds_near_g3, solve_from_seeds, Equilibrium,
    EquilibriumKind, G5Search, NewtonSettings, RESIDUAL_TOL,
};
use crate::error::{Error, Result};
use crate::integrator::{fmt_num, integrate_sub, IntegratorConfig};
use crate::model::{jacobian_sub, ModelParameters};
use crate::sampling::random_initial_state;
use crate::stability::{
    block_criteria, classify_local, eigenvalues_4x4, lambda_threshold, positive_root, GlobalVerdict, Verdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StableKind {
    Point(EquilibriumKind),
    NoneFound,
    Multiple,
}

impl fmt::Display for StableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StableKind::Point(k) => write!(f, "{k}"),
            StableKind::NoneFound => f.write_str("none-found"),
            StableKind::Multiple => f.write_str("multiple"),
        }
    }
}

impl Serialize for StableKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub k_min: f64,
    pub k_max: f64,
    pub n: usize,
    pub verify_by_simulation: bool,
    /// Required when `verify_by_simulation` is set.
    pub rng_seed: Option<u64>,
    pub search_g5: bool,
    pub g5_grid_density: usize,
    pub refine: bool,
    /// Width in K at which transition bisection stops.
    pub refine_resolution: f64,
    pub sim_runs: usize,
    pub sim_horizon: f64,
    /// Final-state distance accepted as convergence, relative to `1 + ‖y‖∞`.
    pub sim_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            k_min: 0.5,
            k_max: 8.0,
            n: 100,
            verify_by_simulation: false,
            rng_seed: None,
            search_g5: true,
            g5_grid_density: 4,
            refine: true,
            refine_resolution: 1e-6,
            sim_runs: 5,
            sim_horizon: 2000.0,
            sim_tolerance: 1e-3,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_min > 0.0 && self.k_max.is_finite() && self.k_min < self.k_max) {
            return Err(Error::Usage(format!("need 0 < k_min < k_max, got [{}, {}]", self.k_min, self.k_max)));
        }
        if self.n < 2 {
            return Err(Error::Usage("a sweep needs at least two grid points".into()));
        }
        if self.refine && !(self.refine_resolution > 0.0) {
            return Err(Error::Usage("refine_resolution must be positive".into()));
        }
        if self.verify_by_simulation && self.rng_seed.is_none() {
            return Err(Error::Usage("rng_seed is required when verify_by_simulation is on".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        let span = self.k_max - self.k_min;
        (0..self.n)
            .map(|i| if i + 1 == self.n { self.k_max } else { self.k_min + span * i as f64 / (self.n - 1) as f64 })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    #[serde(rename = "K")]
    pub k: f64,
    pub s_star_star: f64,
    pub stable_kind: StableKind,
    pub stable_coords: Option<[f64; 4]>,
    /// Largest real part at the reported point, or the smallest over all
    /// candidates when none is stable.
    pub max_re: f64,
    pub det_b: f64,
    pub lambda: f64,
    pub sigma0: f64,
    pub sigma_hat: f64,
    pub g2_global: bool,
    pub g3_global: bool,
    /// Closed-form verdict agrees with the spectrum at the reported point.
    pub criterion_agrees: Option<bool>,
    pub verified_by_sim: Option<bool>,
    pub above_sigma1: bool,
    pub above_sigma0: bool,
    pub above_sigma_hat: bool,
    pub coexistence_points: usize,
    /// Added by transition bisection rather than taken from the grid.
    pub refined: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Transition {
    pub k_left: f64,
    pub k_right: f64,
    pub from: StableKind,
    pub to: StableKind,
}

impl Transition {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.k_left + self.k_right)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub records: Vec<SweepRecord>,
    pub transitions: Vec<Transition>,
}

impl SweepReport {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "K,s_star_star,stable_kind,Y0,Y1,Y2,Y3,det_B,Lambda,sigma0,sigma_hat,max_re,verified_by_sim")?;
        for r in &self.records {
            let coords = match r.stable_coords {
                Some(y) => y.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(","),
                None => ",,,".to_string(),
            };
            let sim = r.verified_by_sim.map(|b| b.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                fmt_num(r.k),
                fmt_num(r.s_star_star),
                r.stable_kind,
                coords,
                fmt_num(r.det_b),
                fmt_num(r.lambda),
                fmt_num(r.sigma0),
                fmt_num(r.sigma_hat),
                fmt_num(r.max_re),
                sim
            )?;
        }
        Ok(())
    }
}

/// Classification of the stable state at one capacity, without simulation.
pub fn classify_at(base: &ModelParameters, k: f64, cfg: &SweepConfig) -> Result<SweepRecord> {
    let p = base.with_k(k);
    let mut candidates: Vec<Equilibrium> = closed_form_equilibria(&p)?.into_iter().filter(|e| e.exists).collect();
    let mut coexistence_points = 0;
    if cfg.search_g5 {
        let g5 = find_g5(&p, &G5Search { grid_density: cfg.g5_grid_density, ..G5Search::default() })?;
        coexistence_points = g5.len();
        candidates.extend(g5);
    }
    let reports = candidates.iter().map(|e| classify_local(&p, e)).collect::<Result<Vec<_>>>()?;
    let stable: Vec<_> = reports.iter().filter(|r| r.local_stable).collect();
    let chosen = match stable.len() {
        1 => Some(stable[0]),
        0 => reports.iter().find(|r| r.marginal && r.global_stable == GlobalVerdict::Yes),
        _ => None,
    };
    let stable_kind = match (stable.len(), chosen) {
        (n, _) if n > 1 => StableKind::Multiple,
        (_, Some(r)) => StableKind::Point(r.kind),
        _ => StableKind::NoneFound,
    };
    let max_re = match chosen {
        Some(r) => r.max_re,
        None => reports.iter().map(|r| r.max_re).fold(f64::INFINITY, f64::min),
    };
    let criteria = block_criteria(&p)?;
    let global =
        reports.first().map(|r| r.global).ok_or_else(|| Error::Precondition("no equilibria to classify".into()))?;
    let ss = p.s_star_star();
    Ok(SweepRecord {
        k,
        s_star_star: ss,
        stable_kind,
        stable_coords: chosen.map(|r| r.y),
        max_re,
        det_b: criteria.det_b,
        lambda: criteria.lambda,
        sigma0: global.sigma0,
        sigma_hat: global.sigma_hat,
        g2_global: global.g2_global,
        g3_global: global.g3_global,
        criterion_agrees: chosen.and_then(|r| r.criterion.map(|c| c == r.spectral)),
        verified_by_sim: None,
        above_sigma1: ss > p.mu1 / p.alpha1,
        above_sigma0: ss > global.sigma0,
        above_sigma_hat: ss > global.sigma_hat,
        coexistence_points,
        refined: false,
    })
}

/// Integrates from random positive states and checks that every run ends
/// near the reported stable point.
pub fn verify_by_simulation(
    base: &ModelParameters,
    rec: &SweepRecord,
    seed: u64,
    cfg: &SweepConfig,
) -> Result<Option<bool>> {
    let Some(target) = rec.stable_coords else {
        return Ok(None);
    };
    let p = base.with_k(rec.k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ rec.k.to_bits());
    let icfg =
        IntegratorConfig { stop_when_steady: Some(1e-12), ..IntegratorConfig::default().with_t_end(cfg.sim_horizon) };
    let tol = cfg.sim_tolerance * (1.0 + inf_norm4(&target));
    for run in 0..cfg.sim_runs {
        let y0 = random_initial_state(&mut rng, 0.1, 5.0);
        let traj = integrate_sub(&p, y0, &icfg)?;
        let end = traj.last().classes();
        let dist = end.iter().zip(&target).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if dist > tol {
            debug!("K = {}: run {run} ended {dist:e} from {}", rec.k, rec.stable_kind);
            return Ok(Some(false));
        }
    }
    Ok(Some(true))
}

fn bisect(
    base: &ModelParameters,
    lo: &SweepRecord,
    hi: &SweepRecord,
    cfg: &SweepConfig,
) -> Result<(SweepRecord, SweepRecord)> {
    let (mut lo, mut hi) = (lo.clone(), hi.clone());
    while hi.k - lo.k > cfg.refine_resolution {
        let mid = 0.5 * (lo.k + hi.k);
        if mid <= lo.k || mid >= hi.k {
            break;
        }
        let mut rec = classify_at(base, mid, cfg)?;
        rec.refined = true;
        if rec.stable_kind == lo.stable_kind {
            lo = rec;
        } else {
            hi = rec;
        }
    }
    Ok((lo, hi))
}

/// Classifies the stable state over a uniform grid in K, bisecting every
/// change of stable kind down to `refine_resolution`.
pub fn sweep_k(base: &ModelParameters, cfg: &SweepConfig) -> Result<SweepReport> {
    cfg.validate()?;
    base.require_admissible()?;
    let mut records = Vec::with_capacity(cfg.n);
    for k in cfg.grid() {
        let mut rec = classify_at(base, k, cfg)?;
        if cfg.verify_by_simulation {
            rec.verified_by_sim = verify_by_simulation(base, &rec, cfg.rng_seed.unwrap_or_default(), cfg)?;
        }
        records.push(rec);
    }
    let mut transitions = Vec::new();
    let mut extra = Vec::new();
    for pair in records.windows(2) {
        if pair[0].stable_kind == pair[1].stable_kind {
            continue;
        }
        let (lo, hi) =
            if cfg.refine { bisect(base, &pair[0], &pair[1], cfg)? } else { (pair[0].clone(), pair[1].clone()) };
        transitions.push(Transition { k_left: lo.k, k_right: hi.k, from: pair[0].stable_kind, to: hi.stable_kind });
        info!("transition {} -> {} in [{}, {}]", pair[0].stable_kind, hi.stable_kind, lo.k, hi.k);
        extra.extend([lo, hi].into_iter().filter(|r| r.refined));
    }
    records.extend(extra);
    records.sort_by(|a, b| a.k.total_cmp(&b.k));
    records.dedup_by(|a, b| a.k == b.k);
    Ok(SweepReport { records, transitions })
}

/// Capacity at which the infection block at the single-strain state has
/// determinant `target`.
pub fn tune_k_for_det_b(p: &ModelParameters, target: f64) -> Result<f64> {
    let d = p.require_admissible()?;
    let lt = lambda_threshold(p)?;
    let sup = (p.b - p.mu0) / p.alpha1;
    let k_floor = p.b * d.sigma1 / (p.b - p.mu0);
    if !(target < lt.a0) {
        return Err(Error::Tuning {
            target,
            detail: format!("det B stays below {} for every K in ({k_floor}, ∞)", lt.a0),
        });
    }
    let x = positive_root(lt.a2, lt.a1, lt.a0 - target);
    if !(x.is_finite() && p.alpha1 * x < p.b - p.mu0) {
        return Err(Error::Tuning {
            target,
            detail: format!(
                "needs strain-1 level {x}, but it stays below {sup} for every K in ({k_floor}, ∞); the infimum of det B there is {}",
                lt.delta(sup)
            ),
        });
    }
    let k = p.b * d.sigma1 / ((p.b - p.mu0) - p.alpha1 * x);
    let achieved = block_criteria(&p.with_k(k))?.det_b;
    if (achieved - target).abs() > 1e-9 * (1.0 + lt.scale(x)) {
        return Err(Error::Tuning { target, detail: format!("K = {k} gives det B = {achieved}") });
    }
    Ok(k)
}

/// Root of the balance equations on the branch leaving G3 along its unstable
/// direction. The strain-2 coordinate may vanish (it does when coinfection
/// does not feed strain 2).
pub fn branch_near_g3(p: &ModelParameters) -> Option<[f64; 4]> {
    let g3 = closed_form(p, EquilibriumKind::G3).ok()?;
    let roots = solve_from_seeds(p, &seeds_near_g3(p), &NewtonSettings::default(), 1e-12);
    let scale = 1.0 + inf_norm4(&g3.y);
    roots
        .into_iter()
        .filter(|y| {
            y[3] > 1e-12 * scale
                && y[0] > 0.0
                && y[1] > 0.0
                && y[2] >= 0.0
                && Equilibrium::new(p, EquilibriumKind::G5, *y, true).residual <= RESIDUAL_TOL * scale
        })
        .min_by(|a, b| {
            let da = a.iter().zip(&g3.y).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let db = b.iter().zip(&g3.y).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            da.total_cmp(&db)
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BifurcationExpansion {
    #[serde(rename = "K")]
    pub k: f64,
    /// `det B` at the single-strain state.
    #[serde(rename = "D")]
    pub d: f64,
    pub a_scalar: f64,
    pub b_scalar: f64,
    pub lambda_star: f64,
    pub xi0_coeff: f64,
    pub xi1_partial: f64,
    /// `−Kα1²/(B b η1²)`, exact when coinfection feeds neither strain.
    pub c_lotka_volterra: f64,
    /// Least-squares slope of `Y3` against `D` from Newton roots.
    pub c_fit: Option<f64>,
    /// Coefficient in use: the closed form in the Lotka–Volterra limit, the
    /// fitted slope otherwise.
    pub c: Option<f64>,
    pub y3_predicted: Option<f64>,
}

/// Targets of `det B` used to fit the slope of the branch.
pub const FIT_TARGETS: [f64; 5] = [-1e-3, -3e-4, -1e-4, -3e-5, -1e-5];

/// Least-squares slope through the origin.
pub fn slope_through_origin(points: &[(f64, f64)]) -> Option<f64> {
    let sxx: f64 = points.iter().map(|(x, _)| x * x).sum();
    let sxy: f64 = points.iter().map(|(x, y)| x * y).sum();
    (points.len() >= 2 && sxx > 0.0).then(|| sxy / sxx)
}

/// Expansion coefficients at the current capacity. With `fit`, the branch is
/// also solved at [`FIT_TARGETS`] to estimate the slope numerically.
pub fn expansion_near_sigma_hat(p: &ModelParameters, fit: bool) -> Result<BifurcationExpansion> {
    let d = p.require_admissible()?;
    if !(p.s_star_star() > d.sigma1) {
        return Err(Error::Precondition("the single-strain state does not exist at this capacity".into()));
    }
    let i1 = i1_star(p);
    let crit = block_criteria(p)?;
    let denom = p.mu2 + p.gamma2 * i1 - p.alpha2 * d.sigma1;
    if !(denom > 0.0) {
        return Err(Error::Degenerate(format!("μ2 + γ2·I1* − α2·σ1 = {denom} is not positive")));
    }
    let lambda_star = p.beta2 * d.sigma1 / denom;
    let a_scalar = p.mu3 - p.alpha3 * d.sigma1 - p.eta1 * i1;
    let b_scalar = p.alpha2 * (d.sigma2 - d.sigma1) + p.gamma2 * i1;
    let xi0_coeff = (p.eta1 + lambda_star * p.gamma1 - p.beta1 * d.sigma1 / i1) / p.alpha1;
    let xi1_partial = -lambda_star * p.alpha2 / p.alpha1 - p.b * xi0_coeff / (p.alpha1 * p.k);
    let c_lotka_volterra = -p.k * p.alpha1 * p.alpha1 / (b_scalar * p.b * p.eta1 * p.eta1);
    let c_fit = if fit {
        let mut pts = Vec::new();
        for target in FIT_TARGETS {
            match tune_k_for_det_b(p, target) {
                Ok(k) => {
                    if let Some(y) = branch_near_g3(&p.with_k(k)) {
                        pts.push((target, y[3]));
                    }
                }
                Err(e) => debug!("slope fit skips D = {target:e}: {e}"),
            }
        }
        slope_through_origin(&pts)
    } else {
        None
    };
    let c = if p.is_lotka_volterra() { Some(c_lotka_volterra) } else { c_fit };
    Ok(BifurcationExpansion {
        k: p.k,
        d: crit.det_b,
        a_scalar,
        b_scalar,
        lambda_star,
        xi0_coeff,
        xi1_partial,
        c_lotka_volterra,
        c_fit,
        c,
        y3_predicted: c.map(|c| c * crit.det_b),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BifurcationEntry {
    pub target_d: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub achieved_d: f64,
    /// Branch point found near G3, if any.
    pub y: Option<[f64; 4]>,
    pub strictly_positive: bool,
    pub c: Option<f64>,
    pub y3_predicted: Option<f64>,
    /// `|Y3 − cD| / |cD|`.
    pub rel_error: Option<f64>,
    pub max_re: Option<f64>,
    pub spectral: Option<Verdict>,
    /// Verdict on the single-strain state at this capacity.
    pub g3_verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BifurcationReport {
    pub entries: Vec<BifurcationEntry>,
    /// Capacity at which `det B = 0`.
    pub k_threshold: f64,
    /// Closed-form coefficient at `k_threshold` (Lotka–Volterra limit only).
    pub c_threshold: Option<f64>,
    /// Least-squares slope of `Y3` against `D` over the entries.
    pub slope: Option<f64>,
    pub slope_rel_error: Option<f64>,
    /// Largest `|Y3 − cD| / D²` over the entries.
    pub fitted_c2: Option<f64>,
    /// Largest `|(Y3_i/Y3_j)/(D_i/D_j) − 1|` over pairs of entries.
    pub linearity_max_dev: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// Largest coinfection coupling accepted.
    pub max_coupling: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { max_coupling: 1e-2 }
    }
}

/// Tunes K to each requested `det B`, finds the branch point near G3 and
/// compares it with the leading-order expansion.
pub fn verify_bifurcation(p: &ModelParameters, d_values: &[f64], opts: &VerifyOptions) -> Result<BifurcationReport> {
    p.require_admissible()?;
    let coupling = [p.beta1, p.beta2, p.gamma1, p.gamma2].into_iter().fold(0.0, f64::max);
    if coupling > opts.max_coupling {
        return Err(Error::Precondition(format!("coinfection coupling {coupling} exceeds {}", opts.max_coupling)));
    }
    if d_values.is_empty() {
        return Err(Error::Usage("no det B targets given".into()));
    }
    let k_threshold = tune_k_for_det_b(p, 0.0)?;
    let lv = p.is_lotka_volterra();
    let c_threshold =
        lv.then(|| expansion_near_sigma_hat(&p.with_k(k_threshold), false).map(|e| e.c_lotka_volterra)).transpose()?;
    let mut entries = Vec::with_capacity(d_values.len());
    for &target in d_values {
        let k = tune_k_for_det_b(p, target)?;
        let pk = p.with_k(k);
        let g3 = closed_form(&pk, EquilibriumKind::G3)?;
        let g3_verdict = classify_local(&pk, &g3)?.spectral;
        let achieved_d = block_criteria(&pk)?.det_b;
        let y = if target < 0.0 { branch_near_g3(&pk) } else { None };
        let c = if lv { Some(expansion_near_sigma_hat(&pk, false)?.c_lotka_volterra) } else { None };
        let (mut max_re, mut spectral) = (None, None);
        if let Some(y) = y {
            let ev = eigenvalues_4x4(&jacobian_sub(&pk, &y))?;
            max_re = Some(ev[0].re);
            spectral = Some(Verdict::from_max_re(ev[0].re));
        }
        entries.push(BifurcationEntry {
            target_d: target,
            k,
            achieved_d,
            y,
            strictly_positive: y.is_some_and(|y| y.iter().all(|v| *v > 0.0)),
            c,
            y3_predicted: c.map(|c| c * achieved_d),
            rel_error: None,
            max_re,
            spectral,
            g3_verdict,
        });
    }
    let pts: Vec<(f64, f64)> = entries.iter().filter_map(|e| e.y.map(|y| (e.achieved_d, y[3]))).collect();
    let slope = slope_through_origin(&pts);
    for e in &mut entries {
        if e.c.is_none() {
            e.c = slope;
            e.y3_predicted = slope.map(|s| s * e.achieved_d);
        }
        if let (Some(y), Some(pred)) = (e.y, e.y3_predicted) {
            e.rel_error = Some((y[3] - pred).abs() / pred.abs());
        }
    }
    let fitted_c2 = entries
        .iter()
        .filter_map(|e| Some((e.y?[3] - e.y3_predicted?).abs() / (e.achieved_d * e.achieved_d)))
        .reduce(f64::max);
    let mut linearity_max_dev: Option<f64> = None;
    for (i, a) in pts.iter().enumerate() {
        for b in &pts[i + 1..] {
            let dev = ((a.1 / b.1) / (a.0 / b.0) - 1.0).abs();
            linearity_max_dev = Some(linearity_max_dev.map_or(dev, |m| m.max(dev)));
        }
    }
    let slope_rel_error = match (slope, c_threshold) {
        (Some(s), Some(c)) => Some((s - c).abs() / c.abs()),
        _ => None,
    };
    Ok(BifurcationReport { entries, k_threshold, c_threshold, slope, slope_rel_error, fitted_c2, linearity_max_dev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::p_ref;

    fn quick() -> SweepConfig {
        SweepConfig { search_g5: false, ..SweepConfig::default() }
    }

    /// Reference rates with faster coinfection growth, so the branch leaves
    /// G3 at a capacity the strain-1 level can actually reach.
    fn steep() -> ModelParameters {
        ModelParameters { eta1: 0.25, eta2: 0.25, ..p_ref() }
    }

    #[test]
    fn grid_is_uniform_and_closed() {
        let cfg = SweepConfig { k_min: 1.0, k_max: 2.0, n: 5, ..quick() };
        assert_eq!(cfg.grid(), vec![1.0, 1.25, 1.5, 1.75, 2.0]);
        assert!(SweepConfig { k_min: 2.0, k_max: 1.0, ..quick() }.validate().is_err());
        assert!(SweepConfig { n: 1, ..quick() }.validate().is_err());
        let err = SweepConfig { verify_by_simulation: true, ..quick() }.validate().unwrap_err();
        assert!(err.to_string().contains("rng_seed"));
    }

    #[test]
    fn small_capacities_keep_disease_free_state() {
        let cfg = SweepConfig { k_min: 0.5, k_max: 2.6, n: 15, ..quick() };
        let rep = sweep_k(&p_ref(), &cfg).unwrap();
        assert!(rep.transitions.is_empty());
        for r in &rep.records {
            assert_eq!(r.stable_kind, StableKind::Point(EquilibriumKind::G2));
            assert!((r.s_star_star - 0.75 * r.k).abs() < 1e-14);
        }
    }

    #[test]
    fn first_transition_located() {
        let cfg = SweepConfig { k_min: 0.5, k_max: 5.0, n: 20, ..quick() };
        let rep = sweep_k(&p_ref(), &cfg).unwrap();
        assert_eq!(rep.transitions.len(), 1);
        let t = rep.transitions[0];
        assert_eq!(t.from, StableKind::Point(EquilibriumKind::G2));
        assert_eq!(t.to, StableKind::Point(EquilibriumKind::G3));
        assert!(t.k_right - t.k_left <= 1e-6);
        assert!((t.midpoint() - 8.0 / 3.0).abs() < 1e-6);
        assert!(rep.records.windows(2).all(|w| w[0].k < w[1].k));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "K,s_star_star,stable_kind,Y0,Y1,Y2,Y3,det_B,Lambda,sigma0,sigma_hat,max_re,verified_by_sim\n"
        ));
        assert_eq!(text.lines().count(), rep.records.len() + 1);
    }

    #[test]
    fn simulation_agrees_with_classification() {
        let cfg = SweepConfig {
            k_min: 2.0,
            k_max: 4.0,
            n: 2,
            verify_by_simulation: true,
            rng_seed: Some(11),
            sim_horizon: 400.0,
            ..quick()
        };
        let rep = sweep_k(&p_ref(), &cfg).unwrap();
        let grid: Vec<_> = rep.records.iter().filter(|r| !r.refined).collect();
        assert_eq!(grid.len(), 2);
        assert!(grid.iter().all(|r| r.verified_by_sim == Some(true)), "{grid:?}");
    }

    #[test]
    fn expansion_reference_values() {
        let e = expansion_near_sigma_hat(&p_ref(), false).unwrap();
        assert!((e.d - 0.5).abs() < 1e-14);
        // μ3 − α3σ1 − η1I1* and α2(σ2 − σ1) + γ2I1*
        assert!((e.a_scalar - 0.9).abs() < 1e-14);
        assert!((e.b_scalar - 0.6).abs() < 1e-14);
        assert!((e.lambda_star - 0.1 / 0.6).abs() < 1e-14);
        assert!(e.c.is_none());
        assert!(expansion_near_sigma_hat(&p_ref().with_k(2.0), false).is_err());
    }

    #[test]
    fn tuning_hits_target_and_reports_unreachable_targets() {
        let p = p_ref();
        let k = tune_k_for_det_b(&p, 0.1).unwrap();
        assert!((block_criteria(&p.with_k(k)).unwrap().det_b - 0.1).abs() < 1e-12);
        let k0 = tune_k_for_det_b(&p, 0.0).unwrap();
        let lambda = lambda_threshold(&p).unwrap().lambda;
        assert!((i1_star(&p.with_k(k0)) - lambda).abs() < 1e-10);
        let lv = p.lotka_volterra_limit();
        match tune_k_for_det_b(&lv, -1e-4) {
            Err(Error::Tuning { detail, .. }) => assert!(detail.contains("stays below 6")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lotka_volterra_branch_is_exactly_linear() {
        let p = steep().lotka_volterra_limit();
        for target in [-1e-4, -1e-3] {
            let k = tune_k_for_det_b(&p, target).unwrap();
            let pk = p.with_k(k);
            let e = expansion_near_sigma_hat(&pk, false).unwrap();
            let y = branch_near_g3(&pk).expect("branch point");
            assert_eq!(y[2], 0.0);
            let pred = e.y3_predicted.unwrap();
            assert!((y[3] - pred).abs() <= 1e-8 * pred.abs(), "{} vs {pred}", y[3]);
        }
    }

    #[test]
    fn weak_coupling_branch_positive_and_linear() {
        let p = ModelParameters { beta1: 1e-3, beta2: 1e-3, gamma1: 1e-3, gamma2: 1e-3, ..steep() };
        let rep = verify_bifurcation(&p, &[-1e-5, -3e-5, -1e-4], &VerifyOptions::default()).unwrap();
        for e in &rep.entries {
            assert!(e.strictly_positive, "{e:?}");
            assert!(e.rel_error.unwrap() < 0.1);
        }
        assert!(rep.linearity_max_dev.unwrap() < 0.1);
    }

    #[test]
    fn positive_det_b_has_no_branch() {
        let p = ModelParameters { beta1: 1e-3, beta2: 1e-3, gamma1: 1e-3, gamma2: 1e-3, ..steep() };
        let rep = verify_bifurcation(&p, &[1e-3], &VerifyOptions::default()).unwrap();
        assert!(rep.entries[0].y.is_none());
        assert_eq!(rep.entries[0].g3_verdict, Verdict::Stable);
    }

    #[test]
    fn strong_coupling_rejected() {
        assert!(matches!(
            verify_bifurcation(&p_ref(), &[-1e-4], &VerifyOptions::default()),
            Err(Error::Precondition(_))
        ));
    }
}
