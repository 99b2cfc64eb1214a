//! Acceptance gate: runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use coinfection_core::bifurcation::{sweep_k, verify_bifurcation, StableKind, SweepConfig, VerifyOptions};
use coinfection_core::equilibria::{balance_checks, closed_form, closed_form_equilibria, inf_norm4, EquilibriumKind};
use coinfection_core::integrator::{check_bounds, integrate_sub, IntegratorConfig, Trajectory};
use coinfection_core::lyapunov::{monitor_descent, v_dot};
use coinfection_core::model::ModelParameters;
use coinfection_core::sampling::{random_admissible, random_initial_state};
use coinfection_core::stability::{block_criteria, classify_local, global_conditions, lambda_threshold, Verdict};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn p_ref() -> ModelParameters {
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

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Outcome { pass: false, detail: format!("error: {e}") }
    }
}

/// Trajectories shared between the convergence, bound and derivative checks.
#[derive(Default)]
struct Runs {
    g2: Vec<Trajectory>,
    g3: Vec<Trajectory>,
    boundary: Vec<Trajectory>,
    fd_discrepancy: f64,
}

fn dist(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn draws(seed: u64, n: usize) -> Vec<ModelParameters> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_admissible(&mut rng)).collect()
}

fn closed_forms() -> Outcome {
    let mut worst_res: f64 = 0.0;
    let mut worst_law: f64 = 0.0;
    for p in draws(101, 200) {
        let eqs = match closed_form_equilibria(&p) {
            Ok(e) => e,
            Err(e) => return Outcome::error(e),
        };
        for eq in eqs {
            worst_res = worst_res.max(eq.residual / (1.0 + inf_norm4(&eq.y)));
            if eq.exists && eq.kind != EquilibriumKind::G1 {
                match balance_checks(&p, &eq) {
                    Ok(r) => {
                        worst_law = worst_law.max(r.law1_error.abs().max(r.law2_error.abs()) / (1.0 + inf_norm4(&eq.y)))
                    }
                    Err(e) => return Outcome::error(e),
                }
            }
        }
    }
    Outcome::new(
        worst_res <= 1e-10 && worst_law <= 1e-9,
        format!("max scaled residual {worst_res:.2e}, max scaled balance error {worst_law:.2e}"),
    )
}

#[allow(clippy::too_many_arguments)]
fn converge(
    p: &ModelParameters,
    target: EquilibriumKind,
    seed: u64,
    runs: usize,
    horizon: f64,
    tol: f64,
    out: &mut Vec<Trajectory>,
    fd_acc: &mut f64,
) -> Outcome {
    let eq = match closed_form(p, target) {
        Ok(e) => e,
        Err(e) => return Outcome::error(e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = IntegratorConfig::default().with_t_end(horizon);
    let mut worst: f64 = 0.0;
    let mut max_v_dot = f64::NEG_INFINITY;
    let mut descent = true;
    let mut fd: f64 = 0.0;
    for _ in 0..runs {
        let y0 = random_initial_state(&mut rng, 0.1, 5.0);
        let traj = match integrate_sub(p, y0, &cfg) {
            Ok(t) => t,
            Err(e) => return Outcome::error(e),
        };
        worst = worst.max(dist(&traj.last().classes(), &eq.y));
        match monitor_descent(p, &eq, &traj) {
            Ok(rep) => {
                max_v_dot = max_v_dot.max(rep.max_v_dot);
                descent &= rep.descent_holds() && rep.truncated_at.is_none();
                fd = fd.max(rep.max_fd_discrepancy);
            }
            Err(e) => return Outcome::error(e),
        }
        out.push(traj);
    }
    *fd_acc = fd_acc.max(fd);
    Outcome::new(
        worst <= tol && max_v_dot <= 1e-10 && descent,
        format!("max final distance {worst:.2e} (tol {tol:.0e}), max v_dot {max_v_dot:.2e}, descent {descent}, fd discrepancy {fd:.2e}"),
    )
}

fn disease_free_global(runs: &mut Runs) -> Outcome {
    converge(&p_ref().with_k(2.0), EquilibriumKind::G2, 202, 50, 2000.0, 1e-4, &mut runs.g2, &mut runs.fd_discrepancy)
}

fn single_strain_global(runs: &mut Runs) -> Outcome {
    converge(&p_ref(), EquilibriumKind::G3, 303, 50, 2000.0, 1e-4, &mut runs.g3, &mut runs.fd_discrepancy)
}

fn boundary_case(runs: &mut Runs) -> Outcome {
    let p = p_ref().with_k(8.0 / 3.0);
    let g2 = match closed_form(&p, EquilibriumKind::G2) {
        Ok(e) => e,
        Err(e) => return Outcome::error(e),
    };
    let report = match classify_local(&p, &g2) {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let cfg = IntegratorConfig::default().with_t_end(5000.0);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let y0 = random_initial_state(&mut rng, 0.1, 5.0);
        match integrate_sub(&p, y0, &cfg) {
            Ok(t) => {
                worst = worst.max(dist(&t.last().classes(), &g2.y));
                runs.boundary.push(t);
            }
            Err(e) => return Outcome::error(e),
        }
    }
    let marginal = report.marginal && !report.local_stable && report.spectral == Verdict::Marginal;
    Outcome::new(
        worst <= 1e-3 && marginal,
        format!(
            "max distance to G2 at t = 5000: {worst:.3e} (tol 1e-3); classifier: {} (max_re {:.1e})",
            report.spectral, report.max_re
        ),
    )
}

fn criterion_consistency() -> Outcome {
    let margin = 1e-6;
    let (mut compared, mut exceptions) = (0usize, Vec::new());
    for (i, p) in draws(505, 200).into_iter().enumerate() {
        let crit = match block_criteria(&p) {
            Ok(c) => c,
            Err(e) => return Outcome::error(e),
        };
        let eqs = match closed_form_equilibria(&p) {
            Ok(e) => e,
            Err(e) => return Outcome::error(e),
        };
        for eq in eqs.iter().filter(|e| e.exists && e.kind != EquilibriumKind::G1) {
            let r = match classify_local(&p, eq) {
                Ok(r) => r,
                Err(e) => return Outcome::error(e),
            };
            let clear = match eq.kind {
                EquilibriumKind::G2 => (p.s_star_star() - p.mu1 / p.alpha1).abs() > margin,
                EquilibriumKind::G3 => crit.det_b.abs() > margin && (crit.i1_star - crit.lambda).abs() > margin,
                EquilibriumKind::G4 => crit.det_d.abs() > margin && crit.trace_d.abs() > margin,
                _ => false,
            };
            if !clear {
                continue;
            }
            compared += 1;
            if r.criterion != Some(r.spectral) {
                exceptions.push(format!("draw {i} {}", eq.kind));
            }
            if eq.kind == EquilibriumKind::G3 && (crit.det_b > 0.0) != (crit.i1_star < crit.lambda) {
                exceptions.push(format!("draw {i} det B vs Λ"));
            }
        }
    }
    Outcome::new(exceptions.is_empty() && compared > 0, format!("{compared} comparisons, exceptions: {exceptions:?}"))
}

fn thresholds() -> Outcome {
    let p = p_ref();
    let (lt, g) = match (lambda_threshold(&p), global_conditions(&p)) {
        (Ok(l), Ok(g)) => (l, g),
        (Err(e), _) | (_, Err(e)) => return Outcome::error(e),
    };
    // Independent quadratic formula on −0.02λ² + 0.03λ + 0.52.
    let oracle = (0.03 + (0.03f64 * 0.03 + 4.0 * 0.02 * 0.52).sqrt()) / 0.04;
    let lambda_ok = (lt.lambda - 5.90388).abs() <= 1e-4 && (lt.lambda - oracle).abs() <= 1e-12;
    let delta_ok = lt.delta(lt.lambda).abs() <= 1e-12 * lt.scale(lt.lambda);
    let sigma0_ok = (g.sigma0 - 4.0).abs() <= 4.0 * f64::EPSILON * 4.0;
    let sigma_hat_ok = (g.sigma_hat - 4.95194).abs() <= 1e-4;
    let mut ordering_violations = 0;
    for q in draws(606, 200) {
        match global_conditions(&q) {
            Ok(gq) if gq.sigma0 <= gq.sigma_hat => {}
            _ => ordering_violations += 1,
        }
    }
    Outcome::new(
        lambda_ok && delta_ok && sigma0_ok && sigma_hat_ok && ordering_violations == 0,
        format!(
            "Λ = {:.6}, σ0 = {} (|σ0 − 4| = {:.1e}), σ̂ = {:.6}, |Δ(Λ)| = {:.1e}, ordering violations {ordering_violations}/200",
            lt.lambda,
            g.sigma0,
            (g.sigma0 - 4.0).abs(),
            g.sigma_hat,
            lt.delta(lt.lambda).abs()
        ),
    )
}

fn bounds(runs: &Runs) -> Outcome {
    let sets = [(p_ref().with_k(2.0), &runs.g2), (p_ref(), &runs.g3), (p_ref().with_k(8.0 / 3.0), &runs.boundary)];
    let mut checked = 0;
    let mut worst_colo = f64::INFINITY;
    let mut worst_total = f64::INFINITY;
    let mut all = true;
    for (p, trajs) in sets {
        for t in trajs.iter() {
            match check_bounds(t, &p) {
                Ok(r) => {
                    checked += 1;
                    all &= r.holds(10.0);
                    worst_colo = worst_colo.min(r.colo_margin_min / r.tolerance);
                    worst_total = worst_total.min(r.total_margin_min / r.tolerance);
                }
                Err(e) => return Outcome::error(e),
            }
        }
    }
    Outcome::new(
        all && checked > 0,
        format!(
            "{checked} trajectories; min margins in tolerance units: colo {worst_colo:.3e}, total {worst_total:.3e}"
        ),
    )
}

fn lyapunov_forms(runs: &Runs) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst: f64 = 0.0;
    let p2 = p_ref().with_k(2.0);
    let p3 = p_ref();
    let (g2, g3) = match (closed_form(&p2, EquilibriumKind::G2), closed_form(&p3, EquilibriumKind::G3)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::error(e),
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
    for _ in 0..1000 {
        let y: [f64; 4] = std::array::from_fn(|_| rng.random_range(1e-3..10.0));
        let ss = p2.s_star_star();
        let a3 = p2.alpha3_hat();
        let special2 = -(p2.b / p2.k) * (ss - y[0]).powi(2)
            - p2.alpha1 * (p2.mu1 / p2.alpha1 - ss) * y[1]
            - p2.alpha2 * (p2.mu2 / p2.alpha2 - ss) * y[2]
            - a3 * (p2.mu3 / a3 - ss) * y[3];
        let i1s = g3.y[1];
        let s1 = p3.mu1 / p3.alpha1;
        let special3 = -(p3.b / p3.k) * (s1 - y[0]).powi(2)
            - (p3.alpha2 * (p3.mu2 / p3.alpha2 - s1) - p3.gamma1 * i1s) * y[2]
            - (a3 * (p3.mu3 / a3 - s1) - p3.eta1 * i1s) * y[3]
            - p3.beta1 * (i1s / y[1]) * y[0] * y[3];
        match (v_dot(&p2, &g2, &y), v_dot(&p3, &g3, &y)) {
            (Ok(a), Ok(b)) => {
                worst = worst.max(rel(a.v_dot_analytic, special2)).max(rel(b.v_dot_analytic, special3));
            }
            (Err(e), _) | (_, Err(e)) => return Outcome::error(e),
        }
    }
    let fd = runs.fd_discrepancy;
    Outcome::new(
        worst <= 1e-13 && fd <= 1e-5,
        format!("max relative gap to specialized forms {worst:.2e} over 2000 evaluations; max analytic/fd gap along trajectories {fd:.2e}"),
    )
}

fn bifurcation_branch() -> Outcome {
    let d_values = [-1e-5, -3e-5, -1e-4];
    let lv = p_ref().lotka_volterra_limit();
    let mut details = Vec::new();
    let mut pass = true;
    match verify_bifurcation(&lv, &d_values, &VerifyOptions::default()) {
        Ok(rep) => {
            let positive = rep.entries.iter().all(|e| e.strictly_positive);
            let close = rep.entries.iter().all(|e| e.rel_error.is_some_and(|r| r <= 0.1));
            let slope = rep.slope_rel_error.is_some_and(|r| r <= 0.05);
            pass &= positive && close && slope;
            details.push(format!("LV: positive {positive}, |Y3 − cD| ≤ 0.1|cD| {close}, slope within 5% {slope}"));
        }
        Err(e) => {
            pass = false;
            details.push(format!("LV: {e}"));
        }
    }
    let weak = ModelParameters { beta1: 1e-3, beta2: 1e-3, gamma1: 1e-3, gamma2: 1e-3, ..p_ref() };
    match verify_bifurcation(&weak, &d_values, &VerifyOptions::default()) {
        Ok(rep) => {
            let positive = rep.entries.iter().all(|e| e.strictly_positive);
            let linear = rep.linearity_max_dev.is_some_and(|d| d <= 0.1);
            pass &= positive && linear;
            details.push(format!("weak coupling: positive {positive}, linear within 10% {linear}"));
        }
        Err(e) => {
            pass = false;
            details.push(format!("weak coupling: {e}"));
        }
    }
    Outcome::new(pass, details.join("; "))
}

fn transition_map() -> Outcome {
    let cfg = SweepConfig { k_min: 0.5, k_max: 8.0, n: 200, ..SweepConfig::default() };
    let rep = match sweep_k(&p_ref(), &cfg) {
        Ok(r) => r,
        Err(e) => return Outcome::error(e),
    };
    let g2 = StableKind::Point(EquilibriumKind::G2);
    let g3 = StableKind::Point(EquilibriumKind::G3);
    let located = rep.transitions.iter().find(|t| t.from == g2 && t.to == g3).map(|t| t.midpoint());
    let located_ok = located.is_some_and(|k| (k - 2.6667).abs() <= 1e-3);
    let in_region: Vec<_> = rep.records.iter().filter(|r| r.k > 8.0 / 3.0 && r.k <= 16.0 / 3.0).collect();
    let g3_unique = !in_region.is_empty() && in_region.iter().all(|r| r.stable_kind == g3);
    let multiple_in_covered =
        rep.records.iter().filter(|r| (r.g2_global || r.g3_global) && r.stable_kind == StableKind::Multiple).count();
    Outcome::new(
        located_ok && g3_unique && multiple_in_covered == 0,
        format!(
            "G2→G3 at K = {}, {} records in (8/3, 16/3] all G3: {g3_unique}, 'multiple' in covered region: {multiple_in_covered}, transitions: {}",
            located.map_or("none".to_string(), |k| format!("{k:.7}")),
            in_region.len(),
            rep.transitions.len()
        ),
    )
}

fn main() -> ExitCode {
    let mut runs = Runs::default();
    type Check<'a> = Box<dyn FnMut(&mut Runs) -> Outcome + 'a>;
    let criteria: Vec<(u32, &str, Option<Duration>, Check)> = vec![
        (1, "closed-form equilibria", Some(Duration::from_secs(5)), Box::new(|_| closed_forms())),
        (2, "disease-free global stability", Some(Duration::from_secs(60)), Box::new(disease_free_global)),
        (3, "single-strain global stability", Some(Duration::from_secs(60)), Box::new(single_strain_global)),
        (4, "threshold capacity boundary case", None, Box::new(boundary_case)),
        (5, "criterion/spectrum consistency", None, Box::new(|_| criterion_consistency())),
        (6, "Λ and stability thresholds", None, Box::new(|_| thresholds())),
        (7, "a priori bounds", None, Box::new(|r| bounds(r))),
        (8, "Lyapunov derivative", None, Box::new(|r| lyapunov_forms(r))),
        (9, "coexistence branch expansion", Some(Duration::from_secs(120)), Box::new(|_| bifurcation_branch())),
        (10, "transition map", None, Box::new(|_| transition_map())),
    ];
    let mut failed = 0;
    for (id, name, limit, mut check) in criteria {
        let start = Instant::now();
        let mut outcome = check(&mut runs);
        let elapsed = start.elapsed();
        if let Some(limit) = limit {
            if elapsed > limit {
                outcome.pass = false;
                outcome.detail.push_str(&format!("; runtime {elapsed:.1?} exceeds {limit:?}"));
            }
        }
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} [{elapsed:.2?}] {name}: {}", outcome.detail);
        if !outcome.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
