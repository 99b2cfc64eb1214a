//! Volterra-type Lyapunov function `v = Σ (y_i − y*_i ln y_i)` and its
//! orbital derivative, with descent monitoring along trajectories.

use std::io::Write;

use serde::Serialize;

use crate::equilibria::{inf_norm4, Equilibrium, RESIDUAL_TOL};
use crate::error::{Error, Result};
use crate::integrator::{fmt_num, rk4_step, Trajectory};
use crate::model::ModelParameters;

/// Cap on the finite-difference step along the flow.
pub const FD_STEP_CAP: f64 = 0.02;
const FD_SUBSTEPS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovEvaluation {
    pub v: f64,
    pub v_dot_analytic: f64,
    pub phi: f64,
    /// Five-point derivative of `v` along the flow, when the stencil stays in
    /// the domain.
    pub v_dot_fd: Option<f64>,
    /// `F(Y*)`, the per-rate growth vector at the reference point.
    pub f_star: [f64; 4],
}

/// Descent tolerance for a value of `v`.
pub fn eps_mono(v: f64) -> f64 {
    1e-10 * (1.0 + v.abs())
}

pub fn v_value(y_star: &[f64; 4], y: &[f64; 4]) -> Result<f64> {
    let mut v = 0.0;
    for i in 0..4 {
        if !(y[i] >= 0.0) {
            return Err(Error::Domain(format!("coordinate {i} is {}", y[i])));
        }
        if y_star[i] == 0.0 {
            v += y[i];
        } else if y[i] == 0.0 {
            return Err(Error::Domain(format!("coordinate {i} vanishes where the reference point is positive")));
        } else {
            v += y[i] - y_star[i] * y[i].ln();
        }
    }
    Ok(v)
}

/// `F(Y) = −q + A·Y`: per-capita growth rates without the source terms.
pub fn f_vector(p: &ModelParameters, y: &[f64; 4]) -> [f64; 4] {
    let [y0, y1, y2, y3] = *y;
    [
        p.b - p.mu0 - p.b / p.k * y0 - p.alpha1 * y1 - p.alpha2 * y2 - p.alpha3_hat() * y3,
        -p.mu1 + p.alpha1 * y0 - p.gamma1 * y2 - p.eta1 * y3,
        -p.mu2 + p.alpha2 * y0 - p.gamma2 * y1 - p.eta2 * y3,
        -p.mu3 + p.alpha3 * y0 + p.eta1 * y1 + p.eta2 * y2,
    ]
}

/// Coupling remainder of the orbital derivative. Products carrying a
/// vanishing reference coordinate are dropped before any division.
pub fn phi(p: &ModelParameters, y_star: &[f64; 4], y: &[f64; 4]) -> f64 {
    let [s0, s1, s2, s3] = *y_star;
    let [y0, y1, y2, y3] = *y;
    let g = p.gamma1 + p.gamma2;
    let mut out = g * (y1 * s2 + s1 * y2) + (p.beta1 + p.beta2) * (y3 * s0 + y0 * s3);
    if s3 != 0.0 && g != 0.0 {
        out -= g * s3 * y1 * y2 / y3;
    }
    if s1 != 0.0 && p.beta1 != 0.0 {
        out -= p.beta1 * s1 * y0 * y3 / y1;
    }
    if s2 != 0.0 && p.beta2 != 0.0 {
        out -= p.beta2 * s2 * y0 * y3 / y2;
    }
    out
}

fn check_reference(p: &ModelParameters, y_star: &Equilibrium) -> Result<[f64; 4]> {
    let scale = 1.0 + inf_norm4(&y_star.y);
    if !(y_star.residual <= RESIDUAL_TOL * scale) || y_star.y.iter().any(|v| *v < 0.0) {
        return Err(Error::Precondition(format!("{:?} is not a valid equilibrium", y_star.y)));
    }
    let f = f_vector(p, &y_star.y);
    for (i, (&y, &fi)) in y_star.y.iter().zip(&f).enumerate() {
        if y > 0.0 && fi > 1e-9 * scale {
            return Err(Error::Precondition(format!("F_{i}(Y*) = {fi} is positive")));
        }
    }
    Ok(f)
}

fn analytic(p: &ModelParameters, y_star: &[f64; 4], f_star: &[f64; 4], y: &[f64; 4]) -> (f64, f64) {
    let ph = phi(p, y_star, y);
    let dy0 = y[0] - y_star[0];
    let linear: f64 = (0..4).map(|i| y[i] * f_star[i]).sum();
    (-p.b / p.k * dy0 * dy0 + linear + ph, ph)
}

/// `v`, its analytic orbital derivative and `Φ` at `y`.
pub fn v_dot(p: &ModelParameters, y_star: &Equilibrium, y: &[f64; 4]) -> Result<LyapunovEvaluation> {
    let f_star = check_reference(p, y_star)?;
    let v = v_value(&y_star.y, y)?;
    let (v_dot_analytic, phi) = analytic(p, &y_star.y, &f_star, y);
    Ok(LyapunovEvaluation { v, v_dot_analytic, phi, v_dot_fd: None, f_star })
}

/// As [`v_dot`], adding a finite-difference derivative with step `h`.
pub fn v_dot_with_fd(p: &ModelParameters, y_star: &Equilibrium, y: &[f64; 4], h: f64) -> Result<LyapunovEvaluation> {
    let mut e = v_dot(p, y_star, y)?;
    e.v_dot_fd = fd_along_flow(p, &y_star.y, y, h);
    Ok(e)
}

fn flow(p: &ModelParameters, y: &[f64; 4], t: f64) -> [f64; 4] {
    let mut z = [y[0], y[1], y[2], y[3], 0.0];
    let h = t / FD_SUBSTEPS as f64;
    for _ in 0..FD_SUBSTEPS {
        z = rk4_step(p, &z, h);
    }
    [z[0], z[1], z[2], z[3]]
}

fn five_point(p: &ModelParameters, y_star: &[f64; 4], y: &[f64; 4], h: f64) -> Option<f64> {
    let at = |t: f64| v_value(y_star, &flow(p, y, t)).ok();
    let (m2, m1, p1, p2) = (at(-2.0 * h)?, at(-h)?, at(h)?, at(2.0 * h)?);
    Some((-p2 + 8.0 * p1 - 8.0 * m1 + m2) / (12.0 * h))
}

/// Derivative of `v` along the flow: the five-point stencil
/// `(−v(2h) + 8v(h) − 8v(−h) + v(−2h)) / 12h` at `h` and `h/2`, combined by
/// one Richardson step.
pub fn fd_along_flow(p: &ModelParameters, y_star: &[f64; 4], y: &[f64; 4], h: f64) -> Option<f64> {
    if !(h > 0.0) {
        return None;
    }
    let coarse = five_point(p, y_star, y, h)?;
    let fine = five_point(p, y_star, y, 0.5 * h)?;
    Some((16.0 * fine - coarse) / 15.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DescentRow {
    pub t: f64,
    pub v: f64,
    pub v_dot_analytic: f64,
    pub v_dot_fd: Option<f64>,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentReport {
    pub rows: Vec<DescentRow>,
    pub max_v_dot: f64,
    /// Largest `v_dot_analytic − eps_mono(v)` over the samples.
    pub max_v_dot_excess: f64,
    /// Largest sample-to-sample increase of `v` beyond the integrator noise allowance.
    pub max_v_increase_excess: f64,
    /// Largest `|v_dot_analytic − v_dot_fd| / (1 + |v_dot_analytic|)`.
    pub max_fd_discrepancy: f64,
    /// Time of the first sample outside the domain of `v`, if any.
    pub truncated_at: Option<f64>,
}

impl DescentReport {
    pub fn descent_holds(&self) -> bool {
        self.max_v_dot_excess <= 0.0 && self.max_v_increase_excess <= 0.0
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,v,v_dot_analytic,v_dot_fd,phi")?;
        for r in &self.rows {
            let fd = r.v_dot_fd.map(fmt_num).unwrap_or_default();
            writeln!(out, "{},{},{},{},{}", fmt_num(r.t), fmt_num(r.v), fmt_num(r.v_dot_analytic), fd, fmt_num(r.phi))?;
        }
        Ok(())
    }
}

/// Evaluates `v` and `v̇` at every sample of `traj`.
pub fn monitor_descent(p: &ModelParameters, y_star: &Equilibrium, traj: &Trajectory) -> Result<DescentReport> {
    let f_star = check_reference(p, y_star)?;
    let mut rows = Vec::with_capacity(traj.len());
    let mut truncated_at = None;
    let mut max_v_dot = f64::NEG_INFINITY;
    let mut max_v_dot_excess = f64::NEG_INFINITY;
    let mut max_v_increase_excess = f64::NEG_INFINITY;
    let mut max_fd_discrepancy: f64 = 0.0;
    let mut prev: Option<(f64, [f64; 4])> = None;
    for (k, s) in traj.samples.iter().enumerate() {
        let y = s.classes();
        let v = match v_value(&y_star.y, &y) {
            Ok(v) => v,
            Err(_) => {
                truncated_at = Some(s.t);
                break;
            }
        };
        let (vd, ph) = analytic(p, &y_star.y, &f_star, &y);
        let local = traj.steps.get(k).copied().filter(|h| *h > 0.0).or_else(|| traj.steps.get(k + 1).copied());
        let h = local.unwrap_or(FD_STEP_CAP).min(FD_STEP_CAP);
        let fd = fd_along_flow(p, &y_star.y, &y, h);
        if let Some(fd) = fd {
            max_fd_discrepancy = max_fd_discrepancy.max((vd - fd).abs() / (1.0 + vd.abs()));
        }
        max_v_dot = max_v_dot.max(vd);
        max_v_dot_excess = max_v_dot_excess.max(vd - eps_mono(v));
        if let Some((pv, py)) = prev {
            // Global error of the integrator, propagated through ∂v/∂y.
            let noise: f64 = (0..4)
                .map(|i| {
                    let g = if y_star.y[i] == 0.0 { 1.0 } else { (1.0 - y_star.y[i] / y[i]).abs() };
                    g * 10.0 * (traj.rel_tol * y[i].abs().max(py[i].abs()) + traj.abs_tol)
                })
                .sum();
            max_v_increase_excess = max_v_increase_excess.max(v - pv - eps_mono(v) - noise);
        }
        prev = Some((v, y));
        rows.push(DescentRow { t: s.t, v, v_dot_analytic: vd, v_dot_fd: fd, phi: ph });
    }
    Ok(DescentReport { rows, max_v_dot, max_v_dot_excess, max_v_increase_excess, max_fd_discrepancy, truncated_at })
}
