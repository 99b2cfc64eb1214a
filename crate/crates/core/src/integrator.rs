//! Adaptive Dormand–Prince 5(4) integration with positivity handling, plus
//! monitors for the a priori bounds every trajectory must respect.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Dynamics, ModelParameters, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub t_end: f64,
    pub positivity_floor: f64,
    pub method: Method,
    /// Record every n-th accepted step (the final state is always recorded).
    pub output_stride: usize,
    /// Stop once `‖rhs‖∞` stays below this for [`STEADY_RUN`] accepted steps.
    pub stop_when_steady: Option<f64>,
    pub max_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Method {
    DormandPrince45,
    /// Fixed step `h_init`, for cross-checks.
    Rk4,
}

/// Consecutive quiet steps needed to call a run steady.
pub const STEADY_RUN: usize = 10;
pub const STEADY_TOL: f64 = 1e-8;

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 10.0,
            t_end: 100.0,
            positivity_floor: 0.0,
            method: Method::DormandPrince45,
            output_stride: 1,
            stop_when_steady: None,
            max_steps: 50_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_t_end(self, t_end: f64) -> Self {
        IntegratorConfig { t_end, ..self }
    }

    pub fn with_tolerances(self, rel_tol: f64, abs_tol: f64) -> Self {
        IntegratorConfig { rel_tol, abs_tol, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Precondition(format!("integrator config: {what}")));
        if !(self.h_min > 0.0 && self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return bad("need 0 < h_min ≤ h_init ≤ h_max");
        }
        if !(self.rel_tol > 0.0 && self.abs_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.positivity_floor >= 0.0) {
            return bad("positivity_floor must be nonnegative");
        }
        if !(self.t_end.is_finite()) {
            return bad("t_end must be finite");
        }
        if self.output_stride == 0 {
            return bad("output_stride must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MonitorId {
    /// A slightly negative component was clamped; margin is the clamped value.
    PositivityClamp,
    /// A step was rejected for driving a component clearly negative.
    PositivityReject,
    /// `‖rhs‖∞` has stayed below the steady tolerance; margin is `‖rhs‖∞`.
    Steady,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonitorEvent {
    pub t: f64,
    pub id: MonitorId,
    pub margin: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<State>,
    /// Step that produced each sample (0 for the initial state).
    pub steps: Vec<f64>,
    pub dense: bool,
    pub monitor_log: Vec<MonitorEvent>,
    /// Time from which the run has been steady, if it became so.
    pub steady_since: Option<f64>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    #[serde(skip)]
    pub(crate) params_digest: Option<u64>,
}

impl Trajectory {
    pub fn first(&self) -> &State {
        &self.samples[0]
    }

    pub fn last(&self) -> &State {
        self.samples.last().expect("trajectory has at least the initial state")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// CSV with header `t,S,I1,I2,I12,R,N`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,S,I1,I2,I12,R,N")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                fmt_num(s.t),
                fmt_num(s.s),
                fmt_num(s.i1),
                fmt_num(s.i2),
                fmt_num(s.i12),
                fmt_num(s.r),
                fmt_num(s.total())
            )?;
        }
        Ok(())
    }
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

// Dormand–Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b* (error weights)
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

type Vec5 = [f64; 5];

#[inline]
fn axpy(y: &Vec5, h: f64, terms: &[(f64, &Vec5)]) -> Vec5 {
    let mut out = *y;
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        *o += h * acc;
    }
    out
}

fn inf_norm(v: &Vec5) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// One Dormand–Prince step. Returns `(y_new, error_estimate, k7)`; `k7` is
/// the derivative at `y_new` (FSAL).
fn dp_step<M: Dynamics + ?Sized>(model: &M, y: &Vec5, k1: &Vec5, h: f64) -> (Vec5, Vec5, Vec5) {
    let k2 = model.rhs(&axpy(y, h, &[(A21, k1)]));
    let k3 = model.rhs(&axpy(y, h, &[(A31, k1), (A32, &k2)]));
    let k4 = model.rhs(&axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]));
    let k5 = model.rhs(&axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]));
    let k6 = model.rhs(&axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]));
    let y_new = axpy(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    let k7 = model.rhs(&y_new);
    let mut err = [0.0; 5];
    for i in 0..5 {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y_new, err, k7)
}

/// Classical fourth-order Runge–Kutta step.
pub fn rk4_step<M: Dynamics + ?Sized>(model: &M, y: &Vec5, h: f64) -> Vec5 {
    let k1 = model.rhs(y);
    let k2 = model.rhs(&axpy(y, 0.5 * h, &[(1.0, &k1)]));
    let k3 = model.rhs(&axpy(y, 0.5 * h, &[(1.0, &k2)]));
    let k4 = model.rhs(&axpy(y, h, &[(1.0, &k3)]));
    axpy(y, h / 6.0, &[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)])
}

enum Positivity {
    Ok(Vec5, Option<f64>),
    Reject(f64),
}

/// Clamp components in `[-eps, 0)` (and below the configured floor) to zero;
/// anything more negative rejects the step.
fn enforce_positivity(mut y: Vec5, floor: f64) -> Positivity {
    let eps = 1e-12 * (1.0 + inf_norm(&y));
    let mut clamped = None;
    for v in y.iter_mut() {
        if *v < 0.0 {
            if *v < -eps {
                return Positivity::Reject(*v);
            }
            clamped = Some(clamped.map_or(*v, |c: f64| c.min(*v)));
            *v = 0.0;
        } else if *v < floor {
            *v = 0.0;
        }
    }
    Positivity::Ok(y, clamped)
}

/// Checks the natural initial conditions: `S(0) > 0`, other classes `≥ 0`.
pub fn check_initial_state(y0: &State) -> Result<()> {
    let v = y0.as_array();
    if v.iter().any(|x| !x.is_finite()) || !y0.t.is_finite() {
        return Err(Error::Precondition("initial state has non-finite entries".into()));
    }
    if !(y0.s > 0.0) {
        return Err(Error::Precondition(format!("S(0) must be positive, got {}", y0.s)));
    }
    if v[1..].iter().any(|&x| x < 0.0) {
        return Err(Error::Precondition("initial class densities must be nonnegative".into()));
    }
    Ok(())
}

struct Recorder {
    traj: Trajectory,
    stride: usize,
    since_record: usize,
    quiet_run: usize,
}

impl Recorder {
    fn push(&mut self, state: State, h: f64, force: bool) {
        self.since_record += 1;
        if force || self.since_record >= self.stride {
            self.traj.samples.push(state);
            self.traj.steps.push(h);
            self.since_record = 0;
        }
    }
}

/// Integrates from `y0` to `cfg.t_end`.
pub fn integrate<M: Dynamics + ?Sized>(model: &M, y0: State, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    check_initial_state(&y0)?;
    if cfg.t_end <= y0.t {
        return Err(Error::Precondition("t_end must exceed the initial time".into()));
    }
    let mut rec = Recorder {
        traj: Trajectory {
            samples: vec![y0],
            steps: vec![0.0],
            dense: cfg.output_stride == 1,
            monitor_log: Vec::new(),
            steady_since: None,
            accepted_steps: 0,
            rejected_steps: 0,
            rel_tol: cfg.rel_tol,
            abs_tol: cfg.abs_tol,
            params_digest: None,
        },
        stride: cfg.output_stride,
        since_record: 0,
        quiet_run: 0,
    };
    match cfg.method {
        Method::DormandPrince45 => run_adaptive(model, y0, cfg, &mut rec)?,
        Method::Rk4 => run_fixed(model, y0, cfg, &mut rec)?,
    }
    Ok(rec.traj)
}

/// [`integrate`] for the reduced model; the trajectory remembers `params`
/// so [`check_bounds`] can refuse a mismatched pair.
pub fn integrate_sub(params: &ModelParameters, y0: State, cfg: &IntegratorConfig) -> Result<Trajectory> {
    let mut traj = integrate(params, y0, cfg)?;
    traj.params_digest = Some(params.digest());
    Ok(traj)
}

fn note_steady(rec: &mut Recorder, cfg: &IntegratorConfig, t: f64, rhs_norm: f64) -> bool {
    let tol = cfg.stop_when_steady.unwrap_or(STEADY_TOL);
    if rhs_norm < tol {
        rec.quiet_run += 1;
        if rec.quiet_run == STEADY_RUN && rec.traj.steady_since.is_none() {
            rec.traj.steady_since = Some(t);
            rec.traj.monitor_log.push(MonitorEvent { t, id: MonitorId::Steady, margin: rhs_norm });
        }
    } else {
        rec.quiet_run = 0;
        rec.traj.steady_since = None;
    }
    cfg.stop_when_steady.is_some() && rec.traj.steady_since.is_some()
}

fn run_adaptive<M: Dynamics + ?Sized>(model: &M, y0: State, cfg: &IntegratorConfig, rec: &mut Recorder) -> Result<()> {
    let mut t = y0.t;
    let mut y = y0.as_array();
    let mut k1 = model.rhs(&y);
    let mut h = cfg.h_init;
    let mut last = y0;
    while t < cfg.t_end {
        if rec.traj.accepted_steps >= cfg.max_steps {
            return Err(Error::StepUnderflow { t, h, last });
        }
        let remaining = cfg.t_end - t;
        let final_step = h >= remaining;
        let h_try = if final_step { remaining } else { h };
        let (y_new, err, k7) = dp_step(model, &y, &k1, h_try);
        let scale = cfg.abs_tol + cfg.rel_tol * inf_norm(&y).max(inf_norm(&y_new));
        let ratio = inf_norm(&err) / scale;
        if !ratio.is_finite() || ratio > 1.0 {
            rec.traj.rejected_steps += 1;
            let factor = if ratio.is_finite() { (0.9 * ratio.powf(-0.2)).clamp(0.2, 0.9) } else { 0.2 };
            h = h_try * factor;
            if h < cfg.h_min {
                return Err(Error::StepUnderflow { t, h, last });
            }
            continue;
        }
        let (y_acc, clamped) = match enforce_positivity(y_new, cfg.positivity_floor) {
            Positivity::Ok(v, c) => (v, c),
            Positivity::Reject(v) => {
                rec.traj.rejected_steps += 1;
                rec.traj.monitor_log.push(MonitorEvent { t, id: MonitorId::PositivityReject, margin: v });
                h = 0.5 * h_try;
                if h < cfg.h_min {
                    return Err(Error::StepUnderflow { t, h, last });
                }
                continue;
            }
        };
        t = if final_step { cfg.t_end } else { t + h_try };
        if let Some(c) = clamped {
            rec.traj.monitor_log.push(MonitorEvent { t, id: MonitorId::PositivityClamp, margin: c });
        }
        k1 = if clamped.is_some() { model.rhs(&y_acc) } else { k7 };
        y = y_acc;
        last = State::from_array(t, y);
        rec.traj.accepted_steps += 1;
        let stop = note_steady(rec, cfg, t, inf_norm(&k1));
        rec.push(last, h_try, final_step || stop);
        if stop {
            break;
        }
        let growth = if ratio == 0.0 { 5.0 } else { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) };
        if !final_step {
            h = (h_try * growth).clamp(cfg.h_min, cfg.h_max);
        }
    }
    Ok(())
}

fn run_fixed<M: Dynamics + ?Sized>(model: &M, y0: State, cfg: &IntegratorConfig, rec: &mut Recorder) -> Result<()> {
    let h = cfg.h_init;
    let n = ((cfg.t_end - y0.t) / h).ceil() as usize;
    let mut y = y0.as_array();
    let mut last = y0;
    for step in 1..=n {
        let t_prev = last.t;
        let t = if step == n { cfg.t_end } else { y0.t + step as f64 * h };
        let y_new = rk4_step(model, &y, t - t_prev);
        y = match enforce_positivity(y_new, cfg.positivity_floor) {
            Positivity::Ok(v, c) => {
                if let Some(c) = c {
                    rec.traj.monitor_log.push(MonitorEvent { t, id: MonitorId::PositivityClamp, margin: c });
                }
                v
            }
            Positivity::Reject(_) => return Err(Error::StepUnderflow { t: t_prev, h, last }),
        };
        last = State::from_array(t, y);
        rec.traj.accepted_steps += 1;
        let stop = note_steady(rec, cfg, t, inf_norm(&model.rhs(&y)));
        rec.push(last, t - t_prev, step == n || stop);
        if stop {
            break;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundMonitorReport {
    /// `min_t (colo_bound(t) - S(t))`.
    pub colo_margin_min: f64,
    /// `min_t (cap - N4(t))` with `N4 = S + I1 + I2 + I12`.
    pub total_margin_min: f64,
    pub total_cap: f64,
    /// Minimum of `S` over the trailing window.
    pub liminf_estimate: f64,
    /// Maximum of `α1 I1 + α2 I2 + α̂3 I12` over the trailing window.
    pub kappa_estimate: f64,
    /// `liminf_estimate - K (b - μ0 - κ) / b`; `None` when `κ ≥ b - μ0`,
    /// where no lower bound on `S` is available.
    pub persistence_margin: Option<f64>,
    pub window_start: f64,
    /// Integration tolerance scale `abs_tol + rel_tol · S_m`.
    pub tolerance: f64,
}

impl BoundMonitorReport {
    /// Both global bounds hold up to `factor` times the integration tolerance.
    pub fn holds(&self, factor: f64) -> bool {
        let slack = -factor * self.tolerance;
        self.colo_margin_min >= slack && self.total_margin_min >= slack
    }
}

/// Fraction of the time span treated as the asymptotic tail.
pub const TRAILING_WINDOW: f64 = 0.2;

/// Upper envelope of `S(t)` from the logistic comparison argument.
pub fn colo_bound(params: &ModelParameters, s0: f64, t: f64) -> f64 {
    let r = params.b - params.mu0;
    let e = (-r * t).exp();
    1.0 / ((1.0 - e) / params.s_star_star() + e / s0)
}

pub fn check_bounds(traj: &Trajectory, params: &ModelParameters) -> Result<BoundMonitorReport> {
    if traj.samples.is_empty() || traj.samples.len() != traj.steps.len() {
        return Err(Error::Usage("trajectory is empty or inconsistent".into()));
    }
    if let Some(d) = traj.params_digest {
        if d != params.digest() {
            return Err(Error::Usage("trajectory was produced from different parameters".into()));
        }
    }
    let d = params.derive()?;
    let first = traj.first();
    let t0 = first.t;
    let s0 = first.s;
    if !(s0 > 0.0) {
        return Err(Error::Usage("trajectory must start with S > 0".into()));
    }
    let n4 = |s: &State| s.s + s.i1 + s.i2 + s.i12;
    let s_m = d.s_star_star.max(s0);
    let mu_min = params.mu0.min(params.mu1).min(params.mu2).min(params.mu3);
    let cap = if mu_min > 0.0 { n4(first).max(params.b * s_m / mu_min) } else { f64::INFINITY };

    let t_last = traj.last().t;
    let window_start = t_last - TRAILING_WINDOW * (t_last - t0);
    let mut colo = f64::INFINITY;
    let mut total = f64::INFINITY;
    let mut liminf = f64::INFINITY;
    let mut kappa = f64::NEG_INFINITY;
    for s in &traj.samples {
        colo = colo.min(colo_bound(params, s0, s.t - t0) - s.s);
        total = total.min(cap - n4(s));
        if s.t >= window_start {
            liminf = liminf.min(s.s);
            kappa = kappa.max(params.alpha1 * s.i1 + params.alpha2 * s.i2 + d.alpha3_hat * s.i12);
        }
    }
    let r = params.b - params.mu0;
    let persistence_margin = (kappa < r).then(|| liminf - params.k * (r - kappa) / params.b);
    Ok(BoundMonitorReport {
        colo_margin_min: colo,
        total_margin_min: total,
        total_cap: cap,
        liminf_estimate: liminf,
        kappa_estimate: kappa,
        persistence_margin,
        window_start,
        tolerance: traj.abs_tol + traj.rel_tol * s_m,
    })
}
