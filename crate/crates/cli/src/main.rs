//! Batch front-end: reads a JSON run config, performs one analysis and writes
//! its CSV or JSON artifact.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use coinfection_core::bifurcation::{sweep_k, verify_bifurcation, VerifyOptions};
use coinfection_core::equilibria::{
    closed_form, closed_form_equilibria, find_g5, inf_norm4, write_equilibria_json, Equilibrium, EquilibriumKind,
    G5Search,
};
use coinfection_core::export::write_json;
use coinfection_core::integrator::{integrate, integrate_sub, Trajectory};
use coinfection_core::lyapunov::monitor_descent;
use coinfection_core::stability::classify_local;
use coinfection_core::{Error, ModelParameters, Result, State};
use log::{info, warn};

use config::{Block, ModelChoice, RunConfig};

#[derive(Parser)]
#[command(
    name = "coinfection",
    version,
    about = "Equilibria, stability and simulation of a two-strain coinfection model"
)]
#[command(after_long_help = config::SCHEMA)]
struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    /// Only errors on stderr.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Paths {
    /// JSON run config (see `--help` for the schema).
    #[arg(short, long)]
    config: PathBuf,
    /// Artifact destination.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Subcommand)]
enum Sub {
    /// Integrate a trajectory and write it as CSV.
    Simulate(Paths),
    /// Closed-form equilibria plus a coexistence search, as JSON.
    Equilibria(Paths),
    /// Local and global stability reports, as JSON.
    Stability(Paths),
    /// Lyapunov descent along a trajectory, as CSV.
    Lyapunov(Paths),
    /// Stable-state map over a carrying-capacity grid, as CSV.
    Sweep(Paths),
    /// Coexistence branch near the strain-1 threshold, as JSON.
    Bifurcate(Paths),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Equilibria,
    Stability,
    Lyapunov,
    Sweep,
    Bifurcate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Equilibria => "equilibria",
            Command::Stability => "stability",
            Command::Lyapunov => "lyapunov",
            Command::Sweep => "sweep",
            Command::Bifurcate => "bifurcate",
        }
    }
}

impl Sub {
    fn split(self) -> (Command, Paths) {
        match self {
            Sub::Simulate(p) => (Command::Simulate, p),
            Sub::Equilibria(p) => (Command::Equilibria, p),
            Sub::Stability(p) => (Command::Stability, p),
            Sub::Lyapunov(p) => (Command::Lyapunov, p),
            Sub::Sweep(p) => (Command::Sweep, p),
            Sub::Bifurcate(p) => (Command::Bifurcate, p),
        }
    }
}

struct Artifact {
    bytes: Vec<u8>,
    summary: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, 2) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    let (command, paths) = cli.command.split();
    match run(command, &paths.config, &paths.output) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) if e.is_validation() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(3)
        }
    }
}

fn run(command: Command, config: &Path, output: &Path) -> Result<String> {
    let text = std::fs::read_to_string(config)
        .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", config.display())))?;
    let cfg = RunConfig::parse(&text)?;
    let doc = cfg.params.clone();
    let p = doc.params();
    let artifact = match cfg.into_block(command)? {
        Block::Simulate(b) => {
            let ic = b.integrator()?;
            let y0 = State::from_array(0.0, b.y0);
            let traj = match b.model {
                ModelChoice::Reduced => integrate_sub(&p, y0, &ic)?,
                ModelChoice::Full => {
                    let fp = doc
                        .full_params()
                        .ok_or_else(|| Error::Usage("model \"full\" needs a `params.full` block".into()))?;
                    integrate(&fp, y0, &ic)?
                }
            };
            let summary = match b.model {
                ModelChoice::Reduced => convergence_summary(&p, &traj),
                ModelChoice::Full => format!("integrated: t={:.3}, N={:.6}", traj.last().t, traj.last().total()),
            };
            let mut bytes = Vec::new();
            traj.write_csv(&mut bytes)?;
            Artifact { bytes, summary }
        }
        Block::Equilibria(b) => {
            let mut eqs = closed_form_equilibria(&p)?;
            let search = G5Search {
                grid_density: b.grid_density.unwrap_or(G5Search::default().grid_density),
                seeds: b.seeds,
                ..G5Search::default()
            };
            let g5 = find_g5(&p, &search)?;
            let existing: Vec<String> = eqs.iter().filter(|e| e.exists).map(|e| e.kind.to_string()).collect();
            let summary = format!("equilibria: {} exist; {} coexistence point(s)", existing.join(", "), g5.len());
            eqs.extend(g5);
            let mut bytes = Vec::new();
            write_equilibria_json(&eqs, &mut bytes)?;
            Artifact { bytes, summary }
        }
        Block::Stability(b) => {
            let search = G5Search { grid_density: b.grid_density.unwrap_or(4), ..G5Search::default() };
            let points = stability_targets(&p, b.targets.as_deref(), &search)?;
            let reports = points.iter().map(|e| classify_local(&p, e)).collect::<Result<Vec<_>>>()?;
            let names = |pred: &dyn Fn(&coinfection_core::stability::StabilityReport) -> bool| {
                reports.iter().filter(|r| pred(r)).map(|r| r.kind.to_string()).collect::<Vec<_>>()
            };
            let stable = names(&|r| r.local_stable);
            let marginal = names(&|r| r.marginal);
            let summary = if !stable.is_empty() {
                format!("stable: {} at K={:.3}", stable.join(", "), p.k)
            } else if !marginal.is_empty() {
                format!("marginal: {} at K={:.3}", marginal.join(", "), p.k)
            } else {
                format!("stable: none at K={:.3}", p.k)
            };
            let mut bytes = Vec::new();
            write_json(&mut bytes, &reports)?;
            Artifact { bytes, summary }
        }
        Block::Lyapunov(b) => {
            if matches!(b.reference, EquilibriumKind::G5) {
                return Err(Error::Usage("lyapunov reference must be one of G1..G4".into()));
            }
            let reference = existing(&p, b.reference)?;
            let traj = integrate_sub(&p, State::from_array(0.0, b.y0), &b.integrator()?)?;
            let rep = monitor_descent(&p, &reference, &traj)?;
            let verdict = if rep.descent_holds() { "descent holds" } else { "descent violated" };
            let mut summary = format!("{verdict}: {} (max v_dot={:.3e})", reference.kind, rep.max_v_dot);
            if let Some(t) = rep.truncated_at {
                summary.push_str(&format!(", left the domain at t={t:.3}"));
            }
            let mut bytes = Vec::new();
            rep.write_csv(&mut bytes)?;
            Artifact { bytes, summary }
        }
        Block::Sweep(b) => {
            let rep = sweep_k(&p, &b.sweep_config()?)?;
            let summary = if rep.transitions.is_empty() {
                let kind = rep.records.first().map(|r| r.stable_kind.to_string()).unwrap_or_default();
                format!("no transitions: {kind} throughout")
            } else {
                let parts: Vec<String> =
                    rep.transitions.iter().map(|t| format!("{}→{} at K={:.6}", t.from, t.to, t.midpoint())).collect();
                format!("transitions: {}", parts.join("; "))
            };
            let mut bytes = Vec::new();
            rep.write_csv(&mut bytes)?;
            Artifact { bytes, summary }
        }
        Block::Bifurcate(b) => {
            let opts = VerifyOptions { max_coupling: b.max_coupling.unwrap_or(VerifyOptions::default().max_coupling) };
            let rep = verify_bifurcation(&p, &b.d_values, &opts)?;
            let found = rep.entries.iter().filter(|e| e.y.is_some()).count();
            let mut summary =
                format!("branch: det B=0 at K={:.6}; {found}/{} point(s) found", rep.k_threshold, rep.entries.len());
            if let Some(err) = rep.slope_rel_error {
                summary.push_str(&format!(", slope rel. error {err:.3e}"));
            }
            let mut bytes = Vec::new();
            write_json(&mut bytes, &rep)?;
            Artifact { bytes, summary }
        }
    };
    std::fs::write(output, &artifact.bytes)
        .map_err(|e| Error::Usage(format!("cannot write output {}: {e}", output.display())))?;
    info!("wrote {} bytes to {}", artifact.bytes.len(), output.display());
    Ok(artifact.summary)
}

fn existing(p: &ModelParameters, kind: EquilibriumKind) -> Result<Equilibrium> {
    let eq = closed_form(p, kind)?;
    if !eq.exists {
        return Err(Error::Usage(format!("{kind} does not exist for these parameters")));
    }
    Ok(eq)
}

fn stability_targets(
    p: &ModelParameters,
    targets: Option<&[EquilibriumKind]>,
    search: &G5Search,
) -> Result<Vec<Equilibrium>> {
    let Some(targets) = targets else {
        let mut eqs: Vec<_> = closed_form_equilibria(p)?.into_iter().filter(|e| e.exists).collect();
        eqs.extend(find_g5(p, search)?);
        return Ok(eqs);
    };
    let mut out = Vec::new();
    for &kind in targets {
        if kind == EquilibriumKind::G5 {
            let found = find_g5(p, search)?;
            if found.is_empty() {
                warn!("no coexistence point found");
            }
            out.extend(found);
        } else {
            out.push(existing(p, kind)?);
        }
    }
    Ok(out)
}

/// Distance from the final state to the nearest existing closed-form point.
fn convergence_summary(p: &ModelParameters, traj: &Trajectory) -> String {
    let last = traj.last();
    let y = last.classes();
    let nearest = closed_form_equilibria(p).ok().and_then(|eqs| {
        eqs.into_iter()
            .filter(|e| e.exists)
            .map(|e| {
                let d = inf_norm4(&[y[0] - e.y[0], y[1] - e.y[1], y[2] - e.y[2], y[3] - e.y[3]]);
                (e, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
    });
    match nearest {
        Some((e, d)) if d <= 1e-6 * (1.0 + inf_norm4(&e.y)) => {
            format!("converged: {} (|y−{}|∞={d:.3e})", e.kind, e.kind)
        }
        Some((e, d)) => format!("not converged at t={:.3}: nearest {} at distance {d:.3e}", last.t, e.kind),
        None => format!("integrated: t={:.3}", last.t),
    }
}
