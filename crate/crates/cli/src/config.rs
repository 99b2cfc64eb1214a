//! Run configuration: one parameter document plus exactly one command block.

use coinfection_core::bifurcation::SweepConfig;
use coinfection_core::equilibria::EquilibriumKind;
use coinfection_core::integrator::IntegratorConfig;
use coinfection_core::model::ParameterDocument;
use coinfection_core::{Error, Result};
use serde::Deserialize;

use crate::Command;

pub const SCHEMA: &str = r#"CONFIG SCHEMA (JSON, unknown keys are rejected)

  {
    "params": {
      "b", "K", "mu0", "mu1", "mu2", "mu3", "rho1", "rho2", "rho3", "mu4p",
      "alpha1", "alpha2", "alpha3", "beta1", "beta2", "gamma1", "gamma2",
      "eta1", "eta2",                                    numbers, all required
      "full": { "b2".."b5", "K1".."K5",
                "crowding": "total" | "own" }            optional
    },
    exactly one of the following blocks, matching the command:
    "simulate":   { "y0": [S, I1, I2, I12, R], "t_end",
                    "rel_tol"? = 1e-9, "abs_tol"? = 1e-12,
                    "output_stride"? = 1, "stop_when_steady"?,
                    "model"? = "reduced" | "full" }
    "equilibria": { "grid_density"? = 8, "seeds"?: [[Y0, Y1, Y2, Y3], ...] }
    "stability":  { "targets"?: ["G1".."G5"], "grid_density"? = 4 }
    "lyapunov":   { "reference": "G2" | "G3" | "G4", "y0": [S, I1, I2, I12, R],
                    "t_end", "rel_tol"? = 1e-9, "abs_tol"? = 1e-12,
                    "output_stride"? = 1 }
    "sweep":      { "k_min", "k_max", "n", "verify_by_simulation"? = false,
                    "rng_seed" (required when verifying), "search_g5"? = true,
                    "g5_grid_density"? = 4, "refine"? = true,
                    "sim_runs"? = 5, "sim_horizon"? = 2000 }
    "bifurcate":  { "d_values": [negative numbers], "max_coupling"? = 0.01 }
  }

OUTPUTS
  simulate    CSV  t,S,I1,I2,I12,R,N
  equilibria  JSON array of {kind, y, r_star, residual, exists}
  stability   JSON array of stability reports
  lyapunov    CSV  t,v,v_dot_analytic,v_dot_fd,phi
  sweep       CSV  K,s_star_star,stable_kind,Y0..Y3,det_B,Lambda,sigma0,sigma_hat,max_re,verified_by_sim
  bifurcate   JSON bifurcation report with one entry per d_value

EXIT STATUS
  0 success, 2 invalid input or unwritable output, 3 numerical failure"#;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParameterDocument,
    simulate: Option<SimulateBlock>,
    equilibria: Option<EquilibriaBlock>,
    stability: Option<StabilityBlock>,
    lyapunov: Option<LyapunovBlock>,
    sweep: Option<SweepBlock>,
    bifurcate: Option<BifurcateBlock>,
}

/// The single command block of a validated config.
#[derive(Debug)]
pub enum Block {
    Simulate(SimulateBlock),
    Equilibria(EquilibriaBlock),
    Stability(StabilityBlock),
    Lyapunov(LyapunovBlock),
    Sweep(SweepBlock),
    Bifurcate(BifurcateBlock),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    #[default]
    Reduced,
    Full,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub y0: [f64; 5],
    pub t_end: f64,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub output_stride: Option<usize>,
    pub stop_when_steady: Option<f64>,
    #[serde(default)]
    pub model: ModelChoice,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaBlock {
    pub grid_density: Option<usize>,
    pub seeds: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityBlock {
    pub targets: Option<Vec<EquilibriumKind>>,
    pub grid_density: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovBlock {
    pub reference: EquilibriumKind,
    pub y0: [f64; 5],
    pub t_end: f64,
    pub rel_tol: Option<f64>,
    pub abs_tol: Option<f64>,
    pub output_stride: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub k_min: f64,
    pub k_max: f64,
    pub n: usize,
    #[serde(default)]
    pub verify_by_simulation: bool,
    pub rng_seed: Option<u64>,
    pub search_g5: Option<bool>,
    pub g5_grid_density: Option<usize>,
    pub refine: Option<bool>,
    pub sim_runs: Option<usize>,
    pub sim_horizon: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BifurcateBlock {
    pub d_values: Vec<f64>,
    pub max_coupling: Option<f64>,
}

fn integrator(
    t_end: f64,
    rel_tol: Option<f64>,
    abs_tol: Option<f64>,
    stride: Option<usize>,
) -> Result<IntegratorConfig> {
    let d = IntegratorConfig::default();
    let cfg = IntegratorConfig {
        t_end,
        rel_tol: rel_tol.unwrap_or(d.rel_tol),
        abs_tol: abs_tol.unwrap_or(d.abs_tol),
        output_stride: stride.unwrap_or(d.output_stride),
        ..d
    };
    if !(t_end > 0.0) {
        return Err(Error::Usage(format!("t_end must be positive, got {t_end}")));
    }
    cfg.validate()?;
    Ok(cfg)
}

impl SimulateBlock {
    pub fn integrator(&self) -> Result<IntegratorConfig> {
        let cfg = integrator(self.t_end, self.rel_tol, self.abs_tol, self.output_stride)?;
        if let Some(tol) = self.stop_when_steady {
            if !(tol > 0.0) {
                return Err(Error::Usage(format!("stop_when_steady must be positive, got {tol}")));
            }
        }
        Ok(IntegratorConfig { stop_when_steady: self.stop_when_steady, ..cfg })
    }
}

impl LyapunovBlock {
    pub fn integrator(&self) -> Result<IntegratorConfig> {
        integrator(self.t_end, self.rel_tol, self.abs_tol, self.output_stride)
    }
}

impl SweepBlock {
    pub fn sweep_config(&self) -> Result<SweepConfig> {
        let d = SweepConfig::default();
        let cfg = SweepConfig {
            k_min: self.k_min,
            k_max: self.k_max,
            n: self.n,
            verify_by_simulation: self.verify_by_simulation,
            rng_seed: self.rng_seed,
            search_g5: self.search_g5.unwrap_or(d.search_g5),
            g5_grid_density: self.g5_grid_density.unwrap_or(d.g5_grid_density),
            refine: self.refine.unwrap_or(d.refine),
            sim_runs: self.sim_runs.unwrap_or(d.sim_runs),
            sim_horizon: self.sim_horizon.unwrap_or(d.sim_horizon),
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.params.params().validate()?;
        if let Some(full) = cfg.params.full_params() {
            full.validate()?;
        }
        Ok(cfg)
    }

    /// Takes the command block, insisting that it is the only one present and
    /// that it matches `command`.
    pub fn into_block(self, command: Command) -> Result<Block> {
        let present: Vec<(&str, Block)> = [
            self.simulate.map(|b| ("simulate", Block::Simulate(b))),
            self.equilibria.map(|b| ("equilibria", Block::Equilibria(b))),
            self.stability.map(|b| ("stability", Block::Stability(b))),
            self.lyapunov.map(|b| ("lyapunov", Block::Lyapunov(b))),
            self.sweep.map(|b| ("sweep", Block::Sweep(b))),
            self.bifurcate.map(|b| ("bifurcate", Block::Bifurcate(b))),
        ]
        .into_iter()
        .flatten()
        .collect();
        let wanted = command.name();
        match present.len() {
            0 => Err(Error::Usage(format!("missing `{wanted}` block"))),
            1 if present[0].0 == wanted => Ok(present.into_iter().next().unwrap().1),
            1 => Err(Error::Usage(format!("config has a `{}` block but the command is `{wanted}`", present[0].0))),
            _ => {
                let names: Vec<_> = present.iter().map(|(n, _)| *n).collect();
                Err(Error::Usage(format!("exactly one command block allowed, found {}", names.join(", "))))
            }
        }
    }
}
