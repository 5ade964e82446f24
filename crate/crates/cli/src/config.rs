//! Run configuration: a TOML file with a `[model]`, `[grid]` and `[run]`
//! section plus one optional section per command. Every field is optional;
//! unset model fields come from the preset.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use fhn_kinetic::model::{CouplingSign, ModelParams, Preset, WeightParams};
use fhn_kinetic::particle::InitialLaw;
use fhn_kinetic::pde::Grid2D;

use crate::error::CliError;

pub const DEFAULT_PRESET: Preset = Preset::WeakCoupling;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<String>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub particles: ParticlesSection,
    #[serde(default)]
    pub pde: PdeSection,
    #[serde(default)]
    pub stationary: StationarySection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub chaos: ChaosSection,
    #[serde(default)]
    pub regime: RegimeSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub lambda: Option<f64>,
    pub i0: Option<f64>,
    pub eps: Option<f64>,
    pub sigma: Option<f64>,
    pub kappa: Option<f64>,
    pub coupling: Option<CouplingSign>,
    pub paper_sde_signs: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub v_min: Option<f64>,
    pub v_max: Option<f64>,
    pub nx: Option<usize>,
    pub nv: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub t_final: Option<f64>,
    pub dt: Option<f64>,
    pub stride: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSection {
    pub n: Option<usize>,
    pub initial: Option<InitialLaw>,
    /// Recorded rows between density snapshots on the grid; none when unset.
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSection {
    pub initial: Option<InitialLaw>,
    pub boundary_tol: Option<f64>,
    /// Solve the linear equation with this `j` instead of the self-consistent one.
    pub frozen_j: Option<f64>,
    /// Recorded rows between density snapshots; none when unset.
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySection {
    pub j_seeds: Option<Vec<f64>>,
    /// When set, also runs the `ε → 0` proximity scan over these values.
    pub eps_list: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub residual_tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub k: Option<usize>,
    pub krylov_dim: Option<usize>,
    pub max_restarts: Option<usize>,
    pub shift: Option<f64>,
    pub tol: Option<f64>,
    /// Seed of the stationary solve the spectrum linearizes around.
    pub j_seed: Option<f64>,
    /// `dir/stem` of a saved stationary solution to use instead of solving.
    pub stationary: Option<String>,
    /// Perturbation size of the decay measurement; skipped when unset.
    pub decay_amplitude: Option<f64>,
    pub decay_t_final: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChaosSection {
    pub n_list: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub initial: Option<InitialLaw>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub j_list: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub seeds: Option<usize>,
    pub init_var: Option<f64>,
    pub spectral_ratio: Option<f64>,
    pub separation: Option<f64>,
    pub burn_in: Option<f64>,
    pub sample_dt: Option<f64>,
    pub segments: Option<usize>,
    pub min_samples: Option<usize>,
}

/// Command-line overrides of file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<String>,
    pub seed: Option<u64>,
}

/// Configuration after presets, defaults and overrides are applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub preset: Option<String>,
    pub params: ModelParams,
    pub weight: WeightParams,
    pub grid: Grid2D,
    pub seed: u64,
    pub file: FileConfig,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub fn preset_by_name(name: &str) -> Result<Preset, CliError> {
    Preset::from_name(name).ok_or_else(|| {
        let known: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
        CliError::Config(format!("unknown preset {name:?}; known presets: {}", known.join(", ")))
    })
}

impl Resolved {
    pub fn new(file: FileConfig, over: &Overrides) -> Result<Self, CliError> {
        let preset_name = over.preset.clone().or_else(|| file.preset.clone());
        let base = match &preset_name {
            Some(name) => preset_by_name(name)?.params(),
            None => DEFAULT_PRESET.params(),
        };
        let m = &file.model;
        let params = ModelParams {
            a: m.a.unwrap_or(base.a),
            b: m.b.unwrap_or(base.b),
            lambda: m.lambda.unwrap_or(base.lambda),
            i0: m.i0.unwrap_or(base.i0),
            eps: m.eps.unwrap_or(base.eps),
            sigma: m.sigma.unwrap_or(base.sigma),
            coupling: m.coupling.unwrap_or(base.coupling),
            paper_sde_signs: m.paper_sde_signs.unwrap_or(base.paper_sde_signs),
        };
        params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let weight = match m.kappa {
            Some(k) => WeightParams::new(k).map_err(|e| CliError::Config(e.to_string()))?,
            None => WeightParams::default(),
        };
        let d = Grid2D::default_domain();
        let g = &file.grid;
        let grid = Grid2D::new(
            g.x_min.unwrap_or(d.x_min),
            g.x_max.unwrap_or(d.x_max),
            g.v_min.unwrap_or(d.v_min),
            g.v_max.unwrap_or(d.v_max),
            g.nx.unwrap_or(d.nx),
            g.nv.unwrap_or(d.nv),
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        let r = &file.run;
        positive_opt("run.t_final", r.t_final)?;
        positive_opt("run.dt", r.dt)?;
        nonzero_opt("run.stride", r.stride)?;
        let seed = over.seed.or(r.seed).unwrap_or(1);
        Ok(Self {
            preset: preset_name,
            params,
            weight,
            grid,
            seed,
            file,
        })
    }

    /// SHA-256 of the resolved configuration and the command, hex encoded.
    pub fn hash(&self, command: &str) -> String {
        let json = serde_json::to_string(&(command, self)).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn positive_opt(name: &str, v: Option<f64>) -> Result<(), CliError> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(CliError::Config(format!("{name} = {x} must be > 0"))),
        _ => Ok(()),
    }
}

pub fn nonzero_opt(name: &str, v: Option<usize>) -> Result<(), CliError> {
    match v {
        Some(0) => Err(CliError::Config(format!("{name} must be >= 1"))),
        _ => Ok(()),
    }
}

pub fn check_law(name: &str, law: &InitialLaw) -> Result<(), CliError> {
    law.validate().map_err(|e| CliError::Config(format!("{name}: {e}")))
}
