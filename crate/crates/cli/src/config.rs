//! Run configuration (JSON).

use std::path::{Path, PathBuf};

use frontsteer_core::grid::{lipschitz_slice, Point, ScalarField, TorusGrid, VecField};
use frontsteer_core::io::FieldFile;
use frontsteer_core::model::{Control, CostModel, RadiusProfile, SpeedModel};
use frontsteer_core::pdopt::SolverConfig;
use frontsteer_core::presets::{self, Counterexample};
use frontsteer_core::{certify, ProblemInstance};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub solver: SolverConfig,
    pub transport: TransportConfig,
    pub outputs: OutputConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub dim: usize,
    /// Nodes per axis; a single number is used for every axis.
    #[serde(deserialize_with = "one_or_many")]
    pub nx: Vec<usize>,
    pub nt: usize,
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Torus period per axis (unit when absent).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub period: Option<Vec<f64>>,
    pub speed: SpeedConfig,
    pub cost: CostConfig,
    #[serde(rename = "u_T")]
    pub terminal: Source,
    pub m0: Source,
    /// Obstacle `f` for `solve-hj`.
    pub obstacle: Source,
    /// Replaces grid, speed, cost, data and obstacle by the blocking example.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleConfig>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            nx: vec![64],
            nt: 65,
            horizon: 1.0,
            period: None,
            speed: SpeedConfig::default(),
            cost: CostConfig::default(),
            terminal: Source::Preset("zero".into()),
            m0: Source::Preset("uniform".into()),
            obstacle: Source::Preset("zero".into()),
            counterexample: None,
        }
    }
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Nodes {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match Nodes::deserialize(d)? {
        Nodes::One(n) => vec![n],
        Nodes::Many(v) => v,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub eps: f64,
    #[serde(default = "default_ce_dx")]
    pub dx: f64,
}

fn default_ce_dx() -> f64 {
    0.01
}

/// A field given by preset name or by file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    Preset(String),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusSource {
    Constant(f64),
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpeedConfig {
    Isotropic {
        radius: RadiusSource,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c1: Option<f64>,
    },
    FiniteControls {
        velocities: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c1: Option<f64>,
    },
}

impl Default for SpeedConfig {
    fn default() -> Self {
        SpeedConfig::Isotropic {
            radius: RadiusSource::Constant(1.0),
            c0: None,
            c1: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostConfig {
    pub p: f64,
    pub kappa: f64,
}

impl Default for CostConfig {
    fn default() -> Self {
        Self { p: 3.0, kappa: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportConfig {
    /// `zero`, `sampled` (smooth random admissible field, from `seed`) or a file.
    pub velocity: Source,
    /// Number of trajectories to sample; zero skips sampling.
    pub trajectories: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            velocity: Source::Preset("zero".into()),
            trajectories: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub emit_fields: bool,
    pub emit_csv: bool,
    pub emit_pgm: bool,
    /// Write wall-clock timings into the diagnostics CSV (breaks byte-identity).
    pub record_timing: bool,
    /// Field files as text or little-endian binary.
    pub binary: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            emit_fields: true,
            emit_csv: true,
            emit_pgm: false,
            record_timing: false,
            binary: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        // Relative data paths are taken relative to the config file.
        let base = path.parent().unwrap_or(Path::new("."));
        Ok(cfg.rebase(base))
    }

    fn rebase(mut self, base: &Path) -> Self {
        let fix = |s: &mut Source| {
            if let Source::File(p) = s {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix(&mut self.problem.terminal);
        fix(&mut self.problem.m0);
        fix(&mut self.problem.obstacle);
        fix(&mut self.transport.velocity);
        if let SpeedConfig::Isotropic {
            radius: RadiusSource::File(p),
            ..
        } = &mut self.problem.speed
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        self
    }

    /// Schema checks that need no file access.
    pub fn validate(&self) -> Result<(), Failure> {
        let p = &self.problem;
        if p.counterexample.is_some() {
            return Ok(());
        }
        if !(1..=2).contains(&p.dim) {
            return Err(Failure::Config(format!("dim must be 1 or 2, got {}", p.dim)));
        }
        if p.nx.len() != 1 && p.nx.len() != p.dim {
            return Err(Failure::Config(format!("nx needs 1 or {} entries", p.dim)));
        }
        if !(p.cost.p > (p.dim + 1) as f64) {
            return Err(Failure::Config(format!(
                "cost exponent p = {} must exceed dim + 1 = {}",
                p.cost.p,
                p.dim + 1
            )));
        }
        if let Source::Preset(name) = &p.terminal {
            if !presets::TERMINAL_PRESETS.contains(&name.as_str()) {
                return Err(Failure::Config(format!(
                    "unknown u_T preset {name:?}; expected one of {:?}",
                    presets::TERMINAL_PRESETS
                )));
            }
        }
        if let Source::Preset(name) = &p.m0 {
            if !presets::INITIAL_PRESETS.contains(&name.as_str()) {
                return Err(Failure::Config(format!(
                    "unknown m0 preset {name:?}; expected one of {:?}",
                    presets::INITIAL_PRESETS
                )));
            }
        }
        if let Source::Preset(name) = &p.obstacle {
            if !OBSTACLE_PRESETS.contains(&name.as_str()) {
                return Err(Failure::Config(format!(
                    "unknown obstacle preset {name:?}; expected one of {OBSTACLE_PRESETS:?}"
                )));
            }
        }
        if let Source::Preset(name) = &self.transport.velocity {
            if !VELOCITY_PRESETS.contains(&name.as_str()) {
                return Err(Failure::Config(format!(
                    "unknown velocity preset {name:?}; expected one of {VELOCITY_PRESETS:?}"
                )));
            }
        }
        Ok(())
    }

    /// Same configuration with every grid axis refined `2^k` times.
    pub fn refined(&self, k: u32) -> Self {
        let mut c = self.clone();
        let f = 1usize << k;
        c.problem.nx.iter_mut().for_each(|n| *n *= f);
        c.problem.nt = (c.problem.nt - 1) * f + 1;
        if let Some(ce) = &mut c.problem.counterexample {
            ce.dx /= f as f64;
        }
        c
    }
}

pub const OBSTACLE_PRESETS: [&str; 2] = ["zero", "one"];
pub const VELOCITY_PRESETS: [&str; 2] = ["zero", "sampled"];

/// A problem together with the obstacle used by `solve-hj`.
pub struct Assembled {
    pub problem: ProblemInstance,
    pub obstacle: ScalarField,
    pub counterexample: Option<Counterexample>,
}

fn read_field(path: &Path) -> Result<FieldFile, Failure> {
    if !path.exists() {
        return Err(Failure::Io(format!("{}: no such file", path.display())));
    }
    FieldFile::read(path).map_err(|e| Failure::from_core(e).context(&path.display().to_string()))
}

fn slice_source(src: &Source, grid: &TorusGrid, preset: impl Fn(&str, &TorusGrid) -> frontsteer_core::Result<Vec<f64>>) -> Result<Vec<f64>, Failure> {
    match src {
        Source::Preset(name) => preset(name, grid).map_err(Failure::config),
        Source::File(path) => read_field(path)?.into_slice(grid).map_err(Failure::config),
    }
}

impl ProblemConfig {
    pub fn grid(&self) -> Result<TorusGrid, Failure> {
        let nx: Vec<usize> = if self.nx.len() == 1 { vec![self.nx[0]; self.dim] } else { self.nx.clone() };
        let grid = match &self.period {
            Some(per) => TorusGrid::with_period(&nx, self.nt, self.horizon, per),
            None => TorusGrid::new(&nx, self.nt, self.horizon),
        };
        grid.map_err(Failure::config)
    }

    fn speed(&self, grid: &TorusGrid) -> Result<SpeedModel, Failure> {
        let dim = self.dim;
        match &self.speed {
            SpeedConfig::Isotropic { radius, c0, c1 } => match radius {
                RadiusSource::Constant(r) => {
                    SpeedModel::isotropic(dim, RadiusProfile::Constant(*r), c0.unwrap_or(*r), c1.unwrap_or(*r), 0.0)
                        .map_err(Failure::config)
                }
                RadiusSource::File(path) => {
                    let values = read_field(path)?.into_slice(grid).map_err(Failure::config)?;
                    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lip = lipschitz_slice(grid, &values);
                    let profile = RadiusProfile::Nodal {
                        grid: grid.with_nt(1).map_err(Failure::config)?,
                        values,
                    };
                    SpeedModel::isotropic(dim, profile, c0.unwrap_or(lo), c1.unwrap_or(hi), lip).map_err(Failure::config)
                }
            },
            SpeedConfig::FiniteControls { velocities, c0, c1 } => {
                let mut controls = Vec::with_capacity(velocities.len());
                for v in velocities {
                    if v.len() != dim {
                        return Err(Failure::Config(format!("control velocity {v:?} needs {dim} components")));
                    }
                    let mut d: Point = [0.0; 2];
                    d[..dim].copy_from_slice(v);
                    controls.push(Control::constant(d));
                }
                let top = controls.iter().map(|c| frontsteer_core::grid::norm(&c.direction)).fold(0.0, f64::max);
                let c1 = c1.unwrap_or(top);
                let c0 = match c0 {
                    Some(c) => *c,
                    None => {
                        // Largest inscribed ball: smallest support over the probe directions.
                        let probe = SpeedModel::finite_controls(dim, controls.clone(), 0.0, c1, 0.0).map_err(Failure::config)?;
                        probe
                            .probe_directions()
                            .iter()
                            .map(|e| probe.support(&[0.0; 2], e))
                            .fold(f64::INFINITY, f64::min)
                    }
                };
                SpeedModel::finite_controls(dim, controls, c0, c1, 0.0).map_err(Failure::config)
            }
        }
    }

    pub fn assemble(&self) -> Result<Assembled, Failure> {
        if let Some(ce) = &self.counterexample {
            let ce = Counterexample::new(ce.eps, ce.dx, self.nt).map_err(Failure::config)?;
            return Ok(Assembled {
                problem: ce.problem.clone(),
                obstacle: ce.obstacle.clone(),
                counterexample: Some(ce),
            });
        }
        let grid = self.grid()?;
        let speed = self.speed(&grid)?;
        let cost = CostModel::for_dim(self.cost.p, self.cost.kappa, self.dim).map_err(Failure::config)?;
        let terminal = slice_source(&self.terminal, &grid, presets::terminal_preset)?;
        let initial = slice_source(&self.m0, &grid, presets::initial_preset)?;
        let obstacle = match &self.obstacle {
            Source::Preset(name) => match name.as_str() {
                "zero" => ScalarField::constant(&grid, 0.0),
                "one" => ScalarField::constant(&grid, 1.0),
                _ => return Err(Failure::Config(format!("unknown obstacle preset {name:?}"))),
            },
            Source::File(path) => read_field(path)?.into_scalar(&grid).map_err(Failure::config)?,
        };
        let problem = ProblemInstance::new(grid, speed, cost, terminal, initial).map_err(Failure::config)?;
        Ok(Assembled {
            problem,
            obstacle,
            counterexample: None,
        })
    }
}

impl TransportConfig {
    pub fn velocity(&self, problem: &ProblemInstance, seed: u64) -> Result<VecField, Failure> {
        let grid = &problem.grid;
        match &self.velocity {
            Source::Preset(name) => match name.as_str() {
                "zero" => Ok(VecField::zeros(grid)),
                "sampled" => certify::sample_admissible_velocity(problem, seed).map_err(Failure::config),
                _ => Err(Failure::Config(format!("unknown velocity preset {name:?}"))),
            },
            Source::File(path) => read_field(path)?.into_vector(grid).map_err(Failure::config),
        }
    }
}
