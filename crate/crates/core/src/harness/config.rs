//! Experiment configuration, loaded from TOML.
//!
//! Every field has a default, so a config file only needs the keys it
//! changes. Example:
//!
//! ```toml
//! controller = "bct_aplight"
//! episodes = 200
//! seed = 7
//!
//! [scenario]
//! kind = "grid"
//! rows = 2
//! cols = 2
//!
//! [sim]
//! episode_seconds = 1800
//!
//! [train]
//! lr = 0.005
//!
//! [critique]
//! window = 240
//! sampler = { draws = 2000, burn_in = 1000 }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{HarnessError, Result};
use crate::critique::CritiqueConfig;
use crate::dqn::{Encoding, TrainConfig};
use crate::netmodel::{build_grid, grid_flow, load_flow, load_network, FlowSpec, GridDemand, Network};
use crate::simcore::SimConfig;
use crate::tune::TuneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    BctAplight,
    ApDqn,
    Dqn,
    #[serde(alias = "fixed_time")]
    Fixedtime,
    #[serde(alias = "max_pressure")]
    Maxpressure,
    Random,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 6] = [
        ControllerKind::BctAplight,
        ControllerKind::ApDqn,
        ControllerKind::Dqn,
        ControllerKind::Fixedtime,
        ControllerKind::Maxpressure,
        ControllerKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::BctAplight => "bct_aplight",
            ControllerKind::ApDqn => "ap_dqn",
            ControllerKind::Dqn => "dqn",
            ControllerKind::Fixedtime => "fixedtime",
            ControllerKind::Maxpressure => "maxpressure",
            ControllerKind::Random => "random",
        }
    }

    /// Q-network input encoding for learning controllers.
    pub fn encoding(self) -> Option<Encoding> {
        match self {
            ControllerKind::BctAplight | ControllerKind::ApDqn => Some(Encoding::AdaptivePressure),
            ControllerKind::Dqn => Some(Encoding::QueueLength),
            _ => None,
        }
    }

    pub fn learns(self) -> bool {
        self.encoding().is_some()
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ControllerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ControllerKind::ALL
            .into_iter()
            .find(|c| c.name() == norm || c.name() == norm.replace('_', ""))
            .ok_or_else(|| HarnessError::Config(format!("unknown controller {s:?}")))
    }
}

/// Where the road network and demand come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Grid {
        #[serde(default = "one")]
        rows: usize,
        #[serde(default = "one")]
        cols: usize,
        #[serde(default = "default_road_length")]
        road_length: f64,
        #[serde(default)]
        demand: GridDemand,
    },
    Files {
        roadnet: PathBuf,
        flow: PathBuf,
    },
}

fn one() -> usize {
    1
}

fn default_road_length() -> f64 {
    300.0
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario::grid(1, 1)
    }
}

impl Scenario {
    pub fn grid(rows: usize, cols: usize) -> Self {
        Scenario::Grid {
            rows,
            cols,
            road_length: default_road_length(),
            demand: GridDemand::default(),
        }
    }

    /// A directory holding a CityFlow roadnet (`roadnet*.json`) and one other
    /// JSON file with the flow.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let io = |source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut jsons: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        jsons.sort();
        let is_roadnet = |p: &PathBuf| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("roadnet"))
        };
        let roadnet = jsons.iter().find(|p| is_roadnet(p)).cloned();
        let flows: Vec<PathBuf> = jsons.iter().filter(|p| !is_roadnet(p)).cloned().collect();
        let flow = flows
            .iter()
            .find(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.contains("flow") || n.starts_with("anon"))
            })
            .or(flows.first())
            .cloned();
        match (roadnet, flow) {
            (Some(roadnet), Some(flow)) => Ok(Scenario::Files { roadnet, flow }),
            _ => Err(HarnessError::Config(format!(
                "{} must contain roadnet*.json and a flow JSON file",
                dir.display()
            ))),
        }
    }

    pub fn load(&self) -> Result<(Arc<Network>, FlowSpec)> {
        match self {
            Scenario::Grid {
                rows,
                cols,
                road_length,
                demand,
            } => {
                let net = build_grid(*rows, *cols, *road_length)?;
                let flow = grid_flow(&net, demand);
                Ok((Arc::new(net), flow))
            }
            Scenario::Files { roadnet, flow } => {
                let net = load_network(roadnet)?;
                let flow = load_flow(flow, &net)?;
                Ok((Arc::new(net), flow))
            }
        }
    }
}

/// What the critique layer does once active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CritiqueMode {
    #[default]
    Bayesian,
    /// Accept every action; used to check that the CT path changes nothing
    /// by itself.
    AlwaysAccept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub controller: ControllerKind,
    pub scenario: Scenario,
    pub sim: SimConfig,
    pub train: TrainConfig,
    pub critique: CritiqueConfig,
    pub critique_mode: CritiqueMode,
    pub tune: TuneConfig,
    /// Training episodes.
    pub episodes: usize,
    /// Critique and tune run in episodes strictly after this one.
    pub ct_start_episode: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub out_dir: Option<PathBuf>,
    /// Keep per-episode action traces in the report.
    pub record_actions: bool,
    /// Write the simulator event log of the final evaluation episode.
    pub log_events: bool,
    /// Write one JSON line per critique/tune decision.
    pub ct_diagnostics: bool,
    /// Run a greedy evaluation episode after training.
    pub final_eval: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            controller: ControllerKind::BctAplight,
            scenario: Scenario::default(),
            sim: SimConfig::default(),
            train: TrainConfig::default(),
            critique: CritiqueConfig::default(),
            critique_mode: CritiqueMode::default(),
            tune: TuneConfig::default(),
            episodes: 200,
            ct_start_episode: 10,
            seed: 0,
            checkpoint_every: 10,
            out_dir: None,
            record_actions: false,
            log_events: false,
            ct_diagnostics: false,
            final_eval: true,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate().map_err(HarnessError::Config)?;
        self.critique.validate()?;
        self.tune.validate()?;
        if let Scenario::Grid { rows, cols, road_length, .. } = &self.scenario {
            if *rows == 0 || *cols == 0 || !(*road_length > 0.0) {
                return Err(HarnessError::Config("grid needs rows, cols >= 1 and a positive road length".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded. Output paths and
    /// logging switches are excluded so a moved run keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        c.record_actions = false;
        c.log_events = false;
        c.ct_diagnostics = false;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
