//! Scenario configuration files (TOML).
//!
//! ```toml
//! [target]
//! initial = [[0.0, -15.0, 0.0], [0.0, 0.5, 0.0]]   # position, velocity, ...
//! # input = { constant = [0, 0, 0], amplitude = [0, 0, 0], omega = 0 }
//!
//! [agents]
//! positions = [[-10.0, 10.0, 2.0], [10.0, 10.0, 2.0]]
//! init = "bearing"            # or "average", "truth"
//! init_range = [5.0, 30.0]
//! loss = [{ agent = 1, start = 0.0, end = inf }]
//! waypoints = [{ agent = 0, points = [[0.0, -10.0, 10.0, 2.0], [5.0, -8.0, 10.0, 2.0]] }]
//!
//! [graph]
//! edges = [[0, 1, 1.0]]       # omitted: unit-weight cycle
//!
//! [gains]
//! k = [5.0, 3.5]
//! alpha = 15.9
//! delta = 0.8
//! gamma = 0.1
//!
//! [noise]
//! angle_std_deg = 0.01
//!
//! [sim]
//! step = 0.001
//! duration = 30.0
//! seed = 1
//!
//! [output]
//! csv = "run.csv"
//! ```
//!
//! Units: meters, seconds, degrees. Agent indices are 0-based.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gain_design::{DesignError, ObserverGains};
use crate::graph::{cycle_edges, Edge};
use crate::numerics::Vec3;
use crate::sim::{
    AgentSpec, InitMode, InputSignal, LossInterval, Scenario, TargetSpec, Trajectory, Waypoint, DEFAULT_INIT_RANGE,
    DEFAULT_STEP,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot serialize config: {0}")]
    Emit(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("invalid gains: {0}")]
    Gains(#[from] DesignError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub target: TargetSection,
    pub agents: AgentsSection,
    #[serde(default)]
    pub graph: GraphSection,
    pub gains: GainsSection,
    #[serde(default)]
    pub noise: NoiseSection,
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    pub initial: Vec<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    #[serde(default)]
    pub constant: Vec3,
    #[serde(default)]
    pub amplitude: Vec3,
    #[serde(default)]
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    #[default]
    Bearing,
    Average,
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentsSection {
    pub positions: Vec<Vec3>,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub loss: Vec<LossEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<WaypointTrack>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossEntry {
    pub agent: usize,
    pub start: f64,
    pub end: f64,
}

/// Points are `[t, x, y, z]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointTrack {
    pub agent: usize,
    pub points: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GraphSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Edge>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k: Vec<f64>,
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default)]
    pub angle_std_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default = "default_step")]
    pub step: f64,
    pub duration: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_step() -> f64 {
    DEFAULT_STEP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn emit(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let n = self.agents.positions.len();
        let mut agents: Vec<AgentSpec> = self.agents.positions.iter().map(|p| AgentSpec::fixed(*p)).collect();
        for track in &self.agents.waypoints {
            let slot = agents.get_mut(track.agent).ok_or_else(|| {
                ConfigError::Invalid(format!("agents.waypoints: agent {} out of range 0..{n}", track.agent))
            })?;
            let points = track
                .points
                .iter()
                .map(|p| Waypoint {
                    t: p[0],
                    position: [p[1], p[2], p[3]],
                })
                .collect();
            slot.trajectory = Trajectory::Waypoints(points);
        }
        for l in &self.agents.loss {
            let slot = agents
                .get_mut(l.agent)
                .ok_or_else(|| ConfigError::Invalid(format!("agents.loss: agent {} out of range 0..{n}", l.agent)))?;
            slot.loss.push(LossInterval {
                start: l.start,
                end: l.end,
            });
        }
        let init = match self.agents.init {
            InitKind::Truth => InitMode::Truth,
            kind => {
                let [lo, hi] = self
                    .agents
                    .init_range
                    .unwrap_or([DEFAULT_INIT_RANGE.0, DEFAULT_INIT_RANGE.1]);
                if kind == InitKind::Average {
                    InitMode::Average { range: (lo, hi) }
                } else {
                    InitMode::Bearing { range: (lo, hi) }
                }
            }
        };
        let gains = ObserverGains::new(
            self.gains.k.clone(),
            self.gains.alpha,
            self.gains.delta,
            self.gains.gamma,
        )?;
        Ok(Scenario {
            target: TargetSpec {
                blocks: self.target.initial.clone(),
                input: self.target.input.as_ref().map(|u| InputSignal {
                    constant: u.constant,
                    amplitude: u.amplitude,
                    omega: u.omega,
                }),
            },
            agents,
            edges: self.graph.edges.clone().unwrap_or_else(|| cycle_edges(n)),
            gains,
            noise_std_deg: self.noise.angle_std_deg,
            init,
            step: self.sim.step,
            duration: self.sim.duration,
            seed: self.sim.seed,
        })
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        let mut loss = Vec::new();
        let mut waypoints = Vec::new();
        let mut positions = Vec::new();
        for (i, a) in s.agents.iter().enumerate() {
            match &a.trajectory {
                Trajectory::Static(p) => positions.push(*p),
                Trajectory::Waypoints(w) => {
                    positions.push(w[0].position);
                    waypoints.push(WaypointTrack {
                        agent: i,
                        points: w
                            .iter()
                            .map(|p| [p.t, p.position[0], p.position[1], p.position[2]])
                            .collect(),
                    });
                }
            }
            loss.extend(a.loss.iter().map(|l| LossEntry {
                agent: i,
                start: l.start,
                end: l.end,
            }));
        }
        let (init, init_range) = match s.init {
            InitMode::Truth => (InitKind::Truth, None),
            InitMode::Bearing { range: (lo, hi) } => (InitKind::Bearing, Some([lo, hi])),
            InitMode::Average { range: (lo, hi) } => (InitKind::Average, Some([lo, hi])),
        };
        Self {
            target: TargetSection {
                initial: s.target.blocks.clone(),
                input: s.target.input.map(|u| InputSection {
                    constant: u.constant,
                    amplitude: u.amplitude,
                    omega: u.omega,
                }),
            },
            agents: AgentsSection {
                positions,
                init,
                init_range,
                loss,
                waypoints,
            },
            graph: GraphSection {
                edges: Some(s.edges.clone()),
            },
            gains: GainsSection {
                k: s.gains.k().to_vec(),
                alpha: s.gains.alpha(),
                delta: s.gains.delta(),
                gamma: s.gains.gamma(),
            },
            noise: NoiseSection {
                angle_std_deg: s.noise_std_deg,
            },
            sim: SimSection {
                step: s.step,
                duration: s.duration,
                seed: s.seed,
            },
            output: OutputSection::default(),
        }
    }
}

/// Parse and convert a config file in one go.
pub fn load_scenario(path: &Path) -> Result<(ConfigFile, Scenario), ConfigError> {
    let cfg = ConfigFile::load(path)?;
    let scenario = cfg.to_scenario()?;
    Ok((cfg, scenario))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[target]
initial = [[0.0, -15.0, 0.0], [0.0, 0.5, 0.0]]

[agents]
positions = [[-10.0, 10.0, 2.0], [10.0, 10.0, 2.0], [10.0, -10.0, 2.0]]
loss = [{ agent = 2, start = 1.0, end = inf }]

[gains]
k = [5.0, 3.5]
alpha = 15.9
delta = 0.8
gamma = 0.1

[sim]
duration = 2.0
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let s = ConfigFile::parse(MINIMAL).unwrap().to_scenario().unwrap();
        assert_eq!(s.edges, cycle_edges(3));
        assert_eq!(s.step, DEFAULT_STEP);
        assert_eq!(s.noise_std_deg, 0.0);
        assert_eq!(
            s.init,
            InitMode::Bearing {
                range: DEFAULT_INIT_RANGE
            }
        );
        assert_eq!(
            s.agents[2].loss,
            vec![LossInterval {
                start: 1.0,
                end: f64::INFINITY
            }]
        );
    }

    #[test]
    fn round_trip_is_identical() {
        let mut cfg = ConfigFile::parse(MINIMAL).unwrap();
        cfg.agents.waypoints.push(WaypointTrack {
            agent: 0,
            points: vec![[0.0, 1.0, 2.0, 3.0], [1.5, 1.0, 2.5, 3.0]],
        });
        cfg.target.input = Some(InputSection {
            constant: [0.1, 0.0, 0.0],
            amplitude: [0.0, 0.2, 0.0],
            omega: 0.3,
        });
        let s1 = cfg.to_scenario().unwrap();
        let text = ConfigFile::from_scenario(&s1).emit().unwrap();
        let s2 = ConfigFile::parse(&text).unwrap().to_scenario().unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn errors_name_the_problem() {
        let err = ConfigFile::parse("[target]\ninitial = 3\n").unwrap_err().to_string();
        assert!(err.contains("initial"), "{err}");
        let bad = MINIMAL.replace("agent = 2", "agent = 7");
        let err = ConfigFile::parse(&bad).unwrap().to_scenario().unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        let bad = MINIMAL.replace("alpha = 15.9", "alpha = -1.0");
        assert!(matches!(
            ConfigFile::parse(&bad).unwrap().to_scenario(),
            Err(ConfigError::Gains(_))
        ));
        let bad = MINIMAL.replace("[sim]", "[sim]\nbogus = 1");
        assert!(ConfigFile::parse(&bad).is_err());
    }
}
