//! One TOML document describing an experiment. Every section is optional
//! except `[scenario]`, and missing fields take the shipped defaults.
//!
//! ```toml
//! [scenario]
//! name = "cyclist_crossing"
//!
//! [train]
//! epochs = 100
//! seed = 3
//!
//! [state]
//! route_set = "training"
//! speed_min_kmh = 20.0
//! speed_max_kmh = 50.0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{GridConfig, DEFAULT_GRID_CAP};
use crate::error::{Error, Result};
use crate::graph::{Preset, ScenarioGraph};
use crate::route::{Route, RouteSet};
use crate::sim::{Environment, RewardConfig, SimConfig};
use crate::state::StateEncoding;
use crate::trainer::{StateSampler, TrainConfig};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Preset name, or a label for `graph`.
    pub name: Option<String>,
    /// User-defined graph; overrides the preset lookup.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<ScenarioGraph>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StateSection {
    /// "training" or "heldout".
    pub route_set: String,
    /// Subset of the route set by name; empty means all of it.
    pub routes: Vec<String>,
    /// Extra routes given as waypoint lists.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub custom_routes: Vec<Route>,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
}

impl Default for StateSection {
    fn default() -> Self {
        StateSection {
            route_set: "training".into(),
            routes: Vec::new(),
            custom_routes: Vec::new(),
            speed_min_kmh: 20.0,
            speed_max_kmh: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    /// Grid steps per block; defaults to [4, 3, 20, 10] for the cyclist
    /// graph and a tenth of each range otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_steps: Option<Vec<f64>>,
    pub grid_cap: usize,
    pub random_count: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        BaselineSection { grid_steps: None, grid_cap: DEFAULT_GRID_CAP, random_count: 1600 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Repetitions per method in a comparison.
    pub repetitions: usize,
    /// Final-epoch window used when a run never stabilizes.
    pub fallback_window: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection { repetitions: 30, fallback_window: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioSection,
    pub train: TrainConfig,
    pub reward: RewardConfig,
    pub sim: SimConfig,
    pub state: StateSection,
    pub encoding: StateEncoding,
    pub baseline: BaselineSection,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    /// Defaults for a named preset.
    pub fn for_preset(preset: Preset) -> Self {
        ExperimentConfig {
            scenario: ScenarioSection { name: Some(preset.name().into()), graph: None },
            ..ExperimentConfig::default()
        }
    }

    /// Parses and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        ExperimentConfig::from_toml(&text).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("{}: {m}", path.display())),
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let graph = self.graph()?;
        self.train.validate()?;
        self.sim.validate()?;
        self.encoding.validate()?;
        for (field, v) in [
            ("reward.collision_bonus", self.reward.collision_bonus),
            ("reward.occupancy_penalty", self.reward.occupancy_penalty),
        ] {
            if !v.is_finite() {
                return Err(Error::config(format!("{field} must be finite, got {v}")));
            }
        }
        self.sampler()?;
        let grid = self.grid(&graph);
        if grid.steps.len() != graph.len() {
            return Err(Error::config(format!(
                "baseline.grid_steps needs {} entries (one per block), got {}",
                graph.len(),
                grid.steps.len()
            )));
        }
        if let Some(s) = grid.steps.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::config(format!("baseline.grid_steps entries must be positive, got {s}")));
        }
        if self.baseline.random_count == 0 {
            return Err(Error::config("baseline.random_count must be at least 1"));
        }
        if self.experiment.repetitions == 0 {
            return Err(Error::config("experiment.repetitions must be at least 1"));
        }
        if self.experiment.fallback_window == 0 || self.experiment.fallback_window > self.train.epochs {
            return Err(Error::config(format!(
                "experiment.fallback_window must be in 1..={} (train.epochs)",
                self.train.epochs
            )));
        }
        Ok(())
    }

    /// The scenario graph: the inline graph if given, else the named preset.
    pub fn graph(&self) -> Result<ScenarioGraph> {
        let name = self
            .scenario
            .name
            .as_deref()
            .ok_or_else(|| Error::config("scenario.name is required"))?;
        match &self.scenario.graph {
            Some(g) => Ok(g.clone()),
            None => name
                .parse::<Preset>()
                .map(ScenarioGraph::preset)
                .map_err(|_| Error::config(format!("scenario.name '{name}' is not a preset and no scenario.graph is given"))),
        }
    }

    pub fn routes(&self) -> Result<Vec<Route>> {
        let set = match self.state.route_set.as_str() {
            "training" => RouteSet::Training,
            "heldout" => RouteSet::Heldout,
            other => {
                return Err(Error::config(format!(
                    "state.route_set must be \"training\" or \"heldout\", got \"{other}\""
                )))
            }
        };
        let all = set.routes();
        let mut routes = if self.state.routes.is_empty() {
            all
        } else {
            self.state
                .routes
                .iter()
                .map(|n| {
                    all.iter().find(|r| r.name() == n).cloned().ok_or_else(|| {
                        Error::config(format!("state.routes: '{n}' is not in the {} set", self.state.route_set))
                    })
                })
                .collect::<Result<Vec<_>>>()?
        };
        routes.extend(self.state.custom_routes.iter().cloned());
        Ok(routes)
    }

    pub fn sampler(&self) -> Result<StateSampler> {
        let (lo, hi) = (self.state.speed_min_kmh, self.state.speed_max_kmh);
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
            return Err(Error::config(format!("state.speed_min_kmh must be positive, got {lo}")));
        }
        if hi < lo {
            return Err(Error::config(format!("state.speed_max_kmh ({hi}) is below state.speed_min_kmh ({lo})")));
        }
        StateSampler::new(self.routes()?, lo, hi, self.encoding.clone())
    }

    pub fn environment(&self) -> Environment {
        Environment::new(self.sim.clone(), self.reward.clone())
    }

    pub fn grid(&self, graph: &ScenarioGraph) -> GridConfig {
        let steps = match &self.baseline.grid_steps {
            Some(s) => s.clone(),
            None if *graph == ScenarioGraph::preset(Preset::CyclistCrossing) => GridConfig::default().steps,
            None => graph.blocks.iter().map(|b| b.scale / 10.0).collect(),
        };
        GridConfig { steps, cap: self.baseline.grid_cap }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err(text: &str) -> String {
        ExperimentConfig::from_toml(text).unwrap_err().to_string()
    }

    #[test]
    fn bare_config_is_table_one() {
        let c = ExperimentConfig::from_toml("[scenario]\nname = \"cyclist_crossing\"\n").unwrap();
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.train.learning_rate, 0.008);
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.entropy_weight, 0.001);
        assert_eq!(c.reward.collision_bonus, 10.0);
        assert_eq!(c.reward.occupancy_penalty, 20.0);
        assert_eq!(c.sim.occupancy_threshold, 3.0);
        assert_eq!(c.train.state_hidden, 64);
        assert_eq!(c.train.head_hidden, 32);
        assert_eq!(c.sampler().unwrap().routes.len(), 10);
        assert_eq!(c.grid(&c.graph().unwrap()).steps, vec![4.0, 3.0, 20.0, 10.0]);
    }

    #[test]
    fn missing_name_is_named() {
        assert!(err("[train]\nepochs = 3\n").contains("scenario.name"));
        assert!(err("").contains("scenario.name"));
    }

    #[test]
    fn field_level_errors() {
        let base = "[scenario]\nname = \"cyclist_crossing\"\n";
        assert!(err(&format!("{base}[train]\nepochs = 0\n")).contains("train.epochs"));
        assert!(err(&format!("{base}[train]\nlearning_rate = -1.0\n")).contains("train.learning_rate"));
        assert!(err(&format!("{base}[sim]\ndt = 0.0\n")).contains("sim.dt"));
        assert!(err(&format!("{base}[state]\nroute_set = \"nope\"\n")).contains("state.route_set"));
        assert!(err(&format!("{base}[state]\nroutes = [\"zzz\"]\n")).contains("state.routes"));
        assert!(err(&format!("{base}[state]\nspeed_min_kmh = 60.0\n")).contains("state.speed_max_kmh"));
        assert!(err(&format!("{base}[baseline]\ngrid_steps = [1.0]\n")).contains("baseline.grid_steps"));
        assert!(err(&format!("{base}[experiment]\nrepetitions = 0\n")).contains("experiment.repetitions"));
        assert!(err(&format!("{base}[train]\nepoch = 3\n")).contains("epoch"));
        assert!(err("[scenario]\nname = \"unknown\"\n").contains("scenario.name"));
    }

    #[test]
    fn errors_are_config_errors() {
        assert!(ExperimentConfig::from_toml("[train]\n").unwrap_err().is_config());
        assert!(ExperimentConfig::from_toml("[train\n").unwrap_err().is_config());
    }

    #[test]
    fn round_trip_default_and_custom() {
        for p in Preset::ALL {
            let c = ExperimentConfig::for_preset(p);
            assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
        }
        let mut c = ExperimentConfig::for_preset(Preset::CyclistCrossing);
        c.train.seed = 42;
        c.train.learning_rate = 0.0031;
        c.state.route_set = "heldout".into();
        c.state.routes = vec!["heldout_left".into()];
        c.state.custom_routes = vec![Route::turn("mine", 10.0, 7.0, 45.0, 10.0)];
        c.baseline.grid_steps = Some(vec![10.0, 6.0, 45.0, 5.0]);
        c.sim.cyclist_speed = 5.5;
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.routes().unwrap().len(), 2);
    }

    #[test]
    fn inline_graph() {
        let g = ScenarioGraph::preset(Preset::RedLightRunner);
        let text = format!("[scenario]\nname = \"mine\"\n\n[scenario.graph]\n{}", g.to_toml().unwrap());
        let text = text.replace("[blocks", "[scenario.graph.blocks").replace("[actor", "[scenario.graph.actor");
        let c = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(c.graph().unwrap(), g);
        assert_eq!(c.grid(&g).steps, vec![10.0, 1.8, 1.4]);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }
}
