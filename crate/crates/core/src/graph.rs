//! Scenario families as directed acyclic graphs of parameter blocks.
//!
//! A [`ScenarioGraph`] lists its blocks in topological order: every block's
//! parents appear earlier in the list. The policy samples blocks in that order,
//! conditioning each head on the raw actions of the block's parents, and
//! [`rescale`] maps a raw action (a fraction of the block's range) to the
//! physical parameter the simulator consumes.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Continuous,
    Discrete,
}

/// What a block controls in the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockRole {
    /// Longitudinal spawn position in the route-start frame (m).
    X,
    /// Lateral spawn position in the route-start frame (m).
    Y,
    /// Obstacle heading relative to the route-start frame (deg).
    Heading,
    /// Ego-to-obstacle distance that activates the obstacle (m).
    TriggerDistance,
    /// Obstacle speed once active (m/s).
    Speed,
}

impl BlockRole {
    fn infer(name: &str) -> Option<Self> {
        match name {
            "X" | "x" => Some(BlockRole::X),
            "Y" | "y" => Some(BlockRole::Y),
            "Theta" | "theta" | "Θ" | "heading" => Some(BlockRole::Heading),
            "D" | "d" | "trigger" => Some(BlockRole::TriggerDistance),
            "V" | "v" | "speed" => Some(BlockRole::Speed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDef {
    pub name: String,
    #[serde(default = "default_kind")]
    pub kind: BlockKind,
    /// Inferred from the name when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<BlockRole>,
    #[serde(default)]
    pub parents: Vec<String>,
    /// Full width of the physical range.
    pub scale: f64,
    /// Center of the physical range.
    pub shift: f64,
}

fn default_kind() -> BlockKind {
    BlockKind::Continuous
}

impl BlockDef {
    pub fn continuous(name: &str, role: BlockRole, parents: &[&str], scale: f64, shift: f64) -> Self {
        BlockDef {
            name: name.to_string(),
            kind: BlockKind::Continuous,
            role: Some(role),
            parents: parents.iter().map(|p| p.to_string()).collect(),
            scale,
            shift,
        }
    }

    pub fn lower(&self) -> f64 {
        self.shift - self.scale / 2.0
    }

    pub fn upper(&self) -> f64 {
        self.shift + self.scale / 2.0
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower() && value <= self.upper()
    }

    pub fn resolved_role(&self) -> Option<BlockRole> {
        self.role.or_else(|| BlockRole::infer(&self.name))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Cyclist,
    Vehicle,
}

/// The generated traffic participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorDef {
    pub kind: ActorKind,
    /// Heading in the route-start frame when the graph has no heading block.
    #[serde(default)]
    pub heading_deg: f64,
    /// Speed when the graph has no speed block; falls back to the simulator default for the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
}

/// Preset scenario families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    CyclistCrossing,
    RedLightRunner,
    UnprotectedLeft,
    SignalizedRight,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::CyclistCrossing,
        Preset::RedLightRunner,
        Preset::UnprotectedLeft,
        Preset::SignalizedRight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CyclistCrossing => "cyclist_crossing",
            Preset::RedLightRunner => "red_light_runner",
            Preset::UnprotectedLeft => "unprotected_left",
            Preset::SignalizedRight => "signalized_right",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::CyclistCrossing => "cyclist crosses after the ego reaches a trigger distance",
            Preset::RedLightRunner => "crossing vehicle runs a red light across a straight ego route",
            Preset::UnprotectedLeft => "ego turns left across an oncoming vehicle",
            Preset::SignalizedRight => "ego turns right while a vehicle approaches from the left",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::config(format!("unknown scenario preset `{s}`")))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A scenario family: named blocks in topological order plus the actor they parameterize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct ScenarioGraph {
    pub name: String,
    pub actor: ActorDef,
    pub blocks: Vec<BlockDef>,
    #[serde(skip)]
    parent_index: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct RawGraph {
    name: String,
    actor: ActorDef,
    blocks: Vec<BlockDef>,
}

impl TryFrom<RawGraph> for ScenarioGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        ScenarioGraph::new(raw.name, raw.actor, raw.blocks)
    }
}

impl ScenarioGraph {
    pub fn new(name: impl Into<String>, actor: ActorDef, blocks: Vec<BlockDef>) -> Result<Self> {
        let name = name.into();
        if blocks.is_empty() {
            return Err(Error::config(format!("graph `{name}` has no blocks")));
        }
        let mut seen: Vec<&str> = Vec::with_capacity(blocks.len());
        let mut roles = HashSet::new();
        let mut parent_index = Vec::with_capacity(blocks.len());
        for block in &blocks {
            if seen.contains(&block.name.as_str()) {
                return Err(Error::config(format!("duplicate block name `{}`", block.name)));
            }
            if !(block.scale > 0.0 && block.scale.is_finite()) {
                return Err(Error::config(format!(
                    "block `{}`: scale must be positive and finite, got {}",
                    block.name, block.scale
                )));
            }
            if !block.shift.is_finite() {
                return Err(Error::config(format!("block `{}`: shift must be finite", block.name)));
            }
            let role = block.resolved_role().ok_or_else(|| {
                Error::config(format!(
                    "block `{}`: cannot infer role from name; set `role` explicitly",
                    block.name
                ))
            })?;
            if !roles.insert(role) {
                return Err(Error::config(format!(
                    "block `{}`: role {role:?} is already bound to another block",
                    block.name
                )));
            }
            let mut parents = Vec::with_capacity(block.parents.len());
            for p in &block.parents {
                let idx = seen.iter().position(|s| s == p).ok_or_else(|| {
                    Error::config(format!(
                        "block `{}`: parent `{p}` must be declared earlier in the block list",
                        block.name
                    ))
                })?;
                if parents.contains(&idx) {
                    return Err(Error::config(format!("block `{}`: parent `{p}` listed twice", block.name)));
                }
                parents.push(idx);
            }
            parent_index.push(parents);
            seen.push(&block.name);
        }
        Ok(ScenarioGraph { name, actor, blocks, parent_index })
    }

    pub fn preset(preset: Preset) -> Self {
        use BlockRole::*;
        let (actor, blocks) = match preset {
            Preset::CyclistCrossing => (
                ActorDef { kind: ActorKind::Cyclist, heading_deg: 0.0, speed: None },
                vec![
                    BlockDef::continuous("X", X, &[], 100.0, 0.0),
                    BlockDef::continuous("Y", Y, &[], 18.0, 0.0),
                    BlockDef::continuous("Theta", Heading, &["X", "Y"], 360.0, 180.0),
                    BlockDef::continuous("D", TriggerDistance, &["X", "Y", "Theta"], 40.0, 20.0),
                ],
            ),
            Preset::RedLightRunner | Preset::UnprotectedLeft | Preset::SignalizedRight => {
                let heading_deg = match preset {
                    Preset::RedLightRunner => 90.0,
                    Preset::UnprotectedLeft => 180.0,
                    _ => 270.0,
                };
                (
                    ActorDef { kind: ActorKind::Vehicle, heading_deg, speed: None },
                    vec![
                        BlockDef::continuous("X", X, &[], 100.0, 0.0),
                        BlockDef::continuous("Y", Y, &[], 18.0, 0.0),
                        BlockDef::continuous("V", Speed, &["X", "Y"], 14.0, 8.0),
                    ],
                )
            }
        };
        ScenarioGraph::new(preset.name(), actor, blocks).expect("preset graphs are valid")
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.name == name)
    }

    pub fn block(&self, name: &str) -> Result<&BlockDef> {
        self.block_index(name)
            .map(|i| &self.blocks[i])
            .ok_or_else(|| Error::config(format!("graph `{}` has no block `{name}`", self.name)))
    }

    pub fn role_index(&self, role: BlockRole) -> Option<usize> {
        self.blocks.iter().position(|b| b.resolved_role() == Some(role))
    }

    /// Parent indices of block `k`, all strictly less than `k`.
    pub fn parents(&self, k: usize) -> &[usize] {
        &self.parent_index[k]
    }

    /// The same blocks with every parent edge removed.
    pub fn without_parents(&self) -> Self {
        let blocks = self
            .blocks
            .iter()
            .cloned()
            .map(|mut b| {
                b.parents.clear();
                b
            })
            .collect();
        ScenarioGraph::new(format!("{}_independent", self.name), self.actor.clone(), blocks)
            .expect("removing edges keeps a valid graph")
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Physical values from raw actions, with truncation at the range boundary.
    pub fn rescale_all(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.len() {
            return Err(Error::config(format!(
                "expected {} raw actions, got {}",
                self.len(),
                raw.len()
            )));
        }
        raw.iter().zip(&self.blocks).map(|(&a, b)| rescale(a, b)).collect()
    }

    /// Builds a spec directly from physical values (baselines); log-probability and
    /// entropy are those of the uniform density over raw actions in [-0.5, 0.5], i.e. zero.
    pub fn spec_from_physical(&self, values: &[f64]) -> Result<ScenarioSpec> {
        if values.len() != self.len() {
            return Err(Error::config(format!(
                "expected {} block values, got {}",
                self.len(),
                values.len()
            )));
        }
        let mut raw = Vec::with_capacity(values.len());
        for (v, b) in values.iter().zip(&self.blocks) {
            if !b.contains(*v) {
                return Err(Error::config(format!(
                    "value {v} for block `{}` outside [{}, {}]",
                    b.name,
                    b.lower(),
                    b.upper()
                )));
            }
            raw.push((v - b.shift) / b.scale);
        }
        Ok(ScenarioSpec { raw_actions: raw, physical_values: values.to_vec(), log_prob: 0.0, entropy: 0.0 })
    }
}

/// Maps a raw action (fraction of the range) to the block's physical units,
/// truncating at the range boundary.
pub fn rescale(raw: f64, block: &BlockDef) -> Result<f64> {
    if !raw.is_finite() {
        return Err(Error::numeric(format!("non-finite raw action {raw} for block `{}`", block.name)));
    }
    if !(block.scale > 0.0) {
        return Err(Error::config(format!("block `{}` has non-positive scale", block.name)));
    }
    Ok((raw * block.scale + block.shift).clamp(block.lower(), block.upper()))
}

/// One concrete scenario drawn from a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub raw_actions: Vec<f64>,
    pub physical_values: Vec<f64>,
    pub log_prob: f64,
    pub entropy: f64,
}

impl ScenarioSpec {
    pub fn validate(&self, graph: &ScenarioGraph) -> Result<()> {
        if self.raw_actions.len() != graph.len() || self.physical_values.len() != graph.len() {
            return Err(Error::config(format!(
                "spec has {}/{} entries but graph `{}` has {} blocks",
                self.raw_actions.len(),
                self.physical_values.len(),
                graph.name,
                graph.len()
            )));
        }
        for (v, b) in self.physical_values.iter().zip(&graph.blocks) {
            if !b.contains(*v) {
                return Err(Error::config(format!("block `{}` value {v} out of range", b.name)));
            }
        }
        Ok(())
    }

    pub fn value(&self, graph: &ScenarioGraph, role: BlockRole) -> Option<f64> {
        graph.role_index(role).map(|i| self.physical_values[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cyclist_preset_factorization() {
        let g = ScenarioGraph::preset(Preset::CyclistCrossing);
        assert_eq!(g.len(), 4);
        let names: Vec<_> = g.blocks.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["X", "Y", "Theta", "D"]);
        assert!(g.parents(0).is_empty());
        assert!(g.parents(1).is_empty());
        assert_eq!(g.parents(2), &[0, 1]);
        assert_eq!(g.blocks[3].parents, ["X", "Y", "Theta"]);
        let theta = g.block("Theta").unwrap();
        assert_eq!((theta.shift, theta.scale), (180.0, 360.0));
        let d = g.block("D").unwrap();
        assert_eq!((d.shift, d.scale), (20.0, 40.0));
        let x = g.block("X").unwrap();
        assert_eq!((x.shift, x.scale), (0.0, 100.0));
        let y = g.block("Y").unwrap();
        assert_eq!((y.shift, y.scale), (0.0, 18.0));
    }

    #[test]
    fn vehicle_presets_have_three_blocks() {
        for p in [Preset::RedLightRunner, Preset::UnprotectedLeft, Preset::SignalizedRight] {
            let g = ScenarioGraph::preset(p);
            assert_eq!(g.len(), 3);
            assert!(g.role_index(BlockRole::Heading).is_none());
            let v = g.block("V").unwrap();
            assert_eq!((v.lower(), v.upper()), (1.0, 15.0));
        }
    }

    #[test]
    fn unknown_preset_is_config_error() {
        let err = "roundabout".parse::<Preset>().unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn rescale_examples() {
        let g = ScenarioGraph::preset(Preset::CyclistCrossing);
        let theta = g.block("Theta").unwrap();
        let d = g.block("D").unwrap();
        assert_eq!(rescale(0.0, theta).unwrap(), 180.0);
        assert_eq!(rescale(0.5, d).unwrap(), 40.0);
        assert_eq!(rescale(2.0, d).unwrap(), 40.0);
        assert_eq!(rescale(-3.0, d).unwrap(), 0.0);
        assert!(matches!(rescale(f64::NAN, d), Err(Error::Numeric(_))));
    }

    #[test]
    fn rejects_forward_parent_and_duplicates() {
        let actor = ActorDef { kind: ActorKind::Cyclist, heading_deg: 0.0, speed: None };
        let fwd = vec![
            BlockDef::continuous("X", BlockRole::X, &["Y"], 1.0, 0.0),
            BlockDef::continuous("Y", BlockRole::Y, &[], 1.0, 0.0),
        ];
        assert!(ScenarioGraph::new("g", actor.clone(), fwd).is_err());
        let dup = vec![
            BlockDef::continuous("X", BlockRole::X, &[], 1.0, 0.0),
            BlockDef::continuous("X", BlockRole::Y, &[], 1.0, 0.0),
        ];
        assert!(ScenarioGraph::new("g", actor.clone(), dup).is_err());
        let bad_scale = vec![
            BlockDef::continuous("X", BlockRole::X, &[], 0.0, 0.0),
            BlockDef::continuous("Y", BlockRole::Y, &[], 1.0, 0.0),
        ];
        assert!(ScenarioGraph::new("g", actor, bad_scale).is_err());
    }

    #[test]
    fn toml_round_trip() {
        for p in Preset::ALL {
            let g = ScenarioGraph::preset(p);
            let text = g.to_toml().unwrap();
            let back = ScenarioGraph::from_toml(&text).unwrap();
            assert_eq!(g, back);
        }
    }

    #[test]
    fn user_defined_graph_from_text() {
        let text = r#"
            name = "parked_door"
            [actor]
            kind = "vehicle"
            heading_deg = 0.0
            speed = 0.0
            [[blocks]]
            name = "X"
            scale = 60.0
            shift = 20.0
            [[blocks]]
            name = "Y"
            parents = ["X"]
            scale = 8.0
            shift = 0.0
        "#;
        let g = ScenarioGraph::from_toml(text).unwrap();
        assert_eq!(g.parents(1), &[0]);
        let bad = text.replace("parents = [\"X\"]", "parents = [\"Z\"]");
        assert!(ScenarioGraph::from_toml(&bad).is_err());
    }

    #[test]
    fn independent_copy_drops_edges() {
        let g = ScenarioGraph::preset(Preset::CyclistCrossing).without_parents();
        assert!((0..g.len()).all(|k| g.parents(k).is_empty()));
    }

    fn arb_graph() -> impl Strategy<Value = Vec<Vec<bool>>> {
        (1usize..8).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), n)
        })
    }

    proptest! {
        #[test]
        fn topological_iteration_never_sees_unvisited_parent(mask in arb_graph()) {
            let n = mask.len();
            let roles = [BlockRole::X, BlockRole::Y, BlockRole::Heading, BlockRole::TriggerDistance, BlockRole::Speed];
            let names: Vec<String> = (0..n).map(|i| format!("b{i}")).collect();
            let mut blocks = Vec::new();
            for k in 0..n {
                let parents: Vec<String> = (0..k).filter(|&j| mask[k][j]).map(|j| names[j].clone()).collect();
                blocks.push(BlockDef {
                    name: names[k].clone(),
                    kind: BlockKind::Continuous,
                    role: roles.get(k).copied(),
                    parents,
                    scale: 1.0 + k as f64,
                    shift: 0.0,
                });
            }
            let actor = ActorDef { kind: ActorKind::Cyclist, heading_deg: 0.0, speed: None };
            let result = ScenarioGraph::new("fuzz", actor, blocks);
            if n > roles.len() {
                prop_assert!(result.is_err());
            } else {
                let g = result.unwrap();
                let mut visited = vec![false; n];
                for k in 0..n {
                    for &p in g.parents(k) {
                        prop_assert!(visited[p]);
                    }
                    visited[k] = true;
                }
            }
        }

        #[test]
        fn rescale_monotone_and_idempotent(a in -5.0f64..5.0, b in -5.0f64..5.0, scale in 0.1f64..500.0, shift in -100.0f64..100.0) {
            let block = BlockDef::continuous("X", BlockRole::X, &[], scale, shift);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(rescale(lo, &block).unwrap() <= rescale(hi, &block).unwrap());
            let once = rescale(a, &block).unwrap();
            let raw_again = (once - shift) / scale;
            let twice = rescale(raw_again, &block).unwrap();
            prop_assert!((once - twice).abs() <= 1e-9 * (1.0 + once.abs()));
            prop_assert!(block.contains(once));
        }
    }
}
