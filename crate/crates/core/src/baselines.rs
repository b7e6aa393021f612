//! Comparison methods sharing the simulator and reward with the trainer: grid
//! search, random sampling, an independent-block policy, and fixed
//! hand-authored scenarios.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BlockKind, ScenarioGraph, ScenarioSpec};
use crate::policy::PolicyParams;
use crate::route::RouteSet;
use crate::sim::Outcome;
use crate::state::{encode_state, EnvState, StateEncoding};
use crate::trainer::{EpochRecord, Evaluator, StateSampler, TrainConfig, Trainer};

pub const DEFAULT_GRID_CAP: usize = 1_000_000;

/// A scenario with the outcome of simulating it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub spec: ScenarioSpec,
    pub outcome: Outcome,
}

/// Sorts by reward, highest first; ties break on the physical values so the
/// order does not depend on evaluation order.
pub fn rank(results: &mut [Scored]) {
    results.sort_by(|a, b| {
        b.outcome
            .reward
            .total_cmp(&a.outcome.reward)
            .then_with(|| cmp_values(&a.spec.physical_values, &b.spec.physical_values))
    });
}

fn cmp_values(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
}

fn evaluate_all<E: Evaluator>(specs: Vec<ScenarioSpec>, state: &EnvState, graph: &ScenarioGraph, env: &E) -> Result<Vec<Scored>> {
    specs
        .into_par_iter()
        .map(|spec| {
            let outcome = env.evaluate(&spec, state, graph)?;
            Ok(Scored { spec, outcome })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Step per block, in block units, in graph order.
    pub steps: Vec<f64>,
    /// Largest number of combinations allowed.
    pub cap: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { steps: vec![4.0, 3.0, 20.0, 10.0], cap: DEFAULT_GRID_CAP }
    }
}

/// Points `lower + j * step` for `j >= 0` strictly below the upper bound.
pub fn axis_points(lower: f64, upper: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::config(format!("grid step {step} must be positive")));
    }
    let mut pts = Vec::new();
    let mut j = 0usize;
    loop {
        let p = lower + j as f64 * step;
        if p >= upper {
            break;
        }
        pts.push(p);
        j += 1;
    }
    Ok(pts)
}

/// Axis points of every block under `cfg`.
pub fn grid_axes(graph: &ScenarioGraph, cfg: &GridConfig) -> Result<Vec<Vec<f64>>> {
    if cfg.steps.len() != graph.len() {
        return Err(Error::config(format!(
            "grid needs {} steps (one per block), got {}",
            graph.len(),
            cfg.steps.len()
        )));
    }
    if let Some(b) = graph.blocks.iter().find(|b| b.kind != BlockKind::Continuous) {
        return Err(Error::config(format!("grid search needs continuous blocks; '{}' is not", b.name)));
    }
    graph.blocks.iter().zip(&cfg.steps).map(|(b, &s)| axis_points(b.lower(), b.upper(), s)).collect()
}

/// Number of grid combinations, or an error past the cap.
pub fn grid_size(graph: &ScenarioGraph, cfg: &GridConfig) -> Result<usize> {
    let axes = grid_axes(graph, cfg)?;
    let mut n: usize = 1;
    for a in &axes {
        n = n.checked_mul(a.len()).filter(|&n| n <= cfg.cap).ok_or_else(|| {
            Error::config(format!("grid exceeds the cap of {} combinations", cfg.cap))
        })?;
    }
    Ok(n)
}

/// Every grid combination in lexicographic order (last block fastest).
pub fn grid_specs(graph: &ScenarioGraph, cfg: &GridConfig) -> Result<Vec<ScenarioSpec>> {
    let n = grid_size(graph, cfg)?;
    let axes = grid_axes(graph, cfg)?;
    let mut specs = Vec::with_capacity(n);
    let mut idx = vec![0usize; axes.len()];
    for _ in 0..n {
        let vals: Vec<f64> = idx.iter().zip(&axes).map(|(&i, a)| a[i]).collect();
        specs.push(graph.spec_from_physical(&vals)?);
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
    Ok(specs)
}

/// Simulates every grid combination on `state`; results are ranked.
pub fn grid_search<E: Evaluator>(graph: &ScenarioGraph, state: &EnvState, cfg: &GridConfig, env: &E) -> Result<Vec<Scored>> {
    let specs = grid_specs(graph, cfg)?;
    let mut out = evaluate_all(specs, state, graph, env)?;
    rank(&mut out);
    Ok(out)
}

/// Values drawn uniformly and independently over every block's range.
pub fn random_spec<R: Rng + ?Sized>(graph: &ScenarioGraph, rng: &mut R) -> Result<ScenarioSpec> {
    let vals: Vec<f64> = graph.blocks.iter().map(|b| rng.random_range(b.lower()..b.upper())).collect();
    graph.spec_from_physical(&vals)
}

/// `count` uniform scenarios on `state`, in draw order.
pub fn random_sampling<E: Evaluator, R: Rng + ?Sized>(
    graph: &ScenarioGraph,
    state: &EnvState,
    count: usize,
    rng: &mut R,
    env: &E,
) -> Result<Vec<Scored>> {
    if count == 0 {
        return Err(Error::config("random sampling count must be at least 1"));
    }
    let specs = (0..count).map(|_| random_spec(graph, rng)).collect::<Result<Vec<_>>>()?;
    evaluate_all(specs, state, graph, env)
}

/// Trains a policy whose heads see only the state.
pub fn independent_policy_train<E: Evaluator>(
    graph: &ScenarioGraph,
    config: TrainConfig,
    sampler: StateSampler,
    env: &E,
) -> Result<(PolicyParams, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(graph.without_parents(), config, sampler, env)?;
    let records = trainer.train(|_, _| Ok(()))?;
    Ok((trainer.params, records))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HumanEntry {
    route: String,
    speed_kmh: f64,
    values: BTreeMap<String, f64>,
}

const HUMAN_DESIGN: &str = include_str!("../data/human_design.toml");

fn human_entries() -> Result<BTreeMap<String, HumanEntry>> {
    Ok(toml::from_str(HUMAN_DESIGN)?)
}

/// The fixed hand-authored spec for a preset.
pub fn human_design(graph: &ScenarioGraph, preset: &str) -> Result<ScenarioSpec> {
    let entries = human_entries()?;
    let e = entries
        .get(preset)
        .ok_or_else(|| Error::config(format!("no hand-authored scenario for '{preset}'")))?;
    let vals = graph
        .blocks
        .iter()
        .map(|b| {
            e.values
                .get(&b.name)
                .copied()
                .ok_or_else(|| Error::config(format!("hand-authored '{preset}' has no value for block '{}'", b.name)))
        })
        .collect::<Result<Vec<_>>>()?;
    graph.spec_from_physical(&vals)
}

/// Route and speed the hand-authored spec of `preset` was tuned on.
pub fn human_design_state(preset: &str, enc: &StateEncoding) -> Result<EnvState> {
    let entries = human_entries()?;
    let e = entries
        .get(preset)
        .ok_or_else(|| Error::config(format!("no hand-authored scenario for '{preset}'")))?;
    let route = RouteSet::find(&e.route).ok_or_else(|| Error::config(format!("unknown route '{}'", e.route)))?;
    encode_state(&route, e.speed_kmh, enc)
}

/// Names with a hand-authored spec.
pub fn human_design_names() -> Vec<String> {
    human_entries().map(|m| m.into_keys().collect()).unwrap_or_default()
}
