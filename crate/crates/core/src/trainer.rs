//! REINFORCE training with an entropy bonus.
//!
//! Each epoch draws `N` (route, speed) states, samples one scenario per state,
//! simulates it, and ascends
//!
//! ```text
//! g = 1/N * sum_i R_i * grad log pi(a_i | s_i) + lambda * 1/N * sum_i grad H_i
//! ```
//!
//! with Adam. The policy acts once per episode, so this is a contextual bandit.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ScenarioGraph, ScenarioSpec};
use crate::optim::{clip_global_norm, Adam};
use crate::policy::{self, PolicyParams, PolicySample, PolicyShape};
use crate::route::{Route, RouteSet};
use crate::sim::{Environment, Outcome};
use crate::state::{encode_state, EnvState, StateEncoding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub entropy_weight: f64,
    pub seed: u64,
    pub state_hidden: usize,
    pub head_hidden: usize,
    /// Global-norm gradient clip.
    pub grad_clip: f64,
    /// Subtract the batch-mean reward before weighting the score.
    pub reward_baseline: bool,
    /// Starting sigma of every head in raw-action units (fraction of block range).
    pub initial_sigma: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            learning_rate: 0.008,
            batch_size: 16,
            entropy_weight: 0.001,
            seed: 0,
            state_hidden: 64,
            head_hidden: 32,
            grad_clip: 10.0,
            reward_baseline: true,
            initial_sigma: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate must be positive"));
        }
        if !(self.entropy_weight >= 0.0 && self.entropy_weight.is_finite()) {
            return Err(Error::config("train.entropy_weight must be nonnegative"));
        }
        if self.state_hidden == 0 || self.head_hidden == 0 {
            return Err(Error::config("train.state_hidden and train.head_hidden must be positive"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::config("train.grad_clip must be positive"));
        }
        if !(self.initial_sigma > policy::SIGMA_FLOOR && self.initial_sigma.is_finite()) {
            return Err(Error::config(format!("train.initial_sigma must exceed {}", policy::SIGMA_FLOOR)));
        }
        Ok(())
    }

    pub fn policy_shape(&self, graph: &ScenarioGraph, enc: &StateEncoding) -> PolicyShape {
        PolicyShape::for_graph(graph, enc.dim(), self.state_hidden, self.head_hidden)
    }
}

/// Distribution over environment states: uniform route, uniform target speed.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSampler {
    pub routes: Vec<Route>,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    pub encoding: StateEncoding,
}

impl StateSampler {
    pub fn new(routes: Vec<Route>, speed_min_kmh: f64, speed_max_kmh: f64, encoding: StateEncoding) -> Result<Self> {
        if routes.is_empty() {
            return Err(Error::config("state sampler needs at least one route"));
        }
        if !(speed_min_kmh > 0.0 && speed_max_kmh >= speed_min_kmh) {
            return Err(Error::config(format!("invalid speed range [{speed_min_kmh}, {speed_max_kmh}]")));
        }
        encoding.validate()?;
        Ok(StateSampler { routes, speed_min_kmh, speed_max_kmh, encoding })
    }

    pub fn training() -> Self {
        StateSampler::new(RouteSet::Training.routes(), 20.0, 50.0, StateEncoding::default()).unwrap()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<EnvState> {
        sample_env_state(&self.routes, (self.speed_min_kmh, self.speed_max_kmh), &self.encoding, rng)
    }
}

/// Uniform route from `routes`, uniform speed from `speed_range` (km/h).
pub fn sample_env_state<R: Rng + ?Sized>(
    routes: &[Route],
    speed_range: (f64, f64),
    encoding: &StateEncoding,
    rng: &mut R,
) -> Result<EnvState> {
    let route = routes.choose(rng).ok_or_else(|| Error::config("route set is empty"))?;
    let (lo, hi) = speed_range;
    if !(hi >= lo) {
        return Err(Error::config(format!("invalid speed range [{lo}, {hi}]")));
    }
    let speed = if hi > lo { rng.random_range(lo..hi) } else { lo };
    encode_state(route, speed, encoding)
}

/// Anything that scores a scenario. The simulator-backed [`Environment`] is the
/// production implementation.
pub trait Evaluator: Sync {
    fn evaluate(&self, spec: &ScenarioSpec, state: &EnvState, graph: &ScenarioGraph) -> Result<Outcome>;
}

impl Evaluator for Environment {
    fn evaluate(&self, spec: &ScenarioSpec, state: &EnvState, graph: &ScenarioGraph) -> Result<Outcome> {
        Environment::evaluate(self, spec, state, graph)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_reward: f64,
    pub collisions: usize,
    pub batch_size: usize,
    pub mean_entropy: f64,
    /// Mean sigma over all heads and batch entries.
    pub mean_sigma: f64,
    /// Norm of the raw gradient, before clipping.
    pub grad_norm: f64,
}

impl EpochRecord {
    pub fn collision_rate(&self) -> f64 {
        self.collisions as f64 / self.batch_size as f64
    }
}

#[derive(Debug, Clone)]
pub struct BatchEntry {
    pub state: EnvState,
    pub sample: PolicySample,
    pub outcome: Outcome,
}

/// Raw ascent direction for one batch; `rewards[i]` weights entry `i`.
pub fn batch_gradient(
    params: &PolicyParams,
    graph: &ScenarioGraph,
    entries: &[BatchEntry],
    rewards: &[f64],
    entropy_weight: f64,
) -> Result<Vec<f64>> {
    if entries.len() != rewards.len() || entries.is_empty() {
        return Err(Error::config("batch and reward lengths differ or batch is empty"));
    }
    let n = entries.len() as f64;
    let per_entry: Vec<Vec<f64>> = entries
        .par_iter()
        .zip(rewards.par_iter())
        .map(|(e, &r)| -> Result<Vec<f64>> {
            let mut g = vec![0.0; params.len()];
            if r != 0.0 {
                let score = policy::grad_log_prob(params, &e.sample, &e.state, graph)?;
                g.iter_mut().zip(&score).for_each(|(gi, si)| *gi += r / n * si);
            }
            if entropy_weight != 0.0 {
                let ent = policy::grad_entropy(params, &e.state, graph, &e.sample)?;
                g.iter_mut().zip(&ent).for_each(|(gi, hi)| *gi += entropy_weight / n * hi);
            }
            Ok(g)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; params.len()];
    for g in &per_entry {
        total.iter_mut().zip(g).for_each(|(t, gi)| *t += gi);
    }
    Ok(total)
}

pub struct Trainer<'e, E: Evaluator = Environment> {
    pub graph: ScenarioGraph,
    pub params: PolicyParams,
    pub config: TrainConfig,
    pub sampler: StateSampler,
    env: &'e E,
    optimizer: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

impl<'e, E: Evaluator> Trainer<'e, E> {
    /// Fresh fan-in initialized policy seeded from `config.seed`, sigma biases
    /// set from `config.initial_sigma`.
    pub fn new(graph: ScenarioGraph, config: TrainConfig, sampler: StateSampler, env: &'e E) -> Result<Self> {
        config.validate()?;
        let mut params = PolicyParams::init(config.policy_shape(&graph, &sampler.encoding), config.seed);
        params.set_initial_sigma(config.initial_sigma)?;
        Trainer::with_params(graph, params, config, sampler, env)
    }

    pub fn with_params(
        graph: ScenarioGraph,
        params: PolicyParams,
        config: TrainConfig,
        sampler: StateSampler,
        env: &'e E,
    ) -> Result<Self> {
        config.validate()?;
        params.validate(&graph, sampler.encoding.dim())?;
        let optimizer = Adam::new(params.len(), config.learning_rate);
        // separate stream from the initializer
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_5ce7a);
        Ok(Trainer { graph, params, config, sampler, env, optimizer, rng, epoch: 0 })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Draws states and samples sequentially, then simulates the batch in parallel.
    pub fn collect_batch(&mut self) -> Result<Vec<BatchEntry>> {
        let mut drawn = Vec::with_capacity(self.config.batch_size);
        for _ in 0..self.config.batch_size {
            let state = self.sampler.sample(&mut self.rng)?;
            let sample = policy::sample(&self.params, &state, &self.graph, &mut self.rng)?;
            drawn.push((state, sample));
        }
        let graph = &self.graph;
        let env = self.env;
        drawn
            .into_par_iter()
            .map(|(state, sample)| {
                let outcome = env.evaluate(&sample.spec, &state, graph)?;
                Ok(BatchEntry { state, sample, outcome })
            })
            .collect()
    }

    /// Applies one ascent step for a batch scored by `rewards`. Parameters are
    /// left unchanged if the gradient or the updated parameters are not finite.
    pub fn update(&mut self, entries: &[BatchEntry], rewards: &[f64]) -> Result<EpochRecord> {
        let weights: Vec<f64> = if self.config.reward_baseline {
            let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
            rewards.iter().map(|r| r - mean).collect()
        } else {
            rewards.to_vec()
        };
        let mut grad = batch_gradient(&self.params, &self.graph, entries, &weights, self.config.entropy_weight)?;
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numeric(format!(
                "epoch {}: gradient component {i} is not finite; parameters unchanged",
                self.epoch + 1
            )));
        }
        let grad_norm = clip_global_norm(&mut grad, self.config.grad_clip);
        let mut next = self.params.values.clone();
        let mut opt = self.optimizer.clone();
        opt.ascend(&mut next, &grad);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "epoch {}: update produced non-finite parameters; parameters unchanged",
                self.epoch + 1
            )));
        }
        self.params.values = next;
        self.optimizer = opt;
        self.epoch += 1;

        let n = entries.len() as f64;
        let heads = entries.first().map_or(1, |e| e.sample.draws.len()).max(1) as f64;
        Ok(EpochRecord {
            epoch: self.epoch,
            mean_reward: rewards.iter().sum::<f64>() / n,
            collisions: entries.iter().filter(|e| e.outcome.collision).count(),
            batch_size: entries.len(),
            mean_entropy: entries.iter().map(|e| e.sample.spec.entropy).sum::<f64>() / n,
            mean_sigma: entries.iter().flat_map(|e| e.sample.draws.iter().map(|d| d.sigma)).sum::<f64>() / (n * heads),
            grad_norm,
        })
    }

    pub fn train_epoch(&mut self) -> Result<EpochRecord> {
        let entries = self.collect_batch()?;
        let rewards: Vec<f64> = entries.iter().map(|e| e.outcome.reward).collect();
        self.update(&entries, &rewards)
    }

    /// Runs the configured number of epochs; `on_epoch` sees every record and the
    /// parameters after that epoch's update (for checkpointing and logging).
    pub fn train(&mut self, mut on_epoch: impl FnMut(&EpochRecord, &PolicyParams) -> Result<()>) -> Result<Vec<EpochRecord>> {
        let mut records = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let rec = self.train_epoch()?;
            on_epoch(&rec, &self.params)?;
            records.push(rec);
        }
        Ok(records)
    }
}
