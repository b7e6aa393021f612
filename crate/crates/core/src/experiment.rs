//! Repeated comparison of the learned policy against the baselines.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{self, GridConfig};
use crate::error::{Error, Result};
use crate::graph::ScenarioGraph;
use crate::metrics::{iterations_to_stability, mean_sd, stable_collision_rate};
use crate::trainer::{Evaluator, StateSampler, TrainConfig, Trainer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Autoregressive,
    Independent,
    Random,
    Grid,
    HumanDesign,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Autoregressive, Method::Independent, Method::Random, Method::Grid, Method::HumanDesign];

    pub fn name(self) -> &'static str {
        match self {
            Method::Autoregressive => "autoregressive",
            Method::Independent => "independent",
            Method::Random => "random",
            Method::Grid => "grid",
            Method::HumanDesign => "human_design",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s || (s == "human" && *m == Method::HumanDesign))
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::config(format!("unknown method '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareConfig {
    pub methods: Vec<Method>,
    pub repetitions: usize,
    pub grid: GridConfig,
    /// Final-epoch window for runs that never stabilize.
    pub fallback_window: usize,
    /// Preset name used to look up the hand-authored spec.
    pub preset: String,
}

/// One repetition of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub repetition: usize,
    pub seed: u64,
    pub collision_rate: f64,
    /// Epochs to stability for learned methods, epoch-equivalents
    /// (rollouts / batch size) for the grid, none otherwise.
    pub iterations: Option<f64>,
    pub rollouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub collision_mean: f64,
    pub collision_sd: f64,
    /// Over runs with a defined iteration count.
    pub iterations_mean: Option<f64>,
    pub iterations_sd: Option<f64>,
    pub stable_runs: usize,
}

/// Runs one repetition of `method`. The repetition's seed drives both the
/// policy initialization and every state draw.
pub fn run_method<E: Evaluator>(
    method: Method,
    repetition: usize,
    graph: &ScenarioGraph,
    train: &TrainConfig,
    sampler: &StateSampler,
    env: &E,
    cfg: &CompareConfig,
) -> Result<MethodRun> {
    let seed = train.seed.wrapping_add(repetition as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_ffee);
    let budget = train.epochs * train.batch_size;
    let (collision_rate, iterations, rollouts) = match method {
        Method::Autoregressive | Method::Independent => {
            let g = if method == Method::Independent { graph.without_parents() } else { graph.clone() };
            let mut t = Trainer::new(g, TrainConfig { seed, ..train.clone() }, sampler.clone(), env)?;
            let recs = t.train(|_, _| Ok(()))?;
            let rate = stable_collision_rate(&recs, cfg.fallback_window)?;
            (rate, iterations_to_stability(&recs).map(|e| e as f64), budget)
        }
        Method::Random => {
            let mut hits = 0;
            for _ in 0..budget {
                let state = sampler.sample(&mut rng)?;
                let spec = baselines::random_spec(graph, &mut rng)?;
                hits += env.evaluate(&spec, &state, graph)?.collision as usize;
            }
            (hits as f64 / budget as f64, None, budget)
        }
        Method::Grid => {
            let state = sampler.sample(&mut rng)?;
            let out = baselines::grid_search(graph, &state, &cfg.grid, env)?;
            let hits = out.iter().filter(|s| s.outcome.collision).count();
            (hits as f64 / out.len() as f64, Some(out.len() as f64 / train.batch_size as f64), out.len())
        }
        Method::HumanDesign => {
            let spec = baselines::human_design(graph, &cfg.preset)?;
            let mut hits = 0;
            for _ in 0..train.batch_size {
                let state = sampler.sample(&mut rng)?;
                hits += env.evaluate(&spec, &state, graph)?.collision as usize;
            }
            (hits as f64 / train.batch_size as f64, None, train.batch_size)
        }
    };
    Ok(MethodRun { method, repetition, seed, collision_rate, iterations, rollouts })
}

pub fn summarize(method: Method, runs: &[MethodRun]) -> MethodSummary {
    let mine: Vec<&MethodRun> = runs.iter().filter(|r| r.method == method).collect();
    let rates: Vec<f64> = mine.iter().map(|r| r.collision_rate).collect();
    let iters: Vec<f64> = mine.iter().filter_map(|r| r.iterations).collect();
    let (collision_mean, collision_sd) = mean_sd(&rates);
    let (im, is) = mean_sd(&iters);
    MethodSummary {
        method,
        runs: mine.len(),
        collision_mean,
        collision_sd,
        iterations_mean: (!iters.is_empty()).then_some(im),
        iterations_sd: (!iters.is_empty()).then_some(is),
        stable_runs: iters.len(),
    }
}

/// Every method for every repetition, then per-method mean and sd.
pub fn compare<E: Evaluator>(
    graph: &ScenarioGraph,
    train: &TrainConfig,
    sampler: &StateSampler,
    env: &E,
    cfg: &CompareConfig,
    mut on_run: impl FnMut(&MethodRun),
) -> Result<(Vec<MethodRun>, Vec<MethodSummary>)> {
    if cfg.repetitions == 0 {
        return Err(Error::config("experiment.repetitions must be at least 1"));
    }
    let mut runs = Vec::new();
    for &m in &cfg.methods {
        for r in 0..cfg.repetitions {
            let run = run_method(m, r, graph, train, sampler, env, cfg)?;
            on_run(&run);
            runs.push(run);
        }
    }
    let summaries = cfg.methods.iter().map(|&m| summarize(m, &runs)).collect();
    Ok((runs, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Preset;
    use crate::route::Route;
    use crate::sim::Environment;
    use crate::state::StateEncoding;

    fn setup() -> (ScenarioGraph, TrainConfig, StateSampler, CompareConfig) {
        let g = ScenarioGraph::preset(Preset::CyclistCrossing);
        let train = TrainConfig { epochs: 3, batch_size: 4, ..TrainConfig::default() };
        let sampler = StateSampler::new(vec![Route::straight("s", 40.0)], 25.0, 35.0, StateEncoding::default()).unwrap();
        let cfg = CompareConfig {
            methods: Method::ALL.to_vec(),
            repetitions: 2,
            grid: GridConfig { steps: vec![25.0, 9.0, 90.0, 20.0], cap: 1000 },
            fallback_window: 2,
            preset: "cyclist_crossing".into(),
        };
        (g, train, sampler, cfg)
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("human".parse::<Method>().unwrap(), Method::HumanDesign);
        assert!("cmaes".parse::<Method>().is_err());
    }

    #[test]
    fn compare_runs_every_method_with_budgets() {
        let (g, train, sampler, cfg) = setup();
        let env = Environment::default();
        let mut seen = 0;
        let (runs, sums) = compare(&g, &train, &sampler, &env, &cfg, |_| seen += 1).unwrap();
        assert_eq!(runs.len(), 10);
        assert_eq!(seen, 10);
        assert_eq!(sums.len(), 5);
        let grid_n = baselines::grid_size(&g, &cfg.grid).unwrap();
        let expected: usize = 2 * (12 + 12 + 12 + grid_n + 4);
        assert_eq!(env.rollouts(), expected);
        for r in &runs {
            assert!((0.0..=1.0).contains(&r.collision_rate));
        }
        let grid = sums.iter().find(|s| s.method == Method::Grid).unwrap();
        assert_eq!(grid.iterations_mean, Some(grid_n as f64 / 4.0));
        assert!(sums.iter().find(|s| s.method == Method::Random).unwrap().iterations_mean.is_none());
    }

    #[test]
    fn repetitions_are_seeded() {
        let (g, train, sampler, cfg) = setup();
        let env = Environment::default();
        let a = run_method(Method::Random, 1, &g, &train, &sampler, &env, &cfg).unwrap();
        let b = run_method(Method::Random, 1, &g, &train, &sampler, &env, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, train.seed + 1);
    }

    #[test]
    fn summary_statistics() {
        let run = |rate, it| MethodRun { method: Method::Grid, repetition: 0, seed: 0, collision_rate: rate, iterations: it, rollouts: 1 };
        let s = summarize(Method::Grid, &[run(0.25, Some(10.0)), run(0.75, None)]);
        assert_eq!(s.runs, 2);
        assert_eq!(s.collision_mean, 0.5);
        assert!((s.collision_sd - 0.5f64.sqrt() * 0.5).abs() < 1e-12);
        assert_eq!(s.iterations_mean, Some(10.0));
        assert_eq!(s.stable_runs, 1);
    }
}
