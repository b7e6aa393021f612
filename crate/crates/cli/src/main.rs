use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use safegen::baselines::{self, Scored};
use safegen::experiment::{self, CompareConfig};
use safegen::heatmap::{self, DEFAULT_BINS_1D, DEFAULT_BINS_2D};
use safegen::io::{self, MetricsLog, Trace};
use safegen::metrics;
use safegen::policy;
use safegen::{encode_state, EnvState, ExperimentConfig, Method, Preset, RouteSet, ScenarioGraph, Trainer};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "safegen", version, about = "Learn to generate safety-critical driving scenarios")]
struct Cli {
    /// Worker threads for parallel rollouts.
    #[arg(long, global = true, env = "SAFEGEN_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write a run directory.
    Train(TrainArgs),
    /// Sample and simulate scenarios from a checkpoint on one route and speed.
    Eval(EvalArgs),
    /// Run a comparison method.
    Baseline(BaselineArgs),
    /// Export the policy's distribution over one or two blocks.
    Heatmap(HeatmapArgs),
    /// Re-simulate a recorded trace and check it matches.
    Replay(ReplayArgs),
    /// Repeat every method and report mean and standard deviation.
    Compare(CompareArgs),
    /// List the built-in scenario families.
    PresetsList,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config is given.
    #[arg(long, default_value = "cyclist_crossing")]
    preset: String,
    /// Overrides train.seed.
    #[arg(long, env = "SAFEGEN_SEED")]
    seed: Option<u64>,
}

#[derive(Args)]
struct StateArgs {
    #[arg(long, default_value = "heldout_left")]
    route: String,
    /// Target speed in km/h.
    #[arg(long, default_value_t = 30.0)]
    speed: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Train heads on the state only.
    #[arg(long)]
    independent: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    state: StateArgs,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    /// Ranked scenario list (CSV).
    #[arg(long, default_value = "ranked.csv")]
    out: PathBuf,
    /// Trace file for the top-ranked scenario (JSON Lines).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// grid, random, human_design or independent.
    #[arg(long)]
    method: String,
    #[command(flatten)]
    state: StateArgs,
    /// Number of random scenarios (defaults to baseline.random_count).
    #[arg(long)]
    count: Option<usize>,
    /// Ranked scenario list (CSV), or the run parent directory for `independent`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    state: StateArgs,
    /// Block on the horizontal axis.
    #[arg(long)]
    block: String,
    /// Block on the vertical axis for a joint field.
    #[arg(long)]
    y_block: Option<String>,
    /// Fix a parent at a physical value, as NAME=VALUE.
    #[arg(long = "given", value_parser = parse_given)]
    given: Vec<(String, f64)>,
    #[arg(long)]
    bins: Option<usize>,
    /// Output prefix; writes PREFIX.svg and PREFIX.csv.
    #[arg(long, default_value = "heatmap")]
    out: PathBuf,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    /// Top-down drawing of the rollout.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Comma-separated subset of methods.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Overrides experiment.repetitions.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Per-run results (CSV).
    #[arg(long, default_value = "compare.csv")]
    out: PathBuf,
}

fn parse_given(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
    let v = value.trim().parse::<f64>().map_err(|e| format!("bad value in '{s}': {e}"))?;
    Ok((name.trim().to_string(), v))
}

/// Error carrying the exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let config = error.chain().any(|c| c.downcast_ref::<safegen::Error>().is_some_and(|e| e.is_config()));
        Failure { code: if config { EXIT_CONFIG } else { EXIT_RUNTIME }, error }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, error: anyhow!(msg.into()) }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_RUNTIME);
        }
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Heatmap(a) => cmd_heatmap(a),
        Command::Replay(a) => cmd_replay(a),
        Command::Compare(a) => cmd_compare(a),
        Command::PresetsList => cmd_presets(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(args: &ScenarioArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let preset: Preset = args.preset.parse().map_err(|e: safegen::Error| config_error(e.to_string()))?;
            ExperimentConfig::for_preset(preset)
        }
    };
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn state_for(cfg: &ExperimentConfig, args: &StateArgs) -> Result<EnvState, Failure> {
    let route = cfg
        .routes()?
        .into_iter()
        .find(|r| r.name() == args.route)
        .or_else(|| RouteSet::find(&args.route))
        .ok_or_else(|| config_error(format!("unknown route '{}'", args.route)))?;
    if !(args.speed > 0.0 && args.speed.is_finite()) {
        return Err(config_error(format!("--speed must be positive, got {}", args.speed)));
    }
    Ok(encode_state(&route, args.speed, &cfg.encoding)?)
}

#[derive(Serialize)]
struct Manifest {
    version: String,
    scenario: String,
    seed: u64,
    config_sha256: String,
    independent: bool,
}

fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Next unused `<parent>/<stem>-NNN`.
fn new_run_dir(parent: &Path, stem: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    for i in 1.. {
        let dir = parent.join(format!("{stem}-{i:03}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

fn train_run(cfg: &ExperimentConfig, out: &Path, independent: bool) -> CmdResult {
    let mut graph = cfg.graph()?;
    if independent {
        graph = graph.without_parents();
    }
    let sampler = cfg.sampler()?;
    let env = cfg.environment();
    let text = cfg.to_toml()?;
    let label = cfg.scenario.name.clone().unwrap_or_default();
    let stem = format!("{label}{}-seed{}", if independent { "-independent" } else { "" }, cfg.train.seed);
    let dir = new_run_dir(out, &stem)?;
    fs::write(dir.join("config.toml"), &text)?;
    let manifest = Manifest {
        version: version_string(),
        scenario: label,
        seed: cfg.train.seed,
        config_sha256: hex::encode(Sha256::digest(text.as_bytes())),
        independent,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    let ckdir = dir.join("checkpoints");
    fs::create_dir(&ckdir)?;
    let mut log = MetricsLog::create(dir.join("metrics.csv"))?;

    let mut trainer = Trainer::new(graph, cfg.train.clone(), sampler, &env)?;
    let records = trainer.train(|rec, params| {
        log.append(rec)?;
        io::save_checkpoint(ckdir.join(format!("epoch_{:04}.json", rec.epoch)), params)?;
        if rec.epoch % 10 == 0 || rec.epoch == cfg.train.epochs {
            println!(
                "epoch {:>4}  reward {:>9.3}  collision {:.3}  sigma {:.4}",
                rec.epoch,
                rec.mean_reward,
                rec.collision_rate(),
                rec.mean_sigma
            );
        }
        Ok(())
    })?;
    io::save_checkpoint(dir.join("final.json"), &trainer.params)?;
    let window = cfg.experiment.fallback_window.min(records.len());
    let stable = metrics::iterations_to_stability(&records);
    println!(
        "stable collision rate {:.3} (stable from epoch {}), {} rollouts",
        metrics::stable_collision_rate(&records, window)?,
        stable.map_or("never".to_string(), |e| e.to_string()),
        env.rollouts()
    );
    println!("run directory {}", dir.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = load_config(&a.scenario)?;
    train_run(&cfg, &a.out, a.independent)
}

fn load_policy(cfg: &ExperimentConfig, path: &Path) -> Result<(ScenarioGraph, safegen::PolicyParams), Failure> {
    let graph = cfg.graph()?;
    let dim = cfg.encoding.dim();
    match io::load_checkpoint(path, &graph, dim) {
        Ok(p) => Ok((graph, p)),
        Err(e) => {
            let free = graph.without_parents();
            io::load_checkpoint(path, &free, dim)
                .map(|p| (free, p))
                .map_err(|_| Failure {
                    code: if e.is_config() { EXIT_CONFIG } else { EXIT_RUNTIME },
                    error: anyhow!(e).context(format!("loading checkpoint {}", path.display())),
                })
        }
    }
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    if a.episodes == 0 {
        return Err(config_error("--episodes must be at least 1"));
    }
    let cfg = load_config(&a.scenario)?;
    let (graph, params) = load_policy(&cfg, &a.checkpoint)?;
    let state = state_for(&cfg, &a.state)?;
    let env = cfg.environment();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut results = Vec::with_capacity(a.episodes);
    for _ in 0..a.episodes {
        let s = policy::sample(&params, &state, &graph, &mut rng)?;
        let outcome = env.evaluate(&s.spec, &state, &graph)?;
        results.push(Scored { spec: s.spec, outcome });
    }
    baselines::rank(&mut results);
    io::write_ranked(&a.out, &graph, &results)?;
    report(&results);
    if let Some(t) = &a.trace {
        let (trace, _) = Trace::record(&graph, &results[0].spec, &state, &env.sim, &env.reward)?;
        trace.save(t)?;
    }
    Ok(())
}

fn report(results: &[Scored]) {
    let n = results.len() as f64;
    let coll = results.iter().filter(|r| r.outcome.collision).count();
    let occ = results.iter().filter(|r| r.outcome.route_occupied).count();
    let mean = results.iter().map(|r| r.outcome.reward).sum::<f64>() / n;
    println!("scenarios {}  collision rate {:.4}  occupied rate {:.4}  mean reward {:.4}", results.len(), coll as f64 / n, occ as f64 / n, mean);
}

fn cmd_baseline(a: BaselineArgs) -> CmdResult {
    let cfg = load_config(&a.scenario)?;
    let method: Method = a.method.parse().map_err(|e: safegen::Error| config_error(e.to_string()))?;
    let graph = cfg.graph()?;
    let env = cfg.environment();
    let out = a.out.clone();
    let ranked_out = || out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.csv", method.name())));
    let results = match method {
        Method::Autoregressive => return Err(config_error("use `train` for the autoregressive policy")),
        Method::Independent => return train_run(&cfg, &a.out.unwrap_or_else(|| PathBuf::from("runs")), true),
        Method::Grid => {
            let state = state_for(&cfg, &a.state)?;
            baselines::grid_search(&graph, &state, &cfg.grid(&graph), &env)?
        }
        Method::Random => {
            let state = state_for(&cfg, &a.state)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let mut r = baselines::random_sampling(&graph, &state, a.count.unwrap_or(cfg.baseline.random_count), &mut rng, &env)?;
            baselines::rank(&mut r);
            r
        }
        Method::HumanDesign => {
            let state = state_for(&cfg, &a.state)?;
            let name = cfg.scenario.name.clone().unwrap_or_default();
            let spec = baselines::human_design(&graph, &name)?;
            let outcome = env.evaluate(&spec, &state, &graph)?;
            vec![Scored { spec, outcome }]
        }
    };
    io::write_ranked(ranked_out(), &graph, &results)?;
    println!("{} rollouts written to {}", env.rollouts(), ranked_out().display());
    report(&results);
    Ok(())
}

fn cmd_heatmap(a: HeatmapArgs) -> CmdResult {
    let cfg = load_config(&a.scenario)?;
    let (graph, params) = load_policy(&cfg, &a.checkpoint)?;
    let state = state_for(&cfg, &a.state)?;
    let (svg, csv, total) = match &a.y_block {
        None => {
            let h = heatmap::policy_heatmap(&params, &state.encoded, &graph, &a.block, a.bins.unwrap_or(DEFAULT_BINS_1D), &a.given)?;
            println!("{}: mode {:.3}  (raw mu {:.4}, sigma {:.4})", a.block, h.mode(), h.mu, h.sigma);
            (h.to_svg(), h.to_csv(), h.total())
        }
        Some(y) => {
            let h = heatmap::joint_heatmap(&params, &state.encoded, &graph, &a.block, y, a.bins.unwrap_or(DEFAULT_BINS_2D), &a.given)?;
            let (mx, my) = h.mode();
            println!("{}, {}: mode ({mx:.3}, {my:.3})", a.block, y);
            (h.to_svg(), h.to_csv(), h.total())
        }
    };
    let svg_path = a.out.with_extension("svg");
    let csv_path = a.out.with_extension("csv");
    fs::write(&svg_path, svg)?;
    fs::write(&csv_path, csv)?;
    println!("cell sum {total:.12}; wrote {} and {}", svg_path.display(), csv_path.display());
    Ok(())
}

fn cmd_replay(a: ReplayArgs) -> CmdResult {
    let trace = Trace::load(&a.trace).with_context(|| format!("reading trace {}", a.trace.display()))?;
    let h = &trace.header;
    println!(
        "route {}  speed {} km/h  values {:?}",
        h.route.name(),
        h.target_speed_kmh,
        h.physical_values
    );
    println!(
        "steps {}  collision {}  occupied {}  min separation {:.3}  reward {:.3}",
        trace.steps.len().saturating_sub(1),
        h.collision,
        h.route_occupied,
        h.min_separation,
        h.reward_value
    );
    if let Some(s) = trace.steps.iter().find(|s| s.obstacle_active) {
        println!("obstacle activated at step {}", s.step);
    }
    let again = trace.resimulate()?;
    if again.trace != trace.steps || again.collision != h.collision {
        return Err(Failure { code: EXIT_RUNTIME, error: anyhow!("re-simulation differs from the recorded trace") });
    }
    println!("re-simulation matches the recorded trace");
    if let Some(p) = &a.svg {
        fs::write(p, trace.to_svg())?;
    }
    Ok(())
}

fn cmd_compare(a: CompareArgs) -> CmdResult {
    let cfg = load_config(&a.scenario)?;
    let graph = cfg.graph()?;
    let methods = if a.methods.is_empty() {
        Method::ALL.to_vec()
    } else {
        a.methods
            .iter()
            .map(|m| m.parse::<Method>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| config_error(e.to_string()))?
    };
    let repetitions = a.repetitions.unwrap_or(cfg.experiment.repetitions);
    if repetitions == 0 {
        return Err(config_error("--repetitions must be at least 1"));
    }
    let cc = CompareConfig {
        methods,
        repetitions,
        grid: cfg.grid(&graph),
        fallback_window: cfg.experiment.fallback_window,
        preset: cfg.scenario.name.clone().unwrap_or_default(),
    };
    let env = cfg.environment();
    let (runs, summaries) = experiment::compare(&graph, &cfg.train, &cfg.sampler()?, &env, &cc, |r| {
        eprintln!("{:<15} rep {:>3}  collision {:.3}", r.method.name(), r.repetition, r.collision_rate);
    })?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record(["method", "repetition", "seed", "collision_rate", "iterations", "rollouts"])?;
    for r in &runs {
        w.write_record([
            r.method.name().to_string(),
            r.repetition.to_string(),
            r.seed.to_string(),
            r.collision_rate.to_string(),
            r.iterations.map_or(String::new(), |v| v.to_string()),
            r.rollouts.to_string(),
        ])?;
    }
    w.flush()?;
    println!("{:<15} {:>6} {:>16} {:>20}", "method", "runs", "collision", "iterations");
    for s in &summaries {
        let it = match (s.iterations_mean, s.iterations_sd) {
            (Some(m), Some(sd)) => format!("{m:.1} ± {sd:.1} ({}/{})", s.stable_runs, s.runs),
            _ => "-".to_string(),
        };
        println!("{:<15} {:>6} {:>7.3} ± {:<6.3} {:>20}", s.method.name(), s.runs, s.collision_mean, s.collision_sd, it);
    }
    Ok(())
}

fn cmd_presets() -> CmdResult {
    for p in Preset::ALL {
        let g = ScenarioGraph::preset(p);
        let blocks: Vec<String> = g
            .blocks
            .iter()
            .map(|b| {
                if b.parents.is_empty() {
                    format!("{}[{}, {}]", b.name, b.lower(), b.upper())
                } else {
                    format!("{}[{}, {}] | {}", b.name, b.lower(), b.upper(), b.parents.join(","))
                }
            })
            .collect();
        println!("{:<18} {}", p.name(), p.description());
        println!("{:<18} {}", "", blocks.join("  "));
    }
    Ok(())
}
