//! Autoregressive conditional Gaussian policy.
//!
//! A shared state encoder `h = tanh(W_s x + b_s)` feeds one head per block.
//! Head `k` sees `[h, a_pa(k)]`, the encoding concatenated with the raw actions
//! already drawn for its parents, and produces
//!
//! ```text
//! z_k = tanh(W_k [h; a_pa(k)] + b_k)
//! mu_k = w_mu . z_k + c_mu
//! sigma_k = max(softplus(w_sig . z_k + c_sig), SIGMA_FLOOR)
//! ```
//!
//! All parameters live in one flat vector so gradients, optimizer state and
//! checkpoints share a layout.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{rescale, BlockKind, ScenarioGraph, ScenarioSpec};
use crate::state::EnvState;

pub const SIGMA_FLOOR: f64 = 1e-3;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Dense {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Dense {
    fn weight(&self, row: usize, col: usize) -> usize {
        self.offset + row * self.cols + col
    }

    fn bias(&self, row: usize) -> usize {
        self.offset + self.rows * self.cols + row
    }

    fn len(&self) -> usize {
        self.rows * (self.cols + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HeadLayout {
    hidden: Dense,
    mu: Dense,
    sigma: Dense,
}

/// Layer sizes; determines the flat parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub state_dim: usize,
    pub state_hidden: usize,
    pub head_hidden: usize,
    /// Number of parent actions each head consumes.
    pub parent_counts: Vec<usize>,
}

impl PolicyShape {
    pub fn for_graph(graph: &ScenarioGraph, state_dim: usize, state_hidden: usize, head_hidden: usize) -> Self {
        PolicyShape {
            state_dim,
            state_hidden,
            head_hidden,
            parent_counts: (0..graph.len()).map(|k| graph.parents(k).len()).collect(),
        }
    }

    pub fn head_input_len(&self, k: usize) -> usize {
        self.state_hidden + self.parent_counts[k]
    }

    fn encoder(&self) -> Dense {
        Dense { offset: 0, rows: self.state_hidden, cols: self.state_dim }
    }

    fn heads(&self) -> Vec<HeadLayout> {
        let mut offset = self.encoder().len();
        let mut out = Vec::with_capacity(self.parent_counts.len());
        for k in 0..self.parent_counts.len() {
            let hidden = Dense { offset, rows: self.head_hidden, cols: self.head_input_len(k) };
            offset += hidden.len();
            let mu = Dense { offset, rows: 1, cols: self.head_hidden };
            offset += mu.len();
            let sigma = Dense { offset, rows: 1, cols: self.head_hidden };
            offset += sigma.len();
            out.push(HeadLayout { hidden, mu, sigma });
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.heads().last().map(|h| h.sigma.offset + h.sigma.len()).unwrap_or(self.encoder().len())
    }
}

/// Flat parameter vector plus the shape that interprets it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct PolicyParams {
    shape: PolicyShape,
    pub seed: u64,
    pub values: Vec<f64>,
    layout_heads: Vec<HeadLayout>,
}

/// On-disk checkpoint layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    seed: u64,
    shape: PolicyShape,
    values: Vec<f64>,
}

impl TryFrom<Checkpoint> for PolicyParams {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        let mut p = PolicyParams::zeros(c.shape);
        if c.values.len() != p.values.len() {
            return Err(Error::config(format!(
                "checkpoint has {} parameters, shape implies {}",
                c.values.len(),
                p.values.len()
            )));
        }
        p.values = c.values;
        p.seed = c.seed;
        p.check_finite()?;
        Ok(p)
    }
}

impl From<PolicyParams> for Checkpoint {
    fn from(p: PolicyParams) -> Self {
        Checkpoint { version: CHECKPOINT_VERSION, seed: p.seed, shape: p.shape, values: p.values }
    }
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Self {
        let layout_heads = shape.heads();
        let n = shape.param_count();
        PolicyParams { shape, seed: 0, values: vec![0.0; n], layout_heads }
    }

    /// Uniform fan-in initialization: every weight and bias of a layer with
    /// `fan_in` inputs is drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(shape: PolicyShape, seed: u64) -> Self {
        let mut p = PolicyParams::zeros(shape);
        p.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = vec![p.shape.encoder()];
        for h in &p.layout_heads {
            layers.extend([h.hidden, h.mu, h.sigma]);
        }
        for layer in layers {
            let bound = 1.0 / (layer.cols as f64).sqrt();
            for v in &mut p.values[layer.offset..layer.offset + layer.len()] {
                *v = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    /// Sets every sigma bias so that a head with zero sigma weights outputs `sigma`.
    pub fn set_initial_sigma(&mut self, sigma: f64) -> Result<()> {
        if !(sigma > SIGMA_FLOOR && sigma.is_finite()) {
            return Err(Error::config(format!("initial sigma {sigma} must be finite and above {SIGMA_FLOOR}")));
        }
        let bias = sigma.exp_m1().ln();
        for k in 0..self.layout_heads.len() {
            let i = self.sigma_bias(k);
            self.values[i] = bias;
        }
        Ok(())
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Checks that this parameter set can drive `graph` with `state_dim` inputs.
    pub fn validate(&self, graph: &ScenarioGraph, state_dim: usize) -> Result<()> {
        if self.shape.state_dim != state_dim {
            return Err(Error::config(format!(
                "policy expects state of length {}, got {state_dim}",
                self.shape.state_dim
            )));
        }
        if self.shape.parent_counts.len() != graph.len() {
            return Err(Error::config(format!(
                "policy has {} heads but graph `{}` has {} blocks",
                self.shape.parent_counts.len(),
                graph.name,
                graph.len()
            )));
        }
        for k in 0..graph.len() {
            if self.shape.parent_counts[k] != graph.parents(k).len() {
                return Err(Error::config(format!(
                    "head for block `{}` takes {} parent inputs, graph lists {}",
                    graph.blocks[k].name,
                    self.shape.parent_counts[k],
                    graph.parents(k).len()
                )));
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::numeric(format!("parameter {i} is not finite"))),
            None => Ok(()),
        }
    }

    /// Offsets of the mu output layer of head `k` (weights then bias).
    pub fn mu_range(&self, k: usize) -> std::ops::Range<usize> {
        let d = self.layout_heads[k].mu;
        d.offset..d.offset + d.len()
    }

    /// Offsets of the sigma pre-activation layer of head `k`.
    pub fn sigma_range(&self, k: usize) -> std::ops::Range<usize> {
        let d = self.layout_heads[k].sigma;
        d.offset..d.offset + d.len()
    }

    /// Offset of the sigma pre-activation bias of head `k`.
    pub fn sigma_bias(&self, k: usize) -> usize {
        self.layout_heads[k].sigma.bias(0)
    }

    /// Offsets of the weights in head `k`'s hidden layer that read parent action `j`.
    pub fn parent_weight_indices(&self, k: usize, j: usize) -> Vec<usize> {
        let d = self.layout_heads[k].hidden;
        let col = self.shape.state_hidden + j;
        (0..d.rows).map(|r| d.weight(r, col)).collect()
    }

    fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let enc = self.shape.encoder();
        let h: Vec<f64> = (0..enc.rows)
            .map(|r| {
                let row = &self.values[enc.weight(r, 0)..enc.weight(r, 0) + enc.cols];
                (dot(row, x) + self.values[enc.bias(r)]).tanh()
            })
            .collect();
        ensure_finite(&h, "state encoder")?;
        Ok(h)
    }

    fn head(&self, k: usize, h: &[f64], parent_actions: &[f64]) -> Result<HeadForward> {
        let layout = &self.layout_heads[k];
        let mut input = Vec::with_capacity(layout.hidden.cols);
        input.extend_from_slice(h);
        input.extend_from_slice(parent_actions);
        let d = layout.hidden;
        let z: Vec<f64> = (0..d.rows)
            .map(|r| {
                let row = &self.values[d.weight(r, 0)..d.weight(r, 0) + d.cols];
                (dot(row, &input) + self.values[d.bias(r)]).tanh()
            })
            .collect();
        ensure_finite(&z, &format!("head {k} hidden layer"))?;
        let mu_w = &self.values[layout.mu.offset..layout.mu.offset + d.rows];
        let mu = dot(mu_w, &z) + self.values[layout.mu.bias(0)];
        let sig_w = &self.values[layout.sigma.offset..layout.sigma.offset + d.rows];
        let pre_sigma = dot(sig_w, &z) + self.values[layout.sigma.bias(0)];
        let soft = softplus(pre_sigma);
        let sigma = soft.max(SIGMA_FLOOR);
        if !(mu.is_finite() && sigma.is_finite()) {
            return Err(Error::numeric(format!("head {k} output layer produced mu={mu}, sigma={sigma}")));
        }
        Ok(HeadForward { input, z, mu, pre_sigma, sigma, floored: soft < SIGMA_FLOOR })
    }

    /// Conditional distribution `(mu_k, sigma_k)` of every block when parents take the
    /// raw values in `actions` (teacher forcing: entry `k` of `actions` conditions
    /// the children of block `k`).
    pub fn conditionals(&self, state: &[f64], graph: &ScenarioGraph, actions: &[f64]) -> Result<Vec<(f64, f64)>> {
        self.validate(graph, state.len())?;
        if actions.len() != graph.len() {
            return Err(Error::config("action vector length differs from block count"));
        }
        let h = self.encode(state)?;
        (0..graph.len())
            .map(|k| {
                let pa = parent_values(graph, k, actions);
                self.head(k, &h, &pa).map(|f| (f.mu, f.sigma))
            })
            .collect()
    }

    /// Conditional `(mu_k, sigma_k)` of block `k` alone.
    pub fn conditional(&self, state: &[f64], graph: &ScenarioGraph, k: usize, actions: &[f64]) -> Result<(f64, f64)> {
        self.validate(graph, state.len())?;
        let h = self.encode(state)?;
        let pa = parent_values(graph, k, actions);
        self.head(k, &h, &pa).map(|f| (f.mu, f.sigma))
    }

    /// Mean raw actions when every block is conditioned on its parents' means.
    pub fn mean_actions(&self, state: &[f64], graph: &ScenarioGraph) -> Result<Vec<f64>> {
        self.validate(graph, state.len())?;
        let h = self.encode(state)?;
        let mut actions = Vec::with_capacity(graph.len());
        for k in 0..graph.len() {
            let pa = parent_values(graph, k, &actions);
            actions.push(self.head(k, &h, &pa)?.mu);
        }
        Ok(actions)
    }
}

struct HeadForward {
    input: Vec<f64>,
    z: Vec<f64>,
    mu: f64,
    pre_sigma: f64,
    sigma: f64,
    floored: bool,
}

/// Per-block draw recorded for gradient replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadDraw {
    pub mu: f64,
    pub sigma: f64,
    pub action: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySample {
    pub spec: ScenarioSpec,
    pub draws: Vec<HeadDraw>,
}

fn parent_values(graph: &ScenarioGraph, k: usize, actions: &[f64]) -> Vec<f64> {
    graph.parents(k).iter().map(|&p| actions[p]).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ensure_finite(v: &[f64], layer: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("non-finite activation in {layer}")))
    }
}

/// Draws one scenario by walking the blocks in topological order with the
/// reparameterized form `a_k = mu_k + sigma_k * eps_k`.
pub fn sample<R: Rng + ?Sized>(
    params: &PolicyParams,
    state: &EnvState,
    graph: &ScenarioGraph,
    rng: &mut R,
) -> Result<PolicySample> {
    params.validate(graph, state.encoded.len())?;
    if let Some(b) = graph.blocks.iter().find(|b| b.kind == BlockKind::Discrete) {
        return Err(Error::config(format!(
            "block `{}` is discrete; only continuous blocks can be sampled",
            b.name
        )));
    }
    let h = params.encode(&state.encoded)?;
    let mut actions = Vec::with_capacity(graph.len());
    let mut draws = Vec::with_capacity(graph.len());
    for k in 0..graph.len() {
        let pa = parent_values(graph, k, &actions);
        let f = params.head(k, &h, &pa)?;
        let noise: f64 = rng.sample(StandardNormal);
        let action = f.mu + f.sigma * noise;
        actions.push(action);
        draws.push(HeadDraw { mu: f.mu, sigma: f.sigma, action, noise });
    }
    let physical = graph.rescale_all(&actions)?;
    let spec = ScenarioSpec {
        raw_actions: actions,
        physical_values: physical,
        log_prob: log_prob(&draws)?,
        entropy: entropy(&draws)?,
    };
    Ok(PolicySample { spec, draws })
}

/// Joint log-density by the chain rule: the sum of conditional Gaussian log-densities.
pub fn log_prob(draws: &[HeadDraw]) -> Result<f64> {
    let mut total = 0.0;
    for d in draws {
        if !(d.sigma > 0.0) {
            return Err(Error::numeric(format!("sigma must be positive, got {}", d.sigma)));
        }
        let z = (d.action - d.mu) / d.sigma;
        total += -HALF_LN_2PI - d.sigma.ln() - 0.5 * z * z;
    }
    Ok(total)
}

/// Joint differential entropy of the realized conditional chain.
pub fn entropy(draws: &[HeadDraw]) -> Result<f64> {
    let mut total = 0.0;
    for d in draws {
        if !(d.sigma > 0.0) {
            return Err(Error::numeric(format!("sigma must be positive, got {}", d.sigma)));
        }
        total += 0.5 + HALF_LN_2PI + d.sigma.ln();
    }
    Ok(total)
}

/// Backpropagates per-head sensitivities `d/d mu_k`, `d/d sigma_k` to the flat
/// parameter vector. Parent actions are treated as constant inputs.
fn backward(
    params: &PolicyParams,
    state: &[f64],
    graph: &ScenarioGraph,
    actions: &[f64],
    sens: impl Fn(usize, &HeadForward) -> (f64, f64),
) -> Result<Vec<f64>> {
    params.validate(graph, state.len())?;
    if actions.len() != graph.len() {
        return Err(Error::config("action vector length differs from block count"));
    }
    let mut grad = vec![0.0; params.len()];
    let h = params.encode(state)?;
    let mut dh = vec![0.0; h.len()];
    for k in 0..graph.len() {
        let pa = parent_values(graph, k, actions);
        let f = params.head(k, &h, &pa)?;
        let layout = &params.layout_heads[k];
        let (dmu, dsigma) = sens(k, &f);
        let dpre_sigma = if f.floored { 0.0 } else { dsigma * sigmoid(f.pre_sigma) };

        let ha = layout.hidden.rows;
        for (i, zi) in f.z.iter().enumerate() {
            grad[layout.mu.weight(0, i)] += dmu * zi;
            grad[layout.sigma.weight(0, i)] += dpre_sigma * zi;
        }
        grad[layout.mu.bias(0)] += dmu;
        grad[layout.sigma.bias(0)] += dpre_sigma;

        let d = layout.hidden;
        for r in 0..ha {
            let dz = dmu * params.values[layout.mu.weight(0, r)] + dpre_sigma * params.values[layout.sigma.weight(0, r)];
            let dpre = dz * (1.0 - f.z[r] * f.z[r]);
            if dpre == 0.0 {
                continue;
            }
            for (c, x) in f.input.iter().enumerate() {
                grad[d.weight(r, c)] += dpre * x;
            }
            grad[d.bias(r)] += dpre;
            for (c, dhc) in dh.iter_mut().enumerate() {
                *dhc += dpre * params.values[d.weight(r, c)];
            }
        }
        if grad[layout.hidden.offset..layout.sigma.offset + layout.sigma.len()]
            .iter()
            .any(|g| !g.is_finite())
        {
            return Err(Error::numeric(format!("non-finite gradient in head {k}")));
        }
    }
    let enc = params.shape.encoder();
    for (r, hr) in h.iter().enumerate() {
        let dpre = dh[r] * (1.0 - hr * hr);
        for (c, x) in state.iter().enumerate() {
            grad[enc.weight(r, c)] += dpre * x;
        }
        grad[enc.bias(r)] += dpre;
    }
    if grad[..enc.len()].iter().any(|g| !g.is_finite()) {
        return Err(Error::numeric("non-finite gradient in state encoder"));
    }
    Ok(grad)
}

/// Score-function gradient `d log pi(a | s) / d params` for a recorded sample.
pub fn grad_log_prob(
    params: &PolicyParams,
    sample: &PolicySample,
    state: &EnvState,
    graph: &ScenarioGraph,
) -> Result<Vec<f64>> {
    let actions = &sample.spec.raw_actions;
    backward(params, &state.encoded, graph, actions, |k, f| {
        let diff = actions[k] - f.mu;
        let s2 = f.sigma * f.sigma;
        (diff / s2, -1.0 / f.sigma + diff * diff / (s2 * f.sigma))
    })
}

/// Gradient of the realized chain's entropy `sum_k 0.5 ln(2 pi e sigma_k^2)`.
pub fn grad_entropy(
    params: &PolicyParams,
    state: &EnvState,
    graph: &ScenarioGraph,
    sample: &PolicySample,
) -> Result<Vec<f64>> {
    backward(params, &state.encoded, graph, &sample.spec.raw_actions, |_, f| (0.0, 1.0 / f.sigma))
}

/// Log-probability of recorded raw actions under `params` (used to replay samples).
pub fn log_prob_of_actions(params: &PolicyParams, state: &[f64], graph: &ScenarioGraph, actions: &[f64]) -> Result<f64> {
    let cond = params.conditionals(state, graph, actions)?;
    let draws: Vec<HeadDraw> = cond
        .iter()
        .zip(actions)
        .map(|(&(mu, sigma), &a)| HeadDraw { mu, sigma, action: a, noise: (a - mu) / sigma })
        .collect();
    log_prob(&draws)
}

/// Entropy of the conditional chain realized at `actions`.
pub fn entropy_of_actions(params: &PolicyParams, state: &[f64], graph: &ScenarioGraph, actions: &[f64]) -> Result<f64> {
    let cond = params.conditionals(state, graph, actions)?;
    let draws: Vec<HeadDraw> =
        cond.iter().zip(actions).map(|(&(mu, sigma), &a)| HeadDraw { mu, sigma, action: a, noise: 0.0 }).collect();
    entropy(&draws)
}

/// Replays recorded noise through `params`, reproducing the actions when params are unchanged.
pub fn replay(params: &PolicyParams, state: &EnvState, graph: &ScenarioGraph, noise: &[f64]) -> Result<Vec<f64>> {
    params.validate(graph, state.encoded.len())?;
    let h = params.encode(&state.encoded)?;
    let mut actions = Vec::with_capacity(graph.len());
    for k in 0..graph.len() {
        let pa = parent_values(graph, k, &actions);
        let f = params.head(k, &h, &pa)?;
        actions.push(f.mu + f.sigma * noise[k]);
    }
    Ok(actions)
}

/// Physical value of a raw action for block `k`.
pub fn physical(graph: &ScenarioGraph, k: usize, raw: f64) -> Result<f64> {
    rescale(raw, &graph.blocks[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Preset;
    use crate::route::Route;
    use crate::state::{encode_state, StateEncoding};

    fn setup() -> (ScenarioGraph, EnvState) {
        let g = ScenarioGraph::preset(Preset::CyclistCrossing);
        let s = encode_state(&Route::turn("l", 30.0, 12.0, 90.0, 20.0), 30.0, &StateEncoding::default()).unwrap();
        (g, s)
    }

    #[test]
    fn zero_weights_give_softplus_zero() {
        let (g, s) = setup();
        let p = PolicyParams::zeros(PolicyShape::for_graph(&g, 21, 64, 32));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let smp = sample(&p, &s, &g, &mut rng).unwrap();
        for d in &smp.draws {
            assert_eq!(d.mu, 0.0);
            assert!((d.sigma - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn initial_sigma_with_zero_weights() {
        let (g, s) = setup();
        let mut p = PolicyParams::zeros(PolicyShape::for_graph(&g, 21, 64, 32));
        p.set_initial_sigma(0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for d in sample(&p, &s, &g, &mut rng).unwrap().draws {
            assert!((d.sigma - 0.2).abs() < 1e-12, "{}", d.sigma);
        }
        assert!(p.set_initial_sigma(SIGMA_FLOOR).is_err());
        assert!(p.set_initial_sigma(f64::NAN).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let (g, s) = setup();
        let p = PolicyParams::init(PolicyShape::for_graph(&g, 21, 64, 32), 7);
        let a = sample(&p, &s, &g, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = sample(&p, &s, &g, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn d_head_width() {
        let (g, _) = setup();
        let shape = PolicyShape::for_graph(&g, 21, 64, 32);
        assert_eq!(shape.head_input_len(3), 64 + 3);
        assert_eq!(shape.head_input_len(0), 64);
    }

    #[test]
    fn log_prob_examples() {
        let d = |mu, sigma, action| HeadDraw { mu, sigma, action, noise: 0.0 };
        assert!((log_prob(&[d(0.0, 1.0, 0.0)]).unwrap() + 0.918_938_5).abs() < 1e-7);
        assert!((log_prob(&[d(0.0, 1.0, 0.0), d(0.0, 1.0, 0.0)]).unwrap() + 1.837_877_1).abs() < 1e-7);
        // -0.5 ln(2 pi) - ln 2 - 0.5
        let expected = -0.5 * (2.0 * std::f64::consts::PI).ln() - 2f64.ln() - 0.5;
        assert!((expected + 2.112_085_7).abs() < 1e-7);
        assert!((log_prob(&[d(1.0, 2.0, 3.0)]).unwrap() - expected).abs() < 1e-12);
        assert!(log_prob(&[d(0.0, 0.0, 0.0)]).is_err());
    }

    #[test]
    fn entropy_examples() {
        let d = |sigma| HeadDraw { mu: 0.0, sigma, action: 0.0, noise: 0.0 };
        assert!((entropy(&[d(1.0)]).unwrap() - 1.418_938_5).abs() < 1e-7);
        assert!((entropy(&[d(2.0)]).unwrap() - 2.112_085_7).abs() < 1e-7);
        assert!((entropy(&[d(1.0); 4]).unwrap() - 5.675_754_1).abs() < 1e-7);
        assert!(entropy(&[d(-1.0)]).is_err());
    }

    #[test]
    fn reconstruction_identity() {
        let (g, s) = setup();
        let p = PolicyParams::init(PolicyShape::for_graph(&g, 21, 64, 32), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let smp = sample(&p, &s, &g, &mut rng).unwrap();
            for d in &smp.draws {
                assert_eq!(d.action, d.mu + d.sigma * d.noise);
            }
            let noise: Vec<f64> = smp.draws.iter().map(|d| d.noise).collect();
            let again = replay(&p, &s, &g, &noise).unwrap();
            for (a, b) in again.iter().zip(&smp.spec.raw_actions) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn score_vanishes_on_mu_path_at_mean() {
        let (g, s) = setup();
        let p = PolicyParams::init(PolicyShape::for_graph(&g, 21, 64, 32), 2);
        let actions = p.mean_actions(&s.encoded, &g).unwrap();
        let cond = p.conditionals(&s.encoded, &g, &actions).unwrap();
        let draws = cond
            .iter()
            .zip(&actions)
            .map(|(&(mu, sigma), &a)| HeadDraw { mu, sigma, action: a, noise: 0.0 })
            .collect::<Vec<_>>();
        let smp = PolicySample {
            spec: ScenarioSpec {
                raw_actions: actions.clone(),
                physical_values: g.rescale_all(&actions).unwrap(),
                log_prob: 0.0,
                entropy: 0.0,
            },
            draws,
        };
        let grad = grad_log_prob(&p, &smp, &s, &g).unwrap();
        for k in 0..g.len() {
            for i in p.mu_range(k) {
                assert_eq!(grad[i], 0.0);
            }
        }
    }

    #[test]
    fn discrete_blocks_are_rejected() {
        let (mut g, s) = setup();
        g.blocks[1].kind = BlockKind::Discrete;
        let p = PolicyParams::zeros(PolicyShape::for_graph(&g, 21, 64, 32));
        let err = sample(&p, &s, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(err.to_string().contains("discrete"));
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let (g, s) = setup();
        let other = ScenarioGraph::preset(Preset::RedLightRunner);
        let p = PolicyParams::zeros(PolicyShape::for_graph(&other, 21, 64, 32));
        assert!(sample(&p, &s, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err().is_config());
        let p = PolicyParams::zeros(PolicyShape::for_graph(&g, 19, 64, 32));
        assert!(sample(&p, &s, &g, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err().is_config());
    }

    #[test]
    fn checkpoint_round_trip_and_validation() {
        let (g, _) = setup();
        let p = PolicyParams::init(PolicyShape::for_graph(&g, 21, 8, 4), 9);
        let text = serde_json::to_string(&p).unwrap();
        let back: PolicyParams = serde_json::from_str(&text).unwrap();
        assert_eq!(p, back);
        let bad = text.replace("\"version\":1", "\"version\":99");
        assert!(serde_json::from_str::<PolicyParams>(&bad).is_err());
        let other = ScenarioGraph::preset(Preset::RedLightRunner);
        assert!(back.validate(&other, 21).is_err());
    }
}
