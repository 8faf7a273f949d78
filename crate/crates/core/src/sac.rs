//! Soft actor-critic with twin critics, Polyak-averaged targets and a
//! pluggable feature extractor shared in shape by the actor and critics.
//!
//! Observations are rows `[coefficient | state]` of width `2n`. Actions live
//! in `[−Ū, Ū]`; critics see them divided by `Ū`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::deeponet::{DeepONet, DeepONetCache, DeepONetConfig};
use crate::env::{BenchmarkKind, PdeEnv};
use crate::error::{Error, Result};
use crate::nn::{
    squashed_gaussian_sample, Activation, Checkpoint, DenseNet, ForwardCache, Optimizer, OptimizerKind, Parameters,
    SquashedSample,
};
use crate::numerics::{derive_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractorKind {
    Flatten,
    DeepONetRandom,
    DeepONetPretrained,
}

impl ExtractorKind {
    fn code(self) -> u8 {
        match self {
            ExtractorKind::Flatten => 0,
            ExtractorKind::DeepONetRandom => 1,
            ExtractorKind::DeepONetPretrained => 2,
        }
    }
}

impl fmt::Display for ExtractorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractorKind::Flatten => "flatten",
            ExtractorKind::DeepONetRandom => "deeponet_random",
            ExtractorKind::DeepONetPretrained => "deeponet_pretrained",
        })
    }
}

/// The three agents compared in the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Sac,
    Nosac,
    NosacTraining,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Sac, Variant::Nosac, Variant::NosacTraining];

    pub fn extractor(self) -> ExtractorKind {
        match self {
            Variant::Sac => ExtractorKind::Flatten,
            Variant::Nosac => ExtractorKind::DeepONetRandom,
            Variant::NosacTraining => ExtractorKind::DeepONetPretrained,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Sac => "sac",
            Variant::Nosac => "nosac",
            Variant::NosacTraining => "nosac_training",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sac" => Ok(Variant::Sac),
            "nosac" => Ok(Variant::Nosac),
            "nosac_training" => Ok(Variant::NosacTraining),
            other => Err(Error::Config(format!(
                "unknown variant {other:?} (expected sac, nosac or nosac_training)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SacConfig {
    pub discount: f64,
    pub alpha: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub batch_size: usize,
    pub capacity: usize,
    pub total_steps: usize,
    pub warmup: usize,
    pub gradient_steps: usize,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub extractor: ExtractorKind,
    pub deeponet: DeepONetConfig,
    pub truncation_bootstraps: bool,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            discount: 0.99,
            alpha: 0.2,
            tau: 0.005,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            batch_size: 256,
            capacity: 1_000_000,
            total_steps: 100_000,
            warmup: 1000,
            gradient_steps: 1,
            actor_hidden: vec![256, 256],
            critic_hidden: vec![256, 256],
            extractor: ExtractorKind::Flatten,
            deeponet: DeepONetConfig::default(),
            truncation_bootstraps: false,
            seed: 0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.discount) {
            return bad(format!("discount {} outside [0, 1)", self.discount));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau {} outside (0, 1]", self.tau));
        }
        if !(self.alpha >= 0.0) {
            return bad(format!("temperature {} is negative", self.alpha));
        }
        if self.batch_size == 0 || self.capacity < self.batch_size {
            return bad(format!(
                "capacity {} must be at least the batch size {} (> 0)",
                self.capacity, self.batch_size
            ));
        }
        if !(self.actor_lr >= 0.0 && self.critic_lr >= 0.0) {
            return bad("learning rates must be non-negative".into());
        }
        Ok(())
    }

    /// Every setting as `(key, value)` pairs, in a fixed order.
    pub fn key_values(&self) -> Vec<(String, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        [
            ("discount", self.discount.to_string()),
            ("alpha", self.alpha.to_string()),
            ("tau", self.tau.to_string()),
            ("actor_lr", self.actor_lr.to_string()),
            ("critic_lr", self.critic_lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("capacity", self.capacity.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("warmup", self.warmup.to_string()),
            ("gradient_steps", self.gradient_steps.to_string()),
            ("actor_hidden", list(&self.actor_hidden)),
            ("critic_hidden", list(&self.critic_hidden)),
            ("extractor", self.extractor.to_string()),
            ("deeponet_latent", self.deeponet.latent_dim.to_string()),
            ("deeponet_branch_hidden", list(&self.deeponet.branch_hidden)),
            ("deeponet_trunk_hidden", list(&self.deeponet.trunk_hidden)),
            ("truncation_bootstraps", self.truncation_bootstraps.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_owned(), v))
        .collect()
    }
}

/// Maps observation rows to features.
#[derive(Clone, Debug, PartialEq)]
pub enum Extractor {
    /// The raw state samples; the coefficient half is ignored.
    Flatten {
        n_points: usize,
    },
    DeepONet(DeepONet),
}

impl Parameters for Extractor {
    fn for_each_param(&self, f: &mut dyn FnMut(&[f64])) {
        if let Extractor::DeepONet(m) = self {
            m.for_each_param(f);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        if let Extractor::DeepONet(m) = self {
            m.for_each_param_mut(f);
        }
    }
}

impl Extractor {
    pub fn n_points(&self) -> usize {
        match self {
            Extractor::Flatten { n_points } => *n_points,
            Extractor::DeepONet(m) => m.n_points(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Extractor::Flatten { n_points } => *n_points,
            Extractor::DeepONet(m) => m.latent_dim(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Extractor::Flatten { n_points } => Extractor::Flatten { n_points: *n_points },
            Extractor::DeepONet(m) => Extractor::DeepONet(m.zeros_like()),
        }
    }

    fn check(&self, obs: &[f64], batch: usize) -> Result<()> {
        if obs.len() != batch * 2 * self.n_points() {
            return Err(Error::invalid(format!(
                "expected {batch} observations of width {}, got {} values",
                2 * self.n_points(),
                obs.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, obs: &[f64], batch: usize) -> Result<(Vec<f64>, Option<DeepONetCache>)> {
        self.check(obs, batch)?;
        match self {
            Extractor::Flatten { n_points: n } => {
                let feats = obs
                    .chunks_exact(2 * n)
                    .flat_map(|row| row[*n..].iter().copied())
                    .collect();
                Ok((feats, None))
            }
            Extractor::DeepONet(m) => {
                let (f, c) = m.features_batch(obs, batch)?;
                Ok((f, Some(c)))
            }
        }
    }

    pub fn backward(&self, cache: &Option<DeepONetCache>, d_features: &[f64], grads: &mut Extractor) -> Result<()> {
        match (self, cache, grads) {
            (Extractor::Flatten { .. }, _, _) => Ok(()),
            (Extractor::DeepONet(m), Some(c), Extractor::DeepONet(g)) => m.backward_features(c, d_features, g),
            _ => Err(Error::invalid("extractor gradient does not match the extractor")),
        }
    }
}

fn concat_columns(a: &[f64], a_width: usize, b: &[f64], batch: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(batch * (a_width + 1));
    for (row, &v) in a.chunks_exact(a_width).zip(b) {
        out.extend_from_slice(row);
        out.push(v);
    }
    out
}

/// Gaussian policy: extractor, fully connected relu trunk, and a linear head
/// emitting `(μ, log σ)` for the pre-squash action.
#[derive(Clone, Debug, PartialEq)]
pub struct Actor {
    pub extractor: Extractor,
    pub net: DenseNet,
    pub action_bound: f64,
}

#[derive(Clone, Debug)]
pub struct ActorCache {
    extractor: Option<DeepONetCache>,
    net: ForwardCache,
}

impl Parameters for Actor {
    fn for_each_param(&self, f: &mut dyn FnMut(&[f64])) {
        self.extractor.for_each_param(f);
        self.net.for_each_param(f);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.extractor.for_each_param_mut(f);
        self.net.for_each_param_mut(f);
    }
}

impl Actor {
    pub fn new(extractor: Extractor, hidden: &[usize], action_bound: f64, rng: &mut Rng) -> Self {
        let net = DenseNet::mlp(
            extractor.output_dim(),
            hidden,
            2,
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        Actor {
            extractor,
            net,
            action_bound,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Actor {
            extractor: self.extractor.zeros_like(),
            net: self.net.zeros_like(),
            action_bound: self.action_bound,
        }
    }

    /// Rows of `(μ, log σ)`.
    pub fn forward(&self, obs: &[f64], batch: usize) -> Result<(Vec<f64>, ActorCache)> {
        let (feats, extractor) = self.extractor.forward(obs, batch)?;
        let (out, net) = self.net.forward_batch(&feats, batch)?;
        Ok((out, ActorCache { extractor, net }))
    }

    pub fn backward(&self, cache: &ActorCache, d_out: &[f64], grads: &mut Actor) -> Result<()> {
        let d_feats = self.net.backward(&cache.net, d_out, &mut grads.net)?;
        self.extractor
            .backward(&cache.extractor, &d_feats, &mut grads.extractor)
    }

    fn observation(coeff: &[f64], state: &[f64]) -> Vec<f64> {
        let mut obs = Vec::with_capacity(coeff.len() + state.len());
        obs.extend_from_slice(coeff);
        obs.extend_from_slice(state);
        obs
    }

    /// Deterministic action `Ū·tanh(μ)`.
    pub fn mean_action(&self, coeff: &[f64], state: &[f64]) -> Result<f64> {
        let (out, _) = self.forward(&Actor::observation(coeff, state), 1)?;
        Ok(self.action_bound * out[0].tanh())
    }

    /// Stochastic action drawn with the reparameterization noise from `rng`.
    pub fn sample_action(&self, coeff: &[f64], state: &[f64], rng: &mut Rng) -> Result<f64> {
        let (out, _) = self.forward(&Actor::observation(coeff, state), 1)?;
        Ok(squashed_gaussian_sample(out[0], out[1], rng.normal(), self.action_bound).action)
    }
}

/// State-action value: extractor features joined with `a / Ū`, then a relu
/// trunk ending in one linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub extractor: Extractor,
    pub net: DenseNet,
    pub action_bound: f64,
}

#[derive(Clone, Debug)]
pub struct CriticCache {
    extractor: Option<DeepONetCache>,
    net: ForwardCache,
}

impl Parameters for Critic {
    fn for_each_param(&self, f: &mut dyn FnMut(&[f64])) {
        self.extractor.for_each_param(f);
        self.net.for_each_param(f);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.extractor.for_each_param_mut(f);
        self.net.for_each_param_mut(f);
    }
}

impl Critic {
    pub fn new(extractor: Extractor, hidden: &[usize], action_bound: f64, rng: &mut Rng) -> Self {
        let net = DenseNet::mlp(
            extractor.output_dim() + 1,
            hidden,
            1,
            Activation::Relu,
            Activation::Identity,
            rng,
        );
        Critic {
            extractor,
            net,
            action_bound,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Critic {
            extractor: self.extractor.zeros_like(),
            net: self.net.zeros_like(),
            action_bound: self.action_bound,
        }
    }

    fn joined(&self, feats: &[f64], actions: &[f64], batch: usize) -> Vec<f64> {
        let scaled: Vec<f64> = actions.iter().map(|a| a / self.action_bound).collect();
        concat_columns(feats, self.extractor.output_dim(), &scaled, batch)
    }

    pub fn forward(&self, obs: &[f64], actions: &[f64], batch: usize) -> Result<(Vec<f64>, CriticCache)> {
        if actions.len() != batch {
            return Err(Error::invalid("one action per observation expected"));
        }
        let (feats, extractor) = self.extractor.forward(obs, batch)?;
        let (q, net) = self.net.forward_batch(&self.joined(&feats, actions, batch), batch)?;
        Ok((q, CriticCache { extractor, net }))
    }

    pub fn predict(&self, obs: &[f64], actions: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward(obs, actions, batch)?.0)
    }

    pub fn backward(&self, cache: &CriticCache, d_q: &[f64], grads: &mut Critic) -> Result<()> {
        let d_in = self.net.backward(&cache.net, d_q, &mut grads.net)?;
        let p = self.extractor.output_dim();
        let d_feats: Vec<f64> = d_in.chunks_exact(p + 1).flat_map(|r| r[..p].iter().copied()).collect();
        self.extractor
            .backward(&cache.extractor, &d_feats, &mut grads.extractor)
    }

    /// Values and `∂Q/∂a` (in raw action units) with parameters held fixed.
    pub fn action_gradient(&self, obs: &[f64], actions: &[f64], batch: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (q, cache) = self.forward(obs, actions, batch)?;
        let d_in = self.net.input_gradient(&cache.net, &vec![1.0; batch])?;
        let p = self.extractor.output_dim();
        let d_a = d_in.chunks_exact(p + 1).map(|r| r[p] / self.action_bound).collect();
        Ok((q, d_a))
    }
}

/// `θ̄ ← τ·θ + (1 − τ)·θ̄`, elementwise.
pub fn polyak_update<P: Parameters>(target: &mut P, source: &P, tau: f64) {
    let src = crate::nn::flatten(source);
    let mut i = 0;
    target.for_each_param_mut(&mut |s| {
        for t in s {
            *t = tau * src[i] + (1.0 - tau) * *t;
            i += 1;
        }
    });
    assert_eq!(i, src.len(), "target and source shapes differ");
}

/// Soft Bellman target for one transition.
pub fn soft_target(reward: f64, done: bool, discount: f64, q1: f64, q2: f64, alpha: f64, log_prob: f64) -> f64 {
    if done {
        reward
    } else {
        reward + discount * (q1.min(q2) - alpha * log_prob)
    }
}

/// One replay record. The coefficient is shared between all transitions of
/// an environment.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub coeff: Arc<Vec<f64>>,
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Row-major sampled minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub obs: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Batch {
        let mut b = Batch {
            size: 0,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
        };
        for t in items {
            b.size += 1;
            b.obs.extend_from_slice(&t.coeff);
            b.obs.extend_from_slice(&t.state);
            b.next_obs.extend_from_slice(&t.coeff);
            b.next_obs.extend_from_slice(&t.next_state);
            b.actions.push(t.action);
            b.rewards.push(t.reward);
            b.dones.push(t.done);
        }
        b
    }
}

/// FIFO ring of transitions with uniform sampling with replacement.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    min_size: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    /// Sampling is refused until at least `min_size` (≥ 1) items are stored.
    pub fn new(capacity: usize, min_size: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            min_size: min_size.max(1),
            items: Vec::new(),
            next: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_ready(&self) -> bool {
        self.items.len() >= self.min_size
    }

    /// Items from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.next % self.items.len().max(1));
        older.iter().chain(newer)
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn sample_indices(&self, batch: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if !self.is_ready() {
            return Err(Error::NotReady {
                len: self.items.len(),
                needed: self.min_size,
            });
        }
        Ok((0..batch).map(|_| rng.index(self.items.len())).collect())
    }

    pub fn sample(&self, batch: usize, rng: &mut Rng) -> Result<Batch> {
        let idx = self.sample_indices(batch, rng)?;
        Ok(Batch::from_transitions(idx.iter().map(|&i| &self.items[i])))
    }
}

/// Mean squared Bellman error of `critic` and its parameter gradient.
pub fn critic_loss_and_grad(critic: &Critic, batch: &Batch, targets: &[f64]) -> Result<(f64, Critic)> {
    let (q, cache) = critic.forward(&batch.obs, &batch.actions, batch.size)?;
    let n = batch.size as f64;
    let mut loss = 0.0;
    let mut d_q = Vec::with_capacity(batch.size);
    for (qi, yi) in q.iter().zip(targets) {
        let e = qi - yi;
        loss += e * e / n;
        d_q.push(2.0 * e / n);
    }
    let mut grads = critic.zeros_like();
    critic.backward(&cache, &d_q, &mut grads)?;
    Ok((loss, grads))
}

/// Policy objective `mean(α·log π(ã|s) − min_i Q_i(s, ã))` for the given
/// reparameterization noise, and its gradient with the critics frozen.
pub fn actor_loss_and_grad(
    actor: &Actor,
    critics: [&Critic; 2],
    obs: &[f64],
    noise: &[f64],
    alpha: f64,
) -> Result<(f64, Actor)> {
    let batch = noise.len();
    let (out, cache) = actor.forward(obs, batch)?;
    let samples: Vec<SquashedSample> = (0..batch)
        .map(|b| squashed_gaussian_sample(out[2 * b], out[2 * b + 1], noise[b], actor.action_bound))
        .collect();
    let actions: Vec<f64> = samples.iter().map(|s| s.action).collect();
    let (q1, g1) = critics[0].action_gradient(obs, &actions, batch)?;
    let (q2, g2) = critics[1].action_gradient(obs, &actions, batch)?;
    let n = batch as f64;
    let mut loss = 0.0;
    let mut d_out = vec![0.0; 2 * batch];
    for b in 0..batch {
        let (q, dq) = if q1[b] <= q2[b] { (q1[b], g1[b]) } else { (q2[b], g2[b]) };
        loss += (alpha * samples[b].log_prob - q) / n;
        let (dm, dls) = samples[b].backprop(alpha / n, -dq / n);
        d_out[2 * b] = dm;
        d_out[2 * b + 1] = dls;
    }
    let mut grads = actor.zeros_like();
    actor.backward(&cache, &d_out, &mut grads)?;
    Ok((loss, grads))
}

/// Actor, twin critics, their targets, and the optimizers that move them.
#[derive(Clone, Debug)]
pub struct Agent {
    pub config: SacConfig,
    pub actor: Actor,
    pub critics: [Critic; 2],
    pub targets: [Critic; 2],
    actor_opt: Optimizer,
    critic_opts: [Optimizer; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
}

impl Agent {
    /// Builds fresh networks. The pretrained extractor is required for
    /// [`ExtractorKind::DeepONetPretrained`] and copied into the actor and
    /// both critics.
    pub fn new(
        config: SacConfig,
        kind: BenchmarkKind,
        n_points: usize,
        action_bound: f64,
        pretrained: Option<&DeepONet>,
    ) -> Result<Self> {
        config.validate()?;
        if !(action_bound > 0.0) {
            return Err(Error::Config(format!("action bound {action_bound} must be positive")));
        }
        let mut rng = Rng::new(derive_seed(config.seed, 3));
        let extractor = |rng: &mut Rng| -> Result<Extractor> {
            match config.extractor {
                ExtractorKind::Flatten => Ok(Extractor::Flatten { n_points }),
                ExtractorKind::DeepONetRandom => Ok(Extractor::DeepONet(DeepONet::new(
                    n_points,
                    kind,
                    &config.deeponet,
                    rng,
                )?)),
                ExtractorKind::DeepONetPretrained => {
                    let m = pretrained.ok_or_else(|| {
                        Error::Config("pretrained extractor requested but no checkpoint given".into())
                    })?;
                    if m.n_points() != n_points {
                        return Err(Error::Config(format!(
                            "pretrained model expects {} grid points, environment has {n_points}",
                            m.n_points()
                        )));
                    }
                    Ok(Extractor::DeepONet(m.clone()))
                }
            }
        };
        let actor = Actor::new(extractor(&mut rng)?, &config.actor_hidden, action_bound, &mut rng);
        let c1 = Critic::new(extractor(&mut rng)?, &config.critic_hidden, action_bound, &mut rng);
        let c2 = Critic::new(extractor(&mut rng)?, &config.critic_hidden, action_bound, &mut rng);
        Ok(Agent {
            actor_opt: Optimizer::new(OptimizerKind::Adam, config.actor_lr),
            critic_opts: [
                Optimizer::new(OptimizerKind::Adam, config.critic_lr),
                Optimizer::new(OptimizerKind::Adam, config.critic_lr),
            ],
            targets: [c1.clone(), c2.clone()],
            critics: [c1, c2],
            actor,
            config,
        })
    }

    pub fn action_bound(&self) -> f64 {
        self.actor.action_bound
    }

    /// Bellman targets with `â' ~ π(·|s')` drawn from `rng`.
    pub fn compute_targets(&self, batch: &Batch, rng: &mut Rng) -> Result<Vec<f64>> {
        let (out, _) = self.actor.forward(&batch.next_obs, batch.size)?;
        let samples: Vec<SquashedSample> = (0..batch.size)
            .map(|b| squashed_gaussian_sample(out[2 * b], out[2 * b + 1], rng.normal(), self.action_bound()))
            .collect();
        let next_actions: Vec<f64> = samples.iter().map(|s| s.action).collect();
        let q1 = self.targets[0].predict(&batch.next_obs, &next_actions, batch.size)?;
        let q2 = self.targets[1].predict(&batch.next_obs, &next_actions, batch.size)?;
        Ok((0..batch.size)
            .map(|b| {
                soft_target(
                    batch.rewards[b],
                    batch.dones[b],
                    self.config.discount,
                    q1[b],
                    q2[b],
                    self.config.alpha,
                    samples[b].log_prob,
                )
            })
            .collect())
    }

    /// One Adam step per critic towards `targets`; returns both losses.
    pub fn critic_update(&mut self, batch: &Batch, targets: &[f64]) -> Result<(f64, f64)> {
        let mut losses = [0.0; 2];
        let pairs = self.critics.iter_mut().zip(&mut self.critic_opts);
        for (i, ((critic, opt), slot)) in pairs.zip(&mut losses).enumerate() {
            let (loss, grads) = critic_loss_and_grad(critic, batch, targets)?;
            if !loss.is_finite() {
                return Err(Error::numerical(format!("critic {} loss is not finite", i + 1)));
            }
            opt.step(critic, &grads);
            *slot = loss;
        }
        Ok((losses[0], losses[1]))
    }

    /// One Adam step on the policy against the current critics.
    pub fn actor_update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<f64> {
        let noise: Vec<f64> = (0..batch.size).map(|_| rng.normal()).collect();
        let (loss, grads) = actor_loss_and_grad(
            &self.actor,
            [&self.critics[0], &self.critics[1]],
            &batch.obs,
            &noise,
            self.config.alpha,
        )?;
        if !loss.is_finite() {
            return Err(Error::numerical("actor loss is not finite"));
        }
        self.actor_opt.step(&mut self.actor, &grads);
        Ok(loss)
    }

    pub fn polyak_update(&mut self) {
        for i in 0..2 {
            polyak_update(&mut self.targets[i], &self.critics[i], self.config.tau);
        }
    }

    /// Target, critic, Polyak and actor steps on one sampled batch.
    pub fn update(&mut self, batch: &Batch, rng: &mut Rng) -> Result<UpdateStats> {
        let y = self.compute_targets(batch, rng)?;
        let (critic1_loss, critic2_loss) = self.critic_update(batch, &y)?;
        self.polyak_update();
        let actor_loss = self.actor_update(batch, rng)?;
        Ok(UpdateStats {
            critic1_loss,
            critic2_loss,
            actor_loss,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let n = self.actor.extractor.n_points() as f64;
        ck.push(
            "meta",
            DenseNet::constant(&[self.action_bound(), f64::from(self.config.extractor.code()), n]),
        );
        let mut add = |prefix: &str, ext: &Extractor, net: &DenseNet| {
            ck.push(format!("{prefix}.net"), net.clone());
            if let Extractor::DeepONet(m) = ext {
                let sub = m.to_checkpoint();
                for name in DEEPONET_ENTRIES {
                    ck.push(
                        format!("{prefix}.{name}"),
                        sub.get(name).expect("deeponet checkpoint entry").clone(),
                    );
                }
            }
        };
        add("actor", &self.actor.extractor, &self.actor.net);
        for (i, c) in self.critics.iter().enumerate() {
            add(&format!("critic{}", i + 1), &c.extractor, &c.net);
        }
        for (i, c) in self.targets.iter().enumerate() {
            add(&format!("target{}", i + 1), &c.extractor, &c.net);
        }
        ck
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }
}

const DEEPONET_ENTRIES: [&str; 4] = ["branch", "trunk", "output_bias", "input_scales"];

/// Loads only the policy from an agent checkpoint.
pub fn load_actor(path: impl AsRef<Path>) -> Result<Actor> {
    let ck = Checkpoint::load(path)?;
    let meta = match ck.get("meta")?.layers() {
        [l] if l.n_in == 0 && l.n_out == 3 => l.bias.clone(),
        _ => return Err(Error::CheckpointFormat("malformed agent metadata".into())),
    };
    let (bound, code, n) = (meta[0], meta[1], meta[2] as usize);
    let extractor = if code == 0.0 {
        Extractor::Flatten { n_points: n }
    } else {
        let mut sub = Checkpoint::new();
        for name in DEEPONET_ENTRIES {
            sub.push(name, ck.get(&format!("actor.{name}"))?.clone());
        }
        Extractor::DeepONet(DeepONet::from_checkpoint(&sub)?)
    };
    let net = ck.get("actor.net")?.clone();
    if net.input_dim() != extractor.output_dim() || net.output_dim() != 2 {
        return Err(Error::CheckpointFormat(
            "actor network shape does not match its extractor".into(),
        ));
    }
    Ok(Actor {
        extractor,
        net,
        action_bound: bound,
    })
}

/// One row of the training log. Losses are `None` before updates begin and
/// the return is `None` except on episode-ending steps.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub episode: usize,
    pub episodic_return: Option<f64>,
    pub losses: Option<UpdateStats>,
    pub buffer_size: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    pub episode_returns: Vec<f64>,
}

impl TrainLog {
    /// CSV with `# key=value` header lines followed by one row per step.
    pub fn write_csv(&self, path: impl AsRef<Path>, header: &[(String, String)]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (k, v) in header {
            writeln!(w, "# {k}={v}")?;
        }
        writeln!(
            w,
            "step,episode,episodic_return,critic1_loss,critic2_loss,actor_loss,buffer_size"
        )?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.10e}")).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.step,
                r.episode,
                opt(r.episodic_return),
                opt(r.losses.map(|l| l.critic1_loss)),
                opt(r.losses.map(|l| l.critic2_loss)),
                opt(r.losses.map(|l| l.actor_loss)),
                r.buffer_size
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `config.total_steps` environment interactions, updating the agent
/// after the warmup. The terminal bonus is folded into the final reward of
/// each episode.
pub fn sac_train(env: &mut PdeEnv, agent: &mut Agent) -> Result<TrainLog> {
    let cfg = agent.config.clone();
    let mut reset_rng = Rng::new(derive_seed(cfg.seed, 0));
    let mut act_rng = Rng::new(derive_seed(cfg.seed, 1));
    let mut replay_rng = Rng::new(derive_seed(cfg.seed, 2));
    let mut update_rng = Rng::new(derive_seed(cfg.seed, 4));
    let mut buffer = ReplayBuffer::new(cfg.capacity, cfg.warmup.max(cfg.batch_size))?;
    let coeff = Arc::new(env.coefficient().samples().to_vec());
    let mut log = TrainLog::default();
    if cfg.total_steps == 0 {
        return Ok(log);
    }
    env.reset(&mut reset_rng)?;
    let mut episode = 0;
    let mut episodic_return = 0.0;
    for step in 0..cfg.total_steps {
        let state = env.state().values.clone();
        let action = agent.actor.sample_action(&coeff, &state, &mut act_rng)?;
        let outcome = env.step(action).map_err(|e| match e {
            Error::EnvironmentFault { reason, .. } => Error::EnvironmentFault { step, reason },
            other => other,
        })?;
        let mut reward = outcome.reward;
        if outcome.done {
            reward += env.terminal_bonus();
        }
        let done = outcome.done && !(outcome.truncated && cfg.truncation_bootstraps);
        buffer.push(Transition {
            coeff: Arc::clone(&coeff),
            state,
            action: env.clamp_action(action),
            reward,
            next_state: env.state().values.clone(),
            done,
        });
        episodic_return += reward;
        let mut losses = None;
        if buffer.is_ready() {
            for _ in 0..cfg.gradient_steps {
                let batch = buffer.sample(cfg.batch_size, &mut replay_rng)?;
                losses = Some(agent.update(&batch, &mut update_rng)?);
            }
        }
        let mut row = LogRow {
            step,
            episode,
            episodic_return: None,
            losses,
            buffer_size: buffer.len(),
        };
        if outcome.done {
            row.episodic_return = Some(episodic_return);
            log.episode_returns.push(episodic_return);
            episode += 1;
            episodic_return = 0.0;
            env.reset(&mut reset_rng)?;
        }
        log.rows.push(row);
    }
    Ok(log)
}
