//! Experiment configuration read from a sectioned TOML file.
//!
//! Every field is optional; anything left out takes the benchmark default
//! from the core crate.

use std::path::{Path, PathBuf};

use pdectrl_core::dataset::GenerationConfig;
use pdectrl_core::deeponet::{DeepONetConfig, PretrainConfig};
use pdectrl_core::env::{BenchmarkKind, EnvConfig, RewardMode};
use pdectrl_core::numerics::Grid;
use pdectrl_core::sac::{SacConfig, Variant};
use pdectrl_core::{Error, Result};
use serde::Deserialize;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub deeponet: DeepONetSection,
    #[serde(default)]
    pub sac: SacSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub n_points: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
    pub steps_per_action: Option<usize>,
    pub gamma: Option<f64>,
    pub action_bound: Option<f64>,
    pub blowup_limit: Option<f64>,
    pub u0_range: Option<(f64, f64)>,
    pub reward_sigma: Option<f64>,
    pub reward_eta: Option<f64>,
    pub reward_zeta: Option<f64>,
    pub reward_mode: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub n_coeffs: Option<usize>,
    pub n_inits: Option<usize>,
    pub record_every: Option<usize>,
    pub gamma_range: Option<(f64, f64)>,
    pub train_fraction: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeepONetSection {
    pub latent_dim: Option<usize>,
    pub branch_hidden: Option<Vec<usize>>,
    pub trunk_hidden: Option<Vec<usize>>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SacSection {
    pub variant: Option<String>,
    pub discount: Option<f64>,
    pub alpha: Option<f64>,
    pub tau: Option<f64>,
    pub actor_lr: Option<f64>,
    pub critic_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub capacity: Option<usize>,
    pub total_steps: Option<usize>,
    pub warmup: Option<usize>,
    pub gradient_steps: Option<usize>,
    pub actor_hidden: Option<Vec<usize>>,
    pub critic_hidden: Option<Vec<usize>>,
    pub truncation_bootstraps: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Plant coefficients to evaluate on; defaults to the training value.
    pub gamma_eval: Option<Vec<f64>>,
    pub u0: Option<Vec<f64>>,
    /// Rollout length in time units; defaults to the training horizon.
    pub horizon: Option<f64>,
    /// Seeds of the agent checkpoints to evaluate; defaults to the run seed.
    pub agent_seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    /// Directory holding `train.pdds` and `test.pdds`.
    pub dataset_dir: Option<PathBuf>,
    pub deeponet_checkpoint: Option<PathBuf>,
    /// Directory holding agent checkpoints named `<variant>_seed<N>.nncp`.
    pub agent_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| parse_err(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| parse_err(path, e))?;
        // Relative paths in the file are taken relative to the file.
        if let Some(base) = path.parent() {
            let p = &mut cfg.paths;
            for slot in [
                &mut p.dataset_dir,
                &mut p.deeponet_checkpoint,
                &mut p.agent_dir,
                &mut p.out_dir,
            ] {
                if let Some(v) = slot.as_mut() {
                    if v.is_relative() {
                        *v = base.join(&*v);
                    }
                }
            }
        }
        cfg.kind()?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.kind()?;
        Ok(cfg)
    }

    pub fn kind(&self) -> Result<BenchmarkKind> {
        self.benchmark.parse()
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn env_config(&self) -> Result<EnvConfig> {
        let mut c = EnvConfig::defaults(self.kind()?);
        let s = &self.env;
        if let Some(n) = s.n_points {
            c.grid = Grid::new(n)?;
        }
        set(&mut c.dt, s.dt);
        set(&mut c.horizon, s.horizon);
        set(&mut c.steps_per_action, s.steps_per_action);
        set(&mut c.gamma, s.gamma);
        set(&mut c.action_bound, s.action_bound);
        set(&mut c.blowup_limit, s.blowup_limit);
        set(&mut c.u0_range, s.u0_range);
        set(&mut c.reward.sigma, s.reward_sigma);
        set(&mut c.reward.eta, s.reward_eta);
        set(&mut c.reward.zeta, s.reward_zeta);
        if let Some(m) = &s.reward_mode {
            c.reward.mode = m.parse::<RewardMode>()?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Environment used for evaluation rollouts: the training setup with the
    /// optional horizon override and plant coefficient `gamma`.
    pub fn eval_env_config(&self, gamma: f64) -> Result<EnvConfig> {
        let mut c = self.env_config()?;
        set(&mut c.horizon, self.eval.horizon);
        c.gamma = gamma;
        c.validate()?;
        Ok(c)
    }

    pub fn generation_config(&self) -> Result<GenerationConfig> {
        let mut g = GenerationConfig::defaults(self.kind()?);
        g.env = self.env_config()?;
        let s = &self.dataset;
        set(&mut g.n_coeffs, s.n_coeffs);
        set(&mut g.n_inits, s.n_inits);
        set(&mut g.record_every, s.record_every);
        set(&mut g.gamma_range, s.gamma_range);
        g.seed = self.seed();
        g.validate()?;
        Ok(g)
    }

    pub fn train_fraction(&self) -> Result<f64> {
        let f = self.dataset.train_fraction.unwrap_or(0.9);
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Config(format!("train_fraction {f} outside (0, 1)")));
        }
        Ok(f)
    }

    pub fn deeponet_config(&self) -> DeepONetConfig {
        let mut c = DeepONetConfig::default();
        let s = &self.deeponet;
        set(&mut c.latent_dim, s.latent_dim);
        set(&mut c.branch_hidden, s.branch_hidden.clone());
        set(&mut c.trunk_hidden, s.trunk_hidden.clone());
        c
    }

    pub fn pretrain_config(&self) -> Result<PretrainConfig> {
        let mut c = PretrainConfig::default();
        let s = &self.deeponet;
        set(&mut c.epochs, s.epochs);
        set(&mut c.batch_size, s.batch_size);
        set(&mut c.lr, s.lr);
        c.seed = self.seed();
        if c.batch_size == 0 || c.lr.is_nan() || c.lr < 0.0 {
            return Err(Error::Config(
                "deeponet batch_size must be positive and lr non-negative".into(),
            ));
        }
        Ok(c)
    }

    /// `cli` takes precedence over the `[sac] variant` key.
    pub fn variant(&self, cli: Option<&str>) -> Result<Variant> {
        match cli.or(self.sac.variant.as_deref()) {
            Some(v) => v.parse(),
            None => Err(Error::Config(
                "no variant given (use --variant or [sac] variant)".into(),
            )),
        }
    }

    pub fn sac_config(&self, variant: Variant) -> Result<SacConfig> {
        let mut c = SacConfig::default();
        let s = &self.sac;
        set(&mut c.discount, s.discount);
        set(&mut c.alpha, s.alpha);
        set(&mut c.tau, s.tau);
        set(&mut c.actor_lr, s.actor_lr);
        set(&mut c.critic_lr, s.critic_lr);
        set(&mut c.batch_size, s.batch_size);
        set(&mut c.capacity, s.capacity);
        set(&mut c.total_steps, s.total_steps);
        set(&mut c.warmup, s.warmup);
        set(&mut c.gradient_steps, s.gradient_steps);
        set(&mut c.actor_hidden, s.actor_hidden.clone());
        set(&mut c.critic_hidden, s.critic_hidden.clone());
        set(&mut c.truncation_bootstraps, s.truncation_bootstraps);
        c.extractor = variant.extractor();
        c.deeponet = self.deeponet_config();
        c.seed = self.seed();
        c.validate()?;
        Ok(c)
    }

    pub fn gamma_eval(&self) -> Result<Vec<f64>> {
        let train = self.env_config()?.gamma;
        Ok(self.eval.gamma_eval.clone().unwrap_or_else(|| vec![train]))
    }

    pub fn u0_eval(&self) -> Vec<f64> {
        self.eval.u0.clone().unwrap_or_else(|| vec![9.0])
    }

    /// `cli` takes precedence over `[paths] out_dir`; the fallback is `out`.
    pub fn out_dir(&self, cli: Option<&Path>) -> PathBuf {
        cli.map(Path::to_path_buf)
            .or_else(|| self.paths.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}
