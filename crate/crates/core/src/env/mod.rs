//! Discrete-time control environments around the two PDE benchmarks.
//!
//! One interaction step holds the boundary action for `steps_per_action`
//! solver steps. The per-step reward is `−‖s_{t+1} − s_t‖` and a terminal
//! bonus rewards episodes that end near the origin.

mod coefficient;
mod solver;

pub use coefficient::{sample_coefficient, BenchmarkKind, CoefficientFn};
pub use solver::{hyperbolic_solver_step, l2_distance, l2_norm, parabolic_solver_step, ParabolicOperator, StateField};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{Grid, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RewardMode {
    /// `−‖s_{t+1} − s_t‖`
    Difference,
    /// `−‖s_{t+1}‖`
    StateNorm,
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "difference" => Ok(RewardMode::Difference),
            "state_norm" => Ok(RewardMode::StateNorm),
            other => Err(Error::Config(format!("unknown reward mode {other:?}"))),
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardMode::Difference => "difference",
            RewardMode::StateNorm => "state_norm",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardConfig {
    /// Bonus ceiling σ.
    pub sigma: f64,
    /// Effort divisor η in the bonus.
    pub eta: f64,
    /// Final-norm threshold ζ for the bonus.
    pub zeta: f64,
    pub mode: RewardMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            sigma: 10.0,
            eta: 100.0,
            zeta: 0.2,
            mode: RewardMode::Difference,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub kind: BenchmarkKind,
    pub grid: Grid,
    pub dt: f64,
    pub horizon: f64,
    pub steps_per_action: usize,
    /// Actions are clamped to `[−action_bound, action_bound]`.
    pub action_bound: f64,
    /// Episodes end early once `‖s‖` exceeds this.
    pub blowup_limit: f64,
    pub reward: RewardConfig,
    /// Chebyshev parameter of the plant coefficient.
    pub gamma: f64,
    pub u0_range: (f64, f64),
}

impl EnvConfig {
    /// Defaults for each benchmark. The action bounds are 1.5× the largest
    /// backstepping control seen over the default imitation dataset, rounded up.
    pub fn defaults(kind: BenchmarkKind) -> Self {
        let (horizon, steps_per_action, gamma, action_bound) = match kind {
            BenchmarkKind::Hyperbolic => (5.0, 50, 5.5, HYPERBOLIC_ACTION_BOUND),
            BenchmarkKind::Parabolic => (1.0, 10, 9.0, PARABOLIC_ACTION_BOUND),
        };
        EnvConfig {
            kind,
            grid: Grid::default(),
            dt: 1e-3,
            horizon,
            steps_per_action,
            action_bound,
            blowup_limit: 100.0,
            reward: RewardConfig::default(),
            gamma,
            u0_range: (1.0, 10.0),
        }
    }

    pub fn solver_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn interaction_steps(&self) -> usize {
        self.solver_steps() / self.steps_per_action
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || self.steps_per_action == 0 {
            return bad("dt, horizon and steps_per_action must be positive".into());
        }
        let steps = self.horizon / (self.dt * self.steps_per_action as f64);
        if (steps - steps.round()).abs() > 1e-6 || steps.round() < 1.0 {
            return bad(format!(
                "horizon {} is not a whole number of {}-step actions at dt {}",
                self.horizon, self.steps_per_action, self.dt
            ));
        }
        if !(self.action_bound > 0.0) {
            return bad(format!("action bound must be positive, got {}", self.action_bound));
        }
        if !(self.reward.zeta > 0.0) || !(self.reward.eta > 0.0) {
            return bad("reward ζ and η must be positive".into());
        }
        if !(self.blowup_limit > 0.0) {
            return bad("blow-up limit must be positive".into());
        }
        if !(self.u0_range.0 < self.u0_range.1) {
            return bad(format!("empty initial-state range {:?}", self.u0_range));
        }
        if self.kind == BenchmarkKind::Hyperbolic && self.dt > self.grid.dx() {
            return bad(format!("CFL violated: dt {} > dx {}", self.dt, self.grid.dx()));
        }
        Ok(())
    }
}

pub const HYPERBOLIC_ACTION_BOUND: f64 = 36.0;
pub const PARABOLIC_ACTION_BOUND: f64 = 164.0;

/// Running totals for the episode in progress.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodeRecord {
    pub action_abs_sum: f64,
    pub final_state_norm: f64,
    pub step_count: usize,
}

/// Bonus paid once at the end of an episode: zero unless the final norm is
/// within `ζ`, otherwise `σ − Σ|a|/η − ‖s_T‖`.
pub fn terminal_bonus(record: &EpisodeRecord, reward: &RewardConfig) -> f64 {
    if record.final_state_norm > reward.zeta {
        0.0
    } else {
        reward.sigma - record.action_abs_sum / reward.eta - record.final_state_norm
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    /// The episode ended because the norm exceeded the blow-up limit.
    pub truncated: bool,
    pub state_norm: f64,
}

/// A benchmark plant with a fixed coefficient.
#[derive(Clone, Debug)]
pub struct PdeEnv {
    config: EnvConfig,
    coeff: CoefficientFn,
    state: StateField,
    record: EpisodeRecord,
    implicit: Option<ParabolicOperator>,
    scratch: Vec<f64>,
}

impl PdeEnv {
    pub fn new(config: EnvConfig, coeff: CoefficientFn) -> Result<Self> {
        config.validate()?;
        let n = config.grid.n_points();
        if coeff.samples().len() != n {
            return Err(Error::invalid(format!(
                "coefficient has {} samples, grid has {n}",
                coeff.samples().len()
            )));
        }
        if coeff.kind() != config.kind {
            return Err(Error::invalid(format!(
                "{} coefficient given to a {} environment",
                coeff.kind(),
                config.kind
            )));
        }
        let implicit = match config.kind {
            BenchmarkKind::Hyperbolic => None,
            BenchmarkKind::Parabolic => Some(ParabolicOperator::new(coeff.samples(), config.dt, config.grid.dx())?),
        };
        Ok(PdeEnv {
            state: StateField::constant(n, 0.0),
            config,
            coeff,
            record: EpisodeRecord::default(),
            implicit,
            scratch: vec![0.0; n],
        })
    }

    /// Environment whose coefficient is sampled at `config.gamma`.
    pub fn from_config(config: EnvConfig) -> Result<Self> {
        let coeff = sample_coefficient(config.kind, config.gamma, &config.grid)?;
        PdeEnv::new(config, coeff)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn coefficient(&self) -> &CoefficientFn {
        &self.coeff
    }

    pub fn state(&self) -> &StateField {
        &self.state
    }

    pub fn record(&self) -> &EpisodeRecord {
        &self.record
    }

    pub fn state_norm(&self) -> f64 {
        l2_norm(&self.state.values, self.config.grid.dx())
    }

    /// Starts an episode from `u₀ ≡ c`, `c ~ U[u0_range)`.
    pub fn reset(&mut self, rng: &mut Rng) -> Result<&StateField> {
        let (lo, hi) = self.config.u0_range;
        let c = rng.uniform(lo, hi)?;
        Ok(self.reset_to(c))
    }

    /// Starts an episode from the constant profile `u₀ ≡ c`.
    pub fn reset_to(&mut self, c: f64) -> &StateField {
        self.state = StateField::constant(self.config.grid.n_points(), c);
        self.record = EpisodeRecord {
            final_state_norm: self.state_norm(),
            ..EpisodeRecord::default()
        };
        &self.state
    }

    pub fn set_state(&mut self, values: Vec<f64>) -> Result<()> {
        if values.len() != self.config.grid.n_points() {
            return Err(Error::invalid("state length does not match the grid"));
        }
        self.state.values = values;
        self.record.final_state_norm = self.state_norm();
        Ok(())
    }

    /// Advances one solver step with boundary value `control`, unclamped.
    pub fn solver_step(&mut self, control: f64) -> Result<()> {
        let dx = self.config.grid.dx();
        match &self.implicit {
            None => {
                solver::hyperbolic_step_in_place(
                    &mut self.scratch,
                    &self.state.values,
                    self.coeff.samples(),
                    control,
                    self.config.dt,
                    dx,
                );
                std::mem::swap(&mut self.scratch, &mut self.state.values);
            }
            Some(op) => op.step_in_place(&mut self.state.values, control)?,
        }
        self.state.time += self.config.dt;
        Ok(())
    }

    pub fn clamp_action(&self, action: f64) -> f64 {
        action.clamp(-self.config.action_bound, self.config.action_bound)
    }

    /// One interaction step: clamp, hold for `steps_per_action` solver steps,
    /// score the transition and check termination.
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if !action.is_finite() {
            return Err(Error::EnvironmentFault {
                step: self.record.step_count,
                reason: format!("non-finite action {action}"),
            });
        }
        let action = self.clamp_action(action);
        let before = self.state.values.clone();
        for _ in 0..self.config.steps_per_action {
            self.solver_step(action)?;
        }
        if !self.state.is_finite() {
            return Err(Error::EnvironmentFault {
                step: self.record.step_count,
                reason: "state became non-finite".into(),
            });
        }
        let dx = self.config.grid.dx();
        let norm = self.state_norm();
        let reward = match self.config.reward.mode {
            RewardMode::Difference => -l2_distance(&self.state.values, &before, dx),
            RewardMode::StateNorm => -norm,
        };
        self.record.action_abs_sum += action.abs();
        self.record.step_count += 1;
        self.record.final_state_norm = norm;
        let truncated = norm > self.config.blowup_limit;
        let done = truncated || self.record.step_count >= self.config.interaction_steps();
        Ok(StepOutcome {
            reward,
            done,
            truncated,
            state_norm: norm,
        })
    }

    pub fn terminal_bonus(&self) -> f64 {
        terminal_bonus(&self.record, &self.config.reward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyperbolic_env(beta: f64) -> PdeEnv {
        let cfg = EnvConfig::defaults(BenchmarkKind::Hyperbolic);
        let coeff = CoefficientFn::constant(BenchmarkKind::Hyperbolic, beta, &cfg.grid);
        PdeEnv::new(cfg, coeff).unwrap()
    }

    #[test]
    fn default_configs_have_hundred_interactions() {
        for kind in [BenchmarkKind::Hyperbolic, BenchmarkKind::Parabolic] {
            let cfg = EnvConfig::defaults(kind);
            cfg.validate().unwrap();
            assert_eq!(cfg.interaction_steps(), 100);
            let product = cfg.dt * cfg.steps_per_action as f64 * 100.0;
            assert!((product - cfg.horizon).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_reset_is_exact() {
        let mut env = hyperbolic_env(1.0);
        let s = env.reset_to(9.0);
        assert!(s.values.iter().all(|&v| v == 9.0));
        assert_eq!(s.time, 0.0);
        assert_eq!(env.record().action_abs_sum, 0.0);
    }

    #[test]
    fn seeded_resets_repeat_and_average_to_midpoint() {
        let mut env = hyperbolic_env(1.0);
        let mut a = Rng::new(11);
        let mut b = Rng::new(11);
        let ca = env.reset(&mut a).unwrap().values[0];
        let cb = env.reset(&mut b).unwrap().values[0];
        assert_eq!(ca.to_bits(), cb.to_bits());

        let mut rng = Rng::new(12);
        let n = 10_000;
        let mean = (0..n).map(|_| env.reset(&mut rng).unwrap().values[0]).sum::<f64>() / n as f64;
        assert!((5.3..=5.7).contains(&mean), "mean {mean}");
    }

    #[test]
    fn equilibrium_step_has_zero_reward() {
        let mut env = hyperbolic_env(2.0);
        env.reset_to(0.0);
        let out = env.step(0.0).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
    }

    #[test]
    fn blowup_terminates_and_flags_truncation() {
        let mut env = hyperbolic_env(0.0);
        env.reset_to(150.0);
        let out = env.step(150.0_f64.min(env.config().action_bound)).unwrap();
        assert!(out.state_norm > 100.0);
        assert!(out.done && out.truncated);
    }

    #[test]
    fn steady_state_held_fifty_steps() {
        let mut env = hyperbolic_env(0.0);
        env.reset_to(1.0);
        for _ in 0..50 {
            let out = env.step(1.0).unwrap();
            assert_eq!(out.reward, 0.0);
        }
        assert!(env.state().values.iter().all(|&v| v == 1.0));
        assert!((env.state().time - 2.5).abs() < 1e-9);
    }

    #[test]
    fn episode_ends_after_hundred_interactions() {
        let mut env = hyperbolic_env(0.0);
        env.reset_to(0.0);
        for k in 1..=100 {
            let out = env.step(0.0).unwrap();
            assert_eq!(out.done, k == 100);
            assert!(!out.truncated);
        }
    }

    #[test]
    fn actions_are_clamped_and_accumulated() {
        let mut env = hyperbolic_env(0.0);
        env.reset_to(0.0);
        let bound = env.config().action_bound;
        env.step(10.0 * bound).unwrap();
        assert_eq!(env.state().values[100], bound);
        env.step(-3.0).unwrap();
        assert!((env.record().action_abs_sum - (bound + 3.0)).abs() < 1e-12);
        assert!(env.step(f64::NAN).is_err());
    }

    #[test]
    fn terminal_bonus_branches() {
        let reward = RewardConfig::default();
        let far = EpisodeRecord {
            action_abs_sum: 1.0,
            final_state_norm: 5.0,
            step_count: 100,
        };
        assert_eq!(terminal_bonus(&far, &reward), 0.0);
        let perfect = EpisodeRecord::default();
        assert_eq!(terminal_bonus(&perfect, &reward), reward.sigma);
        let near = EpisodeRecord {
            action_abs_sum: 50.0,
            final_state_norm: 0.1,
            step_count: 100,
        };
        assert!((terminal_bonus(&near, &reward) - 9.4).abs() < 1e-12);
    }

    #[test]
    fn state_norm_reward_mode() {
        let mut cfg = EnvConfig::defaults(BenchmarkKind::Hyperbolic);
        cfg.reward.mode = RewardMode::StateNorm;
        let coeff = CoefficientFn::constant(BenchmarkKind::Hyperbolic, 0.0, &cfg.grid);
        let mut env = PdeEnv::new(cfg, coeff).unwrap();
        env.reset_to(2.0);
        let out = env.step(2.0).unwrap();
        assert!((out.reward + 2.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_coefficient() {
        let cfg = EnvConfig::defaults(BenchmarkKind::Parabolic);
        let coeff = CoefficientFn::constant(BenchmarkKind::Hyperbolic, 1.0, &cfg.grid);
        assert!(PdeEnv::new(cfg.clone(), coeff).is_err());
        let mut bad = cfg;
        bad.horizon = 1.0005;
        assert!(bad.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn per_step_reward_is_never_positive(
            c in -10.0f64..10.0,
            actions in proptest::collection::vec(-60.0f64..60.0, 1..20),
            gamma in 5.5f64..7.0,
        ) {
            let mut env = PdeEnv::from_config(EnvConfig {
                gamma,
                ..EnvConfig::defaults(BenchmarkKind::Hyperbolic)
            }).unwrap();
            env.reset_to(c);
            for a in actions {
                let out = env.step(a).unwrap();
                proptest::prop_assert!(out.reward <= 0.0);
                if out.done { break; }
            }
        }
    }
}
