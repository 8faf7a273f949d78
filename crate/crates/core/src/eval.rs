//! Closed-loop rollouts of every controller type with summary metrics.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::backstepping::{backstepping_control, Kernel};
use crate::deeponet::{DeepONet, CONTROL_QUERY};
use crate::env::PdeEnv;
use crate::error::{Error, Result};
use crate::sac::Actor;

/// Share of the horizon averaged into the steady-state error.
pub const STEADY_STATE_FRACTION: f64 = 0.1;
/// Norm ratio that counts as converged.
pub const CONVERGENCE_RATIO: f64 = 0.1;

/// A boundary feedback law. Backstepping and DeepONet laws are recomputed at
/// every solver step; agents act once per interaction step and the action is
/// held.
#[derive(Clone, Copy, Debug)]
pub enum Controller<'a> {
    Zero,
    Backstepping(&'a Kernel),
    DeepONet(&'a DeepONet),
    Agent(&'a Actor),
}

impl Controller<'_> {
    fn control(&self, env: &PdeEnv) -> Result<f64> {
        let state = &env.state().values;
        let raw = match self {
            Controller::Zero => 0.0,
            Controller::Backstepping(k) => backstepping_control(k, state)?,
            Controller::DeepONet(m) => m.forward_scalar(env.coefficient().samples(), state, CONTROL_QUERY)?,
            Controller::Agent(a) => a.mean_action(env.coefficient().samples(), state)?,
        };
        Ok(env.clamp_action(raw))
    }

    fn per_solver_step(&self) -> bool {
        matches!(self, Controller::Backstepping(_) | Controller::DeepONet(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalSummary {
    /// Largest norm over the initial norm.
    pub overshoot: f64,
    /// First time the norm is within [`CONVERGENCE_RATIO`] of its initial
    /// value; `None` when that never happens.
    pub convergence_time: Option<f64>,
    pub steady_state_error: f64,
    /// Sum of `|U|` at the interaction instants.
    pub total_effort: f64,
}

impl EvalSummary {
    pub fn is_finite(&self) -> bool {
        self.overshoot.is_finite()
            && self.convergence_time.is_none_or(f64::is_finite)
            && self.steady_state_error.is_finite()
            && self.total_effort.is_finite()
    }
}

/// Trajectory sampled at `t = 0` and after every interaction step. The
/// control at index `i` is the one applied from `times[i]` on; the final
/// entry is the control the law would apply next.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub times: Vec<f64>,
    pub norms: Vec<f64>,
    pub controls: Vec<f64>,
    pub summary: EvalSummary,
}

/// Runs `controller` from `u₀ ≡ u0` for the environment's full horizon.
pub fn rollout(env: &mut PdeEnv, controller: Controller<'_>, u0: f64) -> Result<EvalReport> {
    env.reset_to(u0);
    let cfg = env.config().clone();
    let steps = cfg.interaction_steps();
    let hold_dt = cfg.dt * cfg.steps_per_action as f64;
    let mut times = vec![0.0];
    let mut norms = vec![env.state_norm()];
    let mut controls = Vec::with_capacity(steps + 1);
    for k in 0..steps {
        let first = controller.control(env)?;
        controls.push(first);
        env.solver_step(first)?;
        for _ in 1..cfg.steps_per_action {
            let u = if controller.per_solver_step() {
                controller.control(env)?
            } else {
                first
            };
            env.solver_step(u)?;
        }
        times.push((k + 1) as f64 * hold_dt);
        norms.push(env.state_norm());
    }
    controls.push(controller.control(env).unwrap_or(f64::NAN));
    let summary = summarize(&times, &norms, &controls[..steps]);
    Ok(EvalReport {
        times,
        norms,
        controls,
        summary,
    })
}

/// Metrics for a norm trajectory starting at `times[0]` and the controls
/// applied at the interaction instants.
pub fn summarize(times: &[f64], norms: &[f64], applied: &[f64]) -> EvalSummary {
    let n0 = norms[0];
    let peak = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let overshoot = if n0 > 0.0 {
        peak / n0
    } else if peak > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    let convergence_time = times
        .iter()
        .zip(norms)
        .find(|(_, &n)| n <= CONVERGENCE_RATIO * n0)
        .map(|(&t, _)| t);
    let after = &norms[1.min(norms.len() - 1)..];
    let tail = ((after.len() as f64 * STEADY_STATE_FRACTION).ceil() as usize).clamp(1, after.len());
    let steady_state_error = after[after.len() - tail..].iter().sum::<f64>() / tail as f64;
    EvalSummary {
        overshoot,
        convergence_time,
        steady_state_error,
        total_effort: applied.iter().map(|u| u.abs()).sum(),
    }
}

impl EvalReport {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "t,l2_norm,control")?;
        for ((t, n), u) in self.times.iter().zip(&self.norms).zip(&self.controls) {
            writeln!(w, "{t:.6},{n:.10e},{u:.10e}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| Error::invalid(format!("cannot encode summary: {e}")))
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.summary_json()? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_coefficient, BenchmarkKind, CoefficientFn, EnvConfig};

    fn env_with(kind: BenchmarkKind, coeff: Option<CoefficientFn>) -> PdeEnv {
        let cfg = EnvConfig::defaults(kind);
        match coeff {
            Some(c) => PdeEnv::new(cfg, c).unwrap(),
            None => PdeEnv::from_config(cfg).unwrap(),
        }
    }

    #[test]
    fn equilibrium_rig_has_unit_overshoot() {
        // β ≡ 0 with U = u₀ keeps u ≡ u₀ fixed, so the agent-free zero
        // controller is replaced by a state-matching constant.
        let grid = EnvConfig::defaults(BenchmarkKind::Hyperbolic).grid;
        let mut env = env_with(
            BenchmarkKind::Hyperbolic,
            Some(CoefficientFn::constant(BenchmarkKind::Hyperbolic, 0.0, &grid)),
        );
        env.reset_to(9.0);
        let n0 = env.state_norm();
        let cfg = env.config().clone();
        let mut norms = vec![n0];
        for _ in 0..cfg.interaction_steps() {
            for _ in 0..cfg.steps_per_action {
                env.solver_step(9.0).unwrap();
            }
            norms.push(env.state_norm());
        }
        let times: Vec<f64> = (0..norms.len()).map(|k| k as f64).collect();
        let s = summarize(&times, &norms, &vec![9.0; norms.len() - 1]);
        assert_eq!(s.overshoot, 1.0);
        assert_eq!(s.convergence_time, None);
        assert!((s.steady_state_error - n0).abs() < 1e-12);
    }

    #[test]
    fn zero_policy_on_transport_rig_matches_open_loop() {
        let grid = EnvConfig::defaults(BenchmarkKind::Hyperbolic).grid;
        let coeff = CoefficientFn::constant(BenchmarkKind::Hyperbolic, 0.0, &grid);
        let mut env = env_with(BenchmarkKind::Hyperbolic, Some(coeff.clone()));
        let r = rollout(&mut env, Controller::Zero, 9.0).unwrap();
        let mut open = env_with(BenchmarkKind::Hyperbolic, Some(coeff));
        open.reset_to(9.0);
        let cfg = open.config().clone();
        let mut tail = Vec::new();
        for _ in 0..cfg.interaction_steps() {
            for _ in 0..cfg.steps_per_action {
                open.solver_step(0.0).unwrap();
            }
            tail.push(open.state_norm());
        }
        let k = tail.len() / 10;
        let expect = tail[tail.len() - k..].iter().sum::<f64>() / k as f64;
        assert_eq!(r.summary.steady_state_error, expect);
        assert_eq!(r.summary.total_effort, 0.0);
    }

    #[test]
    fn backstepping_converges_on_the_hyperbolic_plant() {
        let mut env = env_with(BenchmarkKind::Hyperbolic, None);
        let kernel = Kernel::solve(env.coefficient()).unwrap();
        let r = rollout(&mut env, Controller::Backstepping(&kernel), 9.0).unwrap();
        assert!(r.summary.convergence_time.is_some_and(|t| t <= 5.0));
        assert!(r.summary.is_finite());
        assert_eq!(r.times.len(), 101);
        assert_eq!(r.controls.len(), 101);
    }

    #[test]
    fn zero_initial_state_stays_at_rest() {
        let mut env = env_with(BenchmarkKind::Parabolic, None);
        let kernel = Kernel::solve(env.coefficient()).unwrap();
        let r = rollout(&mut env, Controller::Backstepping(&kernel), 0.0).unwrap();
        assert!(r.norms.iter().all(|&n| n == 0.0));
        assert!(r.controls.iter().all(|&u| u == 0.0));
        assert_eq!(r.summary.overshoot, 1.0);
        assert_eq!(r.summary.convergence_time, Some(0.0));
    }

    #[test]
    fn mismatched_kernel_still_reports_finite_metrics() {
        let grid = EnvConfig::defaults(BenchmarkKind::Hyperbolic).grid;
        let design = sample_coefficient(BenchmarkKind::Hyperbolic, 5.5, &grid).unwrap();
        let kernel = Kernel::solve(&design).unwrap();
        let plant = sample_coefficient(BenchmarkKind::Hyperbolic, 5.7, &grid).unwrap();
        let mut env = env_with(BenchmarkKind::Hyperbolic, Some(plant));
        let r = rollout(&mut env, Controller::Backstepping(&kernel), 9.0).unwrap();
        assert!(r.summary.is_finite());
    }

    #[test]
    fn summary_json_uses_null_for_no_convergence() {
        let s = summarize(&[0.0, 1.0], &[1.0, 2.0], &[0.5]);
        let r = EvalReport {
            times: vec![0.0, 1.0],
            norms: vec![1.0, 2.0],
            controls: vec![0.5, 0.0],
            summary: s,
        };
        let v: serde_json::Value = serde_json::from_str(&r.summary_json().unwrap()).unwrap();
        assert!(v["convergence_time"].is_null());
        assert_eq!(v["overshoot"], 2.0);
        assert_eq!(v["steady_state_error"], 2.0);
        assert_eq!(v["total_effort"], 0.5);
    }

    #[test]
    fn csv_has_one_row_per_sample() {
        let mut env = env_with(BenchmarkKind::Hyperbolic, None);
        let r = rollout(&mut env, Controller::Zero, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        r.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().count(), 1 + r.times.len());
        assert!(text.starts_with("t,l2_norm,control\n0.000000,"));
    }
}
