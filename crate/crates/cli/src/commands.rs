//! One function per subcommand. Each writes its artifacts under the output
//! directory and prints a short report on stdout.

use std::path::{Path, PathBuf};

use pdectrl_core::backstepping::Kernel;
use pdectrl_core::dataset::{calibrated_action_bound, generate_dataset, kernel_table, Dataset, GenerationReport};
use pdectrl_core::deeponet::{evaluate_imitation, pretrain, DeepONet, EpochStats};
use pdectrl_core::env::{sample_coefficient, PdeEnv};
use pdectrl_core::eval::{rollout, Controller, EvalReport, EvalSummary};
use pdectrl_core::numerics::{derive_seed, Rng};
use pdectrl_core::parallel::{with_pool, worker_threads};
use pdectrl_core::sac::{load_actor, sac_train, Actor, Agent, Variant};
use pdectrl_core::{Error, Result};
use serde::Serialize;

use crate::config::ExperimentConfig;

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub variant: Option<String>,
    pub dry_run: bool,
    pub dump_kernel: Option<PathBuf>,
    pub controller: Option<String>,
}

pub const TRAIN_FILE: &str = "train.pdds";
pub const TEST_FILE: &str = "test.pdds";
pub const DEEPONET_FILE: &str = "deeponet.nncp";

pub fn agent_file(variant: Variant, seed: u64) -> String {
    format!("{variant}_seed{seed}.nncp")
}

fn prepare_out(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<PathBuf> {
    let dir = cfg.out_dir(opts.out.as_deref());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} {} does not exist", path.display())))
    }
}

fn fmt_gamma(g: f64) -> String {
    format!("{g}").replace('-', "m")
}

/// Writes the kernel table for the configured plant coefficient.
pub fn dump_kernel(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let env = cfg.env_config()?;
    let coeff = sample_coefficient(env.kind, env.gamma, &env.grid)?;
    let kernel = Kernel::solve(&coeff)?;
    kernel_table(&kernel, &coeff)?.write(path)?;
    println!("kernel table written to {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct GenerationSummary<'a> {
    benchmark: String,
    rollouts: usize,
    samples: usize,
    train_samples: usize,
    test_samples: usize,
    max_abs_control: f64,
    calibrated_action_bound: f64,
    skipped: Vec<SkippedEntry<'a>>,
}

#[derive(Serialize)]
struct SkippedEntry<'a> {
    index: usize,
    gamma: f64,
    reason: &'a str,
}

pub fn gen_data(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    let gen = cfg.generation_config()?;
    let fraction = cfg.train_fraction()?;
    if opts.dry_run {
        println!(
            "planned: {} rollouts ({} coefficients x {} initial states), {} samples",
            gen.planned_rollouts(),
            gen.n_coeffs,
            gen.n_inits,
            gen.planned_samples()
        );
        return Ok(());
    }
    let threads = worker_threads()?;
    let (ds, report): (Dataset, GenerationReport) = generate_dataset(&gen, threads)?;
    let (train, test) = ds.shuffle_split(fraction, &mut Rng::new(derive_seed(gen.seed, 1)))?;
    let dir = prepare_out(cfg, opts)?;
    train.write(dir.join(TRAIN_FILE))?;
    test.write(dir.join(TEST_FILE))?;
    let summary = GenerationSummary {
        benchmark: gen.env.kind.to_string(),
        rollouts: report.rollouts,
        samples: report.samples,
        train_samples: train.len(),
        test_samples: test.len(),
        max_abs_control: report.max_abs_control,
        calibrated_action_bound: calibrated_action_bound(report.max_abs_control),
        skipped: report
            .skipped
            .iter()
            .map(|s| SkippedEntry {
                index: s.index,
                gamma: s.gamma,
                reason: &s.reason,
            })
            .collect(),
    };
    write_json(&dir.join("generation_report.json"), &summary)?;
    println!(
        "{} samples from {} rollouts ({} train / {} test), max |U| {:.4}, {} coefficients skipped",
        report.samples,
        report.rollouts,
        train.len(),
        test.len(),
        report.max_abs_control,
        report.skipped.len()
    );
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::InvalidArgument(format!("cannot encode JSON: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn dataset_dir(cfg: &ExperimentConfig, opts: &RunOptions) -> PathBuf {
    cfg.paths
        .dataset_dir
        .clone()
        .unwrap_or_else(|| cfg.out_dir(opts.out.as_deref()))
}

pub fn train_deeponet(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    let kind = cfg.kind()?;
    let pre = cfg.pretrain_config()?;
    let ddir = dataset_dir(cfg, opts);
    let (train_path, test_path) = (ddir.join(TRAIN_FILE), ddir.join(TEST_FILE));
    require(&train_path, "training dataset")?;
    require(&test_path, "test dataset")?;
    if opts.dry_run {
        println!("would train for {} epochs on {}", pre.epochs, train_path.display());
        return Ok(());
    }
    let train = Dataset::read(&train_path)?;
    let test = Dataset::read(&test_path)?;
    let mut rng = Rng::new(derive_seed(cfg.seed(), 2));
    let mut model = DeepONet::new(train.n_points, kind, &cfg.deeponet_config(), &mut rng)?;
    let dir = prepare_out(cfg, opts)?;
    let mut rows = String::from("epoch,train_mse,test_mse\n");
    let report = pretrain(&mut model, &train, &test, &pre, |e: &EpochStats| {
        rows.push_str(&format!("{},{:.10e},{:.10e}\n", e.epoch, e.train_mse, e.test_mse));
    })?;
    std::fs::write(dir.join("deeponet_epochs.csv"), rows)?;
    model.save(dir.join(DEEPONET_FILE))?;
    let (_, rel) = evaluate_imitation(&model, &test)?;
    println!(
        "held-out relative L2 error {rel:.6e} (initial {:.6e})",
        report.initial_relative_l2
    );
    Ok(())
}

fn load_pretrained(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<DeepONet> {
    let path = cfg
        .paths
        .deeponet_checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out_dir(opts.out.as_deref()).join(DEEPONET_FILE));
    require(&path, "pretrained DeepONet checkpoint")?;
    DeepONet::load(&path)
}

pub fn train_rl(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    let variant = cfg.variant(opts.variant.as_deref())?;
    let sac = cfg.sac_config(variant)?;
    let env_cfg = cfg.env_config()?;
    let pretrained = match variant {
        Variant::NosacTraining => Some(load_pretrained(cfg, opts)?),
        _ => None,
    };
    if opts.dry_run {
        println!("would train {variant} for {} steps", sac.total_steps);
        return Ok(());
    }
    let n = env_cfg.grid.n_points();
    let mut agent = Agent::new(sac.clone(), env_cfg.kind, n, env_cfg.action_bound, pretrained.as_ref())?;
    let mut env = PdeEnv::from_config(env_cfg)?;
    let log = sac_train(&mut env, &mut agent)?;
    let dir = prepare_out(cfg, opts)?;
    let mut header = vec![
        ("variant".to_owned(), variant.to_string()),
        ("benchmark".to_owned(), cfg.benchmark.clone()),
    ];
    header.extend(sac.key_values());
    let stem = format!("{variant}_seed{}", sac.seed);
    log.write_csv(dir.join(format!("{stem}_metrics.csv")), &header)?;
    agent.save(dir.join(agent_file(variant, sac.seed)))?;
    let r = &log.episode_returns;
    let k = r.len().min(10);
    let mean = |s: &[f64]| {
        if s.is_empty() {
            f64::NAN
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    };
    println!(
        "{variant}: {} episodes, first-{k} mean return {:.3}, last-{k} mean return {:.3}",
        r.len(),
        mean(&r[..k]),
        mean(&r[r.len() - k..])
    );
    Ok(())
}

#[derive(Serialize)]
struct EvalEntry {
    controller: String,
    gamma_train: f64,
    gamma_eval: f64,
    u0: f64,
    trajectory: String,
    #[serde(flatten)]
    summary: EvalSummary,
}

pub fn evaluate(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    let train_env = cfg.env_config()?;
    let gamma_train = train_env.gamma;
    let agent_dir = cfg
        .paths
        .agent_dir
        .clone()
        .unwrap_or_else(|| cfg.out_dir(opts.out.as_deref()));
    let agent_seed = cfg.eval.agent_seed.unwrap_or(cfg.seed());
    let mut actors: Vec<(Variant, PathBuf)> = Vec::new();
    for v in Variant::ALL {
        let p = agent_dir.join(agent_file(v, agent_seed));
        require(&p, "agent checkpoint")?;
        actors.push((v, p));
    }
    let gammas = cfg.gamma_eval()?;
    let u0s = cfg.u0_eval();
    if opts.dry_run {
        println!(
            "would evaluate 4 controllers on {} coefficients x {} initial states",
            gammas.len(),
            u0s.len()
        );
        return Ok(());
    }
    let actors: Vec<(Variant, Actor)> = actors
        .into_iter()
        .map(|(v, p)| Ok((v, load_actor(p)?)))
        .collect::<Result<_>>()?;
    for (v, a) in &actors {
        if a.extractor.n_points() != train_env.grid.n_points() {
            return Err(Error::Config(format!("{v} agent was trained on a different grid")));
        }
    }
    let design = sample_coefficient(train_env.kind, gamma_train, &train_env.grid)?;
    let kernel = Kernel::solve(&design)?;
    let dir = prepare_out(cfg, opts)?;
    let mut jobs = Vec::new();
    for &g in &gammas {
        for &u0 in &u0s {
            jobs.push((g, u0, "backstepping".to_owned(), Controller::Backstepping(&kernel)));
            for (v, a) in &actors {
                jobs.push((g, u0, v.to_string(), Controller::Agent(a)));
            }
        }
    }
    let threads = worker_threads()?;
    let reports: Vec<Result<EvalReport>> = with_pool(threads, || {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(g, u0, _, c)| {
                let mut env = PdeEnv::from_config(cfg.eval_env_config(*g)?)?;
                rollout(&mut env, *c, *u0)
            })
            .collect()
    })?;
    let mut entries = Vec::new();
    for ((g, u0, name, _), report) in jobs.iter().zip(reports) {
        let report = report?;
        let file = format!("eval_g{}_u{}_{name}.csv", fmt_gamma(*g), fmt_gamma(*u0));
        report.write_csv(dir.join(&file))?;
        println!(
            "gamma {g} u0 {u0} {name:>15}: overshoot {:.4} convergence {} steady-state {:.4e} effort {:.4}",
            report.summary.overshoot,
            report
                .summary
                .convergence_time
                .map_or("never".to_owned(), |t| format!("{t:.3}")),
            report.summary.steady_state_error,
            report.summary.total_effort
        );
        entries.push(EvalEntry {
            controller: name.clone(),
            gamma_train,
            gamma_eval: *g,
            u0: *u0,
            trajectory: file,
            summary: report.summary,
        });
    }
    write_json(&dir.join("eval_summary.json"), &entries)
}

pub fn simulate_backstepping(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<()> {
    let env_cfg = cfg.eval_env_config(cfg.env_config()?.gamma)?;
    let which = opts.controller.as_deref().unwrap_or("backstepping");
    let (with_bs, with_don) = match which {
        "backstepping" => (true, false),
        "deeponet" => (false, true),
        "both" => (true, true),
        other => {
            return Err(Error::Config(format!(
                "unknown controller {other:?} (expected backstepping, deeponet or both)"
            )))
        }
    };
    let model = if with_don {
        Some(load_pretrained(cfg, opts)?)
    } else {
        None
    };
    if opts.dry_run {
        println!(
            "would simulate {which} at gamma {} for u0 {:?}",
            env_cfg.gamma,
            cfg.u0_eval()
        );
        return Ok(());
    }
    let mut env = PdeEnv::from_config(env_cfg)?;
    let kernel = Kernel::solve(env.coefficient())?;
    let dir = prepare_out(cfg, opts)?;
    let mut entries = Vec::new();
    for u0 in cfg.u0_eval() {
        let mut runs = Vec::new();
        if with_bs {
            runs.push(("backstepping", Controller::Backstepping(&kernel)));
        }
        if let Some(m) = &model {
            runs.push(("deeponet", Controller::DeepONet(m)));
        }
        for (name, c) in runs {
            let report = rollout(&mut env, c, u0)?;
            let file = format!("simulate_u{}_{name}.csv", fmt_gamma(u0));
            report.write_csv(dir.join(&file))?;
            let n0 = report.norms[0];
            let last = *report.norms.last().unwrap();
            println!(
                "u0 {u0} {name}: final norm {last:.4e} ({:.4e} of initial)",
                if n0 > 0.0 { last / n0 } else { 0.0 }
            );
            entries.push(EvalEntry {
                controller: name.to_owned(),
                gamma_train: env.config().gamma,
                gamma_eval: env.config().gamma,
                u0,
                trajectory: file,
                summary: report.summary,
            });
        }
    }
    write_json(&dir.join("simulate_summary.json"), &entries)
}
