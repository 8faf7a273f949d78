//! End-to-end runs of the library pipeline at reduced sizes.

use pdectrl_core::backstepping::Kernel;
use pdectrl_core::dataset::{generate_dataset, verify_targets, Dataset, GenerationConfig};
use pdectrl_core::deeponet::{evaluate_imitation, pretrain, DeepONet, DeepONetConfig, PretrainConfig};
use pdectrl_core::env::{sample_coefficient, BenchmarkKind, EnvConfig, PdeEnv};
use pdectrl_core::eval::{rollout, Controller};
use pdectrl_core::numerics::Rng;
use pdectrl_core::sac::{load_actor, sac_train, Agent, SacConfig, Variant};

fn small_generation(kind: BenchmarkKind, seed: u64) -> GenerationConfig {
    GenerationConfig {
        n_coeffs: 6,
        n_inits: 4,
        seed,
        ..GenerationConfig::defaults(kind)
    }
}

#[test]
fn generated_targets_match_the_kernel_controls() {
    for kind in [BenchmarkKind::Hyperbolic, BenchmarkKind::Parabolic] {
        let cfg = small_generation(kind, 5);
        let (ds, report) = generate_dataset(&cfg, 1).unwrap();
        assert_eq!(
            ds.len() + report.skipped.len() * cfg.n_inits * cfg.samples_per_rollout(),
            cfg.planned_samples()
        );
        assert!(verify_targets(&ds, 1).unwrap() <= 1e-12);
    }
}

#[test]
fn generation_is_independent_of_thread_count() {
    let cfg = small_generation(BenchmarkKind::Parabolic, 9);
    let (a, _) = generate_dataset(&cfg, 1).unwrap();
    let (b, _) = generate_dataset(&cfg, 3).unwrap();
    assert_eq!(a.raw(), b.raw());
}

#[test]
fn dataset_survives_a_file_round_trip() {
    let (ds, _) = generate_dataset(&small_generation(BenchmarkKind::Hyperbolic, 2), 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pdds");
    ds.write(&path).unwrap();
    let back = Dataset::read(&path).unwrap();
    assert_eq!(back.raw(), ds.raw());
    assert_eq!(back.n_points, ds.n_points);
}

#[test]
fn short_pretraining_reduces_the_imitation_error() {
    let (ds, _) = generate_dataset(&small_generation(BenchmarkKind::Hyperbolic, 1), 1).unwrap();
    let (train, test) = ds.shuffle_split(0.9, &mut Rng::new(4)).unwrap();
    let cfg = DeepONetConfig {
        latent_dim: 16,
        branch_hidden: vec![32],
        trunk_hidden: vec![16],
    };
    let mut model = DeepONet::new(train.n_points, BenchmarkKind::Hyperbolic, &cfg, &mut Rng::new(3)).unwrap();
    let report = pretrain(
        &mut model,
        &train,
        &test,
        &PretrainConfig {
            epochs: 20,
            batch_size: 32,
            ..PretrainConfig::default()
        },
        |_| {},
    )
    .unwrap();
    assert!(
        report.final_relative_l2 < 0.5 * report.initial_relative_l2,
        "{report:?}"
    );
    assert_eq!(evaluate_imitation(&model, &test).unwrap().1, report.final_relative_l2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.nncp");
    model.save(&path).unwrap();
    let back = DeepONet::load(&path).unwrap();
    let s = test.sample(0);
    assert_eq!(
        back.forward_scalar(s.coeff, s.state, 1.0).unwrap(),
        model.forward_scalar(s.coeff, s.state, 1.0).unwrap()
    );
}

#[test]
fn backstepping_beats_open_loop_on_both_plants() {
    for kind in [BenchmarkKind::Hyperbolic, BenchmarkKind::Parabolic] {
        let cfg = EnvConfig::defaults(kind);
        let coeff = sample_coefficient(kind, cfg.gamma, &cfg.grid).unwrap();
        let kernel = Kernel::solve(&coeff).unwrap();
        let mut env = PdeEnv::new(cfg, coeff).unwrap();
        let open = rollout(&mut env, Controller::Zero, 5.0).unwrap();
        let closed = rollout(&mut env, Controller::Backstepping(&kernel), 5.0).unwrap();
        assert!(closed.summary.is_finite());
        assert!(closed.norms.last().unwrap() < open.norms.last().unwrap(), "{kind}");
        assert!(closed.summary.convergence_time.is_some());
        assert_eq!(open.summary.total_effort, 0.0);
    }
}

#[test]
fn saved_agents_reproduce_their_policy() {
    let env_cfg = EnvConfig::defaults(BenchmarkKind::Parabolic);
    let n = env_cfg.grid.n_points();
    let pre_cfg = DeepONetConfig {
        latent_dim: 8,
        branch_hidden: vec![16],
        trunk_hidden: vec![8],
    };
    let pre = DeepONet::new(n, env_cfg.kind, &pre_cfg, &mut Rng::new(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for variant in Variant::ALL {
        let cfg = SacConfig {
            total_steps: 250,
            warmup: 10,
            batch_size: 8,
            actor_hidden: vec![8],
            critic_hidden: vec![8],
            extractor: variant.extractor(),
            deeponet: pre_cfg.clone(),
            seed: 1,
            ..SacConfig::default()
        };
        let mut agent = Agent::new(cfg, env_cfg.kind, n, env_cfg.action_bound, Some(&pre)).unwrap();
        let mut env = PdeEnv::from_config(env_cfg.clone()).unwrap();
        let log = sac_train(&mut env, &mut agent).unwrap();
        assert_eq!(log.rows.len(), 250);
        assert_eq!(log.episode_returns.len(), 2);
        let path = dir.path().join(format!("{variant}.nncp"));
        agent.save(&path).unwrap();
        let actor = load_actor(&path).unwrap();
        let coeff = env.coefficient().samples().to_vec();
        let state = vec![2.0; n];
        assert_eq!(
            actor.mean_action(&coeff, &state).unwrap(),
            agent.actor.mean_action(&coeff, &state).unwrap()
        );
        let report = rollout(&mut env, Controller::Agent(&actor), 4.0).unwrap();
        assert!(report.summary.is_finite());
        assert!(report.controls.iter().all(|u| u.abs() <= env_cfg.action_bound));
    }
}
