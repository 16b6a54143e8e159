mod common;

use common::{config, SMALL};
use gainlora::adapter::BranchStrategy;
use gainlora::checkpoint::Checkpoint;
use gainlora::config::ExperimentConfig;
use gainlora::continual::{learn_task, run_sequence, ContinualState, GatingMode, RunResult, TaskTrainer};
use gainlora::experiment::{report, run_experiment, run_seed, seed_dir};
use gainlora::numerics::{dot, Mat};
use gainlora::Error;

fn small(overrides: &[&str]) -> ExperimentConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    ExperimentConfig::from_toml(SMALL, &o).unwrap()
}

fn run(cfg: &ExperimentConfig, seed: u64) -> RunResult {
    let backbone = cfg.backbone(seed);
    let seq = cfg.sequence(&backbone, seed).unwrap();
    let mut r = run_sequence(&cfg.strategy(seed), &seq, backbone).unwrap();
    r.wall_clock_secs = 0.0;
    r
}

#[test]
fn first_task_is_learned() {
    let cfg = small(&[]);
    let r = run(&cfg, 0);
    assert!(
        r.logs[0].train_accuracy >= 90.0,
        "train accuracy {}",
        r.logs[0].train_accuracy
    );
    assert!(r.logs[0].final_loss < r.logs[0].first_loss);
    assert_eq!(r.matrix.rows.len(), 3);
}

#[test]
fn gain_beats_fixed_coefficients_on_forgetting() {
    let gain = run(&small(&[]), 1);
    let fixed = run(&small(&["gating.mode=\"fixed_one\""]), 1);
    assert!(
        gain.ft.unwrap() <= fixed.ft.unwrap(),
        "gain {:?} fixed {:?}",
        gain.ft,
        fixed.ft
    );
}

#[test]
fn sequential_finetuning_keeps_one_branch() {
    let cfg = small(&["gating.mode=\"fixed_one\"", "strategy.branch=\"seq\""]);
    let backbone = cfg.backbone(0);
    let seq = cfg.sequence(&backbone, 0).unwrap();
    let strategy = cfg.strategy(0);
    let mut state = ContinualState::new(backbone, &strategy, seq.len()).unwrap();
    for t in 0..seq.len() {
        learn_task(&mut state, &strategy, t, &seq.tasks[t]).unwrap();
        assert_eq!(state.backbone.branch_count(), 1);
    }
    assert!(state.gates.is_empty());
}

#[test]
fn gated_modes_reject_sequential_branch() {
    let err = ExperimentConfig::from_toml(SMALL, &["strategy.branch=\"seq\"".into()]).unwrap_err();
    assert!(err.is_config());
}

#[test]
fn tasks_must_arrive_in_order() {
    let cfg = small(&[]);
    let backbone = cfg.backbone(0);
    let seq = cfg.sequence(&backbone, 0).unwrap();
    let strategy = cfg.strategy(0);
    let mut state = ContinualState::new(backbone, &strategy, seq.len()).unwrap();
    let err = learn_task(&mut state, &strategy, 1, &seq.tasks[1]).unwrap_err();
    assert!(matches!(err, Error::OrderViolation { expected: 0, got: 1 }));
    assert_eq!(state.tasks_learned, 0);
    assert_eq!(state.backbone.branch_count(), 0);
}

#[test]
fn zero_coefficients_recover_the_bare_backbone() {
    let cfg = small(&[]);
    let backbone = cfg.backbone(0);
    let seq = cfg.sequence(&backbone, 0).unwrap();
    let strategy = cfg.strategy(0);
    let mut state = ContinualState::new(backbone.clone(), &strategy, seq.len()).unwrap();
    learn_task(&mut state, &strategy, 0, &seq.tasks[0]).unwrap();
    let x = state.backbone.pooled_batch(&seq.tasks[0].test.samples).unwrap();
    let zeros = Mat::zeros(x.rows(), 1);
    let gated_off = state.backbone.logits_batch(&x, Some(&zeros)).unwrap();
    let bare = backbone.logits_batch(&x, None).unwrap();
    assert!(gated_off.max_abs_diff(&bare) < 1e-12);
    let ones = Mat::filled(x.rows(), 1, 1.0);
    assert!(
        state
            .backbone
            .logits_batch(&x, Some(&ones))
            .unwrap()
            .max_abs_diff(&bare)
            > 1e-3
    );
}

#[test]
fn runs_are_deterministic_and_keep_the_backbone_frozen() {
    let cfg = small(&[]);
    let before = cfg.backbone(3).frozen_fingerprint();
    let a = run(&cfg, 3);
    let b = run(&cfg, 3);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    let backbone = cfg.backbone(3);
    let seq = cfg.sequence(&backbone, 3).unwrap();
    let strategy = cfg.strategy(3);
    let mut state = ContinualState::new(backbone, &strategy, seq.len()).unwrap();
    for t in 0..seq.len() {
        learn_task(&mut state, &strategy, t, &seq.tasks[t]).unwrap();
    }
    assert_eq!(state.backbone.frozen_fingerprint(), before);
    assert!(state.gates.modules().iter().all(|g| g.is_frozen()));
    assert!(state
        .backbone
        .layers()
        .iter()
        .all(|l| l.branches().iter().all(|b| b.is_frozen())));
}

#[test]
fn different_seeds_differ() {
    let cfg = small(&["train.epochs=2"]);
    assert_ne!(run(&cfg, 0).matrix, run(&cfg, 1).matrix);
}

#[test]
fn dropping_both_constraints_is_the_unconstrained_mode() {
    assert_eq!(
        GatingMode::Gain.without_init().without_update(),
        GatingMode::NoConstraints
    );
    assert_eq!(
        GatingMode::Gain.without_update().without_init(),
        GatingMode::NoConstraints
    );
    assert_eq!(GatingMode::Gain.without_init(), GatingMode::NoInit);
    assert_eq!(GatingMode::Gain.without_update(), GatingMode::NoUpdate);

    let cfg = small(&["train.epochs=5"]);
    let composed = GatingMode::Gain.without_init().without_update();
    assert_eq!(run(&cfg.with_mode(composed), 2), run(&cfg.with_mode(GatingMode::NoConstraints), 2));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = small(&["train.epochs=5"]);
    let straight_dir = tempfile::tempdir().unwrap();
    let mut straight = run_seed(&cfg, 0, Some(straight_dir.path()), false).unwrap();

    // Stop after the first task, then resume from the checkpoint.
    let dir = tempfile::tempdir().unwrap();
    let strategy = cfg.strategy(0);
    let backbone = cfg.backbone(0);
    let seq = cfg.sequence(&backbone, 0).unwrap();
    let mut state = ContinualState::new(backbone, &strategy, seq.len()).unwrap();
    learn_task(&mut state, &strategy, 0, &seq.tasks[0]).unwrap();
    let row = state.evaluate(&strategy, &seq).unwrap();
    state.matrix.push_row(row).unwrap();
    let path = seed_dir(dir.path(), 0).join("checkpoint.json");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    Checkpoint::new(&cfg, &strategy, &state).save(&path).unwrap();

    let mut resumed = run_seed(&cfg, 0, Some(dir.path()), true).unwrap();
    straight.wall_clock_secs = 0.0;
    resumed.wall_clock_secs = 0.0;
    assert_eq!(straight, resumed);

    let a = Checkpoint::load(&seed_dir(straight_dir.path(), 0).join("checkpoint.json")).unwrap();
    let b = Checkpoint::load(&path).unwrap();
    assert_eq!(a.state, b.state);
}

#[test]
fn resume_refuses_a_foreign_checkpoint() {
    let cfg = small(&["train.epochs=2"]);
    let dir = tempfile::tempdir().unwrap();
    run_seed(&cfg, 0, Some(dir.path()), false).unwrap();
    let other = small(&["train.epochs=3"]);
    let err = run_seed(&other, 0, Some(dir.path()), true).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
}

#[test]
fn report_rebuilds_an_identical_summary() {
    let cfg = small(&["train.epochs=3", "seeds=[0, 1]"]);
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&cfg, Some(dir.path()), false).unwrap();
    let before = std::fs::read(dir.path().join("summary.json")).unwrap();
    let accuracy = std::fs::read(dir.path().join("accuracy.csv")).unwrap();
    std::fs::remove_file(dir.path().join("summary.json")).unwrap();
    report(dir.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("summary.json")).unwrap(), before);
    assert_eq!(std::fs::read(dir.path().join("accuracy.csv")).unwrap(), accuracy);
}

#[test]
fn task_identity_is_linearly_separable() {
    let cfg = config("[tasks]\ntasks = 5\ntrain = 200\ntest = 100\n");
    let backbone = cfg.backbone(0);
    let seq = cfg.sequence(&backbone, 0).unwrap();
    // Nearest centroid is a linear rule: argmax_t (c_tᵀx − ‖c_t‖²/2).
    let centroids: Vec<Vec<f64>> = seq
        .tasks
        .iter()
        .map(|t| {
            let x = backbone.pooled_batch(&t.train.samples).unwrap();
            (0..x.cols())
                .map(|j| x.col(j).iter().sum::<f64>() / x.rows() as f64)
                .collect()
        })
        .collect();
    let (mut correct, mut total) = (0, 0);
    for (t, task) in seq.tasks.iter().enumerate() {
        let x = backbone.pooled_batch(&task.test.samples).unwrap();
        for r in 0..x.rows() {
            let score = |c: &Vec<f64>| dot(c, x.row(r)) - 0.5 * dot(c, c);
            let best = (0..centroids.len())
                .max_by(|&a, &b| score(&centroids[a]).total_cmp(&score(&centroids[b])))
                .unwrap();
            correct += usize::from(best == t);
            total += 1;
        }
    }
    assert!(correct as f64 >= 0.99 * total as f64, "{correct}/{total}");
}

#[test]
fn inflora_designs_branches_off_old_inputs() {
    let cfg = small(&["strategy.branch=\"inflora\"", "tasks.tasks=2"]);
    let backbone = cfg.backbone(0);
    let seq = cfg.sequence(&backbone, 0).unwrap();
    let strategy = cfg.strategy(0);
    assert_eq!(strategy.branch, BranchStrategy::Inflora);
    let mut state = ContinualState::new(backbone, &strategy, seq.len()).unwrap();
    learn_task(&mut state, &strategy, 0, &seq.tasks[0]).unwrap();
    let spaces = state.grad_spaces.clone();
    assert!(spaces.iter().all(|s| s.rank() > 0));

    let trainer = TaskTrainer::begin(&mut state, &strategy, 1, &seq.tasks[1]).unwrap();
    for (l, layer) in trainer.state().backbone.layers().iter().enumerate() {
        let b = &layer.branches()[1].b;
        assert!(layer.branches()[1].is_b_frozen());
        assert!(b.matmul(spaces[l].basis()).max_abs() < 1e-9);
        assert!(b.matmul_t(b).max_abs_diff(&Mat::identity(b.rows())) < 1e-9);
    }
    drop(trainer);

    let r = run(&cfg, 0);
    assert!(r.ap > 60.0, "AP {}", r.ap);
}

#[test]
fn single_task_has_no_forgetting_value() {
    let cfg = small(&["tasks.tasks=1"]);
    let r = run(&cfg, 0);
    assert_eq!(r.ft, None);
    assert_eq!(r.matrix.rows.len(), 1);
    let json = serde_json::to_value(&r).unwrap();
    assert!(json["ft"].is_null());
}
