use rfcl::trainer::{run_config, Curriculum, Mode, RunConfig, Trainer, METRICS_HEADER};

fn small(mode: Mode, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::from_toml(
        r#"
[learner]
hidden = [16, 16]
num_critics = 2
sampled_critics = 2
batch_size = 32
utd = 0.5
actor_update_every = 1
seed_steps = 200
buffer_capacity = 5000

[reverse]
phi = 0.5

[forward]
n = 20

[trainer]
stage1_budget = 1500
stage2_budget = 1500
eval_interval = 500
eval_episodes = 4
num_envs = 4
steps_per_env = 2
record_wall_time = false
forward_dump_interval = 1000
"#,
    )
    .unwrap();
    cfg.trainer.mode = mode;
    cfg.trainer.seed = seed;
    cfg
}

#[test]
fn identical_runs_write_identical_metrics() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_config(&small(Mode::Rfcl, 3), Some(d.path())).unwrap();
    }
    for name in ["metrics.csv", "events.csv", "forward_levels.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let csv = std::fs::read_to_string(dirs[0].path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
    assert!(csv.lines().count() > 2);
    for ckpt in ["stage1.ckpt", "final.ckpt"] {
        assert!(dirs[0].path().join(ckpt).exists(), "{ckpt}");
    }
}

#[test]
fn different_seeds_diverge() {
    let (_, a) = run_config(&small(Mode::Rfcl, 1), None).unwrap();
    let (_, b) = run_config(&small(Mode::Rfcl, 2), None).unwrap();
    assert_ne!(a.events, b.events);
}

#[test]
fn reverse_only_shares_stage_one_with_rfcl() {
    let mut a = Trainer::<f32>::new(small(Mode::Rfcl, 5)).unwrap();
    let mut b = Trainer::<f32>::new(small(Mode::ReverseOnly, 5)).unwrap();
    let sa = a.run().unwrap();
    let sb = b.run().unwrap();
    let switch = sa.stage_switch_step.unwrap();
    assert_eq!(sb.stage_switch_step, Some(switch));
    let before = |t: &Trainer<f32>| {
        t.metrics()
            .rows
            .iter()
            .filter(|r| r.env_steps <= switch)
            .map(|r| format!("{r:?}"))
            .collect::<Vec<_>>()
    };
    assert_eq!(before(&a), before(&b));
    assert_eq!(a.metrics().events, b.metrics().events);
    assert!(b.metrics().forward_dumps.is_empty());
    assert!(!a.metrics().forward_dumps.is_empty());
}

#[test]
fn handoff_folds_online_into_offline_and_keeps_networks() {
    let mut cfg = small(Mode::Rfcl, 7);
    cfg.learner.buffer_capacity = 900;
    let mut t = Trainer::<f32>::new(cfg).unwrap();
    let demos = t.offline().len();
    assert_eq!(demos, t.demos().total_transitions());
    let mut cur = Curriculum::Start(t.stage1_scheduler().unwrap());
    t.run_stage1(&mut cur).unwrap();
    let online = t.online().len();
    let actor = t.learner().actor().params.clone();
    let critics: Vec<_> = t.learner().critics().iter().map(|c| c.params.clone()).collect();
    t.handoff().unwrap();
    assert_eq!(t.offline().len(), demos + online.min(900 - demos));
    assert!(t.online().is_empty());
    assert_eq!(t.learner().actor().params, actor);
    let after: Vec<_> = t.learner().critics().iter().map(|c| c.params.clone()).collect();
    assert_eq!(after, critics);
}

#[test]
fn demo_free_and_forward_only_buffers() {
    let t = Trainer::<f32>::new(small(Mode::ForwardOnly, 0)).unwrap();
    assert_eq!(t.offline().len(), t.demos().total_transitions());
    let t = Trainer::<f32>::new(small(Mode::None, 0)).unwrap();
    assert!(t.offline().is_empty());
    let mut t = Trainer::<f32>::new(small(Mode::None, 0)).unwrap();
    let s = t.run().unwrap();
    assert_eq!(s.stage1, None);
    assert_eq!(s.env_steps, 3000);
    assert!(t.offline().is_empty());
}

#[test]
fn every_mode_runs_to_budget() {
    for mode in Mode::ALL {
        let (s, m) = run_config(&small(mode, 4), None).unwrap();
        assert!(s.env_steps <= 3000, "{mode}");
        assert!(!m.rows.is_empty(), "{mode}");
        assert_eq!(s.stage1.is_some(), mode.has_stage1(), "{mode}");
    }
}

#[test]
fn precision_f64_runs() {
    let mut cfg = small(Mode::Rfcl, 0);
    cfg.trainer.precision = rfcl::trainer::Precision::F64;
    cfg.trainer.stage1_budget = 400;
    cfg.trainer.stage2_budget = 400;
    let (s, _) = run_config(&cfg, None).unwrap();
    assert!(s.env_steps <= 800);
}
