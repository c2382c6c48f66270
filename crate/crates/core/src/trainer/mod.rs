//! Two-stage training.
//!
//! Stage 1 resets episodes to states along the demonstrations and moves the
//! start frontier backwards as the agent succeeds. Stage 2 keeps the networks,
//! folds the stage-1 online buffer into the offline buffer, and samples
//! initial states from a prioritized level pool.
//!
//! Rollouts run `num_envs` environments for `steps_per_env` steps, then apply
//! `utd` critic updates per collected step. The coordinator owns schedulers,
//! buffers and the learner; environments may step on a worker pool.

mod ablation;
mod config;
mod eval;
mod metrics;

pub use ablation::{format_table, run_variant, summarize, AblationRow, AblationRun, ReverseVariant};

pub use config::{DemosConfig, Mode, Precision, RunConfig, TrainerConfig};
pub use eval::{
    evaluate, evaluate_with, heatmap, heatmap_with, level_starts, EvalResult, EvalStart, Heatmap,
};
pub use metrics::{
    EventRow, ForwardDumpRow, MetricsRow, RunMetrics, RunSummary, StageEnd, StageOutcome, METRICS_HEADER,
};

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::buffers::{MixedSampler, TransitionBuffer};
use crate::demo::{
    demo_transitions, derive_action_rescale, load_demos, subsample_demos, ActionScale, DemoDataset, Transition,
};
use crate::envs::{generate_dataset, Cell, InitialStateLevel, PointMaze, ResettableEnv, StepOutcome};
use crate::error::{Error, Result};
use crate::forward::{ForwardCurriculum, PoolLevel};
use crate::learner::{Learner, UpdateSchedule};
use crate::reverse::{
    resolve_reset, GlobalReverse, ReverseCurriculum, ReverseEvent, ReverseStart, StartScheduler, UniformReset,
};
use crate::rng::{streams, RngStream};
use crate::scalar::Scalar;

/// Source of episode initial states for one training phase.
pub enum Curriculum {
    Start(StartScheduler),
    Forward(ForwardCurriculum),
    /// Fresh draws from the initial-state distribution.
    Uniform,
}

impl Curriculum {
    fn finished(&self) -> bool {
        match self {
            Curriculum::Start(s) => s.is_finished(),
            _ => false,
        }
    }
}

#[derive(Clone, Debug)]
enum Origin {
    Start(ReverseStart),
    Pool(usize),
    Fresh,
}

struct Slot {
    env: PointMaze,
    obs: Vec<f64>,
    origin: Option<Origin>,
}

/// Demonstrations and the cells their states pass through.
pub fn prepare_demos(cfg: &RunConfig, env: &PointMaze) -> Result<DemoDataset> {
    let seed = cfg.trainer.seed;
    let demos = match &cfg.demos.path {
        Some(path) => {
            let ds = load_demos(path)?;
            if ds.env_id != env.env_id() {
                return Err(Error::SnapshotMismatch {
                    expected: env.env_id().to_string(),
                    found: ds.env_id.clone(),
                });
            }
            if ds.len() > cfg.demos.count {
                subsample_demos(&ds, cfg.demos.count, &mut RngStream::new(seed, streams::SUBSAMPLE))?
            } else {
                ds
            }
        }
        None => {
            let mut rng = RngStream::new(seed, streams::DEMOS);
            generate_dataset(env, cfg.demos.count, &cfg.demos.generator, &mut rng)?.0
        }
    };
    if demos.successful().is_empty() {
        return Err(Error::NoSuccessfulDemos);
    }
    Ok(demos)
}

fn demo_cells(env: &PointMaze, demos: &DemoDataset) -> Vec<Cell> {
    let mut cells: Vec<Cell> = demos
        .trajectories
        .iter()
        .flat_map(|t| t.states.iter())
        .filter_map(|s| env.cell_of([s[0], s[1]]))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// Environment, demonstrations and action scaling shared by training and
/// evaluation of a configuration.
pub fn prepare_run(cfg: &RunConfig) -> Result<(PointMaze, DemoDataset, ActionScale)> {
    let mut env = PointMaze::new(cfg.env.clone())?;
    let demos = prepare_demos(cfg, &env)?;
    if cfg.env.exclude_demo_cells {
        env.set_excluded_cells(&demo_cells(&env, &demos));
    }
    let scale = match cfg.demos.action_rescale {
        Some(f) => ActionScale::new(derive_action_rescale(&demos, f)?)?,
        None => ActionScale::identity(env.action_dim()),
    };
    Ok((env, demos, scale))
}

/// Initial states of the successful demonstrations.
pub fn demo_starts(demos: &DemoDataset) -> Vec<EvalStart> {
    demos
        .successful()
        .into_iter()
        .map(|i| EvalStart::Snapshot(demos.trajectories[i].snapshots[0].clone()))
        .collect()
}

pub struct Trainer<T: Scalar> {
    cfg: RunConfig,
    env: PointMaze,
    demos: DemoDataset,
    scale: ActionScale,
    learner: Learner<T>,
    online: TransitionBuffer,
    offline: TransitionBuffer,
    schedule: UpdateSchedule,
    rollout_rng: RngStream,
    batch_rng: RngStream,
    reverse_rng: RngStream,
    forward_rng: RngStream,
    env_steps: u64,
    eval_env_steps: u64,
    next_eval: u64,
    next_demo_eval: u64,
    next_dump: u64,
    reverse_progress: f64,
    metrics: RunMetrics,
    started: Instant,
    pool: Option<rayon::ThreadPool>,
    out_dir: Option<PathBuf>,
    solved: bool,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.trainer.seed;
        let (env, demos, scale) = prepare_run(&cfg)?;
        let learner = Learner::new(
            cfg.learner.clone(),
            env.state_dim(),
            env.action_dim(),
            &mut RngStream::new(seed, streams::INIT),
        )?;
        let capacity = cfg.learner.buffer_capacity;
        let mut offline = TransitionBuffer::new(capacity);
        if cfg.trainer.mode.uses_demos() {
            let mut probe = env.clone();
            for t in demo_transitions(&demos, &mut probe, &scale)? {
                offline.push(&t)?;
            }
        }
        let pool = if cfg.trainer.workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.trainer.workers)
                    .build()
                    .map_err(|e| Error::config("trainer.workers", e.to_string()))?,
            )
        } else {
            None
        };
        Ok(Self {
            schedule: UpdateSchedule::new(cfg.learner.utd),
            rollout_rng: RngStream::new(seed, streams::ROLLOUT),
            batch_rng: RngStream::new(seed, streams::BATCHES),
            reverse_rng: RngStream::new(seed, streams::REVERSE),
            forward_rng: RngStream::new(seed, streams::FORWARD),
            next_eval: cfg.trainer.eval_interval,
            next_demo_eval: cfg.trainer.demo_eval_interval.unwrap_or(u64::MAX),
            next_dump: cfg.trainer.forward_dump_interval.unwrap_or(u64::MAX),
            env_steps: 0,
            eval_env_steps: 0,
            reverse_progress: f64::NAN,
            metrics: RunMetrics::default(),
            started: Instant::now(),
            online: TransitionBuffer::new(capacity),
            offline,
            pool,
            out_dir: None,
            solved: false,
            cfg,
            env,
            demos,
            scale,
            learner,
        })
    }

    /// Write checkpoints into `dir` at stage boundaries.
    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn env(&self) -> &PointMaze {
        &self.env
    }

    pub fn demos(&self) -> &DemoDataset {
        &self.demos
    }

    pub fn scale(&self) -> &ActionScale {
        &self.scale
    }

    pub fn learner(&self) -> &Learner<T> {
        &self.learner
    }

    pub fn metrics(&self) -> &RunMetrics {
        &self.metrics
    }

    pub fn online(&self) -> &TransitionBuffer {
        &self.online
    }

    pub fn offline(&self) -> &TransitionBuffer {
        &self.offline
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// The stage-1 start scheduler for this run's mode.
    pub fn stage1_scheduler(&self) -> Result<StartScheduler> {
        let horizon = self.env.horizon();
        Ok(match self.cfg.trainer.mode {
            Mode::UniformReset => StartScheduler::Uniform(UniformReset::new(&self.demos, horizon)?),
            Mode::GlobalReverse => {
                StartScheduler::Global(GlobalReverse::new(self.cfg.reverse.clone(), &self.demos, horizon)?)
            }
            _ => StartScheduler::PerDemo(ReverseCurriculum::new(self.cfg.reverse.clone(), &self.demos, horizon)?),
        })
    }

    /// The stage-2 level source for this run's mode.
    pub fn stage2_curriculum(&mut self) -> Result<Curriculum> {
        Ok(match self.cfg.trainer.mode {
            Mode::ReverseOnly | Mode::None => Curriculum::Uniform,
            _ => Curriculum::Forward(ForwardCurriculum::build_pool(
                self.cfg.forward.clone(),
                &self.demos.successful(),
                &mut self.forward_rng,
            )?),
        })
    }

    /// Run both stages according to the configured mode.
    pub fn run(&mut self) -> Result<RunSummary> {
        let mode = self.cfg.trainer.mode;
        let mut stage1 = None;
        let mut switch = None;
        if mode.has_stage1() {
            let mut cur = Curriculum::Start(self.stage1_scheduler()?);
            let outcome = self.run_stage1(&mut cur)?;
            log::info!(
                "stage 1 ended ({:?}) after {} env steps",
                outcome.end,
                outcome.env_steps
            );
            stage1 = Some(outcome);
            self.save_checkpoint("stage1.ckpt")?;
            if !self.solved {
                self.handoff()?;
                switch = Some(self.env_steps);
                log::info!("switching to stage 2 at env step {}", self.env_steps);
                let mut cur = self.stage2_curriculum()?;
                self.run_phase(&mut cur, self.cfg.trainer.stage2_budget)?;
            }
        } else {
            let mut cur = self.stage2_curriculum()?;
            self.run_phase(&mut cur, self.cfg.total_budget())?;
        }
        if self.metrics.rows.last().map(|r| r.env_steps) != Some(self.env_steps) {
            self.record_eval(None)?;
        }
        self.save_checkpoint("final.ckpt")?;
        let last = self.metrics.rows.last().expect("final evaluation recorded");
        Ok(RunSummary {
            mode: mode.name().to_string(),
            seed: self.cfg.trainer.seed,
            env_steps: self.env_steps,
            eval_env_steps: self.eval_env_steps,
            grad_steps: self.learner.critic_updates(),
            stage1_complete: stage1.as_ref().map(StageOutcome::complete),
            stage1,
            stage_switch_step: switch,
            final_success_full: last.success_full,
            final_success_demo_inits: last.success_demo_inits,
            first_success_env_step: self.metrics.first_reaching(self.cfg.trainer.success_threshold),
            stopped_on_success: self.solved,
        })
    }

    /// Stage 1 with the given start scheduler; ends on scheduler completion,
    /// demo-start evaluation success, or budget exhaustion.
    pub fn run_stage1(&mut self, cur: &mut Curriculum) -> Result<StageOutcome> {
        let start = self.env_steps;
        let end = self.run_phase(cur, self.cfg.trainer.stage1_budget)?;
        Ok(StageOutcome {
            end,
            env_steps: self.env_steps - start,
        })
    }

    /// Fold the online buffer into the offline buffer and start a fresh one.
    pub fn handoff(&mut self) -> Result<()> {
        let online = std::mem::replace(&mut self.online, TransitionBuffer::new(self.cfg.learner.buffer_capacity));
        if self.cfg.trainer.mode.uses_demos() {
            self.offline.absorb(&online)?;
        }
        Ok(())
    }

    fn save_checkpoint(&self, name: &str) -> Result<()> {
        if let Some(dir) = &self.out_dir {
            self.learner.save_checkpoint(&dir.join(name))?;
        }
        Ok(())
    }

    fn begin_episode(&mut self, cur: &mut Curriculum, slot: &mut Slot) -> Result<()> {
        slot.origin = None;
        let (obs, origin) = match cur {
            Curriculum::Start(s) => {
                let Some(start) = s.sample_start(&mut self.reverse_rng) else {
                    return Ok(());
                };
                let snap = resolve_reset(&self.demos, start.demo, start.step)?;
                let obs = slot.env.reset_to_snapshot(snap)?;
                slot.env.set_timelimit(start.timelimit);
                (obs, Origin::Start(start))
            }
            Curriculum::Forward(f) => {
                let i = f.sample_level(&mut self.forward_rng)?;
                let obs = match f.levels()[i] {
                    PoolLevel::Seeded(level) => slot.env.reset_to_level(level)?,
                    PoolLevel::DemoStart { demo } => {
                        slot.env.reset_to_snapshot(&self.demos.trajectories[demo].snapshots[0])?
                    }
                };
                (obs, Origin::Pool(i))
            }
            Curriculum::Uniform => {
                let level = InitialStateLevel {
                    level_id: self.forward_rng.next_u64(),
                };
                (slot.env.reset_to_level(level)?, Origin::Fresh)
            }
        };
        slot.obs = obs;
        slot.origin = Some(origin);
        Ok(())
    }

    fn end_episode(&mut self, cur: &mut Curriculum, origin: Origin, success: bool) -> Result<()> {
        match (cur, origin) {
            (Curriculum::Start(s), Origin::Start(start)) => {
                if let Some(ev) = s.record_episode(&start, success) {
                    let row = match ev {
                        ReverseEvent::Advanced { demo, start_step } => EventRow {
                            env_steps: self.env_steps,
                            kind: "advanced",
                            demo: (demo != usize::MAX).then_some(demo),
                            start_step: Some(start_step),
                        },
                        ReverseEvent::Completed { demo } => EventRow {
                            env_steps: self.env_steps,
                            kind: "completed",
                            demo: (demo != usize::MAX).then_some(demo),
                            start_step: None,
                        },
                    };
                    log::debug!("{row:?}");
                    self.metrics.events.push(row);
                }
                self.reverse_progress = s.progress();
            }
            (Curriculum::Forward(f), Origin::Pool(i)) => {
                f.record_outcome(i, success)?;
            }
            _ => {}
        }
        Ok(())
    }

    fn policy_actions(&mut self, states: &[f64], n: usize) -> Result<Vec<f64>> {
        if self.env_steps < self.cfg.learner.seed_steps as u64 {
            let ad = self.env.action_dim();
            Ok((0..n * ad).map(|_| self.rollout_rng.uniform_range(-1.0, 1.0)).collect())
        } else {
            self.learner.act_batch(states, n, false, &mut self.rollout_rng)
        }
    }

    fn step_slots(&self, slots: &mut [Slot], live: &[usize], actions: &[Vec<f64>]) -> Vec<Result<StepOutcome>> {
        let mut picked: Vec<(&mut Slot, &Vec<f64>)> = Vec::with_capacity(live.len());
        let mut k = 0;
        for (i, slot) in slots.iter_mut().enumerate() {
            if k < live.len() && live[k] == i {
                picked.push((slot, &actions[k]));
                k += 1;
            }
        }
        match &self.pool {
            Some(pool) => pool.install(|| {
                picked
                    .into_par_iter()
                    .map(|(slot, a)| slot.env.step(a))
                    .collect()
            }),
            None => picked.into_iter().map(|(slot, a)| slot.env.step(a)).collect(),
        }
    }

    /// Roll out until the budget is spent, the curriculum finishes, or an
    /// early-stop condition fires.
    pub fn run_phase(&mut self, cur: &mut Curriculum, budget: u64) -> Result<StageEnd> {
        let end_step = self.env_steps + budget;
        let sd = self.env.state_dim();
        let ad = self.env.action_dim();
        let mut slots: Vec<Slot> = (0..self.cfg.trainer.num_envs)
            .map(|_| Slot {
                env: self.env.clone(),
                obs: Vec::new(),
                origin: None,
            })
            .collect();
        for slot in slots.iter_mut() {
            self.begin_episode(cur, slot)?;
        }
        loop {
            if self.solved {
                return Ok(StageEnd::Solved);
            }
            if cur.finished() {
                return Ok(StageEnd::Scheduler);
            }
            if self.env_steps >= end_step {
                return Ok(StageEnd::Budget);
            }
            let mut burst = 0usize;
            for _ in 0..self.cfg.trainer.steps_per_env {
                let remaining = (end_step - self.env_steps) as usize;
                let live: Vec<usize> = (0..slots.len())
                    .filter(|&i| slots[i].origin.is_some())
                    .take(remaining)
                    .collect();
                if live.is_empty() {
                    break;
                }
                let mut states = Vec::with_capacity(live.len() * sd);
                for &i in &live {
                    states.extend_from_slice(&slots[i].obs);
                }
                let flat = self.policy_actions(&states, live.len())?;
                let unit: Vec<Vec<f64>> = flat.chunks(ad).map(<[f64]>::to_vec).collect();
                let env_actions: Vec<Vec<f64>> = unit.iter().map(|a| self.scale.to_env(a)).collect();
                let outcomes = self.step_slots(&mut slots, &live, &env_actions);
                for ((&i, out), action) in live.iter().zip(outcomes).zip(unit) {
                    let out = out?;
                    let slot = &mut slots[i];
                    self.online.push(&Transition {
                        state: std::mem::take(&mut slot.obs),
                        action,
                        reward: out.reward,
                        next_state: out.state.clone(),
                        terminal: out.terminal,
                        truncated: out.truncated,
                    })?;
                    slot.obs = out.state;
                    self.env_steps += 1;
                    burst += 1;
                    if out.terminal || out.truncated {
                        let origin = slot.origin.take().expect("live slot has an origin");
                        self.end_episode(cur, origin, out.terminal)?;
                        self.begin_episode(cur, &mut slots[i])?;
                    }
                }
                if self.env_steps >= end_step {
                    break;
                }
            }
            self.train(burst)?;
            if self.env_steps >= self.next_eval {
                self.record_eval(Some(cur))?;
                self.next_eval = (self.env_steps / self.cfg.trainer.eval_interval + 1) * self.cfg.trainer.eval_interval;
            }
            if let Curriculum::Forward(f) = cur {
                if self.env_steps >= self.next_dump {
                    self.dump_forward(f);
                    let every = self.cfg.trainer.forward_dump_interval.unwrap_or(u64::MAX);
                    self.next_dump = (self.env_steps / every + 1).saturating_mul(every);
                }
            }
            if matches!(cur, Curriculum::Start(_)) && self.env_steps >= self.next_demo_eval {
                let every = self.cfg.trainer.demo_eval_interval.unwrap_or(u64::MAX);
                self.next_demo_eval = (self.env_steps / every + 1).saturating_mul(every);
                if self.demo_success()? >= 1.0 {
                    return Ok(StageEnd::DemoEval);
                }
            }
            if slots.iter().all(|s| s.origin.is_none()) && !cur.finished() {
                return Err(Error::EmptyPool);
            }
        }
    }

    fn train(&mut self, new_steps: usize) -> Result<()> {
        if self.env_steps < self.cfg.learner.seed_steps as u64 || self.online.is_empty() {
            return Ok(());
        }
        let n = self.schedule.updates_for(new_steps);
        let bs = self.cfg.learner.batch_size;
        for _ in 0..n {
            let batch = if self.offline.is_empty() {
                self.online.sample(bs, &mut self.batch_rng)?
            } else {
                let mut s = MixedSampler::new(&self.online, &self.offline);
                s.ratio = self.cfg.learner.offline_ratio;
                s.sample_mixed(bs, &mut self.batch_rng)?
            };
            let (c, a) = self.learner.gradient_step(&batch)?;
            if self.learner.critic_updates().is_multiple_of(1000) {
                log::debug!("update {}: critic {c:?} actor {a:?}", self.learner.critic_updates());
            }
        }
        Ok(())
    }

    fn demo_success(&mut self) -> Result<f64> {
        let starts = demo_starts(&self.demos);
        let res = evaluate(&self.learner, &self.env, &starts, &self.scale, None)?;
        self.eval_env_steps += res.env_steps;
        Ok(res.success_rate())
    }

    /// Full-distribution success on the configured number of episodes.
    pub fn full_success(&mut self) -> Result<f64> {
        let mut rng = RngStream::new(self.cfg.trainer.seed, streams::EVAL);
        let starts = level_starts(self.cfg.trainer.eval_episodes, &mut rng);
        let res = evaluate(&self.learner, &self.env, &starts, &self.scale, None)?;
        self.eval_env_steps += res.env_steps;
        Ok(res.success_rate())
    }

    fn record_eval(&mut self, cur: Option<&Curriculum>) -> Result<()> {
        let success_full = self.full_success()?;
        let success_demo_inits = self.demo_success()?;
        let mean_forward_score = match cur {
            Some(Curriculum::Forward(f)) => f.mean_score(),
            _ => f64::NAN,
        };
        let row = MetricsRow {
            env_steps: self.env_steps,
            grad_steps: self.learner.critic_updates(),
            success_full,
            success_demo_inits,
            reverse_progress: self.reverse_progress,
            mean_forward_score,
            wall_seconds: if self.cfg.trainer.record_wall_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        log::info!(
            "env_steps {} grad_steps {} success {:.3} demo-starts {:.3} reverse {:.3}",
            row.env_steps,
            row.grad_steps,
            row.success_full,
            row.success_demo_inits,
            row.reverse_progress
        );
        self.metrics.rows.push(row);
        if self.cfg.trainer.stop_on_success && success_full >= self.cfg.trainer.success_threshold {
            self.solved = true;
        }
        Ok(())
    }

    fn dump_forward(&mut self, f: &ForwardCurriculum) {
        for (i, (level, stats)) in f.levels().iter().zip(f.stats()).enumerate() {
            self.metrics.forward_dumps.push(ForwardDumpRow {
                env_steps: self.env_steps,
                level_id: level.id(),
                score: stats.score,
                q: f.q(i),
                last_sampled: stats.last_sampled,
            });
        }
    }

    /// Metrics CSVs into `dir`.
    pub fn write_metrics(&self, dir: &Path) -> Result<()> {
        self.metrics.write(dir)
    }
}

/// Run a configuration end to end at its configured precision, writing
/// checkpoints and metrics into `out` when given.
pub fn run_config(cfg: &RunConfig, out: Option<&Path>) -> Result<(RunSummary, RunMetrics)> {
    fn go<T: Scalar>(cfg: &RunConfig, out: Option<&Path>) -> Result<(RunSummary, RunMetrics)> {
        let mut t = Trainer::<T>::new(cfg.clone())?;
        if let Some(dir) = out {
            t = t.with_output_dir(dir);
        }
        let summary = t.run()?;
        if let Some(dir) = out {
            t.write_metrics(dir)?;
        }
        Ok((summary, t.metrics.clone()))
    }
    match cfg.trainer.precision {
        Precision::F32 => go::<f32>(cfg, out),
        Precision::F64 => go::<f64>(cfg, out),
    }
}
