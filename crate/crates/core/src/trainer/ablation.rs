use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Curriculum, Mode, Precision, RunConfig, StageEnd, Trainer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stage-1 start-state strategies compared in the reverse ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseVariant {
    PerDemoDynamic,
    PerDemoStatic,
    Global,
    Uniform,
}

impl ReverseVariant {
    pub const ALL: [ReverseVariant; 4] = [
        ReverseVariant::PerDemoDynamic,
        ReverseVariant::PerDemoStatic,
        ReverseVariant::Global,
        ReverseVariant::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReverseVariant::PerDemoDynamic => "per_demo+dynamic",
            ReverseVariant::PerDemoStatic => "per_demo-dynamic",
            ReverseVariant::Global => "global",
            ReverseVariant::Uniform => "uniform",
        }
    }

    /// `base` adjusted to run this variant's stage 1.
    pub fn apply(self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match self {
            ReverseVariant::PerDemoDynamic => {
                cfg.trainer.mode = Mode::Rfcl;
                cfg.reverse.dynamic_timelimit = true;
            }
            ReverseVariant::PerDemoStatic => {
                cfg.trainer.mode = Mode::Rfcl;
                cfg.reverse.dynamic_timelimit = false;
            }
            ReverseVariant::Global => cfg.trainer.mode = Mode::GlobalReverse,
            ReverseVariant::Uniform => cfg.trainer.mode = Mode::UniformReset,
        }
        cfg
    }
}

impl FromStr for ReverseVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReverseVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config("variants", format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub variant: ReverseVariant,
    pub seed: u64,
    pub end: StageEnd,
    /// Env steps until every demonstration start was solved, if it happened.
    pub completion_steps: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: ReverseVariant,
    pub runs: usize,
    pub completed: usize,
    /// Mean and 95% normal-approximation half-width over completed runs.
    pub mean: Option<f64>,
    pub ci95: Option<f64>,
    pub budget: u64,
}

impl AblationRow {
    pub fn all_completed(&self) -> bool {
        self.completed == self.runs
    }

    pub fn display_value(&self) -> String {
        match (self.all_completed(), self.mean, self.ci95) {
            (true, Some(m), Some(ci)) => format!("{m:.0} ± {ci:.0}"),
            _ => format!("> {}", self.budget),
        }
    }
}

fn stage1_only<T: Scalar>(cfg: RunConfig) -> Result<AblationRun> {
    let mut t = Trainer::<T>::new(cfg)?;
    let mut cur = Curriculum::Start(t.stage1_scheduler()?);
    let outcome = t.run_stage1(&mut cur)?;
    let completion_steps = matches!(outcome.end, StageEnd::Scheduler | StageEnd::DemoEval).then_some(outcome.env_steps);
    Ok(AblationRun {
        variant: ReverseVariant::PerDemoDynamic,
        seed: t.config().trainer.seed,
        end: outcome.end,
        completion_steps,
    })
}

/// Stage 1 of one variant for one seed.
pub fn run_variant(base: &RunConfig, variant: ReverseVariant, seed: u64) -> Result<AblationRun> {
    let mut cfg = variant.apply(base);
    cfg.trainer.seed = seed;
    cfg.trainer.stop_on_success = false;
    cfg.trainer.demo_eval_interval.get_or_insert(cfg.trainer.eval_interval);
    let mut run = match cfg.trainer.precision {
        Precision::F32 => stage1_only::<f32>(cfg)?,
        Precision::F64 => stage1_only::<f64>(cfg)?,
    };
    run.variant = variant;
    Ok(run)
}

pub fn summarize(runs: &[AblationRun], variants: &[ReverseVariant], budget: u64) -> Vec<AblationRow> {
    variants
        .iter()
        .map(|&v| {
            let mine: Vec<&AblationRun> = runs.iter().filter(|r| r.variant == v).collect();
            let done: Vec<f64> = mine.iter().filter_map(|r| r.completion_steps).map(|s| s as f64).collect();
            let (mean, ci95) = if done.is_empty() {
                (None, None)
            } else {
                let n = done.len() as f64;
                let mean = done.iter().sum::<f64>() / n;
                let var = if done.len() > 1 {
                    done.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                (Some(mean), Some(1.96 * (var / n).sqrt()))
            };
            AblationRow {
                variant: v,
                runs: mine.len(),
                completed: done.len(),
                mean,
                ci95,
                budget,
            }
        })
        .collect()
}

/// Markdown-style table with one row per variant.
pub fn format_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("| variant | env steps to completion | completed |\n|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {}/{} |",
            r.variant.name(),
            r.display_value(),
            r.completed,
            r.runs
        );
    }
    out
}
