use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: &str =
    "env_steps,grad_steps,success_full,success_demo_inits,reverse_progress,mean_forward_score,wall_seconds";

/// One evaluation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub grad_steps: u64,
    pub success_full: f64,
    pub success_demo_inits: f64,
    pub reverse_progress: f64,
    pub mean_forward_score: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EventRow {
    pub env_steps: u64,
    pub kind: &'static str,
    pub demo: Option<usize>,
    pub start_step: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ForwardDumpRow {
    pub env_steps: u64,
    pub level_id: u64,
    pub score: u8,
    pub q: Option<f64>,
    pub last_sampled: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageEnd {
    /// The start scheduler reported every demonstration complete.
    Scheduler,
    /// The deterministic policy succeeded from every demonstration start.
    DemoEval,
    Budget,
    /// Stopped because full-distribution success reached the threshold.
    Solved,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageOutcome {
    pub end: StageEnd,
    /// Env steps consumed by the stage.
    pub env_steps: u64,
}

impl StageOutcome {
    pub fn complete(&self) -> bool {
        matches!(self.end, StageEnd::Scheduler | StageEnd::DemoEval)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub mode: String,
    pub seed: u64,
    pub env_steps: u64,
    pub eval_env_steps: u64,
    pub grad_steps: u64,
    pub stage1: Option<StageOutcome>,
    pub stage1_complete: Option<bool>,
    /// Env step at which stage 2 began.
    pub stage_switch_step: Option<u64>,
    pub final_success_full: f64,
    pub final_success_demo_inits: f64,
    /// First evaluation at or above the success threshold.
    pub first_success_env_step: Option<u64>,
    pub stopped_on_success: bool,
}

fn num(out: &mut String, v: f64) {
    if v.is_nan() {
        out.push_str("nan");
    } else {
        let _ = write!(out, "{v:.6}");
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub events: Vec<EventRow>,
    pub forward_dumps: Vec<ForwardDumpRow>,
}

impl RunMetrics {
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},", r.env_steps, r.grad_steps);
            for v in [
                r.success_full,
                r.success_demo_inits,
                r.reverse_progress,
                r.mean_forward_score,
            ] {
                num(&mut out, v);
                out.push(',');
            }
            let _ = writeln!(out, "{:.3}", r.wall_seconds);
        }
        out
    }

    pub fn events_csv(&self) -> String {
        let mut out = String::from("env_steps,kind,demo,start_step\n");
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.env_steps, e.kind, opt(e.demo), opt(e.start_step));
        }
        out
    }

    pub fn forward_csv(&self) -> String {
        let mut out = String::from("env_steps,level_id,score,q,last_sampled\n");
        for d in &self.forward_dumps {
            let _ = write!(out, "{},{},{},", d.env_steps, d.level_id, d.score);
            num(&mut out, d.q.unwrap_or(f64::NAN));
            let _ = writeln!(out, ",{}", d.last_sampled);
        }
        out
    }

    /// `metrics.csv`, `events.csv` and `forward_levels.csv` in `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("metrics.csv"), self.metrics_csv())?;
        std::fs::write(dir.join("events.csv"), self.events_csv())?;
        std::fs::write(dir.join("forward_levels.csv"), self.forward_csv())?;
        Ok(())
    }

    /// First evaluation whose full-distribution success reaches `threshold`.
    pub fn first_reaching(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.success_full >= threshold)
            .map(|r| r.env_steps)
    }
}
