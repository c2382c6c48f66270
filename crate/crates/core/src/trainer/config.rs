use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::envs::{DemoGenConfig, MazeSpec};
use crate::error::{Error, Result};
use crate::forward::ForwardConfig;
use crate::learner::LearnerConfig;
use crate::reverse::ReverseConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Per-demo reverse curriculum, then prioritized forward curriculum.
    Rfcl,
    /// Reverse curriculum, then uniform initial states.
    ReverseOnly,
    /// Forward curriculum from scratch with demonstrations offline.
    ForwardOnly,
    /// Uniform initial states, no demonstrations anywhere.
    None,
    /// Stage 1 resets uniformly along demonstrations.
    UniformReset,
    /// Stage 1 uses one shared reverse offset for all demonstrations.
    GlobalReverse,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::Rfcl,
        Mode::ReverseOnly,
        Mode::ForwardOnly,
        Mode::None,
        Mode::UniformReset,
        Mode::GlobalReverse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Rfcl => "rfcl",
            Mode::ReverseOnly => "reverse_only",
            Mode::ForwardOnly => "forward_only",
            Mode::None => "none",
            Mode::UniformReset => "uniform_reset",
            Mode::GlobalReverse => "global_reverse",
        }
    }

    pub fn has_stage1(self) -> bool {
        !matches!(self, Mode::ForwardOnly | Mode::None)
    }

    pub fn uses_demos(self) -> bool {
        self != Mode::None
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("trainer.mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemosConfig {
    /// Demo container to load. Demos are generated in-process when absent.
    pub path: Option<PathBuf>,
    /// Number of demonstrations used for training.
    pub count: usize,
    /// Scale actions to this multiple of the largest demo action magnitude.
    pub action_rescale: Option<f64>,
    pub generator: DemoGenConfig,
}

impl Default for DemosConfig {
    fn default() -> Self {
        Self {
            path: None,
            count: 1,
            action_rescale: None,
            generator: DemoGenConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub seed: u64,
    pub stage1_budget: u64,
    pub stage2_budget: u64,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Environments stepped per rollout burst.
    pub num_envs: usize,
    /// Steps taken by every environment before the learner updates.
    pub steps_per_env: usize,
    /// Threads stepping environments; 1 is fully sequential.
    pub workers: usize,
    pub precision: Precision,
    /// Success rate reported as the "solved" threshold.
    pub success_threshold: f64,
    /// End the run at the first evaluation reaching `success_threshold`.
    pub stop_on_success: bool,
    /// Also end stage 1 once the deterministic policy succeeds from every
    /// demonstration's initial state, checked at this env-step interval.
    pub demo_eval_interval: Option<u64>,
    /// Write elapsed seconds into the metrics CSV; off gives byte-identical files.
    pub record_wall_time: bool,
    /// Env-step interval between forward-curriculum level dumps.
    pub forward_dump_interval: Option<u64>,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Rfcl,
            seed: 0,
            stage1_budget: 150_000,
            stage2_budget: 500_000,
            eval_interval: 10_000,
            eval_episodes: 50,
            num_envs: 1,
            steps_per_env: 1,
            workers: 1,
            precision: Precision::F32,
            success_threshold: 0.8,
            stop_on_success: false,
            demo_eval_interval: None,
            record_wall_time: true,
            forward_dump_interval: Some(50_000),
        }
    }
}

/// Everything a training run depends on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: MazeSpec,
    pub demos: DemosConfig,
    pub learner: LearnerConfig,
    pub reverse: ReverseConfig,
    pub forward: ForwardConfig,
    pub trainer: TrainerConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let key = e
                .span()
                .and_then(|span| key_at(text, span.start))
                .unwrap_or_else(|| "<config>".to_string());
            Error::config(key, e.message().trim().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.learner.validate()?;
        self.reverse.validate()?;
        self.forward.validate()?;
        crate::envs::PointMaze::new(self.env.clone())?;
        let t = &self.trainer;
        let bad = |k: &str, m: &str| Err(Error::config(format!("trainer.{k}"), m));
        if t.stage1_budget == 0 {
            return bad("stage1_budget", "must be positive");
        }
        if t.stage2_budget == 0 {
            return bad("stage2_budget", "must be positive");
        }
        if t.eval_interval == 0 {
            return bad("eval_interval", "must be positive");
        }
        if t.eval_episodes == 0 {
            return bad("eval_episodes", "must be at least 1");
        }
        if t.num_envs == 0 {
            return bad("num_envs", "must be at least 1");
        }
        if t.steps_per_env == 0 {
            return bad("steps_per_env", "must be at least 1");
        }
        if t.workers == 0 {
            return bad("workers", "must be at least 1");
        }
        if !(0.0..=1.0).contains(&t.success_threshold) {
            return bad("success_threshold", "must lie in [0, 1]");
        }
        if t.demo_eval_interval == Some(0) {
            return bad("demo_eval_interval", "must be positive");
        }
        if t.forward_dump_interval == Some(0) {
            return bad("forward_dump_interval", "must be positive");
        }
        if self.demos.count == 0 {
            return Err(Error::config("demos.count", "must be at least 1"));
        }
        if let Some(f) = self.demos.action_rescale {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::config("demos.action_rescale", "must be positive"));
            }
        }
        if self.demos.generator.noise_sigma < 0.0 {
            return Err(Error::config("demos.generator.noise_sigma", "must be non-negative"));
        }
        Ok(())
    }

    /// Total interaction budget of the run.
    pub fn total_budget(&self) -> u64 {
        self.trainer.stage1_budget + self.trainer.stage2_budget
    }
}

/// Dotted key of the assignment on the line containing byte `offset`.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let offset = offset.min(text.len());
    let mut section = String::new();
    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let end = line_start + line.len();
        let trimmed = line.trim();
        if trimmed.starts_with('[') {
            section = trimmed.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if offset < end || end == text.len() {
            let lhs = trimmed.split('=').next()?.trim();
            if lhs.is_empty() || lhs.starts_with('[') {
                return (!section.is_empty()).then_some(section);
            }
            return Some(if section.is_empty() {
                lhs.to_string()
            } else {
                format!("{section}.{lhs}")
            });
        }
        line_start = end;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_identity() {
        let mut cfg = RunConfig::default();
        cfg.trainer.mode = Mode::GlobalReverse;
        cfg.demos.path = Some("demos.bin".into());
        cfg.learner.target_entropy = Some(-1.5);
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_toml(&text).unwrap().to_toml(), text);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_rejected_with_name() {
        match RunConfig::from_toml("[reverse]\ndelta = 4\nstep_size = 2\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "reverse.step_size"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_value_names_key() {
        match RunConfig::from_toml("[reverse]\ndelta = 0\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "reverse.delta"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml("[env]\n\n[reverse]\nm = 3\ndelta = -1\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "reverse.delta"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml("[trainer]\nstage2_budget = 0\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "trainer.stage2_budget"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn modes_parse_by_name() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("reverse".parse::<Mode>().is_err());
    }
}
