use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rfcl::demo::save_demos;
use rfcl::envs::{generate_dataset, PointMaze, ResettableEnv};
use rfcl::golden::{env_trace, forward_trace, reverse_trace};
use rfcl::rng::{streams, RngStream};
use rfcl::trainer::{
    demo_starts, evaluate, format_table, heatmap, level_starts, prepare_run, run_config, run_variant, summarize,
    Mode, Precision, ReverseVariant, RunConfig,
};
use rfcl::{Learner, Scalar};

#[derive(Parser)]
#[command(name = "rfcl", version, about = "Reverse-forward curriculum learning on point mazes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// rfcl, reverse_only, forward_only, none, uniform_reset or global_reverse.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Demonstration container to train from.
    #[arg(long, global = true)]
    demos: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Threads stepping environments.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted demonstrations into `<out>/demos.rfcl`.
    DemoGen {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train and write metrics and checkpoints.
    Train,
    /// Evaluate a checkpoint on the initial-state distribution and demo starts.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Per-cell success rates as `<prefix>.csv` and `<prefix>.pgm`.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output prefix, relative to `--out`.
        #[arg(long, default_value = "heatmap")]
        prefix: String,
        #[arg(long, default_value_t = 20)]
        episodes_per_cell: usize,
    },
    /// Stage-1 comparison of start-state strategies.
    AblateReverse {
        #[arg(long, value_delimiter = ',', default_value = "per_demo+dynamic,per_demo-dynamic,global,uniform")]
        variants: Vec<ReverseVariant>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
    },
    /// Reference call sequences for the schedulers and the environment.
    Trace {
        #[arg(long, default_value_t = 1000)]
        calls: usize,
        #[arg(long, default_value_t = 100)]
        env_steps: usize,
        /// Success probability of frontier episodes in the reverse trace.
        #[arg(long, default_value_t = 0.7)]
        p_success: f64,
    },
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.trainer.seed = seed;
    }
    if let Some(mode) = common.mode {
        cfg.trainer.mode = mode;
    }
    if let Some(demos) = &common.demos {
        cfg.demos.path = Some(demos.clone());
    }
    if let Some(workers) = common.workers {
        cfg.trainer.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn demo_gen(cfg: &RunConfig, count: Option<usize>, out: &Path) -> Result<()> {
    let maze = PointMaze::new(cfg.env.clone())?;
    let count = count.unwrap_or(cfg.demos.count);
    let mut rng = RngStream::new(cfg.trainer.seed, streams::DEMOS);
    let (ds, cells) = generate_dataset(&maze, count, &cfg.demos.generator, &mut rng)?;
    let path = out.join("demos.rfcl");
    save_demos(&ds, &path)?;
    for (i, (t, cell)) in ds.trajectories.iter().zip(&cells).enumerate() {
        println!("demo {i}: start cell {cell:?}, {} steps, success {}", t.len(), t.success);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (summary, _) = run_config(cfg, Some(out))?;
    write_json(&out.join("summary.json"), &summary)?;
    if let Some(step) = summary.stage_switch_step {
        println!("stage switch at env step {step}");
    }
    println!(
        "{} env steps, {} gradient steps, final success {:.3} (demo starts {:.3})",
        summary.env_steps, summary.grad_steps, summary.final_success_full, summary.final_success_demo_inits
    );
    Ok(())
}

fn load_learner<T: Scalar>(path: &Path, env: &PointMaze) -> Result<Learner<T>> {
    let learner = Learner::<T>::load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    if learner.state_dim() != env.state_dim() || learner.action_dim() != env.action_dim() {
        bail!(rfcl::Error::DimMismatch {
            what: "checkpoint state and action dims",
            expected: env.state_dim() + env.action_dim(),
            found: learner.state_dim() + learner.action_dim(),
        });
    }
    Ok(learner)
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    episodes: usize,
    success_full: f64,
    success_demo_inits: f64,
}

fn eval<T: Scalar>(cfg: &RunConfig, checkpoint: &Path, episodes: Option<usize>, out: &Path) -> Result<()> {
    let (env, demos, scale) = prepare_run(cfg)?;
    let learner = load_learner::<T>(checkpoint, &env)?;
    let episodes = episodes.unwrap_or(cfg.trainer.eval_episodes);
    let starts = level_starts(episodes, &mut RngStream::new(cfg.trainer.seed, streams::EVAL));
    let full = evaluate(&learner, &env, &starts, &scale, None)?;
    let demo = evaluate(&learner, &env, &demo_starts(&demos), &scale, None)?;
    let report = EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        episodes,
        success_full: full.success_rate(),
        success_demo_inits: demo.success_rate(),
    };
    write_json(&out.join("eval.json"), &report)?;
    println!(
        "success {:.3} over {} episodes, demo starts {:.3}",
        report.success_full, episodes, report.success_demo_inits
    );
    Ok(())
}

fn heatmap_cmd<T: Scalar>(
    cfg: &RunConfig,
    checkpoint: &Path,
    prefix: &str,
    episodes_per_cell: usize,
    out: &Path,
) -> Result<()> {
    let (env, _, scale) = prepare_run(cfg)?;
    let learner = load_learner::<T>(checkpoint, &env)?;
    let mut rng = RngStream::new(cfg.trainer.seed, streams::EVAL);
    let map = heatmap(&learner, &env, episodes_per_cell, &scale, &mut rng)?;
    let base = out.join(prefix);
    let csv = base.with_extension("csv");
    let pgm = base.with_extension("pgm");
    fs::write(&csv, map.to_csv())?;
    fs::write(&pgm, map.to_pgm())?;
    println!("wrote {} and {}", csv.display(), pgm.display());
    Ok(())
}

fn ablate(cfg: &RunConfig, variants: &[ReverseVariant], seeds: &[u64], out: &Path) -> Result<()> {
    let mut runs = Vec::new();
    for &v in variants {
        for &seed in seeds {
            let run = run_variant(cfg, v, seed)?;
            log::info!("{} seed {seed}: {:?} {:?}", v.name(), run.end, run.completion_steps);
            runs.push(run);
        }
    }
    let rows = summarize(&runs, variants, cfg.trainer.stage1_budget);
    write_json(&out.join("ablation_runs.json"), &runs)?;
    write_json(&out.join("ablation.json"), &rows)?;
    let table = format_table(&rows);
    fs::write(out.join("ablation.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn trace(cfg: &RunConfig, calls: usize, env_steps: usize, p_success: f64, out: &Path) -> Result<()> {
    let (env, demos, _) = prepare_run(cfg)?;
    let seed = cfg.trainer.seed;
    let reverse = reverse_trace(cfg.reverse.clone(), &demos, env.horizon(), seed, calls, p_success)?;
    let (forward, scores) = forward_trace(cfg.forward.clone(), &demos.successful(), seed, calls)?;
    let rollout = env_trace(&env, seed, env_steps)?;
    write_json(&out.join("trace_reverse.json"), &reverse)?;
    write_json(&out.join("trace_forward.json"), &serde_json::json!({ "calls": forward, "final_scores": scores }))?;
    write_json(&out.join("trace_env.json"), &rollout)?;
    println!(
        "wrote {} reverse calls, {} forward calls, {} env steps to {}",
        reverse.len(),
        calls,
        env_steps,
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli.common)?;
    let out = cli.common.out.as_path();
    prepare_out(&cfg, out)?;
    let f64_run = cfg.trainer.precision == Precision::F64;
    match cli.command {
        Command::DemoGen { count } => demo_gen(&cfg, count, out),
        Command::Train => train(&cfg, out),
        Command::Eval { checkpoint, episodes } if f64_run => eval::<f64>(&cfg, &checkpoint, episodes, out),
        Command::Eval { checkpoint, episodes } => eval::<f32>(&cfg, &checkpoint, episodes, out),
        Command::Heatmap {
            checkpoint,
            prefix,
            episodes_per_cell,
        } if f64_run => heatmap_cmd::<f64>(&cfg, &checkpoint, &prefix, episodes_per_cell, out),
        Command::Heatmap {
            checkpoint,
            prefix,
            episodes_per_cell,
        } => heatmap_cmd::<f32>(&cfg, &checkpoint, &prefix, episodes_per_cell, out),
        Command::AblateReverse { variants, seeds } => ablate(&cfg, &variants, &seeds, out),
        Command::Trace {
            calls,
            env_steps,
            p_success,
        } => trace(&cfg, calls, env_steps, p_success, out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RFCL_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match e.downcast_ref::<rfcl::Error>() {
                Some(inner) => eprintln!("error [{}]: {e:#}", inner.code()),
                None => eprintln!("error: {e:#}"),
            }
            ExitCode::FAILURE
        }
    }
}
