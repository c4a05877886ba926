use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nvif_lab::env_gather::TaskConfig;
use nvif_lab::harness::{
    self, evaluate, Algorithm, EvalPolicy, ExperimentConfig, HarnessError, TrainOptions, BUNDLE_FILE,
};

#[derive(Parser)]
#[command(name = "nvif-lab", version, about = "Pre-train, train and evaluate NVIF policies on Gather tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the observation compressor on random-policy episodes.
    PretrainObs {
        #[arg(long)]
        config: PathBuf,
    },
    /// Pre-train the information-flow encoder.
    PretrainNvif {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one policy per configured seed.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured algorithm.
        #[arg(long)]
        algorithm: Option<String>,
        /// Continue from existing checkpoints.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a policy bundle, or `random` / `noop`. Without `--policy`,
    /// every seed of the configured experiment is evaluated.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: Option<String>,
        /// Preset to evaluate on instead of the configured task.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cross-evaluate policies on tasks and write the normalized matrix.
    Scalability {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated bundle paths.
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<PathBuf>,
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',', required = true)]
        tasks: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Play evaluation episodes and write them as JSON lines.
    ReplayDump {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        policy: String,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Defaults to `replay.jsonl` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn preset(name: &str) -> Result<TaskConfig, HarnessError> {
    TaskConfig::preset(name).map_err(|e| HarnessError::Config(vec![format!("task {name:?}: {e}")]))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::PretrainObs { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let history = harness::pretrain_obs(&cfg)?;
            for (i, e) in history.iter().enumerate() {
                writeln!(stdout, "epoch {:>3} recon {:.4} kl {:.4}", i + 1, e.recon, e.kl)?;
            }
        }
        Command::PretrainNvif { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            for e in harness::pretrain_nvif(&cfg)? {
                writeln!(
                    stdout,
                    "epoch {:>3} recon {:.4} kl {:.4} consistency {:.4}",
                    e.epoch, e.loss.recon, e.loss.kl, e.loss.consistency
                )?;
            }
        }
        Command::Train { config, algorithm, resume } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(name) = algorithm {
                cfg.algorithm = Algorithm::parse(&name)
                    .ok_or_else(|| HarnessError::Config(vec![format!("algorithm: unknown value {name:?}")]))?;
            }
            for (seed, metrics) in harness::train(&cfg, TrainOptions { resume, stop_after: None })? {
                if let Some(last) = metrics.last() {
                    writeln!(
                        stdout,
                        "seed {seed}: epoch {} return {:.3} steps {:.2} food {:.3}",
                        last.epoch, last.mean_return, last.mean_end_steps, last.food_eaten_frac
                    )?;
                } else {
                    writeln!(stdout, "seed {seed}: done")?;
                }
            }
        }
        Command::Eval { config, policy, task, episodes, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let task = match task {
                Some(name) => preset(&name)?,
                None => cfg.task.clone(),
            };
            let (episodes, seed) = (episodes.unwrap_or(cfg.eval.episodes), seed.unwrap_or(cfg.eval.seed));
            let policies: Vec<(String, EvalPolicy)> = match policy {
                Some(p) => vec![(p.clone(), EvalPolicy::parse(&p))],
                None => cfg
                    .seeds
                    .iter()
                    .map(|&s| {
                        let path = cfg.seed_dir(s).join(BUNDLE_FILE);
                        (path.display().to_string(), EvalPolicy::Bundle(path))
                    })
                    .collect(),
            };
            let mut reports = serde_json::Map::new();
            for (label, p) in policies {
                let r = evaluate(&p, &task, episodes, seed)?;
                writeln!(stdout, "{label}: {}", serde_json::to_string(&r)?)?;
                reports.insert(label, serde_json::to_value(r)?);
            }
            std::fs::create_dir_all(&cfg.output_dir)?;
            std::fs::write(cfg.output_dir.join("eval.json"), serde_json::to_string_pretty(&reports)?)?;
        }
        Command::Scalability { config, policies, tasks, episodes } => {
            let cfg = ExperimentConfig::load(&config)?;
            let tasks = tasks
                .iter()
                .map(|n| Ok((n.clone(), preset(n)?)))
                .collect::<Result<Vec<_>, HarnessError>>()?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let out = cfg.output_dir.join("matrix.csv");
            let m = harness::scalability(&policies, &tasks, episodes.unwrap_or(cfg.eval.episodes), cfg.eval.seed, &out)?;
            writeln!(stdout, "trained_on,{}", m.cols.join(","))?;
            for (label, row) in m.rows.iter().zip(&m.scores) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
                writeln!(stdout, "{label},{}", cells.join(","))?;
            }
        }
        Command::ReplayDump { config, policy, episodes, seed, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("replay.jsonl"));
            let r = harness::replay_dump(
                &EvalPolicy::parse(&policy),
                &cfg.task,
                episodes.unwrap_or(cfg.eval.episodes),
                seed.unwrap_or(cfg.eval.seed),
                &out,
            )?;
            writeln!(stdout, "{}: {}", out.display(), serde_json::to_string(&r)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            e.print().ok();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
