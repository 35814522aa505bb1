//! Command-line dispatcher: dataset generation, training, inference,
//! evaluation, the verification suite, and report re-emission.
//!
//! Exit codes: 0 ok, 2 usage, 3 config error, 4 I/O error,
//! 5 verification failure, 6 numeric abort. Every output directory gets
//! the effective config and seed for full provenance. `OFP_SEED` (or the
//! `--seed` flag, which wins) overrides every seed in the config; nothing
//! else reads the environment.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{load_config, write_effective_config, RunConfig, TaskConfig};
use crate::error::{Error, Result};
use crate::eval::{emit_report, policy_eval, run_verification_suite, EvalTask, Report};
use crate::net::{load_checkpoint, Condition};
use crate::sampler::{multi_step_sample, one_step_sample, TimeGrid};
use crate::tasks::{Dataset, Normalizer};
use crate::trainer::train;

#[derive(Parser, Debug)]
#[command(
    name = "ofp",
    version,
    about = "One-step flow policies: train, sample, evaluate, verify",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArgs {
    /// JSON config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set train.loss.lambda_g=0.1 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Override every seed in the config (beats OFP_SEED).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the task dataset (meta.json + data.csv).
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy; writes checkpoint.ofp and trainlog.csv.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Use a previously generated dataset directory instead of
        /// regenerating from the config.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Sample chunks from a checkpoint; writes samples.csv.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Function evaluations per chunk (1 = single jump).
        #[arg(long, default_value_t = 1)]
        nfe: usize,
        /// Number of chunks to sample.
        #[arg(long, default_value_t = 256)]
        n: usize,
    },
    /// Evaluate a checkpoint over the (NFE, warm) grid; writes report files.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated NFE budgets, e.g. 1,4,100.
        #[arg(long)]
        nfe: Option<String>,
        /// Comma-separated warm flags, e.g. on,off.
        #[arg(long)]
        warm: Option<String>,
        /// Rollout episodes per cell (receding-horizon tasks).
        #[arg(long)]
        episodes: Option<usize>,
        /// Samples per cell (distribution tasks).
        #[arg(long)]
        samples: Option<usize>,
        /// Include wall-clock columns (breaks byte-reproducible reports).
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run the verification oracles; exits 5 on any failure.
    Verify {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write verify_report.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit CSV (and JSON) from a stored report.json.
    Report {
        /// Existing report.json.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse argv and run. Returns the process exit code.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version render with code 0, usage errors with code 2.
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("OFP_SEED") {
        Ok(text) => text
            .parse::<u64>()
            .map(Some)
            .map_err(|e| Error::Config { path: "OFP_SEED".into(), msg: e.to_string() }),
        Err(_) => Ok(None),
    }
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut config = load_config(args.config.as_deref(), &args.set)?;
    if let Some(seed) = match args.seed {
        Some(s) => Some(s),
        None => env_seed()?,
    } {
        config.override_seed(seed);
    }
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = resolve_config(&config)?;
            let dataset = cfg.build_dataset()?;
            dataset.save(&out)?;
            write_effective_config(&cfg, &out)?;
            println!(
                "wrote {} demonstrations ({} rows) to {}",
                dataset.meta.n_demos,
                dataset.meta.n_rows,
                out.display()
            );
            Ok(0)
        }
        Command::Train { config, out, data } => {
            let mut cfg = resolve_config(&config)?;
            let dataset = match data {
                Some(dir) => Dataset::load(&dir)?,
                None => cfg.build_dataset()?,
            };
            std::fs::create_dir_all(&out)?;
            cfg.train.checkpoint_path = Some(out.join("checkpoint.ofp"));
            cfg.train.log_path = Some(out.join("trainlog.csv"));
            write_effective_config(&cfg, &out)?;
            let pairs = dataset.normalized_pairs();
            let output = train(&pairs, &cfg.net, &cfg.train)?;
            let last = output.log.records.last().expect("at least one step");
            println!(
                "trained {} steps; final loss {:.6}; checkpoint at {}",
                output.total_steps,
                last.loss_total,
                out.join("checkpoint.ofp").display()
            );
            Ok(0)
        }
        Command::Infer { config, checkpoint, out, nfe, n } => {
            let cfg = resolve_config(&config)?;
            let (net, _teacher) = load_checkpoint(&checkpoint)?;
            let dataset = cfg.build_dataset()?;
            let normalizer = Normalizer::from_meta(&dataset.meta);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.eval.seed);
            let len = net.config().action_len();
            let mut csv = String::new();
            let header: Vec<String> = (0..net.config().d_o)
                .map(|i| format!("o{i}"))
                .chain((0..len).map(|i| format!("a{i}")))
                .collect();
            csv.push_str(&header.join(","));
            csv.push('\n');
            for _ in 0..n {
                let obs = sample_observation(&cfg, &mut rng);
                let cond = Condition::real(obs.clone());
                let eps: Vec<f64> =
                    (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
                let sample = if nfe <= 1 {
                    one_step_sample(&net, &cond, &eps)?
                } else {
                    multi_step_sample(&net, &cond, &eps, &TimeGrid::uniform(nfe)?)?
                };
                let chunk = normalizer.from_unit(&sample.chunk);
                let row: Vec<String> =
                    obs.iter().chain(chunk.iter()).map(|v| format!("{v}")).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("samples.csv"), csv)?;
            write_effective_config(&cfg, &out)?;
            println!("wrote {n} samples at NFE={nfe} to {}", out.display());
            Ok(0)
        }
        Command::Eval { config, checkpoint, out, nfe, warm, episodes, samples, timing, data } => {
            let mut cfg = resolve_config(&config)?;
            if let Some(list) = nfe {
                cfg.eval.nfe_list = parse_nfe_list(&list)?;
            }
            if let Some(list) = warm {
                cfg.eval.warm = parse_warm_list(&list)?;
            }
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
            if let Some(s) = samples {
                cfg.eval.n_samples = s;
            }
            cfg.eval.include_timing = timing;
            let (net, _teacher) = load_checkpoint(&checkpoint)?;
            let dataset = match data {
                Some(dir) => Dataset::load(&dir)?,
                None => cfg.build_dataset()?,
            };
            let normalizer = Normalizer::from_meta(&dataset.meta);
            let task = match &cfg.task {
                TaskConfig::Gmm { .. } => EvalTask::Gmm(cfg.task.gmm_spec().expect("gmm")),
                TaskConfig::PointMass { env, .. } => EvalTask::PointMass(env.clone()),
            };
            let (report, scatter) = policy_eval(&net, &normalizer, &task, &cfg.eval)?;
            let files = emit_report(&report, &out, scatter.as_ref())?;
            write_effective_config(&cfg, &out)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            println!("{} cells evaluated", report.cells.len());
            Ok(0)
        }
        Command::Verify { config, out } => {
            let cfg = resolve_config(&config)?;
            let checks = run_verification_suite(cfg.eval.seed);
            let mut all_pass = true;
            for check in &checks {
                let status = if check.pass { "PASS" } else { "FAIL" };
                println!("[{status}] {}", check.name);
                for (k, v) in &check.measured {
                    println!("         {k} = {v:.3e}");
                }
                for f in &check.failures {
                    println!("         ! {f}");
                }
                all_pass &= check.pass;
            }
            if let Some(dir) = out {
                let mut report = Report::new(
                    "verify",
                    cfg.eval.seed,
                    crate::net::config_hash(&cfg),
                    Vec::new(),
                );
                report.checks = checks;
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("verify_report.json"), report.to_json()?)?;
                write_effective_config(&cfg, &dir)?;
            }
            if all_pass {
                println!("all verification checks passed");
                Ok(0)
            } else {
                Err(Error::VerificationFailed("one or more checks failed".into()))
            }
        }
        Command::Report { from, out } => {
            let report = Report::from_json(&std::fs::read_to_string(&from)?)?;
            let files = emit_report(&report, &out, None)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(0)
        }
    }
}

fn sample_observation<R: Rng>(cfg: &RunConfig, rng: &mut R) -> Vec<f64> {
    match &cfg.task {
        TaskConfig::Gmm { .. } => cfg.task.gmm_spec().expect("gmm").sample_condition(rng),
        TaskConfig::PointMass { env, .. } => {
            let start = env.sample_start(rng);
            vec![start[0], start[1], 0.0, 0.0]
        }
    }
}

fn parse_nfe_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|tok| {
            tok.trim().parse::<usize>().map_err(|e| Error::Config {
                path: "--nfe".into(),
                msg: format!("`{tok}`: {e}"),
            })
        })
        .collect()
}

fn parse_warm_list(text: &str) -> Result<Vec<bool>> {
    text.split(',')
        .map(|tok| match tok.trim() {
            "on" | "true" | "1" => Ok(true),
            "off" | "false" | "0" => Ok(false),
            other => Err(Error::Config {
                path: "--warm".into(),
                msg: format!("`{other}` is not one of on/off"),
            }),
        })
        .collect()
}
