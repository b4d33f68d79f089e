use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jointens::diagnostics::{detect_dominance, robustness_curve, write_dominance_csv, write_robustness_csv};
use jointens::jointtrain::{evaluate, EnsembleCheckpoint, EnsembleModel, TrainingTrace};
use jointens::net::param_count;
use jointens::verify::run_identity_suite;
use jointens::{Error, ErrorClass, Result};
use jointens_cli::sweep::{prepare_datasets, write_atomic, write_json};
use jointens_cli::{run_one, run_sweep, ExperimentConfig, RunKey, SweepStatus};

/// Joint training of neural-network ensembles.
///
/// Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
/// failure. JOINTENS_OUTPUT_DIR replaces the configured output directory.
#[derive(Parser)]
#[command(name = "jointens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one ensemble and write its trace and checkpoint.
    Train {
        #[command(flatten)]
        common: Overrides,
        /// λ to train at; defaults to the first configured value.
        #[arg(long)]
        lambda: Option<f64>,
        /// Seed for the split, initialization and shuffling; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Learning rate; defaults to the first configured rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Run every λ and seed in the config with learning-rate selection.
    Sweep {
        #[command(flatten)]
        common: Overrides,
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_delimiter = ',')]
        learning_rates: Option<Vec<f64>>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Report test error and divergence of a checkpoint.
    Evaluate {
        #[command(flatten)]
        target: CheckpointArgs,
    },
    /// Test error when only a random subset of members votes.
    Robustness {
        #[command(flatten)]
        target: CheckpointArgs,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        keep: Option<Vec<usize>>,
    },
    /// Probe a saved trace for a member that dominates early.
    Dominance {
        /// trace.json written by train or sweep.
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = jointens::diagnostics::DEFAULT_PROBE_EPOCH)]
        probe_epoch: usize,
        #[arg(long, default_value_t = jointens::diagnostics::DEFAULT_DOMINANCE_THRESHOLD)]
        threshold: f64,
    },
    /// Check the loss, gradient and curvature identities on random instances.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        cases: usize,
    },
    /// Parameter count of one member and of the whole ensemble.
    ParamCount {
        #[arg(long)]
        input: usize,
        #[arg(long)]
        output: usize,
        #[arg(long, value_delimiter = ',')]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        members: usize,
    },
}

/// Flags that replace config-file values.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    members: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

impl Overrides {
    fn load(&self) -> Result<(ExperimentConfig, String)> {
        let (mut cfg, text) = ExperimentConfig::from_file(&self.config)?;
        cfg.apply_env();
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.members {
            cfg.members = v;
            cfg.keep_counts = None;
        }
        if let Some(v) = &self.hidden {
            cfg.hidden = v.clone();
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        cfg.resolve();
        Ok((cfg, text))
    }
}

#[derive(Args)]
struct CheckpointArgs {
    /// Config describing the data the checkpoint was trained on.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split seed used in training; defaults to the first configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl CheckpointArgs {
    fn load(&self) -> Result<(ExperimentConfig, EnsembleModel, jointens::data::DatasetBundle, u64)> {
        let (mut cfg, _) = ExperimentConfig::from_file(&self.config)?;
        let seed = first(self.seed, &cfg.seeds, "seed")?;
        cfg.seeds = vec![seed];
        let data = prepare_datasets(&cfg)?.pop().map(|(_, d)| d).ok_or(Error::Empty("datasets"))?;
        let ckpt: EnsembleCheckpoint = serde_json::from_str(&std::fs::read_to_string(&self.checkpoint)?)?;
        Ok((cfg, ckpt.restore()?, data, seed))
    }
}

fn first<T: Copy>(flag: Option<T>, list: &[T], what: &str) -> Result<T> {
    flag.or_else(|| list.first().copied())
        .ok_or_else(|| Error::InvalidConfig(format!("no {what} configured")))
}

fn stdout_csv(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));
    Ok(())
}

fn train_cmd(common: &Overrides, lambda: Option<f64>, seed: Option<u64>, lr: Option<f64>) -> Result<()> {
    let (mut cfg, text) = common.load()?;
    let key = RunKey {
        lambda: first(lambda, &cfg.lambdas, "lambda")?,
        learning_rate: first(lr, cfg.learning_rates(), "learning rate")?,
        seed: first(seed, &cfg.seeds, "seed")?,
    };
    cfg.lambdas = vec![key.lambda];
    cfg.learning_rates = Some(vec![key.learning_rate]);
    cfg.seeds = vec![key.seed];
    cfg.validate()?;
    let data = prepare_datasets(&cfg)?.pop().map(|(_, d)| d).ok_or(Error::Empty("datasets"))?;
    let run = run_one(&cfg, &data, key)?;
    let out = &cfg.output_dir;
    run.write(out)?;
    run.write_checkpoint(&out.join("checkpoint.json"))?;
    write_atomic(&out.join("config.json"), text.as_bytes())?;
    write_json(&out.join("resolved_config.json"), &cfg)?;
    println!(
        "lambda={} lr={} seed={}: test error {:.4}, kept epoch {}, wrote {}",
        key.lambda,
        key.learning_rate,
        key.seed,
        run.test.error_rate,
        run.trace.best_epoch,
        out.display()
    );
    Ok(())
}

fn sweep_cmd(
    common: &Overrides,
    lambdas: &Option<Vec<f64>>,
    seeds: &Option<Vec<u64>>,
    learning_rates: &Option<Vec<f64>>,
    parallelism: Option<usize>,
) -> Result<()> {
    let (mut cfg, text) = common.load()?;
    if let Some(v) = lambdas {
        cfg.lambdas = v.clone();
    }
    if let Some(v) = seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = learning_rates {
        cfg.learning_rates = Some(v.clone());
    }
    if let Some(v) = parallelism {
        cfg.parallelism = v;
    }
    let status = run_sweep(&cfg, Some(&text))?;
    let m = status.manifest();
    if let SweepStatus::UpToDate(_) = status {
        println!("{} is up to date", cfg.output_dir.display());
    }
    for c in &m.choices {
        match c.learning_rate {
            Some(lr) => println!("lambda={}: lr {} (selection error {:.4})", c.lambda, lr, c.selection_error),
            None => println!("lambda={}: every run failed", c.lambda),
        }
    }
    for f in &m.failures {
        eprintln!("failed {}: {}", f.key.dir_name(), f.error);
    }
    Ok(())
}

fn dominance_cmd(trace: &Path, probe_epoch: usize, threshold: f64) -> Result<()> {
    let trace: TrainingTrace = serde_json::from_str(&std::fs::read_to_string(trace)?)?;
    let report = detect_dominance(&trace, probe_epoch, threshold)?;
    stdout_csv(|b| write_dominance_csv(&report, b))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train { common, lambda, seed, lr } => train_cmd(common, *lambda, *seed, *lr),
        Command::Sweep {
            common,
            lambdas,
            seeds,
            learning_rates,
            parallelism,
        } => sweep_cmd(common, lambdas, seeds, learning_rates, *parallelism),
        Command::Evaluate { target } => {
            let (_, model, data, _) = target.load()?;
            println!("{}", serde_json::to_string_pretty(&evaluate(&model, &data.test)?)?);
            Ok(())
        }
        Command::Robustness { target, repeats, keep } => {
            let (cfg, model, data, seed) = target.load()?;
            let keep = keep.clone().unwrap_or_else(|| (1..=model.len()).collect());
            let curve = robustness_curve(&model, &data.test, &keep, repeats.unwrap_or(cfg.robustness_repeats), seed)?;
            stdout_csv(|b| write_robustness_csv(&curve, b))
        }
        Command::Dominance {
            trace,
            probe_epoch,
            threshold,
        } => dominance_cmd(trace, *probe_epoch, *threshold),
        Command::Verify { seed, cases } => {
            let report = run_identity_suite(*seed, *cases)?;
            println!("{report}");
            if report.all_passed() {
                Ok(())
            } else {
                Err(Error::Undefined("identity checks failed".into()))
            }
        }
        Command::ParamCount {
            input,
            output,
            hidden,
            members,
        } => {
            if *input == 0 || *output == 0 || *members == 0 || hidden.contains(&0) {
                return Err(Error::InvalidConfig("dimensions must be positive".into()));
            }
            let per = param_count(&jointens::net::mlp_specs(*input, hidden, *output));
            println!("member {per}");
            println!("ensemble {}", per * members);
            Ok(())
        }
    }
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
