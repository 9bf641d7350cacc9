//! `metagree`: train, evaluate and inspect gradient-agreement meta-learners.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 numeric failure.

mod commands;
mod experiment;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "metagree", version, about)]
struct Cli {
    /// Worker threads for per-task work (default: all cores).
    #[arg(long, global = true, env = "METAGREE_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Meta-train from an experiment file.
    Train {
        config: PathBuf,
        /// Output directory (default: the file's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint with a matching network.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Meta-test a checkpoint on held-out tasks.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        #[arg(long)]
        n_tasks: Option<usize>,
        /// Seed of the held-out task stream.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Agreement weights for a set of task update vectors (CSV rows or a JSON
    /// array of arrays).
    Weights {
        gradients: PathBuf,
        #[arg(long, default_value_t = metagree::agreement::DEFAULT_EPS)]
        eps: f64,
    },
    /// Export before/after adaptation curves for one sine task.
    Curves {
        checkpoint: PathBuf,
        /// Task as `amplitude,phase`; sampled from --seed when absent.
        #[arg(long, value_parser = commands::parse_task)]
        task: Option<metagree::tasks::SineTask>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Curve CSV path; support points go next to it as `<stem>_support.csv`.
        #[arg(long, default_value = "curves.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 201)]
        resolution: usize,
    },
    /// Train and meta-test several experiment files over several seeds.
    Compare {
        #[arg(required = true, num_args = 2..)]
        configs: Vec<PathBuf>,
        /// Comma-separated training seeds (default: first file's eval.seeds).
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    let cli = Cli::parse();

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Train {
            config,
            out,
            resume,
        } => commands::train(&config, out, resume),
        Command::Eval {
            checkpoint,
            config,
            n_tasks,
            seed,
            out,
        } => commands::eval(&checkpoint, &config, n_tasks, seed, out),
        Command::Weights { gradients, eps } => commands::weights(&gradients, eps),
        Command::Curves {
            checkpoint,
            task,
            seed,
            out,
            resolution,
        } => commands::curves(&checkpoint, task, seed, &out, resolution),
        Command::Compare {
            configs,
            seeds,
            out,
        } => commands::compare(&configs, seeds, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error());
            ExitCode::from(failure.code())
        }
    }
}
