//! `vcl`: synthetic-data generation, training, evaluation and export for
//! decoupled static/dynamic video concept learning.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vcl_cli::commands::{self, evalcmd, export, synth, traincmd};
use vcl_cli::config::ExperimentConfig;
use vcl_cli::exec::Threads;

#[derive(Parser)]
#[command(name = "vcl", version, about = "static/dynamic video concept learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic labeled corpus to a dataset directory.
    SynthData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Pretrain on triplets; writes metrics.jsonl and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Omit wall-clock fields from logs so equal seeds give
        /// byte-identical artifacts.
        #[arg(long)]
        deterministic: bool,
        /// Worker threads for the conv kernels (default: all cores, max 8).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Evaluate a checkpoint: linear probe, retrieval, code heatmaps or
    /// attention overlays.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        task: String,
        /// Feature source tag: v, q_v, q_v_s, q_v_d, f_v, f_v_s, f_v_d.
        #[arg(long, default_value = "v")]
        source: String,
        /// Label kind for probe/retrieval: static, dynamic or action.
        #[arg(long, default_value = "action")]
        label: String,
        /// Code slice for heatmaps: static or dynamic.
        #[arg(long, default_value = "static")]
        slice: String,
        /// Dataset override: "synth" or a dataset directory (defaults to the
        /// checkpoint's training source).
        #[arg(long)]
        data: Option<String>,
        /// Number of clips for attention overlays.
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Dump concept codes, features or attention maps as array files.
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        what: String,
        #[arg(long, default_value = "v")]
        source: String,
        #[arg(long)]
        data: Option<String>,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn executor(threads: Option<usize>) -> Threads {
    match threads {
        Some(n) => Threads::new(n),
        None => Threads::auto(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), String> = match cli.command {
        Command::SynthData { config, out, seed } => ExperimentConfig::load(&config)
            .map_err(|e| e.to_string())
            .and_then(|cfg| synth::run(&cfg, &commands::resolve_out_dir(&out), seed)),
        Command::Train { config, out, seed, deterministic, threads } => {
            ExperimentConfig::load(&config).map_err(|e| e.to_string()).and_then(|cfg| {
                traincmd::run(
                    &cfg,
                    &commands::resolve_out_dir(&out),
                    &traincmd::TrainArgs { seed, deterministic },
                    &executor(threads),
                )
            })
        }
        Command::Eval { checkpoint, task, source, label, slice, data, count, out, threads } => {
            evalcmd::run(
                &checkpoint,
                &commands::resolve_out_dir(&out),
                &evalcmd::EvalArgs { task, source, label, slice, data, count },
                &executor(threads),
            )
        }
        Command::Export { checkpoint, what, source, data, count, out, threads } => export::run(
            &checkpoint,
            &commands::resolve_out_dir(&out),
            &export::ExportArgs { what, source, data, count },
            &executor(threads),
        ),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
