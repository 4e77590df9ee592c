use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vitbench::commands::{self, Command, Options};
use vitbench::exec::WORKERS_ENV;
use vitbench::synthetic::{example_config, write_tree, SyntheticSpec};
use vitbench::Error;

#[derive(Parser)]
#[command(name = "vitbench", version, about = "Mini Vision Transformer experiment harness for binary cytology classification")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `train.hyper.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Scan the dataset and write the manifest and fold plan.
    Prepare(RunArgs),
    /// Cross-validate each augmentation strategy.
    AugmentEval(RunArgs),
    /// Class weights and cross-validation for each multiplier case.
    WeightEval(RunArgs),
    /// Cross-validate every batch size × learning rate × epochs cell.
    Grid(RunArgs),
    /// Replicate the named configurations and compare them pairwise.
    Replicate(RunArgs),
    /// Grad-CAM overlays and focus scores for validation images.
    Cam(RunArgs),
    /// Write a small synthetic image tree and a matching config.
    MakeSynthetic {
        /// Directory to create; receives `images/` and `config.json`.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        per_class: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run_cmd(cmd: Command, a: RunArgs) -> Result<(), Error> {
    let opts = Options { config: a.config, out: a.out, seed: a.seed, workers: a.workers };
    let outcome = commands::run(cmd, &opts)?;
    let written = outcome.manifest.commands.last().map_or(0, |c| c.files.len());
    println!("{}: wrote {written} files to {}", cmd.name(), outcome.out_dir.display());
    for o in &outcome.orphans {
        eprintln!("warning: {o} is not listed in the run manifest");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Prepare(a) => run_cmd(Command::Prepare, a),
        Cmd::AugmentEval(a) => run_cmd(Command::AugmentEval, a),
        Cmd::WeightEval(a) => run_cmd(Command::WeightEval, a),
        Cmd::Grid(a) => run_cmd(Command::Grid, a),
        Cmd::Replicate(a) => run_cmd(Command::Replicate, a),
        Cmd::Cam(a) => run_cmd(Command::Cam, a),
        Cmd::MakeSynthetic { out, per_class, size, seed } => (|| {
            if size < 8 || size % 4 != 0 {
                return Err(Error::Schema { path: "--size".into(), field: "size".into(), message: "must be a multiple of 4, at least 8".into() });
            }
            let spec = SyntheticSpec { per_class, size, seed, ..SyntheticSpec::default() };
            let n = write_tree(&out.join("images"), &spec)?;
            let path = out.join("config.json");
            let mut text = serde_json::to_string_pretty(&example_config("images", size))?;
            text.push('\n');
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            println!("wrote {n} images and {}", path.display());
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
