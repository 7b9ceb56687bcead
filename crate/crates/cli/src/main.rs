//! `olm`: explain text classifiers, compare explanation methods, and check axioms.

mod commands;
mod config;
mod dataset;
mod models;
mod pipeline;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use olm_core::render::HeatmapFormat;
use olm_core::Method;

use config::RunFlags;

#[derive(Parser)]
#[command(name = "olm", version, about = "Occlusion with language modeling for text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: RunFlags,
}

#[derive(Subcommand)]
enum Command {
    /// Explain every record; writes relevance JSON lines, traces and heatmaps
    Explain,
    /// Correlate two or more methods over the dataset
    Correlate,
    /// Welch's t-test between two label groups per aggregation
    Stats,
    /// Run the axiom suite on the bundled fixtures
    Axioms,
    /// Correlate target-unit relevance across sentence pairs
    PairAnalysis,
    /// Render heatmaps from an explanations file
    Render {
        /// explanations.jsonl written by `olm explain`
        #[arg(long)]
        input: PathBuf,
        /// html (files under --out) or ansi (stdout)
        #[arg(long, default_value = "html")]
        style: HeatmapFormat,
    },
    /// Serve --model and --lm over the wire protocol on stdin/stdout
    Serve,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_PARTIAL: u8 = 2;

fn run(cli: Cli) -> anyhow::Result<bool> {
    let occlusion = [Method::Olm, Method::Delete, Method::Unk];
    match cli.command {
        Command::Explain => commands::explain_cmd(&cli.flags.resolve("explain", &[Method::Olm])?),
        Command::Correlate => commands::correlate_cmd(&cli.flags.resolve("correlate", &occlusion)?),
        Command::Stats => commands::stats_cmd(&cli.flags.resolve("stats", &[Method::Olm])?),
        Command::Axioms => commands::axioms_cmd(&cli.flags.resolve("axioms", &Method::ALL)?),
        Command::PairAnalysis => commands::pair_analysis_cmd(&cli.flags.resolve("pair-analysis", &[Method::Olm])?),
        Command::Render { input, style } => commands::render_cmd(&input, style, cli.flags.out.as_deref()),
        Command::Serve => commands::serve_cmd(cli.flags.model.as_deref(), cli.flags.lm.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_FAILURE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
