//! `abmil`: command-line workflow from slide images or feature bags to
//! cross-validated models, bootstrap metrics and attention heatmaps.

mod args;
mod cmd;
mod exit;

use std::fs::OpenOptions;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use args::{Cli, Command, GlobalArgs};

fn init_logging(global: &GlobalArgs) -> anyhow::Result<()> {
    let level = if global.quiet {
        log::LevelFilter::Error
    } else {
        match global.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    let mut builder = env_logger::Builder::new();
    builder.filter_level(level).parse_default_env();
    match &global.log_file {
        // timestamps only ever go to the log file, never into artifacts
        Some(path) => {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening log file {}", path.display()))?;
            builder.target(env_logger::Target::Pipe(Box::new(file)));
        }
        None => {
            builder.format_timestamp(None);
        }
    }
    builder.init();
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    init_logging(&cli.global)?;
    if cli.global.workers == 0 {
        return Err(exit::validation("--workers must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.workers)
        .build_global()
        .context("starting worker pool")?;
    let g = &cli.global;
    match cli.command {
        Command::Synth(a) => cmd::synth::run(g, a),
        Command::Segment(a) => cmd::images::segment(g, a),
        Command::Tile(a) => cmd::images::tile(g, a),
        Command::Train(a) => cmd::train::train(g, a),
        Command::Tune(a) => cmd::tune::run(g, a),
        Command::Eval(a) => cmd::eval::run(g, a),
        Command::Ensemble(a) => cmd::train::ensemble(g, a),
        Command::Heatmap(a) => cmd::heatmap::run(g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                exit::VALIDATION
            } else {
                exit::SUCCESS
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit::code_for(&err))
        }
    }
}
