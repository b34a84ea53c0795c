use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wsrm_bench::commands::*;
use wsrm_bench::{BenchError, Options, Result};

#[derive(Parser)]
#[command(name = "wsrm", about = "Weighted sum-rate maximization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset of instances.
    Gen(Options),
    /// Attach oracle labels to a dataset.
    Label(Options),
    /// Train an agent; writes the model to --output.
    Train(Options),
    /// Evaluate a trained model on a labeled dataset.
    Eval(Options),
    /// Compare BCD, multistart BCD and trained models.
    Compare(Options),
    /// Multistart BCD traces on the three-link example.
    Example1(Options),
    /// IP-BCD against the fixed suboptimal precoder.
    Beamform(Options),
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(o) => {
            let o = o.resolve()?;
            emit(o.output.as_deref(), &cmd_gen(&o)?)
        }
        Command::Label(o) => {
            let o = o.resolve()?;
            emit(o.output.as_deref(), &cmd_label(&o)?)
        }
        Command::Train(o) => {
            let o = o.resolve()?;
            let out = o.output.clone().ok_or_else(|| BenchError::Config("--output is required".into()))?;
            let t = cmd_train(&o)?;
            std::fs::write(&out, &t.model_json)?;
            if let Some(log) = &o.log {
                std::fs::write(log, &t.log_csv)?;
            }
            if let Some(test) = &o.test_input {
                let mut e = o.clone();
                e.input = Some(test.clone());
                e.checkpoint = vec![out.display().to_string()];
                emit(o.summary.as_deref(), &cmd_eval(&e)?)?;
            }
            Ok(())
        }
        Command::Eval(o) => {
            let o = o.resolve()?;
            emit(o.output.as_deref(), &cmd_eval(&o)?)
        }
        Command::Compare(o) => {
            let o = o.resolve()?;
            let c = cmd_compare(&o)?;
            emit(o.output.as_deref(), &c.rows_csv)?;
            match &o.summary {
                Some(p) => std::fs::write(p, &c.summary_csv)?,
                None => eprint!("{}", c.summary_csv),
            }
            Ok(())
        }
        Command::Example1(o) => {
            let o = o.resolve()?;
            emit(o.output.as_deref(), &cmd_example1(&o)?)
        }
        Command::Beamform(o) => {
            let o = o.resolve()?;
            emit(o.output.as_deref(), &cmd_beamform(&o)?)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
