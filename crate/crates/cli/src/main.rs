mod args;
mod commands;

use args::{Cli, Command};
use clap::Parser;
use std::process::ExitCode;

/// How a command ended, mapped onto the process exit status.
pub enum Outcome {
    Ok,
    /// Some pairs failed; the rest were processed.
    Partial(usize),
}

/// A failure before any work was done: bad flags, config or inputs.
#[derive(Debug)]
pub struct UsageError(pub anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for UsageError {
    fn from(e: E) -> Self {
        Self(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = commands::settings(&cli).and_then(|settings| {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = settings.workers {
            pool = pool.num_threads(n);
        }
        let pool = pool.build()?;
        pool.install(|| match &cli.command {
            Command::Synth(a) => commands::synth(a, &settings),
            Command::Detect(a) => commands::detect(a, &settings),
            Command::Eval(a) => commands::eval(a),
            Command::ListObjects(a) => commands::list_objects(a),
        })
    });
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Partial(n)) => {
            eprintln!("error: {n} pair(s) failed");
            ExitCode::from(1)
        }
        Err(UsageError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
