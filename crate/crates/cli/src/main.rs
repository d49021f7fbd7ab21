use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use vse_cli::{execute, Command, Invocation};

/// Token-set mesh editing pipeline.
#[derive(Debug, Parser)]
#[command(name = "vse", version)]
struct Args {
    command: Command,
    /// JSON run manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest field override, e.g. `config.edit.n_steps=20`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = std::env::var("VSE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let inv = Invocation {
        command: Some(args.command),
        manifest: args.manifest,
        seed: args.seed,
        out: args.out,
        overrides: args.overrides,
    };
    match execute(&inv) {
        Ok(files) => {
            let mut stdout = std::io::stdout().lock();
            for f in files {
                if writeln!(stdout, "{}", f.display()).is_err() {
                    break;
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
