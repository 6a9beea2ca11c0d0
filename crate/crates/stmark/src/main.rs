use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stmark::{run_from_file, Command};

#[derive(Parser)]
#[command(
    name = "stmark",
    version,
    about = "Marked spatio-temporal point pattern analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a catalog from a named preset model.
    Simulate(Common),
    /// Voronoi intensity estimate on a grid, with a mass audit.
    Intensity(Common),
    /// Marked inhomogeneous K-function surface.
    K(Common),
    /// Random-labelling permutation test.
    Test(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Root seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, a) = match cli.command {
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Intensity(a) => (Command::Intensity, a),
        Cmd::K(a) => (Command::K, a),
        Cmd::Test(a) => (Command::Test, a),
    };
    match run_from_file(cmd, &a.config, a.seed, a.out, a.threads) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
