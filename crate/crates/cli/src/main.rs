use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use affdim::{run, Command, Invocation};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "affdim", version, about = "Affinity dimension and randomly perturbed self-affine attractors")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve for the affinity dimension.
    Dim(Common),
    /// Generate a perturbed attractor point cloud.
    Generate(Common),
    /// Estimate dimensions from a stored cloud.
    Estimate(Common),
    /// Run the tail, transversality, energy and covering checks.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "AFFDIM_THREADS")]
    threads: Option<usize>,
    /// Cloud CSV for `estimate`; overrides `estimation.cloud`.
    #[arg(long)]
    cloud: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, c) = match cli.command {
        Cmd::Dim(c) => (Command::Dim, c),
        Cmd::Generate(c) => (Command::Generate, c),
        Cmd::Estimate(c) => (Command::Estimate, c),
        Cmd::Verify(c) => (Command::Verify, c),
    };
    let inv = Invocation { config: c.config, out: c.out, seed: c.seed, threads: c.threads, cloud: c.cloud };
    let outcome = run(cmd, &inv);
    let _ = std::io::stdout().write_all(outcome.report.as_bytes());
    ExitCode::from(outcome.exit_code as u8)
}
