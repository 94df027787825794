//! `wosync`: command-line client for a write-only oblivious backend.

mod bench;
mod daemon;
mod fsops;
mod keys;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "wosync", version, about = "Write-only oblivious file synchronization")]
struct Cli {
    /// Configuration file of `key=value` lines.
    #[arg(long, global = true, default_value = "wosync.conf")]
    config: PathBuf,
    /// Environment variable holding the passphrase.
    #[arg(long, global = true, default_value = "WOSYNC_PASSPHRASE")]
    passphrase_env: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Format a new backend directory and write the config file.
    Init(fsops::InitArgs),
    /// Copy a local file into the filesystem and wait until it is synced.
    Put { src: PathBuf, dest: String },
    /// Copy a file out of the filesystem.
    Get { src: String, dest: PathBuf },
    /// List a directory.
    Ls {
        #[arg(default_value = "/")]
        path: String,
    },
    /// Delete a file or an empty directory.
    Rm { path: String },
    /// Truncate or extend a file.
    Resize { path: String, bytes: u64 },
    /// Run the read/write client on the wall clock.
    Daemon(daemon::DaemonArgs),
    /// Follow a backend read-only and log when files become readable.
    Mirror(daemon::MirrorArgs),
    /// Simulate a writer and a delayed replica on a virtual clock.
    Sim(bench::SimArgs),
    /// Check a backend trace for workload-dependent structure.
    Audit(bench::AuditArgs),
    /// Run one of the desk-scale experiments.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let ctx = keys::Context { config: cli.config, passphrase_env: cli.passphrase_env };
    let result = match cli.command {
        Command::Init(args) => fsops::init(&ctx, args),
        Command::Put { src, dest } => fsops::put(&ctx, &src, &dest),
        Command::Get { src, dest } => fsops::get(&ctx, &src, &dest),
        Command::Ls { path } => fsops::ls(&ctx, &path),
        Command::Rm { path } => fsops::rm(&ctx, &path),
        Command::Resize { path, bytes } => fsops::resize(&ctx, &path, bytes),
        Command::Daemon(args) => daemon::daemon(&ctx, args),
        Command::Mirror(args) => daemon::mirror(&ctx, args),
        Command::Sim(args) => bench::sim(args),
        Command::Audit(args) => bench::audit(&ctx, args),
        Command::Bench(cmd) => bench::bench(cmd),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("wosync: {e:#}");
            ExitCode::FAILURE
        }
    }
}
