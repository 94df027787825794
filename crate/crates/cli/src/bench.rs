use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Subcommand};
use wosync_core::backend::{read_trace_file, trace_to_csv};
use wosync_core::harness::{
    audit_trace, bench_buffer, bench_latency, bench_throughput, median_latency, validate_theorem1, visibility_lag, AuditConfig,
    BufferConfig, Delay, LatencyConfig, SizeModel, Theorem1Config, ThroughputConfig, VisibilityConfig,
};

use crate::keys::Context;

#[derive(Args, Clone)]
pub struct Common {
    /// Number of backend files (`N`).
    #[arg(long, default_value_t = 256)]
    pairs: u64,
    /// Bytes per backend file (`B`).
    #[arg(long, default_value_t = 65536)]
    pair_bytes: u32,
    /// Pairs rewritten per epoch (`k`).
    #[arg(long, default_value_t = 3)]
    drip_rate: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
pub enum BenchCommand {
    /// Files and bytes synced per epoch while filling the backend.
    Throughput {
        #[command(flatten)]
        common: Common,
        /// Number of pair-sized files to write.
        #[arg(long, default_value_t = 230)]
        files: usize,
    },
    /// Epochs until a freshly written file is visible, against fill.
    Latency {
        #[command(flatten)]
        common: Common,
        /// File size in bytes; defaults to two full blocks.
        #[arg(long)]
        file_size: Option<u64>,
        #[arg(long, default_value_t = 0.9)]
        max_fill: f64,
    },
    /// Buffer occupancy while a random batch of files is rewritten repeatedly.
    Buffer {
        #[command(flatten)]
        common: Common,
        /// Fraction of the backend holding file data.
        #[arg(long, default_value_t = 0.5)]
        fill: f64,
        #[arg(long, default_value_t = 1000)]
        epochs: u64,
        /// Epochs between write batches.
        #[arg(long, default_value_t = 4)]
        batch_every: u64,
    },
    /// Syncs needed to clear a burst of writes, against the `4s/(Bk)` bound.
    Theorem1 {
        #[command(flatten)]
        common: Common,
        /// Backend fill before the burst, as a fraction of `N * B`.
        #[arg(long, default_value_t = 0.15)]
        load: f64,
        /// Burst size in units of `k * B`.
        #[arg(long, default_value_t = 4)]
        burst: u64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        /// Write fixed-size files of this many bytes instead of lognormal ones.
        #[arg(long)]
        fixed_size: Option<u64>,
    },
}

#[derive(Args)]
pub struct SimArgs {
    #[command(flatten)]
    common: Common,
    /// Epoch length in seconds (`t`).
    #[arg(long, default_value_t = 10.0)]
    drip_time: f64,
    /// Replication delay in seconds.
    #[arg(long, default_value_t = 5.0)]
    delay: f64,
    /// Draw each file's delay uniformly from `[delay, delay_max]`.
    #[arg(long)]
    delay_max: Option<f64>,
    #[arg(long, default_value_t = 150)]
    files: usize,
    #[arg(long, default_value_t = 40_000)]
    file_size: u64,
    /// Seconds between file writes.
    #[arg(long, default_value_t = 7.0)]
    write_interval: f64,
    /// Seconds between reader polls.
    #[arg(long, default_value_t = 0.5)]
    poll: f64,
    /// Where to write the writer's backend trace.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AuditArgs {
    trace: PathBuf,
    /// `N`; read from the config file when omitted.
    #[arg(long)]
    pairs: Option<u64>,
    /// `k`; inferred from the trace when omitted.
    #[arg(long)]
    drip_rate: Option<u32>,
    /// `t`; inferred from the trace when omitted.
    #[arg(long)]
    drip_time: Option<f64>,
}

fn emit(out: &Option<PathBuf>, csv: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn summary(out: &Option<PathBuf>, line: &str) {
    // Keep stdout clean for CSV when no output file is given.
    if out.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
}

pub fn bench(cmd: BenchCommand) -> Result<ExitCode> {
    match cmd {
        BenchCommand::Throughput { common: c, files } => {
            let cfg = ThroughputConfig::pair_sized(c.pair_bytes, c.pairs, c.drip_rate, files, c.seed)?;
            let r = bench_throughput(&cfg)?;
            emit(&c.out, &r.to_csv())?;
            let quarter = r.row_at_files(0.25).map_or("never".into(), |q| q.epoch.to_string());
            summary(&c.out, &format!("{files} files: 25% visible at epoch {quarter}, all by epoch {}", r.epochs_to_complete()));
        }
        BenchCommand::Latency { common: c, file_size, max_fill } => {
            let file_size = file_size.unwrap_or(2 * (u64::from(c.pair_bytes) / 2 - 17));
            let rows = bench_latency(&LatencyConfig {
                pair_bytes: c.pair_bytes,
                pair_count: c.pairs,
                drip_rate: c.drip_rate,
                file_size,
                max_fill,
                seed: c.seed,
            })?;
            let mut csv = String::from("fill,epochs\n");
            for r in &rows {
                csv.push_str(&format!("{:.4},{}\n", r.fill, r.epochs));
            }
            emit(&c.out, &csv)?;
            let med = |lo, hi| median_latency(&rows, lo, hi).map_or("-".into(), |m| m.to_string());
            summary(
                &c.out,
                &format!("median epochs: fill < 1/3 {}, 1/3..2/3 {}, above 2/3 {}", med(0.0, 1.0 / 3.0), med(1.0 / 3.0, 2.0 / 3.0), med(2.0 / 3.0, 1.0)),
            );
        }
        BenchCommand::Buffer { common: c, fill, epochs, batch_every } => {
            let r = bench_buffer(&BufferConfig {
                pair_bytes: c.pair_bytes,
                pair_count: c.pairs,
                drip_rate: c.drip_rate,
                fill,
                epochs,
                batch_bytes: u64::from(c.pair_bytes),
                batch_every,
                max_file: 2 * u64::from(c.pair_bytes),
                seed: c.seed,
            })?;
            emit(&c.out, &r.to_csv())?;
            summary(
                &c.out,
                &format!("fill {fill}: max buffer {:.2} blocks after sync, {:.2} before", r.max_in_blocks(), r.peak_in_blocks()),
            );
        }
        BenchCommand::Theorem1 { common: c, load, burst, trials, fixed_size } => {
            let r = validate_theorem1(&Theorem1Config {
                pair_bytes: c.pair_bytes,
                pair_count: c.pairs,
                drip_rate: c.drip_rate,
                load_fraction: load,
                buffer_bytes: burst * u64::from(c.drip_rate) * u64::from(c.pair_bytes),
                size_model: fixed_size.map_or(SizeModel::Lognormal, SizeModel::Fixed),
                trials,
                prefills: 4,
                seed: c.seed,
            })?;
            let mut csv = String::from("trial,syncs,burst_bytes,resident_bytes\n");
            for (i, ((s, sb), m)) in r.syncs.iter().zip(&r.s_bytes).zip(&r.m_bytes).enumerate() {
                csv.push_str(&format!("{i},{s},{sb},{m}\n"));
            }
            emit(&c.out, &csv)?;
            let tails: Vec<String> = r.tails.iter().map(|t| format!("r={}: {:.4} (<= {:.4})", t.r, t.exceed_rate, t.limit)).collect();
            summary(
                &c.out,
                &format!(
                    "mean syncs {:.2} vs bound {:.2}; max load {:.3}; tails {}; {}",
                    r.mean_syncs,
                    r.bound,
                    r.max_load,
                    tails.join(", "),
                    if r.holds() { "holds" } else { "VIOLATED" }
                ),
            );
            if !r.holds() {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

pub fn sim(args: SimArgs) -> Result<ExitCode> {
    let c = &args.common;
    let delay = match args.delay_max {
        Some(hi) if hi < args.delay => bail!("--delay-max must be at least --delay"),
        Some(hi) => Delay::Uniform(args.delay, hi),
        None => Delay::Fixed(args.delay),
    };
    let r = visibility_lag(&VisibilityConfig {
        pair_bytes: c.pair_bytes,
        pair_count: c.pairs,
        drip_rate: c.drip_rate,
        drip_time_s: args.drip_time,
        delay,
        files: args.files,
        file_size: args.file_size,
        write_interval_s: args.write_interval,
        poll_step_s: args.poll,
        seed: c.seed,
    })?;
    emit(&c.out, &r.to_csv())?;
    if let Some(path) = &args.trace_out {
        fs::write(path, trace_to_csv(&r.trace))?;
    }
    let lags: Vec<f64> = r.rows.iter().map(|x| x.remote - x.local).collect();
    let waits: Vec<f64> = r.rows.iter().map(|x| x.local - x.written_at).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    summary(
        &c.out,
        &format!(
            "{} files over {} epochs: write to local view {:.1}s mean, local to replica {:.1}s mean ({:.1}..{:.1}s)",
            r.rows.len(),
            r.trace.len(),
            mean(&waits),
            mean(&lags),
            lags.iter().copied().fold(f64::INFINITY, f64::min),
            lags.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ),
    );
    Ok(ExitCode::SUCCESS)
}

pub fn audit(ctx: &Context, args: AuditArgs) -> Result<ExitCode> {
    let trace = read_trace_file(&args.trace)?;
    let pairs = match args.pairs {
        Some(n) => n,
        None => ctx.load_config()?.pair_count,
    };
    let mut cfg = AuditConfig::infer(&trace, pairs)?;
    cfg.drip_rate = args.drip_rate.unwrap_or(cfg.drip_rate);
    cfg.drip_time_s = args.drip_time.unwrap_or(cfg.drip_time_s);
    let report = audit_trace(&trace, &cfg)?;
    println!("{}: N={} k={} t={}s", display(&args.trace), cfg.pair_count, cfg.drip_rate, cfg.drip_time_s);
    println!("{}", report.summary());
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
