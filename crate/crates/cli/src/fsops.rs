use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use wosync_core::backend::DirStore;
use wosync_core::clock::{Clock, WallClock};
use wosync_core::rwclient::{LockFile, RunUntil, RwClient};
use wosync_core::roclient::RoClient;
use wosync_core::Config;

use crate::keys::Context;

#[derive(Args)]
pub struct InitArgs {
    /// Bytes per backend file (`B`).
    #[arg(long)]
    pair_bytes: Option<u32>,
    /// Number of backend files (`N`).
    #[arg(long)]
    pairs: Option<u64>,
    /// Pairs rewritten per epoch (`k`).
    #[arg(long)]
    drip_rate: Option<u32>,
    /// Epoch length in seconds (`t`).
    #[arg(long)]
    drip_time: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backend: Option<PathBuf>,
    /// Overwrite an existing config file.
    #[arg(long)]
    force: bool,
}

/// The backend path, taken relative to the config file's directory.
pub fn backend_dir(ctx: &Context, cfg: &Config) -> PathBuf {
    if cfg.backend_path.is_absolute() {
        return cfg.backend_path.clone();
    }
    ctx.config.parent().unwrap_or(Path::new(".")).join(&cfg.backend_path)
}

pub fn init(ctx: &Context, args: InitArgs) -> Result<ExitCode> {
    let exists = ctx.config.exists();
    let mut cfg = if exists && !args.force { ctx.load_config()? } else { Config::default() };
    if exists && !args.force && (args.pair_bytes.is_some() || args.pairs.is_some() || args.drip_rate.is_some()) {
        bail!("{} already exists; pass --force to replace it", ctx.config.display());
    }
    cfg.pair_bytes = args.pair_bytes.unwrap_or(cfg.pair_bytes);
    cfg.pair_count = args.pairs.unwrap_or(cfg.pair_count);
    cfg.drip_rate = args.drip_rate.unwrap_or(cfg.drip_rate);
    cfg.drip_time_s = args.drip_time.unwrap_or(cfg.drip_time_s);
    cfg.seed = args.seed.or(cfg.seed);
    if let Some(b) = args.backend {
        cfg.backend_path = b;
    }
    cfg.validate()?;
    fs::write(&ctx.config, cfg.to_string())?;

    let dir = backend_dir(ctx, &cfg);
    let store = DirStore::create(&dir, cfg.pair_count as u32).with_context(|| format!("creating {}", dir.display()))?;
    ctx.new_salt(&dir)?;
    RwClient::init(Arc::new(store), ctx.cipher(&dir)?, cfg.params(), cfg.seed)?;
    println!(
        "initialized {} backend files of {} bytes in {} (k={}, t={}s)",
        cfg.pair_count,
        cfg.pair_bytes,
        dir.display(),
        cfg.drip_rate,
        cfg.drip_time_s
    );
    Ok(ExitCode::SUCCESS)
}

/// Mounts the filesystem read/write under the lock file.
pub fn mount_rw(ctx: &Context) -> Result<RwClient> {
    let cfg = ctx.load_config()?;
    let dir = backend_dir(ctx, &cfg);
    let lock = LockFile::acquire(&dir)?;
    let (store, cipher) = ctx.open_store(&dir)?;
    let mut rw = RwClient::mount(store, cipher, cfg.seed)?;
    rw.hold_lock(lock);
    Ok(rw)
}

/// Keeps ticking on the wall clock until every buffered fragment is on the
/// backend. The buffer lives in memory only, so a one-shot command cannot
/// exit earlier without losing the write.
pub fn settle(rw: &mut RwClient) -> Result<()> {
    let mut clock = WallClock::new();
    let epochs = rw.run_scheduler(&mut clock, RunUntil::BufferEmpty { max_epochs: u64::MAX })?.len();
    if let Some(next) = rw.next_tick() {
        clock.wait_until(next);
        rw.flush_staged(next, clock.wall_seconds())?;
    }
    log::info!("synced after {epochs} epochs");
    Ok(())
}

fn mutate(ctx: &Context, op: impl FnOnce(&mut RwClient) -> wosync_core::Result<()>) -> Result<ExitCode> {
    let mut rw = mount_rw(ctx)?;
    op(&mut rw)?;
    settle(&mut rw)?;
    Ok(ExitCode::SUCCESS)
}

/// Creates missing parent directories of `path`.
pub fn make_parents(rw: &mut RwClient, path: &str) -> wosync_core::Result<()> {
    let parts: Vec<&str> = path.split('/').filter(|p| !p.is_empty()).collect();
    let mut prefix = String::new();
    for dir in parts.iter().take(parts.len().saturating_sub(1)) {
        prefix.push('/');
        prefix.push_str(dir);
        if !rw.exists(&prefix) {
            rw.mkdir(&prefix)?;
        }
    }
    Ok(())
}

pub fn put(ctx: &Context, src: &Path, dest: &str) -> Result<ExitCode> {
    let data = fs::read(src).with_context(|| format!("reading {}", src.display()))?;
    mutate(ctx, |rw| {
        make_parents(rw, dest)?;
        rw.put(dest, &data).map(|_| ())
    })
}

pub fn rm(ctx: &Context, path: &str) -> Result<ExitCode> {
    mutate(ctx, |rw| rw.delete(path))
}

pub fn resize(ctx: &Context, path: &str, bytes: u64) -> Result<ExitCode> {
    mutate(ctx, |rw| rw.resize(path, bytes))
}

fn mount_ro(ctx: &Context) -> Result<RoClient> {
    let cfg = ctx.load_config()?;
    let (store, cipher) = ctx.open_store(&backend_dir(ctx, &cfg))?;
    Ok(RoClient::mount(store, cipher)?)
}

pub fn get(ctx: &Context, src: &str, dest: &Path) -> Result<ExitCode> {
    let data = mount_ro(ctx)?.read_all(src, 0.0)?;
    if dest == Path::new("-") {
        std::io::stdout().write_all(&data)?;
    } else {
        fs::write(dest, data).with_context(|| format!("writing {}", dest.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn ls(ctx: &Context, path: &str) -> Result<ExitCode> {
    let mut ro = mount_ro(ctx)?;
    for e in ro.list(path, 0.0)? {
        let child = format!("{}/{}", path.trim_end_matches('/'), e.name);
        match ro.stat(&child, 0.0) {
            Ok(entry) if entry.is_directory => println!("{}/", e.name),
            Ok(entry) => println!("{}\t{}", e.name, entry.size),
            Err(_) => println!("{}\t(not synced yet)", e.name),
        }
    }
    Ok(ExitCode::SUCCESS)
}
