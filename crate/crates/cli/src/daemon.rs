use std::collections::HashMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::SystemTime;

use anyhow::{Context as _, Result};
use clap::Args;
use walkdir::WalkDir;
use wosync_core::backend::TraceSink;
use wosync_core::clock::{Clock, WallClock};
use wosync_core::roclient::{RoClient, Watch};
use wosync_core::rwclient::{RunUntil, RwClient};

use crate::fsops::{make_parents, mount_rw, settle};
use crate::keys::Context;

#[derive(Args)]
pub struct DaemonArgs {
    /// Local directory mirrored into the filesystem root.
    #[arg(long)]
    inbox: Option<PathBuf>,
    /// Stop after this many epochs (and drain the buffer).
    #[arg(long)]
    epochs: Option<u64>,
    /// Append one trace row per flushed epoch.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args)]
pub struct MirrorArgs {
    #[arg(long)]
    backend: PathBuf,
    /// Glob over filesystem paths, e.g. `/docs/**`.
    #[arg(long, default_value = "/**")]
    watch: String,
    /// Where to append `path,epoch,time_s` rows.
    #[arg(long)]
    events_out: PathBuf,
    /// Seconds between polls.
    #[arg(long, default_value_t = 1.0)]
    poll: f64,
    /// Stop after this many seconds.
    #[arg(long)]
    duration: Option<f64>,
}

/// Local files last seen in the inbox, by filesystem path.
type Seen = HashMap<String, (SystemTime, u64)>;

fn scan_inbox(rw: &mut RwClient, inbox: &PathBuf, seen: &mut Seen) -> Result<()> {
    let mut present = Seen::new();
    for entry in WalkDir::new(inbox).into_iter().filter_map(|e| e.ok()).filter(|e| e.file_type().is_file()) {
        let rel = entry.path().strip_prefix(inbox)?;
        let path = format!("/{}", rel.to_string_lossy().replace('\\', "/"));
        let meta = entry.metadata()?;
        let stamp = (meta.modified()?, meta.len());
        if seen.get(&path) != Some(&stamp) {
            let data = fs::read(entry.path())?;
            make_parents(rw, &path)?;
            rw.put(&path, &data)?;
            log::info!("put {path} ({} bytes)", data.len());
        }
        present.insert(path, stamp);
    }
    for gone in seen.keys().filter(|p| !present.contains_key(*p)) {
        if rw.exists(gone) {
            rw.delete(gone)?;
            log::info!("deleted {gone}");
        }
    }
    *seen = present;
    Ok(())
}

pub fn daemon(ctx: &Context, args: DaemonArgs) -> Result<ExitCode> {
    let mut rw = mount_rw(ctx)?;
    if let Some(path) = &args.trace_out {
        rw.backend_mut().set_trace_sink(TraceSink::open(path)?);
    }
    let mut clock = WallClock::new();
    let mut seen = Seen::new();
    let mut epochs = 0u64;
    while args.epochs.is_none_or(|n| epochs < n) {
        if let Some(inbox) = &args.inbox {
            scan_inbox(&mut rw, inbox, &mut seen)?;
        }
        let report = rw.run_scheduler(&mut clock, RunUntil::Epochs(1))?;
        epochs += 1;
        if let Some(r) = report.first() {
            log::debug!("epoch {epochs}: {} fragments left in buffer", r.buffer_fragments_remaining);
        }
    }
    settle(&mut rw)?;
    Ok(ExitCode::SUCCESS)
}

pub fn mirror(ctx: &Context, args: MirrorArgs) -> Result<ExitCode> {
    let (store, cipher) = ctx.open_store(&args.backend)?;
    let mut ro = RoClient::mount(store, cipher)?.with_ttl(0.0);
    let mut watch = Watch::new(&args.watch)?;
    let fresh = !args.events_out.exists();
    let mut out = File::options()
        .create(true)
        .append(true)
        .open(&args.events_out)
        .with_context(|| format!("opening {}", args.events_out.display()))?;
    if fresh {
        writeln!(out, "path,epoch,time_s")?;
    }
    let mut clock = WallClock::new();
    let mut at = 0.0;
    while args.duration.is_none_or(|d| at <= d) {
        clock.wait_until(at);
        let now = clock.now();
        // A writer may be mid-flush; the next poll will see a settled view.
        match watch.poll(&mut ro, now) {
            Ok(events) => {
                for v in events {
                    writeln!(out, "{},{},{:.3}", v.path, v.epoch, v.time)?;
                    println!("{} visible at epoch {}", v.path, v.epoch);
                }
            }
            Err(e) => log::warn!("poll at {now:.1}s: {e}"),
        }
        out.flush()?;
        at += args.poll;
    }
    Ok(ExitCode::SUCCESS)
}
