//! A write-only oblivious file synchronization engine.
//!
//! Frontend files are split into fragments and packed into fixed-size,
//! individually encrypted backend files. A single read/write client commits
//! buffered fragments on a fixed timer by rewriting `k` uniformly chosen
//! backend files plus the superblock every epoch, so the sequence of backend
//! writes is independent of what, when and how much the user writes.

pub mod backend;
pub mod clock;
pub mod codec;
pub mod config;
pub mod error;
pub mod fstable;
pub mod harness;
pub mod roclient;
pub mod rwclient;

pub use config::Config;
pub use error::{Error, Result};
