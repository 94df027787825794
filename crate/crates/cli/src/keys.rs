use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use rand::RngCore;
use wosync_core::backend::{DirStore, PairStore};
use wosync_core::codec::{Cipher, Kdf, Pbkdf2Sha256};
use wosync_core::Config;

/// Salt for the passphrase KDF. It is written once at init and never
/// changes, so syncing it reveals nothing about later activity.
pub const SALT_FILE: &str = "kdf.salt";

pub struct Context {
    pub config: PathBuf,
    pub passphrase_env: String,
}

impl Context {
    pub fn load_config(&self) -> Result<Config> {
        Config::load(&self.config).with_context(|| format!("reading {}", self.config.display()))
    }

    fn passphrase(&self) -> Result<String> {
        match std::env::var(&self.passphrase_env) {
            Ok(p) if !p.is_empty() => Ok(p),
            _ => bail!("set the passphrase in ${}", self.passphrase_env),
        }
    }

    pub fn new_salt(&self, backend: &Path) -> Result<()> {
        let mut salt = [0u8; 16];
        rand::rng().fill_bytes(&mut salt);
        fs::write(backend.join(SALT_FILE), salt)?;
        Ok(())
    }

    pub fn cipher(&self, backend: &Path) -> Result<Arc<Cipher>> {
        let salt = fs::read(backend.join(SALT_FILE)).with_context(|| format!("no {SALT_FILE} in {}", backend.display()))?;
        let key = Pbkdf2Sha256::default().derive(self.passphrase()?.as_bytes(), &salt);
        Ok(Arc::new(Cipher::new(&key)))
    }

    pub fn open_store(&self, backend: &Path) -> Result<(Arc<dyn PairStore>, Arc<Cipher>)> {
        let store = DirStore::open(backend).with_context(|| format!("opening backend {}", backend.display()))?;
        Ok((Arc::new(store), self.cipher(backend)?))
    }
}
