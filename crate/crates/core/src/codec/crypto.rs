use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 24;
pub const TAG_LEN: usize = 16;

/// Derives the shared filesystem key from a passphrase.
pub trait Kdf {
    fn derive(&self, passphrase: &[u8], salt: &[u8]) -> [u8; KEY_LEN];
}

#[derive(Clone, Copy, Debug)]
pub struct Pbkdf2Sha256 {
    pub rounds: u32,
}

impl Default for Pbkdf2Sha256 {
    fn default() -> Self {
        Pbkdf2Sha256 { rounds: 100_000 }
    }
}

impl Kdf for Pbkdf2Sha256 {
    fn derive(&self, passphrase: &[u8], salt: &[u8]) -> [u8; KEY_LEN] {
        let mut key = [0u8; KEY_LEN];
        pbkdf2::pbkdf2_hmac::<sha2::Sha256>(passphrase, salt, self.rounds, &mut key);
        key
    }
}

/// Randomized authenticated encryption for backend files.
///
/// An envelope is `nonce (24) | ciphertext | tag (16)`, so its length depends
/// only on the plaintext length.
pub struct Cipher {
    aead: XChaCha20Poly1305,
    nonces: Mutex<ChaCha20Rng>,
}

impl Cipher {
    /// Nonces come from the operating system RNG.
    pub fn new(key: &[u8; KEY_LEN]) -> Self {
        Self::with_nonce_rng(key, ChaCha20Rng::from_os_rng())
    }

    /// Deterministic nonces, for reproducible simulations only.
    pub fn seeded(key: &[u8; KEY_LEN], seed: u64) -> Self {
        Self::with_nonce_rng(key, ChaCha20Rng::seed_from_u64(seed ^ 0x6e6f_6e63_6573))
    }

    fn with_nonce_rng(key: &[u8; KEY_LEN], rng: ChaCha20Rng) -> Self {
        Cipher { aead: XChaCha20Poly1305::new(key.into()), nonces: Mutex::new(rng) }
    }

    pub const fn overhead() -> usize {
        NONCE_LEN + TAG_LEN
    }

    pub fn seal(&self, plaintext: &[u8]) -> Vec<u8> {
        let mut nonce = [0u8; NONCE_LEN];
        self.nonces.lock().fill_bytes(&mut nonce);
        let ct = self
            .aead
            .encrypt(XNonce::from_slice(&nonce), plaintext)
            .expect("xchacha20poly1305 encryption is infallible for in-memory buffers");
        let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&ct);
        out
    }

    pub fn open(&self, envelope: &[u8]) -> Result<Vec<u8>> {
        if envelope.len() < NONCE_LEN + TAG_LEN {
            return Err(Error::AuthFail);
        }
        let (nonce, ct) = envelope.split_at(NONCE_LEN);
        self.aead.decrypt(XNonce::from_slice(nonce), ct).map_err(|_| Error::AuthFail)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cipher() -> Cipher {
        Cipher::seeded(&[7u8; KEY_LEN], 1)
    }

    #[test]
    fn sealing_twice_gives_distinct_envelopes() {
        let c = cipher();
        let p = b"the same block pair".to_vec();
        let a = c.seal(&p);
        let b = c.seal(&p);
        assert_ne!(a, b);
        assert_eq!(c.open(&a).unwrap(), p);
        assert_eq!(c.open(&b).unwrap(), p);
    }

    #[test]
    fn tampering_fails_authentication() {
        let c = cipher();
        let mut env = c.seal(b"payload");
        env[NONCE_LEN + 2] ^= 0x01;
        assert!(matches!(c.open(&env), Err(Error::AuthFail)));
    }

    #[test]
    fn wrong_key_fails_authentication() {
        let env = cipher().seal(b"payload");
        let other = Cipher::seeded(&[8u8; KEY_LEN], 1);
        assert!(matches!(other.open(&env), Err(Error::AuthFail)));
    }

    #[test]
    fn envelope_length_depends_only_on_plaintext_length() {
        let c = cipher();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for _ in 0..100 {
            let len = rng.random_range(0..5000);
            let mut a = vec![0u8; len];
            let mut b = vec![0u8; len];
            rng.fill_bytes(&mut a);
            rng.fill_bytes(&mut b);
            let (ea, eb) = (c.seal(&a), c.seal(&b));
            assert_eq!(ea.len(), eb.len());
            assert_eq!(ea.len(), len + Cipher::overhead());
        }
    }

    #[test]
    fn pbkdf2_matches_published_vector() {
        // PBKDF2-HMAC-SHA256, P = "passwd", S = "salt", c = 1.
        let key = Pbkdf2Sha256 { rounds: 1 }.derive(b"passwd", b"salt");
        let hex: String = key.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, "55ac046e56e3089fec1691c22544b605f94185216dde0465e68b9d57c20dacbc");
    }
}
