//! Stable content digests used for program identity, reproducer ids and
//! helper-argument fingerprints.

use sha2::{Digest as _, Sha256};

/// Incremental digest builder. Output is stable across hosts.
#[derive(Clone, Default)]
pub struct Fingerprint {
    inner: Sha256,
}

impl Fingerprint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bytes(&mut self, data: &[u8]) -> &mut Self {
        self.inner.update((data.len() as u64).to_le_bytes());
        self.inner.update(data);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.inner.update(v.to_le_bytes());
        self
    }

    pub fn finish(&self) -> u64 {
        let out = self.inner.clone().finalize();
        let mut word = [0u8; 8];
        word.copy_from_slice(&out[..8]);
        u64::from_le_bytes(word)
    }
}

/// One-shot 64-bit digest of a byte string.
pub fn digest64(data: &[u8]) -> u64 {
    Fingerprint::new().bytes(data).finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_length_delimited() {
        assert_eq!(digest64(b"abc"), digest64(b"abc"));
        let a = Fingerprint::new().bytes(b"ab").bytes(b"c").finish();
        let b = Fingerprint::new().bytes(b"a").bytes(b"bc").finish();
        assert_ne!(a, b);
    }
}
