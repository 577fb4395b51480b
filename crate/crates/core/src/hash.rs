//! Platform-stable 64-bit hashing for fingerprints and scaffold keys.
//!
//! `std::hash` makes no cross-version stability promise, so identifiers that
//! end up in exported fingerprints are produced by this fixed multiply-xor
//! scheme instead. The constants are the splitmix64 finalizer constants and
//! must never change: changing them changes every exported fingerprint.

/// Initial state of every hash.
pub const SEED: u64 = 0x9E37_79B9_7F4A_7C15;
/// Per-word pre-multiplier applied before mixing a word into the state.
pub const WORD_MUL: u64 = 0xD6E8_FEB8_6659_FD93;
const MIX_A: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_B: u64 = 0x94D0_49BB_1331_11EB;

/// splitmix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_A);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_B);
    z ^ (z >> 31)
}

/// Order-sensitive hasher over a stream of 64-bit words.
#[derive(Debug, Clone, Copy)]
pub struct StableHasher(u64);

impl Default for StableHasher {
    fn default() -> Self {
        Self::new()
    }
}

impl StableHasher {
    pub fn new() -> Self {
        StableHasher(SEED)
    }

    #[inline]
    pub fn write(&mut self, word: u64) -> &mut Self {
        self.0 = mix64(self.0 ^ word.wrapping_mul(WORD_MUL)).rotate_left(17) ^ word;
        self
    }

    pub fn write_i64(&mut self, word: i64) -> &mut Self {
        self.write(word as u64)
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.write(bytes.len() as u64);
        for chunk in bytes.chunks(8) {
            let mut buf = [0u8; 8];
            buf[..chunk.len()].copy_from_slice(chunk);
            self.write(u64::from_le_bytes(buf));
        }
        self
    }

    pub fn finish(&self) -> u64 {
        mix64(self.0)
    }
}

/// Hash a slice of words in one call.
#[cfg(test)]
pub fn hash_words(words: &[u64]) -> u64 {
    let mut h = StableHasher::new();
    for &w in words {
        h.write(w);
    }
    h.finish()
}
