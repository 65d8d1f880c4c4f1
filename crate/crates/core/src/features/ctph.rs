//! Context-triggered piecewise hashing over opcode byte streams.
//!
//! A 7-byte rolling hash decides piece boundaries: a piece ends wherever
//! `roll % block_size == block_size - 1`. Each piece is hashed with FNV-1a
//! and contributes the low 6 bits as one digest symbol. The digest holds at
//! most 64 symbols; once 63 are emitted the final symbol covers the rest of
//! the input. A second digest at twice the block size (at most 32 symbols)
//! lets digests of neighbouring block sizes be compared.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Symbols for the low 6 bits of a piece hash.
pub const DIGEST_ALPHABET: &[u8; 64] =
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
pub const ROLLING_WINDOW: usize = 7;
pub const MIN_BLOCK_SIZE: u32 = 3;
pub const DIGEST_LEN: usize = 64;
pub const DOUBLE_DIGEST_LEN: usize = DIGEST_LEN / 2;

const FNV_OFFSET: u32 = 0x811c_9dc5;
const FNV_PRIME: u32 = 0x0100_0193;

/// The three-part rolling hash over the last [`ROLLING_WINDOW`] bytes.
#[derive(Debug, Clone, Default)]
pub struct RollingHash {
    window: [u8; ROLLING_WINDOW],
    h1: u32,
    h2: u32,
    h3: u32,
    n: usize,
}

impl RollingHash {
    pub fn new() -> RollingHash {
        RollingHash::default()
    }

    /// Slides the window by one byte and returns the new hash value.
    #[inline]
    pub fn update(&mut self, byte: u8) -> u32 {
        let b = byte as u32;
        self.h2 = self.h2.wrapping_sub(self.h1).wrapping_add(ROLLING_WINDOW as u32 * b);
        self.h1 = self.h1.wrapping_add(b).wrapping_sub(self.window[self.n] as u32);
        self.window[self.n] = byte;
        self.n = (self.n + 1) % ROLLING_WINDOW;
        self.h3 = (self.h3 << 5) ^ b;
        self.sum()
    }

    #[inline]
    pub fn sum(&self) -> u32 {
        self.h1.wrapping_add(self.h2).wrapping_add(self.h3)
    }

    /// Hash of a window given oldest-first; shorter windows are zero-padded on
    /// the old side, matching a fresh hash fed only those bytes.
    pub fn of_window(bytes: &[u8]) -> u32 {
        assert!(bytes.len() <= ROLLING_WINDOW);
        let mut window = [0u8; ROLLING_WINDOW];
        window[ROLLING_WINDOW - bytes.len()..].copy_from_slice(bytes);
        let mut h1 = 0u32;
        let mut h2 = 0u32;
        let mut h3 = 0u32;
        for (k, &b) in window.iter().enumerate() {
            h1 = h1.wrapping_add(b as u32);
            h2 = h2.wrapping_add((k as u32 + 1) * b as u32);
            h3 = (h3 << 5) ^ b as u32;
        }
        h1.wrapping_add(h2).wrapping_add(h3)
    }
}

/// A fuzzy digest: `digest` at `block_size`, `double_digest` at twice that.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CtphDigest {
    pub block_size: u32,
    pub digest: String,
    pub double_digest: String,
}

impl CtphDigest {
    /// The digest of empty input, rendered `0:`.
    pub fn empty() -> CtphDigest {
        CtphDigest {
            block_size: 0,
            digest: String::new(),
            double_digest: String::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.block_size == 0
    }
}

/// Computes the digest of `data`.
///
/// The starting block size is the smallest `3·2^k` with `3·2^k·64 >= len`;
/// while the digest comes out shorter than 32 symbols the block size is halved
/// (down to 3) and the digest recomputed.
pub fn ctph(data: &[u8]) -> CtphDigest {
    if data.is_empty() {
        return CtphDigest::empty();
    }
    let mut block = MIN_BLOCK_SIZE;
    while (block as usize) * DIGEST_LEN < data.len() {
        block *= 2;
    }
    let mut roller = RollingHash::new();
    let rolls: Vec<u32> = data.iter().map(|&b| roller.update(b)).collect();
    loop {
        let digest = pieces(data, &rolls, block, DIGEST_LEN);
        if digest.len() < DIGEST_LEN / 2 && block > MIN_BLOCK_SIZE {
            block /= 2;
            continue;
        }
        let double_digest = pieces(data, &rolls, block * 2, DOUBLE_DIGEST_LEN);
        return CtphDigest {
            block_size: block,
            digest,
            double_digest,
        };
    }
}

fn pieces(data: &[u8], rolls: &[u32], block: u32, limit: usize) -> String {
    let mut out = String::with_capacity(limit);
    let mut h = FNV_OFFSET;
    let mut pending = false;
    for (&byte, &roll) in data.iter().zip(rolls) {
        h = (h ^ byte as u32).wrapping_mul(FNV_PRIME);
        pending = true;
        if roll % block == block - 1 && out.len() < limit - 1 {
            out.push(DIGEST_ALPHABET[(h & 63) as usize] as char);
            h = FNV_OFFSET;
            pending = false;
        }
    }
    if pending {
        out.push(DIGEST_ALPHABET[(h & 63) as usize] as char);
    }
    out
}

impl fmt::Display for CtphDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            f.write_str("0:")
        } else {
            write!(f, "{}:{}:{}", self.block_size, self.digest, self.double_digest)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed fuzzy digest `{0}`")]
pub struct ParseDigestError(pub String);

impl FromStr for CtphDigest {
    type Err = ParseDigestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "0:" {
            return Ok(CtphDigest::empty());
        }
        let bad = || ParseDigestError(s.to_string());
        let mut parts = s.splitn(3, ':');
        let block_size: u32 = parts.next().and_then(|b| b.parse().ok()).ok_or_else(bad)?;
        let digest = parts.next().ok_or_else(bad)?;
        let double_digest = parts.next().ok_or_else(bad)?;
        let valid_block = block_size >= MIN_BLOCK_SIZE
            && block_size % MIN_BLOCK_SIZE == 0
            && (block_size / MIN_BLOCK_SIZE).is_power_of_two();
        let in_alphabet = |d: &str| d.bytes().all(|c| DIGEST_ALPHABET.contains(&c));
        if !valid_block
            || digest.len() > DIGEST_LEN
            || double_digest.len() > DOUBLE_DIGEST_LEN
            || !in_alphabet(digest)
            || !in_alphabet(double_digest)
        {
            return Err(bad());
        }
        Ok(CtphDigest {
            block_size,
            digest: digest.to_string(),
            double_digest: double_digest.to_string(),
        })
    }
}

impl Serialize for CtphDigest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CtphDigest {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_the_sentinel() {
        let d = ctph(&[]);
        assert!(d.is_empty());
        assert_eq!(d.to_string(), "0:");
        assert_eq!("0:".parse::<CtphDigest>().unwrap(), d);
    }

    #[test]
    fn text_form_round_trips() {
        let d = ctph(b"The quick brown fox jumps over the lazy dog, again and again.");
        assert_eq!(d.to_string().parse::<CtphDigest>().unwrap(), d);
        assert!("5:abc:ab".parse::<CtphDigest>().is_err());
        assert!("3:ab!:a".parse::<CtphDigest>().is_err());
    }

    #[test]
    fn digest_lengths_are_bounded() {
        let data: Vec<u8> = (0..20_000u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8 & 63).collect();
        let d = ctph(&data);
        assert!(d.digest.len() <= DIGEST_LEN);
        assert!(d.double_digest.len() <= DOUBLE_DIGEST_LEN);
        assert!(d.digest.len() >= DIGEST_LEN / 2);
    }
}
