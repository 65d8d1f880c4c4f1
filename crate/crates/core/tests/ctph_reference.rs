//! Fuzzy-hash outputs frozen from the independent Python implementation in
//! `tests/oracles/ctph_reference.py`, plus the rolling-hash recomputation
//! property.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tplscan_core::features::{ctph, edit_distance, mss, CtphDigest, RollingHash, ROLLING_WINDOW};

/// Same generator as `lcg_opcodes` in the oracle script.
fn lcg_opcodes(seed: u64, n: usize) -> Vec<u8> {
    let mut x = seed;
    (0..n)
        .map(|_| {
            x = (x * 1103515245 + 12345) % (1 << 31);
            ((x >> 16) % 64) as u8
        })
        .collect()
}

#[test]
fn opcode_stream_digest() {
    let d = ctph(&lcg_opcodes(42, 200));
    assert_eq!(
        d.to_string(),
        "3:2GTOeHSAR5E4ESiiHonxPpCE0elEBnq9X5lutKH5d+HwkEAiIjXRN7VOT3s0X5lq:bh2Tic4EhanqXJuo5dcBRN7Og+P+"
    );
}

#[test]
fn one_opcode_edit() {
    let base = lcg_opcodes(42, 200);
    let mut edited = base.clone();
    edited[100] = (edited[100] + 1) % 64;
    let (a, b) = (ctph(&base), ctph(&edited));
    assert_eq!(
        b.to_string(),
        "3:2GTOeHSAR5E4ESiiHonxPpCE0elEBnq9X5lutKH+1EwkEAiIjXRN7VOT3s0X5lAB:bh2Tic4EhanqXJuoYEBRN7Og+P+"
    );
    assert_eq!(edit_distance(&a.digest, &b.digest), 6);
    assert_eq!(mss(&a, &b), 0.90625);
}

#[test]
fn text_digest_halves_the_block_size() {
    let text = b"The quick brown fox jumps over the lazy dog".repeat(10);
    assert_eq!(ctph(&text).to_string(), "6:/l4So4So4So4So4So4So4So4So4So4Sm:/t");
}

#[test]
fn short_input_keeps_the_minimum_block_size() {
    let bytes: Vec<u8> = (0..64).collect();
    assert_eq!(ctph(&bytes).to_string(), "3:4+P816bIdyMGXEdCjQpO:4+P816bIdyMGXEdCjQpO");
}

#[test]
fn long_input_grows_the_block_size() {
    assert_eq!(
        ctph(&lcg_opcodes(7, 5000)).to_string(),
        "96:yu4EI+CW1+BlCIJVFs9VwAiDM0Mws3gjLzn5b7hyyb/nTYQytM6EkHSYbFNJ:3z1+hCPgNGwimfDyy7TRyU6EkIg"
    );
}

#[test]
fn empty_input_is_the_sentinel() {
    assert_eq!(ctph(&[]), CtphDigest::empty());
    assert_eq!(ctph(&[]).to_string(), "0:");
}

#[test]
fn rolling_update_equals_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let len = rng.gen_range(0..64);
        let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let mut h = RollingHash::new();
        for i in 0..data.len() {
            let incremental = h.update(data[i]);
            let start = (i + 1).saturating_sub(ROLLING_WINDOW);
            if incremental != RollingHash::of_window(&data[start..=i]) {
                mismatches += 1;
            }
        }
    }
    assert_eq!(mismatches, 0);
}
