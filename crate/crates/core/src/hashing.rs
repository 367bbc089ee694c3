//! Stable 64-bit FNV-1a. Used wherever a hash must not change across
//! toolchains: feature hashing, seed derivation.

const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Child seed for a numbered sub-stream (fold, worker, ...).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut buf = [0u8; 16];
    buf[..8].copy_from_slice(&seed.to_le_bytes());
    buf[8..].copy_from_slice(&stream.to_le_bytes());
    fnv1a(&buf)
}
