//! Deterministic seed derivation so every random draw is addressable by `(base, stream...)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Largest seed accepted anywhere; seeds must survive a round trip through TOML integers.
pub const MAX: u64 = i64::MAX as u64;

/// Mixes `streams` into `base`. Order matters; distinct paths give unrelated seeds.
pub fn derive(base: u64, streams: &[u64]) -> u64 {
    let mixed = streams
        .iter()
        .fold(splitmix(base.wrapping_add(GOLDEN)), |acc, &s| splitmix(splitmix(acc).wrapping_add(s).wrapping_add(GOLDEN)));
    mixed & MAX
}

/// A fresh seed for runs where none was given.
pub fn fresh() -> u64 {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
    splitmix(nanos as u64 ^ std::process::id() as u64) & MAX
}
