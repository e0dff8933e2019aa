//! Deterministic seed derivation and per-path random streams.
//!
//! A master seed expands into a 256-bit ChaCha key. Each path reads its own
//! ChaCha stream selected by index, so results never depend on which worker
//! draws which path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used for labels and for fingerprinting points.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hash of a point via the bit patterns of its coordinates.
pub fn hash_point(x: &[f64]) -> u64 {
    let mut bytes = Vec::with_capacity(8 * x.len());
    for v in x {
        bytes.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fnv1a(&bytes)
}

/// Node of a tree of independent seeds rooted at a master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedTree {
    key: [u64; 4],
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        let mut s = master;
        SeedTree {
            key: [
                splitmix64(&mut s),
                splitmix64(&mut s),
                splitmix64(&mut s),
                splitmix64(&mut s),
            ],
        }
    }

    /// Independent subtree for a numeric label.
    pub fn child(&self, label: u64) -> Self {
        let mut s = self.key[0] ^ self.key[1].rotate_left(17) ^ self.key[2].rotate_left(31)
            ^ self.key[3].rotate_left(47)
            ^ label.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        SeedTree {
            key: [
                splitmix64(&mut s),
                splitmix64(&mut s),
                splitmix64(&mut s),
                splitmix64(&mut s),
            ],
        }
    }

    /// Independent subtree for a textual purpose tag.
    pub fn named(&self, tag: &str) -> Self {
        self.child(fnv1a(tag.as_bytes()))
    }

    /// Random stream number `index` under this key.
    pub fn stream(&self, index: u64) -> Stream {
        let mut seed = [0u8; 32];
        for (chunk, k) in seed.chunks_exact_mut(8).zip(self.key.iter()) {
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(index);
        rng
    }

    /// Short identifier of the key, recorded alongside outputs.
    pub fn fingerprint(&self) -> u64 {
        let mut bytes = [0u8; 32];
        for (chunk, k) in bytes.chunks_exact_mut(8).zip(self.key.iter()) {
            chunk.copy_from_slice(&k.to_le_bytes());
        }
        fnv1a(&bytes)
    }
}
