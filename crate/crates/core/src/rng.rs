//! SplitMix64 and the seeded value generators built on it.
//!
//! The generator and the value mappings below are fixed so that data sets can
//! be regenerated bit-for-bit from a seed in any language.

use crate::f16core::{f32_to_f16, Half};

#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Top 24 bits of the next draw.
    fn next_u24(&mut self) -> u32 {
        (self.next_u64() >> 40) as u32
    }

    /// Activation value `u / 2^23 - 1` rounded to binary16, in [-1, 1].
    pub fn activation(&mut self) -> Half {
        let u = self.next_u24();
        f32_to_f16(u as f32 / 8_388_608.0 - 1.0)
    }

    /// 4-bit code (quantized weight or zero point) from the top 4 bits.
    pub fn code(&mut self) -> u8 {
        (self.next_u64() >> 60) as u8
    }

    /// Positive scale `2^(-6 + 3u/2^24)`, spanning [2^-6, 2^-3).
    pub fn scale(&mut self) -> Half {
        let u = self.next_u24();
        let e = -6.0 + 3.0 * (u as f64 / 16_777_216.0);
        f32_to_f16(e.exp2() as f32)
    }

    /// Fisher-Yates shuffle of `0..n`, one draw per swap from the top index down.
    pub fn permutation(&mut self, n: usize) -> Vec<u32> {
        let mut p: Vec<u32> = (0..n as u32).collect();
        for i in (1..n).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            p.swap(i, j);
        }
        p
    }
}

/// What [`gen_random`] produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    Activation,
    Code,
    Scale,
}

/// `count` values of `kind` drawn from a fresh stream seeded with `seed`.
/// Codes are returned as halves holding the small integer value.
pub fn gen_random(seed: u64, count: usize, kind: ValueKind) -> Vec<Half> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| match kind {
            ValueKind::Activation => rng.activation(),
            ValueKind::Code => f32_to_f16(rng.code() as f32),
            ValueKind::Scale => rng.scale(),
        })
        .collect()
}
