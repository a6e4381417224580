//! Software IEEE 754 binary16 arithmetic.
//!
//! A [`Half`] is a raw 16-bit pattern laid out as
//!
//! ```text
//!  15 | 14 ........ 10 | 9 ................ 0
//! sign |  exponent (5)  |   significand (10)
//! ```
//!
//! with exponent bias 15. Every pattern is valid: exponent 0 encodes zeros and
//! subnormals (value `significand * 2^-24`), exponent 31 encodes infinities
//! (significand 0) and NaNs. A [`Half2`] packs two halves into a 32-bit word,
//! `lo` in bits 0..16 and `hi` in bits 16..32.
//!
//! All rounding is round-to-nearest, ties-to-even. Subnormals are never
//! flushed. Every NaN produced by a conversion or an arithmetic operation is
//! the canonical quiet NaN `0x7E00`.
//!
//! # Operation semantics
//!
//! * [`h_add`] / [`h_mul`]: operands are widened to binary32, the binary32
//!   operation is performed and the result is rounded once to binary16. The
//!   binary32 product of two halves is exact, and for the sum binary32 has
//!   enough precision (24 >= 2*11 + 2 bits) that the intermediate rounding is
//!   innocuous, so both equal the correctly rounded binary16 result.
//! * [`h_fma`]: `a * b + c` is evaluated in binary64 (the product is exact
//!   there) and the binary64 result is rounded once to binary16. This is the
//!   normative definition used by every kernel. It can differ from an
//!   infinitely precise fused multiply-add only when the binary64 addition
//!   itself rounds onto a binary16 rounding boundary.
//! * Packed ops ([`h2_add`], [`h2_fma`], [`h2_mul`]) apply the scalar op to
//!   each lane independently, so they are bit-identical to two scalar ops.

use std::fmt;

const SIGN_MASK: u16 = 0x8000;
const EXP_MASK: u16 = 0x7C00;
const MAN_MASK: u16 = 0x03FF;

/// IEEE 754 binary16 value stored as its bit pattern.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Half(u16);

impl Half {
    pub const ZERO: Half = Half(0x0000);
    pub const NEG_ZERO: Half = Half(0x8000);
    pub const ONE: Half = Half(0x3C00);
    pub const INFINITY: Half = Half(0x7C00);
    pub const NEG_INFINITY: Half = Half(0xFC00);
    /// Canonical quiet NaN; the only NaN pattern arithmetic ever produces.
    pub const NAN: Half = Half(0x7E00);
    /// Largest finite value, 65504.
    pub const MAX: Half = Half(0x7BFF);
    /// Smallest positive subnormal, 2^-24.
    pub const MIN_SUBNORMAL: Half = Half(0x0001);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        Half(bits)
    }

    #[inline]
    pub const fn to_bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub fn from_f32(x: f32) -> Self {
        f32_to_f16(x)
    }

    #[inline]
    pub fn from_f64(x: f64) -> Self {
        f64_to_f16(x)
    }

    #[inline]
    pub fn to_f32(self) -> f32 {
        f16_to_f32(self)
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        f16_to_f32(self) as f64
    }

    #[inline]
    pub const fn is_nan(self) -> bool {
        (self.0 & EXP_MASK) == EXP_MASK && (self.0 & MAN_MASK) != 0
    }

    #[inline]
    pub const fn is_infinite(self) -> bool {
        (self.0 & !SIGN_MASK) == EXP_MASK
    }

    #[inline]
    pub const fn is_finite(self) -> bool {
        (self.0 & EXP_MASK) != EXP_MASK
    }

    #[inline]
    pub const fn is_sign_negative(self) -> bool {
        self.0 & SIGN_MASK != 0
    }
}

impl fmt::Debug for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half({:#06x} = {})", self.0, self.to_f32())
    }
}

impl fmt::Display for Half {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.to_f32(), f)
    }
}

impl From<Half> for f32 {
    fn from(h: Half) -> f32 {
        h.to_f32()
    }
}

impl std::ops::Add for Half {
    type Output = Half;
    fn add(self, rhs: Half) -> Half {
        h_add(self, rhs)
    }
}

impl std::ops::Mul for Half {
    type Output = Half;
    fn mul(self, rhs: Half) -> Half {
        h_mul(self, rhs)
    }
}

/// Two binary16 lanes packed in one 32-bit word.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Half2 {
    pub lo: Half,
    pub hi: Half,
}

impl Half2 {
    pub const ZERO: Half2 = Half2 {
        lo: Half::ZERO,
        hi: Half::ZERO,
    };

    #[inline]
    pub const fn new(lo: Half, hi: Half) -> Self {
        Half2 { lo, hi }
    }

    /// Both lanes set to `h`.
    #[inline]
    pub const fn splat(h: Half) -> Self {
        Half2 { lo: h, hi: h }
    }

    #[inline]
    pub const fn from_bits(bits: u32) -> Self {
        Half2 {
            lo: Half(bits as u16),
            hi: Half((bits >> 16) as u16),
        }
    }

    #[inline]
    pub const fn to_bits(self) -> u32 {
        (self.lo.0 as u32) | ((self.hi.0 as u32) << 16)
    }
}

impl fmt::Debug for Half2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Half2({:?}, {:?})", self.lo, self.hi)
    }
}

/// Rounds `sig * 2^exp2` (sig != 0) to binary16 with round-to-nearest-even.
fn round_to_half(negative: bool, sig: u64, exp2: i32) -> Half {
    let sign = if negative { SIGN_MASK } else { 0 };
    debug_assert!(sig != 0);
    // value = 1.xxx * 2^e
    let msb = 63 - sig.leading_zeros() as i32;
    let e = exp2 + msb;
    if e > 15 {
        return Half(sign | EXP_MASK);
    }
    // Exponent of the unit in the last place of the result.
    let quantum = e.max(-14) - 10;
    let shift = quantum - exp2;
    let mut man: u64 = if shift <= 0 {
        sig << (-shift)
    } else if shift >= 64 {
        // Magnitude below half a quantum unless exactly representable halfway,
        // which needs sig > 2^63 at shift 64.
        if shift == 64 && sig > (1u64 << 63) {
            1
        } else {
            0
        }
    } else {
        let kept = sig >> shift;
        let rem = sig & ((1u64 << shift) - 1);
        let half = 1u64 << (shift - 1);
        if rem > half || (rem == half && kept & 1 == 1) {
            kept + 1
        } else {
            kept
        }
    };
    if quantum == -24 {
        // Subnormal range; a carry into 0x400 lands on the smallest normal.
        return Half(sign | man as u16);
    }
    let mut q = quantum;
    if man == 0x800 {
        man = 0x400;
        q += 1;
    }
    let biased = q + 10 + 15;
    if biased >= 31 {
        return Half(sign | EXP_MASK);
    }
    Half(sign | ((biased as u16) << 10) | (man as u16 & MAN_MASK))
}

/// Rounds a binary32 value to binary16 (RNE, overflow to infinity).
pub fn f32_to_f16(x: f32) -> Half {
    let bits = x.to_bits();
    let negative = bits >> 31 != 0;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x7F_FFFF;
    if exp == 0xFF {
        return if man != 0 {
            Half::NAN
        } else if negative {
            Half::NEG_INFINITY
        } else {
            Half::INFINITY
        };
    }
    let (sig, exp2) = if exp == 0 {
        (man, -149)
    } else {
        (man | 0x80_0000, exp - 150)
    };
    if sig == 0 {
        return if negative { Half::NEG_ZERO } else { Half::ZERO };
    }
    round_to_half(negative, sig as u64, exp2)
}

/// Rounds a binary64 value directly to binary16 (single rounding, RNE).
pub fn f64_to_f16(x: f64) -> Half {
    let bits = x.to_bits();
    let negative = bits >> 63 != 0;
    let exp = ((bits >> 52) & 0x7FF) as i32;
    let man = bits & 0x000F_FFFF_FFFF_FFFF;
    if exp == 0x7FF {
        return if man != 0 {
            Half::NAN
        } else if negative {
            Half::NEG_INFINITY
        } else {
            Half::INFINITY
        };
    }
    let (sig, exp2) = if exp == 0 {
        (man, -1074)
    } else {
        (man | 0x0010_0000_0000_0000, exp - 1075)
    };
    if sig == 0 {
        return if negative { Half::NEG_ZERO } else { Half::ZERO };
    }
    round_to_half(negative, sig, exp2)
}

/// Exact widening conversion. NaN payloads are kept (and quieted).
pub fn f16_to_f32(h: Half) -> f32 {
    let bits = h.0 as u32;
    let sign = (bits & 0x8000) << 16;
    let exp = (bits >> 10) & 0x1F;
    let man = bits & 0x3FF;
    match exp {
        0 => {
            // man * 2^-24, exact in binary32.
            let mag = man as f32 * f32::from_bits(0x3380_0000);
            f32::from_bits(mag.to_bits() | sign)
        }
        0x1F if man == 0 => f32::from_bits(sign | 0x7F80_0000),
        0x1F => f32::from_bits(sign | 0x7FC0_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 127 - 15) << 23) | (man << 13)),
    }
}

#[inline]
pub fn h_add(a: Half, b: Half) -> Half {
    f32_to_f16(f16_to_f32(a) + f16_to_f32(b))
}

#[inline]
pub fn h_mul(a: Half, b: Half) -> Half {
    f32_to_f16(f16_to_f32(a) * f16_to_f32(b))
}

/// `a * b + c` with a binary64 intermediate and one rounding to binary16.
#[inline]
pub fn h_fma(a: Half, b: Half, c: Half) -> Half {
    let prod = f16_to_f32(a) as f64 * f16_to_f32(b) as f64;
    f64_to_f16(prod + f16_to_f32(c) as f64)
}

#[inline]
pub fn h2_add(a: Half2, b: Half2) -> Half2 {
    Half2::new(h_add(a.lo, b.lo), h_add(a.hi, b.hi))
}

#[inline]
pub fn h2_mul(a: Half2, b: Half2) -> Half2 {
    Half2::new(h_mul(a.lo, b.lo), h_mul(a.hi, b.hi))
}

#[inline]
pub fn h2_fma(a: Half2, b: Half2, c: Half2) -> Half2 {
    Half2::new(h_fma(a.lo, b.lo, c.lo), h_fma(a.hi, b.hi, c.hi))
}

#[inline]
pub const fn low2half(v: Half2) -> Half {
    v.lo
}

#[inline]
pub const fn high2half(v: Half2) -> Half {
    v.hi
}

#[inline]
pub const fn halves2half2(lo: Half, hi: Half) -> Half2 {
    Half2::new(lo, hi)
}
