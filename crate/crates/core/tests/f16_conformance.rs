//! binary16 arithmetic checked against the `half` crate as an independent
//! reference implementation.

use half::f16;
use proptest::prelude::*;
use qgemm_lab::f16core::*;
use qgemm_lab::rng::SplitMix64;

fn reference(x: f16) -> Half {
    if x.is_nan() {
        Half::NAN
    } else {
        Half::from_bits(x.to_bits())
    }
}

fn ref_of(h: Half) -> f64 {
    f16::from_bits(h.to_bits()).to_f64()
}

/// Correctly rounded binary64 -> binary16 by searching the ordered finite
/// magnitudes. `f16::from_f64` goes through f32 and can round twice.
fn nearest(x: f64) -> Half {
    if x.is_nan() {
        return Half::NAN;
    }
    let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
    let mag = x.abs();
    // Halfway between MAX and the next binade step rounds to infinity.
    if mag >= 65520.0 {
        return Half::from_bits(sign | 0x7C00);
    }
    let (mut lo, mut hi) = (0u16, 0x7BFFu16);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if f16::from_bits(mid).to_f64() <= mag {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a, b) = (f16::from_bits(lo).to_f64(), f16::from_bits(hi).to_f64());
    let pick = if mag <= a {
        lo
    } else if mag >= b {
        hi
    } else if mag - a < b - mag {
        lo
    } else if mag - a > b - mag {
        hi
    } else if lo % 2 == 0 {
        lo
    } else {
        hi
    };
    Half::from_bits(sign | pick)
}

/// Sum of two halves is exact in binary64, so one rounding gives the correct result.
fn ref_add(a: Half, b: Half) -> Half {
    nearest(ref_of(a) + ref_of(b))
}

fn ref_mul(a: Half, b: Half) -> Half {
    nearest(ref_of(a) * ref_of(b))
}

fn ref_fma(a: Half, b: Half, c: Half) -> Half {
    nearest(ref_of(a) * ref_of(b) + ref_of(c))
}

fn random_half(rng: &mut SplitMix64) -> Half {
    Half::from_bits(rng.next_u64() as u16)
}

#[test]
fn widening_matches_reference_for_every_pattern() {
    for bits in 0..=u16::MAX {
        let h = Half::from_bits(bits);
        let ours = f16_to_f32(h);
        let theirs = f16::from_bits(bits).to_f32();
        if theirs.is_nan() {
            assert!(ours.is_nan(), "{bits:#06x}");
        } else {
            assert_eq!(ours.to_bits(), theirs.to_bits(), "{bits:#06x}");
        }
    }
}

#[test]
fn narrowing_roundtrip_and_nan_canonicalization() {
    for bits in 0..=u16::MAX {
        let h = Half::from_bits(bits);
        let back = f32_to_f16(f16_to_f32(h));
        if h.is_nan() {
            assert_eq!(back, Half::NAN);
        } else {
            assert_eq!(back, h, "{bits:#06x}");
        }
        assert_eq!(
            f64_to_f16(h.to_f64()),
            if h.is_nan() { Half::NAN } else { h }
        );
    }
}

#[test]
fn narrowing_matches_reference_on_random_floats() {
    let mut rng = SplitMix64::new(0xF00D);
    for _ in 0..200_000 {
        let raw = rng.next_u64();
        // Concentrate exponents around the binary16 range, including subnormal and overflow edges.
        let x =
            f32::from_bits((raw as u32 & 0x807F_FFFF) | ((((raw >> 32) % 48) as u32 + 96) << 23));
        assert_eq!(f32_to_f16(x), reference(f16::from_f32(x)), "{x:e}");
        assert_eq!(f32_to_f16(x), nearest(x as f64), "{x:e}");
        let y = f64::from_bits(raw & 0x800F_FFFF_FFFF_FFFF | (((raw >> 52) % 48 + 992) << 52));
        assert_eq!(f64_to_f16(y), nearest(y), "{y:e}");
    }
    assert_eq!(f32_to_f16(65520.0), reference(f16::from_f32(65520.0)));
}

#[test]
fn scalar_ops_match_reference_on_random_operands() {
    let mut rng = SplitMix64::new(6);
    for _ in 0..100_000 {
        let (a, b, c) = (
            random_half(&mut rng),
            random_half(&mut rng),
            random_half(&mut rng),
        );
        assert_eq!(h_add(a, b), ref_add(a, b), "{a:?} + {b:?}");
        assert_eq!(h_mul(a, b), ref_mul(a, b), "{a:?} * {b:?}");
        assert_eq!(h_fma(a, b, c), ref_fma(a, b, c), "{a:?} * {b:?} + {c:?}");
    }
}

#[test]
fn add_grid_over_stratified_exponents() {
    // 256 patterns: every exponent field with eight significands spread across it.
    let mut sample = Vec::with_capacity(256);
    for exp in 0..32u16 {
        for (i, man) in [0u16, 1, 0x155, 0x200, 0x2AA, 0x3FE, 0x3FF, 0x100]
            .iter()
            .enumerate()
        {
            let sign = if i % 2 == 1 { 0x8000 } else { 0 };
            sample.push(Half::from_bits(sign | (exp << 10) | man));
        }
    }
    assert_eq!(sample.len(), 256);
    for &a in &sample {
        for &b in &sample {
            assert_eq!(h_add(a, b), ref_add(a, b), "{a:?} + {b:?}");
            assert_eq!(h_mul(a, b), ref_mul(a, b), "{a:?} * {b:?}");
        }
    }
}

#[test]
fn fma_close_to_unfused() {
    // Fused and split results differ by at most the product rounding plus one
    // ulp of the larger of the two, measured at operand scale.
    let mut rng = SplitMix64::new(99);
    for _ in 0..20_000 {
        let a = f32_to_f16(rng.activation().to_f32() * 4.0);
        let b = f32_to_f16(rng.activation().to_f32() * 4.0);
        let c = f32_to_f16(rng.activation().to_f32() * 4.0);
        let fused = h_fma(a, b, c);
        let split = h_add(h_mul(a, b), c);
        let gap = (fused.to_f64() - split.to_f64()).abs();
        let scale = (a.to_f64() * b.to_f64())
            .abs()
            .max(c.to_f64().abs())
            .max(fused.to_f64().abs());
        let ulp = 2f64.powi((scale.log2().floor() as i32 - 10).max(-24)) * 1.5;
        assert!(
            gap <= ulp,
            "{a:?} {b:?} {c:?}: fused {fused:?} split {split:?}"
        );
        assert_eq!(fused, ref_fma(a, b, c));
    }
    let tenth = f32_to_f16(0.1);
    assert_eq!(
        h_fma(tenth, tenth, Half::ZERO),
        ref_fma(tenth, tenth, Half::ZERO)
    );
}

#[test]
fn packed_ops_equal_scalar_lanes() {
    let mut rng = SplitMix64::new(10_000);
    for _ in 0..10_000 {
        let v: Vec<Half> = (0..6).map(|_| random_half(&mut rng)).collect();
        let (a, b, c) = (
            halves2half2(v[0], v[1]),
            halves2half2(v[2], v[3]),
            halves2half2(v[4], v[5]),
        );
        assert_eq!(
            h2_add(a, b),
            halves2half2(h_add(v[0], v[2]), h_add(v[1], v[3]))
        );
        assert_eq!(
            h2_mul(a, b),
            halves2half2(h_mul(v[0], v[2]), h_mul(v[1], v[3]))
        );
        assert_eq!(
            h2_fma(a, b, c),
            halves2half2(h_fma(v[0], v[2], v[4]), h_fma(v[1], v[3], v[5]))
        );
    }
}

#[test]
fn lane_roundtrip_exhaustive_low_lane() {
    for lo in 0..=u16::MAX {
        let hi = lo.rotate_left(7) ^ 0x5A5A;
        let v = Half2::from_bits(((hi as u32) << 16) | lo as u32);
        assert_eq!(low2half(v).to_bits(), lo);
        assert_eq!(high2half(v).to_bits(), hi);
        assert_eq!(halves2half2(low2half(v), high2half(v)), v);
    }
}

proptest! {
    #[test]
    fn half2_bits_roundtrip(bits in any::<u32>()) {
        let v = Half2::from_bits(bits);
        prop_assert_eq!(v.to_bits(), bits);
        prop_assert_eq!(halves2half2(low2half(v), high2half(v)), v);
    }

    #[test]
    fn add_is_commutative(a in any::<u16>(), b in any::<u16>()) {
        let (a, b) = (Half::from_bits(a), Half::from_bits(b));
        prop_assert_eq!(h_add(a, b), h_add(b, a));
    }
}
