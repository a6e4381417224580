//! The invariant suite behind `qgemm-lab verify`.

use std::fmt;
use std::path::PathBuf;

use half::f16;
use qgemm_lab::f16core::{
    h2_add, h2_fma, h2_mul, h_add, h_fma, h_mul, halves2half2, high2half, low2half, Half, Half2,
};
use qgemm_lab::gptq_format::QuantizedWeight;
use qgemm_lab::rng::SplitMix64;

use crate::bench::ShapeRun;
use crate::config::Plan;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} {}", self.name, self.detail)
    }
}

/// Correctly rounded binary64 to binary16, found by bisection over the
/// ordered finite magnitudes of the `half` crate's values.
pub fn reference_round(x: f64) -> Half {
    if x.is_nan() {
        return Half::NAN;
    }
    let sign = if x.is_sign_negative() { 0x8000 } else { 0 };
    let mag = x.abs();
    if mag >= 65520.0 {
        return Half::from_bits(sign | 0x7C00);
    }
    let (mut lo, mut hi) = (0u16, 0x7BFF);
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
    } else if mag >= b || (mag - a > b - mag) || (mag - a == b - mag && lo % 2 == 1) {
        hi
    } else {
        lo
    };
    Half::from_bits(sign | pick)
}

fn wide(h: Half) -> f64 {
    f16::from_bits(h.to_bits()).to_f64()
}

/// `count` random operand triples checked against the reference rounding.
pub fn check_scalar_ops(seed: u64, count: usize) -> Check {
    let mut rng = SplitMix64::new(seed);
    let mut draw = || Half::from_bits(rng.next_u64() as u16);
    let mut bad = Vec::new();
    for _ in 0..count {
        let (a, b, c) = (draw(), draw(), draw());
        let cases = [
            ("add", h_add(a, b), reference_round(wide(a) + wide(b))),
            ("mul", h_mul(a, b), reference_round(wide(a) * wide(b))),
            (
                "fma",
                h_fma(a, b, c),
                reference_round(wide(a) * wide(b) + wide(c)),
            ),
        ];
        for (op, got, want) in cases {
            if got != want && bad.len() < 3 {
                bad.push(format!(
                    "{op}({a:?}, {b:?}, {c:?}) = {got:?}, want {want:?}"
                ));
            }
        }
    }
    Check::new(
        "f16-scalar-ops",
        bad.is_empty(),
        if bad.is_empty() {
            format!("{count} add/mul/fma triples bit-exact")
        } else {
            bad.join("; ")
        },
    )
}

/// Exhaustive lane split/join over every low-lane pattern, plus packed ops
/// against their scalar lanes.
pub fn check_lanes(seed: u64, count: usize) -> Check {
    let mut ok = (0..=u16::MAX).all(|lo| {
        let v = Half2::from_bits(((lo.reverse_bits() as u32) << 16) | lo as u32);
        halves2half2(low2half(v), high2half(v)) == v && low2half(v).to_bits() == lo
    });
    let mut rng = SplitMix64::new(seed);
    for _ in 0..count {
        let (a, b, c) = (
            Half2::from_bits(rng.next_u64() as u32),
            Half2::from_bits(rng.next_u64() as u32),
            Half2::from_bits(rng.next_u64() as u32),
        );
        ok &= h2_add(a, b) == halves2half2(h_add(a.lo, b.lo), h_add(a.hi, b.hi))
            && h2_mul(a, b) == halves2half2(h_mul(a.lo, b.lo), h_mul(a.hi, b.hi))
            && h2_fma(a, b, c) == halves2half2(h_fma(a.lo, b.lo, c.lo), h_fma(a.hi, b.hi, c.hi));
    }
    Check::new(
        "f16-lanes",
        ok,
        format!("65536 lane roundtrips, {count} packed ops"),
    )
}

pub fn check_pack_roundtrip(id: &str, b: &QuantizedWeight) -> Check {
    let u = b.unpack();
    let repacked = QuantizedWeight::pack(
        b.k(),
        b.n(),
        b.group_size(),
        &u.codes,
        &u.scales,
        &u.zeros,
        u.perm,
    );
    let bytes = b.to_bytes();
    let reread = QuantizedWeight::from_bytes(&bytes);
    let ok = repacked.is_ok_and(|w| &w == b) && reread.is_ok_and(|w| &w == b);
    Check::new(
        format!("pack-roundtrip:{id}"),
        ok,
        format!("{} bytes", bytes.len()),
    )
}

/// A stored weight file must parse and re-serialize to the same bytes.
pub fn check_weight_file(path: &PathBuf) -> Check {
    let name = format!("weights-file:{}", path.display());
    match std::fs::read(path) {
        Err(e) => Check::new(name, false, format!("io: {e}")),
        Ok(bytes) => match QuantizedWeight::from_bytes(&bytes) {
            Err(e) => Check::new(name, false, format!("FormatError: {e}")),
            Ok(w) => Check::new(
                name,
                w.to_bytes() == bytes,
                format!("k={} n={} g={}", w.k(), w.n(), w.group_size()),
            ),
        },
    }
}

/// Per-cell checks plus, for every `smb` variant, the comparison with the
/// baseline output. Without a tolerance override the allowed difference per
/// element is the sum of both running-error bounds; with one it is flat.
pub fn check_cells(plan: &Plan, runs: &[ShapeRun], strict: bool) -> Vec<Check> {
    let mut out = Vec::new();
    for run in runs {
        let id = run.id(plan.seed);
        for cell in &run.cells {
            let name = format!("cell:{id}:{}", cell.variant);
            let mut problems = Vec::new();
            if !cell.counters_match {
                problems.push("counters differ from prediction".to_string());
            }
            if !cell.bit_exact {
                problems.push("output differs from canonical order".to_string());
            }
            if !cell.within_tolerance {
                problems.push(format!(
                    "max_abs_err {:.5e} over tolerance",
                    cell.max_abs_err
                ));
            }
            if strict && cell.uninitialized_reads > 0 {
                problems.push(format!(
                    "{} uninitialized shared reads",
                    cell.uninitialized_reads
                ));
            }
            let detail = if problems.is_empty() {
                format!("max_abs_err={:.5e}", cell.max_abs_err)
            } else {
                problems.join("; ")
            };
            out.push(Check::new(name, problems.is_empty(), detail));

            if cell.variant.smb {
                let mut worst = 0f64;
                let mut ok = true;
                for i in 0..cell.c.len() {
                    let d = (cell.c[i].to_f64() - run.baseline.c[i].to_f64()).abs();
                    worst = worst.max(d);
                    let allowed = plan
                        .tolerance
                        .unwrap_or(cell.bound[i] + run.baseline.bound[i]);
                    ok &= d <= allowed;
                }
                let differing = cell
                    .c
                    .iter()
                    .zip(&run.baseline.c)
                    .filter(|(a, b)| a.to_bits() != b.to_bits())
                    .count();
                out.push(Check::new(
                    format!("smb-vs-baseline:{id}:{}", cell.variant),
                    ok,
                    format!(
                        "max diff {worst:.5e}, {differing}/{} elements reordered",
                        cell.c.len()
                    ),
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_rounding_ties() {
        assert_eq!(reference_round(2049.0).to_bits(), 0x6800); // tie to even, 2048
        assert_eq!(reference_round(2051.0).to_bits(), 0x6802); // tie to even, 2052
        assert_eq!(reference_round(65519.0).to_bits(), 0x7BFF);
        assert_eq!(reference_round(-65520.0).to_bits(), 0xFC00);
        assert_eq!(reference_round(2f64.powi(-25)).to_bits(), 0x0000);
        assert_eq!(reference_round(2f64.powi(-25) * 1.5).to_bits(), 0x0001);
    }

    #[test]
    fn small_suites_pass() {
        assert!(check_scalar_ops(1, 2000).passed);
        assert!(check_lanes(1, 200).passed);
    }
}
