//! Closed-form counter predictions and a weighted cost proxy.
//!
//! Predictions are exact integer counts, tail blocks included. A problem
//! splits into at most four kinds of blocks (full or tail along M, times
//! full or tail along K); each kind has fixed per-block counts, which are
//! multiplied by how many such blocks exist. With `rows` A rows, `ext` valid
//! K elements, `T_a = ceil(ext / e)` working threads and `BK` the tile width:
//!
//! | counter | baseline | with smb |
//! |---|---|---|
//! | `global_atomic` | `2 * T_a * rows` | `2 * rows` |
//! | `barriers` | 1 | 3 |
//! | half2 ops | `2 * ext * rows` | `+ 2 * T_a * rows` |
//! | `shared_write` | `BK * rows` | `+ 2 * rows + 2 * T_a * rows` |
//! | `shared_read` | `ext * rows` | `+ 2 * T_a * rows + 2 * rows` |
//!
//! A-tile loads are `ext * rows` 16-bit transactions, or `ext / 2 * rows`
//! 32-bit transactions with `vml` and no permutation. Half2 ops count one
//! `valu_packed` each with `ila`, else two `valu_scalar`.
//!
//! The cost proxy is an arbitrary weighted sum of counters. It is a way to
//! rank variants on this model only and says nothing about wall-clock speed
//! on real hardware.

use thiserror::Error;

use crate::kernels::{TileParams, VariantFlags, N_TILE};
use crate::simt_sim::CounterSet;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("shape error: {0}")]
pub struct ShapeError(pub String);

/// Problem dimensions as far as counting is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ProblemDims {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub group_size: usize,
    pub perm: bool,
}

/// Predicted counters, field-for-field comparable with a measured [`CounterSet`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CounterPrediction(pub CounterSet);

impl std::ops::Deref for CounterPrediction {
    type Target = CounterSet;
    fn deref(&self) -> &CounterSet {
        &self.0
    }
}

fn validate(dims: &ProblemDims, tile: &TileParams, flags: VariantFlags) -> Result<(), ShapeError> {
    let ProblemDims {
        m,
        k,
        n,
        group_size,
        ..
    } = *dims;
    if m == 0 || k == 0 || n == 0 || group_size == 0 {
        return Err(ShapeError(format!("dimensions must be positive: {dims:?}")));
    }
    if k % 8 != 0 || n % 8 != 0 || k % group_size != 0 {
        return Err(ShapeError(format!(
            "need K % 8 == 0, N % 8 == 0 and g | K, got K={k} N={n} g={group_size}"
        )));
    }
    if tile.threads == 0 || tile.m_count == 0 || tile.bk == 0 || tile.bk % tile.threads != 0 {
        return Err(ShapeError(format!("invalid tile {tile:?}")));
    }
    if flags.vml && (tile.bk / tile.threads) % 2 != 0 {
        return Err(ShapeError(format!(
            "vectorized loads need an even elements-per-thread, tile {tile:?}"
        )));
    }
    Ok(())
}

/// `(extent, multiplicity)` pairs for splitting `total` into `chunk`-sized pieces.
fn pieces(total: usize, chunk: usize) -> impl Iterator<Item = (u64, u64)> {
    let full = (total / chunk) as u64;
    let tail = (total % chunk) as u64;
    [(chunk as u64, full), (tail, u64::from(tail > 0))]
        .into_iter()
        .filter(|&(_, count)| count > 0)
}

/// Exact counters for one launch of the GEMM kernel.
pub fn predict(
    dims: ProblemDims,
    tile: TileParams,
    flags: VariantFlags,
) -> Result<CounterPrediction, ShapeError> {
    validate(&dims, &tile, flags)?;
    let e = (tile.bk / tile.threads) as u64;
    let bk = tile.bk as u64;
    let n_blocks = (dims.n / N_TILE) as u64;
    let vector_loads = flags.vml && !dims.perm;

    let mut c = CounterSet::default();
    for (rows, m_mult) in pieces(dims.m, tile.m_count) {
        for (ext, k_mult) in pieces(dims.k, tile.bk) {
            let blocks = m_mult * k_mult * n_blocks;
            let active = ext.div_ceil(e);

            let (load16, load32) = if vector_loads {
                (0, ext / 2 * rows)
            } else {
                (ext * rows, 0)
            };
            let mut h2_ops = 2 * ext * rows;
            let mut shared_write = bk * rows;
            let mut shared_read = ext * rows;
            let (atomics, barriers) = if flags.smb {
                h2_ops += 2 * active * rows;
                shared_write += 2 * rows + 2 * active * rows;
                shared_read += 2 * active * rows + 2 * rows;
                (2 * rows, 3)
            } else {
                (2 * active * rows, 1)
            };

            c.global_load_16 += blocks * load16;
            c.global_load_32 += blocks * load32;
            c.global_atomic += blocks * atomics;
            c.shared_read += blocks * shared_read;
            c.shared_write += blocks * shared_write;
            c.barriers += blocks * barriers;
            if flags.ila {
                c.valu_packed += blocks * h2_ops;
            } else {
                c.valu_scalar += blocks * 2 * h2_ops;
            }
        }
    }
    Ok(CounterPrediction(c))
}

/// One line of a measured-vs-predicted comparison.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompareRow {
    pub counter: &'static str,
    pub measured: u64,
    pub predicted: u64,
    pub equal: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Comparison {
    pub rows: Vec<CompareRow>,
    pub all_equal: bool,
}

impl Comparison {
    pub fn mismatches(&self) -> impl Iterator<Item = &CompareRow> {
        self.rows.iter().filter(|r| !r.equal)
    }
}

pub fn compare(measured: &CounterSet, predicted: &CounterPrediction) -> Comparison {
    let rows: Vec<CompareRow> = CounterSet::NAMES
        .iter()
        .zip(measured.values().iter().zip(predicted.values().iter()))
        .map(|(&counter, (&measured, &predicted))| CompareRow {
            counter,
            measured,
            predicted,
            equal: measured == predicted,
        })
        .collect();
    let all_equal = rows.iter().all(|r| r.equal);
    Comparison { rows, all_equal }
}

/// Per-counter weights of the cost proxy, in arbitrary units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostWeights {
    pub w_atomic: f64,
    pub w_load16: f64,
    pub w_load32: f64,
    pub w_valu_scalar: f64,
    pub w_valu_packed: f64,
    /// Applied to shared reads plus writes.
    pub w_shared: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            w_atomic: 1.0,
            w_load16: 0.25,
            w_load32: 0.4,
            w_valu_scalar: 0.05,
            w_valu_packed: 0.08,
            w_shared: 0.01,
        }
    }
}

impl CostWeights {
    pub fn fields(&self) -> [(&'static str, f64); 6] {
        [
            ("w_atomic", self.w_atomic),
            ("w_load16", self.w_load16),
            ("w_load32", self.w_load32),
            ("w_valu_scalar", self.w_valu_scalar),
            ("w_valu_packed", self.w_valu_packed),
            ("w_shared", self.w_shared),
        ]
    }

    pub fn validate(&self) -> Result<(), String> {
        match self
            .fields()
            .iter()
            .find(|(_, v)| !(v.is_finite() && *v >= 0.0))
        {
            Some((name, v)) => Err(format!(
                "cost weight {name} = {v} must be finite and non-negative"
            )),
            None => Ok(()),
        }
    }
}

pub fn cost_proxy(c: &CounterSet, w: &CostWeights) -> f64 {
    w.w_atomic * c.global_atomic as f64
        + w.w_load16 * c.global_load_16 as f64
        + w.w_load32 * c.global_load_32 as f64
        + w.w_valu_scalar * c.valu_scalar as f64
        + w.w_valu_packed * c.valu_packed as f64
        + w.w_shared * (c.shared_read + c.shared_write) as f64
}

/// `100 * (1 - opt / base)`; zero when `base` is zero.
pub fn reduction_pct(base: f64, opt: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        100.0 * (1.0 - opt / base)
    }
}
