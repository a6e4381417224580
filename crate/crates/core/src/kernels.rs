//! GPTQ 4-bit GEMM kernels on the SIMT simulator, plus reference oracles.
//!
//! `C[M x N] += A[M x K] * dequant(B)[K x N]`, where `A` holds binary16
//! activations and `B` is a [`QuantizedWeight`].
//!
//! # Grid
//!
//! One block computes a `rows x BK x 4` tile: up to `m_count` rows of `A`, a
//! `BK`-wide slice of `K`, and four output columns. Blocks are numbered with
//! the M index outermost, then N, then K, so all K-slices of one output tile
//! are adjacent. With `e = BK / T` elements per thread, thread `t` owns the
//! K-slice elements `t*e .. (t+1)*e`.
//!
//! # Block program
//!
//! 1. Load the A tile into shared `block_a[m_count][BK]`: 16-bit loads, or
//!    half2 loads split with `low2half`/`high2half` when `vml` is set and no
//!    permutation is present. With a permutation every element is a gather
//!    `A[row][perm[k]]` and stays a 16-bit load. Elements past `K` are
//!    written as zero without loading. Barrier.
//! 2. Multiply-accumulate: for each row, two half2 accumulators
//!    (`result01`, `result23`) take `fma((a, a), (B[k][n], B[k][n+1]), acc)`
//!    over the thread's K range. Half2 ops issue as one packed instruction
//!    when `ila` is set, else as two scalar instructions.
//! 3. Store. Baseline: every thread with work atomically adds its two
//!    accumulators per row into `C`. With `smb`: thread 0 zeroes the shared
//!    `block_result[m_count][2]`, barrier, each working thread adds its
//!    accumulators into it in thread order, barrier, thread 0 issues the two
//!    atomics per row.
//!
//! Dequantized B values come straight from the weight container and are not
//! counted as global traffic; they are identical across variants.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::f16core::{h_add, h_fma, Half, Half2};
use crate::gptq_format::{FormatError, QuantizedWeight};
use crate::rng::SplitMix64;
use crate::simt_sim::{
    BufferId, CounterSet, DeviceContext, Diagnostic, Isa, Kernel, LaunchConfig, SimError, Step,
    ThreadCtx,
};

/// Absolute bound on `|C - oracle_gemm_f32|` for the seeded M=4, K=512, N=64,
/// g=128 problems (seeds 0..5, default tile, every variant).
///
/// Enumerating all eight accumulation orders over those seeds gives a worst
/// error of 0.0897 at `|C|` up to 32.04; this is that value rounded up to the
/// next power of two, four binary16 ulps at `|C| = 32`.
pub const REFERENCE_ERROR_BOUND: f64 = 0.125;

/// Seeds the reference bound was derived over.
pub const REFERENCE_SEEDS: std::ops::Range<u64> = 0..5;

/// Output columns per block (two half2 accumulators).
pub const N_TILE: usize = 4;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// One GEMM instance: activations `a` (`m x k`, row-major) and weights `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct GemmProblem {
    m: usize,
    a: Vec<Half>,
    b: QuantizedWeight,
}

impl GemmProblem {
    pub fn new(m: usize, a: Vec<Half>, b: QuantizedWeight) -> Result<Self, KernelError> {
        if m == 0 {
            return Err(KernelError::Shape("M must be at least 1".into()));
        }
        if a.len() != m * b.k() {
            return Err(KernelError::Shape(format!(
                "A has {} elements, expected {m} x {}",
                a.len(),
                b.k()
            )));
        }
        Ok(GemmProblem { m, a, b })
    }

    /// Seeded problem. Draw order from one SplitMix64 stream: activations
    /// (row-major), codes (row-major), zero points, scales, then the
    /// permutation for [`PermMode::Shuffled`].
    pub fn generate(
        seed: u64,
        m: usize,
        k: usize,
        n: usize,
        group_size: usize,
        perm: PermMode,
    ) -> Result<Self, KernelError> {
        if m == 0 {
            return Err(KernelError::Shape("M must be at least 1".into()));
        }
        // Validate before drawing so bad shapes fail fast.
        QuantizedWeight::from_raw(
            k,
            n,
            group_size,
            vec![0; k / 8 * n],
            vec![Half::ZERO; k.checked_div(group_size).unwrap_or(0) * n],
            vec![0; k.checked_div(group_size).unwrap_or(0) * n / 8],
            None,
        )?;
        let groups = k / group_size;
        let mut rng = SplitMix64::new(seed);
        let a = (0..m * k).map(|_| rng.activation()).collect();
        let codes: Vec<u8> = (0..k * n).map(|_| rng.code()).collect();
        let zeros: Vec<u8> = (0..groups * n).map(|_| rng.code()).collect();
        let scales: Vec<Half> = (0..groups * n).map(|_| rng.scale()).collect();
        let perm = match perm {
            PermMode::None => None,
            PermMode::Identity => Some((0..k as u32).collect()),
            PermMode::Reversed => Some((0..k as u32).rev().collect()),
            PermMode::Shuffled => Some(rng.permutation(k)),
        };
        let b = QuantizedWeight::pack(k, n, group_size, &codes, &scales, &zeros, perm)?;
        Self::new(m, a, b)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.b.k()
    }

    pub fn n(&self) -> usize {
        self.b.n()
    }

    pub fn a(&self) -> &[Half] {
        &self.a
    }

    pub fn b(&self) -> &QuantizedWeight {
        &self.b
    }

    /// Activation seen at logical position `(row, k)`, after the permutation.
    #[inline]
    pub fn a_at(&self, row: usize, k: usize) -> Half {
        let src = self.b.perm().map_or(k, |p| p[k] as usize);
        self.a[row * self.k() + src]
    }

    /// `A` with the permutation applied to its columns.
    pub fn permuted_a(&self) -> Vec<Half> {
        (0..self.m * self.k())
            .map(|i| self.a_at(i / self.k(), i % self.k()))
            .collect()
    }
}

/// Activation-order permutation to attach to generated weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PermMode {
    None,
    Identity,
    Reversed,
    Shuffled,
}

impl PermMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PermMode::None => "none",
            PermMode::Identity => "identity",
            PermMode::Reversed => "reversed",
            PermMode::Shuffled => "seeded-shuffle",
        }
    }
}

impl FromStr for PermMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(PermMode::None),
            "identity" => Ok(PermMode::Identity),
            "reversed" => Ok(PermMode::Reversed),
            "seeded-shuffle" | "shuffle" => Ok(PermMode::Shuffled),
            other => Err(format!("unknown perm mode `{other}`")),
        }
    }
}

impl fmt::Display for PermMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Blocking configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TileParams {
    /// K extent of one block's slice (`BLOCK_KN_SIZE`).
    pub bk: usize,
    /// A rows per block.
    pub m_count: usize,
    /// Threads per block.
    pub threads: usize,
}

impl Default for TileParams {
    fn default() -> Self {
        TileParams {
            bk: 128,
            m_count: 2,
            threads: 64,
        }
    }
}

impl TileParams {
    pub fn new(bk: usize, m_count: usize, threads: usize) -> Self {
        TileParams {
            bk,
            m_count,
            threads,
        }
    }

    /// Elements per thread, `BK / T`.
    pub fn elems_per_thread(&self) -> usize {
        self.bk / self.threads
    }

    pub fn validate(&self, flags: VariantFlags) -> Result<(), KernelError> {
        if self.threads == 0 || self.m_count == 0 || self.bk == 0 {
            return Err(KernelError::Shape(format!("degenerate tile {self:?}")));
        }
        if self.bk % self.threads != 0 {
            return Err(KernelError::Shape(format!(
                "BK={} is not a multiple of T={}",
                self.bk, self.threads
            )));
        }
        if flags.vml && self.elems_per_thread() % 2 != 0 {
            return Err(KernelError::Shape(format!(
                "vectorized loads need an even number of elements per thread, got {}",
                self.elems_per_thread()
            )));
        }
        Ok(())
    }

    /// Shared memory footprint in bytes.
    pub fn shared_bytes(&self, flags: VariantFlags) -> usize {
        let block_a = self.m_count * self.bk;
        let block_result = if flags.smb { N_TILE * self.m_count } else { 0 };
        2 * (block_a + block_result)
    }
}

/// Which of the three optimizations are enabled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VariantFlags {
    /// Shared-memory buffered store.
    pub smb: bool,
    /// Vectorized (half2) A-tile loads.
    pub vml: bool,
    /// Packed half2 instructions.
    pub ila: bool,
}

impl VariantFlags {
    pub const BASELINE: VariantFlags = VariantFlags::new(false, false, false);
    pub const OPT4GPTQ: VariantFlags = VariantFlags::new(true, true, true);

    pub const fn new(smb: bool, vml: bool, ila: bool) -> Self {
        VariantFlags { smb, vml, ila }
    }

    /// All eight combinations, baseline first, in `(smb, vml, ila)` binary order.
    pub fn all() -> [VariantFlags; 8] {
        std::array::from_fn(|i| VariantFlags::new(i & 4 != 0, i & 2 != 0, i & 1 != 0))
    }

    pub fn isa(&self) -> Isa {
        if self.ila {
            Isa::Packed
        } else {
            Isa::Lowered
        }
    }

    pub fn name(&self) -> String {
        match (self.smb, self.vml, self.ila) {
            (false, false, false) => "baseline".into(),
            (true, true, true) => "opt4gptq".into(),
            _ => [(self.smb, "smb"), (self.vml, "vml"), (self.ila, "ila")]
                .iter()
                .filter(|(on, _)| *on)
                .map(|(_, n)| *n)
                .collect::<Vec<_>>()
                .join("+"),
        }
    }
}

impl fmt::Display for VariantFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for VariantFlags {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "baseline" => return Ok(Self::BASELINE),
            "opt4gptq" | "all" => return Ok(Self::OPT4GPTQ),
            _ => {}
        }
        let mut flags = VariantFlags::default();
        for part in s.split('+') {
            let slot = match part {
                "smb" => &mut flags.smb,
                "vml" => &mut flags.vml,
                "ila" => &mut flags.ila,
                other => return Err(format!("unknown variant component `{other}`")),
            };
            if std::mem::replace(slot, true) {
                return Err(format!("`{part}` repeated in variant `{s}`"));
            }
        }
        Ok(flags)
    }
}

/// Block decomposition of a problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub tile: TileParams,
    pub m_blocks: usize,
    pub n_blocks: usize,
    pub k_blocks: usize,
}

/// Placement of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockGeom {
    pub offset_m: usize,
    pub rows: usize,
    pub n0: usize,
    pub offset_k: usize,
    /// Valid K elements in this block's slice.
    pub k_extent: usize,
    /// Threads whose K range holds at least one valid element.
    pub active_threads: usize,
}

impl Grid {
    pub fn new(m: usize, k: usize, n: usize, tile: TileParams) -> Self {
        Grid {
            m,
            k,
            n,
            tile,
            m_blocks: m.div_ceil(tile.m_count),
            n_blocks: n / N_TILE,
            k_blocks: k.div_ceil(tile.bk),
        }
    }

    pub fn num_blocks(&self) -> usize {
        self.m_blocks * self.n_blocks * self.k_blocks
    }

    pub fn block(&self, id: usize) -> BlockGeom {
        let per_m = self.n_blocks * self.k_blocks;
        let (mb, rest) = (id / per_m, id % per_m);
        let (nb, kb) = (rest / self.k_blocks, rest % self.k_blocks);
        let offset_m = mb * self.tile.m_count;
        let offset_k = kb * self.tile.bk;
        let k_extent = self.tile.bk.min(self.k - offset_k);
        BlockGeom {
            offset_m,
            rows: self.tile.m_count.min(self.m - offset_m),
            n0: nb * N_TILE,
            offset_k,
            k_extent,
            active_threads: k_extent.div_ceil(self.tile.elems_per_thread()),
        }
    }
}

/// Result of one kernel launch.
#[derive(Clone, Debug)]
pub struct GemmOutput {
    /// `M x N` output, row-major.
    pub c: Vec<Half>,
    pub counters: CounterSet,
    /// Uninitialized shared-memory reads observed during the launch.
    pub diagnostics: Vec<Diagnostic>,
}

struct GemmKernel<'p> {
    problem: &'p GemmProblem,
    grid: Grid,
    flags: VariantFlags,
    a_buf: BufferId,
    c_buf: BufferId,
}

/// Per-thread accumulators: `[result01, result23]` per row.
type Accumulators = Vec<[Half2; 2]>;

impl GemmKernel<'_> {
    fn tile(&self) -> TileParams {
        self.grid.tile
    }

    fn block_result_offset(&self, m: usize) -> usize {
        self.tile().m_count * self.tile().bk + 4 * m
    }

    fn thread_range(&self, geom: &BlockGeom, t: usize) -> (usize, usize) {
        let e = self.tile().elems_per_thread();
        ((t * e).min(geom.k_extent), ((t + 1) * e).min(geom.k_extent))
    }

    fn load_a_tile(&self, geom: &BlockGeom, th: &mut ThreadCtx<'_>) -> Result<(), SimError> {
        let (k, bk) = (self.problem.k(), self.tile().bk);
        let e = self.tile().elems_per_thread();
        let first = th.thread_id() * e;
        let perm = self.problem.b().perm();
        for m in 0..geom.rows {
            let row_base = (geom.offset_m + m) * k;
            let dst = m * bk + first;
            match perm {
                Some(perm) => {
                    for j in 0..e {
                        let kk = geom.offset_k + first + j;
                        let v = if kk < k {
                            th.global_load_half(self.a_buf, row_base + perm[kk] as usize)?
                        } else {
                            Half::ZERO
                        };
                        th.shared_write(dst + j, v)?;
                    }
                }
                None if self.flags.vml => {
                    for j in (0..e).step_by(2) {
                        let kk = geom.offset_k + first + j;
                        let pair = if kk < k {
                            th.global_load_half2(self.a_buf, row_base + kk)?
                        } else {
                            Half2::ZERO
                        };
                        th.shared_write(dst + j, crate::f16core::low2half(pair))?;
                        th.shared_write(dst + j + 1, crate::f16core::high2half(pair))?;
                    }
                }
                None => {
                    for j in 0..e {
                        let kk = geom.offset_k + first + j;
                        let v = if kk < k {
                            th.global_load_half(self.a_buf, row_base + kk)?
                        } else {
                            Half::ZERO
                        };
                        th.shared_write(dst + j, v)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn multiply_accumulate(
        &self,
        geom: &BlockGeom,
        th: &mut ThreadCtx<'_>,
        acc: &mut Accumulators,
    ) -> Result<(), SimError> {
        let (lo, hi) = self.thread_range(geom, th.thread_id());
        if lo == hi {
            return Ok(());
        }
        let b: Vec<[Half2; 2]> = self
            .problem
            .b()
            .dequant_columns(geom.n0, geom.offset_k + lo, geom.offset_k + hi)
            .map_err(|e| SimError::OutOfBounds {
                space: format!("qweight ({e})"),
                addr: geom.offset_k + hi,
                len: self.problem.k(),
            })?
            .collect();
        let isa = self.flags.isa();
        let bk = self.tile().bk;
        for (m, [r01, r23]) in acc.iter_mut().enumerate().take(geom.rows) {
            for (j, [b01, b23]) in b.iter().enumerate() {
                let a = th.shared_read(m * bk + lo + j)?;
                let a2 = Half2::splat(a);
                *r01 = th.h2_fma(isa, a2, *b01, *r01);
                *r23 = th.h2_fma(isa, a2, *b23, *r23);
            }
        }
        Ok(())
    }

    fn c_offset(&self, geom: &BlockGeom, m: usize) -> usize {
        (geom.offset_m + m) * self.problem.n() + geom.n0
    }
}

impl Kernel for GemmKernel<'_> {
    type Regs = Accumulators;

    fn shared_bytes(&self) -> usize {
        self.tile().shared_bytes(self.flags)
    }

    fn init_regs(&self, _block: usize, _thread: usize) -> Accumulators {
        vec![[Half2::ZERO; 2]; self.tile().m_count]
    }

    fn run(
        &self,
        phase: usize,
        th: &mut ThreadCtx<'_>,
        acc: &mut Accumulators,
    ) -> Result<Step, SimError> {
        let geom = self.grid.block(th.block_id());
        let t = th.thread_id();
        let active = t < geom.active_threads;
        match (phase, self.flags.smb) {
            (0, _) => {
                self.load_a_tile(&geom, th)?;
                Ok(Step::Barrier(0))
            }
            (1, false) => {
                self.multiply_accumulate(&geom, th, acc)?;
                if active {
                    for (m, [r01, r23]) in acc.iter().enumerate().take(geom.rows) {
                        let out = self.c_offset(&geom, m);
                        th.global_atomic_add_half2(self.c_buf, out, *r01)?;
                        th.global_atomic_add_half2(self.c_buf, out + 2, *r23)?;
                    }
                }
                Ok(Step::Exit)
            }
            (1, true) => {
                self.multiply_accumulate(&geom, th, acc)?;
                if t == 0 {
                    for m in 0..geom.rows {
                        let off = self.block_result_offset(m);
                        th.shared_write_half2(off, Half2::ZERO)?;
                        th.shared_write_half2(off + 2, Half2::ZERO)?;
                    }
                }
                Ok(Step::Barrier(1))
            }
            (2, true) => {
                if active {
                    let isa = self.flags.isa();
                    for (m, [r01, r23]) in acc.iter().enumerate().take(geom.rows) {
                        let off = self.block_result_offset(m);
                        let s = th.shared_read_half2(off)?;
                        let s = th.h2_add(isa, s, *r01);
                        th.shared_write_half2(off, s)?;
                        let s = th.shared_read_half2(off + 2)?;
                        let s = th.h2_add(isa, s, *r23);
                        th.shared_write_half2(off + 2, s)?;
                    }
                }
                Ok(Step::Barrier(2))
            }
            (3, true) => {
                if t == 0 {
                    for m in 0..geom.rows {
                        let off = self.block_result_offset(m);
                        let out = self.c_offset(&geom, m);
                        let r0 = th.shared_read_half2(off)?;
                        th.global_atomic_add_half2(self.c_buf, out, r0)?;
                        let r1 = th.shared_read_half2(off + 2)?;
                        th.global_atomic_add_half2(self.c_buf, out + 2, r1)?;
                    }
                }
                Ok(Step::Exit)
            }
            _ => unreachable!("phase {phase} past kernel end"),
        }
    }
}

fn check_problem(
    problem: &GemmProblem,
    tile: TileParams,
    flags: VariantFlags,
) -> Result<(), KernelError> {
    tile.validate(flags)?;
    if problem.n() % N_TILE != 0 {
        return Err(KernelError::Shape(format!(
            "N={} is not a multiple of {N_TILE}",
            problem.n()
        )));
    }
    Ok(())
}

/// Runs the quantized GEMM on `ctx` with `C` starting at zero.
pub fn gemm_half_q_half(
    problem: &GemmProblem,
    tile: TileParams,
    flags: VariantFlags,
    ctx: &mut DeviceContext,
) -> Result<GemmOutput, KernelError> {
    check_problem(problem, tile, flags)?;
    let a_buf = ctx.alloc("a", problem.a().to_vec());
    let c_buf = ctx.alloc_zeroed("c", problem.m() * problem.n());
    let grid = Grid::new(problem.m(), problem.k(), problem.n(), tile);
    let kernel = GemmKernel {
        problem,
        grid,
        flags,
        a_buf,
        c_buf,
    };
    let cfg = LaunchConfig::new(grid.num_blocks(), tile.threads, tile.shared_bytes(flags));
    let counters = ctx.launch(&kernel, cfg)?;
    Ok(GemmOutput {
        c: ctx.read(c_buf).to_vec(),
        counters,
        diagnostics: ctx.take_diagnostics(),
    })
}

/// Shared A tiles as loaded by each block, `[block][m_count][BK]`.
#[derive(Clone, Debug)]
pub struct ATileCapture {
    pub tiles: Vec<Half>,
    /// Counters of the load phase plus the copy-out reads.
    pub counters: CounterSet,
}

/// Runs only the A-tile load of every block and copies `block_a` out.
/// Rows past `M` stay zero.
pub fn capture_a_tiles(
    problem: &GemmProblem,
    tile: TileParams,
    flags: VariantFlags,
    ctx: &mut DeviceContext,
) -> Result<ATileCapture, KernelError> {
    struct LoadOnly<'p> {
        inner: GemmKernel<'p>,
        dump: BufferId,
    }

    impl Kernel for LoadOnly<'_> {
        type Regs = ();

        fn shared_bytes(&self) -> usize {
            self.inner.shared_bytes()
        }

        fn init_regs(&self, _: usize, _: usize) {}

        fn run(&self, phase: usize, th: &mut ThreadCtx<'_>, _: &mut ()) -> Result<Step, SimError> {
            let geom = self.inner.grid.block(th.block_id());
            let tile = self.inner.tile();
            if phase == 0 {
                self.inner.load_a_tile(&geom, th)?;
                return Ok(Step::Barrier(0));
            }
            let e = tile.elems_per_thread();
            let base = th.block_id() * tile.m_count * tile.bk;
            for m in 0..geom.rows {
                for idx in th.thread_id() * e..(th.thread_id() + 1) * e {
                    let v = th.shared_read(m * tile.bk + idx)?;
                    th.global_store_half(self.dump, base + m * tile.bk + idx, v)?;
                }
            }
            Ok(Step::Exit)
        }
    }

    check_problem(problem, tile, flags)?;
    let grid = Grid::new(problem.m(), problem.k(), problem.n(), tile);
    let a_buf = ctx.alloc("a", problem.a().to_vec());
    let c_buf = ctx.alloc_zeroed("c", 0);
    let dump = ctx.alloc_zeroed("block_a", grid.num_blocks() * tile.m_count * tile.bk);
    let kernel = LoadOnly {
        inner: GemmKernel {
            problem,
            grid,
            flags,
            a_buf,
            c_buf,
        },
        dump,
    };
    let cfg = LaunchConfig::new(grid.num_blocks(), tile.threads, tile.shared_bytes(flags));
    let counters = ctx.launch(&kernel, cfg)?;
    Ok(ATileCapture {
        tiles: ctx.read(dump).to_vec(),
        counters,
    })
}

/// Binary32 reference: `sum_k f32(A[m][perm(k)]) * f32(W[k][n])`, accumulated
/// in ascending `k`.
pub fn oracle_gemm_f32(problem: &GemmProblem) -> Vec<f32> {
    let (m, k, n) = (problem.m(), problem.k(), problem.n());
    let w: Vec<f32> = problem
        .b()
        .dequantize()
        .iter()
        .map(|h| h.to_f32())
        .collect();
    let mut c = vec![0f32; m * n];
    for row in 0..m {
        for col in 0..n {
            let mut acc = 0f32;
            for kk in 0..k {
                acc += problem.a_at(row, kk).to_f32() * w[kk * n + col];
            }
            c[row * n + col] = acc;
        }
    }
    c
}

/// Straight-line binary16 recomputation of the kernel's exact accumulation
/// order for `(tile, flags)`, without the simulator. Only `smb` changes the
/// order; `vml` and `ila` do not affect values.
pub fn oracle_gemm_f16_canonical(
    problem: &GemmProblem,
    tile: TileParams,
    flags: VariantFlags,
) -> Result<Vec<Half>, KernelError> {
    Ok(canonical_with_bound(problem, tile, flags)?.0)
}

/// Rigorous per-element bound on `|C - exact|` for the canonical order,
/// plus the binary32 oracle's own accumulation error, so that
/// `|C - oracle_gemm_f32| <= bound` elementwise.
///
/// Running error analysis: every binary16 rounding producing `r` is off by at
/// most `2^-11 |r| + 2^-25` (the FMA's binary64 step adds `2^-53` relative),
/// and errors of a sum chain add up. The binary32 reference contributes
/// `2^-24 |partial|` per accumulation step.
pub fn accumulation_error_bound(
    problem: &GemmProblem,
    tile: TileParams,
    flags: VariantFlags,
) -> Result<Vec<f64>, KernelError> {
    let (_, mut bound) = canonical_with_bound(problem, tile, flags)?;
    let (m, k, n) = (problem.m(), problem.k(), problem.n());
    let w: Vec<f32> = problem
        .b()
        .dequantize()
        .iter()
        .map(|h| h.to_f32())
        .collect();
    for row in 0..m {
        for col in 0..n {
            let mut acc = 0f32;
            let mut err = 0f64;
            for kk in 0..k {
                acc += problem.a_at(row, kk).to_f32() * w[kk * n + col];
                err += acc.abs() as f64 * F32_UNIT;
            }
            bound[row * n + col] += err;
        }
    }
    Ok(bound)
}

const HALF_UNIT: f64 = 1.0 / 2048.0;
const F32_UNIT: f64 = 1.0 / 16_777_216.0;
const HALF_UNDERFLOW: f64 = 1.0 / 33_554_432.0;

fn rounding_error(r: Half, extra_rel: f64) -> f64 {
    if !r.is_finite() {
        return f64::INFINITY;
    }
    let mag = r.to_f64().abs();
    (HALF_UNIT + extra_rel) * mag + HALF_UNDERFLOW
}

fn canonical_with_bound(
    problem: &GemmProblem,
    tile: TileParams,
    flags: VariantFlags,
) -> Result<(Vec<Half>, Vec<f64>), KernelError> {
    check_problem(problem, tile, flags)?;
    let (m, k, n) = (problem.m(), problem.k(), problem.n());
    let e = tile.elems_per_thread();
    let w = problem.b().dequantize();
    let mut c = vec![Half::ZERO; m * n];
    let mut bound = vec![0f64; m * n];
    let fma_extra = 2f64.powi(-53);

    for row in 0..m {
        for col in 0..n {
            let out = row * n + col;
            for offset_k in (0..k).step_by(tile.bk) {
                let extent = tile.bk.min(k - offset_k);
                let mut block_sum = Half::ZERO;
                for t in 0..extent.div_ceil(e) {
                    let mut partial = Half::ZERO;
                    for kk in offset_k + t * e..(offset_k + (t + 1) * e).min(offset_k + extent) {
                        partial = h_fma(problem.a_at(row, kk), w[kk * n + col], partial);
                        bound[out] += rounding_error(partial, fma_extra);
                    }
                    if flags.smb {
                        block_sum = h_add(block_sum, partial);
                        bound[out] += rounding_error(block_sum, 0.0);
                    } else {
                        c[out] = h_add(c[out], partial);
                        bound[out] += rounding_error(c[out], 0.0);
                    }
                }
                if flags.smb {
                    c[out] = h_add(c[out], block_sum);
                    bound[out] += rounding_error(c[out], 0.0);
                }
            }
        }
    }
    Ok((c, bound))
}
