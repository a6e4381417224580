//! Deterministic SIMT execution harness.
//!
//! A kernel is written as a per-thread state machine ([`Kernel`]): each call to
//! [`Kernel::run`] executes one thread up to its next barrier (returning
//! [`Step::Barrier`]) or to the end of the kernel ([`Step::Exit`]). The
//! harness drives it with a fixed schedule:
//!
//! 1. blocks execute one after another in ascending block id;
//! 2. a block executes in barrier-delimited phases;
//! 3. within a phase every thread runs to its next barrier or exit, in
//!    ascending thread id (or another order chosen through [`Schedule`]).
//!
//! All threads of a block must agree at each phase boundary, either all on
//! the same barrier site or all exiting; anything else is
//! [`SimError::BarrierDivergence`]. Final global memory is therefore a pure
//! function of the kernel, the launch configuration and the initial buffers,
//! which makes binary16 atomic accumulation bit-reproducible.
//!
//! Every memory access and half2 ALU op goes through a [`ThreadCtx`] which
//! bumps the matching field of the launch's [`CounterSet`]. One call is one
//! transaction: a half2 load counts once in `global_load_32`, a half2 atomic
//! counts once in `global_atomic`, and a half2 shared access counts once.
//! Cross-thread coalescing is not modelled.
//!
//! Shared memory is *not* zeroed at block start. Every slot starts as the
//! poison pattern [`POISON`]; reading a slot nobody wrote returns the poison
//! and records a [`Diagnostic`].

use std::fmt;

use thiserror::Error;

use crate::f16core::{h2_add, h2_fma, h_add, h_fma, Half, Half2};
use crate::rng::SplitMix64;

/// Value returned by reads of never-written shared memory.
pub const POISON: Half = Half::from_bits(0x7FFF);

/// Default per-block shared memory cap.
pub const DEFAULT_SHARED_CAP: usize = 64 * 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimError {
    #[error("out of bounds: {space} access at element {addr} (len {len})")]
    OutOfBounds {
        space: String,
        addr: usize,
        len: usize,
    },
    #[error("misaligned half2 access at element {addr} of {space}")]
    Misaligned { space: String, addr: usize },
    #[error("barrier divergence in block {block}, phase {phase}: {detail}")]
    BarrierDivergence {
        block: usize,
        phase: usize,
        detail: String,
    },
    #[error("shared memory overflow: {requested} bytes requested, {available} available")]
    SharedOverflow { requested: usize, available: usize },
    #[error("invalid launch: {0}")]
    InvalidLaunch(String),
}

/// Hardware-style counters accumulated over one launch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct CounterSet {
    pub global_load_16: u64,
    pub global_load_32: u64,
    pub global_atomic: u64,
    pub shared_read: u64,
    pub shared_write: u64,
    pub valu_packed: u64,
    pub valu_scalar: u64,
    pub barriers: u64,
}

impl CounterSet {
    /// Counter names in report order.
    pub const NAMES: [&'static str; 8] = [
        "global_atomic",
        "global_load_16",
        "global_load_32",
        "valu_scalar",
        "valu_packed",
        "shared_read",
        "shared_write",
        "barriers",
    ];

    /// Values in the same order as [`CounterSet::NAMES`].
    pub fn values(&self) -> [u64; 8] {
        [
            self.global_atomic,
            self.global_load_16,
            self.global_load_32,
            self.valu_scalar,
            self.valu_packed,
            self.shared_read,
            self.shared_write,
            self.barriers,
        ]
    }

    /// Number of binary16 elements read from global memory.
    pub fn global_elements_read(&self) -> u64 {
        self.global_load_16 + 2 * self.global_load_32
    }
}

impl std::ops::AddAssign for CounterSet {
    fn add_assign(&mut self, o: CounterSet) {
        self.global_load_16 += o.global_load_16;
        self.global_load_32 += o.global_load_32;
        self.global_atomic += o.global_atomic;
        self.shared_read += o.shared_read;
        self.shared_write += o.shared_write;
        self.valu_packed += o.valu_packed;
        self.valu_scalar += o.valu_scalar;
        self.barriers += o.barriers;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaunchConfig {
    pub num_blocks: usize,
    pub threads_per_block: usize,
    pub shared_bytes: usize,
}

impl LaunchConfig {
    pub fn new(num_blocks: usize, threads_per_block: usize, shared_bytes: usize) -> Self {
        LaunchConfig {
            num_blocks,
            threads_per_block,
            shared_bytes,
        }
    }
}

/// Handle to a buffer owned by a [`DeviceContext`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

#[derive(Clone, Debug)]
pub struct GlobalBuffer {
    tag: String,
    data: Vec<Half>,
}

impl GlobalBuffer {
    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn data(&self) -> &[Half] {
        &self.data
    }
}

/// Order in which threads of a block run within each phase.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Schedule {
    #[default]
    Ascending,
    Descending,
    /// Fisher-Yates shuffle per block, seeded with `seed ^ block`.
    Shuffled(u64),
}

impl Schedule {
    fn order(self, block: usize, threads: usize) -> Vec<usize> {
        match self {
            Schedule::Ascending => (0..threads).collect(),
            Schedule::Descending => (0..threads).rev().collect(),
            Schedule::Shuffled(seed) => SplitMix64::new(seed ^ block as u64)
                .permutation(threads)
                .into_iter()
                .map(|t| t as usize)
                .collect(),
        }
    }
}

/// A read of shared memory that no thread of the block had written.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub block: usize,
    pub thread: usize,
    pub offset: usize,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "uninitialized shared read: block {} thread {} offset {}",
            self.block, self.thread, self.offset
        )
    }
}

/// How a half2 ALU op is issued.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Isa {
    /// One packed instruction (`v_add_f16` / `v_mad_f16` on both lanes): 1 `valu_packed`.
    Packed,
    /// Compiler-lowered to one scalar instruction per lane: 2 `valu_scalar`.
    Lowered,
}

/// How a thread leaves a phase.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    /// Arrived at the barrier with this site id.
    Barrier(u32),
    Exit,
}

/// Per-thread program executed by [`DeviceContext::launch`].
pub trait Kernel {
    /// Thread-private registers carried across phases.
    type Regs;

    /// Shared memory the kernel uses per block, in bytes.
    fn shared_bytes(&self) -> usize;

    fn init_regs(&self, block: usize, thread: usize) -> Self::Regs;

    /// Runs one thread through `phase` (0-based) until its next barrier or exit.
    fn run(
        &self,
        phase: usize,
        th: &mut ThreadCtx<'_>,
        regs: &mut Self::Regs,
    ) -> Result<Step, SimError>;
}

struct SharedMem {
    data: Vec<Half>,
    written: Vec<bool>,
}

/// The view of the machine a single thread gets while it runs.
pub struct ThreadCtx<'a> {
    block: usize,
    thread: usize,
    block_dim: usize,
    buffers: &'a mut [GlobalBuffer],
    shared: &'a mut SharedMem,
    counters: &'a mut CounterSet,
    diagnostics: &'a mut Vec<Diagnostic>,
}

impl ThreadCtx<'_> {
    pub fn block_id(&self) -> usize {
        self.block
    }

    pub fn thread_id(&self) -> usize {
        self.thread
    }

    pub fn block_dim(&self) -> usize {
        self.block_dim
    }

    fn global(&self, buf: BufferId, addr: usize, width: usize) -> Result<&GlobalBuffer, SimError> {
        let b = &self.buffers[buf.0];
        if addr.checked_add(width).is_none_or(|end| end > b.data.len()) {
            return Err(SimError::OutOfBounds {
                space: b.tag.clone(),
                addr,
                len: b.data.len(),
            });
        }
        if width == 2 && addr % 2 != 0 {
            return Err(SimError::Misaligned {
                space: b.tag.clone(),
                addr,
            });
        }
        Ok(b)
    }

    /// 16-bit global load: one `global_load_16` transaction.
    pub fn global_load_half(&mut self, buf: BufferId, addr: usize) -> Result<Half, SimError> {
        let v = self.global(buf, addr, 1)?.data[addr];
        self.counters.global_load_16 += 1;
        Ok(v)
    }

    /// 32-bit global load of elements `addr` and `addr + 1` (`addr` even):
    /// one `global_load_32` transaction.
    pub fn global_load_half2(&mut self, buf: BufferId, addr: usize) -> Result<Half2, SimError> {
        let b = self.global(buf, addr, 2)?;
        let v = Half2::new(b.data[addr], b.data[addr + 1]);
        self.counters.global_load_32 += 1;
        Ok(v)
    }

    /// Plain 16-bit store. Stores have no counter.
    pub fn global_store_half(
        &mut self,
        buf: BufferId,
        addr: usize,
        v: Half,
    ) -> Result<(), SimError> {
        self.global(buf, addr, 1)?;
        self.buffers[buf.0].data[addr] = v;
        Ok(())
    }

    /// Lanewise binary16 add of `v` into elements `addr`, `addr + 1`.
    pub fn global_atomic_add_half2(
        &mut self,
        buf: BufferId,
        addr: usize,
        v: Half2,
    ) -> Result<(), SimError> {
        self.global(buf, addr, 2)?;
        let data = &mut self.buffers[buf.0].data;
        data[addr] = h_add(data[addr], v.lo);
        data[addr + 1] = h_add(data[addr + 1], v.hi);
        self.counters.global_atomic += 1;
        Ok(())
    }

    fn shared_check(&self, offset: usize, width: usize) -> Result<(), SimError> {
        let len = self.shared.data.len();
        if offset.checked_add(width).is_none_or(|end| end > len) {
            return Err(SimError::OutOfBounds {
                space: "shared".into(),
                addr: offset,
                len,
            });
        }
        if width == 2 && offset % 2 != 0 {
            return Err(SimError::Misaligned {
                space: "shared".into(),
                addr: offset,
            });
        }
        Ok(())
    }

    fn shared_get(&mut self, offset: usize) -> Half {
        if self.shared.written[offset] {
            self.shared.data[offset]
        } else {
            self.diagnostics.push(Diagnostic {
                block: self.block,
                thread: self.thread,
                offset,
            });
            POISON
        }
    }

    pub fn shared_read(&mut self, offset: usize) -> Result<Half, SimError> {
        self.shared_check(offset, 1)?;
        self.counters.shared_read += 1;
        Ok(self.shared_get(offset))
    }

    pub fn shared_write(&mut self, offset: usize, v: Half) -> Result<(), SimError> {
        self.shared_check(offset, 1)?;
        self.counters.shared_write += 1;
        self.shared.data[offset] = v;
        self.shared.written[offset] = true;
        Ok(())
    }

    pub fn shared_read_half2(&mut self, offset: usize) -> Result<Half2, SimError> {
        self.shared_check(offset, 2)?;
        self.counters.shared_read += 1;
        Ok(Half2::new(
            self.shared_get(offset),
            self.shared_get(offset + 1),
        ))
    }

    pub fn shared_write_half2(&mut self, offset: usize, v: Half2) -> Result<(), SimError> {
        self.shared_check(offset, 2)?;
        self.counters.shared_write += 1;
        self.shared.data[offset] = v.lo;
        self.shared.data[offset + 1] = v.hi;
        self.shared.written[offset] = true;
        self.shared.written[offset + 1] = true;
        Ok(())
    }

    /// Packed-instruction hook: both lanes in one `valu_packed` unit.
    pub fn valu_packed_fma(&mut self, a: Half2, b: Half2, c: Half2) -> Half2 {
        self.counters.valu_packed += 1;
        h2_fma(a, b, c)
    }

    pub fn valu_packed_add(&mut self, a: Half2, b: Half2) -> Half2 {
        self.counters.valu_packed += 1;
        h2_add(a, b)
    }

    /// Lowered hook: one scalar instruction per lane, two `valu_scalar` units.
    pub fn valu_scalar_fma(&mut self, a: Half2, b: Half2, c: Half2) -> Half2 {
        self.counters.valu_scalar += 2;
        Half2::new(h_fma(a.lo, b.lo, c.lo), h_fma(a.hi, b.hi, c.hi))
    }

    pub fn valu_scalar_add(&mut self, a: Half2, b: Half2) -> Half2 {
        self.counters.valu_scalar += 2;
        Half2::new(h_add(a.lo, b.lo), h_add(a.hi, b.hi))
    }

    pub fn h2_fma(&mut self, isa: Isa, a: Half2, b: Half2, c: Half2) -> Half2 {
        match isa {
            Isa::Packed => self.valu_packed_fma(a, b, c),
            Isa::Lowered => self.valu_scalar_fma(a, b, c),
        }
    }

    pub fn h2_add(&mut self, isa: Isa, a: Half2, b: Half2) -> Half2 {
        match isa {
            Isa::Packed => self.valu_packed_add(a, b),
            Isa::Lowered => self.valu_scalar_add(a, b),
        }
    }
}

/// Simulated device: global buffers plus launch settings.
///
/// A context is used by one thread at a time; independent contexts can run
/// on different OS threads.
#[derive(Debug)]
pub struct DeviceContext {
    buffers: Vec<GlobalBuffer>,
    shared_cap: usize,
    schedule: Schedule,
    diagnostics: Vec<Diagnostic>,
}

impl Default for DeviceContext {
    fn default() -> Self {
        Self::new()
    }
}

impl DeviceContext {
    pub fn new() -> Self {
        DeviceContext {
            buffers: Vec::new(),
            shared_cap: DEFAULT_SHARED_CAP,
            schedule: Schedule::Ascending,
            diagnostics: Vec::new(),
        }
    }

    pub fn with_shared_cap(mut self, bytes: usize) -> Self {
        self.shared_cap = bytes;
        self
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn alloc(&mut self, tag: impl Into<String>, data: Vec<Half>) -> BufferId {
        self.buffers.push(GlobalBuffer {
            tag: tag.into(),
            data,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn alloc_zeroed(&mut self, tag: impl Into<String>, len: usize) -> BufferId {
        self.alloc(tag, vec![Half::ZERO; len])
    }

    pub fn buffer(&self, id: BufferId) -> &GlobalBuffer {
        &self.buffers[id.0]
    }

    pub fn read(&self, id: BufferId) -> &[Half] {
        &self.buffers[id.0].data
    }

    /// Host-side store; not counted.
    pub fn write(&mut self, id: BufferId, offset: usize, values: &[Half]) -> Result<(), SimError> {
        let b = &mut self.buffers[id.0];
        let len = b.data.len();
        let dst = b
            .data
            .get_mut(offset..offset + values.len())
            .ok_or_else(|| SimError::OutOfBounds {
                space: b.tag.clone(),
                addr: offset + values.len(),
                len,
            })?;
        dst.copy_from_slice(values);
        Ok(())
    }

    pub fn diagnostics(&self) -> &[Diagnostic] {
        &self.diagnostics
    }

    pub fn take_diagnostics(&mut self) -> Vec<Diagnostic> {
        std::mem::take(&mut self.diagnostics)
    }

    /// Runs `kernel` over the grid and returns the counters of this launch.
    pub fn launch<K: Kernel>(
        &mut self,
        kernel: &K,
        cfg: LaunchConfig,
    ) -> Result<CounterSet, SimError> {
        if cfg.threads_per_block == 0 {
            return Err(SimError::InvalidLaunch(
                "threads_per_block must be >= 1".into(),
            ));
        }
        if cfg.shared_bytes > self.shared_cap {
            return Err(SimError::SharedOverflow {
                requested: cfg.shared_bytes,
                available: self.shared_cap,
            });
        }
        if kernel.shared_bytes() > cfg.shared_bytes {
            return Err(SimError::SharedOverflow {
                requested: kernel.shared_bytes(),
                available: cfg.shared_bytes,
            });
        }

        let threads = cfg.threads_per_block;
        let shared_len = cfg.shared_bytes / 2;
        let mut counters = CounterSet::default();
        let mut shared = SharedMem {
            data: vec![POISON; shared_len],
            written: vec![false; shared_len],
        };

        for block in 0..cfg.num_blocks {
            shared.data.fill(POISON);
            shared.written.fill(false);
            let mut regs: Vec<K::Regs> = (0..threads).map(|t| kernel.init_regs(block, t)).collect();
            let order = self.schedule.order(block, threads);
            let mut steps = vec![Step::Exit; threads];

            for phase in 0.. {
                for &t in &order {
                    let mut th = ThreadCtx {
                        block,
                        thread: t,
                        block_dim: threads,
                        buffers: &mut self.buffers,
                        shared: &mut shared,
                        counters: &mut counters,
                        diagnostics: &mut self.diagnostics,
                    };
                    steps[t] = kernel.run(phase, &mut th, &mut regs[t])?;
                }
                let first = steps[0];
                if let Some(t) = steps.iter().position(|s| *s != first) {
                    return Err(SimError::BarrierDivergence {
                        block,
                        phase,
                        detail: format!(
                            "thread 0 reached {first:?}, thread {t} reached {:?}",
                            steps[t]
                        ),
                    });
                }
                match first {
                    Step::Exit => break,
                    Step::Barrier(_) => counters.barriers += 1,
                }
            }
        }
        Ok(counters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::f16core::f32_to_f16;

    fn h(x: f32) -> Half {
        f32_to_f16(x)
    }

    /// Kernel built from a closure run once per thread in phase 0, optionally
    /// followed by a barrier and a second closure.
    struct Simple<F, G> {
        first: F,
        after_barrier: Option<G>,
        shared: usize,
    }

    type NoOp = fn(&mut ThreadCtx<'_>) -> Result<(), SimError>;

    impl<F, G> Kernel for Simple<F, G>
    where
        F: Fn(&mut ThreadCtx<'_>) -> Result<(), SimError>,
        G: Fn(&mut ThreadCtx<'_>) -> Result<(), SimError>,
    {
        type Regs = ();

        fn shared_bytes(&self) -> usize {
            self.shared
        }

        fn init_regs(&self, _: usize, _: usize) {}

        fn run(&self, phase: usize, th: &mut ThreadCtx<'_>, _: &mut ()) -> Result<Step, SimError> {
            match (phase, &self.after_barrier) {
                (0, None) => {
                    (self.first)(th)?;
                    Ok(Step::Exit)
                }
                (0, Some(_)) => {
                    (self.first)(th)?;
                    Ok(Step::Barrier(0))
                }
                (_, Some(g)) => {
                    g(th)?;
                    Ok(Step::Exit)
                }
                _ => unreachable!(),
            }
        }
    }

    fn one_phase<F>(f: F) -> Simple<F, NoOp>
    where
        F: Fn(&mut ThreadCtx<'_>) -> Result<(), SimError>,
    {
        Simple {
            first: f,
            after_barrier: None,
            shared: 0,
        }
    }

    #[test]
    fn empty_kernel_counts_nothing() {
        let mut ctx = DeviceContext::new();
        let c = ctx
            .launch(&one_phase(|_| Ok(())), LaunchConfig::new(2, 4, 0))
            .unwrap();
        assert_eq!(c, CounterSet::default());
    }

    #[test]
    fn atomic_adds_accumulate() {
        let mut ctx = DeviceContext::new();
        let buf = ctx.alloc_zeroed("out", 2);
        let k = one_phase(move |th| {
            th.global_atomic_add_half2(buf, 0, Half2::new(Half::ONE, Half::ONE))
        });
        let c = ctx.launch(&k, LaunchConfig::new(1, 8, 0)).unwrap();
        assert_eq!(ctx.read(buf), &[h(8.0), h(8.0)]);
        assert_eq!(c.global_atomic, 8);

        let mut ctx = DeviceContext::new();
        let buf = ctx.alloc_zeroed("out", 2);
        let k = one_phase(move |th| {
            let v = if th.thread_id() == 0 {
                Half2::new(Half::ONE, Half::ZERO)
            } else {
                Half2::new(Half::ZERO, Half::ONE)
            };
            th.global_atomic_add_half2(buf, 0, v)
        });
        ctx.launch(&k, LaunchConfig::new(1, 2, 0)).unwrap();
        assert_eq!(ctx.read(buf), &[Half::ONE, Half::ONE]);
    }

    #[test]
    fn atomic_order_changes_rounded_sum() {
        let run = |values: [f32; 3]| {
            let mut ctx = DeviceContext::new();
            let buf = ctx.alloc_zeroed("out", 2);
            let k = one_phase(move |th| {
                let v = h(values[th.thread_id()]);
                th.global_atomic_add_half2(buf, 0, Half2::new(v, Half::ZERO))
            });
            ctx.launch(&k, LaunchConfig::new(1, 3, 0)).unwrap();
            ctx.read(buf)[0].to_f32()
        };
        assert_eq!(run([2048.0, 1.0, 1.0]), 2048.0);
        assert_eq!(run([1.0, 1.0, 2048.0]), 2050.0);
    }

    #[test]
    fn barrier_counts_once_per_block() {
        let mut ctx = DeviceContext::new();
        let k = Simple {
            first: |_: &mut ThreadCtx<'_>| Ok(()),
            after_barrier: Some(|_: &mut ThreadCtx<'_>| Ok(())),
            shared: 0,
        };
        let c = ctx.launch(&k, LaunchConfig::new(3, 16, 0)).unwrap();
        assert_eq!(c.barriers, 3);
    }

    struct Divergent;

    impl Kernel for Divergent {
        type Regs = ();
        fn shared_bytes(&self) -> usize {
            0
        }
        fn init_regs(&self, _: usize, _: usize) {}
        fn run(&self, phase: usize, th: &mut ThreadCtx<'_>, _: &mut ()) -> Result<Step, SimError> {
            if phase == 0 && th.thread_id() == 0 {
                Ok(Step::Barrier(0))
            } else if phase == 0 {
                Ok(Step::Barrier(1))
            } else {
                Ok(Step::Exit)
            }
        }
    }

    #[test]
    fn divergent_barriers_are_rejected() {
        let err = DeviceContext::new()
            .launch(&Divergent, LaunchConfig::new(1, 4, 0))
            .unwrap_err();
        assert!(matches!(
            err,
            SimError::BarrierDivergence {
                block: 0,
                phase: 0,
                ..
            }
        ));
    }

    #[test]
    fn loads_count_transactions() {
        let mut ctx = DeviceContext::new();
        let buf = ctx.alloc("a", (0..8).map(|i| h(i as f32)).collect());
        let k = one_phase(move |th| {
            assert_eq!(th.global_load_half2(buf, 2)?, Half2::new(h(2.0), h(3.0)));
            Ok(())
        });
        let c = ctx.launch(&k, LaunchConfig::new(1, 1, 0)).unwrap();
        assert_eq!((c.global_load_32, c.global_load_16), (1, 0));
        assert_eq!(c.global_elements_read(), 2);

        let k = one_phase(move |th| th.global_load_half2(buf, 3).map(drop));
        assert!(matches!(
            ctx.launch(&k, LaunchConfig::new(1, 1, 0)),
            Err(SimError::Misaligned { addr: 3, .. })
        ));
        let k = one_phase(move |th| th.global_load_half(buf, 8).map(drop));
        assert!(matches!(
            ctx.launch(&k, LaunchConfig::new(1, 1, 0)),
            Err(SimError::OutOfBounds {
                addr: 8,
                len: 8,
                ..
            })
        ));
        let k = one_phase(move |th| th.global_atomic_add_half2(buf, 7, Half2::ZERO));
        assert!(matches!(
            ctx.launch(&k, LaunchConfig::new(1, 1, 0)),
            Err(SimError::OutOfBounds { .. })
        ));
        ctx.write(buf, 5, &[h(-1.0)]).unwrap();
        let k = one_phase(move |th| {
            assert_eq!(th.global_load_half(buf, 5)?, h(-1.0));
            Ok(())
        });
        ctx.launch(&k, LaunchConfig::new(1, 1, 0)).unwrap();
    }

    #[test]
    fn shared_memory_across_barrier() {
        let mut ctx = DeviceContext::new();
        let out = ctx.alloc_zeroed("out", 8);
        let k = Simple {
            first: |th: &mut ThreadCtx<'_>| {
                th.shared_write(th.thread_id(), h(th.thread_id() as f32 + 1.0))
            },
            after_barrier: Some(move |th: &mut ThreadCtx<'_>| {
                let n = th.block_dim();
                let v = th.shared_read((th.thread_id() + 1) % n)?;
                th.global_atomic_add_half2(out, 2 * th.thread_id(), Half2::new(v, Half::ZERO))
            }),
            shared: 8,
        };
        let c = ctx.launch(&k, LaunchConfig::new(1, 4, 8)).unwrap();
        assert_eq!(c.shared_write, 4);
        assert_eq!(c.shared_read, 4);
        let lanes: Vec<f32> = ctx
            .read(out)
            .iter()
            .step_by(2)
            .map(|x| x.to_f32())
            .collect();
        assert_eq!(lanes, vec![2.0, 3.0, 4.0, 1.0]);
        assert!(ctx.diagnostics().is_empty());
    }

    #[test]
    fn uninitialized_shared_read_is_poisoned() {
        let mut ctx = DeviceContext::new();
        let k = Simple {
            first: |th: &mut ThreadCtx<'_>| {
                let v = th.shared_read(1)?;
                assert_eq!(v.to_bits(), POISON.to_bits());
                th.shared_write(0, Half::ONE)
            },
            after_barrier: None::<NoOp>,
            shared: 4,
        };
        ctx.launch(&k, LaunchConfig::new(2, 1, 4)).unwrap();
        let d = ctx.take_diagnostics();
        assert_eq!(d.len(), 2);
        assert_eq!(
            d[1],
            Diagnostic {
                block: 1,
                thread: 0,
                offset: 1
            }
        );
        assert!(ctx.diagnostics().is_empty());
    }

    #[test]
    fn shared_limits() {
        let k = Simple {
            first: |th: &mut ThreadCtx<'_>| th.shared_write(2, Half::ONE),
            after_barrier: None::<NoOp>,
            shared: 4,
        };
        let mut ctx = DeviceContext::new();
        assert!(matches!(
            ctx.launch(&k, LaunchConfig::new(1, 1, 2)),
            Err(SimError::SharedOverflow {
                requested: 4,
                available: 2
            })
        ));
        assert!(matches!(
            ctx.launch(&k, LaunchConfig::new(1, 1, 4)),
            Err(SimError::OutOfBounds {
                addr: 2,
                len: 2,
                ..
            })
        ));
        let mut small = DeviceContext::new().with_shared_cap(2);
        assert!(matches!(
            small.launch(&k, LaunchConfig::new(1, 1, 4)),
            Err(SimError::SharedOverflow {
                requested: 4,
                available: 2
            })
        ));
        assert!(matches!(
            ctx.launch(&k, LaunchConfig::new(1, 0, 4)),
            Err(SimError::InvalidLaunch(_))
        ));
    }

    #[test]
    fn isa_hooks_count_and_agree() {
        let mut ctx = DeviceContext::new();
        let out = ctx.alloc_zeroed("out", 4);
        let k = one_phase(move |th| {
            let a = Half2::new(h(1.5), h(-0.1));
            let b = Half2::new(h(3.0), h(7.0));
            let c = Half2::new(h(0.25), h(2.0));
            let p = th.h2_fma(Isa::Packed, a, b, c);
            let s = th.h2_fma(Isa::Lowered, a, b, c);
            assert_eq!(p, s);
            assert_eq!(th.h2_add(Isa::Packed, p, c), th.h2_add(Isa::Lowered, s, c));
            th.global_atomic_add_half2(out, 0, p)
        });
        let c = ctx.launch(&k, LaunchConfig::new(1, 1, 0)).unwrap();
        assert_eq!((c.valu_packed, c.valu_scalar), (2, 4));
    }
}
