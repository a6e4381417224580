//! Execution of the (shape, variant) matrix.

use qgemm_lab::f16core::Half;
use qgemm_lab::kernels::{
    accumulation_error_bound, gemm_half_q_half, oracle_gemm_f16_canonical, oracle_gemm_f32,
    GemmProblem, PermMode, VariantFlags,
};
use qgemm_lab::perf_model::{compare, cost_proxy, predict, ProblemDims};
use qgemm_lab::simt_sim::{CounterSet, DeviceContext};
use rayon::prelude::*;

use crate::config::{Plan, Shape};
use crate::error::CliError;

/// Environment variable capping the number of cells run concurrently.
pub const THREADS_ENV: &str = "QGEMM_LAB_THREADS";

/// Reads [`THREADS_ENV`]; `None` means rayon's default.
pub fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Config(format!(
                "{THREADS_ENV}={v:?} is not a positive integer"
            ))),
        },
    }
}

pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    b.build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

/// Results of one kernel launch plus its checks.
#[derive(Clone, Debug)]
pub struct Cell {
    pub variant: VariantFlags,
    pub c: Vec<Half>,
    pub bound: Vec<f64>,
    pub measured: CounterSet,
    pub predicted: CounterSet,
    pub counters_match: bool,
    pub max_abs_err: f64,
    pub within_tolerance: bool,
    pub bit_exact: bool,
    pub cost: f64,
    pub uninitialized_reads: u64,
}

#[derive(Clone, Debug)]
pub struct ShapeRun {
    pub index: usize,
    pub shape: Shape,
    pub perm: PermMode,
    pub problem: GemmProblem,
    /// Cells in plan variant order.
    pub cells: Vec<Cell>,
    /// Baseline cell, run even when the plan does not list it.
    pub baseline: Cell,
}

impl ShapeRun {
    pub fn id(&self, seed: u64) -> String {
        shape_id(self.index, self.perm, seed)
    }
}

/// `s<index>-<perm>-seed<seed>`, so every CSV row carries the seed verbatim.
pub fn shape_id(index: usize, perm: PermMode, seed: u64) -> String {
    format!("s{index}-{}-seed{seed}", perm.as_str())
}

pub fn generate(plan: &Plan, index: usize) -> Result<GemmProblem, CliError> {
    let (s, perm) = plan.shapes[index];
    Ok(GemmProblem::generate(
        plan.shape_seed(index),
        s.m,
        s.k,
        s.n,
        s.g,
        perm,
    )?)
}

fn run_cell(problem: &GemmProblem, plan: &Plan, variant: VariantFlags) -> Result<Cell, CliError> {
    let mut ctx = DeviceContext::new();
    let out = gemm_half_q_half(problem, plan.tile, variant, &mut ctx)?;
    let dims = ProblemDims {
        m: problem.m(),
        k: problem.k(),
        n: problem.n(),
        group_size: problem.b().group_size(),
        perm: problem.b().perm().is_some(),
    };
    let predicted = predict(dims, plan.tile, variant)?;
    let counters_match = compare(&out.counters, &predicted).all_equal;
    let canonical = oracle_gemm_f16_canonical(problem, plan.tile, variant)?;
    let bit_exact = out
        .c
        .iter()
        .map(|h| h.to_bits())
        .eq(canonical.iter().map(|h| h.to_bits()));
    let oracle = oracle_gemm_f32(problem);
    let bound = accumulation_error_bound(problem, plan.tile, variant)?;
    let errs: Vec<f64> = out
        .c
        .iter()
        .zip(&oracle)
        .map(|(c, o)| (c.to_f64() - *o as f64).abs())
        .collect();
    let max_abs_err = errs.iter().copied().fold(0.0, f64::max);
    let within_tolerance = match plan.tolerance {
        Some(t) => max_abs_err <= t,
        None => errs.iter().zip(&bound).all(|(e, b)| e <= b),
    };
    Ok(Cell {
        variant,
        cost: cost_proxy(&out.counters, &plan.weights),
        c: out.c,
        bound,
        measured: out.counters,
        predicted: predicted.0,
        counters_match,
        max_abs_err,
        within_tolerance,
        bit_exact,
        uninitialized_reads: out.diagnostics.len() as u64,
    })
}

/// Runs every cell of the plan on `pool`. Results come back in plan order
/// whatever the completion order.
pub fn run_matrix(plan: &Plan, pool: &rayon::ThreadPool) -> Result<Vec<ShapeRun>, CliError> {
    pool.install(|| {
        let problems = (0..plan.shapes.len())
            .into_par_iter()
            .map(|i| generate(plan, i))
            .collect::<Result<Vec<_>, _>>()?;
        // Baseline first for every shape, then the remaining plan variants.
        let mut lineup = vec![VariantFlags::BASELINE];
        lineup.extend(
            plan.variants
                .iter()
                .filter(|v| **v != VariantFlags::BASELINE),
        );
        let jobs: Vec<(usize, VariantFlags)> = (0..problems.len())
            .flat_map(|i| lineup.iter().map(move |&v| (i, v)))
            .collect();
        let cells = jobs
            .par_iter()
            .map(|&(i, v)| run_cell(&problems[i], plan, v))
            .collect::<Result<Vec<_>, _>>()?;

        let mut out = Vec::with_capacity(problems.len());
        for ((index, problem), group) in problems
            .into_iter()
            .enumerate()
            .zip(cells.chunks(lineup.len()))
        {
            let pick = |v: &VariantFlags| {
                group[lineup.iter().position(|l| l == v).expect("in lineup")].clone()
            };
            let (shape, perm) = plan.shapes[index];
            out.push(ShapeRun {
                index,
                shape,
                perm,
                problem,
                cells: plan.variants.iter().map(pick).collect(),
                baseline: group[0].clone(),
            });
        }
        Ok(out)
    })
}
