//! Subcommand implementations. Human-readable lines go to `out`; files go
//! under the resolved output directory.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{self, shape_id};
use crate::config::{Plan, RunConfig, Shape};
use crate::error::CliError;
use crate::report::BenchReport;
use crate::verify;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PACK_MANIFEST: &str = "pack.json";

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub strict: bool,
    pub tolerance: Option<f64>,
    pub threads: Option<usize>,
}

impl Options {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if self.tolerance.is_some() {
            cfg.tolerance = self.tolerance;
        }
        Ok(cfg)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(CliError::io(path))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(CliError::io(dir))
}

fn say(out: &mut dyn Write, line: impl std::fmt::Display) {
    // A closed stdout must not turn into a failed run.
    let _ = writeln!(out, "{line}");
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedFile {
    pub shape_id: String,
    pub shape: Shape,
    pub perm_mode: String,
    pub file: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackManifest {
    pub seed: u64,
    pub files: Vec<PackedFile>,
}

/// Generates the weights of every configured shape and writes them as GQ4S files.
pub fn pack(opts: &Options, out: &mut dyn Write) -> Result<PackManifest, CliError> {
    let cfg = opts.resolve()?;
    let plan = cfg.plan()?;
    ensure_dir(&cfg.output_dir)?;
    let mut files = Vec::new();
    for (i, &(shape, perm)) in plan.shapes.iter().enumerate() {
        let problem = bench::generate(&plan, i)?;
        let bytes = problem.b().to_bytes();
        let id = shape_id(i, perm, plan.seed);
        let file = format!("{id}.gq4s");
        write_file(&cfg.output_dir.join(&file), &bytes)?;
        let digest = sha256_hex(&bytes);
        say(out, format_args!("sha256:{digest}  {file}"));
        files.push(PackedFile {
            shape_id: id,
            shape,
            perm_mode: perm.as_str().to_string(),
            file,
            bytes: bytes.len(),
            sha256: digest,
        });
    }
    let manifest = PackManifest {
        seed: plan.seed,
        files,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    write_file(&cfg.output_dir.join(PACK_MANIFEST), json.as_bytes())?;
    Ok(manifest)
}

fn matrix(plan: &Plan, opts: &Options) -> Result<Vec<bench::ShapeRun>, CliError> {
    let pool = bench::thread_pool(opts.threads)?;
    bench::run_matrix(plan, &pool)
}

/// Runs the benchmark matrix and writes `report.json` and `report.csv`.
/// Failed rows are still written before the error is returned.
pub fn run(
    opts: &Options,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<BenchReport, CliError> {
    let cfg = opts.resolve()?;
    let plan = cfg.plan()?;
    let runs = matrix(&plan, opts)?;
    let report = BenchReport::build(&cfg, &runs);
    ensure_dir(&cfg.output_dir)?;
    let json_path = cfg.output_dir.join(REPORT_JSON);
    let csv_path = cfg.output_dir.join(REPORT_CSV);
    let csv = report.to_csv();
    write_file(&json_path, report.to_json().as_bytes())?;
    write_file(&csv_path, csv.as_bytes())?;
    say(
        out,
        format_args!(
            "sha256:{}  {}",
            sha256_hex(csv.as_bytes()),
            csv_path.display()
        ),
    );
    say(
        out,
        format_args!(
            "sha256:{}  {}",
            sha256_hex(report.to_json().as_bytes()),
            json_path.display()
        ),
    );

    let reads = report.summary.uninitialized_reads;
    if reads > 0 {
        say(
            err,
            format_args!("warning kind=uninitialized-read count={reads}"),
        );
    }
    for row in report.rows.iter().filter(|r| !r.passed) {
        say(
            err,
            format_args!(
                "fail shape={} variant={} counters_match={} bit_exact={} within_tolerance={}",
                row.shape_id,
                row.variant,
                row.counters_match,
                row.bit_exact_canonical,
                row.within_tolerance
            ),
        );
    }
    let failed = report.summary.failed_rows.len();
    say(
        out,
        format_args!("run: {} rows, {failed} failed", report.rows.len()),
    );
    if failed > 0 {
        return Err(CliError::Check(format!(
            "{failed} of {} rows failed",
            report.rows.len()
        )));
    }
    if opts.strict && reads > 0 {
        return Err(CliError::Check(format!(
            "{reads} uninitialized shared reads (strict)"
        )));
    }
    Ok(report)
}

/// Number of seeded operand triples in the f16 check.
pub const F16_CASES: usize = 100_000;

/// Runs the invariant suite and prints one line per check.
pub fn verify(
    opts: &Options,
    weight_files: &[PathBuf],
    out: &mut dyn Write,
) -> Result<Vec<verify::Check>, CliError> {
    let cfg = opts.resolve()?;
    let plan = cfg.plan()?;
    let mut checks = vec![
        verify::check_scalar_ops(plan.seed, F16_CASES),
        verify::check_lanes(plan.seed, 10_000),
    ];
    checks.extend(weight_files.iter().map(verify::check_weight_file));
    let runs = matrix(&plan, opts)?;
    for run in &runs {
        checks.push(verify::check_pack_roundtrip(
            &run.id(plan.seed),
            run.problem.b(),
        ));
    }
    checks.extend(verify::check_cells(&plan, &runs, opts.strict));

    for c in &checks {
        say(out, c);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    say(
        out,
        format_args!("verify: {} passed, {failed} failed", checks.len() - failed),
    );
    if failed > 0 {
        let first = checks.iter().find(|c| !c.passed).expect("a failed check");
        return Err(CliError::Check(format!(
            "{failed} checks failed, first: {}",
            first.name
        )));
    }
    Ok(checks)
}

/// Re-renders the CSV from a stored JSON report. Returns the CSV path.
pub fn report(
    opts: &Options,
    input: Option<&Path>,
    out: &mut dyn Write,
) -> Result<PathBuf, CliError> {
    let default_dir = opts
        .out
        .clone()
        .unwrap_or_else(|| RunConfig::default().output_dir);
    let input = input
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_dir.join(REPORT_JSON));
    let text = std::fs::read_to_string(&input).map_err(CliError::io(&input))?;
    let report = BenchReport::from_json(&text)?;
    let dir = match &opts.out {
        Some(d) => d.clone(),
        None => input.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    ensure_dir(&dir)?;
    let csv_path = dir.join(REPORT_CSV);
    let csv = report.to_csv();
    write_file(&csv_path, csv.as_bytes())?;
    say(
        out,
        format_args!(
            "sha256:{}  {}",
            sha256_hex(csv.as_bytes()),
            csv_path.display()
        ),
    );
    Ok(csv_path)
}
