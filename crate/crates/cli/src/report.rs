//! Benchmark report: structured JSON plus the fixed-column CSV rendered from it.
//!
//! CSV number formats: counters as integers, `max_abs_err` in scientific
//! notation with six significant digits (`{:.5e}`), `cost` and every
//! percentage with four decimals, flags as `true`/`false`.

use qgemm_lab::perf_model::reduction_pct;
use qgemm_lab::simt_sim::CounterSet;
use serde::{Deserialize, Serialize};

use crate::bench::ShapeRun;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub global_atomic: u64,
    pub global_load_16: u64,
    pub global_load_32: u64,
    pub valu_scalar: u64,
    pub valu_packed: u64,
    pub shared_read: u64,
    pub shared_write: u64,
    pub barriers: u64,
}

impl From<CounterSet> for Counters {
    fn from(c: CounterSet) -> Self {
        Counters {
            global_atomic: c.global_atomic,
            global_load_16: c.global_load_16,
            global_load_32: c.global_load_32,
            valu_scalar: c.valu_scalar,
            valu_packed: c.valu_packed,
            shared_read: c.shared_read,
            shared_write: c.shared_write,
            barriers: c.barriers,
        }
    }
}

impl Counters {
    /// Values in CSV column order.
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

    fn transactions(&self) -> u64 {
        self.global_load_16 + self.global_load_32
    }

    fn valu_units(&self) -> u64 {
        self.valu_scalar + self.valu_packed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub shape_id: String,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub g: usize,
    pub perm_mode: String,
    pub variant: String,
    pub smb: bool,
    pub vml: bool,
    pub ila: bool,
    pub measured: Counters,
    pub predicted: Counters,
    pub counters_match: bool,
    pub max_abs_err: f64,
    pub within_tolerance: bool,
    pub bit_exact_canonical: bool,
    pub uninitialized_reads: u64,
    pub cost: f64,
    pub atomic_reduction_pct: f64,
    pub load_reduction_pct: f64,
    pub valu_reduction_pct: f64,
    pub cost_reduction_pct: f64,
    /// Counters match, tolerance held and output bit-exact.
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rows: usize,
    pub failed_rows: Vec<String>,
    pub uninitialized_reads: u64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub config: RunConfig,
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
}

fn pct(base: u64, opt: u64) -> f64 {
    reduction_pct(base as f64, opt as f64)
}

impl BenchReport {
    pub fn build(config: &RunConfig, runs: &[ShapeRun]) -> Self {
        let mut rows = Vec::new();
        for run in runs {
            let base = Counters::from(run.baseline.measured);
            for cell in &run.cells {
                let measured = Counters::from(cell.measured);
                let passed = cell.counters_match && cell.within_tolerance && cell.bit_exact;
                rows.push(ReportRow {
                    shape_id: run.id(config.seed),
                    m: run.shape.m,
                    k: run.shape.k,
                    n: run.shape.n,
                    g: run.shape.g,
                    perm_mode: run.perm.as_str().to_string(),
                    variant: cell.variant.name(),
                    smb: cell.variant.smb,
                    vml: cell.variant.vml,
                    ila: cell.variant.ila,
                    measured,
                    predicted: cell.predicted.into(),
                    counters_match: cell.counters_match,
                    max_abs_err: cell.max_abs_err,
                    within_tolerance: cell.within_tolerance,
                    bit_exact_canonical: cell.bit_exact,
                    uninitialized_reads: cell.uninitialized_reads,
                    cost: cell.cost,
                    atomic_reduction_pct: pct(base.global_atomic, measured.global_atomic),
                    load_reduction_pct: pct(base.transactions(), measured.transactions()),
                    valu_reduction_pct: pct(base.valu_units(), measured.valu_units()),
                    cost_reduction_pct: reduction_pct(run.baseline.cost, cell.cost),
                    passed,
                });
            }
        }
        let failed_rows: Vec<String> = rows
            .iter()
            .filter(|r| !r.passed)
            .map(|r| format!("{}/{}", r.shape_id, r.variant))
            .collect();
        let summary = Summary {
            rows: rows.len(),
            passed: failed_rows.is_empty(),
            uninitialized_reads: rows.iter().map(|r| r.uninitialized_reads).sum(),
            failed_rows,
        };
        BenchReport {
            seed: config.seed,
            config: config.clone(),
            rows,
            summary,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Report(format!("report json: {e}")))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(csv_header()).expect("in-memory write");
        for r in &self.rows {
            let mut rec: Vec<String> = vec![
                r.shape_id.clone(),
                r.m.to_string(),
                r.k.to_string(),
                r.n.to_string(),
                r.g.to_string(),
                r.smb.to_string(),
                r.vml.to_string(),
                r.ila.to_string(),
            ];
            rec.extend(r.measured.values().iter().map(u64::to_string));
            rec.extend(r.predicted.values().iter().map(u64::to_string));
            rec.push(r.counters_match.to_string());
            rec.push(format!("{:.5e}", r.max_abs_err));
            rec.push(r.bit_exact_canonical.to_string());
            rec.push(format!("{:.4}", r.cost));
            for p in [
                r.atomic_reduction_pct,
                r.load_reduction_pct,
                r.valu_reduction_pct,
                r.cost_reduction_pct,
            ] {
                rec.push(format!("{p:.4}"));
            }
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// The frozen CSV header.
pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["shape_id", "M", "K", "N", "g", "smb", "vml", "ila"]
        .map(String::from)
        .to_vec();
    h.extend(CounterSet::NAMES.iter().map(|c| c.to_string()));
    h.extend(CounterSet::NAMES.iter().map(|c| format!("predicted_{c}")));
    h.extend(
        [
            "counters_match",
            "max_abs_err",
            "bit_exact_canonical",
            "cost",
            "atomic_reduction_pct",
            "load_reduction_pct",
            "valu_reduction_pct",
            "cost_reduction_pct",
        ]
        .map(String::from),
    );
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_has_frozen_order() {
        let h = csv_header().join(",");
        assert_eq!(
            h,
            "shape_id,M,K,N,g,smb,vml,ila,global_atomic,global_load_16,global_load_32,\
             valu_scalar,valu_packed,shared_read,shared_write,barriers,predicted_global_atomic,\
             predicted_global_load_16,predicted_global_load_32,predicted_valu_scalar,\
             predicted_valu_packed,predicted_shared_read,predicted_shared_write,predicted_barriers,\
             counters_match,max_abs_err,bit_exact_canonical,cost,atomic_reduction_pct,\
             load_reduction_pct,valu_reduction_pct,cost_reduction_pct"
        );
    }

    #[test]
    fn number_formats() {
        assert_eq!(format!("{:.5e}", 0.0896615982055664f64), "8.96616e-2");
        assert_eq!(format!("{:.5e}", 0.0f64), "0.00000e0");
        assert_eq!(format!("{:.4}", 98.4375f64), "98.4375");
        assert_eq!(format!("{:.4}", pct(128, 2)), "98.4375");
    }
}
