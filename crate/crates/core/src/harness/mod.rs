//! Desk-scale experiments: procedural datasets, FLOP-matched comparisons,
//! the reference search sweep, gradient audits and report emission.

mod dataset;
mod experiment;
mod gradcheck;
mod report;
mod toy;

pub use dataset::{make_toy_dataset, procedural_rgb, DatasetSpec, ToySample, MIN_PATCH};
pub use experiment::{
    baseline_psnr, network_psnr, run_comparison, ArmRecord, ExperimentSpec, RunRecord, FLOP_MATCH_TOLERANCE,
};
pub use gradcheck::{gradcheck_suite, GradCheck, GradCheckReport, GRADCHECK_TOLERANCE};
pub use report::{report_table, write_report, PlotPoint, ReportInput, ReportTable, RUN_COLUMNS, SWEEP_COLUMNS};
pub use toy::{run_toy_training, ToyTrainRecord, ToyTrainSpec};

use crate::error::Result;
use crate::search::{sweep, Rho, SearchConstraints, SweepTable};

pub const REFERENCE_BUDGETS: [f64; 2] = [25.0, 128.0];
pub const REFERENCE_RHOS: [&str; 5] = ["0.5", "0.7", "1.0", "1.2", "1.5"];

/// The four network families of the search-results table: each budget with
/// `d` free in `1..=4` and with `d` pinned to 1. Twenty rows.
pub fn reference_sweep(threads: usize) -> Result<SweepTable> {
    let rhos: Vec<Rho> = REFERENCE_RHOS.iter().map(|r| r.parse()).collect::<Result<_>>()?;
    let base = SearchConstraints::new(REFERENCE_BUDGETS[0], rhos[0]);
    let mut rows = Vec::new();
    for (d_min, d_max) in [(1, 4), (1, 1)] {
        for budget in REFERENCE_BUDGETS {
            let t = sweep(&[budget], &rhos, &base.clone().with_d_range(d_min, d_max), threads)?;
            rows.extend(t.rows);
        }
    }
    Ok(SweepTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_sweep_layout() {
        let t = reference_sweep(2).unwrap();
        assert_eq!(t.rows.len(), 20);
        let report = report_table(&ReportInput::Sweep(t)).unwrap();
        assert_eq!(report.rows.len(), 20);
    }
}
