use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::RunRecord;
use crate::error::{Error, Result};
use crate::search::SweepTable;

/// Anything [`report_table`] can render.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportInput {
    Sweep(SweepTable),
    Runs { records: Vec<RunRecord> },
}

/// `(x, y, series)` for external plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub series: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub plot: Vec<PlotPoint>,
}

pub const SWEEP_COLUMNS: [&str; 11] = [
    "budget_gflops",
    "rho",
    "d_min",
    "d_max",
    "status",
    "d",
    "w",
    "B",
    "entropy",
    "gflops",
    "feasible",
];

pub const RUN_COLUMNS: [&str; 10] = [
    "arm",
    "d",
    "w",
    "B",
    "gflops",
    "params",
    "init_val_psnr",
    "final_train_psnr",
    "final_val_psnr",
    "baseline_val_psnr",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn opt_f(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_default()
}

pub fn report_table(input: &ReportInput) -> Result<ReportTable> {
    match input {
        ReportInput::Sweep(table) => {
            if table.rows.is_empty() {
                return Err(Error::InvalidConfig("nothing to report: sweep has no rows".into()));
            }
            let rows = table
                .rows
                .iter()
                .map(|r| {
                    vec![
                        format!("{:.1}", r.budget_gflops),
                        format!("{:.2}", r.rho.as_f64()),
                        r.d_min.to_string(),
                        r.d_max.to_string(),
                        format!("{:?}", r.status).to_lowercase(),
                        opt(r.d),
                        opt(r.w),
                        opt(r.blocks),
                        opt_f(r.entropy, 4),
                        opt_f(r.flops.map(|f| f as f64 / 1e9), 3),
                        r.feasible_count.to_string(),
                    ]
                })
                .collect();
            let plot = table
                .rows
                .iter()
                .filter_map(|r| {
                    Some(PlotPoint {
                        x: r.rho.as_f64(),
                        y: r.entropy?,
                        series: format!("{}GF d{}-{}", r.budget_gflops, r.d_min, r.d_max),
                    })
                })
                .collect();
            Ok(ReportTable {
                columns: SWEEP_COLUMNS.map(String::from).to_vec(),
                rows,
                plot,
            })
        }
        ReportInput::Runs { records } => {
            if records.is_empty() {
                return Err(Error::InvalidConfig("nothing to report: no run records".into()));
            }
            let mut rows = Vec::new();
            let mut plot = Vec::new();
            for rec in records {
                for arm in rec.arms() {
                    let c = &arm.config;
                    rows.push(vec![
                        arm.label.clone(),
                        c.downsample.to_string(),
                        c.width.to_string(),
                        c.blocks.to_string(),
                        format!("{:.6}", arm.gflops),
                        arm.params.to_string(),
                        opt_f(arm.init_val_psnr, 3),
                        opt_f(arm.final_train_psnr, 3),
                        opt_f(arm.final_val_psnr, 3),
                        format!("{:.3}", rec.baseline_val_psnr),
                    ]);
                    plot.extend(arm.losses.iter().map(|&(step, loss)| PlotPoint {
                        x: step as f64,
                        y: loss,
                        series: arm.label.clone(),
                    }));
                }
            }
            Ok(ReportTable {
                columns: RUN_COLUMNS.map(String::from).to_vec(),
                rows,
                plot,
            })
        }
    }
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }

    pub fn plot_csv(&self) -> String {
        let mut out = String::from("x,y,series\n");
        for p in &self.plot {
            let _ = writeln!(out, "{},{},{}", p.x, p.y, p.series);
        }
        out
    }

    /// Plain-text table with aligned columns.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| {
                self.rows
                    .iter()
                    .map(|r| r[i].len())
                    .chain([self.columns[i].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&self.columns);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

/// Writes `report.csv`, `report.json` (the input, re-readable by
/// [`ReportInput`]) and `plot.csv` into `dir`.
pub fn write_report(input: &ReportInput, dir: impl AsRef<Path>) -> Result<ReportTable> {
    let dir = dir.as_ref();
    let table = report_table(input)?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.csv"), table.to_csv())?;
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(input)? + "\n")?;
    std::fs::write(dir.join("plot.csv"), table.plot_csv())?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{solve, SearchConstraints, SweepRow};

    fn one_cell() -> ReportInput {
        let c = SearchConstraints::new(25.0, "1.0".parse().unwrap());
        ReportInput::Sweep(SweepTable {
            rows: vec![SweepRow::from_result(25.0, &solve(&c).unwrap())],
        })
    }

    #[test]
    fn one_cell_one_row() {
        let t = report_table(&one_cell()).unwrap();
        let csv = t.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "budget_gflops,rho,d_min,d_max,status,d,w,B,entropy,gflops,feasible"
        );
        assert!(lines[1].starts_with("25.0,1.00,1,4,optimal,3,64,64,"), "{}", lines[1]);
        assert_eq!(t.plot.len(), 1);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(report_table(&ReportInput::Sweep(SweepTable::default())).is_err());
        assert!(report_table(&ReportInput::Runs { records: vec![] }).is_err());
    }

    #[test]
    fn json_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let input = one_cell();
        let table = write_report(&input, dir.path()).unwrap();
        let back: ReportInput =
            serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(back, input);
        assert_eq!(report_table(&back).unwrap(), table);
        assert!(std::fs::read_to_string(dir.path().join("plot.csv"))
            .unwrap()
            .starts_with("x,y,series\n"));
    }
}
