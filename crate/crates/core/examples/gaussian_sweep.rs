// Error against SNR for EM with and without a trained score prior on the
// Gaussian image law. Writes the per-run CSV, the summary CSV and an SVG
// plot.
//
// ```bash
// cargo run --release --example gaussian_sweep -- 10
// ```

use std::path::Path;

use mtd::eval::{run_sweep, summarize, write_rows_csv, write_summary_csv, SummaryRow, SweepPlan};
use mtd::plot::write_error_plot;

pub fn run_example(plan: &SweepPlan, out: &Path) -> mtd::Result<Vec<SummaryRow>> {
    let law = plan.law();
    let prior = plan.build_prior(&law)?;
    let rows = run_sweep(plan, &law, prior.as_ref())?;
    let summary = summarize(&rows);
    write_rows_csv(&rows, &out.join("rows.csv"), false)?;
    write_summary_csv(&summary, &out.join("summary.csv"))?;
    write_error_plot(&summary, &out.join("error_vs_snr.svg"))?;
    println!("{:>6}  {:<10}  {:>8}  {:>8}", "snr", "method", "mean", "std");
    for s in &summary {
        println!("{:>6}  {:<10}  {:>8.4}  {:>8.4}", s.snr, s.method.name(), s.mean, s.std);
    }
    Ok(summary)
}

fn main() -> mtd::Result<()> {
    let targets = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let plan = SweepPlan {
        targets,
        ..SweepPlan::default()
    };
    let out = std::env::temp_dir().join("mtd-sweep");
    std::fs::create_dir_all(&out).map_err(|e| mtd::MtdError::Io { path: out.clone(), source: e })?;
    run_example(&plan, &out)?;
    println!("outputs in {}", out.display());
    Ok(())
}
