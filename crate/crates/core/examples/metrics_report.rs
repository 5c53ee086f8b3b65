//! Imbalance-aware metrics from predictions, aggregated over trials and
//! printed in the mean ± std layout used by the bench tables.
//!
//! cargo run --example metrics_report

use imbforge::metrics::{aggregate_trials, format_table, EvalReport, TableRow, TrialSummary};
use imbforge::Result;

pub fn run() -> Result<TrialSummary> {
    // Three trials of a binary task with 8 majority and 2 minority test rows.
    let truth = [0, 0, 0, 0, 0, 0, 0, 0, 1, 1];
    let trials = [
        [0, 0, 0, 0, 0, 0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0, 0, 0, 1, 1, 0],
        [0, 0, 0, 0, 0, 0, 0, 0, 1, 1],
    ];
    let mut reports = Vec::new();
    for pred in &trials {
        let r = EvalReport::from_predictions(&truth, pred, 2)?;
        let [b, a, g] = r.metrics.as_percent();
        println!("confusion {:?}  B-ACC {b:.1}  ACSA {a:.1}  GM {g:.1}", r.confusion.counts());
        reports.push(r);
    }
    let summary = aggregate_trials(&reports)?;
    let rows = [TableRow {
        label: "example".into(),
        summary: summary.clone(),
    }];
    print!("{}", format_table("three trials", "model", &rows));
    Ok(summary)
}

fn main() -> Result<()> {
    run()?;
    Ok(())
}
