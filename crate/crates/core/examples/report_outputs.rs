//! Aggregates per-seed metric logs and writes the CSV and SVG reports.
//!
//! cargo run --release --example report_outputs -- [OUT_DIR]

use spiking_continual::experiment::{aggregate, emit_outputs, summary_to_csv, MetricsLog, MetricsRow};

fn log(method: &str, seed: u64, start: f64, decay: f64) -> MetricsLog {
    let rows = (0..=10)
        .map(|epoch| {
            let e = epoch as f64;
            MetricsRow {
                epoch,
                task1_test: 0.1 + (start - 0.1) * (-decay * e).exp(),
                task2_test: 0.1 + 0.6 * (1.0 - (-0.4 * e).exp()),
                task2_train: 0.1 + 0.7 * (1.0 - (-0.4 * e).exp()),
            }
        })
        .collect();
    MetricsLog {
        method: method.into(),
        seed,
        rows,
    }
}

fn main() -> spiking_continual::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "report".into());
    let logs: Vec<MetricsLog> = (1..=3)
        .flat_map(|s| {
            let jitter = 0.01 * s as f64;
            [log("vanilla", s, 0.88 - jitter, 0.3), log("freeze_0.1", s, 0.87 + jitter, 0.08)]
        })
        .collect();
    let summary = aggregate(&logs);
    print!("{}", summary_to_csv(&summary)?);
    for path in emit_outputs(&logs, &summary, std::path::Path::new(&out))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
