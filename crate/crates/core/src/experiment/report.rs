//! Metrics logs, seed aggregation and the CSV/SVG artifacts of a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{mean, sample_std};

/// Accuracies after one readout epoch of Task 2. Epoch 0 is the network as
/// Task 1 left it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub task1_test: f64,
    pub task2_test: f64,
    pub task2_train: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog {
    pub method: String,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn initial(&self) -> Option<&MetricsRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }
}

/// Mean and sample standard deviation; `std` is `None` for a single run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            std: sample_std(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub seeds: usize,
    /// Task-1 test accuracy before Task 2.
    pub task1_initial: Stat,
    /// Task-1 test accuracy after Task 2 (retention).
    pub task1_final: Stat,
    pub task2_final: Stat,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub rows: Vec<SummaryRow>,
}

impl RunSummary {
    pub fn get(&self, method: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method)
    }
}

/// Groups logs by method in order of first appearance. Logs without rows are
/// ignored.
fn by_method(logs: &[MetricsLog]) -> Vec<(&str, Vec<&MetricsLog>)> {
    let mut groups: Vec<(&str, Vec<&MetricsLog>)> = Vec::new();
    for log in logs.iter().filter(|l| !l.rows.is_empty()) {
        match groups.iter_mut().find(|(m, _)| *m == log.method) {
            Some((_, g)) => g.push(log),
            None => groups.push((&log.method, vec![log])),
        }
    }
    groups
}

/// Mean and sample standard deviation of the initial and final accuracies of
/// every method.
pub fn aggregate(logs: &[MetricsLog]) -> RunSummary {
    let rows = by_method(logs)
        .into_iter()
        .map(|(method, group)| {
            let pick = |f: &dyn Fn(&MetricsLog) -> f64| group.iter().map(|l| f(l)).collect::<Vec<_>>();
            SummaryRow {
                method: method.to_string(),
                seeds: group.len(),
                task1_initial: Stat::of(&pick(&|l| l.rows[0].task1_test)),
                task1_final: Stat::of(&pick(&|l| l.rows[l.rows.len() - 1].task1_test)),
                task2_final: Stat::of(&pick(&|l| l.rows[l.rows.len() - 1].task2_test)),
            }
        })
        .collect();
    RunSummary { rows }
}

const METRICS_HEADER: [&str; 6] = ["method", "seed", "epoch", "task1_test", "task2_test", "task2_train"];
const SEED_HEADER: [&str; 4] = ["epoch", "task1_test", "task2_test", "task2_train"];
const SUMMARY_HEADER: [&str; 8] = [
    "method",
    "seeds",
    "task1_initial_mean",
    "task1_initial_std",
    "task1_final_mean",
    "task1_final_std",
    "task2_final_mean",
    "task2_final_std",
];

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("csv: {e}"))
}

fn finish(writer: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = writer.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

/// All logs in long format, one row per (method, seed, epoch).
pub fn metrics_to_csv(logs: &[MetricsLog]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(csv_error)?;
    for log in logs {
        for r in &log.rows {
            w.write_record([
                log.method.clone(),
                log.seed.to_string(),
                r.epoch.to_string(),
                r.task1_test.to_string(),
                r.task2_test.to_string(),
                r.task2_train.to_string(),
            ])
            .map_err(csv_error)?;
        }
    }
    finish(w)
}

/// Inverse of [`metrics_to_csv`]; consecutive rows of the same method and
/// seed form one log.
pub fn metrics_from_csv(text: &str) -> Result<Vec<MetricsLog>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_error)?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Parse(format!("unexpected metrics header {header:?}")));
    }
    let mut logs: Vec<MetricsLog> = Vec::new();
    for record in reader.records() {
        let rec = record.map_err(csv_error)?;
        let num = |i: usize| -> Result<f64> {
            let v: f64 = rec[i].parse().map_err(csv_error)?;
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parse(format!("accuracy {v} outside [0, 1]")));
            }
            Ok(v)
        };
        let method = rec[0].to_string();
        let seed: u64 = rec[1].parse().map_err(csv_error)?;
        let row = MetricsRow {
            epoch: rec[2].parse().map_err(csv_error)?,
            task1_test: num(3)?,
            task2_test: num(4)?,
            task2_train: num(5)?,
        };
        match logs.last_mut() {
            Some(l) if l.method == method && l.seed == seed => l.rows.push(row),
            _ => logs.push(MetricsLog {
                method,
                seed,
                rows: vec![row],
            }),
        }
    }
    Ok(logs)
}

fn seed_to_csv(log: &MetricsLog) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SEED_HEADER).map_err(csv_error)?;
    for r in &log.rows {
        w.write_record([
            r.epoch.to_string(),
            r.task1_test.to_string(),
            r.task2_test.to_string(),
            r.task2_train.to_string(),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

/// One row per method: initial and final Task-1 accuracy and final Task-2
/// accuracy. Standard deviations of single runs are left empty.
pub fn summary_to_csv(summary: &RunSummary) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SUMMARY_HEADER).map_err(csv_error)?;
    let std = |s: &Stat| s.std.map_or_else(String::new, |v| v.to_string());
    for r in &summary.rows {
        w.write_record([
            r.method.clone(),
            r.seeds.to_string(),
            r.task1_initial.mean.to_string(),
            std(&r.task1_initial),
            r.task1_final.mean.to_string(),
            std(&r.task1_final),
            r.task2_final.mean.to_string(),
            std(&r.task2_final),
        ])
        .map_err(csv_error)?;
    }
    finish(w)
}

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const LEFT: f64 = 50.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

struct Series {
    name: &'static str,
    color: &'static str,
    dash: Option<&'static str>,
    value: fn(&MetricsRow) -> f64,
}

const SERIES: [Series; 3] = [
    Series {
        name: "task 1 test",
        color: "#d62728",
        dash: Some("2,3"),
        value: |r| r.task1_test,
    },
    Series {
        name: "task 2 test",
        color: "#1f77b4",
        dash: None,
        value: |r| r.task2_test,
    },
    Series {
        name: "task 2 train",
        color: "#17becf",
        dash: Some("6,4"),
        value: |r| r.task2_train,
    },
];

/// Accuracy curves of one method: the mean over seeds as a line and the
/// sample standard deviation as a shaded band, per epoch. Epochs missing from
/// some seeds are averaged over the seeds that have them.
pub fn render_svg(method: &str, logs: &[MetricsLog]) -> String {
    let logs: Vec<&MetricsLog> = logs.iter().filter(|l| l.method == method).collect();
    let mut per_epoch: BTreeMap<usize, Vec<&MetricsRow>> = BTreeMap::new();
    for l in &logs {
        for r in &l.rows {
            per_epoch.entry(r.epoch).or_default().push(r);
        }
    }
    let max_epoch = per_epoch.keys().next_back().copied().unwrap_or(0).max(1) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x = |e: usize| LEFT + e as f64 / max_epoch * plot_w;
    let y = |a: f64| TOP + (1.0 - a.clamp(0.0, 1.0)) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(method)
    );
    for k in 0..=5 {
        let a = k as f64 / 5.0;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="#dddddd"/><text x="{2:.2}" y="{3:.2}" text-anchor="end">{a:.1}</text>"##,
            y(a),
            WIDTH - RIGHT,
            LEFT - 6.0,
            y(a) + 4.0
        );
    }
    let ticks = 5.min(max_epoch as usize);
    for k in 0..=ticks {
        let e = (k as f64 * max_epoch / ticks as f64).round() as usize;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{e}</text>"#,
            x(e),
            TOP + plot_h + 16.0
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#333333"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        LEFT + plot_w / 2.0,
        TOP + plot_h + 32.0
    );

    for series in &SERIES {
        let stats: Vec<(usize, Stat)> = per_epoch
            .iter()
            .map(|(&e, rows)| (e, Stat::of(&rows.iter().map(|r| (series.value)(r)).collect::<Vec<_>>())))
            .collect();
        if stats.is_empty() {
            continue;
        }
        if stats.iter().any(|(_, st)| st.std.is_some()) {
            let upper = stats.iter().map(|(e, st)| (x(*e), y(st.mean + st.std.unwrap_or(0.0))));
            let lower = stats.iter().rev().map(|(e, st)| (x(*e), y(st.mean - st.std.unwrap_or(0.0))));
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
                points(upper.chain(lower)),
                series.color
            );
        }
        let dash = series
            .dash
            .map_or_else(String::new, |d| format!(r#" stroke-dasharray="{d}""#));
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"{dash}/>"#,
            points(stats.iter().map(|(e, st)| (x(*e), y(st.mean)))),
            series.color
        );
    }
    for (k, series) in SERIES.iter().enumerate() {
        let lx = LEFT + k as f64 * 140.0;
        let ly = HEIGHT - 12.0;
        let dash = series
            .dash
            .map_or_else(String::new, |d| format!(r#" stroke-dasharray="{d}""#));
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="1.5"{dash}/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 24.0,
            series.color,
            lx + 30.0,
            ly + 4.0,
            series.name
        );
    }
    s.push_str("</svg>\n");
    s
}

fn points(it: impl Iterator<Item = (f64, f64)>) -> String {
    it.map(|(px, py)| format!("{px:.2},{py:.2}")).collect::<Vec<_>>().join(" ")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// File-name-safe form of a method label.
fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `metrics.csv` (all logs), one `<method>_seed<seed>.csv` per log,
/// `summary.csv` and one `<method>.svg` per method into `out_dir`, returning
/// the paths in write order.
pub fn emit_outputs(logs: &[MetricsLog], summary: &RunSummary, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    write(out_dir.join("metrics.csv"), &metrics_to_csv(logs)?, &mut written)?;
    for log in logs {
        let name = format!("{}_seed{}.csv", slug(&log.method), log.seed);
        write(out_dir.join(name), &seed_to_csv(log)?, &mut written)?;
    }
    write(out_dir.join("summary.csv"), &summary_to_csv(summary)?, &mut written)?;
    for (method, _) in by_method(logs) {
        let name = format!("{}.svg", slug(method));
        write(out_dir.join(name), &render_svg(method, logs), &mut written)?;
    }
    Ok(written)
}
