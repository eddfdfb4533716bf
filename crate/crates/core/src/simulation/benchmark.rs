use std::fmt::Write as _;

use super::harness::{RunStatus, SimConfig, SimTrace, run_closed_loop};
use crate::parallel::{Execution, map_slice};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRow {
    pub method: String,
    /// `None` when the run timed out or failed.
    pub discharge_time: Option<f64>,
    pub max_core_temp: f64,
    pub constraint_satisfied: bool,
    pub status: RunStatus,
    pub tube_violations: usize,
    pub fallbacks: usize,
}

impl BenchmarkRow {
    pub fn from_trace(trace: &SimTrace, t_constraint: f64) -> Self {
        Self {
            method: trace.name.clone(),
            discharge_time: trace.discharge_time,
            max_core_temp: trace.max_core_temp,
            constraint_satisfied: trace.max_core_temp <= t_constraint,
            status: trace.status.clone(),
            tube_violations: trace.tube_violations,
            fallbacks: trace.fallbacks,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkRun {
    pub row: BenchmarkRow,
    pub trace: SimTrace,
}

/// Runs every configuration; results keep the input order. A run that
/// cannot even start is reported as a failed row.
pub fn run_benchmark(cfgs: &[SimConfig], exec: Execution) -> Vec<BenchmarkRun> {
    map_slice(exec, cfgs, |cfg| {
        let trace = run_closed_loop(cfg).unwrap_or_else(|e| SimTrace {
            name: cfg.name.clone(),
            rows: Vec::new(),
            status: RunStatus::Failed(e.to_string()),
            discharge_time: None,
            max_core_temp: f64::NAN,
            final_soe: 1.0,
            extracted_energy: 0.0,
            tube_violations: 0,
            fallbacks: 0,
        });
        BenchmarkRun { row: BenchmarkRow::from_trace(&trace, cfg.t_constraint), trace }
    })
}

/// `h:mm:ss` with seconds rounded to the nearest integer.
pub fn format_hms(seconds: f64) -> String {
    let total = seconds.round() as u64;
    format!("{}:{:02}:{:02}", total / 3600, (total / 60) % 60, total % 60)
}

pub fn summary_csv(rows: &[BenchmarkRow], preamble: &[String]) -> String {
    let mut s = String::new();
    for line in preamble {
        let _ = writeln!(s, "# {line}");
    }
    s.push_str("method,discharge_time_s,discharge_time_hms,max_core_temp_c,constraint_satisfied,status,tube_violations,fallbacks\n");
    for r in rows {
        let (secs, hms) = match r.discharge_time {
            Some(t) => (format!("{t:.1}"), format_hms(t)),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{:.2},{},{},{},{}",
            r.method,
            secs,
            hms,
            r.max_core_temp,
            if r.constraint_satisfied { "Yes" } else { "No" },
            r.status.label(),
            r.tube_violations,
            r.fallbacks
        );
    }
    s
}

pub fn summary_table(rows: &[BenchmarkRow]) -> String {
    let header = ["Method", "Discharge time", "Max. temp.", "Cons. satis.", "Status"];
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            [
                r.method.clone(),
                r.discharge_time.map(format_hms).unwrap_or_else(|| "-".into()),
                format!("{:.2} °C", r.max_core_temp),
                if r.constraint_satisfied { "Yes" } else { "No" }.to_string(),
                match &r.status {
                    RunStatus::Failed(msg) => format!("failed: {msg}"),
                    other => other.label().to_string(),
                },
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(&header.map(String::from));
    s.push_str(&line(&widths.map(|w| "-".repeat(w))));
    for row in &body {
        s.push_str(&line(row));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hms_formatting() {
        assert_eq!(format_hms(3.0 * 3600.0 + 6.0 * 60.0 + 0.4), "3:06:00");
        assert_eq!(format_hms(59.6), "0:01:00");
    }
}
