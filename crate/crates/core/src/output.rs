//! CSV and JSON writers for run results.
//!
//! Floats are written with six significant digits in `%g` style so output files
//! are byte-identical across runs with the same seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::{PairwiseTest, RunResult, StrategySummary};

/// Formats `x` like C's `%g`: six significant digits, trailing zeros removed,
/// scientific notation for very large or small magnitudes.
pub fn fmt_g(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp) as usize;
    strip_zeros(&format!("{x:.decimals$}")).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One simulated run with its position in the output.
pub struct RunRows<'a> {
    pub run_id: usize,
    pub seed: u64,
    pub strategy: &'a str,
    pub result: &'a RunResult,
    /// Daily revenue divided by the baseline's converged level.
    pub normalized: &'a [f64],
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes one row per day: run identity, revenue, reserves and per-bidder KPIs.
pub fn write_daily_csv(path: &Path, n_bidders: usize, runs: &[RunRows<'_>]) -> Result<()> {
    let mut w = create(path)?;
    let mut header: Vec<String> = ["run_id", "seed", "strategy", "day", "revenue", "normalized_revenue"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=n_bidders).map(|i| format!("reserve_{i}")));
    for i in 1..=n_bidders {
        header.extend([format!("impressions_{i}"), format!("clicks_{i}"), format!("payment_{i}")]);
    }
    w.write_record(&header)?;
    for run in runs {
        for (d, norm) in run.result.days.iter().zip(run.normalized) {
            let mut row = vec![
                run.run_id.to_string(),
                run.seed.to_string(),
                run.strategy.to_string(),
                d.day.to_string(),
                fmt_g(d.revenue),
                fmt_g(*norm),
            ];
            row.extend(d.reserves.as_slice().iter().map(|r| fmt_g(*r)));
            for k in &d.kpis {
                row.extend([k.impressions.to_string(), k.clicks.to_string(), fmt_g(k.payment)]);
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_summary_csv(path: &Path, summaries: &[StrategySummary], final_normalized: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record([
        "strategy",
        "runs",
        "mean_cumulative_revenue",
        "sd_cumulative_revenue",
        "mean_objective",
        "sd_objective",
        "mean_final_normalized_revenue",
    ])?;
    for (s, norm) in summaries.iter().zip(final_normalized) {
        w.write_record([
            s.name.clone(),
            s.runs.to_string(),
            fmt_g(s.mean_cumulative),
            fmt_g(s.sd_cumulative),
            fmt_g(s.mean_objective),
            fmt_g(s.sd_objective),
            fmt_g(*norm),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pairwise_csv(path: &Path, tests: &[PairwiseTest]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["a", "b", "a_wins", "b_wins", "ties", "p_a_greater", "p_b_greater"])?;
    for t in tests {
        w.write_record([
            t.a.clone(),
            t.b.clone(),
            t.a_wins.to_string(),
            t.b_wins.to_string(),
            t.ties.to_string(),
            fmt_g(t.p_a_greater),
            fmt_g(t.p_b_greater),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_formatting() {
        assert_eq!(fmt_g(0.0), "0");
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(0.5), "0.5");
        assert_eq!(fmt_g(123.456789), "123.457");
        assert_eq!(fmt_g(-2.25), "-2.25");
        assert_eq!(fmt_g(999999.5), "1e+06");
        assert_eq!(fmt_g(123456.0), "123456");
        assert_eq!(fmt_g(1234567.0), "1.23457e+06");
        assert_eq!(fmt_g(0.0001), "0.0001");
        assert_eq!(fmt_g(0.00001234), "1.234e-05");
        assert_eq!(fmt_g(1.0 / 3.0), "0.333333");
    }
}
