//! Results file, CSV tables and the loss-curve plot.

use crate::config::ExperimentConfig;
use crate::experiment::RunResult;
use opf_sense::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

pub const RESULTS_FORMAT: &str = "opf-sense-results/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub format: String,
    pub case: String,
    pub network_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
}

impl ExperimentResults {
    pub fn new(case: &str, network_hash: &str, config: ExperimentConfig, runs: Vec<RunResult>) -> Self {
        Self { format: RESULTS_FORMAT.into(), case: case.into(), network_hash: network_hash.into(), config, runs }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if r.format != RESULTS_FORMAT {
            return Err(Error::Validation(format!("unknown results format {:?}", r.format)));
        }
        Ok(r)
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// One row per (size, run, variant).
pub fn runs_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("size,run,variant,rho,train_mse,test_mse,test_mse_per_output,value_hash,error\n");
    for r in runs {
        let per: Vec<String> = r.test_mse_per_output.iter().map(|&x| num(x)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.size,
            r.run,
            csv_field(&r.variant),
            num(r.rho),
            opt(r.train_mse),
            opt(r.test_mse),
            per.join(";"),
            r.value_hash,
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    out
}

/// (size, variant) cells in order of first appearance.
fn cells(runs: &[RunResult]) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for r in runs {
        if !out.iter().any(|(s, v)| *s == r.size && *v == r.variant) {
            out.push((r.size, r.variant.clone()));
        }
    }
    out
}

/// Averages per (size, variant) recomputed from the run rows.
pub fn summary_csv(runs: &[RunResult]) -> String {
    let mut out = String::from(
        "size,variant,runs,failed,mean_train_mse,mean_test_mse,mean_violation_count,mean_max_violation,mean_violation\n",
    );
    for (size, variant) in cells(runs) {
        let rows: Vec<&RunResult> = runs.iter().filter(|r| r.size == size && r.variant == variant).collect();
        let ok: Vec<&RunResult> = rows.iter().copied().filter(|r| r.error.is_none()).collect();
        let train: Vec<f64> = ok.iter().filter_map(|r| r.train_mse).collect();
        let test: Vec<f64> = ok.iter().filter_map(|r| r.test_mse).collect();
        let viol: Vec<_> = ok.iter().filter_map(|r| r.violations).collect();
        let count: Vec<f64> = viol.iter().map(|v| v.mean_count).collect();
        let max: Vec<f64> = viol.iter().map(|v| v.max_violation).collect();
        let avg: Vec<f64> = viol.iter().map(|v| v.mean_violation).collect();
        let _ = writeln!(
            out,
            "{size},{},{},{},{},{},{},{},{}",
            csv_field(&variant),
            rows.len(),
            rows.len() - ok.len(),
            opt(mean(&train)),
            opt(mean(&test)),
            opt(mean(&count)),
            opt(mean(&max)),
            opt(mean(&avg))
        );
    }
    out
}

/// Violation statistics per run.
pub fn violations_csv(runs: &[RunResult]) -> String {
    let mut out = String::from("size,run,variant,instances,pf_failures,constraints,mean_count,max_violation,mean_violation\n");
    for r in runs {
        if let Some(v) = &r.violations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.size,
                r.run,
                csv_field(&r.variant),
                v.instances,
                v.pf_failures,
                v.constraints,
                num(v.mean_count),
                num(v.max_violation),
                num(v.mean_violation)
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub size: usize,
    pub run: usize,
    pub variant: String,
    pub wall_time_s: f64,
}

/// Training wall-clock times. Kept out of the CSV tables, which depend on
/// the results alone.
pub fn timing_json(runs: &[RunResult]) -> Result<String> {
    let rows: Vec<TimingRow> = runs
        .iter()
        .map(|r| TimingRow { size: r.size, run: r.run, variant: r.variant.clone(), wall_time_s: r.wall_time_s })
        .collect();
    Ok(serde_json::to_string_pretty(&rows)? + "\n")
}

const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Per-epoch value loss of every run on a log scale, one polyline per run.
pub fn loss_curves_svg(runs: &[RunResult]) -> String {
    let (w, h, pad) = (800.0, 500.0, 50.0);
    let variants: Vec<String> = cells(runs).into_iter().map(|(_, v)| v).fold(Vec::new(), |mut acc, v| {
        if !acc.contains(&v) {
            acc.push(v);
        }
        acc
    });
    let logs = |r: &RunResult| -> Vec<f64> { r.curve.value.iter().map(|&x| x.max(1e-300).log10()).collect() };
    let epochs = runs.iter().map(|r| r.curve.value.len()).max().unwrap_or(0).max(2);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in runs {
        for y in logs(r) {
            lo = lo.min(y);
            hi = hi.max(y);
        }
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let sx = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (epochs - 1) as f64;
    let sy = |y: f64| h - pad - (h - 2.0 * pad) * (y - lo) / (hi - lo);
    let mut out = String::new();
    let _ = writeln!(out, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">");
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<path d=\"M{pad} {pad} V{} H{}\" fill=\"none\" stroke=\"black\"/>",
        h - pad,
        w - pad
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">epoch</text>", w / 2.0, h - 15.0);
    let _ = writeln!(
        out,
        "<text x=\"15\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 15 {})\">log10 value loss</text>",
        h / 2.0,
        h / 2.0
    );
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" font-size=\"10\">{:.2}</text>", 5.0, sy(hi) + 4.0, hi);
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" font-size=\"10\">{:.2}</text>", 5.0, sy(lo) + 4.0, lo);
    for (i, v) in variants.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{}</text>",
            w - pad - 120.0,
            pad + 15.0 * (i + 1) as f64,
            PALETTE[i % PALETTE.len()],
            xml_escape(v)
        );
    }
    for r in runs {
        let color = PALETTE[variants.iter().position(|v| *v == r.variant).unwrap_or(0) % PALETTE.len()];
        let pts: Vec<String> = logs(r).iter().enumerate().map(|(i, &y)| format!("{:.2},{:.2}", sx(i), sy(y))).collect();
        let _ = writeln!(
            out,
            "<polyline class=\"run\" data-size=\"{}\" data-run=\"{}\" data-variant=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>",
            r.size,
            r.run,
            xml_escape(&r.variant),
            pts.join(" ")
        );
    }
    out.push_str("</svg>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub const REPORT_FILES: [&str; 5] = ["runs.csv", "summary.csv", "violations.csv", "timing.json", "loss_curves.svg"];

/// Writes every report file into `dir`.
pub fn emit_reports(results: &ExperimentResults, dir: &Path) -> Result<()> {
    if results.runs.is_empty() {
        return Err(Error::Validation("results contain no runs".into()));
    }
    std::fs::create_dir_all(dir)?;
    let runs = &results.runs;
    std::fs::write(dir.join("runs.csv"), runs_csv(runs))?;
    std::fs::write(dir.join("summary.csv"), summary_csv(runs))?;
    std::fs::write(dir.join("violations.csv"), violations_csv(runs))?;
    std::fs::write(dir.join("timing.json"), timing_json(runs)?)?;
    std::fs::write(dir.join("loss_curves.svg"), loss_curves_svg(runs))?;
    Ok(())
}
