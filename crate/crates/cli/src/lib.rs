//! Experiment harness around `opf-sense`: configuration, training sweeps,
//! constraint-violation statistics and report files.

pub mod config;
pub mod experiment;
pub mod report;
pub mod violations;

use opf_sense::cases;
use opf_sense::netmodel::{parse_case_with, CostMode, Network, ParseOptions};
use opf_sense::Result;
use std::path::Path;

/// A built-in case name or the path of a MATPOWER case file, optionally
/// with a different handling of quadratic costs.
pub fn load_case(spec: &str, cost_mode: Option<CostMode>) -> Result<Network> {
    let (text, mut opts) = match cases::builtin(spec) {
        Some((text, opts)) => (text.to_string(), opts),
        None => (std::fs::read_to_string(Path::new(spec))?, ParseOptions::default()),
    };
    if let Some(c) = cost_mode {
        opts.cost_mode = c;
    }
    parse_case_with(&text, &opts)
}
