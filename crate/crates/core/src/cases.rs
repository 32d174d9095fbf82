//! Case files shipped with the crate.

use crate::error::{Error, Result};
use crate::netmodel::{parse_case_with, GenBusLoads, Network, ParseOptions};

pub const CASE3_TWOGEN: &str = include_str!("../data/case3_twogen.m");
pub const CASE4_RADIAL: &str = include_str!("../data/case4_radial.m");
pub const CASE5_TOY: &str = include_str!("../data/case5_toy.m");
pub const CASE39: &str = include_str!("../data/case39.m");

pub const NAMES: [&str; 4] = ["case3_twogen", "case4_radial", "case5_toy", "case39"];

/// Text and parse options of a built-in case.
pub fn builtin(name: &str) -> Option<(&'static str, ParseOptions)> {
    let default = ParseOptions::default();
    match name {
        "case3_twogen" => Some((CASE3_TWOGEN, default)),
        "case4_radial" => Some((CASE4_RADIAL, default)),
        "case5_toy" => Some((CASE5_TOY, default)),
        "case39" => Some((CASE39, ParseOptions { gen_bus_loads: GenBusLoads::Drop, ..default })),
        _ => None,
    }
}

pub fn load(name: &str) -> Result<Network> {
    let (text, opts) = builtin(name).ok_or_else(|| Error::Config(format!("unknown built-in case '{name}'")))?;
    parse_case_with(text, &opts)
}
