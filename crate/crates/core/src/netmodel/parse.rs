//! Reader and writer for the numeric subset of MATPOWER case files.

use super::{Branch, Bus, BusKind, Generator, Network};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;

/// Handling of polynomial cost terms beyond the linear one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    #[default]
    Reject,
    /// Replace the polynomial by its tangent slope at the midpoint of the
    /// dispatch range.
    LinearizeAtMidpoint,
}

/// Branch ratings become squared-current limits, or are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowLimit {
    #[default]
    Current,
    Off,
}

/// Demand located at a generator bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenBusLoads {
    #[default]
    Reject,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseOptions {
    pub cost_mode: CostMode,
    pub flow_limit: FlowLimit,
    pub gen_bus_loads: GenBusLoads,
}

impl std::str::FromStr for CostMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(Self::Reject),
            "linearize-at-midpoint" => Ok(Self::LinearizeAtMidpoint),
            _ => Err(Error::Config(format!("unknown cost mode '{s}'"))),
        }
    }
}

impl std::str::FromStr for FlowLimit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Self::Current),
            "off" => Ok(Self::Off),
            _ => Err(Error::Config(format!("unknown flow limit mode '{s}'"))),
        }
    }
}

impl std::str::FromStr for GenBusLoads {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(Self::Reject),
            "drop" => Ok(Self::Drop),
            _ => Err(Error::Config(format!("unknown gen-bus load mode '{s}'"))),
        }
    }
}

struct Table {
    line: usize,
    rows: Vec<(usize, Vec<f64>)>,
}

const BUS_COLS: usize = 13;
const GEN_COLS: usize = 10;
const BRANCH_COLS: usize = 11;

pub fn parse_case(text: &str) -> Result<Network> {
    parse_case_with(text, &ParseOptions::default())
}

pub fn parse_case_with(text: &str, opts: &ParseOptions) -> Result<Network> {
    let raw = read_tables(text)?;
    let eof = text.lines().count();
    let base = raw.base_mva.ok_or(Error::Parse { line: eof, msg: "missing mpc.baseMVA".into() })?;
    let take = |name: &str| -> Result<&Table> {
        raw.tables.get(name).ok_or_else(|| Error::Parse { line: eof, msg: format!("missing mpc.{name} table") })
    };
    let bus_t = take("bus")?;
    let gen_t = take("gen")?;
    let branch_t = take("branch")?;
    let cost_t = take("gencost")?;
    check_width(bus_t, "bus", BUS_COLS)?;
    check_width(gen_t, "gen", GEN_COLS)?;
    check_width(branch_t, "branch", BRANCH_COLS)?;

    // generators in service, with their gencost row index
    let active: Vec<usize> = (0..gen_t.rows.len()).filter(|&g| gen_t.rows[g].1[7] > 0.0).collect();
    let n_all = gen_t.rows.len();
    if cost_t.rows.len() != n_all && cost_t.rows.len() != 2 * n_all {
        return Err(Error::Parse {
            line: cost_t.line,
            msg: format!("gencost has {} rows for {} generators", cost_t.rows.len(), n_all),
        });
    }

    let gen_buses: HashMap<usize, usize> =
        active.iter().map(|&g| Ok((as_id(gen_t.rows[g].1[0], gen_t.rows[g].0)?, g))).collect::<Result<_>>()?;

    let mut buses = Vec::with_capacity(bus_t.rows.len());
    for (line, r) in &bus_t.rows {
        let id = as_id(r[0], *line)?;
        let has_gen = gen_buses.contains_key(&id);
        let mut pd = r[2] / base;
        let mut qd = r[3] / base;
        if has_gen && (pd != 0.0 || qd != 0.0) {
            match opts.gen_bus_loads {
                GenBusLoads::Reject => {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!("bus {id} hosts both a generator and a load (see gen_bus_loads option)"),
                    })
                }
                GenBusLoads::Drop => {
                    log::info!("dropping load at generator bus {id}");
                    pd = 0.0;
                    qd = 0.0;
                }
            }
        }
        let kind = match r[1] as i64 {
            3 => BusKind::Slack,
            1 | 2 if has_gen => BusKind::Generator,
            1 | 2 if pd == 0.0 && qd == 0.0 => BusKind::ZeroInjection,
            1 | 2 => BusKind::Load,
            t => return Err(Error::Parse { line: *line, msg: format!("unsupported bus type {t}") }),
        };
        if r[1] as i64 == 2 && !has_gen {
            log::warn!("bus {id} is typed PV but hosts no generator in service");
        }
        buses.push(Bus { id, kind, pd, qd, vmin: r[12], vmax: r[11], gsh: r[4] / base, bsh: r[5] / base });
    }
    let vmin_of: HashMap<usize, f64> = buses.iter().map(|b| (b.id, b.vmin)).collect();

    let mut branches = Vec::new();
    for (line, r) in &branch_t.rows {
        if r[10] <= 0.0 {
            continue;
        }
        let from = as_id(r[0], *line)?;
        let to = as_id(r[1], *line)?;
        let rate = r[5] / base;
        let imax = match opts.flow_limit {
            FlowLimit::Current if rate > 0.0 => {
                let vmin = match (vmin_of.get(&from), vmin_of.get(&to)) {
                    (Some(a), Some(b)) => a.min(*b),
                    _ => return Err(Error::Parse { line: *line, msg: format!("branch {from}-{to} references unknown bus") }),
                };
                let i = rate / vmin;
                Some(i * i)
            }
            _ => None,
        };
        branches.push(Branch { from, to, r: r[2], x: r[3], b_charge: r[4], tap: r[8], shift: r[9], rate, imax });
    }

    let mut generators = Vec::with_capacity(active.len());
    for &g in &active {
        let (_, r) = &gen_t.rows[g];
        let pmin = r[9] / base;
        let pmax = r[8] / base;
        let qmin = r[4] / base;
        let qmax = r[3] / base;
        let (cline, crow) = &cost_t.rows[g];
        let cp = linear_cost(crow, *cline, r[9], r[8], opts.cost_mode)? * base;
        let cq = if cost_t.rows.len() == 2 * n_all {
            let (qline, qrow) = &cost_t.rows[n_all + g];
            linear_cost(qrow, *qline, r[4], r[3], opts.cost_mode)? * base
        } else {
            0.0
        };
        generators.push(Generator {
            bus: as_id(r[0], gen_t.rows[g].0)?,
            pmin,
            pmax,
            qmin,
            qmax,
            cp,
            cq,
            pg0: r[1] / base,
            vg0: r[5],
        });
    }

    Network::new(raw.name.unwrap_or_else(|| "case".into()), base, buses, branches, generators)
}

fn check_width(t: &Table, name: &str, need: usize) -> Result<()> {
    if let Some((line, r)) = t.rows.iter().find(|(_, r)| r.len() < need) {
        return Err(Error::Parse { line: *line, msg: format!("{name} row has {} columns, need {need}", r.len()) });
    }
    if t.rows.first().is_some_and(|(_, r)| r.len() > need) {
        log::debug!("ignoring extra columns in mpc.{name}");
    }
    Ok(())
}

fn as_id(x: f64, line: usize) -> Result<usize> {
    if x >= 1.0 && x.fract() == 0.0 {
        Ok(x as usize)
    } else {
        Err(Error::Parse { line, msg: format!("invalid bus number {x}") })
    }
}

/// Linear cost coefficient ($/MWh) of a polynomial gencost row.
fn linear_cost(row: &[f64], line: usize, pmin: f64, pmax: f64, mode: CostMode) -> Result<f64> {
    if row.len() < 4 {
        return Err(Error::Parse { line, msg: "gencost row too short".into() });
    }
    if row[0] != 2.0 {
        return Err(Error::Parse { line, msg: format!("unsupported cost model {} (only polynomial)", row[0]) });
    }
    let n = row[3] as usize;
    if row.len() < 4 + n {
        return Err(Error::Parse { line, msg: format!("gencost row declares {n} coefficients but has {}", row.len() - 4) });
    }
    // coefficients, highest order first
    let c = &row[4..4 + n];
    let order = |k: usize| c[n - 1 - k];
    if n <= 1 {
        return Ok(0.0);
    }
    let nonlinear = (2..n).any(|k| order(k) != 0.0);
    if !nonlinear {
        return Ok(order(1));
    }
    match mode {
        CostMode::Reject => Err(Error::Parse {
            line,
            msg: "nonlinear cost terms present (set cost_mode = linearize-at-midpoint to accept)".into(),
        }),
        CostMode::LinearizeAtMidpoint => {
            let mid = 0.5 * (pmin + pmax);
            Ok((1..n).map(|k| k as f64 * order(k) * mid.powi(k as i32 - 1)).sum())
        }
    }
}

#[derive(Default)]
struct RawCase {
    name: Option<String>,
    base_mva: Option<f64>,
    tables: HashMap<String, Table>,
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (k, ch) in line.char_indices() {
        match ch {
            '\'' => quoted = !quoted,
            '%' if !quoted => return &line[..k],
            _ => {}
        }
    }
    line
}

fn read_tables(text: &str) -> Result<RawCase> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = RawCase::default();
    let mut i = 0;
    while i < lines.len() {
        let line = strip_comment(lines[i]).trim();
        if let Some(rest) = line.strip_prefix("function") {
            if let Some((_, name)) = rest.split_once('=') {
                out.name = Some(name.trim().trim_end_matches(';').to_string());
            }
        } else if let Some(rest) = line.strip_prefix("mpc.") {
            let Some((field, rhs)) = rest.split_once('=') else {
                return Err(Error::Parse { line: i + 1, msg: "expected assignment".into() });
            };
            let field = field.trim().to_string();
            let rhs = rhs.trim();
            if let Some(body) = rhs.strip_prefix('[') {
                let start = i + 1;
                let mut rows = Vec::new();
                let mut body = body;
                loop {
                    if let Some(end) = body.find(']') {
                        push_rows(&body[..end], i + 1, &mut rows)?;
                        break;
                    }
                    push_rows(body, i + 1, &mut rows)?;
                    i += 1;
                    if i >= lines.len() {
                        return Err(Error::Parse { line: start, msg: format!("unterminated matrix mpc.{field}") });
                    }
                    body = strip_comment(lines[i]);
                }
                if let Some((line, r)) = rows.iter().find(|(_, r)| r.len() != rows[0].1.len()) {
                    return Err(Error::Parse {
                        line: *line,
                        msg: format!("mpc.{field} row has {} columns, expected {}", r.len(), rows[0].1.len()),
                    });
                }
                match field.as_str() {
                    "bus" | "gen" | "branch" | "gencost" => {
                        out.tables.insert(field, Table { line: start, rows });
                    }
                    _ => log::warn!("ignoring mpc.{field}"),
                }
            } else if rhs.starts_with('{') {
                while !strip_comment(lines[i]).contains('}') {
                    i += 1;
                    if i >= lines.len() {
                        return Err(Error::Parse { line: i, msg: format!("unterminated cell array mpc.{field}") });
                    }
                }
                log::warn!("ignoring mpc.{field}");
            } else if field == "baseMVA" {
                let v = rhs.trim_end_matches(';').trim();
                let base = v
                    .parse::<f64>()
                    .map_err(|_| Error::Parse { line: i + 1, msg: format!("invalid baseMVA '{v}'") })?;
                out.base_mva = Some(base);
            } else if field != "version" {
                log::warn!("ignoring mpc.{field}");
            }
        }
        i += 1;
    }
    Ok(out)
}

fn push_rows(chunk: &str, line: usize, rows: &mut Vec<(usize, Vec<f64>)>) -> Result<()> {
    for piece in chunk.split(';') {
        let vals: Vec<f64> = piece
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| Error::Parse { line, msg: format!("invalid number '{t}'") }))
            .collect::<Result<_>>()?;
        if !vals.is_empty() {
            rows.push((line, vals));
        }
    }
    Ok(())
}

/// Smallest-edit input `w` near `guess` with `f(w) == target`, so that a
/// value written in file units reparses to the identical per-unit value.
fn exact_preimage(target: f64, guess: f64, f: impl Fn(f64) -> f64) -> f64 {
    if f(guess) == target {
        return guess;
    }
    let (mut lo, mut hi) = (guess, guess);
    for _ in 0..256 {
        lo = lo.next_down();
        hi = hi.next_up();
        if f(lo) == target {
            return lo;
        }
        if f(hi) == target {
            return hi;
        }
    }
    guess
}

/// Writes a case file that parses back (with default options) to `net`.
pub fn serialize_case(net: &Network) -> String {
    let base = net.base_mva;
    let mw = |pu: f64| exact_preimage(pu, pu * base, |w| w / base);
    let per_mw = |pu: f64| exact_preimage(pu, pu / base, |w| w * base);
    let mut s = String::new();
    let _ = writeln!(s, "function mpc = {}", net.name);
    let _ = writeln!(s, "mpc.version = '2';");
    let _ = writeln!(s, "mpc.baseMVA = {base};");
    let _ = writeln!(s, "\n%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin");
    let _ = writeln!(s, "mpc.bus = [");
    for b in &net.buses {
        let t = match b.kind {
            BusKind::Slack => 3,
            BusKind::Generator => 2,
            _ => 1,
        };
        let _ = writeln!(
            s,
            "\t{}\t{t}\t{}\t{}\t{}\t{}\t1\t1\t0\t0\t1\t{}\t{};",
            b.id,
            mw(b.pd),
            mw(b.qd),
            mw(b.gsh),
            mw(b.bsh),
            b.vmax,
            b.vmin
        );
    }
    let _ = writeln!(s, "];\n\n%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin");
    let _ = writeln!(s, "mpc.gen = [");
    for g in &net.generators {
        let _ = writeln!(
            s,
            "\t{}\t{}\t0\t{}\t{}\t{}\t{base}\t1\t{}\t{};",
            g.bus,
            mw(g.pg0),
            mw(g.qmax),
            mw(g.qmin),
            g.vg0,
            mw(g.pmax),
            mw(g.pmin)
        );
    }
    let _ = writeln!(s, "];\n\n%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax");
    let _ = writeln!(s, "mpc.branch = [");
    for br in &net.branches {
        let _ = writeln!(
            s,
            "\t{}\t{}\t{}\t{}\t{}\t{}\t0\t0\t{}\t{}\t1\t-360\t360;",
            br.from,
            br.to,
            br.r,
            br.x,
            br.b_charge,
            mw(br.rate),
            br.tap,
            br.shift
        );
    }
    let _ = writeln!(s, "];\n\nmpc.gencost = [");
    for g in &net.generators {
        let _ = writeln!(s, "\t2\t0\t0\t2\t{}\t0;", per_mw(g.cp));
    }
    if net.generators.iter().any(|g| g.cq != 0.0) {
        for g in &net.generators {
            let _ = writeln!(s, "\t2\t0\t0\t2\t{}\t0;", per_mw(g.cq));
        }
    }
    let _ = writeln!(s, "];");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "function mpc = two
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0  0 0 0 1 1 0 0 1 1.1 0.9;
  2 1 10 0 0 0 1 1 0 0 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 50 -50 1 100 1 100 0;
];
mpc.branch = [
  1 2 0 0.1 0 0 0 0 0 0 1 -360 360;
];
mpc.gencost = [
  2 0 0 2 20 0;
];
";

    #[test]
    fn two_bus_admittance() {
        let net = parse_case(TWO_BUS).unwrap();
        let y = net.y();
        assert!((y[(0, 0)].im + 10.0).abs() < 1e-12);
        assert!((y[(0, 1)].im - 10.0).abs() < 1e-12);
        assert!((y[(1, 1)].im + 10.0).abs() < 1e-12);
        assert_eq!(net.buses[1].pd, 0.1);
        assert_eq!(net.generators[0].cp, 2000.0);
        assert_eq!(net.buses[1].kind, BusKind::Load);
    }

    #[test]
    fn bad_number_reports_line() {
        let text = TWO_BUS.replace("2 1 10 0", "2 1 1x0 0");
        match parse_case(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 5),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn ragged_table_is_parse_error() {
        let text = TWO_BUS.replace("2 1 10 0 0 0 1 1 0 0 1 1.1 0.9;", "2 1 10 0 0 0 1 1 0 0 1 1.1;");
        assert!(matches!(parse_case(&text), Err(Error::Parse { line: 5, .. })));
    }

    #[test]
    fn quadratic_cost_modes() {
        let text = TWO_BUS.replace("2 0 0 2 20 0;", "2 0 0 3 0.1 20 0;");
        assert!(matches!(parse_case(&text), Err(Error::Parse { .. })));
        let opts = ParseOptions { cost_mode: CostMode::LinearizeAtMidpoint, ..Default::default() };
        let net = parse_case_with(&text, &opts).unwrap();
        // slope 2·0.1·50 + 20 at the 50 MW midpoint, in $/pu
        assert!((net.generators[0].cp - 3000.0).abs() < 1e-9);
    }

    #[test]
    fn gen_bus_load_modes() {
        let text = TWO_BUS.replace("1 3 0  0", "1 3 5  1");
        assert!(parse_case(&text).is_err());
        let opts = ParseOptions { gen_bus_loads: GenBusLoads::Drop, ..Default::default() };
        let net = parse_case_with(&text, &opts).unwrap();
        assert_eq!(net.buses[0].pd, 0.0);
    }

    #[test]
    fn rating_becomes_current_limit() {
        let text = TWO_BUS.replace("0 0.1 0 0 0 0", "0 0.1 0 90 0 0");
        let net = parse_case(&text).unwrap();
        let imax = net.branches[0].imax.unwrap();
        assert!((imax - (0.9f64 / 0.9).powi(2)).abs() < 1e-12);
        let off = parse_case_with(&text, &ParseOptions { flow_limit: FlowLimit::Off, ..Default::default() }).unwrap();
        assert!(off.branches[0].imax.is_none());
    }

    #[test]
    fn no_branches_is_disconnected() {
        let text = TWO_BUS.replace("  1 2 0 0.1 0 0 0 0 0 0 1 -360 360;\n", "");
        let err = parse_case(&text).unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn two_slacks_rejected() {
        let text = TWO_BUS.replace("2 1 10 0", "2 3 10 0");
        assert!(matches!(parse_case(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn round_trip_two_bus() {
        let net = parse_case(TWO_BUS).unwrap();
        assert_eq!(parse_case(&serialize_case(&net)).unwrap(), net);
    }
}
