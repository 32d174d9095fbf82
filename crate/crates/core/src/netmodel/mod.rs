//! Per-unit network model: buses, branches, generators and the bus
//! admittance matrix.

mod parse;
mod ybus;

pub use parse::{parse_case, parse_case_with, serialize_case, CostMode, FlowLimit, GenBusLoads, ParseOptions};
pub use ybus::build_ybus;

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{HashMap, VecDeque};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Slack,
    Generator,
    Load,
    ZeroInjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Inelastic demand (pu).
    pub pd: f64,
    pub qd: f64,
    pub vmin: f64,
    pub vmax: f64,
    /// Shunt admittance at 1 pu voltage (pu).
    pub gsh: f64,
    pub bsh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance (pu).
    pub b_charge: f64,
    /// Off-nominal turns ratio as given in the case file; `0` means nominal.
    pub tap: f64,
    /// Phase shift in degrees.
    pub shift: f64,
    /// Long-term apparent-power rating (pu), `0` when unlimited.
    pub rate: f64,
    /// Squared series-current limit (pu), if the branch is flow limited.
    pub imax: Option<f64>,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }

    pub fn ratio(&self) -> f64 {
        if self.tap == 0.0 {
            1.0
        } else {
            self.tap
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub pmin: f64,
    pub pmax: f64,
    pub qmin: f64,
    pub qmax: f64,
    /// Linear active/reactive cost coefficients ($/h per pu).
    pub cp: f64,
    pub cq: f64,
    /// Dispatch and voltage setpoint recorded in the case file (pu).
    pub pg0: f64,
    pub vg0: f64,
}

/// Canonical serializable form of a [`Network`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub name: String,
    pub base_mva: f64,
    pub slack_bus: usize,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
}

/// Validated per-unit network with its bus admittance matrix.
#[derive(Debug, Clone)]
pub struct Network {
    pub name: String,
    pub base_mva: f64,
    pub slack_bus: usize,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub generators: Vec<Generator>,
    y: DMatrix<Complex64>,
    index: HashMap<usize, usize>,
    gen_of_bus: Vec<Option<usize>>,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.base_mva == other.base_mva
            && self.slack_bus == other.slack_bus
            && self.buses == other.buses
            && self.branches == other.branches
            && self.generators == other.generators
    }
}

impl Network {
    /// Validates the records and builds the admittance matrix.
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        if !(base_mva > 0.0) {
            return Err(Error::Validation(format!("baseMVA must be positive, got {base_mva}")));
        }
        let mut index = HashMap::with_capacity(buses.len());
        for (k, b) in buses.iter().enumerate() {
            if index.insert(b.id, k).is_some() {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
            if !(b.vmin < b.vmax) {
                return Err(Error::Validation(format!("bus {}: vmin {} >= vmax {}", b.id, b.vmin, b.vmax)));
            }
        }
        let slacks: Vec<&Bus> = buses.iter().filter(|b| b.kind == BusKind::Slack).collect();
        if slacks.len() != 1 {
            return Err(Error::Validation(format!("expected exactly one slack bus, found {}", slacks.len())));
        }
        let slack_bus = slacks[0].id;

        for br in &branches {
            if !index.contains_key(&br.from) || !index.contains_key(&br.to) {
                return Err(Error::Validation(format!("branch {}-{} references unknown bus", br.from, br.to)));
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {}-{} is a self loop", br.from, br.to)));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return Err(Error::Validation(format!("branch {}-{} has zero impedance", br.from, br.to)));
            }
            if let Some(i) = br.imax {
                if !(i > 0.0) {
                    return Err(Error::Validation(format!("branch {}-{}: imax must be positive", br.from, br.to)));
                }
            }
        }

        let mut gen_of_bus = vec![None; buses.len()];
        for (g, gen) in generators.iter().enumerate() {
            let Some(&k) = index.get(&gen.bus) else {
                return Err(Error::Validation(format!("generator {g} at unknown bus {}", gen.bus)));
            };
            if gen_of_bus[k].replace(g).is_some() {
                return Err(Error::Validation(format!("bus {} hosts more than one generator", gen.bus)));
            }
            if gen.pmin > gen.pmax || gen.qmin > gen.qmax {
                return Err(Error::Validation(format!("generator at bus {}: inverted limits", gen.bus)));
            }
            let b = &buses[k];
            if !matches!(b.kind, BusKind::Slack | BusKind::Generator) {
                return Err(Error::Validation(format!("bus {} hosts a generator but is typed {:?}", b.id, b.kind)));
            }
        }
        for (k, b) in buses.iter().enumerate() {
            match b.kind {
                BusKind::ZeroInjection if b.pd != 0.0 || b.qd != 0.0 => {
                    return Err(Error::Validation(format!("zero-injection bus {} carries load", b.id)));
                }
                BusKind::Generator if gen_of_bus[k].is_none() => {
                    return Err(Error::Validation(format!("bus {} typed generator but hosts none", b.id)));
                }
                BusKind::Load | BusKind::ZeroInjection if gen_of_bus[k].is_some() => {
                    return Err(Error::Validation(format!("load bus {} hosts a generator", b.id)));
                }
                _ => {}
            }
        }

        check_connected(&buses, &branches, &index)?;

        let mut net = Network {
            name: name.into(),
            base_mva,
            slack_bus,
            buses,
            branches,
            generators,
            y: DMatrix::zeros(0, 0),
            index,
            gen_of_bus,
        };
        net.y = build_ybus(&net);
        Ok(net)
    }

    pub fn from_record(rec: NetworkRecord) -> Result<Self> {
        let net = Self::new(rec.name, rec.base_mva, rec.buses, rec.branches, rec.generators)?;
        if net.slack_bus != rec.slack_bus {
            return Err(Error::Validation(format!(
                "slack_bus field {} disagrees with bus kinds ({})",
                rec.slack_bus, net.slack_bus
            )));
        }
        Ok(net)
    }

    pub fn to_record(&self) -> NetworkRecord {
        NetworkRecord {
            name: self.name.clone(),
            base_mva: self.base_mva,
            slack_bus: self.slack_bus,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            generators: self.generators.clone(),
        }
    }

    /// Canonical JSON (per-unit records; the admittance matrix is derived).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("network record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: NetworkRecord = serde_json::from_str(text)?;
        Self::from_record(rec)
    }

    /// SHA-256 of the compact canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_string(&self.to_record()).expect("network record serializes");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    pub fn y(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.len()
    }

    pub fn n_branch(&self) -> usize {
        self.branches.len()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    /// Position of the reference bus in `buses`.
    pub fn slack_index(&self) -> usize {
        self.index[&self.slack_bus]
    }

    /// Generator hosted at bus position `k`, if any.
    pub fn gen_at(&self, k: usize) -> Option<usize> {
        self.gen_of_bus[k]
    }

    /// Bus position of generator `g`.
    pub fn gen_bus_index(&self, g: usize) -> usize {
        self.index[&self.generators[g].bus]
    }

    /// Bus positions without a dispatchable resource, in bus order.
    pub fn load_bus_indices(&self) -> Vec<usize> {
        (0..self.n_bus()).filter(|&k| self.gen_of_bus[k].is_none()).collect()
    }

    /// Generator index hosted at the reference bus.
    pub fn slack_gen(&self) -> Option<usize> {
        self.gen_of_bus[self.slack_index()]
    }

    /// Branch endpoints as bus positions.
    pub fn branch_ends(&self, e: usize) -> (usize, usize) {
        let br = &self.branches[e];
        (self.index[&br.from], self.index[&br.to])
    }
}

fn check_connected(buses: &[Bus], branches: &[Branch], index: &HashMap<usize, usize>) -> Result<()> {
    let n = buses.len();
    if n == 0 {
        return Err(Error::Validation("network has no buses".into()));
    }
    let mut adj = vec![Vec::new(); n];
    for br in branches {
        let (f, t) = (index[&br.from], index[&br.to]);
        adj[f].push(t);
        adj[t].push(f);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(k) = queue.pop_front() {
        for &j in &adj[k] {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::Validation(format!("network is disconnected: bus {} unreachable", buses[k].id)));
    }
    Ok(())
}
