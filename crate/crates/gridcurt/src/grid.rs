//! Grid data model, its JSON file format, and the nodal admittance matrix.
//!
//! All electrical quantities are stored in per-unit on the system base
//! (`base_mva`, `base_kv`); physical units appear only at the CLI boundary.
//! Transformers are represented as lines with equivalent impedance.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Role of a bus in the power flow problem.
///
/// Every generator and load is modelled as a PQ injection inside box
/// constraints; there are no PV buses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

/// A network node.
///
/// `p_min..q_max` are the static flexibility bounds of the installed
/// technology (nameplate). Non-controllable buses carry a degenerate box
/// (`p_min == p_max`, `q_min == q_max`); supply tasks pin that box to the
/// scenario injection. `cost_coeffs` are polynomial coefficients
/// `c_0 + c_1 p + c_2 p^2 + ...` of the operating cost of the bus's active
/// injection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
    pub observable: bool,
    pub controllable: bool,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(default)]
    pub cost_coeffs: Vec<f64>,
}

/// A branch of the pi model. `b_shunt` is the total line charging
/// susceptance, split evenly between the two ends. `s_max` is the apparent
/// power rating used for loading checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from_bus: usize,
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    pub b_shunt: f64,
    pub s_max: f64,
}

/// Static grid topology. Immutable after construction; safe to share across
/// concurrent workers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base_mva: f64,
    pub base_kv: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
}

/// One finding of [`validate`]. The list is empty exactly on grids accepted
/// by [`load_grid`].
#[derive(Clone, Debug, PartialEq)]
pub enum ValidationIssue {
    NoSlackBus,
    MultipleSlackBuses { count: usize },
    NonDenseBusId { position: usize, id: usize },
    EmptyVoltageBand { bus: usize },
    InvertedActiveBox { bus: usize },
    InvertedReactiveBox { bus: usize },
    ControllableNotObservable { bus: usize },
    NonControllableFlexibility { bus: usize },
    LineSelfLoop { line: usize },
    LineEndpointOutOfRange { line: usize },
    NegativeResistance { line: usize },
    ZeroReactance { line: usize },
    NonPositiveRating { line: usize },
    DisconnectedBus { bus: usize },
    NonFiniteValue { context: String },
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationIssue::*;
        match self {
            NoSlackBus => write!(f, "no slack bus"),
            MultipleSlackBuses { count } => write!(f, "{count} slack buses, expected exactly 1"),
            NonDenseBusId { position, id } => {
                write!(f, "bus at position {position} has id {id}; ids must be dense 0..n-1")
            }
            EmptyVoltageBand { bus } => write!(f, "bus {bus}: v_min must be < v_max"),
            InvertedActiveBox { bus } => write!(f, "bus {bus}: p_min > p_max"),
            InvertedReactiveBox { bus } => write!(f, "bus {bus}: q_min > q_max"),
            ControllableNotObservable { bus } => {
                write!(f, "bus {bus}: controllable buses must be observable")
            }
            NonControllableFlexibility { bus } => {
                write!(f, "bus {bus}: non-controllable buses must have a degenerate flexibility box")
            }
            LineSelfLoop { line } => write!(f, "line {line}: from_bus equals to_bus"),
            LineEndpointOutOfRange { line } => write!(f, "line {line}: endpoint is not a valid bus id"),
            NegativeResistance { line } => write!(f, "line {line}: r must be >= 0"),
            ZeroReactance { line } => write!(f, "line {line}: x must be nonzero"),
            NonPositiveRating { line } => write!(f, "line {line}: s_max must be > 0"),
            DisconnectedBus { bus } => write!(f, "bus {bus} is not reachable from the slack bus"),
            NonFiniteValue { context } => write!(f, "non-finite value in {context}"),
        }
    }
}

impl Grid {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Index of the slack bus. Panics on invalid grids; call on validated
    /// grids only.
    pub fn slack_bus(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .expect("validated grid has a slack bus")
    }

    /// Ids of observable buses in ascending id order.
    pub fn observable_buses(&self) -> Vec<usize> {
        self.buses.iter().filter(|b| b.observable).map(|b| b.id).collect()
    }

    /// Ids of controllable buses in ascending id order.
    pub fn controllable_buses(&self) -> Vec<usize> {
        self.buses.iter().filter(|b| b.controllable).map(|b| b.id).collect()
    }

    pub fn from_json(text: &str) -> Result<Grid> {
        let grid: Grid = serde_json::from_str(text)?;
        let issues = validate(&grid);
        if issues.is_empty() {
            Ok(grid)
        } else {
            Err(Error::Validation(issues))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding, used to pair checkpoints
    /// and datasets with the grid they were produced from.
    pub fn content_hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("grid serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Loads and validates a grid file. Fails with a parse error on malformed
/// JSON and with a validation error naming every violated invariant
/// otherwise.
pub fn load_grid(path: impl AsRef<Path>) -> Result<Grid> {
    let text = std::fs::read_to_string(path)?;
    Grid::from_json(&text)
}

/// Checks every structural invariant and returns one finding per violation.
pub fn validate(grid: &Grid) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    let n = grid.buses.len();

    let slack_count = grid.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
    match slack_count {
        0 => issues.push(ValidationIssue::NoSlackBus),
        1 => {}
        count => issues.push(ValidationIssue::MultipleSlackBuses { count }),
    }

    for (position, bus) in grid.buses.iter().enumerate() {
        if bus.id != position {
            issues.push(ValidationIssue::NonDenseBusId { position, id: bus.id });
        }
        let fields = [bus.v_min, bus.v_max, bus.p_min, bus.p_max, bus.q_min, bus.q_max];
        if fields.iter().any(|v| !v.is_finite()) || bus.cost_coeffs.iter().any(|c| !c.is_finite()) {
            issues.push(ValidationIssue::NonFiniteValue { context: format!("bus {}", bus.id) });
            continue;
        }
        if bus.v_min >= bus.v_max {
            issues.push(ValidationIssue::EmptyVoltageBand { bus: bus.id });
        }
        if bus.p_min > bus.p_max {
            issues.push(ValidationIssue::InvertedActiveBox { bus: bus.id });
        }
        if bus.q_min > bus.q_max {
            issues.push(ValidationIssue::InvertedReactiveBox { bus: bus.id });
        }
        if bus.controllable && !bus.observable {
            issues.push(ValidationIssue::ControllableNotObservable { bus: bus.id });
        }
        if !bus.controllable && (bus.p_min != bus.p_max || bus.q_min != bus.q_max) {
            issues.push(ValidationIssue::NonControllableFlexibility { bus: bus.id });
        }
    }

    for (idx, line) in grid.lines.iter().enumerate() {
        if line.from_bus >= n || line.to_bus >= n {
            issues.push(ValidationIssue::LineEndpointOutOfRange { line: idx });
            continue;
        }
        if line.from_bus == line.to_bus {
            issues.push(ValidationIssue::LineSelfLoop { line: idx });
        }
        if ![line.r, line.x, line.b_shunt, line.s_max].iter().all(|v| v.is_finite()) {
            issues.push(ValidationIssue::NonFiniteValue { context: format!("line {idx}") });
            continue;
        }
        if line.r < 0.0 {
            issues.push(ValidationIssue::NegativeResistance { line: idx });
        }
        if line.x == 0.0 {
            issues.push(ValidationIssue::ZeroReactance { line: idx });
        }
        if line.s_max <= 0.0 {
            issues.push(ValidationIssue::NonPositiveRating { line: idx });
        }
    }

    // Connectivity from the slack bus, over well-formed lines only.
    if slack_count == 1 && grid.buses.iter().enumerate().all(|(i, b)| b.id == i) {
        let slack = grid.slack_bus();
        let mut adjacency = vec![Vec::new(); n];
        for line in &grid.lines {
            if line.from_bus < n && line.to_bus < n && line.from_bus != line.to_bus {
                adjacency[line.from_bus].push(line.to_bus);
                adjacency[line.to_bus].push(line.from_bus);
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adjacency[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        for (bus, reached) in seen.iter().enumerate() {
            if !reached {
                issues.push(ValidationIssue::DisconnectedBus { bus });
            }
        }
    }

    issues
}

/// Complex nodal admittance matrix in sparse row form.
#[derive(Clone, Debug)]
pub struct AdmittanceMatrix {
    n: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
}

impl AdmittanceMatrix {
    pub fn dimension(&self) -> usize {
        self.n
    }

    /// Entry Y_ij; zero where no line connects i and j.
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        match self.rows[i].binary_search_by_key(&j, |&(col, _)| col) {
            Ok(pos) => self.rows[i][pos].1,
            Err(_) => Complex64::ZERO,
        }
    }

    /// Nonzero entries of row i as (column, value), column-sorted.
    pub fn row(&self, i: usize) -> &[(usize, Complex64)] {
        &self.rows[i]
    }

    /// Y * v.
    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(v.len(), self.n, "vector length matches dimension");
        self.rows
            .iter()
            .map(|row| row.iter().map(|&(j, y)| y * v[j]).sum())
            .collect()
    }
}

/// Assembles the pi-model bus admittance matrix. For each line (i, j) with
/// series admittance y = 1/(r + jx): Y_ij = Y_ji = -y and both diagonals
/// gain y + j*b_shunt/2.
pub fn build_admittance(grid: &Grid) -> AdmittanceMatrix {
    let n = grid.buses.len();
    let mut entries: Vec<BTreeMap<usize, Complex64>> = vec![BTreeMap::new(); n];
    for line in &grid.lines {
        let series = Complex64::new(line.r, line.x).inv();
        let shunt = Complex64::new(0.0, line.b_shunt / 2.0);
        let (f, t) = (line.from_bus, line.to_bus);
        *entries[f].entry(t).or_insert(Complex64::ZERO) -= series;
        *entries[t].entry(f).or_insert(Complex64::ZERO) -= series;
        *entries[f].entry(f).or_insert(Complex64::ZERO) += series + shunt;
        *entries[t].entry(t).or_insert(Complex64::ZERO) += series + shunt;
    }
    AdmittanceMatrix {
        n,
        rows: entries.into_iter().map(|row| row.into_iter().collect()).collect(),
    }
}
