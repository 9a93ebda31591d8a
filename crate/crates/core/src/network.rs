//! Radial distribution network: buses, lines and tree structure.
//!
//! Every non-root bus `n` owns the line `(n, n₋)` to its unique ancestor, so
//! the line parameters (resistance, reactance, capacity) live on the bus
//! record together with its shunt admittance and voltage bounds. All values
//! are per-unit; voltages are *squared* magnitudes.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a bus. Bus ids are the contiguous integers `0..=N`, root is `0`.
pub type BusId = usize;

/// Id of the root (feeder) bus.
pub const ROOT: BusId = 0;

/// Number of discrete periods `T`, indexed `0..T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeHorizon {
    pub periods: usize,
}

impl TimeHorizon {
    pub fn new(periods: usize) -> Result<Self, NetworkError> {
        if periods == 0 {
            return Err(NetworkError::Schema("time horizon needs at least one period".into()));
        }
        Ok(TimeHorizon { periods })
    }

    pub fn iter(&self) -> std::ops::Range<usize> {
        0..self.periods
    }
}

/// One bus of the network together with the line to its ancestor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    /// Absent only for the root.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ancestor: Option<BusId>,
    /// Line resistance `R_n`.
    pub r: f64,
    /// Line reactance `X_n`.
    pub x: f64,
    /// Shunt conductance `G_n`.
    pub g: f64,
    /// Shunt susceptance `B_n`.
    pub b: f64,
    /// Apparent-power capacity `S_n` of the line.
    pub s: f64,
    /// Lower bound on the squared voltage magnitude.
    pub vmin: f64,
    /// Upper bound on the squared voltage magnitude.
    pub vmax: f64,
}

impl Bus {
    /// A root bus with fixed squared voltage `v0` and degenerate line data.
    pub fn root(v0: f64) -> Self {
        Bus {
            id: ROOT,
            ancestor: None,
            r: 0.0,
            x: 0.0,
            g: 0.0,
            b: 0.0,
            s: 0.0,
            vmin: v0,
            vmax: v0,
        }
    }

    pub fn is_root(&self) -> bool {
        self.ancestor.is_none()
    }

    /// Squared line impedance `R² + X²`.
    pub fn z2(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }
}

/// Reasons why a set of ancestor links is not a tree rooted at bus 0.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructureError {
    #[error("cycle detected through bus {bus}")]
    CycleDetected { bus: BusId },
    #[error("bus {bus} cannot reach the root")]
    UnreachableBus { bus: BusId },
    #[error("expected exactly one root (bus 0), found {roots:?}")]
    MultipleRoots { roots: Vec<BusId> },
    #[error("bus {bus} references missing ancestor {ancestor}")]
    DanglingAncestor { bus: BusId, ancestor: BusId },
    #[error("bus ids must be the contiguous range 0..{len}, found id {found} at position {position}")]
    NonContiguousIds { len: usize, position: usize, found: BusId },
    #[error("network has no buses")]
    Empty,
}

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Structure(#[from] StructureError),
    #[error("unknown bus {0}")]
    UnknownBus(BusId),
}

impl NetworkError {
    fn invalid(bus: BusId, field: &str, value: f64, rule: &str) -> Self {
        NetworkError::Schema(format!("bus {bus}: field `{field}` = {value} violates {rule}"))
    }
}

/// Immutable radial network. Construction validates parameters and the tree
/// structure, and caches the children lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    buses: Vec<Bus>,
    v0: f64,
    children: Vec<Vec<BusId>>,
}

/// On-disk representation of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    /// Fixed squared voltage at the root.
    pub v0: f64,
    #[serde(rename = "bus")]
    pub buses: Vec<Bus>,
}

impl Network {
    /// Builds and validates a network. `buses` must be sorted by id.
    pub fn new(buses: Vec<Bus>, v0: f64) -> Result<Self, NetworkError> {
        check_parameters(&buses, v0)?;
        validate_radial(&buses)?;
        let mut children = vec![Vec::new(); buses.len()];
        for bus in &buses {
            if let Some(a) = bus.ancestor {
                children[a].push(bus.id);
            }
        }
        Ok(Network { buses, v0, children })
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// Number of buses including the root (`N + 1`).
    pub fn len(&self) -> usize {
        self.buses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buses.is_empty()
    }

    /// Number of lines, i.e. non-root buses (`N`).
    pub fn num_lines(&self) -> usize {
        self.buses.len() - 1
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn bus(&self, n: BusId) -> Result<&Bus, NetworkError> {
        self.buses.get(n).ok_or(NetworkError::UnknownBus(n))
    }

    /// Non-root bus ids `1..=N`.
    pub fn non_root(&self) -> impl Iterator<Item = BusId> + '_ {
        1..self.buses.len()
    }

    pub fn ancestor(&self, n: BusId) -> Result<Option<BusId>, NetworkError> {
        Ok(self.bus(n)?.ancestor)
    }

    /// The exact set `{m : m₋ = n}`, sorted by id.
    pub fn children(&self, n: BusId) -> Result<&[BusId], NetworkError> {
        self.children
            .get(n)
            .map(Vec::as_slice)
            .ok_or(NetworkError::UnknownBus(n))
    }

    /// Unique path `[n, n₋, …, 0]` from `n` to the root.
    pub fn path_to_root(&self, n: BusId) -> Result<Vec<BusId>, NetworkError> {
        let mut path = vec![n];
        let mut cur = self.bus(n)?;
        while let Some(a) = cur.ancestor {
            path.push(a);
            cur = &self.buses[a];
        }
        Ok(path)
    }

    /// All buses in the subtree rooted at `n`, including `n`.
    pub fn subtree(&self, n: BusId) -> Result<Vec<BusId>, NetworkError> {
        self.bus(n)?;
        let mut out = Vec::new();
        let mut stack = vec![n];
        while let Some(m) = stack.pop() {
            out.push(m);
            stack.extend(self.children[m].iter().rev());
        }
        Ok(out)
    }

    /// Buses without children.
    pub fn leaves(&self) -> Vec<BusId> {
        self.non_root().filter(|&n| self.children[n].is_empty()).collect()
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            v0: self.v0,
            buses: self.buses.clone(),
        }
    }

    pub fn from_file(file: NetworkFile) -> Result<Self, NetworkError> {
        Network::new(file.buses, file.v0)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, NetworkError> {
        let file: NetworkFile = toml::from_str(text).map_err(|e| NetworkError::Schema(e.message().to_string()))?;
        Network::from_file(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("network serializes to toml")
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4} {:>4} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "n", "anc", "R", "X", "S", "B", "G"
        )?;
        for b in &self.buses {
            let anc = b.ancestor.map_or("-".to_string(), |a| a.to_string());
            writeln!(
                f,
                "{:>4} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                b.id, anc, b.r, b.x, b.s, b.b, b.g
            )?;
        }
        Ok(())
    }
}

fn check_parameters(buses: &[Bus], v0: f64) -> Result<(), NetworkError> {
    if !(v0.is_finite() && v0 > 0.0) {
        return Err(NetworkError::Schema(format!("v0 = {v0} must be positive")));
    }
    for bus in buses {
        for (field, value) in [("r", bus.r), ("x", bus.x), ("s", bus.s)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(NetworkError::invalid(bus.id, field, value, "finite and >= 0"));
            }
        }
        for (field, value) in [("g", bus.g), ("b", bus.b)] {
            if !value.is_finite() {
                return Err(NetworkError::invalid(bus.id, field, value, "finite"));
            }
        }
        if !(bus.vmin.is_finite() && bus.vmin > 0.0) {
            return Err(NetworkError::invalid(bus.id, "vmin", bus.vmin, "vmin > 0"));
        }
        if !(bus.vmax.is_finite() && bus.vmax >= bus.vmin) {
            return Err(NetworkError::invalid(bus.id, "vmax", bus.vmax, "vmax >= vmin"));
        }
        if bus.is_root() && (bus.vmin != v0 || bus.vmax != v0) {
            return Err(NetworkError::invalid(
                bus.id,
                "vmin/vmax",
                bus.vmin,
                "root bounds equal to v0",
            ));
        }
    }
    Ok(())
}

/// Checks that the ancestor links form a tree rooted at bus 0 over the
/// contiguous ids `0..len`.
pub fn validate_radial(buses: &[Bus]) -> Result<(), StructureError> {
    if buses.is_empty() {
        return Err(StructureError::Empty);
    }
    for (position, bus) in buses.iter().enumerate() {
        if bus.id != position {
            return Err(StructureError::NonContiguousIds {
                len: buses.len(),
                position,
                found: bus.id,
            });
        }
    }
    let roots: Vec<BusId> = buses.iter().filter(|b| b.is_root()).map(|b| b.id).collect();
    if roots != [ROOT] {
        return Err(StructureError::MultipleRoots { roots });
    }
    for bus in buses {
        if let Some(a) = bus.ancestor {
            if a >= buses.len() {
                return Err(StructureError::DanglingAncestor {
                    bus: bus.id,
                    ancestor: a,
                });
            }
        }
    }

    // 0 = unvisited, 1 = on the current walk, 2 = known to reach the root
    let mut state = vec![0u8; buses.len()];
    state[ROOT] = 2;
    let mut walk = Vec::new();
    for start in 0..buses.len() {
        walk.clear();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            walk.push(cur);
            cur = buses[cur].ancestor.expect("only bus 0 lacks an ancestor");
        }
        if state[cur] == 1 {
            // buses with smaller ids already reach the root, so either `start`
            // sits on the cycle or it hangs off one
            return Err(if cur == start {
                StructureError::CycleDetected { bus: start }
            } else {
                StructureError::UnreachableBus { bus: start }
            });
        }
        for &b in &walk {
            state[b] = 2;
        }
    }
    Ok(())
}

/// Reads and validates a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<Network, NetworkError> {
    let text = std::fs::read_to_string(path)?;
    Network::from_toml_str(&text)
}

/// Writes a network file that [`load_network`] reads back bit-exactly.
pub fn save_network(network: &Network, path: impl AsRef<Path>) -> Result<(), NetworkError> {
    std::fs::write(path, network.to_toml_string())?;
    Ok(())
}
