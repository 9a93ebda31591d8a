//! Time-dependent problem data: flexible loads, DER units, aggregators and
//! costs on top of a [`Network`], plus the two reference instances and the
//! randomized generator.

use std::collections::BTreeSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Bus, BusId, Network, NetworkError, NetworkFile, TimeHorizon, ROOT};

/// Identity of the random generator, recorded in reports.
pub const GENERATOR: &str = "ChaCha8Rng (rand_chacha 0.3), seed_from_u64";

/// Slack used when checking the energy feasibility chain, which is compared
/// on sums of floating-point bounds.
const CHAIN_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("bus {bus}: energy requirement {energy} outside [{lo}, {hi}]")]
    InfeasibleLoad { bus: BusId, energy: f64, lo: f64, hi: f64 },
    #[error("bus {bus}: base load p = 0 with q = {q} has no reactive ratio")]
    InvalidBaseLoad { bus: BusId, q: f64 },
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// Deferrable consumption at one bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexibleLoad {
    pub bus: BusId,
    pub pmin: Vec<f64>,
    pub pmax: Vec<f64>,
    /// Total energy the consumption must reach over the horizon.
    pub energy: f64,
    /// Reactive-to-active consumption ratio.
    pub tau: f64,
    /// Optional box on the net reactive power of the bus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmin: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qmax: Option<Vec<f64>>,
}

/// Renewable unit with an inverter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerUnit {
    pub bus: BusId,
    pub pavail: Vec<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorDef {
    pub id: usize,
    pub nodes: Vec<BusId>,
}

/// Preferred net active profile of one bus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileTarget {
    pub bus: BusId,
    pub p: Vec<f64>,
}

/// Local cost of an aggregator, a function of the net active profiles of its
/// buses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LaCost {
    /// Indifferent between feasible profiles.
    Zero,
    /// `weight · Σ (p_{n,t} − p♯_{n,t})²` over the listed buses.
    PreferredProfile { weight: f64, targets: Vec<ProfileTarget> },
}

impl LaCost {
    /// Raw cost of the net active profile given by `p(bus, t)`.
    pub fn eval(&self, p: impl Fn(BusId, usize) -> f64) -> f64 {
        match self {
            LaCost::Zero => 0.0,
            LaCost::PreferredProfile { weight, targets } => {
                let mut acc = 0.0;
                for target in targets {
                    for (t, &goal) in target.p.iter().enumerate() {
                        let d = p(target.bus, t) - goal;
                        acc += d * d;
                    }
                }
                weight * acc
            }
        }
    }

    /// Cost with the constant `weight·‖p♯‖²` removed, i.e. the value reported
    /// as a signed utility in the incentive example.
    pub fn eval_signed(&self, p: impl Fn(BusId, usize) -> f64) -> f64 {
        match self {
            LaCost::Zero => 0.0,
            LaCost::PreferredProfile { weight, targets } => {
                let offset: f64 = targets.iter().flat_map(|t| t.p.iter()).map(|g| g * g).sum();
                self.eval(p) - weight * offset
            }
        }
    }
}

/// Injection cost `c_t(x) = α_t x + β_t x²`, loss weight and local costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostModel {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(default)]
    pub alpha_loss: f64,
    /// One entry per aggregator, in the order of [`Scenario::aggregators`].
    pub la_costs: Vec<LaCost>,
}

impl CostModel {
    /// `c_t(x)`.
    pub fn injection(&self, t: usize, x: f64) -> f64 {
        self.alpha[t] * x + self.beta[t] * x * x
    }

    /// `c_t'(x)`.
    pub fn marginal(&self, t: usize, x: f64) -> f64 {
        self.alpha[t] + 2.0 * self.beta[t] * x
    }
}

/// Net active and reactive profiles `(p, q)` per bus and period. Row `0`
/// (the root) is carried for dense indexing and ignored by the builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profiles {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

impl Profiles {
    pub fn zeros(buses: usize, periods: usize) -> Self {
        Profiles {
            p: vec![vec![0.0; periods]; buses],
            q: vec![vec![0.0; periods]; buses],
        }
    }

    pub fn buses(&self) -> usize {
        self.p.len()
    }

    pub fn periods(&self) -> usize {
        self.p.first().map_or(0, Vec::len)
    }

    /// Largest coordinate-wise difference over non-root buses.
    pub fn max_abs_diff(&self, other: &Profiles) -> f64 {
        let mut m: f64 = 0.0;
        for n in 1..self.p.len() {
            for t in 0..self.p[n].len() {
                m = m
                    .max((self.p[n][t] - other.p[n][t]).abs())
                    .max((self.q[n][t] - other.q[n][t]).abs());
            }
        }
        m
    }
}

/// Full problem data.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub network: Network,
    pub horizon: TimeHorizon,
    pub loads: Vec<FlexibleLoad>,
    pub ders: Vec<DerUnit>,
    pub aggregators: Vec<AggregatorDef>,
    pub costs: CostModel,
    /// Seed of the generator when the scenario was drawn randomly. Files
    /// store it as a TOML integer, so it must not exceed `i64::MAX`.
    pub seed: Option<u64>,
}

/// On-disk representation of a scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub periods: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    pub network: NetworkFile,
    #[serde(default, rename = "load")]
    pub loads: Vec<FlexibleLoad>,
    #[serde(default, rename = "der")]
    pub ders: Vec<DerUnit>,
    #[serde(rename = "aggregator")]
    pub aggregators: Vec<AggregatorDef>,
    pub costs: CostModel,
}

impl Scenario {
    pub fn new(
        network: Network,
        horizon: TimeHorizon,
        loads: Vec<FlexibleLoad>,
        ders: Vec<DerUnit>,
        aggregators: Vec<AggregatorDef>,
        costs: CostModel,
    ) -> Result<Self, ScenarioError> {
        let sc = Scenario {
            network,
            horizon,
            loads,
            ders,
            aggregators,
            costs,
            seed: None,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn periods(&self) -> usize {
        self.horizon.periods
    }

    pub fn num_buses(&self) -> usize {
        self.network.len()
    }

    pub fn load_at(&self, bus: BusId) -> Option<&FlexibleLoad> {
        self.loads.iter().find(|l| l.bus == bus)
    }

    pub fn ders_at(&self, bus: BusId) -> impl Iterator<Item = &DerUnit> {
        self.ders.iter().filter(move |d| d.bus == bus)
    }

    /// Position of the aggregator owning `bus`.
    pub fn owner(&self, bus: BusId) -> Option<usize> {
        self.aggregators.iter().position(|a| a.nodes.contains(&bus))
    }

    /// Checks every type invariant.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let nb = self.network.len();
        let t_len = self.horizon.periods;
        if t_len == 0 {
            return Err(invalid("time horizon needs at least one period"));
        }
        let check_bus = |bus: BusId, what: &str| -> Result<(), ScenarioError> {
            if bus == ROOT || bus >= nb {
                Err(invalid(format!("{what} attached to invalid bus {bus}")))
            } else {
                Ok(())
            }
        };
        let mut seen = BTreeSet::new();
        for load in &self.loads {
            check_bus(load.bus, "load")?;
            if !seen.insert(load.bus) {
                return Err(invalid(format!("two loads at bus {}", load.bus)));
            }
            if load.pmin.len() != t_len || load.pmax.len() != t_len {
                return Err(invalid(format!(
                    "load at bus {}: bounds need {t_len} periods",
                    load.bus
                )));
            }
            for t in 0..t_len {
                if !(load.pmin[t] <= load.pmax[t]) {
                    return Err(invalid(format!("load at bus {}: pmin > pmax at t={t}", load.bus)));
                }
            }
            if !load.tau.is_finite() || !load.energy.is_finite() {
                return Err(invalid(format!("load at bus {}: non-finite data", load.bus)));
            }
            let lo: f64 = load.pmin.iter().sum();
            let hi: f64 = load.pmax.iter().sum();
            if load.energy > hi + CHAIN_TOL || load.energy < lo - CHAIN_TOL {
                return Err(ScenarioError::InfeasibleLoad {
                    bus: load.bus,
                    energy: load.energy,
                    lo,
                    hi,
                });
            }
            match (&load.qmin, &load.qmax) {
                (None, None) => {}
                (Some(lo), Some(hi)) if lo.len() == t_len && hi.len() == t_len => {
                    if lo.iter().zip(hi).any(|(a, b)| !(a <= b)) {
                        return Err(invalid(format!("load at bus {}: qmin > qmax", load.bus)));
                    }
                }
                _ => {
                    return Err(invalid(format!(
                        "load at bus {}: qmin and qmax must both be given for every period",
                        load.bus
                    )))
                }
            }
        }
        for der in &self.ders {
            check_bus(der.bus, "DER")?;
            if der.pavail.len() != t_len {
                return Err(invalid(format!("DER at bus {}: pavail needs {t_len} periods", der.bus)));
            }
            if der.pavail.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
                return Err(invalid(format!("DER at bus {}: pavail must be >= 0", der.bus)));
            }
            if !(der.rho_min <= der.rho_max) {
                return Err(invalid(format!("DER at bus {}: rho_min > rho_max", der.bus)));
            }
        }
        let mut owned = vec![0usize; nb];
        for agg in &self.aggregators {
            for &n in &agg.nodes {
                check_bus(n, "aggregator node")?;
                owned[n] += 1;
            }
        }
        for (n, &count) in owned.iter().enumerate().skip(1) {
            if count != 1 {
                return Err(invalid(format!(
                    "aggregators must partition the buses: bus {n} owned {count} times"
                )));
            }
        }
        let c = &self.costs;
        if c.alpha.len() != t_len || c.beta.len() != t_len {
            return Err(invalid(format!("cost coefficients need {t_len} periods")));
        }
        if c.alpha.iter().chain(&c.beta).any(|&v| !(v >= 0.0)) || !(c.alpha_loss >= 0.0) {
            return Err(invalid("cost coefficients must be >= 0"));
        }
        if c.la_costs.len() != self.aggregators.len() {
            return Err(invalid("one local cost per aggregator is required"));
        }
        for (agg, cost) in self.aggregators.iter().zip(&c.la_costs) {
            if let LaCost::PreferredProfile { weight, targets } = cost {
                if !(*weight >= 0.0) {
                    return Err(invalid("preferred-profile weight must be >= 0"));
                }
                for target in targets {
                    if !agg.nodes.contains(&target.bus) || target.p.len() != t_len {
                        return Err(invalid(format!(
                            "aggregator {}: preferred profile for bus {} is not one of its buses or has wrong length",
                            agg.id, target.bus
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Local cost of aggregator `a` for the given net profiles.
    pub fn la_cost(&self, a: usize, profiles: &Profiles) -> f64 {
        self.costs.la_costs[a].eval(|n, t| profiles.p[n][t])
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            periods: self.horizon.periods,
            seed: self.seed,
            generator: self.seed.map(|_| GENERATOR.to_string()),
            network: self.network.to_file(),
            loads: self.loads.clone(),
            ders: self.ders.clone(),
            aggregators: self.aggregators.clone(),
            costs: self.costs.clone(),
        }
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let network = Network::from_file(file.network)?;
        let horizon = TimeHorizon::new(file.periods)?;
        let mut sc = Scenario::new(network, horizon, file.loads, file.ders, file.aggregators, file.costs)?;
        sc.seed = file.seed;
        Ok(sc)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Schema(e.message().to_string()))?;
        Scenario::from_file(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("scenario serializes to toml")
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    Scenario::from_toml_str(&std::fs::read_to_string(path)?)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
    std::fs::write(path, scenario.to_toml_string())?;
    Ok(())
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Draws one flexible load per non-root bus from base values `(p̂, q̂)`
/// indexed by bus. The stream is consumed bus by bus, and for each bus
/// `pmin, pmax` per period followed by the energy.
fn draw_loads(base: &[(f64, f64)], periods: usize, rng: &mut ChaCha8Rng) -> Result<Vec<FlexibleLoad>, ScenarioError> {
    let mut loads = Vec::new();
    for (bus, &(ph, qh)) in base.iter().enumerate().skip(1) {
        if ph == 0.0 && qh != 0.0 {
            return Err(ScenarioError::InvalidBaseLoad { bus, q: qh });
        }
        let mut pmin = Vec::with_capacity(periods);
        let mut pmax = Vec::with_capacity(periods);
        for _ in 0..periods {
            if ph >= 0.0 {
                pmin.push(uniform(rng, 0.0, ph));
                pmax.push(uniform(rng, ph, 2.0 * ph));
            } else {
                // net producer: mirror the recipe on the negative axis
                pmin.push(uniform(rng, 2.0 * ph, ph));
                pmax.push(uniform(rng, ph, 0.0));
            }
        }
        let lo: f64 = pmin.iter().sum();
        let hi: f64 = pmax.iter().sum();
        let energy = uniform(rng, lo, hi);
        let tau = if ph == 0.0 { 0.0 } else { qh / ph };
        loads.push(FlexibleLoad {
            bus,
            pmin,
            pmax,
            energy,
            tau,
            qmin: None,
            qmax: None,
        });
    }
    Ok(loads)
}

/// Random flexible loads around the base values, one aggregator owning every
/// bus, no DER, and costs `c_t(x) = x`. Callers overlay their own DER,
/// aggregators and costs.
pub fn generate_scenario(
    network: &Network,
    base_loads: &[(f64, f64)],
    periods: usize,
    seed: u64,
) -> Result<Scenario, ScenarioError> {
    if base_loads.len() != network.len() {
        return Err(invalid(format!(
            "expected {} base loads, got {}",
            network.len(),
            base_loads.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loads = draw_loads(base_loads, periods, &mut rng)?;
    let mut sc = Scenario::new(
        network.clone(),
        TimeHorizon::new(periods)?,
        loads,
        Vec::new(),
        vec![AggregatorDef {
            id: 1,
            nodes: network.non_root().collect(),
        }],
        CostModel {
            alpha: vec![1.0; periods],
            beta: vec![0.0; periods],
            alpha_loss: 0.0,
            la_costs: vec![LaCost::Zero],
        },
    )?;
    sc.seed = Some(seed);
    Ok(sc)
}

/// Line data of the 15-bus feeder: `(ancestor, R, X, S, p̂, q̂, B·10³)`.
const TABLE1: [(usize, f64, f64, f64, f64, f64, f64); 14] = [
    (0, 0.001, 0.12, 2.0, 0.7936, 0.1855, 1.1),
    (1, 0.0883, 0.1262, 0.256, 0.0, 0.0, 2.8),
    (2, 0.1384, 0.1978, 0.256, 0.0201, 0.0084, 2.4),
    (3, 0.0191, 0.0273, 0.256, 0.0173, 0.0043, 0.4),
    (4, 0.0175, 0.0251, 0.256, 0.0291, 0.0073, 0.8),
    (5, 0.0482, 0.0689, 0.256, 0.0219, 0.0055, 0.6),
    (8, 0.0523, 0.0747, 0.256, -0.1969, 0.0, 0.6),
    (3, 0.0407, 0.0582, 0.256, 0.0235, 0.0059, 1.2),
    (8, 0.01, 0.0143, 0.256, 0.0229, 0.0142, 0.4),
    (9, 0.0241, 0.0345, 0.256, 0.0217, 0.0065, 0.4),
    (10, 0.0103, 0.0148, 0.256, 0.0132, 0.0033, 0.1),
    (0, 0.001, 0.12, 1.0, 0.6219, 0.1291, 0.1),
    (12, 0.1559, 0.1119, 0.204, 0.0014, 0.0008, 0.2),
    (13, 0.0953, 0.0684, 0.204, 0.0224, 0.0083, 0.1),
];

/// The 15-bus feeder (buses `0..=14`), squared voltage bounds `[0.81, 1.21]`.
pub fn network_15bus() -> Network {
    let mut buses = vec![Bus::root(1.0)];
    for (i, &(anc, r, x, s, _, _, b)) in TABLE1.iter().enumerate() {
        buses.push(Bus {
            id: i + 1,
            ancestor: Some(anc),
            r,
            x,
            g: 0.0,
            b: b * 1e-3,
            s,
            vmin: 0.81,
            vmax: 1.21,
        });
    }
    Network::new(buses, 1.0).expect("15-bus data is a valid radial network")
}

/// Base loads `(p̂, q̂)` of the 15-bus feeder, indexed by bus.
pub fn base_loads_15bus() -> Vec<(f64, f64)> {
    std::iter::once((0.0, 0.0))
        .chain(TABLE1.iter().map(|row| (row.4, row.5)))
        .collect()
}

/// Aggregator partition of the 15-bus feeder.
pub fn aggregators_15bus() -> Vec<AggregatorDef> {
    [
        vec![1, 2, 3],
        vec![4, 5, 6, 12, 13],
        vec![8, 7, 14],
        vec![9, 10],
        vec![11],
    ]
    .into_iter()
    .enumerate()
    .map(|(i, nodes)| AggregatorDef { id: i + 1, nodes })
    .collect()
}

/// The 15-bus study: random loads from the base values, a DER at bus 11 with
/// `Pavail ~ U[0, 0.6]` drawn after the loads, two periods with
/// `c₀(x) = x + x²`, `c₁(x) = x`, five indifferent aggregators.
pub fn fixture_15bus(seed: u64) -> Scenario {
    let network = network_15bus();
    let periods = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loads = draw_loads(&base_loads_15bus(), periods, &mut rng).expect("base loads of the 15-bus feeder are valid");
    let pavail = (0..periods).map(|_| uniform(&mut rng, 0.0, 0.6)).collect();
    let aggregators = aggregators_15bus();
    let la_costs = vec![LaCost::Zero; aggregators.len()];
    let mut sc = Scenario::new(
        network,
        TimeHorizon { periods },
        loads,
        vec![DerUnit {
            bus: 11,
            pavail,
            rho_min: 0.0,
            rho_max: 0.0,
        }],
        aggregators,
        CostModel {
            alpha: vec![1.0, 1.0],
            beta: vec![1.0, 0.0],
            alpha_loss: 0.0,
            la_costs,
        },
    )
    .expect("generated 15-bus scenario is valid");
    sc.seed = Some(seed);
    sc
}

/// Published optimal net profiles of the 15-bus study (two periods). Bus 11
/// nets its consumption against the DER output (0.185 and 0.194).
pub fn fixture_15bus_table2_profiles() -> Profiles {
    let p0 = [
        0.0,
        0.623,
        0.0,
        0.028,
        0.005,
        0.001,
        0.013,
        -0.131,
        0.023,
        0.002,
        0.014,
        0.02 - 0.185,
        0.107,
        0.003,
        0.022,
    ];
    let q0 = [
        0.0, 0.146, 0.0, 0.012, 0.001, 0.0, 0.003, 0.0, 0.006, 0.001, 0.004, 0.005, 0.022, 0.002, 0.008,
    ];
    let p1 = [
        0.0,
        1.05,
        0.0,
        0.037,
        0.027,
        0.031,
        0.026,
        -0.143,
        0.006,
        0.036,
        0.015,
        0.026 - 0.194,
        0.342,
        0.002,
        0.03,
    ];
    let q1 = [
        0.0, 0.245, 0.0, 0.015, 0.007, 0.008, 0.006, 0.0, 0.001, 0.022, 0.004, 0.006, 0.071, 0.001, 0.011,
    ];
    Profiles {
        p: (0..15).map(|n| vec![p0[n], p1[n]]).collect(),
        q: (0..15).map(|n| vec![q0[n], q1[n]]).collect(),
    }
}

/// Which reading of the incentive example's period-1 cost to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyCostForm {
    /// `c₀(x) = 10x + 10x²`, `c₁(x) = 3x + 2x²`.
    #[default]
    Corrected,
    /// Quadratic of the second period charged on the first one as printed:
    /// `c₀(x) = 10x + 12x²`, `c₁(x) = 3x`.
    Literal,
}

/// Two-bus, two-period instance with a single aggregator whose local cost is
/// `10·‖p − (1.5, 1.5)‖²`.
pub fn fixture_toy() -> Scenario {
    fixture_toy_with(ToyCostForm::Corrected)
}

pub fn fixture_toy_with(form: ToyCostForm) -> Scenario {
    let network = Network::new(
        vec![
            Bus::root(1.0),
            Bus {
                id: 1,
                ancestor: Some(0),
                r: 0.001,
                x: 0.12,
                g: 0.0,
                b: 0.0011,
                s: 5.0,
                vmin: 0.7,
                vmax: 1.3,
            },
        ],
        1.0,
    )
    .expect("toy network is radial");
    let (alpha, beta) = match form {
        ToyCostForm::Corrected => (vec![10.0, 3.0], vec![10.0, 2.0]),
        ToyCostForm::Literal => (vec![10.0, 3.0], vec![12.0, 0.0]),
    };
    Scenario::new(
        network,
        TimeHorizon { periods: 2 },
        vec![FlexibleLoad {
            bus: 1,
            pmin: vec![0.3, 0.2],
            pmax: vec![1.5, 2.0],
            energy: 1.0,
            tau: 0.3,
            qmin: Some(vec![-0.5, -0.5]),
            qmax: Some(vec![1.0, 1.0]),
        }],
        Vec::new(),
        vec![AggregatorDef { id: 1, nodes: vec![1] }],
        CostModel {
            alpha,
            beta,
            alpha_loss: 0.0,
            la_costs: vec![LaCost::PreferredProfile {
                weight: 10.0,
                targets: vec![ProfileTarget {
                    bus: 1,
                    p: vec![1.5, 1.5],
                }],
            }],
        },
    )
    .expect("toy scenario is valid")
}

/// Shape of a synthetic instance for property testing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOptions {
    /// Total bus count including the root.
    pub buses: usize,
    pub periods: usize,
    /// Set every R, X, G, B to zero and make capacities non-binding.
    pub zero_impedance: bool,
}

/// Random small radial instance: random tree, mild line data, loads drawn
/// with the usual recipe, one DER, up to three aggregators with either zero
/// or preferred-profile costs.
pub fn synthetic_scenario(seed: u64, opts: SyntheticOptions) -> Result<Scenario, ScenarioError> {
    if opts.buses < 2 {
        return Err(invalid("a synthetic instance needs at least two buses"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buses = vec![Bus::root(1.0)];
    for id in 1..opts.buses {
        let ancestor = rng.gen_range(0..id);
        let (r, x, g, b, s) = if opts.zero_impedance {
            (0.0, 0.0, 0.0, 0.0, 100.0)
        } else {
            (
                uniform(&mut rng, 0.005, 0.05),
                uniform(&mut rng, 0.005, 0.08),
                0.0,
                uniform(&mut rng, 0.0, 2e-3),
                uniform(&mut rng, 0.8, 2.0),
            )
        };
        buses.push(Bus {
            id,
            ancestor: Some(ancestor),
            r,
            x,
            g,
            b,
            s,
            vmin: 0.81,
            vmax: 1.21,
        });
    }
    let network = Network::new(buses, 1.0)?;
    let base: Vec<(f64, f64)> = (0..opts.buses)
        .map(|n| {
            if n == 0 {
                (0.0, 0.0)
            } else {
                let p = uniform(&mut rng, 0.02, 0.25);
                (p, p * uniform(&mut rng, 0.1, 0.4))
            }
        })
        .collect();
    let loads = draw_loads(&base, opts.periods, &mut rng)?;
    let der_bus = rng.gen_range(1..opts.buses);
    let pavail = (0..opts.periods).map(|_| uniform(&mut rng, 0.0, 0.3)).collect();
    let ders = vec![DerUnit {
        bus: der_bus,
        pavail,
        rho_min: -0.3,
        rho_max: 0.3,
    }];
    let groups = rng.gen_range(1..=3usize.min(opts.buses - 1));
    let mut nodes = vec![Vec::new(); groups];
    for n in 1..opts.buses {
        // the first buses seed each group so none is empty
        let g = if n <= groups { n - 1 } else { rng.gen_range(0..groups) };
        nodes[g].push(n);
    }
    let aggregators: Vec<AggregatorDef> = nodes
        .into_iter()
        .enumerate()
        .map(|(i, nodes)| AggregatorDef { id: i + 1, nodes })
        .collect();
    let la_costs = aggregators
        .iter()
        .map(|agg| {
            if rng.gen_bool(0.5) {
                LaCost::Zero
            } else {
                let targets = agg
                    .nodes
                    .iter()
                    .map(|&bus| ProfileTarget {
                        bus,
                        p: (0..opts.periods).map(|_| uniform(&mut rng, 0.0, 0.3)).collect(),
                    })
                    .collect();
                LaCost::PreferredProfile {
                    weight: uniform(&mut rng, 0.5, 2.0),
                    targets,
                }
            }
        })
        .collect();
    let costs = CostModel {
        alpha: (0..opts.periods).map(|_| uniform(&mut rng, 0.5, 2.0)).collect(),
        beta: (0..opts.periods).map(|_| uniform(&mut rng, 0.1, 1.0)).collect(),
        alpha_loss: 0.0,
        la_costs,
    };
    let mut sc = Scenario::new(
        network,
        TimeHorizon::new(opts.periods)?,
        loads,
        ders,
        aggregators,
        costs,
    )?;
    sc.seed = Some(seed);
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_fixture_values() {
        let sc = fixture_toy();
        assert_eq!(sc.load_at(1).unwrap().energy, 1.0);
        assert_eq!(sc.network.bus(1).unwrap().x, 0.12);
        assert_eq!(sc.periods(), 2);
    }

    #[test]
    fn fifteen_bus_fixture_values() {
        let sc = fixture_15bus(7);
        assert_eq!(sc.network.bus(1).unwrap().s, 2.0);
        assert_eq!(sc.aggregators[0].nodes, vec![1, 2, 3]);
        assert_eq!(sc.costs.alpha, vec![1.0, 1.0]);
        assert_eq!(sc.costs.beta, vec![1.0, 0.0]);
        assert_eq!(sc.network.path_to_root(11).unwrap(), vec![11, 10, 9, 8, 3, 2, 1, 0]);
        assert_eq!(sc.network.children(3).unwrap(), &[4, 8]);
        assert_eq!(sc.network.children(0).unwrap(), &[1, 12]);
        let der = &sc.ders[0];
        assert_eq!(der.bus, 11);
        assert!(der.pavail.iter().all(|&p| (0.0..=0.6).contains(&p)));
    }

    #[test]
    fn negative_base_load_keeps_sign() {
        let sc = fixture_15bus(3);
        let l7 = sc.load_at(7).unwrap();
        for t in 0..2 {
            assert!(l7.pmin[t] >= 2.0 * -0.1969 && l7.pmin[t] <= -0.1969);
            assert!(l7.pmax[t] >= -0.1969 && l7.pmax[t] <= 0.0);
        }
        assert_eq!(l7.tau, 0.0);
    }

    #[test]
    fn published_profiles_net_der() {
        let x = fixture_15bus_table2_profiles();
        assert!((x.p[11][0] + 0.165).abs() < 1e-12);
        assert!((x.p[11][1] + 0.168).abs() < 1e-12);
        assert_eq!(x.q[1][0], 0.146);
        assert_eq!(x.p[2][0], 0.0);
    }

    #[test]
    fn all_zero_base_loads() {
        let net = network_15bus();
        let sc = generate_scenario(&net, &vec![(0.0, 0.0); 15], 2, 1).unwrap();
        for l in &sc.loads {
            assert!(l.pmin.iter().chain(&l.pmax).all(|&v| v == 0.0));
            assert_eq!(l.energy, 0.0);
        }
    }

    #[test]
    fn zero_p_with_reactive_is_rejected() {
        let net = network_15bus();
        let mut base = base_loads_15bus();
        base[2] = (0.0, 0.1);
        assert!(matches!(
            generate_scenario(&net, &base, 2, 1),
            Err(ScenarioError::InvalidBaseLoad { bus: 2, .. })
        ));
    }

    #[test]
    fn infeasible_energy_is_rejected() {
        let mut sc = fixture_toy();
        sc.loads[0].energy = 10.0;
        assert!(matches!(
            sc.validate(),
            Err(ScenarioError::InfeasibleLoad { bus: 1, .. })
        ));
    }

    #[test]
    fn partition_is_enforced() {
        let mut sc = fixture_15bus(1);
        sc.aggregators[0].nodes.push(4);
        assert!(sc.validate().is_err());
        let mut sc = fixture_15bus(1);
        sc.aggregators[4].nodes.clear();
        assert!(sc.validate().is_err());
    }

    #[test]
    fn signed_cost_drops_constant() {
        let c = fixture_toy().costs.la_costs[0].clone();
        let raw = c.eval(|_, t| [0.5, 1.125][t]);
        assert!((raw - 10.0 * (1.0 + 0.375 * 0.375)).abs() < 1e-12);
        assert!((c.eval_signed(|_, t| [0.5, 1.125][t]) - (raw - 45.0)).abs() < 1e-12);
    }
}
