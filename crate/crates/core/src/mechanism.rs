//! Settlement and payment rules.
//!
//! [`settle`] charges each aggregator the DLMP value of its realized
//! profile, re-pricing and flagging deviators when the realization differs
//! from the agreement. [`vcg_payments`] computes Clarke-tax payments from
//! `|𝒜| + 1` central solves, and [`dvcg_payments`] does the same with
//! decentralized runs. [`reproduce_example1`] replays the two-bus
//! incentive example where misreporting a bound pays off under DLMPs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{SolveOptions, Status};
use crate::coordination::{run, total_cost, AlgoConfig, Algorithm, CoordinationError, CoordinationResult};
use crate::network::BusId;
use crate::opf::{build_dso, build_dso_truncated, solve, solve_central, DlmpSet, OpfError};
use crate::scenario::{fixture_toy_with, LaCost, Profiles, Scenario, ToyCostForm};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Coordination(#[from] CoordinationError),
    #[error("full-information problem ended {0}")]
    FullProblem(Status),
    #[error("agreement did not converge")]
    NotConverged,
}

/// Deviation threshold between agreed and realized profiles.
pub const DEVIATION_TOL: f64 = 1e-6;

/// Penalty large enough to dominate any gain from cheating: `10·|Φ*|`.
pub fn default_penalty(phi_star: f64) -> f64 {
    10.0 * phi_star.abs()
}

/// Outcome of the computation step: agreed profiles and prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub x: Profiles,
    pub lambda: DlmpSet,
    pub objective: f64,
}

impl From<&CoordinationResult> for Agreement {
    fn from(r: &CoordinationResult) -> Self {
        Agreement {
            x: r.x.clone(),
            lambda: r.lambda.clone(),
            objective: r.objective,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettlementEntry {
    pub aggregator: usize,
    pub nodes: Vec<BusId>,
    pub active_payment: f64,
    pub reactive_payment: f64,
    pub dlmp_payment: f64,
    pub deviated: bool,
    pub penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settlement {
    pub entries: Vec<SettlementEntry>,
    /// Prices used for settlement.
    pub lambda: DlmpSet,
    /// Prices were recomputed because some aggregator deviated.
    pub recomputed: bool,
    /// The re-pricing problem was infeasible and the truncated one was used.
    pub truncated: bool,
    pub tau_pen: f64,
    /// `Σ_a payment_a − Σ_{n≠0,t} (λᵖp + λ^q q)`.
    pub budget_residual: f64,
}

impl Settlement {
    pub fn total_penalties(&self) -> f64 {
        self.entries.iter().map(|e| e.penalty).sum()
    }
}

fn payments(sc: &Scenario, lambda: &DlmpSet, x: &Profiles) -> Vec<(f64, f64)> {
    sc.aggregators
        .iter()
        .map(|agg| {
            let mut act = 0.0;
            let mut react = 0.0;
            for &n in &agg.nodes {
                for t in 0..sc.periods() {
                    act += lambda.lp[n][t] * x.p[n][t];
                    react += lambda.lq[n][t] * x.q[n][t];
                }
            }
            (act, react)
        })
        .collect()
}

/// Realization and penalization steps.
pub fn settle(
    sc: &Scenario,
    agreed: &Agreement,
    realized: &Profiles,
    tau_pen: f64,
    k_trunc: f64,
    opts: &SolveOptions,
) -> Result<Settlement, MechanismError> {
    let deviated: Vec<bool> = sc
        .aggregators
        .iter()
        .map(|agg| {
            agg.nodes.iter().any(|&n| {
                (0..sc.periods()).any(|t| {
                    (agreed.x.p[n][t] - realized.p[n][t]).abs() > DEVIATION_TOL
                        || (agreed.x.q[n][t] - realized.q[n][t]).abs() > DEVIATION_TOL
                })
            })
        })
        .collect();
    let recomputed = deviated.iter().any(|&d| d);
    let mut truncated = false;
    let lambda = if recomputed {
        let sol = solve(sc, &build_dso(sc, realized)?, opts)?;
        if sol.is_optimal() {
            sol.dlmps
        } else {
            truncated = true;
            let sol = solve(sc, &build_dso_truncated(sc, realized, k_trunc)?, opts)?;
            if !sol.is_optimal() {
                return Err(MechanismError::FullProblem(sol.status));
            }
            sol.dlmps
        }
    } else {
        agreed.lambda.clone()
    };
    let pays = payments(sc, &lambda, realized);
    let entries: Vec<SettlementEntry> = sc
        .aggregators
        .iter()
        .enumerate()
        .map(|(a, agg)| SettlementEntry {
            aggregator: agg.id,
            nodes: agg.nodes.clone(),
            active_payment: pays[a].0,
            reactive_payment: pays[a].1,
            dlmp_payment: pays[a].0 + pays[a].1,
            deviated: deviated[a],
            penalty: if deviated[a] { tau_pen } else { 0.0 },
        })
        .collect();
    let all: Vec<BusId> = sc.network.non_root().collect();
    let budget_residual = entries.iter().map(|e| e.dlmp_payment).sum::<f64>() - lambda.value_of(realized, &all);
    Ok(Settlement {
        entries,
        lambda,
        recomputed,
        truncated,
        tau_pen,
        budget_residual,
    })
}

/// Clarke-tax data of one aggregator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcgEntry {
    pub aggregator: usize,
    pub nodes: Vec<BusId>,
    /// Optimal cost without the aggregator, `τᶜ_a`.
    pub clarke_tax: Option<f64>,
    /// `φ₀* + Σ_{a'≠a} φ_{a'}*` at the full-information optimum.
    pub others_cost: f64,
    pub vcg_payment: Option<f64>,
    pub counterfactual_status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VcgReport {
    pub entries: Vec<VcgEntry>,
    /// `Φ` at the full-information optimum.
    pub full_objective: f64,
    pub phi0: f64,
    pub la_costs: Vec<f64>,
    /// Number of optimization problems solved (central or decentralized).
    pub solves: usize,
}

/// The scenario without aggregator `a`: its devices removed and its cost
/// set to zero, the network unchanged.
pub fn without_aggregator(sc: &Scenario, a: usize) -> Scenario {
    let nodes = &sc.aggregators[a].nodes;
    let mut out = sc.clone();
    out.loads.retain(|l| !nodes.contains(&l.bus));
    out.ders.retain(|d| !nodes.contains(&d.bus));
    out.costs.la_costs[a] = LaCost::Zero;
    out
}

struct Outcome {
    status: Status,
    objective: f64,
    phi0: f64,
    la_costs: Vec<f64>,
}

fn central_outcome(sc: &Scenario, opts: &SolveOptions) -> Result<Outcome, MechanismError> {
    let sol = solve_central(sc, opts)?;
    if !sol.is_optimal() {
        return Ok(Outcome {
            status: sol.status,
            objective: f64::NAN,
            phi0: f64::NAN,
            la_costs: Vec::new(),
        });
    }
    let x = sol.vars.profiles();
    let la_costs = (0..sc.aggregators.len()).map(|a| sc.la_cost(a, &x)).collect::<Vec<_>>();
    Ok(Outcome {
        status: sol.status,
        objective: sol.phi0 + la_costs.iter().sum::<f64>(),
        phi0: sol.phi0,
        la_costs,
    })
}

fn decentralized_outcome(sc: &Scenario, cfg: &AlgoConfig) -> Result<Outcome, MechanismError> {
    let r = match run(sc, cfg) {
        Ok(r) => r,
        Err(CoordinationError::DsoFailure { status, .. }) => {
            return Ok(Outcome {
                status,
                objective: f64::NAN,
                phi0: f64::NAN,
                la_costs: Vec::new(),
            })
        }
        Err(e) => return Err(e.into()),
    };
    let la_costs = (0..sc.aggregators.len())
        .map(|a| sc.la_cost(a, &r.x))
        .collect::<Vec<_>>();
    let objective = total_cost(sc, &r.x0, &r.x);
    Ok(Outcome {
        status: if r.converged {
            Status::Optimal
        } else {
            Status::NumericalFailure
        },
        phi0: objective - la_costs.iter().sum::<f64>(),
        objective,
        la_costs,
    })
}

fn vcg_from(
    sc: &Scenario,
    solver: impl Fn(&Scenario) -> Result<Outcome, MechanismError> + Sync,
) -> Result<VcgReport, MechanismError> {
    let mut jobs: Vec<Scenario> = vec![sc.clone()];
    jobs.extend((0..sc.aggregators.len()).map(|a| without_aggregator(sc, a)));
    let outcomes: Vec<Result<Outcome, MechanismError>> = jobs.par_iter().map(&solver).collect();
    let solves = outcomes.len();
    let mut outcomes = outcomes.into_iter();
    let full = outcomes.next().expect("full problem is first")?;
    if full.status != Status::Optimal {
        return Err(MechanismError::FullProblem(full.status));
    }
    let mut entries = Vec::with_capacity(sc.aggregators.len());
    for (a, out) in outcomes.enumerate() {
        let out = out?;
        let others_cost = full.phi0
            + (0..sc.aggregators.len())
                .filter(|&b| b != a)
                .map(|b| full.la_costs[b])
                .sum::<f64>();
        let clarke_tax = (out.status == Status::Optimal).then_some(out.objective);
        entries.push(VcgEntry {
            aggregator: sc.aggregators[a].id,
            nodes: sc.aggregators[a].nodes.clone(),
            clarke_tax,
            others_cost,
            vcg_payment: clarke_tax.map(|tau| -tau + others_cost),
            counterfactual_status: out.status,
        });
    }
    Ok(VcgReport {
        entries,
        full_objective: full.objective,
        phi0: full.phi0,
        la_costs: full.la_costs,
        solves,
    })
}

/// Clarke-tax payments from `|𝒜| + 1` central solves.
pub fn vcg_payments(sc: &Scenario, opts: &SolveOptions) -> Result<VcgReport, MechanismError> {
    vcg_from(sc, |s| central_outcome(s, opts))
}

/// Same payments with every problem solved by a decentralized run; the
/// aggregators' declared costs come from their own evaluations.
pub fn dvcg_payments(sc: &Scenario, cfg: &AlgoConfig) -> Result<VcgReport, MechanismError> {
    vcg_from(sc, |s| decentralized_outcome(s, cfg))
}

/// One row of the payment comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub aggregator: usize,
    pub nodes: Vec<BusId>,
    pub dlmp_payment: f64,
    pub vcg_payment: Option<f64>,
}

/// Joins settlement and VCG payments per aggregator.
pub fn compare(settlement: &Settlement, vcg: Option<&VcgReport>) -> Vec<ComparisonRow> {
    settlement
        .entries
        .iter()
        .enumerate()
        .map(|(a, e)| ComparisonRow {
            aggregator: e.aggregator,
            nodes: e.nodes.clone(),
            dlmp_payment: e.dlmp_payment,
            vcg_payment: vcg.and_then(|v| v.entries.get(a)).and_then(|v| v.vcg_payment),
        })
        .collect()
}

/// Result of one run of the incentive example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example1Run {
    /// Upper bound announced for period 1.
    pub announced_pmax: f64,
    pub p: Vec<f64>,
    pub lambda_p: Vec<f64>,
    pub payment: f64,
    /// `10·‖p − (1.5, 1.5)‖²`.
    pub phi_raw: f64,
    /// Raw cost minus its constant part, as a signed utility.
    pub phi_signed: f64,
    /// `φ_signed + payment`.
    pub total: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example1Record {
    pub form: ToyCostForm,
    pub truthful: Example1Run,
    pub cheated: Example1Run,
    /// `truthful.total − cheated.total`; positive means cheating pays.
    pub gain_from_cheating: f64,
}

/// True period-1 bound of the example's aggregator.
pub const EXAMPLE1_TRUE_PMAX: f64 = 1.5;
/// Period-1 bound announced by the cheating aggregator.
pub const EXAMPLE1_CHEAT_PMAX: f64 = 1.0;

fn example1_run(form: ToyCostForm, pmax1: f64, opts: &SolveOptions) -> Result<Example1Run, MechanismError> {
    let truth = fixture_toy_with(form);
    let mut announced = truth.clone();
    announced.loads[0].pmax[1] = pmax1;
    let mut cfg = AlgoConfig::new(Algorithm::Admm);
    cfg.solver = opts.clone();
    cfg.record_transcript = false;
    let res = run(&announced, &cfg)?;
    if !res.converged {
        return Err(MechanismError::NotConverged);
    }
    let agreement = Agreement::from(&res);
    // the aggregator follows the agreed profile, so there is no deviation
    let settlement = settle(&truth, &agreement, &agreement.x, 0.0, 4.0, opts)?;
    let payment = settlement.entries[0].dlmp_payment;
    let cost = &truth.costs.la_costs[0];
    let x = &agreement.x;
    let phi_raw = cost.eval(|n, t| x.p[n][t]);
    let phi_signed = cost.eval_signed(|n, t| x.p[n][t]);
    Ok(Example1Run {
        announced_pmax: pmax1,
        p: x.p[1].clone(),
        lambda_p: agreement.lambda.lp[1].clone(),
        payment,
        phi_raw,
        phi_signed,
        total: phi_signed + payment,
        iterations: res.iterations(),
    })
}

/// Runs the full pipeline with the true bound and with the misreported one.
pub fn reproduce_example1(form: ToyCostForm, opts: &SolveOptions) -> Result<Example1Record, MechanismError> {
    let truthful = example1_run(form, EXAMPLE1_TRUE_PMAX, opts)?;
    let cheated = example1_run(form, EXAMPLE1_CHEAT_PMAX, opts)?;
    Ok(Example1Record {
        form,
        gain_from_cheating: truthful.total - cheated.total,
        truthful,
        cheated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixture_toy;

    #[test]
    fn penalty_scales_with_objective() {
        assert_eq!(default_penalty(-2.5), 25.0);
    }

    #[test]
    fn removing_aggregator_drops_its_devices() {
        let sc = crate::scenario::fixture_15bus(11);
        let cf = without_aggregator(&sc, 4);
        assert!(cf.ders.is_empty());
        assert!(cf.load_at(11).is_none());
        assert_eq!(cf.loads.len(), sc.loads.len() - 1);
    }

    #[test]
    fn single_aggregator_pays_operator_cost() {
        let sc = fixture_toy();
        let opts = SolveOptions::default();
        let rep = vcg_payments(&sc, &opts).unwrap();
        assert_eq!(rep.solves, 2);
        let e = &rep.entries[0];
        // without its load only the shunt remains, which costs nothing
        assert!(e.clarke_tax.unwrap().abs() < 1e-4);
        assert!((e.vcg_payment.unwrap() - rep.phi0).abs() < 1e-4);
    }

    #[test]
    fn deviation_is_flagged_and_repriced() {
        let sc = crate::scenario::fixture_15bus(11);
        let opts = SolveOptions::default();
        let c = solve_central(&sc, &opts).unwrap();
        let agreed = Agreement {
            x: c.vars.profiles(),
            lambda: c.dlmps.clone(),
            objective: c.objective_value,
        };
        let mut realized = agreed.x.clone();
        realized.p[9][0] += 0.1;
        let s = settle(&sc, &agreed, &realized, 1.0, 4.0, &opts).unwrap();
        assert!(s.recomputed);
        let flagged: Vec<bool> = s.entries.iter().map(|e| e.deviated).collect();
        assert_eq!(flagged, vec![false, false, false, true, false]);
        assert_eq!(s.total_penalties(), 1.0);
    }
}
