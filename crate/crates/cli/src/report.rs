//! Machine-readable run report.

use serde::Serialize;
use sha2::{Digest, Sha256};

use dlmp::coordination::{CoordinationResult, StopReason};
use dlmp::mechanism::{ComparisonRow, Example1Record, Settlement, VcgReport};
use dlmp::opf::{ExactnessReport, OpfSolution};
use dlmp::scenario::Scenario;

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    /// Every flag needed to rerun the command.
    pub args: serde_json::Value,
    pub scenario: ScenarioDigest,
    pub solver_tol: f64,
    pub exit_code: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<SolutionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exactness: Option<ExactnessReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coordination: Option<CoordinationSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settlement: Option<Settlement>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vcg: Option<VcgReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<Vec<ComparisonRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub example1: Option<Example1Record>,
    /// Wall-clock figures; the only fields that differ between reruns.
    pub timing: Timing,
}

#[derive(Debug, Serialize)]
pub struct ScenarioDigest {
    pub source: String,
    pub seed: Option<u64>,
    /// SHA-256 of the canonical TOML rendering.
    pub sha256: String,
    pub buses: usize,
    pub periods: usize,
    pub aggregators: usize,
}

impl ScenarioDigest {
    pub fn of(sc: &Scenario, source: &str) -> Self {
        ScenarioDigest {
            source: source.to_string(),
            seed: sc.seed,
            sha256: sha256_hex(sc.to_toml_string().as_bytes()),
            buses: sc.num_buses(),
            periods: sc.periods(),
            aggregators: sc.aggregators.len(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Default, Serialize)]
pub struct Timing {
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver_seconds: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct BusRow {
    pub period: usize,
    pub bus: usize,
    pub lambda_p: f64,
    pub lambda_q: f64,
    pub pc: f64,
    pub p: f64,
    pub q: f64,
    pub f: f64,
    pub g: f64,
    pub ell: f64,
    pub v: f64,
}

#[derive(Debug, Serialize)]
pub struct SolutionSummary {
    pub status: String,
    pub objective: f64,
    pub phi0: f64,
    pub period_costs: Vec<f64>,
    pub kkt_max: f64,
    pub rows: Vec<BusRow>,
}

impl SolutionSummary {
    pub fn of(sc: &Scenario, sol: &OpfSolution) -> Self {
        let (x, d) = (&sol.vars, &sol.dlmps);
        let mut rows = Vec::new();
        for t in 0..sc.periods() {
            for n in 0..sc.num_buses() {
                let (p, q) = if n == 0 {
                    (x.p0[t], x.q0[t])
                } else {
                    (x.p[n][t], x.q[n][t])
                };
                rows.push(BusRow {
                    period: t,
                    bus: n,
                    lambda_p: d.lp[n][t],
                    lambda_q: d.lq[n][t],
                    pc: x.pc[n][t],
                    p,
                    q,
                    f: x.f[n][t],
                    g: x.g[n][t],
                    ell: x.ell[n][t],
                    v: x.v[n][t],
                });
            }
        }
        SolutionSummary {
            status: sol.status.to_string(),
            objective: sol.objective_value,
            phi0: sol.phi0,
            period_costs: sol.period_costs.clone(),
            kkt_max: sol.kkt.max(),
            rows,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct CoordinationSummary {
    pub algorithm: String,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub objective: f64,
    pub central_objective: f64,
    pub objective_gap: f64,
    pub primal_residual: f64,
    /// Largest price difference against the central DLMPs.
    pub dlmp_gap: f64,
    pub infeasible_rounds: Vec<usize>,
}

impl CoordinationSummary {
    pub fn of(res: &CoordinationResult, central: &OpfSolution) -> Self {
        CoordinationSummary {
            algorithm: res.config.algo.to_string(),
            iterations: res.iterations(),
            converged: res.converged,
            stop: res.stop,
            objective: res.objective,
            central_objective: central.objective_value,
            objective_gap: (res.objective - central.objective_value).abs(),
            primal_residual: res.primal_residual,
            dlmp_gap: res.lambda.max_abs_diff(&central.dlmps),
            infeasible_rounds: res.infeasible_rounds(),
        }
    }
}
