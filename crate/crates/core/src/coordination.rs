//! Decentralized coordination between the operator and the aggregators.
//!
//! Three schemes share one loop skeleton: dual ascent, ADMM and the
//! primal-dual Gauss-Seidel scheme (PDGS) that averages both profiles and
//! prices. Aggregators only ever see prices and base profiles on their own
//! buses, and the operator only sees reported profiles; every exchange is
//! recorded as a [`Message`].
//!
//! Balance rows of non-root buses are the coupling constraints; root rows
//! involve no aggregator and stay inside the operator's subproblem.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{SolveOptions, Status};
use crate::network::{BusId, ROOT};
use crate::opf::{
    balance_residuals, build_dso, build_dso_coupled, build_dso_truncated, build_la, solve, DlmpSet, LocalBlock,
    OpfError, OpfSolution, OpfVariables, Proximal,
};
use crate::scenario::{Profiles, Scenario};

#[derive(Debug, Error)]
pub enum CoordinationError {
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("local problem of aggregator {aggregator} is {status}")]
    InfeasibleLa { aggregator: usize, status: Status },
    #[error("operator subproblem ended {status} at round {round}")]
    DsoFailure { round: usize, status: Status },
    #[error("primal residual grew more than tenfold between 50-round windows (round {round})")]
    Divergence { round: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DualAscent,
    Admm,
    Pdgs,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::DualAscent => "dual-ascent",
            Algorithm::Admm => "admm",
            Algorithm::Pdgs => "pdgs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algo: Algorithm,
    /// ADMM penalty.
    pub rho: f64,
    /// Dual-ascent steps `α_k = step0 / (1 + k / step_decay)`.
    pub step0: f64,
    pub step_decay: f64,
    /// Multiplier on the dual-ascent step for reactive prices, which face a
    /// much steeper operator response than active ones.
    pub step_q_scale: f64,
    /// PDGS truncation bound on the operator's balance duals.
    pub k_trunc: f64,
    pub max_iter: usize,
    pub tol_primal: f64,
    pub tol_obj: f64,
    /// Consecutive rounds both tolerances must hold.
    pub stable_rounds: usize,
    /// Keep the message log (off for long benchmark runs).
    pub record_transcript: bool,
    #[serde(skip)]
    pub solver: SolveOptions,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            algo: Algorithm::Admm,
            rho: 5.0,
            step0: 20.0,
            step_decay: 5.0,
            step_q_scale: 0.02,
            k_trunc: 4.0,
            max_iter: 2000,
            tol_primal: 1e-4,
            tol_obj: 1e-6,
            stable_rounds: 5,
            record_transcript: true,
            solver: SolveOptions::default(),
        }
    }
}

impl AlgoConfig {
    pub fn new(algo: Algorithm) -> Self {
        AlgoConfig {
            algo,
            ..AlgoConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), CoordinationError> {
        let bad = |m: &str| Err(CoordinationError::InvalidConfig(m.to_string()));
        match self.algo {
            Algorithm::Admm if !(self.rho > 0.0 && self.rho.is_finite()) => bad("rho must be positive"),
            Algorithm::DualAscent if !(self.step0 >= 0.0 && self.step0.is_finite()) => bad("step0 must be nonnegative"),
            Algorithm::DualAscent if !(self.step_decay > 0.0) => bad("step_decay must be positive"),
            Algorithm::DualAscent if !(self.step_q_scale >= 0.0 && self.step_q_scale.is_finite()) => {
                bad("step_q_scale must be nonnegative")
            }
            Algorithm::Pdgs if !(self.k_trunc > 0.0 && self.k_trunc.is_finite()) => bad("K must be positive"),
            _ if self.max_iter == 0 => bad("max_iter must be at least 1"),
            _ if !(self.tol_primal > 0.0 && self.tol_obj > 0.0) => bad("tolerances must be positive"),
            _ => Ok(()),
        }
    }

    fn step(&self, k: usize) -> f64 {
        self.step0 / (1.0 + k as f64 / self.step_decay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agent {
    Dso,
    Aggregator(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    PriceSignal(LocalBlock),
    BaseProfile(LocalBlock),
    ProfileReport(LocalBlock),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: usize,
    pub sender: Agent,
    pub receiver: Agent,
    pub kind: MessageKind,
}

impl Message {
    pub fn block(&self) -> &LocalBlock {
        match &self.kind {
            MessageKind::PriceSignal(b) | MessageKind::BaseProfile(b) | MessageKind::ProfileReport(b) => b,
        }
    }
}

/// True when every message touching aggregator `a` carries exactly the
/// buses of `a`.
pub fn check_information_locality(sc: &Scenario, transcript: &[Message]) -> bool {
    transcript.iter().all(|m| {
        let a = match (m.sender, m.receiver) {
            (Agent::Aggregator(a), Agent::Dso) | (Agent::Dso, Agent::Aggregator(a)) => a,
            _ => return false,
        };
        sc.aggregators.get(a).is_some_and(|agg| agg.nodes == m.block().buses)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub round: usize,
    pub lambda: DlmpSet,
    pub x: Profiles,
    pub primal_residual: f64,
    pub objective: f64,
    /// PDGS: whether the untruncated operator problem was feasible.
    pub dso_feasible: bool,
    pub dso_status: Status,
    pub la_seconds: Vec<f64>,
    pub dso_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationResult {
    pub config: AlgoConfig,
    pub logs: Vec<IterationLog>,
    pub lambda: DlmpSet,
    pub x: Profiles,
    pub x0: OpfVariables,
    pub converged: bool,
    pub stop: StopReason,
    pub objective: f64,
    pub primal_residual: f64,
    pub transcript: Vec<Message>,
}

impl CoordinationResult {
    pub fn iterations(&self) -> usize {
        self.logs.len()
    }

    /// Convergence curves as CSV.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("round,primal_residual,objective,dso_feasible,dso_seconds,la_seconds\n");
        for l in &self.logs {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{},{:.6},{:.6}\n",
                l.round,
                l.primal_residual,
                l.objective,
                l.dso_feasible,
                l.dso_seconds,
                l.la_seconds.iter().sum::<f64>()
            ));
        }
        out
    }

    /// Rounds where the untruncated operator problem was infeasible.
    pub fn infeasible_rounds(&self) -> Vec<usize> {
        self.logs.iter().filter(|l| !l.dso_feasible).map(|l| l.round).collect()
    }
}

/// Best response of one aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct LaResponse {
    pub aggregator: usize,
    pub profile: LocalBlock,
    /// `φ_a` at the response.
    pub cost: f64,
    pub seconds: f64,
}

/// Solves the aggregator's priced local problem, optionally with the ADMM
/// proximal term.
pub fn la_best_response(
    sc: &Scenario,
    a: usize,
    prices: &LocalBlock,
    prox: Option<&Proximal>,
    opts: &SolveOptions,
) -> Result<LaResponse, CoordinationError> {
    let start = Instant::now();
    let problem = build_la(sc, a, prices, prox)?;
    let sol = solve(sc, &problem, opts)?;
    if !sol.is_optimal() {
        return Err(CoordinationError::InfeasibleLa {
            aggregator: a,
            status: sol.status,
        });
    }
    let nodes = &sc.aggregators[a].nodes;
    let profile = LocalBlock::from_profiles(&sol.vars.profiles(), nodes);
    let mut full = Profiles::zeros(sc.num_buses(), sc.periods());
    profile.scatter_into(&mut full);
    Ok(LaResponse {
        aggregator: a,
        cost: sc.la_cost(a, &full),
        profile,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// `‖A₀x₀ + Bx − b‖₂` over all balance rows.
pub fn primal_residual(sc: &Scenario, x0: &OpfVariables, x: &Profiles) -> f64 {
    let (rp, rq) = balance_residuals(sc, x0, x);
    rp.iter().chain(&rq).flatten().map(|r| r * r).sum::<f64>().sqrt()
}

/// `Σ_a φ_a(x_a)`.
pub fn la_costs(sc: &Scenario, x: &Profiles) -> f64 {
    (0..sc.aggregators.len()).map(|a| sc.la_cost(a, x)).sum()
}

fn phi0(sc: &Scenario, x0: &OpfVariables) -> f64 {
    let mut acc = 0.0;
    for t in 0..sc.periods() {
        acc += sc.costs.injection(t, -x0.p0[t]);
        for n in sc.network.non_root() {
            acc += sc.costs.alpha_loss * sc.network.buses()[n].r * x0.ell[n][t];
        }
    }
    acc
}

/// Total cost `φ₀(x₀) + Σ φ_a(x_a)`.
pub fn total_cost(sc: &Scenario, x0: &OpfVariables, x: &Profiles) -> f64 {
    phi0(sc, x0) + la_costs(sc, x)
}

struct Loop<'a> {
    sc: &'a Scenario,
    cfg: &'a AlgoConfig,
    logs: Vec<IterationLog>,
    transcript: Vec<Message>,
    streak: usize,
}

impl<'a> Loop<'a> {
    fn new(sc: &'a Scenario, cfg: &'a AlgoConfig) -> Self {
        Loop {
            sc,
            cfg,
            logs: Vec::new(),
            transcript: Vec::new(),
            streak: 0,
        }
    }

    fn send(&mut self, round: usize, sender: Agent, receiver: Agent, kind: MessageKind) {
        if self.cfg.record_transcript {
            self.transcript.push(Message {
                round,
                sender,
                receiver,
                kind,
            });
        }
    }

    /// All aggregators respond in parallel; results keep aggregator order.
    fn responses(
        &mut self,
        round: usize,
        prices: &DlmpSet,
        base: Option<&Profiles>,
    ) -> Result<(Profiles, Vec<f64>), CoordinationError> {
        let sc = self.sc;
        let signals: Vec<(LocalBlock, Option<Proximal>)> = sc
            .aggregators
            .iter()
            .map(|agg| {
                let prox = base.map(|b| Proximal {
                    rho: self.cfg.rho,
                    base: LocalBlock::from_profiles(b, &agg.nodes),
                });
                (LocalBlock::from_prices(prices, &agg.nodes), prox)
            })
            .collect();
        for (a, (price, prox)) in signals.iter().enumerate() {
            self.send(
                round,
                Agent::Dso,
                Agent::Aggregator(a),
                MessageKind::PriceSignal(price.clone()),
            );
            if let Some(p) = prox {
                self.send(
                    round,
                    Agent::Dso,
                    Agent::Aggregator(a),
                    MessageKind::BaseProfile(p.base.clone()),
                );
            }
        }
        let opts = &self.cfg.solver;
        let results: Vec<Result<LaResponse, CoordinationError>> = signals
            .par_iter()
            .enumerate()
            .map(|(a, (price, prox))| la_best_response(sc, a, price, prox.as_ref(), opts))
            .collect();
        let mut x = Profiles::zeros(sc.num_buses(), sc.periods());
        let mut seconds = Vec::with_capacity(results.len());
        for r in results {
            let r = r?;
            r.profile.scatter_into(&mut x);
            seconds.push(r.seconds);
            self.send(
                round,
                Agent::Aggregator(r.aggregator),
                Agent::Dso,
                MessageKind::ProfileReport(r.profile),
            );
        }
        Ok((x, seconds))
    }

    /// Records a round; returns true when the stopping rule is met.
    fn record(&mut self, log: IterationLog) -> bool {
        let stable = match self.logs.last() {
            Some(prev) => (log.objective - prev.objective).abs() <= self.cfg.tol_obj,
            None => false,
        };
        if stable && log.primal_residual <= self.cfg.tol_primal {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.logs.push(log);
        self.streak >= self.cfg.stable_rounds
    }

    fn finish(self, lambda: DlmpSet, x: Profiles, x0: OpfVariables, converged: bool) -> CoordinationResult {
        let last = self.logs.last();
        CoordinationResult {
            config: self.cfg.clone(),
            objective: last.map_or(f64::NAN, |l| l.objective),
            primal_residual: last.map_or(f64::NAN, |l| l.primal_residual),
            logs: self.logs,
            lambda,
            x,
            x0,
            converged,
            stop: if converged {
                StopReason::Converged
            } else {
                StopReason::MaxIter
            },
            transcript: self.transcript,
        }
    }
}

fn add_scaled_residual(lambda: &mut DlmpSet, sc: &Scenario, x0: &OpfVariables, x: &Profiles, step: f64, q_scale: f64) {
    let (rp, rq) = balance_residuals(sc, x0, x);
    for n in sc.network.non_root() {
        for t in 0..sc.periods() {
            lambda.lp[n][t] += step * rp[n][t];
            lambda.lq[n][t] += q_scale * step * rq[n][t];
        }
    }
}

fn copy_root_prices(lambda: &mut DlmpSet, sol: &OpfSolution) {
    lambda.lp[ROOT].clone_from(&sol.dlmps.lp[ROOT]);
    lambda.lq[ROOT].clone_from(&sol.dlmps.lq[ROOT]);
}

/// Dispatches on `cfg.algo`.
pub fn run(sc: &Scenario, cfg: &AlgoConfig) -> Result<CoordinationResult, CoordinationError> {
    match cfg.algo {
        Algorithm::DualAscent => run_dual_ascent(sc, cfg),
        Algorithm::Admm => run_admm(sc, cfg),
        Algorithm::Pdgs => run_pdgs(sc, cfg),
    }
}

/// Price iteration `λ ← λ + α_k (A₀x₀ + Bx − b)` with both sides best
/// responding to the current prices. An unbounded operator step halves the
/// last price move and retries.
pub fn run_dual_ascent(sc: &Scenario, cfg: &AlgoConfig) -> Result<CoordinationResult, CoordinationError> {
    cfg.validate()?;
    let (nb, nt) = (sc.num_buses(), sc.periods());
    let mut lp = Loop::new(sc, cfg);
    let mut lambda = DlmpSet::zeros(nb, nt);
    let mut prev: Option<(DlmpSet, OpfVariables, Profiles, f64)> = None;
    let mut x = Profiles::zeros(nb, nt);
    let mut x0 = None;
    for k in 0..cfg.max_iter {
        let (xk, la_seconds) = lp.responses(k, &lambda, None)?;
        let start = Instant::now();
        let mut sol = solve(sc, &build_dso_coupled(sc, &xk, &lambda, 0.0)?, &cfg.solver)?;
        let mut halvings = 0;
        while sol.status == Status::Unbounded {
            let Some((base, px0, px, step)) = prev.as_mut() else {
                return Err(CoordinationError::DsoFailure {
                    round: k,
                    status: sol.status,
                });
            };
            halvings += 1;
            if halvings > 30 {
                return Err(CoordinationError::DsoFailure {
                    round: k,
                    status: sol.status,
                });
            }
            *step /= 2.0;
            lambda = base.clone();
            add_scaled_residual(&mut lambda, sc, px0, px, *step, cfg.step_q_scale);
            sol = solve(sc, &build_dso_coupled(sc, &xk, &lambda, 0.0)?, &cfg.solver)?;
        }
        if !sol.is_optimal() {
            return Err(CoordinationError::DsoFailure {
                round: k,
                status: sol.status,
            });
        }
        let dso_seconds = start.elapsed().as_secs_f64();
        copy_root_prices(&mut lambda, &sol);
        let residual = primal_residual(sc, &sol.vars, &xk);
        let objective = total_cost(sc, &sol.vars, &xk);
        if k >= 100 && k % 50 == 0 {
            // residuals oscillate, so compare window maxima
            let peak = |w: &[IterationLog]| w.iter().map(|l| l.primal_residual).fold(0.0, f64::max);
            let (older, recent) = (peak(&lp.logs[k - 100..k - 50]), peak(&lp.logs[k - 50..k]));
            if recent > cfg.tol_primal && recent > 10.0 * older {
                return Err(CoordinationError::Divergence { round: k });
            }
        }
        let done = lp.record(IterationLog {
            round: k,
            lambda: lambda.clone(),
            x: xk.clone(),
            primal_residual: residual,
            objective,
            dso_feasible: true,
            dso_status: sol.status,
            la_seconds,
            dso_seconds,
        });
        let step = cfg.step(k);
        prev = Some((lambda.clone(), sol.vars.clone(), xk.clone(), step));
        x = xk;
        x0 = Some(sol.vars);
        if done {
            let x0 = x0.expect("at least one round");
            return Ok(lp.finish(lambda, x, x0, true));
        }
        let (_, px0, px, _) = prev.as_ref().expect("just set");
        add_scaled_residual(&mut lambda, sc, px0, px, step, cfg.step_q_scale);
    }
    let x0 = x0.expect("at least one round");
    Ok(lp.finish(lambda, x, x0, false))
}

/// ADMM: aggregators minimize their augmented Lagrangian against the base
/// profile left by the previous operator step, then the operator solves
/// its augmented step, then prices move by `ρ` times the residual.
pub fn run_admm(sc: &Scenario, cfg: &AlgoConfig) -> Result<CoordinationResult, CoordinationError> {
    cfg.validate()?;
    let (nb, nt) = (sc.num_buses(), sc.periods());
    let mut lp = Loop::new(sc, cfg);
    let mut lambda = DlmpSet::zeros(nb, nt);
    let mut x0 = initial_network_point(sc);
    let mut x = Profiles::zeros(nb, nt);
    for k in 0..cfg.max_iter {
        let base = base_profile(sc, &x0);
        let (xk, la_seconds) = lp.responses(k, &lambda, Some(&base))?;
        let start = Instant::now();
        let sol = solve(sc, &build_dso_coupled(sc, &xk, &lambda, cfg.rho)?, &cfg.solver)?;
        if !sol.is_optimal() {
            return Err(CoordinationError::DsoFailure {
                round: k,
                status: sol.status,
            });
        }
        let dso_seconds = start.elapsed().as_secs_f64();
        add_scaled_residual(&mut lambda, sc, &sol.vars, &xk, cfg.rho, 1.0);
        copy_root_prices(&mut lambda, &sol);
        let residual = primal_residual(sc, &sol.vars, &xk);
        let objective = total_cost(sc, &sol.vars, &xk);
        let done = lp.record(IterationLog {
            round: k,
            lambda: lambda.clone(),
            x: xk.clone(),
            primal_residual: residual,
            objective,
            dso_feasible: true,
            dso_status: sol.status,
            la_seconds,
            dso_seconds,
        });
        x = xk;
        x0 = sol.vars;
        if done {
            return Ok(lp.finish(lambda, x, x0, true));
        }
    }
    Ok(lp.finish(lambda, x, x0, false))
}

/// PDGS: aggregators respond to averaged prices, profiles are averaged, the
/// operator prices the averaged profile (truncated problem when the plain
/// one fails), and prices are averaged.
pub fn run_pdgs(sc: &Scenario, cfg: &AlgoConfig) -> Result<CoordinationResult, CoordinationError> {
    cfg.validate()?;
    let (nb, nt) = (sc.num_buses(), sc.periods());
    let mut lp = Loop::new(sc, cfg);
    let mut lambda_avg = DlmpSet::zeros(nb, nt);
    let mut x_avg = Profiles::zeros(nb, nt);
    let mut x0 = initial_network_point(sc);
    for k in 0..cfg.max_iter {
        let (xk, la_seconds) = lp.responses(k, &lambda_avg, None)?;
        let w = k as f64 / (k as f64 + 1.0);
        blend_profiles(&mut x_avg, &xk, w);
        let start = Instant::now();
        let mut sol = solve(sc, &build_dso(sc, &x_avg)?, &cfg.solver)?;
        let feasible = sol.is_optimal();
        if !feasible {
            sol = solve(sc, &build_dso_truncated(sc, &x_avg, cfg.k_trunc)?, &cfg.solver)?;
            if !sol.is_optimal() {
                return Err(CoordinationError::DsoFailure {
                    round: k,
                    status: sol.status,
                });
            }
        }
        let dso_seconds = start.elapsed().as_secs_f64();
        blend_prices(&mut lambda_avg, &sol.dlmps, w);
        let residual = primal_residual(sc, &sol.vars, &x_avg);
        let objective = total_cost(sc, &sol.vars, &x_avg);
        let done = lp.record(IterationLog {
            round: k,
            lambda: lambda_avg.clone(),
            x: x_avg.clone(),
            primal_residual: residual,
            objective,
            dso_feasible: feasible,
            dso_status: sol.status,
            la_seconds,
            dso_seconds,
        });
        x0 = sol.vars;
        if done {
            return Ok(lp.finish(lambda_avg, x_avg, x0, true));
        }
    }
    Ok(lp.finish(lambda_avg, x_avg, x0, false))
}

fn blend_profiles(avg: &mut Profiles, new: &Profiles, w: f64) {
    for (a, b) in avg.p.iter_mut().chain(avg.q.iter_mut()).zip(new.p.iter().chain(&new.q)) {
        for (u, v) in a.iter_mut().zip(b) {
            *u = w * *u + (1.0 - w) * v;
        }
    }
}

fn blend_prices(avg: &mut DlmpSet, new: &DlmpSet, w: f64) {
    for (a, b) in avg
        .lp
        .iter_mut()
        .chain(avg.lq.iter_mut())
        .zip(new.lp.iter().chain(&new.lq))
    {
        for (u, v) in a.iter_mut().zip(b) {
            *u = w * *u + (1.0 - w) * v;
        }
    }
}

/// Flat start: no flows, nominal voltages.
fn initial_network_point(sc: &Scenario) -> OpfVariables {
    let (nb, nt) = (sc.num_buses(), sc.periods());
    let zeros = Profiles::zeros(nb, nt);
    let mut x0 = OpfVariables {
        p0: vec![0.0; nt],
        q0: vec![0.0; nt],
        v: vec![vec![sc.network.v0(); nt]; nb],
        ell: zeros.p.clone(),
        f: zeros.p.clone(),
        g: zeros.p.clone(),
        pc: zeros.p.clone(),
        pg: zeros.p.clone(),
        qg: zeros.p.clone(),
        p: zeros.p.clone(),
        q: zeros.p,
    };
    x0.v[ROOT] = vec![sc.network.v0(); nt];
    x0
}

/// Net loads `−(A₀x₀ − b)` that would close every balance row given `x₀`.
pub fn base_profile(sc: &Scenario, x0: &OpfVariables) -> Profiles {
    let zero = Profiles::zeros(sc.num_buses(), sc.periods());
    let (rp, rq) = balance_residuals(sc, x0, &zero);
    let neg = |g: Vec<Vec<f64>>| g.into_iter().map(|r| r.into_iter().map(|v| -v).collect()).collect();
    let mut out = Profiles { p: neg(rp), q: neg(rq) };
    out.p[ROOT].iter_mut().for_each(|v| *v = 0.0);
    out.q[ROOT].iter_mut().for_each(|v| *v = 0.0);
    out
}

/// Saddle-point check of a decentralized outcome against the central
/// problem: coupling residual plus each party's optimality gap in its
/// priced subproblem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleReport {
    pub primal_residual: f64,
    /// `φ_a(x_a) + λ·x_a − min` per aggregator.
    pub la_gaps: Vec<f64>,
    /// `φ₀(x₀) + λ·(A₀x₀ − b) − min` for the operator.
    pub dso_gap: f64,
}

impl SaddleReport {
    pub fn max(&self) -> f64 {
        self.la_gaps
            .iter()
            .copied()
            .fold(self.primal_residual.max(self.dso_gap.abs()), |m, g| m.max(g.abs()))
    }
}

pub fn saddle_kkt(
    sc: &Scenario,
    lambda: &DlmpSet,
    x0: &OpfVariables,
    x: &Profiles,
    opts: &SolveOptions,
) -> Result<SaddleReport, CoordinationError> {
    let mut la_gaps = Vec::with_capacity(sc.aggregators.len());
    for (a, agg) in sc.aggregators.iter().enumerate() {
        let prices = LocalBlock::from_prices(lambda, &agg.nodes);
        let best = la_best_response(sc, a, &prices, None, opts)?;
        let mut best_full = Profiles::zeros(sc.num_buses(), sc.periods());
        best.profile.scatter_into(&mut best_full);
        let at = sc.la_cost(a, x) + lambda.value_of(x, &agg.nodes);
        let min = best.cost + lambda.value_of(&best_full, &agg.nodes);
        la_gaps.push(at - min);
    }
    let problem = build_dso_coupled(sc, x, lambda, 0.0)?;
    let sol = solve(sc, &problem, opts)?;
    if !sol.is_optimal() {
        return Err(CoordinationError::DsoFailure {
            round: 0,
            status: sol.status,
        });
    }
    let (rp, rq) = balance_residuals(sc, x0, x);
    let mut priced = phi0(sc, x0);
    for n in sc.network.non_root() {
        for t in 0..sc.periods() {
            priced += lambda.lp[n][t] * rp[n][t] + lambda.lq[n][t] * rq[n][t];
        }
    }
    Ok(SaddleReport {
        primal_residual: primal_residual(sc, x0, x),
        la_gaps,
        dso_gap: priced - sol.objective_value,
    })
}

/// Buses owned by aggregator `a`.
pub fn owned(sc: &Scenario, a: usize) -> &[BusId] {
    &sc.aggregators[a].nodes
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opf::solve_central;
    use crate::scenario::fixture_toy;

    #[test]
    fn residual_zero_at_central_optimum() {
        let sc = fixture_toy();
        let c = solve_central(&sc, &SolveOptions::default()).unwrap();
        assert!(primal_residual(&sc, &c.vars, &c.vars.profiles()) < 1e-7);
    }

    #[test]
    fn residual_of_flat_start_is_load_norm() {
        let sc = fixture_toy();
        let mut x = Profiles::zeros(2, 2);
        x.p[1] = vec![0.3, 0.4];
        let x0 = initial_network_point(&sc);
        // only bus 1's balance rows are off, plus its shunt term −B·v
        let b = sc.network.buses()[1].b;
        let expect = (0.3f64.powi(2) + 0.4f64.powi(2) + 2.0 * b * b).sqrt();
        assert!((primal_residual(&sc, &x0, &x) - expect).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut c = AlgoConfig::new(Algorithm::Admm);
        c.rho = 0.0;
        assert!(c.validate().is_err());
        let mut c = AlgoConfig::new(Algorithm::Pdgs);
        c.k_trunc = -1.0;
        assert!(c.validate().is_err());
        assert!(AlgoConfig::new(Algorithm::DualAscent).validate().is_ok());
    }

    #[test]
    fn steps_decay_harmonically() {
        let mut c = AlgoConfig::new(Algorithm::DualAscent);
        c.step0 = 1.0;
        c.step_decay = 1.0;
        assert_eq!(c.step(0), 1.0);
        assert!((c.step(3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn price_moves_consumption_to_cheap_period() {
        let sc = crate::scenario::fixture_15bus(7);
        let a = sc.owner(3).unwrap();
        let nodes = sc.aggregators[a].nodes.clone();
        let mut prices = LocalBlock::zeros(&nodes, 2);
        for row in &mut prices.active {
            *row = vec![5.0, 0.1];
        }
        let r = la_best_response(&sc, a, &prices, None, &SolveOptions::default()).unwrap();
        let k = nodes.iter().position(|&n| n == 3).unwrap();
        let load = sc.load_at(3).unwrap();
        let expect1 = (load.energy - load.pmin[0]).min(load.pmax[1]);
        assert!((r.profile.active[k][1] - expect1).abs() < 1e-5);
        assert!((r.profile.active[k][0] - (load.energy - expect1).max(load.pmin[0])).abs() < 1e-5);
    }
}
