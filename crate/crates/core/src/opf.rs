//! Branch-flow OPF programs and their duals.
//!
//! Builders produce a [`ConicProgram`] together with an [`OpfIndex`] mapping
//! every variable and constraint back to its `(bus, period)` meaning:
//!
//! * [`build_central`]: network and aggregator variables together,
//! * [`build_dso`]: network only, net loads fixed,
//! * [`build_dso_truncated`]: same with penalized balance slacks, so it is
//!   always feasible and its balance duals stay in `[−K, K]`,
//! * [`build_dso_coupled`]: network only with the balance rows priced (and
//!   optionally penalized quadratically) instead of enforced, which is the
//!   operator step of the decomposition methods,
//! * [`build_la`]: one aggregator's local problem under given prices.
//!
//! Balance rows are written with the net consumption on the left-hand side,
//! so their multipliers are the DLMPs: the marginal system cost of one more
//! unit consumed at that bus and period.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{kkt_residuals, ConicError, ConicProgram, ConicSolution, Expr, KktResiduals, SolveOptions, Status};
use crate::network::{BusId, ROOT};
use crate::scenario::{LaCost, Profiles, Scenario};

#[derive(Debug, Error)]
pub enum OpfError {
    #[error(transparent)]
    Conic(#[from] ConicError),
    #[error("index map has no entry for {0}")]
    MissingRow(String),
    #[error("local problem of aggregator {aggregator} is infeasible")]
    InfeasibleLa { aggregator: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

type Grid<T> = Vec<Vec<T>>;

fn grid<T: Clone>(buses: usize, periods: usize, v: T) -> Grid<T> {
    vec![vec![v; periods]; buses]
}

/// Active and reactive values per `(bus, period)`; used for prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlmpSet {
    pub lp: Grid<f64>,
    pub lq: Grid<f64>,
}

impl DlmpSet {
    pub fn zeros(buses: usize, periods: usize) -> Self {
        DlmpSet {
            lp: grid(buses, periods, 0.0),
            lq: grid(buses, periods, 0.0),
        }
    }

    pub fn max_abs_diff(&self, other: &DlmpSet) -> f64 {
        let mut m: f64 = 0.0;
        for n in 0..self.lp.len() {
            for t in 0..self.lp[n].len() {
                m = m
                    .max((self.lp[n][t] - other.lp[n][t]).abs())
                    .max((self.lq[n][t] - other.lq[n][t]).abs());
            }
        }
        m
    }

    /// `Σ λᵖp + λ^q q` over the given buses and all periods.
    pub fn value_of(&self, profiles: &Profiles, buses: &[BusId]) -> f64 {
        let mut acc = 0.0;
        for &n in buses {
            for t in 0..self.lp[n].len() {
                acc += self.lp[n][t] * profiles.p[n][t] + self.lq[n][t] * profiles.q[n][t];
            }
        }
        acc
    }
}

/// Values restricted to the buses of one aggregator, in the order of its
/// node list. Carries prices (price signals) as well as profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalBlock {
    pub buses: Vec<BusId>,
    pub active: Grid<f64>,
    pub reactive: Grid<f64>,
}

impl LocalBlock {
    pub fn zeros(buses: &[BusId], periods: usize) -> Self {
        LocalBlock {
            buses: buses.to_vec(),
            active: grid(buses.len(), periods, 0.0),
            reactive: grid(buses.len(), periods, 0.0),
        }
    }

    pub fn from_prices(d: &DlmpSet, buses: &[BusId]) -> Self {
        LocalBlock {
            buses: buses.to_vec(),
            active: buses.iter().map(|&n| d.lp[n].clone()).collect(),
            reactive: buses.iter().map(|&n| d.lq[n].clone()).collect(),
        }
    }

    pub fn from_profiles(x: &Profiles, buses: &[BusId]) -> Self {
        LocalBlock {
            buses: buses.to_vec(),
            active: buses.iter().map(|&n| x.p[n].clone()).collect(),
            reactive: buses.iter().map(|&n| x.q[n].clone()).collect(),
        }
    }

    /// Writes the block into full-size profiles.
    pub fn scatter_into(&self, x: &mut Profiles) {
        for (k, &n) in self.buses.iter().enumerate() {
            x.p[n].clone_from(&self.active[k]);
            x.q[n].clone_from(&self.reactive[k]);
        }
    }
}

/// Primal values of an OPF solve. Root rows of the line quantities are zero;
/// `v[0]` holds the fixed root voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfVariables {
    pub p0: Vec<f64>,
    pub q0: Vec<f64>,
    pub v: Grid<f64>,
    pub ell: Grid<f64>,
    pub f: Grid<f64>,
    pub g: Grid<f64>,
    pub pc: Grid<f64>,
    pub pg: Grid<f64>,
    pub qg: Grid<f64>,
    pub p: Grid<f64>,
    pub q: Grid<f64>,
}

impl OpfVariables {
    fn zeros(buses: usize, periods: usize) -> Self {
        OpfVariables {
            p0: vec![0.0; periods],
            q0: vec![0.0; periods],
            v: grid(buses, periods, 0.0),
            ell: grid(buses, periods, 0.0),
            f: grid(buses, periods, 0.0),
            g: grid(buses, periods, 0.0),
            pc: grid(buses, periods, 0.0),
            pg: grid(buses, periods, 0.0),
            qg: grid(buses, periods, 0.0),
            p: grid(buses, periods, 0.0),
            q: grid(buses, periods, 0.0),
        }
    }

    pub fn profiles(&self) -> Profiles {
        Profiles {
            p: self.p.clone(),
            q: self.q.clone(),
        }
    }
}

/// Multipliers of the network and local constraints, in the sign convention
/// of the scalar (squared) constraint forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSet {
    /// Voltage-drop equality.
    pub beta: Grid<f64>,
    /// `f² + g² ≤ vℓ`.
    pub gamma: Grid<f64>,
    /// `f² + g² ≤ S²`.
    pub eta_plus: Grid<f64>,
    /// `(f − Rℓ)² + (g − Xℓ)² ≤ S²`.
    pub eta_minus: Grid<f64>,
    pub sigma_lo: Grid<f64>,
    pub sigma_hi: Grid<f64>,
    /// Energy requirement, per bus (zero where no load is modeled).
    pub alpha: Vec<f64>,
    pub nu_lo: Grid<f64>,
    pub nu_hi: Grid<f64>,
}

impl DualSet {
    fn zeros(buses: usize, periods: usize) -> Self {
        DualSet {
            beta: grid(buses, periods, 0.0),
            gamma: grid(buses, periods, 0.0),
            eta_plus: grid(buses, periods, 0.0),
            eta_minus: grid(buses, periods, 0.0),
            sigma_lo: grid(buses, periods, 0.0),
            sigma_hi: grid(buses, periods, 0.0),
            alpha: vec![0.0; buses],
            nu_lo: grid(buses, periods, 0.0),
            nu_hi: grid(buses, periods, 0.0),
        }
    }
}

/// Variable ids of one DER unit.
#[derive(Debug, Clone, PartialEq)]
pub struct DerIndex {
    pub bus: BusId,
    pub pg: Vec<usize>,
    pub qg: Vec<usize>,
}

/// Where the net loads of the balance rows come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadSource {
    /// Aggregator variables inside the program.
    Variables,
    /// Fixed profiles moved to the right-hand side.
    Fixed(Profiles),
}

/// Maps program entities to their OPF meaning.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfIndex {
    pub buses: usize,
    pub periods: usize,
    pub p0: Vec<usize>,
    pub q0: Vec<usize>,
    pub v: Grid<Option<usize>>,
    pub f: Grid<Option<usize>>,
    pub g: Grid<Option<usize>>,
    pub ell: Grid<Option<usize>>,
    /// Equality ids of the active/reactive balance rows (root included).
    pub bal_p: Grid<Option<usize>>,
    pub bal_q: Grid<Option<usize>>,
    pub volt: Grid<Option<usize>>,
    pub cone_current: Grid<Option<usize>>,
    pub cone_cap_from: Grid<Option<usize>>,
    pub cone_cap_to: Grid<Option<usize>>,
    /// Net load variables `(p, q)` of aggregator buses when present.
    pub p: Grid<Option<usize>>,
    pub q: Grid<Option<usize>>,
    pub pc: Grid<Option<usize>>,
    pub energy_slack: Vec<Option<usize>>,
    pub ders: Vec<DerIndex>,
    /// Residual variables `r = A₀x₀ + Bx − b` of a coupled operator program.
    pub resid_p: Grid<Option<usize>>,
    pub resid_q: Grid<Option<usize>>,
    pub loads: LoadSource,
}

impl OpfIndex {
    fn new(sc: &Scenario, loads: LoadSource) -> Self {
        let (nb, nt) = (sc.num_buses(), sc.periods());
        OpfIndex {
            buses: nb,
            periods: nt,
            p0: Vec::new(),
            q0: Vec::new(),
            v: grid(nb, nt, None),
            f: grid(nb, nt, None),
            g: grid(nb, nt, None),
            ell: grid(nb, nt, None),
            bal_p: grid(nb, nt, None),
            bal_q: grid(nb, nt, None),
            volt: grid(nb, nt, None),
            cone_current: grid(nb, nt, None),
            cone_cap_from: grid(nb, nt, None),
            cone_cap_to: grid(nb, nt, None),
            p: grid(nb, nt, None),
            q: grid(nb, nt, None),
            pc: grid(nb, nt, None),
            energy_slack: vec![None; nb],
            ders: Vec::new(),
            resid_p: grid(nb, nt, None),
            resid_q: grid(nb, nt, None),
            loads,
        }
    }
}

/// A program with its index map.
#[derive(Debug, Clone, PartialEq)]
pub struct OpfProblem {
    pub program: ConicProgram,
    pub index: OpfIndex,
}

/// Solution of an [`OpfProblem`].
#[derive(Debug, Clone)]
pub struct OpfSolution {
    pub status: Status,
    pub vars: OpfVariables,
    pub dlmps: DlmpSet,
    pub duals: DualSet,
    /// Objective value of the solved program.
    pub objective_value: f64,
    /// Operator cost `φ₀` at the solution.
    pub phi0: f64,
    /// `c_t(−p₀,t)` per period.
    pub period_costs: Vec<f64>,
    pub kkt: KktResiduals,
    pub raw: ConicSolution,
}

impl OpfSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Network variables and constraints shared by all operator programs. Adds
/// `φ₀` to the objective and returns the network part of every balance row
/// (`A₀x₀` including constants) as affine expressions.
fn add_network(prog: &mut ConicProgram, sc: &Scenario, ix: &mut OpfIndex) -> (Grid<Expr>, Grid<Expr>) {
    let net = &sc.network;
    let (nb, nt) = (ix.buses, ix.periods);
    let v0 = net.v0();
    for t in 0..nt {
        let p0 = prog.add_var(f64::NEG_INFINITY, 0.0);
        let q0 = prog.add_free();
        ix.p0.push(p0);
        ix.q0.push(q0);
        // c_t(−p0) = −α p0 + β p0²
        prog.add_linear(p0, -sc.costs.alpha[t]);
        prog.add_quadratic(p0, sc.costs.beta[t]);
    }
    for n in net.non_root() {
        let bus = &net.buses()[n];
        // ℓ has no pressure on a line without impedance, so cap it by the
        // largest value any feasible flow can need
        let ell_cap = if bus.r == 0.0 && bus.x == 0.0 {
            bus.s * bus.s / bus.vmin
        } else {
            f64::INFINITY
        };
        for t in 0..nt {
            ix.v[n][t] = Some(prog.add_var(bus.vmin, bus.vmax));
            ix.f[n][t] = Some(prog.add_free());
            ix.g[n][t] = Some(prog.add_free());
            let ell = prog.add_var(0.0, ell_cap);
            ix.ell[n][t] = Some(ell);
            if sc.costs.alpha_loss > 0.0 {
                prog.add_linear(ell, sc.costs.alpha_loss * bus.r);
            }
        }
    }
    let var = |o: Option<usize>| o.expect("network variable allocated");
    let v_expr = |ix: &OpfIndex, n: BusId, t: usize| -> Expr {
        if n == ROOT {
            Expr::constant(v0)
        } else {
            Expr::var(var(ix.v[n][t]))
        }
    };

    for n in net.non_root() {
        let bus = &net.buses()[n];
        let anc = bus.ancestor.expect("non-root bus has an ancestor");
        for t in 0..nt {
            let (v, f, g, l) = (var(ix.v[n][t]), var(ix.f[n][t]), var(ix.g[n][t]), var(ix.ell[n][t]));
            let mut row = vec![(v, 1.0), (f, -2.0 * bus.r), (g, -2.0 * bus.x), (l, bus.z2())];
            let rhs = if anc == ROOT {
                v0
            } else {
                row.push((var(ix.v[anc][t]), -1.0));
                0.0
            };
            ix.volt[n][t] = Some(prog.add_eq(row, rhs));
            ix.cone_current[n][t] = Some(prog.add_rsoc(vec![Expr::var(f), Expr::var(g)], Expr::var(v), Expr::var(l)));
            ix.cone_cap_from[n][t] = Some(prog.add_soc(vec![Expr::var(f), Expr::var(g)], Expr::constant(bus.s)));
            ix.cone_cap_to[n][t] = Some(prog.add_soc(
                vec![Expr::var(f).plus(l, -bus.r), Expr::var(g).plus(l, -bus.x)],
                Expr::constant(bus.s),
            ));
        }
    }

    let mut rows_p = grid(nb, nt, Expr::default());
    let mut rows_q = grid(nb, nt, Expr::default());
    for n in 0..nb {
        let bus = &net.buses()[n];
        for t in 0..nt {
            let (mut ep, mut eq) = if n == ROOT {
                (Expr::var(ix.p0[t]), Expr::var(ix.q0[t]))
            } else {
                (Expr::var(var(ix.f[n][t])), Expr::var(var(ix.g[n][t])))
            };
            for &m in net.children(n).expect("valid bus") {
                let child = &net.buses()[m];
                let l = var(ix.ell[m][t]);
                ep = ep.plus(var(ix.f[m][t]), -1.0).plus(l, child.r);
                eq = eq.plus(var(ix.g[m][t]), -1.0).plus(l, child.x);
            }
            let v = v_expr(ix, n, t);
            if bus.g != 0.0 {
                ep = add_scaled(ep, &v, bus.g);
            }
            if bus.b != 0.0 {
                eq = add_scaled(eq, &v, -bus.b);
            }
            rows_p[n][t] = ep;
            rows_q[n][t] = eq;
        }
    }
    (rows_p, rows_q)
}

fn add_scaled(mut e: Expr, other: &Expr, s: f64) -> Expr {
    for &(i, c) in &other.terms {
        e.terms.push((i, s * c));
    }
    e.constant += s * other.constant;
    e
}

/// Local variables and constraints of the buses of aggregator `a`; adds
/// `φ_a` to the objective. Net loads become variables `p, q`.
fn add_la_block(prog: &mut ConicProgram, sc: &Scenario, a: usize, ix: &mut OpfIndex) {
    let nt = ix.periods;
    for &n in &sc.aggregators[a].nodes {
        let load = sc.load_at(n);
        let (qlo, qhi) = match load.and_then(|l| l.qmin.as_ref().zip(l.qmax.as_ref())) {
            Some((lo, hi)) => (lo.clone(), hi.clone()),
            None => (vec![f64::NEG_INFINITY; nt], vec![f64::INFINITY; nt]),
        };
        let mut rows_p: Vec<Vec<(usize, f64)>> = Vec::with_capacity(nt);
        let mut rows_q: Vec<Vec<(usize, f64)>> = Vec::with_capacity(nt);
        for t in 0..nt {
            let p = prog.add_free();
            let q = prog.add_var(qlo[t], qhi[t]);
            ix.p[n][t] = Some(p);
            ix.q[n][t] = Some(q);
            rows_p.push(vec![(p, 1.0)]);
            rows_q.push(vec![(q, 1.0)]);
        }
        if let Some(load) = load {
            let mut energy_row = Vec::with_capacity(nt + 1);
            for t in 0..nt {
                let pc = prog.add_var(load.pmin[t], load.pmax[t]);
                ix.pc[n][t] = Some(pc);
                rows_p[t].push((pc, -1.0));
                rows_q[t].push((pc, -load.tau));
                energy_row.push((pc, 1.0));
            }
            let e = prog.add_var(0.0, f64::INFINITY);
            energy_row.push((e, -1.0));
            prog.add_eq(energy_row, load.energy);
            ix.energy_slack[n] = Some(e);
        }
        for der in sc.ders_at(n) {
            let mut d = DerIndex {
                bus: n,
                pg: Vec::with_capacity(nt),
                qg: Vec::with_capacity(nt),
            };
            for t in 0..nt {
                let pg = prog.add_var(0.0, der.pavail[t]);
                let qg = if der.rho_min == der.rho_max {
                    // a fixed ratio needs no extra rows
                    let qg = prog.add_free();
                    prog.add_eq(vec![(qg, 1.0), (pg, -der.rho_min)], 0.0);
                    qg
                } else {
                    let qg = prog.add_free();
                    let lo = prog.add_var(0.0, f64::INFINITY);
                    let hi = prog.add_var(0.0, f64::INFINITY);
                    prog.add_eq(vec![(qg, 1.0), (pg, -der.rho_min), (lo, -1.0)], 0.0);
                    prog.add_eq(vec![(qg, -1.0), (pg, der.rho_max), (hi, -1.0)], 0.0);
                    qg
                };
                rows_p[t].push((pg, 1.0));
                rows_q[t].push((qg, 1.0));
                d.pg.push(pg);
                d.qg.push(qg);
            }
            ix.ders.push(d);
        }
        for t in 0..nt {
            prog.add_eq(std::mem::take(&mut rows_p[t]), 0.0);
            prog.add_eq(std::mem::take(&mut rows_q[t]), 0.0);
        }
    }
    if let LaCost::PreferredProfile { weight, targets } = &sc.costs.la_costs[a] {
        for target in targets {
            for (t, &goal) in target.p.iter().enumerate() {
                let p = ix.p[target.bus][t].expect("target bus belongs to the aggregator");
                prog.add_quadratic(p, *weight);
                prog.add_linear(p, -2.0 * weight * goal);
                prog.offset += weight * goal * goal;
            }
        }
    }
}

fn check_profiles(sc: &Scenario, x: &Profiles) -> Result<(), OpfError> {
    if x.buses() != sc.num_buses() || x.q.len() != sc.num_buses() {
        return Err(OpfError::Shape(format!(
            "profiles cover {} buses, network has {}",
            x.buses(),
            sc.num_buses()
        )));
    }
    if x.p.iter().chain(&x.q).any(|r| r.len() != sc.periods()) {
        return Err(OpfError::Shape(format!("profiles need {} periods", sc.periods())));
    }
    Ok(())
}

/// Centralized problem: minimize `φ₀ + Σ φ_a` over network and local
/// constraints.
pub fn build_central(sc: &Scenario) -> OpfProblem {
    let mut prog = ConicProgram::new();
    let mut ix = OpfIndex::new(sc, LoadSource::Variables);
    let (rows_p, rows_q) = add_network(&mut prog, sc, &mut ix);
    for a in 0..sc.aggregators.len() {
        add_la_block(&mut prog, sc, a, &mut ix);
    }
    for n in 0..ix.buses {
        for t in 0..ix.periods {
            let mut ep = rows_p[n][t].clone();
            let mut eq = rows_q[n][t].clone();
            if n != ROOT {
                ep = ep.plus(ix.p[n][t].expect("every bus is owned"), 1.0);
                eq = eq.plus(ix.q[n][t].expect("every bus is owned"), 1.0);
            }
            ix.bal_p[n][t] = Some(prog.add_eq(ep.terms, -ep.constant));
            ix.bal_q[n][t] = Some(prog.add_eq(eq.terms, -eq.constant));
        }
    }
    OpfProblem {
        program: prog,
        index: ix,
    }
}

/// Operator problem for fixed net loads.
pub fn build_dso(sc: &Scenario, x: &Profiles) -> Result<OpfProblem, OpfError> {
    build_dso_impl(sc, x, None)
}

/// Operator problem whose balance rows carry slacks `u⁺, u⁻ ≥ 0` penalized
/// by `K(u⁺ + u⁻)`.
pub fn build_dso_truncated(sc: &Scenario, x: &Profiles, k: f64) -> Result<OpfProblem, OpfError> {
    if !(k > 0.0) {
        return Err(OpfError::Shape(format!("truncation bound K = {k} must be positive")));
    }
    build_dso_impl(sc, x, Some(k))
}

fn build_dso_impl(sc: &Scenario, x: &Profiles, k: Option<f64>) -> Result<OpfProblem, OpfError> {
    check_profiles(sc, x)?;
    let mut prog = ConicProgram::new();
    let mut ix = OpfIndex::new(sc, LoadSource::Fixed(x.clone()));
    let (rows_p, rows_q) = add_network(&mut prog, sc, &mut ix);
    for n in 0..ix.buses {
        for t in 0..ix.periods {
            let (lp, lq) = if n == ROOT { (0.0, 0.0) } else { (x.p[n][t], x.q[n][t]) };
            for (e, load, slot) in [(&rows_p[n][t], lp, 0), (&rows_q[n][t], lq, 1)] {
                let mut row = e.terms.clone();
                if let Some(k) = k {
                    let up = prog.add_var(0.0, f64::INFINITY);
                    let um = prog.add_var(0.0, f64::INFINITY);
                    prog.set_linear(up, k);
                    prog.set_linear(um, k);
                    row.push((up, 1.0));
                    row.push((um, -1.0));
                }
                let id = prog.add_eq(row, -e.constant - load);
                if slot == 0 {
                    ix.bal_p[n][t] = Some(id);
                } else {
                    ix.bal_q[n][t] = Some(id);
                }
            }
        }
    }
    Ok(OpfProblem {
        program: prog,
        index: ix,
    })
}

/// Operator step of the decomposition methods:
/// `min φ₀ + λ·r + (ρ/2)‖r‖²` with `r = A₀x₀ + Bx − b` on the balance rows
/// of non-root buses. Root rows involve no aggregator and stay enforced; their
/// multipliers are the root prices. With `ρ = 0` this is the dual-ascent
/// subproblem (the `λ·(Bx − b)` part is a constant), with `ρ > 0` the ADMM
/// update.
pub fn build_dso_coupled(sc: &Scenario, x: &Profiles, prices: &DlmpSet, rho: f64) -> Result<OpfProblem, OpfError> {
    check_profiles(sc, x)?;
    let mut prog = ConicProgram::new();
    let mut ix = OpfIndex::new(sc, LoadSource::Fixed(x.clone()));
    let (rows_p, rows_q) = add_network(&mut prog, sc, &mut ix);
    for n in 0..ix.buses {
        for t in 0..ix.periods {
            let (lp, lq) = if n == ROOT { (0.0, 0.0) } else { (x.p[n][t], x.q[n][t]) };
            for (e, load, price, slot) in [
                (&rows_p[n][t], lp, prices.lp[n][t], 0),
                (&rows_q[n][t], lq, prices.lq[n][t], 1),
            ] {
                if n == ROOT {
                    let id = prog.add_eq(e.terms.clone(), -e.constant);
                    if slot == 0 {
                        ix.bal_p[n][t] = Some(id);
                    } else {
                        ix.bal_q[n][t] = Some(id);
                    }
                    continue;
                }
                let r = prog.add_free();
                prog.set_linear(r, price);
                if rho > 0.0 {
                    prog.add_quadratic(r, rho / 2.0);
                }
                let mut row = e.terms.clone();
                row.push((r, -1.0));
                let id = prog.add_eq(row, -e.constant - load);
                if slot == 0 {
                    ix.bal_p[n][t] = Some(id);
                    ix.resid_p[n][t] = Some(r);
                } else {
                    ix.bal_q[n][t] = Some(id);
                    ix.resid_q[n][t] = Some(r);
                }
            }
        }
    }
    Ok(OpfProblem {
        program: prog,
        index: ix,
    })
}

/// Proximal term `(ρ/2)‖(p, q) − base‖²` of the ADMM aggregator step.
#[derive(Debug, Clone, PartialEq)]
pub struct Proximal {
    pub rho: f64,
    pub base: LocalBlock,
}

/// Local problem of aggregator `a`:
/// `min φ_a + Σ λᵖp + λ^q q (+ proximal term)` over its local constraints.
pub fn build_la(sc: &Scenario, a: usize, prices: &LocalBlock, prox: Option<&Proximal>) -> Result<OpfProblem, OpfError> {
    let agg = sc
        .aggregators
        .get(a)
        .ok_or_else(|| OpfError::MissingRow(format!("aggregator {a}")))?;
    if prices.buses != agg.nodes {
        return Err(OpfError::Shape(format!(
            "price block buses {:?} differ from aggregator nodes {:?}",
            prices.buses, agg.nodes
        )));
    }
    let mut prog = ConicProgram::new();
    let mut ix = OpfIndex::new(sc, LoadSource::Variables);
    add_la_block(&mut prog, sc, a, &mut ix);
    for (k, &n) in agg.nodes.iter().enumerate() {
        for t in 0..ix.periods {
            let p = ix.p[n][t].expect("owned bus");
            let q = ix.q[n][t].expect("owned bus");
            if !prices.active[k][t].is_finite() || !prices.reactive[k][t].is_finite() {
                return Err(OpfError::Shape(format!("non-finite price at bus {n}, t={t}")));
            }
            prog.add_linear(p, prices.active[k][t]);
            prog.add_linear(q, prices.reactive[k][t]);
            if let Some(px) = prox {
                for (var, target) in [(p, px.base.active[k][t]), (q, px.base.reactive[k][t])] {
                    prog.add_quadratic(var, px.rho / 2.0);
                    prog.add_linear(var, -px.rho * target);
                    prog.offset += px.rho / 2.0 * target * target;
                }
            }
        }
    }
    Ok(OpfProblem {
        program: prog,
        index: ix,
    })
}

/// Solves and labels the solution. Non-optimal outcomes come back with their
/// status and zero-filled values.
pub fn solve(sc: &Scenario, problem: &OpfProblem, opts: &SolveOptions) -> Result<OpfSolution, OpfError> {
    let raw = problem.program.solve(opts)?;
    let (nb, nt) = (problem.index.buses, problem.index.periods);
    if !raw.is_optimal() {
        return Ok(OpfSolution {
            status: raw.status,
            vars: OpfVariables::zeros(nb, nt),
            dlmps: DlmpSet::zeros(nb, nt),
            duals: DualSet::zeros(nb, nt),
            objective_value: f64::NAN,
            phi0: f64::NAN,
            period_costs: vec![f64::NAN; nt],
            kkt: KktResiduals::default(),
            raw,
        });
    }
    let vars = extract_primal(sc, &problem.index, &raw.primal);
    let (dlmps, duals) = extract_dlmps(&problem.program, &raw, &problem.index)?;
    let period_costs: Vec<f64> = (0..nt).map(|t| sc.costs.injection(t, -vars.p0[t])).collect();
    let loss: f64 = (1..nb)
        .flat_map(|n| (0..nt).map(move |t| (n, t)))
        .map(|(n, t)| sc.network.buses()[n].r * vars.ell[n][t])
        .sum();
    let phi0 = period_costs.iter().sum::<f64>() + sc.costs.alpha_loss * loss;
    Ok(OpfSolution {
        status: raw.status,
        kkt: kkt_residuals(&problem.program, &raw),
        objective_value: raw.objective_value,
        vars,
        dlmps,
        duals,
        phi0,
        period_costs,
        raw,
    })
}

fn extract_primal(sc: &Scenario, ix: &OpfIndex, x: &[f64]) -> OpfVariables {
    let (nb, nt) = (ix.buses, ix.periods);
    let mut out = OpfVariables::zeros(nb, nt);
    let val = |o: Option<usize>| o.map_or(0.0, |i| x[i]);
    for t in 0..nt {
        out.p0[t] = ix.p0.get(t).map_or(0.0, |&i| x[i]);
        out.q0[t] = ix.q0.get(t).map_or(0.0, |&i| x[i]);
        out.v[ROOT][t] = sc.network.v0();
    }
    for n in 1..nb {
        for t in 0..nt {
            out.v[n][t] = val(ix.v[n][t]);
            out.f[n][t] = val(ix.f[n][t]);
            out.g[n][t] = val(ix.g[n][t]);
            out.ell[n][t] = val(ix.ell[n][t]);
            out.pc[n][t] = val(ix.pc[n][t]);
            match &ix.loads {
                LoadSource::Fixed(prof) => {
                    out.p[n][t] = prof.p[n][t];
                    out.q[n][t] = prof.q[n][t];
                }
                LoadSource::Variables => {
                    out.p[n][t] = val(ix.p[n][t]);
                    out.q[n][t] = val(ix.q[n][t]);
                }
            }
        }
    }
    for d in &ix.ders {
        for t in 0..nt {
            out.pg[d.bus][t] += x[d.pg[t]];
            out.qg[d.bus][t] += x[d.qg[t]];
        }
    }
    out
}

/// Reads DLMPs off the balance-row multipliers and labels the remaining
/// multipliers.
pub fn extract_dlmps(
    program: &ConicProgram,
    sol: &ConicSolution,
    ix: &OpfIndex,
) -> Result<(DlmpSet, DualSet), OpfError> {
    let (nb, nt) = (ix.buses, ix.periods);
    let mut d = DlmpSet::zeros(nb, nt);
    let mut duals = DualSet::zeros(nb, nt);
    let eq = |id: Option<usize>, what: &str, n: usize, t: usize| -> Result<f64, OpfError> {
        id.and_then(|i| sol.eq_duals.get(i).copied())
            .ok_or_else(|| OpfError::MissingRow(format!("{what} row of bus {n}, period {t}")))
    };
    let has_network = !ix.p0.is_empty();
    for n in 0..nb {
        for t in 0..nt {
            if has_network {
                d.lp[n][t] = eq(ix.bal_p[n][t], "active balance", n, t)?;
                d.lq[n][t] = eq(ix.bal_q[n][t], "reactive balance", n, t)?;
            }
            if n == ROOT {
                continue;
            }
            if has_network {
                duals.beta[n][t] = eq(ix.volt[n][t], "voltage drop", n, t)?;
                let cone = |c: Option<usize>, what: &str| -> Result<f64, OpfError> {
                    c.map(|k| sol.squared_multiplier(program, k))
                        .ok_or_else(|| OpfError::MissingRow(format!("{what} cone of bus {n}, period {t}")))
                };
                duals.gamma[n][t] = cone(ix.cone_current[n][t], "current")?;
                duals.eta_plus[n][t] = cone(ix.cone_cap_from[n][t], "capacity")?;
                duals.eta_minus[n][t] = cone(ix.cone_cap_to[n][t], "capacity")?;
                if let Some(v) = ix.v[n][t] {
                    duals.sigma_lo[n][t] = sol.bound_duals[v].0;
                    duals.sigma_hi[n][t] = sol.bound_duals[v].1;
                }
            }
            if let Some(pc) = ix.pc[n][t] {
                duals.nu_lo[n][t] = sol.bound_duals[pc].0;
                duals.nu_hi[n][t] = sol.bound_duals[pc].1;
            }
        }
        if let Some(e) = ix.energy_slack[n] {
            duals.alpha[n] = sol.bound_duals[e].0;
        }
    }
    Ok((d, duals))
}

/// Central problem, built and solved.
pub fn solve_central(sc: &Scenario, opts: &SolveOptions) -> Result<OpfSolution, OpfError> {
    solve(sc, &build_central(sc), opts)
}

/// Operator problem for fixed loads, built and solved.
pub fn solve_dso(sc: &Scenario, x: &Profiles, opts: &SolveOptions) -> Result<OpfSolution, OpfError> {
    solve(sc, &build_dso(sc, x)?, opts)
}

/// Residuals `A₀x₀ + Bx − b` of the active and reactive balance rows.
pub fn balance_residuals(sc: &Scenario, x0: &OpfVariables, x: &Profiles) -> (Grid<f64>, Grid<f64>) {
    let net = &sc.network;
    let (nb, nt) = (sc.num_buses(), sc.periods());
    let mut rp = grid(nb, nt, 0.0);
    let mut rq = grid(nb, nt, 0.0);
    for n in 0..nb {
        let bus = &net.buses()[n];
        for t in 0..nt {
            let v = if n == ROOT { net.v0() } else { x0.v[n][t] };
            let (mut a, mut b) = if n == ROOT {
                (x0.p0[t], x0.q0[t])
            } else {
                (x0.f[n][t] + x.p[n][t], x0.g[n][t] + x.q[n][t])
            };
            for &m in net.children(n).expect("valid bus") {
                let c = &net.buses()[m];
                a -= x0.f[m][t] - c.r * x0.ell[m][t];
                b -= x0.g[m][t] - c.x * x0.ell[m][t];
            }
            rp[n][t] = a + bus.g * v;
            rq[n][t] = b - bus.b * v;
        }
    }
    (rp, rq)
}

/// Cone gaps `vℓ − (f² + g²)` at a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    pub max_gap: f64,
    pub gaps: Grid<f64>,
    /// `(bus, period)` pairs whose gap exceeds the tolerance.
    pub non_tight: Vec<(BusId, usize)>,
    pub is_exact: bool,
}

pub fn check_exactness(vars: &OpfVariables, tol: f64) -> ExactnessReport {
    let nb = vars.v.len();
    let nt = vars.p0.len();
    let mut gaps = grid(nb, nt, 0.0);
    let mut non_tight = Vec::new();
    let mut max_gap: f64 = 0.0;
    for n in 1..nb {
        for t in 0..nt {
            let gap = vars.v[n][t] * vars.ell[n][t] - (vars.f[n][t].powi(2) + vars.g[n][t].powi(2));
            gaps[n][t] = gap;
            max_gap = max_gap.max(gap.abs());
            if gap.abs() > tol {
                non_tight.push((n, t));
            }
        }
    }
    ExactnessReport {
        max_gap,
        gaps,
        is_exact: non_tight.is_empty(),
        non_tight,
    }
}

/// Residuals of the ancestor identities linking the DLMPs of a bus to those
/// of its ancestor through the line multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AncestorReport {
    pub residual_p: Grid<f64>,
    pub residual_q: Grid<f64>,
    pub max_residual: f64,
}

pub fn check_dlmp_ancestor_identity(sc: &Scenario, sol: &OpfSolution) -> AncestorReport {
    let (nb, nt) = (sc.num_buses(), sc.periods());
    let (x, d, u) = (&sol.vars, &sol.dlmps, &sol.duals);
    let mut residual_p = grid(nb, nt, 0.0);
    let mut residual_q = grid(nb, nt, 0.0);
    let mut max_residual: f64 = 0.0;
    for n in sc.network.non_root() {
        let bus = &sc.network.buses()[n];
        let anc = bus.ancestor.expect("non-root");
        for t in 0..nt {
            let (f, g, l) = (x.f[n][t], x.g[n][t], x.ell[n][t]);
            let (gm, ep, em, be) = (u.gamma[n][t], u.eta_plus[n][t], u.eta_minus[n][t], u.beta[n][t]);
            let rhs_p = d.lp[anc][t] - 2.0 * f * gm - 2.0 * f * ep - 2.0 * (f - bus.r * l) * em + 2.0 * be * bus.r;
            let rhs_q = d.lq[anc][t] - 2.0 * g * gm - 2.0 * g * ep - 2.0 * (g - bus.x * l) * em + 2.0 * be * bus.x;
            residual_p[n][t] = d.lp[n][t] - rhs_p;
            residual_q[n][t] = d.lq[n][t] - rhs_q;
            max_residual = max_residual.max(residual_p[n][t].abs()).max(residual_q[n][t].abs());
        }
    }
    AncestorReport {
        residual_p,
        residual_q,
        max_residual,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Active,
    Reactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgradientVerdict {
    /// Smooth coordinate, central difference within tolerance.
    Ok,
    /// Smooth coordinate, central difference off.
    Mismatch,
    /// One-sided slopes differ; the multiplier lies between them.
    KinkBracketed,
    /// One-sided slopes differ and the multiplier lies outside.
    KinkViolated,
    /// A perturbed problem was not solved to optimality.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgradientEntry {
    pub bus: BusId,
    pub period: usize,
    pub component: Component,
    pub lambda: f64,
    pub forward: f64,
    pub backward: f64,
    pub central: f64,
    /// `|central − λ| / max(1, |λ|)`.
    pub rel_error: f64,
    pub verdict: SubgradientVerdict,
}

/// Finite-difference check of the DLMPs against the operator's optimal
/// value `F(x)`, perturbing one net-load coordinate at a time.
pub fn check_subgradient(
    sc: &Scenario,
    x: &Profiles,
    dlmps: &DlmpSet,
    eps: f64,
    opts: &SolveOptions,
) -> Result<Vec<SubgradientEntry>, OpfError> {
    let value = |x: &Profiles| -> Result<Option<f64>, OpfError> {
        let s = solve_dso(sc, x, opts)?;
        Ok(s.is_optimal().then_some(s.objective_value))
    };
    let base = value(x)?;
    let mut out = Vec::new();
    for n in sc.network.non_root() {
        for t in 0..sc.periods() {
            for component in [Component::Active, Component::Reactive] {
                let lambda = match component {
                    Component::Active => dlmps.lp[n][t],
                    Component::Reactive => dlmps.lq[n][t],
                };
                let shifted = |delta: f64| {
                    let mut y = x.clone();
                    match component {
                        Component::Active => y.p[n][t] += delta,
                        Component::Reactive => y.q[n][t] += delta,
                    }
                    y
                };
                let up = value(&shifted(eps))?;
                let down = value(&shifted(-eps))?;
                let mut entry = SubgradientEntry {
                    bus: n,
                    period: t,
                    component,
                    lambda,
                    forward: f64::NAN,
                    backward: f64::NAN,
                    central: f64::NAN,
                    rel_error: f64::NAN,
                    verdict: SubgradientVerdict::Skipped,
                };
                if let (Some(b), Some(u), Some(d)) = (base, up, down) {
                    entry.forward = (u - b) / eps;
                    entry.backward = (b - d) / eps;
                    entry.central = (u - d) / (2.0 * eps);
                    let scale = lambda.abs().max(1.0);
                    entry.rel_error = (entry.central - lambda).abs() / scale;
                    let kink = (entry.forward - entry.backward).abs() > 2e-2 * scale;
                    entry.verdict = if kink {
                        let lo = entry.forward.min(entry.backward) - 1e-2 * scale;
                        let hi = entry.forward.max(entry.backward) + 1e-2 * scale;
                        if (lo..=hi).contains(&lambda) {
                            SubgradientVerdict::KinkBracketed
                        } else {
                            SubgradientVerdict::KinkViolated
                        }
                    } else if entry.rel_error <= 1e-2 {
                        SubgradientVerdict::Ok
                    } else {
                        SubgradientVerdict::Mismatch
                    };
                }
                out.push(entry);
            }
        }
    }
    Ok(out)
}

/// Evaluation of the two sets of sufficient exactness conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// The objective depends on `ℓ` with positive weight on every line.
    pub strictly_increasing_in_loss: bool,
    /// Always true for this model: flows never enter the objective.
    pub independent_of_flows: bool,
    /// Local costs do not increase with consumption and consumption has no
    /// finite upper bounds.
    pub consumption_branch: bool,
    /// Local costs do not decrease with generation and, at the given
    /// solution, no generation lower bound binds.
    pub generation_branch: Option<bool>,
    /// Loss-cost condition together with one of the two branch conditions.
    pub objective_conditions_hold: bool,

    pub strictly_increasing_in_injection: bool,
    pub no_shunts: bool,
    /// Linearized flows `f̂, ĝ` per `(bus, period)` at the given solution.
    pub f_hat: Option<Grid<f64>>,
    pub g_hat: Option<Grid<f64>>,
    /// Linearized voltages `v̂` at the given solution.
    pub v_hat: Option<Grid<f64>>,
    pub v_hat_below_vmax: Option<bool>,
    /// `(R_n, X_n)` per bus.
    pub u: Vec<[f64; 2]>,
    /// Matrices `A̲_{n,t}` per `(bus, period)` built from the load lower
    /// bounds.
    pub a_lower: Grid<[[f64; 2]; 2]>,
    /// First failing `(path, s, k, t)` of the product condition, if any.
    pub path_violation: Option<(Vec<BusId>, usize, usize, usize)>,
    pub path_products_positive: bool,
    /// Injection, shunt, voltage and path-product conditions together.
    pub linearization_conditions_hold: Option<bool>,

    pub conditions_met: bool,
    /// Exactness observed at the given solution, independent of the above.
    pub exact_a_posteriori: Option<bool>,
}

/// Evaluates both theorems' hypotheses; bullets needing an optimal point use
/// `sol` when given.
pub fn check_sufficient_conditions(sc: &Scenario, sol: Option<&OpfSolution>) -> ConditionReport {
    let net = &sc.network;
    let (nb, nt) = (sc.num_buses(), sc.periods());
    let costs_zero = sc.costs.la_costs.iter().all(|c| *c == LaCost::Zero);

    let strictly_increasing_in_loss = sc.costs.alpha_loss > 0.0 && net.non_root().all(|n| net.buses()[n].r > 0.0);
    let consumption_branch = costs_zero && sc.loads.iter().all(|l| l.pmax.iter().all(|p| p.is_infinite()));
    let generation_branch = sol.map(|s| {
        costs_zero
            && sc.ders.iter().all(|d| {
                (0..nt).all(|t| {
                    let pg = s.vars.pg[d.bus][t];
                    pg > 1e-6 && s.vars.qg[d.bus][t] - d.rho_min * pg > 1e-6
                })
            })
    });
    let objective_conditions_hold =
        strictly_increasing_in_loss && (consumption_branch || generation_branch == Some(true));

    let strictly_increasing_in_injection = sc.costs.alpha.iter().all(|&a| a > 0.0);
    let no_shunts = net.buses().iter().all(|b| b.b == 0.0 && b.g == 0.0);
    let subtree_sum = |vals: &dyn Fn(BusId) -> f64, n: BusId| -> f64 {
        net.subtree(n).expect("valid bus").into_iter().map(vals).sum()
    };
    let linearized = |p: &dyn Fn(BusId, usize) -> f64, q: &dyn Fn(BusId, usize) -> f64| {
        let mut fh = grid(nb, nt, 0.0);
        let mut gh = grid(nb, nt, 0.0);
        for n in net.non_root() {
            for t in 0..nt {
                fh[n][t] = -subtree_sum(&|m| p(m, t), n);
                gh[n][t] = -subtree_sum(&|m| q(m, t), n);
            }
        }
        (fh, gh)
    };

    let (f_hat, g_hat, v_hat, v_hat_below_vmax) = match sol {
        Some(s) => {
            let (fh, gh) = linearized(&|m, t| s.vars.p[m][t], &|m, t| s.vars.q[m][t]);
            let mut vh = grid(nb, nt, net.v0());
            let mut below = true;
            for n in net.non_root() {
                for t in 0..nt {
                    let path = net.path_to_root(n).expect("valid bus");
                    let mut v = net.v0();
                    for &m in path.iter().filter(|&&m| m != ROOT) {
                        let b = &net.buses()[m];
                        v += 2.0 * (b.r * fh[m][t] + b.x * gh[m][t]);
                    }
                    vh[n][t] = v;
                    below &= v < net.buses()[n].vmax;
                }
            }
            (Some(fh), Some(gh), Some(vh), Some(below))
        }
        None => (None, None, None, None),
    };

    // lower bounds of the net loads
    let p_lower = |m: BusId, t: usize| -> f64 {
        let pc = sc.load_at(m).map_or(0.0, |l| l.pmin[t]);
        pc - sc.ders_at(m).map(|d| d.pavail[t]).sum::<f64>()
    };
    let q_lower = |m: BusId, t: usize| -> f64 {
        let from_ratio = sc.load_at(m).map_or(0.0, |l| {
            let (a, b) = (l.tau * l.pmin[t], l.tau * l.pmax[t]);
            a.min(b)
        }) - sc.ders_at(m).map(|d| (d.rho_max * d.pavail[t]).max(0.0)).sum::<f64>();
        match sc.load_at(m).and_then(|l| l.qmin.as_ref()) {
            Some(qmin) => from_ratio.max(qmin[t]),
            None => from_ratio,
        }
    };
    let (fl, gl) = linearized(&p_lower, &q_lower);
    let u: Vec<[f64; 2]> = net.buses().iter().map(|b| [b.r, b.x]).collect();
    let mut a_lower = grid(nb, nt, [[1.0, 0.0], [0.0, 1.0]]);
    for n in net.non_root() {
        let b = &net.buses()[n];
        for t in 0..nt {
            let (fp, gp) = (fl[n][t].max(0.0), gl[n][t].max(0.0));
            let c = 2.0 / b.vmin;
            a_lower[n][t] = [[1.0 - c * b.r * fp, -c * b.r * gp], [-c * b.x * fp, 1.0 - c * b.x * gp]];
        }
    }
    let mut path_violation = None;
    'outer: for leaf in net.leaves() {
        // buses from the root side down to the leaf
        let mut path = net.path_to_root(leaf).expect("valid bus");
        path.pop();
        path.reverse();
        for t in 0..nt {
            for k in 0..path.len() {
                let mut w = u[path[k]];
                for s in (0..=k).rev() {
                    if s < k {
                        let a = a_lower[path[s]][t];
                        w = [a[0][0] * w[0] + a[0][1] * w[1], a[1][0] * w[0] + a[1][1] * w[1]];
                    }
                    if !(w[0] > 0.0 && w[1] > 0.0) {
                        path_violation = Some((path.clone(), s + 1, k + 1, t));
                        break 'outer;
                    }
                }
            }
        }
    }
    let path_products_positive = path_violation.is_none();
    let linearization_conditions_hold =
        v_hat_below_vmax.map(|below| below && strictly_increasing_in_injection && no_shunts && path_products_positive);
    let conditions_met = objective_conditions_hold || linearization_conditions_hold == Some(true);
    ConditionReport {
        strictly_increasing_in_loss,
        independent_of_flows: true,
        consumption_branch,
        generation_branch,
        objective_conditions_hold,
        strictly_increasing_in_injection,
        no_shunts,
        f_hat,
        g_hat,
        v_hat,
        v_hat_below_vmax,
        u,
        a_lower,
        path_violation,
        path_products_positive,
        linearization_conditions_hold,
        conditions_met,
        exact_a_posteriori: sol.map(|s| check_exactness(&s.vars, 1e-6).is_exact),
    }
}
