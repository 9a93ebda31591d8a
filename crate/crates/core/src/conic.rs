//! Backend-neutral second-order cone programs.
//!
//! A [`ConicProgram`] is built incrementally: scalar variables with box
//! bounds, linear equalities, second-order cones `‖u‖₂ ≤ w` and rotated cones
//! `Σuᵢ² ≤ w₁·w₂` over affine expressions, and an objective with linear and
//! diagonal convex quadratic terms.
//!
//! # Dual sign convention
//!
//! Every constraint contributes a term to the Lagrangian
//! `L = f(x) + Σ λᵢ(aᵢ·x − bᵢ) + Σ σ̲ⱼ(lⱼ − xⱼ) + Σ σ̄ⱼ(xⱼ − uⱼ) − Σ zₖ·sₖ(x)`
//! where `sₖ(x)` is the vector an SOC constraint places in the cone. Hence an
//! equality multiplier is `λ = −∂f*/∂b`: moving a load from the right-hand
//! side into the left-hand side of a balance row makes `λ` the marginal cost
//! of that load.
//!
//! ```
//! use dlmp::conic::{ConicProgram, Expr, SolveOptions};
//!
//! // min t  s.t.  ‖(3, 4)‖ ≤ t
//! let mut prog = ConicProgram::new();
//! let t = prog.add_var(f64::NEG_INFINITY, f64::INFINITY);
//! prog.add_soc(vec![Expr::constant(3.0), Expr::constant(4.0)], Expr::var(t));
//! prog.set_linear(t, 1.0);
//! let sol = prog.solve(&SolveOptions::default()).unwrap();
//! assert!((sol.primal[t] - 5.0).abs() < 1e-6);
//! ```

use std::fmt::Write as _;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance passed to the backend.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Residual level under which an "almost solved" backend answer is accepted.
pub const ACCEPT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConicError {
    #[error("variable index {index} out of range ({num_vars} variables)")]
    IndexOutOfRange { index: usize, num_vars: usize },
    #[error("quadratic coefficient {coeff} on variable {index} is negative")]
    NegativeQuadratic { index: usize, coeff: f64 },
    #[error("invalid bounds [{lo}, {hi}] on variable {index}")]
    InvalidBounds { index: usize, lo: f64, hi: f64 },
    #[error("backend rejected the program: {0}")]
    Backend(String),
}

/// Affine expression `Σ cᵢ xᵢ + c₀`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Expr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl Expr {
    pub fn var(i: usize) -> Self {
        Expr {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Expr {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn term(i: usize, c: f64) -> Self {
        Expr {
            terms: vec![(i, c)],
            constant: 0.0,
        }
    }

    /// Adds `c·xᵢ`.
    pub fn plus(mut self, i: usize, c: f64) -> Self {
        if c != 0.0 {
            self.terms.push((i, c));
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Equality {
    pub row: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `‖norm‖₂ ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct Soc {
    pub norm: Vec<Expr>,
    pub bound: Expr,
}

/// `Σ normᵢ² ≤ w1·w2`, `w1, w2 ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Rsoc {
    pub norm: Vec<Expr>,
    pub w1: Expr,
    pub w2: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cone {
    Soc(Soc),
    Rsoc(Rsoc),
}

impl Cone {
    /// The vector placed in the standard second-order cone, first entry being
    /// the bound. Rotated cones use `(w1 + w2, 2u, w1 − w2)`.
    pub fn standard_form(&self) -> Vec<Expr> {
        match self {
            Cone::Soc(c) => std::iter::once(c.bound.clone()).chain(c.norm.iter().cloned()).collect(),
            Cone::Rsoc(c) => {
                let mut out = Vec::with_capacity(c.norm.len() + 2);
                out.push(add(&c.w1, &c.w2, 1.0));
                for u in &c.norm {
                    out.push(scale(u, 2.0));
                }
                out.push(add(&c.w1, &c.w2, -1.0));
                out
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Cone::Soc(c) => c.norm.len() + 1,
            Cone::Rsoc(c) => c.norm.len() + 2,
        }
    }

    fn exprs(&self) -> Box<dyn Iterator<Item = &Expr> + '_> {
        match self {
            Cone::Soc(c) => Box::new(c.norm.iter().chain(std::iter::once(&c.bound))),
            Cone::Rsoc(c) => Box::new(c.norm.iter().chain([&c.w1, &c.w2])),
        }
    }
}

fn add(a: &Expr, b: &Expr, sign: f64) -> Expr {
    let mut terms = a.terms.clone();
    terms.extend(b.terms.iter().map(|&(i, c)| (i, sign * c)));
    Expr {
        terms,
        constant: a.constant + sign * b.constant,
    }
}

fn scale(a: &Expr, s: f64) -> Expr {
    Expr {
        terms: a.terms.iter().map(|&(i, c)| (i, s * c)).collect(),
        constant: s * a.constant,
    }
}

/// Capabilities of a solver backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Backend {
    /// Whether quadratic objective terms can be passed through directly.
    pub quadratic_objective: bool,
}

impl Backend {
    pub const CLARABEL: Backend = Backend {
        quadratic_objective: true,
    };
    /// Same solver restricted to linear objectives, which forces the
    /// epigraph lowering of quadratic terms.
    pub const LINEAR_ONLY: Backend = Backend {
        quadratic_objective: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: u32,
    pub backend: Backend,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iter: 200,
            backend: Backend::CLARABEL,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        SolveOptions {
            tol,
            ..Default::default()
        }
    }
}

/// A second-order cone program.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConicProgram {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub linear: Vec<f64>,
    /// Diagonal coefficients `qᵢ` of the objective term `Σ qᵢ xᵢ²`.
    pub quadratic: Vec<f64>,
    pub offset: f64,
    pub equalities: Vec<Equality>,
    pub cones: Vec<Cone>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.lower.len()
    }

    /// Adds a variable with box `[lo, hi]` (infinite values allowed).
    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        self.lower.push(lo);
        self.upper.push(hi);
        self.linear.push(0.0);
        self.quadratic.push(0.0);
        self.lower.len() - 1
    }

    pub fn add_free(&mut self) -> usize {
        self.add_var(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn set_bounds(&mut self, i: usize, lo: f64, hi: f64) {
        self.lower[i] = lo;
        self.upper[i] = hi;
    }

    /// Adds `row·x = rhs` and returns its id.
    pub fn add_eq(&mut self, row: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.equalities.push(Equality { row, rhs });
        self.equalities.len() - 1
    }

    /// Adds `‖norm‖₂ ≤ bound` and returns its cone id.
    pub fn add_soc(&mut self, norm: Vec<Expr>, bound: Expr) -> usize {
        self.cones.push(Cone::Soc(Soc { norm, bound }));
        self.cones.len() - 1
    }

    /// Adds `Σ normᵢ² ≤ w1·w2` and returns its cone id.
    pub fn add_rsoc(&mut self, norm: Vec<Expr>, w1: Expr, w2: Expr) -> usize {
        self.cones.push(Cone::Rsoc(Rsoc { norm, w1, w2 }));
        self.cones.len() - 1
    }

    pub fn set_linear(&mut self, i: usize, c: f64) {
        self.linear[i] = c;
    }

    pub fn add_linear(&mut self, i: usize, c: f64) {
        self.linear[i] += c;
    }

    /// Adds `q·xᵢ²` to the objective.
    pub fn add_quadratic(&mut self, i: usize, q: f64) {
        self.quadratic[i] += q;
    }

    pub fn objective_at(&self, x: &[f64]) -> f64 {
        self.offset
            + x.iter()
                .enumerate()
                .map(|(i, &v)| self.linear[i] * v + self.quadratic[i] * v * v)
                .sum::<f64>()
    }

    /// Checks indices, bounds and quadratic signs.
    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.num_vars();
        let check = |index: usize| {
            if index < n {
                Ok(())
            } else {
                Err(ConicError::IndexOutOfRange { index, num_vars: n })
            }
        };
        for (index, &q) in self.quadratic.iter().enumerate() {
            if !(q >= 0.0) {
                return Err(ConicError::NegativeQuadratic { index, coeff: q });
            }
        }
        for index in 0..n {
            let (lo, hi) = (self.lower[index], self.upper[index]);
            if lo.is_nan() || hi.is_nan() || lo > hi || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(ConicError::InvalidBounds { index, lo, hi });
            }
        }
        for eq in &self.equalities {
            for &(i, _) in &eq.row {
                check(i)?;
            }
        }
        for cone in &self.cones {
            for e in cone.exprs() {
                for &(i, _) in &e.terms {
                    check(i)?;
                }
            }
        }
        Ok(())
    }

    /// Replaces every quadratic term `q·xᵢ²` by `q·tᵢ` with a new variable
    /// `tᵢ` and the rotated cone `xᵢ² ≤ tᵢ·1`. New variables and cones are
    /// appended, so ids of the original program stay valid.
    pub fn lower_quadratics(&self) -> ConicProgram {
        let mut out = self.clone();
        for i in 0..self.num_vars() {
            let q = self.quadratic[i];
            if q > 0.0 {
                let t = out.add_var(0.0, f64::INFINITY);
                out.quadratic[i] = 0.0;
                out.linear[t] = q;
                out.add_rsoc(vec![Expr::var(i)], Expr::var(t), Expr::constant(1.0));
            }
        }
        out
    }

    pub fn has_quadratic(&self) -> bool {
        self.quadratic.iter().any(|&q| q > 0.0)
    }

    /// Solves the program. Quadratic terms are lowered first when the backend
    /// only takes linear objectives.
    pub fn solve(&self, opts: &SolveOptions) -> Result<ConicSolution, ConicError> {
        self.validate()?;
        if !opts.backend.quadratic_objective && self.has_quadratic() {
            let lowered = self.lower_quadratics();
            let mut sol = solve_clarabel(&lowered, opts)?;
            sol.primal.truncate(self.num_vars());
            sol.bound_duals.truncate(self.num_vars());
            sol.cone_duals.truncate(self.cones.len());
            sol.cone_slacks.truncate(self.cones.len());
            return Ok(sol);
        }
        let sol = solve_clarabel(self, opts)?;
        if sol.status == Status::NumericalFailure && self.has_quadratic() {
            // the cone form of the same program sometimes gets through
            // where the quadratic form stalls
            let lowered = self.solve(&SolveOptions {
                backend: Backend {
                    quadratic_objective: false,
                },
                ..*opts
            })?;
            if lowered.status != Status::NumericalFailure {
                return Ok(lowered);
            }
        }
        Ok(sol)
    }

    /// Dump in the Conic Benchmark Format (version 3). Quadratic objective
    /// terms are lowered to rotated cones first since the format only carries
    /// linear objectives; rotated cones are written in their standard SOC
    /// form.
    pub fn to_cbf(&self) -> String {
        let prog = self.lower_quadratics();
        let n = prog.num_vars();
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        let mut blocks: Vec<(&str, usize)> = Vec::new();
        let push_block = |kind: &'static str, len: usize, blocks: &mut Vec<(&str, usize)>| {
            if len == 0 {
                return;
            }
            match blocks.last_mut() {
                Some((k, l)) if *k == kind && kind != "Q" => *l += len,
                _ => blocks.push((kind, len)),
            }
        };
        for eq in &prog.equalities {
            rows.push((eq.row.clone(), -eq.rhs));
            push_block("L=", 1, &mut blocks);
        }
        for i in 0..n {
            if prog.lower[i].is_finite() {
                rows.push((vec![(i, 1.0)], -prog.lower[i]));
                push_block("L+", 1, &mut blocks);
            }
            if prog.upper[i].is_finite() {
                rows.push((vec![(i, -1.0)], prog.upper[i]));
                push_block("L+", 1, &mut blocks);
            }
        }
        for cone in &prog.cones {
            let exprs = cone.standard_form();
            let len = exprs.len();
            for e in exprs {
                rows.push((e.terms, e.constant));
            }
            push_block("Q", len, &mut blocks);
        }
        let mut s = String::new();
        let _ = writeln!(s, "VER\n3\n\nOBJSENSE\nMIN\n\nVAR\n{n} 1\nF {n}\n");
        let _ = writeln!(s, "CON\n{} {}", rows.len(), blocks.len());
        for (k, l) in &blocks {
            let _ = writeln!(s, "{k} {l}");
        }
        let obj: Vec<(usize, f64)> = prog
            .linear
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0.0)
            .map(|(i, &c)| (i, c))
            .collect();
        let _ = writeln!(s, "\nOBJACOORD\n{}", obj.len());
        for (i, c) in obj {
            let _ = writeln!(s, "{i} {c:e}");
        }
        if prog.offset != 0.0 {
            let _ = writeln!(s, "\nOBJBCOORD\n{:e}", prog.offset);
        }
        let nnz: usize = rows.iter().map(|r| r.0.len()).sum();
        let _ = writeln!(s, "\nACOORD\n{nnz}");
        for (r, (row, _)) in rows.iter().enumerate() {
            for &(i, c) in row {
                let _ = writeln!(s, "{r} {i} {c:e}");
            }
        }
        let b: Vec<(usize, f64)> = rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.1 != 0.0)
            .map(|(k, r)| (k, r.1))
            .collect();
        let _ = writeln!(s, "\nBCOORD\n{}", b.len());
        for (k, c) in b {
            let _ = writeln!(s, "{k} {c:e}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::NumericalFailure => "numerical-failure",
        })
    }
}

/// Primal and dual solution of a [`ConicProgram`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: Status,
    /// Raw status reported by the backend.
    pub backend_status: String,
    pub primal: Vec<f64>,
    /// `λ` per equality id.
    pub eq_duals: Vec<f64>,
    /// Dual vector of each cone in its standard form (see
    /// [`Cone::standard_form`]).
    pub cone_duals: Vec<Vec<f64>>,
    /// Value of each cone's standard-form vector at the primal point.
    pub cone_slacks: Vec<Vec<f64>>,
    /// `(σ̲, σ̄)` per variable; zero for infinite bounds.
    pub bound_duals: Vec<(f64, f64)>,
    pub objective_value: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }

    /// Multiplier of cone `k` written as the scalar inequality
    /// `Σuᵢ² − w₁w₂ ≤ 0` (rotated) or `‖u‖² − w² ≤ 0` (plain). The conversion
    /// uses the alignment of primal and dual vectors at a complementary pair,
    /// and is zero when the bound is (numerically) zero.
    pub fn squared_multiplier(&self, program: &ConicProgram, k: usize) -> f64 {
        let z0 = self.cone_duals[k][0];
        let s0 = self.cone_slacks[k][0];
        if s0.abs() < 1e-12 {
            return 0.0;
        }
        match program.cones[k] {
            Cone::Rsoc(_) => 2.0 * z0 / s0,
            Cone::Soc(_) => z0 / (2.0 * s0),
        }
    }
}

fn status_of(raw: SolverStatus) -> Option<Status> {
    match raw {
        SolverStatus::Solved => Some(Status::Optimal),
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => Some(Status::Infeasible),
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => Some(Status::Unbounded),
        // needs a residual check before being trusted
        SolverStatus::AlmostSolved => None,
        _ => Some(Status::NumericalFailure),
    }
}

fn solve_clarabel(prog: &ConicProgram, opts: &SolveOptions) -> Result<ConicSolution, ConicError> {
    let n = prog.num_vars();
    let mut ri = Vec::new();
    let mut ci = Vec::new();
    let mut vals = Vec::new();
    let mut b = Vec::new();
    let mut cones = Vec::new();
    let mut row = 0usize;

    for eq in &prog.equalities {
        for &(i, c) in &eq.row {
            ri.push(row);
            ci.push(i);
            vals.push(c);
        }
        b.push(eq.rhs);
        row += 1;
    }
    if !prog.equalities.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(prog.equalities.len()));
    }

    // (variable, is_upper) per nonnegative row
    let mut bound_rows = Vec::new();
    for i in 0..n {
        if prog.lower[i].is_finite() {
            ri.push(row);
            ci.push(i);
            vals.push(-1.0);
            b.push(-prog.lower[i]);
            bound_rows.push((i, false));
            row += 1;
        }
        if prog.upper[i].is_finite() {
            ri.push(row);
            ci.push(i);
            vals.push(1.0);
            b.push(prog.upper[i]);
            bound_rows.push((i, true));
            row += 1;
        }
    }
    if !bound_rows.is_empty() {
        cones.push(SupportedConeT::NonnegativeConeT(bound_rows.len()));
    }

    let mut cone_rows = Vec::with_capacity(prog.cones.len());
    for cone in &prog.cones {
        let start = row;
        for e in cone.standard_form() {
            for &(i, c) in &e.terms {
                ri.push(row);
                ci.push(i);
                vals.push(-c);
            }
            b.push(e.constant);
            row += 1;
        }
        cone_rows.push(start..row);
        cones.push(SupportedConeT::SecondOrderConeT(row - start));
    }

    let a = CscMatrix::new_from_triplets(row, n, ri, ci, vals);
    let diag: Vec<usize> = (0..n).filter(|&i| prog.quadratic[i] != 0.0).collect();
    let p = CscMatrix::new_from_triplets(
        n,
        n,
        diag.clone(),
        diag.clone(),
        diag.iter().map(|&i| 2.0 * prog.quadratic[i]).collect(),
    );

    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(opts.max_iter)
        .tol_gap_abs(opts.tol)
        .tol_gap_rel(opts.tol)
        .tol_feas(opts.tol)
        .build()
        .map_err(|e| ConicError::Backend(format!("{e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &prog.linear, &a, &b, &cones, settings)
        .map_err(|e| ConicError::Backend(e.to_string()))?;
    solver.solve();
    let raw = &solver.solution;

    let neq = prog.equalities.len();
    let mut bound_duals = vec![(0.0, 0.0); n];
    for (k, &(i, upper)) in bound_rows.iter().enumerate() {
        let z = raw.z[neq + k];
        if upper {
            bound_duals[i].1 = z;
        } else {
            bound_duals[i].0 = z;
        }
    }
    let x = raw.x.clone();
    let cone_slacks = prog
        .cones
        .iter()
        .map(|c| c.standard_form().iter().map(|e| e.eval(&x)).collect())
        .collect();
    let mut sol = ConicSolution {
        status: Status::NumericalFailure,
        backend_status: format!("{:?}", raw.status),
        objective_value: prog.objective_at(&x),
        eq_duals: raw.z[..neq].to_vec(),
        cone_duals: cone_rows.iter().map(|r| raw.z[r.clone()].to_vec()).collect(),
        cone_slacks,
        bound_duals,
        primal: x,
        iterations: raw.iterations,
        solve_time: raw.solve_time,
    };
    sol.status = match status_of(raw.status) {
        Some(s) => s,
        None => {
            if kkt_residuals(prog, &sol).max() <= ACCEPT_TOL {
                Status::Optimal
            } else {
                Status::NumericalFailure
            }
        }
    };
    Ok(sol)
}

/// Largest violations of the optimality conditions, recomputed from the
/// program data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

/// Recomputes the KKT residuals of `sol` for `prog` without using anything
/// the backend reported besides the primal and dual vectors.
pub fn kkt_residuals(prog: &ConicProgram, sol: &ConicSolution) -> KktResiduals {
    let x = &sol.primal;
    let n = prog.num_vars();
    let mut grad: Vec<f64> = (0..n)
        .map(|i| prog.linear[i] + 2.0 * prog.quadratic[i] * x[i])
        .collect();
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;

    for (eq, &lam) in prog.equalities.iter().zip(&sol.eq_duals) {
        let mut lhs = 0.0;
        for &(i, c) in &eq.row {
            grad[i] += lam * c;
            lhs += c * x[i];
        }
        primal = primal.max((lhs - eq.rhs).abs());
    }
    for i in 0..n {
        let (slo, shi) = sol.bound_duals[i];
        grad[i] += shi - slo;
        if prog.lower[i].is_finite() {
            primal = primal.max(prog.lower[i] - x[i]);
            comp = comp.max((slo * (x[i] - prog.lower[i])).abs());
        }
        if prog.upper[i].is_finite() {
            primal = primal.max(x[i] - prog.upper[i]);
            comp = comp.max((shi * (prog.upper[i] - x[i])).abs());
        }
        dual = dual.max(-slo).max(-shi);
    }
    for (k, cone) in prog.cones.iter().enumerate() {
        let z = &sol.cone_duals[k];
        let exprs = cone.standard_form();
        let s: Vec<f64> = exprs.iter().map(|e| e.eval(x)).collect();
        for (e, &zj) in exprs.iter().zip(z) {
            for &(i, c) in &e.terms {
                grad[i] -= zj * c;
            }
        }
        primal = primal.max(norm(&s[1..]) - s[0]);
        dual = dual.max(norm(&z[1..]) - z[0]);
        comp = comp.max(s.iter().zip(z).map(|(a, b)| a * b).sum::<f64>().abs());
    }
    KktResiduals {
        stationarity: grad.iter().fold(0.0, |m, g| m.max(g.abs())),
        primal: primal.max(0.0),
        dual: dual.max(0.0),
        complementarity: comp,
    }
}

/// Value of the Lagrange dual function at the reported multipliers, assuming
/// stationarity holds.
pub fn dual_objective(prog: &ConicProgram, sol: &ConicSolution) -> f64 {
    let x = &sol.primal;
    let mut d = prog.offset;
    for i in 0..prog.num_vars() {
        d -= prog.quadratic[i] * x[i] * x[i];
        let (slo, shi) = sol.bound_duals[i];
        if prog.lower[i].is_finite() {
            d += slo * prog.lower[i];
        }
        if prog.upper[i].is_finite() {
            d -= shi * prog.upper[i];
        }
    }
    for (eq, &lam) in prog.equalities.iter().zip(&sol.eq_duals) {
        d -= lam * eq.rhs;
    }
    for (cone, z) in prog.cones.iter().zip(&sol.cone_duals) {
        for (e, &zj) in cone.standard_form().iter().zip(z) {
            d -= zj * e.constant;
        }
    }
    d
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free(prog: &mut ConicProgram) -> usize {
        prog.add_free()
    }

    #[test]
    fn bound_only_program() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var(3.0, f64::INFINITY);
        prog.set_linear(x, 1.0);
        assert_eq!(prog.num_vars(), 1);
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.primal[x] - 3.0).abs() < 1e-7);
        assert!((sol.bound_duals[x].0 - 1.0).abs() < 1e-7);
    }

    #[test]
    fn lp_equality_dual_sign() {
        // min x + y  s.t. x + y = 2, x, y ≥ 0
        let mut prog = ConicProgram::new();
        let x = prog.add_var(0.0, f64::INFINITY);
        let y = prog.add_var(0.0, f64::INFINITY);
        prog.set_linear(x, 1.0);
        prog.set_linear(y, 1.0);
        let e = prog.add_eq(vec![(x, 1.0), (y, 1.0)], 2.0);
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert!(sol.is_optimal());
        assert!((sol.objective_value - 2.0).abs() < 1e-7);
        // λ enters as λ(x + y − 2), so the rhs sensitivity d opt/d b = 1 is −λ
        assert!((sol.eq_duals[e] + 1.0).abs() < 1e-7);
        let r = kkt_residuals(&prog, &sol);
        assert!(r.complementarity < 1e-7, "{r:?}");
    }

    #[test]
    fn norm_epigraph() {
        let mut prog = ConicProgram::new();
        let t = free(&mut prog);
        prog.add_soc(vec![Expr::constant(3.0), Expr::constant(4.0)], Expr::var(t));
        prog.set_linear(t, 1.0);
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert!((sol.primal[t] - 5.0).abs() < 1e-6);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        // x ≤ −1 via an equality with a nonnegative slack, and x ≥ 0
        let mut prog = ConicProgram::new();
        let x = prog.add_var(0.0, f64::INFINITY);
        let s = prog.add_var(0.0, f64::INFINITY);
        prog.add_eq(vec![(x, 1.0), (s, 1.0)], -1.0);
        prog.set_linear(x, 1.0);
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Infeasible);
    }

    #[test]
    fn crossed_bounds_rejected_at_build() {
        let mut prog = ConicProgram::new();
        prog.add_var(0.0, -1.0);
        assert!(matches!(prog.validate(), Err(ConicError::InvalidBounds { .. })));
    }

    #[test]
    fn index_and_sign_errors() {
        let mut prog = ConicProgram::new();
        let x = prog.add_free();
        prog.add_eq(vec![(x + 3, 1.0)], 0.0);
        assert!(matches!(
            prog.validate(),
            Err(ConicError::IndexOutOfRange { index: 3, .. })
        ));
        let mut prog = ConicProgram::new();
        let x = prog.add_free();
        prog.add_quadratic(x, -1.0);
        assert!(matches!(prog.validate(), Err(ConicError::NegativeQuadratic { .. })));
    }

    #[test]
    fn unbounded_is_reported() {
        let mut prog = ConicProgram::new();
        let x = prog.add_free();
        prog.set_linear(x, 1.0);
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert_eq!(sol.status, Status::Unbounded);
    }

    #[test]
    fn rotated_cone_multiplier_matches_squared_form() {
        // min −u  s.t. u² ≤ w·2, w ≤ 1.  Optimum u = √2, and with
        // γ(u² − 2w) the stationarity in u reads −1 + 2γu = 0.
        let mut prog = ConicProgram::new();
        let u = prog.add_free();
        let w = prog.add_var(f64::NEG_INFINITY, 1.0);
        let k = prog.add_rsoc(vec![Expr::var(u)], Expr::var(w), Expr::constant(2.0));
        prog.set_linear(u, -1.0);
        let sol = prog.solve(&SolveOptions::default()).unwrap();
        assert!(sol.is_optimal());
        let gamma = sol.squared_multiplier(&prog, k);
        assert!((sol.primal[u] - 2f64.sqrt()).abs() < 1e-6);
        assert!((gamma - 1.0 / (2.0 * 2f64.sqrt())).abs() < 1e-6, "{gamma}");
    }

    #[test]
    fn quadratic_lowering_keeps_optimum() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var(0.0, 4.0);
        let y = prog.add_free();
        prog.add_quadratic(x, 2.0);
        prog.add_quadratic(y, 1.0);
        prog.set_linear(x, -3.0);
        prog.add_eq(vec![(x, 1.0), (y, 1.0)], 1.0);
        let direct = prog.solve(&SolveOptions::default()).unwrap();
        let lowered = prog
            .solve(&SolveOptions {
                backend: Backend::LINEAR_ONLY,
                ..Default::default()
            })
            .unwrap();
        assert!((direct.objective_value - lowered.objective_value).abs() < 1e-6);
        // the epigraph form only pins x to the square root of the gap tolerance
        assert!((direct.eq_duals[0] - lowered.eq_duals[0]).abs() < 1e-3);
    }

    #[test]
    fn perturbed_primal_breaks_stationarity() {
        let mut prog = ConicProgram::new();
        let x = prog.add_free();
        prog.add_quadratic(x, 1.0);
        prog.set_linear(x, -2.0);
        let mut sol = prog.solve(&SolveOptions::default()).unwrap();
        assert!(kkt_residuals(&prog, &sol).max() < 1e-6);
        sol.primal[x] += 0.1;
        assert!(kkt_residuals(&prog, &sol).stationarity > 1e-3);
    }

    #[test]
    fn cbf_dump_has_sections() {
        let mut prog = ConicProgram::new();
        let x = prog.add_var(0.0, 1.0);
        prog.add_quadratic(x, 1.0);
        prog.add_eq(vec![(x, 1.0)], 0.5);
        let text = prog.to_cbf();
        for key in ["VER", "OBJSENSE", "VAR", "CON", "ACOORD", "BCOORD", "L=", "L+", "Q 3"] {
            assert!(text.contains(key), "missing {key}:\n{text}");
        }
    }
}
