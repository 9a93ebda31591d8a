//! Plain-text tables for solutions and payments.

use std::fmt::Write;

use crate::mechanism::{ComparisonRow, Example1Record};
use crate::opf::{ExactnessReport, OpfSolution};
use crate::scenario::Scenario;

/// Per-period table of prices and electrical quantities. The root row shows
/// `p₀, q₀` in the load columns.
pub fn solution_table(sc: &Scenario, sol: &OpfSolution) -> String {
    let mut out = String::new();
    let (x, d) = (&sol.vars, &sol.dlmps);
    for t in 0..sc.periods() {
        let _ = writeln!(out, "period {t}");
        let _ = writeln!(
            out,
            "{:>3} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>7} {:>7}",
            "n", "lam_p", "lam_q", "pc", "p", "q", "f", "g", "l", "v"
        );
        for n in 0..sc.num_buses() {
            let (p, q) = if n == 0 {
                (x.p0[t], x.q0[t])
            } else {
                (x.p[n][t], x.q[n][t])
            };
            let _ = writeln!(
                out,
                "{:>3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>7.3} {:>7.3}",
                n, d.lp[n][t], d.lq[n][t], x.pc[n][t], p, q, x.f[n][t], x.g[n][t], x.ell[n][t], x.v[n][t]
            );
        }
        let _ = writeln!(out, "c_{t}(-p0) = {:.4}", sol.period_costs[t]);
        let _ = writeln!(out);
    }
    out
}

pub fn exactness_summary(rep: &ExactnessReport) -> String {
    if rep.is_exact {
        format!("relaxation exact: max cone gap {:.3e}\n", rep.max_gap)
    } else {
        format!(
            "relaxation NOT exact: max cone gap {:.3e} at {} (bus, period) pairs {:?}\n",
            rep.max_gap,
            rep.non_tight.len(),
            rep.non_tight
        )
    }
}

/// Aggregator, nodes, DLMP payment, VCG payment.
pub fn payment_table(rows: &[ComparisonRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:>4}  {:<20} {:>12} {:>12}", "agg", "nodes", "dlmp", "vcg");
    for r in rows {
        let nodes = format!("{:?}", r.nodes);
        let vcg = r.vcg_payment.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let _ = writeln!(
            out,
            "{:>4}  {:<20} {:>12.3} {:>12}",
            r.aggregator, nodes, r.dlmp_payment, vcg
        );
    }
    out
}

pub fn example1_table(rec: &Example1Record) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>8} {:>16} {:>16} {:>9} {:>9} {:>9}",
        "run", "pmax_1", "p", "lambda_p", "payment", "phi", "total"
    );
    for (name, r) in [("truthful", &rec.truthful), ("cheated", &rec.cheated)] {
        let _ = writeln!(
            out,
            "{:<10} {:>8.2} {:>16} {:>16} {:>9.3} {:>9.3} {:>9.3}",
            name,
            r.announced_pmax,
            format!("({:.3}, {:.3})", r.p[0], r.p[1]),
            format!("({:.3}, {:.3})", r.lambda_p[0], r.lambda_p[1]),
            r.payment,
            r.phi_signed,
            r.total
        );
    }
    let _ = writeln!(out, "gain from cheating: {:.4}", rec.gain_from_cheating);
    out
}
