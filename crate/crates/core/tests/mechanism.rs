mod common;

use dlmp::conic::SolveOptions;
use dlmp::mechanism::{
    compare, reproduce_example1, settle, vcg_payments, without_aggregator, Agreement, EXAMPLE1_CHEAT_PMAX,
};
use dlmp::network::{Bus, Network, TimeHorizon};
use dlmp::opf::solve_central;
use dlmp::scenario::{fixture_15bus, fixture_toy, AggregatorDef, FlexibleLoad, LaCost, Scenario, ToyCostForm};

fn opts() -> SolveOptions {
    SolveOptions::default()
}

fn agreement(sc: &Scenario) -> Agreement {
    let sol = solve_central(sc, &opts()).unwrap();
    Agreement {
        x: sol.vars.profiles(),
        lambda: sol.dlmps,
        objective: sol.objective_value,
    }
}

#[test]
fn truthful_settlement_pays_prices_times_profiles() {
    let sc = fixture_15bus(common::SEED_15BUS);
    let agreed = agreement(&sc);
    let s = settle(&sc, &agreed, &agreed.x, 1.0, 4.0, &opts()).unwrap();
    assert!(!s.recomputed);
    assert_eq!(s.total_penalties(), 0.0);
    assert!(s.budget_residual.abs() <= 1e-12);
    for (e, agg) in s.entries.iter().zip(&sc.aggregators) {
        let mut want = 0.0;
        for &n in &agg.nodes {
            for t in 0..sc.periods() {
                want += agreed.lambda.lp[n][t] * agreed.x.p[n][t] + agreed.lambda.lq[n][t] * agreed.x.q[n][t];
            }
        }
        assert!((e.dlmp_payment - want).abs() <= 1e-12);
    }
}

#[test]
fn deviation_is_penalized_and_repriced() {
    let sc = fixture_15bus(common::SEED_15BUS);
    let agreed = agreement(&sc);
    let mut realized = agreed.x.clone();
    let bus = sc.aggregators[1].nodes[0];
    realized.p[bus][0] += 0.1;
    let s = settle(&sc, &agreed, &realized, 2.5, 4.0, &opts()).unwrap();
    assert!(s.recomputed);
    let flagged: Vec<_> = s.entries.iter().map(|e| e.deviated).collect();
    assert_eq!(flagged, vec![false, true, false, false, false]);
    assert_eq!(s.total_penalties(), 2.5);
    assert!(s.lambda.max_abs_diff(&agreed.lambda) > 0.0);
    assert!(s.budget_residual.abs() <= 1e-12);
}

#[test]
fn vcg_counts_solves_and_lists_every_aggregator() {
    let sc = fixture_15bus(common::SEED_15BUS);
    let vcg = vcg_payments(&sc, &opts()).unwrap();
    assert_eq!(vcg.solves, sc.aggregators.len() + 1);
    let agreed = agreement(&sc);
    let s = settle(&sc, &agreed, &agreed.x, 0.0, 4.0, &opts()).unwrap();
    let rows = compare(&s, Some(&vcg));
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.vcg_payment.is_some()));
}

#[test]
fn removing_an_aggregator_keeps_the_network() {
    let sc = fixture_15bus(common::SEED_15BUS);
    let out = without_aggregator(&sc, 2);
    assert_eq!(out.network, sc.network);
    assert!(out.loads.iter().all(|l| !sc.aggregators[2].nodes.contains(&l.bus)));
    assert_eq!(out.costs.la_costs[2], LaCost::Zero);
}

/// Toy feeder plus an idle bus whose aggregator cannot move anything.
fn toy_with_idle_aggregator() -> Scenario {
    let toy = fixture_toy();
    let mut buses = toy.network.buses().to_vec();
    buses.push(Bus {
        id: 2,
        ancestor: Some(0),
        r: 0.001,
        x: 0.01,
        g: 0.0,
        b: 0.0,
        s: 1.0,
        vmin: 0.7,
        vmax: 1.3,
    });
    let network = Network::new(buses, 1.0).unwrap();
    let mut loads = toy.loads.clone();
    loads.push(FlexibleLoad {
        bus: 2,
        pmin: vec![0.0, 0.0],
        pmax: vec![0.0, 0.0],
        energy: 0.0,
        tau: 0.0,
        qmin: None,
        qmax: None,
    });
    let mut aggregators = toy.aggregators.clone();
    aggregators.push(AggregatorDef { id: 2, nodes: vec![2] });
    let mut costs = toy.costs.clone();
    costs.la_costs.push(LaCost::Zero);
    Scenario::new(
        network,
        TimeHorizon::new(2).unwrap(),
        loads,
        Vec::new(),
        aggregators,
        costs,
    )
    .unwrap()
}

#[test]
fn idle_aggregator_pays_nothing_under_vcg() {
    let sc = toy_with_idle_aggregator();
    let vcg = vcg_payments(&sc, &opts()).unwrap();
    let idle = &vcg.entries[1];
    assert!((idle.clarke_tax.unwrap() - idle.others_cost).abs() <= 1e-5);
    assert!(idle.vcg_payment.unwrap().abs() <= 1e-5);
}

#[test]
fn single_aggregator_vcg_payment_is_operator_cost() {
    let sc = fixture_toy();
    let vcg = vcg_payments(&sc, &opts()).unwrap();
    assert_eq!(vcg.solves, 2);
    assert!((vcg.entries[0].vcg_payment.unwrap() - vcg.phi0).abs() <= 1e-5);
}

#[test]
fn misreporting_bound_pays_off() {
    let rec = reproduce_example1(ToyCostForm::Corrected, &opts()).unwrap();
    assert!((rec.truthful.phi_signed - (-33.57)).abs() <= 0.05);
    assert!((rec.truthful.total - (-15.13)).abs() <= 0.05);
    assert!((rec.cheated.phi_signed - (-32.49)).abs() <= 0.05);
    assert!((rec.cheated.total - (-15.47)).abs() <= 0.05);
    assert!(rec.cheated.total < rec.truthful.total);
    // the understated bound binds in the cheap period
    assert!((rec.cheated.p[1] - EXAMPLE1_CHEAT_PMAX).abs() <= 1e-4);
    assert!(rec.truthful.p[1] < 1.5);
}

#[test]
fn literal_cost_reading_removes_the_gain() {
    let rec = reproduce_example1(ToyCostForm::Literal, &opts()).unwrap();
    assert!(rec.gain_from_cheating < 0.0);
}
