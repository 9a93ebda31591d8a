use dlmp::scenario::{
    base_loads_15bus, fixture_15bus, fixture_15bus_table2_profiles, fixture_toy, generate_scenario, network_15bus,
    synthetic_scenario, Scenario, ScenarioError, SyntheticOptions,
};
use proptest::prelude::*;

#[test]
fn toy_and_fifteen_bus_fixture_data() {
    let toy = fixture_toy();
    assert_eq!(toy.loads[0].energy, 1.0);
    assert_eq!(toy.network.buses()[1].x, 0.12);
    let sc = fixture_15bus(3);
    assert_eq!(sc.network.buses()[1].s, 2.0);
    assert_eq!(sc.aggregators[0].nodes, vec![1, 2, 3]);
    assert_eq!(sc.costs.alpha, vec![1.0, 1.0]);
    assert_eq!(sc.costs.beta, vec![1.0, 0.0]);
}

#[test]
fn published_net_profiles() {
    let x = fixture_15bus_table2_profiles();
    assert!((x.p[11][0] - (-0.165)).abs() < 1e-9);
    assert!((x.q[1][0] - 0.146).abs() < 1e-9);
    assert_eq!(x.p[2][0], 0.0);
}

#[test]
fn malformed_scenario_text_is_a_schema_error() {
    assert!(matches!(
        Scenario::from_toml_str("periods = \"two\""),
        Err(ScenarioError::Schema(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_energy_lies_in_its_window(seed in any::<u32>(), periods in 1usize..5) {
        let sc = generate_scenario(&network_15bus(), &base_loads_15bus(), periods, seed as u64).unwrap();
        for l in &sc.loads {
            let lo: f64 = l.pmin.iter().sum();
            let hi: f64 = l.pmax.iter().sum();
            prop_assert!(lo <= l.energy && l.energy <= hi);
            for t in 0..periods {
                prop_assert!(l.pmin[t] <= l.pmax[t]);
            }
        }
    }

    #[test]
    fn generation_is_deterministic_in_the_seed(seed in any::<u32>()) {
        prop_assert_eq!(fixture_15bus(seed as u64), fixture_15bus(seed as u64));
    }

    #[test]
    fn scenarios_round_trip_through_toml(seed in 0u64..1000, buses in 2usize..9, periods in 1usize..4) {
        let sc = synthetic_scenario(seed, SyntheticOptions { buses, periods, zero_impedance: false }).unwrap();
        prop_assert_eq!(Scenario::from_toml_str(&sc.to_toml_string()).unwrap(), sc);
    }

    #[test]
    fn fifteen_bus_round_trips(seed in 0u64..1000) {
        let sc = fixture_15bus(seed);
        prop_assert_eq!(Scenario::from_toml_str(&sc.to_toml_string()).unwrap(), sc);
    }
}
