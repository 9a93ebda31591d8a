//! Published reference values of the 15-bus study, shared by the
//! integration tests.
#![allow(dead_code)]

/// One published row: bus, λᵖ, λ^q, p^c, q, f, g, ℓ, v.
pub type Row = (usize, f64, f64, f64, f64, f64, f64, f64, f64);

pub const TABLE2_T0: [Row; 15] = [
    (0, 2.12, 0.0, -0.56, -0.249, 0.0, 0.0, 0.0, 1.0),
    (1, 2.122, 0.008, 0.623, 0.146, -0.427, -0.188, 0.229, 0.951),
    (2, 2.049, 0.029, 0.0, 0.0, 0.199, -0.038, 0.042, 0.975),
    (3, 1.937, 0.055, 0.028, 0.012, 0.205, -0.032, 0.042, 1.017),
    (4, 1.939, 0.055, 0.005, 0.001, -0.019, -0.003, 0.0, 1.016),
    (5, 1.94, 0.055, 0.001, 0.0, -0.014, -0.002, 0.0, 1.016),
    (6, 1.942, 0.055, 0.013, 0.003, -0.013, -0.003, 0.0, 1.014),
    (8, 0.003, 0.177, 0.023, 0.006, 0.256, -0.016, 0.063, 1.036),
    (7, 0.0, 0.177, -0.131, 0.0, 0.131, 0.001, 0.016, 1.049),
    (9, 0.003, 0.177, 0.002, 0.001, 0.148, -0.011, 0.021, 1.038),
    (10, 0.001, 0.177, 0.014, 0.004, 0.151, -0.009, 0.022, 1.045),
    (11, 0.0, 0.177, 0.02, 0.005, 0.165, -0.005, 0.026, 1.048),
    (12, 2.12, 0.0, 0.107, 0.022, -0.132, -0.032, 0.019, 0.992),
    (13, 2.137, 0.007, 0.003, 0.002, -0.025, -0.009, 0.001, 0.982),
    (14, 2.146, 0.01, 0.022, 0.008, -0.022, -0.008, 0.001, 0.977),
];

pub const TABLE2_T1: [Row; 15] = [
    (0, 1.0, 0.0, -1.299, -0.549, 0.0, 0.0, 0.0, 1.0),
    (1, 1.002, 0.004, 1.05, 0.245, -0.924, -0.321, 1.057, 0.906),
    (2, 0.979, 0.021, 0.0, 0.0, 0.127, -0.074, 0.024, 0.909),
    (3, 0.942, 0.046, 0.037, 0.015, 0.131, -0.072, 0.024, 0.916),
    (4, 0.945, 0.047, 0.027, 0.007, -0.083, -0.019, 0.008, 0.911),
    (5, 0.947, 0.048, 0.031, 0.008, -0.057, -0.013, 0.004, 0.909),
    (6, 0.95, 0.048, 0.026, 0.006, -0.026, -0.006, 0.001, 0.905),
    (8, 0.004, 0.176, 0.006, 0.001, 0.254, -0.035, 0.07, 0.932),
    (7, -0.001, 0.176, -0.143, 0.0, 0.143, 0.001, 0.022, 0.947),
    (9, 0.003, 0.176, 0.036, 0.022, 0.118, -0.033, 0.016, 0.933),
    (10, 0.001, 0.176, 0.015, 0.004, 0.154, -0.011, 0.025, 0.94),
    (11, 0.0, 0.176, 0.026, 0.006, 0.169, -0.006, 0.03, 0.943),
    (12, 2.008, 0.272, 0.342, 0.071, -0.374, -0.083, 0.15, 0.977),
    (13, 2.031, 0.281, 0.002, 0.001, -0.032, -0.012, 0.001, 0.965),
    (14, 2.044, 0.286, 0.03, 0.011, -0.03, -0.011, 0.001, 0.957),
];

pub fn table2(t: usize) -> &'static [Row; 15] {
    if t == 0 {
        &TABLE2_T0
    } else {
        &TABLE2_T1
    }
}

/// Published period costs `c₀, c₁` of the 15-bus study.
pub const PERIOD_COSTS: [f64; 2] = [0.873, 1.299];

/// Published DLMP and VCG payments per aggregator.
pub const TABLE3_DLMP: [f64; 5] = [2.464, 0.693, 0.077, 0.006, 0.002];
pub const TABLE3_VCG: [f64; 5] = [2.04, 0.675, -0.007, 0.004, -0.115];

/// Seed of the regenerated 15-bus instance used for the iterative checks.
pub const SEED_15BUS: u64 = 11;
