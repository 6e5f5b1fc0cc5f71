//! Fixtures shared by the benchmarks.

use varbound_core::scenario::Scenario;
use varbound_core::{CoordinateDistribution, ProductDistribution, Statistic};

pub fn normals(n: usize) -> ProductDistribution {
    ProductDistribution::iid(CoordinateDistribution::normal(0.0, 1.0).expect("valid"), n)
        .expect("valid")
}

pub fn uniforms(n: usize) -> ProductDistribution {
    ProductDistribution::iid(CoordinateDistribution::uniform(0.0, 1.0).expect("valid"), n)
        .expect("valid")
}

pub fn sum(n: usize) -> Statistic {
    Statistic::WeightedSum {
        weights: vec![1.0; n],
    }
}

fn scenario(text: &str) -> Scenario {
    serde_json::from_str::<Scenario>(text)
        .expect("parses")
        .resolve()
        .expect("valid scenario")
}

/// Ten standard normals, their sum, both single-statistic bounds.
pub fn gauss_sum(trials: u64) -> Scenario {
    scenario(&format!(
        r#"{{"seed": 1, "trials": {trials},
            "distribution": {{"iid": {{"kind": "normal", "mu": 0, "sigma": 1}}, "n": 10}},
            "statistic": {{"kind": "weighted_sum", "weights": [1,1,1,1,1,1,1,1,1,1]}},
            "bounds": [{{"kind": "logarithmic", "x": [1, 2, 3], "y": "inv_n_squared"}},
                       {{"kind": "scale_free", "x": [1, 2, 3]}}]}}"#
    ))
}

/// Max of three uniforms with nested Monte Carlo variances.
pub fn max_uniform(trials: u64, inner: u64) -> Scenario {
    scenario(&format!(
        r#"{{"seed": 2, "trials": {trials}, "oracle": "nested_mc",
            "estimator": {{"inner_replicates": {inner}}},
            "expectation": {{"method": "monte_carlo", "replicates": 10000}},
            "distribution": {{"iid": {{"kind": "uniform", "lo": 0, "hi": 1}}, "n": 3}},
            "statistic": {{"kind": "max"}},
            "bounds": [{{"kind": "logarithmic", "x": [1, 2], "y": "inv_n_squared"}}]}}"#
    ))
}
