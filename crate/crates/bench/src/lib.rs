//! Fixtures shared by the benchmarks.

use mvplc_core::data::{MetaDataset, TestDefinition};
use mvplc_core::math::corr::CorrelationMatrix;
use mvplc_core::simulate::{simulate_dataset, PopulationTruth};

pub fn tests() -> Vec<TestDefinition> {
    vec![
        TestDefinition::dichotomous(0, "reference"),
        TestDefinition::dichotomous(1, "index"),
        TestDefinition::ordinal(2, "score", 3).expect("three categories"),
    ]
}

/// Dependent three-test truth used across benchmarks and acceptance runs.
pub fn population() -> PopulationTruth {
    let g1 = CorrelationMatrix::from_rows(&[vec![1.0, 0.3, 0.2], vec![0.3, 1.0, 0.4], vec![0.2, 0.4, 1.0]]).expect("valid");
    let g0 = CorrelationMatrix::from_rows(&[vec![1.0, 0.1, 0.1], vec![0.1, 1.0, 0.3], vec![0.1, 0.3, 1.0]]).expect("valid");
    PopulationTruth {
        mu: vec![[-1.6, 1.2], [-1.0, 0.8], [-0.3, 0.9]],
        sigma: vec![[0.3, 0.3], [0.4, 0.3], [0.3, 0.4]],
        rho: vec![0.0, -0.2, 0.1],
        kappa: vec![None, None, Some([40.0, 40.0])],
        phi: vec![None, None, Some([vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5]])],
        global: [g0, g1],
        beta: [0.2, 0.2],
        corr_bound: 0.65,
        prevalence_range: (0.2, 0.5),
    }
}

/// Ten studies of 200 individuals.
pub fn dataset(seed: u64) -> MetaDataset {
    let tests = tests();
    let truth = population().draw_studies(&tests, 10, seed).expect("valid truth");
    simulate_dataset(&truth, &tests, &[200; 10], seed).expect("valid simulation")
}
