//! Shared fixtures for the benchmarks in `benches/`.

use predeploy_core::cohort::{generate_synthetic, stratified_split, CohortGenConfig, ColumnKind};
use predeploy_core::model::{fit_logistic, FitConfig};
use predeploy_core::perturb::{default_battery, PerturbationBattery};
use predeploy_core::{Cohort, LogisticBaseline, Scorer};

pub struct Fixture {
    pub test: Cohort,
    pub model: LogisticBaseline,
    pub battery: PerturbationBattery,
    pub scores: Vec<f64>,
}

/// Reference cohort of `n` rows, 20% held out, with a fitted baseline and
/// the default battery.
pub fn fixture(n: usize) -> Fixture {
    let cohort = generate_synthetic(&CohortGenConfig {
        n,
        ..CohortGenConfig::default()
    })
    .expect("cohort");
    let (train, test) = stratified_split(&cohort, 0.2, 42).expect("split");
    let model = fit_logistic(&train, &FitConfig::default()).expect("fit");
    let continuous: Vec<String> = test
        .features
        .columns()
        .iter()
        .filter(|c| c.kind == ColumnKind::Continuous)
        .map(|c| c.name.clone())
        .collect();
    let battery = default_battery(&test.features, &continuous, "age", 42).expect("battery");
    let scores = model.score(&test.features).expect("score").into_inner();
    Fixture {
        test,
        model,
        battery,
        scores,
    }
}
