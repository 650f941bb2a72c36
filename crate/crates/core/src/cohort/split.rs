use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Cohort;
use crate::error::{Error, Result};

/// Splits `cohort` into `(train, test)`, drawing `round(count * test_fraction)`
/// rows of each class into the test set. Both splits keep the original row order.
pub fn stratified_split(cohort: &Cohort, test_fraction: f64, seed: u64) -> Result<(Cohort, Cohort)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test_fraction {test_fraction} must lie strictly inside (0, 1)"
        )));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &l) in cohort.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    if by_class.iter().any(Vec::is_empty) {
        return Err(Error::Stratification("cohort contains a single class".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_test = vec![false; cohort.n_rows()];
    for class in &mut by_class {
        let take = (class.len() as f64 * test_fraction).round() as usize;
        class.shuffle(&mut rng);
        for &i in &class[..take] {
            in_test[i] = true;
        }
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..cohort.n_rows()).partition(|&i| in_test[i]);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Stratification(format!(
            "test_fraction {test_fraction} leaves an empty split for {} rows",
            cohort.n_rows()
        )));
    }
    Ok((cohort.select_rows(&train), cohort.select_rows(&test)))
}
