//! Utility and disclosure-risk evaluation of synthetic datasets.

mod combine;
mod metrics;
mod regression;
mod report;
mod risk;

use rand::Rng;

use crate::data::Dataset;
use crate::rng::{substream, Purpose};

pub use combine::{combine_estimates, Combined};
pub use metrics::{conditional_distance, frequencies, marginal_distance};
pub use regression::{
    fit_regression, regression_distance, Predictor, RegressionDistance, RegressionFit, RegressionKind, RegressionModel,
};
pub use report::{evaluate, ru_map, write_ru_csv, AttackKind, AttackSpec, EvalConfig, EvalReport, Metric, RegressionSummary, RuRow};
pub use risk::{attack_categorical, attack_numeric, population_uniqueness};

/// `n` rows drawn with replacement from `orig`; dataset `k` of a series.
pub fn bootstrap_resample(orig: &Dataset, n: usize, seed: u64, k: u64) -> Dataset {
    let mut rng = substream(seed, k, Purpose::Bootstrap, 0);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..orig.n_rows())).collect();
    orig.select_rows(&idx)
}

/// Resamples every column independently, keeping marginals but breaking
/// all dependence between features. Stands in for the marginal Bayesian
/// bootstrap.
pub fn marginal_bootstrap(orig: &Dataset, n: usize, seed: u64, k: u64) -> Dataset {
    let m = orig.n_features();
    let mut cells = vec![0; n * m];
    for j in 0..m {
        let mut rng = substream(seed, k, Purpose::Bootstrap, 1 + j as u64);
        for r in 0..n {
            cells[r * m + j] = orig.get(rng.random_range(0..orig.n_rows()), j);
        }
    }
    Dataset::from_cells(orig.schema_arc().clone(), cells).expect("shape matches schema")
}
