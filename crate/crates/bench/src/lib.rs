//! Fixed benchmark inputs shared by the criterion targets.

use efy_core::data::{planted_pairwise, SyntheticSpec};
use efy_core::instances::EnergyFamily;
use efy_core::numerics::seeded_rng;
use efy_core::{Energy, EnergyInput, MultilabelDataset, Standardizer};

/// `count` seeded instances of `family` with `k` outputs and 8-dimensional inputs.
pub fn instances(family: EnergyFamily, k: usize, count: usize) -> Vec<(Energy, EnergyInput)> {
    let mut rng = seeded_rng(17);
    (0..count).map(|_| family.instance(k, 8, &mut rng).expect("valid instance")).collect()
}

/// Standardized planted-pairwise training set.
pub fn planted(n: usize) -> MultilabelDataset {
    let (data, _) = planted_pairwise(&SyntheticSpec { n, ..SyntheticSpec::default() }).expect("generator");
    Standardizer::fit(&data.x).and_then(|s| s.apply(&data)).expect("standardize")
}
