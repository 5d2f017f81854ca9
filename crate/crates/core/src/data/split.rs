use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Category, DataError, QAExample};

/// Seeded, category-stratified train/test split.
///
/// Each category contributes `round(train·n_c)` examples to the training
/// set; both outputs keep the shuffled order.
pub fn split(dataset: &[QAExample], ratios: (f64, f64), seed: u64) -> Result<(Vec<QAExample>, Vec<QAExample>), DataError> {
    let (train, test) = ratios;
    if !(train > 0.0 && test > 0.0) || ((train + test) - 1.0).abs() > 1e-9 {
        return Err(DataError::BadRatios);
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut totals: BTreeMap<Category, usize> = BTreeMap::new();
    for ex in dataset {
        *totals.entry(ex.category).or_default() += 1;
    }
    let mut quota: BTreeMap<Category, usize> =
        totals.into_iter().map(|(c, n)| (c, (train * n as f64).round() as usize)).collect();

    let (mut tr, mut te) = (Vec::new(), Vec::new());
    for i in order {
        let ex = &dataset[i];
        let q = quota.get_mut(&ex.category).expect("counted");
        if *q > 0 {
            *q -= 1;
            tr.push(ex.clone());
        } else {
            te.push(ex.clone());
        }
    }
    Ok((tr, te))
}
