use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CorpusError, StatementSet};

/// Indices into the dataset list passed to [`cv_split`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Topic-held-out folds: whole datasets are assigned to test folds after a
/// seeded shuffle, round-robin, so every dataset is tested exactly once.
pub fn cv_split(sets: &[StatementSet], folds: usize, seed: u64) -> Result<Vec<Fold>, CorpusError> {
    let ids: Vec<&str> = sets.iter().map(|s| s.dataset_id.as_str()).collect();
    cv_split_ids(&ids, folds, seed)
}

pub(crate) fn cv_split_ids(ids: &[&str], folds: usize, seed: u64) -> Result<Vec<Fold>, CorpusError> {
    if folds < 2 {
        return Err(CorpusError::Config(format!("need at least 2 folds, got {folds}")));
    }
    if folds > ids.len() {
        return Err(CorpusError::Config(format!(
            "{folds} folds requested over {} datasets",
            ids.len()
        )));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| ids[a].cmp(ids[b]).then(a.cmp(&b)));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let mut tests = vec![Vec::new(); folds];
    for (k, &i) in order.iter().enumerate() {
        tests[k % folds].push(i);
    }
    Ok(tests
        .into_iter()
        .map(|mut test| {
            test.sort_unstable();
            let train = (0..ids.len()).filter(|i| !test.contains(i)).collect();
            Fold { train, test }
        })
        .collect())
}
