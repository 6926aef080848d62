use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::InteractionRecord;

/// Train/validation/test record indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random 8:1:1 split in which every user and every item has at least one
/// training record.
///
/// Records are visited in a seeded order; any record whose user or item is not
/// yet covered is pinned to train. The remaining records are shuffled and fill
/// validation and test to their 10% targets, the rest going to train. If the
/// pinned set already exceeds the 80% target, the leftover is divided evenly
/// between validation and test.
pub fn split_dataset(records: &[InteractionRecord], seed: u64) -> DatasetSplit {
    let n = records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut users: HashSet<&str> = HashSet::new();
    let mut items: HashSet<&str> = HashSet::new();
    let mut pinned = Vec::new();
    let mut rest = Vec::new();
    for &k in &order {
        let r = &records[k];
        let new_user = users.insert(&r.user_id);
        let new_item = items.insert(&r.item_id);
        if new_user || new_item {
            pinned.push(k);
        } else {
            rest.push(k);
        }
    }
    rest.shuffle(&mut rng);

    let target_train = (n as f64 * 0.8).round() as usize;
    let target_val = (n as f64 * 0.1).round() as usize;
    let (n_val, n_test) = if pinned.len() >= target_train {
        let half = (rest.len() + 1) / 2;
        (half, rest.len() - half)
    } else {
        let n_val = target_val.min(rest.len());
        let n_test = n.saturating_sub(target_train + target_val).min(rest.len() - n_val);
        (n_val, n_test)
    };

    let validation = rest[..n_val].to_vec();
    let test = rest[n_val..n_val + n_test].to_vec();
    let mut train = pinned;
    train.extend_from_slice(&rest[n_val + n_test..]);
    DatasetSplit {
        train,
        validation,
        test,
        seed,
    }
}
