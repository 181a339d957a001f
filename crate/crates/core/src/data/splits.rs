use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DatasetRecord;
use crate::error::{Error, Result};

pub const HOLDOUT_FAMILY_FRACTION: f64 = 0.1;
pub const MIN_FAMILIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    /// Documents from held-out layout families only.
    pub generalization: Vec<String>,
    pub held_out_families: Vec<String>,
}

impl SplitSpec {
    /// Records whose ids are in `ids`, in dataset order.
    pub fn select<'a>(records: &'a [DatasetRecord], ids: &[String]) -> Vec<&'a DatasetRecord> {
        let wanted: BTreeSet<&str> = ids.iter().map(String::as_str).collect();
        records.iter().filter(|r| wanted.contains(r.id.as_str())).collect()
    }
}

/// Holds out `max(1, round(10%))` of the layout families for the
/// generalization split, then splits the remaining documents 3:1 into train
/// and validation (validation gets `round(n / 4)`, halves rounding up).
pub fn make_splits(records: &[DatasetRecord], seed: u64) -> Result<SplitSpec> {
    let mut families: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in records {
        families.entry(&r.layout_family).or_default().push(&r.id);
    }
    if families.len() < MIN_FAMILIES {
        return Err(Error::invalid(format!(
            "splitting needs at least {MIN_FAMILIES} layout families, found {}",
            families.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names: Vec<&str> = families.keys().copied().collect();
    names.shuffle(&mut rng);
    let k = ((names.len() as f64 * HOLDOUT_FAMILY_FRACTION).round() as usize).max(1);
    let mut held: Vec<&str> = names[..k].to_vec();
    held.sort_unstable();

    let mut generalization = Vec::new();
    let mut rest = Vec::new();
    for r in records {
        if held.contains(&r.layout_family.as_str()) {
            generalization.push(r.id.clone());
        } else {
            rest.push(r.id.clone());
        }
    }
    if rest.len() < 2 {
        return Err(Error::invalid(format!(
            "only {} documents outside the held-out families",
            rest.len()
        )));
    }
    rest.shuffle(&mut rng);
    let n_val = (rest.len() + 2) / 4;
    let validation = rest[..n_val].to_vec();
    let train = rest[n_val..].to_vec();
    Ok(SplitSpec {
        train,
        validation,
        generalization,
        held_out_families: held.into_iter().map(String::from).collect(),
    })
}
