//! Stratified labeled / val / test / unlabeled splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::data::manifest::{Manifest, ManifestEntry, Source, Split};
use crate::error::{invalid, Result};
use crate::rng::{derive_named, seeded};

/// One item to be split; `label` is the stratum (ground truth), if any.
#[derive(Clone, Debug)]
pub struct SplitItem {
    pub clip_id: String,
    pub label: Option<usize>,
    pub source: Source,
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub labeled: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            labeled: 1.0 / 32.0,
            val: 0.0625,
            test: 0.25,
        }
    }
}

/// Per-stratum counts: `labeled = max(1, floor(f·n))`, `val/test = floor(f·n)`.
pub fn stratum_counts(n: usize, f: &SplitFractions) -> (usize, usize, usize) {
    let floor = |x: f64| (x * n as f64 + 1e-9).floor() as usize;
    (floor(f.labeled).max(1), floor(f.val), floor(f.test))
}

/// Splits `items` per stratum after a seeded shuffle. Unlabeled entries keep
/// a null label so ground truth stays hidden from the learner.
pub fn split_dataset(items: &[SplitItem], fractions: &SplitFractions, seed: u64) -> Result<Manifest> {
    for (name, f) in [("labeled", fractions.labeled), ("val", fractions.val), ("test", fractions.test)] {
        let ok = if name == "labeled" { f > 0.0 && f <= 1.0 } else { (0.0..1.0).contains(&f) };
        if !ok {
            return invalid(format!("{name} fraction {f} out of range"));
        }
    }
    if fractions.labeled + fractions.val + fractions.test > 1.0 + 1e-12 {
        return invalid("split fractions sum to more than 1");
    }
    if items.is_empty() {
        return invalid("cannot split an empty dataset");
    }
    let mut strata: BTreeMap<Option<usize>, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        strata.entry(item.label).or_default().push(i);
    }
    let mut rng = seeded(derive_named(seed, "split"));
    let mut assigned = vec![Split::Unlabeled; items.len()];
    for (stratum, mut members) in strata {
        let (n_lab, n_val, n_test) = stratum_counts(members.len(), fractions);
        if n_lab + n_val + n_test > members.len() {
            return invalid(format!(
                "stratum {stratum:?} has {} items, cannot fill {n_lab} labeled + {n_val} val + {n_test} test",
                members.len()
            ));
        }
        members.shuffle(&mut rng);
        let mut it = members.into_iter();
        for (split, count) in [(Split::Labeled, n_lab), (Split::Val, n_val), (Split::Test, n_test)] {
            for i in it.by_ref().take(count) {
                assigned[i] = split;
            }
        }
    }
    let entries = items
        .iter()
        .zip(assigned)
        .map(|(item, split)| ManifestEntry {
            clip_id: item.clip_id.clone(),
            source: item.source.clone(),
            label: if split == Split::Unlabeled { None } else { item.label },
            split,
        })
        .collect();
    Manifest::new(entries)
}
