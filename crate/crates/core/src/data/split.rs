use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::recording::{Impairment, PareticSide, PatientMeta};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

/// Patient-level stratified k-fold. Patients are grouped by
/// (impairment band, paretic side), shuffled within each group and dealt
/// round-robin to folds, with the dealing position carried across groups so
/// that fold sizes differ by at most one.
pub fn split_patients(metas: &[PatientMeta], n_splits: usize, seed: u64) -> Result<Vec<Fold>> {
    if n_splits < 2 {
        return Err(Error::Config(format!("n_splits must be at least 2, got {n_splits}")));
    }
    if metas.len() < n_splits {
        return Err(Error::Config(format!(
            "{} patients cannot fill {n_splits} folds",
            metas.len()
        )));
    }
    let mut strata: BTreeMap<(Impairment, u8), Vec<&PatientMeta>> = BTreeMap::new();
    for m in metas {
        let side = match m.paretic_side {
            PareticSide::Left => 0,
            PareticSide::Right => 1,
        };
        strata.entry((m.impairment(), side)).or_default().push(m);
    }
    let mut rng = rng::stream(seed, "split", 0);
    let mut folds: Vec<Vec<String>> = vec![Vec::new(); n_splits];
    let mut next = 0;
    for members in strata.values_mut() {
        members.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        members.shuffle(&mut rng);
        for m in members.iter() {
            folds[next].push(m.patient_id.clone());
            next = (next + 1) % n_splits;
        }
    }
    Ok((0..n_splits)
        .map(|k| {
            let mut val_ids = folds[k].clone();
            val_ids.sort();
            let mut train_ids: Vec<String> = folds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != k)
                .flat_map(|(_, f)| f.iter().cloned())
                .collect();
            train_ids.sort();
            Fold { train_ids, val_ids }
        })
        .collect())
}
