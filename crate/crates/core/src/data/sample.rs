//! (100)/(66)/(33) proportion datasets and qualifier-ratio subsampling.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{dataset_from_raw, Dataset, HyperFact};
use crate::error::{HtkgError, Result};

/// Target share of qualifier-bearing facts. 66 and 33 are exact thirds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProportionTarget {
    P100,
    P66,
    P33,
}

impl ProportionTarget {
    pub fn from_percent(p: u32) -> Result<Self> {
        match p {
            100 => Ok(Self::P100),
            66 => Ok(Self::P66),
            33 => Ok(Self::P33),
            other => Err(HtkgError::Invalid(format!(
                "target percent must be 100, 66 or 33, got {other}"
            ))),
        }
    }

    pub fn percent(self) -> u32 {
        match self {
            Self::P100 => 100,
            Self::P66 => 66,
            Self::P33 => 33,
        }
    }

    /// Split size needed for `n_qual` qualifier-bearing facts.
    pub fn split_size(self, n_qual: usize) -> usize {
        match self {
            Self::P100 => n_qual,
            // n / (2/3), rounded half up
            Self::P66 => (3 * n_qual).div_ceil(2),
            Self::P33 => 3 * n_qual,
        }
    }
}

/// Keeps every qualifier-bearing fact and adds qualifier-free facts drawn
/// from the same split until the target proportion is reached.
///
/// One seeded permutation per split is drawn regardless of target, and each
/// target takes a prefix of it, so equal seeds give (100) ⊆ (66) ⊆ (33).
/// Vocabularies of the result are rebuilt from the retained facts.
pub fn sample_proportion_dataset(ds: &Dataset, target: ProportionTarget, seed: u64) -> Result<Dataset> {
    if ds.is_augmented() {
        return Err(HtkgError::Invalid(
            "proportion sampling expects an un-augmented dataset".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<Vec<HyperFact>> = Vec::with_capacity(3);
    for (name, facts) in [("train", &ds.train), ("valid", &ds.valid), ("test", &ds.test)] {
        let n_qual = facts.iter().filter(|f| f.has_qualifiers()).count();
        let mut free: Vec<usize> = (0..facts.len()).filter(|&i| !facts[i].has_qualifiers()).collect();
        free.shuffle(&mut rng);
        let extra = target.split_size(n_qual) - n_qual;
        if extra > free.len() {
            return Err(HtkgError::Unreachable(format!(
                "{name}: need {extra} qualifier-free facts for {}%, only {} available",
                target.percent(),
                free.len()
            )));
        }
        let chosen: HashSet<usize> = free[..extra].iter().copied().collect();
        picked.push(
            facts
                .iter()
                .enumerate()
                .filter(|(i, f)| f.has_qualifiers() || chosen.contains(i))
                .map(|(_, f)| f.clone())
                .collect(),
        );
    }
    let test = picked.pop().unwrap();
    let valid = picked.pop().unwrap();
    let train = picked.pop().unwrap();
    dataset_from_raw(
        ds.raw_split(&train),
        ds.raw_split(&valid),
        ds.raw_split(&test),
        ds.raw_ti(),
    )
}

/// Keeps a uniformly drawn `ratio` share of all qualifiers (rounded to the
/// nearest count); vocabularies are left untouched.
pub fn subsample_qualifiers(ds: &Dataset, ratio: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(HtkgError::Invalid(format!("qualifier ratio {ratio} outside [0, 1]")));
    }
    if ds.is_augmented() {
        return Err(HtkgError::Invalid(
            "subsample qualifiers before inverse augmentation".into(),
        ));
    }
    let mut slots = Vec::new();
    for (s, facts) in [&ds.train, &ds.valid, &ds.test].iter().enumerate() {
        for (i, f) in facts.iter().enumerate() {
            for k in 0..f.qualifiers.len() {
                slots.push((s, i, k));
            }
        }
    }
    let keep_n = (ratio * slots.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    slots.shuffle(&mut rng);
    let keep: HashSet<(usize, usize, usize)> = slots[..keep_n].iter().copied().collect();
    let mut out = ds.clone();
    for (s, facts) in [&mut out.train, &mut out.valid, &mut out.test].into_iter().enumerate() {
        for (i, f) in facts.iter_mut().enumerate() {
            let mut k = 0;
            f.qualifiers.retain(|_| {
                let kept = keep.contains(&(s, i, k));
                k += 1;
                kept
            });
        }
    }
    Ok(out)
}
