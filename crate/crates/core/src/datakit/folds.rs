//! Attribute-stratified k-fold assignment.
//!
//! Records are grouped by their [`SplitAttributes`]; each stratum is shuffled
//! with a seeded generator and dealt round-robin over the folds. The deal
//! position carries over from one stratum to the next (strata taken in sorted
//! order), so overall fold sizes also differ by at most one.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{ImageRecord, SplitAttributes};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    k: usize,
    assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn new(k: usize, assignment: BTreeMap<String, usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::param(format!("fold count must be at least 2, got {k}")));
        }
        if let Some((id, f)) = assignment.iter().find(|(_, f)| **f >= k) {
            return Err(Error::input(format!("record {id:?} assigned to fold {f} >= k = {k}")));
        }
        Ok(Self { k, assignment })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.assignment.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Ids in `fold`, sorted.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.iter().filter(|(_, f)| *f == fold).map(|(id, _)| id).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for f in self.assignment.values() {
            sizes[*f] += 1;
        }
        sizes
    }

    /// CSV with header `id,fold`, rows sorted by id.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("id,fold\n");
        for (id, f) in &self.assignment {
            s.push_str(&csv_field(id));
            s.push(',');
            s.push_str(&f.to_string());
            s.push('\n');
        }
        s
    }

    /// Parses [`to_csv`](Self::to_csv) output. `k` is taken as one more than
    /// the largest fold index unless given.
    pub fn from_csv(text: &str, k: Option<usize>) -> Result<Self> {
        let mut rows = BTreeMap::new();
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "id,fold" => {}
            Some((_, h)) => return Err(Error::input(format!("fold csv: bad header {h:?}"))),
            None => return Err(Error::input("fold csv: missing header")),
        }
        for (i, line) in lines {
            let (id, fold) = line
                .rsplit_once(',')
                .ok_or_else(|| Error::input(format!("fold csv line {}: expected id,fold", i + 1)))?;
            let id = unquote(id);
            let fold: usize = fold
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("fold csv line {}: bad fold {fold:?}", i + 1)))?;
            if rows.insert(id.clone(), fold).is_some() {
                return Err(Error::input(format!("fold csv: duplicate id {id:?}")));
            }
        }
        let k = k.unwrap_or_else(|| rows.values().max().map_or(0, |m| m + 1));
        Self::new(k, rows)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, None)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn unquote(s: &str) -> String {
    let t = s.trim();
    if t.len() >= 2 && t.starts_with('"') && t.ends_with('"') {
        t[1..t.len() - 1].replace("\"\"", "\"")
    } else {
        t.to_string()
    }
}

pub fn stratified_folds(records: &[ImageRecord], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::param(format!("fold count must be at least 2, got {k}")));
    }
    if records.is_empty() {
        return Err(Error::Empty("stratified_folds: no records"));
    }
    if k > records.len() {
        return Err(Error::param(format!(
            "fold count {k} exceeds record count {}",
            records.len()
        )));
    }

    let mut strata: BTreeMap<SplitAttributes, Vec<&str>> = BTreeMap::new();
    for r in records {
        strata.entry(r.split_attributes()).or_default().push(&r.id);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    let mut next = 0usize;
    for ids in strata.values_mut() {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        for id in ids.iter() {
            if assignment.insert(id.to_string(), next).is_some() {
                return Err(Error::input(format!("duplicate record id {id:?}")));
            }
            next = (next + 1) % k;
        }
    }
    FoldAssignment::new(k, assignment)
}

/// Held-out folds for a run: fold `index` and, with `holdout_folds == 2`,
/// also fold `index + 1 (mod k)`.
pub fn holdout_folds(assignment: &FoldAssignment, index: usize, holdout_folds: usize) -> Result<Vec<usize>> {
    let k = assignment.k();
    if index >= k {
        return Err(Error::param(format!("fold index {index} out of range for k = {k}")));
    }
    if holdout_folds == 0 || holdout_folds >= k {
        return Err(Error::param(format!(
            "holdout size {holdout_folds} must be in 1..{k}"
        )));
    }
    Ok((0..holdout_folds).map(|j| (index + j) % k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::manifest::{AgeGroup, PersonBox, Sex};
    use crate::geometry::BBox;
    use crate::taxonomy::FineLabel;

    fn rec(id: &str, cat: &str) -> ImageRecord {
        ImageRecord {
            id: id.into(),
            image_path: format!("{id}.png"),
            fine_label: FineLabel::Neutral,
            source_category: cat.into(),
            warning_neutral: false,
            person_boxes: vec![PersonBox {
                bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
                age_group: AgeGroup::Adult,
                sex: Sex::Female,
                activity: String::new(),
            }],
            part_boxes: vec![],
        }
    }

    #[test]
    fn two_strata_two_folds() {
        let recs = [rec("a", "x"), rec("b", "x"), rec("c", "y"), rec("d", "y")];
        let f = stratified_folds(&recs, 2, 3).unwrap();
        for fold in 0..2 {
            let m = f.members(fold);
            assert_eq!(m.len(), 2);
            assert_eq!(m.iter().filter(|id| ["a", "b"].contains(id)).count(), 1);
        }
    }

    #[test]
    fn one_per_fold() {
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("r{i}"), "x")).collect();
        let f = stratified_folds(&recs, 10, 0).unwrap();
        assert_eq!(f.fold_sizes(), vec![1; 10]);
    }

    #[test]
    fn twenty_three_over_ten() {
        let recs: Vec<_> = (0..23).map(|i| rec(&format!("r{i:02}"), "x")).collect();
        let sizes = stratified_folds(&recs, 10, 9).unwrap().fold_sizes();
        // counting oracle: 23 = 10 * 2 + 3
        assert!(sizes.iter().all(|s| *s == 2 || *s == 3));
        assert_eq!(sizes.iter().filter(|s| **s == 3).count(), 3);
    }

    #[test]
    fn errors() {
        let recs = [rec("a", "x"), rec("b", "x")];
        assert!(stratified_folds(&recs, 3, 0).is_err());
        assert!(stratified_folds(&recs, 1, 0).is_err());
        assert!(stratified_folds(&[], 2, 0).is_err());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let recs: Vec<_> = (0..40).map(|i| rec(&format!("r{i:02}"), "x")).collect();
        let a = stratified_folds(&recs, 4, 1).unwrap();
        assert_eq!(a, stratified_folds(&recs, 4, 1).unwrap());
        assert_ne!(a, stratified_folds(&recs, 4, 2).unwrap());
        let mut rev = recs.clone();
        rev.reverse();
        assert_eq!(a, stratified_folds(&rev, 4, 1).unwrap());
    }

    #[test]
    fn csv_roundtrip() {
        let recs: Vec<_> = (0..12).map(|i| rec(&format!("r,{i}"), "x")).collect();
        let a = stratified_folds(&recs, 3, 5).unwrap();
        let text = a.to_csv();
        assert!(text.starts_with("id,fold\n"));
        assert_eq!(FoldAssignment::from_csv(&text, Some(3)).unwrap(), a);
    }

    #[test]
    fn holdout_selection() {
        let recs: Vec<_> = (0..10).map(|i| rec(&format!("r{i}"), "x")).collect();
        let f = stratified_folds(&recs, 5, 0).unwrap();
        assert_eq!(holdout_folds(&f, 4, 2).unwrap(), vec![4, 0]);
        assert!(holdout_folds(&f, 5, 1).is_err());
        assert!(holdout_folds(&f, 0, 5).is_err());
    }
}
