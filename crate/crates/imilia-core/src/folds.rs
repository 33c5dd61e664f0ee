//! Deterministic stratified cross-validation folds.
//!
//! Slides are grouped per class, each group is shuffled with the seeded
//! generator and dealt round-robin across folds, which keeps per-fold class
//! counts within one of each other regardless of prevalence.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::rng;

/// Map from slide id to fold index in `[0, n_folds)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub n_folds: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, slide_id: &str) -> Option<usize> {
        self.assignment.get(slide_id).copied()
    }

    /// Slide ids belonging to the given fold, in sorted order.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FoldError {
    TooFewFolds { n_folds: usize },
    /// A class has fewer labeled slides than folds.
    TooFewSlides { label: u8, count: usize, n_folds: usize },
    DuplicateSlide { slide_id: String },
}

impl fmt::Display for FoldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FoldError::TooFewFolds { n_folds } => write!(f, "n_folds must be >= 2, got {n_folds}"),
            FoldError::TooFewSlides { label, count, n_folds } => write!(
                f,
                "class {label} has {count} labeled slides, need at least {n_folds}"
            ),
            FoldError::DuplicateSlide { slide_id } => {
                write!(f, "duplicate slide id {slide_id:?} in fold input")
            }
        }
    }
}

impl core::error::Error for FoldError {}

/// Assign every labeled slide to one of `n_folds` folds, stratified by label.
///
/// Deterministic for a fixed seed and independent of input order: ids are
/// sorted before the seeded shuffle.
pub fn make_folds<'a, I>(labeled: I, n_folds: usize, seed: u64) -> Result<FoldAssignment, FoldError>
where
    I: IntoIterator<Item = (&'a str, u8)>,
{
    if n_folds < 2 {
        return Err(FoldError::TooFewFolds { n_folds });
    }
    let mut per_class: BTreeMap<u8, Vec<&str>> = BTreeMap::new();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for (id, label) in labeled {
        if seen.insert(id, ()).is_some() {
            return Err(FoldError::DuplicateSlide { slide_id: id.to_string() });
        }
        per_class.entry(label).or_default().push(id);
    }
    for (&label, ids) in &per_class {
        if ids.len() < n_folds {
            return Err(FoldError::TooFewSlides { label, count: ids.len(), n_folds });
        }
    }

    let mut assignment = BTreeMap::new();
    let mut generator = rng::rng_from_seed(seed);
    for ids in per_class.values_mut() {
        ids.sort_unstable();
        rng::shuffle(&mut generator, ids);
        for (i, id) in ids.iter().enumerate() {
            assignment.insert(id.to_string(), i % n_folds);
        }
    }
    Ok(FoldAssignment { n_folds, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    fn balanced(n_pos: usize, n_neg: usize) -> Vec<(String, u8)> {
        let mut v = Vec::new();
        for i in 0..n_pos {
            v.push((format!("p{i}"), 1));
        }
        for i in 0..n_neg {
            v.push((format!("n{i}"), 0));
        }
        v
    }

    fn as_refs(v: &[(String, u8)]) -> impl Iterator<Item = (&str, u8)> {
        v.iter().map(|(id, l)| (id.as_str(), *l))
    }

    #[test]
    fn five_pos_five_neg_five_folds_is_one_plus_one() {
        let slides = balanced(5, 5);
        let folds = make_folds(as_refs(&slides), 5, 11).unwrap();
        for f in 0..5 {
            let members = folds.members(f);
            assert_eq!(members.len(), 2);
            let pos = members.iter().filter(|id| id.starts_with('p')).count();
            assert_eq!(pos, 1, "fold {f} should hold exactly one positive");
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let slides = balanced(13, 29);
        let a = make_folds(as_refs(&slides), 5, 3).unwrap();
        let b = make_folds(as_refs(&slides), 5, 3).unwrap();
        assert_eq!(a, b);
        let c = make_folds(as_refs(&slides), 5, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn input_order_does_not_matter() {
        let mut slides = balanced(7, 9);
        let a = make_folds(as_refs(&slides), 3, 5).unwrap();
        slides.reverse();
        let b = make_folds(as_refs(&slides), 3, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_covers_every_labeled_slide() {
        let slides = balanced(17, 23);
        let folds = make_folds(as_refs(&slides), 4, 0).unwrap();
        assert_eq!(folds.assignment.len(), 40);
        let total: usize = (0..4).map(|f| folds.members(f).len()).sum();
        assert_eq!(total, 40);
    }

    #[test]
    fn prevalence_stays_close_to_global() {
        // 31 positives / 100 slides, like a skewed cohort.
        let slides = balanced(31, 69);
        let folds = make_folds(as_refs(&slides), 5, 1).unwrap();
        for f in 0..5 {
            let members = folds.members(f);
            let pos = members.iter().filter(|id| id.starts_with('p')).count();
            let prevalence = pos as f64 / members.len() as f64;
            assert!((prevalence - 0.31).abs() <= 0.05, "fold {f} prevalence {prevalence}");
        }
    }

    #[test]
    fn too_few_slides_per_class() {
        let slides = balanced(2, 9);
        let err = make_folds(as_refs(&slides), 5, 0).unwrap_err();
        assert_eq!(err, FoldError::TooFewSlides { label: 1, count: 2, n_folds: 5 });
    }

    #[test]
    fn duplicates_rejected() {
        let slides = vec![("a".to_string(), 1), ("a".to_string(), 0), ("b".to_string(), 1)];
        let err = make_folds(as_refs(&slides), 2, 0).unwrap_err();
        assert!(matches!(err, FoldError::DuplicateSlide { .. }));
    }
}
