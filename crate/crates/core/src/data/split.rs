//! Class-proportional splitting with largest-remainder apportionment.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedStream;

/// Apportions `total` items over `weights` (non-negative, not all zero):
/// floor of each quota, then the leftover seats to the largest fractional
/// remainders, earlier entries winning ties.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    assert!(sum > 0.0 && weights.iter().all(|w| *w >= 0.0), "weights must be non-negative with a positive sum");
    // Quotas are snapped to 1e-9 so that e.g. 0.7 * 10 does not floor to 6.
    let quotas: Vec<f64> = weights.iter().map(|w| ((w / sum * total as f64) * 1e9).round() / 1e9).collect();
    let mut seats: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = seats.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        seats[i] += 1;
    }
    seats
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validate,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validate, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validate => "validate",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::invalid(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub validate: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, validate: 0.2, test: 0.1 }
    }
}

impl SplitRatios {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.validate, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.as_array();
        if r.iter().any(|v| !(*v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios {r:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    /// One split per input label, in input order.
    pub splits: Vec<Split>,
    pub warnings: Vec<String>,
}

/// Groups indices by class, in class order.
fn by_class<L: Ord + Clone>(labels: &[L]) -> BTreeMap<L, Vec<usize>> {
    let mut groups: BTreeMap<L, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.clone()).or_default().push(i);
    }
    groups
}

/// Within each class, shuffles members by seed and cuts them into train /
/// validate / test with the largest-remainder sizes of `ratios`. Classes with
/// fewer than three members go entirely to train.
pub fn stratified_split<L: Ord + Clone + fmt::Debug>(
    labels: &[L],
    ratios: SplitRatios,
    seed: SeedStream,
) -> Result<SplitAssignment> {
    ratios.validate()?;
    let mut splits = vec![Split::Train; labels.len()];
    let mut warnings = Vec::new();
    let stream = seed.named("split");
    for (rank, (class, mut members)) in by_class(labels).into_iter().enumerate() {
        if members.len() < 3 {
            warnings.push(format!("class {class:?} has only {} records; all assigned to train", members.len()));
            continue;
        }
        members.shuffle(&mut stream.child(rank as u64).rng());
        let sizes = largest_remainder(members.len(), &ratios.as_array());
        let mut rest = members.as_slice();
        for (split, n) in Split::ALL.into_iter().zip(sizes) {
            let (head, tail) = rest.split_at(n);
            for &i in head {
                splits[i] = split;
            }
            rest = tail;
        }
    }
    Ok(SplitAssignment { splits, warnings })
}

/// Partitions indices into `k` folds; within every class the fold sizes
/// differ by at most one.
pub fn stratified_kfold<L: Ord + Clone + fmt::Debug>(
    labels: &[L],
    k: usize,
    seed: SeedStream,
) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    let groups = by_class(labels);
    if let Some((class, members)) = groups.iter().find(|(_, m)| m.len() < k) {
        return Err(Error::invalid(format!("class {class:?} has {} records, fewer than k = {k} folds", members.len())));
    }
    let stream = seed.named("kfold");
    let mut folds = vec![Vec::new(); k];
    for (rank, (_, mut members)) in groups.into_iter().enumerate() {
        members.shuffle(&mut stream.child(rank as u64).rng());
        let sizes = largest_remainder(members.len(), &vec![1.0; k]);
        let mut rest = members.as_slice();
        for (fold, n) in folds.iter_mut().zip(sizes) {
            let (head, tail) = rest.split_at(n);
            fold.extend_from_slice(head);
            rest = tail;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(a: &SplitAssignment) -> [usize; 3] {
        let mut c = [0; 3];
        for s in &a.splits {
            c[*s as usize] += 1;
        }
        c
    }

    #[test]
    fn apportionment_examples() {
        assert_eq!(largest_remainder(100, &[0.7, 0.2, 0.1]), vec![70, 20, 10]);
        assert_eq!(largest_remainder(10, &[0.7, 0.2, 0.1]), vec![7, 2, 1]);
        assert_eq!(largest_remainder(7, &[1.0; 5]), vec![2, 2, 1, 1, 1]);
        assert_eq!(largest_remainder(4, &[0.7, 0.2, 0.1]), vec![3, 1, 0]);
    }

    #[test]
    fn one_species_hundred_records() {
        let labels = vec!["Ash"; 100];
        let a = stratified_split(&labels, SplitRatios::default(), SeedStream::new(1)).unwrap();
        assert_eq!(counts(&a), [70, 20, 10]);
    }

    #[test]
    fn ten_records() {
        let a = stratified_split(&["x"; 10], SplitRatios::default(), SeedStream::new(1)).unwrap();
        assert_eq!(counts(&a), [7, 2, 1]);
    }

    #[test]
    fn deterministic_per_seed() {
        let labels: Vec<u8> = (0..60).map(|i| (i % 4) as u8).collect();
        let a = stratified_split(&labels, SplitRatios::default(), SeedStream::new(5)).unwrap();
        let b = stratified_split(&labels, SplitRatios::default(), SeedStream::new(5)).unwrap();
        let c = stratified_split(&labels, SplitRatios::default(), SeedStream::new(6)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tiny_class_goes_to_train() {
        let a = stratified_split(&["a", "a", "b", "b", "b"], SplitRatios::default(), SeedStream::new(0)).unwrap();
        assert_eq!(&a.splits[..2], &[Split::Train, Split::Train]);
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn rejects_bad_ratios() {
        let r = SplitRatios { train: 0.5, validate: 0.2, test: 0.1 };
        assert!(stratified_split(&[1, 2, 3], r, SeedStream::new(0)).is_err());
    }

    #[test]
    fn kfold_examples() {
        let folds = stratified_kfold(&[0u8; 25], 5, SeedStream::new(2)).unwrap();
        assert!(folds.iter().all(|f| f.len() == 5));

        let labels: Vec<u8> = [vec![0u8; 10], vec![1u8; 7]].concat();
        let folds = stratified_kfold(&labels, 5, SeedStream::new(2)).unwrap();
        let per_class = |c: u8| folds.iter().map(|f| f.iter().filter(|&&i| labels[i] == c).count()).collect::<Vec<_>>();
        assert_eq!(per_class(0), vec![2, 2, 2, 2, 2]);
        assert_eq!(per_class(1), vec![2, 2, 1, 1, 1]);

        let mut all: Vec<usize> = folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..17).collect::<Vec<_>>());
    }

    #[test]
    fn kfold_rejects_small_class() {
        let err = stratified_kfold(&["big", "big", "big", "big", "big", "tiny"], 5, SeedStream::new(0)).unwrap_err();
        assert!(err.to_string().contains("\"tiny\""), "{err}");
    }
}
