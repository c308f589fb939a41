//! Stratified labelled/unlabelled splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::{derive_rng, stream};
use crate::dataio::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSplit {
    /// Dataset indices kept with labels, ascending.
    pub labeled: Vec<usize>,
    /// The remaining indices, ascending.
    pub unlabeled: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Keeps a `ratio` fraction of `indices` labelled, stratified by category.
///
/// The labelled total is `round(ratio · |indices|)`, shared across
/// categories by largest remainder. A category that would get no labelled
/// cloud keeps one and a warning is recorded.
pub fn label_ratio_split(dataset: &Dataset, indices: &[usize], ratio: f64, seed: u64) -> Result<LabelSplit> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidArgument(format!("label ratio must lie in (0, 1], got {ratio}")));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in indices {
        groups.entry(dataset.category_of(i, "label-ratio split")?).or_default().push(i);
    }
    let target = (ratio * indices.len() as f64).round() as usize;
    let exact: Vec<(usize, f64)> = groups.iter().map(|(&c, g)| (c, ratio * g.len() as f64)).collect();
    let mut quota: BTreeMap<usize, usize> = exact.iter().map(|&(c, x)| (c, x.floor() as usize)).collect();
    let mut order: Vec<(usize, f64)> = exact.iter().map(|&(c, x)| (c, x - x.floor())).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let assigned: usize = quota.values().sum();
    for &(c, _) in order.iter().take(target.saturating_sub(assigned)) {
        *quota.get_mut(&c).expect("known category") += 1;
    }

    let mut warnings = Vec::new();
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (c, mut members) in groups {
        let mut q = quota[&c];
        if q == 0 {
            warnings.push(format!(
                "category {c}: ratio {ratio} leaves no labelled cloud among {}; keeping 1",
                members.len()
            ));
            q = 1;
        }
        members.shuffle(&mut derive_rng(seed, stream::SPLIT, c as u64, 0));
        labeled.extend_from_slice(&members[..q]);
        unlabeled.extend_from_slice(&members[q..]);
    }
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    Ok(LabelSplit {
        labeled,
        unlabeled,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::Split;
    use crate::geom::PointCloud;

    fn dataset(per_category: &[usize]) -> Dataset {
        let mut clouds = Vec::new();
        for (c, &n) in per_category.iter().enumerate() {
            for _ in 0..n {
                clouds.push(PointCloud::with_labels(vec![[0.0; 3]], None, Some(c as u32)).unwrap());
            }
        }
        let k = per_category.len();
        Dataset::new(
            clouds,
            vec![Split::Train; per_category.iter().sum()],
            (0..k).map(|c| format!("c{c}")).collect(),
            vec![vec![]; k],
        )
        .unwrap()
    }

    #[test]
    fn half_of_hundred() {
        let d = dataset(&[50, 30, 20]);
        let idx: Vec<usize> = (0..100).collect();
        let s = label_ratio_split(&d, &idx, 0.5, 1).unwrap();
        assert_eq!((s.labeled.len(), s.unlabeled.len()), (50, 50));
        assert!(s.warnings.is_empty());
        assert_eq!(s, label_ratio_split(&d, &idx, 0.5, 1).unwrap());
        let mut all = [s.labeled.clone(), s.unlabeled.clone()].concat();
        all.sort_unstable();
        assert_eq!(all, idx);
    }

    #[test]
    fn stratified_ten_percent() {
        let d = dataset(&[100, 100, 100]);
        let idx: Vec<usize> = (0..300).collect();
        let s = label_ratio_split(&d, &idx, 0.1, 3).unwrap();
        for c in 0..3 {
            assert_eq!(s.labeled.iter().filter(|&&i| i / 100 == c).count(), 10);
        }
    }

    #[test]
    fn tiny_category_keeps_one() {
        let d = dataset(&[40, 2]);
        let idx: Vec<usize> = (0..42).collect();
        let s = label_ratio_split(&d, &idx, 0.1, 0).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert_eq!(s.labeled.iter().filter(|&&i| i >= 40).count(), 1);
    }

    #[test]
    fn rejects_bad_ratio() {
        let d = dataset(&[4]);
        assert!(label_ratio_split(&d, &[0, 1], 0.0, 0).is_err());
        assert!(label_ratio_split(&d, &[0, 1], 1.5, 0).is_err());
    }
}
