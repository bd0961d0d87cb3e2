//! Per-class feature statistics and the store of old-class prototypes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, invalid_state, Result};
use crate::numerics::{covariance, mean_rows, FeatureMatrix, SquareMatrix};
use crate::ClassId;

/// Prototype (class mean), full covariance and sample count of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStatistics {
    pub prototype: Vec<f64>,
    pub covariance: SquareMatrix,
    pub count: usize,
}

impl ClassStatistics {
    /// Statistics of the rows of `features`. Fewer than two rows give a
    /// zero covariance.
    pub fn fit(features: &FeatureMatrix) -> Result<Self> {
        Ok(Self {
            prototype: mean_rows(features)?,
            covariance: covariance(features)?,
            count: features.rows(),
        })
    }
}

fn check_aligned(features: &FeatureMatrix, labels: &[ClassId]) -> Result<()> {
    if features.is_empty() {
        return invalid_arg("cannot compute class statistics of an empty batch");
    }
    if features.rows() != labels.len() {
        return invalid_arg(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        ));
    }
    Ok(())
}

/// Row indices of each distinct label, in order of first appearance within
/// each group and ascending label order across groups.
pub fn group_rows(labels: &[ClassId]) -> BTreeMap<ClassId, Vec<usize>> {
    let mut groups: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, &label) in labels.iter().enumerate() {
        groups.entry(label).or_default().push(i);
    }
    groups
}

/// Statistics for every distinct label in `labels`.
pub fn fit_class_statistics(
    features: &FeatureMatrix,
    labels: &[ClassId],
) -> Result<BTreeMap<ClassId, ClassStatistics>> {
    check_aligned(features, labels)?;
    group_rows(labels)
        .into_iter()
        .map(|(label, rows)| Ok((label, ClassStatistics::fit(&features.select_rows(&rows))?)))
        .collect()
}

/// Mean feature of each label present in the batch.
pub fn batch_class_prototypes(
    features: &FeatureMatrix,
    labels: &[ClassId],
) -> Result<BTreeMap<ClassId, Vec<f64>>> {
    check_aligned(features, labels)?;
    group_rows(labels)
        .into_iter()
        .map(|(label, rows)| Ok((label, mean_rows(&features.select_rows(&rows))?)))
        .collect()
}

/// Old-class statistics in registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrototypeStore {
    order: Vec<ClassId>,
    stats: BTreeMap<ClassId, ClassStatistics>,
}

impl PrototypeStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of stored (old) classes.
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Class ids in insertion order.
    pub fn class_ids(&self) -> &[ClassId] {
        &self.order
    }

    pub fn contains(&self, class: ClassId) -> bool {
        self.stats.contains_key(&class)
    }

    pub fn get(&self, class: ClassId) -> Option<&ClassStatistics> {
        self.stats.get(&class)
    }

    /// Feature dimension of the stored prototypes.
    pub fn dim(&self) -> Option<usize> {
        self.stats.values().next().map(|s| s.prototype.len())
    }

    /// `(class, statistics)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ClassId, &ClassStatistics)> + '_ {
        self.order.iter().map(move |c| (*c, &self.stats[c]))
    }

    /// Adds new classes in ascending id order. Nothing is inserted if any id
    /// is already present or the dimensions disagree.
    pub fn register(&mut self, new_stats: BTreeMap<ClassId, ClassStatistics>) -> Result<()> {
        if let Some(dup) = new_stats.keys().find(|c| self.contains(**c)) {
            return invalid_state(format!("class {dup} is already registered"));
        }
        let dim = self
            .dim()
            .or_else(|| new_stats.values().next().map(|s| s.prototype.len()));
        for (class, stats) in &new_stats {
            let d = stats.prototype.len();
            if Some(d) != dim || stats.covariance.rows() != d || stats.covariance.cols() != d {
                return invalid_arg(format!(
                    "class {class} statistics have inconsistent dimension"
                ));
            }
            if stats.count == 0 {
                return invalid_arg(format!("class {class} statistics have zero samples"));
            }
        }
        for (class, stats) in new_stats {
            self.order.push(class);
            self.stats.insert(class, stats);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use proptest::prelude::*;

    fn rows(data: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(data).unwrap()
    }

    #[test]
    fn fit_examples() {
        let stats =
            fit_class_statistics(&rows(&[[5.0, -1.0], [5.0, -1.0], [5.0, -1.0]]), &[2, 2, 2])
                .unwrap();
        assert_eq!(stats[&2].prototype, vec![5.0, -1.0]);
        assert_eq!(stats[&2].covariance, Matrix::zeros(2, 2));

        let stats = fit_class_statistics(&rows(&[[1.5, 2.5]]), &[0]).unwrap();
        assert_eq!(stats[&0].prototype, vec![1.5, 2.5]);
        assert_eq!(stats[&0].covariance, Matrix::zeros(2, 2));
        assert_eq!(stats[&0].count, 1);

        let stats =
            fit_class_statistics(&rows(&[[0.0, 0.0], [9.0, 9.0], [2.0, 0.0]]), &[0, 1, 0]).unwrap();
        assert_eq!(stats[&0].prototype, vec![1.0, 0.0]);
        assert_eq!(stats[&0].covariance, Matrix::diag(&[2.0, 0.0]));
        assert_eq!(stats[&0].count, 2);
        assert_eq!(stats[&1].count, 1);

        assert!(fit_class_statistics(&Matrix::empty(2), &[]).is_err());
        assert!(fit_class_statistics(&rows(&[[0.0, 0.0]]), &[0, 1]).is_err());
    }

    #[test]
    fn batch_prototype_examples() {
        let p = batch_class_prototypes(&rows(&[[1.0, 0.0], [3.0, 0.0]]), &[4, 4]).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[&4], vec![2.0, 0.0]);

        let p = batch_class_prototypes(&rows(&[[1.0, 7.0], [3.0, -2.0]]), &[0, 1]).unwrap();
        assert_eq!(p[&0], vec![1.0, 7.0]);
        assert_eq!(p[&1], vec![3.0, -2.0]);

        let p = batch_class_prototypes(&rows(&[[0.0, 0.0], [4.0, 0.0], [2.0, 2.0]]), &[0, 1, 0])
            .unwrap();
        assert_eq!(p[&0], vec![1.0, 1.0]);
        assert_eq!(p[&1], vec![4.0, 0.0]);

        assert!(batch_class_prototypes(&Matrix::empty(2), &[]).is_err());
    }

    fn one_class(class: ClassId, value: f64) -> BTreeMap<ClassId, ClassStatistics> {
        fit_class_statistics(&rows(&[[value, 0.0]]), &[class]).unwrap()
    }

    #[test]
    fn register_examples() {
        let mut store = PrototypeStore::new();
        store.register(one_class(0, 1.0)).unwrap();
        assert_eq!(store.len(), 1);

        store.register(one_class(1, 2.0)).unwrap();
        let before = store.clone();
        let err = store.register(one_class(1, 3.0)).unwrap_err();
        assert!(matches!(err, crate::Error::InvalidState(_)));
        assert_eq!(store, before);

        let mut store = PrototypeStore::new();
        for c in 0..8 {
            store.register(one_class(c, c as f64)).unwrap();
        }
        store.register(one_class(8, 8.0)).unwrap();
        assert_eq!(store.len(), 9);
        assert_eq!(store.class_ids(), &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn register_rejects_dimension_mismatch() {
        let mut store = PrototypeStore::new();
        store.register(one_class(0, 1.0)).unwrap();
        let three_d =
            fit_class_statistics(&Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap(), &[5]).unwrap();
        assert!(store.register(three_d).is_err());
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn whole_class_batch_prototypes_equal_fitted_prototypes() {
        let f = rows(&[[0.1, 3.0], [2.0, -1.0], [7.0, 7.5], [0.0, 0.0], [1.0, 1.0]]);
        let labels = [3, 1, 3, 1, 3];
        let fitted = fit_class_statistics(&f, &labels).unwrap();
        let batch = batch_class_prototypes(&f, &labels).unwrap();
        for (class, stats) in fitted {
            assert_eq!(stats.prototype, batch[&class]);
        }
    }

    proptest! {
        #[test]
        fn statistics_are_permutation_invariant(
            data in prop::collection::vec((0u32..3, -10.0f64..10.0, -10.0f64..10.0), 1..30),
            perm_seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let labels: Vec<ClassId> = data.iter().map(|d| d.0).collect();
            let f = Matrix::from_rows(&data.iter().map(|d| vec![d.1, d.2]).collect::<Vec<_>>()).unwrap();
            let mut order: Vec<usize> = (0..labels.len()).collect();
            order.shuffle(&mut crate::rng::stream(perm_seed, "perm", &[]));
            let shuffled = f.select_rows(&order);
            let shuffled_labels: Vec<ClassId> = order.iter().map(|&i| labels[i]).collect();
            let a = fit_class_statistics(&f, &labels).unwrap();
            let b = fit_class_statistics(&shuffled, &shuffled_labels).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (class, sa) in &a {
                let sb = &b[class];
                prop_assert_eq!(sa.count, sb.count);
                for (x, y) in sa.prototype.iter().zip(&sb.prototype) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
                for (x, y) in sa.covariance.as_slice().iter().zip(sb.covariance.as_slice()) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }
}
