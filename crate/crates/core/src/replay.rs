//! Pseudo-feature generation with batch prototypes.
//!
//! For each label group `n` of a batch of new-class features, the group's
//! in-batch mean is compared (cosine similarity) with every stored old-class
//! prototype. The most similar old class `p` becomes the pseudo label, and
//! every feature of the group is translated by `mu_p - mean_n`. Pseudo
//! batches live for a single optimizer step and are never stored.

use std::collections::BTreeMap;

use crate::error::{invalid_arg, invalid_state, Result};
use crate::numerics::{cosine_sim, FeatureMatrix, Matrix};
use crate::prototypes::{batch_class_prototypes, PrototypeStore};
use crate::ClassId;

/// Translated features labelled with old classes, row-aligned with the
/// source batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatch {
    pub features: FeatureMatrix,
    pub labels: Vec<ClassId>,
}

impl PseudoBatch {
    pub fn empty(dim: usize) -> Self {
        Self {
            features: Matrix::empty(dim),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Pseudo rows followed by real rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedBatch {
    pub features: FeatureMatrix,
    pub labels: Vec<ClassId>,
    pub pseudo_mask: Vec<bool>,
}

impl MergedBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_pseudo(&self) -> usize {
        self.pseudo_mask.iter().filter(|m| **m).count()
    }

    /// Separates the pseudo rows from the real rows.
    pub fn split(&self) -> (PseudoBatch, FeatureMatrix, Vec<ClassId>) {
        let (pseudo_rows, real_rows): (Vec<usize>, Vec<usize>) =
            (0..self.len()).partition(|&i| self.pseudo_mask[i]);
        let pseudo = PseudoBatch {
            features: self.features.select_rows(&pseudo_rows),
            labels: pseudo_rows.iter().map(|&i| self.labels[i]).collect(),
        };
        let real_labels = real_rows.iter().map(|&i| self.labels[i]).collect();
        (pseudo, self.features.select_rows(&real_rows), real_labels)
    }
}

/// The stored class whose prototype is most cosine-similar to `batch_proto`.
/// Ties go to the smallest class id.
pub fn assign_pseudo_label(batch_proto: &[f64], store: &PrototypeStore) -> Result<ClassId> {
    if store.is_empty() {
        return invalid_state("cannot assign a pseudo label from an empty prototype store");
    }
    let mut best: Option<(ClassId, f64)> = None;
    for (class, stats) in store.iter() {
        let sim = cosine_sim(batch_proto, &stats.prototype)?;
        best = match best {
            Some((c, s)) if s > sim || (s == sim && c < class) => Some((c, s)),
            _ => Some((class, sim)),
        };
    }
    Ok(best.expect("store is non-empty").0)
}

/// Pseudo features and labels for one batch, using in-batch class means.
pub fn generate_pseudo_batch(
    features: &FeatureMatrix,
    labels: &[ClassId],
    store: &PrototypeStore,
) -> Result<PseudoBatch> {
    if store.is_empty() {
        return invalid_state("cannot generate pseudo features without old-class prototypes");
    }
    let anchors = batch_class_prototypes(features, labels)?;
    translate(features, labels, store, &anchors)
}

/// Like [`generate_pseudo_batch`], but each group is anchored at a fixed
/// per-class mean (typically the whole-task class prototype) instead of its
/// in-batch mean. Every label of the batch must have an anchor.
pub fn generate_pseudo_batch_anchored(
    features: &FeatureMatrix,
    labels: &[ClassId],
    store: &PrototypeStore,
    anchors: &BTreeMap<ClassId, Vec<f64>>,
) -> Result<PseudoBatch> {
    if store.is_empty() {
        return invalid_state("cannot generate pseudo features without old-class prototypes");
    }
    if features.is_empty() {
        return invalid_arg("cannot generate pseudo features from an empty batch");
    }
    translate(features, labels, store, anchors)
}

fn translate(
    features: &FeatureMatrix,
    labels: &[ClassId],
    store: &PrototypeStore,
    anchors: &BTreeMap<ClassId, Vec<f64>>,
) -> Result<PseudoBatch> {
    if features.rows() != labels.len() {
        return invalid_arg(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        ));
    }
    if store.dim() != Some(features.cols()) {
        return invalid_arg(format!(
            "batch dimension {} does not match prototype dimension {:?}",
            features.cols(),
            store.dim()
        ));
    }
    // per source label: (pseudo label, shift = mu_p - anchor_n)
    let mut shifts: BTreeMap<ClassId, (ClassId, Vec<f64>)> = BTreeMap::new();
    for &label in labels {
        if shifts.contains_key(&label) {
            continue;
        }
        let anchor = anchors.get(&label).ok_or_else(|| {
            crate::Error::InvalidArgument(format!("no anchor prototype for class {label}"))
        })?;
        if anchor.len() != features.cols() {
            return invalid_arg(format!("anchor for class {label} has the wrong dimension"));
        }
        let target = assign_pseudo_label(anchor, store)?;
        let mu = &store
            .get(target)
            .expect("assigned class is stored")
            .prototype;
        let shift = mu.iter().zip(anchor).map(|(m, a)| m - a).collect();
        shifts.insert(label, (target, shift));
    }
    let mut out = Matrix::zeros(features.rows(), features.cols());
    let mut pseudo_labels = Vec::with_capacity(labels.len());
    for (i, (row, label)) in features.iter_rows().zip(labels).enumerate() {
        let (target, shift) = &shifts[label];
        for ((o, x), s) in out.row_mut(i).iter_mut().zip(row).zip(shift) {
            *o = x + s;
        }
        pseudo_labels.push(*target);
    }
    Ok(PseudoBatch {
        features: out,
        labels: pseudo_labels,
    })
}

/// Concatenates pseudo rows and real rows into one training batch.
pub fn merge(
    pseudo: PseudoBatch,
    real_features: &FeatureMatrix,
    real_labels: &[ClassId],
) -> Result<MergedBatch> {
    if real_features.rows() != real_labels.len() {
        return invalid_arg(format!(
            "{} real rows but {} labels",
            real_features.rows(),
            real_labels.len()
        ));
    }
    if pseudo.features.rows() != pseudo.labels.len() {
        return invalid_arg("pseudo batch rows and labels are misaligned");
    }
    if !pseudo.is_empty() && pseudo.features.cols() != real_features.cols() {
        return invalid_arg(format!(
            "pseudo features have dimension {}, real features {}",
            pseudo.features.cols(),
            real_features.cols()
        ));
    }
    let n_pseudo = pseudo.len();
    let mut data = pseudo.features.as_slice().to_vec();
    data.extend_from_slice(real_features.as_slice());
    let mut labels = pseudo.labels;
    labels.extend_from_slice(real_labels);
    let mut pseudo_mask = vec![true; n_pseudo];
    pseudo_mask.resize(labels.len(), false);
    Ok(MergedBatch {
        features: Matrix::from_vec(labels.len(), real_features.cols(), data)?,
        labels,
        pseudo_mask,
    })
}
