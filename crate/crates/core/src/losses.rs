//! Value-and-gradient training losses over the classifier parameters.
//!
//! Every loss is reduced by the mean (over rows, or over old classes for the
//! prototype losses) so that its scale does not depend on batch size.
//!
//! - [`replay_ce_loss`]: cross-entropy over a merged batch. Pseudo rows use a
//!   softmax over the old-class logits divided by the temperature `R`; real
//!   rows use a plain softmax over every visible class.
//! - [`proto_loss`]: classify each stored prototype among the old classes.
//! - [`vpr_loss`]: the prototype loss with each competing logit inflated by
//!   `gamma * (w_c - w_k)^T C_k (w_c - w_k)`.
//! - [`tce_loss`]: cross-entropy restricted to the current task's slice of
//!   the shared head.

use serde::{Deserialize, Serialize};

use crate::classifier::{ClassRange, IncrementalClassifier};
use crate::error::{invalid_arg, invalid_state, Result};
use crate::numerics::{log_sum_exp, softmax_in_place, FeatureMatrix, Matrix};
use crate::prototypes::PrototypeStore;
use crate::replay::MergedBatch;
use crate::ClassId;

fn default_temperature() -> f64 {
    0.3
}

fn default_gamma() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

/// Loss hyperparameters and the per-component ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Sharpening temperature applied to pseudo-row logits.
    #[serde(rename = "R", default = "default_temperature")]
    pub temperature: f64,
    /// Weight of the covariance penalty in the variational prototype loss.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Generate pseudo features from batch prototypes.
    #[serde(rename = "enable_P", default = "yes")]
    pub enable_pseudo: bool,
    /// Variational prototype replay.
    #[serde(rename = "enable_V", default = "yes")]
    pub enable_variational: bool,
    /// Truncated cross-entropy over the current task's classes.
    #[serde(rename = "enable_T", default = "yes")]
    pub enable_truncated: bool,
    /// Divide pseudo-row logits by `R`; off means temperature 1.
    #[serde(default = "yes")]
    pub enable_sharpening: bool,
    /// Translate by in-batch class means; off uses whole-task class means.
    #[serde(default = "yes")]
    pub enable_batch_proto: bool,
    /// Plain prototype replay (no covariance penalty).
    #[serde(rename = "enable_Proto", default)]
    pub enable_proto: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            gamma: default_gamma(),
            enable_pseudo: true,
            enable_variational: true,
            enable_truncated: true,
            enable_sharpening: true,
            enable_batch_proto: true,
            enable_proto: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return invalid_arg(format!(
                "temperature R must be positive, got {}",
                self.temperature
            ));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return invalid_arg(format!("gamma must be non-negative, got {}", self.gamma));
        }
        Ok(())
    }

    /// Temperature actually applied to pseudo rows.
    pub fn pseudo_temperature(&self) -> f64 {
        if self.enable_sharpening {
            self.temperature
        } else {
            1.0
        }
    }

    pub fn is_enabled(&self, kind: LossKind) -> bool {
        match kind {
            // Real rows are always classified; `enable_pseudo` only decides
            // whether pseudo rows are merged into the batch upstream.
            LossKind::Replay => true,
            LossKind::Prototype => self.enable_proto,
            LossKind::Variational => self.enable_variational,
            LossKind::Truncated => self.enable_truncated,
        }
    }
}

/// Which loss a [`LossValueGrad`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Replay,
    Prototype,
    Variational,
    Truncated,
}

/// A scalar loss together with its gradient w.r.t. `W` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValueGrad {
    pub value: f64,
    pub grad_w: Matrix,
    pub grad_b: Vec<f64>,
}

impl LossValueGrad {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self {
            value: 0.0,
            grad_w: Matrix::zeros(classes, dim),
            grad_b: vec![0.0; classes],
        }
    }

    fn for_classifier(clf: &IncrementalClassifier) -> Self {
        Self::zeros(clf.num_classes(), clf.dim())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.grad_w.rows() == other.grad_w.rows()
            && self.grad_w.cols() == other.grad_w.cols()
            && self.grad_b.len() == other.grad_b.len()
    }

    fn scale(&mut self, factor: f64) {
        self.value *= factor;
        self.grad_w
            .as_mut_slice()
            .iter_mut()
            .for_each(|g| *g *= factor);
        self.grad_b.iter_mut().for_each(|g| *g *= factor);
    }

    /// Finite check over value and every gradient entry.
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
            && self.grad_w.as_slice().iter().all(|g| g.is_finite())
            && self.grad_b.iter().all(|g| g.is_finite())
    }
}

/// Adds `-log softmax(z / temperature)[label]` for `z_c = w_c . f + b_c`,
/// `c` ranging over `classes`, into `out`. Returns the loss term.
fn accumulate_ce(
    clf: &IncrementalClassifier,
    feature: &[f64],
    classes: ClassRange,
    label: ClassId,
    temperature: f64,
    out: &mut LossValueGrad,
    scratch: &mut Vec<f64>,
) -> f64 {
    scratch.clear();
    scratch.extend(classes.iter().map(|c| clf.logit(c, feature) / temperature));
    let target = (label - classes.start) as usize;
    let loss = log_sum_exp(scratch) - scratch[target];
    softmax_in_place(scratch);
    for (offset, c) in classes.iter().enumerate() {
        let indicator = if offset == target { 1.0 } else { 0.0 };
        let g = (scratch[offset] - indicator) / temperature;
        let row = c as usize;
        for (gw, x) in out.grad_w.row_mut(row).iter_mut().zip(feature) {
            *gw += g * x;
        }
        out.grad_b[row] += g;
    }
    loss
}

/// Cross-entropy over a merged pseudo + real batch.
///
/// Pseudo rows are scored among the first `n_old` classes with logits
/// divided by [`LossConfig::pseudo_temperature`]; real rows among every
/// class of `clf`. The value is the mean over all rows (0 for an empty batch).
pub fn replay_ce_loss(
    batch: &MergedBatch,
    clf: &IncrementalClassifier,
    n_old: usize,
    cfg: &LossConfig,
) -> Result<LossValueGrad> {
    cfg.validate()?;
    if batch.features.cols() != clf.dim() {
        return invalid_arg(format!(
            "batch features have dimension {}, classifier expects {}",
            batch.features.cols(),
            clf.dim()
        ));
    }
    if n_old > clf.num_classes() {
        return invalid_arg(format!(
            "{n_old} old classes exceed the classifier's {} rows",
            clf.num_classes()
        ));
    }
    let visible = ClassRange::new(0, clf.num_classes() as ClassId);
    let old = ClassRange::new(0, n_old as ClassId);
    for (i, (&label, &pseudo)) in batch.labels.iter().zip(&batch.pseudo_mask).enumerate() {
        let range = if pseudo { old } else { visible };
        if !range.contains(label) {
            return invalid_arg(format!(
                "row {i} ({}) has label {label} outside [{}, {})",
                if pseudo { "pseudo" } else { "real" },
                range.start,
                range.end
            ));
        }
    }

    let mut out = LossValueGrad::for_classifier(clf);
    let rows = batch.features.rows();
    if rows == 0 {
        return Ok(out);
    }
    let mut scratch = Vec::with_capacity(clf.num_classes());
    let pseudo_temperature = cfg.pseudo_temperature();
    let mut total = 0.0;
    for ((feature, &label), &pseudo) in batch
        .features
        .iter_rows()
        .zip(&batch.labels)
        .zip(&batch.pseudo_mask)
    {
        total += if pseudo {
            accumulate_ce(
                clf,
                feature,
                old,
                label,
                pseudo_temperature,
                &mut out,
                &mut scratch,
            )
        } else {
            accumulate_ce(clf, feature, visible, label, 1.0, &mut out, &mut scratch)
        };
    }
    out.value = total;
    out.scale(1.0 / rows as f64);
    Ok(out)
}

fn check_store(store: &PrototypeStore, clf: &IncrementalClassifier) -> Result<()> {
    if store.is_empty() {
        return invalid_state("prototype losses need a non-empty store");
    }
    if store.dim() != Some(clf.dim()) {
        return invalid_arg(format!(
            "prototype dimension {:?} does not match classifier dimension {}",
            store.dim(),
            clf.dim()
        ));
    }
    if let Some(&bad) = store
        .class_ids()
        .iter()
        .find(|&&c| c as usize >= clf.num_classes())
    {
        return invalid_arg(format!("stored class {bad} has no classifier row"));
    }
    Ok(())
}

/// Mean over stored classes `k` of `-log softmax_c(w_c . mu_k + b_c)[k]`,
/// the softmax running over stored classes only.
pub fn proto_loss(store: &PrototypeStore, clf: &IncrementalClassifier) -> Result<LossValueGrad> {
    check_store(store, clf)?;
    let classes = store.class_ids();
    let mut out = LossValueGrad::for_classifier(clf);
    let mut logits = vec![0.0; classes.len()];
    for (k_pos, &k) in classes.iter().enumerate() {
        let mu = &store.get(k).expect("listed class is stored").prototype;
        for (slot, &c) in logits.iter_mut().zip(classes) {
            *slot = clf.logit(c, mu);
        }
        out.value += log_sum_exp(&logits) - logits[k_pos];
        softmax_in_place(&mut logits);
        for (c_pos, &c) in classes.iter().enumerate() {
            let g = logits[c_pos] - if c_pos == k_pos { 1.0 } else { 0.0 };
            let row = c as usize;
            for (gw, m) in out.grad_w.row_mut(row).iter_mut().zip(mu) {
                *gw += g * m;
            }
            out.grad_b[row] += g;
        }
    }
    out.scale(1.0 / classes.len() as f64);
    Ok(out)
}

/// Variational prototype replay: like [`proto_loss`], but every competing
/// logit for prototype `k` carries the extra term
/// `gamma * (w_c - w_k)^T C_k (w_c - w_k)`, which is zero for `c = k`.
pub fn vpr_loss(
    store: &PrototypeStore,
    clf: &IncrementalClassifier,
    cfg: &LossConfig,
) -> Result<LossValueGrad> {
    cfg.validate()?;
    check_store(store, clf)?;
    let gamma = cfg.gamma;
    let classes = store.class_ids();
    let dim = clf.dim();
    let mut out = LossValueGrad::for_classifier(clf);
    let mut logits = vec![0.0; classes.len()];
    // diffs[c_pos] = w_c - w_k, sym[c_pos] = (C_k + C_k^T)(w_c - w_k)
    let mut diffs = Matrix::zeros(classes.len(), dim);
    let mut sym = Matrix::zeros(classes.len(), dim);
    for (k_pos, &k) in classes.iter().enumerate() {
        let stats = store.get(k).expect("listed class is stored");
        let (mu, cov) = (&stats.prototype, &stats.covariance);
        let w_k = clf.weights().row(k as usize);
        for (c_pos, &c) in classes.iter().enumerate() {
            let w_c = clf.weights().row(c as usize);
            let diff = diffs.row_mut(c_pos);
            for ((d, a), b) in diff.iter_mut().zip(w_c).zip(w_k) {
                *d = a - b;
            }
            let diff = diffs.row(c_pos).to_vec();
            let mut penalty = 0.0;
            for i in 0..dim {
                let mut s = 0.0;
                for j in 0..dim {
                    s += (cov[(i, j)] + cov[(j, i)]) * diff[j];
                }
                sym[(c_pos, i)] = s;
                penalty += 0.5 * diff[i] * s;
            }
            logits[c_pos] = clf.logit(c, mu) + gamma * penalty;
        }
        out.value += log_sum_exp(&logits) - logits[k_pos];
        softmax_in_place(&mut logits);
        let k_row = k as usize;
        for (c_pos, &c) in classes.iter().enumerate() {
            let p = logits[c_pos];
            let g = p - if c_pos == k_pos { 1.0 } else { 0.0 };
            let row = c as usize;
            for (gw, m) in out.grad_w.row_mut(row).iter_mut().zip(mu) {
                *gw += g * m;
            }
            out.grad_b[row] += g;
            if gamma != 0.0 && c_pos != k_pos {
                // d penalty / d w_c = +sym, d penalty / d w_k = -sym
                for i in 0..dim {
                    let contrib = p * gamma * sym[(c_pos, i)];
                    out.grad_w[(row, i)] += contrib;
                    out.grad_w[(k_row, i)] -= contrib;
                }
            }
        }
    }
    out.scale(1.0 / classes.len() as f64);
    Ok(out)
}

/// Cross-entropy with the softmax restricted to `task_range`'s logits; only
/// those rows of `W` and `b` receive gradient. Mean over rows.
pub fn tce_loss(
    features: &FeatureMatrix,
    labels: &[ClassId],
    clf: &IncrementalClassifier,
    task_range: ClassRange,
) -> Result<LossValueGrad> {
    if features.rows() != labels.len() {
        return invalid_arg(format!(
            "{} feature rows but {} labels",
            features.rows(),
            labels.len()
        ));
    }
    if features.cols() != clf.dim() {
        return invalid_arg(format!(
            "features have dimension {}, classifier expects {}",
            features.cols(),
            clf.dim()
        ));
    }
    if task_range.is_empty() || task_range.end as usize > clf.num_classes() {
        return invalid_arg(format!(
            "task range [{}, {}) is not a non-empty slice of {} classes",
            task_range.start,
            task_range.end,
            clf.num_classes()
        ));
    }
    if let Some((i, bad)) = labels
        .iter()
        .enumerate()
        .find(|(_, l)| !task_range.contains(**l))
    {
        return invalid_arg(format!(
            "row {i} has label {bad} outside task range [{}, {})",
            task_range.start, task_range.end
        ));
    }
    let mut out = LossValueGrad::for_classifier(clf);
    if labels.is_empty() {
        return Ok(out);
    }
    let mut scratch = Vec::with_capacity(task_range.len());
    let mut total = 0.0;
    for (feature, &label) in features.iter_rows().zip(labels) {
        total += accumulate_ce(clf, feature, task_range, label, 1.0, &mut out, &mut scratch);
    }
    out.value = total;
    out.scale(1.0 / labels.len() as f64);
    Ok(out)
}

/// Unweighted sum of the enabled components.
pub fn total_loss(
    components: &[(LossKind, LossValueGrad)],
    cfg: &LossConfig,
) -> Result<LossValueGrad> {
    let Some((_, first)) = components.first() else {
        return invalid_arg("total loss of no components");
    };
    let mut out = LossValueGrad::zeros(first.grad_w.rows(), first.grad_w.cols());
    for (kind, part) in components {
        if !out.same_shape(part) {
            return invalid_arg(format!(
                "{kind:?} gradient shape does not match the other components"
            ));
        }
        if !cfg.is_enabled(*kind) {
            continue;
        }
        out.value += part.value;
        for (a, b) in out
            .grad_w
            .as_mut_slice()
            .iter_mut()
            .zip(part.grad_w.as_slice())
        {
            *a += b;
        }
        for (a, b) in out.grad_b.iter_mut().zip(&part.grad_b) {
            *a += b;
        }
    }
    Ok(out)
}
