//! The growing linear head and its Adam optimizer.

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::losses::LossValueGrad;
use crate::numerics::{dot, FeatureMatrix, Matrix};
use crate::rng;
use crate::ClassId;

/// Standard deviation of the Gaussian used for fresh classifier rows.
pub const INIT_STD: f64 = 0.01;

/// Half-open interval of class ids `[start, end)` owned by one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRange {
    pub start: ClassId,
    pub end: ClassId,
}

impl ClassRange {
    pub fn new(start: ClassId, end: ClassId) -> Self {
        debug_assert!(start <= end);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, class: ClassId) -> bool {
        (self.start..self.end).contains(&class)
    }

    pub fn iter(&self) -> std::ops::Range<ClassId> {
        self.start..self.end
    }
}

/// Linear head `logits = W f + b` whose rows grow one task at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalClassifier {
    weights: Matrix,
    bias: Vec<f64>,
    task_ranges: Vec<ClassRange>,
}

impl IncrementalClassifier {
    /// A head over `classes` classes of `dim`-dimensional features, with a
    /// single task range `[0, classes)`.
    pub fn new(dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return invalid_arg(format!(
                "classifier needs dim >= 1 and classes >= 1, got dim={dim}, classes={classes}"
            ));
        }
        let mut rng = rng::stream(seed, "classifier-init", &[]);
        let weights = Matrix::from_vec(
            classes,
            dim,
            rng::normal_vec(&mut rng, classes * dim, INIT_STD),
        )?;
        Ok(Self {
            weights,
            bias: vec![0.0; classes],
            task_ranges: vec![ClassRange::new(0, classes as ClassId)],
        })
    }

    /// Builds a head from explicit parameters with a single task range.
    pub fn from_parameters(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 || bias.len() != weights.rows() {
            return invalid_arg(format!(
                "weights {}x{} and bias of length {} do not form a classifier",
                weights.rows(),
                weights.cols(),
                bias.len()
            ));
        }
        let classes = weights.rows() as ClassId;
        Ok(Self {
            weights,
            bias,
            task_ranges: vec![ClassRange::new(0, classes)],
        })
    }

    /// Appends `new_classes` rows and a matching task range. Existing rows
    /// are left bitwise untouched.
    pub fn expand(&mut self, new_classes: usize, seed: u64) -> Result<ClassRange> {
        if new_classes == 0 {
            return invalid_arg("expand needs at least one new class");
        }
        let mut rng = rng::stream(seed, "classifier-expand", &[self.task_ranges.len() as u64]);
        for _ in 0..new_classes {
            let w = rng::normal_vec(&mut rng, self.dim(), INIT_STD);
            self.weights.push_row(&w)?;
            self.bias.push(0.0);
        }
        let start = self.task_ranges.last().map_or(0, |r| r.end);
        let range = ClassRange::new(start, start + new_classes as ClassId);
        self.task_ranges.push(range);
        Ok(range)
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn task_ranges(&self) -> &[ClassRange] {
        &self.task_ranges
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    /// Logit of `class` for a single feature vector.
    #[inline]
    pub fn logit(&self, class: ClassId, feature: &[f64]) -> f64 {
        let c = class as usize;
        dot(self.weights.row(c), feature) + self.bias[c]
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.cols() != self.dim() {
            return invalid_arg(format!(
                "features have dimension {}, classifier expects {}",
                features.cols(),
                self.dim()
            ));
        }
        Ok(())
    }

    /// Row `i` of the result is `W f_i + b`.
    pub fn logits(&self, features: &FeatureMatrix) -> Result<Matrix> {
        self.check_dim(features)?;
        let classes = self.num_classes();
        let mut out = Matrix::zeros(features.rows(), classes);
        for (i, f) in features.iter_rows().enumerate() {
            for (c, slot) in out.row_mut(i).iter_mut().enumerate() {
                *slot = self.logit(c as ClassId, f);
            }
        }
        Ok(out)
    }

    /// Argmax over all logits; ties resolve to the smallest class id.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<ClassId>> {
        let logits = self.logits(features)?;
        Ok(logits.iter_rows().map(argmax).collect())
    }

    /// One Adam update of `W` and `b` from `grads`.
    pub fn adam_step(&mut self, grads: &LossValueGrad, state: &mut AdamState) -> Result<()> {
        if grads.grad_w.rows() != self.weights.rows()
            || grads.grad_w.cols() != self.weights.cols()
            || grads.grad_b.len() != self.bias.len()
        {
            return invalid_arg(format!(
                "gradient shape {}x{} (+{}) does not match classifier {}x{} (+{})",
                grads.grad_w.rows(),
                grads.grad_w.cols(),
                grads.grad_b.len(),
                self.weights.rows(),
                self.weights.cols(),
                self.bias.len()
            ));
        }
        state.step(&mut [
            (self.weights.as_mut_slice(), grads.grad_w.as_slice()),
            (self.bias.as_mut_slice(), grads.grad_b.as_slice()),
        ])
    }
}

/// Index of the largest value; the first one wins ties.
pub(crate) fn argmax(values: &[f64]) -> ClassId {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best as ClassId
}

/// Adam moment estimates for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(num_params: usize, lr: f64) -> Result<Self> {
        Self::with_hyperparameters(
            num_params,
            lr,
            Self::DEFAULT_BETA1,
            Self::DEFAULT_BETA2,
            Self::DEFAULT_EPS,
        )
    }

    pub fn for_classifier(clf: &IncrementalClassifier, lr: f64) -> Result<Self> {
        Self::new(clf.num_parameters(), lr)
    }

    pub fn with_hyperparameters(
        num_params: usize,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return invalid_arg(format!("learning rate must be positive, got {lr}"));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return invalid_arg(format!("betas must lie in [0, 1), got {beta1}, {beta2}"));
        }
        if !(eps > 0.0) {
            return invalid_arg(format!("eps must be positive, got {eps}"));
        }
        Ok(Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step_count: 0,
            lr,
            beta1,
            beta2,
            eps,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one bias-corrected Adam update to every `(params, grads)`
    /// group, treated as consecutive segments of one flat vector.
    pub fn step(&mut self, groups: &mut [(&mut [f64], &[f64])]) -> Result<()> {
        let total: usize = groups.iter().map(|(p, _)| p.len()).sum();
        if total != self.m.len() || groups.iter().any(|(p, g)| p.len() != g.len()) {
            return invalid_arg(format!(
                "Adam state holds {} parameters, update supplied {total}",
                self.m.len()
            ));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let mut offset = 0;
        for (params, grads) in groups.iter_mut() {
            let m = &mut self.m[offset..offset + params.len()];
            let v = &mut self.v[offset..offset + params.len()];
            for (((p, g), m), v) in params.iter_mut().zip(grads.iter()).zip(m).zip(v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            offset += params.len();
        }
        Ok(())
    }
}
