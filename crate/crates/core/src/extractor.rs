//! Pluggable feature extractor: trained jointly with the head on the first
//! task, then frozen for the rest of the experiment.

use serde::{Deserialize, Serialize};

use crate::classifier::{AdamState, IncrementalClassifier};
use crate::dataio::{batches, TaskDataset};
use crate::engine::TrainConfig;
use crate::error::{invalid_arg, invalid_state, Result};
use crate::losses::LossValueGrad;
use crate::numerics::{dot, log_sum_exp, softmax_in_place, FeatureMatrix, Matrix};
use crate::rng;
use crate::ClassId;

/// Standard deviation of the Gaussian used for extractor weights.
pub const INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractorKind {
    /// `f(x) = x`.
    Identity,
    /// `f(x) = W x + b`.
    Linear,
    /// `f(x) = W2 relu(W1 x + b1) + b2`.
    Mlp1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub kind: ExtractorKind,
    pub input_dim: usize,
    pub feature_dim: usize,
    /// Width of the hidden layer; only read for [`ExtractorKind::Mlp1`].
    #[serde(default)]
    pub hidden_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ExtractorSpec {
    pub fn identity(dim: usize) -> Self {
        Self {
            kind: ExtractorKind::Identity,
            input_dim: dim,
            feature_dim: dim,
            hidden_dim: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 {
            return invalid_arg("extractor dimensions must be at least 1");
        }
        match self.kind {
            ExtractorKind::Identity if self.input_dim != self.feature_dim => invalid_arg(format!(
                "identity extractor needs input_dim == feature_dim, got {} and {}",
                self.input_dim, self.feature_dim
            )),
            ExtractorKind::Mlp1 if self.hidden_dim == 0 => {
                invalid_arg("mlp1 extractor needs hidden_dim >= 1")
            }
            _ => Ok(()),
        }
    }
}

/// Parameter tensors per extractor kind. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExtractorParams {
    Identity,
    Linear {
        w: Matrix,
        b: Vec<f64>,
    },
    Mlp1 {
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
    },
}

impl ExtractorParams {
    fn zeros_like(&self) -> Self {
        match self {
            Self::Identity => Self::Identity,
            Self::Linear { w, b } => Self::Linear {
                w: Matrix::zeros(w.rows(), w.cols()),
                b: vec![0.0; b.len()],
            },
            Self::Mlp1 { w1, b1, w2, b2 } => Self::Mlp1 {
                w1: Matrix::zeros(w1.rows(), w1.cols()),
                b1: vec![0.0; b1.len()],
                w2: Matrix::zeros(w2.rows(), w2.cols()),
                b2: vec![0.0; b2.len()],
            },
        }
    }

    /// Flat views in a fixed order: weights before biases, layer by layer.
    pub fn segments(&self) -> Vec<&[f64]> {
        match self {
            Self::Identity => Vec::new(),
            Self::Linear { w, b } => vec![w.as_slice(), b],
            Self::Mlp1 { w1, b1, w2, b2 } => vec![w1.as_slice(), b1, w2.as_slice(), b2],
        }
    }

    pub fn segments_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Self::Identity => Vec::new(),
            Self::Linear { w, b } => vec![w.as_mut_slice(), b],
            Self::Mlp1 { w1, b1, w2, b2 } => vec![w1.as_mut_slice(), b1, w2.as_mut_slice(), b2],
        }
    }

    pub fn len(&self) -> usize {
        self.segments().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extractor {
    spec: ExtractorSpec,
    params: ExtractorParams,
    frozen: bool,
}

impl Extractor {
    pub fn new(spec: ExtractorSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(spec.seed, "extractor-init", &[]);
        let mut gaussian = |rows: usize, cols: usize| {
            Matrix::from_vec(rows, cols, rng::normal_vec(&mut rng, rows * cols, INIT_STD))
        };
        let params = match spec.kind {
            ExtractorKind::Identity => ExtractorParams::Identity,
            ExtractorKind::Linear => ExtractorParams::Linear {
                w: gaussian(spec.feature_dim, spec.input_dim)?,
                b: vec![0.0; spec.feature_dim],
            },
            ExtractorKind::Mlp1 => {
                let w1 = gaussian(spec.hidden_dim, spec.input_dim)?;
                let w2 = gaussian(spec.feature_dim, spec.hidden_dim)?;
                ExtractorParams::Mlp1 {
                    w1,
                    b1: vec![0.0; spec.hidden_dim],
                    w2,
                    b2: vec![0.0; spec.feature_dim],
                }
            }
        };
        Ok(Self {
            spec,
            params,
            frozen: false,
        })
    }

    /// An unfrozen extractor with explicit parameters, shape-checked
    /// against `spec`.
    pub fn from_parameters(spec: ExtractorSpec, params: ExtractorParams) -> Result<Self> {
        spec.validate()?;
        let expected = Self::new(ExtractorSpec {
            seed: 0,
            ..spec.clone()
        })?
        .params;
        let shapes_match = std::mem::discriminant(&expected) == std::mem::discriminant(&params)
            && expected
                .segments()
                .iter()
                .zip(params.segments())
                .all(|(a, b)| a.len() == b.len());
        if !shapes_match {
            return invalid_arg("extractor parameters do not match the spec");
        }
        Ok(Self {
            spec,
            params,
            frozen: false,
        })
    }

    pub fn spec(&self) -> &ExtractorSpec {
        &self.spec
    }

    pub fn params(&self) -> &ExtractorParams {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the extractor as frozen. Embedding is unaffected; training is
    /// rejected from now on.
    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Little-endian bytes of every parameter, for bitwise comparisons.
    pub fn parameter_snapshot(&self) -> Vec<u8> {
        self.params
            .segments()
            .iter()
            .flat_map(|s| s.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.spec.input_dim {
            return invalid_arg(format!(
                "input has dimension {}, extractor expects {}",
                x.len(),
                self.spec.input_dim
            ));
        }
        Ok(match &self.params {
            ExtractorParams::Identity => x.to_vec(),
            ExtractorParams::Linear { w, b } => affine(w, b, x),
            ExtractorParams::Mlp1 { w1, b1, w2, b2 } => {
                let mut hidden = affine(w1, b1, x);
                hidden.iter_mut().for_each(|h| *h = h.max(0.0));
                affine(w2, b2, &hidden)
            }
        })
    }

    pub fn embed_matrix(&self, inputs: &Matrix) -> Result<FeatureMatrix> {
        if inputs.cols() != self.spec.input_dim {
            return invalid_arg(format!(
                "inputs have dimension {}, extractor expects {}",
                inputs.cols(),
                self.spec.input_dim
            ));
        }
        if let ExtractorParams::Identity = self.params {
            return Ok(inputs.clone());
        }
        let mut out = Matrix::zeros(inputs.rows(), self.spec.feature_dim);
        for (i, x) in inputs.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.embed(x)?);
        }
        Ok(out)
    }

    /// Mean cross-entropy of `head(self(x))` over all head classes, with
    /// gradients for both the extractor and the head.
    pub fn cross_entropy_with_grads(
        &self,
        head: &IncrementalClassifier,
        inputs: &Matrix,
        labels: &[ClassId],
    ) -> Result<(f64, ExtractorParams, LossValueGrad)> {
        if inputs.rows() != labels.len() || inputs.is_empty() {
            return invalid_arg(format!(
                "{} input rows with {} labels",
                inputs.rows(),
                labels.len()
            ));
        }
        if head.dim() != self.spec.feature_dim {
            return invalid_arg(format!(
                "head dimension {} does not match feature dimension {}",
                head.dim(),
                self.spec.feature_dim
            ));
        }
        if let Some(bad) = labels.iter().find(|l| **l as usize >= head.num_classes()) {
            return invalid_arg(format!("label {bad} has no classifier row"));
        }
        let scale = 1.0 / labels.len() as f64;
        let mut ext_grads = self.params.zeros_like();
        let mut head_grads = LossValueGrad::zeros(head.num_classes(), head.dim());
        let mut probs = vec![0.0; head.num_classes()];
        let mut total = 0.0;
        for (x, &label) in inputs.iter_rows().zip(labels) {
            // forward
            let (hidden_pre, feature) = match &self.params {
                ExtractorParams::Identity => (Vec::new(), x.to_vec()),
                ExtractorParams::Linear { w, b } => (Vec::new(), affine(w, b, x)),
                ExtractorParams::Mlp1 { w1, b1, w2, b2 } => {
                    let pre = affine(w1, b1, x);
                    let hidden: Vec<f64> = pre.iter().map(|h| h.max(0.0)).collect();
                    let f = affine(w2, b2, &hidden);
                    (pre, f)
                }
            };
            for (c, p) in probs.iter_mut().enumerate() {
                *p = head.logit(c as ClassId, &feature);
            }
            total += log_sum_exp(&probs) - probs[label as usize];
            softmax_in_place(&mut probs);

            // backward through the head
            let mut d_feature = vec![0.0; feature.len()];
            for (c, p) in probs.iter().enumerate() {
                let g = scale * (p - if c == label as usize { 1.0 } else { 0.0 });
                for ((gw, f), (df, w)) in head_grads
                    .grad_w
                    .row_mut(c)
                    .iter_mut()
                    .zip(&feature)
                    .zip(d_feature.iter_mut().zip(head.weights().row(c)))
                {
                    *gw += g * f;
                    *df += g * w;
                }
                head_grads.grad_b[c] += g;
            }

            // backward through the extractor
            match (&self.params, &mut ext_grads) {
                (ExtractorParams::Identity, _) => {}
                (ExtractorParams::Linear { .. }, ExtractorParams::Linear { w: gw, b: gb }) => {
                    outer_accumulate(gw, gb, &d_feature, x);
                }
                (
                    ExtractorParams::Mlp1 { w2, .. },
                    ExtractorParams::Mlp1 {
                        w1: gw1,
                        b1: gb1,
                        w2: gw2,
                        b2: gb2,
                    },
                ) => {
                    let hidden: Vec<f64> = hidden_pre.iter().map(|h| h.max(0.0)).collect();
                    outer_accumulate(gw2, gb2, &d_feature, &hidden);
                    let mut d_pre = vec![0.0; hidden.len()];
                    for (j, dp) in d_pre.iter_mut().enumerate() {
                        if hidden_pre[j] > 0.0 {
                            *dp = (0..d_feature.len())
                                .map(|i| w2[(i, j)] * d_feature[i])
                                .sum();
                        }
                    }
                    outer_accumulate(gw1, gb1, &d_pre, x);
                }
                _ => unreachable!("gradient layout mirrors parameter layout"),
            }
        }
        head_grads.value = total * scale;
        Ok((total * scale, ext_grads, head_grads))
    }

    /// Jointly trains the extractor and `head` with plain cross-entropy on
    /// the task's training split. Fails on a frozen extractor.
    pub fn train_task0(
        &mut self,
        data: &TaskDataset,
        head: &mut IncrementalClassifier,
        cfg: &TrainConfig,
    ) -> Result<()> {
        if self.frozen {
            return invalid_state("extractor is frozen and cannot be trained");
        }
        cfg.validate()?;
        let mut ext_state = AdamState::new(self.params.len(), cfg.lr)?;
        let mut head_state = AdamState::for_classifier(head, cfg.lr)?;
        for epoch in 0..cfg.epochs_task0 {
            for batch in batches(data, cfg.batch_size, cfg.seed, epoch as u64)? {
                let inputs = data.train_inputs.select_rows(&batch);
                let labels: Vec<ClassId> = batch.iter().map(|&i| data.train_labels[i]).collect();
                let (_, ext_grads, head_grads) =
                    self.cross_entropy_with_grads(head, &inputs, &labels)?;
                if !self.params.is_empty() {
                    let grad_segments = ext_grads.segments();
                    let mut groups: Vec<(&mut [f64], &[f64])> = self
                        .params
                        .segments_mut()
                        .into_iter()
                        .zip(grad_segments)
                        .collect();
                    ext_state.step(&mut groups)?;
                }
                head.adam_step(&head_grads, &mut head_state)?;
            }
        }
        Ok(())
    }
}

fn affine(w: &Matrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter_rows()
        .zip(b)
        .map(|(row, bias)| dot(row, x) + bias)
        .collect()
}

/// `gw += d x^T`, `gb += d`.
fn outer_accumulate(gw: &mut Matrix, gb: &mut [f64], d: &[f64], x: &[f64]) {
    for (i, di) in d.iter().enumerate() {
        if *di == 0.0 {
            continue;
        }
        for (g, xj) in gw.row_mut(i).iter_mut().zip(x) {
            *g += di * xj;
        }
        gb[i] += di;
    }
}
