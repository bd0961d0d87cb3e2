//! Independent reference implementations and random instance builders
//! shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use pgpfr_core::classifier::{ClassRange, IncrementalClassifier};
use pgpfr_core::losses::LossValueGrad;
use pgpfr_core::numerics::Matrix;
use pgpfr_core::prototypes::{ClassStatistics, PrototypeStore};
use pgpfr_core::replay::MergedBatch;
use pgpfr_core::ClassId;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Gradient magnitudes below this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            // Box-Muller, kept local so the oracle shares nothing with the crate
            let u1: f64 = rng.random_range(1e-12..1.0);
            let u2: f64 = rng.random::<f64>();
            scale * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect()
}

pub fn random_classifier(
    rng: &mut ChaCha8Rng,
    classes: usize,
    dim: usize,
) -> IncrementalClassifier {
    let w = Matrix::from_vec(classes, dim, gauss(rng, classes * dim, 0.7)).unwrap();
    IncrementalClassifier::from_parameters(w, gauss(rng, classes, 0.5)).unwrap()
}

/// `A A^T / dim` for a random `A`: symmetric positive semi-definite.
pub fn random_psd(rng: &mut ChaCha8Rng, dim: usize) -> Matrix {
    let a = gauss(rng, dim * dim, 1.0);
    let mut c = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            let s: f64 = (0..dim).map(|t| a[i * dim + t] * a[j * dim + t]).sum();
            c.as_mut_slice()[i * dim + j] = s / dim as f64;
        }
    }
    c
}

pub fn store_from(entries: Vec<(ClassId, Vec<f64>, Matrix)>) -> PrototypeStore {
    let stats: BTreeMap<ClassId, ClassStatistics> = entries
        .into_iter()
        .map(|(c, prototype, covariance)| {
            (
                c,
                ClassStatistics {
                    prototype,
                    covariance,
                    count: 20,
                },
            )
        })
        .collect();
    let mut store = PrototypeStore::new();
    store.register(stats).unwrap();
    store
}

/// Store of classes `0..n_old` with random prototypes and PSD covariances.
pub fn random_store(rng: &mut ChaCha8Rng, n_old: usize, dim: usize) -> PrototypeStore {
    store_from(
        (0..n_old)
            .map(|k| (k as ClassId, gauss(rng, dim, 1.5), random_psd(rng, dim)))
            .collect(),
    )
}

pub fn random_merged(
    rng: &mut ChaCha8Rng,
    rows: usize,
    dim: usize,
    n_old: usize,
    classes: usize,
) -> MergedBatch {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut mask = Vec::new();
    for _ in 0..rows {
        data.extend(gauss(rng, dim, 1.5));
        let pseudo = rng.random_bool(0.5);
        let bound = if pseudo { n_old } else { classes };
        labels.push(rng.random_range(0..bound) as ClassId);
        mask.push(pseudo);
    }
    MergedBatch {
        features: Matrix::from_vec(rows, dim, data).unwrap(),
        labels,
        pseudo_mask: mask,
    }
}

fn logit(w: &Matrix, b: &[f64], c: usize, x: &[f64]) -> f64 {
    let mut z = b[c];
    for (j, xj) in x.iter().enumerate() {
        z += w.as_slice()[c * w.cols() + j] * xj;
    }
    z
}

/// `-ln(exp(z[t]) / sum exp(z))` computed directly.
fn naive_nll(z: &[f64], t: usize) -> f64 {
    let denom: f64 = z.iter().map(|v| v.exp()).sum();
    -(z[t].exp() / denom).ln()
}

pub fn replay_oracle(
    batch: &MergedBatch,
    clf: &IncrementalClassifier,
    n_old: usize,
    temperature: f64,
) -> f64 {
    let (w, b) = (clf.weights(), clf.bias());
    let mut total = 0.0;
    for i in 0..batch.labels.len() {
        let x = batch.features.row(i);
        let label = batch.labels[i] as usize;
        let z: Vec<f64> = if batch.pseudo_mask[i] {
            (0..n_old)
                .map(|c| logit(w, b, c, x) / temperature)
                .collect()
        } else {
            (0..clf.num_classes()).map(|c| logit(w, b, c, x)).collect()
        };
        total += naive_nll(&z, label);
    }
    total / batch.labels.len() as f64
}

pub fn vpr_oracle(store: &PrototypeStore, clf: &IncrementalClassifier, gamma: f64) -> f64 {
    let (w, b) = (clf.weights(), clf.bias());
    let ids = store.class_ids().to_vec();
    let dim = clf.dim();
    let mut total = 0.0;
    for (kp, &k) in ids.iter().enumerate() {
        let st = store.get(k).unwrap();
        let mut z = Vec::new();
        for &c in &ids {
            let diff: Vec<f64> = (0..dim)
                .map(|j| w.row(c as usize)[j] - w.row(k as usize)[j])
                .collect();
            let mut q = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    q += diff[i] * st.covariance.row(i)[j] * diff[j];
                }
            }
            z.push(logit(w, b, c as usize, &st.prototype) + gamma * q);
        }
        total += naive_nll(&z, kp);
    }
    total / ids.len() as f64
}

pub fn tce_oracle(
    features: &Matrix,
    labels: &[ClassId],
    clf: &IncrementalClassifier,
    range: ClassRange,
) -> f64 {
    let (w, b) = (clf.weights(), clf.bias());
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let z: Vec<f64> = range
            .iter()
            .map(|c| logit(w, b, c as usize, features.row(i)))
            .collect();
        total += naive_nll(&z, (l - range.start) as usize);
    }
    total / labels.len() as f64
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Largest relative error between `grads` and central differences of `f`
/// over every weight and bias of `clf`.
pub fn fd_max_rel_err<F>(clf: &IncrementalClassifier, grads: &LossValueGrad, f: F) -> f64
where
    F: Fn(&IncrementalClassifier) -> f64,
{
    let mut worst: f64 = 0.0;
    let n_w = clf.weights().as_slice().len();
    for idx in 0..n_w + clf.bias().len() {
        let eval = |delta: f64| {
            let mut probe = clf.clone();
            if idx < n_w {
                probe.weights_mut().as_mut_slice()[idx] += delta;
            } else {
                probe.bias_mut()[idx - n_w] += delta;
            }
            f(&probe)
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        let analytic = if idx < n_w {
            grads.grad_w.as_slice()[idx]
        } else {
            grads.grad_b[idx - n_w]
        };
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}
