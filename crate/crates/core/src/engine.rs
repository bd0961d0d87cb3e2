//! Experiment orchestration.
//!
//! Task 0 trains the extractor and head jointly with cross-entropy, then
//! freezes the extractor. Every later task expands the head and re-trains
//! only the head with pseudo-feature replay, prototype replay and the
//! truncated loss. Class statistics are registered at the end of each task.

use serde::{Deserialize, Serialize};

use crate::classifier::{AdamState, ClassRange, IncrementalClassifier};
use crate::dataio::{batches, split_schedule, Dataset, TaskDataset};
use crate::error::{invalid_arg, invalid_state, Result};
use crate::evalmetrics::{accuracy, ifm, MetricsRecord};
use crate::extractor::{Extractor, ExtractorSpec};
use crate::losses::{
    proto_loss, replay_ce_loss, tce_loss, total_loss, vpr_loss, LossConfig, LossKind,
};
use crate::numerics::{FeatureMatrix, Matrix};
use crate::prototypes::{batch_class_prototypes, fit_class_statistics, PrototypeStore};
use crate::replay::{generate_pseudo_batch, generate_pseudo_batch_anchored, merge, PseudoBatch};
use crate::rng;
use crate::ClassId;

/// Which dataset classes go to which task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSchedule {
    pub total_classes: usize,
    /// Classes in the first task.
    pub k: usize,
    /// Classes added by every later task.
    pub d: usize,
    pub n_tasks: usize,
    /// Dataset labels in slot order: slot `s` is `class_order[s]`.
    pub class_order: Vec<u32>,
}

impl TaskSchedule {
    pub fn new(class_order: Vec<u32>, k: usize, d: usize, n_tasks: usize) -> Result<Self> {
        let schedule = Self {
            total_classes: class_order.len(),
            k,
            d,
            n_tasks,
            class_order,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Schedule over the classes of `ds`, in ascending label order or in a
    /// seeded permutation of it.
    pub fn for_dataset(
        ds: &Dataset,
        k: usize,
        d: usize,
        n_tasks: usize,
        order_seed: Option<u64>,
    ) -> Result<Self> {
        let mut order: Vec<u32> = ds.classes().into_iter().collect();
        if let Some(seed) = order_seed {
            use rand::seq::SliceRandom;
            order.shuffle(&mut rng::stream(seed, "class-order", &[]));
        }
        Self::new(order, k, d, n_tasks)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_tasks == 0 {
            return invalid_arg("schedule needs k >= 1 and n_tasks >= 1");
        }
        if self.n_tasks > 1 && self.d == 0 {
            return invalid_arg("incremental tasks need d >= 1");
        }
        if self.class_order.len() != self.total_classes {
            return invalid_arg("class order length differs from total_classes");
        }
        let mut sorted = self.class_order.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.class_order.len() {
            return invalid_arg("class order repeats a class");
        }
        if self.classes_used() > self.total_classes {
            return invalid_arg(format!(
                "schedule needs k + (n_tasks - 1) * d = {} classes but only {} exist",
                self.classes_used(),
                self.total_classes
            ));
        }
        Ok(())
    }

    /// `k + (n_tasks - 1) * d`.
    pub fn classes_used(&self) -> usize {
        self.k + (self.n_tasks - 1) * self.d
    }

    /// Classifier slots owned by `task`.
    pub fn task_range(&self, task: usize) -> ClassRange {
        if task == 0 {
            ClassRange::new(0, self.k as ClassId)
        } else {
            let start = self.k + (task - 1) * self.d;
            ClassRange::new(start as ClassId, (start + self.d) as ClassId)
        }
    }
}

fn default_lr() -> f64 {
    0.001
}

fn default_batch_size() -> usize {
    32
}

fn default_epochs_task0() -> usize {
    150
}

fn default_epochs_incremental() -> usize {
    100
}

/// Optimisation settings shared by every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs_task0")]
    pub epochs_task0: usize,
    #[serde(default = "default_epochs_incremental")]
    pub epochs_incremental: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_task0: default_epochs_task0(),
            epochs_incremental: default_epochs_incremental(),
            batch_size: default_batch_size(),
            lr: default_lr(),
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid_arg("batch_size must be at least 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return invalid_arg(format!("lr must be positive, got {}", self.lr));
        }
        self.loss.validate()
    }
}

/// Everything that survives between tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentState {
    pub extractor: Extractor,
    pub clf: IncrementalClassifier,
    pub store: PrototypeStore,
    pub metrics: Vec<MetricsRecord>,
    /// Embedded test features of every visible class, for evaluation only.
    eval_features: FeatureMatrix,
    eval_labels: Vec<ClassId>,
    first_task: Option<ClassRange>,
}

impl ExperimentState {
    pub fn new(extractor: Extractor, clf: IncrementalClassifier) -> Result<Self> {
        if clf.dim() != extractor.spec().feature_dim {
            return invalid_arg(format!(
                "classifier dimension {} does not match feature dimension {}",
                clf.dim(),
                extractor.spec().feature_dim
            ));
        }
        let dim = clf.dim();
        Ok(Self {
            extractor,
            clf,
            store: PrototypeStore::new(),
            metrics: Vec::new(),
            eval_features: Matrix::empty(dim),
            eval_labels: Vec::new(),
            first_task: None,
        })
    }

    /// Number of classes the head currently scores.
    pub fn visible_classes(&self) -> usize {
        self.clf.num_classes()
    }

    /// Task 0: joint training, freeze, statistics, evaluation.
    pub fn run_task0(&mut self, data: &TaskDataset, cfg: &TrainConfig) -> Result<()> {
        if self.extractor.is_frozen() {
            return invalid_state("task 0 needs an unfrozen extractor");
        }
        if self.first_task.is_some() || !self.store.is_empty() {
            return invalid_state("task 0 has already run");
        }
        if self.clf.num_classes() != data.num_classes()
            || self.clf.task_ranges() != [data.classes]
            || data.classes.start != 0
        {
            return invalid_state(format!(
                "classifier has {} classes but task 0 schedules {}",
                self.clf.num_classes(),
                data.num_classes()
            ));
        }
        self.extractor.train_task0(data, &mut self.clf, cfg)?;
        self.extractor.freeze();
        self.first_task = Some(data.classes);
        self.finish_task(data)
    }

    /// One incremental task: expand, re-train the head only, register the
    /// new classes, evaluate.
    pub fn run_incremental_task(&mut self, data: &TaskDataset, cfg: &TrainConfig) -> Result<()> {
        cfg.validate()?;
        if !self.extractor.is_frozen() {
            return invalid_state("incremental tasks need the extractor frozen after task 0");
        }
        if let Some(c) = data.classes.iter().find(|c| self.store.contains(*c)) {
            return invalid_state(format!("class {c} was already learned in an earlier task"));
        }
        if data.classes.start as usize != self.clf.num_classes() {
            return invalid_state(format!(
                "task classes start at slot {} but the head has {} rows",
                data.classes.start,
                self.clf.num_classes()
            ));
        }
        let loss_cfg = &cfg.loss;
        let features = self.extractor.embed_matrix(&data.train_inputs)?;
        let task_range = self.clf.expand(data.num_classes(), cfg.seed)?;
        let n_old = self.store.len();
        let whole_task_means = if loss_cfg.enable_batch_proto {
            None
        } else {
            Some(batch_class_prototypes(&features, &data.train_labels)?)
        };
        let use_pseudo = loss_cfg.enable_pseudo && !self.store.is_empty();
        let use_store = !self.store.is_empty();

        let mut adam = AdamState::for_classifier(&self.clf, cfg.lr)?;
        for epoch in 0..cfg.epochs_incremental {
            for batch in batches(data, cfg.batch_size, cfg.seed, epoch as u64)? {
                let batch_features = features.select_rows(&batch);
                let labels: Vec<ClassId> = batch.iter().map(|&i| data.train_labels[i]).collect();
                let pseudo = match (&whole_task_means, use_pseudo) {
                    (_, false) => PseudoBatch::empty(features.cols()),
                    (None, true) => generate_pseudo_batch(&batch_features, &labels, &self.store)?,
                    (Some(means), true) => generate_pseudo_batch_anchored(
                        &batch_features,
                        &labels,
                        &self.store,
                        means,
                    )?,
                };
                let merged = merge(pseudo, &batch_features, &labels)?;
                let mut components = vec![(
                    LossKind::Replay,
                    replay_ce_loss(&merged, &self.clf, n_old, loss_cfg)?,
                )];
                if loss_cfg.enable_variational && use_store {
                    components.push((
                        LossKind::Variational,
                        vpr_loss(&self.store, &self.clf, loss_cfg)?,
                    ));
                }
                if loss_cfg.enable_proto && use_store {
                    components.push((LossKind::Prototype, proto_loss(&self.store, &self.clf)?));
                }
                if loss_cfg.enable_truncated {
                    components.push((
                        LossKind::Truncated,
                        tce_loss(&batch_features, &labels, &self.clf, task_range)?,
                    ));
                }
                let total = total_loss(&components, loss_cfg)?;
                self.clf.adam_step(&total, &mut adam)?;
            }
        }
        self.finish_task(data)
    }

    fn finish_task(&mut self, data: &TaskDataset) -> Result<()> {
        let features = self.extractor.embed_matrix(&data.train_inputs)?;
        self.store
            .register(fit_class_statistics(&features, &data.train_labels)?)?;
        let test_features = self.extractor.embed_matrix(&data.test_inputs)?;
        for row in test_features.iter_rows() {
            self.eval_features.push_row(row)?;
        }
        self.eval_labels.extend_from_slice(&data.test_labels);
        let record = self.evaluate(data.task_index, data.classes)?;
        self.metrics.push(record);
        Ok(())
    }

    /// Metrics of the current head on every visible test sample.
    pub fn evaluate(&self, task_index: usize, current: ClassRange) -> Result<MetricsRecord> {
        let first = self
            .first_task
            .ok_or_else(|| crate::Error::InvalidState("no task has been run".into()))?;
        let predictions = self.clf.predict(&self.eval_features)?;
        let subset = |keep: &dyn Fn(ClassId) -> bool| -> Result<Option<f64>> {
            let (p, t): (Vec<ClassId>, Vec<ClassId>) = predictions
                .iter()
                .zip(&self.eval_labels)
                .filter(|(_, t)| keep(**t))
                .map(|(p, t)| (*p, *t))
                .unzip();
            if t.is_empty() {
                return Ok(None);
            }
            accuracy(&p, &t).map(Some)
        };
        let global_acc = accuracy(&predictions, &self.eval_labels)?;
        let local_acc = subset(&|c| current.contains(c))?.ok_or_else(|| {
            crate::Error::InvalidArgument(format!("task {task_index} has no test samples"))
        })?;
        let old_acc = subset(&|c| first.contains(c))?.unwrap_or(0.0);
        let new_acc = if task_index == 0 {
            None
        } else {
            subset(&|c| !first.contains(c))?
        };
        Ok(MetricsRecord {
            task_index,
            global_acc,
            local_acc,
            ifm: ifm(local_acc, global_acc)?,
            old_acc,
            new_acc,
        })
    }
}

/// Final state and per-task metrics of a finished run.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub records: Vec<MetricsRecord>,
    pub state: ExperimentState,
}

/// Runs every scheduled task in order.
pub fn run_experiment(
    cfg: &TrainConfig,
    extractor: &ExtractorSpec,
    schedule: &TaskSchedule,
    dataset: &Dataset,
) -> Result<ExperimentOutcome> {
    run_experiment_with(cfg, extractor, schedule, dataset, |_| Ok(()))
}

/// [`run_experiment`] with a hook called after every task (checkpoints,
/// snapshots).
pub fn run_experiment_with<F>(
    cfg: &TrainConfig,
    extractor: &ExtractorSpec,
    schedule: &TaskSchedule,
    dataset: &Dataset,
    mut after_task: F,
) -> Result<ExperimentOutcome>
where
    F: FnMut(&ExperimentState) -> Result<()>,
{
    cfg.validate()?;
    if extractor.input_dim != dataset.dim() {
        return invalid_arg(format!(
            "extractor input dimension {} does not match dataset dimension {}",
            extractor.input_dim,
            dataset.dim()
        ));
    }
    let tasks = split_schedule(dataset, schedule)?;
    let clf = IncrementalClassifier::new(extractor.feature_dim, schedule.k, cfg.seed)?;
    let mut state = ExperimentState::new(Extractor::new(extractor.clone())?, clf)?;
    for task in &tasks {
        if task.task_index == 0 {
            state.run_task0(task, cfg)?;
        } else {
            state.run_incremental_task(task, cfg)?;
        }
        after_task(&state)?;
    }
    Ok(ExperimentOutcome {
        records: state.metrics.clone(),
        state,
    })
}
