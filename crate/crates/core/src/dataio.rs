//! Dataset persistence, task splitting, batching and synthetic data.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "PGFR"
//! 4       4     version (u32) = 1
//! 8       8     n_samples (u64)
//! 16      4     dim (u32)
//! 20      ...   n_samples records of
//!                 label u32 | split u8 (0 train, 1 test) | dim x f32
//! ```
//!
//! Features are kept as `f32` in memory so a save/load round trip is
//! bitwise lossless.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifier::ClassRange;
use crate::engine::TaskSchedule;
use crate::error::{invalid_arg, invalid_state, Error, Result};
use crate::numerics::Matrix;
use crate::rng;
use crate::ClassId;

pub const MAGIC: [u8; 4] = *b"PGFR";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Test = 1,
}

impl Split {
    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Self::Train),
            1 => Some(Self::Test),
            _ => None,
        }
    }
}

/// Labelled samples with a train/test tag each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    labels: Vec<u32>,
    splits: Vec<Split>,
    features: Vec<f32>,
}

/// Per-class sample counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub train: usize,
    pub test: usize,
}

impl Dataset {
    /// Validates alignment, finiteness and that every class has at least
    /// one train and one test sample.
    pub fn new(
        dim: usize,
        labels: Vec<u32>,
        splits: Vec<Split>,
        features: Vec<f32>,
    ) -> Result<Self> {
        if dim == 0 {
            return invalid_arg("dataset dimension must be at least 1");
        }
        if labels.len() != splits.len() || features.len() != labels.len() * dim {
            return invalid_arg(format!(
                "{} labels, {} splits and {} feature values do not describe {}-dimensional samples",
                labels.len(),
                splits.len(),
                features.len(),
                dim
            ));
        }
        if labels.is_empty() {
            return Err(Error::Validation {
                sample: 0,
                message: "dataset has no samples".into(),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation {
                sample: pos / dim,
                message: format!("feature {} is not finite", pos % dim),
            });
        }
        let ds = Self {
            dim,
            labels,
            splits,
            features,
        };
        for (class, counts) in ds.class_histogram() {
            if counts.train == 0 || counts.test == 0 {
                let first = ds.labels.iter().position(|l| *l == class).unwrap_or(0);
                return Err(Error::Validation {
                    sample: first,
                    message: format!(
                        "class {class} has {} train and {} test samples; both must be >= 1",
                        counts.train, counts.test
                    ),
                });
            }
        }
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn classes(&self) -> BTreeSet<u32> {
        self.labels.iter().copied().collect()
    }

    pub fn class_histogram(&self) -> BTreeMap<u32, ClassCounts> {
        let mut hist: BTreeMap<u32, ClassCounts> = BTreeMap::new();
        for (label, split) in self.labels.iter().zip(&self.splits) {
            let entry = hist.entry(*label).or_default();
            match split {
                Split::Train => entry.train += 1,
                Split::Test => entry.test += 1,
            }
        }
        hist
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (5 + 4 * self.dim));
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for i in 0..self.len() {
            out.extend_from_slice(&self.labels[i].to_le_bytes());
            out.push(self.splits[i] as u8);
            for v in self.sample(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = ByteReader { bytes, pos: 0 };
        let magic = reader.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {magic:02x?}, expected \"PGFR\""),
            });
        }
        let version = reader.u32("version")?;
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let n_samples = reader.u64("sample count")?;
        let dim = reader.u32("dimension")? as usize;
        if dim == 0 {
            return Err(Error::Format {
                offset: 16,
                message: "dimension is zero".into(),
            });
        }
        let record = 5 + 4 * dim;
        let expected = (n_samples as usize)
            .checked_mul(record)
            .and_then(|payload| payload.checked_add(HEADER_LEN));
        if expected.is_none_or(|total| total > bytes.len()) {
            let complete = (bytes.len() - HEADER_LEN) / record;
            return Err(Error::Format {
                offset: (HEADER_LEN + complete * record) as u64,
                message: format!(
                    "truncated: header declares {n_samples} samples but only {complete} complete records are present"
                ),
            });
        }
        let n = n_samples as usize;
        let mut labels = Vec::with_capacity(n);
        let mut splits = Vec::with_capacity(n);
        let mut features = Vec::with_capacity(n * dim);
        for _ in 0..n {
            labels.push(reader.u32("label")?);
            let split_at = reader.pos;
            let raw = reader.take(1, "split")?[0];
            splits.push(Split::from_byte(raw).ok_or_else(|| Error::Format {
                offset: split_at as u64,
                message: format!("split byte {raw} is neither 0 (train) nor 1 (test)"),
            })?);
            for _ in 0..dim {
                features.push(f32::from_le_bytes(reader.array("feature")?));
            }
        }
        if reader.pos != bytes.len() {
            return Err(Error::Format {
                offset: reader.pos as u64,
                message: format!(
                    "{} trailing bytes after the last record",
                    bytes.len() - reader.pos
                ),
            });
        }
        Self::new(dim, labels, splits, features)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Parses CSV with header `label,split,f0,...,f{D-1}`. Splits may be
    /// written as `train`/`test` or `0`/`1`.
    pub fn from_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = csv.headers().map_err(csv_error)?.clone();
        let dim = header.len().saturating_sub(2);
        let header_ok = header.get(0) == Some("label")
            && header.get(1) == Some("split")
            && (0..dim).all(|j| header.get(j + 2) == Some(format!("f{j}").as_str()));
        if dim == 0 || !header_ok {
            return Err(Error::Format {
                offset: 0,
                message: "CSV header must be label,split,f0,...,f{D-1}".into(),
            });
        }
        let (mut labels, mut splits, mut features) = (Vec::new(), Vec::new(), Vec::new());
        for (i, record) in csv.records().enumerate() {
            let record = record.map_err(csv_error)?;
            let offset = record.position().map_or(0, |p| p.byte());
            let bad = |message: String| Error::Format { offset, message };
            if record.len() != dim + 2 {
                return Err(bad(format!(
                    "row {i} has {} fields, expected {}",
                    record.len(),
                    dim + 2
                )));
            }
            labels.push(
                record[0]
                    .parse::<u32>()
                    .map_err(|e| bad(format!("row {i} label: {e}")))?,
            );
            splits.push(match &record[1] {
                "train" | "0" => Split::Train,
                "test" | "1" => Split::Test,
                other => return Err(bad(format!("row {i} has unknown split {other:?}"))),
            });
            for j in 0..dim {
                let v = record[j + 2]
                    .parse::<f32>()
                    .map_err(|e| bad(format!("row {i} feature {j}: {e}")))?;
                features.push(v);
            }
        }
        Self::new(dim, labels, splits, features)
    }

    /// Raw inputs and labels of the given sample indices, widened to `f64`.
    fn gather(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend(self.sample(i).iter().map(|v| f64::from(*v)));
        }
        Matrix::from_vec(indices.len(), self.dim, data).expect("sizes agree")
    }
}

fn csv_error(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Format {
        offset,
        message: e.to_string(),
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }
}

/// Loads a dataset; `.csv` files go through the CSV importer, anything else
/// is read as the binary format.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        return Dataset::from_csv(fs::File::open(path)?);
    }
    Dataset::from_bytes(&fs::read(path)?)
}

/// The classes of one task, relabelled to contiguous classifier slots, with
/// their train and test samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_index: usize,
    /// Classifier slots owned by this task.
    pub classes: ClassRange,
    /// Dataset label of each slot in `classes`, in slot order.
    pub source_labels: Vec<u32>,
    pub train_inputs: Matrix,
    pub train_labels: Vec<ClassId>,
    pub test_inputs: Matrix,
    pub test_labels: Vec<ClassId>,
}

impl TaskDataset {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Splits `ds` into one [`TaskDataset`] per scheduled task. Slot `s` is the
/// dataset class `schedule.class_order[s]`.
pub fn split_schedule(ds: &Dataset, schedule: &TaskSchedule) -> Result<Vec<TaskDataset>> {
    schedule.validate()?;
    let needed = schedule.classes_used();
    let present = ds.classes();
    if let Some(missing) = schedule.class_order[..needed]
        .iter()
        .find(|c| !present.contains(c))
    {
        return invalid_arg(format!("scheduled class {missing} is not in the dataset"));
    }
    let slot_of: BTreeMap<u32, ClassId> = schedule.class_order[..needed]
        .iter()
        .enumerate()
        .map(|(slot, label)| (*label, slot as ClassId))
        .collect();

    let mut tasks = Vec::with_capacity(schedule.n_tasks);
    for task_index in 0..schedule.n_tasks {
        let range = schedule.task_range(task_index);
        let (mut train_idx, mut train_labels, mut test_idx, mut test_labels) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, (label, split)) in ds.labels().iter().zip(ds.splits()).enumerate() {
            let Some(&slot) = slot_of.get(label) else {
                continue;
            };
            if !range.contains(slot) {
                continue;
            }
            match split {
                Split::Train => {
                    train_idx.push(i);
                    train_labels.push(slot);
                }
                Split::Test => {
                    test_idx.push(i);
                    test_labels.push(slot);
                }
            }
        }
        tasks.push(TaskDataset {
            task_index,
            classes: range,
            source_labels: range
                .iter()
                .map(|s| schedule.class_order[s as usize])
                .collect(),
            train_inputs: ds.gather(&train_idx),
            train_labels,
            test_inputs: ds.gather(&test_idx),
            test_labels,
        });
    }
    Ok(tasks)
}

/// Shuffled train-index batches for one epoch. The permutation is drawn
/// from the stream keyed by `(seed, task, epoch)`; the last batch may be
/// short.
pub fn batches(
    td: &TaskDataset,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return invalid_arg("batch size must be at least 1");
    }
    if td.train_labels.is_empty() {
        return invalid_state(format!("task {} has no training samples", td.task_index));
    }
    let mut order: Vec<usize> = (0..td.train_labels.len()).collect();
    order.shuffle(&mut rng::stream(
        seed,
        "batches",
        &[td.task_index as u64, epoch],
    ));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Isotropic Gaussian classes. Class means are seeded random directions
/// scaled to length `separation`; samples add unit-variance noise. Train
/// and test samples are drawn independently from the same distributions.
pub fn synth_gaussian(
    classes: usize,
    dim: usize,
    per_class_train: usize,
    per_class_test: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if dim == 0 {
        return invalid_arg("synthetic dimension must be at least 1");
    }
    if classes == 0 || per_class_train == 0 || per_class_test == 0 {
        return invalid_arg("synthetic class and sample counts must be positive");
    }
    if !(separation >= 0.0) || !separation.is_finite() {
        return invalid_arg(format!(
            "separation must be finite and >= 0, got {separation}"
        ));
    }
    let mut mean_rng = rng::stream(seed, "synth-means", &[]);
    let means: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let direction = rng::normal_vec(&mut mean_rng, dim, 1.0);
            let length = crate::numerics::norm(&direction);
            direction.iter().map(|v| separation * v / length).collect()
        })
        .collect();

    let total = classes * (per_class_train + per_class_test);
    let mut labels = Vec::with_capacity(total);
    let mut splits = Vec::with_capacity(total);
    let mut features = Vec::with_capacity(total * dim);
    for (split, per_class, tag) in [
        (Split::Train, per_class_train, "synth-train"),
        (Split::Test, per_class_test, "synth-test"),
    ] {
        for (class, mean) in means.iter().enumerate() {
            let mut noise = rng::stream(seed, tag, &[class as u64]);
            for _ in 0..per_class {
                let sample = rng::normal_vec(&mut noise, dim, 1.0);
                features.extend(sample.iter().zip(mean).map(|(n, m)| (m + n) as f32));
                labels.push(class as u32);
                splits.push(split);
            }
        }
    }
    Dataset::new(dim, labels, splits, features)
}
