//! Accuracy and forgetting metrics.
//!
//! After each task `i`: `G` is top-1 accuracy over the test samples of every
//! visible class, `L` over the current task's classes only, and
//! `IFM = |L - G| / (L + G) * 100`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::ClassId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub task_index: usize,
    /// Accuracy over all visible classes.
    pub global_acc: f64,
    /// Accuracy over the current task's classes.
    pub local_acc: f64,
    pub ifm: f64,
    /// Accuracy over the first task's classes.
    pub old_acc: f64,
    /// Accuracy over visible classes outside the first task; absent for task 0.
    pub new_acc: Option<f64>,
}

/// Fraction of positions where prediction and truth agree.
pub fn accuracy(predictions: &[ClassId], truths: &[ClassId]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return invalid_arg(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        ));
    }
    if truths.is_empty() {
        return invalid_arg("accuracy of zero samples");
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| p == t)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Instantaneous Forgetting Measure on a 0-100 scale; 0 when `L + G = 0`.
pub fn ifm(local: f64, global: f64) -> Result<f64> {
    for (name, v) in [("local", local), ("global", global)] {
        if !(0.0..=1.0).contains(&v) {
            return invalid_arg(format!("{name} accuracy {v} is outside [0, 1]"));
        }
    }
    let denom = local + global;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((local - global).abs() / denom * 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean `G` over every task, task 0 included.
    pub mean_global: f64,
    /// Mean IFM over tasks after the first; absent when there is only one.
    pub mean_ifm: Option<f64>,
    pub records: Vec<MetricsRecord>,
}

pub fn summarize(records: &[MetricsRecord]) -> Result<Summary> {
    if records.is_empty() {
        return invalid_arg("cannot summarize zero tasks");
    }
    let mean_global = records.iter().map(|r| r.global_acc).sum::<f64>() / records.len() as f64;
    let later: Vec<f64> = records
        .iter()
        .filter(|r| r.task_index > 0)
        .map(|r| r.ifm)
        .collect();
    let mean_ifm = (!later.is_empty()).then(|| later.iter().sum::<f64>() / later.len() as f64);
    Ok(Summary {
        mean_global,
        mean_ifm,
        records: records.to_vec(),
    })
}

/// One JSON object per record, newline-terminated.
pub fn metrics_jsonl(records: &[MetricsRecord]) -> Result<String> {
    let mut out = String::new();
    for record in records {
        out.push_str(
            &serde_json::to_string(record)
                .map_err(|e| crate::Error::InvalidState(e.to_string()))?,
        );
        out.push('\n');
    }
    Ok(out)
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Per-task table plus a final `mean` row. Task 0's IFM cell is left
/// empty, as is the mean IFM of a single-task run.
pub fn summary_csv(summary: &Summary) -> String {
    let mut out = String::from("task,G,L,IFM,old,new\n");
    for r in &summary.records {
        let ifm = (r.task_index > 0).then_some(r.ifm);
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.task_index,
            cell(Some(r.global_acc)),
            cell(Some(r.local_acc)),
            cell(ifm),
            cell(Some(r.old_acc)),
            cell(r.new_acc)
        );
    }
    let _ = writeln!(
        out,
        "mean,{},,{},,",
        cell(Some(summary.mean_global)),
        cell(summary.mean_ifm)
    );
    out
}

/// Writes `metrics.jsonl` and `summary.csv` into `dir`, creating it if needed.
pub fn write_reports(dir: &Path, records: &[MetricsRecord]) -> Result<Summary> {
    std::fs::create_dir_all(dir)?;
    let summary = summarize(records)?;
    std::fs::File::create(dir.join("metrics.jsonl"))?
        .write_all(metrics_jsonl(records)?.as_bytes())?;
    std::fs::File::create(dir.join("summary.csv"))?.write_all(summary_csv(&summary).as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(task: usize, g: f64, l: f64) -> MetricsRecord {
        MetricsRecord {
            task_index: task,
            global_acc: g,
            local_acc: l,
            ifm: ifm(l, g).unwrap(),
            old_acc: g,
            new_acc: (task > 0).then_some(l),
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[1, 2]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn ifm_examples() {
        assert_eq!(ifm(0.7, 0.7).unwrap(), 0.0);
        assert_eq!(ifm(1.0, 0.0).unwrap(), 100.0);
        assert_eq!(ifm(0.0, 1.0).unwrap(), 100.0);
        // |0.9 - 0.6| / 1.5 * 100
        assert!((ifm(0.9, 0.6).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(ifm(0.0, 0.0).unwrap(), 0.0);
        assert!(ifm(1.2, 0.5).is_err());
        assert!(ifm(0.5, -0.1).is_err());
    }

    #[test]
    fn summarize_examples() {
        let single = summarize(&[record(0, 0.8, 0.8)]).unwrap();
        assert_eq!(single.mean_global, 0.8);
        assert_eq!(single.mean_ifm, None);

        let twice = summarize(&[record(1, 0.6, 0.9), record(1, 0.6, 0.9)]).unwrap();
        assert!((twice.mean_global - 0.6).abs() < 1e-15);
        assert!((twice.mean_ifm.unwrap() - 20.0).abs() < 1e-12);

        // task 0 contributes to mean G but not to mean IFM
        let gs = [0.95, 0.9, 0.8, 0.75];
        let ls = [0.95, 1.0, 0.5, 0.75];
        let records: Vec<_> = (0..4).map(|i| record(i, gs[i], ls[i])).collect();
        let s = summarize(&records).unwrap();
        assert!((s.mean_global - (0.95 + 0.9 + 0.8 + 0.75) / 4.0).abs() < 1e-15);
        let ifms = [0.1 / 1.9 * 100.0, 0.3 / 1.3 * 100.0, 0.0];
        assert!((s.mean_ifm.unwrap() - ifms.iter().sum::<f64>() / 3.0).abs() < 1e-12);

        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn csv_layout() {
        let s = summarize(&[record(0, 0.5, 0.5), record(1, 0.25, 0.75)]).unwrap();
        let csv = summary_csv(&s);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "task,G,L,IFM,old,new");
        assert_eq!(lines[1], "0,0.500000,0.500000,,0.500000,");
        assert_eq!(lines[2], "1,0.250000,0.750000,50.000000,0.250000,0.750000");
        assert_eq!(lines[3], "mean,0.375000,,50.000000,,");
    }

    proptest! {
        #[test]
        fn ifm_symmetric_bounded_and_scale_free(l in 0.0f64..=1.0, g in 0.0f64..=1.0, alpha in 0.01f64..=1.0) {
            let v = ifm(l, g).unwrap();
            prop_assert!((0.0..=100.0).contains(&v));
            prop_assert!((v - ifm(g, l).unwrap()).abs() <= 1e-12);
            prop_assume!(l + g > 1e-6);
            prop_assert!((v - ifm(alpha * l, alpha * g).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn accuracy_permutation_invariant(pairs in prop::collection::vec((0u32..4, 0u32..4), 1..40)) {
            let (p, t): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let (rp, rt): (Vec<_>, Vec<_>) = pairs.iter().rev().copied().unzip();
            prop_assert_eq!(accuracy(&p, &t).unwrap(), accuracy(&rp, &rt).unwrap());
        }
    }
}
