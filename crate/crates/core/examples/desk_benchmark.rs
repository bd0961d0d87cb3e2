//! Runs the synthetic forgetting benchmark with its ablations and prints
//! mean G, mean IFM and final old-class accuracy per variant and seed.
//!
//!     cargo run --release -p pgpfr-core --example desk_benchmark -- [epochs_task0] [epochs_incremental]

use std::time::Instant;

use pgpfr_core::dataio::synth_gaussian;
use pgpfr_core::engine::{run_experiment, TaskSchedule, TrainConfig};
use pgpfr_core::evalmetrics::summarize;
use pgpfr_core::extractor::ExtractorSpec;
use pgpfr_core::losses::LossConfig;

fn main() -> pgpfr_core::Result<()> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let epochs_task0 = args.first().copied().unwrap_or(150);
    let epochs_incremental = args.get(1).copied().unwrap_or(100);

    let full = LossConfig::default();
    let variants = [
        ("full", full.clone()),
        (
            "w/o L_V",
            LossConfig {
                enable_variational: false,
                ..full.clone()
            },
        ),
        (
            "w/o PFGBP",
            LossConfig {
                enable_pseudo: false,
                ..full.clone()
            },
        ),
        (
            "w/o sharpening",
            LossConfig {
                enable_sharpening: false,
                ..full.clone()
            },
        ),
        (
            "w/o batch proto",
            LossConfig {
                enable_batch_proto: false,
                ..full.clone()
            },
        ),
        (
            "w/o L_T",
            LossConfig {
                enable_truncated: false,
                ..full.clone()
            },
        ),
        (
            "fine-tune",
            LossConfig {
                enable_pseudo: false,
                enable_variational: false,
                ..full.clone()
            },
        ),
    ];
    for seed in 0..3u64 {
        let ds = synth_gaussian(10, 16, 200, 50, 10.0, seed)?;
        let schedule = TaskSchedule::for_dataset(&ds, 4, 1, 7, None)?;
        for (name, loss) in &variants {
            let cfg = TrainConfig {
                epochs_task0,
                epochs_incremental,
                batch_size: 32,
                lr: 0.001,
                seed,
                loss: loss.clone(),
            };
            let start = Instant::now();
            let out = run_experiment(&cfg, &ExtractorSpec::identity(16), &schedule, &ds)?;
            let s = summarize(&out.records)?;
            let gs: Vec<String> = out
                .records
                .iter()
                .map(|r| format!("{:.3}", r.global_acc))
                .collect();
            println!(
                "seed {seed} {name:>16}: mean G {:.4} mean IFM {:6.2} final old {:.3}  G [{}]  ({:.2?})",
                s.mean_global,
                s.mean_ifm.unwrap_or(0.0),
                out.records.last().map_or(0.0, |r| r.old_acc),
                gs.join(" "),
                start.elapsed()
            );
        }
    }
    Ok(())
}
