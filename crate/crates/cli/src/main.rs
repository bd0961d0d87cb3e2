//! `pgpfr`: run incremental experiments, generate synthetic datasets and
//! inspect dataset or checkpoint files.
//!
//! Exit codes: 0 success, 1 runtime or file-format failure, 2 bad
//! configuration or flags.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pgpfr_core::checkpoint::Checkpoint;
use pgpfr_core::config::ExperimentConfig;
use pgpfr_core::dataio::{load_dataset, synth_gaussian, Dataset, HEADER_LEN, MAGIC, VERSION};
use pgpfr_core::engine::run_experiment_with;
use pgpfr_core::evalmetrics::write_reports;
use serde_json::Value;

#[derive(Parser)]
#[command(
    name = "pgpfr",
    version,
    about = "Data-free class-incremental learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override a config value, e.g. `--set train.seed=3` or
        /// `--set losses.enable_V=false`. Values are parsed as JSON, falling
        /// back to a plain string.
        #[arg(long = "set", value_name = "PATH=VALUE")]
        overrides: Vec<String>,
    },
    /// Write a synthetic Gaussian dataset in the binary format.
    Synth {
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
        classes: u32,
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u32).range(1..))]
        dim: u32,
        #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
        train_per_class: u32,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u32).range(1..))]
        test_per_class: u32,
        #[arg(long, default_value_t = 10.0, value_parser = parse_separation)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth.pgfr")]
        out: PathBuf,
    },
    /// Print the header, class histogram and split counts of a dataset, or
    /// a summary of a checkpoint (`.json`).
    Inspect { path: PathBuf },
}

fn parse_separation(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(v)
    } else {
        Err(format!("separation must be finite and >= 0, got {s}"))
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<pgpfr_core::Error> for Failure {
    fn from(e: pgpfr_core::Error) -> Self {
        match e {
            pgpfr_core::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, overrides } => cmd_run(&config, &overrides),
        Command::Synth {
            classes,
            dim,
            train_per_class,
            test_per_class,
            separation,
            seed,
            out,
        } => cmd_synth(
            classes,
            dim,
            train_per_class,
            test_per_class,
            separation,
            seed,
            &out,
        ),
        Command::Inspect { path } => cmd_inspect(&path),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

/// Sets `path` (dot separated) inside `doc`, creating objects as needed.
fn apply_override(doc: &mut Value, spec: &str) -> Result<(), Failure> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Failure::Usage(format!("override `{spec}` is not PATH=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(Failure::Usage(format!(
                "override `{spec}` has an empty key"
            )));
        }
        let Value::Object(map) = node else {
            return Err(Failure::Usage(format!(
                "override `{spec}`: `{key}` is not inside an object"
            )));
        };
        if i + 1 == keys.len() {
            map.insert(key.to_string(), value);
            return Ok(());
        }
        node = map
            .entry(key.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn cmd_run(config_path: &Path, overrides: &[String]) -> Result<(), Failure> {
    let text = std::fs::read_to_string(config_path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", config_path.display())))?;
    let mut doc: Value =
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config: {e}")))?;
    for spec in overrides {
        apply_override(&mut doc, spec)?;
    }
    let cfg = ExperimentConfig::from_json(&doc.to_string())?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let dataset = cfg.dataset(base)?;
    let schedule = cfg.schedule_for(&dataset)?;
    let spec = cfg.extractor.spec(dataset.dim());
    let out_dir = cfg.resolved_output_dir();
    let train = cfg.train_config();
    let outcome = run_experiment_with(&train, &spec, &schedule, &dataset, |state| {
        if cfg.checkpoints {
            Checkpoint::capture(state).save(&out_dir)?;
        }
        Ok(())
    })?;
    let summary = write_reports(&out_dir, &outcome.records)?;
    for r in &outcome.records {
        println!(
            "task {}: G {:.4} L {:.4} IFM {:.2}",
            r.task_index, r.global_acc, r.local_acc, r.ifm
        );
    }
    match summary.mean_ifm {
        Some(m) => println!("mean G {:.4} mean IFM {:.2}", summary.mean_global, m),
        None => println!("mean G {:.4}", summary.mean_global),
    }
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn cmd_synth(
    classes: u32,
    dim: u32,
    train: u32,
    test: u32,
    separation: f64,
    seed: u64,
    out: &Path,
) -> Result<(), Failure> {
    let ds = synth_gaussian(
        classes as usize,
        dim as usize,
        train as usize,
        test as usize,
        separation,
        seed,
    )
    .map_err(|e| Failure::Usage(e.to_string()))?;
    ds.save(out)?;
    println!(
        "wrote {} samples of dimension {dim} to {}",
        ds.len(),
        out.display()
    );
    Ok(())
}

fn print_dataset(ds: &Dataset, binary: bool) {
    if binary {
        let magic = String::from_utf8_lossy(&MAGIC);
        println!("magic      {magic}");
        println!("version    {VERSION}");
        println!("header     {HEADER_LEN} bytes");
    }
    println!("samples    {}", ds.len());
    println!("dim        {}", ds.dim());
    let histogram = ds.class_histogram();
    println!("classes    {}", histogram.len());
    println!("class,train,test");
    let (mut train, mut test) = (0, 0);
    for (label, counts) in &histogram {
        println!("{label},{},{}", counts.train, counts.test);
        train += counts.train;
        test += counts.test;
    }
    println!("split train {train}");
    println!("split test  {test}");
}

fn cmd_inspect(path: &Path) -> Result<(), Failure> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("json") {
        let ckpt = Checkpoint::load(path)
            .map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
        println!("checkpoint task {}", ckpt.task_index);
        println!("classes    {}", ckpt.classifier.num_classes());
        println!("dim        {}", ckpt.classifier.dim());
        println!("prototypes {}", ckpt.store.len());
        println!("frozen     {}", ckpt.extractor.is_frozen());
        for r in &ckpt.metrics {
            println!(
                "task {}: G {:.4} L {:.4} IFM {:.2}",
                r.task_index, r.global_acc, r.local_acc, r.ifm
            );
        }
        return Ok(());
    }
    let ds =
        load_dataset(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    print_dataset(&ds, !ext.eq_ignore_ascii_case("csv"));
    Ok(())
}
