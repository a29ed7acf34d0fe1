//! `pose`: train, parse, evaluate and synthesize.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use pose_core::data::{
    load_dataset, load_image_dir, read_manifest, render_negative, write_synthetic_dataset,
    LoadOptions,
};
use pose_core::evaluation::evaluate;
use pose_core::io::write_atomic;
use pose_core::pipeline::{
    configure_threads, draw_overlay, parse_image, records_from_jsonl, records_to_jsonl,
};
use pose_core::{
    ImageBuffer, JointRemap, Model, PipelineConfig, PoseError, SkeletonTree, SynthConfig,
    TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "pose",
    version,
    about = "Visual-symbol pictorial structures for human pose"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from an annotated manifest.
    Train(TrainArgs),
    /// Parse every image of a directory.
    Parse(ParseArgs),
    /// Score predictions against ground truth (PCP).
    Eval(EvalArgs),
    /// Write a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory of person-free images; defaults to `negatives/` next to
    /// the manifest.
    #[arg(long)]
    negatives: Option<PathBuf>,
    /// Manifest split to train on; all records when absent from the file.
    #[arg(long, default_value = "train")]
    split: String,
    /// Joint reordering table applied to every record.
    #[arg(long)]
    remap: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    cell: usize,
    #[arg(long, default_value_t = 8)]
    k_large: usize,
    #[arg(long, default_value_t = 6)]
    k_small: usize,
    #[arg(long, default_value_t = 2)]
    sym_large: usize,
    #[arg(long, default_value_t = 4)]
    sym_small: usize,
    #[arg(long, default_value_t = 10)]
    cv_rounds: usize,
    #[arg(long, default_value_t = 0.05)]
    prune: f64,
    #[arg(long, default_value_t = 0.002)]
    c: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Report every detection scoring above this value instead of the
    /// single best parse.
    #[arg(long, allow_hyphen_values = true)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    clutter: f64,
    /// Clutter-only images; defaults to half the number of figures.
    #[arg(long)]
    negatives: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e
                .downcast_ref::<PoseError>()
                .map_or("error", PoseError::category);
            let detail = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {category}: {detail}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => train(a),
        Command::Parse(a) => parse(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let remap = a.remap.as_deref().map(JointRemap::read).transpose()?;
    let data = load_dataset(
        &a.data,
        &LoadOptions {
            remap,
            ..LoadOptions::default()
        },
    )
    .with_context(|| format!("loading {}", a.data.display()))?;
    let has_split = data.entries.iter().any(|e| e.record.split.is_some());
    let positives: Vec<_> = data
        .entries
        .iter()
        .filter(|e| !has_split || e.record.split.as_deref() == Some(a.split.as_str()))
        .map(|e| (e.image.clone(), e.annotation.clone()))
        .collect();
    if positives.is_empty() {
        bail!(PoseError::InsufficientSamples { needed: 1, got: 0 });
    }
    let neg_dir = a
        .negatives
        .clone()
        .unwrap_or_else(|| data.root.join("negatives"));
    let negatives: Vec<ImageBuffer> = if neg_dir.is_dir() {
        load_image_dir(&neg_dir)
            .with_context(|| format!("reading {}", neg_dir.display()))?
            .into_iter()
            .map(|(_, im)| im)
            .collect()
    } else {
        if a.negatives.is_some() {
            bail!(PoseError::MissingImage(neg_dir));
        }
        info!(
            "no negatives directory at {}; rendering clutter images",
            neg_dir.display()
        );
        let cfg = SynthConfig {
            seed: a.seed,
            ..SynthConfig::default()
        };
        (0..positives.len().max(1))
            .map(|i| render_negative(&cfg, i))
            .collect::<pose_core::Result<_>>()?
    };
    info!(
        "training on {} images with {} negatives",
        positives.len(),
        negatives.len()
    );
    let cfg = PipelineConfig {
        cell_size: a.cell,
        k_large: a.k_large,
        k_small: a.k_small,
        sym_large: a.sym_large,
        sym_small: a.sym_small,
        cv_rounds: a.cv_rounds,
        prune_fraction: a.prune,
        c: a.c,
        train: TrainConfig {
            epochs: a.epochs,
            ..TrainConfig::default()
        },
        seed: a.seed,
        ..PipelineConfig::default()
    };
    let trained =
        pose_core::train_pipeline(&positives, &negatives, &SkeletonTree::default_human(), &cfg)?;
    trained.model.save(&a.out)?;
    write_atomic(
        &sidecar(&a.out, "epochs.csv"),
        trained.outcome.report_csv().as_bytes(),
    )?;
    write_atomic(
        &sidecar(&a.out, "symbols.txt"),
        trained.symbol_report().as_bytes(),
    )?;
    write_atomic(
        &sidecar(&a.out, "context.csv"),
        trained
            .model
            .params
            .context
            .to_csv(&trained.model.tree)
            .as_bytes(),
    )?;
    let last = trained.outcome.report.last();
    println!(
        "model written to {} ({} parameters, {} epochs, objective {:.6})",
        a.out.display(),
        trained.outcome.layout.len(),
        trained.outcome.report.len(),
        last.map_or(f64::NAN, |r| r.objective)
    );
    Ok(())
}

/// `model.psym` -> `model.psym.<suffix>`
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn parse(a: ParseArgs) -> Result<()> {
    let model = Model::load(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let images =
        load_image_dir(&a.images).with_context(|| format!("reading {}", a.images.display()))?;
    if let Some(dir) = &a.overlay {
        std::fs::create_dir_all(dir)?;
    }
    let mut records = Vec::new();
    for (name, image) in &images {
        let (results, recs) = parse_image(&model, name, image, a.threshold)?;
        if let (Some(dir), Some(best)) = (&a.overlay, results.first()) {
            let stem = Path::new(name)
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy();
            draw_overlay(image, best, &model).write_pnm(&dir.join(format!("{stem}.ppm")))?;
        }
        records.extend(recs);
    }
    write_atomic(&a.out, records_to_jsonl(&records)?.as_bytes())?;
    println!(
        "{} parses of {} images written to {}",
        records.len(),
        images.len(),
        a.out.display()
    );
    Ok(())
}

fn file_name(id: &str) -> &str {
    Path::new(id)
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or(id)
}

fn eval(a: EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.pred)
        .with_context(|| format!("reading {}", a.pred.display()))?;
    let records = records_from_jsonl(&text, &a.pred)?;
    let truth: Vec<_> = read_manifest(&a.truth)
        .with_context(|| format!("reading {}", a.truth.display()))?
        .iter()
        .map(|r| r.to_annotation())
        .collect();

    // Predictions may name images by file name only; match those to the
    // manifest entry with that file name when it is unique.
    let mut by_name: HashMap<&str, Vec<&str>> = HashMap::new();
    for t in &truth {
        by_name
            .entry(file_name(&t.image_id))
            .or_default()
            .push(&t.image_id);
    }
    let mut best: HashMap<String, &pose_core::ParseRecord> = HashMap::new();
    for r in &records {
        let id = if truth.iter().any(|t| t.image_id == r.image_id) {
            r.image_id.clone()
        } else {
            match by_name.get(file_name(&r.image_id)).map(Vec::as_slice) {
                Some([only]) => only.to_string(),
                _ => r.image_id.clone(),
            }
        };
        let slot = best.entry(id).or_insert(r);
        if r.total_score > slot.total_score {
            *slot = r;
        }
    }
    let predictions: Vec<_> = best
        .into_iter()
        .map(|(id, r)| {
            let mut p = r.prediction();
            p.image_id = id;
            p
        })
        .collect();
    let report = evaluate(&predictions, &truth)?;
    write_atomic(&a.out, report.to_csv().as_bytes())?;
    print!("{}", report.to_table());
    println!("PCP total: {:.1}", report.total.percentage());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.seed,
        clutter: a.clutter,
        ..SynthConfig::default()
    };
    let negatives = a.negatives.unwrap_or(a.n.div_ceil(2));
    let records = write_synthetic_dataset(&a.out, &cfg, a.n, negatives)?;
    println!(
        "{} images and {negatives} negatives written to {}",
        records.len(),
        a.out.display()
    );
    Ok(())
}
