//! Command-line entry point: generate/ingest -> preprocess -> extract ->
//! train -> eval -> ablate -> report.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/validation error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use trusteeg::config::{derive_seed, RunConfig};
use trusteeg::dataset::{self, synth};
use trusteeg::error::Error;
use trusteeg::eval::{self, SplitMode};
use trusteeg::features::{self, FeatureTable};
use trusteeg::models::{self, ModelKind, TrainSet};
use trusteeg::preprocess::{self, FilterSpec, PipelineOptions};
use trusteeg::spatial;

#[derive(Parser)]
#[command(
    name = "trusteeg",
    about = "EEG-based human-robot trust recognition pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with controllable class structure.
    Synth(SynthArgs),
    /// Re-reference, filter, and re-write a dataset.
    Preprocess(PreprocessArgs),
    /// Extract per-slice differential-entropy features.
    Extract(ExtractArgs),
    /// Train a single model on extracted features.
    Train(TrainArgs),
    /// Cross-validated evaluation of one model.
    Eval(EvalArgs),
    /// Paired ablation: the transformer with and without the spatial
    /// representation.
    Ablate(AblateArgs),
    /// Render Markdown tables and ROC CSVs from report files.
    Report(ReportArgs),
    /// Write the electrode grid and lookup as JSON.
    ExportMap(ExportMapArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run-configuration file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Transformer model width.
    #[arg(long)]
    model_dim: Option<usize>,
    /// Attention head count.
    #[arg(long)]
    heads: Option<usize>,
    /// Encoder MLP hidden width.
    #[arg(long)]
    mlp_dim: Option<usize>,
    /// Encoder depth.
    #[arg(long)]
    blocks: Option<usize>,
    /// Mini-batch size.
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stop mean training loss.
    #[arg(long)]
    early_stop: Option<f64>,
    /// Neighbor count for KNN.
    #[arg(long)]
    knn_k: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CmdError> {
        let mut config = match &self.config {
            Some(path) => {
                RunConfig::from_file(path).map_err(|e| CmdError::Usage(e.to_string()))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.model_dim {
            config.vit.model_dim = v;
        }
        if let Some(v) = self.heads {
            config.vit.n_heads = v;
        }
        if let Some(v) = self.mlp_dim {
            config.vit.mlp_dim = v;
        }
        if let Some(v) = self.blocks {
            config.vit.n_blocks = v;
        }
        if let Some(v) = self.batch {
            config.hyper.batch_size = v;
        }
        if let Some(v) = self.lr {
            config.hyper.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            config.hyper.max_epochs = v;
        }
        if let Some(v) = self.early_stop {
            config.hyper.early_stop_loss = v;
        }
        if let Some(v) = self.knn_k {
            config.baselines.knn_k = v;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset root.
    #[arg(long = "out")]
    out: PathBuf,
    /// Root random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of subjects.
    #[arg(long, default_value_t = 2)]
    subjects: usize,
    /// Trials per subject (even, at most 30).
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Named recipe: null, strong, trial-noise, spatial, single-channel.
    #[arg(long, default_value = "strong")]
    preset: String,
    /// JSON file with a full synthesis recipe (overrides --preset).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Trial duration in seconds.
    #[arg(long)]
    trial_seconds: Option<f64>,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input dataset root.
    #[arg(long = "in")]
    input: PathBuf,
    /// Output dataset root.
    #[arg(long = "out")]
    out: PathBuf,
    /// Skip the common average reference.
    #[arg(long)]
    no_car: bool,
    /// Bandpass edges as LOW:HIGH in Hz.
    #[arg(long, default_value = "0.5:60")]
    band: String,
    /// Notch center frequency in Hz.
    #[arg(long, default_value_t = 50.0)]
    notch: f64,
    /// Skip bandpass and notch entirely (for already-filtered data).
    #[arg(long)]
    skip_filtering: bool,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input dataset root (preprocessed).
    #[arg(long = "in")]
    input: PathBuf,
    /// Output feature table (binary; a JSON index lands alongside).
    #[arg(long = "out")]
    out: PathBuf,
    /// Question weights for label derivation, comma separated.
    #[arg(long, default_value = "0.333333333333,0.333333333333,0.333333333334")]
    weights: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Model: vit, vit-nosp, nb, knn, svm, cnn.
    #[arg(long)]
    model: String,
    /// Feature table from `extract`.
    #[arg(long)]
    features: PathBuf,
    /// Output checkpoint path.
    #[arg(long = "out")]
    out: PathBuf,
    /// Root random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict training to one subject.
    #[arg(long)]
    subject: Option<String>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Model: vit, vit-nosp, nb, knn, svm, cnn.
    #[arg(long)]
    model: String,
    /// Feature table from `extract`.
    #[arg(long)]
    features: PathBuf,
    /// Protocol: slice (10-fold over shuffled slices) or trial (grouped
    /// 5-fold over trials).
    #[arg(long)]
    mode: String,
    /// Seeds, e.g. "0..4" (inclusive) or "0,1,2".
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Output report JSON.
    #[arg(long = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    mode: String,
    #[arg(long, default_value = "0..4")]
    seeds: String,
    #[arg(long = "out")]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Evaluation report JSON files.
    #[arg(long, num_args = 1..)]
    reports: Vec<PathBuf>,
    /// Ablation report JSON files.
    #[arg(long, num_args = 0..)]
    ablations: Vec<PathBuf>,
    /// Output Markdown file.
    #[arg(long = "out")]
    out: PathBuf,
    /// Directory for ROC CSV exports.
    #[arg(long)]
    roc_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ExportMapArgs {
    /// Output JSON path.
    #[arg(long = "out")]
    out: PathBuf,
}

enum CmdError {
    Usage(String),
    App(Error),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::App(e)
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Extract(args) => cmd_extract(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Report(args) => cmd_report(args),
        Command::ExportMap(args) => cmd_export_map(args),
    };
    match result {
        Ok(()) => {}
        Err(CmdError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            std::process::exit(1);
        }
        Err(CmdError::App(e)) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, CmdError> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let lo: u64 = a
            .parse()
            .map_err(|_| CmdError::Usage(format!("bad seed range \"{s}\"")))?;
        let hi: u64 = b
            .parse()
            .map_err(|_| CmdError::Usage(format!("bad seed range \"{s}\"")))?;
        if hi < lo {
            return Err(CmdError::Usage(format!("empty seed range \"{s}\"")));
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| CmdError::Usage(format!("bad seed \"{p}\"")))
        })
        .collect()
}

fn cmd_synth(args: SynthArgs) -> Result<(), CmdError> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str::<synth::SynthSpec>(&text)
                .map_err(|e| CmdError::Usage(format!("synth spec: {e}")))?
        }
        None => synth::preset(&args.preset).map_err(|e| CmdError::Usage(e.to_string()))?,
    };
    if let Some(seconds) = args.trial_seconds {
        spec.trial_seconds = seconds;
    }
    synth::synth_generate(&args.out, args.seed, args.subjects, args.trials, &spec)?;
    println!(
        "synth: wrote {} subjects x {} trials to {}",
        args.subjects,
        args.trials,
        args.out.display()
    );
    Ok(())
}

fn parse_band(s: &str) -> Result<(f64, f64), CmdError> {
    let (lo, hi) = s
        .split_once(':')
        .ok_or_else(|| CmdError::Usage(format!("bad band \"{s}\", expected LOW:HIGH")))?;
    let lo: f64 = lo
        .parse()
        .map_err(|_| CmdError::Usage(format!("bad band low \"{lo}\"")))?;
    let hi: f64 = hi
        .parse()
        .map_err(|_| CmdError::Usage(format!("bad band high \"{hi}\"")))?;
    Ok((lo, hi))
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), CmdError> {
    let manifest = dataset::load_manifest(&args.input)?;
    let opts = if args.skip_filtering {
        PipelineOptions {
            car: !args.no_car,
            bandpass: None,
            notch: None,
        }
    } else {
        let (lo, hi) = parse_band(&args.band)?;
        PipelineOptions {
            car: !args.no_car,
            bandpass: Some(FilterSpec::bandpass(lo, hi)),
            notch: Some(FilterSpec::notch(args.notch, 30.0)),
        }
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    dataset::write_channels(&args.out, &manifest.channel_names)?;

    let entries: Vec<dataset::ManifestEntry> = manifest
        .entries
        .par_iter()
        .map(|e| {
            let rec = dataset::load_trial(&manifest, &e.meta.subject_id, e.meta.trial_index)?;
            let processed = preprocess::run_pipeline(&rec, &opts)?;
            let rel = dataset::write_trial(&args.out, &processed)?;
            Ok(dataset::ManifestEntry {
                meta: processed.meta.clone(),
                file: rel,
                n_channels: processed.n_channels,
                n_samples: processed.n_samples,
            })
        })
        .collect::<trusteeg::Result<Vec<_>>>()?;

    let provenance = serde_json::json!({
        "stage": "preprocess",
        "car": !args.no_car,
        "bandpass": if args.skip_filtering { None } else { Some(args.band.clone()) },
        "notch": if args.skip_filtering { None } else { Some(args.notch) },
        "source": manifest.provenance,
    });
    dataset::write_manifest(&args.out, &entries, Some(provenance))?;
    println!(
        "preprocess: {} trials -> {}",
        entries.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_weights(s: &str) -> Result<[f64; 3], CmdError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CmdError::Usage(format!("bad weights \"{s}\"")))?;
    if parts.len() != 3 {
        return Err(CmdError::Usage("need exactly three weights".to_string()));
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn cmd_extract(args: ExtractArgs) -> Result<(), CmdError> {
    let weights = parse_weights(&args.weights)?;
    let manifest = dataset::load_manifest(&args.input)?;

    // per-subject thresholds and trial labels from questionnaire scores
    let subjects: Vec<String> = {
        let mut v: Vec<String> = manifest
            .entries
            .iter()
            .map(|e| e.meta.subject_id.clone())
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let mut thresholds = std::collections::BTreeMap::new();
    let mut label_of = std::collections::HashMap::new();
    for subject in &subjects {
        let entries: Vec<&dataset::ManifestEntry> = manifest
            .entries
            .iter()
            .filter(|e| &e.meta.subject_id == subject)
            .collect();
        let scores: Vec<[u8; 3]> = entries.iter().map(|e| e.meta.scores).collect();
        let (thr, _, labels) = dataset::derive_subject_labels(&scores, weights)?;
        if thr.degenerate {
            eprintln!(
                "warning: subject {subject} has identical trial scores; every trial labeled trust"
            );
        }
        thresholds.insert(subject.clone(), thr.threshold);
        for (e, label) in entries.iter().zip(labels) {
            label_of.insert((subject.clone(), e.meta.trial_index), label);
        }
    }

    let mut per_trial: Vec<(usize, features::DeExtraction)> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let rec = dataset::load_trial(&manifest, &e.meta.subject_id, e.meta.trial_index)?;
            let epoched = preprocess::epoch_slices(&rec, 1.0)?;
            let label = label_of[&(e.meta.subject_id.clone(), e.meta.trial_index)];
            let de = features::extract_de(&epoched, &features::FEATURE_BANDS, label)?;
            Ok((i, de))
        })
        .collect::<trusteeg::Result<Vec<_>>>()?;

    per_trial.sort_by_key(|(i, _)| *i);
    let mut slices = Vec::new();
    let mut floored = 0usize;
    for (_, de) in per_trial {
        floored += de.floored;
        slices.extend(de.slices);
    }
    if floored > 0 {
        eprintln!("warning: {floored} band variances hit the floor before the logarithm");
    }

    let table = FeatureTable {
        channel_names: manifest.channel_names.clone(),
        bands: features::FEATURE_BANDS.to_vec(),
        label_weights: weights,
        subject_thresholds: thresholds,
        floored,
        provenance: Some(serde_json::json!({
            "stage": "extract",
            "source": manifest.provenance,
        })),
        slices,
    };
    table.save(&args.out)?;
    println!(
        "extract: {} slices x {} features -> {}",
        table.slices.len(),
        table.feature_dim(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<(), CmdError> {
    let kind = ModelKind::parse(&args.model).map_err(|e| CmdError::Usage(e.to_string()))?;
    let config = args.config.load()?;
    let table = FeatureTable::load(&args.features)?;
    let rows: Vec<usize> = match &args.subject {
        Some(s) => {
            let rows = table.rows_for_subject(s);
            if rows.is_empty() {
                return Err(CmdError::App(Error::invalid(format!(
                    "no slices for subject {s}"
                ))));
            }
            rows
        }
        None => (0..table.slices.len()).collect(),
    };
    let train = TrainSet::new(
        rows.iter()
            .map(|&r| table.slices[r].features.as_slice())
            .collect(),
        rows.iter().map(|&r| table.slices[r].label).collect(),
    )?;
    let seed = derive_seed(args.seed, "fit", &[0, 0]);
    let fitted = models::fit(kind, &config, &table.channel_names, &train, seed)?;
    fitted.save(&args.out)?;

    let mut correct = 0usize;
    for &r in &rows {
        let p = fitted.predict(&table.slices[r].features)?;
        correct += usize::from(p.label == table.slices[r].label);
    }
    println!(
        "train: {} on {} slices, training accuracy {:.2}%, checkpoint {} (config {})",
        kind.name(),
        rows.len(),
        100.0 * correct as f64 / rows.len() as f64,
        args.out.display(),
        &config.hash()[..12],
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CmdError> {
    let kind = ModelKind::parse(&args.model).map_err(|e| CmdError::Usage(e.to_string()))?;
    let mode = SplitMode::parse(&args.mode).map_err(|e| CmdError::Usage(e.to_string()))?;
    let seeds = parse_seeds(&args.seeds)?;
    let config = args.config.load()?;
    let table = FeatureTable::load(&args.features)?;
    let report = eval::run_experiment(&table, kind, mode, &seeds, &config)?;
    write_json(&args.out, &report)?;
    println!(
        "eval: {} {} accuracy {:.2}% +- {:.2}%, F1 {:.2}% +- {:.2}% ({} subjects, {} seeds) -> {}",
        report.model,
        report.mode,
        100.0 * report.aggregate.accuracy_mean,
        100.0 * report.aggregate.accuracy_std,
        100.0 * report.aggregate.f1_mean,
        100.0 * report.aggregate.f1_std,
        report.aggregate.n_subjects,
        report.seeds.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> Result<(), CmdError> {
    let mode = SplitMode::parse(&args.mode).map_err(|e| CmdError::Usage(e.to_string()))?;
    let seeds = parse_seeds(&args.seeds)?;
    let config = args.config.load()?;
    let table = FeatureTable::load(&args.features)?;
    let report = eval::ablation_run(&table, mode, &seeds, &config)?;
    write_json(&args.out, &report)?;
    println!(
        "ablate: {} SP {:.2}% vs noSP {:.2}% accuracy (plans match: {}) -> {}",
        report.sp.mode,
        100.0 * report.sp.aggregate.accuracy_mean,
        100.0 * report.nosp.aggregate.accuracy_mean,
        report.plans_match,
        args.out.display()
    );
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CmdError> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CmdError> {
    let mut reports = Vec::new();
    for path in &args.reports {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: eval::CVReport =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        reports.push(report);
    }
    let mut ablations = Vec::new();
    for path in &args.ablations {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let report: eval::AblationReport =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        ablations.push(report);
    }
    let markdown = render_report(&reports, &ablations);
    std::fs::write(&args.out, markdown).map_err(|e| Error::io(&args.out, e))?;

    if let Some(dir) = &args.roc_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for report in &reports {
            export_rocs(dir, &report.model, report)?;
        }
        for ab in &ablations {
            export_rocs(dir, "vit-sp", &ab.sp)?;
            export_rocs(dir, "vit-nosp", &ab.nosp)?;
        }
    }
    println!(
        "report: {} evaluation(s), {} ablation(s) -> {}",
        reports.len(),
        ablations.len(),
        args.out.display()
    );
    Ok(())
}

fn export_rocs(dir: &Path, model: &str, report: &eval::CVReport) -> Result<(), CmdError> {
    if let Some(run) = report.runs.first() {
        for subject in &run.subjects {
            let mut csv = String::from("fpr,tpr\n");
            for (fpr, tpr) in &subject.pooled_roc {
                csv.push_str(&format!("{fpr},{tpr}\n"));
            }
            let path = dir.join(format!(
                "{model}_{}_{}.csv",
                report.mode, subject.subject_id
            ));
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(())
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn render_report(reports: &[eval::CVReport], ablations: &[eval::AblationReport]) -> String {
    let mut md = String::from("# Trust recognition results\n");

    for mode in ["slice", "trial"] {
        let rows: Vec<&eval::CVReport> = reports.iter().filter(|r| r.mode == mode).collect();
        if rows.is_empty() {
            continue;
        }
        md.push_str(&format!(
            "\n## {} cross-validation\n\n| Method | ACC | std | F1 | std | AUC | seeds | config |\n|---|---|---|---|---|---|---|---|\n",
            if mode == "slice" { "Slice-wise" } else { "Trial-wise" }
        ));
        for r in rows {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.3} | {} | {} |\n",
                r.model,
                pct(r.aggregate.accuracy_mean),
                pct(r.aggregate.accuracy_std),
                pct(r.aggregate.f1_mean),
                pct(r.aggregate.f1_std),
                r.aggregate.auc_mean,
                r.seeds.len(),
                &r.config_hash[..12],
            ));
        }
    }

    if !ablations.is_empty() {
        md.push_str("\n## Spatial-representation ablation\n\n| Protocol | Method | ACC | std | F1 | std |\n|---|---|---|---|---|---|\n");
        for ab in ablations {
            for (name, r) in [("with spatial", &ab.sp), ("without spatial", &ab.nosp)] {
                md.push_str(&format!(
                    "| {}-wise | {} | {} | {} | {} | {} |\n",
                    r.mode,
                    name,
                    pct(r.aggregate.accuracy_mean),
                    pct(r.aggregate.accuracy_std),
                    pct(r.aggregate.f1_mean),
                    pct(r.aggregate.f1_std),
                ));
            }
        }
        md.push_str("\nPer-subject paired deltas (spatial minus no-spatial):\n\n| Subject | dACC | dF1 | dAUC |\n|---|---|---|---|\n");
        for ab in ablations {
            for d in &ab.paired {
                md.push_str(&format!(
                    "| {} | {} | {} | {:.3} |\n",
                    d.subject_id,
                    pct(d.accuracy_delta),
                    pct(d.f1_delta),
                    d.auc_delta,
                ));
            }
        }
    }

    // model-width sensitivity across transformer reports that differ in width
    let mut widths: Vec<(usize, &eval::CVReport)> = reports
        .iter()
        .filter(|r| r.model == "vit")
        .filter_map(|r| r.model_dim().map(|d| (d, r)))
        .collect();
    widths.sort_by_key(|(d, _)| *d);
    let distinct: std::collections::BTreeSet<usize> = widths.iter().map(|(d, _)| *d).collect();
    if distinct.len() > 1 {
        md.push_str("\n## Model width sensitivity\n\n| model_dim | mode | ACC | std | F1 | std |\n|---|---|---|---|---|---|\n");
        for (d, r) in &widths {
            md.push_str(&format!(
                "| {} | {} | {} | {} | {} | {} |\n",
                d,
                r.mode,
                pct(r.aggregate.accuracy_mean),
                pct(r.aggregate.accuracy_std),
                pct(r.aggregate.f1_mean),
                pct(r.aggregate.f1_std),
            ));
        }
    }

    if let Some(r) = reports.first() {
        md.push_str("\n## Implementation notes\n\n");
        for note in &r.deviations {
            md.push_str(&format!("- {note}\n"));
        }
    }
    md
}

fn cmd_export_map(args: ExportMapArgs) -> Result<(), CmdError> {
    let map = spatial::build_map();
    write_json(&args.out, &map.to_json())?;
    println!("export-map: {}", args.out.display());
    Ok(())
}
