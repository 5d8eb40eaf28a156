//! `hmmix` — the pipeline controller. Subcommands: `check` (validate config
//! and data), `build` (extract and persist the mixture model), `predict`
//! (posteriors / future distributions / decoded sequences), `evaluate`
//! (k-fold cross validation), `generate` (seeded synthetic cohort), and
//! `export` (raw channel parameters).
//!
//! Every invocation writes a run manifest into the output directory
//! (`--out-dir`, else `HMMIX_OUT_DIR`, else the working directory). Exit
//! codes: 0 success, 1 invalid input (config, data, flags), 2 runtime
//! failure.

mod document;
mod manifest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use document::ModelDocument;
use hmmix_core::config::{parse_config, Datatype, PipelineConfig};
use hmmix_core::evaluation::{k_fold_cv, Averaging};
use hmmix_core::ingest::{discretize, enforce_intervals, load_dataset, Dataset, IntervalMode};
use hmmix_core::mixture::{MixtureModel, Query};
use hmmix_core::synthgen;
use manifest::RunManifest;

const OUT_DIR_ENV: &str = "HMMIX_OUT_DIR";

#[derive(Parser)]
#[command(name = "hmmix", version, about = "Mixture-of-HMMs prediction pipeline")]
struct Cli {
    /// Output directory for result files and run manifests.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PredictMode {
    Posteriors,
    Future,
    Decode,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AveragingArg {
    Weighted,
    Macro,
}

impl From<AveragingArg> for Averaging {
    fn from(value: AveragingArg) -> Self {
        match value {
            AveragingArg::Weighted => Averaging::Weighted,
            AveragingArg::Macro => Averaging::Macro,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate a config/data pair and print a report.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Enforce a strict visit interval: drop subjects whose gaps deviate
        /// from this delta by more than 50%.
        #[arg(long)]
        strict_interval: Option<f64>,
    },
    /// Ingest data, extract all channel HMMs, persist the model document.
    Build {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Marker whose states become the hidden states.
        #[arg(long)]
        hidden: String,
        /// Additive smoothing for the extracted counts.
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        /// Model document path (default: <out-dir>/model.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Query a built model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_enum)]
        mode: PredictMode,
        /// Future steps to extrapolate (mode `future`).
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Subject id to pull trails from `--data`.
        #[arg(long, requires = "data", conflicts_with = "obs")]
        subject: Option<String>,
        /// Data CSV to look `--subject` up in.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Observation CSV: one column per observed marker, one row per step.
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Expected hidden marker; fails if the model was built for another.
        #[arg(long)]
        hidden: Option<String>,
        /// Prediction table path (default: <out-dir>/prediction.tsv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold cross validation of decoded hidden sequences.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        hidden: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = AveragingArg::Weighted)]
        averaging: AveragingArg,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        /// Report path (default: <out-dir>/cv_report.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a seeded synthetic cohort (CSV + INI + generator spec).
    Generate {
        #[arg(long)]
        seed: u64,
        /// Override the default cohort size.
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        out_data: Option<PathBuf>,
        #[arg(long)]
        out_config: Option<PathBuf>,
        /// Where to record the resolved generator spec.
        #[arg(long)]
        out_spec: Option<PathBuf>,
    },
    /// Export one channel's parameters as a JSON document.
    Export {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        marker: String,
        /// Export path (default: <out-dir>/params_<marker>.json).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Check { .. } => "check",
            Command::Build { .. } => "build",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::Generate { .. } => "generate",
            Command::Export { .. } => "export",
        }
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Version/help requests are not errors.
            use clap::error::ErrorKind;
            if matches!(err.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = err.print();
                std::process::exit(0);
            }
            let _ = err.print();
            let mut manifest = RunManifest::new("usage-error");
            manifest.error_chain = vec![err.to_string()];
            manifest.write(&default_out_dir());
            std::process::exit(1);
        }
    };

    let out_dir = cli.out_dir.clone().unwrap_or_else(default_out_dir);
    let mut manifest = RunManifest::new(cli.command.name());
    let started = Instant::now();
    let result = run(&cli.command, &out_dir, &mut manifest);
    manifest.timing_ms = started.elapsed().as_millis();
    manifest.success = result.is_ok();
    if let Err(err) = &result {
        manifest.record_error(err);
    }
    manifest.write(&out_dir);

    match result {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(exit_code(&err));
        }
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// 1 for invalid user input, 2 for failures during computation or IO.
fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(core) = cause.downcast_ref::<hmmix_core::Error>() {
            return if core.is_validation() { 1 } else { 2 };
        }
    }
    2
}

fn run(command: &Command, out_dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create output directory {}", out_dir.display()))?;
    match command {
        Command::Check {
            config,
            data,
            strict_interval,
        } => check(config, data, *strict_interval, manifest),
        Command::Build {
            config,
            data,
            hidden,
            smoothing,
            out,
        } => build(config, data, hidden, *smoothing, out.as_deref(), out_dir, manifest),
        Command::Predict {
            model,
            mode,
            steps,
            subject,
            data,
            obs,
            hidden,
            out,
        } => predict(
            model,
            *mode,
            *steps,
            subject.as_deref(),
            data.as_deref(),
            obs.as_deref(),
            hidden.as_deref(),
            out.as_deref(),
            out_dir,
            manifest,
        ),
        Command::Evaluate {
            config,
            data,
            hidden,
            k,
            seed,
            averaging,
            smoothing,
            out,
        } => evaluate(
            config,
            data,
            hidden,
            *k,
            *seed,
            (*averaging).into(),
            *smoothing,
            out.as_deref(),
            out_dir,
            manifest,
        ),
        Command::Generate {
            seed,
            subjects,
            out_data,
            out_config,
            out_spec,
        } => generate(
            *seed,
            *subjects,
            out_data.as_deref(),
            out_config.as_deref(),
            out_spec.as_deref(),
            out_dir,
            manifest,
        ),
        Command::Export {
            model,
            marker,
            out,
        } => export(model, marker, out.as_deref(), out_dir, manifest),
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_output(path: &Path, body: &str, manifest: &mut RunManifest) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))?;
    manifest.output(path);
    Ok(())
}

fn load_inputs(
    config_path: &Path,
    data_path: &Path,
    manifest: &mut RunManifest,
) -> Result<(PipelineConfig, Dataset, String)> {
    manifest.config_path = Some(config_path.display().to_string());
    manifest.data_path = Some(data_path.display().to_string());
    let config_text = read_to_string(config_path)?;
    let config = parse_config(&config_text)?;
    for warning in &config.warnings {
        manifest
            .warnings
            .push(format!("[{}] {}: {}", warning.section, warning.key, warning.message));
    }
    let data_text = read_to_string(data_path)?;
    let dataset = load_dataset(&data_text, &config)?;
    for note in &dataset.report.dropped_rows {
        manifest
            .warnings
            .push(format!("dropped row ({}): {}", note.subject, note.detail));
    }
    for note in &dataset.report.clamped_values {
        manifest
            .warnings
            .push(format!("clamped ({}): {}", note.subject, note.detail));
    }
    Ok((config, dataset, config_text))
}

fn check(
    config_path: &Path,
    data_path: &Path,
    strict_interval: Option<f64>,
    manifest: &mut RunManifest,
) -> Result<()> {
    let (config, dataset, _) = load_inputs(config_path, data_path, manifest)?;
    let dataset = match strict_interval {
        Some(delta) => {
            manifest.flag("strict_interval", delta);
            enforce_intervals(dataset, IntervalMode::Strict(delta))
        }
        None => dataset,
    };

    println!("config: ok ({} markers, {} layers)", config.markers.len(), config.layers.len());
    for layer in config.layers.values() {
        println!(
            "  layer {} (weight {}): {}",
            layer.name,
            layer.weight,
            layer.marker_names.join(", ")
        );
    }
    for warning in &config.warnings {
        println!("  warning [{}] {}: {}", warning.section, warning.key, warning.message);
    }
    println!(
        "data: ok ({} subjects, {} rows retained, {} rows dropped)",
        dataset.num_subjects(),
        dataset.report.retained_rows,
        dataset.report.dropped_rows.len()
    );
    for (marker, alphabet) in &dataset.alphabets {
        println!("  marker {marker}: {} states", alphabet.len());
    }
    for note in &dataset.report.dropped_subjects {
        println!("  dropped subject {}: {}", note.subject, note.detail);
    }
    Ok(())
}

fn build(
    config_path: &Path,
    data_path: &Path,
    hidden: &str,
    smoothing: f64,
    out: Option<&Path>,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    manifest.flag("hidden", hidden);
    manifest.flag("smoothing", smoothing);
    let (config, dataset, config_text) = load_inputs(config_path, data_path, manifest)?;
    let model = MixtureModel::build(&dataset, &config, hidden, smoothing)?;
    let doc = ModelDocument::from_model(&model, &dataset, &config_text)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("model.json"));
    let body = serde_json::to_string_pretty(&doc)?;
    write_output(&path, &(body + "\n"), manifest)?;
    println!(
        "built model for hidden marker `{hidden}`: {} channels, {} hidden states -> {}",
        doc.channels.len(),
        doc.hidden_alphabet.len(),
        path.display()
    );
    Ok(())
}

fn load_model(path: &Path, manifest: &mut RunManifest) -> Result<(ModelDocument, MixtureModel)> {
    manifest.flag("model", path.display());
    let text = read_to_string(path)?;
    let doc: ModelDocument =
        serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))?;
    let model = doc.to_model()?;
    Ok((doc, model))
}

/// Raw marker values for one subject, decoded from a data file and encoded
/// against the model's training alphabets.
fn subject_observation(
    model: &MixtureModel,
    doc: &ModelDocument,
    data_path: &Path,
    subject: &str,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let data_text = read_to_string(data_path)?;
    let dataset = load_dataset(&data_text, &doc.config)?;
    let mut observation = BTreeMap::new();
    for marker in model.channels().keys() {
        let labels = dataset.decode_trail(subject, marker)?;
        observation.insert(marker.clone(), model.encode_labels(marker, &labels)?);
    }
    Ok(observation)
}

/// Observation CSV: a header of marker names and one row per time step,
/// holding raw values (state labels for categorical markers, numbers for
/// binned ones). Columns that are not channels of the model are ignored.
fn file_observation(
    model: &MixtureModel,
    path: &Path,
    manifest: &mut RunManifest,
) -> Result<BTreeMap<String, Vec<usize>>> {
    let text = read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().context("observation file has no header")?.clone();
    let mut columns: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.context("malformed observation row")?;
        for (name, value) in headers.iter().zip(record.iter()) {
            columns
                .entry(name.to_string())
                .or_default()
                .push(value.to_string());
        }
    }
    let mut observation = BTreeMap::new();
    for (name, values) in columns {
        if !model.channels().contains_key(&name) {
            manifest
                .warnings
                .push(format!("observation column `{name}` is not a model channel, ignored"));
            continue;
        }
        let states = match &model.config().markers[&name].datatype {
            Datatype::Categorical => model.encode_labels(&name, &values)?,
            Datatype::ContinuousBinned { bins, lo, hi } => values
                .iter()
                .map(|raw| {
                    let value: f64 = raw.parse().map_err(|_| {
                        anyhow!("observation value `{raw}` for `{name}` is not numeric")
                    })?;
                    Ok(discretize(value, *bins, *lo, *hi)?)
                })
                .collect::<Result<Vec<usize>>>()?,
        };
        observation.insert(name, states);
    }
    Ok(observation)
}

fn posterior_table(matrix: &Array2<f64>, labels: &[String], index_name: &str) -> String {
    let mut out = format!("{index_name}\t{}\n", labels.join("\t"));
    for (t, row) in matrix.rows().into_iter().enumerate() {
        out.push_str(&t.to_string());
        for value in row {
            out.push('\t');
            out.push_str(&value.to_string());
        }
        out.push('\n');
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn predict(
    model_path: &Path,
    mode: PredictMode,
    steps: usize,
    subject: Option<&str>,
    data: Option<&Path>,
    obs: Option<&Path>,
    hidden: Option<&str>,
    out: Option<&Path>,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    manifest.flag("mode", format!("{mode:?}").to_lowercase());
    let (doc, model) = load_model(model_path, manifest)?;
    if let Some(hidden) = hidden {
        manifest.flag("hidden", hidden);
        if hidden != model.hidden_marker() {
            return Err(hmmix_core::Error::InvalidInput(format!(
                "model was built for hidden marker `{}`, not `{hidden}`",
                model.hidden_marker()
            ))
            .into());
        }
    }
    let observation = match (subject, obs) {
        (Some(subject), None) => {
            manifest.flag("subject", subject);
            let data = data.ok_or_else(|| anyhow!("--subject needs --data"))?;
            manifest.data_path = Some(data.display().to_string());
            subject_observation(&model, &doc, data, subject)?
        }
        (None, Some(path)) => {
            manifest.flag("obs", path.display());
            file_observation(&model, path, manifest)?
        }
        _ => {
            return Err(hmmix_core::Error::InvalidInput(
                "provide exactly one of --subject or --obs".into(),
            )
            .into())
        }
    };
    let query = Query::new(model.hidden_marker(), observation);

    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("prediction.tsv"));
    let table = match mode {
        PredictMode::Posteriors => {
            let (matrix, labels) = model.predict_posteriors(&query)?;
            posterior_table(&matrix, &labels, "t")
        }
        PredictMode::Future => {
            manifest.flag("steps", steps);
            let (matrix, labels) = model.predict_future(&query, steps)?;
            posterior_table(&matrix, &labels, "step")
        }
        PredictMode::Decode => {
            let decoded = model.predict_state_sequence(&query)?;
            println!("decode log-score: {}", decoded.log_score);
            let mut table = String::from("t\tstate\n");
            for (t, label) in decoded.labels.iter().enumerate() {
                table.push_str(&format!("{t}\t{label}\n"));
            }
            table
        }
    };
    write_output(&path, &table, manifest)?;
    println!("prediction written to {}", path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    config_path: &Path,
    data_path: &Path,
    hidden: &str,
    k: usize,
    seed: u64,
    averaging: Averaging,
    smoothing: f64,
    out: Option<&Path>,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    manifest.flag("hidden", hidden);
    manifest.flag("k", k);
    manifest.flag("averaging", format!("{averaging:?}").to_lowercase());
    manifest.flag("smoothing", smoothing);
    manifest.seed = Some(seed);
    let (config, dataset, _) = load_inputs(config_path, data_path, manifest)?;
    let report = k_fold_cv(&dataset, &config, hidden, k, seed, averaging, smoothing)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("cv_report.json"));
    let body = serde_json::to_string_pretty(&report)?;
    write_output(&path, &(body + "\n"), manifest)?;
    println!(
        "{k}-fold cv on `{hidden}`: mean F1 {:.4}, std {:.4} ({} steps scored, {} skipped) -> {}",
        report.mean,
        report.std,
        report.scored_steps,
        report.skipped.len(),
        path.display()
    );
    Ok(())
}

fn generate(
    seed: u64,
    subjects: Option<usize>,
    out_data: Option<&Path>,
    out_config: Option<&Path>,
    out_spec: Option<&Path>,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    manifest.seed = Some(seed);
    let mut spec = synthgen::default_spec(seed);
    if let Some(n) = subjects {
        manifest.flag("subjects", n);
        spec.num_subjects = n;
    }
    let (csv_text, ini_text) = synthgen::generate(&spec)?;

    let data_path = out_data
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("generated.csv"));
    let config_path = out_config
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("generated.ini"));
    let spec_path = out_spec
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join("generator_spec.json"));
    write_output(&data_path, &csv_text, manifest)?;
    write_output(&config_path, &ini_text, manifest)?;
    write_output(
        &spec_path,
        &(serde_json::to_string_pretty(&spec)? + "\n"),
        manifest,
    )?;
    manifest.data_path = Some(data_path.display().to_string());
    manifest.config_path = Some(config_path.display().to_string());
    println!(
        "generated {} subjects (seed {seed}) -> {}, {}",
        spec.num_subjects,
        data_path.display(),
        config_path.display()
    );
    Ok(())
}

fn export(
    model_path: &Path,
    marker: &str,
    out: Option<&Path>,
    out_dir: &Path,
    manifest: &mut RunManifest,
) -> Result<()> {
    manifest.flag("marker", marker);
    let (_, model) = load_model(model_path, manifest)?;
    let export = model.export_parameters(marker)?;
    let path = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_dir.join(format!("params_{marker}.json")));
    let body = serde_json::to_string_pretty(&export)?;
    write_output(&path, &(body + "\n"), manifest)?;
    println!("parameters for `{marker}` written to {}", path.display());
    Ok(())
}
