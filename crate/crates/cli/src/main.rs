//! `uqd`: batch entry points for the delegation toolkit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use uqd_core::delegation::{DefaultThreshold, DelegationPlan, PlanSource};
use uqd_core::explain::{knn_classify, project, EmbedMethod, Metric, TsneParams};
use uqd_core::kinematics::{
    load_dataset, save_dataset, save_sequences, synth_generate, Component, Dataset, Status,
    SynthConfig,
};
use uqd_core::metrics::{report, Condition, DecisionRecord, Group, ReportFilter};
use uqd_core::numeric::{
    cross_validate, grid_search, loso_folds, train, GridSpec, ModelConfig, TrainedModel,
    DEFAULT_EPOCHS,
};
use uqd_core::study::{StudyConfig, StudyModel};
use uqd_core::uq::{loso_confidences, sweep_thresholds, uq_sweep, MethodSpec, UqKind};
use uqd_service::{AppState, Setup, DATASET_FILE, SEQUENCES_FILE, SETUP_FILE};

#[derive(Debug, Parser)]
#[command(name = "uqd", version, about = "Confidence-aware delegation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic dataset.
    Synth(SynthArgs),
    /// Grid-search (or evaluate one configuration) with leave-one-subject-out CV and save a checkpoint.
    Train(TrainArgs),
    /// Out-of-fold confidence sweep for one estimator.
    UqSweep(SweepArgs),
    /// Embed hidden activations and score kNN agreement with the labels.
    Embed(EmbedArgs),
    /// Partition the assignment pool between model and reviewer.
    Delegate(DelegateArgs),
    /// Reliance metrics and tests over a decision log.
    Report(ReportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
struct Output {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Directory holding dataset.jsonl (and setup.json).
    #[arg(long, default_value = "data")]
    data: PathBuf,
    /// Assessment component to model.
    #[arg(long, value_parser = parse_component)]
    component: Option<Component>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Take the classifier architecture from this checkpoint.
    #[arg(long, conflicts_with_all = ["layers", "lr"])]
    model: Option<PathBuf>,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Seed for initialisation and every stochastic step.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Output directory.
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 15)]
    stroke_subjects: usize,
    #[arg(long, default_value_t = 10)]
    healthy_subjects: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    /// Multiplier on the gap between class motion templates.
    #[arg(long, default_value_t = 1.0)]
    separation: f64,
    /// Fraction of post-stroke trials drawn from the shifted motion family.
    #[arg(long, default_value_t = 0.0)]
    ood_fraction: f64,
    /// Joint position noise (metres).
    #[arg(long, default_value_t = 0.004)]
    noise_sd: f64,
    /// Probability that the second annotator disagrees.
    #[arg(long, default_value_t = 0.1)]
    disagreement: f64,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// `default` (small desk grid), `full` (every layout and rate) or a JSON grid file.
    #[arg(long, default_value = "default")]
    grid: String,
    /// Hidden layer sizes; with --lr, evaluates this one configuration instead of a grid.
    #[arg(long, value_delimiter = ',', requires = "lr")]
    layers: Option<Vec<usize>>,
    #[arg(long, requires = "layers")]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path (default: <data>/model-<component>.json).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Confidence estimator: mcp, confnet, mcdropout, rbf or nndist.
    #[arg(long, default_value = "mcp", value_parser = parse_kind)]
    method: UqKind,
    /// Threshold increment.
    #[arg(long, default_value_t = 0.05)]
    step: f64,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmbedChoice {
    Pca,
    Tsne,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MetricChoice {
    Euclidean,
    Cosine,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_enum, default_value_t = EmbedChoice::Tsne)]
    method: EmbedChoice,
    /// Neighbour counts, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5,10,15,20,25,30")]
    k: Vec<usize>,
    /// Distance metrics, comma separated.
    #[arg(
        long,
        value_enum,
        value_delimiter = ',',
        default_value = "euclidean,cosine"
    )]
    metric: Vec<MetricChoice>,
    /// Activation layer to embed (0 = scaled input).
    #[arg(long, default_value_t = 1)]
    layer: usize,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct DelegateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Delegate cases whose confidence is at least this value.
    #[arg(long, conflicts_with = "auto", required_unless_present = "auto")]
    tau: Option<f64>,
    /// Use the held-out default threshold.
    #[arg(long)]
    auto: bool,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Decision log (JSON lines); later lines for the same session, case and condition replace earlier ones.
    #[arg(
        long,
        conflicts_with = "simulate",
        required_unless_present = "simulate"
    )]
    decisions: Option<PathBuf>,
    /// Simulate this many participants instead.
    #[arg(long)]
    simulate: Option<usize>,
    /// Write the simulated decisions to this file.
    #[arg(long, requires = "simulate")]
    save_decisions: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_parser = parse_group)]
    group: Option<Group>,
    #[arg(long, value_parser = parse_condition)]
    condition: Option<Condition>,
    #[command(flatten)]
    output: Output,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "UQD_DATA_DIR", default_value = "uqd-data")]
    data_dir: PathBuf,
    #[arg(long, env = "UQD_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
}

fn parse_component(s: &str) -> Result<Component, String> {
    s.parse().map_err(|e: uqd_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<UqKind, String> {
    s.parse().map_err(|e: uqd_core::Error| e.to_string())
}

fn parse_group(s: &str) -> Result<Group, String> {
    s.parse().map_err(|e: uqd_core::Error| e.to_string())
}

fn parse_condition(s: &str) -> Result<Condition, String> {
    s.parse().map_err(|e: uqd_core::Error| e.to_string())
}

#[derive(Debug, Serialize)]
struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        Self {
            code: "invalid_argument",
            message: message.into(),
        }
    }
}

impl From<uqd_core::Error> for CliError {
    fn from(e: uqd_core::Error) -> Self {
        let code = match e {
            uqd_core::Error::Io(_) => "io_error",
            uqd_core::Error::Json(_) | uqd_core::Error::SchemaVersion(_) => "bad_input_file",
            uqd_core::Error::InvalidConfig(_) => "invalid_argument",
            uqd_core::Error::InsufficientCases(_) | uqd_core::Error::InsufficientSubjects(_) => {
                "insufficient_data"
            }
            _ => "failed",
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self {
            code: "io_error",
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self {
            code: "bad_input_file",
            message: e.to_string(),
        }
    }
}

impl From<uqd_service::SetupError> for CliError {
    fn from(e: uqd_service::SetupError) -> Self {
        Self {
            code: "failed",
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("error serializes"));
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::UqSweep(a) => sweep(a),
        Command::Embed(a) => embed(a),
        Command::Delegate(a) => delegate(a),
        Command::Report(a) => report_cmd(a),
        Command::Serve(a) => serve(a),
    }
}

fn emit<T: Serialize>(output: &Output, value: &T, table: impl FnOnce() -> String) -> CliResult<()> {
    let text = match output.format {
        Format::Json => serde_json::to_string_pretty(value)? + "\n",
        Format::Table => table(),
    };
    match &output.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn read_setup(dir: &Path) -> CliResult<Option<Setup>> {
    match std::fs::read_to_string(dir.join(SETUP_FILE)) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

struct Loaded {
    dataset: Dataset,
    study: StudyConfig,
}

fn load(args: &DataArgs) -> CliResult<Loaded> {
    let path = args.data.join(DATASET_FILE);
    if !path.exists() {
        return Err(CliError::invalid(format!(
            "{} not found; run `uqd synth --out-dir {}` first",
            path.display(),
            args.data.display()
        )));
    }
    let setup = read_setup(&args.data)?.unwrap_or(Setup {
        class_count: SynthConfig::default().class_count,
        study: StudyConfig::default(),
    });
    let dataset = load_dataset(&path, setup.class_count)?;
    let mut study = setup.study;
    if let Some(c) = args.component {
        study.component = c;
    }
    Ok(Loaded { dataset, study })
}

/// Classifier configuration from a checkpoint, explicit flags, or the study defaults.
fn classifier(
    args: &ModelArgs,
    study: &StudyConfig,
    input: usize,
    classes: usize,
) -> CliResult<ModelConfig> {
    let mut config = match &args.model {
        Some(path) => {
            let m = TrainedModel::load(path)?;
            if m.input_dim() != input || m.class_count != classes {
                return Err(CliError::invalid(format!(
                    "checkpoint {} expects {} features and {} classes, data has {input} and {classes}",
                    path.display(),
                    m.input_dim(),
                    m.class_count
                )));
            }
            m.config
        }
        None => ModelConfig::with_hidden(
            input,
            args.layers.as_deref().unwrap_or(&study.hidden),
            classes,
            args.lr.unwrap_or(study.learning_rate),
        )
        .epochs(study.epochs),
    };
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    config.seed = args.seed;
    config.validate()?;
    Ok(config)
}

fn apply_classifier(study: &mut StudyConfig, config: &ModelConfig, seed: u64) {
    study.hidden = config.hidden_sizes().to_vec();
    study.learning_rate = config.learning_rate;
    study.epochs = config.epochs;
    study.seed = seed;
}

#[derive(Serialize)]
struct SynthSummary {
    seed: u64,
    cases: usize,
    post_stroke_subjects: usize,
    healthy_subjects: usize,
    label_counts: BTreeMap<String, Vec<usize>>,
    files: Vec<String>,
}

fn synth(a: SynthArgs) -> CliResult<()> {
    let config = SynthConfig {
        n_stroke_subjects: a.stroke_subjects,
        n_healthy_subjects: a.healthy_subjects,
        trials_per_subject: a.trials,
        class_count: a.classes,
        class_separation: a.separation,
        ood_fraction: a.ood_fraction,
        noise_sd: a.noise_sd,
        annotator_disagreement: a.disagreement,
        frames_per_trial: a.frames,
        seed: a.seed,
    };
    config.validate()?;
    let out = synth_generate(&config)?;
    std::fs::create_dir_all(&a.out_dir)?;
    save_dataset(&out.dataset, a.out_dir.join(DATASET_FILE))?;
    save_sequences(&out.sequences, a.out_dir.join(SEQUENCES_FILE))?;
    let setup = Setup {
        class_count: a.classes,
        study: StudyConfig {
            seed: a.seed,
            ..StudyConfig::default()
        },
    };
    std::fs::write(
        a.out_dir.join(SETUP_FILE),
        serde_json::to_string_pretty(&setup)? + "\n",
    )?;

    let ds = &out.dataset;
    let count = |status: Status| {
        let mut ids: Vec<&str> = ds
            .cases
            .iter()
            .filter(|c| c.status == status)
            .map(|c| c.subject_id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        ids.len()
    };
    let mut label_counts = BTreeMap::new();
    for component in [Component::Rom, Component::Comp] {
        let mut counts = vec![0; ds.class_count];
        for c in &ds.cases {
            counts[c.label(component)] += 1;
        }
        label_counts.insert(component_name(component).to_string(), counts);
    }
    let summary = SynthSummary {
        seed: a.seed,
        cases: ds.len(),
        post_stroke_subjects: count(Status::PostStroke),
        healthy_subjects: count(Status::Healthy),
        label_counts,
        files: [DATASET_FILE, SEQUENCES_FILE, SETUP_FILE]
            .iter()
            .map(|f| a.out_dir.join(f).display().to_string())
            .collect(),
    };
    emit(&a.output, &summary, || {
        let mut s = String::new();
        let _ = writeln!(s, "cases {}", summary.cases);
        let _ = writeln!(
            s,
            "subjects post_stroke {} healthy {}",
            summary.post_stroke_subjects, summary.healthy_subjects
        );
        for (k, v) in &summary.label_counts {
            let _ = writeln!(s, "labels {k} {v:?}");
        }
        for f in &summary.files {
            let _ = writeln!(s, "wrote {f}");
        }
        s
    })
}

fn component_name(c: Component) -> &'static str {
    match c {
        Component::Rom => "rom",
        Component::Comp => "comp",
    }
}

fn layers_text(hidden: &[usize]) -> String {
    hidden
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Serialize)]
struct TrainRow {
    hidden: Vec<usize>,
    learning_rate: f64,
    mean_macro_f1: f64,
    mean_accuracy: f64,
    diverged: bool,
}

#[derive(Serialize)]
struct TrainSummary {
    component: Component,
    folds: usize,
    rows: Vec<TrainRow>,
    best: ModelConfig,
    best_macro_f1: f64,
    checkpoint: String,
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    let loaded = load(&a.data)?;
    let component = loaded.study.component;
    let data = loaded.dataset.labeled(component);
    let folds = loso_folds(&data.subjects)?;
    let (rows, best, best_score) = match (&a.layers, a.lr) {
        (Some(layers), Some(lr)) => {
            let config = ModelConfig::with_hidden(data.dim(), layers, data.class_count, lr)
                .epochs(a.epochs.unwrap_or(DEFAULT_EPOCHS))
                .seed(a.seed);
            config.validate()?;
            let cv = cross_validate(&data, &config, &folds)?;
            let row = TrainRow {
                hidden: layers.clone(),
                learning_rate: lr,
                mean_macro_f1: cv.mean_macro_f1,
                mean_accuracy: cv.mean_accuracy,
                diverged: false,
            };
            (vec![row], config, cv.mean_macro_f1)
        }
        _ => {
            let mut grid = match a.grid.as_str() {
                "default" => GridSpec::desk(),
                "full" => GridSpec::full(),
                path => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::invalid(format!("grid file {path}: {e}")))?;
                    serde_json::from_str(&text)?
                }
            };
            if let Some(e) = a.epochs {
                grid.epochs = e;
            }
            grid.seed = a.seed;
            let result = grid_search(&data, &grid, &folds)?;
            let rows = result
                .scores
                .iter()
                .map(|s| TrainRow {
                    hidden: s.config.hidden_sizes().to_vec(),
                    learning_rate: s.config.learning_rate,
                    mean_macro_f1: s.mean_macro_f1,
                    mean_accuracy: s.mean_accuracy,
                    diverged: s.diverged,
                })
                .collect();
            (rows, result.best, result.best_score)
        }
    };
    let model = train(&data, &best)?;
    let checkpoint = a.checkpoint.unwrap_or_else(|| {
        a.data
            .data
            .join(format!("model-{}.json", component_name(component)))
    });
    model.save(&checkpoint)?;
    let summary = TrainSummary {
        component,
        folds: folds.len(),
        rows,
        best,
        best_macro_f1: best_score,
        checkpoint: checkpoint.display().to_string(),
    };
    emit(&a.output, &summary, || {
        let mut s = format!(
            "{:<16}  {:>8}  {:>8}  {:>8}\n",
            "hidden", "lr", "macro_f1", "accuracy"
        );
        for r in &summary.rows {
            let flag = if r.diverged { "  diverged" } else { "" };
            let _ = writeln!(
                s,
                "{:<16}  {:>8}  {:>8.4}  {:>8.4}{flag}",
                layers_text(&r.hidden),
                r.learning_rate,
                r.mean_macro_f1,
                r.mean_accuracy
            );
        }
        let _ = writeln!(
            s,
            "# best hidden {} lr {} macro_f1 {:.4} over {} folds",
            layers_text(summary.best.hidden_sizes()),
            summary.best.learning_rate,
            summary.best_macro_f1,
            summary.folds
        );
        let _ = writeln!(s, "# checkpoint {}", summary.checkpoint);
        s
    })
}

fn sweep(a: SweepArgs) -> CliResult<()> {
    sweep_thresholds(a.step)?;
    let loaded = load(&a.data)?;
    let data = loaded.dataset.labeled(loaded.study.component);
    let config = classifier(&a.model, &loaded.study, data.dim(), data.class_count)?;
    let folds = loso_folds(&data.subjects)?;
    let method = MethodSpec::default_for(a.method);
    let oof = loso_confidences(&data, &config, &method, &folds)?;
    let result = uq_sweep(
        &oof.predictions,
        &oof.confidences,
        &oof.labels,
        data.class_count,
        a.step,
    )?;
    emit(&a.output, &result, || result.to_table())
}

#[derive(Serialize)]
struct EmbedRow {
    k: usize,
    accuracy: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct EmbedSummary {
    method: EmbedMethod,
    layer: usize,
    perplexity: Option<f64>,
    rows: Vec<EmbedRow>,
}

fn embed(a: EmbedArgs) -> CliResult<()> {
    let loaded = load(&a.data)?;
    let data = loaded.dataset.labeled(loaded.study.component);
    let model = match &a.model.model {
        Some(path) => TrainedModel::load(path)?,
        None => train(
            &data,
            &classifier(&a.model, &loaded.study, data.dim(), data.class_count)?,
        )?,
    };
    let vectors = data
        .features
        .iter()
        .map(|x| model.layer_activation(x, a.layer))
        .collect::<Result<Vec<_>, _>>()?;
    let ids: Vec<String> = loaded.dataset.cases.iter().map(|c| c.id()).collect();
    let method = match a.method {
        EmbedChoice::Pca => EmbedMethod::Pca,
        EmbedChoice::Tsne => EmbedMethod::Tsne,
    };
    let map = project(
        &vectors,
        &ids,
        &data.labels,
        data.class_count,
        method,
        &TsneParams::default(),
        a.model.seed,
    )?;
    let points: Vec<Vec<f64>> = map.points.iter().map(|p| p.to_vec()).collect();
    let mut rows = Vec::new();
    for &k in &a.k {
        let mut accuracy = BTreeMap::new();
        for m in &a.metric {
            let (name, metric) = match m {
                MetricChoice::Euclidean => ("euclidean", Metric::Euclidean),
                MetricChoice::Cosine => ("cosine", Metric::Cosine),
            };
            accuracy.insert(
                name.to_string(),
                knn_classify(&points, &data.labels, k, metric, true)?,
            );
        }
        rows.push(EmbedRow { k, accuracy });
    }
    let summary = EmbedSummary {
        method,
        layer: a.layer,
        perplexity: map.params.as_ref().and_then(|p| p.perplexity),
        rows,
    };
    emit(&a.output, &summary, || {
        let names: Vec<&String> = summary
            .rows
            .first()
            .map(|r| r.accuracy.keys().collect())
            .unwrap_or_default();
        let mut s = format!("{:>4}", "k");
        for n in &names {
            let _ = write!(s, "  {n:>9}");
        }
        s.push('\n');
        for r in &summary.rows {
            let _ = write!(s, "{:>4}", r.k);
            for n in &names {
                let _ = write!(s, "  {:>9.4}", r.accuracy[*n]);
            }
            s.push('\n');
        }
        s
    })
}

fn study_model(data: &DataArgs, model: &ModelArgs) -> CliResult<StudyModel> {
    let mut loaded = load(data)?;
    let labeled = loaded.dataset.labeled(loaded.study.component);
    let config = classifier(model, &loaded.study, labeled.dim(), labeled.class_count)?;
    apply_classifier(&mut loaded.study, &config, model.seed);
    Ok(StudyModel::build(loaded.dataset, loaded.study)?)
}

#[derive(Serialize)]
struct DelegateSummary {
    default_threshold: DefaultThreshold,
    #[serde(flatten)]
    plan: DelegationPlan,
}

fn delegate(a: DelegateArgs) -> CliResult<()> {
    if let Some(t) = a.tau.filter(|t| !(0.0..=1.0).contains(t)) {
        return Err(CliError::invalid(format!("--tau {t} must lie in [0, 1]")));
    }
    let study = study_model(&a.data, &a.model)?;
    let (tau, source) = match a.tau {
        Some(t) => (t, PlanSource::UserExplored),
        None => (study.default_threshold.threshold, PlanSource::Default),
    };
    let ids: Vec<String> = study.pool.iter().map(|c| c.case_id.clone()).collect();
    let plan = study.plan(&ids, tau, source, &[])?;
    let summary = DelegateSummary {
        default_threshold: study.default_threshold.clone(),
        plan,
    };
    emit(&a.output, &summary, || {
        let p = &summary.plan;
        let h = &p.heldout_stats;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "threshold {:.2} ({})",
            p.threshold,
            if p.source == PlanSource::Default {
                "default"
            } else {
                "user"
            }
        );
        let acc = h
            .accuracy_on_delegated
            .map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "held-out delegated {}/{} accuracy {acc}",
            h.n_delegated, h.n_total
        );
        let _ = writeln!(
            s,
            "pool delegated {} review {}",
            p.partition.delegated_ids.len(),
            p.partition.review_ids.len()
        );
        let _ = writeln!(
            s,
            "{:<12}  {:>10}  {:>9}  {:>5}  {:>5}",
            "case", "confidence", "placement", "ai", "truth"
        );
        for c in &study.pool {
            let placement = if p.partition.delegated_ids.contains(&c.case_id) {
                "delegated"
            } else {
                "review"
            };
            let _ = writeln!(
                s,
                "{:<12}  {:>10.4}  {:>9}  {:>5}  {:>5}",
                c.case_id, c.confidence_numerical, placement, c.predicted, c.truth
            );
        }
        s
    })
}

fn read_decisions(path: &Path) -> CliResult<Vec<DecisionRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut latest: Vec<DecisionRecord> = Vec::new();
    let mut index: BTreeMap<(String, String, Condition), usize> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: DecisionRecord = serde_json::from_str(line).map_err(|e| CliError {
            code: "bad_input_file",
            message: format!("{} line {}: {e}", path.display(), i + 1),
        })?;
        let key = (r.session_id.clone(), r.case_id.clone(), r.condition);
        match index.get(&key) {
            Some(&j) => latest[j] = r,
            None => {
                index.insert(key, latest.len());
                latest.push(r);
            }
        }
    }
    Ok(latest)
}

fn report_cmd(a: ReportArgs) -> CliResult<()> {
    if a.simulate == Some(0) {
        return Err(CliError::invalid(
            "--simulate needs at least one participant",
        ));
    }
    let records = match (&a.decisions, a.simulate) {
        (Some(path), _) => read_decisions(path)?,
        (None, Some(n)) => {
            let study = study_model(&a.data, &a.model)?;
            let records = study.simulate_decisions(n, a.model.seed)?;
            if let Some(path) = &a.save_decisions {
                let mut text = String::new();
                for r in &records {
                    text.push_str(&serde_json::to_string(r)?);
                    text.push('\n');
                }
                std::fs::write(path, text)?;
            }
            records
        }
        (None, None) => unreachable!("clap requires one of --decisions or --simulate"),
    };
    let r = report(
        &records,
        ReportFilter {
            group: a.group,
            condition: a.condition,
        },
    )?;
    emit(&a.output, &r, || r.to_text())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let state = AppState::open(&a.data_dir)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(uqd_service::serve(state, SocketAddr::new(a.host, a.port)))?;
    Ok(())
}
