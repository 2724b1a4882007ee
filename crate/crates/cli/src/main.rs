//! `mindpres`: command-line frontend for the detection pipeline.
//!
//! Subcommands cover the whole lifecycle: generate a labeled corpus, train
//! and evaluate the classifier suite, serve the risk evaluator, run
//! simulated attack scenarios, and benchmark detector throughput.

use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mindpres_core::classifiers::ModelKind;
use mindpres_core::corpus::{generate_corpus, load_corpus, save_corpus, GenerationProfile};
use mindpres_core::evaluator::{load_model, save_model, server};
use mindpres_core::hids::HidsConfig;
use mindpres_core::nids::NidsConfig;
use mindpres_core::pipeline::{run_training_pipeline, PipelineEntry, TrainOptions};
use mindpres_core::prevention::{ConsolePrompter, OverrideSet, PolicyMode, ScriptedPrompter};
use mindpres_core::sim::{run_scenario, run_throughput_bench, Scenario, SimOptions};

#[derive(Parser)]
#[command(
    name = "mindpres",
    version,
    about = "Mobile-cloud intrusion detection and prevention pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus management
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Train the classifier suite and persist the best model
    Train(TrainArgs),
    /// Evaluate a saved model against a labeled corpus
    Evaluate(EvaluateArgs),
    /// Serve assessments over newline-delimited JSON
    Serve(ServeArgs),
    /// Run a simulated device scenario end to end
    Simulate(SimulateArgs),
    /// Measure detector throughput
    Bench(BenchArgs),
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Generate a labeled synthetic corpus as JSONL
    Generate(CorpusGenerateArgs),
}

#[derive(Args)]
struct CorpusGenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of benign apps
    #[arg(long, default_value_t = 100)]
    benign: usize,
    /// Number of malicious apps
    #[arg(long, default_value_t = 100)]
    malicious: usize,
    /// Output JSONL path
    #[arg(long)]
    out: PathBuf,
    /// Inclusion probability of non-dangerous tokens (both classes)
    #[arg(long)]
    common_prob: Option<f64>,
    /// Benign-class inclusion probability of dangerous permissions
    #[arg(long)]
    dangerous_prob: Option<f64>,
    /// Multiplier on the dangerous-permission probability for malware
    #[arg(long)]
    separation: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled corpus (JSONL)
    #[arg(long)]
    corpus: PathBuf,
    /// Training fraction of the stratified split
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    /// Classifier kind to train, or `all`
    #[arg(long, default_value = "all")]
    classifier: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Where to store the selected model bundle
    #[arg(long)]
    out: PathBuf,
    /// Where to store the per-kind evaluation report (JSON)
    #[arg(long)]
    report: Option<PathBuf>,
    /// Keep only the top-k features by mutual information
    #[arg(long, default_value_t = 64)]
    top_k: usize,
    /// Malicious-decision threshold used for evaluation
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Report path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Bind address, e.g. 127.0.0.1:7878
    #[arg(long, default_value = "127.0.0.1:7878")]
    addr: String,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Auto,
    Interactive,
}

impl From<ModeArg> for PolicyMode {
    fn from(mode: ModeArg) -> Self {
        match mode {
            ModeArg::Auto => PolicyMode::Auto,
            ModeArg::Interactive => PolicyMode::Interactive,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario description (JSON)
    #[arg(long)]
    scenario: PathBuf,
    /// Model bundle for the application evaluator
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Auto)]
    mode: ModeArg,
    /// Report path; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Startup override policy (JSON list of override decisions)
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Mirror the audit log to a JSONL file
    #[arg(long)]
    audit_out: Option<PathBuf>,
    /// Embed the delivered telemetry trace in the report
    #[arg(long)]
    trace: bool,
    /// Write the delivered telemetry as JSONL
    #[arg(long)]
    telemetry_out: Option<PathBuf>,
    /// Detector configuration overrides (JSON: {"hids":...,"nids":...})
    #[arg(long)]
    detector_config: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 1_000_000)]
    events: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(serde::Serialize)]
struct TrainReportDoc {
    train_size: usize,
    test_size: usize,
    reports: Vec<PipelineEntry>,
    selected: String,
}

#[derive(Default, serde::Deserialize)]
#[serde(default)]
struct DetectorConfigDoc {
    hids: HidsConfig,
    nids: NidsConfig,
}

fn cmd_corpus_generate(args: CorpusGenerateArgs) -> Result<()> {
    let mut profile = GenerationProfile::default();
    if let Some(p) = args.common_prob {
        profile.benign_common = p;
        profile.malicious_common = p;
    }
    if let Some(p) = args.dangerous_prob {
        profile.benign_dangerous = p;
    }
    if let Some(s) = args.separation {
        profile.dangerous_separation = s;
    }
    let corpus = generate_corpus(args.seed, args.benign, args.malicious, &profile)?;
    save_corpus(&corpus, &args.out)
        .with_context(|| format!("writing corpus to {}", args.out.display()))?;
    eprintln!(
        "wrote {} labeled manifests to {}",
        corpus.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let corpus = load_corpus(&args.corpus)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let kinds: Vec<ModelKind> = if args.classifier == "all" {
        ModelKind::ALL.to_vec()
    } else {
        vec![args
            .classifier
            .parse()
            .map_err(|e: String| anyhow::anyhow!(e))?]
    };
    let options = TrainOptions {
        train_fraction: args.split,
        seed: args.seed,
        kinds,
        top_k_features: args.top_k,
        decision_threshold: args.threshold,
        ..TrainOptions::default()
    };
    let outcome = run_training_pipeline(&corpus, &options)?;

    save_model(&outcome.selected_bundle, &args.out)
        .with_context(|| format!("writing model to {}", args.out.display()))?;
    let doc = TrainReportDoc {
        train_size: outcome.split.train_ids.len(),
        test_size: outcome.split.test_ids.len(),
        reports: outcome.entries,
        selected: outcome.selected_model_id.clone(),
    };
    let rendered = serde_json::to_string_pretty(&doc)?;
    match &args.report {
        Some(path) => std::fs::write(path, rendered + "\n")
            .with_context(|| format!("writing report to {}", path.display()))?,
        None => println!("{rendered}"),
    }
    eprintln!("selected model: {}", outcome.selected_model_id);
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    use mindpres_core::classifiers::{evaluate, Dataset};
    let bundle = load_model(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let corpus = load_corpus(&args.corpus)
        .with_context(|| format!("loading corpus {}", args.corpus.display()))?;
    let data = Dataset::from_corpus(&corpus, &bundle.model.vocab);
    let report = evaluate(&bundle.model, &data, args.threshold)?;
    let rendered = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => std::fs::write(path, rendered + "\n")?,
        None => println!("{rendered}"),
    }
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let bundle = load_model(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;
    let handle = server::serve(Arc::new(bundle), args.addr.as_str())
        .with_context(|| format!("binding {}", args.addr))?;
    eprintln!("serving assessments on {}", handle.local_addr());
    // runs until the process is killed
    loop {
        std::thread::park();
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let scenario_text = std::fs::read_to_string(&args.scenario)
        .with_context(|| format!("reading scenario {}", args.scenario.display()))?;
    let scenario: Scenario =
        serde_json::from_str(&scenario_text).context("parsing scenario JSON")?;
    let bundle = load_model(&args.model)
        .with_context(|| format!("loading model {}", args.model.display()))?;

    let initial_overrides = match &args.policy {
        Some(path) => OverrideSet::from_policy_file(path)
            .with_context(|| format!("loading policy {}", path.display()))?,
        None => OverrideSet::new(),
    };
    let detector = match &args.detector_config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading detector config {}", path.display()))?;
            serde_json::from_str::<DetectorConfigDoc>(&text).context("parsing detector config")?
        }
        None => DetectorConfigDoc::default(),
    };
    let audit_sink: Option<Box<dyn std::io::Write + Send>> = match &args.audit_out {
        Some(path) => Some(Box::new(std::io::BufWriter::new(
            std::fs::File::create(path)
                .with_context(|| format!("creating audit log {}", path.display()))?,
        ))),
        None => None,
    };

    let mode: PolicyMode = args.mode.into();
    let options = SimOptions {
        hids_config: detector.hids,
        nids_config: detector.nids,
        initial_overrides,
        collect_trace: args.trace || args.telemetry_out.is_some(),
        audit_sink,
    };

    let report = match mode {
        PolicyMode::Auto => {
            let mut prompter = ScriptedPrompter::new(Vec::new());
            run_scenario(&scenario, &bundle, mode, &mut prompter, options)?
        }
        PolicyMode::Interactive => {
            let mut prompter = ConsolePrompter::default();
            run_scenario(&scenario, &bundle, mode, &mut prompter, options)?
        }
    };

    if let Some(path) = &args.telemetry_out {
        let trace = report.trace.as_ref().expect("trace collected");
        let mut out = String::new();
        for record in &trace.delivered {
            out.push_str(&serde_json::to_string(record)?);
            out.push('\n');
        }
        std::fs::write(path, out)
            .with_context(|| format!("writing telemetry to {}", path.display()))?;
    }

    let mut report = report;
    if !args.trace {
        report.trace = None;
    }
    let rendered = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => std::fs::write(path, rendered + "\n")?,
        None => println!("{rendered}"),
    }
    eprintln!(
        "verdicts: {}, actions: {}, detection rate: {:?}, scenario FAR: {:?}",
        report.verdicts.len(),
        report.actions.len(),
        report.metrics.detection_rate,
        report.metrics.scenario_false_alarm_rate
    );
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.events == 0 {
        bail!("--events must be positive");
    }
    let report = run_throughput_bench(args.events, args.seed);
    println!("{}", serde_json::to_string_pretty(&report)?);
    eprintln!(
        "{} events in {:.3} s ({:.0} events/s)",
        report.events, report.elapsed_secs, report.events_per_second
    );
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Corpus(CorpusCommand::Generate(args)) => cmd_corpus_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Bench(args) => cmd_bench(args),
    };
    if let Err(error) = result {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}
