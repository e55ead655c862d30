//! `rca`: diagnose, analyze, generate and evaluate from the command line.
//!
//! stdout carries only machine output. Failures print one JSON line on
//! stderr and exit with a code per error class (see [`failure`]).

mod failure;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use failure::Failure;
use rca_core::config::PipelineConfig;
use rca_core::eval::{render_case_report, run_eval, CaseManifest, EvalResult};
use rca_core::fixtures::{
    corpus, generate_corpus, generate_scenario, reference_case_scenario, Scenario, LOGS_FILE, NODE_METRICS_FILE,
    POD_METRICS_FILE, TRACES_FILE,
};
use rca_core::fusion::Strategy;
use rca_core::ingest::DatasetPaths;
use rca_core::pipeline::{analyze, build_context, load_case};
use rca_core::reasoner::{diagnose, make_backend};
use rca_core::time::TimeWindow;
use rca_core::trace_analysis::build_call_trees;

#[derive(Parser)]
#[command(name = "rca", version, about = "Root-cause analysis for microservice telemetry")]
struct Cli {
    /// Pipeline config file (TOML, or JSON with a .json extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for scenario generation and for backends that accept one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// trace, debug, info, warn or error; overrides the config file.
    #[arg(long, global = true)]
    log_level: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on one case and print the diagnosis JSON.
    Diagnose(DiagnoseArgs),
    /// Run the analyzers only and print their reports as JSON.
    Analyze(AnalyzeArgs),
    /// Write synthetic scenarios with known root causes.
    Generate(GenerateArgs),
    /// Score diagnoses against a labeled case manifest.
    Eval(EvalArgs),
}

#[derive(Args)]
struct CaseArgs {
    /// Directory holding generated telemetry files; without --start/--end
    /// the case comes from its manifest.json.
    #[arg(long, conflicts_with_all = ["manifest"])]
    dir: Option<PathBuf>,
    #[arg(long = "traces")]
    traces: Vec<PathBuf>,
    #[arg(long = "metrics")]
    metrics: Vec<PathBuf>,
    #[arg(long = "logs")]
    logs: Vec<PathBuf>,
    /// Case window start: RFC 3339 or epoch seconds.
    #[arg(long, requires = "end")]
    start: Option<String>,
    #[arg(long, requires = "start")]
    end: Option<String>,
    /// Take paths and window from this case manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Case id within the manifest; optional when it holds a single case.
    #[arg(long)]
    case: Option<String>,
}

#[derive(Args)]
struct TuningArgs {
    /// Evidence fusion strategy; overrides the config file.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Comma-separated log keywords; replaces the configured list.
    #[arg(long, value_delimiter = ',')]
    keywords: Option<Vec<String>>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Write the evidence context JSON here.
    #[arg(long)]
    dump_context: Option<PathBuf>,
    /// Write every call tree as indented text here.
    #[arg(long)]
    dump_trees: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    tuning: TuningArgs,
    #[arg(long)]
    dump_trees: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario file, or a corpus file of the form `{"corpus": {"count": N}}`.
    #[arg(long, conflicts_with_all = ["corpus", "reference_case"])]
    spec: Option<PathBuf>,
    /// Generate an N-case mixed corpus.
    #[arg(long, conflicts_with = "reference_case")]
    corpus: Option<usize>,
    /// Generate the built-in cartservice case.
    #[arg(long)]
    reference_case: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[command(flatten)]
    tuning: TuningArgs,
    /// Evaluate every strategy, writing `eval_<strategy>.json` into --out.
    #[arg(long, requires = "out")]
    sweep: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the human-readable per-case report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Exit non-zero when accuracy of the configured strategy is below this.
    #[arg(long)]
    min_accuracy: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Some(level) = &cli.log_level {
        cfg.log_level = level.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.backend.seed = Some(seed);
    }
    cfg.validate()?;
    init_logging(&cfg.log_level);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Failure::Io(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Diagnose(a) => cmd_diagnose(a, cfg),
        Command::Analyze(a) => cmd_analyze(a, cfg),
        Command::Generate(a) => cmd_generate(a, cli.seed),
        Command::Eval(a) => cmd_eval(a, cfg),
    })
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    let Some(path) = path else {
        return Ok(PipelineConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(level.to_ascii_lowercase()).unwrap_or_default();
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn tune(cfg: &mut PipelineConfig, t: &TuningArgs) -> Result<(), Failure> {
    if let Some(s) = t.strategy {
        cfg.fusion.strategy = s;
    }
    if let Some(k) = &t.keywords {
        cfg.keywords.keywords = k
            .iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    cfg.validate()?;
    Ok(())
}

fn files_in(dir: &Path) -> DatasetPaths {
    let existing =
        |names: &[&str]| -> Vec<PathBuf> { names.iter().map(|n| dir.join(n)).filter(|p| p.is_file()).collect() };
    DatasetPaths {
        trace_paths: existing(&[TRACES_FILE]),
        metric_paths: existing(&[POD_METRICS_FILE, NODE_METRICS_FILE]),
        log_paths: existing(&[LOGS_FILE]),
    }
}

fn case_from_manifest(manifest: &Path, id: Option<&str>) -> Result<(DatasetPaths, TimeWindow), Failure> {
    let m = CaseManifest::load(manifest)?;
    let case = match id {
        Some(id) => m.cases.into_iter().find(|c| c.case_id == id),
        None if m.cases.len() == 1 => m.cases.into_iter().next(),
        None => {
            return Err(Failure::Usage(format!(
                "{} holds {} cases; pick one with --case",
                manifest.display(),
                m.cases.len()
            )))
        }
    };
    let case =
        case.ok_or_else(|| Failure::Manifest(format!("no case {:?} in {}", id.unwrap_or(""), manifest.display())))?;
    let paths = case
        .dataset
        .ok_or_else(|| Failure::Manifest(format!("case {:?} has no dataset files", case.case_id)))?;
    Ok((paths, case.window))
}

fn resolve_case(a: &CaseArgs) -> Result<(DatasetPaths, TimeWindow), Failure> {
    if let Some(manifest) = &a.manifest {
        return case_from_manifest(manifest, a.case.as_deref());
    }
    let window = match (&a.start, &a.end, &a.dir) {
        (Some(s), Some(e), _) => TimeWindow::parse(s, e).map_err(|e| Failure::Usage(e.to_string()))?,
        (None, None, Some(dir)) if dir.join("manifest.json").is_file() => {
            return case_from_manifest(&dir.join("manifest.json"), a.case.as_deref());
        }
        _ => {
            return Err(Failure::Usage(
                "give --start and --end, --manifest, or a --dir holding manifest.json".into(),
            ))
        }
    };
    let mut paths = a.dir.as_deref().map(files_in).unwrap_or_default();
    paths.trace_paths.extend(a.traces.iter().cloned());
    paths.metric_paths.extend(a.metrics.iter().cloned());
    paths.log_paths.extend(a.logs.iter().cloned());
    Ok((paths, window))
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn dump_trees(path: &Path, analysis: &rca_core::pipeline::CaseAnalysis) -> Result<(), Failure> {
    let (trees, _) = build_call_trees(&analysis.pre.traces_in_case_window());
    let text: String = trees.iter().map(|t| t.render() + "\n").collect();
    write_file(path, &text)
}

/// Prints one line to stdout. A reader that went away (`rca ... | head`)
/// is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::Io(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output types serialize")
}

fn cmd_diagnose(a: DiagnoseArgs, mut cfg: PipelineConfig) -> Result<(), Failure> {
    tune(&mut cfg, &a.tuning)?;
    let (paths, window) = resolve_case(&a.case)?;
    let backend = make_backend(&cfg.backend)?;
    let analysis = analyze(load_case(&paths, window)?, &cfg);
    for w in &analysis.pre.warnings {
        tracing::warn!("{w}");
    }
    if let Some(p) = &a.dump_trees {
        dump_trees(p, &analysis)?;
    }
    let context = build_context(&analysis, &cfg.fusion)?;
    if let Some(p) = &a.dump_context {
        write_file(p, &(to_json(&context) + "\n"))?;
    }
    let diagnosis = diagnose(&context, backend.as_ref())?;
    emit(&to_json(&diagnosis))?;
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs, mut cfg: PipelineConfig) -> Result<(), Failure> {
    tune(&mut cfg, &a.tuning)?;
    let (paths, window) = resolve_case(&a.case)?;
    let analysis = analyze(load_case(&paths, window)?, &cfg);
    if let Some(p) = &a.dump_trees {
        dump_trees(p, &analysis)?;
    }
    emit(&to_json(&serde_json::json!({
        "case_window": window,
        "reports": analysis.reports,
        "trace_warnings": analysis.trace_warnings,
    })))?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SpecFile {
    Corpus { corpus: CorpusSpec },
    Scenario(Box<Scenario>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusSpec {
    count: usize,
    #[serde(default)]
    seed: u64,
}

fn read_spec(path: &Path) -> Result<SpecFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Failure::InvalidSpec(format!("{}: {e}", path.display())))
}

fn cmd_generate(a: GenerateArgs, seed: Option<u64>) -> Result<(), Failure> {
    let scenarios = match (&a.spec, a.corpus, a.reference_case) {
        (Some(p), _, _) => match read_spec(p)? {
            SpecFile::Corpus { corpus: c } => corpus(seed.unwrap_or(c.seed), c.count),
            SpecFile::Scenario(s) => vec![*s],
        },
        (None, Some(n), _) => corpus(seed.unwrap_or(0), n),
        (None, None, true) => vec![reference_case_scenario()],
        _ => return Err(Failure::Usage("give --spec, --corpus or --reference-case".into())),
    };
    if scenarios.is_empty() {
        return Err(Failure::InvalidSpec("corpus count must be at least 1".into()));
    }
    let manifest = if let [single] = scenarios.as_slice() {
        let mut s = single.clone();
        if let Some(seed) = seed {
            s.seed = seed;
        }
        generate_scenario(&s, &a.out)?.manifest
    } else {
        generate_corpus(&scenarios, &a.out)?.0
    };
    emit(&to_json(
        &serde_json::json!({ "manifest": manifest, "cases": scenarios.len() }),
    ))?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, mut cfg: PipelineConfig) -> Result<(), Failure> {
    tune(&mut cfg, &a.tuning)?;
    let manifest = CaseManifest::load(&a.manifest)?;
    let backend = make_backend(&cfg.backend)?;
    let strategies: Vec<Strategy> = if a.sweep {
        Strategy::ALL.to_vec()
    } else {
        vec![cfg.fusion.strategy]
    };
    let mut results: Vec<EvalResult> = Vec::new();
    for s in strategies {
        let mut c = cfg.clone();
        c.fusion.strategy = s;
        results.push(run_eval(&manifest, &c, backend.as_ref())?);
    }

    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
        for r in &results {
            write_file(
                &dir.join(format!("eval_{}.json", r.strategy.as_str())),
                &(to_json(r) + "\n"),
            )?;
        }
    }
    if let Some(path) = &a.report {
        write_file(path, &render_report(&results))?;
    }
    if a.sweep {
        let summary: Vec<_> = results
            .iter()
            .map(|r| serde_json::json!({"strategy": r.strategy, "accuracy": r.accuracy, "avg_steps": r.avg_steps, "cases": r.cases}))
            .collect();
        emit(&to_json(&summary))?;
    } else {
        emit(&to_json(&results[0]))?;
    }

    if let Some(min) = a.min_accuracy {
        let gated = results
            .iter()
            .find(|r| r.strategy == cfg.fusion.strategy)
            .expect("configured strategy was evaluated");
        if gated.accuracy < min {
            return Err(Failure::AccuracyGate {
                strategy: gated.strategy,
                accuracy: gated.accuracy,
                min,
            });
        }
    }
    Ok(())
}

fn render_report(results: &[EvalResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "strategy {}: accuracy {:.4} ({}/{}), avg steps {:.2} over {} diagnosed\n\n",
            r.strategy.as_str(),
            r.accuracy,
            r.correct,
            r.cases,
            r.avg_steps,
            r.diagnosed
        ));
        for c in &r.per_case {
            out.push_str(&render_case_report(c));
            out.push('\n');
        }
    }
    out
}
