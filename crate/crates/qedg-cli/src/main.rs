//! `qedg` — train a target, steal it through a hard-label oracle, and
//! measure how faithful the copy is.
//!
//! Exit codes: 0 success, 2 configuration error, 3 query budget exhausted
//! mid-run (partial artifacts are still written), 4 remote oracle failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qedg::checkpoint::{load_checkpoint, save_checkpoint};
use qedg::config::{load_config, OracleSettings, RunConfig, TaskKind};
use qedg::data::{load_dataset, probe_grid_2d, DataLayout, SplitDataset};
use qedg::eval::{
    accuracy, attack_success_rate, cohens_kappa, AsrCell, AttackAlgo, AttackParams, ClipRange,
    EvalError, MetricsReport,
};
use qedg::extraction::{run_extraction, ExtractionError, ProbeSet, RunOutcome};
use qedg::nets::{train_target, Network};
use qedg::oracle::OracleError;
use qedg::report::emit_report;
use qedg::serve::{serve_target, ServeOptions};
use qedg::theory::{query_complexity_bound, repeat_count, validate_theorem};

const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_REMOTE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "qedg",
    version,
    about = "Query-efficient data-free model stealing, desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run config; documented defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override (default qedg-out).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Oracle override: `local` or `remote:http://host:port`.
    #[arg(long, global = true, value_name = "SPEC")]
    oracle: Option<String>,

    /// Query budget override for attack / serve-target.
    #[arg(long, global = true)]
    budget: Option<u64>,

    /// Comma list of attack components to disable: qa,harm,div.
    #[arg(long, global = true, value_delimiter = ',', value_name = "LIST")]
    ablate: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the victim classifier and save its checkpoint.
    TrainTarget,
    /// Run the extraction attack against the configured oracle.
    Attack,
    /// Score a stolen substitute against the target and test data.
    Evaluate,
    /// Expose a trained target as a hard-label HTTP oracle.
    ServeTarget,
    /// Print the query-complexity bound Q and repeat count R.
    TheoryBound,
    /// Empirically validate the bound on noisy threshold search.
    TheoryValidate,
    /// Re-emit report artifacts from a stored attack trace.
    Report,
}

impl Command {
    fn task(&self) -> TaskKind {
        match self {
            Command::TrainTarget => TaskKind::TrainTarget,
            Command::Attack => TaskKind::Attack,
            Command::Evaluate => TaskKind::Evaluate,
            Command::ServeTarget => TaskKind::ServeTarget,
            Command::TheoryBound => TaskKind::TheoryBound,
            Command::TheoryValidate => TaskKind::TheoryValidate,
            Command::Report => TaskKind::Report,
        }
    }
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<qedg::config::ConfigError> for Failure {
    fn from(e: qedg::config::ConfigError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<qedg::data::DataError> for Failure {
    fn from(e: qedg::data::DataError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<qedg::report::ReportError> for Failure {
    fn from(e: qedg::report::ReportError) -> Self {
        Failure::runtime(e.to_string())
    }
}

impl From<qedg::checkpoint::CheckpointError> for Failure {
    fn from(e: qedg::checkpoint::CheckpointError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<qedg::theory::TheoryError> for Failure {
    fn from(e: qedg::theory::TheoryError) -> Self {
        Failure::config(e.to_string())
    }
}

impl From<qedg::nets::NetError> for Failure {
    fn from(e: qedg::nets::NetError) -> Self {
        Failure::runtime(e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Failure::runtime(e.to_string())
    }
}

impl From<ExtractionError> for Failure {
    fn from(e: ExtractionError) -> Self {
        match &e {
            ExtractionError::InvalidConfig(_) => Failure::config(e.to_string()),
            ExtractionError::Oracle(oe) => oracle_failure(oe),
            _ => Failure::runtime(e.to_string()),
        }
    }
}

fn oracle_failure(e: &OracleError) -> Failure {
    let code = match e {
        OracleError::BudgetExceeded { .. } => EXIT_BUDGET,
        OracleError::RemoteUnavailable(_) | OracleError::MalformedResponse(_) => EXIT_REMOTE,
        _ => 1,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter("QEDG_LOG")).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

/// Loads the config and applies CLI overrides.
fn effective_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(task) = config.task {
        let invoked = cli.command.task();
        if task != invoked {
            return Err(Failure::config(format!(
                "config pins task {} but the {} subcommand was invoked",
                task.name(),
                invoked.name()
            )));
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = Some(out.clone());
    }
    if let Some(budget) = cli.budget {
        config.attack.query_budget = budget;
        config.serve.budget = Some(budget);
    }
    if let Some(oracle) = &cli.oracle {
        config.oracle = parse_oracle_flag(oracle)?;
    }
    for component in &cli.ablate {
        match component.trim() {
            "qa" => config.attack.enable_query_free_augmentation = false,
            "harm" => config.attack.enable_harmony = false,
            "div" => config.attack.enable_diversity = false,
            "" => {}
            other => {
                return Err(Failure::config(format!(
                    "unknown ablation component {other:?}; valid components: qa, harm, div"
                )))
            }
        }
    }
    config.validate()?;
    Ok(config)
}

fn parse_oracle_flag(spec: &str) -> Result<OracleSettings, Failure> {
    if spec == "local" {
        return Ok(OracleSettings::Local);
    }
    if let Some(url) = spec.strip_prefix("remote:") {
        if url.is_empty() {
            return Err(Failure::config("remote oracle needs a URL after `remote:`"));
        }
        return Ok(OracleSettings::Remote {
            url: url.to_string(),
            timeout_ms: 10_000,
            retry_limit: 2,
        });
    }
    Err(Failure::config(format!(
        "unknown oracle spec {spec:?}; expected `local` or `remote:http://host:port`"
    )))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = effective_config(cli)?;
    match cli.command {
        Command::TrainTarget => cmd_train_target(&config),
        Command::Attack => cmd_attack(&config),
        Command::Evaluate => cmd_evaluate(&config),
        Command::ServeTarget => cmd_serve_target(&config),
        Command::TheoryBound => cmd_theory_bound(&config),
        Command::TheoryValidate => cmd_theory_validate(&config),
        Command::Report => cmd_report(&config),
    }
}

fn target_manifest_path(out: &Path) -> PathBuf {
    out.join("target.json")
}

fn load_target(out: &Path) -> Result<Network, Failure> {
    let path = target_manifest_path(out);
    if !path.exists() {
        return Err(Failure::config(format!(
            "no target checkpoint at {}; run `qedg train-target` first",
            path.display()
        )));
    }
    Ok(load_checkpoint(&path)?.0)
}

fn cmd_train_target(config: &RunConfig) -> Result<(), Failure> {
    let split = load_dataset(&config.dataset_spec(), config.seed)?;
    let spec = config.target_spec(split.train.dim(), split.train.num_classes());
    let (network, test_accuracy) = train_target(&split, &spec, &config.train_config())?;
    let out = config.out_dir();
    let path = save_checkpoint(
        &out,
        "target",
        &network,
        serde_json::json!({ "test_accuracy": test_accuracy }),
    )?;
    println!(
        "target trained: test accuracy {test_accuracy:.4}, checkpoint {}",
        path.display()
    );
    Ok(())
}

/// Builds the probe set used for query-free consistency snapshots: a
/// uniform grid for planar data, the test features otherwise. All of it
/// is scored against a locally available target, never the oracle.
fn build_probe(
    split: &SplitDataset,
    per_axis: usize,
    target: Option<&Network>,
) -> Result<Option<ProbeSet>, Failure> {
    let Some(target) = target else {
        return Ok(None);
    };
    let (features, n) = match split.train.layout() {
        DataLayout::Vector { dim: 2 } => {
            let (lo, hi) = split.train.bounding_box();
            let grid = probe_grid_2d(&lo, &hi, per_axis);
            let n = grid.len() / 2;
            (grid, n)
        }
        _ => (split.test.features().to_vec(), split.test.len()),
    };
    Ok(Some(
        ProbeSet::from_target(features, n, target).map_err(Failure::from)?,
    ))
}

fn outcome_exit(outcome: &RunOutcome) -> Result<(), Failure> {
    match outcome {
        RunOutcome::Completed => Ok(()),
        RunOutcome::BudgetTripped { at_epoch } => Err(Failure {
            code: EXIT_BUDGET,
            message: format!(
                "query budget exhausted at epoch {at_epoch}; partial artifacts were written"
            ),
        }),
        RunOutcome::Aborted { at_epoch, detail } => Err(Failure::runtime(format!(
            "attack aborted at epoch {at_epoch}: {detail}"
        ))),
    }
}

fn cmd_attack(config: &RunConfig) -> Result<(), Failure> {
    let split = load_dataset(&config.dataset_spec(), config.seed)?;
    let layout = split.train.layout();
    let num_classes = split.train.num_classes();
    let extraction = config.extraction_config(layout);
    extraction.validate().map_err(Failure::from)?;

    let out = config.out_dir();
    // A locally stored target powers probe-consistency snapshots (and the
    // local oracle); a remote run without one simply skips the snapshots.
    let local_target = match config.oracle {
        OracleSettings::Local | OracleSettings::Noisy { .. } => Some(load_target(&out)?),
        OracleSettings::Remote { .. } => {
            let path = target_manifest_path(&out);
            path.exists()
                .then(|| load_checkpoint(&path).map(|(net, _)| net))
                .transpose()?
        }
    };
    let oracle = config
        .build_oracle(local_target.clone(), num_classes)
        .map_err(Failure::from)?;
    let probe = build_probe(&split, config.evaluation.probe_per_axis, local_target.as_ref())?;

    let generator_spec = config.generator_spec(layout, num_classes);
    let substitute_spec = config.substitute_spec(layout.dim(), num_classes);
    let run = run_extraction(
        &oracle,
        &extraction,
        &generator_spec,
        &substitute_spec,
        probe.as_ref(),
    )?;

    // artifacts first; a tripped budget still leaves a usable run behind
    save_checkpoint(
        &out,
        "substitute",
        &run.substitute,
        serde_json::json!({
            "queries_used": run.queries_used,
            "epochs": run.trace.records.len(),
        }),
    )?;
    save_checkpoint(&out, "generator", &run.generator, serde_json::Value::Null)?;

    let consistency = run
        .trace
        .records
        .iter()
        .rev()
        .find_map(|r| r.probe_consistency)
        .map(f64::from);
    let kappa = match (&probe, consistency) {
        (Some(p), Some(_)) => {
            let preds = run
                .substitute
                .predict_labels(&p.features, p.n)
                .map_err(|e| Failure::runtime(e.to_string()))?;
            Some(cohens_kappa(&preds, &p.target_labels, num_classes)?)
        }
        _ => None,
    };
    let metrics = MetricsReport {
        accuracy: None,
        consistency,
        kappa,
        asr_table: Vec::new(),
    };
    let paths = emit_report(&run.trace, &metrics, &out)?;
    write_json(&out.join("trace.json"), &run.trace)?;
    write_json(
        &out.join("run_summary.json"),
        &serde_json::json!({
            "outcome": run.outcome,
            "queries_used": run.queries_used,
            "epochs": run.trace.records.len(),
            "bank_size": run.bank.len(),
            "final_consistency": consistency,
        }),
    )?;
    println!(
        "attack finished: {} epochs, {} queries, artifacts in {}",
        run.trace.records.len(),
        run.queries_used,
        paths.trace_csv.parent().unwrap_or(&out).display()
    );
    if let Some(c) = consistency {
        println!("final probe consistency: {c:.4}");
    }
    outcome_exit(&run.outcome)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::runtime(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Failure::runtime(format!("write {}: {e}", path.display())))
}

fn clip_for(split: &SplitDataset) -> ClipRange {
    match split.train.layout() {
        DataLayout::Image { .. } => ClipRange::Unit,
        DataLayout::Vector { .. } => {
            let (lo, hi) = split.train.bounding_box();
            ClipRange::Box { lo, hi }
        }
    }
}

fn cmd_evaluate(config: &RunConfig) -> Result<(), Failure> {
    let split = load_dataset(&config.dataset_spec(), config.seed)?;
    let out = config.out_dir();
    let target = load_target(&out)?;
    let substitute_path = out.join("substitute.json");
    if !substitute_path.exists() {
        return Err(Failure::config(format!(
            "no substitute checkpoint at {}; run `qedg attack` first",
            substitute_path.display()
        )));
    }
    let (substitute, _) = load_checkpoint(&substitute_path)?;

    let substitute_accuracy = accuracy(&substitute, &split.test)?;
    let target_accuracy = accuracy(&target, &split.test)?;
    let probe = build_probe(&split, config.evaluation.probe_per_axis, Some(&target))?
        .expect("target is present");
    let consistency = f64::from(
        probe
            .consistency(&substitute)
            .map_err(|e| Failure::runtime(e.to_string()))?,
    );
    let sub_preds = substitute
        .predict_labels(split.test.features(), split.test.len())
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let target_preds = target
        .predict_labels(split.test.features(), split.test.len())
        .map_err(|e| Failure::runtime(e.to_string()))?;
    let kappa = cohens_kappa(&sub_preds, &target_preds, split.test.num_classes())?;

    let clip = clip_for(&split);
    let mut asr_table = Vec::new();
    let mut modes = vec![false];
    if config.evaluation.targeted {
        modes.push(true);
    }
    for &epsilon in &config.evaluation.epsilons {
        for algo in [AttackAlgo::Fgsm, AttackAlgo::Bim, AttackAlgo::Pgd] {
            for &targeted in &modes {
                let mut params =
                    AttackParams::new(algo, epsilon, config.evaluation.step_size, config.seed);
                if targeted {
                    params = params.targeted();
                }
                let cell = match attack_success_rate(&substitute, &target, &split.test, &params, &clip)
                {
                    Ok(r) => AsrCell {
                        attack: algo.name().into(),
                        targeted,
                        epsilon,
                        asr: Some(r.rate),
                        n_evaluated: r.n_evaluated,
                    },
                    Err(EvalError::EmptyDenominator) => AsrCell {
                        attack: algo.name().into(),
                        targeted,
                        epsilon,
                        asr: None,
                        n_evaluated: 0,
                    },
                    Err(e) => return Err(e.into()),
                };
                asr_table.push(cell);
            }
        }
    }

    let metrics = MetricsReport {
        accuracy: Some(substitute_accuracy),
        consistency: Some(consistency),
        kappa: Some(kappa),
        asr_table,
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    println!(
        "substitute accuracy {substitute_accuracy:.4} (target {target_accuracy:.4}), \
         consistency {consistency:.4}, kappa {:.4}",
        kappa.kappa
    );
    println!("metrics written to {}", out.join("metrics.json").display());
    Ok(())
}

fn cmd_serve_target(config: &RunConfig) -> Result<(), Failure> {
    let out = config.out_dir();
    let target = load_target(&out)?;
    let options = ServeOptions {
        budget: config.serve.budget,
        model_id: config.serve.model_id.clone(),
    };
    let bind = config.serve.bind.clone();
    let handle = serve_target(target, bind.as_str(), options)
        .map_err(|e| Failure::runtime(e.to_string()))?;
    // scripts scrape this exact line for the chosen port
    println!("serving on {}", handle.url());
    use std::io::Write as _;
    let _ = std::io::stdout().flush();
    loop {
        std::thread::park();
    }
}

fn cmd_theory_bound(config: &RunConfig) -> Result<(), Failure> {
    let t = &config.theory;
    let q_bound = query_complexity_bound(t.phi, t.q, t.delta)?;
    let repeat = repeat_count(t.phi, t.q, t.delta)?;
    let value = serde_json::json!({
        "phi": t.phi,
        "q": t.q,
        "delta": t.delta,
        "R": repeat,
        "Q_bound": q_bound,
    });
    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
    let out = config.out_dir();
    std::fs::create_dir_all(&out)
        .map_err(|e| Failure::runtime(format!("create {}: {e}", out.display())))?;
    write_json(&out.join("theory_bound.json"), &value)?;
    Ok(())
}

fn cmd_theory_validate(config: &RunConfig) -> Result<(), Failure> {
    let t = &config.theory;
    let report = validate_theorem(t.phi, t.epsilon, t.delta, t.trials, config.seed)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report is json")
    );
    let out = config.out_dir();
    std::fs::create_dir_all(&out)
        .map_err(|e| Failure::runtime(format!("create {}: {e}", out.display())))?;
    write_json(&out.join("theory_validation.json"), &report)?;
    Ok(())
}

fn cmd_report(config: &RunConfig) -> Result<(), Failure> {
    let out = config.out_dir();
    let trace_path = out.join("trace.json");
    if !trace_path.exists() {
        return Err(Failure::config(format!(
            "no stored trace at {}; run `qedg attack` first",
            trace_path.display()
        )));
    }
    let trace: qedg::extraction::AttackTrace = serde_json::from_str(
        &std::fs::read_to_string(&trace_path)
            .map_err(|e| Failure::runtime(format!("read {}: {e}", trace_path.display())))?,
    )
    .map_err(|e| Failure::config(format!("parse {}: {e}", trace_path.display())))?;
    let metrics_path = out.join("metrics.json");
    let metrics: MetricsReport = if metrics_path.exists() {
        serde_json::from_str(
            &std::fs::read_to_string(&metrics_path)
                .map_err(|e| Failure::runtime(format!("read {}: {e}", metrics_path.display())))?,
        )
        .map_err(|e| Failure::config(format!("parse {}: {e}", metrics_path.display())))?
    } else {
        MetricsReport::default()
    };
    let paths = emit_report(&trace, &metrics, &out)?;
    println!(
        "re-emitted {}, {}, {}",
        paths.trace_csv.display(),
        paths.metrics_json.display(),
        paths.consistency_csv.display()
    );
    Ok(())
}
