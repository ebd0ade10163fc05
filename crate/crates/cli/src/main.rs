//! `groundcast` command-line driver.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};
use groundcast::agents::{
    append_session_log, run_session, BackendSpec, Backends, SessionConfig, SessionResources,
};
use groundcast::baselines::{ForecastModelSpec, ModelId};
use groundcast::caselib::{build_case_library, load_library, save_library, CaseLibrary};
use groundcast::domain::{Dataset, ForecastTask};
use groundcast::eval::{
    emit_feature_usage, evaluate_method, feature_usage_csv, protocol_check, protocol_table,
    run_ablation_matrix, EvalConfig, EvalContext, EvalReport, Method,
};
use groundcast::grounding::AblationFlag;
use groundcast::ingest::{describe_dataset, load_dataset, DatasetManifest};
use groundcast::knowledge::{load_corpus, KnowledgeStore};
use log::info;

use crate::config::{resolve_scripted, RunConfig};

#[derive(Parser)]
#[command(name = "groundcast", version, about = "Retrieval-grounded reflective forecasting")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory, overriding the config's `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a report of a dataset manifest.
    Inspect {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Build (or reuse) the case library.
    Build {
        #[arg(long)]
        config: PathBuf,
        /// Rebuild even when a matching library exists.
        #[arg(long)]
        force: bool,
    },
    /// Run one forecasting session.
    Forecast {
        #[arg(long)]
        config: PathBuf,
        /// Index of the last observed sample; the first test window by default.
        #[arg(long)]
        anchor: Option<usize>,
        /// Generator backend, e.g. `stub:echo-auxiliary`.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        reflector: Option<String>,
    },
    /// Score one method over the test split.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// A baseline name (`snaive`, `ar_ls`, ...), `auxiliary` or `session`.
        #[arg(long)]
        method: String,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        reflector: Option<String>,
    },
    /// Run the session under each ablation flag.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated flags; the standard matrix by default.
        #[arg(long, value_delimiter = ',')]
        flags: Option<Vec<AblationFlag>>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        reflector: Option<String>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", error_chain(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already spelled out by their parent.
fn error_chain(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut prev = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !prev.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        prev = text;
    }
    out
}

/// Returns `Ok(false)` when the command finished but some windows failed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Inspect { manifest } => {
            let m = DatasetManifest::from_file(&manifest)?;
            let dataset = load_dataset(&m)?;
            print!("{}", describe_dataset(&dataset));
            Ok(true)
        }
        Command::Build { config, force } => {
            let run = Run::load(&config, cli.out)?;
            run.build(force)?;
            Ok(true)
        }
        Command::Forecast {
            config,
            anchor,
            backend,
            reflector,
        } => {
            let run = Run::load(&config, cli.out)?;
            run.forecast(anchor, backend.as_deref(), reflector.as_deref())
        }
        Command::Evaluate {
            config,
            method,
            backend,
            reflector,
        } => {
            if method != "session" && (backend.is_some() || reflector.is_some()) {
                Cli::command()
                    .error(
                        ErrorKind::ArgumentConflict,
                        "--backend and --reflector only apply to `--method session`",
                    )
                    .exit();
            }
            let run = Run::load(&config, cli.out)?;
            run.evaluate(&method, backend.as_deref(), reflector.as_deref())
        }
        Command::Ablate {
            config,
            flags,
            backend,
            reflector,
        } => {
            let run = Run::load(&config, cli.out)?;
            let flags = flags.unwrap_or_else(|| AblationFlag::MATRIX.to_vec());
            run.ablate(&flags, backend.as_deref(), reflector.as_deref())
        }
    }
}

/// A loaded run config with its dataset and knowledge store.
struct Run {
    config: RunConfig,
    fingerprint: String,
    out: PathBuf,
    dataset: Dataset,
    store: KnowledgeStore,
}

impl Run {
    fn load(path: &Path, out: Option<PathBuf>) -> Result<Self> {
        let config = RunConfig::from_file(path)?;
        let fingerprint = config.fingerprint();
        let out = out.unwrap_or_else(|| config.out.clone());
        let manifest = DatasetManifest::from_file(&config.manifest)?;
        let dataset = load_dataset(&manifest)?;
        let store = match &config.knowledge {
            Some(root) => load_corpus(root)?,
            None => KnowledgeStore::empty(),
        };
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            config,
            fingerprint,
            out,
            dataset,
            store,
        })
    }

    fn library_path(&self) -> PathBuf {
        self.out.join(format!("{}.caselib", self.dataset.name()))
    }

    fn build(&self, force: bool) -> Result<CaseLibrary> {
        let path = self.library_path();
        let wanted = self.config.library_config(self.dataset.frequency.seasonal_period());
        let pool = self.config.pool();
        if !force && path.exists() {
            match load_library(&path) {
                Ok(lib) if lib.config == wanted && lib.verify(&self.dataset, &pool).is_ok() => {
                    println!(
                        "reusing case library {} ({} cases, k = {})",
                        path.display(),
                        lib.cases.len(),
                        lib.clusters.k
                    );
                    return Ok(lib);
                }
                Ok(_) => info!("existing library does not match the config; rebuilding"),
                Err(e) => info!("existing library unreadable ({e}); rebuilding"),
            }
        }
        let lib = build_case_library(&self.dataset, &wanted, &pool)?;
        save_library(&lib, &path)?;
        println!(
            "built case library {} ({} cases, k = {}, inertia = {:.6})",
            path.display(),
            lib.cases.len(),
            lib.clusters.k,
            lib.clusters.inertia
        );
        Ok(lib)
    }

    fn library(&self) -> Result<CaseLibrary> {
        let path = self.library_path();
        if !path.exists() {
            bail!(
                "case library {} not found; run build first",
                path.display()
            );
        }
        let lib = load_library(&path)?;
        lib.verify(&self.dataset, &self.config.pool())
            .map_err(|e| anyhow!("{e}; run build first"))?;
        let wanted = self.config.library_config(self.dataset.frequency.seasonal_period());
        if lib.config != wanted {
            bail!("case library {} was built with different settings; run build first", path.display());
        }
        Ok(lib)
    }

    fn backends(&self, generator: Option<&str>, reflector: Option<&str>) -> Result<Backends> {
        let spec = |cli: Option<&str>, configured: &BackendSpec| match cli {
            Some(name) => resolve_scripted(&BackendSpec::Stub(name.to_string()), Path::new(".")),
            None => configured.clone(),
        };
        let g = spec(generator, &self.config.generator).build()?;
        let r = spec(reflector, &self.config.reflector).build()?;
        Ok(Backends::new(g, r))
    }

    fn session_config(&self) -> SessionConfig {
        SessionConfig {
            max_iterations: self.config.max_iterations,
            selection: self.config.selection,
            ablation: self.config.ablation(),
            ..SessionConfig::default()
        }
    }

    fn eval_config(&self) -> EvalConfig {
        let mut c = EvalConfig::new(self.config.profile, self.fingerprint.clone());
        c.stride = self.config.stride;
        c
    }

    fn subdir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.out.join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn forecast(&self, anchor: Option<usize>, generator: Option<&str>, reflector: Option<&str>) -> Result<bool> {
        let lib = self.library()?;
        let profile = self.config.profile;
        let anchor = anchor.unwrap_or(self.dataset.splits.test.start + profile.lookback() - 1);
        let task = ForecastTask::new(&self.dataset, profile, anchor);
        let backends = self.backends(generator, reflector)?;
        let res = SessionResources {
            dataset: &self.dataset,
            library: Some(&lib),
            store: &self.store,
        };
        let session = run_session(&task, res, &backends, &self.session_config())?;
        let log = self
            .subdir("sessions")?
            .join(format!("{}-{anchor}-{}.jsonl", self.dataset.name(), self.fingerprint));
        if log.exists() {
            std::fs::remove_file(&log).with_context(|| format!("replacing {}", log.display()))?;
        }
        append_session_log(&session, &log)?;

        println!("anchor: {anchor}");
        println!("forecast:");
        for v in &session.final_forecast {
            println!("{v}");
        }
        println!("explanation: {}", session.final_explanation.trim());
        println!("iterations: {}", session.iteration_count);
        for w in &session.warnings {
            println!("warning: {w}");
        }
        println!("session log: {}", log.display());
        match &session.failure {
            Some(f) => {
                eprintln!("session fell back: {f}");
                Ok(false)
            }
            None => Ok(true),
        }
    }

    fn method(&self, name: &str, generator: Option<&str>, reflector: Option<&str>) -> Result<Method> {
        Ok(match name {
            "auxiliary" => Method::AuxiliaryOnly,
            "session" => Method::Session {
                backends: self.backends(generator, reflector)?,
                config: self.session_config(),
            },
            other => {
                let id: ModelId = other.parse().map_err(|_| {
                    anyhow!("unknown method `{other}`; expected a baseline name, `auxiliary` or `session`")
                })?;
                let spec = self
                    .config
                    .pool()
                    .into_iter()
                    .find(|s| s.model_id == id)
                    .unwrap_or_else(|| ForecastModelSpec::new(id));
                Method::Baseline(spec)
            }
        })
    }

    fn evaluate(&self, name: &str, generator: Option<&str>, reflector: Option<&str>) -> Result<bool> {
        let method = self.method(name, generator, reflector)?;
        let lib = match method {
            Method::Baseline(_) => None,
            _ => Some(self.library()?),
        };
        let ctx = EvalContext {
            dataset: &self.dataset,
            library: lib.as_ref(),
            store: &self.store,
        };
        let report = evaluate_method(ctx, &method, &self.eval_config())?;
        self.write_report(&report)?;
        print!("{}", report.summary_text());
        if let Some(row) = protocol_check(&report) {
            print!("{}", protocol_table(&[row]));
        }
        Ok(report_ok(&report))
    }

    fn write_report(&self, report: &EvalReport) -> Result<()> {
        let (summary, windows) = report.write_files(&self.subdir("reports")?)?;
        println!("summary: {}", summary.display());
        println!("windows: {}", windows.display());
        if !report.sessions.is_empty() {
            let stem = report.file_stem();
            let log = self.subdir("sessions")?.join(format!("{stem}.jsonl"));
            if log.exists() {
                std::fs::remove_file(&log).with_context(|| format!("replacing {}", log.display()))?;
            }
            for s in &report.sessions {
                append_session_log(s, &log)?;
            }
            let usage = self.subdir("reports")?.join(format!("{stem}.features.csv"));
            std::fs::write(&usage, feature_usage_csv(&emit_feature_usage(&report.sessions)))
                .with_context(|| format!("writing {}", usage.display()))?;
            println!("session log: {}", log.display());
        }
        Ok(())
    }

    fn ablate(&self, flags: &[AblationFlag], generator: Option<&str>, reflector: Option<&str>) -> Result<bool> {
        let lib = self.library()?;
        let ctx = EvalContext {
            dataset: &self.dataset,
            library: Some(&lib),
            store: &self.store,
        };
        let backends = self.backends(generator, reflector)?;
        let matrix = run_ablation_matrix(ctx, &backends, &self.session_config(), flags, &self.eval_config())?;
        for r in &matrix.reports {
            self.write_report(r)?;
        }
        let table = matrix.table();
        let path = self
            .subdir("reports")?
            .join(format!("ablation-{}-{}.txt", self.dataset.name(), self.fingerprint));
        std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
        print!("{table}");
        println!("matrix: {}", path.display());
        Ok(matrix.reports.iter().all(report_ok))
    }
}

/// False when a window failed or a session had to fall back.
fn report_ok(report: &EvalReport) -> bool {
    let fallbacks = report.sessions.iter().filter(|s| s.failure.is_some()).count();
    if fallbacks > 0 {
        eprintln!(
            "{}: {fallbacks} of {} sessions fell back after backend failures",
            report.method,
            report.sessions.len()
        );
    }
    !report.partial && fallbacks == 0
}
