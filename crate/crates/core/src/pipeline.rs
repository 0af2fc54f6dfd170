//! End-to-end runs: catalog, templates, profiling, refinement and search,
//! with every artifact written under one output directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{builtin, introspect, CatalogError, SchemaCatalog};
use crate::config::{parse_surface, surface_rules, ConfigError, OracleConfig, ProviderConfig, RunConfig};
use crate::distribution::{build_target, wasserstein, CostHistogram};
use crate::forge::{
    generate_templates, template_file_text, usage_of, ForgeError, ForgeOptions, GenerationReport, LiveProvider,
    LlmProvider, MockProvider, ProviderCall, ProviderError, RewriteSeries, SpecOutcome, TokenUsage,
};
use crate::model::{instantiate, Bindings, CostValue, SqlQuery, SqlTemplate};
use crate::profiler::{
    profile, profiling_budget, CostOracle, OracleError, PostgresOracle, ProfileRecord, ProfilerError, SyntheticOracle,
};
use crate::refinery::{refine, RefineAttempt, RefineError};
use crate::rng::stage_rng;
use crate::search::{fill_distribution, BoRun, SearchEnd, SearchError, SearchMonitor, SearchState, TraceRecord, WorkloadQuery};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("no template could be verified: {0}")]
    NoTemplates(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot resume: {0}")]
    Resume(String),
    #[error("missing manifest {0}")]
    MissingManifest(PathBuf),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl PipelineError {
    /// 1 for configuration problems, 2 for the environment (database,
    /// provider, files), 3 for broken invariants.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Resume(_) | PipelineError::MissingManifest(_) => 1,
            PipelineError::Catalog(CatalogError::Invalid(_)) => 1,
            PipelineError::Catalog(_)
            | PipelineError::Oracle(_)
            | PipelineError::Provider(_)
            | PipelineError::NoTemplates(_)
            | PipelineError::Io { .. } => 2,
            PipelineError::Internal(_) => 3,
        }
    }
}

impl From<ForgeError> for PipelineError {
    fn from(e: ForgeError) -> Self {
        match e {
            ForgeError::Provider(e) => e.into(),
            ForgeError::Oracle(e) => e.into(),
            ForgeError::Catalog(e) => e.into(),
        }
    }
}

impl From<RefineError> for PipelineError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Oracle(e) => e.into(),
            e @ RefineError::EmptyProfile(_) => PipelineError::Internal(e.to_string()),
        }
    }
}

impl From<SearchError> for PipelineError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Oracle(e) => e.into(),
            e => PipelineError::Internal(e.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn json_lines<T: Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).expect("record serializes") + "\n").collect()
}

/// Appends lines to a file, keeping no buffer so the file length is always
/// current.
struct AppendLog {
    path: PathBuf,
    file: File,
}

impl AppendLog {
    fn open(path: PathBuf) -> Result<Self, PipelineError> {
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        Ok(Self { path, file })
    }

    fn line(&mut self, text: &str) -> Result<(), PipelineError> {
        let mut buf = text.to_string();
        buf.push('\n');
        self.file.write_all(buf.as_bytes()).map_err(io_err(&self.path))
    }

    fn len(&self) -> Result<u64, PipelineError> {
        Ok(self.file.metadata().map_err(io_err(&self.path))?.len())
    }
}

/// Passes calls through and mirrors the inner oracle's statement log to a
/// file, one statement per line with comment lines dropped.
struct LoggedOracle {
    inner: Box<dyn CostOracle>,
    log: AppendLog,
    flushed: usize,
    attempts: u64,
}

impl LoggedOracle {
    fn flush(&mut self) {
        let pending: Vec<String> = self.inner.call_log()[self.flushed..]
            .iter()
            .map(|s| {
                s.lines()
                    .filter(|l| !l.trim_start().starts_with("--"))
                    .flat_map(str::split_whitespace)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        self.flushed += pending.len();
        for statement in pending {
            if let Err(e) = self.log.line(&statement) {
                log::error!("{e}");
            }
        }
    }
}

impl CostOracle for LoggedOracle {
    fn metric(&self) -> crate::model::CostMetric {
        self.inner.metric()
    }

    fn validate(&mut self, template: &SqlTemplate, query: &SqlQuery) -> Result<Vec<String>, OracleError> {
        let r = self.inner.validate(template, query);
        self.flush();
        r
    }

    fn evaluate(&mut self, template: &SqlTemplate, query: &SqlQuery) -> Result<CostValue, OracleError> {
        self.attempts += 1;
        let r = self.inner.evaluate(template, query);
        self.flush();
        r
    }

    fn call_log(&self) -> &[String] {
        self.inner.call_log()
    }

    fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }
}

pub const ORACLE_LOG: &str = "oracle_calls.log";
pub const TRACE: &str = "trace.jsonl";
pub const PROVIDER_CALLS: &str = "provider_calls.jsonl";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const MANIFEST: &str = "manifest.json";

/// Catalog named by the config: a built-in, a saved file, or the database.
pub fn load_catalog(config: &RunConfig) -> Result<SchemaCatalog, PipelineError> {
    let catalog = if let Some(name) = &config.catalog.builtin {
        builtin(name).ok_or_else(|| ConfigError::Invalid(format!("unknown built-in catalog {name}")))?
    } else if let Some(path) = &config.catalog.file {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?
    } else {
        let db = config
            .database
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("no catalog source: set [catalog] or [database]".into()))?;
        let mut conn = db.open().map_err(CatalogError::from)?;
        introspect(conn.as_mut(), &db.schema)?
    };
    catalog.validate()?;
    Ok(catalog)
}

pub fn build_oracle(config: &RunConfig) -> Result<Box<dyn CostOracle>, PipelineError> {
    Ok(match &config.oracle {
        OracleConfig::Synthetic { metric, default, surfaces } => Box::new(
            SyntheticOracle::new(parse_surface(default)?).with_rules(surface_rules(surfaces)?).with_metric(*metric),
        ),
        OracleConfig::Postgres { metric } => {
            let db = config.database.as_ref().ok_or_else(|| ConfigError::Invalid("missing [database]".into()))?;
            let conn = db.open().map_err(CatalogError::from)?;
            Box::new(PostgresOracle::new(conn, *metric))
        }
    })
}

pub fn build_provider(config: &RunConfig, catalog: &SchemaCatalog) -> Result<Box<dyn LlmProvider>, PipelineError> {
    Ok(match &config.provider {
        ProviderConfig::Mock(mock) => Box::new(MockProvider::new(mock.clone()).with_catalog(catalog.clone())),
        ProviderConfig::Live(live) => Box::new(LiveProvider::new(live.clone())?),
    })
}

/// Writes the catalog document to `out/catalog.json`.
pub fn run_introspect(config: &RunConfig, out: &Path) -> Result<PathBuf, PipelineError> {
    let catalog = load_catalog(config)?;
    let path = out.join("catalog.json");
    write_file(&path, catalog.to_json())?;
    Ok(path)
}

/// Rewrite statistics written next to the templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateReport {
    pub series: RewriteSeries,
    pub outcomes: Vec<SpecOutcome>,
    pub verified: usize,
    pub specs: usize,
}

fn write_templates(out: &Path, templates: &[SqlTemplate]) -> Result<(), PipelineError> {
    let dir = out.join("templates");
    if dir.exists() {
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
    }
    for t in templates {
        write_file(&dir.join(format!("{}.sql", t.id)), template_file_text(t, t.lineage.is_none()))?;
    }
    let json = serde_json::to_string_pretty(templates).expect("templates serialize") + "\n";
    write_file(&out.join("templates.json"), json)
}

fn forge_stage(
    config: &RunConfig,
    catalog: &SchemaCatalog,
    oracle: &mut dyn CostOracle,
    provider: &mut dyn LlmProvider,
    out: &Path,
) -> Result<(GenerationReport, TemplateReport), PipelineError> {
    let specs = config.template_specs()?;
    let options = ForgeOptions { k: config.templates.rewrite_rounds, attempts_per_spec: config.templates.attempts_per_spec };
    let mut rng = stage_rng(config.seed, "templates");
    let report = generate_templates(&specs, catalog, oracle, provider, options, &mut rng)?;
    let summary = TemplateReport {
        series: report.series(),
        outcomes: report.outcomes.clone(),
        verified: report.templates.len(),
        specs: specs.len(),
    };
    write_templates(out, &report.templates)?;
    write_file(
        &out.join("rewrite_report.json"),
        serde_json::to_string_pretty(&summary).expect("report serializes") + "\n",
    )?;
    Ok((report, summary))
}

/// Generates templates only. Fails when no spec yields a verified template.
pub fn run_templates(config: &RunConfig, out: &Path) -> Result<TemplateReport, PipelineError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let catalog = load_catalog(config)?;
    let mut oracle = LoggedOracle {
        inner: build_oracle(config)?,
        log: AppendLog::open(out.join(ORACLE_LOG))?,
        flushed: 0,
        attempts: 0,
    };
    let mut provider = build_provider(config, &catalog)?;
    let (_, summary) = forge_stage(config, &catalog, &mut oracle, provider.as_mut(), out)?;
    write_file(&out.join(PROVIDER_CALLS), json_lines(provider.calls()))?;
    if summary.verified == 0 {
        let reasons: Vec<String> = summary
            .outcomes
            .iter()
            .filter_map(|o| match &o.status {
                crate::forge::SpecStatus::Failed { reason } => Some(format!("{}: {reason}", o.spec_id)),
                _ => None,
            })
            .collect();
        return Err(PipelineError::NoTemplates(reasons.join("; ")));
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Templates,
    Profiled,
    Refined,
    Searching,
    Done,
}

/// Everything needed to continue a run after the last completed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_id: String,
    pub stage: Stage,
    pub templates: Vec<SqlTemplate>,
    pub profiles: Vec<ProfileRecord>,
    pub refinements: Vec<RefineAttempt>,
    pub state: Option<SearchState>,
    pub provider_calls: Vec<ProviderCall>,
    /// Oracle evaluations before the search started.
    pub setup_evaluations: u64,
    /// Lengths of the append-only logs at checkpoint time.
    pub file_lengths: BTreeMap<String, u64>,
    pub timing: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestQuery {
    pub file: String,
    pub template_id: String,
    pub bindings: Bindings,
    pub cost: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestTemplate {
    pub id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lineage: Option<String>,
    pub file: String,
    pub profiled: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub rounds: u64,
    pub runs: u64,
    pub evaluations: u64,
    pub surplus: u64,
    pub bad_combinations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: RunStatus,
    pub benchmark: String,
    pub metric: String,
    pub edges: Vec<f64>,
    pub target: Vec<u64>,
    pub achieved: Vec<u64>,
    pub distance: f64,
    pub skipped_intervals: Vec<usize>,
    pub oracle_evaluations: u64,
    pub search: SearchSummary,
    pub refinements_attempted: usize,
    pub refinements_accepted: usize,
    pub tokens: TokenUsage,
    pub templates: Vec<ManifestTemplate>,
    pub queries: Vec<ManifestQuery>,
    /// Milliseconds per stage.
    pub timing: BTreeMap<String, u64>,
}

impl Manifest {
    pub fn load(out: &Path) -> Result<Self, PipelineError> {
        let path = out.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|_| PipelineError::MissingManifest(path.clone()))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Resume(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GenerateOptions {
    /// Continue from `checkpoint.json` when it belongs to this config.
    pub resume: bool,
}

struct Run<'a> {
    config: &'a RunConfig,
    out: &'a Path,
    deadline: Option<Instant>,
    checkpoint: Checkpoint,
}

impl Run<'_> {
    fn out_of_time(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    fn save(&mut self, logs: &[&AppendLog]) -> Result<(), PipelineError> {
        for log in logs {
            let name = log.path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            self.checkpoint.file_lengths.insert(name, log.len()?);
        }
        let json = serde_json::to_string(&self.checkpoint).expect("checkpoint serializes");
        let tmp = self.out.join("checkpoint.json.tmp");
        write_file(&tmp, json)?;
        let path = self.out.join(CHECKPOINT);
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    fn time(&mut self, stage: &str, since: Instant) {
        *self.checkpoint.timing.entry(stage.to_string()).or_insert(0) += since.elapsed().as_millis() as u64;
    }
}

struct Monitor<'a, 'b> {
    run: &'a mut Run<'b>,
    trace: &'a mut AppendLog,
    oracle_log_path: PathBuf,
    last_saved: u64,
}

impl SearchMonitor for Monitor<'_, '_> {
    fn record(
        &mut self,
        trace: &TraceRecord,
        _run: Option<&BoRun>,
        _state: &SearchState,
        _profiles: &[ProfileRecord],
    ) -> Result<(), SearchError> {
        let line = serde_json::to_string(trace).expect("trace serializes");
        self.trace.line(&line).map_err(|e| SearchError::Monitor(e.to_string()))
    }

    fn round_boundary(&mut self, state: &SearchState, profiles: &[ProfileRecord]) -> Result<(), SearchError> {
        if state.evaluations >= self.last_saved + self.run.config.limits.checkpoint_every {
            self.last_saved = state.evaluations;
            self.run.checkpoint.state = Some(state.clone());
            self.run.checkpoint.profiles = profiles.to_vec();
            let oracle_len = fs::metadata(&self.oracle_log_path).map(|m| m.len()).unwrap_or(0);
            self.run.checkpoint.file_lengths.insert(ORACLE_LOG.into(), oracle_len);
            let trace = &*self.trace;
            self.run.save(&[trace]).map_err(|e| SearchError::Monitor(e.to_string()))?;
        }
        Ok(())
    }

    fn should_stop(&self, state: &SearchState) -> bool {
        let total = self.run.checkpoint.setup_evaluations + state.evaluations;
        self.run.out_of_time() || self.run.config.limits.max_evaluations.is_some_and(|m| total >= m)
    }
}

const OUTPUTS: [&str; 12] = [
    "queries",
    "templates",
    "templates.json",
    "workload.sql",
    MANIFEST,
    "histogram.csv",
    TRACE,
    "profiles.jsonl",
    "refinements.jsonl",
    PROVIDER_CALLS,
    ORACLE_LOG,
    CHECKPOINT,
];

fn clear_outputs(out: &Path) -> Result<(), PipelineError> {
    for name in OUTPUTS.iter().chain(&["rewrite_report.json"]) {
        let path = out.join(name);
        if path.is_dir() {
            fs::remove_dir_all(&path).map_err(io_err(&path))?;
        } else if path.exists() {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
    }
    Ok(())
}

fn truncate_to(path: &Path, len: u64) -> Result<(), PipelineError> {
    let file = OpenOptions::new().write(true).create(true).truncate(false).open(path).map_err(io_err(path))?;
    file.set_len(len).map_err(io_err(path))
}

fn load_templates(path: &Path) -> Result<Vec<SqlTemplate>, PipelineError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    let templates: Vec<SqlTemplate> =
        serde_json::from_str(&text).map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
    for t in &templates {
        t.validate().map_err(|e| ConfigError::Invalid(format!("template {}: {e}", t.id)))?;
    }
    if templates.is_empty() {
        return Err(ConfigError::Invalid(format!("{} holds no templates", path.display())).into());
    }
    Ok(templates)
}

/// Profiling evaluations as workload candidates, in template order.
fn profiled_queries(templates: &[SqlTemplate], profiles: &[ProfileRecord], target: &CostHistogram) -> Vec<WorkloadQuery> {
    let mut out = Vec::new();
    for (t, p) in templates.iter().zip(profiles) {
        for (b, &cost) in p.bindings_log.iter().zip(&p.costs) {
            let (Some(bin), Ok(q)) = (target.intervals.bin(cost), instantiate(t, b)) else { continue };
            out.push(WorkloadQuery { template_id: t.id.clone(), bindings: q.bindings, sql_text: q.sql_text, cost, bin });
        }
    }
    out
}

/// Runs the full pipeline and writes the workload directory.
pub fn run_generate(config: &RunConfig, out: &Path, options: GenerateOptions) -> Result<Manifest, PipelineError> {
    fs::create_dir_all(out).map_err(io_err(out))?;
    let run_id = config.run_id();
    let started = Instant::now();
    let deadline = config.budget_minutes.map(|m| started + std::time::Duration::from_secs_f64(m * 60.0));

    let previous = if options.resume {
        match fs::read_to_string(out.join(CHECKPOINT)) {
            Ok(text) => {
                let cp: Checkpoint =
                    serde_json::from_str(&text).map_err(|e| PipelineError::Resume(format!("unreadable checkpoint: {e}")))?;
                if cp.run_id != run_id {
                    return Err(PipelineError::Resume(format!(
                        "checkpoint belongs to run {}, this config is run {run_id}",
                        cp.run_id
                    )));
                }
                Some(cp)
            }
            Err(_) => None,
        }
    } else {
        None
    };
    match &previous {
        Some(cp) => {
            for (name, &len) in &cp.file_lengths {
                truncate_to(&out.join(name), len)?;
            }
            log::info!("resuming run {run_id} after stage {:?}", cp.stage);
        }
        None => clear_outputs(out)?,
    }

    let catalog = load_catalog(config)?;
    let target = build_target(&config.benchmark).map_err(ConfigError::from)?;
    let mut oracle = LoggedOracle {
        inner: build_oracle(config)?,
        log: AppendLog::open(out.join(ORACLE_LOG))?,
        flushed: 0,
        attempts: 0,
    };
    let mut trace = AppendLog::open(out.join(TRACE))?;
    let mut calls_log = AppendLog::open(out.join(PROVIDER_CALLS))?;
    let mut run = Run {
        config,
        out,
        deadline,
        checkpoint: previous.unwrap_or(Checkpoint {
            run_id: run_id.clone(),
            stage: Stage::Templates,
            templates: vec![],
            profiles: vec![],
            refinements: vec![],
            state: None,
            provider_calls: vec![],
            setup_evaluations: 0,
            file_lengths: BTreeMap::new(),
            timing: BTreeMap::new(),
        }),
    };
    // Evaluations made by earlier sessions of a resumed run.
    let setup_base = run.checkpoint.setup_evaluations;
    let mut provider: Option<Box<dyn LlmProvider>> = None;
    let record_calls = |provider: &dyn LlmProvider, run: &mut Run<'_>, log: &mut AppendLog| -> Result<(), PipelineError> {
        for call in provider.calls() {
            log.line(&serde_json::to_string(call).expect("call serializes"))?;
            run.checkpoint.provider_calls.push(call.clone());
        }
        Ok(())
    };

    if run.checkpoint.templates.is_empty() {
        let t0 = Instant::now();
        let templates = match &config.templates.from {
            Some(path) => {
                let templates = load_templates(path)?;
                write_templates(out, &templates)?;
                templates
            }
            None => {
                let mut p = build_provider(config, &catalog)?;
                let (report, summary) = forge_stage(config, &catalog, &mut oracle, p.as_mut(), out)?;
                record_calls(p.as_ref(), &mut run, &mut calls_log)?;
                provider = Some(p);
                if summary.verified == 0 {
                    return Err(PipelineError::NoTemplates(format!("0 of {} specs verified", summary.specs)));
                }
                report.templates
            }
        };
        run.checkpoint.templates = templates;
        run.time("templates", t0);
        run.save(&[&trace, &calls_log, &oracle.log])?;
    }

    let profile_budget = profiling_budget(config.benchmark.num_queries, run.checkpoint.templates.len(), config.profiling.fraction);
    if run.checkpoint.stage < Stage::Profiled && !run.out_of_time() {
        let t0 = Instant::now();
        let mut profiles = Vec::new();
        for t in &run.checkpoint.templates {
            let mut rng = stage_rng(config.seed, &format!("profile/{}", t.id));
            let record = match profile(t, &mut oracle, profile_budget, &mut rng) {
                Ok(r) => r,
                Err(ProfilerError::Oracle(e @ OracleError::Unavailable(_))) => return Err(e.into()),
                Err(e) => {
                    log::warn!("template {}: {e}", t.id);
                    ProfileRecord::new(&t.id)
                }
            };
            profiles.push(record);
        }
        run.checkpoint.profiles = profiles;
        run.checkpoint.stage = Stage::Profiled;
        run.checkpoint.setup_evaluations = setup_base + oracle.attempts;
        run.time("profiling", t0);
        run.save(&[&trace, &calls_log, &oracle.log])?;
    }

    if run.checkpoint.stage < Stage::Refined && !run.out_of_time() {
        let t0 = Instant::now();
        if config.refine.enabled {
            let mut p = match provider.take() {
                Some(p) => p,
                None => build_provider(config, &catalog)?,
            };
            let before = p.calls().len();
            let mut rng = stage_rng(config.seed, "refine");
            let mut refine_options = config.refine.options.clone();
            refine_options.profile_budget = refine_options.profile_budget.max(1);
            let output = refine(
                std::mem::take(&mut run.checkpoint.templates),
                std::mem::take(&mut run.checkpoint.profiles),
                &target,
                &catalog,
                p.as_mut(),
                &mut oracle,
                &refine_options,
                &mut rng,
            )?;
            for call in &p.calls()[before..] {
                calls_log.line(&serde_json::to_string(call).expect("call serializes"))?;
                run.checkpoint.provider_calls.push(call.clone());
            }
            run.checkpoint.templates = output.templates;
            run.checkpoint.profiles = output.profiles;
            run.checkpoint.refinements = output.attempts;
        }
        run.checkpoint.stage = Stage::Refined;
        run.checkpoint.setup_evaluations = setup_base + oracle.attempts;
        run.time("refinement", t0);
        run.save(&[&trace, &calls_log, &oracle.log])?;
    }

    let mut templates = run.checkpoint.templates.clone();
    let mut profiles = run.checkpoint.profiles.clone();
    if profiles.len() != templates.len() {
        // Stopped before profiling finished.
        profiles = templates.iter().map(|t| ProfileRecord::new(&t.id)).collect();
    }
    let mut state = match run.checkpoint.state.take() {
        Some(s) => s,
        None => SearchState::new(&templates, &profiles, &target, profiled_queries(&templates, &profiles, &target)),
    };
    let mut end = SearchEnd::Stopped;
    if run.checkpoint.stage >= Stage::Refined && run.checkpoint.stage < Stage::Done {
        run.checkpoint.stage = Stage::Searching;
        let t0 = Instant::now();
        let mut search = config.search.clone();
        if search.bo.max_batch == 0 {
            search.bo.max_batch = 1;
        }
        let oracle_log_path = out.join(ORACLE_LOG);
        let last_saved = state.evaluations;
        let mut monitor = Monitor { run: &mut run, trace: &mut trace, oracle_log_path, last_saved };
        end = fill_distribution(&mut state, &templates, &mut profiles, &target, &mut oracle, &search, config.seed, &mut monitor)?;
        run.time("search", t0);
        if end == SearchEnd::Converged {
            run.checkpoint.stage = Stage::Done;
        }
    } else if run.checkpoint.stage == Stage::Done {
        end = SearchEnd::Converged;
    }

    run.checkpoint.state = Some(state.clone());
    run.checkpoint.profiles = profiles.clone();
    run.save(&[&trace, &calls_log, &oracle.log])?;

    // Outputs.
    let t0 = Instant::now();
    let status = if end == SearchEnd::Converged { RunStatus::Complete } else { RunStatus::Incomplete };
    templates.sort_by(|a, b| a.id.cmp(&b.id));
    write_templates(out, &templates)?;
    let queries_dir = out.join("queries");
    if queries_dir.exists() {
        fs::remove_dir_all(&queries_dir).map_err(io_err(&queries_dir))?;
    }
    let mut workload = String::new();
    let mut manifest_queries = Vec::with_capacity(state.queries.len());
    for (i, q) in state.queries.iter().enumerate() {
        let file = format!("queries/q_{:06}.sql", i + 1);
        let text = format!(
            "-- template: {}\n-- bin: {}\n-- cost: {}\n{};\n",
            q.template_id,
            q.bin,
            q.cost,
            q.sql_text.trim_end().trim_end_matches(';')
        );
        write_file(&out.join(&file), &text)?;
        workload.push_str(&text);
        manifest_queries.push(ManifestQuery {
            file,
            template_id: q.template_id.clone(),
            bindings: q.bindings.clone(),
            cost: q.cost,
            bin: q.bin,
        });
    }
    write_file(&out.join("workload.sql"), workload)?;
    let achieved = state.histogram(&target);
    let mut csv = String::from("bin_lo,bin_hi,target,achieved\n");
    for j in 0..target.intervals.len() {
        let (lo, hi) = target.intervals.bounds(j);
        let _ = writeln!(csv, "{lo},{hi},{},{}", target.counts[j], achieved.counts[j]);
    }
    write_file(&out.join("histogram.csv"), csv)?;
    write_file(&out.join("profiles.jsonl"), json_lines(&profiles))?;
    write_file(&out.join("refinements.jsonl"), json_lines(&run.checkpoint.refinements))?;

    let distance = wasserstein(&achieved, &target).map_err(|e| PipelineError::Internal(e.to_string()))?;
    for (j, (&a, &t)) in achieved.counts.iter().zip(&target.counts).enumerate() {
        if a > t {
            return Err(PipelineError::Internal(format!("bin {j} holds {a} queries, target {t}")));
        }
    }
    run.time("output", t0);
    run.checkpoint.timing.insert("total".into(), started.elapsed().as_millis() as u64);
    let manifest = Manifest {
        run_id,
        config_hash: config.hash(),
        seed: config.seed,
        status,
        benchmark: config.benchmark.name.clone(),
        metric: config.benchmark.cost_type.to_string(),
        edges: target.intervals.edges().to_vec(),
        target: target.counts.clone(),
        achieved: achieved.counts.clone(),
        distance,
        skipped_intervals: state.skip.iter().copied().collect(),
        oracle_evaluations: run.checkpoint.setup_evaluations + state.evaluations,
        search: SearchSummary {
            rounds: state.rounds,
            runs: state.runs,
            evaluations: state.evaluations,
            surplus: state.surplus,
            bad_combinations: state.bad.len(),
        },
        refinements_attempted: run.checkpoint.refinements.len(),
        refinements_accepted: run.checkpoint.refinements.iter().filter(|a| a.accepted).count(),
        tokens: usage_of(&run.checkpoint.provider_calls),
        templates: templates
            .iter()
            .zip(&profiles)
            .map(|(t, p)| ManifestTemplate {
                id: t.id.clone(),
                spec_id: t.spec_id.clone(),
                lineage: t.lineage.clone(),
                file: format!("templates/{}.sql", t.id),
                profiled: p.len(),
            })
            .collect(),
        queries: manifest_queries,
        timing: run.checkpoint.timing.clone(),
    };
    write_file(&out.join(MANIFEST), serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")?;
    Ok(manifest)
}

/// Human-readable summary of a finished or stopped run.
pub fn report(out: &Path) -> Result<String, PipelineError> {
    let m = Manifest::load(out)?;
    let mut s = String::new();
    let _ = writeln!(s, "run {} ({:?})", m.run_id, m.status);
    let _ = writeln!(s, "benchmark {} metric {} seed {}", m.benchmark, m.metric, m.seed);
    let _ = writeln!(s, "wasserstein distance {}", m.distance);
    let _ = writeln!(s, "queries {} of {}", m.achieved.iter().sum::<u64>(), m.target.iter().sum::<u64>());
    let _ = writeln!(s, "\nbin_lo,bin_hi,target,achieved,fill");
    for j in 0..m.target.len() {
        let fill = if m.target[j] == 0 { 1.0 } else { m.achieved[j] as f64 / m.target[j] as f64 };
        let flag = if m.achieved[j] < m.target[j] { "  unmet" } else { "" };
        let _ = writeln!(s, "{},{},{},{},{:.3}{flag}", m.edges[j], m.edges[j + 1], m.target[j], m.achieved[j], fill);
    }
    if !m.skipped_intervals.is_empty() {
        let _ = writeln!(s, "skipped intervals: {:?}", m.skipped_intervals);
    }
    let _ = writeln!(
        s,
        "\ntemplates {} ({} refined), refinements {}/{} accepted",
        m.templates.len(),
        m.templates.iter().filter(|t| t.lineage.is_some()).count(),
        m.refinements_accepted,
        m.refinements_attempted
    );
    let _ = writeln!(
        s,
        "oracle evaluations {} (search {}, surplus {}), search rounds {}, runs {}",
        m.oracle_evaluations, m.search.evaluations, m.search.surplus, m.search.rounds, m.search.runs
    );
    let logged = match fs::read_to_string(out.join(PROVIDER_CALLS)) {
        Ok(text) => {
            let calls: Vec<ProviderCall> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
            Some(usage_of(&calls))
        }
        Err(_) => None,
    };
    let _ = writeln!(
        s,
        "provider calls {}, tokens {} prompt + {} completion = {}",
        m.tokens.calls,
        m.tokens.prompt_tokens,
        m.tokens.completion_tokens,
        m.tokens.total()
    );
    if let Some(logged) = logged {
        if logged != m.tokens {
            let _ = writeln!(s, "warning: provider call log totals {} tokens over {} calls", logged.total(), logged.calls);
        }
    }
    let _ = writeln!(s, "\ntiming (ms)");
    for (stage, ms) in &m.timing {
        let _ = writeln!(s, "  {stage}: {ms}");
    }
    Ok(s)
}
