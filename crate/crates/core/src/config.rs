//! Run configuration, read from a TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::ConnectionConfig;
use crate::distribution::{BenchmarkSpec, DistributionError};
use crate::forge::{LiveConfig, MockConfig};
use crate::model::{CostMetric, TemplateSpec};
use crate::profiler::{Surface, SurfaceRule};
use crate::refinery::RefineOptions;
use crate::search::SearchOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Benchmark(#[from] DistributionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required: every random choice in a run derives from it.
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_minutes: Option<f64>,
    pub benchmark: BenchmarkSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub database: Option<ConnectionConfig>,
    #[serde(default)]
    pub catalog: CatalogSource,
    pub oracle: OracleConfig,
    pub provider: ProviderConfig,
    #[serde(default)]
    pub templates: TemplatesConfig,
    #[serde(default)]
    pub profiling: ProfilingConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub limits: Limits,
}

/// Where the schema comes from. With neither key set the database is
/// introspected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleConfig {
    Synthetic {
        #[serde(default = "plan_cost")]
        metric: CostMetric,
        /// Surface for templates without a rule, e.g. `linear(0, 10000)`.
        default: String,
        #[serde(default)]
        surfaces: Vec<SurfaceEntry>,
    },
    Postgres {
        #[serde(default = "plan_cost")]
        metric: CostMetric,
    },
}

fn plan_cost() -> CostMetric {
    CostMetric::PlanCost
}

impl OracleConfig {
    pub fn metric(&self) -> CostMetric {
        match self {
            OracleConfig::Synthetic { metric, .. } | OracleConfig::Postgres { metric } => *metric,
        }
    }
}

/// Surface for one template id or spec id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceEntry {
    pub template: String,
    pub surface: String,
}

pub fn parse_surface(text: &str) -> Result<Surface, ConfigError> {
    Surface::parse(text).ok_or_else(|| ConfigError::Invalid(format!("unknown cost surface `{text}`")))
}

pub fn surface_rules(entries: &[SurfaceEntry]) -> Result<Vec<SurfaceRule>, ConfigError> {
    entries
        .iter()
        .map(|e| Ok(SurfaceRule { template: e.template.clone(), surface: parse_surface(&e.surface)? }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    Mock(MockConfig),
    Live(LiveConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatesConfig {
    /// Previously generated templates (`templates.json`); skips generation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<PathBuf>,
    /// Specs in a TOML file with a `[[specs]]` array.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specs_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub specs: Vec<TemplateSpec>,
    /// Number of built-in sample specs used when no specs are given.
    pub sample: usize,
    pub max_joins: u32,
    pub attempts_per_spec: usize,
    /// Check-and-rewrite rounds per draft.
    pub rewrite_rounds: usize,
}

impl Default for TemplatesConfig {
    fn default() -> Self {
        Self {
            from: None,
            specs_file: None,
            specs: vec![],
            sample: 5,
            max_joins: 2,
            attempts_per_spec: 3,
            rewrite_rounds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfilingConfig {
    /// Share of the query budget spent profiling, split across templates.
    pub fraction: f64,
}

impl Default for ProfilingConfig {
    fn default() -> Self {
        Self { fraction: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub enabled: bool,
    #[serde(flatten)]
    pub options: RefineOptions,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { enabled: true, options: RefineOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_evaluations: Option<u64>,
    /// Search evaluations between checkpoints.
    pub checkpoint_every: u64,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_evaluations: None, checkpoint_every: 50 }
    }
}

#[derive(Debug, Deserialize)]
struct SpecFile {
    specs: Vec<TemplateSpec>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.out.as_mut().map(fix);
        self.catalog.file.as_mut().map(fix);
        self.templates.from.as_mut().map(fix);
        self.templates.specs_file.as_mut().map(fix);
        if let crate::distribution::DistributionShape::File { path } = &mut self.benchmark.shape {
            fix(path);
        }
        if let ProviderConfig::Live(live) = &mut self.provider {
            live.cache_dir.as_mut().map(fix);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.benchmark.validate()?;
        if self.benchmark.cost_type != self.oracle.metric() {
            return Err(ConfigError::Invalid(format!(
                "benchmark cost_type {} differs from oracle metric {}",
                self.benchmark.cost_type,
                self.oracle.metric()
            )));
        }
        if self.catalog.builtin.is_some() && self.catalog.file.is_some() {
            return Err(ConfigError::Invalid("catalog.builtin and catalog.file are exclusive".into()));
        }
        if let OracleConfig::Synthetic { default, surfaces, .. } = &self.oracle {
            parse_surface(default)?;
            surface_rules(surfaces)?;
        }
        if matches!(self.oracle, OracleConfig::Postgres { .. }) && self.database.is_none() {
            return Err(ConfigError::Invalid("the postgres oracle needs a [database] section".into()));
        }
        if let Some(m) = self.budget_minutes {
            if m.is_nan() || m <= 0.0 {
                return Err(ConfigError::Invalid("budget_minutes must be positive".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.profiling.fraction) {
            return Err(ConfigError::Invalid("profiling.fraction must be within [0, 1]".into()));
        }
        if self.search.budget_factor == 0 || self.search.sample_size == 0 {
            return Err(ConfigError::Invalid("search.budget_factor and search.sample_size must be positive".into()));
        }
        if self.limits.checkpoint_every == 0 {
            return Err(ConfigError::Invalid("limits.checkpoint_every must be positive".into()));
        }
        for spec in &self.templates.specs {
            spec.validate().map_err(|e| ConfigError::Invalid(format!("spec {}: {e}", spec.id)))?;
        }
        Ok(())
    }

    /// The specs to generate templates for: inline, then the spec file,
    /// else `sample` built-in specs.
    pub fn template_specs(&self) -> Result<Vec<TemplateSpec>, ConfigError> {
        let mut specs = self.templates.specs.clone();
        if let Some(path) = &self.templates.specs_file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.clone(), source })?;
            let file: SpecFile = toml::from_str(&text)?;
            if file.specs.is_empty() {
                return Err(ConfigError::Invalid(format!("{} defines no specs", path.display())));
            }
            for spec in &file.specs {
                spec.validate().map_err(|e| ConfigError::Invalid(format!("spec {}: {e}", spec.id)))?;
            }
            specs.extend(file.specs);
        }
        if specs.is_empty() {
            if self.templates.sample == 0 {
                return Err(ConfigError::Invalid("no template specs given".into()));
            }
            specs = crate::forge::sample_specs(self.templates.sample, self.templates.max_joins);
        }
        Ok(specs)
    }

    /// Hash of everything that affects the generated workload.
    pub fn hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.out = None;
        normalized.budget_minutes = None;
        // Stopping limits decide when a run pauses, not what it produces.
        normalized.limits = Limits::default();
        let json = serde_json::to_string(&normalized).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Short stable identifier for checkpoints and manifests.
    pub fn run_id(&self) -> String {
        format!("{}-{}", &self.hash()[..12], self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7

[benchmark]
name = "uniform"
cost_type = "plan_cost"
range = [0.0, 10000.0]
num_queries = 100
num_intervals = 10
shape = { kind = "uniform" }

[catalog]
builtin = "users_orders"

[oracle]
kind = "synthetic"
default = "linear(0, 10000)"

[provider]
kind = "mock"
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.search.budget_factor, 5);
        assert_eq!(c.search.sample_size, 10);
        assert_eq!(c.search.max_failures, 5);
        assert_eq!(c.search.utility_threshold, 0.05);
        assert_eq!(c.refine.options.phases.len(), 2);
        assert!(c.refine.enabled);
        assert_eq!(c.profiling.fraction, 0.15);
        assert_eq!(c.limits.checkpoint_every, 50);
        assert_eq!(c.template_specs().unwrap().len(), 5);
        assert_eq!(c.run_id(), c.clone().run_id());
    }

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace("seed = 7", "");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn rejects_bad_values() {
        let text = MINIMAL.replace("linear(0, 10000)", "wobbly(1)");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Invalid(_))));
        let text = MINIMAL.replace("kind = \"synthetic\"", "kind = \"postgres\"").replace("default = \"linear(0, 10000)\"", "");
        assert!(matches!(RunConfig::parse(&text), Err(ConfigError::Invalid(_))));
        let text = MINIMAL.replace("num_queries = 100", "num_queries = 3");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out = Some("elsewhere".into());
        b.budget_minutes = Some(3.0);
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }
}
