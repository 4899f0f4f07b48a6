//! Pipeline configuration: one TOML file plus dotted-path overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use pcl_core::caption::{Captioner, MockCaptioner, RemoteCaptioner};
use pcl_core::experiment::{ExperimentConfig, Variant};
use pcl_core::labels::{default_templates_7, default_templates_80, load_templates, PromptTemplate};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const ENDPOINT_ENV: &str = "PCL_CAPTIONER_ENDPOINT";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionerKind {
    #[default]
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionerConfig {
    pub kind: CaptionerKind,
    pub endpoint: Option<String>,
    pub timeout_secs: f64,
    pub retries: usize,
}

impl Default for CaptionerConfig {
    fn default() -> Self {
        CaptionerConfig {
            kind: CaptionerKind::Mock,
            endpoint: None,
            timeout_secs: 10.0,
            retries: 2,
        }
    }
}

/// Optional input locations; stage outputs live under `out`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Training dataset directory (defaults to `<out>/train`).
    pub train_dataset: Option<PathBuf>,
    /// Evaluation dataset directory (defaults to `<out>/test`).
    pub test_dataset: Option<PathBuf>,
    /// Manual-prompt and evaluation templates, one per line.
    pub templates: Option<PathBuf>,
    /// Templates averaged into baseline targets.
    pub baseline_templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        let mut variants = vec![Variant::Full, Variant::Baseline];
        variants.extend(Variant::ABLATIONS);
        AblateConfig {
            seeds: vec![0, 1, 2, 3, 4],
            variants,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub captioner: CaptionerConfig,
    pub paths: PathsConfig,
    pub experiment: ExperimentConfig,
    pub ablate: AblateConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out: PathBuf::from("pcl-out"),
            captioner: CaptionerConfig::default(),
            paths: PathsConfig::default(),
            experiment: ExperimentConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

/// Parse `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match format!("v = {value}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Set `key` (dotted path) in `root`, creating intermediate tables.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override {assignment:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("bad override key {key:?}")));
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("override {key:?}: {part} is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

pub struct LoadOptions<'a> {
    pub config: Option<&'a Path>,
    pub overrides: &'a [String],
    pub seed: Option<u64>,
    pub out: Option<&'a Path>,
}

impl PipelineConfig {
    pub fn load(opts: &LoadOptions) -> Result<Self, CliError> {
        let mut root = match opts.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for o in opts.overrides {
            apply_override(&mut root, o)?;
        }
        let mut cfg: PipelineConfig =
            PipelineConfig::deserialize(root).map_err(|e| CliError::config(e.to_string()))?;
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        if let Some(out) = opts.out {
            cfg.out = out.to_path_buf();
        }
        if let Ok(endpoint) = std::env::var(ENDPOINT_ENV) {
            if !endpoint.trim().is_empty() {
                cfg.captioner.kind = CaptionerKind::Remote;
                cfg.captioner.endpoint = Some(endpoint);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.experiment.validate().map_err(CliError::config)?;
        self.experiment.predict.score.validate().map_err(CliError::config)?;
        if self.experiment.caption.k == 0 {
            return Err(CliError::config("caption.k must be at least 1"));
        }
        if self.experiment.caption.margin < 0.0 || !self.experiment.caption.margin.is_finite() {
            return Err(CliError::config("caption.margin must be finite and non-negative"));
        }
        if self.captioner.kind == CaptionerKind::Remote && self.captioner.endpoint.as_deref().is_none_or(str::is_empty) {
            return Err(CliError::config("remote captioner needs an endpoint"));
        }
        if !(self.captioner.timeout_secs > 0.0 && self.captioner.timeout_secs.is_finite()) {
            return Err(CliError::config("captioner.timeout_secs must be positive"));
        }
        if self.out.as_os_str().is_empty() {
            return Err(CliError::config("out must not be empty"));
        }
        if self.ablate.seeds.is_empty() || self.ablate.variants.is_empty() {
            return Err(CliError::config("ablate needs at least one seed and one variant"));
        }
        for p in [&self.paths.templates, &self.paths.baseline_templates].into_iter().flatten() {
            if !p.is_file() {
                return Err(CliError::config(format!("template file {} does not exist", p.display())));
            }
        }
        self.templates()?;
        self.baseline_templates()?;
        Ok(())
    }

    pub fn templates(&self) -> Result<Vec<PromptTemplate>, CliError> {
        match &self.paths.templates {
            Some(p) => load_templates(p).map_err(CliError::config),
            None => Ok(default_templates_7()),
        }
    }

    pub fn baseline_templates(&self) -> Result<Vec<PromptTemplate>, CliError> {
        match &self.paths.baseline_templates {
            Some(p) => load_templates(p).map_err(CliError::config),
            None => Ok(default_templates_80()),
        }
    }

    pub fn captioner(&self) -> Box<dyn Captioner> {
        match self.captioner.kind {
            CaptionerKind::Mock => Box::new(MockCaptioner),
            CaptionerKind::Remote => Box::new(RemoteCaptioner::new(
                self.captioner.endpoint.clone().unwrap_or_default(),
                Duration::from_secs_f64(self.captioner.timeout_secs),
                self.captioner.retries,
            )),
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(map) = value.as_object_mut() {
            map.remove("out");
        }
        let json = serde_json::to_vec(&value).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn train_dir(&self) -> PathBuf {
        self.paths.train_dataset.clone().unwrap_or_else(|| self.out.join("train"))
    }

    pub fn test_dir(&self) -> PathBuf {
        self.paths.test_dataset.clone().unwrap_or_else(|| self.out.join("test"))
    }
}
