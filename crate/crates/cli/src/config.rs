//! Experiment configuration.
//!
//! A config is a TOML tree. Overrides are applied to the tree before it is
//! deserialised, so every key can be set from the file, from `PMCMC_*`
//! environment variables, or from `--set path=value`, in increasing order of
//! precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pmcmc::models::stochastic_volatility::SvPriors;
use pmcmc::resample::ResamplingScheme;
use pmcmc::samplers::{ProposalKind, SamplerKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "PMCMC_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    /// Treatment of each model component; unlisted components are free.
    #[serde(default)]
    pub conditioner: BTreeMap<String, ComponentConfig>,
    pub sampler: SamplerConfig,
    /// Proposal per entry of 𝒵, keyed by value name; unlisted entries get
    /// the model default.
    #[serde(default)]
    pub proposal: BTreeMap<String, ProposalKind>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    LinearGaussian(LgConfig),
    StochasticVolatility(SvPriors),
    Dpmm(DpmmConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LgConfig {
    pub gamma: f64,
    pub sigma1: f64,
    /// Defaults to √(1 − γ²), giving unit stationary variance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_x: Option<f64>,
    pub sigma_y: f64,
    pub sigma_theta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DpmmConfig {
    #[serde(default = "default_lambda_shape")]
    pub lambda_shape: f64,
    #[serde(default = "one_f")]
    pub lambda_rate: f64,
    #[serde(default = "default_alpha_shape")]
    pub alpha_shape: f64,
    #[serde(default = "default_alpha_rate")]
    pub alpha_rate: f64,
    /// Mean of the subset-size distribution; absent disables the subset
    /// pseudo-observation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_mean: Option<f64>,
    /// 1-based pair whose co-clustering indicator is traced.
    #[serde(default = "default_pair")]
    pub pair: [usize; 2],
}

fn default_lambda_shape() -> f64 {
    4.0
}
fn one_f() -> f64 {
    1.0
}
fn default_alpha_shape() -> f64 {
    5.0
}
fn default_alpha_rate() -> f64 {
    10.0
}
fn default_pair() -> [usize; 2] {
    [1, 2]
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synthetic,
    File,
}

/// Where the data come from. Synthetic fields not set take model defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub source: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Series length T.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// True offset for linear-Gaussian data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    /// Standard deviation of the simulated X₁; defaults to the model's σ₁.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x1_sd: Option<f64>,
    /// True stochastic-volatility parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_y: Option<f64>,
    /// Synthetic genotype settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub individuals: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loci: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alleles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub populations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Free,
    Fixed,
    Pseudo,
}

/// One component of 𝒵.
///
/// A pseudo-observation's noise is set by `tau2` (Gaussian noise variance),
/// `shape` (gamma observation shape) or `kZ`, which scales a posterior
/// variance: exact for the linear-Gaussian model, `posteriorVar` otherwise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ComponentConfig {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<f64>,
    #[serde(default, rename = "kZ", skip_serializing_if = "Option::is_none")]
    pub k_z: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_var: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_mean: Option<f64>,
    /// Starting value of the component (a fixed value, or the target value
    /// a pseudo-observation starts at).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(default = "default_particles")]
    pub particles: usize,
    pub iterations: usize,
    /// Fraction of the chain dropped before diagnostics.
    #[serde(default = "default_burn_in")]
    pub burn_in: f64,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub parallel_filter: bool,
    #[serde(default)]
    pub resampling: ResamplingScheme,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess_threshold: Option<f64>,
    /// When set, the particle count is tuned at the initial 𝒵 so the
    /// log-likelihood variance is at most this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune_target_var: Option<f64>,
    #[serde(default = "default_tune_reps")]
    pub tune_repetitions: usize,
    /// Smallest particle count tuning may return.
    #[serde(default = "one")]
    pub tune_min_particles: usize,
}

fn default_particles() -> usize {
    100
}
fn default_burn_in() -> f64 {
    0.25
}
fn default_tune_reps() -> usize {
    50
}

/// Run-time settings; not part of the config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
    #[serde(default = "one")]
    pub workers: usize,
    /// Write per-point chain CSVs during sweeps.
    #[serde(default)]
    pub sweep_chains: bool,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_checkpoint() -> usize {
    1000
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), checkpoint_every: default_checkpoint(), workers: 1, sweep_chains: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted config path, e.g. `model.sigma1`. Several comma-separated
    /// paths are all set to the same grid value
    /// (`conditioner.theta.kZ,conditioner.x1.kZ`).
    pub path: String,
    pub values: Vec<toml::Value>,
    #[serde(default = "one")]
    pub replicates: usize,
}

/// A config tree with overrides applied, plus the parsed config.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub tree: toml::Value,
    pub config: ExperimentConfig,
}

pub fn read_tree(path: &Path) -> CliResult<toml::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(toml::Value::Table(table))
}

/// Parse an override value as a TOML literal, falling back to a bare string.
fn parse_literal(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn normalise(key: &str) -> String {
    key.chars().filter(|c| *c != '_').flat_map(char::to_lowercase).collect()
}

fn camel(segment: &str) -> String {
    let mut out = String::new();
    for (i, part) in segment.to_lowercase().split('_').enumerate() {
        if i == 0 {
            out.push_str(part);
        } else {
            let mut c = part.chars();
            if let Some(f) = c.next() {
                out.extend(f.to_uppercase());
                out.push_str(c.as_str());
            }
        }
    }
    out
}

/// Set `path` (dot-separated) in `tree`, creating tables as needed.
pub fn set_path(tree: &mut toml::Value, path: &str, value: toml::Value) -> CliResult<()> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override path {path:?}")));
    }
    let mut node = tree;
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override path {path:?} runs through a non-table")))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        node = table.entry((*part).to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    unreachable!()
}

/// Resolve an environment-style path (`SAMPLER__PARTICLES`) against the tree:
/// each segment matches an existing key ignoring case and underscores, or
/// else is converted to camelCase.
fn env_path(tree: &toml::Value, raw: &str) -> String {
    let mut node = Some(tree);
    let mut out = Vec::new();
    for seg in raw.split("__") {
        let found = node
            .and_then(|n| n.as_table())
            .and_then(|t| t.keys().find(|k| normalise(k) == normalise(seg)).cloned());
        let key = found.unwrap_or_else(|| camel(seg));
        node = node.and_then(|n| n.get(&key));
        out.push(key);
    }
    out.join(".")
}

/// Apply `PMCMC_*` variables, then `--set` overrides.
pub fn apply_overrides(
    tree: &mut toml::Value,
    env: impl IntoIterator<Item = (String, String)>,
    sets: &[String],
) -> CliResult<()> {
    let mut env: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    env.sort();
    for (k, v) in env {
        let path = env_path(tree, &k[ENV_PREFIX.len()..]);
        set_path(tree, &path, parse_literal(&v))?;
    }
    for s in sets {
        let (k, v) = s.split_once('=').ok_or_else(|| CliError::Config(format!("--set expects key=value, got {s:?}")))?;
        set_path(tree, k.trim(), parse_literal(v.trim()))?;
    }
    Ok(())
}

pub fn parse_tree(tree: &toml::Value) -> CliResult<ExperimentConfig> {
    let config: ExperimentConfig = tree.clone().try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn validate(&self) -> CliResult<()> {
        let s = &self.sampler;
        if s.iterations == 0 {
            return Err(CliError::Config("sampler.iterations must be positive".into()));
        }
        if !(0.0..1.0).contains(&s.burn_in) {
            return Err(CliError::Config("sampler.burnIn must lie in [0, 1)".into()));
        }
        if s.thin == 0 || self.replicates == 0 {
            return Err(CliError::Config("thin and replicates must be positive".into()));
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() || sw.replicates == 0 {
                return Err(CliError::Config("sweep needs a non-empty grid and at least one replicate".into()));
            }
        }
        if self.data.source == DataSource::File && self.data.path.is_none() {
            return Err(CliError::Config("data.source = \"file\" needs data.path".into()));
        }
        Ok(())
    }

    /// SHA-256 of the config with the seed and settings that cannot change
    /// results (output, parallel filtering) removed.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Some(m) = v.as_object_mut() {
            m.remove("output");
            m.remove("seed");
            if let Some(s) = m.get_mut("sampler").and_then(|s| s.as_object_mut()) {
                s.remove("parallelFilter");
            }
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn burn_in(&self) -> usize {
        (self.sampler.burn_in * self.sampler.iterations as f64).floor() as usize
    }
}

/// Load a config file, apply environment and `--set` overrides, and the
/// explicit flags.
pub fn load(
    path: &Path,
    sets: &[String],
    seed: Option<u64>,
    out: Option<&Path>,
    workers: Option<usize>,
) -> CliResult<Loaded> {
    let mut tree = read_tree(path)?;
    apply_overrides(&mut tree, std::env::vars(), sets)?;
    if let Some(s) = seed {
        set_path(&mut tree, "seed", toml::Value::Integer(s as i64))?;
    }
    if let Some(o) = out {
        set_path(&mut tree, "output.dir", toml::Value::String(o.display().to_string()))?;
    }
    if let Some(w) = workers {
        set_path(&mut tree, "output.workers", toml::Value::Integer(w as i64))?;
    }
    let config = parse_tree(&tree)?;
    Ok(Loaded { tree, config })
}
