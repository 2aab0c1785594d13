//! The subcommands.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{parse_tree, set_path, ExperimentConfig, Loaded, ModelConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{build, generate, load_data, tune_report, Built};
use crate::runner::{run_chain, ChainFiles, ReplicateReport};
use crate::with_target;

const RESOLVED: &str = "config.resolved.json";

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Numerical(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_resolved(dir: &Path, name: &str, config: &ExperimentConfig) -> CliResult<()> {
    write_json(&dir.join(name), config)
}

fn pool(workers: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct DataMeta<'a> {
    config_hash: String,
    seed: u64,
    model: &'a str,
    rows: usize,
    file: String,
}

fn model_name(m: &ModelConfig) -> &'static str {
    match m {
        ModelConfig::LinearGaussian(_) => "linear-gaussian",
        ModelConfig::StochasticVolatility(_) => "stochastic-volatility",
        ModelConfig::Dpmm(_) => "dpmm",
    }
}

/// Simulate the configured data set; returns the data file path.
pub fn cmd_generate(config: &ExperimentConfig) -> CliResult<PathBuf> {
    let dir = &config.output.dir;
    create_dir(dir)?;
    let data = generate(config)?;
    let name = match config.model {
        ModelConfig::Dpmm(_) => "data.txt",
        _ => "data.csv",
    };
    let path = dir.join(name);
    data.write(&path)?;
    let meta = DataMeta { config_hash: config.hash(), seed: config.seed, model: model_name(&config.model), rows: data.rows(), file: name.into() };
    write_json(&dir.join(format!("{name}.meta.json")), &meta)?;
    write_resolved(dir, RESOLVED, config)?;
    log::info!("wrote {} rows to {}", data.rows(), path.display());
    Ok(path)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub sampler: pmcmc::samplers::SamplerKind,
    pub particles: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub replicates: Vec<ReplicateReport>,
}

/// Run every replicate of `built` on the worker pool; chain files go to
/// `dir` when given.
fn run_replicates(
    config: &ExperimentConfig,
    built: &Built,
    hash: &str,
    dir: Option<&Path>,
    stem: &str,
    resume: bool,
) -> CliResult<Vec<ReplicateReport>> {
    let reps: Vec<usize> = (0..config.replicates).collect();
    let target = &built.target;
    let setup = &built.setup;
    let results: Vec<CliResult<ReplicateReport>> = pool(config.output.workers)?.install(|| {
        reps.par_iter()
            .map(|&r| {
                let files = dir.map(|d| ChainFiles::in_dir(d, &format!("{stem}{r}")));
                with_target!(target, |t| run_chain(t, setup, config, hash, r, files.as_ref(), resume))
            })
            .collect()
    });
    results.into_iter().collect()
}

pub fn cmd_run(config: &ExperimentConfig, resume: bool) -> CliResult<RunSummary> {
    let dir = &config.output.dir;
    create_dir(dir)?;
    write_resolved(dir, RESOLVED, config)?;
    let hash = config.hash();
    let built = build(config, load_data(config)?)?;
    let replicates = run_replicates(config, &built, &hash, Some(dir), "chain-", resume)?;
    let summary = RunSummary {
        config_hash: hash,
        seed: config.seed,
        sampler: config.sampler.kind,
        particles: built.setup.chain.particles,
        iterations: config.sampler.iterations,
        burn_in: config.burn_in(),
        thin: config.sampler.thin,
        replicates,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn value_text(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv_field(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| x.to_string())
}

/// Count data rows of an existing sweep table after checking its hash.
fn existing_rows(path: &Path, hash: &str) -> CliResult<usize> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rows = 0;
    let mut ok = false;
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if let Some(h) = line.strip_prefix("# config_hash=") {
            ok = h == hash;
        } else if !line.starts_with('#') && !line.starts_with("value,") && !line.is_empty() {
            rows += 1;
        }
    }
    if !ok {
        return Err(CliError::Config(format!("{} was written by a different config", path.display())));
    }
    Ok(rows)
}

/// Sweep one config path over a grid; returns the table path.
pub fn cmd_sweep(loaded: &Loaded, resume: bool) -> CliResult<PathBuf> {
    let config = &loaded.config;
    let spec = config.sweep.as_ref().ok_or_else(|| CliError::Config("no [sweep] section".into()))?;
    let dir = &config.output.dir;
    create_dir(dir)?;
    write_resolved(dir, RESOLVED, config)?;
    let hash = config.hash();

    let mut points = Vec::with_capacity(spec.values.len());
    for v in &spec.values {
        let mut tree = loaded.tree.clone();
        for p in spec.path.split(',') {
            set_path(&mut tree, p.trim(), v.clone())?;
        }
        let mut c = parse_tree(&tree)?;
        c.sweep = None;
        c.replicates = spec.replicates;
        let built = build(&c, load_data(&c)?)?;
        points.push((value_text(v), c, built));
    }
    let mut components: Vec<String> = Vec::new();
    for (_, _, b) in &points {
        let names = with_target!(&b.target, |t| crate::runner::columns(t));
        for n in &names[1..names.len() - 2] {
            if !components.contains(n) {
                components.push(n.clone());
            }
        }
    }

    let path = dir.join("sweep.csv");
    let done = if resume && path.exists() { existing_rows(&path, &hash)? } else { 0 };
    let mut out = if done > 0 {
        BufWriter::new(OpenOptions::new().append(true).open(&path).map_err(|e| CliError::io(&path, e))?)
    } else {
        let mut w = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
        let mut header = vec!["value", "replicate", "particles", "iterations", "acceptanceRate", "wallClock"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        for c in &components {
            header.push(format!("act_{c}"));
            header.push(format!("ess_{c}"));
        }
        writeln!(w, "# config_hash={hash}\n# seed={}\n# path={}\n{}", config.seed, spec.path, header.join(","))
            .map_err(|e| CliError::io(&path, e))?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        w
    };

    let tasks: Vec<(usize, usize)> =
        (0..points.len()).flat_map(|p| (0..spec.replicates).map(move |r| (p, r))).skip(done).collect();
    let workers = config.output.workers.max(1);
    let pool = pool(workers)?;
    let chain_dir = config.output.sweep_chains.then_some(dir.as_path());
    for (i, chunk) in tasks.chunks(workers).enumerate() {
        let results: Vec<CliResult<ReplicateReport>> = pool.install(|| {
            chunk
                .par_iter()
                .map(|&(p, r)| {
                    let (_, c, b) = &points[p];
                    let files = chain_dir.map(|d| ChainFiles::in_dir(d, &format!("chain-v{p}-r{r}")));
                    let (target, setup) = (&b.target, &b.setup);
                    with_target!(target, |t| run_chain(t, setup, c, &hash, r, files.as_ref(), false))
                })
                .collect()
        });
        for (&(p, _), res) in chunk.iter().zip(results) {
            let rep = res?;
            let mut fields = vec![
                points[p].0.clone(),
                rep.replicate.to_string(),
                rep.particles.to_string(),
                rep.iterations.to_string(),
                rep.acceptance_rate.to_string(),
                rep.wall_clock.to_string(),
            ];
            for c in &components {
                let s = rep.components.iter().find(|s| &s.component == c);
                fields.push(csv_field(s.and_then(|s| s.act)));
                fields.push(csv_field(s.and_then(|s| s.ess)));
            }
            writeln!(out, "{}", fields.join(",")).map_err(|e| CliError::io(&path, e))?;
        }
        out.flush().map_err(|e| CliError::io(&path, e))?;
        log::info!("sweep: {}/{} points done", done + (i + 1) * workers.min(chunk.len()), done + tasks.len());
    }
    Ok(path)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompareComponent {
    pub component: String,
    pub act: Option<f64>,
    pub ess: Option<f64>,
    pub ess_per_sec: Option<f64>,
    /// ESS per particle-iteration, a machine-independent cost measure.
    pub ess_per_particle_iteration: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CompareEntry {
    pub index: usize,
    pub config_hash: String,
    pub seed: u64,
    pub sampler: pmcmc::samplers::SamplerKind,
    pub particles: usize,
    pub iterations: usize,
    pub thin: usize,
    /// Post-burn-in samples kept after thinning.
    pub retained: usize,
    pub wall_clock: f64,
    pub acceptance_rate: f64,
    pub components: Vec<CompareComponent>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Ranking {
    pub component: String,
    /// Config indices ordered by ESS per second, best first.
    pub order: Vec<usize>,
    /// ESS per second relative to the best config.
    pub relative_efficiency: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comparison {
    pub config_hash: String,
    pub seed: u64,
    pub entries: Vec<CompareEntry>,
    pub rankings: Vec<Ranking>,
}

fn combined_hash(hashes: &[String]) -> String {
    Sha256::digest(hashes.join(",").as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = xs.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Run each config and rank them by ESS per second; output goes to `dir`.
pub fn cmd_compare(configs: &[ExperimentConfig], dir: &Path) -> CliResult<Comparison> {
    if configs.len() < 2 {
        return Err(CliError::Config("compare needs at least two configs".into()));
    }
    create_dir(dir)?;
    let mut entries = Vec::new();
    let mut hashes = Vec::new();
    for (i, c) in configs.iter().enumerate() {
        write_resolved(dir, &format!("config-{i}.resolved.json"), c)?;
        let hash = c.hash();
        let built = build(c, load_data(c)?)?;
        let reps = run_replicates(c, &built, &hash, Some(dir), &format!("chain-c{i}-r"), false)?;
        let wall = reps.iter().map(|r| r.wall_clock).sum::<f64>() / reps.len() as f64;
        let names: Vec<String> = reps[0].components.iter().map(|s| s.component.clone()).collect();
        let components = names
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let act = mean(reps.iter().filter_map(|r| r.components[k].act));
                let ess = mean(reps.iter().filter_map(|r| r.components[k].ess));
                CompareComponent {
                    component: n.clone(),
                    act,
                    ess,
                    ess_per_sec: ess.map(|e| e / wall.max(1e-9)),
                    ess_per_particle_iteration: ess.map(|e| e / (built.setup.chain.particles * c.sampler.iterations) as f64),
                }
            })
            .collect();
        entries.push(CompareEntry {
            index: i,
            config_hash: hash.clone(),
            seed: c.seed,
            sampler: c.sampler.kind,
            particles: built.setup.chain.particles,
            iterations: c.sampler.iterations,
            thin: c.sampler.thin,
            retained: reps[0].retained,
            wall_clock: wall,
            acceptance_rate: mean(reps.iter().map(|r| r.acceptance_rate)).unwrap_or(0.0),
            components,
        });
        hashes.push(hash);
    }
    let shared: BTreeSet<String> = entries[0]
        .components
        .iter()
        .map(|c| c.component.clone())
        .filter(|n| entries.iter().all(|e| e.components.iter().any(|c| &c.component == n)))
        .collect();
    let rankings = shared
        .into_iter()
        .map(|name| {
            let eff: Vec<Option<f64>> = entries
                .iter()
                .map(|e| e.components.iter().find(|c| c.component == name).and_then(|c| c.ess_per_sec))
                .collect();
            let mut order: Vec<usize> = (0..entries.len()).collect();
            order.sort_by(|&a, &b| eff[b].unwrap_or(-1.0).total_cmp(&eff[a].unwrap_or(-1.0)));
            let best = eff[order[0]];
            let relative_efficiency = eff.iter().map(|e| e.zip(best).map(|(e, b)| e / b)).collect();
            Ranking { component: name, order, relative_efficiency }
        })
        .collect();
    let cmp = Comparison { config_hash: combined_hash(&hashes), seed: configs[0].seed, entries, rankings };
    write_json(&dir.join("comparison.json"), &cmp)?;
    Ok(cmp)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TuneReport {
    pub config_hash: String,
    pub seed: u64,
    pub target_var: f64,
    pub particles: usize,
    pub measured: Vec<(usize, f64)>,
}

/// Tune the particle count at the initial 𝒵.
pub fn cmd_tune(config: &ExperimentConfig) -> CliResult<TuneReport> {
    let dir = &config.output.dir;
    create_dir(dir)?;
    write_resolved(dir, RESOLVED, config)?;
    let target_var = config.sampler.tune_target_var.unwrap_or(1.0);
    let mut plain = config.clone();
    plain.sampler.tune_target_var = None;
    let built = build(&plain, load_data(&plain)?)?;
    let r = tune_report(config, &built, target_var)?;
    let report = TuneReport { config_hash: config.hash(), seed: config.seed, target_var, particles: r.particles, measured: r.measured };
    write_json(&dir.join("tune.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VerifyReport {
    pub checked: Vec<String>,
    pub mismatched: Vec<String>,
}

fn embedded_hashes(path: &Path) -> CliResult<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    if name.ends_with(".csv") {
        return Ok(text.lines().filter_map(|l| l.strip_prefix("# config_hash=")).map(String::from).collect());
    }
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut out: Vec<String> = v.get("configHash").and_then(|h| h.as_str()).map(String::from).into_iter().collect();
    if let Some(entries) = v.get("entries").and_then(|e| e.as_array()) {
        out.extend(entries.iter().filter_map(|e| e.get("configHash").and_then(|h| h.as_str()).map(String::from)));
    }
    Ok(out)
}

/// Recompute config hashes for `dir` and check every embedded one.
///
/// With `expected`, every file must carry that config's hash; otherwise the
/// hashes come from the resolved configs stored in `dir`.
pub fn cmd_verify(dir: &Path, expected: Option<&ExperimentConfig>) -> CliResult<VerifyReport> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    entries.sort();
    let resolved: Vec<&PathBuf> = entries.iter().filter(|p| p.to_string_lossy().ends_with(".resolved.json")).collect();
    let mut valid = BTreeSet::new();
    match expected {
        Some(c) => {
            valid.insert(c.hash());
        }
        None => {
            if resolved.is_empty() {
                return Err(CliError::Config(format!("{} holds no resolved config; pass --config", dir.display())));
            }
            let mut hashes = Vec::new();
            for p in &resolved {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
                let c: ExperimentConfig =
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                hashes.push(c.hash());
            }
            valid.extend(hashes.iter().cloned());
            if resolved.len() > 1 {
                valid.insert(combined_hash(&hashes));
            }
        }
    }
    let mut report = VerifyReport { checked: Vec::new(), mismatched: Vec::new() };
    for p in &entries {
        let s = p.to_string_lossy();
        if s.ends_with(".resolved.json") || !(s.ends_with(".csv") || s.ends_with(".json")) {
            continue;
        }
        let hashes = embedded_hashes(p)?;
        if hashes.is_empty() {
            continue;
        }
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if hashes.iter().all(|h| valid.contains(h)) {
            report.checked.push(name);
        } else {
            report.mismatched.push(name);
        }
    }
    Ok(report)
}
