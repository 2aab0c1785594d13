//! Running one chain with streamed CSV output and checkpoints.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use pmcmc::diagnostics::{summarize, ChainSeries, ComponentSummary};
use pmcmc::samplers::{Chain, Checkpoint, Sample};
use pmcmc::ConditionalTarget;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{chain_stream, Setup};

/// Paths of one chain's CSV and its checkpoint.
#[derive(Clone, Debug)]
pub struct ChainFiles {
    pub csv: PathBuf,
    pub checkpoint: PathBuf,
}

impl ChainFiles {
    pub fn in_dir(dir: &Path, stem: &str) -> Self {
        Self { csv: dir.join(format!("{stem}.csv")), checkpoint: dir.join(format!("{stem}.checkpoint.json")) }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReplicateReport {
    pub replicate: usize,
    pub particles: usize,
    pub iterations: usize,
    pub acceptance_rate: f64,
    /// Seconds spent sampling, summed over resumed sessions.
    pub wall_clock: f64,
    pub retained: usize,
    pub components: Vec<ComponentSummary>,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", bound(serialize = "E: Serialize", deserialize = "E: serde::de::DeserializeOwned"))]
struct CheckpointFile<E> {
    config_hash: String,
    seed: u64,
    replicate: usize,
    elapsed: f64,
    checkpoint: Checkpoint<E>,
}

/// Column names of a chain CSV for `target`.
pub fn columns<T: ConditionalTarget>(target: &T) -> Vec<String> {
    let mut c = vec!["iteration".to_string()];
    c.extend(target.summary_names());
    c.extend(target.conditioner_names().into_iter().map(|n| format!("cond.{n}")));
    c.push("logLik".into());
    c.push("accepted".into());
    c
}

fn row(s: &Sample) -> String {
    let mut out = s.iteration.to_string();
    for v in s.summary.iter().chain(&s.z) {
        out.push(',');
        out.push_str(&v.to_string());
    }
    out.push(',');
    out.push_str(&s.log_lik.to_string());
    out.push_str(if s.accepted { ",1" } else { ",0" });
    out
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

/// Keep the header and the first `rows` data rows of a chain CSV; returns the
/// kept data rows.
fn truncate_csv(path: &Path, rows: usize) -> CliResult<Vec<String>> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut head = Vec::new();
    let mut data = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.starts_with('#') || line.starts_with("iteration") {
            head.push(line);
        } else if data.len() < rows && !line.is_empty() {
            data.push(line);
        }
    }
    if data.len() < rows {
        return Err(CliError::Config(format!("{}: holds {} rows but the checkpoint expects {rows}", path.display(), data.len())));
    }
    let mut text = head.join("\n");
    text.push('\n');
    for d in &data {
        text.push_str(d);
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())?;
    Ok(data)
}

/// Sampled traces by column, skipping `iteration`.
struct Traces {
    cols: Vec<Vec<f64>>,
}

impl Traces {
    fn new(width: usize) -> Self {
        Self { cols: vec![Vec::new(); width] }
    }

    fn push_sample(&mut self, s: &Sample) {
        let vals = s.summary.iter().chain(&s.z).copied().chain([s.log_lik, if s.accepted { 1.0 } else { 0.0 }]);
        for (c, v) in self.cols.iter_mut().zip(vals) {
            c.push(v);
        }
    }

    fn push_row(&mut self, line: &str) -> CliResult<()> {
        let fields: Vec<&str> = line.split(',').skip(1).collect();
        if fields.len() != self.cols.len() {
            return Err(CliError::Config(format!("chain row has {} fields, expected {}", fields.len(), self.cols.len())));
        }
        for (c, f) in self.cols.iter_mut().zip(fields) {
            c.push(f.parse().map_err(|_| CliError::Config(format!("bad chain value {f:?}")))?);
        }
        Ok(())
    }
}

/// Diagnostics for every tracked summary and conditioner component.
pub fn summarize_traces(names: &[String], traces: &[Vec<f64>], burn_in: usize, thin: usize) -> CliResult<Vec<ComponentSummary>> {
    names
        .iter()
        .zip(traces)
        .map(|(n, t)| {
            let s = ChainSeries::new(t.clone(), burn_in, thin)?;
            Ok(summarize(n, &s))
        })
        .collect()
}

/// Run replicate `replicate` of `setup` to completion.
///
/// With `files`, rows stream to the CSV and a checkpoint is written every
/// `output.checkpointEvery` iterations; `resume` continues from it.
pub fn run_chain<T: ConditionalTarget>(
    target: &T,
    setup: &Setup,
    config: &ExperimentConfig,
    hash: &str,
    replicate: usize,
    files: Option<&ChainFiles>,
    resume: bool,
) -> CliResult<ReplicateReport> {
    let cols = columns(target);
    let width = cols.len() - 1;
    let stream = chain_stream(config.seed, replicate);
    let mut traces = Traces::new(width);
    let mut elapsed = 0.0;

    let previous = match files {
        Some(f) if resume && f.checkpoint.exists() => {
            let text = std::fs::read_to_string(&f.checkpoint).map_err(|e| CliError::io(&f.checkpoint, e))?;
            let cp: CheckpointFile<T::Extended> =
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", f.checkpoint.display())))?;
            if cp.config_hash != hash || cp.seed != config.seed {
                return Err(CliError::Config(format!("{} belongs to a different config or seed", f.checkpoint.display())));
            }
            for line in truncate_csv(&f.csv, cp.checkpoint.iteration)? {
                traces.push_row(&line)?;
            }
            elapsed = cp.elapsed;
            Some(cp.checkpoint)
        }
        _ => None,
    };
    let resumed = previous.is_some();
    let mut chain = match previous {
        Some(cp) => Chain::resume(target, setup.kind, &setup.proposal, setup.chain, stream, cp)?,
        None => Chain::new(target, setup.kind, &setup.proposal, setup.chain, setup.z0.clone(), stream)?,
    };

    let mut writer = match files {
        Some(f) => {
            let file = if resumed {
                OpenOptions::new().append(true).open(&f.csv)
            } else {
                File::create(&f.csv)
            }
            .map_err(|e| CliError::io(&f.csv, e))?;
            let mut w = BufWriter::new(file);
            if !resumed {
                writeln!(w, "# config_hash={hash}\n# seed={}\n# replicate={replicate}\n{}", config.seed, cols.join(","))
                    .map_err(|e| CliError::io(&f.csv, e))?;
            }
            Some((w, f))
        }
        None => None,
    };

    let total = setup.chain.iterations;
    let beat = (total / 10).max(1);
    let every = config.output.checkpoint_every.max(1);
    let start = Instant::now();
    while chain.iteration() < total {
        let s = chain.step()?;
        traces.push_sample(&s);
        if let Some((w, f)) = writer.as_mut() {
            writeln!(w, "{}", row(&s)).map_err(|e| CliError::io(&f.csv, e))?;
            if chain.iteration() % every == 0 || chain.iteration() == total {
                w.flush().map_err(|e| CliError::io(&f.csv, e))?;
                let cp = CheckpointFile {
                    config_hash: hash.to_string(),
                    seed: config.seed,
                    replicate,
                    elapsed: elapsed + start.elapsed().as_secs_f64(),
                    checkpoint: chain.checkpoint(),
                };
                let json = serde_json::to_vec(&cp).map_err(|e| CliError::Numerical(e.to_string()))?;
                write_atomic(&f.checkpoint, &json)?;
            }
        }
        if chain.iteration() % beat == 0 {
            log::info!("replicate {replicate}: iteration {}/{total}, acceptance {:.3}", chain.iteration(), chain.acceptance_rate());
        }
    }
    let wall_clock = elapsed + start.elapsed().as_secs_f64();

    let tracked = width - 2;
    let names: Vec<String> = cols[1..=tracked].to_vec();
    let burn = config.burn_in();
    let thin = config.sampler.thin;
    let components = summarize_traces(&names, &traces.cols[..tracked], burn, thin)?;
    let retained = total.saturating_sub(burn).div_ceil(thin);
    Ok(ReplicateReport {
        replicate,
        particles: setup.chain.particles,
        iterations: total,
        acceptance_rate: chain.acceptance_rate(),
        wall_clock,
        retained,
        components,
    })
}
