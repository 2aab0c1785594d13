//! Turning a config into data, a target, and a sampler setup.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use pmcmc::augmentation::GammaPseudoObs;
use pmcmc::diagnostics::{tune_particle_count, TuneOptions};
use pmcmc::models::dpmm::{synthesize_genotypes, DpmmData, DpmmPriors, DpmmTarget, SubsetLabels};
use pmcmc::models::linear_gaussian::{kalman_oracle, simulate_linear_gaussian, LinearGaussianModel, LinearGaussianParams};
use pmcmc::models::stochastic_volatility::{simulate_sv, StochasticVolatilityModel, SvParams, SvPriors};
use pmcmc::samplers::{ChainConfig, IndependenceDist, ProposalKind, ProposalSpec, SamplerKind};
use pmcmc::smc::{ComponentChoice, StateSpaceTarget};
use pmcmc::{ConditionalTarget, Conditioner, FilterOptions, RngStream};

use crate::config::{ComponentConfig, DataSource, ExperimentConfig, LgConfig, Mode, ModelConfig};
use crate::error::{CliError, CliResult};

const DATA_STREAM: u64 = 0xDA7A;
const TUNE_STREAM: u64 = 0x7E57;

/// Stream for replicate `r`; stream 0 is reserved for data and tuning.
pub fn chain_stream(seed: u64, replicate: usize) -> RngStream {
    RngStream::new(seed, 1 + replicate as u64)
}

#[derive(Clone, Debug)]
pub enum Dataset {
    Series(Vec<f64>),
    Genotypes(DpmmData),
}

impl Dataset {
    pub fn rows(&self) -> usize {
        match self {
            Self::Series(y) => y.len(),
            Self::Genotypes(d) => d.n,
        }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let f = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let r = match self {
            Self::Series(y) => {
                let mut res = writeln!(w, "t,y");
                for (t, v) in y.iter().enumerate() {
                    res = res.and_then(|_| writeln!(w, "{},{}", t + 1, v));
                }
                res
            }
            Self::Genotypes(d) => d.write(&mut w),
        };
        r.and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
    }
}

pub fn lg_params(m: &LgConfig) -> LinearGaussianParams {
    LinearGaussianParams {
        gamma: m.gamma,
        sigma1: m.sigma1,
        sigma_x: m.sigma_x.unwrap_or_else(|| (1.0 - m.gamma * m.gamma).max(0.0).sqrt()),
        sigma_y: m.sigma_y,
        sigma_theta: m.sigma_theta,
    }
}

/// True stochastic-volatility parameters used for synthetic data.
pub fn sv_truth(config: &ExperimentConfig) -> SvParams {
    let d = &config.data;
    let gamma = d.gamma.unwrap_or(0.99);
    let sx = d.sigma_x.unwrap_or_else(|| (1.0 - gamma * gamma).sqrt());
    let sy = d.sigma_y.unwrap_or(1.0);
    SvParams { gamma, beta_x: 1.0 / (sx * sx), beta_y: 1.0 / (sy * sy) }
}

/// Simulate data from the config's synthetic settings.
pub fn generate(config: &ExperimentConfig) -> CliResult<Dataset> {
    let mut rng = RngStream::new(config.seed, 0).child(DATA_STREAM).rng();
    let d = &config.data;
    Ok(match &config.model {
        ModelConfig::LinearGaussian(m) => {
            let p = lg_params(m);
            p.validate()?;
            let sd = d.x1_sd.unwrap_or(p.sigma1);
            let (_, y) = simulate_linear_gaussian(&p, d.theta.unwrap_or(0.0), sd, d.length.unwrap_or(100), &mut rng);
            Dataset::Series(y)
        }
        ModelConfig::StochasticVolatility(pr) => {
            let (_, y) = simulate_sv(&sv_truth(config), pr.sigma0, d.length.unwrap_or(1000), &mut rng);
            Dataset::Series(y)
        }
        ModelConfig::Dpmm(_) => {
            let alleles = vec![d.alleles.unwrap_or(4); d.loci.unwrap_or(50)];
            Dataset::Genotypes(synthesize_genotypes(
                d.populations.unwrap_or(2),
                d.individuals.unwrap_or(40),
                &alleles,
                d.lambda.unwrap_or(1.0),
                &mut rng,
            )?)
        }
    })
}

fn read_series(path: &Path) -> CliResult<Vec<f64>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers = r.headers().map_err(|e| CliError::io(path, e))?.clone();
    let col = headers.iter().position(|h| h == "y").unwrap_or(headers.len().saturating_sub(1));
    let mut y = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::io(path, e))?;
        let v: f64 = rec
            .get(col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| CliError::Config(format!("{}: unparsable value in row {}", path.display(), y.len() + 1)))?;
        y.push(v);
    }
    if y.is_empty() {
        return Err(CliError::Config(format!("{}: no observations", path.display())));
    }
    Ok(y)
}

/// The config's data, from file or simulated.
pub fn load_data(config: &ExperimentConfig) -> CliResult<Dataset> {
    match config.data.source {
        DataSource::Synthetic => generate(config),
        DataSource::File => {
            let path = config.data.path.as_deref().expect("validated");
            match config.model {
                ModelConfig::Dpmm(_) => {
                    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
                    Ok(Dataset::Genotypes(DpmmData::read(BufReader::new(f))?))
                }
                _ => Ok(Dataset::Series(read_series(path)?)),
            }
        }
    }
}

/// A target of any built-in model.
pub enum Target {
    Lg(StateSpaceTarget<LinearGaussianModel>),
    Sv(StateSpaceTarget<StochasticVolatilityModel>),
    Dpmm(DpmmTarget),
}

/// Call `$body` with `$t` bound to the concrete target.
#[macro_export]
macro_rules! with_target {
    ($target:expr, |$t:ident| $body:expr) => {
        match $target {
            $crate::experiment::Target::Lg($t) => $body,
            $crate::experiment::Target::Sv($t) => $body,
            $crate::experiment::Target::Dpmm($t) => $body,
        }
    };
}

#[derive(Clone, Debug)]
pub struct Setup {
    pub z0: Conditioner,
    pub proposal: ProposalSpec,
    pub chain: ChainConfig,
    pub kind: SamplerKind,
}

pub struct Built {
    pub target: Target,
    pub setup: Setup,
}

fn check_names(map_kind: &str, keys: impl Iterator<Item = String>, known: &[&str]) -> CliResult<()> {
    for k in keys {
        if !known.contains(&k.as_str()) {
            return Err(CliError::Config(format!("{map_kind} entry {k:?} is not a component of this model (known: {known:?})")));
        }
    }
    Ok(())
}

fn component<'a>(config: &'a ExperimentConfig, name: &str) -> std::borrow::Cow<'a, ComponentConfig> {
    match config.conditioner.get(name) {
        Some(c) => std::borrow::Cow::Borrowed(c),
        None => std::borrow::Cow::Owned(ComponentConfig::default()),
    }
}

fn gaussian_knob(name: &str, c: &ComponentConfig, exact_var: Option<f64>) -> CliResult<f64> {
    if let Some(t) = c.tau2 {
        return Ok(t);
    }
    match (c.k_z, c.posterior_var.or(exact_var)) {
        (Some(k), Some(v)) => Ok(pmcmc::augmentation::scale_by_posterior(k, v)?),
        (Some(_), None) => Err(CliError::Config(format!("conditioner.{name}: kZ needs posteriorVar for this model"))),
        _ => Err(CliError::Config(format!("conditioner.{name}: pseudo mode needs tau2 or kZ"))),
    }
}

fn filter_options(config: &ExperimentConfig) -> FilterOptions {
    let s = &config.sampler;
    FilterOptions {
        resampling: s.resampling,
        use_kernel: s.kind == SamplerKind::PmmhParticleLearning,
        parallel: s.parallel_filter,
        ess_threshold: s.ess_threshold,
    }
}

/// Merge user proposals over the defaults.
fn proposals(config: &ExperimentConfig, names: &[String], defaults: BTreeMap<String, ProposalKind>) -> CliResult<ProposalSpec> {
    let known: Vec<&str> = names.iter().map(String::as_str).collect();
    check_names("proposal", config.proposal.keys().cloned(), &known)?;
    let mut out = Vec::with_capacity(names.len());
    for n in names {
        let kind = config
            .proposal
            .get(n)
            .or_else(|| defaults.get(n))
            .cloned()
            .ok_or_else(|| CliError::Config(format!("no proposal for {n:?}")))?;
        out.push((n.clone(), kind));
    }
    Ok(ProposalSpec::new(out))
}

fn build_lg(config: &ExperimentConfig, m: &LgConfig, y: Vec<f64>) -> CliResult<Built> {
    check_names("conditioner", config.conditioner.keys().cloned(), &["theta", "x1"])?;
    let p = lg_params(m);
    let free = LinearGaussianModel::new(p, ComponentChoice::Free, ComponentChoice::Free)?;
    let exact = kalman_oracle(&free, &y, &Conditioner::empty())?;
    let post = [(exact.theta_mean, exact.theta_var), (exact.x1_mean, exact.x1_var)];
    let mut choices = Vec::new();
    let mut z0 = Vec::new();
    let mut spreads = Vec::new();
    for (i, name) in ["theta", "x1"].into_iter().enumerate() {
        let c = component(config, name);
        let init = c.init.unwrap_or(post[i].0);
        match c.mode {
            Mode::Free => choices.push(ComponentChoice::Free),
            Mode::Fixed => {
                choices.push(ComponentChoice::Fixed);
                z0.push(init);
                spreads.push(post[i].1);
            }
            Mode::Pseudo => {
                let knob = gaussian_knob(name, &c, Some(post[i].1))?;
                choices.push(ComponentChoice::Pseudo { knob });
                z0.push(init);
                spreads.push(post[i].1 + knob);
            }
        }
    }
    let model = LinearGaussianModel::new(p, choices[0], choices[1])?;
    let target = model.into_target(y);
    let names = target.conditioner_names();
    let defaults = names
        .iter()
        .zip(&spreads)
        .map(|(n, v)| {
            let k = match config.sampler.kind {
                SamplerKind::ParticleGibbs => ProposalKind::FullConditional,
                _ => ProposalKind::RandomWalkNormal { step_var: *v },
            };
            (n.clone(), k)
        })
        .collect();
    let proposal = proposals(config, &names, defaults)?;
    Ok(Built { setup: setup(config, Conditioner::new(z0), proposal), target: Target::Lg(target) })
}

fn build_sv(config: &ExperimentConfig, pr: &SvPriors, y: Vec<f64>) -> CliResult<Built> {
    let all = ["gamma", "beta_x", "beta_y", "x1"];
    check_names("conditioner", config.conditioner.keys().cloned(), &all)?;
    let prior_mean = [pr.mu_gamma.clamp(-0.95, 0.95), pr.a_x / pr.b_x, pr.a_y / pr.b_y, 0.0];
    let priors_ab = [(0.0, 0.0), (pr.a_x, pr.b_x), (pr.a_y, pr.b_y), (0.0, 0.0)];
    let mut choices = [ComponentChoice::Free; 4];
    let mut z0 = Vec::new();
    let mut defaults = Vec::new();
    let x1_fixed = component(config, "x1").mode == Mode::Fixed;
    for (i, name) in all.into_iter().enumerate() {
        let c = component(config, name);
        let init = c.init.or(c.posterior_mean).unwrap_or(prior_mean[i]);
        let gamma_family = i == 1 || i == 2;
        match c.mode {
            Mode::Free => {}
            Mode::Fixed => {
                choices[i] = ComponentChoice::Fixed;
                z0.push(init);
                defaults.push(if gamma_family {
                    ProposalKind::RandomWalkLogScale { step_var: 0.05 }
                } else if i == 0 {
                    ProposalKind::RandomWalkNormal { step_var: 0.005 }
                } else {
                    ProposalKind::RandomWalkNormal { step_var: 0.5 }
                });
            }
            Mode::Pseudo if gamma_family => {
                let shape = match (c.shape, c.k_z, c.posterior_var) {
                    (Some(n), _, _) => n,
                    (None, Some(k), Some(v)) => {
                        let mean = c.posterior_mean.unwrap_or(init);
                        GammaPseudoObs::with_conditional_variance(priors_ab[i].0, priors_ab[i].1, mean, k * v)?.obs_shape
                    }
                    _ => return Err(CliError::Config(format!("conditioner.{name}: pseudo mode needs shape, or kZ with posteriorVar"))),
                };
                choices[i] = ComponentChoice::Pseudo { knob: shape };
                z0.push(shape / init);
                defaults.push(ProposalKind::RandomWalkLogScale { step_var: 1.0 / shape + 0.05 });
            }
            Mode::Pseudo => {
                let knob = gaussian_knob(name, &c, None)?;
                choices[i] = ComponentChoice::Pseudo { knob };
                z0.push(init);
                defaults.push(ProposalKind::RandomWalkNormal { step_var: knob + if i == 0 { 0.005 } else { 0.5 } });
            }
        }
    }
    let model = StochasticVolatilityModel::new(*pr, choices)?;
    let target = model.into_target(y);
    let names = target.conditioner_names();
    let full = config.sampler.kind == SamplerKind::ParticleGibbs && !x1_fixed;
    let defaults = names
        .iter()
        .zip(defaults)
        .map(|(n, k)| (n.clone(), if full { ProposalKind::FullConditional } else { k }))
        .collect();
    let proposal = proposals(config, &names, defaults)?;
    Ok(Built { setup: setup(config, Conditioner::new(z0), proposal), target: Target::Sv(target) })
}

fn build_dpmm(config: &ExperimentConfig, m: &crate::config::DpmmConfig, data: DpmmData) -> CliResult<Built> {
    check_names("conditioner", config.conditioner.keys().cloned(), &["lambda", "alpha"])?;
    for (k, c) in &config.conditioner {
        if c.mode != Mode::Fixed {
            return Err(CliError::Config(format!("conditioner.{k}: the mixture model always conditions on {k}")));
        }
    }
    let priors = DpmmPriors { lambda_shape: m.lambda_shape, lambda_rate: m.lambda_rate, alpha_shape: m.alpha_shape, alpha_rate: m.alpha_rate };
    let [a, b] = m.pair;
    if a == 0 || b == 0 || a > data.n || b > data.n {
        return Err(CliError::Config(format!("model.pair {:?} outside 1..={}", m.pair, data.n)));
    }
    let target = DpmmTarget::new(data, priors, m.subset_mean)?.with_pair(a - 1, b - 1);
    let lambda0 = component(config, "lambda").init.unwrap_or(priors.lambda_shape / priors.lambda_rate);
    let alpha0 = component(config, "alpha").init.unwrap_or(priors.alpha_shape / priors.alpha_rate);
    let z0 = Conditioner { values: vec![lambda0, alpha0], subset: m.subset_mean.map(|_| SubsetLabels::empty()) };
    let names = target.conditioner_names();
    let defaults = BTreeMap::from([
        ("lambda".to_string(), ProposalKind::RandomWalkLogScale { step_var: 0.09 }),
        (
            "alpha".to_string(),
            ProposalKind::Independence(IndependenceDist::Gamma { shape: priors.alpha_shape, rate: priors.alpha_rate }),
        ),
    ]);
    let proposal = proposals(config, &names, defaults)?;
    Ok(Built { setup: setup(config, z0, proposal), target: Target::Dpmm(target) })
}

fn setup(config: &ExperimentConfig, z0: Conditioner, proposal: ProposalSpec) -> Setup {
    Setup {
        z0,
        proposal,
        chain: ChainConfig { particles: config.sampler.particles, iterations: config.sampler.iterations, filter: filter_options(config) },
        kind: config.sampler.kind,
    }
}

/// Build the target and sampler setup, tuning N first when configured.
pub fn build(config: &ExperimentConfig, data: Dataset) -> CliResult<Built> {
    let mut built = match (&config.model, data) {
        (ModelConfig::LinearGaussian(m), Dataset::Series(y)) => build_lg(config, m, y)?,
        (ModelConfig::StochasticVolatility(p), Dataset::Series(y)) => build_sv(config, p, y)?,
        (ModelConfig::Dpmm(m), Dataset::Genotypes(d)) => build_dpmm(config, m, d)?,
        _ => return Err(CliError::Config("data format does not match the model".into())),
    };
    if let Some(var) = config.sampler.tune_target_var {
        let n = tune(config, &built, var)?;
        built.setup.chain.particles = n;
    }
    Ok(built)
}

fn tune(config: &ExperimentConfig, built: &Built, var: f64) -> CliResult<usize> {
    let r = tune_report(config, built, var)?;
    log::info!("tuned particle count {} for log-likelihood variance ≤ {var}", r.particles);
    Ok(r.particles)
}

/// Full tuning record, for the `tune` subcommand.
pub fn tune_report(config: &ExperimentConfig, built: &Built, var: f64) -> CliResult<pmcmc::diagnostics::TuneResult> {
    let opts = TuneOptions {
        min_particles: config.sampler.tune_min_particles,
        repetitions: config.sampler.tune_repetitions,
        filter: built.setup.chain.filter,
        ..TuneOptions::default()
    };
    let stream = RngStream::new(config.seed, 0).child(TUNE_STREAM);
    let z0 = &built.setup.z0;
    Ok(with_target!(&built.target, |t| tune_particle_count(t, z0, var, &opts, stream))?)
}
