use rand::Rng;
use rayon::prelude::*;

use super::{Conditioner, FilterOptions, StateSpaceModel};
use crate::error::{Error, Result, WeightError};
use crate::particles::{ExtendedState, Genealogy, ParticleSystem};
use crate::resample::{effective_sample_size, resample_multinomial};
use crate::rng::{tag, RngStream};
use crate::weights::{normalize_log_weights, LogLikelihoodEstimate};

/// Result of one filter run.
#[derive(Clone, Debug)]
pub struct PfOutput<S, P, St> {
    pub log_lik: LogLikelihoodEstimate,
    /// One path drawn from the final weighted system; `None` on collapse.
    pub sampled: Option<ExtendedState<S, P>>,
    /// Particles at the last completed step with their (unnormalised) log-weights.
    pub final_system: ParticleSystem<S, P, St>,
    pub genealogy: Genealogy<S>,
}

impl<S, P, St> PfOutput<S, P, St> {
    pub fn collapsed(&self) -> bool {
        self.log_lik.is_collapsed()
    }
}

type Step<M> = (
    <M as StateSpaceModel>::State,
    <M as StateSpaceModel>::Params,
    <M as StateSpaceModel>::Stats,
    f64,
);

fn map_particles<M, F>(n: usize, parallel: bool, f: F) -> Result<Vec<Step<M>>>
where
    M: StateSpaceModel,
    F: Fn(usize) -> Result<Step<M>> + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

fn unzip4<M: StateSpaceModel>(
    rows: Vec<Step<M>>,
) -> (Vec<M::State>, Vec<M::Params>, Vec<M::Stats>, Vec<f64>) {
    let n = rows.len();
    let mut s = Vec::with_capacity(n);
    let mut p = Vec::with_capacity(n);
    let mut st = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for (a, b, c, d) in rows {
        s.push(a);
        p.push(b);
        st.push(c);
        w.push(d);
    }
    (s, p, st, w)
}

fn validate<M: StateSpaceModel>(model: &M, data: &[M::Obs], z: &Conditioner, n: usize, options: &FilterOptions) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("empty data series".into()));
    }
    if options.use_kernel && !model.supports_learning() {
        return Err(Error::MissingSuffStats);
    }
    if let Some(thr) = options.ess_threshold {
        if !(thr > 0.0 && thr <= 1.0) {
            return Err(Error::Config(format!("ESS threshold {thr} outside (0, 1]")));
        }
    }
    model.layout().check(z)
}

/// Bootstrap particle filter given 𝒵, with the model's refresh kernel
/// applied after ancestor selection when `options.use_kernel` is set.
pub fn run_particle_filter<M: StateSpaceModel>(
    model: &M,
    data: &[M::Obs],
    z: &Conditioner,
    n: usize,
    options: &FilterOptions,
    stream: RngStream,
) -> Result<PfOutput<M::State, M::Params, M::Stats>> {
    validate(model, data, z, n, options)?;
    run(model, data, z, None, n, options, stream)
}

/// Conditional SMC: particle 0 is pinned to `retained` at every step and is
/// never resampled away or refreshed; the remaining n−1 ancestors are drawn
/// multinomially from the full weighted system, whatever `options.resampling` says.
pub fn run_conditional_particle_filter<M: StateSpaceModel>(
    model: &M,
    data: &[M::Obs],
    z: &Conditioner,
    retained: &ExtendedState<M::State, M::Params>,
    n: usize,
    options: &FilterOptions,
    stream: RngStream,
) -> Result<PfOutput<M::State, M::Params, M::Stats>> {
    validate(model, data, z, n, options)?;
    if retained.path.len() != data.len() {
        return Err(Error::DimensionMismatch { expected: data.len(), found: retained.path.len() });
    }
    if !model.consistent(z, retained) {
        return Err(Error::InvalidState("retained trajectory disagrees with fixed components".into()));
    }
    let options = FilterOptions { ess_threshold: None, ..*options };
    run(model, data, z, Some(retained), n, &options, stream)
}

fn run<M: StateSpaceModel>(
    model: &M,
    data: &[M::Obs],
    z: &Conditioner,
    retained: Option<&ExtendedState<M::State, M::Params>>,
    n: usize,
    options: &FilterOptions,
    stream: RngStream,
) -> Result<PfOutput<M::State, M::Params, M::Stats>> {
    let t_len = data.len();
    let learn = options.use_kernel;
    let mut ll = LogLikelihoodEstimate::default();
    let mut genealogy = Genealogy::with_capacity(t_len);

    let rows = map_particles::<M, _>(n, options.parallel, |i| {
        let (params, x) = match retained {
            Some(r) if i == 0 => (r.params.clone(), r.path[0].clone()),
            _ => model.sample_initial(z, &mut stream.particle(i, 0).rng())?,
        };
        let w = model.log_obs_density(&x, &params, &data[0]);
        let stats = if learn { model.initial_stats(&x, &data[0]) } else { M::Stats::default() };
        Ok((x, params, stats, w))
    })?;
    let (mut states, mut params, mut stats, mut log_w) = unzip4::<M>(rows);
    genealogy.push(states.clone(), (0..n).collect());
    let mut ancestors: Vec<usize> = (0..n).collect();
    // Normalised log-weights carried over when a step skips resampling.
    let mut carried: Option<Vec<f64>> = None;

    let mut t = 0;
    loop {
        let total: Vec<f64> = match &carried {
            Some(c) => c.iter().zip(&log_w).map(|(a, b)| a + b).collect(),
            None => log_w.clone(),
        };
        let normalized = match normalize_log_weights(&total) {
            Ok(nw) => nw,
            Err(WeightError::AllWeightsZero) => {
                ll.mark_collapsed();
                let final_system = ParticleSystem { states, params, stats, log_weights: total, ancestors, t: t + 1 };
                return Ok(PfOutput { log_lik: ll, sampled: None, final_system, genealogy });
            }
            Err(e) => return Err(e.into()),
        };
        let increment = if carried.is_some() { normalized.log_mean + (n as f64).ln() } else { normalized.log_mean };
        ll.add_term(increment);

        if t + 1 == t_len {
            let mut rng = stream.child(tag::FINAL).rng();
            let j = resample_multinomial(&normalized.probs, 1, &mut rng)?[0];
            let sampled = ExtendedState::new(genealogy.trace(j), params[j].clone());
            let final_system = ParticleSystem { states, params, stats, log_weights: total, ancestors, t: t_len };
            return Ok(PfOutput { log_lik: ll, sampled: Some(sampled), final_system, genealogy });
        }
        t += 1;

        let mut rs_rng = stream.derive(&[tag::RESAMPLE, t as u64]).rng();
        let do_resample = match options.ess_threshold {
            None => true,
            Some(thr) => effective_sample_size(&normalized.probs)? < thr * n as f64,
        };
        ancestors = if retained.is_some() {
            let mut a = Vec::with_capacity(n);
            a.push(0);
            // Pinning the reference is only valid for independent draws, so the
            // configured scheme is ignored here.
            a.extend(resample_multinomial(&normalized.probs, n - 1, &mut rs_rng)?);
            a
        } else if do_resample {
            options.resampling.resample(&normalized.probs, n, &mut rs_rng)?
        } else {
            (0..n).collect()
        };
        carried = if do_resample || retained.is_some() {
            None
        } else {
            Some(normalized.probs.iter().map(|p| p.ln()).collect())
        };

        let y = &data[t];
        let (prev_states, prev_params, prev_stats) = (&states, &params, &stats);
        let anc = &ancestors;
        let rows = map_particles::<M, _>(n, options.parallel, |i| {
            let j = anc[i];
            if let (Some(r), 0) = (retained, i) {
                let x = r.path[t].clone();
                let p = prev_params[j].clone();
                let mut s = prev_stats[j].clone();
                let w = model.log_obs_density(&x, &p, y);
                if learn {
                    model.update_stats(&mut s, &prev_states[j], &x, y);
                }
                return Ok((x, p, s, w));
            }
            let mut rng = stream.particle(i, t).rng();
            let p = if learn {
                model.learning_kernel(&prev_params[j], &prev_stats[j], z, &mut rng)?
            } else {
                prev_params[j].clone()
            };
            let x = model.transition(&prev_states[j], &p, &mut rng);
            let w = model.log_obs_density(&x, &p, y);
            let mut s = prev_stats[j].clone();
            if learn {
                model.update_stats(&mut s, &prev_states[j], &x, y);
            }
            Ok((x, p, s, w))
        })?;
        let next = unzip4::<M>(rows);
        states = next.0;
        params = next.1;
        stats = next.2;
        log_w = next.3;
        genealogy.push(states.clone(), ancestors.clone());
    }
}

/// The equally weighted set carried by the particle-learning sampler: `n`
/// multinomial draws from the final weighted system, each followed by one
/// more application of the refresh kernel.
pub fn equally_weighted_set<M: StateSpaceModel>(
    model: &M,
    out: &PfOutput<M::State, M::Params, M::Stats>,
    z: &Conditioner,
    options: &FilterOptions,
    stream: RngStream,
) -> Result<Vec<ExtendedState<M::State, M::Params>>> {
    if out.collapsed() {
        return Err(Error::InvalidState("collapsed filter has no particle set".into()));
    }
    let sys = &out.final_system;
    let n = sys.len();
    let normalized = normalize_log_weights(&sys.log_weights)?;
    let mut rng = stream.derive(&[tag::FINAL, tag::RESAMPLE]).rng();
    let picks = resample_multinomial(&normalized.probs, n, &mut rng)?;
    let refresh = |k: usize| -> Result<ExtendedState<M::State, M::Params>> {
        let j = picks[k];
        let params = if options.use_kernel {
            let mut rng = stream.derive(&[tag::FINAL, tag::KERNEL, k as u64]).rng();
            model.learning_kernel(&sys.params[j], &sys.stats[j], z, &mut rng)?
        } else {
            sys.params[j].clone()
        };
        Ok(ExtendedState::new(out.genealogy.trace(j), params))
    };
    if options.parallel {
        (0..n).into_par_iter().map(refresh).collect()
    } else {
        (0..n).map(refresh).collect()
    }
}

/// Uniform pick from an equally weighted set.
pub fn pick_uniform<T: Clone, R: Rng + ?Sized>(set: &[T], rng: &mut R) -> T {
    set[rng.random_range(0..set.len())].clone()
}
