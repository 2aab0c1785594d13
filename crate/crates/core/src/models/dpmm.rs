//! Dirichlet-process mixture for diploid genotype data.
//!
//! Individuals are allocated to populations by the Chinese-restaurant
//! process with concentration α; allele frequencies per population and locus
//! carry a symmetric Dirichlet(λ/K_l) prior and are integrated out. The
//! subset-label pseudo-observation Z_x records the clustering of a random
//! subset of individuals.
//!
//! Labels are 0-based throughout the API and canonical: the first individual
//! (in the relevant order) has label 0 and each new label is the next unused
//! integer.

use std::io::{BufRead, Write};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::augmentation::log_gamma_pdf;
use crate::error::{Error, Result};
use crate::rng::{tag, RngStream};
use crate::scalar::Real;
use crate::smc::{Conditioner, ConditionalTarget, FilterDraw, FilterOptions};
use crate::weights::{log_sum_exp, normalize_log_weights, LogLikelihoodEstimate};

/// Genotypes of `n` individuals at `loci` unlinked loci.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpmmData {
    pub n: usize,
    pub loci: usize,
    /// K_l, the number of alleles at each locus.
    pub alleles: Vec<usize>,
    /// Row-major `n × loci × 2`, 0-based allele indices.
    genotypes: Vec<u16>,
}

impl DpmmData {
    /// `rows[i][l]` is the ordered allele pair of individual i at locus l.
    pub fn new(alleles: Vec<usize>, rows: &[Vec<(usize, usize)>]) -> Result<Self> {
        let loci = alleles.len();
        if alleles.iter().any(|&k| k == 0 || k > u16::MAX as usize) {
            return Err(Error::Domain("allele counts must lie in 1..=65535".into()));
        }
        let mut genotypes = Vec::with_capacity(rows.len() * loci * 2);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != loci {
                return Err(Error::DimensionMismatch { expected: loci, found: row.len() });
            }
            for (l, &(a, b)) in row.iter().enumerate() {
                if a >= alleles[l] || b >= alleles[l] {
                    return Err(Error::Domain(format!(
                        "individual {i} locus {l}: allele out of range 0..{}",
                        alleles[l]
                    )));
                }
                genotypes.push(a as u16);
                genotypes.push(b as u16);
            }
        }
        Ok(Self { n: rows.len(), loci, alleles, genotypes })
    }

    /// Allele pairs of individual `i`, flattened as `[a₁, b₁, a₂, b₂, …]`.
    pub fn genotype(&self, i: usize) -> &[u16] {
        &self.genotypes[i * self.loci * 2..(i + 1) * self.loci * 2]
    }

    pub fn rows(&self) -> Vec<Vec<(usize, usize)>> {
        (0..self.n)
            .map(|i| self.genotype(i).chunks(2).map(|p| (p[0] as usize, p[1] as usize)).collect())
            .collect()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.alleles
            .iter()
            .map(|&k| {
                let o = acc;
                acc += k;
                o
            })
            .collect()
    }

    /// Text format: line 1 `n L`; line 2 the L values K_l; then one line per
    /// individual with 2L 1-based allele indices. `#` starts a comment.
    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::Config(format!("reading genotype file: {e}")))?;
            let body = line.split('#').next().unwrap_or("").trim().to_string();
            if !body.is_empty() {
                lines.push(body);
            }
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| Error::Config(format!("not a non-negative integer: {s:?}")))
        };
        let header: Vec<usize> = lines.first().ok_or_else(|| Error::Config("empty genotype file".into()))?
            .split_whitespace()
            .map(parse)
            .collect::<Result<_>>()?;
        if header.len() != 2 {
            return Err(Error::Config("first line must be `n L`".into()));
        }
        let (n, loci) = (header[0], header[1]);
        let alleles: Vec<usize> = lines
            .get(1)
            .ok_or_else(|| Error::Config("missing allele-count line".into()))?
            .split_whitespace()
            .map(parse)
            .collect::<Result<_>>()?;
        if alleles.len() != loci {
            return Err(Error::DimensionMismatch { expected: loci, found: alleles.len() });
        }
        if lines.len() != n + 2 {
            return Err(Error::DimensionMismatch { expected: n, found: lines.len().saturating_sub(2) });
        }
        let mut rows = Vec::with_capacity(n);
        for line in &lines[2..] {
            let v: Vec<usize> = line.split_whitespace().map(parse).collect::<Result<_>>()?;
            if v.len() != 2 * loci {
                return Err(Error::DimensionMismatch { expected: 2 * loci, found: v.len() });
            }
            if v.contains(&0) {
                return Err(Error::Domain("allele indices are 1-based".into()));
            }
            rows.push(v.chunks(2).map(|p| (p[0] - 1, p[1] - 1)).collect());
        }
        Self::new(alleles, &rows)
    }

    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {}", self.n, self.loci)?;
        writeln!(w, "{}", self.alleles.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(" "))?;
        for i in 0..self.n {
            let row: Vec<String> = self.genotype(i).iter().map(|&a| (a + 1).to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }
}

/// Relabel so labels appear as 0, 1, 2, … in order of first occurrence.
pub fn canonicalize(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().find(|(from, _)| *from == l) {
            Some(&(_, to)) => to,
            None => {
                let to = map.len();
                map.push((l, to));
                to
            }
        })
        .collect()
}

/// Number of blocks in a canonical labelling.
pub fn block_count(labels: &[usize]) -> usize {
    labels.iter().map(|&l| l + 1).max().unwrap_or(0)
}

/// log p(x_{i+1} = next | x_{1:i}) under the Chinese-restaurant process.
pub fn crp_log_prob(prefix: &[usize], next: usize, alpha: f64) -> Result<f64> {
    let m = block_count(prefix);
    if next > m {
        return Err(Error::InvalidLabel { label: next, max: m });
    }
    let denom = (prefix.len() as f64 + alpha).ln();
    if next == m {
        Ok(alpha.ln() - denom)
    } else {
        let nj = prefix.iter().filter(|&&l| l == next).count();
        Ok((nj as f64).ln() - denom)
    }
}

/// log p(x_{1:n}) for a canonical labelling.
pub fn crp_log_partition(labels: &[usize], alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for i in 1..labels.len() {
        total += crp_log_prob(&labels[..i], labels[i], alpha)?;
    }
    Ok(total)
}

/// The subset-label pseudo-observation: which of a subset of individuals
/// share a population.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsetLabels {
    /// Distinct individual indices in ascending order.
    members: Vec<usize>,
    /// Canonical labels of `members`, in member order.
    labels: Vec<usize>,
}

impl SubsetLabels {
    /// Build from arbitrary (member, label) pairs; sorts by member and
    /// canonicalises labels.
    pub fn new(members: &[usize], labels: &[usize]) -> Result<Self> {
        if members.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: members.len(), found: labels.len() });
        }
        let mut pairs: Vec<(usize, usize)> = members.iter().copied().zip(labels.iter().copied()).collect();
        pairs.sort_unstable();
        for w in pairs.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::DuplicateMember(w[0].0));
            }
        }
        let members: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let raw: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        Ok(Self { members, labels: canonicalize(&raw) })
    }

    pub fn empty() -> Self {
        Self { members: Vec::new(), labels: Vec::new() }
    }

    /// The subset read off a full labelling of all individuals.
    pub fn from_partition(members: &[usize], partition: &[usize]) -> Result<Self> {
        let labels: Vec<usize> = members
            .iter()
            .map(|&i| partition.get(i).copied().ok_or(Error::InvalidState(format!("member {i} out of range"))))
            .collect::<Result<_>>()?;
        Self::new(members, &labels)
    }

    pub fn v(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Whether a full labelling clusters the members as recorded.
    pub fn consistent_with(&self, partition: &[usize]) -> bool {
        if self.members.iter().any(|&i| i >= partition.len()) {
            return false;
        }
        let sub: Vec<usize> = self.members.iter().map(|&i| partition[i]).collect();
        canonicalize(&sub) == self.labels
    }
}

/// Poisson(mean) restricted to {0, …, max}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncatedPoisson {
    pub mean: f64,
    pub max: usize,
}

impl TruncatedPoisson {
    pub fn new(mean: f64, max: usize) -> Result<Self> {
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::Domain(format!("Poisson mean must be positive, got {mean}")));
        }
        Ok(Self { mean, max })
    }

    fn log_weights(&self) -> Vec<f64> {
        (0..=self.max).map(|v| v as f64 * self.mean.ln() - self.mean - Real::ln_gamma(v as f64 + 1.0)).collect()
    }

    pub fn log_pmf(&self, v: usize) -> f64 {
        if v > self.max {
            return f64::NEG_INFINITY;
        }
        let w = self.log_weights();
        w[v] - log_sum_exp(&w)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let w = self.log_weights();
        let norm = log_sum_exp(&w);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (v, lw) in w.iter().enumerate() {
            acc += (lw - norm).exp();
            if u < acc {
                return v;
            }
        }
        self.max
    }
}

/// log p(Z_x) = log p(v) − log C(n, v) + log p_CRP(subset clustering | α).
pub fn subset_log_marginal(zx: &SubsetLabels, n: usize, v_dist: &TruncatedPoisson, alpha: f64) -> Result<f64> {
    if zx.members.last().is_some_and(|&i| i >= n) {
        return Err(Error::InvalidState("subset member outside the sample".into()));
    }
    let v = zx.v();
    Ok(v_dist.log_pmf(v) - ln_binomial(n as u64, v as u64) + crp_log_partition(&zx.labels, alpha)?)
}

/// log q(Z_x | x_{1:n}): the subset-selection probability when the labels
/// agree with `partition`, −∞ otherwise.
pub fn subset_log_proposal(zx: &SubsetLabels, partition: &[usize], v_dist: &TruncatedPoisson) -> f64 {
    if !zx.consistent_with(partition) {
        return f64::NEG_INFINITY;
    }
    v_dist.log_pmf(zx.v()) - ln_binomial(partition.len() as u64, zx.v() as u64)
}

/// Draw Z_x from its full conditional given a labelling of all individuals.
pub fn propose_subset<R: Rng + ?Sized>(partition: &[usize], v_dist: &TruncatedPoisson, rng: &mut R) -> Result<SubsetLabels> {
    let n = partition.len();
    let v = v_dist.sample(rng).min(n);
    let members = index::sample(rng, n, v).into_vec();
    SubsetLabels::from_partition(&members, partition)
}

/// Processing order for a filter conditioned on `zx`: members first in
/// ascending order, the rest uniformly shuffled.
pub fn reorder_for_subset<R: Rng + ?Sized>(zx: &SubsetLabels, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let mut seen = vec![false; n];
    for &i in &zx.members {
        if i >= n {
            return Err(Error::InvalidState(format!("member {i} outside 0..{n}")));
        }
        if seen[i] {
            return Err(Error::DuplicateMember(i));
        }
        seen[i] = true;
    }
    let mut rest: Vec<usize> = (0..n).filter(|&i| !seen[i]).collect();
    rest.shuffle(rng);
    let mut order = zx.members.clone();
    order.extend(rest);
    Ok(order)
}

/// Per-cluster allele counts and sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct DpSuffStats {
    offsets: Vec<usize>,
    alleles: Vec<usize>,
    width: usize,
    pub sizes: Vec<u32>,
    /// `clusters × Σ K_l`, cluster-major.
    pub counts: Vec<u32>,
}

impl DpSuffStats {
    pub fn empty(data: &DpmmData) -> Self {
        Self {
            offsets: data.offsets(),
            alleles: data.alleles.clone(),
            width: data.alleles.iter().sum(),
            sizes: Vec::new(),
            counts: Vec::new(),
        }
    }

    pub fn clusters(&self) -> usize {
        self.sizes.len()
    }

    pub fn add(&mut self, cluster: usize, genotype: &[u16]) {
        if cluster == self.sizes.len() {
            self.sizes.push(0);
            self.counts.extend(std::iter::repeat_n(0, self.width));
        }
        self.sizes[cluster] += 1;
        let base = cluster * self.width;
        for (l, pair) in genotype.chunks(2).enumerate() {
            self.counts[base + self.offsets[l] + pair[0] as usize] += 1;
            self.counts[base + self.offsets[l] + pair[1] as usize] += 1;
        }
    }

    pub fn count(&self, cluster: usize, locus: usize, allele: usize) -> u32 {
        self.counts[cluster * self.width + self.offsets[locus] + allele]
    }

    /// log predictive probability of `genotype` joining `cluster` (`None`
    /// for a new cluster), with each pair taken as two ordered draws.
    pub fn predictive_log_prob(&self, lambda: f64, genotype: &[u16], cluster: Option<usize>) -> Result<f64> {
        if genotype.len() != 2 * self.alleles.len() {
            return Err(Error::DimensionMismatch { expected: 2 * self.alleles.len(), found: genotype.len() });
        }
        let mut total = 0.0;
        for (l, pair) in genotype.chunks(2).enumerate() {
            let k = self.alleles[l];
            let (a, b) = (pair[0] as usize, pair[1] as usize);
            if a >= k || b >= k {
                return Err(Error::Domain(format!("allele out of range at locus {l}")));
            }
            let (ca, cb, nj) = match cluster {
                Some(j) => (self.count(j, l, a) as f64, self.count(j, l, b) as f64, self.sizes[j] as f64),
                None => (0.0, 0.0, 0.0),
            };
            let prior = lambda / k as f64;
            let same = if a == b { 1.0 } else { 0.0 };
            total += ((ca + prior) / (2.0 * nj + lambda)).ln() + ((cb + same + prior) / (2.0 * nj + 1.0 + lambda)).ln();
        }
        Ok(total)
    }
}

/// Cached logarithms for one value of λ.
struct Tables {
    /// `num[tix][c] = ln(c + λ/K)` for each distinct K.
    num: Vec<Vec<f64>>,
    /// Table index of each locus.
    tix: Vec<usize>,
    /// `den[c] = ln(c + λ)`
    den: Vec<f64>,
}

impl Tables {
    fn new(data: &DpmmData, lambda: f64) -> Self {
        let top = 2 * data.n + 2;
        let mut ks: Vec<usize> = data.alleles.clone();
        ks.sort_unstable();
        ks.dedup();
        let num = ks
            .iter()
            .map(|&k| (0..=top).map(|c| (c as f64 + lambda / k as f64).ln()).collect())
            .collect();
        let tix = data.alleles.iter().map(|k| ks.binary_search(k).unwrap()).collect();
        let den = (0..=top).map(|c| (c as f64 + lambda).ln()).collect();
        Self { num, tix, den }
    }

    fn predictive(&self, stats: &DpSuffStats, genotype: &[u16], cluster: Option<usize>) -> f64 {
        let loci = self.tix.len() as f64;
        match cluster {
            None => {
                let mut s = 0.0;
                for (l, pair) in genotype.chunks(2).enumerate() {
                    let t = &self.num[self.tix[l]];
                    s += t[0] + t[(pair[0] == pair[1]) as usize];
                }
                s - loci * (self.den[0] + self.den[1])
            }
            Some(j) => {
                let base = j * stats.width;
                let mut s = 0.0;
                for (l, pair) in genotype.chunks(2).enumerate() {
                    let t = &self.num[self.tix[l]];
                    let o = base + stats.offsets[l];
                    let ca = stats.counts[o + pair[0] as usize] as usize;
                    let cb = stats.counts[o + pair[1] as usize] as usize + (pair[0] == pair[1]) as usize;
                    s += t[ca] + t[cb];
                }
                let nj = 2 * stats.sizes[j] as usize;
                s - loci * (self.den[nj] + self.den[nj + 1])
            }
        }
    }
}

#[derive(Clone, Debug)]
struct DpParticle {
    labels: Vec<usize>,
    stats: DpSuffStats,
}

/// Output of the mixture-model filter.
#[derive(Clone, Debug)]
pub struct DpmmFilterOutput {
    /// Estimate of log Σ_x p(x | α) p(y | x, λ) over labellings consistent
    /// with the subset (all labellings when there is none).
    pub log_lik: LogLikelihoodEstimate,
    /// Canonical labelling of all individuals, in data order.
    pub partition: Vec<usize>,
}

/// Fully adapted particle filter over individuals taken in `order`. The
/// first `forced.len()` individuals in `order` receive the given canonical
/// labels.
pub fn dpmm_particle_filter(
    data: &DpmmData,
    lambda: f64,
    alpha: f64,
    order: &[usize],
    forced: &[usize],
    n: usize,
    options: &FilterOptions,
    stream: RngStream,
) -> Result<DpmmFilterOutput> {
    if n == 0 {
        return Err(Error::Config("particle count must be at least 1".into()));
    }
    if !(lambda > 0.0 && alpha > 0.0) {
        return Err(Error::Domain(format!("lambda and alpha must be positive, got {lambda}, {alpha}")));
    }
    if order.len() != data.n || forced.len() > data.n {
        return Err(Error::DimensionMismatch { expected: data.n, found: order.len() });
    }
    if data.n == 0 {
        return Ok(DpmmFilterOutput { log_lik: LogLikelihoodEstimate::default(), partition: Vec::new() });
    }
    let tables = Tables::new(data, lambda);
    let mut particles = vec![DpParticle { labels: Vec::with_capacity(data.n), stats: DpSuffStats::empty(data) }; n];
    let mut ll = LogLikelihoodEstimate::default();
    let ln_alpha = alpha.ln();

    for (i, &ind) in order.iter().enumerate() {
        let g = data.genotype(ind);
        let ln_denom = (i as f64 + alpha).ln();
        let choice = |p: &DpParticle| -> Result<Vec<f64>> {
            let m = p.stats.clusters();
            let lp = |j: usize| {
                let prior = if j == m { ln_alpha } else { (p.stats.sizes[j] as f64).ln() };
                prior - ln_denom + tables.predictive(&p.stats, g, (j < m).then_some(j))
            };
            if let Some(&f) = forced.get(i) {
                if f > m {
                    return Err(Error::InvalidLabel { label: f, max: m });
                }
                let mut v = vec![f64::NEG_INFINITY; m + 1];
                v[f] = lp(f);
                Ok(v)
            } else {
                Ok((0..=m).map(lp).collect())
            }
        };
        let probs: Vec<Vec<f64>> = if options.parallel {
            particles.par_iter().map(choice).collect::<Result<_>>()?
        } else {
            particles.iter().map(choice).collect::<Result<_>>()?
        };
        let log_w: Vec<f64> = probs.iter().map(|v| log_sum_exp(v)).collect();
        let normalized = normalize_log_weights(&log_w)?;
        ll.add_term(normalized.log_mean);
        let ancestors = if n == 1 {
            vec![0]
        } else {
            options.resampling.resample(&normalized.probs, n, &mut stream.derive(&[tag::RESAMPLE, i as u64]).rng())?
        };
        let step = |k: usize| -> DpParticle {
            let a = ancestors[k];
            let mut p = particles[a].clone();
            let lp = &probs[a];
            let total = log_w[a];
            let label = if forced.len() > i {
                forced[i]
            } else {
                let mut rng = stream.particle(k, i).rng();
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = lp.len() - 1;
                for (j, &l) in lp.iter().enumerate() {
                    acc += (l - total).exp();
                    if u < acc {
                        pick = j;
                        break;
                    }
                }
                pick
            };
            p.stats.add(label, g);
            p.labels.push(label);
            p
        };
        particles = if options.parallel { (0..n).into_par_iter().map(step).collect() } else { (0..n).map(step).collect() };
    }
    // After the last label draw every particle carries equal weight.
    let pick = if n == 1 { 0 } else { stream.child(tag::FINAL).rng().random_range(0..n) };
    let mut partition = vec![0; data.n];
    for (i, &ind) in order.iter().enumerate() {
        partition[ind] = particles[pick].labels[i];
    }
    Ok(DpmmFilterOutput { log_lik: ll, partition: canonicalize(&partition) })
}

/// Gamma (shape, rate) hyperpriors for λ and α.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DpmmPriors {
    pub lambda_shape: f64,
    pub lambda_rate: f64,
    pub alpha_shape: f64,
    pub alpha_rate: f64,
}

impl Default for DpmmPriors {
    fn default() -> Self {
        Self { lambda_shape: 4.0, lambda_rate: 1.0, alpha_shape: 5.0, alpha_rate: 10.0 }
    }
}

/// Extended state of the mixture model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DpmmState {
    pub partition: Vec<usize>,
    pub lambda: f64,
    pub alpha: f64,
}

/// The mixture model bound to data, conditioned on (λ, α) and optionally a
/// subset-label pseudo-observation.
#[derive(Clone, Debug)]
pub struct DpmmTarget {
    pub data: DpmmData,
    pub priors: DpmmPriors,
    /// Distribution of the subset size; `None` disables the subset
    /// pseudo-observation.
    pub subset_size: Option<TruncatedPoisson>,
    /// Pair whose co-clustering indicator is reported.
    pub pair: (usize, usize),
}

impl DpmmTarget {
    pub fn new(data: DpmmData, priors: DpmmPriors, subset_mean: Option<f64>) -> Result<Self> {
        let subset_size = match subset_mean {
            Some(m) => Some(TruncatedPoisson::new(m, data.n.saturating_sub(1))?),
            None => None,
        };
        Ok(Self { data, priors, subset_size, pair: (0, 1) })
    }

    pub fn with_pair(mut self, a: usize, b: usize) -> Self {
        self.pair = (a, b);
        self
    }

    fn lambda_alpha(&self, z: &Conditioner) -> Result<(f64, f64)> {
        if z.values.len() != 2 {
            return Err(Error::DimensionMismatch { expected: 2, found: z.values.len() });
        }
        Ok((z.values[0], z.values[1]))
    }
}

impl ConditionalTarget for DpmmTarget {
    type Extended = DpmmState;

    fn conditioner_names(&self) -> Vec<String> {
        vec!["lambda".into(), "alpha".into()]
    }

    fn positive_values(&self) -> Vec<bool> {
        vec![true, true]
    }

    fn log_prior(&self, z: &Conditioner) -> f64 {
        let Ok((lambda, alpha)) = self.lambda_alpha(z) else {
            return f64::NEG_INFINITY;
        };
        let p = &self.priors;
        let mut total = log_gamma_pdf(lambda, p.lambda_shape, p.lambda_rate) + log_gamma_pdf(alpha, p.alpha_shape, p.alpha_rate);
        if !total.is_finite() {
            return f64::NEG_INFINITY;
        }
        match (&z.subset, &self.subset_size) {
            (Some(zx), Some(vd)) => total += subset_log_marginal(zx, self.data.n, vd, alpha).unwrap_or(f64::NEG_INFINITY),
            (None, None) => {}
            _ => return f64::NEG_INFINITY,
        }
        total
    }

    fn filter(&self, z: &Conditioner, n: usize, options: &FilterOptions, stream: RngStream) -> Result<FilterDraw<DpmmState>> {
        let (lambda, alpha) = self.lambda_alpha(z)?;
        let (order, forced, offset) = match &z.subset {
            Some(zx) => {
                let order = reorder_for_subset(zx, self.data.n, &mut stream.child(tag::ORDER).rng())?;
                (order, zx.labels.clone(), crp_log_partition(&zx.labels, alpha)?)
            }
            None => ((0..self.data.n).collect(), Vec::new(), 0.0),
        };
        let out = dpmm_particle_filter(&self.data, lambda, alpha, &order, &forced, n, options, stream)?;
        let mut log_lik = out.log_lik;
        log_lik.log_value -= offset;
        Ok(FilterDraw { log_lik, state: Some(DpmmState { partition: out.partition, lambda, alpha }) })
    }

    fn propose_subset(&self, state: &DpmmState, stream: RngStream) -> Result<Option<SubsetLabels>> {
        match &self.subset_size {
            Some(vd) => propose_subset(&state.partition, vd, &mut stream.rng()).map(Some),
            None => Ok(None),
        }
    }

    fn log_subset_proposal(&self, subset: &SubsetLabels, state: &DpmmState) -> f64 {
        match &self.subset_size {
            Some(vd) => subset_log_proposal(subset, &state.partition, vd),
            None => f64::NEG_INFINITY,
        }
    }

    fn summary_names(&self) -> Vec<String> {
        vec!["lambda".into(), "alpha".into(), "coclust".into(), "clusters".into()]
    }

    fn summarize(&self, state: &DpmmState) -> Vec<f64> {
        let (a, b) = self.pair;
        let same = match (state.partition.get(a), state.partition.get(b)) {
            (Some(x), Some(y)) if x == y => 1.0,
            _ => 0.0,
        };
        vec![state.lambda, state.alpha, same, block_count(&state.partition) as f64]
    }
}

/// Synthetic genotypes: per-population allele frequencies from
/// Dirichlet(λ/K_l), individuals assigned to populations round-robin, and
/// two independent allele draws per locus.
pub fn synthesize_genotypes<R: Rng + ?Sized>(
    n_pops: usize,
    n: usize,
    alleles: &[usize],
    lambda: f64,
    rng: &mut R,
) -> Result<DpmmData> {
    if n_pops == 0 || !(lambda > 0.0) {
        return Err(Error::Domain("need at least one population and positive lambda".into()));
    }
    let freqs: Vec<Vec<Vec<f64>>> = (0..n_pops)
        .map(|_| {
            alleles
                .iter()
                .map(|&k| {
                    let g: Vec<f64> = (0..k).map(|_| f64::standard_gamma(lambda / k as f64, rng)).collect();
                    let s: f64 = g.iter().sum();
                    if s > 0.0 {
                        g.iter().map(|x| x / s).collect()
                    } else {
                        let mut one = vec![0.0; k];
                        one[rng.random_range(0..k)] = 1.0;
                        one
                    }
                })
                .collect()
        })
        .collect();
    let draw = |p: &[f64], rng: &mut R| -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &q) in p.iter().enumerate() {
            acc += q;
            if u < acc {
                return i;
            }
        }
        p.iter().rposition(|&q| q > 0.0).unwrap_or(0)
    };
    let rows: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            let f = &freqs[i % n_pops];
            f.iter().map(|p| (draw(p, rng), draw(p, rng))).collect()
        })
        .collect();
    DpmmData::new(alleles.to_vec(), &rows)
}
