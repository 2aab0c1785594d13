//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use statrs::function::gamma::ln_gamma;

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn normal_logpdf(x: f64, m: f64, v: f64) -> f64 {
    -0.5 * ((2.0 * PI * v).ln() + (x - m) * (x - m) / v)
}

pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Mean and standard error of the mean.
pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Whether `target` lies in the 99% CLT interval of the mean of `v`.
pub fn in_clt_99(v: &[f64], target: f64) -> bool {
    let (m, se) = mean_se(v);
    (m - target).abs() <= 2.576 * se
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][j] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    l
}

fn forward_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / l[i][i];
    }
    x
}

/// log N(y; mean, cov) by Cholesky.
pub fn mvn_logpdf(y: &[f64], mean: &[f64], cov: &[Vec<f64>]) -> f64 {
    let l = cholesky(cov);
    let d: Vec<f64> = y.iter().zip(mean).map(|(a, b)| a - b).collect();
    let w = forward_solve(&l, &d);
    let logdet: f64 = (0..y.len()).map(|i| l[i][i].ln()).sum::<f64>() * 2.0;
    -0.5 * (y.len() as f64 * (2.0 * PI).ln() + logdet + w.iter().map(|x| x * x).sum::<f64>())
}

/// Solve cov · x = b for symmetric positive-definite cov.
pub fn spd_solve(cov: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let l = cholesky(cov);
    let w = forward_solve(&l, b);
    let n = b.len();
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k][i] * x[k]).sum();
        x[i] = (w[i] - s) / l[i][i];
    }
    x
}

/// Linear-Gaussian model written as one joint Gaussian over
/// (θ, X₁, y_{1:T}, optional pseudo-observations).
pub struct DenseLg {
    pub gamma: f64,
    pub sigma1: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_theta: f64,
}

/// How the dense oracle treats θ or X₁.
#[derive(Clone, Copy)]
pub enum DenseCond {
    Free,
    Fixed(f64),
    /// (z, noise variance)
    Pseudo(f64, f64),
}

pub struct DenseResult {
    pub log_lik: f64,
    pub theta: (f64, f64),
    pub x1: (f64, f64),
}

impl DenseLg {
    /// Exact log p(y | 𝒵) and posterior (mean, var) of θ and X₁.
    pub fn solve(&self, y: &[f64], theta: DenseCond, x1: DenseCond) -> DenseResult {
        let t_len = y.len();
        let (mt, vt) = match theta {
            DenseCond::Fixed(v) => (v, 0.0),
            _ => (0.0, self.sigma_theta.powi(2)),
        };
        let (m1, v1) = match x1 {
            DenseCond::Fixed(v) => (v, 0.0),
            _ => (0.0, self.sigma1.powi(2)),
        };
        // Latent vector u = (θ, x_1, …, x_T) with mean/cov.
        let d = t_len + 1;
        let mut mu = vec![0.0; d];
        mu[0] = mt;
        let mut cov = vec![vec![0.0; d]; d];
        cov[0][0] = vt;
        let mut var = vec![0.0; t_len];
        for t in 0..t_len {
            mu[t + 1] = m1 * self.gamma.powi(t as i32);
            var[t] = if t == 0 { v1 } else { self.gamma * self.gamma * var[t - 1] + self.sigma_x.powi(2) };
        }
        for s in 0..t_len {
            for t in s..t_len {
                let c = self.gamma.powi((t - s) as i32) * var[s];
                cov[s + 1][t + 1] = c;
                cov[t + 1][s + 1] = c;
            }
        }
        // Observation rows: y_t = θ + x_t + noise; pseudo rows on θ or x₁.
        let mut rows: Vec<(Vec<f64>, f64, f64)> = Vec::new();
        for t in 0..t_len {
            let mut h = vec![0.0; d];
            h[0] = 1.0;
            h[t + 1] = 1.0;
            rows.push((h, self.sigma_y.powi(2), y[t]));
        }
        let mut pseudo_rows = Vec::new();
        if let DenseCond::Pseudo(z, tau2) = theta {
            let mut h = vec![0.0; d];
            h[0] = 1.0;
            pseudo_rows.push((h, tau2, z));
        }
        if let DenseCond::Pseudo(z, tau2) = x1 {
            let mut h = vec![0.0; d];
            h[1] = 1.0;
            pseudo_rows.push((h, tau2, z));
        }
        let joint = |rows: &[(Vec<f64>, f64, f64)]| -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
            let k = rows.len();
            let m: Vec<f64> = rows.iter().map(|(h, _, _)| (0..d).map(|i| h[i] * mu[i]).sum()).collect();
            let hc: Vec<Vec<f64>> = rows.iter().map(|(h, _, _)| (0..d).map(|j| (0..d).map(|i| h[i] * cov[i][j]).sum()).collect()).collect();
            let mut s = vec![vec![0.0; k]; k];
            for a in 0..k {
                for b in 0..k {
                    s[a][b] = (0..d).map(|j| hc[a][j] * rows[b].0[j]).sum::<f64>() + if a == b { rows[a].1 } else { 0.0 };
                }
            }
            let obs: Vec<f64> = rows.iter().map(|r| r.2).collect();
            (m, s, obs, hc)
        };
        let mut all = rows.clone();
        all.extend(pseudo_rows.iter().cloned());
        let (m_all, s_all, obs_all, hc_all) = joint(&all);
        let mut log_lik = mvn_logpdf(&obs_all, &m_all, &s_all);
        if !pseudo_rows.is_empty() {
            let (mz, sz, oz, _) = joint(&pseudo_rows);
            log_lik -= mvn_logpdf(&oz, &mz, &sz);
        }
        let resid: Vec<f64> = obs_all.iter().zip(&m_all).map(|(a, b)| a - b).collect();
        let alpha = spd_solve(&s_all, &resid);
        let moments = |i: usize| -> (f64, f64) {
            let c: Vec<f64> = hc_all.iter().map(|row| row[i]).collect();
            let mean = mu[i] + c.iter().zip(&alpha).map(|(a, b)| a * b).sum::<f64>();
            let sc = spd_solve(&s_all, &c);
            (mean, cov[i][i] - c.iter().zip(&sc).map(|(a, b)| a * b).sum::<f64>())
        };
        DenseResult { log_lik, theta: moments(0), x1: moments(1) }
    }
}

/// Uniform grid for trapezoid quadrature.
pub fn grid(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let h = (hi - lo) / (n - 1) as f64;
    ((0..n).map(|i| lo + i as f64 * h).collect(), h)
}

/// log p(y_{1:T}) for the stochastic-volatility model with known parameters,
/// by forward recursion on a fixed state grid. `x1` is the initial law as
/// (mean, var) or a fixed value.
pub fn sv_grid_log_lik(y: &[f64], gamma: f64, beta_x: f64, beta_y: f64, x1: DenseCond, sigma0: f64, points: usize) -> f64 {
    let sx2 = 1.0 / beta_x;
    let half = 10.0 * (sigma0.max((sx2 / (1.0 - gamma * gamma).max(1e-3)).sqrt())).max(1.0);
    let (xs, h) = grid(-half, half, points);
    let obs = |x: f64, y: f64| normal_logpdf(y, 0.0, (2.0 * x).exp() / beta_y);
    let mut log_scale;
    let mut alpha: Vec<f64>;
    let mut start = 1;
    match x1 {
        DenseCond::Fixed(v) => {
            log_scale = obs(v, y[0]);
            if y.len() == 1 {
                return log_scale;
            }
            alpha = xs.iter().map(|&x| (normal_logpdf(x, gamma * v, sx2) + obs(x, y[1])).exp()).collect();
            start = 2;
        }
        DenseCond::Free => {
            log_scale = 0.0;
            alpha = xs.iter().map(|&x| (normal_logpdf(x, 0.0, sigma0 * sigma0) + obs(x, y[0])).exp()).collect();
        }
        DenseCond::Pseudo(m, v) => {
            log_scale = 0.0;
            alpha = xs.iter().map(|&x| (normal_logpdf(x, m, v) + obs(x, y[0])).exp()).collect();
        }
    }
    let kernel: Vec<Vec<f64>> =
        xs.iter().map(|&xn| xs.iter().map(|&xp| normal_logpdf(xn, gamma * xp, sx2).exp()).collect()).collect();
    for t in start..y.len() {
        let s: f64 = alpha.iter().sum::<f64>() * h;
        log_scale += s.ln();
        let prev: Vec<f64> = alpha.iter().map(|a| a / s).collect();
        alpha = (0..points)
            .map(|i| {
                let pred: f64 = kernel[i].iter().zip(&prev).map(|(k, a)| k * a).sum::<f64>() * h;
                pred * obs(xs[i], y[t]).exp()
            })
            .collect();
    }
    log_scale + (alpha.iter().sum::<f64>() * h).ln()
}

/// All set partitions of {0..n} as canonical label vectors.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if n == 0 {
        out.push(Vec::new());
        return out;
    }
    fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        let m = prefix.iter().map(|&l| l + 1).max().unwrap_or(0);
        for l in 0..=m {
            prefix.push(l);
            rec(prefix, n, out);
            prefix.pop();
        }
    }
    rec(&mut vec![0], n, &mut out);
    out
}

/// Closed-form CRP probability of a labelling:
/// α^m Γ(α) / Γ(α + n) Π (n_j − 1)!.
pub fn crp_closed_form(labels: &[usize], alpha: f64) -> f64 {
    let m = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let n = labels.len() as f64;
    let mut log_p = m as f64 * alpha.ln() + ln_gamma(alpha) - ln_gamma(alpha + n);
    for j in 0..m {
        let nj = labels.iter().filter(|&&l| l == j).count() as f64;
        log_p += ln_gamma(nj);
    }
    log_p
}

/// Σ log[(n_j − 1)!] and block count, for the grouped evidence.
pub fn crp_structure(labels: &[usize]) -> (usize, f64) {
    let m = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut s = 0.0;
    for j in 0..m {
        let nj = labels.iter().filter(|&&l| l == j).count() as f64;
        s += ln_gamma(nj);
    }
    (m, s)
}

/// log p(y | x, λ) by the closed-form Dirichlet-multinomial, with each
/// individual's pair counted as two ordered draws.
pub fn dm_log_lik(rows: &[Vec<(usize, usize)>], alleles: &[usize], labels: &[usize], lambda: f64) -> f64 {
    let m = labels.iter().map(|&l| l + 1).max().unwrap_or(0);
    let mut total = 0.0;
    for j in 0..m {
        for (l, &k) in alleles.iter().enumerate() {
            let mut counts = vec![0usize; k];
            let mut draws = 0;
            for (i, row) in rows.iter().enumerate() {
                if labels[i] == j {
                    counts[row[l].0] += 1;
                    counts[row[l].1] += 1;
                    draws += 2;
                }
            }
            let a = lambda / k as f64;
            total += ln_gamma(lambda) - ln_gamma(lambda + draws as f64);
            for c in counts {
                total += ln_gamma(c as f64 + a) - ln_gamma(a);
            }
        }
    }
    total
}

/// log Σ_x p(x | α) p(y | x, λ) over labellings consistent with `keep`.
pub fn dpmm_log_evidence(
    rows: &[Vec<(usize, usize)>],
    alleles: &[usize],
    lambda: f64,
    alpha: f64,
    keep: impl Fn(&[usize]) -> bool,
) -> f64 {
    let terms: Vec<f64> = set_partitions(rows.len())
        .iter()
        .filter(|x| keep(x))
        .map(|x| crp_closed_form(x, alpha) + dm_log_lik(rows, alleles, x, lambda))
        .collect();
    log_sum_exp(&terms)
}

/// Exact posterior moments (E λ, E λ², E α, E α²) under Gamma(shape, rate)
/// priors, by summing over partitions and trapezoid quadrature on log λ and
/// log α.
pub fn dpmm_hyper_posterior(
    rows: &[Vec<(usize, usize)>],
    alleles: &[usize],
    lambda_prior: (f64, f64),
    alpha_prior: (f64, f64),
) -> [f64; 4] {
    let n = rows.len();
    let parts = set_partitions(n);
    let structure: Vec<(usize, f64)> = parts.iter().map(|x| crp_structure(x)).collect();
    let (ul, hl) = grid((1e-3f64).ln(), (200.0f64).ln(), 500);
    let (ua, ha) = grid((1e-5f64).ln(), (50.0f64).ln(), 500);
    // B_m(λ) = log Σ_{x with m blocks} Π (n_j − 1)! p(y | x, λ)
    let b: Vec<Vec<f64>> = ul
        .iter()
        .map(|&u| {
            let lambda = u.exp();
            let mut by_m = vec![Vec::new(); n + 1];
            for (x, &(m, s)) in parts.iter().zip(&structure) {
                by_m[m].push(s + dm_log_lik(rows, alleles, x, lambda));
            }
            by_m.iter().map(|v| log_sum_exp(v)).collect()
        })
        .collect();
    let mut log_w = Vec::with_capacity(ul.len() * ua.len());
    let mut vals = Vec::with_capacity(ul.len() * ua.len());
    for (i, &u) in ul.iter().enumerate() {
        let lambda = u.exp();
        for &w in &ua {
            let alpha = w.exp();
            let lik: Vec<f64> = (1..=n).map(|m| m as f64 * alpha.ln() + b[i][m]).collect();
            let lp = gamma_logpdf(lambda, lambda_prior.0, lambda_prior.1)
                + gamma_logpdf(alpha, alpha_prior.0, alpha_prior.1)
                + ln_gamma(alpha)
                - ln_gamma(alpha + n as f64)
                + log_sum_exp(&lik)
                + u
                + w
                + hl.ln()
                + ha.ln();
            log_w.push(lp);
            vals.push((lambda, alpha));
        }
    }
    let norm = log_sum_exp(&log_w);
    let mut out = [0.0; 4];
    for (lw, (l, a)) in log_w.iter().zip(&vals) {
        let p = (lw - norm).exp();
        out[0] += p * l;
        out[1] += p * l * l;
        out[2] += p * a;
        out[3] += p * a * a;
    }
    out
}
