//! Floating-point scalar abstraction shared by the numeric kernels.
//!
//! Weight normalisation, resampling, the conjugate pseudo-observation
//! schemes and the chain diagnostics are written against [`Real`] so they run
//! in `f32` or `f64`. The model and sampler layers work in `f64` throughout.

use std::fmt::Debug;

use num_traits::{Float, FloatConst, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Open01, StandardNormal};
use rustfft::FftNum;

pub trait Real:
    Float + FloatConst + FromPrimitive + FftNum + Debug + Default + Send + Sync + 'static
{
    /// Draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from the open interval (0, 1).
    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw from Gamma(shape, rate = 1).
    fn standard_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self;

    /// log Γ(self)
    fn ln_gamma(self) -> Self;

    /// Standard normal CDF.
    fn normal_cdf(self) -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0)
        .expect("gamma shape must be positive and finite")
        .sample(rng)
}

fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

impl Real for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Open01.sample(rng)
    }

    fn standard_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
        gamma_draw(shape, rng)
    }

    fn ln_gamma(self) -> Self {
        statrs::function::gamma::ln_gamma(self)
    }

    fn normal_cdf(self) -> Self {
        phi(self)
    }
}

impl Real for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn open01<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Open01.sample(rng)
    }

    fn standard_gamma<R: Rng + ?Sized>(shape: Self, rng: &mut R) -> Self {
        gamma_draw(shape as f64, rng) as f32
    }

    fn ln_gamma(self) -> Self {
        statrs::function::gamma::ln_gamma(self as f64) as f32
    }

    fn normal_cdf(self) -> Self {
        phi(self as f64) as f32
    }
}

/// log N(x; mean, var)
pub fn log_normal_pdf<F: Real>(x: F, mean: F, var: F) -> F {
    let d = x - mean;
    -F::lit(0.5) * ((F::TAU() * var).ln() + d * d / var)
}

/// Sample N(mean, var) restricted to (lo, hi).
pub fn truncated_normal<F: Real, R: Rng + ?Sized>(mean: F, var: F, lo: F, hi: F, rng: &mut R) -> F {
    let (m, sd) = (mean.as_f64(), var.as_f64().sqrt());
    let z = standard_truncated((lo.as_f64() - m) / sd, (hi.as_f64() - m) / sd, rng);
    F::lit(m + sd * z).max(lo).min(hi)
}

/// N(0, 1) restricted to [a, b], exact in both tails.
fn standard_truncated<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if a >= 0.0 {
        upper_tail(a, b, rng)
    } else if b <= 0.0 {
        -upper_tail(-b, -a, rng)
    } else if b - a < 2.5 {
        uniform_rejection(a, b, 0.0, rng)
    } else {
        loop {
            let z = f64::standard_normal(rng);
            if z >= a && z <= b {
                return z;
            }
        }
    }
}

/// Uniform proposal on [a, b] against the normal density, whose maximum on
/// the interval is at `mode`.
fn uniform_rejection<R: Rng + ?Sized>(a: f64, b: f64, mode: f64, rng: &mut R) -> f64 {
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        if rng.random::<f64>().ln() <= 0.5 * (mode * mode - z * z) {
            return z;
        }
    }
}

/// Draw on [a, b] with 0 ≤ a.
fn upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a < 1.0 / a.max(1.0) {
        return uniform_rejection(a, b, a, rng);
    }
    if a < 0.5 {
        loop {
            let z = f64::standard_normal(rng).abs();
            if z >= a && z <= b {
                return z;
            }
        }
    }
    // Translated-exponential proposal with the optimal rate.
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - f64::open01(rng).ln() / rate;
        if z <= b && f64::open01(rng).ln() <= -0.5 * (z - rate) * (z - rate) {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_pcg::Pcg64;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((0.0f64.normal_cdf() - 0.5).abs() < 1e-15);
        assert!((1.959963984540054f64.normal_cdf() - 0.975).abs() < 1e-12);
        assert!(((-1.0f32).normal_cdf() - 0.158_655_26).abs() < 1e-6);
    }

    #[test]
    fn log_normal_pdf_at_mean() {
        let v: f64 = log_normal_pdf(0.0, 0.0, 2.0);
        assert!((v + 0.5 * (4.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn truncated_normal_stays_inside_far_tail() {
        let mut rng = Pcg64::seed_from_u64(3);
        for _ in 0..1000 {
            let x: f64 = truncated_normal(5.0, 0.01, -1.0, 1.0, &mut rng);
            assert!(x > -1.0 && x <= 1.0);
        }
        let mut s = 0.0;
        for _ in 0..20000 {
            s += truncated_normal(0.0f64, 1.0, -1.0, 1.0, &mut rng);
        }
        assert!((s / 20000.0).abs() < 0.02);
    }

    #[test]
    fn truncated_normal_tail_mean() {
        // E[Z | Z > a] = φ(a) / (1 − Φ(a)).
        let mut rng = Pcg64::seed_from_u64(8);
        for (a, b) in [(0.2, f64::INFINITY), (3.0, f64::INFINITY), (8.0, 8.3), (-6.0, -5.0), (-0.2, 0.3)] {
            let n = 40_000;
            let mut s = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let z = truncated_normal(0.0f64, 1.0, a, b, &mut rng);
                assert!(z >= a && z <= b);
                s += z;
                s2 += z * z;
            }
            let pdf = |x: f64| if x.is_finite() { (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() } else { 0.0 };
            let mass = b.normal_cdf() - a.normal_cdf();
            let mass = if a > 0.0 { (-a).normal_cdf() - (-b).normal_cdf() } else { mass };
            let exact = (pdf(a) - pdf(b)) / mass;
            let sd = (s2 / n as f64 - (s / n as f64).powi(2)).sqrt();
            assert!((s / n as f64 - exact).abs() < 4.0 * sd / (n as f64).sqrt() + 1e-12, "({a}, {b})");
        }
    }
}
