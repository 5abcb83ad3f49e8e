//! Closed-form limit laws and their samplers.
//!
//! `Z` is a standard Gumbel variable, `Θ = −log|N|` for a standard normal `N`.
//! The density of `(Z − log 2)/2` is `A(x) = exp(−2x − ½e^{−2x})`, and the
//! cycling profile `Q_L(x) = Σ_n A(L(n − x))` is its 1-periodized, rescaled
//! image.

use crate::error::{Error, Result};
use crate::quad;
use crate::rng::StreamRng;
use crate::special::{self, EULER_GAMMA};
use crate::stats::{self, Cdf, Interval, KsReport};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI};

/// Terms of the periodized sums below this size are dropped.
const TAIL_EPS: f64 = 1e-17;

fn open_unit(rng: &mut StreamRng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// `Λ(t) = exp(−e^{−t})`. Max-stable: `Λ(t)² = Λ(t − log 2)`.
pub fn gumbel_cdf(t: f64) -> f64 {
    (-(-t).exp()).exp()
}

pub fn gumbel_pdf(t: f64) -> f64 {
    (-t - (-t).exp()).exp()
}

pub fn gumbel_sample(rng: &mut StreamRng) -> f64 {
    -(-open_unit(rng).ln()).ln()
}

/// `A(x) = exp(−2x − ½e^{−2x})`.
pub fn a_density(x: f64) -> f64 {
    (-2.0 * x - 0.5 * (-2.0 * x).exp()).exp()
}

/// CDF of `(Z − log 2)/2`: `exp(−½e^{−2x})`.
pub fn a_cdf(x: f64) -> f64 {
    (-0.5 * (-2.0 * x).exp()).exp()
}

fn a_complex(w: Complex64) -> Complex64 {
    (-2.0 * w - 0.5 * (-2.0 * w).exp()).exp()
}

/// Density of `Θ`: `√(2/π) e^{−t − ½e^{−2t}}`.
pub fn theta_law_density(t: f64) -> f64 {
    (2.0 / PI).sqrt() * (-t - 0.5 * (-2.0 * t).exp()).exp()
}

/// `P(Θ ≤ t) = P(|N| ≥ e^{−t})`.
pub fn theta_law_cdf(t: f64) -> f64 {
    2.0 * special::normal_sf((-t).exp())
}

pub fn theta_law_sample(rng: &mut StreamRng) -> f64 {
    loop {
        let n: f64 = rng.sample(StandardNormal);
        if n != 0.0 {
            return -n.abs().ln();
        }
    }
}

/// `E[e^{itZ}] = Γ(1 − it)`.
pub fn gumbel_cf(t: f64) -> Complex64 {
    special::gamma(Complex64::new(1.0, -t))
}

/// `E[e^{itΘ}] = E|N|^{−it} = 2^{−it/2} Γ((1 − it)/2) / √π`.
pub fn theta_cf(t: f64) -> Complex64 {
    let two = Complex64::new(2.0, 0.0).powc(Complex64::new(0.0, -0.5 * t));
    two * special::gamma(Complex64::new(0.5, -0.5 * t)) / PI.sqrt()
}

/// A periodized evaluation with its truncation bound.
#[derive(Debug, Clone, Copy)]
pub struct Truncated<T> {
    pub value: T,
    pub bound: f64,
}

/// Index window of `n` for `Σ_n A(L(n − x))` with omitted terms below `TAIL_EPS`.
fn profile_window(x: f64, lambda_t: f64) -> (i64, i64) {
    // A(w) < TAIL_EPS for w > w_hi (exponential tail) and w < w_lo (double exponential)
    let w_hi = -0.5 * TAIL_EPS.ln();
    let w_lo = -0.5 * (2.0 * (-TAIL_EPS.ln() + 5.0)).ln();
    ((x + w_lo / lambda_t).floor() as i64 - 1, (x + w_hi / lambda_t).ceil() as i64 + 1)
}

fn profile_bound(lambda_t: f64, lo_w: f64, hi_w: f64) -> f64 {
    // geometric right tail and dominated double-exponential left tail
    let right = (-2.0 * hi_w).exp() / -(-2.0 * lambda_t).exp_m1();
    let left = 2.0 * a_density(lo_w.min(-0.35));
    right + left
}

/// `Q_L(x) = Σ_n A(L(n − x))`. With `n_window = None` the window follows
/// from the tail bounds of `A`; otherwise `n ∈ [round(x) − m, round(x) + m]`.
pub fn cycling_profile_sum(x: f64, lambda_t: f64, n_window: Option<usize>) -> Truncated<f64> {
    let z = cycling_profile_sum_complex(Complex64::new(x, 0.0), lambda_t, n_window);
    Truncated { value: z.value.re, bound: z.bound }
}

/// The sum form at complex argument.
pub fn cycling_profile_sum_complex(z: Complex64, lambda_t: f64, n_window: Option<usize>) -> Truncated<Complex64> {
    let (lo, hi) = match n_window {
        None => profile_window(z.re, lambda_t),
        Some(m) => {
            let c = z.re.round() as i64;
            (c - m as i64, c + m as i64)
        }
    };
    let mut s = Complex64::new(0.0, 0.0);
    for n in lo..=hi {
        s += a_complex(lambda_t * (Complex64::new(n as f64, 0.0) - z));
    }
    let bound = profile_bound(lambda_t, lambda_t * (lo as f64 - 1.0 - z.re), lambda_t * (hi as f64 + 1.0 - z.re));
    Truncated { value: s, bound }
}

/// Fourier coefficient `a_k = 2^{−πik/L} Γ(1 − πik/L) / L`.
pub fn cycling_fourier_coefficient(k: i64, lambda_t: f64) -> Complex64 {
    let y = PI * k as f64 / lambda_t;
    let two = Complex64::new(2.0, 0.0).powc(Complex64::new(0.0, -y));
    two * special::gamma(Complex64::new(1.0, -y)) / lambda_t
}

/// `Q_L(x) = Σ_{|k| ≤ k_max} a_k e^{2πikx}`; the bound is the size of the
/// first omitted pair, `2|a_{k_max+1}|`.
pub fn cycling_profile_fourier(x: f64, lambda_t: f64, k_max: usize) -> Truncated<f64> {
    let mut s = cycling_fourier_coefficient(0, lambda_t).re;
    for k in 1..=k_max as i64 {
        let a = cycling_fourier_coefficient(k, lambda_t);
        let e = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * x);
        s += 2.0 * (a * e).re;
    }
    let bound = 2.0 * cycling_fourier_coefficient(k_max as i64 + 1, lambda_t).norm();
    Truncated { value: s, bound }
}

/// Density on `[0, L)` of `X mod L` with `X = (Z − log 2)/2`.
pub fn a_mod_density(u: f64, period: f64) -> f64 {
    cycling_profile_sum(-u / period, period, None).value
}

/// CDF on `[0, L)` of `X mod L` with `X = (Z − log 2)/2`.
pub fn a_mod_cdf(u: f64, period: f64) -> f64 {
    let u = u.clamp(0.0, period);
    let w_hi = -0.5 * TAIL_EPS.ln();
    let w_lo = -4.0;
    let n_lo = (w_lo / period).floor() as i64 - 1;
    let n_hi = (w_hi / period).ceil() as i64 + 1;
    let mut s = 0.0;
    for n in n_lo..=n_hi {
        let b = n as f64 * period;
        s += a_cdf(b + u) - a_cdf(b);
    }
    s.clamp(0.0, 1.0)
}

/// Limit laws used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TheoreticalLaw {
    /// `loc + scale·Z`.
    Gumbel { loc: f64, scale: f64 },
    /// `(Z − log 2)/2 + loc`, density `A(x − loc)`.
    HalfGumbel { loc: f64 },
    /// `Θ + loc`.
    ThetaLaw { loc: f64 },
    Logistic { loc: f64, scale: f64 },
    /// Law of `(−X/L) mod 1`, `X = (Z − log 2)/2`, on `[0,1)` with density `L·Q_L`.
    CyclingProfile { lambda_t: f64 },
    /// `P(Y = n) = p(1 − p)ⁿ`, `n ≥ 0`.
    AsympGeometric { p: f64 },
    Exponential { rate: f64 },
}

impl TheoreticalLaw {
    pub fn standard_gumbel() -> Self {
        TheoreticalLaw::Gumbel { loc: 0.0, scale: 1.0 }
    }

    /// `Z/2 + c` expressed in the `HalfGumbel` parametrization.
    pub fn half_gumbel_centered(c: f64) -> Self {
        TheoreticalLaw::HalfGumbel { loc: c + 0.5 * LN_2 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            TheoreticalLaw::Gumbel { scale, .. } | TheoreticalLaw::Logistic { scale, .. } => scale > 0.0,
            TheoreticalLaw::CyclingProfile { lambda_t } => lambda_t > 0.0,
            TheoreticalLaw::AsympGeometric { p } => p > 0.0 && p <= 1.0,
            TheoreticalLaw::Exponential { rate } => rate > 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("bad law parameters: {self:?}")))
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            TheoreticalLaw::Gumbel { loc, scale } => gumbel_pdf((x - loc) / scale) / scale,
            TheoreticalLaw::HalfGumbel { loc } => a_density(x - loc),
            TheoreticalLaw::ThetaLaw { loc } => theta_law_density(x - loc),
            TheoreticalLaw::Logistic { loc, scale } => {
                let c = (0.5 * (x - loc) / scale).cosh();
                0.25 / (scale * c * c)
            }
            TheoreticalLaw::CyclingProfile { lambda_t } => {
                if (0.0..1.0).contains(&x) {
                    lambda_t * cycling_profile_sum(x, lambda_t, None).value
                } else {
                    0.0
                }
            }
            TheoreticalLaw::AsympGeometric { p } => {
                if x >= 0.0 && x.fract() == 0.0 {
                    p * (1.0 - p).powf(x)
                } else {
                    0.0
                }
            }
            TheoreticalLaw::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    rate * (-rate * x).exp()
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            TheoreticalLaw::Gumbel { loc, scale } => gumbel_cdf((x - loc) / scale),
            TheoreticalLaw::HalfGumbel { loc } => a_cdf(x - loc),
            TheoreticalLaw::ThetaLaw { loc } => theta_law_cdf(x - loc),
            TheoreticalLaw::Logistic { loc, scale } => 1.0 / (1.0 + (-(x - loc) / scale).exp()),
            TheoreticalLaw::CyclingProfile { lambda_t } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    1.0 - a_mod_cdf(lambda_t * (1.0 - x), lambda_t)
                }
            }
            TheoreticalLaw::AsympGeometric { p } => {
                if x < 0.0 {
                    0.0
                } else {
                    1.0 - (1.0 - p).powf(x.floor() + 1.0)
                }
            }
            TheoreticalLaw::Exponential { rate } => {
                if x < 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            TheoreticalLaw::Gumbel { loc, scale } => loc + scale * gumbel_sample(rng),
            TheoreticalLaw::HalfGumbel { loc } => loc + 0.5 * (gumbel_sample(rng) - LN_2),
            TheoreticalLaw::ThetaLaw { loc } => loc + theta_law_sample(rng),
            TheoreticalLaw::Logistic { loc, scale } => {
                let u = open_unit(rng);
                loc + scale * (u / (1.0 - u)).ln()
            }
            TheoreticalLaw::CyclingProfile { lambda_t } => {
                let x = 0.5 * (gumbel_sample(rng) - LN_2);
                (-x / lambda_t).rem_euclid(1.0)
            }
            TheoreticalLaw::AsympGeometric { p } => {
                if p >= 1.0 {
                    0.0
                } else {
                    (open_unit(rng).ln() / (1.0 - p).ln()).floor()
                }
            }
            TheoreticalLaw::Exponential { rate } => -open_unit(rng).ln() / rate,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            TheoreticalLaw::Gumbel { loc, scale } => loc + scale * EULER_GAMMA,
            TheoreticalLaw::HalfGumbel { loc } => loc + 0.5 * (EULER_GAMMA - LN_2),
            TheoreticalLaw::ThetaLaw { loc } => loc + 0.5 * (EULER_GAMMA + LN_2),
            TheoreticalLaw::Logistic { loc, .. } => loc,
            TheoreticalLaw::CyclingProfile { .. } => f64::NAN,
            TheoreticalLaw::AsympGeometric { p } => (1.0 - p) / p,
            TheoreticalLaw::Exponential { rate } => 1.0 / rate,
        }
    }

    /// A range holding all but ~1e−16 of the mass, for quadrature.
    pub fn support_for_quadrature(&self) -> (f64, f64) {
        match *self {
            TheoreticalLaw::Gumbel { loc, scale } => (loc - 4.0 * scale, loc + 40.0 * scale),
            TheoreticalLaw::HalfGumbel { loc } => (loc - 2.5, loc + 20.0),
            TheoreticalLaw::ThetaLaw { loc } => (loc - 2.5, loc + 40.0),
            TheoreticalLaw::Logistic { loc, scale } => (loc - 40.0 * scale, loc + 40.0 * scale),
            TheoreticalLaw::CyclingProfile { .. } => (0.0, 1.0),
            TheoreticalLaw::AsympGeometric { .. } => (0.0, f64::INFINITY),
            TheoreticalLaw::Exponential { rate } => (0.0, 40.0 / rate),
        }
    }

    /// `∫ pdf` by adaptive quadrature.
    pub fn total_mass(&self) -> f64 {
        let (a, b) = self.support_for_quadrature();
        quad::integrate(|x| self.pdf(x), a, b, 1e-13).value
    }

    /// `E[e^{itX}]` by quadrature of the density.
    pub fn characteristic_numeric(&self, t: f64) -> Complex64 {
        let (a, b) = self.support_for_quadrature();
        let re = quad::integrate(|x| self.pdf(x) * (t * x).cos(), a, b, 1e-13).value;
        let im = quad::integrate(|x| self.pdf(x) * (t * x).sin(), a, b, 1e-13).value;
        Complex64::new(re, im)
    }
}

impl Cdf for TheoreticalLaw {
    fn cdf(&self, x: f64) -> f64 {
        TheoreticalLaw::cdf(self, x)
    }
}

pub fn sample_n(law: &TheoreticalLaw, n: usize, rng: &mut StreamRng) -> Vec<f64> {
    (0..n).map(|_| law.sample(rng)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct DuplicationReport {
    pub ks: KsReport,
    /// max over the t-grid of `|φ_Z(t/2)φ_Θ(t) − e^{it log2/2}φ_Z(t)|`, all by quadrature.
    pub max_cf_error: f64,
    /// max over the t-grid of the quadrature vs closed-form discrepancy.
    pub max_closed_form_error: f64,
}

/// Samples `½Z + Θ` and `Z + ½log 2`, compares them, and checks the
/// characteristic-function identity on `t ∈ [−5, 5]`.
pub fn duplication_identity_check(n: usize, rng: &mut StreamRng) -> DuplicationReport {
    let left: Vec<f64> = (0..n).map(|_| 0.5 * gumbel_sample(rng) + theta_law_sample(rng)).collect();
    let right: Vec<f64> = (0..n).map(|_| gumbel_sample(rng) + 0.5 * LN_2).collect();
    let ks = stats::ks_two_sample(&left, &right);
    let z = TheoreticalLaw::standard_gumbel();
    let th = TheoreticalLaw::ThetaLaw { loc: 0.0 };
    let mut max_cf_error: f64 = 0.0;
    let mut max_closed: f64 = 0.0;
    for i in 0..=40 {
        let t = -5.0 + 0.25 * i as f64;
        let phz_half = z.characteristic_numeric(0.5 * t);
        let pth = th.characteristic_numeric(t);
        let phz = z.characteristic_numeric(t);
        let lhs = phz_half * pth;
        let rhs = Complex64::from_polar(1.0, 0.5 * t * LN_2) * phz;
        max_cf_error = max_cf_error.max((lhs - rhs).norm());
        max_closed = max_closed.max((phz - gumbel_cf(t)).norm()).max((pth - theta_cf(t)).norm());
    }
    DuplicationReport { ks, max_cf_error, max_closed_form_error: max_closed }
}

#[derive(Debug, Clone, Serialize)]
pub struct LogisticReport {
    pub ks: KsReport,
    pub mean: f64,
    pub variance: f64,
}

/// `Z₁ − Z₂` against the standard logistic law, density `¼ sech²(x/2)`.
pub fn logistic_residence_check(n: usize, rng: &mut StreamRng) -> LogisticReport {
    let d: Vec<f64> = (0..n).map(|_| gumbel_sample(rng) - gumbel_sample(rng)).collect();
    let law = TheoreticalLaw::Logistic { loc: 0.0, scale: 1.0 };
    LogisticReport { ks: stats::ks_test_values(&d, &law), mean: stats::mean(&d), variance: stats::variance(&d) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailFlag {
    Ok,
    /// Too little mass in the tail window; the interval was widened.
    WidenedCi,
    /// No usable tail: the hazard is undefined.
    Undefined,
}

#[derive(Debug, Clone, Serialize)]
pub struct TailFit {
    pub p: Interval,
    pub window: (u64, u64),
    pub exposure: u64,
    pub flag: TailFlag,
}

/// Minimum number of samples beyond `n` for the hazard at `n` to be used.
pub const TAIL_MIN_COUNT: u64 = 30;

fn pooled_hazard(counts: &[u64], lo: usize, hi: usize) -> (f64, u64) {
    // exposure at n: #(Y > n); events: #(Y = n + 1)
    let mut tail: Vec<u64> = vec![0; counts.len() + 1];
    for n in (0..counts.len()).rev() {
        tail[n] = tail[n + 1] + counts[n];
    }
    let (mut ev, mut ex) = (0u64, 0u64);
    for n in lo..=hi {
        ev += counts.get(n + 1).copied().unwrap_or(0);
        ex += tail.get(n + 1).copied().unwrap_or(0);
    }
    (if ex > 0 { ev as f64 / ex as f64 } else { f64::NAN }, ex)
}

fn counts_of(samples: &[u64]) -> Vec<u64> {
    let max = samples.iter().copied().max().unwrap_or(0) as usize;
    let mut c = vec![0u64; max + 2];
    for &y in samples {
        c[y as usize] += 1;
    }
    c
}

/// Hazard window: `n_hi` is the largest `n` with `#(Y > n) ≥ TAIL_MIN_COUNT`,
/// `n_lo` the midpoint between the first such `n` and `n_hi`, so the early,
/// non-geometric part of the law is excluded.
fn tail_window(counts: &[u64]) -> Option<(usize, usize)> {
    let mut tail = 0u64;
    let mut n_hi = None;
    for n in (0..counts.len()).rev() {
        // tail = #(Y > n)
        if tail >= TAIL_MIN_COUNT {
            n_hi = Some(n);
            break;
        }
        tail += counts[n];
    }
    let n_hi = n_hi?;
    let distinct = counts.iter().filter(|&&c| c > 0).count();
    if distinct < 3 {
        return None;
    }
    Some((n_hi / 2, n_hi))
}

/// Limiting hazard `lim P(Y = n+1 | Y > n)` with a bootstrap interval.
pub fn asymp_geometric_tail_fit(samples: &[u64], resamples: usize, seed: u64) -> Result<TailFit> {
    if samples.len() < 1000 {
        return Err(Error::InvalidParameter(format!("tail fit needs >= 1000 samples, got {}", samples.len())));
    }
    let counts = counts_of(samples);
    let Some((lo, hi)) = tail_window(&counts) else {
        let nan = Interval { estimate: f64::NAN, lo: 0.0, hi: 1.0, se: f64::NAN };
        return Ok(TailFit { p: nan, window: (0, 0), exposure: 0, flag: TailFlag::Undefined });
    };
    let (p, exposure) = pooled_hazard(&counts, lo, hi);
    let as_f: Vec<f64> = samples.iter().map(|&y| y as f64).collect();
    let mut ci = stats::bootstrap_ci(
        &as_f,
        |s| {
            let ys: Vec<u64> = s.iter().map(|&y| y as u64).collect();
            pooled_hazard(&counts_of(&ys), lo, hi).0
        },
        resamples,
        seed,
        0.95,
    );
    ci.estimate = p;
    let mut flag = TailFlag::Ok;
    if exposure < 10 * TAIL_MIN_COUNT {
        flag = TailFlag::WidenedCi;
        ci.lo = (ci.lo - 2.0 * ci.se).max(0.0);
        ci.hi = (ci.hi + 2.0 * ci.se).min(1.0);
    }
    Ok(TailFit { p: ci, window: (lo as u64, hi as u64), exposure, flag })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn gumbel_values_and_identities() {
        assert!((gumbel_cdf(0.0) - (-1f64).exp()).abs() < 1e-15);
        // max-stability: the max of two copies of Z is Z + log 2
        for &x in &[-1.0, 0.0, 2.0] {
            assert!((gumbel_cdf(x).powi(2) - gumbel_cdf(x - LN_2)).abs() < 1e-12);
        }
        for &x in &[-1.0f64, 0.0, 1.0] {
            assert!((gumbel_cdf((-x).exp()) - (-gumbel_cdf(x)).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn a_density_facts() {
        let m = -0.5 * LN_2;
        let eps = 1e-5;
        assert!(a_density(m) > a_density(m + eps) && a_density(m) > a_density(m - eps));
        // normalization by u = e^{−2x}: ∫A = ∫₀^∞ ½ e^{−u/2} du
        let q = quad::integrate(|u| 0.5 * (-0.5 * u).exp(), 0.0, 100.0, 1e-14);
        assert!((q.value - 1.0).abs() < 1e-10);
        assert!((TheoreticalLaw::HalfGumbel { loc: 0.0 }.total_mass() - 1.0).abs() < 1e-10);
        // CDF differentiates to the density
        for &x in &[-1.0, 0.0, 0.7] {
            let fd = (a_cdf(x + 1e-6) - a_cdf(x - 1e-6)) / 2e-6;
            assert!((fd - a_density(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn profile_periodicity_mass_and_forms() {
        for &l in &[1.0, 2.0 * PI, 10.0] {
            for &x in &[0.1, 0.37] {
                let a = cycling_profile_sum(x, l, None).value;
                let b = cycling_profile_sum(x + 1.0, l, None).value;
                assert!((a - b).abs() < 1e-10);
            }
            let mass = quad::integrate(|x| cycling_profile_sum(x, l, None).value, 0.0, 1.0, 1e-12).value;
            assert!((mass - 1.0 / l).abs() < 1e-8);
            assert!((cycling_fourier_coefficient(0, l).re - 1.0 / l).abs() < 1e-14);
            for i in 0..256 {
                let x = i as f64 / 256.0;
                let s = cycling_profile_sum(x, l, None);
                let f = cycling_profile_fourier(x, l, 64);
                assert!((s.value - f.value).abs() < 1e-8, "L={l} x={x}");
                assert!(s.bound < 1e-12);
            }
        }
    }

    #[test]
    fn profile_is_elliptic() {
        for &l in &[1.0, 2.0 * PI, 10.0] {
            for i in 0..16 {
                let x = i as f64 / 16.0;
                let a = cycling_profile_sum_complex(Complex64::new(x, 0.0), l, None).value;
                let b = cycling_profile_sum_complex(Complex64::new(x, PI / l), l, None).value;
                assert!((a - b).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn explicit_window_reports_truncation() {
        let t = cycling_profile_sum(0.3, 1.0, Some(1));
        let full = cycling_profile_sum(0.3, 1.0, None);
        assert!(t.bound > 1e-6);
        assert!((t.value - full.value).abs() <= t.bound);
    }

    #[test]
    fn mod_cdf_matches_density() {
        let l = 2.0 * PI;
        let q = quad::integrate(|u| a_mod_density(u, l), 0.0, 2.5, 1e-13).value;
        assert!((a_mod_cdf(2.5, l) - q).abs() < 1e-10);
        assert!((a_mod_cdf(l, l) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn theta_law_facts() {
        assert!((theta_law_cdf(0.0) - 0.317_310_507_862_914).abs() < 1e-12);
        assert!((TheoreticalLaw::ThetaLaw { loc: 0.0 }.total_mass() - 1.0).abs() < 1e-10);
        assert!((theta_cf(1.0) - TheoreticalLaw::ThetaLaw { loc: 0.0 }.characteristic_numeric(1.0)).norm() < 1e-6);
        assert!((gumbel_cf(0.0) - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn densities_integrate_to_one() {
        let laws = [
            TheoreticalLaw::Gumbel { loc: 1.0, scale: 0.5 },
            TheoreticalLaw::HalfGumbel { loc: -0.3 },
            TheoreticalLaw::ThetaLaw { loc: 2.0 },
            TheoreticalLaw::Logistic { loc: 0.0, scale: 1.0 },
            TheoreticalLaw::CyclingProfile { lambda_t: 2.0 * PI },
            TheoreticalLaw::Exponential { rate: 2.0 },
        ];
        for law in laws {
            assert!((law.total_mass() - 1.0).abs() < 1e-8, "{law:?}");
        }
    }

    #[test]
    fn samplers_match_cdfs() {
        let laws = [
            TheoreticalLaw::Gumbel { loc: 1.0, scale: 0.5 },
            TheoreticalLaw::HalfGumbel { loc: -0.3 },
            TheoreticalLaw::ThetaLaw { loc: 2.0 },
            TheoreticalLaw::Logistic { loc: 0.5, scale: 2.0 },
            TheoreticalLaw::CyclingProfile { lambda_t: 2.0 * PI },
            TheoreticalLaw::CyclingProfile { lambda_t: 1.0 },
            TheoreticalLaw::Exponential { rate: 2.0 },
        ];
        for (i, law) in laws.iter().enumerate() {
            let mut r = stream(11, i as u64);
            let s = sample_n(law, 1_000_000, &mut r);
            let ks = stats::ks_test_values(&s, law);
            assert!(ks.below_1pct(), "{law:?}: {ks:?}");
        }
    }

    #[test]
    fn duplication_and_logistic() {
        let mut r = stream(5, 0);
        let rep = duplication_identity_check(200_000, &mut r);
        assert!(rep.ks.below_1pct(), "{rep:?}");
        assert!(rep.max_cf_error < 1e-6 && rep.max_closed_form_error < 1e-6, "{rep:?}");
        let lr = logistic_residence_check(1_000_000, &mut r);
        assert!(lr.ks.below_1pct());
        assert!(lr.mean.abs() < 0.01);
        assert!((lr.variance / (PI * PI / 3.0) - 1.0).abs() < 0.01);
    }

    #[test]
    fn logistic_is_gumbel_difference_by_convolution() {
        // density of Z₁ − Z₂ at x: ∫ g(x + y) g(y) dy
        for &x in &[-2.0, 0.0, 0.5, 3.0] {
            let conv = quad::integrate(|y| gumbel_pdf(x + y) * gumbel_pdf(y), -10.0, 40.0, 1e-14).value;
            let want = TheoreticalLaw::Logistic { loc: 0.0, scale: 1.0 }.pdf(x);
            assert!((conv - want).abs() < 1e-10);
        }
    }

    #[test]
    fn tail_fit_cases() {
        let mut r = stream(8, 0);
        let geo = TheoreticalLaw::AsympGeometric { p: 0.3 };
        let ys: Vec<u64> = (0..100_000).map(|_| geo.sample(&mut r) as u64).collect();
        let f = asymp_geometric_tail_fit(&ys, 200, 1).unwrap();
        assert_eq!(f.flag, TailFlag::Ok);
        assert!((f.p.estimate - 0.3).abs() < 3.0 * f.p.se, "{f:?}");

        let fixed = vec![5u64; 2000];
        assert_eq!(asymp_geometric_tail_fit(&fixed, 50, 1).unwrap().flag, TailFlag::Undefined);

        // arbitrary head on {0,1,2}, geometric(0.2) tail from 3 on
        let tail = TheoreticalLaw::AsympGeometric { p: 0.2 };
        let ys: Vec<u64> = (0..100_000)
            .map(|_| {
                let u: f64 = r.random();
                if u < 0.5 {
                    (u * 6.0) as u64
                } else {
                    3 + tail.sample(&mut r) as u64
                }
            })
            .collect();
        let f = asymp_geometric_tail_fit(&ys, 200, 2).unwrap();
        assert!(f.p.contains(0.2) || (f.p.estimate - 0.2).abs() < 3.0 * f.p.se, "{f:?}");
        assert!(asymp_geometric_tail_fit(&ys[..10], 10, 0).is_err());
    }
}
