//! Goodness-of-fit tests, location fits and bootstrap intervals.

use crate::error::{Error, Result};
use crate::par::{map_indexed, Parallelism};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Asymptotic KS critical coefficients: reject when `√n·D > c`.
pub const KS_CRIT_5: f64 = 1.358_099_9;
pub const KS_CRIT_1: f64 = 1.627_624_3;
/// Asymptotic Kuiper critical coefficients for `√n·V`.
pub const KUIPER_CRIT_5: f64 = 1.747;
pub const KUIPER_CRIT_1: f64 = 2.001;

/// Anything with a cumulative distribution function.
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;
}

impl<F: Fn(f64) -> f64> Cdf for F {
    fn cdf(&self, x: f64) -> f64 {
        self(x)
    }
}

fn sort_finite(mut v: Vec<f64>) -> Vec<f64> {
    v.retain(|x| !x.is_nan());
    v.sort_by(f64::total_cmp);
    v
}

/// Sorted sample with optional weights (normalized to sum 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    values: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl EmpiricalDistribution {
    pub fn new(values: Vec<f64>) -> Self {
        EmpiricalDistribution { values: sort_finite(values), weights: None }
    }

    pub fn weighted(pairs: Vec<(f64, f64)>) -> Result<Self> {
        let mut pairs: Vec<_> = pairs.into_iter().filter(|p| !p.0.is_nan()).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        if !(total > 0.0) || pairs.iter().any(|p| p.1 < 0.0) {
            return Err(Error::InvalidParameter("weights must be nonnegative with positive sum".into()));
        }
        Ok(EmpiricalDistribution {
            values: pairs.iter().map(|p| p.0).collect(),
            weights: Some(pairs.iter().map(|p| p.1 / total).collect()),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Cumulative mass just after index `i`.
    fn mass_through(&self, i: usize, acc: &mut f64) -> f64 {
        match &self.weights {
            None => (i + 1) as f64 / self.values.len() as f64,
            Some(w) => {
                *acc += w[i];
                *acc
            }
        }
    }

    pub fn ecdf(&self, x: f64) -> f64 {
        let k = self.values.partition_point(|&v| v <= x);
        match &self.weights {
            None => k as f64 / self.values.len().max(1) as f64,
            Some(w) => w[..k].iter().sum(),
        }
    }

    pub fn mean(&self) -> f64 {
        match &self.weights {
            None => mean(&self.values),
            Some(w) => self.values.iter().zip(w).map(|(x, w)| x * w).sum(),
        }
    }

    pub fn quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.values, q)
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
}

/// Kolmogorov survival function `P(K > λ)`, 20-term alternating series.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=20)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

/// Kuiper survival function `P(V > λ)` for the scaled statistic.
pub fn kuiper_sf(lambda: f64) -> f64 {
    if lambda < 0.4 {
        return 1.0;
    }
    let s: f64 = (1..=20)
        .map(|k| {
            let k2l2 = (k * k) as f64 * lambda * lambda;
            (4.0 * k2l2 - 1.0) * (-2.0 * k2l2).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KsReport {
    pub statistic: f64,
    pub p_value: f64,
    /// Effective sample size (`n₁n₂/(n₁+n₂)` for two samples).
    pub n_eff: f64,
}

impl KsReport {
    pub fn critical(&self, coefficient: f64) -> f64 {
        coefficient / self.n_eff.sqrt()
    }
    pub fn below_1pct(&self) -> bool {
        self.statistic < self.critical(KS_CRIT_1)
    }
    pub fn below_5pct(&self) -> bool {
        self.statistic < self.critical(KS_CRIT_5)
    }
}

fn ks_p(d: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

/// One-sample KS statistic `sup |F_n − F|`.
pub fn ks_statistic(sample: &EmpiricalDistribution, law: &dyn Cdf) -> f64 {
    let v = sample.values();
    let mut d: f64 = 0.0;
    let mut before = 0.0;
    let mut acc = 0.0;
    let mut i = 0;
    while i < v.len() {
        // group ties so a repeated value is one jump
        let mut j = i;
        let mut after = before;
        while j < v.len() && v[j] == v[i] {
            after = sample.mass_through(j, &mut acc);
            j += 1;
        }
        let f = law.cdf(v[i]);
        d = d.max((f - before).abs()).max((after - f).abs());
        before = after;
        i = j;
    }
    d
}

pub fn ks_test(sample: &EmpiricalDistribution, law: &dyn Cdf) -> KsReport {
    let n = sample.len() as f64;
    let d = ks_statistic(sample, law);
    KsReport { statistic: d, p_value: ks_p(d, n), n_eff: n }
}

pub fn ks_test_values(values: &[f64], law: &dyn Cdf) -> KsReport {
    ks_test(&EmpiricalDistribution::new(values.to_vec()), law)
}

/// Two-sample KS.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsReport {
    let a = sort_finite(a.to_vec());
    let b = sort_finite(b.to_vec());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    KsReport { statistic: d, p_value: ks_p(d, n_eff), n_eff }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KuiperReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n_eff: f64,
}

impl KuiperReport {
    pub fn critical(&self, coefficient: f64) -> f64 {
        coefficient / self.n_eff.sqrt()
    }
    pub fn below_1pct(&self) -> bool {
        self.statistic < self.critical(KUIPER_CRIT_1)
    }
    pub fn below_5pct(&self) -> bool {
        self.statistic < self.critical(KUIPER_CRIT_5)
    }
}

fn kuiper_p(v: f64, n: f64) -> f64 {
    let sn = n.sqrt();
    kuiper_sf((sn + 0.155 + 0.24 / sn) * v)
}

/// Kuiper test of a circular sample (reduced mod `period`) against a law
/// given by its CDF on `[0, period)`.
pub fn kuiper_circular(sample: &[f64], period: f64, cdf: &dyn Cdf) -> KuiperReport {
    let mut u: Vec<f64> = sample.iter().map(|x| cdf.cdf(x.rem_euclid(period))).collect();
    u.sort_by(f64::total_cmp);
    let n = u.len() as f64;
    let (mut dp, mut dm): (f64, f64) = (0.0, 0.0);
    for (i, &ui) in u.iter().enumerate() {
        dp = dp.max((i + 1) as f64 / n - ui);
        dm = dm.max(ui - i as f64 / n);
    }
    let v = dp + dm;
    KuiperReport { statistic: v, p_value: kuiper_p(v, n), n_eff: n }
}

/// Two-sample Kuiper test on the circle of length `period`.
pub fn kuiper_two_sample(a: &[f64], b: &[f64], period: f64) -> KuiperReport {
    let a = sort_finite(a.iter().map(|x| x.rem_euclid(period)).collect());
    let b = sort_finite(b.iter().map(|x| x.rem_euclid(period)).collect());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let (mut dp, mut dm): (f64, f64) = (0.0, 0.0);
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => break,
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let diff = i as f64 / na - j as f64 / nb;
        dp = dp.max(diff);
        dm = dm.max(-diff);
    }
    let v = dp + dm;
    let n_eff = na * nb / (na + nb);
    KuiperReport { statistic: v, p_value: kuiper_p(v, n_eff), n_eff }
}

/// Percentile bootstrap interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Interval {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    pub se: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// Interval for `self − other` assuming independence (normal approximation).
    pub fn difference(&self, other: &Interval, z: f64) -> Interval {
        let se = (self.se * self.se + other.se * other.se).sqrt();
        let d = self.estimate - other.estimate;
        Interval { estimate: d, lo: d - z * se, hi: d + z * se, se }
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Nonparametric bootstrap of `stat` over `sample` (`level` e.g. 0.95).
pub fn bootstrap_ci<F>(sample: &[f64], stat: F, resamples: usize, seed: u64, level: f64) -> Interval
where
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let est = stat(sample);
    let n = sample.len();
    let mut reps: Vec<f64> = map_indexed(resamples, Parallelism::Auto, |b| {
        let mut rng = rng::stream(seed, b as u64);
        let mut buf = Vec::with_capacity(n);
        for _ in 0..n {
            buf.push(sample[rng.random_range(0..n)]);
        }
        stat(&buf)
    });
    reps.retain(|x| x.is_finite());
    reps.sort_by(f64::total_cmp);
    let se = if reps.len() > 1 { variance(&reps).sqrt() } else { f64::NAN };
    let a = 0.5 * (1.0 - level);
    Interval { estimate: est, lo: quantile_sorted(&reps, a), hi: quantile_sorted(&reps, 1.0 - a), se }
}

/// Closed-form location MLE of a Gumbel law with known scale:
/// `μ̂ = −s log((1/n) Σ e^{−x_i/s})`, evaluated with a log-sum-exp.
pub fn gumbel_location_mle(sample: &[f64], scale: f64) -> f64 {
    let m = sample.iter().map(|x| -x / scale).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = sample.iter().map(|x| (-x / scale - m).exp()).sum();
    -scale * (m + (s / sample.len() as f64).ln())
}

pub fn gumbel_location_fit(sample: &[f64], scale: f64, resamples: usize, seed: u64) -> Interval {
    if sample.len() == 1 {
        let x = sample[0];
        return Interval { estimate: x, lo: x, hi: x, se: 0.0 };
    }
    bootstrap_ci(sample, move |s| gumbel_location_mle(s, scale), resamples, seed, 0.95)
}

/// KS against a location family with estimated location; the null
/// distribution of the statistic comes from a parametric bootstrap.
pub fn ks_estimated_location<L, S, Fit>(
    sample: &[f64],
    law_at: L,
    sampler: S,
    fit: Fit,
    resamples: usize,
    seed: u64,
) -> (KsReport, f64)
where
    L: Fn(f64) -> Box<dyn Cdf + Send + Sync> + Sync + Send,
    S: Fn(f64, &mut rng::StreamRng) -> f64 + Sync + Send,
    Fit: Fn(&[f64]) -> f64 + Sync + Send,
{
    let loc = fit(sample);
    let report = ks_test_values(sample, law_at(loc).as_ref());
    let n = sample.len();
    let null: Vec<f64> = map_indexed(resamples, Parallelism::Auto, |b| {
        let mut rng = rng::stream(seed, b as u64);
        let synth: Vec<f64> = (0..n).map(|_| sampler(loc, &mut rng)).collect();
        let l = fit(&synth);
        ks_test_values(&synth, law_at(l).as_ref()).statistic
    });
    let exceed = null.iter().filter(|&&d| d >= report.statistic).count();
    let p = (exceed as f64 + 1.0) / (resamples as f64 + 1.0);
    (KsReport { p_value: p, ..report }, loc)
}

/// Two-sided sign test of `median` (normal approximation with continuity correction).
pub fn sign_test(sample: &[f64], median: f64) -> f64 {
    let above = sample.iter().filter(|&&x| x > median).count() as f64;
    let below = sample.iter().filter(|&&x| x < median).count() as f64;
    let n = above + below;
    if n == 0.0 {
        return 1.0;
    }
    let z = ((above - 0.5 * n).abs() - 0.5).max(0.0) / (0.25 * n).sqrt();
    2.0 * crate::special::normal_sf(z)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Ordinary least squares `y = a + bx`; returns `(a, b, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(u, v)| (v - a - b * u).powi(2)).sum();
    (a, b, 1.0 - ss_res / ss_tot)
}

/// Circular location `arg E[e^{2πiX/L}]·L/(2π)` in `[0, L)`.
pub fn circular_location(sample: &[f64], period: f64) -> f64 {
    let (mut c, mut s) = (0.0, 0.0);
    for x in sample {
        let a = 2.0 * PI * x / period;
        c += a.cos();
        s += a.sin();
    }
    (s.atan2(c) * period / (2.0 * PI)).rem_euclid(period)
}

/// Signed circular difference `a − b` in `[−L/2, L/2)`.
pub fn circular_difference(a: f64, b: f64, period: f64) -> f64 {
    (a - b + 0.5 * period).rem_euclid(period) - 0.5 * period
}

/// Trend check for a statistic that should shrink along a ladder: each step
/// may rise by at most its noise floor, and the ladder must end either
/// clearly lower than it started (by more than the last floor) or already
/// at the floor.
pub fn monotone_within_noise(values: &[f64], floors: &[f64]) -> bool {
    if values.len() < 2 || values.len() != floors.len() || values.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let steps_ok = values.windows(2).zip(&floors[1..]).all(|(w, f)| w[1] <= w[0] + f);
    let (first, last, floor) = (values[0], values[values.len() - 1], floors[floors.len() - 1]);
    steps_ok && (last < first - floor || last < floor)
}

/// Histogram on `[lo, hi)` with `bins` cells; returns normalized masses.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    let mut n = 0.0;
    for &v in values {
        if v >= lo && v < hi {
            let k = (((v - lo) / (hi - lo)) * bins as f64) as usize;
            h[k.min(bins - 1)] += 1.0;
            n += 1.0;
        }
    }
    if n > 0.0 {
        h.iter_mut().for_each(|x| *x /= n);
    }
    h
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Machine-readable verdict for one test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub n: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TestReport {
    /// Passes when `statistic < threshold`.
    pub fn below(name: impl Into<String>, statistic: f64, threshold: f64, n: usize, seed: u64) -> Self {
        TestReport {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic < threshold,
            n,
            seed,
            note: None,
        }
    }

    pub fn flag(name: impl Into<String>, pass: bool, statistic: f64, n: usize, seed: u64) -> Self {
        TestReport { name: name.into(), statistic, threshold: f64::NAN, pass, n, seed, note: None }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn trend_tolerates_noise_but_needs_progress() {
        assert!(monotone_within_noise(&[0.1, 0.11, 0.05], &[0.0, 0.02, 0.02]));
        assert!(!monotone_within_noise(&[0.1, 0.15, 0.05], &[0.0, 0.02, 0.02]));
        assert!(!monotone_within_noise(&[0.1, 0.1, 0.1], &[0.0, 0.02, 0.02]));
        assert!(!monotone_within_noise(&[0.1], &[0.0]));
        // a drift smaller than the noise is not progress
        assert!(!monotone_within_noise(&[0.606, 0.598, 0.604], &[0.0175; 3]));
        // noisy but already at the floor
        assert!(monotone_within_noise(&[0.0025, 0.0036, 0.0056], &[0.0061; 3]));
    }

    fn uniform(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, 0);
        (0..n).map(|_| r.random::<f64>()).collect()
    }

    fn unif_cdf(x: f64) -> f64 {
        x.clamp(0.0, 1.0)
    }

    #[test]
    fn kolmogorov_series_known_values() {
        // P(K > 1.36) ≈ 0.0494, P(K > 1.63) ≈ 0.0098
        assert!((kolmogorov_sf(1.358_099_9) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_sf(1.627_624_3) - 0.01).abs() < 1e-4);
        assert!((kuiper_sf(1.747) - 0.05).abs() < 2e-3);
        assert!((kuiper_sf(2.001) - 0.01).abs() < 1e-3);
    }

    #[test]
    fn ks_calibration() {
        let mut ok = 0;
        for s in 0..100 {
            if ks_test_values(&uniform(10_000, s), &unif_cdf).p_value > 0.01 {
                ok += 1;
            }
        }
        assert!(ok >= 98, "{ok}");
    }

    #[test]
    fn ks_degenerate_sample() {
        let r = ks_test_values(&vec![0.5; 100], &unif_cdf);
        assert!(r.statistic >= 0.5 && r.statistic <= 1.0);
    }

    #[test]
    fn ks_weighted_matches_unweighted() {
        let v = uniform(500, 3);
        let a = ks_test_values(&v, &unif_cdf).statistic;
        let w = EmpiricalDistribution::weighted(v.iter().map(|&x| (x, 2.0)).collect()).unwrap();
        assert!((ks_statistic(&w, &unif_cdf) - a).abs() < 1e-12);
    }

    #[test]
    fn kuiper_rotation_and_calibration() {
        let v = uniform(2000, 9);
        let a = kuiper_circular(&v, 1.0, &unif_cdf).statistic;
        let rot: Vec<f64> = v.iter().map(|x| x + 0.3141).collect();
        let b = kuiper_circular(&rot, 1.0, &unif_cdf).statistic;
        assert!((a - b).abs() < 1e-12);
        let mut ok = 0;
        for s in 0..100 {
            if kuiper_circular(&uniform(10_000, 100 + s), 1.0, &unif_cdf).below_1pct() {
                ok += 1;
            }
        }
        assert!(ok >= 98, "{ok}");
        let point = vec![0.25; 1000];
        assert!(kuiper_circular(&point, 1.0, &unif_cdf).statistic > 0.99);
    }

    #[test]
    fn two_sample_tests() {
        let a = uniform(5000, 1);
        let b = uniform(4000, 2);
        assert!(ks_two_sample(&a, &b).below_1pct());
        assert!(kuiper_two_sample(&a, &b, 1.0).below_1pct());
        let c: Vec<f64> = b.iter().map(|x| x * 0.8).collect();
        assert!(!ks_two_sample(&a, &c).below_1pct());
        // the two-sample Kuiper statistic is rotation invariant
        let ra: Vec<f64> = a.iter().map(|x| x + 0.4).collect();
        let rb: Vec<f64> = b.iter().map(|x| x + 0.4).collect();
        let d1 = kuiper_two_sample(&a, &b, 1.0).statistic;
        let d2 = kuiper_two_sample(&ra, &rb, 1.0).statistic;
        assert!((d1 - d2).abs() < 1e-12);
    }

    #[test]
    fn monotone_relabeling_invariance() {
        let v = uniform(3000, 5);
        let d1 = ks_test_values(&v, &unif_cdf).statistic;
        let w: Vec<f64> = v.iter().map(|x| x.powi(3) + 2.0).collect();
        let d2 = ks_test_values(&w, &|y: f64| ((y - 2.0).max(0.0)).cbrt().min(1.0)).statistic;
        assert!((d1 - d2).abs() < 1e-12);
    }

    fn gumbel(n: usize, loc: f64, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, 0);
        (0..n).map(|_| loc - (-(r.random::<f64>()).ln()).ln()).collect()
    }

    #[test]
    fn gumbel_fit_examples() {
        let s = gumbel(100_000, 2.0, 4);
        let fit = gumbel_location_fit(&s, 1.0, 200, 1);
        assert!((fit.estimate - 2.0).abs() < 3.0 * fit.se, "{fit:?}");
        let shifted: Vec<f64> = s.iter().map(|x| x + 1.25).collect();
        let d = gumbel_location_mle(&shifted, 1.0) - gumbel_location_mle(&s, 1.0);
        assert!((d - 1.25).abs() < 1e-12);
        assert_eq!(gumbel_location_fit(&[3.5], 1.0, 10, 0).estimate, 3.5);
        assert!((gumbel_location_mle(&[3.5], 0.5) - 3.5).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_coverage() {
        let mut covered = 0;
        for rep in 0..100 {
            let s = gumbel(400, 0.7, 1000 + rep);
            if gumbel_location_fit(&s, 1.0, 200, rep).contains(0.7) {
                covered += 1;
            }
        }
        assert!(covered >= 90, "{covered}");
    }

    #[test]
    fn lilliefors_style_p_value_is_calibrated_enough() {
        let s = gumbel(300, 1.0, 77);
        let law = |loc: f64| -> Box<dyn Cdf + Send + Sync> {
            Box::new(move |x: f64| (-(-(x - loc)).exp()).exp())
        };
        let samp = |loc: f64, r: &mut rng::StreamRng| loc - (-(r.random::<f64>()).ln()).ln();
        let (rep, loc) = ks_estimated_location(&s, law, samp, |x| gumbel_location_mle(x, 1.0), 200, 3);
        assert!(rep.p_value > 0.01);
        assert!((loc - 1.0).abs() < 0.2);
    }

    #[test]
    fn misc_helpers() {
        let mut r = rng::stream(5, 0);
        let x: Vec<f64> = (0..2000).map(|_| r.sample(StandardNormal)).collect();
        assert!(sign_test(&x, 0.0) > 0.01);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y) - 1.0).abs() < 1e-12);
        let (a, b, r2) = linear_fit(&x, &y);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!((circular_difference(0.1, 0.9, 1.0) - 0.2).abs() < 1e-15);
        let h = histogram(&[0.1, 0.2, 0.7], 0.0, 1.0, 2);
        assert!((h[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((total_variation(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
    }
}
