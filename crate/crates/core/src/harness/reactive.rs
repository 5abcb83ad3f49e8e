//! Reactive paths of the double well `V(x) = x⁴/4 − x²/2`: the duration of
//! paths that cross the saddle from `x₀ < 0` to `b > 0` without falling back
//! to `a`, plus the Eyring–Kramers and exponential-law companions.

use super::{ks_entry, seed_for, starvation, trend_check, Builder, ExperimentConfig, ExperimentRun, SigmaSummary};
use crate::dynamics::{run_batch, ConditionedDiffusion};
use crate::error::{Error, Result};
use crate::laws::TheoreticalLaw;
use crate::quad;
use crate::rng::StreamRng;
use crate::stats::{self, TestReport, KS_CRIT_5};
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::{LN_2, PI};

const FINAL_KS: f64 = 0.05;
const EXP_KS: f64 = 0.05;
const EK_TOLERANCE: f64 = 0.25;
const MIN_ACCEPTANCE: f64 = 1e-3;
const DEFAULT_DT: f64 = 1e-4;
const COMPANION_DT: f64 = 1e-3;
/// Below this |y| the integrand is evaluated at ±`NEAR_ZERO`, where the two
/// terms have not yet cancelled to rounding noise.
const NEAR_ZERO: f64 = 1e-6;

fn v_prime(x: f64) -> f64 {
    x * x * x - x
}

fn potential(x: f64) -> f64 {
    0.25 * x.powi(4) - 0.5 * x * x
}

/// `T(x₀, b) = log(|x₀|bλ) + ∫_{x₀}^0 (λ/V′ + 1/y) dy − ∫_0^b (λ/V′ + 1/y) dy`
/// for a potential with `V′(0) = 0`, `V″(0) = −λ`.
pub fn reactive_time_shift(x0: f64, b: f64, lambda: f64, v_prime: impl Fn(f64) -> f64) -> Result<f64> {
    if !(x0 < 0.0 && b > 0.0 && lambda > 0.0) {
        return Err(Error::InvalidParameter(format!("need x0 < 0 < b and λ > 0 (x0={x0}, b={b})")));
    }
    let g = |y: f64| {
        let y = if y.abs() < NEAR_ZERO { NEAR_ZERO.copysign(y) } else { y };
        lambda / v_prime(y) + 1.0 / y
    };
    let left = quad::integrate(g, x0, 0.0, 1e-11);
    let right = quad::integrate(g, 0.0, b, 1e-11);
    if !(left.converged && right.converged) || !(left.value.is_finite() && right.value.is_finite()) {
        return Err(Error::Numerical(format!(
            "T(x0,b) quadrature failed: errors {:.1e}, {:.1e}",
            left.error, right.error
        )));
    }
    Ok((x0.abs() * b * lambda).ln() + left.value - right.value)
}

/// Closed form for the quartic double well: the integrand is `y/(y² − 1)`.
pub fn double_well_time_shift(x0: f64, b: f64) -> f64 {
    (x0.abs() * b).ln() - 0.5 * (1.0 - x0 * x0).ln() - 0.5 * (1.0 - b * b).ln()
}

/// Eyring–Kramers mean transition time `(2π/√(V″(−1)|V″(0)|))·e^{2ΔV/σ²}`.
pub fn eyring_kramers_mean(sigma: f64) -> f64 {
    let barrier = potential(0.0) - potential(-1.0);
    // V″(−1) = 2, |V″(0)| = 1
    2.0 * PI / 2f64.sqrt() * (2.0 * barrier / (sigma * sigma)).exp()
}

/// Unconditioned Euler–Maruyama passage time from `x0` to `b`; `None` after
/// `max_time`.
fn passage_time(x0: f64, b: f64, sigma: f64, dt: f64, max_time: f64, rng: &mut StreamRng) -> Option<f64> {
    let sd = sigma * dt.sqrt();
    let (mut x, mut t) = (x0, 0.0);
    while t < max_time {
        let n: f64 = rng.sample(StandardNormal);
        let y = x - v_prime(x) * dt + sd * n;
        if y >= b {
            return Some(t + (b - x) / (y - x) * dt);
        }
        x = y;
        t += dt;
    }
    None
}

pub fn exp_reactive_path_1d(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut out = Builder::new(cfg, &["sigma", "kind", "index", "value"])?;
    if !(-1.0 < cfg.a && cfg.a < cfg.x0 && cfg.x0 < 0.0 && 0.0 < cfg.b && cfg.b < 1.0) {
        return Err(Error::InvalidParameter("need −1 < a < x0 < 0 < b < 1".into()));
    }
    let lambda = 1.0;
    let shift = reactive_time_shift(cfg.x0, cfg.b, lambda, v_prime)?;
    out.note(format!(
        "T(x0, b) = {shift:.10} (closed form {:.10}); Gumbel location T + log 2",
        double_well_time_shift(cfg.x0, cfg.b)
    ));
    // The limit theorem is stated for noise √(2ε); with σ = √(2ε) the
    // centring log(1/ε) equals 2|log σ| + log 2, so in σ units the Gumbel
    // location is T + log 2.
    let law = TheoreticalLaw::Gumbel { loc: shift + LN_2, scale: 1.0 };
    let uncorrected = TheoreticalLaw::Gumbel { loc: shift, scale: 1.0 };
    let dt = cfg.dt.unwrap_or(DEFAULT_DT);
    let mut trend = Vec::new();
    let mut last = None;
    for &sigma in &cfg.sigmas {
        let cd = ConditionedDiffusion::new(|x| -v_prime(x), sigma * sigma, cfg.a, cfg.b)?;
        let batch = run_batch(cfg.n, seed_for(cfg, &format!("reactive/{sigma}")), cfg.mode(), |_, rng| {
            cd.hit_time(cfg.x0, dt, cfg.horizon, rng)
        });
        if let Some((i, e)) = batch.failures.first() {
            return Err(Error::Numerical(format!("reactive σ={sigma}: replicate {i}: {e}")));
        }
        let two_log = 2.0 * sigma.ln().abs();
        let sample: Vec<f64> = batch.values().flatten().map(|t| lambda * t - two_log).collect();
        if let Some(msg) = starvation(sample.len(), cfg.n, MIN_ACCEPTANCE) {
            out.partial(format!("σ={sigma}: {msg}"));
            out.criterion(TestReport::flag("conditioning", false, sample.len() as f64, cfg.n, cfg.seed).with_note(msg));
            return Ok(out.finish());
        }
        for (i, v) in sample.iter().enumerate() {
            out.records.push(vec![sigma, 0.0, i as f64, *v]);
        }
        let ks = stats::ks_test_values(&sample, &law);
        out.summary(
            SigmaSummary::new(format!("sigma={sigma}"), sigma, cfg.n, sample.len())
                .with("ks", ks.statistic)
                .with("ks_p", ks.p_value)
                .with("ks_without_log2", stats::ks_test_values(&sample, &uncorrected).statistic)
                .with("mean", stats::mean(&sample))
                .with("limit_mean", law.mean())
                .with("hit_probability", cd.hit_probability(cfg.x0))
                .with("censored", (cfg.n - sample.len()) as f64),
        );
        trend.push(ks_entry(sigma, &ks));
        last = Some((sample.len(), ks));
    }
    let (n_last, ks) = last.expect("non-empty ladder");
    out.criterion(TestReport::below("ks_at_smallest_sigma", ks.statistic, FINAL_KS, n_last, cfg.seed));
    out.criterion(trend_check("ks_trend", &trend, KS_CRIT_5, cfg.seed));

    let companion = |sigma: f64, label: &str| -> Result<(Vec<f64>, usize)> {
        let horizon = 50.0 * eyring_kramers_mean(sigma);
        let batch = run_batch(cfg.companion_n, seed_for(cfg, label), cfg.mode(), |_, rng| {
            Ok(passage_time(-1.0, cfg.b, sigma, COMPANION_DT, horizon, rng))
        });
        let all = batch.into_values();
        let times: Vec<f64> = all.iter().flatten().copied().collect();
        Ok((times, all.len() - all.iter().flatten().count()))
    };
    if let (Some(&s_ek), true) = (cfg.companion_sigmas.first(), cfg.companion_n > 0) {
        let (times, censored) = companion(s_ek, &format!("eyring_kramers/{s_ek}"))?;
        for (i, v) in times.iter().enumerate() {
            out.records.push(vec![s_ek, 1.0, i as f64, *v]);
        }
        let mc = stats::mean(&times);
        let ek = eyring_kramers_mean(s_ek);
        let rel = (mc / ek - 1.0).abs();
        out.summary(
            SigmaSummary::new(format!("eyring_kramers sigma={s_ek}"), s_ek, cfg.companion_n, times.len())
                .with("mean", mc)
                .with("formula", ek)
                .with("censored", censored as f64),
        );
        out.criterion(
            TestReport::below("eyring_kramers_mean", rel, EK_TOLERANCE, times.len(), cfg.seed)
                .with_note(format!("MC mean {mc:.3} vs formula {ek:.3}")),
        );
    }
    if let (Some(&s_exp), true) = (cfg.companion_sigmas.get(1), cfg.companion_n > 0) {
        let (times, censored) = companion(s_exp, &format!("exponential/{s_exp}"))?;
        for (i, v) in times.iter().enumerate() {
            out.records.push(vec![s_exp, 2.0, i as f64, *v]);
        }
        let m = stats::mean(&times);
        let scaled: Vec<f64> = times.iter().map(|t| t / m).collect();
        let ks = stats::ks_test_values(&scaled, &TheoreticalLaw::Exponential { rate: 1.0 });
        out.summary(
            SigmaSummary::new(format!("exponential sigma={s_exp}"), s_exp, cfg.companion_n, times.len())
                .with("ks", ks.statistic)
                .with("mean", m)
                .with("censored", censored as f64),
        );
        out.criterion(TestReport::below("exponential_law_ks", ks.statistic, EXP_KS, times.len(), cfg.seed));
    }
    Ok(out.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_shift_matches_closed_form() {
        for &(x0, b) in &[(-0.5, 0.5), (-0.3, 0.7), (-0.9, 0.1)] {
            let t = reactive_time_shift(x0, b, 1.0, v_prime).unwrap();
            assert!((t - double_well_time_shift(x0, b)).abs() < 1e-9, "{x0} {b}");
        }
        assert!((double_well_time_shift(-0.5, 0.5) + 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn integrand_is_regular_at_the_saddle() {
        // λ/V′(y) + 1/y = y/(y² − 1) → 0
        for y in [1e-3, -1e-3, 1e-5] {
            let g = 1.0 / v_prime(y) + 1.0 / y;
            assert!((g - y / (y * y - 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn eyring_kramers_prefactor() {
        let s = 0.5;
        assert!((eyring_kramers_mean(s) - PI * 2f64.sqrt() * (0.5 / (s * s)).exp()).abs() < 1e-12);
    }

    #[test]
    fn rejects_boundaries_outside_the_wells() {
        let mut cfg = ExperimentConfig::defaults(super::super::ExperimentId::ReactivePath1d);
        cfg.b = 1.2;
        assert!(exp_reactive_path_1d(&cfg).is_err());
    }
}
