//! The explosive Ornstein–Uhlenbeck process `dx = λx dt + σ dW`.
//!
//! `x_t = e^{λt} x̃_t` where `x̃` is a Brownian motion run on the clock
//! `s(t) = σ²(1 − e^{−2λt})/(2λ)`, so transitions are sampled exactly.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::special::{ln_normal_sf, normal_sf};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearOu {
    pub lambda: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearExit {
    pub time: f64,
    /// +1 for the upper boundary, −1 for the lower one, 0 when killed.
    pub side: i8,
    pub killed: bool,
}

/// Probability below which a one-sided passage is treated as impossible.
const NEVER: f64 = 1e-14;
/// Grid points of the bridge check in the conditioned sampler.
const BRIDGE_POINTS: usize = 64;

impl LinearOu {
    pub fn new(lambda: f64, sigma: f64) -> Result<Self> {
        if !(lambda > 0.0) || !(sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("linear OU needs λ > 0, σ ≥ 0 (λ={lambda}, σ={sigma})")));
        }
        Ok(LinearOu { lambda, sigma })
    }

    /// Clock of the time-changed Brownian motion.
    pub fn clock(&self, t: f64) -> f64 {
        self.sigma * self.sigma * -(-2.0 * self.lambda * t).exp_m1() / (2.0 * self.lambda)
    }

    /// Variance of `x_{t+h}` given `x_t`.
    pub fn transition_variance(&self, h: f64) -> f64 {
        self.sigma * self.sigma * (2.0 * self.lambda * h).exp_m1() / (2.0 * self.lambda)
    }

    pub fn transition(&self, x: f64, h: f64, rng: &mut StreamRng) -> f64 {
        let n: f64 = rng.sample(StandardNormal);
        x * (self.lambda * h).exp() + self.transition_variance(h).sqrt() * n
    }

    /// Exact samples of `x` on an increasing time grid starting after `t = 0`.
    pub fn sample_path(&self, x0: f64, times: &[f64], rng: &mut StreamRng) -> Vec<f64> {
        let mut x = x0;
        let mut t = 0.0;
        times
            .iter()
            .map(|&s| {
                x = self.transition(x, s - t, rng);
                t = s;
                x
            })
            .collect()
    }

    /// `P(τ₀ < ∞)` from `x₀`, by the reflection principle: `2Φ̄(|x₀|√(2λ)/σ)`.
    pub fn p_hit_zero(&self, x0: f64) -> f64 {
        2.0 * normal_sf(x0.abs() * (2.0 * self.lambda).sqrt() / self.sigma)
    }

    /// First exit through `lower` or `upper` (either may be absent).
    ///
    /// Steps are exact transitions whose length adapts to the distance to the
    /// boundaries; between grid points a crossing is detected with the
    /// Brownian-bridge probability `exp(−2d₀d₁/v)`, `v` the step variance.
    /// With a single boundary, paths on the far side of 0 whose remaining
    /// chance of ever reaching it is below 1e−14 are killed.
    pub fn exit(
        &self,
        x0: f64,
        lower: Option<f64>,
        upper: Option<f64>,
        max_time: f64,
        rng: &mut StreamRng,
    ) -> Result<LinearExit> {
        if lower.is_some_and(|a| x0 <= a) || upper.is_some_and(|b| x0 >= b) {
            return Err(Error::InvalidParameter("start must lie strictly between the boundaries".into()));
        }
        let lam = self.lambda;
        let h_max = 0.05 / lam;
        let h_min = 1e-9 / lam;
        let mut x = x0;
        let mut t = 0.0;
        while t < max_time {
            let dl = lower.map_or(f64::INFINITY, |a| x - a);
            let du = upper.map_or(f64::INFINITY, |b| b - x);
            let dist = dl.min(du);
            let by_drift = 0.05 * dist / (lam * x.abs()).max(1e-300);
            let by_noise = if self.sigma > 0.0 { (dist / (6.0 * self.sigma)).powi(2) } else { f64::INFINITY };
            let h = by_drift.min(by_noise).clamp(h_min, h_max).min(max_time - t).max(h_min);
            let y = self.transition(x, h, rng);
            let v = self.transition_variance(h);
            let hit = |d0: f64, d1: f64, rng: &mut StreamRng| -> Option<f64> {
                if d1 <= 0.0 {
                    Some(d0 / (d0 - d1))
                } else if v > 0.0 && rng.random::<f64>() < (-2.0 * d0 * d1 / v).exp() {
                    Some(d0 / (d0 + d1))
                } else {
                    None
                }
            };
            if let Some(b) = upper {
                if let Some(w) = hit(b - x, b - y, rng) {
                    return Ok(LinearExit { time: t + w * h, side: 1, killed: false });
                }
            }
            if let Some(a) = lower {
                if let Some(w) = hit(x - a, y - a, rng) {
                    return Ok(LinearExit { time: t + w * h, side: -1, killed: false });
                }
            }
            x = y;
            t += h;
            let hopeless = match (lower, upper) {
                (None, Some(b)) => b >= 0.0 && x < 0.0 && self.p_hit_zero(x) < NEVER,
                (Some(a), None) => a <= 0.0 && x > 0.0 && self.p_hit_zero(x) < NEVER,
                _ => false,
            };
            if hopeless {
                break;
            }
        }
        Ok(LinearExit { time: f64::INFINITY, side: 0, killed: true })
    }

    /// `τ₀` from `x₀ < 0` conditioned on `τ₀ < τ_a` (`a < x₀`), sampled exactly.
    ///
    /// The time of the first zero of `x̃` conditioned on being finite has CDF
    /// `Φ̄(z∞/√(1 − e^{−2λt}))/Φ̄(z∞)`, `z∞ = |x₀|√(2λ)/σ`, and is drawn by
    /// inversion in log space. The path up to that time is a Bessel(3) bridge
    /// in `−x̃`; draws whose bridge touches the image of `a` are rejected.
    pub fn hit_zero_conditioned(&self, x0: f64, a: f64, rng: &mut StreamRng) -> Result<f64> {
        if !(a < x0 && x0 < 0.0) {
            return Err(Error::InvalidParameter(format!("need a < x0 < 0 (a={a}, x0={x0})")));
        }
        let lam = self.lambda;
        let z_inf = x0.abs() * (2.0 * lam).sqrt() / self.sigma;
        let base = ln_normal_sf(z_inf);
        let s_inf = self.sigma * self.sigma / (2.0 * lam);
        let log_cdf = |t: f64| ln_normal_sf(z_inf / (-(-2.0 * lam * t).exp_m1()).sqrt()) - base;
        for _ in 0..1000 {
            let target = rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
            let mut hi = 1.0 / lam;
            while log_cdf(hi) < target {
                hi *= 2.0;
            }
            let mut lo = 0.0;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if log_cdf(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-13 * hi {
                    break;
                }
            }
            let t = 0.5 * (lo + hi);
            let big_t = s_inf * -(-2.0 * lam * t).exp_m1();
            if !self.bridge_touches(x0.abs(), a.abs(), big_t, s_inf, rng) {
                return Ok(t);
            }
        }
        Err(Error::Budget("hit_zero_conditioned: bridge rejections exhausted".into()))
    }

    /// Does a Bessel(3) bridge from `d0` to 0 on `[0, T]` reach `|a|√(1 − s/S∞)`?
    fn bridge_touches(&self, d0: f64, a: f64, big_t: f64, s_inf: f64, rng: &mut StreamRng) -> bool {
        let mut y = [d0, 0.0, 0.0];
        let mut s = 0.0;
        let ds = big_t / BRIDGE_POINTS as f64;
        for _ in 1..BRIDGE_POINTS {
            let rem = big_t - s;
            let next = s + ds;
            let shrink = (big_t - next) / rem;
            let sd = (ds * (big_t - next) / rem).sqrt();
            for c in y.iter_mut() {
                let n: f64 = rng.sample(StandardNormal);
                *c = *c * shrink + sd * n;
            }
            s = next;
            let norm = (y[0] * y[0] + y[1] * y[1] + y[2] * y[2]).sqrt();
            if norm >= a * (1.0 - s / s_inf).max(0.0).sqrt() {
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use crate::stats;

    #[test]
    fn zero_noise_is_exponential_growth() {
        let ou = LinearOu::new(1.3, 0.0).unwrap();
        let p = ou.sample_path(-0.2, &[0.5, 1.0, 2.0], &mut stream(0, 0));
        for (x, t) in p.iter().zip([0.5, 1.0, 2.0]) {
            assert!((x - -0.2 * (1.3f64 * t).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn time_changed_variance() {
        let ou = LinearOu::new(1.0, 0.2).unwrap();
        let t = 0.7;
        let xs: Vec<f64> = (0..100_000u64)
            .map(|i| {
                let path = ou.sample_path(0.3, &[0.2, 0.45, t], &mut stream(5, i));
                (-t as f64).exp() * path[2] - 0.3
            })
            .collect();
        let want = ou.clock(t);
        let var = stats::variance(&xs);
        assert!((var - want).abs() < 3.0 * want * (2.0 / 99_999.0f64).sqrt());
    }

    #[test]
    fn reflection_principle_frequency() {
        let ou = LinearOu::new(1.0, 0.5).unwrap();
        let x0 = -0.4;
        let p = ou.p_hit_zero(x0);
        let n = 20_000u64;
        let hits = (0..n)
            .filter(|&i| !ou.exit(x0, None, Some(0.0), 1e3, &mut stream(6, i)).unwrap().killed)
            .count() as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits / n as f64 - p).abs() < 3.0 * se, "{} vs {p}", hits / n as f64);
    }

    #[test]
    fn symmetric_exit_sign_split() {
        let ou = LinearOu::new(1.0, 0.1).unwrap();
        let n = 100_000u64;
        let up = (0..n)
            .filter(|&i| ou.exit(0.0, Some(-1.0), Some(1.0), 1e3, &mut stream(7, i)).unwrap().side == 1)
            .count() as f64;
        assert!((up / n as f64 - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn conditioned_hit_zero_matches_rejection_at_moderate_noise() {
        // at σ = 0.6 conditioning by rejection is cheap; compare laws
        let ou = LinearOu::new(1.0, 0.6).unwrap();
        let (x0, a) = (-0.5, -1.0);
        let mut direct = Vec::new();
        let mut i = 0u64;
        while direct.len() < 4000 {
            let e = ou.exit(x0, Some(a), Some(0.0), 1e3, &mut stream(8, i)).unwrap();
            if e.side == 1 {
                direct.push(e.time);
            }
            i += 1;
        }
        let exact: Vec<f64> =
            (0..4000u64).map(|i| ou.hit_zero_conditioned(x0, a, &mut stream(9, i)).unwrap()).collect();
        let ks = stats::ks_two_sample(&direct, &exact);
        assert!(ks.below_1pct(), "{ks:?}");
    }

    #[test]
    fn parameter_checks() {
        assert!(LinearOu::new(0.0, 1.0).is_err());
        let ou = LinearOu::new(1.0, 0.1).unwrap();
        assert!(ou.hit_zero_conditioned(0.1, -1.0, &mut stream(0, 0)).is_err());
        assert!(ou.exit(2.0, None, Some(1.0), 1.0, &mut stream(0, 0)).is_err());
    }
}
