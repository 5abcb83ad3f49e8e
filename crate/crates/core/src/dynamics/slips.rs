//! Phase slips: excursions from the stable orbit `r = m − ½` across the
//! unstable orbit `r = m` to the curve `Γ₊`, delimited by the curves `Γ₋`
//! and `Γ₊` around the unstable orbit.

use super::conditioned::ConditionedDiffusion;
use super::{crossing_fraction, normal_pair, step_with, Level, SimConfig, State};
use crate::error::{Error, Result};
use crate::model::SystemSpec;
use crate::rng::StreamRng;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipRecord {
    /// φ at the last visit of the stable orbit before the attempt.
    pub phi_start: f64,
    pub phi_minus: f64,
    pub phi_zero: f64,
    /// NaN for unsuccessful attempts.
    pub phi_plus: f64,
    pub winding: i64,
    pub success: bool,
    pub t_minus: f64,
    pub t_zero: f64,
    /// NaN for unsuccessful attempts.
    pub t_plus: f64,
}

impl SlipRecord {
    fn new(phi_start: f64, minus: (f64, f64), zero: (f64, f64), plus: Option<(f64, f64)>) -> Self {
        let (phi_plus, t_plus) = plus.unwrap_or((f64::NAN, f64::NAN));
        SlipRecord {
            phi_start,
            phi_minus: minus.0,
            phi_zero: zero.0,
            phi_plus,
            winding: Self::winding_of(phi_start, zero.0),
            success: plus.is_some(),
            t_minus: minus.1,
            t_zero: zero.1,
            t_plus,
        }
    }

    fn winding_of(phi_start: f64, phi_zero: f64) -> i64 {
        ((phi_zero - phi_start) + 0.5).floor() as i64
    }
}

/// Output of a slip scan with the attempt accounting.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SlipScan {
    /// Successful slips and the attempts that failed after crossing `r = m`.
    pub records: Vec<SlipRecord>,
    /// Crossings of `Γ₋` after a visit to the stable orbit.
    pub attempts: u64,
    /// Attempts that reached the unstable orbit before returning.
    pub zero_crossings: u64,
    pub successes: u64,
    /// Orbit changes not preceded by a recorded attempt (backward slips and
    /// forward crossings after a failure).
    pub untracked_forward: u64,
    pub backward: u64,
    pub final_time: f64,
    pub complete: bool,
}

impl SlipScan {
    pub fn successful(&self) -> impl Iterator<Item = &SlipRecord> {
        self.records.iter().filter(|r| r.success)
    }

    /// Fraction of attempts that crossed the unstable orbit.
    pub fn crossing_fraction(&self) -> f64 {
        if self.attempts == 0 {
            f64::NAN
        } else {
            self.zero_crossings as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Phase {
    /// Waiting for a visit of the stable orbit.
    WaitReset,
    Idle { phi_start: f64 },
    Armed { phi_start: f64, minus: (f64, f64) },
    Crossed { phi_start: f64, minus: (f64, f64), zero: (f64, f64) },
}

/// `(φ, t)` at the interpolated crossing inside the step `a → b`.
fn interp(a: &State, b: &State, d0: f64, d1: f64) -> (f64, f64) {
    let w = crossing_fraction(d0, d1);
    (a.phi + w * (b.phi - a.phi), a.t + w * (b.t - a.t))
}

/// Follow one long trajectory from the stable orbit `(−½, φ₀)` and record
/// slips until `n_slips` successes or `max_time`.
///
/// `gamma_minus` and `gamma_plus` give `Γ₋`, `Γ₊` relative to the unstable
/// orbit (`Γ₋` negative, `Γ₊` positive). `τ₋` is the first hit of `Γ₋` after
/// the last visit of the stable orbit; an attempt fails if it returns to the
/// stable orbit before `τ₀`, or to `Γ₋` between `τ₀` and `τ₊`.
pub fn detect_slips(
    spec: &SystemSpec,
    config: &SimConfig,
    phi0: f64,
    gamma_minus: &Level,
    gamma_plus: &Level,
    n_slips: usize,
    rng: &mut StreamRng,
) -> Result<SlipScan> {
    let gm0 = gamma_minus.at(phi0);
    let gp0 = gamma_plus.at(phi0);
    if !(-0.5 < gm0 && gm0 < 0.0 && 0.0 < gp0 && gp0 < 0.5) {
        return Err(Error::InvalidParameter(format!("Γ curves must lie inside (−½, ½): Γ₋={gm0}, Γ₊={gp0}")));
    }
    let mut scan = SlipScan::default();
    let mut m = 0.0f64;
    let mut phase = Phase::Idle { phi_start: phi0 };
    let mut s = State::new(-0.5, phi0);
    let t_end = config.max_time;
    while s.t < t_end {
        let b = step_with(&s, spec, config.sigma, config.dt, normal_pair(rng));
        if !(b.r.is_finite() && b.phi.is_finite()) {
            return Err(Error::NonFinite { t: b.t, r: b.r, phi: b.phi });
        }
        let y = b.r - m;
        phase = match phase {
            Phase::WaitReset | Phase::Idle { .. } if y >= 0.5 => {
                m += 1.0;
                scan.untracked_forward += 1;
                Phase::WaitReset
            }
            Phase::WaitReset | Phase::Idle { .. } if y <= -1.0 => {
                m -= 1.0;
                scan.backward += 1;
                Phase::WaitReset
            }
            _ if y <= -0.5 => Phase::Idle { phi_start: b.phi },
            Phase::WaitReset => Phase::WaitReset,
            Phase::Idle { phi_start } => {
                let d1 = y - gamma_minus.at(b.phi);
                if d1 >= 0.0 {
                    let d0 = s.r - m - gamma_minus.at(s.phi);
                    scan.attempts += 1;
                    let minus = interp(&s, &b, d0, d1);
                    if y >= 0.0 {
                        scan.zero_crossings += 1;
                        Phase::Crossed { phi_start, minus, zero: interp(&s, &b, s.r - m, y) }
                    } else {
                        Phase::Armed { phi_start, minus }
                    }
                } else {
                    phase
                }
            }
            Phase::Armed { phi_start, minus } => {
                if y >= 0.0 {
                    scan.zero_crossings += 1;
                    Phase::Crossed { phi_start, minus, zero: interp(&s, &b, s.r - m, y) }
                } else {
                    phase
                }
            }
            Phase::Crossed { phi_start, minus, zero } => {
                let up = y - gamma_plus.at(b.phi);
                let down = y - gamma_minus.at(b.phi);
                if up >= 0.0 {
                    let plus = interp(&s, &b, s.r - m - gamma_plus.at(s.phi), up);
                    scan.records.push(SlipRecord::new(phi_start, minus, zero, Some(plus)));
                    scan.successes += 1;
                    m += 1.0;
                    Phase::WaitReset
                } else if down <= 0.0 {
                    scan.records.push(SlipRecord::new(phi_start, minus, zero, None));
                    Phase::WaitReset
                } else {
                    phase
                }
            }
        };
        s = b;
        if scan.successes as usize >= n_slips {
            scan.complete = true;
            break;
        }
    }
    scan.final_time = s.t;
    Ok(scan)
}

/// Exact-in-law sampler of successful slips for systems whose radial motion
/// does not depend on φ (e.g. the Melnikov system at ε = 0).
///
/// The radial path from the stable orbit is conditioned to reach `r = 0`
/// before returning, by an h-transform; the segment from `r = 0` to `Γ₊` is
/// redrawn until it avoids `Γ₋`, which by the strong Markov property leaves
/// the first segment untouched. φ advances as `ωt + σ√D_φφ B_t` with `B`
/// independent of the radial noise.
#[derive(Clone)]
pub struct ConditionedSlipSampler {
    sigma: f64,
    dt: f64,
    omega: f64,
    phi_noise: f64,
    gamma_minus: f64,
    gamma_plus: f64,
    phi0: f64,
    start: f64,
    up: ConditionedDiffusion,
    drift: crate::model::ScalarFn,
    d_rr: crate::model::ScalarFn,
    pub max_time: f64,
    pub max_retries: u32,
}

impl std::fmt::Debug for ConditionedSlipSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConditionedSlipSampler")
            .field("sigma", &self.sigma)
            .field("dt", &self.dt)
            .field("gamma_minus", &self.gamma_minus)
            .field("gamma_plus", &self.gamma_plus)
            .finish()
    }
}

/// One conditioned slip and the number of tries its second segment took.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipOutcome {
    pub record: SlipRecord,
    pub retries: u32,
}

impl ConditionedSlipSampler {
    pub fn new(
        spec: &SystemSpec,
        sigma: f64,
        dt: f64,
        gamma_minus: f64,
        gamma_plus: f64,
        phi0: f64,
    ) -> Result<Self> {
        let profile = spec
            .radial_profile()
            .ok_or_else(|| Error::Unsupported(format!("{}: radial motion depends on φ", spec.name)))?;
        if spec.constant_noise().is_none() {
            return Err(Error::Unsupported(format!("{}: noise is not constant", spec.name)));
        }
        let d = spec.diffusion(0.0, 0.0);
        if d[0][1].abs() > 1e-14 {
            return Err(Error::Unsupported("radial and phase noise are correlated".into()));
        }
        let omega = spec.f_phi(0.0, 0.0);
        for i in 0..16 {
            let (r, p) = (-0.5 + i as f64 / 15.0, i as f64 * 0.37);
            if (spec.f_phi(r, p) - omega).abs() > 1e-12 {
                return Err(Error::Unsupported("f_φ is not constant".into()));
            }
        }
        if !(sigma > 0.0) || !(-0.5 < gamma_minus && gamma_minus < 0.0 && 0.0 < gamma_plus && gamma_plus < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "need σ > 0 and −½ < Γ₋ < 0 < Γ₊ < ½ (σ={sigma}, Γ₋={gamma_minus}, Γ₊={gamma_plus})"
            )));
        }
        let start = -0.5 + 0.1 * sigma;
        if start >= gamma_minus {
            return Err(Error::InvalidParameter("σ too large for the Γ₋ level".into()));
        }
        let drift = profile.drift.clone();
        let d_rr = profile.diffusion.clone();
        let q = sigma * sigma * d_rr(0.0);
        if (0..16).any(|i| (d_rr(-0.5 + i as f64 / 30.0) - d_rr(0.0)).abs() > 1e-12) {
            return Err(Error::Unsupported("radial diffusion is not constant".into()));
        }
        let f = drift.clone();
        let up = ConditionedDiffusion::new(move |r| f(r), q, -0.5, 0.0)?;
        Ok(ConditionedSlipSampler {
            sigma,
            dt,
            omega,
            phi_noise: sigma * d[1][1].sqrt(),
            gamma_minus,
            gamma_plus,
            phi0,
            start,
            up,
            drift,
            d_rr,
            max_time: 1e4,
            max_retries: 10_000,
        })
    }

    fn advance_phi(&self, phi: f64, t: f64, rng: &mut StreamRng) -> f64 {
        let n: f64 = rng.sample(StandardNormal);
        phi + self.omega * t + self.phi_noise * t.sqrt() * n
    }

    /// Time from `r = 0` to `Γ₊`, or `None` when `Γ₋` comes first.
    fn second_segment(&self, rng: &mut StreamRng) -> Result<Option<f64>> {
        let sd = self.sigma * (self.d_rr)(0.0).sqrt() * self.dt.sqrt();
        let (mut r, mut t) = (0.0f64, 0.0f64);
        while t < self.max_time {
            let n: f64 = rng.sample(StandardNormal);
            let next = r + (self.drift)(r) * self.dt + sd * n;
            if next >= self.gamma_plus {
                return Ok(Some(t + crossing_fraction(r - self.gamma_plus, next - self.gamma_plus) * self.dt));
            }
            if next <= self.gamma_minus {
                return Ok(None);
            }
            r = next;
            t += self.dt;
        }
        Err(Error::Budget("second slip segment exceeded max_time".into()))
    }

    pub fn sample(&self, rng: &mut StreamRng) -> Result<SlipOutcome> {
        let times = self
            .up
            .passage_times(self.start, &[self.gamma_minus, 0.0], self.dt, self.max_time, rng)?
            .ok_or_else(|| Error::Budget("conditioned slip exceeded max_time".into()))?;
        let phi_minus = self.advance_phi(self.phi0, times[0], rng);
        let phi_zero = self.advance_phi(phi_minus, times[1] - times[0], rng);
        for retries in 0..self.max_retries {
            if let Some(dt_plus) = self.second_segment(rng)? {
                let phi_plus = self.advance_phi(phi_zero, dt_plus, rng);
                let record = SlipRecord::new(
                    self.phi0,
                    (phi_minus, times[0]),
                    (phi_zero, times[1]),
                    Some((phi_plus, times[1] + dt_plus)),
                );
                return Ok(SlipOutcome { record, retries });
            }
        }
        Err(Error::Budget("second slip segment never reached Γ₊".into()))
    }
}

pub fn sample_conditioned_slip(sampler: &ConditionedSlipSampler, rng: &mut StreamRng) -> Result<SlipOutcome> {
    sampler.sample(rng)
}
