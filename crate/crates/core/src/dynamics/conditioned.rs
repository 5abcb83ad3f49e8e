//! One-dimensional diffusions `dx = b(x)dt + √q dW` conditioned to reach an
//! upper level before a lower one, by Doob's h-transform.
//!
//! With scale density `s(x) = exp(−∫ 2b/q)` and `S(x) = ∫_a^x s`, the
//! conditioned process has drift `b + q·s/S`. The extra term is written as
//! `q·c(x)/(x − a)` with `c = (x − a)s/S`, which is bounded and tends to 1 at
//! `a`; `c` is tabulated in log space so barriers of thousands of units of
//! `q` cause no overflow.

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::special::log_add_exp;
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt;
use std::sync::Arc;

pub const CONDITIONED_TABLE_POINTS: usize = 4096;

type Drift = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct ConditionedDiffusion {
    drift: Drift,
    q: f64,
    a: f64,
    target: f64,
    /// `log S` at the nodes, `log S(a) = −∞`.
    log_scale: Vec<f64>,
    c: Vec<f64>,
}

impl fmt::Debug for ConditionedDiffusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConditionedDiffusion")
            .field("q", &self.q)
            .field("a", &self.a)
            .field("target", &self.target)
            .field("nodes", &self.c.len())
            .finish()
    }
}

impl ConditionedDiffusion {
    /// `q` is the squared noise amplitude (`σ²·D`).
    pub fn new(drift: impl Fn(f64) -> f64 + Send + Sync + 'static, q: f64, a: f64, target: f64) -> Result<Self> {
        Self::with_points(drift, q, a, target, CONDITIONED_TABLE_POINTS)
    }

    pub fn with_points(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        q: f64,
        a: f64,
        target: f64,
        points: usize,
    ) -> Result<Self> {
        if !(q > 0.0) || !(a < target) || points < 8 {
            return Err(Error::InvalidParameter(format!(
                "conditioned diffusion needs q > 0, a < target (q={q}, a={a}, target={target})"
            )));
        }
        let drift: Drift = Arc::new(drift);
        let w = (target - a) / points as f64;
        let mut log_s = vec![0.0; points + 1];
        for i in 0..points {
            let x0 = a + i as f64 * w;
            // Simpson's rule on each cell
            let integral = w / 6.0 * (drift(x0) + 4.0 * drift(x0 + 0.5 * w) + drift(x0 + w));
            log_s[i + 1] = log_s[i] - 2.0 * integral / q;
        }
        let mut log_scale = vec![f64::NEG_INFINITY; points + 1];
        for i in 0..points {
            // exact integral of exp(linear) over the cell
            let (l0, l1) = (log_s[i], log_s[i + 1]);
            let d = l1 - l0;
            let cell = if d.abs() < 1e-8 {
                w.ln() + l0 + 0.5 * d
            } else if d > 0.0 {
                w.ln() + l1 + (-(-d).exp_m1() / d).ln()
            } else {
                w.ln() + l0 + ((d).exp_m1() / d).ln()
            };
            log_scale[i + 1] = log_add_exp(log_scale[i], cell);
        }
        let mut c = vec![1.0; points + 1];
        for i in 1..=points {
            c[i] = (i as f64 * w) * (log_s[i] - log_scale[i]).exp();
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("conditioned drift table is not finite".into()));
        }
        Ok(ConditionedDiffusion { drift, q, a, target, log_scale, c })
    }

    pub fn lower(&self) -> f64 {
        self.a
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    fn node(&self, x: f64) -> (usize, f64) {
        let n = self.c.len() - 1;
        let u = ((x - self.a) / (self.target - self.a) * n as f64).clamp(0.0, n as f64);
        let i = (u.floor() as usize).min(n - 1);
        (i, u - i as f64)
    }

    /// `P_x(reach target before a)` of the unconditioned process.
    pub fn hit_probability(&self, x: f64) -> f64 {
        if x <= self.a {
            return 0.0;
        }
        if x >= self.target {
            return 1.0;
        }
        let (i, w) = self.node(x);
        let l = if i == 0 {
            // S grows linearly off a
            self.log_scale[1] + w.ln()
        } else {
            self.log_scale[i] * (1.0 - w) + self.log_scale[i + 1] * w
        };
        (l - self.log_scale[self.log_scale.len() - 1]).exp()
    }

    /// Drift of the conditioned process; `floor` bounds `x − a` from below.
    #[inline]
    pub fn conditioned_drift(&self, x: f64, floor: f64) -> f64 {
        let (i, w) = self.node(x);
        let c = self.c[i] * (1.0 - w) + self.c[i + 1] * w;
        (self.drift)(x) + self.q * c / (x - self.a).max(floor)
    }

    /// Times at which the conditioned path started at `x0` first reaches each
    /// of the increasing `levels`, the last of which must be the target.
    /// `Ok(None)` when `max_time` runs out.
    pub fn passage_times(&self, x0: f64, levels: &[f64], dt: f64, max_time: f64, rng: &mut StreamRng) -> Result<Option<Vec<f64>>> {
        if !(self.a < x0 && x0 < self.target) {
            return Err(Error::InvalidParameter(format!("start {x0} outside ({}, {})", self.a, self.target)));
        }
        if levels.last() != Some(&self.target) || levels.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidParameter("levels must increase and end at the target".into()));
        }
        let sd = (self.q * dt).sqrt();
        let mut out = Vec::with_capacity(levels.len());
        let mut next = 0;
        while next < levels.len() && x0 >= levels[next] {
            out.push(0.0);
            next += 1;
        }
        let mut x = x0;
        let mut t = 0.0;
        while t < max_time {
            let n: f64 = rng.sample(StandardNormal);
            let mut y = x + self.conditioned_drift(x, sd) * dt + sd * n;
            if y <= self.a {
                y = self.a + (self.a - y).max(1e-3 * sd);
            }
            if !y.is_finite() {
                return Err(Error::NonFinite { t, r: y, phi: f64::NAN });
            }
            while next < levels.len() && y >= levels[next] {
                let l = levels[next];
                let w = if y == x { 1.0 } else { ((l - x) / (y - x)).clamp(0.0, 1.0) };
                out.push(t + w * dt);
                next += 1;
            }
            if next == levels.len() {
                return Ok(Some(out));
            }
            x = y;
            t += dt;
        }
        Ok(None)
    }

    pub fn hit_time(&self, x0: f64, dt: f64, max_time: f64, rng: &mut StreamRng) -> Result<Option<f64>> {
        Ok(self.passage_times(x0, &[self.target], dt, max_time, rng)?.map(|v| v[0]))
    }
}
