//! Large deviations: the rate function, the Hamiltonian flow, the instanton
//! joining the stable orbit `r = −½` to the unstable orbit `r = 0`, the
//! quasipotential on the unstable orbit, and the curves `Γ^s_±`.

use crate::dynamics::PeriodicCurve;
use crate::error::{Error, Result};
use crate::model::{OrbitConstants, OrbitGeometry, SystemSpec};
use serde::{Deserialize, Serialize};

/// RK4 step of the Hamiltonian flow, in units of `1/λ₊`.
pub const HAMILTON_STEP: f64 = 1e-3;
/// Distance from the stable orbit at which shots start.
pub const DELTA_INIT: f64 = 1e-4;
/// Level below the unstable orbit at which the miss is measured.
pub const MISS_LEVEL: f64 = 0.05;
/// The converged instanton is integrated up to `r = −DELTA_CUT`.
pub const DELTA_CUT: f64 = 1e-3;
const SCAN_POINTS: usize = 32;
/// Below this the miss function is treated as identically zero.
const DEGENERATE_MISS: f64 = 1e-7;
/// Members per side sampled near each connection in `reach_level_scan`.
const NEAR_ROOT_POINTS: usize = 40;
/// Largest phase gap left between crossings of neighbouring members.
const REACH_GAP: f64 = 1.0 / 128.0;
/// Start of backward shots on the linearized stable fiber of `r = 0`.
const FIBER_START: f64 = 1e-4;

/// Phase-space point `(r, φ, p_r, p_φ)`.
pub type PhasePoint = [f64; 4];

/// `½∫(γ̇ − f)ᵀD⁻¹(γ̇ − f)dt` of a sampled path `(t, r, φ)`, with
/// second-order finite-difference velocities and the trapezoidal rule.
pub fn rate_function(path: &[(f64, f64, f64)], spec: &SystemSpec) -> Result<f64> {
    let n = path.len();
    if n < 3 {
        return Err(Error::InvalidParameter("a path needs at least three samples".into()));
    }
    let velocity = |i: usize| -> [f64; 2] {
        let (a, b, c) = if i == 0 {
            (0, 1, 2)
        } else if i == n - 1 {
            (n - 3, n - 2, n - 1)
        } else {
            (i - 1, i, i + 1)
        };
        // derivative at t_i of the quadratic through the three samples
        let (ta, tb, tc) = (path[a].0, path[b].0, path[c].0);
        let t = path[i].0;
        let wa = (2.0 * t - tb - tc) / ((ta - tb) * (ta - tc));
        let wb = (2.0 * t - ta - tc) / ((tb - ta) * (tb - tc));
        let wc = (2.0 * t - ta - tb) / ((tc - ta) * (tc - tb));
        [
            wa * path[a].1 + wb * path[b].1 + wc * path[c].1,
            wa * path[a].2 + wb * path[b].2 + wc * path[c].2,
        ]
    };
    let mut integrand = Vec::with_capacity(n);
    for i in 0..n {
        let (_, r, phi) = path[i];
        let v = velocity(i);
        let f = spec.drift(r, phi);
        let w = [v[0] - f[0], v[1] - f[1]];
        let d = spec.diffusion(r, phi);
        let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
        if !(det.abs() > 1e-14 * (d[0][0] * d[1][1]).abs().max(1e-300)) {
            return Err(Error::Structural(format!("diffusion matrix is singular at (r={r}, φ={phi})")));
        }
        let q = (d[1][1] * w[0] * w[0] - 2.0 * d[0][1] * w[0] * w[1] + d[0][0] * w[1] * w[1]) / det;
        integrand.push(0.5 * q);
    }
    Ok((1..n).map(|i| 0.5 * (integrand[i] + integrand[i - 1]) * (path[i].0 - path[i - 1].0)).sum())
}

/// `H(x, p) = ½pᵀD(x)p + f(x)ᵀp`.
pub fn hamiltonian(x: [f64; 2], p: [f64; 2], spec: &SystemSpec) -> f64 {
    let d = spec.diffusion(x[0], x[1]);
    let f = spec.drift(x[0], x[1]);
    0.5 * (d[0][0] * p[0] * p[0] + 2.0 * d[0][1] * p[0] * p[1] + d[1][1] * p[1] * p[1]) + f[0] * p[0] + f[1] * p[1]
}

/// `(∂H/∂p, −∂H/∂x)` as `[ṙ, φ̇, ṗ_r, ṗ_φ]`.
pub fn ham_vector_field(x: [f64; 2], p: [f64; 2], spec: &SystemSpec) -> [f64; 4] {
    let d = spec.diffusion(x[0], x[1]);
    let f = spec.drift(x[0], x[1]);
    let j = spec.jacobian(x[0], x[1]);
    let dd = spec.diffusion_gradient(x[0], x[1]);
    let quad = |m: &[[f64; 2]; 2]| m[0][0] * p[0] * p[0] + 2.0 * m[0][1] * p[0] * p[1] + m[1][1] * p[1] * p[1];
    [
        d[0][0] * p[0] + d[0][1] * p[1] + f[0],
        d[1][0] * p[0] + d[1][1] * p[1] + f[1],
        -0.5 * quad(&dd[0]) - (j[0][0] * p[0] + j[1][0] * p[1]),
        -0.5 * quad(&dd[1]) - (j[0][1] * p[0] + j[1][1] * p[1]),
    ]
}

fn field(z: &PhasePoint, spec: &SystemSpec) -> [f64; 4] {
    ham_vector_field([z[0], z[1]], [z[2], z[3]], spec)
}

/// One RK4 step of the Hamiltonian flow.
pub fn rk4_step(z: &PhasePoint, h: f64, spec: &SystemSpec) -> PhasePoint {
    let add = |a: &PhasePoint, k: &[f64; 4], s: f64| [a[0] + s * k[0], a[1] + s * k[1], a[2] + s * k[2], a[3] + s * k[3]];
    let k1 = field(z, spec);
    let k2 = field(&add(z, &k1, 0.5 * h), spec);
    let k3 = field(&add(z, &k2, 0.5 * h), spec);
    let k4 = field(&add(z, &k3, h), spec);
    let mut out = *z;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn energy(z: &PhasePoint, spec: &SystemSpec) -> f64 {
    hamiltonian([z[0], z[1]], [z[2], z[3]], spec)
}

/// Periodic solution of `dH/dt = 2a(φ)H + D_rr` on the stable orbit, where
/// `a = ∂_r f_r(−½, φ)`: the ratio `u/p_r` on its unstable fiber.
fn stable_fiber_ratio(spec: &SystemSpec, phi: f64) -> f64 {
    let omega = spec.f_phi(-0.5, phi);
    let rate = |ph: f64, hv: f64| (2.0 * spec.jacobian(-0.5, ph)[0][0] * hv + spec.diffusion(-0.5, ph)[0][0]) / omega;
    // forward integration forgets the initial value at rate e^{−2λ₋T₋}
    let a0 = spec.jacobian(-0.5, phi)[0][0].abs().max(1e-3) / omega;
    let periods = (40.0 / (2.0 * a0)).ceil().max(2.0);
    let steps = (periods * 2000.0) as usize;
    let h = periods / steps as f64;
    let mut x = phi - periods;
    let mut v = 0.0;
    for _ in 0..steps {
        let k1 = rate(x, v);
        let k2 = rate(x + 0.5 * h, v + 0.5 * h * k1);
        let k3 = rate(x + 0.5 * h, v + 0.5 * h * k2);
        let k4 = rate(x + h, v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        x += h;
    }
    v
}

/// Start of a shot on the unstable fiber of the stable orbit at phase `phi`,
/// with `p_φ` chosen so that `H = 0` to second order.
fn initial_point(spec: &SystemSpec, phi: f64) -> (PhasePoint, f64) {
    let fiber = stable_fiber_ratio(spec, phi);
    let r = -0.5 + DELTA_INIT;
    let p_r = DELTA_INIT / fiber;
    let d = spec.diffusion(r, phi);
    let f = spec.drift(r, phi);
    let p_phi = -(0.5 * d[0][0] * p_r * p_r + f[0] * p_r) / (f[1] + d[0][1] * p_r);
    // action of the linear segment from the orbit: ∫ p_r dr = δ²/(2H)
    ([r, phi, p_r, p_phi], DELTA_INIT * DELTA_INIT / (2.0 * fiber))
}

/// `r + T₊h(φ)p_r`: signed offset from the linearized stable fiber of `r = 0`.
fn fiber_offset(z: &PhasePoint, geometry: &OrbitGeometry) -> f64 {
    z[0] + geometry.constants.t_plus * geometry.h(z[1]) * z[2]
}

#[derive(Debug, Clone, Copy)]
enum ShotEnd {
    /// Reached the level `r = −ρ`.
    Level,
    /// Turned back towards the stable orbit first.
    TurnedBack,
    /// Crossed the unstable orbit.
    Crossed,
}

struct Shot {
    end: PhasePoint,
    action: f64,
    how: ShotEnd,
    path: Vec<InstantonPoint>,
    max_energy: f64,
}

/// Integrate the Hamiltonian flow from `z` until `r ≥ −rho`, `r ≥ 0`
/// (when `rho = 0`), or the path turns back.
fn shoot(spec: &SystemSpec, lambda: f64, z0: PhasePoint, a0: f64, rho: f64, record: bool) -> Result<Shot> {
    let h = HAMILTON_STEP / lambda;
    let t_max = 200.0 / lambda;
    let mut z = z0;
    let mut t = 0.0;
    let mut action = a0;
    let mut path = Vec::new();
    let mut max_energy = energy(&z, spec).abs();
    let push = |path: &mut Vec<InstantonPoint>, z: &PhasePoint, t: f64, a: f64| {
        path.push(InstantonPoint { t, r: z[0], phi: z[1], p_r: z[2], p_phi: z[3], action: a })
    };
    if record {
        push(&mut path, &z, t, action);
    }
    let mut peak = z[0];
    while t < t_max {
        let next = rk4_step(&z, h, spec);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t, r: next[0], phi: next[1] });
        }
        // momentum integral ∫ p·dγ by the trapezoidal rule on the RK4 nodes
        let step_action = 0.5 * ((z[2] + next[2]) * (next[0] - z[0]) + (z[3] + next[3]) * (next[1] - z[1]));
        max_energy = max_energy.max(energy(&next, spec).abs());
        if next[0] >= -rho {
            if rho == 0.0 {
                return Ok(Shot { end: next, action: action + step_action, how: ShotEnd::Crossed, path, max_energy });
            }
            let w = (-rho - z[0]) / (next[0] - z[0]);
            let mut end = z;
            for i in 0..4 {
                end[i] += w * (next[i] - z[i]);
            }
            let a = action + w * step_action;
            if record {
                push(&mut path, &end, t + w * h, a);
            }
            return Ok(Shot { end, action: a, how: ShotEnd::Level, path, max_energy });
        }
        action += step_action;
        t += h;
        z = next;
        if record {
            push(&mut path, &z, t, action);
        }
        peak = peak.max(z[0]);
        if z[0] < peak - 1e-3 && peak > -0.5 + 10.0 * DELTA_INIT {
            return Ok(Shot { end: z, action, how: ShotEnd::TurnedBack, path, max_energy });
        }
    }
    Err(Error::Budget("Hamiltonian shot did not reach the unstable orbit".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstantonPoint {
    pub t: f64,
    pub r: f64,
    pub phi: f64,
    pub p_r: f64,
    pub p_phi: f64,
    /// Momentum integral accumulated up to this point.
    pub action: f64,
}

/// The minimizer of the rate function between the orbits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstantonPath {
    pub points: Vec<InstantonPoint>,
    /// `I∞`, including the linearized end segments.
    pub action: f64,
    /// Shooting parameter: phase of the start on the unstable fiber.
    pub phi_init: f64,
    /// `(φ_init, miss)` samples of the shooting scan.
    pub miss_scan: Vec<(f64, f64)>,
    /// True when the miss function vanishes identically (the manifolds
    /// coincide, as for a φ-independent drift).
    pub degenerate: bool,
    pub max_energy_error: f64,
    /// Contribution of the two linearized end segments.
    pub tail_action: f64,
}

impl InstantonPath {
    /// Phase at which the instanton crosses `r = −δ`, reduced mod 1.
    pub fn s_star(&self, delta: f64) -> Result<f64> {
        let i = self
            .points
            .iter()
            .position(|p| p.r >= -delta)
            .ok_or_else(|| Error::InvalidParameter(format!("instanton stops before r = −{delta}")))?;
        if i == 0 {
            return Err(Error::InvalidParameter(format!("δ = {delta} is beyond the start of the path")));
        }
        let (a, b) = (&self.points[i - 1], &self.points[i]);
        let w = (-delta - a.r) / (b.r - a.r);
        Ok((a.phi + w * (b.phi - a.phi)).rem_euclid(1.0))
    }

    /// Rate function of the sampled path plus the linearized end segments.
    pub fn lagrangian_action(&self, spec: &SystemSpec) -> Result<f64> {
        let samples: Vec<(f64, f64, f64)> = self.points.iter().map(|p| (p.t, p.r, p.phi)).collect();
        Ok(rate_function(&samples, spec)? + self.tail_action)
    }

    pub fn max_abs_hamiltonian(&self, spec: &SystemSpec) -> f64 {
        self.points
            .iter()
            .map(|p| hamiltonian([p.r, p.phi], [p.p_r, p.p_phi], spec).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["phi", "r", "p_r", "p_phi"])?;
        for p in &self.points {
            out.write_record(&[p.phi.to_string(), p.r.to_string(), p.p_r.to_string(), p.p_phi.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Point of the stable manifold of the unstable orbit on the level
/// `r = −rho`, reached by integrating backward in time from its linearized
/// fiber at `r = −FIBER_START` and phase `psi`. Returns `(φ, p_r)`.
fn stable_manifold_point(spec: &SystemSpec, geometry: &OrbitGeometry, psi: f64, rho: f64) -> Result<(f64, f64)> {
    let r = -FIBER_START;
    let p_r = FIBER_START / (geometry.constants.t_plus * geometry.h(psi));
    let d = spec.diffusion(r, psi);
    let f = spec.drift(r, psi);
    let p_phi = -(0.5 * d[0][0] * p_r * p_r + f[0] * p_r) / (f[1] + d[0][1] * p_r);
    let h = -HAMILTON_STEP / geometry.constants.lambda_plus;
    let mut z = [r, psi, p_r, p_phi];
    for _ in 0..(200.0 / HAMILTON_STEP) as usize {
        let next = rk4_step(&z, h, spec);
        if next[0] <= -rho {
            let w = (-rho - z[0]) / (next[0] - z[0]);
            return Ok((z[1] + w * (next[1] - z[1]), z[2] + w * (next[2] - z[2])));
        }
        if !next.iter().all(|v| v.is_finite()) || next[0] > 0.0 {
            break;
        }
        z = next;
    }
    Err(Error::Numerical("backward shot along the stable manifold failed".into()))
}

/// `p_r` of the stable manifold of the unstable orbit at `(−rho, phi)`:
/// the fiber phase is adjusted by secant iteration until the backward shot
/// lands at `phi`.
fn stable_manifold_momentum(spec: &SystemSpec, geometry: &OrbitGeometry, phi: f64, rho: f64) -> Result<f64> {
    let mut psi0 = phi;
    let (mut e0, mut p) = {
        let (ph, p) = stable_manifold_point(spec, geometry, psi0, rho)?;
        (ph - phi, p)
    };
    let mut psi1 = psi0 - e0;
    for _ in 0..50 {
        let (ph, p1) = stable_manifold_point(spec, geometry, psi1, rho)?;
        let e1 = ph - phi;
        p = p1;
        if e1.abs() < 1e-13 {
            break;
        }
        let slope = if (e1 - e0).abs() > 0.0 { (e1 - e0) / (psi1 - psi0) } else { 1.0 };
        psi0 = psi1;
        e0 = e1;
        psi1 -= e1 / slope;
    }
    Ok(p)
}

/// Miss of the shot started at phase `phi`: its momentum excess over the
/// stable manifold of the unstable orbit on the level `r = −ρ`; shots that
/// turn back before the level count as negative.
fn miss(spec: &SystemSpec, geometry: &OrbitGeometry, phi: f64) -> Result<(f64, f64)> {
    let (z0, a0) = initial_point(spec, phi);
    let shot = shoot(spec, geometry.constants.lambda_plus, z0, a0, MISS_LEVEL, false)?;
    let m = match shot.how {
        ShotEnd::Level => shot.end[2] - stable_manifold_momentum(spec, geometry, shot.end[1], MISS_LEVEL)?,
        _ => fiber_offset(&shot.end, geometry).min(-f64::EPSILON),
    };
    Ok((m, shot.action))
}

/// Shooting for the heteroclinic connection: scan the phase of the start
/// on the unstable fiber of the stable orbit, bisect sign changes of the
/// miss, and keep the root of least action.
pub fn find_instanton(spec: &SystemSpec, geometry: &OrbitGeometry) -> Result<InstantonPath> {
    let lambda = geometry.constants.lambda_plus;
    let mut scan = Vec::with_capacity(SCAN_POINTS + 1);
    for k in 0..=SCAN_POINTS {
        let phi = k as f64 / SCAN_POINTS as f64;
        scan.push((phi, miss(spec, geometry, phi)?.0));
    }
    let scale = scan.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
    let degenerate = scale < DEGENERATE_MISS;
    let mut roots = Vec::new();
    if degenerate {
        roots.push(0.0);
    } else {
        for w in scan.windows(2).take(SCAN_POINTS) {
            let ((mut lo, mut mlo), (mut hi, _)) = (w[0], w[1]);
            if mlo == 0.0 {
                roots.push(lo);
                continue;
            }
            if mlo.signum() == w[1].1.signum() {
                continue;
            }
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (mm, _) = miss(spec, geometry, mid)?;
                if mm.signum() == mlo.signum() {
                    lo = mid;
                    mlo = mm;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-14 {
                    break;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
    }
    if roots.is_empty() {
        return Err(Error::Structural(
            "no sign change of the miss function: manifolds do not intersect transversally in this regime".into(),
        ));
    }
    let mut best: Option<InstantonPath> = None;
    for phi_init in roots {
        let (z0, a0) = initial_point(spec, phi_init);
        let shot = shoot(spec, lambda, z0, a0, DELTA_CUT, true)?;
        let end = shot.end;
        let tail = a0 + end[0] * end[0] / (2.0 * geometry.constants.t_plus * geometry.h(end[1]));
        let action = shot.action + end[0] * end[0] / (2.0 * geometry.constants.t_plus * geometry.h(end[1]));
        let cand = InstantonPath {
            points: shot.path,
            action,
            phi_init,
            miss_scan: scan.clone(),
            degenerate,
            max_energy_error: shot.max_energy,
            tail_action: tail,
        };
        if best.as_ref().is_none_or(|b| cand.action < b.action) {
            best = Some(cand);
        }
    }
    Ok(best.expect("at least one root"))
}

/// A crossing of the level `r = −δ` by a member of the unstable-manifold
/// family of the stable orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachPoint {
    pub phi_init: f64,
    /// Phase of the crossing.
    pub phi_hat: f64,
    pub action: f64,
    /// False for members that turned back and cross the level downwards.
    pub upward: bool,
}

/// Crossings of `r = −δ` by the member started at `phi_init`: the first
/// upward one, and the downward one of a member turning back above the
/// level. Members crossing the unstable orbit are stopped there.
pub fn reach_points(spec: &SystemSpec, constants: &OrbitConstants, phi_init: f64, delta: f64) -> Result<Vec<ReachPoint>> {
    let (mut z, mut action) = initial_point(spec, phi_init);
    let h = HAMILTON_STEP / constants.lambda_plus;
    let steps = (200.0 / HAMILTON_STEP) as usize;
    let mut out = Vec::new();
    let mut peak = z[0];
    for _ in 0..steps {
        let next = rk4_step(&z, h, spec);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { t: 0.0, r: next[0], phi: next[1] });
        }
        let step_action = 0.5 * ((z[2] + next[2]) * (next[0] - z[0]) + (z[3] + next[3]) * (next[1] - z[1]));
        let (lo, hi) = (z[0] + delta, next[0] + delta);
        if lo.signum() != hi.signum() && hi != 0.0 {
            let w = -lo / (hi - lo);
            out.push(ReachPoint {
                phi_init,
                phi_hat: z[1] + w * (next[1] - z[1]),
                action: action + w * step_action,
                upward: hi > lo,
            });
            if hi < lo {
                return Ok(out);
            }
        }
        action += step_action;
        z = next;
        peak = peak.max(z[0]);
        let turned = z[0] < peak - 1e-3 && peak > -0.5 + 10.0 * DELTA_INIT;
        if z[0] >= 0.0 || (turned && peak < -delta) || z[0] < peak - 0.25 {
            return Ok(out);
        }
    }
    Err(Error::Budget("Hamiltonian shot neither crossed nor left the level".into()))
}

/// Crossings of `r = −δ` by the family sampled at `n` uniform phases plus
/// phases accumulating, on both sides, at each connection with the
/// unstable orbit (members linger near the orbit and cross the level at
/// every phase on their way down) and at each edge of the arc of members
/// reaching the level (their crossing phase runs off quickly).
pub fn reach_level_scan(spec: &SystemSpec, constants: &OrbitConstants, delta: f64, n: usize) -> Result<Vec<ReachPoint>> {
    let lambda = constants.lambda_plus;
    let crosses = |phi: f64| -> Result<bool> {
        let (z0, a0) = initial_point(spec, phi);
        Ok(matches!(shoot(spec, lambda, z0, a0, 0.0, false)?.how, ShotEnd::Crossed))
    };
    let reaches = |phi: f64| -> Result<bool> {
        let (z0, a0) = initial_point(spec, phi);
        Ok(matches!(shoot(spec, lambda, z0, a0, delta, false)?.how, ShotEnd::Level))
    };
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let mut phases: Vec<f64> = grid[..n].to_vec();
    // connections with the orbit, then the edges of the arc reaching the level
    for test in [&crosses as &dyn Fn(f64) -> Result<bool>, &reaches] {
        let class = grid.iter().map(|&p| test(p)).collect::<Result<Vec<_>>>()?;
        for k in 0..n {
            if class[k] == class[k + 1] {
                continue;
            }
            let (mut lo, mut hi) = (grid[k], grid[k + 1]);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if test(mid)? == class[k] {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let root = 0.5 * (lo + hi);
            for j in 0..=NEAR_ROOT_POINTS {
                let off = 10f64.powf(-2.0 - 8.0 * j as f64 / NEAR_ROOT_POINTS as f64);
                phases.push(root - off);
                phases.push(root + off);
            }
        }
    }
    phases.sort_by(f64::total_cmp);
    phases.dedup();
    let mut members = phases
        .into_iter()
        .map(|phi| Ok((phi, reach_points(spec, constants, phi, delta)?)))
        .collect::<Result<Vec<_>>>()?;
    // bisect between neighbours whose matching crossings lie far apart
    let far = |a: &[ReachPoint], b: &[ReachPoint]| {
        a.iter().any(|p| b.iter().any(|q| p.upward == q.upward && (p.phi_hat - q.phi_hat).abs() > REACH_GAP))
    };
    for _ in 0..30 {
        let mut fresh = Vec::new();
        for w in members.windows(2) {
            let ((p0, c0), (p1, c1)) = (&w[0], &w[1]);
            if p1 - p0 > 1e-12 && far(c0, c1) {
                let mid = 0.5 * (p0 + p1);
                fresh.push((mid, reach_points(spec, constants, mid, delta)?));
            }
        }
        if fresh.is_empty() {
            break;
        }
        members.extend(fresh);
        members.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(members.into_iter().flat_map(|(_, c)| c).collect())
}

/// Least action over the crossings falling into each of `bins` equal cells
/// of the crossing phase mod 1; `None` for empty cells.
pub fn reach_level_envelope(points: &[ReachPoint], bins: usize) -> Vec<Option<f64>> {
    let mut out: Vec<Option<f64>> = vec![None; bins];
    for p in points {
        let i = ((p.phi_hat.rem_euclid(1.0) * bins as f64) as usize).min(bins - 1);
        out[i] = Some(out[i].map_or(p.action, |a: f64| a.min(p.action)));
    }
    out
}

/// Quasipotential at the boundary phases `phases` of the unstable orbit.
///
/// For each phase, members of the unstable-manifold family that cross the
/// unstable orbit are followed towards the instanton; among those crossing
/// at the prescribed phase (mod 1) with ever more windings the action
/// decreases to its infimum, which is reported once successive windings
/// agree to 1e−9. When the manifolds coincide every member connects to the
/// orbit and the value is the instanton action.
pub fn quasipotential_on_boundary(
    spec: &SystemSpec,
    geometry: &OrbitGeometry,
    instanton: &InstantonPath,
    phases: &[f64],
) -> Result<Vec<f64>> {
    if instanton.degenerate {
        return Ok(vec![instanton.action; phases.len()]);
    }
    let lambda = geometry.constants.lambda_plus;
    let root = instanton.phi_init;
    let cross = |phi: f64| -> Result<Option<(f64, f64)>> {
        let (z0, a0) = initial_point(spec, phi);
        let shot = shoot(spec, lambda, z0, a0, 0.0, false)?;
        Ok(match shot.how {
            ShotEnd::Crossed => Some((shot.end[1], shot.action)),
            _ => None,
        })
    };
    // side of the root whose shots cross the unstable orbit
    let eta0 = 1e-3;
    let side = if cross(root + eta0)?.is_some() {
        1.0
    } else if cross(root - eta0)?.is_some() {
        -1.0
    } else {
        return Err(Error::Numerical("no crossing shots next to the instanton".into()));
    };
    let mut values = Vec::with_capacity(phases.len());
    for &target in phases {
        // crossing phase grows without bound as η → 0; walk η down and
        // bisect each time it passes target + k
        let mut eta = eta0;
        let (mut prev_phi, _) = cross(root + side * eta)?.expect("crossing side");
        let mut last = f64::NAN;
        let mut found = None;
        while eta > 1e-13 {
            let eta_next = eta * 0.5;
            let Some((phi_next, _)) = cross(root + side * eta_next)? else { break };
            let k = (prev_phi - target).ceil();
            if phi_next >= target + k && prev_phi < target + k {
                let goal = target + k;
                let (mut lo, mut hi) = (eta_next, eta);
                let mut act = f64::NAN;
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    match cross(root + side * mid)? {
                        Some((p, a)) => {
                            act = a;
                            if p >= goal {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                        }
                        None => lo = mid,
                    }
                    if hi - lo < 1e-15 * hi {
                        break;
                    }
                }
                if (act - last).abs() < 1e-9 {
                    found = Some(act);
                    break;
                }
                last = act;
            }
            prev_phi = phi_next;
            eta = eta_next;
        }
        values.push(found.unwrap_or(last));
    }
    Ok(values)
}

/// The curves `Γ^s_±` as offsets from the unstable orbit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaCurves {
    pub s: f64,
    pub delta: f64,
    pub minus: PeriodicCurve,
    pub plus: PeriodicCurve,
    /// Largest difference between the curves built from `δ` and `δ/2`.
    pub refinement_error: f64,
}

pub const GAMMA_POINTS: usize = 512;

impl GammaCurves {
    pub fn levels(&self) -> (crate::dynamics::Level, crate::dynamics::Level) {
        use crate::dynamics::Level;
        use std::sync::Arc;
        (Level::Tabulated(Arc::new(self.minus.clone())), Level::Tabulated(Arc::new(self.plus.clone())))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["phi", "r_minus", "r_plus"])?;
        let n = self.minus.values.len();
        for i in 0..n {
            let phi = i as f64 / n as f64;
            out.write_record(&[phi.to_string(), self.minus.values[i].to_string(), self.plus.values[i].to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Image of `{r = sign·δ√h_per(φ)}` under the deterministic flow after
/// θ-time `u`, resampled on a uniform φ grid.
fn flow_curve(spec: &SystemSpec, geometry: &OrbitGeometry, sign: f64, delta: f64, u: f64, n: usize) -> Result<PeriodicCurve> {
    let dphi = HAMILTON_STEP / geometry.lambda_t();
    let rhs = |r: f64, phi: f64| {
        let f = spec.drift(r, phi);
        f[0] / f[1]
    };
    let mut pts = Vec::with_capacity(n);
    for i in 0..n {
        let phi0 = i as f64 / n as f64;
        let phi1 = geometry.theta_inverse(geometry.theta(phi0) + u);
        let steps = ((phi1 - phi0) / dphi).ceil().max(1.0) as usize;
        let h = (phi1 - phi0) / steps as f64;
        let mut r = sign * delta * geometry.h(phi0).sqrt();
        let mut phi = phi0;
        for _ in 0..steps {
            let k1 = rhs(r, phi);
            let k2 = rhs(r + 0.5 * h * k1, phi + 0.5 * h);
            let k3 = rhs(r + 0.5 * h * k2, phi + 0.5 * h);
            let k4 = rhs(r + h * k3, phi + h);
            r += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            phi += h;
            if !(r * sign > 0.0 && r.abs() < 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "Γ curve leaves the half-period strip: θ-time {u:.3} too long for δ = {delta}"
                )));
            }
        }
        pts.push((phi1.rem_euclid(1.0), r));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let m = pts.len();
    Ok(PeriodicCurve::from_fn(n, |phi| {
        // periodic linear interpolation through the sorted images
        let j = pts.partition_point(|p| p.0 <= phi);
        let (a, b) = if j == 0 {
            ((pts[m - 1].0 - 1.0, pts[m - 1].1), pts[0])
        } else if j == m {
            (pts[m - 1], (pts[0].0 + 1.0, pts[0].1))
        } else {
            (pts[j - 1], pts[j])
        };
        a.1 + (phi - a.0) / (b.0 - a.0) * (b.1 - a.1)
    }))
}

/// `Γ^s_± = lim_{δ→0}` of the flow of `{r = ±δ√h_per}` for θ-time `s − log δ`,
/// evaluated at `δ` and checked against `δ/2`.
pub fn gamma_s_curves(spec: &SystemSpec, geometry: &OrbitGeometry, s: f64, delta: f64) -> Result<GammaCurves> {
    if !(delta > 0.0 && delta < 0.1) {
        return Err(Error::InvalidParameter(format!("δ = {delta} must be small and positive")));
    }
    let n = GAMMA_POINTS;
    let build = |d: f64| -> Result<(PeriodicCurve, PeriodicCurve)> {
        let u = s - d.ln();
        Ok((flow_curve(spec, geometry, -1.0, d, u, n)?, flow_curve(spec, geometry, 1.0, d, u, n)?))
    };
    let (minus, plus) = build(delta)?;
    let (m2, p2) = build(0.5 * delta)?;
    let refinement_error = minus.max_abs_difference(&m2).max(plus.max_abs_difference(&p2));
    Ok(GammaCurves { s, delta, minus, plus, refinement_error })
}

/// `Γ^s_+` level at ε = 0 for the Melnikov system: `arctan((√π/2)e^s)/π`.
pub fn melnikov_flat_gamma(s: f64) -> f64 {
    ((std::f64::consts::PI.sqrt() / 2.0) * s.exp()).atan() / std::f64::consts::PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_melnikov_system;
    use std::f64::consts::PI;

    fn geometry(eps: f64) -> (SystemSpec, OrbitGeometry) {
        let s = build_melnikov_system(eps, 1.0).unwrap();
        let g = OrbitGeometry::new(&s).unwrap();
        (s, g)
    }

    #[test]
    fn hamiltonian_examples() {
        let (s, _) = geometry(0.0);
        assert_eq!(hamiltonian([0.3, 0.2], [0.0, 0.0], &s), 0.0);
        assert!((hamiltonian([0.25, 0.0], [1.0, 0.0], &s) - 1.5).abs() < 1e-14);
        let v = ham_vector_field([0.3, 0.2], [0.0, 0.0], &s);
        assert_eq!((v[2], v[3]), (0.0, 0.0));
    }

    #[test]
    fn flow_conserves_energy() {
        let (s, _) = geometry(0.05);
        let mut z = [-0.3, 0.1, 0.7, -0.2];
        let h0 = energy(&z, &s);
        for _ in 0..1000 {
            z = rk4_step(&z, 1e-3, &s);
        }
        assert!((energy(&z, &s) - h0).abs() < 1e-8);
    }

    #[test]
    fn flow_lines_cost_nothing() {
        let (s, _) = geometry(0.05);
        let mut path = vec![(0.0, -0.3, 0.0)];
        let h = 1e-3;
        for i in 0..2000 {
            let (t, r, p) = path[i];
            let z = rk4_step(&[r, p, 0.0, 0.0], h, &s);
            path.push((t + h, z[0], z[1]));
        }
        assert!(rate_function(&path, &s).unwrap() < 1e-10);
    }

    #[test]
    fn straight_path_action_has_interior_minimum_in_duration() {
        let (s, _) = geometry(0.0);
        let action = |t_total: f64| {
            let n = 4000;
            let path: Vec<_> = (0..=n)
                .map(|i| {
                    let t = t_total * i as f64 / n as f64;
                    (t, -0.5 + 0.5 * t / t_total, t)
                })
                .collect();
            rate_function(&path, &s).unwrap()
        };
        let grid: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&t| action(t)).collect();
        let k = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        assert!(k > 0 && k < vals.len() - 1, "minimum at the grid edge: {k}");
    }

    #[test]
    fn singular_diffusion_is_rejected() {
        let s = SystemSpec::new("degenerate", |_, _| [0.0, 1.0], |_, _| [[1.0, 0.0], [0.0, 0.0]]);
        let path = [(0.0, 0.0, 0.0), (0.1, 0.1, 0.1), (0.2, 0.2, 0.2)];
        assert!(matches!(rate_function(&path, &s), Err(Error::Structural(_))));
    }

    #[test]
    fn melnikov_instanton_oracle() {
        let (s, g) = geometry(0.0);
        let inst = find_instanton(&s, &g).unwrap();
        assert!(inst.degenerate);
        for p in &inst.points {
            assert!((p.p_r + 2.0 * (2.0 * PI * p.r).sin()).abs() < 1e-5, "{p:?}");
            assert!(p.p_phi.abs() < 1e-5);
        }
        assert!((inst.action - 2.0 / PI).abs() < 1e-5, "{}", inst.action);
        assert!(inst.max_abs_hamiltonian(&s) < 1e-6);
        let lag = inst.lagrangian_action(&s).unwrap();
        assert!((lag - inst.action).abs() < 1e-5, "{lag} vs {}", inst.action);
        let first = inst.points.first().unwrap();
        let last = inst.points.last().unwrap();
        assert!((first.r + 0.5).abs() <= DELTA_INIT + 1e-12 && last.r.abs() <= DELTA_CUT + 1e-12);
    }

    #[test]
    fn perturbed_instanton_is_transversal() {
        let (s, g) = geometry(0.05);
        let inst = find_instanton(&s, &g).unwrap();
        assert!(!inst.degenerate);
        assert!(inst.max_abs_hamiltonian(&s) < 1e-6);
        let lag = inst.lagrangian_action(&s).unwrap();
        assert!((lag - inst.action).abs() < 1e-5);
        // shifting by a period leaves the action unchanged
        let (z0, a0) = initial_point(&s, inst.phi_init + 1.0);
        let shifted = shoot(&s, g.constants.lambda_plus, z0, a0, DELTA_CUT, false).unwrap();
        let end = shifted.end;
        let a = shifted.action + end[0] * end[0] / (2.0 * g.constants.t_plus * g.h(end[1]));
        assert!((a - inst.action).abs() < 1e-9);
        let s_star = inst.s_star(0.05).unwrap();
        assert!((0.0..1.0).contains(&s_star));
    }

    #[test]
    fn reach_level_action_is_periodic_and_unimodal() {
        let (s, g) = geometry(0.05);
        let pts = reach_level_scan(&s, &g.constants, 0.05, 64).unwrap();
        // the family shifted by one period crosses one period later at the same cost
        let on_grid = pts.iter().filter(|p| (p.phi_init * 64.0).fract() == 0.0);
        for p in on_grid.step_by(5) {
            let q = reach_points(&s, &g.constants, p.phi_init + 1.0, 0.05).unwrap();
            let q = q.iter().find(|q| q.upward == p.upward).unwrap();
            assert!((q.action - p.action).abs() < 1e-9);
            assert!((q.phi_hat - p.phi_hat - 1.0).abs() < 1e-9, "{p:?} {q:?}");
        }
        // the modulation P = (I∞ − I)/δ² is nonnegative, with one maximum per period
        let i_inf = find_instanton(&s, &g).unwrap().action;
        let env = reach_level_envelope(&pts, 32);
        assert!(env.iter().all(|a| a.is_some()), "{env:?}");
        let p: Vec<f64> = env.into_iter().flatten().map(|a| (i_inf - a) / 0.0025).collect();
        assert!(p.iter().all(|&v| v > -1e-4), "{p:?}");
        let n = p.len();
        let peaks = (0..n)
            .filter(|&i| p[i] > 1e-2 && p[i] > p[(i + n - 1) % n] && p[i] > p[(i + 1) % n])
            .count();
        assert_eq!(peaks, 1, "{p:?}");
    }

    #[test]
    fn quasipotential_is_constant_on_the_unstable_orbit() {
        let (s, g) = geometry(0.0);
        let inst = find_instanton(&s, &g).unwrap();
        let v = quasipotential_on_boundary(&s, &g, &inst, &[0.0, 0.25, 0.5]).unwrap();
        assert!(v.iter().all(|x| (x - 2.0 / PI).abs() < 1e-5));
    }

    #[test]
    fn quasipotential_is_constant_with_split_manifolds() {
        let (s, g) = geometry(0.05);
        let inst = find_instanton(&s, &g).unwrap();
        let phases: Vec<f64> = (0..8).map(|k| k as f64 / 8.0).collect();
        let v = quasipotential_on_boundary(&s, &g, &inst, &phases).unwrap();
        assert!(v.iter().all(|x| (x - inst.action).abs() < 1e-4), "{v:?} vs {}", inst.action);
        assert!(inst.action > 0.0);
    }

    #[test]
    fn gamma_curves_at_zero_eps() {
        let (s, g) = geometry(0.0);
        for &sv in &[-1.0, 0.0, 1.0] {
            let c = gamma_s_curves(&s, &g, sv, 1e-3).unwrap();
            let want = melnikov_flat_gamma(sv);
            for i in 0..c.plus.values.len() {
                assert!((c.plus.values[i] - want).abs() < 1e-5, "s={sv}: {} vs {want}", c.plus.values[i]);
                assert!((c.minus.values[i] + want).abs() < 1e-5);
            }
            assert!(c.refinement_error < 1e-4);
        }
    }

    #[test]
    fn gamma_curves_small_s_linearization_and_order() {
        let (s, g) = geometry(0.05);
        let lo = gamma_s_curves(&s, &g, -4.0, 1e-4).unwrap();
        let hi = gamma_s_curves(&s, &g, -3.0, 1e-4).unwrap();
        for i in 0..GAMMA_POINTS {
            let phi = i as f64 / GAMMA_POINTS as f64;
            let lin = (-4.0f64).exp() * g.h(phi).sqrt();
            assert!((lo.plus.values[i] - lin).abs() < 0.05 * lin);
            assert!(lo.plus.values[i] < hi.plus.values[i]);
            assert!(lo.minus.values[i] > hi.minus.values[i]);
        }
        assert!(hi.refinement_error < 1e-4);
        let far = gamma_s_curves(&s, &g, 6.0, 1e-4).unwrap();
        assert!(far.plus.values.iter().all(|r| (r - 0.5).abs() < 1e-3));
    }
}

