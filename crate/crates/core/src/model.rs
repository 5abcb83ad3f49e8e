//! Planar periodic SDE systems and their orbit geometry.
//!
//! A system is `dr = f_r dt + σ g_r·dW`, `dφ = f_φ dt + σ g_φ·dW` on the
//! cylinder, 1-periodic in both variables, with unstable orbits at integer `r`
//! and stable orbits at half-integers. Two noise channels are used; any `k`
//! channel model has the same law as the two-channel one built from a square
//! root of its diffusion matrix.

use crate::error::{Error, Result};
use crate::quad;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

pub type Field = Arc<dyn Fn(f64, f64) -> [f64; 2] + Send + Sync>;
pub type Matrix2Field = Arc<dyn Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Finite-difference step for derivatives of user fields.
pub const FD_STEP: f64 = 1e-5;
/// Number of φ-points in orbit tabulations.
pub const TABLE_POINTS: usize = 1024;

/// Radial dynamics that do not depend on φ, with radial noise uncorrelated
/// from the phase noise. Enables the exact 1D conditioning used by the slip
/// sampler.
#[derive(Clone)]
pub struct RadialProfile {
    pub drift: ScalarFn,
    pub diffusion: ScalarFn,
}

#[derive(Clone)]
pub struct SystemSpec {
    pub name: String,
    drift: Field,
    noise: Matrix2Field,
    jacobian: Option<Matrix2Field>,
    constant_noise: Option<[[f64; 2]; 2]>,
    radial: Option<RadialProfile>,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec").field("name", &self.name).finish_non_exhaustive()
    }
}

impl SystemSpec {
    /// A system from closures. `noise` returns the rows `[g_r, g_φ]`.
    pub fn new(
        name: impl Into<String>,
        drift: impl Fn(f64, f64) -> [f64; 2] + Send + Sync + 'static,
        noise: impl Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
    ) -> Self {
        SystemSpec {
            name: name.into(),
            drift: Arc::new(drift),
            noise: Arc::new(noise),
            jacobian: None,
            constant_noise: None,
            radial: None,
        }
    }

    /// Supply the analytic Jacobian `∂(f_r, f_φ)/∂(r, φ)`.
    pub fn with_jacobian(
        mut self,
        jac: impl Fn(f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static,
    ) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    /// Declare the noise rows constant (skips evaluation and makes ∂D = 0).
    pub fn with_constant_noise(mut self, g: [[f64; 2]; 2]) -> Self {
        self.constant_noise = Some(g);
        self.noise = Arc::new(move |_, _| g);
        self
    }

    pub fn with_radial_profile(mut self, profile: RadialProfile) -> Self {
        self.radial = Some(profile);
        self
    }

    pub fn radial_profile(&self) -> Option<&RadialProfile> {
        self.radial.as_ref()
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    #[inline]
    pub fn drift(&self, r: f64, phi: f64) -> [f64; 2] {
        (self.drift)(r, phi)
    }

    #[inline]
    pub fn f_r(&self, r: f64, phi: f64) -> f64 {
        self.drift(r, phi)[0]
    }

    #[inline]
    pub fn f_phi(&self, r: f64, phi: f64) -> f64 {
        self.drift(r, phi)[1]
    }

    /// Noise rows `[g_r, g_φ]`.
    #[inline]
    pub fn noise(&self, r: f64, phi: f64) -> [[f64; 2]; 2] {
        match self.constant_noise {
            Some(g) => g,
            None => (self.noise)(r, phi),
        }
    }

    pub fn constant_noise(&self) -> Option<[[f64; 2]; 2]> {
        self.constant_noise
    }

    /// Diffusion matrix `D = g gᵀ`.
    pub fn diffusion(&self, r: f64, phi: f64) -> [[f64; 2]; 2] {
        let g = self.noise(r, phi);
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        let rp = dot(g[0], g[1]);
        [[dot(g[0], g[0]), rp], [rp, dot(g[1], g[1])]]
    }

    /// Jacobian of the drift, analytic when supplied.
    pub fn jacobian(&self, r: f64, phi: f64) -> [[f64; 2]; 2] {
        if let Some(j) = &self.jacobian {
            return j(r, phi);
        }
        let h = FD_STEP;
        let (a, b) = (self.drift(r + h, phi), self.drift(r - h, phi));
        let (c, d) = (self.drift(r, phi + h), self.drift(r, phi - h));
        [
            [(a[0] - b[0]) / (2.0 * h), (c[0] - d[0]) / (2.0 * h)],
            [(a[1] - b[1]) / (2.0 * h), (c[1] - d[1]) / (2.0 * h)],
        ]
    }

    /// `[∂_r D, ∂_φ D]`; zero for constant noise.
    pub fn diffusion_gradient(&self, r: f64, phi: f64) -> [[[f64; 2]; 2]; 2] {
        if self.constant_noise.is_some() {
            return [[[0.0; 2]; 2]; 2];
        }
        let h = FD_STEP;
        let diff = |p: [[f64; 2]; 2], m: [[f64; 2]; 2]| {
            let mut out = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    out[i][j] = (p[i][j] - m[i][j]) / (2.0 * h);
                }
            }
            out
        };
        [
            diff(self.diffusion(r + h, phi), self.diffusion(r - h, phi)),
            diff(self.diffusion(r, phi + h), self.diffusion(r, phi - h)),
        ]
    }

    /// `D_rr(0, φ)`, the radial diffusion on the unstable orbit.
    pub fn d_rr_unstable(&self, phi: f64) -> f64 {
        self.diffusion(0.0, phi)[0][0]
    }
}

/// Melnikov's example: `f_r = sin(2πr)[1 + ε sin(2πr) cos(2πφ)]`, `f_φ = ω`, `g = I`.
pub fn build_melnikov_system(eps: f64, omega: f64) -> Result<SystemSpec> {
    if !(eps.abs() < 0.5) {
        return Err(Error::InvalidParameter(format!(
            "melnikov: |eps| = {} must be < 0.5 to keep the orbit structure",
            eps.abs()
        )));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::InvalidParameter(format!("melnikov: omega = {omega} must be positive")));
    }
    let tau = 2.0 * PI;
    let mut spec = SystemSpec::new(
        format!("melnikov(eps={eps}, omega={omega})"),
        move |r, phi| {
            let s = (tau * r).sin();
            [s * (1.0 + eps * s * (tau * phi).cos()), omega]
        },
        |_, _| [[1.0, 0.0], [0.0, 1.0]],
    )
    .with_constant_noise([[1.0, 0.0], [0.0, 1.0]])
    .with_jacobian(move |r, phi| {
        let (s, c) = (tau * r).sin_cos();
        let (sp, cp) = (tau * phi).sin_cos();
        let drr = tau * c * (1.0 + 2.0 * eps * s * cp);
        let drp = -eps * s * s * tau * sp;
        [[drr, drp], [0.0, 0.0]]
    });
    if eps == 0.0 {
        spec = spec.with_radial_profile(RadialProfile {
            drift: Arc::new(move |r| (tau * r).sin()),
            diffusion: Arc::new(|_| 1.0),
        });
    }
    Ok(spec)
}

/// The washboard (Adler) model `ψ̇ = −ν + ε sin(2πψ)`, gradient of
/// `V(ψ) = νψ − ε∫₀^ψ sin(2πx) dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Washboard {
    pub nu: f64,
    pub eps: f64,
    pub omega: f64,
}

impl Washboard {
    pub fn new(nu: f64, eps: f64, omega: f64) -> Result<Self> {
        if !(nu.abs() < eps.abs()) {
            return Err(Error::InvalidParameter(format!(
                "washboard: |nu| = {} >= |eps| = {}: no phase-locked state",
                nu.abs(),
                eps.abs()
            )));
        }
        if !(omega > 0.0) {
            return Err(Error::InvalidParameter(format!("washboard: omega = {omega} must be positive")));
        }
        Ok(Washboard { nu, eps, omega })
    }

    pub fn potential(&self, psi: f64) -> f64 {
        self.nu * psi + self.eps * ((2.0 * PI * psi).cos() - 1.0) / (2.0 * PI)
    }

    /// Averaged drift `−V′(ψ)`.
    pub fn drift(&self, psi: f64) -> f64 {
        -self.nu + self.eps * (2.0 * PI * psi).sin()
    }

    /// Stationary points in [0,1): (unstable, stable).
    pub fn stationary_points(&self) -> (f64, f64) {
        let base = (self.nu / self.eps).asin() / (2.0 * PI);
        let a = base.rem_euclid(1.0);
        let b = (0.5 - base).rem_euclid(1.0);
        // unstable where the drift is increasing
        let slope = |p: f64| self.eps * (2.0 * PI * p).cos();
        if slope(a) > 0.0 {
            (a, b)
        } else {
            (b, a)
        }
    }
}

/// Washboard model plus its planar analogue with `φ̇ = ω`.
///
/// The planar form uses the coordinate `ψ(r) = ψ_u + r + c(1 − cos 2πr)/(2π)`,
/// which puts the unstable point at `r = 0` and the stable one at `r = ½`
/// while keeping period 1; the radial noise becomes `1/ψ′(r)`.
pub fn build_washboard_system(nu: f64, eps: f64, omega: f64) -> Result<(SystemSpec, Washboard)> {
    let wb = Washboard::new(nu, eps, omega)?;
    let (pu, ps) = wb.stationary_points();
    // stable point sits at r = ½, a fraction `gap` of a period above ψ_u
    let gap = (ps - pu).rem_euclid(1.0);
    let c = PI * (gap - 0.5);
    if c.abs() >= 0.95 {
        return Err(Error::InvalidParameter(format!(
            "washboard: stationary points too close (gap {gap:.4}) for a smooth periodic recoordinatization"
        )));
    }
    let tau = 2.0 * PI;
    let psi = move |r: f64| pu + r + c * (1.0 - (tau * r).cos()) / tau;
    let dpsi = move |r: f64| 1.0 + c * (tau * r).sin();
    let fr = move |r: f64| wb.drift(psi(r)) / dpsi(r);
    let spec = SystemSpec::new(
        format!("washboard(nu={nu}, eps={eps}, omega={omega})"),
        move |r, _| [fr(r), omega],
        move |r, _| [[1.0 / dpsi(r), 0.0], [0.0, 1.0]],
    )
    .with_radial_profile(RadialProfile {
        drift: Arc::new(fr),
        diffusion: Arc::new(move |r| 1.0 / (dpsi(r) * dpsi(r))),
    });
    Ok((spec, wb))
}

/// Builder selection for configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "builder", rename_all = "snake_case")]
pub enum SystemConfig {
    Melnikov { eps: f64, omega: f64 },
    Washboard { nu: f64, eps: f64, omega: f64 },
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig::Melnikov { eps: 0.05, omega: 1.0 }
    }
}

impl SystemConfig {
    pub fn build(&self) -> Result<SystemSpec> {
        match *self {
            SystemConfig::Melnikov { eps, omega } => build_melnikov_system(eps, omega),
            SystemConfig::Washboard { nu, eps, omega } => Ok(build_washboard_system(nu, eps, omega)?.0),
        }
    }
}

/// Outcome of the structural checks on a sampled grid.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub grid: usize,
    pub max_orbit_drift: f64,
    pub ellipticity_c1: f64,
    pub ellipticity_c2: f64,
    pub min_f_phi: f64,
    pub max_periodicity_error: f64,
    pub orbit_f_phi_variation: f64,
    pub pass: bool,
}

/// Check the structural assumptions on an `n × n` grid of `[-1,1) × [0,1)`.
pub fn validate(spec: &SystemSpec, n: usize) -> ValidationReport {
    let n = n.max(2);
    let mut max_orbit_drift: f64 = 0.0;
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    let mut min_f_phi = f64::INFINITY;
    let mut per: f64 = 0.0;
    let mut orbit_var: f64 = 0.0;
    for j in 0..n {
        let phi = j as f64 / n as f64;
        for k in -2..=2 {
            max_orbit_drift = max_orbit_drift.max(spec.f_r(k as f64 / 2.0, phi).abs());
        }
        for &r0 in &[0.0, 0.5, -0.5] {
            let v = (spec.f_phi(r0, phi) - spec.f_phi(r0, 0.0)).abs();
            orbit_var = orbit_var.max(v);
        }
        for i in 0..n {
            let r = -1.0 + 2.0 * i as f64 / n as f64;
            let d = spec.diffusion(r, phi);
            let tr = d[0][0] + d[1][1];
            let det = d[0][0] * d[1][1] - d[0][1] * d[1][0];
            let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
            c1 = c1.min(0.5 * tr - disc);
            c2 = c2.max(0.5 * tr + disc);
            let f = spec.drift(r, phi);
            min_f_phi = min_f_phi.min(f[1]);
            for (a, b) in [(r + 1.0, phi), (r, phi + 1.0)] {
                let g = spec.drift(a, b);
                let e = spec.diffusion(a, b);
                per = per
                    .max((g[0] - f[0]).abs())
                    .max((g[1] - f[1]).abs())
                    .max((e[0][0] - d[0][0]).abs())
                    .max((e[1][1] - d[1][1]).abs())
                    .max((e[0][1] - d[0][1]).abs());
            }
        }
    }
    let tol = 1e-10;
    ValidationReport {
        grid: n,
        max_orbit_drift,
        ellipticity_c1: c1,
        ellipticity_c2: c2,
        min_f_phi,
        max_periodicity_error: per,
        orbit_f_phi_variation: orbit_var,
        pass: max_orbit_drift < tol && c1 > 0.0 && min_f_phi > 0.0 && per < tol && orbit_var < tol,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitConstants {
    pub lambda_plus: f64,
    pub lambda_minus: f64,
    pub t_plus: f64,
    pub t_minus: f64,
}

impl OrbitConstants {
    /// `λ₊T₊`, the growth per period on the unstable orbit.
    pub fn lambda_t(&self) -> f64 {
        self.lambda_plus * self.t_plus
    }

    pub fn lambda_t_minus(&self) -> f64 {
        self.lambda_minus * self.t_minus
    }
}

fn periodic_mean(n: usize, f: impl Fn(f64) -> f64) -> f64 {
    (0..n).map(|j| f(j as f64 / n as f64)).sum::<f64>() / n as f64
}

/// Exponents and periods, using `n` trapezoid points in φ (spectrally
/// accurate for smooth periodic integrands).
pub fn compute_exponents_with(spec: &SystemSpec, n: usize) -> Result<OrbitConstants> {
    let report = validate(spec, 64);
    if !report.pass {
        return Err(Error::Structural(format!("system fails validation: {report:?}")));
    }
    let lp = periodic_mean(n, |phi| spec.jacobian(0.0, phi)[0][0]);
    let lm = -periodic_mean(n, |phi| spec.jacobian(0.5, phi)[0][0]);
    if !(lp > 0.0) {
        return Err(Error::Structural(format!("lambda_plus = {lp} is not positive")));
    }
    if !(lm > 0.0) {
        return Err(Error::Structural(format!("lambda_minus = {lm} is not positive")));
    }
    let tp = 1.0 / periodic_mean(n, |phi| spec.f_phi(0.0, phi));
    let tm = 1.0 / periodic_mean(n, |phi| spec.f_phi(0.5, phi));
    Ok(OrbitConstants { lambda_plus: lp, lambda_minus: lm, t_plus: tp, t_minus: tm })
}

pub fn compute_exponents(spec: &SystemSpec) -> Result<OrbitConstants> {
    compute_exponents_with(spec, 256)
}

/// The periodic solution of `h′ = 2ah − D(φ)` with `a = λ₊T₊`.
///
/// Values are computed from the one-period form of the backward integral,
/// `h(φ) = (1 − e^{−2a})⁻¹ ∫_φ^{φ+1} e^{2a(φ−s)} D(s) ds`, which sums the
/// geometric tail of the infinite-horizon integral exactly. Between grid
/// points the table is evaluated by its trigonometric interpolant.
#[derive(Debug, Clone)]
pub struct HPer {
    a: f64,
    table: Vec<f64>,
    /// (k, cosine coefficient, sine coefficient) of the retained modes.
    modes: Vec<(f64, f64, f64)>,
    pub residual: f64,
}

impl HPer {
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn rate(&self) -> f64 {
        self.a
    }

    /// `h(φ)` from the trigonometric interpolant.
    pub fn eval(&self, phi: f64) -> f64 {
        let x = 2.0 * PI * phi;
        self.modes.iter().map(|&(k, re, im)| {
            let (s, c) = (k * x).sin_cos();
            re * c + im * s
        }).sum()
    }

    /// `h′(φ)`.
    pub fn derivative(&self, phi: f64) -> f64 {
        let x = 2.0 * PI * phi;
        self.modes.iter().map(|&(k, re, im)| {
            let (s, c) = (k * x).sin_cos();
            2.0 * PI * k * (im * c - re * s)
        }).sum()
    }

    /// `h` at the table node nearest below `phi`, linearly interpolated.
    pub fn linear(&self, phi: f64) -> f64 {
        let n = self.table.len();
        let x = phi.rem_euclid(1.0) * n as f64;
        let i = (x.floor() as usize).min(n - 1);
        let w = x - i as f64;
        self.table[i] * (1.0 - w) + self.table[(i + 1) % n] * w
    }
}

fn h_direct(a: f64, d: &dyn Fn(f64) -> f64, phi: f64) -> f64 {
    let norm = -(-2.0 * a).exp_m1();
    let q = quad::integrate_panels(
        |s| (2.0 * a * (phi - s)).exp() * d(s),
        &[phi, phi + 0.125, phi + 0.25, phi + 0.5, phi + 1.0],
        1e-14,
    );
    q.value / norm
}

/// Solve for `h_per` on the unstable orbit.
pub fn solve_h_per(spec: &SystemSpec, constants: &OrbitConstants) -> Result<HPer> {
    let a = constants.lambda_t();
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("lambda_plus*T_plus = {a} must be positive")));
    }
    let d = |phi: f64| spec.d_rr_unstable(phi);
    h_per_from(a, &d)
}

/// Relative size below which Fourier modes of `h_per` are dropped.
const MODE_CUTOFF: f64 = 1e-13;

/// `h_per` for a given rate `a` and diffusion profile `d` (period 1).
pub fn h_per_from(a: f64, d: &dyn Fn(f64) -> f64) -> Result<HPer> {
    let n = TABLE_POINTS;
    let table: Vec<f64> = (0..n).map(|i| h_direct(a, d, i as f64 / n as f64)).collect();
    if table.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::Structural("h_per is not positive".into()));
    }
    // real DFT; keep modes clear of the table's quadrature and round-off
    // noise (≈ 2e-15 relative), which would otherwise add hundreds of
    // spurious terms to every evaluation
    let mut modes = Vec::new();
    let scale = table.iter().fold(0.0f64, |m, &h| m.max(h.abs()));
    for k in 0..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, &h) in table.iter().enumerate() {
            let x = 2.0 * PI * (k * j) as f64 / n as f64;
            re += h * x.cos();
            im += h * x.sin();
        }
        let w = if k == 0 || k == n / 2 { 1.0 } else { 2.0 } / n as f64;
        let (re, im) = (re * w, im * w);
        if (re * re + im * im).sqrt() > MODE_CUTOFF * scale {
            modes.push((k as f64, re, im));
        }
    }
    let mut h = HPer { a, table, modes, residual: 0.0 };
    // residual of the defining ODE on the grid, h′ by a five-point stencil
    let eta = 1e-3;
    let mut res: f64 = 0.0;
    for i in 0..n {
        let phi = i as f64 / n as f64;
        let f = |x: f64| h_direct(a, d, x);
        let dh = (f(phi - 2.0 * eta) - 8.0 * f(phi - eta) + 8.0 * f(phi + eta) - f(phi + 2.0 * eta))
            / (12.0 * eta);
        res = res.max((dh - 2.0 * a * h.table[i] + d(phi)).abs());
        if i % 16 != 0 {
            continue;
        }
        // interpolant must reproduce the direct value off-grid too
        let off = phi + 0.5 / n as f64;
        res = res.max((h.eval(off) - f(off)).abs());
    }
    h.residual = res;
    if res > 1e-7 {
        return Err(Error::Numerical(format!("h_per residual {res:.3e} too large")));
    }
    Ok(h)
}

/// Orbit geometry of the unstable orbit: `h_per` and the θ parametrizations.
#[derive(Debug, Clone)]
pub struct OrbitGeometry {
    pub constants: OrbitConstants,
    pub h_per: HPer,
    h0: f64,
    /// `(δ, s*_δ)` when the instanton crossing phase is known.
    pub s_star: Option<(f64, f64)>,
}

impl OrbitGeometry {
    pub fn new(spec: &SystemSpec) -> Result<Self> {
        let constants = compute_exponents(spec)?;
        let h_per = solve_h_per(spec, &constants)?;
        Ok(Self::from_parts(constants, h_per))
    }

    pub fn from_parts(constants: OrbitConstants, h_per: HPer) -> Self {
        let h0 = h_per.eval(0.0);
        OrbitGeometry { constants, h_per, h0, s_star: None }
    }

    pub fn with_s_star(mut self, delta: f64, s_star: f64) -> Self {
        self.s_star = Some((delta, s_star.rem_euclid(1.0)));
        self
    }

    pub fn lambda_t(&self) -> f64 {
        self.constants.lambda_t()
    }

    pub fn h(&self, phi: f64) -> f64 {
        self.h_per.eval(phi)
    }

    /// `θ(φ) = λ₊T₊φ − ½ log(h(φ) / (2h(0)²))`.
    pub fn theta(&self, phi: f64) -> f64 {
        self.lambda_t() * phi - 0.5 * (self.h(phi) / (2.0 * self.h0 * self.h0)).ln()
    }

    /// `θ′(φ) = D_rr(0,φ) / (2h(φ))`.
    pub fn theta_prime(&self, phi: f64) -> f64 {
        self.lambda_t() - 0.5 * self.h_per.derivative(phi) / self.h(phi)
    }

    /// Inverse of θ.
    pub fn theta_inverse(&self, theta: f64) -> f64 {
        let a = self.lambda_t();
        let mut lo = theta / a - 1.0;
        let mut hi = theta / a + 1.0;
        while self.theta(lo) > theta {
            lo -= 1.0;
        }
        while self.theta(hi) < theta {
            hi += 1.0;
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..100 {
            let g = self.theta(x) - theta;
            if g.abs() < 1e-14 * (1.0 + theta.abs()) {
                break;
            }
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - g / self.theta_prime(x);
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        x
    }

    /// Additive constant of θ_δ: `−log δ + log(h(s*_δ)/h(0))`.
    pub fn theta_delta_shift(&self, delta: f64) -> Result<f64> {
        let (_, s) = self.s_star.ok_or_else(|| {
            Error::InvalidParameter("theta_delta needs the instanton crossing phase s*".into())
        })?;
        Ok(-delta.ln() + (self.h(s) / self.h0).ln())
    }

    pub fn theta_delta(&self, phi: f64, delta: f64) -> Result<f64> {
        Ok(self.theta(phi) + self.theta_delta_shift(delta)?)
    }

    /// Scaled radial coordinate of the neighbourhood `{r = c√(2λ₊T₊h(φ))}`.
    pub fn scaled_level(&self, c: f64, phi: f64) -> f64 {
        c * (2.0 * self.lambda_t() * self.h(phi)).sqrt()
    }

    /// CSV rows `(phi, h_per, theta)` on the tabulation grid.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["phi", "h_per", "theta"])?;
        let n = self.h_per.table().len();
        for (i, h) in self.h_per.table().iter().enumerate() {
            let phi = i as f64 / n as f64;
            out.write_record(&[phi.to_string(), h.to_string(), self.theta(phi).to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn melnikov_examples() {
        let s = build_melnikov_system(0.0, 1.0).unwrap();
        for &phi in &[0.0, 0.3, 0.9] {
            assert!((s.f_r(0.25, phi) - 1.0).abs() < 1e-15);
        }
        let s = build_melnikov_system(0.1, 1.0).unwrap();
        assert!((s.f_r(0.25, 0.0) - 1.1).abs() < 1e-14);
        assert!(build_melnikov_system(0.5, 1.0).is_err());
        assert!(build_melnikov_system(0.1, 0.0).is_err());
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let s = build_melnikov_system(0.3, 1.4).unwrap();
        let plain = SystemSpec::new("fd", {
            let s = s.clone();
            move |r, p| s.drift(r, p)
        }, |_, _| [[1.0, 0.0], [0.0, 1.0]]);
        for &(r, p) in &[(0.1, 0.2), (-0.37, 0.81), (0.5, 0.0)] {
            let a = s.jacobian(r, p);
            let b = plain.jacobian(r, p);
            for i in 0..2 {
                for j in 0..2 {
                    assert!((a[i][j] - b[i][j]).abs() < 1e-7);
                }
            }
        }
    }

    #[test]
    fn exponents() {
        let c = compute_exponents(&build_melnikov_system(0.0, 1.0).unwrap()).unwrap();
        assert!((c.lambda_plus - 2.0 * PI).abs() < 1e-8);
        assert!((c.lambda_minus - 2.0 * PI).abs() < 1e-8);
        assert!((c.t_plus - 1.0).abs() < 1e-14);
        let s = build_melnikov_system(0.1, 1.0).unwrap();
        let c = compute_exponents(&s).unwrap();
        assert!((c.lambda_plus - 2.0 * PI).abs() < 1e-6);
        let c2 = compute_exponents_with(&s, 512).unwrap();
        assert!((c.lambda_plus - c2.lambda_plus).abs() < 1e-6);
        assert!((c.lambda_minus - c2.lambda_minus).abs() < 1e-6);
    }

    #[test]
    fn exponents_by_finite_differences() {
        let base = build_melnikov_system(0.0, 2.0).unwrap();
        let fd = SystemSpec::new("fd", move |r, p| base.drift(r, p), |_, _| [[1.0, 0.0], [0.0, 1.0]]);
        let c = compute_exponents(&fd).unwrap();
        assert!((c.lambda_plus - 2.0 * PI).abs() < 1e-8);
        assert!((c.t_plus - 0.5).abs() < 1e-14);
    }

    #[test]
    fn washboard_examples() {
        let wb = Washboard::new(0.0, 1.0, 1.0).unwrap();
        assert!((wb.potential(0.5) + 1.0 / PI).abs() < 1e-14);
        for &x in &[0.1, 0.3, 0.77] {
            assert!((wb.potential(x) - ((2.0 * PI * x).cos() - 1.0) / (2.0 * PI)).abs() < 1e-14);
        }
        let wb = Washboard::new(0.5, 1.0, 1.0).unwrap();
        let (u, s) = wb.stationary_points();
        assert!((u - 1.0 / 12.0).abs() < 1e-12);
        assert!((s - 5.0 / 12.0).abs() < 1e-12);
        assert!(Washboard::new(1.1, 1.0, 1.0).is_err());
        assert!(build_washboard_system(1.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn washboard_planar_form_is_valid() {
        for &(nu, eps) in &[(0.0, 1.0), (0.5, 1.0), (-0.3, 0.8)] {
            let (spec, wb) = build_washboard_system(nu, eps, 1.0).unwrap();
            assert!(validate(&spec, 64).pass, "nu={nu}");
            let c = compute_exponents(&spec).unwrap();
            // the exponent is coordinate invariant: −V″ at the unstable point
            let (u, _) = wb.stationary_points();
            let want = 2.0 * PI * eps * (2.0 * PI * u).cos();
            assert!((c.lambda_plus - want).abs() < 1e-7, "{} vs {}", c.lambda_plus, want);
        }
    }

    #[test]
    fn constructors_pass_validation() {
        for &e in &[0.0, 0.05, 0.2, -0.3] {
            let r = validate(&build_melnikov_system(e, 1.0).unwrap(), 64);
            assert!(r.pass && r.ellipticity_c1 > 0.99);
        }
    }

    #[test]
    fn h_per_constant_diffusion() {
        let g = OrbitGeometry::new(&build_melnikov_system(0.0, 1.0).unwrap()).unwrap();
        let want = 1.0 / (4.0 * PI);
        for &phi in &[0.0, 0.3, 0.999] {
            assert!((g.h(phi) - want).abs() < 1e-13);
        }
        assert!(g.h_per.residual < 1e-8);
        // θ for constant diffusion
        let a = 2.0 * PI;
        assert!((g.theta(0.4) - (a * 0.4 - 0.5 * a.ln())).abs() < 1e-12);
    }

    #[test]
    fn h_per_one_harmonic_oracle() {
        // h′ = 2ah − (1 + ½cos 2πφ): h = 1/(2a) + α cos + β sin with
        // 2aα − 2πβ = ½, 2πα + 2aβ = 0.
        let a = 2.0;
        let d = |phi: f64| 1.0 + 0.5 * (2.0 * PI * phi).cos();
        let h = h_per_from(a, &d).unwrap();
        let w = 2.0 * PI;
        let det = 4.0 * a * a + w * w;
        let alpha = 0.5 * 2.0 * a / det;
        let beta = -0.5 * w / det;
        for i in 0..50 {
            let phi = i as f64 / 37.0;
            let want = 1.0 / (2.0 * a) + alpha * (w * phi).cos() + beta * (w * phi).sin();
            assert!((h.eval(phi) - want).abs() < 1e-12, "phi={phi}");
        }
        assert!(h.residual < 1e-8);
        let geo = OrbitGeometry::from_parts(
            OrbitConstants { lambda_plus: a, lambda_minus: 1.0, t_plus: 1.0, t_minus: 1.0 },
            h,
        );
        for i in 0..20 {
            let phi = i as f64 / 20.0;
            assert!((geo.theta(phi + 1.0) - geo.theta(phi) - a).abs() < 1e-10);
            let eta = 1e-4;
            let fd = (geo.theta(phi + eta) - geo.theta(phi - eta)) / (2.0 * eta);
            assert!((fd - d(phi) / (2.0 * geo.h(phi))).abs() < 1e-6);
        }
        let x = geo.theta_inverse(3.7);
        assert!((geo.theta(x) - 3.7).abs() < 1e-12);
    }

    #[test]
    fn theta_delta_requires_s_star() {
        let g = OrbitGeometry::new(&build_melnikov_system(0.0, 1.0).unwrap()).unwrap();
        assert!(g.theta_delta(0.1, 0.05).is_err());
        let g = g.with_s_star(0.05, 0.25);
        let v = g.theta_delta(0.1, 0.05).unwrap();
        assert!((v - (g.theta(0.1) - 0.05f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let g = OrbitGeometry::new(&build_melnikov_system(0.0, 1.0).unwrap()).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("phi,h_per,theta\n"));
        assert_eq!(s.lines().count(), TABLE_POINTS + 1);
    }
}
