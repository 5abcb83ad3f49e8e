//! The random Poincaré map: radial positions sampled each time the phase
//! advances by one period, killed when the path leaves the strip
//! `−1 < r < 0` between two translates of the unstable orbit.

use crate::dynamics::{normal_pair, run_batch, step_with, SimConfig, State};
use crate::error::{Error, Result};
use crate::laws::{asymp_geometric_tail_fit, TailFit};
use crate::model::SystemSpec;
use crate::par::Parallelism;
use crate::rng::{self, StreamRng};
use crate::stats::{self, Interval};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_CELLS: usize = 64;
pub const MIN_PER_CELL: usize = 1000;
/// Kill fraction above which a kernel is flagged as unresolved.
pub const MAX_KILL: f64 = 0.999;
pub const EIGEN_TOL: f64 = 1e-10;
pub const EIGEN_MAX_ITER: usize = 100_000;

/// Monte Carlo estimate of the kernel on a uniform partition of `(−1, 0)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelEstimate {
    pub edges: Vec<f64>,
    /// `matrix[i][j]`: probability of landing in cell `j` after one period
    /// from the midpoint of cell `i`.
    pub matrix: Vec<Vec<f64>>,
    pub kill: Vec<f64>,
    pub counts: Vec<usize>,
    /// Raw landing counts, `transitions[i][j]`, and kills per row.
    pub transitions: Vec<Vec<u64>>,
    pub killed: Vec<u64>,
    pub sigma: f64,
    pub master_seed: u64,
}

impl KernelEstimate {
    pub fn from_counts(edges: Vec<f64>, transitions: Vec<Vec<u64>>, killed: Vec<u64>, sigma: f64, master_seed: u64) -> Result<Self> {
        let m = edges.len().saturating_sub(1);
        if m == 0 || transitions.len() != m || killed.len() != m || transitions.iter().any(|row| row.len() != m) {
            return Err(Error::InvalidParameter("kernel counts do not match the grid".into()));
        }
        let counts: Vec<usize> = transitions
            .iter()
            .zip(&killed)
            .map(|(row, k)| (row.iter().sum::<u64>() + k) as usize)
            .collect();
        if counts.contains(&0) {
            return Err(Error::InvalidParameter("empty kernel row".into()));
        }
        let matrix = transitions
            .iter()
            .zip(&counts)
            .map(|(row, &n)| row.iter().map(|&c| c as f64 / n as f64).collect())
            .collect();
        let kill = killed.iter().zip(&counts).map(|(&k, &n)| k as f64 / n as f64).collect();
        Ok(KernelEstimate { edges, matrix, kill, counts, transitions, killed, sigma, master_seed })
    }

    pub fn cells(&self) -> usize {
        self.matrix.len()
    }

    pub fn midpoints(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    pub fn cell_of(&self, r: f64) -> Option<usize> {
        let (lo, hi) = (self.edges[0], self.edges[self.cells()]);
        if !(lo < r && r < hi) {
            return None;
        }
        Some((((r - lo) / (hi - lo) * self.cells() as f64) as usize).min(self.cells() - 1))
    }

    pub fn max_kill(&self) -> f64 {
        self.kill.iter().copied().fold(0.0, f64::max)
    }

    /// Kernel rebuilt from multinomial resamples of every row.
    pub fn resample(&self, rng: &mut StreamRng) -> KernelEstimate {
        let mut transitions = Vec::with_capacity(self.cells());
        let mut killed = Vec::with_capacity(self.cells());
        for (i, &n) in self.counts.iter().enumerate() {
            // cumulative row including the kill outcome as the last category
            let mut cum: Vec<u64> = Vec::with_capacity(self.cells() + 1);
            let mut acc = 0;
            for &c in self.transitions[i].iter().chain(std::iter::once(&self.killed[i])) {
                acc += c;
                cum.push(acc);
            }
            let mut row = vec![0u64; self.cells() + 1];
            for _ in 0..n {
                let u = rng.random_range(0..n as u64);
                row[cum.partition_point(|&c| c <= u)] += 1;
            }
            killed.push(row.pop().unwrap_or(0));
            transitions.push(row);
        }
        KernelEstimate::from_counts(self.edges.clone(), transitions, killed, self.sigma, self.master_seed)
            .expect("resampled rows keep their sizes")
    }

    /// Bootstrap standard error of every matrix entry.
    pub fn bootstrap_se(&self, resamples: usize, seed: u64) -> Vec<Vec<f64>> {
        let m = self.cells();
        let (mut s1, mut s2) = (vec![vec![0.0; m]; m], vec![vec![0.0; m]; m]);
        let mut r = rng::stream(seed, 0);
        for _ in 0..resamples {
            let k = self.resample(&mut r);
            for i in 0..m {
                for j in 0..m {
                    s1[i][j] += k.matrix[i][j];
                    s2[i][j] += k.matrix[i][j] * k.matrix[i][j];
                }
            }
        }
        let b = resamples as f64;
        (0..m)
            .map(|i| (0..m).map(|j| ((s2[i][j] - s1[i][j] * s1[i][j] / b) / (b - 1.0)).max(0.0).sqrt()).collect())
            .collect()
    }

    /// Bootstrap interval of `λ₀`.
    pub fn lambda0_ci(&self, resamples: usize, seed: u64) -> Result<Interval> {
        let est = principal_eigen(&self.matrix)?.lambda0;
        let mut r = rng::stream(seed, 1);
        let mut v = Vec::with_capacity(resamples);
        for _ in 0..resamples {
            v.push(principal_eigen(&self.resample(&mut r).matrix)?.lambda0);
        }
        v.sort_by(f64::total_cmp);
        Ok(Interval {
            estimate: est,
            lo: stats::quantile_sorted(&v, 0.025),
            hi: stats::quantile_sorted(&v, 0.975),
            se: stats::variance(&v).sqrt(),
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mids = self.midpoints();
        let mut header = vec!["r".to_string(), "kill".to_string()];
        header.extend(mids.iter().map(|x| format!("{x}")));
        out.write_record(&header)?;
        for (i, row) in self.matrix.iter().enumerate() {
            let mut rec = vec![mids[i].to_string(), self.kill[i].to_string()];
            rec.extend(row.iter().map(|x| x.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Uniform partition of `(−1, 0)`.
pub fn uniform_grid(cells: usize) -> Vec<f64> {
    (0..=cells).map(|k| -1.0 + k as f64 / cells as f64).collect()
}

/// Where a path started at `(r0, 0)` is when `φ` first reaches 1, or `None`
/// if it leaves `(−1, 0)` before.
fn one_period(spec: &SystemSpec, config: &SimConfig, r0: f64, rng: &mut StreamRng) -> Result<Option<f64>> {
    let mut s = State::new(r0, 0.0);
    let t_end = config.max_time;
    while s.t < t_end {
        let next = step_with(&s, spec, config.sigma, config.dt, normal_pair(rng));
        if !(next.r.is_finite() && next.phi.is_finite()) {
            return Err(Error::NonFinite { t: next.t, r: next.r, phi: next.phi });
        }
        if next.r >= 0.0 || next.r <= -1.0 {
            return Ok(None);
        }
        if next.phi >= 1.0 {
            let w = (1.0 - s.phi) / (next.phi - s.phi);
            return Ok(Some(s.r + w * (next.r - s.r)));
        }
        s = next;
    }
    Err(Error::Budget("phase did not advance by one period".into()))
}

/// Row `i` is estimated from `n_per_cell` paths started at the midpoint of
/// cell `i`; replicate `i·n_per_cell + j` uses stream `(master_seed, ·)`.
pub fn estimate_kernel(
    spec: &SystemSpec,
    config: &SimConfig,
    cells: usize,
    n_per_cell: usize,
    master_seed: u64,
    mode: Parallelism,
) -> Result<KernelEstimate> {
    if cells < 2 || n_per_cell < MIN_PER_CELL {
        return Err(Error::InvalidParameter(format!(
            "kernel needs >= 2 cells and >= {MIN_PER_CELL} paths per cell (got {cells}, {n_per_cell})"
        )));
    }
    let edges = uniform_grid(cells);
    let mids: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let batch = run_batch(cells * n_per_cell, master_seed, mode, |k, r| {
        one_period(spec, config, mids[k as usize / n_per_cell], r)
    });
    if let Some((i, e)) = batch.failures.first() {
        return Err(Error::Numerical(format!("kernel replicate {i}: {e}")));
    }
    let mut transitions = vec![vec![0u64; cells]; cells];
    let mut killed = vec![0u64; cells];
    for (k, landing) in batch.records {
        let i = k as usize / n_per_cell;
        match landing {
            Some(r) => transitions[i][(((r + 1.0) * cells as f64) as usize).min(cells - 1)] += 1,
            None => killed[i] += 1,
        }
    }
    let est = KernelEstimate::from_counts(edges, transitions, killed, config.sigma, master_seed)?;
    if est.max_kill() > MAX_KILL {
        return Err(Error::Numerical(format!(
            "kill fraction {} exceeds {MAX_KILL}: σ = {} too large for the grid",
            est.max_kill(),
            config.sigma
        )));
    }
    Ok(est)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralEstimate {
    pub lambda0: f64,
    /// Left eigenvector (quasistationary law), summing to 1.
    pub pi0: Vec<f64>,
    /// Right eigenvector, normalized so that `⟨π₀, h₀⟩ = 1`.
    pub h0: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// Set when the iteration did not converge: the spectral gap is too small
    /// (or the chain is periodic).
    pub gap_warning: bool,
}

fn left_mul(v: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; m.len()];
    for (vi, row) in v.iter().zip(m) {
        for (o, k) in out.iter_mut().zip(row) {
            *o += vi * k;
        }
    }
    out
}

fn right_mul(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

/// Power iteration from the uniform start.
pub fn principal_eigen(matrix: &[Vec<f64>]) -> Result<SpectralEstimate> {
    let m = matrix.len();
    principal_eigen_from(matrix, &vec![1.0 / m.max(1) as f64; m])
}

/// Power iteration for the left and right Perron vectors from `init`.
pub fn principal_eigen_from(matrix: &[Vec<f64>], init: &[f64]) -> Result<SpectralEstimate> {
    let m = matrix.len();
    if m == 0 || init.len() != m || matrix.iter().any(|row| row.len() != m) {
        return Err(Error::InvalidParameter("principal_eigen needs a square matrix".into()));
    }
    if matrix.iter().flatten().any(|&k| !(k >= 0.0) || !k.is_finite()) {
        return Err(Error::InvalidParameter("kernel entries must be finite and nonnegative".into()));
    }
    if init.iter().any(|&x| x < 0.0) || init.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidParameter("initial vector must be nonnegative and nonzero".into()));
    }
    let normalize = |v: &mut Vec<f64>| -> f64 {
        let s: f64 = v.iter().sum();
        if s > 0.0 {
            v.iter_mut().for_each(|x| *x /= s);
        }
        s
    };
    let mut pi = init.to_vec();
    normalize(&mut pi);
    let mut h = vec![1.0; m];
    let mut lambda = 0.0;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < EIGEN_MAX_ITER {
        iterations += 1;
        let mut next = left_mul(&pi, matrix);
        lambda = normalize(&mut next);
        if lambda == 0.0 {
            return Ok(SpectralEstimate { lambda0: 0.0, pi0: pi, h0: h, iterations, residual: 0.0, gap_warning: false });
        }
        let mut hn = right_mul(matrix, &h);
        let hs = hn.iter().cloned().fold(0.0, f64::max);
        hn.iter_mut().for_each(|x| *x /= hs);
        let kp = left_mul(&next, matrix);
        residual = kp.iter().zip(&next).map(|(a, b)| (a - lambda * b).abs()).sum();
        pi = next;
        h = hn;
        if residual < EIGEN_TOL {
            break;
        }
    }
    // finish the right vector to the same accuracy
    for _ in 0..EIGEN_MAX_ITER {
        let mut hn = right_mul(matrix, &h);
        let hs = hn.iter().cloned().fold(0.0, f64::max);
        if hs == 0.0 {
            break;
        }
        hn.iter_mut().for_each(|x| *x /= hs);
        let d = hn.iter().zip(&h).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        h = hn;
        if d < EIGEN_TOL {
            break;
        }
    }
    let dot: f64 = pi.iter().zip(&h).map(|(a, b)| a * b).sum();
    if dot > 0.0 {
        h.iter_mut().for_each(|x| *x /= dot);
    }
    Ok(SpectralEstimate { lambda0: lambda, pi0: pi, h0: h, iterations, residual, gap_warning: residual >= EIGEN_TOL })
}

/// Crossing of the unstable orbit by a path started on the stable orbit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    /// Phase at which `r` left `(−1, 0)`; `NaN` if the budget ran out.
    pub phi_exit: f64,
    /// +1 for an exit through `r = 0`, −1 through `r = −1`, 0 if censored.
    pub side: i8,
    /// `r` at `φ = probe_period` if the path was still inside then.
    pub r_probe: f64,
}

/// Paths from `(−½, 0)` until they leave `(−1, 0)`, at most `max_periods`
/// periods; `r` is also recorded when `φ` first reaches `probe_period`.
pub fn simulate_exits(
    spec: &SystemSpec,
    config: &SimConfig,
    n: usize,
    max_periods: f64,
    probe_period: f64,
    master_seed: u64,
    mode: Parallelism,
) -> Result<Vec<SurvivalRecord>> {
    let batch = run_batch(n, master_seed, mode, |_, rng| {
        let mut s = State::new(-0.5, 0.0);
        let mut r_probe = f64::NAN;
        loop {
            let next = step_with(&s, spec, config.sigma, config.dt, normal_pair(rng));
            if !(next.r.is_finite() && next.phi.is_finite()) {
                return Err(Error::NonFinite { t: next.t, r: next.r, phi: next.phi });
            }
            if r_probe.is_nan() && next.phi >= probe_period {
                let w = (probe_period - s.phi) / (next.phi - s.phi);
                r_probe = s.r + w * (next.r - s.r);
            }
            let d = if next.r >= 0.0 {
                Some((s.r, next.r, 1))
            } else if next.r <= -1.0 {
                Some((s.r + 1.0, next.r + 1.0, -1))
            } else {
                None
            };
            if let Some((d0, d1, side)) = d {
                let w = crate::dynamics::crossing_fraction(d0, d1);
                let phi_exit = s.phi + w * (next.phi - s.phi);
                if phi_exit < probe_period {
                    r_probe = f64::NAN;
                }
                return Ok(SurvivalRecord { phi_exit, side, r_probe });
            }
            if next.phi >= max_periods {
                return Ok(SurvivalRecord { phi_exit: f64::NAN, side: 0, r_probe });
            }
            s = next;
        }
    });
    if let Some((i, e)) = batch.failures.first() {
        return Err(Error::Numerical(format!("survival replicate {i}: {e}")));
    }
    Ok(batch.into_values())
}

/// Survival ratios from simulated exits against the kernel's `λ₀`.
#[derive(Debug, Clone, Serialize)]
pub struct SurvivalReport {
    pub n: usize,
    pub censored: usize,
    /// Hazard of the number of completed periods before exit.
    pub tail: TailFit,
    /// `λ₀` implied by the tail hazard, `1 − p`.
    pub lambda_ratio: Interval,
    pub lambda_kernel: Interval,
    pub consistent: bool,
    /// Total variation between the normalized within-period exit histograms
    /// of consecutive periods `n, n+1`, for `n ≥ 3` with enough exits.
    pub profile_tv: Vec<(u64, f64)>,
    /// Total variation between `π₀` and the law of `r` at the probe period
    /// among survivors.
    pub qsd_tv: f64,
    pub probe_survivors: usize,
}

pub const PROFILE_BINS: usize = 10;
pub const PROFILE_MIN_COUNT: usize = 400;

pub fn survival_consistency(
    kernel: &KernelEstimate,
    spectral: &SpectralEstimate,
    lambda_kernel: Interval,
    records: &[SurvivalRecord],
    seed: u64,
) -> Result<SurvivalReport> {
    let exits: Vec<f64> = records.iter().filter(|r| r.phi_exit.is_finite()).map(|r| r.phi_exit).collect();
    let censored = records.len() - exits.len();
    // completed periods before exit; paths exiting before φ = 0 count as 0
    let windings: Vec<u64> = exits.iter().map(|&p| p.max(0.0).floor() as u64).collect();
    let tail = asymp_geometric_tail_fit(&windings, 400, seed)?;
    let lambda_ratio = Interval { estimate: 1.0 - tail.p.estimate, lo: 1.0 - tail.p.hi, hi: 1.0 - tail.p.lo, se: tail.p.se };
    let consistent = lambda_ratio.overlaps(&lambda_kernel);
    let max_n = windings.iter().copied().max().unwrap_or(0);
    let hist = |n: u64| {
        let v: Vec<f64> = exits.iter().filter(|&&p| p >= 0.0 && p.floor() as u64 == n).map(|p| p.fract()).collect();
        (v.len(), stats::histogram(&v, 0.0, 1.0, PROFILE_BINS))
    };
    let mut profile_tv = Vec::new();
    for n in 3..max_n {
        let (c0, h0) = hist(n);
        let (c1, h1) = hist(n + 1);
        if c0 < PROFILE_MIN_COUNT || c1 < PROFILE_MIN_COUNT {
            break;
        }
        profile_tv.push((n, stats::total_variation(&h0, &h1)));
    }
    let mut counts = vec![0.0; kernel.cells()];
    let mut survivors = 0;
    for r in records.iter().filter(|r| r.r_probe.is_finite()) {
        if let Some(i) = kernel.cell_of(r.r_probe) {
            counts[i] += 1.0;
            survivors += 1;
        }
    }
    if survivors > 0 {
        counts.iter_mut().for_each(|c| *c /= survivors as f64);
    }
    let qsd_tv = stats::total_variation(&counts, &spectral.pi0);
    Ok(SurvivalReport {
        n: records.len(),
        censored,
        tail,
        lambda_ratio,
        lambda_kernel,
        consistent,
        profile_tv,
        qsd_tv,
        probe_survivors: survivors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_melnikov_system, compute_exponents};
    use proptest::prelude::*;

    #[test]
    fn symmetric_two_by_two() {
        let e = principal_eigen(&[vec![0.5, 0.25], vec![0.25, 0.5]]).unwrap();
        assert!((e.lambda0 - 0.75).abs() < 1e-12);
        assert!((e.pi0[0] - 0.5).abs() < 1e-10);
        assert!(!e.gap_warning);
    }

    #[test]
    fn rank_one_kernel() {
        let e = principal_eigen(&[vec![0.3, 0.3], vec![0.3, 0.3]]).unwrap();
        assert!((e.lambda0 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn stochastic_matrix_has_unit_eigenvalue() {
        let k = vec![vec![0.9, 0.1, 0.0], vec![0.2, 0.5, 0.3], vec![0.0, 0.4, 0.6]];
        let e = principal_eigen(&k).unwrap();
        assert!((e.lambda0 - 1.0).abs() < 1e-10);
        // stationary law solves πK = π
        let pk = left_mul(&e.pi0, &k);
        assert!(pk.iter().zip(&e.pi0).all(|(a, b)| (a - b).abs() < 1e-9));
        assert!((e.pi0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn periodic_chain_warns() {
        let e = principal_eigen(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        // uniform start is already stationary here; a skewed one oscillates
        assert!(!e.gap_warning);
        let e = principal_eigen_from(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[1.0, 0.0]).unwrap();
        assert!(e.gap_warning);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(principal_eigen(&[vec![0.5, -0.1], vec![0.2, 0.2]]).is_err());
        assert!(principal_eigen(&[vec![0.5], vec![0.2]]).is_err());
    }

    proptest! {
        #[test]
        fn perron_vector_is_independent_of_the_start(
            entries in proptest::collection::vec(0.01f64..1.0, 16),
            a in proptest::collection::vec(0.0f64..1.0, 4),
            b in proptest::collection::vec(0.0f64..1.0, 4),
        ) {
            prop_assume!(a.iter().sum::<f64>() > 0.1 && b.iter().sum::<f64>() > 0.1);
            // random substochastic 4×4 matrix
            let k: Vec<Vec<f64>> = entries.chunks(4).map(|row| {
                let s: f64 = row.iter().sum::<f64>() * 1.25;
                row.iter().map(|x| x / s).collect()
            }).collect();
            let ea = principal_eigen_from(&k, &a).unwrap();
            let eb = principal_eigen_from(&k, &b).unwrap();
            prop_assert!(ea.lambda0 > 0.0 && ea.lambda0 < 1.0);
            prop_assert!((ea.lambda0 - eb.lambda0).abs() < 1e-10);
            for (x, y) in ea.pi0.iter().zip(&eb.pi0) {
                prop_assert!(*x >= 0.0);
                prop_assert!((x - y).abs() < 1e-8);
            }
        }
    }

    fn kernel(sigma: f64, cells: usize, n: usize, dt: f64) -> KernelEstimate {
        let s = build_melnikov_system(0.0, 1.0).unwrap();
        let c = compute_exponents(&s).unwrap();
        let cfg = SimConfig::new(sigma, &c).with_dt(dt);
        estimate_kernel(&s, &cfg, cells, n, 7, Parallelism::Auto).unwrap()
    }

    #[test]
    fn rows_account_for_every_path() {
        let k = kernel(0.3, 8, 1000, 1e-3);
        for i in 0..8 {
            assert_eq!(k.transitions[i].iter().sum::<u64>() + k.killed[i], 1000);
            let s: f64 = k.matrix[i].iter().sum();
            assert!((s + k.kill[i] - 1.0).abs() < 1e-12);
            assert!(s <= 1.0);
        }
        assert!(estimate_kernel(
            &build_melnikov_system(0.0, 1.0).unwrap(),
            &SimConfig::new(0.3, &compute_exponents(&build_melnikov_system(0.0, 1.0).unwrap()).unwrap()),
            8,
            10,
            1,
            Parallelism::Auto
        )
        .is_err());
    }

    #[test]
    fn small_noise_concentrates_on_the_stable_orbit() {
        // with an even cell count r = −½ is a cell edge; use 63 cells so one
        // cell contains it
        let k = kernel(0.05, 63, 1000, 1e-3);
        let i = k.cell_of(-0.5).unwrap();
        let row: f64 = k.matrix[i].iter().sum();
        assert!(row > 0.9);
        // the one-period spread σ/√(2λ₋) ≈ 0.014 is about one cell
        let near: f64 = k.matrix[i][i - 3..=i + 3].iter().sum();
        assert!(near > 0.9, "{near}");
    }

    #[test]
    fn doubling_paths_halves_the_variance_of_entries() {
        let a = kernel(0.3, 8, 1000, 1e-3);
        let b = kernel(0.3, 8, 2000, 1e-3);
        let mean_se = |k: &KernelEstimate| {
            let se = k.bootstrap_se(200, 3);
            let v: Vec<f64> = se.iter().flatten().copied().filter(|&x| x > 0.0).collect();
            (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
        };
        let ratio = mean_se(&a) / mean_se(&b);
        // standard errors scale as n^{-1/2}: the variance halves
        assert!((ratio - 2f64.sqrt()).abs() < 0.2 * 2f64.sqrt(), "{ratio}");
    }
}
