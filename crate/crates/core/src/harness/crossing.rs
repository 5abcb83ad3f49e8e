//! Where and when paths from the stable orbit cross the unstable one, and
//! the spectral data of the random Poincaré map that governs it.

use super::{seed_for, trend_check, Builder, ExperimentConfig, ExperimentRun, SigmaSummary};
use crate::dynamics::SimConfig;
use crate::error::{Error, Result};
use crate::laws::TheoreticalLaw;
use crate::ldp::find_instanton;
use crate::model::{build_melnikov_system, OrbitGeometry, SystemSpec};
use crate::poincare::{estimate_kernel, principal_eigen, simulate_exits, survival_consistency, KernelEstimate, SpectralEstimate, SurvivalRecord};
use crate::stats::{self, Interval, TestReport, KUIPER_CRIT_1, KUIPER_CRIT_5};

/// Exits needed before the crossing-phase statistics are computed.
pub const MIN_CROSSINGS: usize = 1000;
/// Periods followed by the pilot run at the rescaled noise level.
const PILOT_PERIODS: f64 = 5.0;
/// Completed periods before the first ratio `P(k+1)/P(k)` is taken.
const RATIO_START: u64 = 3;
const RATIO_COUNT: u64 = 3;
const MAX_CORRELATION: f64 = 0.05;
const PROBE_PERIOD: f64 = 5.0;

fn sim_config(cfg: &ExperimentConfig, sigma: f64, geometry: &OrbitGeometry) -> Result<SimConfig> {
    let mut sim = SimConfig::new(sigma, &geometry.constants);
    if let Some(dt) = cfg.dt {
        sim = sim.with_dt(dt);
    }
    sim.validate(&geometry.constants)?;
    Ok(sim)
}

/// Kernel, its principal eigenpair and a bootstrap interval for `λ₀`.
fn kernel_at(
    cfg: &ExperimentConfig,
    spec: &SystemSpec,
    sim: &SimConfig,
    cells: usize,
    label: &str,
) -> Result<(KernelEstimate, SpectralEstimate, Interval)> {
    let k = estimate_kernel(spec, sim, cells, cfg.n_per_cell, seed_for(cfg, label), cfg.mode())?;
    let e = principal_eigen(&k.matrix)?;
    let ci = k.lambda0_ci(cfg.resamples, seed_for(cfg, &format!("{label}/bootstrap")))?;
    Ok((k, e, ci))
}

/// Circular location mod `period` with a bootstrap standard error.
fn circular_location_se(sample: &[f64], period: f64, resamples: usize, seed: u64) -> (f64, f64) {
    let loc = stats::circular_location(sample, period);
    let ci = stats::bootstrap_ci(
        sample,
        |s| stats::circular_difference(stats::circular_location(s, period), loc, period),
        resamples,
        seed,
        0.95,
    );
    (loc, ci.se)
}

/// Crossing phases folded onto the unstable orbit `r = 0`: the system is
/// invariant under `(r, φ) ↦ (−1 − r, φ + ½)`, so an exit through `r = −1`
/// at `φ` is an exit through `r = 0` at `φ + ½`.
fn folded_phase(rec: &SurvivalRecord) -> f64 {
    if rec.side < 0 {
        rec.phi_exit + 0.5
    } else {
        rec.phi_exit
    }
}

struct Crossings {
    /// `((|log σ| − θ_δ(φ))/λ₊T₊) mod 1`.
    u: Vec<f64>,
    theta: Vec<f64>,
    winding: Vec<f64>,
    records: Vec<SurvivalRecord>,
}

fn crossings(geometry: &OrbitGeometry, delta: f64, sigma: f64, records: Vec<SurvivalRecord>) -> Result<Crossings> {
    let lt = geometry.lambda_t();
    let (mut u, mut theta, mut winding) = (Vec::new(), Vec::new(), Vec::new());
    for rec in records.iter().filter(|r| r.phi_exit.is_finite()) {
        let th = geometry.theta_delta(folded_phase(rec), delta)?;
        u.push(((sigma.ln().abs() - th) / lt).rem_euclid(1.0));
        theta.push(th);
        winding.push(rec.phi_exit.max(0.0).floor());
    }
    Ok(Crossings { u, theta, winding, records })
}

pub fn exp_crossing_phase(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut out = Builder::new(cfg, &["sigma", "index", "side", "phi_exit", "u"])?;
    let spec = build_melnikov_system(cfg.eps, cfg.omega)?;
    let base = OrbitGeometry::new(&spec)?;
    let instanton = find_instanton(&spec, &base)?;
    let s_star = instanton.s_star(cfg.delta)?;
    let geometry = base.with_s_star(cfg.delta, s_star);
    let lt = geometry.lambda_t();
    out.note(format!("I∞ = {:.6}, s* = {s_star:.6} at δ = {}, λ₊T₊ = {lt:.6}", instanton.action, cfg.delta));
    let profile = TheoreticalLaw::CyclingProfile { lambda_t: lt };

    let mut trend = Vec::new();
    let mut levels = Vec::new();
    for &sigma in &cfg.sigmas {
        let sim = sim_config(cfg, sigma, &geometry)?;
        let recs = simulate_exits(&spec, &sim, cfg.n, cfg.horizon, PROBE_PERIOD, seed_for(cfg, &format!("exits/{sigma}")), cfg.mode())?;
        let c = crossings(&geometry, cfg.delta, sigma, recs)?;
        for (i, rec) in c.records.iter().enumerate() {
            let u = if rec.phi_exit.is_finite() {
                ((sigma.ln().abs() - geometry.theta_delta(folded_phase(rec), cfg.delta)?) / lt).rem_euclid(1.0)
            } else {
                f64::NAN
            };
            out.records.push(vec![sigma, i as f64, rec.side as f64, rec.phi_exit, u]);
        }
        if c.u.len() < MIN_CROSSINGS {
            out.partial(format!("σ={sigma}: only {} crossings within {} periods", c.u.len(), cfg.horizon));
            out.criterion(TestReport::flag("crossings", false, c.u.len() as f64, cfg.n, cfg.seed));
            return Ok(out.finish());
        }
        let kp = stats::kuiper_circular(&c.u, 1.0, &profile);
        out.summary(
            SigmaSummary::new(format!("sigma={sigma}"), sigma, cfg.n, c.u.len())
                .with("kuiper", kp.statistic)
                .with("kuiper_critical_5", kp.critical(KUIPER_CRIT_5))
                .with("kuiper_p", kp.p_value)
                .with("dt", sim.dt)
                .with("mean_winding", stats::mean(&c.winding))
                .with("exits_lower", c.records.iter().filter(|r| r.side < 0).count() as f64),
        );
        trend.push((sigma, kp.statistic, kp.n_eff));
        levels.push((sigma, sim, c, kp));
    }

    let (sigma_min, sim_min, last, kp) = levels.last().expect("non-empty ladder");
    let (sigma_min, sim_min) = (*sigma_min, sim_min.clone());
    out.criterion(TestReport::below("kuiper_at_smallest_sigma", kp.statistic, kp.critical(KUIPER_CRIT_5), last.u.len(), cfg.seed));
    out.criterion(trend_check("kuiper_trend", &trend, KUIPER_CRIT_5, cfg.seed));

    // the law of θ_δ − |log σ| mod λ₊T₊ does not depend on σ, so the
    // location of θ_δ follows |log σ|
    let mut worst: f64 = 0.0;
    let mut shifts = Vec::new();
    let locs: Vec<(f64, f64, f64)> = levels
        .iter()
        .map(|(s, _, c, _)| {
            let (l, se) = circular_location_se(&c.theta, lt, cfg.resamples, seed_for(cfg, &format!("loc/{s}")));
            (*s, l, se)
        })
        .collect();
    for w in locs.windows(2) {
        let moved = stats::circular_difference(w[1].1, w[0].1, lt);
        let expected = w[1].0.ln().abs() - w[0].0.ln().abs();
        let z = stats::circular_difference(moved, expected, lt) / (w[0].2.hypot(w[1].2));
        worst = worst.max(z.abs());
        shifts.push(format!("σ {}→{}: moved {moved:.3}, expected {expected:.3}", w[0].0, w[1].0));
    }
    if !shifts.is_empty() {
        out.criterion(TestReport::below("cycling_shift", worst, 1.96, last.u.len(), cfg.seed).with_note(shifts.join("; ")));
    }

    let idx: Vec<f64> = (0..last.u.len()).map(|i| i as f64).collect();
    let corr = |s: &[f64]| {
        let y: Vec<f64> = s.iter().map(|&i| last.winding[i as usize]).collect();
        let u: Vec<f64> = s.iter().map(|&i| last.u[i as usize]).collect();
        stats::pearson(&y, &u)
    };
    let r = stats::bootstrap_ci(&idx, corr, cfg.resamples, seed_for(cfg, "winding_corr"), 0.95);
    out.criterion(
        TestReport::below("winding_independence", r.estimate.abs(), MAX_CORRELATION, last.u.len(), cfg.seed)
            .with_note(format!("corr(Y, u) = {:.4}, 95% CI [{:.4}, {:.4}]", r.estimate, r.lo, r.hi)),
    );

    // per-period modulation against the kernel's principal eigenvalue
    let (kernel, spectral, lambda_ci) = kernel_at(cfg, &spec, &sim_min, cfg.cells, &format!("kernel/{sigma_min}"))?;
    let counts = |k: u64| last.records.iter().filter(|r| r.phi_exit.is_finite() && r.phi_exit.max(0.0).floor() as u64 == k).count() as f64;
    let mut ratio_ok = true;
    let mut ratio_notes = Vec::new();
    for k in RATIO_START..RATIO_START + RATIO_COUNT {
        let (c0, c1) = (counts(k), counts(k + 1));
        let ratio = c1 / c0;
        let se = (1.0 / c0 + 1.0 / c1).sqrt();
        let ci = Interval { estimate: ratio, lo: ratio * (-1.96 * se).exp(), hi: ratio * (1.96 * se).exp(), se: ratio * se };
        ratio_ok &= c0 > 0.0 && c1 > 0.0 && ci.overlaps(&lambda_ci);
        ratio_notes.push(format!("P({})/P({k}) = {ratio:.3} [{:.3}, {:.3}]", k + 1, ci.lo, ci.hi));
    }
    out.criterion(
        TestReport::flag("per_period_ratio", ratio_ok, spectral.lambda0, last.u.len(), cfg.seed).with_note(format!(
            "{}; kernel λ0 {:.4} [{:.4}, {:.4}]",
            ratio_notes.join(", "),
            spectral.lambda0,
            lambda_ci.lo,
            lambda_ci.hi
        )),
    );
    let survival = survival_consistency(&kernel, &spectral, lambda_ci, &last.records, seed_for(cfg, "tail"))?;
    out.summary(
        SigmaSummary::new(format!("kernel sigma={sigma_min}"), sigma_min, cfg.cells * cfg.n_per_cell, cfg.cells * cfg.n_per_cell)
            .with("lambda0", spectral.lambda0)
            .with("lambda0_lo", lambda_ci.lo)
            .with("lambda0_hi", lambda_ci.hi)
            .with("tail_lambda", survival.lambda_ratio.estimate)
            .with("tail_lambda_lo", survival.lambda_ratio.lo)
            .with("tail_lambda_hi", survival.lambda_ratio.hi),
    );
    out.criterion(
        TestReport::flag("integer_part_tail", survival.consistent, survival.lambda_ratio.estimate, last.u.len(), cfg.seed)
            .with_note(format!("1 − p̂ in [{:.4}, {:.4}]", survival.lambda_ratio.lo, survival.lambda_ratio.hi)),
    );

    dsi_check(cfg, &mut out, &spec, &geometry, &sim_min, sigma_min, last, instanton.action)?;
    Ok(out.finish())
}

/// Discrete scale invariance: the mod-law at `σ` and `σe^{−λ₊T₊}` agree.
/// A pilot of `PILOT_PERIODS` periods decides whether the rescaled level is
/// within budget.
#[allow(clippy::too_many_arguments)]
fn dsi_check(
    cfg: &ExperimentConfig,
    out: &mut Builder,
    spec: &SystemSpec,
    geometry: &OrbitGeometry,
    sim_min: &SimConfig,
    sigma_min: f64,
    last: &Crossings,
    action: f64,
) -> Result<()> {
    let lt = geometry.lambda_t();
    let sigma_dsi = sigma_min * (-lt).exp();
    let sim = SimConfig { sigma: sigma_dsi, ..sim_min.clone() };
    let seed = seed_for(cfg, "dsi");
    let pilot = simulate_exits(spec, &sim, cfg.n, PILOT_PERIODS, PROBE_PERIOD, seed, cfg.mode())?;
    let pilot_exits = pilot.iter().filter(|r| r.phi_exit.is_finite()).count();
    let sample = if pilot_exits >= MIN_CROSSINGS {
        let full = simulate_exits(spec, &sim, cfg.n, cfg.horizon, PROBE_PERIOD, seed, cfg.mode())?;
        crossings(geometry, cfg.delta, sigma_dsi, full)?.u
    } else {
        Vec::new()
    };
    out.summary(
        SigmaSummary::new(format!("dsi sigma={sigma_dsi:.3e}"), sigma_dsi, cfg.n, sample.len())
            .with("pilot_exits", pilot_exits as f64)
            .with("log_expected_periods", action / (sigma_dsi * sigma_dsi)),
    );
    if sample.len() < MIN_CROSSINGS {
        let msg = format!(
            "σe^(−λT) = {sigma_dsi:.3e}: {pilot_exits} of {} paths crossed within {PILOT_PERIODS} periods; \
             large deviations put the mean crossing time near e^{{{:.3e}}} periods",
            cfg.n,
            action / (sigma_dsi * sigma_dsi)
        );
        out.partial(msg.clone());
        out.criterion(TestReport::flag("discrete_scale_invariance", false, f64::NAN, sample.len(), seed).with_note(msg));
        return Ok(());
    }
    let kp = stats::kuiper_two_sample(&last.u, &sample, 1.0);
    out.criterion(TestReport::below("discrete_scale_invariance", kp.statistic, kp.critical(KUIPER_CRIT_1), sample.len(), seed));
    Ok(())
}

pub fn exp_spectral(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut out = Builder::new(cfg, &["sigma", "kind", "a", "b", "c"])?;
    let sigma_r = *cfg
        .companion_sigmas
        .first()
        .ok_or_else(|| Error::InvalidParameter("spectral needs companion_sigmas = [σ_refinement]".into()))?;
    let spec = build_melnikov_system(cfg.eps, cfg.omega)?;
    let geometry = OrbitGeometry::new(&spec)?;
    let i_inf = find_instanton(&spec, &geometry)?.action;

    // refinement: the same σ on `cells` and `2·cells`
    let sim_r = sim_config(cfg, sigma_r, &geometry)?;
    let (k1, e1, ci1) = kernel_at(cfg, &spec, &sim_r, cfg.cells, &format!("kernel/{sigma_r}/{}", cfg.cells))?;
    let (_, e2, ci2) = kernel_at(cfg, &spec, &sim_r, 2 * cfg.cells, &format!("kernel/{sigma_r}/{}", 2 * cfg.cells))?;
    for (cells, e, ci) in [(cfg.cells, &e1, &ci1), (2 * cfg.cells, &e2, &ci2)] {
        out.records.push(vec![sigma_r, cells as f64, e.lambda0, ci.lo, ci.hi]);
        out.summary(
            SigmaSummary::new(format!("kernel sigma={sigma_r} cells={cells}"), sigma_r, cells * cfg.n_per_cell, cells * cfg.n_per_cell)
                .with("lambda0", e.lambda0)
                .with("lambda0_lo", ci.lo)
                .with("lambda0_hi", ci.hi)
                .with("residual", e.residual)
                .with("max_kill", k1.max_kill()),
        );
    }
    out.criterion(
        TestReport::flag("grid_refinement", ci1.overlaps(&ci2), (e1.lambda0 - e2.lambda0).abs(), cfg.cells * cfg.n_per_cell, cfg.seed)
            .with_note(format!("λ0: {:.5} [{:.5}, {:.5}] vs {:.5} [{:.5}, {:.5}]", e1.lambda0, ci1.lo, ci1.hi, e2.lambda0, ci2.lo, ci2.hi)),
    );

    // survival ratio from simulated exits
    let recs = simulate_exits(&spec, &sim_r, cfg.n, cfg.horizon, PROBE_PERIOD, seed_for(cfg, &format!("survival/{sigma_r}")), cfg.mode())?;
    // kind 0: one simulated exit; kind = cell count: a kernel estimate
    for r in &recs {
        out.records.push(vec![sigma_r, 0.0, r.phi_exit, r.side as f64, r.r_probe]);
    }
    let rep = survival_consistency(&k1, &e1, ci1, &recs, seed_for(cfg, "survival_tail"))?;
    let max_profile_tv = rep.profile_tv.iter().map(|p| p.1).fold(f64::NAN, f64::max);
    out.summary(
        SigmaSummary::new(format!("survival sigma={sigma_r}"), sigma_r, cfg.n, cfg.n - rep.censored)
            .with("lambda_ratio", rep.lambda_ratio.estimate)
            .with("lambda_ratio_lo", rep.lambda_ratio.lo)
            .with("lambda_ratio_hi", rep.lambda_ratio.hi)
            .with("qsd_tv", rep.qsd_tv)
            .with("probe_survivors", rep.probe_survivors as f64)
            .with("max_profile_tv", max_profile_tv),
    );
    out.criterion(
        TestReport::flag("survival_ratio", rep.consistent, rep.lambda_ratio.estimate, cfg.n, cfg.seed).with_note(format!(
            "survival [{:.5}, {:.5}] vs kernel [{:.5}, {:.5}]",
            rep.lambda_ratio.lo, rep.lambda_ratio.hi, ci1.lo, ci1.hi
        )),
    );

    // log(1 − λ0)σ² approaches −I∞ along the ladder
    let mut ladder = Vec::new();
    for &sigma in &cfg.sigmas {
        let sim = sim_config(cfg, sigma, &geometry)?;
        let (_, e, ci) = kernel_at(cfg, &spec, &sim, cfg.cells, &format!("kernel/{sigma}/{}", cfg.cells))?;
        let y = (1.0 - e.lambda0).ln() * sigma * sigma;
        let se = sigma * sigma * ci.se / (1.0 - e.lambda0);
        out.records.push(vec![sigma, cfg.cells as f64, e.lambda0, ci.lo, ci.hi]);
        out.summary(
            SigmaSummary::new(format!("ladder sigma={sigma}"), sigma, cfg.cells * cfg.n_per_cell, cfg.cells * cfg.n_per_cell)
                .with("lambda0", e.lambda0)
                .with("log_gap_sigma2", y)
                .with("log_gap_sigma2_se", se)
                .with("gap_warning", if e.gap_warning { 1.0 } else { 0.0 }),
        );
        ladder.push((sigma, y, se));
    }
    let dist: Vec<f64> = ladder.iter().map(|l| (l.1 + i_inf).abs()).collect();
    let floors: Vec<f64> = ladder.iter().map(|l| 1.96 * l.2).collect();
    let listing: Vec<String> = ladder.iter().map(|(s, y, _)| format!("σ={s}: {y:.4}")).collect();
    out.criterion(
        TestReport::flag("log_gap_trend", stats::monotone_within_noise(&dist, &floors), *dist.last().unwrap(), cfg.cells * cfg.n_per_cell, cfg.seed)
            .with_note(format!("{} → −I∞ = {:.4}", listing.join(", "), -i_inf)),
    );
    Ok(out.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lower_exits_fold_by_half_a_period() {
        let up = SurvivalRecord { phi_exit: 2.3, side: 1, r_probe: f64::NAN };
        let down = SurvivalRecord { side: -1, ..up };
        assert_eq!(folded_phase(&up), 2.3);
        assert!((folded_phase(&down) - 2.8).abs() < 1e-15);
    }

    #[test]
    fn fold_symmetry_of_the_drift() {
        let spec = build_melnikov_system(0.3, 1.0).unwrap();
        for &(r, phi) in &[(-0.2, 0.1), (-0.7, 0.45), (-0.05, 0.9)] {
            let a = spec.f_r(r, phi);
            let b = spec.f_r(-1.0 - r, phi + 0.5);
            assert!((a + b).abs() < 1e-12);
        }
    }

    #[test]
    fn circular_location_of_a_concentrated_sample() {
        let s: Vec<f64> = (0..200).map(|i| 6.2 + 0.001 * (i % 7) as f64).collect();
        let (loc, se) = circular_location_se(&s, 2.0 * std::f64::consts::PI, 50, 1);
        assert!((loc - 6.203).abs() < 0.01);
        assert!(se < 0.01);
    }
}
