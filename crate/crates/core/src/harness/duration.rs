//! How long the pieces of a phase slip take: leaving a neighbourhood of the
//! unstable orbit, the two halves of a slip between `Γ^s_−` and `Γ^s_+`,
//! and the residence time between consecutive slips.

use super::{ks_entry, location, seed_for, shift_check, trend_check, Builder, Z95, ExperimentConfig, ExperimentRun, SigmaSummary};
use crate::dynamics::{crossing_fraction, detect_slips, normal_pair, run_batch, step_with, ConditionedSlipSampler, SimConfig, State};
use crate::error::{Error, Result};
use crate::laws::{asymp_geometric_tail_fit, TheoreticalLaw};
use crate::ldp::{gamma_s_curves, GammaCurves};
use crate::model::{build_melnikov_system, OrbitGeometry, SystemSpec};
use crate::poincare::{estimate_kernel, principal_eigen};
use crate::rng::StreamRng;
use crate::stats::{self, TestReport, KS_CRIT_1, KS_CRIT_5};
use rand::Rng;

const DEFAULT_DT: f64 = 1e-4;
const FINAL_KS: f64 = 0.05;
/// Independent long trajectories the slip harvest is split over.
const CHAINS: usize = 16;

/// First exit of `{|r| < δ√(2λ₊T₊h(φ))}` from `(0, φ₀)`: `(side, φ)`.
fn neighbourhood_exit(
    spec: &SystemSpec,
    geometry: &OrbitGeometry,
    sigma: f64,
    dt: f64,
    delta: f64,
    max_time: f64,
    rng: &mut StreamRng,
) -> Result<Option<(i8, f64)>> {
    let mut s = State::new(0.0, 0.0);
    while s.t < max_time {
        let b = step_with(&s, spec, sigma, dt, normal_pair(rng));
        if !(b.r.is_finite() && b.phi.is_finite()) {
            return Err(Error::NonFinite { t: b.t, r: b.r, phi: b.phi });
        }
        let (l0, l1) = (geometry.scaled_level(delta, s.phi), geometry.scaled_level(delta, b.phi));
        let hit = if b.r >= l1 {
            Some((1, crossing_fraction(s.r - l0, b.r - l1)))
        } else if b.r <= -l1 {
            Some((-1, crossing_fraction(s.r + l0, b.r + l1)))
        } else {
            None
        };
        if let Some((side, w)) = hit {
            return Ok(Some((side, s.phi + w * (b.phi - s.phi))));
        }
        s = b;
    }
    Ok(None)
}

/// `θ(φ_τ) − θ(φ₀) − |log σ|` split by exit side.
fn neighbourhood_sample(
    cfg: &ExperimentConfig,
    spec: &SystemSpec,
    geometry: &OrbitGeometry,
    sigma: f64,
    delta: f64,
    label: &str,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let dt = cfg.dt.unwrap_or(DEFAULT_DT);
    let batch = run_batch(cfg.n, seed_for(cfg, label), cfg.mode(), |_, rng| {
        neighbourhood_exit(spec, geometry, sigma, dt, delta, cfg.horizon, rng)
    });
    if let Some((i, e)) = batch.failures.first() {
        return Err(Error::Numerical(format!("{label}: replicate {i}: {e}")));
    }
    let (th0, shift) = (geometry.theta(0.0), sigma.ln().abs());
    let (mut up, mut down, mut censored) = (Vec::new(), Vec::new(), 0);
    for v in batch.values() {
        match v {
            Some((1, phi)) => up.push(geometry.theta(*phi) - th0 - shift),
            Some((_, phi)) => down.push(geometry.theta(*phi) - th0 - shift),
            None => censored += 1,
        }
    }
    Ok((up, down, censored))
}

pub fn exp_exit_neighborhood(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut out = Builder::new(cfg, &["sigma", "delta", "side", "statistic"])?;
    let spec = build_melnikov_system(cfg.eps, cfg.omega)?;
    let geometry = OrbitGeometry::new(&spec)?;
    let lam = geometry.constants.lambda_plus;
    let law_for = |d: f64| TheoreticalLaw::ThetaLaw { loc: 0.5 * (2.0 * lam * d * d).ln() };
    let law = law_for(cfg.delta);
    let slack = cfg.delta;
    out.note(format!("KS threshold {FINAL_KS} + δ = {} (O(δ) correction of the limit law)", FINAL_KS + slack));
    let mut trend = Vec::new();
    let mut last = None;
    for &sigma in &cfg.sigmas {
        let (up, down, censored) = neighbourhood_sample(cfg, &spec, &geometry, sigma, cfg.delta, &format!("neighbourhood/{sigma}"))?;
        for v in &up {
            out.records.push(vec![sigma, cfg.delta, 1.0, *v]);
        }
        for v in &down {
            out.records.push(vec![sigma, cfg.delta, -1.0, *v]);
        }
        if up.len() < 2 || down.len() < 2 {
            out.partial(format!("σ={sigma}: {} up and {} down exits", up.len(), down.len()));
            out.criterion(TestReport::flag("conditioning", false, up.len() as f64, cfg.n, cfg.seed));
            return Ok(out.finish());
        }
        let ks = stats::ks_test_values(&up, &law);
        out.summary(
            SigmaSummary::new(format!("sigma={sigma}"), sigma, cfg.n, up.len())
                .with("ks", ks.statistic)
                .with("ks_down", stats::ks_test_values(&down, &law).statistic)
                .with("p_up", up.len() as f64 / (up.len() + down.len()) as f64)
                .with("censored", censored as f64),
        );
        trend.push(ks_entry(sigma, &ks));
        last = Some((sigma, up, down, ks));
    }
    let (sigma, up, down, ks) = last.expect("non-empty ladder");
    out.criterion(TestReport::below("ks_at_smallest_sigma", ks.statistic, FINAL_KS + slack, up.len(), cfg.seed));
    out.criterion(trend_check("ks_trend", &trend, KS_CRIT_5, cfg.seed));

    let half = 0.5 * cfg.delta;
    let (up_half, _, _) = neighbourhood_sample(cfg, &spec, &geometry, sigma, half, &format!("neighbourhood_half/{sigma}"))?;
    for v in &up_half {
        out.records.push(vec![sigma, half, 1.0, *v]);
    }
    let loc = location(&up, &law, cfg.resamples, seed_for(cfg, "loc"));
    let loc_half = location(&up_half, &law, cfg.resamples, seed_for(cfg, "loc_half"));
    out.criterion(shift_check("delta_halving_shift", &loc, &loc_half, law.mean() - law_for(half).mean(), up_half.len(), cfg.seed));

    if cfg.eps == 0.0 {
        let two = stats::ks_two_sample(&up, &down);
        out.criterion(TestReport::below("up_down_symmetry", two.statistic, two.critical(KS_CRIT_1), up.len().min(down.len()), cfg.seed));
    }
    Ok(out.finish())
}

/// Level pair `(Γ₋, Γ₊)` at φ = 0 for the flat-curve sampler, with the
/// curves' variation over φ.
fn flat_levels(curves: &GammaCurves) -> Result<(f64, f64)> {
    let spread = |c: &crate::dynamics::PeriodicCurve| {
        let (lo, hi) = c.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        hi - lo
    };
    if spread(&curves.minus) > 1e-6 || spread(&curves.plus) > 1e-6 {
        return Err(Error::Unsupported("the slip sampler needs φ-independent Γ curves (ε = 0)".into()));
    }
    Ok((curves.minus.eval(0.0), curves.plus.eval(0.0)))
}

struct Halves {
    first: Vec<f64>,
    second: Vec<f64>,
    sum: Vec<f64>,
    /// Raw `θ(φ₊) − θ(φ₋)`.
    duration: Vec<f64>,
    retries: u64,
}

fn slip_halves(cfg: &ExperimentConfig, spec: &SystemSpec, geometry: &OrbitGeometry, sigma: f64, s: f64, label: &str) -> Result<Halves> {
    let curves = gamma_s_curves(spec, geometry, s, cfg.delta)?;
    let (gm, gp) = flat_levels(&curves)?;
    let dt = cfg.dt.unwrap_or(DEFAULT_DT);
    let mut sampler = ConditionedSlipSampler::new(spec, sigma, dt, gm, gp, 0.0)?;
    sampler.max_time = cfg.horizon;
    let batch = run_batch(cfg.n, seed_for(cfg, label), cfg.mode(), |_, rng| sampler.sample(rng));
    if let Some((i, e)) = batch.failures.first() {
        return Err(Error::Numerical(format!("{label}: replicate {i}: {e}")));
    }
    let shift = sigma.ln().abs();
    let mut h = Halves { first: vec![], second: vec![], sum: vec![], duration: vec![], retries: 0 };
    for o in batch.values() {
        let r = &o.record;
        let (tm, t0, tp) = (geometry.theta(r.phi_minus), geometry.theta(r.phi_zero), geometry.theta(r.phi_plus));
        h.first.push(t0 - tm - shift);
        h.second.push(tp - t0 - shift);
        h.sum.push(tp - tm - 2.0 * shift);
        h.duration.push(tp - tm);
        h.retries += o.retries as u64;
    }
    Ok(h)
}

pub fn exp_slip_duration(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut out = Builder::new(cfg, &["sigma", "s", "first", "second", "sum"])?;
    let spec = build_melnikov_system(cfg.eps, cfg.omega)?;
    let geometry = OrbitGeometry::new(&spec)?;
    let laws_for = |s: f64| {
        [
            TheoreticalLaw::HalfGumbel { loc: s },
            TheoreticalLaw::ThetaLaw { loc: s },
            TheoreticalLaw::Gumbel { loc: 2.0 * s, scale: 1.0 },
        ]
    };
    let laws = laws_for(cfg.s);
    let names = ["first_half", "second_half", "sum"];
    let mut trends: [Vec<(f64, f64, f64)>; 3] = Default::default();
    let mut levels = Vec::new();
    for &sigma in &cfg.sigmas {
        let h = slip_halves(cfg, &spec, &geometry, sigma, cfg.s, &format!("slips/{sigma}/{}", cfg.s))?;
        for i in 0..h.first.len() {
            out.records.push(vec![sigma, cfg.s, h.first[i], h.second[i], h.sum[i]]);
        }
        let mut summary = SigmaSummary::new(format!("sigma={sigma}"), sigma, cfg.n, h.first.len())
            .with("mean_retries", h.retries as f64 / h.first.len() as f64);
        for (k, sample) in [&h.first, &h.second, &h.sum].into_iter().enumerate() {
            let ks = stats::ks_test_values(sample, &laws[k]);
            summary.set(&format!("ks_{}", names[k]), ks.statistic);
            trends[k].push(ks_entry(sigma, &ks));
        }
        out.summary(summary);
        levels.push((sigma, h));
    }
    for k in 0..3 {
        let (_, ks, n) = *trends[k].last().expect("non-empty ladder");
        out.criterion(TestReport::below(format!("ks_{}", names[k]), ks, FINAL_KS, n as usize, cfg.seed));
    }
    for k in 0..3 {
        out.criterion(trend_check(&format!("ks_trend_{}", names[k]), &trends[k], KS_CRIT_5, cfg.seed));
    }
    let (sigma_min, last) = levels.last().expect("non-empty ladder");

    // the halves are independent: pairing them at random must not change the sum
    let mut rng = crate::rng::stream(seed_for(cfg, "convolution"), 0);
    let mut perm: Vec<usize> = (0..last.second.len()).collect();
    for i in (1..perm.len()).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let convolved: Vec<f64> = last.first.iter().zip(&perm).map(|(a, &j)| a + last.second[j]).collect();
    let two = stats::ks_two_sample(&convolved, &last.sum);
    out.criterion(TestReport::below("sum_law_consistency", two.statistic, two.critical(KS_CRIT_1), last.sum.len(), cfg.seed));

    // s → s + 1 moves the laws by 1, 1 and 2
    let shifted = slip_halves(cfg, &spec, &geometry, *sigma_min, cfg.s + 1.0, &format!("slips/{sigma_min}/{}", cfg.s + 1.0))?;
    for i in 0..shifted.first.len() {
        out.records.push(vec![*sigma_min, cfg.s + 1.0, shifted.first[i], shifted.second[i], shifted.sum[i]]);
    }
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let mut notes = Vec::new();
    for (k, (a, b)) in [(&last.first, &shifted.first), (&last.second, &shifted.second), (&last.sum, &shifted.sum)].into_iter().enumerate() {
        let la = location(a, &laws[k], cfg.resamples, seed_for(cfg, &format!("s_loc/{k}")));
        let lb = location(b, &laws[k], cfg.resamples, seed_for(cfg, &format!("s_loc_shifted/{k}")));
        let expected = if k == 2 { 2.0 } else { 1.0 };
        let r = shift_check(names[k], &lb, &la, expected, b.len(), cfg.seed);
        ok &= r.pass;
        worst = worst.max((r.statistic - expected).abs());
        notes.push(format!("{}: {:.3} ({})", names[k], r.statistic, r.note.unwrap_or_default()));
    }
    notes.push("statistic: largest deviation from the expected shift".into());
    out.criterion(TestReport::flag("s_shift", ok, worst, shifted.sum.len(), cfg.seed).with_note(notes.join("; ")));

    // raw durations grow by 2Δ|log σ| between the two smallest levels
    if levels.len() >= 2 {
        let (sigma_prev, prev) = &levels[levels.len() - 2];
        let std = TheoreticalLaw::standard_gumbel();
        let l_min = location(&last.duration, &std, cfg.resamples, seed_for(cfg, "dur_min"));
        let l_prev = location(&prev.duration, &std, cfg.resamples, seed_for(cfg, "dur_prev"));
        let expected = 2.0 * (sigma_min.ln().abs() - sigma_prev.ln().abs());
        out.criterion(shift_check("log_sigma_shift", &l_min, &l_prev, expected, last.duration.len(), cfg.seed));
    }
    Ok(out.finish())
}

pub fn exp_residence_times(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut out = Builder::new(cfg, &["sigma", "chain", "theta_zero", "residence"])?;
    let sigma = cfg.sigmas[0];
    let spec = build_melnikov_system(cfg.eps, cfg.omega)?;
    let geometry = OrbitGeometry::new(&spec)?;
    let lt = geometry.lambda_t();
    let curves = gamma_s_curves(&spec, &geometry, cfg.s, cfg.delta)?;
    let (gm, gp) = curves.levels();
    let mut sim = SimConfig::new(sigma, &geometry.constants).with_max_time(cfg.horizon);
    if let Some(dt) = cfg.dt {
        sim = sim.with_dt(dt);
    }
    sim.validate(&geometry.constants)?;
    // one extra slip per chain: residences are differences
    let per_chain = cfg.n.div_ceil(CHAINS) + 1;
    let batch = run_batch(CHAINS, seed_for(cfg, &format!("slips/{sigma}")), cfg.mode(), |_, rng| {
        detect_slips(&spec, &sim, 0.0, &gm, &gp, per_chain, rng)
    });
    if let Some((i, e)) = batch.failures.first() {
        return Err(Error::Numerical(format!("chain {i}: {e}")));
    }
    let mut residences = Vec::new();
    let (mut attempts, mut crossings, mut successes, mut backward, mut complete) = (0u64, 0u64, 0u64, 0u64, true);
    for (chain, scan) in batch.records.iter() {
        attempts += scan.attempts;
        crossings += scan.zero_crossings;
        successes += scan.successes;
        backward += scan.backward;
        complete &= scan.complete;
        let thetas: Vec<f64> = scan.successful().map(|r| geometry.theta(r.phi_zero)).collect();
        for w in thetas.windows(2) {
            residences.push(w[1] - w[0]);
            out.records.push(vec![sigma, *chain as f64, w[1], w[1] - w[0]]);
        }
    }
    if !complete {
        out.partial(format!("slip harvest hit the time budget {} in some chains", cfg.horizon));
    }
    if residences.len() < 1000 {
        out.partial(format!("only {} residence times", residences.len()));
        out.criterion(TestReport::flag("slips", false, residences.len() as f64, cfg.n, cfg.seed));
        return Ok(out.finish());
    }
    // residence = λ₊T₊·Y + logistic part; wrapping mod λ₊T₊ around the
    // circular location separates the two
    let loc = stats::circular_location(&residences, lt);
    let wrapped: Vec<f64> = residences.iter().map(|&x| stats::circular_difference(x, loc, lt)).collect();
    let ys: Vec<f64> = residences.iter().zip(&wrapped).map(|(x, w)| ((x - loc - w) / lt).round()).collect();
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y: Vec<u64> = ys.iter().map(|v| (v - y_min) as u64).collect();
    let mut sorted = wrapped.clone();
    sorted.sort_by(f64::total_cmp);
    let median = stats::quantile_sorted(&sorted, 0.5);
    let centred: Vec<f64> = wrapped.iter().map(|w| w - median).collect();
    let ks = stats::ks_test_values(&centred, &TheoreticalLaw::Logistic { loc: 0.0, scale: 0.5 });
    let sign_p = stats::sign_test(&wrapped, stats::mean(&wrapped));
    let tail = asymp_geometric_tail_fit(&y, cfg.resamples, seed_for(cfg, "tail"))?;
    let kernel = estimate_kernel(&spec, &sim, cfg.cells, cfg.n_per_cell, seed_for(cfg, "kernel"), cfg.mode())?;
    let spectral = principal_eigen(&kernel.matrix)?;
    let lambda_ci = kernel.lambda0_ci(cfg.resamples, seed_for(cfg, "kernel/bootstrap"))?;
    let gap = stats::Interval { estimate: 1.0 - spectral.lambda0, lo: 1.0 - lambda_ci.hi, hi: 1.0 - lambda_ci.lo, se: lambda_ci.se };
    // The kernel loses paths through r = 0 and r = −1; the fold symmetry
    // (r, φ) ↦ (−1 − r, φ + ½) sends half of the exits each way. A forward
    // slip also has to complete after reaching r = 0.
    let p_success = successes as f64 / crossings.max(1) as f64;
    let se_success = (p_success * (1.0 - p_success) / crossings.max(1) as f64).sqrt();
    let predicted = 0.5 * gap.estimate * p_success;
    let rel_se = ((gap.se / gap.estimate).powi(2) + (se_success / p_success).powi(2)).sqrt();
    let expected = stats::Interval {
        estimate: predicted,
        lo: predicted * (1.0 - Z95 * rel_se),
        hi: predicted * (1.0 + Z95 * rel_se),
        se: predicted * rel_se,
    };
    out.summary(
        SigmaSummary::new(format!("sigma={sigma}"), sigma, cfg.n, residences.len())
            .with("ks_logistic", ks.statistic)
            .with("sign_test_p", sign_p)
            .with("hazard", tail.p.estimate)
            .with("hazard_lo", tail.p.lo)
            .with("hazard_hi", tail.p.hi)
            .with("one_minus_lambda0", gap.estimate)
            .with("success_fraction", p_success)
            .with("predicted_hazard", predicted)
            .with("backward_slips", backward as f64)
            .with("mean_periods", stats::mean(&ys))
            .with("attempts", attempts as f64)
            .with("zero_crossings", crossings as f64),
    );
    out.criterion(TestReport::below("logistic_ks", ks.statistic, ks.critical(KS_CRIT_5), residences.len(), cfg.seed));
    out.criterion(
        TestReport::flag("residual_symmetry", sign_p > 0.01, sign_p, residences.len(), cfg.seed)
            .with_note("sign test of the wrapped residual about its mean"),
    );
    out.criterion(
        TestReport::flag("geometric_hazard", tail.p.overlaps(&expected), tail.p.estimate, residences.len(), cfg.seed).with_note(format!(
            "hazard [{:.4}, {:.4}] vs ½(1 − λ0)·P(success) = {:.4} [{:.4}, {:.4}], 1 − λ0 = {:.4}, P(success) = {:.3}",
            tail.p.lo, tail.p.hi, expected.estimate, expected.lo, expected.hi, gap.estimate, p_success
        )),
    );
    Ok(out.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentId;

    #[test]
    fn flat_levels_match_the_closed_form() {
        let spec = build_melnikov_system(0.0, 1.0).unwrap();
        let g = OrbitGeometry::new(&spec).unwrap();
        let c = gamma_s_curves(&spec, &g, 0.0, 0.05).unwrap();
        let (m, p) = flat_levels(&c).unwrap();
        let exact = crate::ldp::melnikov_flat_gamma(0.0);
        assert!((p - exact).abs() < 1e-3 && (m + exact).abs() < 1e-3, "{m} {p} {exact}");
    }

    #[test]
    fn sampler_refuses_modulated_curves() {
        let spec = build_melnikov_system(0.2, 1.0).unwrap();
        let g = OrbitGeometry::new(&spec).unwrap();
        let c = gamma_s_curves(&spec, &g, 0.0, 0.05).unwrap();
        assert!(flat_levels(&c).is_err());
    }

    #[test]
    fn neighbourhood_exits_split_evenly_at_zero_eps() {
        let mut cfg = ExperimentConfig::defaults(ExperimentId::ExitNeighborhood);
        cfg.n = 400;
        let spec = build_melnikov_system(0.0, 1.0).unwrap();
        let g = OrbitGeometry::new(&spec).unwrap();
        let (up, down, censored) = neighbourhood_sample(&cfg, &spec, &g, 0.01, 0.05, "t").unwrap();
        assert_eq!(censored, 0);
        let p = up.len() as f64 / 400.0;
        assert!((p - 0.5).abs() < 3.0 * (0.25f64 / 400.0).sqrt(), "{p}");
        assert!(down.iter().all(|v| v.is_finite()));
    }
}
