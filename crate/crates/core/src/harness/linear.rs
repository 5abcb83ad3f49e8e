//! Exit laws of the linear explosive process `dx = λx dt + σ dW`, sampled
//! exactly.

use super::{ks_entry, location, seed_for, shift_check, starvation, trend_check, Builder, ExperimentConfig, ExperimentRun, SigmaSummary};
use crate::dynamics::{run_batch, LinearOu};
use crate::error::{Error, Result};
use crate::laws::TheoreticalLaw;
use crate::stats::{self, TestReport, KS_CRIT_5};

/// Acceptance rate below which the conditioning counts as starved.
const MIN_ACCEPTANCE: f64 = 1e-4;
const FINAL_KS: f64 = 0.02;

/// `λτ_b − |log σ|` for the paths that leave `(a, b)` through `b`, plus the
/// number of replicates that left through `a`.
fn exit_up_sample(cfg: &ExperimentConfig, sigma: f64, a: f64, b: f64, label: &str) -> Result<(Vec<f64>, usize, usize)> {
    let ou = LinearOu::new(cfg.lambda, sigma)?;
    let batch = run_batch(cfg.n, seed_for(cfg, label), cfg.mode(), |_, rng| ou.exit(cfg.x0, Some(a), Some(b), cfg.horizon, rng));
    if let Some((i, e)) = batch.failures.first() {
        return Err(Error::Numerical(format!("{label}: replicate {i}: {e}")));
    }
    let shift = sigma.ln().abs();
    let (mut up, mut down, mut killed) = (Vec::new(), 0, 0);
    for e in batch.values() {
        match e.side {
            1 => up.push(cfg.lambda * e.time - shift),
            -1 => down += 1,
            _ => killed += 1,
        }
    }
    Ok((up, down, killed))
}

pub fn exp_linear_exit_up(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut out = Builder::new(cfg, &["sigma", "b", "index", "statistic"])?;
    if !(cfg.x0 > cfg.a && cfg.x0 < cfg.b) {
        return Err(Error::InvalidParameter("need a < x0 < b".into()));
    }
    let law_for = |b: f64| TheoreticalLaw::ThetaLaw { loc: 0.5 * (2.0 * b * b * cfg.lambda).ln() };
    let law = law_for(cfg.b);
    let mut trend = Vec::new();
    let mut last = None;
    for &sigma in &cfg.sigmas {
        let (up, down, killed) = exit_up_sample(cfg, sigma, cfg.a, cfg.b, &format!("exit_up/{sigma}"))?;
        if let Some(msg) = starvation(up.len(), cfg.n, MIN_ACCEPTANCE) {
            out.partial(format!("σ={sigma}: {msg}"));
            out.criterion(TestReport::flag("conditioning", false, up.len() as f64, cfg.n, cfg.seed).with_note(msg));
            return Ok(out.finish());
        }
        for (i, v) in up.iter().enumerate() {
            out.records.push(vec![sigma, cfg.b, i as f64, *v]);
        }
        let ks = stats::ks_test_values(&up, &law);
        let p_up = up.len() as f64 / (up.len() + down) as f64;
        out.summary(
            SigmaSummary::new(format!("sigma={sigma}"), sigma, cfg.n, up.len())
                .with("ks", ks.statistic)
                .with("ks_p", ks.p_value)
                .with("p_up", p_up)
                .with("killed", killed as f64),
        );
        trend.push(ks_entry(sigma, &ks));
        let exits = up.len() + down;
        last = Some((sigma, up, ks, p_up, exits));
    }
    let (sigma, up, ks, p_up, exits) = last.expect("non-empty ladder");
    out.criterion(TestReport::below("ks_at_smallest_sigma", ks.statistic, FINAL_KS, up.len(), cfg.seed));
    out.criterion(trend_check("ks_trend", &trend, KS_CRIT_5, cfg.seed));
    if (cfg.a + cfg.b).abs() < 1e-12 && cfg.x0 == 0.0 {
        let se = (0.25 / exits as f64).sqrt();
        out.criterion(
            TestReport::below("sign_split", (p_up - 0.5).abs(), 3.0 * se, exits, cfg.seed)
                .with_note(format!("P(exit at +b) = {p_up:.4}")),
        );
    }
    // doubling both boundaries moves the location by log 2
    let (b2, a2) = (2.0 * cfg.b, cfg.x0 - 2.0 * (cfg.x0 - cfg.a));
    let (up2, _, _) = exit_up_sample(cfg, sigma, a2, b2, &format!("exit_up_shift/{sigma}"))?;
    for (i, v) in up2.iter().enumerate() {
        out.records.push(vec![sigma, b2, i as f64, *v]);
    }
    let loc1 = location(&up, &law, cfg.resamples, seed_for(cfg, "loc1"));
    let loc2 = location(&up2, &law, cfg.resamples, seed_for(cfg, "loc2"));
    let expected = law_for(b2).mean() - law.mean();
    out.summary(SigmaSummary::new(format!("shift b={b2}"), sigma, cfg.n, up2.len()).with("location", loc2.estimate).with("location_b", loc1.estimate));
    out.criterion(shift_check("b_doubling_shift", &loc2, &loc1, expected, up2.len(), cfg.seed));
    Ok(out.finish())
}

/// `λτ₀ − |log σ|` conditioned on `τ₀ < τ_a`.
fn hit_zero_sample(cfg: &ExperimentConfig, sigma: f64, x0: f64, label: &str) -> Result<Vec<f64>> {
    let ou = LinearOu::new(cfg.lambda, sigma)?;
    let batch = run_batch(cfg.n, seed_for(cfg, label), cfg.mode(), |_, rng| ou.hit_zero_conditioned(x0, cfg.a, rng));
    if let Some((i, e)) = batch.failures.first() {
        return Err(Error::Numerical(format!("{label}: replicate {i}: {e}")));
    }
    let shift = sigma.ln().abs();
    Ok(batch.into_values().into_iter().map(|t| cfg.lambda * t - shift).collect())
}

/// Limiting CDF `exp{−x₀²λ e^{−2u}}` of `u = λτ₀ − |log σ|`.
pub fn hit_zero_limit_cdf(u: f64, x0: f64, lambda: f64) -> f64 {
    (-(x0 * x0 * lambda) * (-2.0 * u).exp()).exp()
}

pub fn exp_linear_hit_zero(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let mut out = Builder::new(cfg, &["sigma", "x0", "index", "statistic"])?;
    if !(cfg.a < cfg.x0 && cfg.x0 < 0.0) {
        return Err(Error::InvalidParameter("need a < x0 < 0".into()));
    }
    let law_for = |x0: f64| TheoreticalLaw::half_gumbel_centered(0.5 * (x0 * x0 * cfg.lambda).ln());
    let law = law_for(cfg.x0);
    let ou = LinearOu::new(cfg.lambda, cfg.sigmas[0])?;
    let mut trend = Vec::new();
    let mut last = None;
    for &sigma in &cfg.sigmas {
        let sample = hit_zero_sample(cfg, sigma, cfg.x0, &format!("hit_zero/{sigma}"))?;
        for (i, v) in sample.iter().enumerate() {
            out.records.push(vec![sigma, cfg.x0, i as f64, *v]);
        }
        let ks = stats::ks_test_values(&sample, &law);
        let direct = stats::ks_test_values(&sample, &|u: f64| hit_zero_limit_cdf(u, cfg.x0, cfg.lambda));
        let p_hit = LinearOu { sigma, ..ou }.p_hit_zero(cfg.x0);
        out.summary(
            SigmaSummary::new(format!("sigma={sigma}"), sigma, cfg.n, sample.len())
                .with("ks", ks.statistic)
                .with("ks_direct_cdf", direct.statistic)
                .with("ks_p", ks.p_value)
                .with("p_hit_zero", p_hit),
        );
        trend.push(ks_entry(sigma, &ks));
        last = Some((sigma, sample, ks, direct));
    }
    let (sigma, sample, ks, direct) = last.expect("non-empty ladder");
    out.criterion(TestReport::below("ks_at_smallest_sigma", ks.statistic, FINAL_KS, sample.len(), cfg.seed));
    out.criterion(trend_check("ks_trend", &trend, KS_CRIT_5, cfg.seed));
    out.criterion(
        TestReport::below("direct_cdf_agrees", (ks.statistic - direct.statistic).abs(), 1e-9, sample.len(), cfg.seed)
            .with_note("KS against the half-Gumbel law and against exp{−x0²λe^{−2u}}"),
    );
    let x_half = 0.5 * cfg.x0;
    let half = hit_zero_sample(cfg, sigma, x_half, &format!("hit_zero_shift/{sigma}"))?;
    for (i, v) in half.iter().enumerate() {
        out.records.push(vec![sigma, x_half, i as f64, *v]);
    }
    let loc_full = location(&sample, &law, cfg.resamples, seed_for(cfg, "loc_full"));
    let loc_half = location(&half, &law, cfg.resamples, seed_for(cfg, "loc_half"));
    out.summary(
        SigmaSummary::new(format!("shift x0={x_half}"), sigma, cfg.n, half.len())
            .with("location", loc_half.estimate)
            .with("location_x0", loc_full.estimate),
    );
    out.criterion(shift_check("x0_doubling_shift", &loc_full, &loc_half, std::f64::consts::LN_2, half.len(), cfg.seed));
    Ok(out.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentId;

    #[test]
    fn limit_cdf_is_one_over_e_at_the_balance_point() {
        let (x0, lambda) = (-0.5f64, 1.0);
        // x0²λe^{−2u} = 1
        let u = 0.5 * (x0 * x0 * lambda).ln();
        assert!((hit_zero_limit_cdf(u, x0, lambda) - (-1f64).exp()).abs() < 1e-15);
        let law = TheoreticalLaw::half_gumbel_centered(u);
        for t in [-2.0, -0.5, 0.0, 1.5] {
            assert!((law.cdf(t) - hit_zero_limit_cdf(t, x0, lambda)).abs() < 1e-12);
        }
    }

    #[test]
    fn small_exit_up_run_reports_every_criterion() {
        let mut cfg = ExperimentConfig::defaults(ExperimentId::LinearExitUp);
        cfg.n = 2000;
        cfg.sigmas = vec![0.1, 0.01];
        let run = exp_linear_exit_up(&cfg).unwrap();
        let names: Vec<&str> = run.report.criteria.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["ks_at_smallest_sigma", "ks_trend", "sign_split", "b_doubling_shift"]);
        assert!(run.report.criterion("sign_split").unwrap().pass);
        assert!(run.report.criterion("b_doubling_shift").unwrap().pass);
    }

    #[test]
    fn hit_zero_run_is_reproducible_across_modes() {
        let mut cfg = ExperimentConfig::defaults(ExperimentId::LinearHitZero);
        cfg.n = 500;
        cfg.sigmas = vec![0.05, 0.01];
        cfg.threads = 1;
        let a = exp_linear_hit_zero(&cfg).unwrap();
        cfg.threads = 3;
        let b = exp_linear_hit_zero(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert!(a.report.criterion("direct_cdf_agrees").unwrap().pass);
    }
}
