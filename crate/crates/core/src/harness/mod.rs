//! Experiment drivers: each one runs a σ ladder, compares the conditional
//! samples with their limit laws and returns a report with one pass/fail
//! line per criterion. Runs are persisted as a directory holding the config
//! snapshot, the records and the report.

mod crossing;
mod duration;
mod linear;
mod reactive;

pub use crossing::{exp_crossing_phase, exp_spectral};
pub use duration::{exp_exit_neighborhood, exp_residence_times, exp_slip_duration};
pub use linear::{exp_linear_exit_up, exp_linear_hit_zero};
pub use reactive::{double_well_time_shift, exp_reactive_path_1d, reactive_time_shift};

use crate::error::{Error, Result};
use crate::laws::TheoreticalLaw;
use crate::par::Parallelism;
use crate::stats::{self, Interval, KsReport, TestReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

/// Bootstrap resamples used for location intervals unless configured.
pub const DEFAULT_RESAMPLES: usize = 200;
/// Two-sided 95% normal quantile for difference intervals.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    LinearExitUp,
    LinearHitZero,
    ReactivePath1d,
    CrossingPhase,
    Spectral,
    ExitNeighborhood,
    SlipDuration,
    ResidenceTimes,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::LinearExitUp,
        ExperimentId::LinearHitZero,
        ExperimentId::ReactivePath1d,
        ExperimentId::CrossingPhase,
        ExperimentId::Spectral,
        ExperimentId::ExitNeighborhood,
        ExperimentId::SlipDuration,
        ExperimentId::ResidenceTimes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::LinearExitUp => "linear_exit_up",
            ExperimentId::LinearHitZero => "linear_hit_zero",
            ExperimentId::ReactivePath1d => "reactive_path_1d",
            ExperimentId::CrossingPhase => "crossing_phase",
            ExperimentId::Spectral => "spectral",
            ExperimentId::ExitNeighborhood => "exit_neighborhood",
            ExperimentId::SlipDuration => "slip_duration",
            ExperimentId::ResidenceTimes => "residence_times",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.replace('-', "_");
        ExperimentId::ALL.into_iter().find(|id| id.name() == key).ok_or_else(|| {
            let known: Vec<&str> = ExperimentId::ALL.iter().map(|id| id.name()).collect();
            Error::InvalidParameter(format!("unknown experiment '{s}' (known: {})", known.join(", ")))
        })
    }
}

/// Parameters of one run. Not every field is used by every experiment;
/// `ExperimentConfig::defaults` fills in the values each one expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    /// σ ladder, largest first.
    pub sigmas: Vec<f64>,
    /// Replicates per σ level.
    pub n: usize,
    pub seed: u64,
    /// 0 = all cores, 1 = sequential.
    pub threads: usize,
    /// Time step of the main runs; `None` picks the experiment default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub eps: f64,
    pub omega: f64,
    pub lambda: f64,
    pub x0: f64,
    pub a: f64,
    pub b: f64,
    pub delta: f64,
    pub s: f64,
    pub cells: usize,
    pub n_per_cell: usize,
    /// Time (1-d experiments) or number of periods (planar ones) after
    /// which a replicate is censored.
    pub horizon: f64,
    /// Extra σ values: Eyring–Kramers and exponential-law runs for the
    /// reactive path, the refinement/survival level for `spectral`.
    pub companion_sigmas: Vec<f64>,
    pub companion_n: usize,
    pub resamples: usize,
}

impl ExperimentConfig {
    pub fn defaults(id: ExperimentId) -> Self {
        let base = ExperimentConfig {
            id,
            sigmas: vec![0.1, 0.03, 0.01],
            n: 100_000,
            seed: 20_240_601,
            threads: 0,
            dt: None,
            eps: 0.0,
            omega: 1.0,
            lambda: 1.0,
            x0: 0.0,
            a: -1.0,
            b: 1.0,
            delta: 0.05,
            s: 0.0,
            cells: crate::poincare::DEFAULT_CELLS,
            n_per_cell: crate::poincare::MIN_PER_CELL,
            horizon: 1000.0,
            companion_sigmas: Vec::new(),
            companion_n: 0,
            resamples: DEFAULT_RESAMPLES,
        };
        match id {
            ExperimentId::LinearExitUp => base,
            ExperimentId::LinearHitZero => ExperimentConfig { x0: -0.5, ..base },
            ExperimentId::ReactivePath1d => ExperimentConfig {
                sigmas: vec![0.1, 0.07, 0.05],
                n: 30_000,
                x0: -0.5,
                a: -0.9,
                b: 0.5,
                horizon: 1e3,
                companion_sigmas: vec![0.45, 0.35],
                companion_n: 3000,
                ..base
            },
            ExperimentId::CrossingPhase => ExperimentConfig {
                sigmas: vec![0.45, 0.4, 0.35],
                n: 10_000,
                eps: 0.05,
                horizon: 1e4,
                ..base
            },
            ExperimentId::Spectral => ExperimentConfig {
                sigmas: vec![0.35, 0.3, 0.25],
                n: 10_000,
                horizon: 1e4,
                companion_sigmas: vec![0.4],
                ..base
            },
            ExperimentId::ExitNeighborhood => ExperimentConfig { sigmas: vec![0.03, 0.01, 0.003], n: 10_000, ..base },
            ExperimentId::SlipDuration => ExperimentConfig { sigmas: vec![0.1, 0.05, 0.025], n: 10_000, ..base },
            ExperimentId::ResidenceTimes => ExperimentConfig {
                sigmas: vec![0.4],
                n: 10_000,
                eps: 0.05,
                horizon: 1e7,
                ..base
            },
        }
    }

    pub fn mode(&self) -> Parallelism {
        Parallelism::from_threads(self.threads)
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigmas.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Overlay the keys of a TOML document on this config. Unknown keys and
    /// a conflicting `id` are errors.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let overrides: toml::Table = toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        for (k, v) in overrides {
            table.insert(k, v);
        }
        let merged: ExperimentConfig = table.try_into().map_err(|e| Error::InvalidParameter(format!("config: {e}")))?;
        if merged.id != self.id {
            return Err(Error::InvalidParameter(format!(
                "config file is for '{}' but the run is '{}'",
                merged.id, self.id
            )));
        }
        *self = merged;
        self.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidParameter(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidParameter("sigmas must be a non-empty list of positive values".into()));
        }
        if self.sigmas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter("sigmas must be strictly decreasing".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidParameter("n must be positive".into()));
        }
        if self.dt.is_some_and(|dt| !(dt > 0.0)) {
            return Err(Error::InvalidParameter("dt must be positive".into()));
        }
        if self.resamples < 20 {
            return Err(Error::InvalidParameter("resamples must be at least 20".into()));
        }
        Ok(())
    }
}

/// Plain numeric table, written as CSV with the master seed on a leading
/// comment line.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Records {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Records {
    pub fn new(columns: &[&str]) -> Self {
        Records { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W, master_seed: u64) -> Result<()> {
        writeln!(w, "# master_seed={master_seed}")?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in &self.rows {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Summary statistics of one σ level (or one auxiliary run).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaSummary {
    pub label: String,
    pub sigma: f64,
    /// Replicates requested and replicates that entered the statistics.
    pub requested: usize,
    pub used: usize,
    pub values: BTreeMap<String, f64>,
}

impl SigmaSummary {
    pub fn new(label: impl Into<String>, sigma: f64, requested: usize, used: usize) -> Self {
        SigmaSummary { label: label.into(), sigma, requested, used, values: BTreeMap::new() }
    }

    pub fn with(mut self, key: &str, value: f64) -> Self {
        self.values.insert(key.to_string(), value);
        self
    }

    pub fn set(&mut self, key: &str, value: f64) {
        self.values.insert(key.to_string(), value);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub id: ExperimentId,
    pub config: ExperimentConfig,
    pub per_sigma: Vec<SigmaSummary>,
    pub criteria: Vec<TestReport>,
    pub notes: Vec<String>,
    /// Some part of the run was cut short by its budget.
    pub partial: bool,
    pub pass: bool,
    pub runtime_secs: f64,
}

impl ExperimentReport {
    pub fn criterion(&self, name: &str) -> Option<&TestReport> {
        self.criteria.iter().find(|c| c.name == name)
    }

    /// One line per criterion.
    pub fn summary_lines(&self) -> Vec<String> {
        self.criteria
            .iter()
            .map(|c| {
                let verdict = if c.pass { "PASS" } else { "FAIL" };
                let thr = if c.threshold.is_nan() { String::new() } else { format!(" (threshold {:.4})", c.threshold) };
                let note = c.note.as_deref().map(|n| format!(" — {n}")).unwrap_or_default();
                format!("[{verdict}] {}/{}: {:.4}{thr}{note}", self.id, c.name, c.statistic)
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub records: Records,
}

/// Collects summaries, criteria and records while an experiment runs.
pub(crate) struct Builder {
    config: ExperimentConfig,
    started: Instant,
    per_sigma: Vec<SigmaSummary>,
    criteria: Vec<TestReport>,
    notes: Vec<String>,
    partial: bool,
    pub records: Records,
}

impl Builder {
    pub fn new(config: &ExperimentConfig, columns: &[&str]) -> Result<Self> {
        config.validate()?;
        Ok(Builder {
            config: config.clone(),
            started: Instant::now(),
            per_sigma: Vec::new(),
            criteria: Vec::new(),
            notes: Vec::new(),
            partial: false,
            records: Records::new(columns),
        })
    }

    pub fn summary(&mut self, s: SigmaSummary) {
        self.per_sigma.push(s);
    }

    pub fn criterion(&mut self, c: TestReport) {
        self.criteria.push(c);
    }

    pub fn note(&mut self, n: impl Into<String>) {
        self.notes.push(n.into());
    }

    pub fn partial(&mut self, why: impl Into<String>) {
        self.partial = true;
        self.notes.push(why.into());
    }

    pub fn finish(self) -> ExperimentRun {
        let pass = !self.criteria.is_empty() && self.criteria.iter().all(|c| c.pass);
        ExperimentRun {
            report: ExperimentReport {
                id: self.config.id,
                config: self.config,
                per_sigma: self.per_sigma,
                criteria: self.criteria,
                notes: self.notes,
                partial: self.partial,
                pass,
                runtime_secs: self.started.elapsed().as_secs_f64(),
            },
            records: self.records,
        }
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentRun> {
    match config.id {
        ExperimentId::LinearExitUp => exp_linear_exit_up(config),
        ExperimentId::LinearHitZero => exp_linear_hit_zero(config),
        ExperimentId::ReactivePath1d => exp_reactive_path_1d(config),
        ExperimentId::CrossingPhase => exp_crossing_phase(config),
        ExperimentId::Spectral => exp_spectral(config),
        ExperimentId::ExitNeighborhood => exp_exit_neighborhood(config),
        ExperimentId::SlipDuration => exp_slip_duration(config),
        ExperimentId::ResidenceTimes => exp_residence_times(config),
    }
}

/// Write `config.toml`, `records.csv` and `report.json` into `dir`.
pub fn persist(run: &ExperimentRun, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), run.report.config.to_toml()?)?;
    let f = std::fs::File::create(dir.join("records.csv"))?;
    run.records.write_csv(std::io::BufWriter::new(f), run.report.config.seed)?;
    let json = serde_json::to_string_pretty(&run.report).map_err(|e| Error::Numerical(format!("report: {e}")))?;
    std::fs::write(dir.join("report.json"), json)?;
    Ok(dir.to_path_buf())
}

// ---- shared checks ----

pub(crate) fn seed_for(config: &ExperimentConfig, label: &str) -> u64 {
    crate::rng::derive_seed(config.seed, label)
}

/// Location of a sample under a known shape: `mean(sample) − mean(shape)`,
/// with a bootstrap interval.
pub(crate) fn location(sample: &[f64], shape: &TheoreticalLaw, resamples: usize, seed: u64) -> Interval {
    let m = shape.mean();
    let ci = stats::bootstrap_ci(sample, stats::mean, resamples, seed, 0.95);
    Interval { estimate: ci.estimate - m, lo: ci.lo - m, hi: ci.hi - m, se: ci.se }
}

/// Does `upper − lower` contain `expected` at 95%?
pub(crate) fn shift_check(name: &str, upper: &Interval, lower: &Interval, expected: f64, n: usize, seed: u64) -> TestReport {
    let d = upper.difference(lower, Z95);
    TestReport::flag(name, d.contains(expected), d.estimate, n, seed).with_note(format!(
        "expected {expected:.4}, 95% interval [{:.4}, {:.4}]",
        d.lo, d.hi
    ))
}

/// KS (or Kuiper) statistics along the ladder must shrink within the noise
/// floor `coefficient/√n` (see `stats::monotone_within_noise`).
pub(crate) fn trend_check(name: &str, stats_by_sigma: &[(f64, f64, f64)], coefficient: f64, seed: u64) -> TestReport {
    let values: Vec<f64> = stats_by_sigma.iter().map(|s| s.1).collect();
    let floors: Vec<f64> = stats_by_sigma.iter().map(|s| coefficient / s.2.sqrt()).collect();
    let pass = stats::monotone_within_noise(&values, &floors);
    let n = stats_by_sigma.iter().map(|s| s.2 as usize).min().unwrap_or(0);
    let mut listing: Vec<String> = stats_by_sigma.iter().map(|(s, v, _)| format!("σ={s}: {v:.4}")).collect();
    if let (Some(v), Some(f)) = (values.last(), floors.last()) {
        if pass && v < f {
            listing.push(format!("last level within the noise floor {f:.4}"));
        }
    }
    TestReport::flag(name, pass, *values.last().unwrap_or(&f64::NAN), n, seed).with_note(listing.join(", "))
}

pub(crate) fn ks_entry(sigma: f64, ks: &KsReport) -> (f64, f64, f64) {
    (sigma, ks.statistic, ks.n_eff)
}

/// Fraction of `accepted` among `total`, and a starvation diagnostic when it
/// drops below `floor`.
pub(crate) fn starvation(accepted: usize, total: usize, floor: f64) -> Option<String> {
    let rate = accepted as f64 / total.max(1) as f64;
    (accepted == 0 || rate < floor)
        .then(|| format!("conditioning starved: {accepted} of {total} replicates accepted (rate {rate:.2e} < {floor:.0e})"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::KS_CRIT_5;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.name().parse::<ExperimentId>().unwrap(), id);
        }
        assert_eq!("exit-neighborhood".parse::<ExperimentId>().unwrap(), ExperimentId::ExitNeighborhood);
        assert!("nope".parse::<ExperimentId>().is_err());
    }

    #[test]
    fn toml_overrides_win_and_round_trip() {
        let mut c = ExperimentConfig::defaults(ExperimentId::LinearExitUp);
        c.n = 5;
        c.apply_toml("n = 77\nsigmas = [0.2, 0.1]\ndt = 0.001\n").unwrap();
        assert_eq!(c.n, 77);
        assert_eq!(c.sigmas, vec![0.2, 0.1]);
        assert_eq!(c.dt, Some(0.001));
        let text = c.to_toml().unwrap();
        let mut d = ExperimentConfig::defaults(ExperimentId::LinearExitUp);
        d.apply_toml(&text).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn toml_rejects_unknown_keys_and_other_ids() {
        let mut c = ExperimentConfig::defaults(ExperimentId::Spectral);
        assert!(c.apply_toml("bogus = 1").is_err());
        assert!(c.apply_toml("id = \"linear_exit_up\"").is_err());
        assert!(c.apply_toml("sigmas = [0.1, 0.2]").is_err());
    }

    #[test]
    fn defaults_validate() {
        for id in ExperimentId::ALL {
            ExperimentConfig::defaults(id).validate().unwrap();
        }
    }

    #[test]
    fn records_csv_has_seed_header() {
        let mut r = Records::new(&["a", "b"]);
        r.push(vec![1.0, 0.1]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf, 42).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "# master_seed=42\na,b\n1,0.1\n");
    }

    #[test]
    fn shift_check_uses_both_errors() {
        let a = Interval { estimate: 1.0, lo: 0.9, hi: 1.1, se: 0.05 };
        let b = Interval { estimate: 0.0, lo: -0.1, hi: 0.1, se: 0.05 };
        assert!(shift_check("x", &a, &b, 1.1, 10, 0).pass);
        assert!(!shift_check("x", &a, &b, 1.2, 10, 0).pass);
    }

    #[test]
    fn trend_passes_when_improving_or_already_converged() {
        // n = 10⁴: floor 0.0136 at the 5% coefficient
        let n = 1e4;
        assert!(trend_check("t", &[(0.1, 0.05, n), (0.03, 0.03, n), (0.01, 0.02, n)], KS_CRIT_5, 0).pass);
        assert!(trend_check("t", &[(0.1, 0.004, n), (0.03, 0.006, n), (0.01, 0.009, n)], KS_CRIT_5, 0).pass);
        assert!(!trend_check("t", &[(0.1, 0.02, n), (0.03, 0.03, n), (0.01, 0.05, n)], KS_CRIT_5, 0).pass);
        assert!(!trend_check("t", &[(0.1, 0.30, n), (0.03, 0.29, n), (0.01, 0.295, n)], KS_CRIT_5, 0).pass);
    }

    #[test]
    fn starvation_threshold() {
        assert!(starvation(0, 100, 1e-4).is_some());
        assert!(starvation(1, 100_000, 1e-4).is_some());
        assert!(starvation(50, 100, 1e-4).is_none());
    }
}
