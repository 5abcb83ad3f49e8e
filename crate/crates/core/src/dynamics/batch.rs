use crate::error::Error;
use crate::par::{map_indexed, Parallelism};
use crate::rng::{self, StreamRng};
use serde::Serialize;

/// Records of a batch in replicate order, plus the replicates that failed.
#[derive(Debug, Clone, Serialize)]
pub struct BatchResult<T> {
    pub master_seed: u64,
    pub records: Vec<(u64, T)>,
    pub failures: Vec<(u64, String)>,
}

impl<T> BatchResult<T> {
    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.records.iter().map(|(_, v)| v)
    }

    pub fn into_values(self) -> Vec<T> {
        self.records.into_iter().map(|(_, v)| v).collect()
    }

    pub fn failure_count(&self) -> usize {
        self.failures.len()
    }
}

/// Run `n` replicates of `kernel(index, rng)`; replicate `i` draws from
/// `rng::stream(master_seed, i)`, so the output is independent of `mode`.
pub fn run_batch<T, F>(n: usize, master_seed: u64, mode: Parallelism, kernel: F) -> BatchResult<T>
where
    T: Send,
    F: Fn(u64, &mut StreamRng) -> Result<T, Error> + Sync + Send,
{
    let out = map_indexed(n, mode, |i| {
        let mut r = rng::stream(master_seed, i as u64);
        kernel(i as u64, &mut r)
    });
    let mut records = Vec::with_capacity(n);
    let mut failures = Vec::new();
    for (i, res) in out.into_iter().enumerate() {
        match res {
            Ok(v) => records.push((i as u64, v)),
            Err(e) => failures.push((i as u64, e.to_string())),
        }
    }
    BatchResult { master_seed, records, failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{first_passage, Boundary, SimConfig, State};
    use crate::model::{build_melnikov_system, compute_exponents};
    use crate::stats;
    use rand::Rng;

    #[test]
    fn empty_batch() {
        let b = run_batch(0, 1, Parallelism::Auto, |_, r| Ok(r.random::<f64>()));
        assert!(b.records.is_empty() && b.failures.is_empty());
    }

    #[test]
    fn failures_are_collected() {
        let b = run_batch(10, 1, Parallelism::Sequential, |i, _| {
            if i % 3 == 0 {
                Err(Error::Numerical("boom".into()))
            } else {
                Ok(i)
            }
        });
        assert_eq!(b.failure_count(), 4);
        assert_eq!(b.records.len(), 6);
    }

    fn hit_phis(seed: u64, mode: Parallelism) -> Vec<f64> {
        let s = build_melnikov_system(0.05, 1.0).unwrap();
        let c = compute_exponents(&s).unwrap();
        let cfg = SimConfig::new(0.5, &c).with_max_time(500.0);
        let b = [Boundary::flat("zero", 0.0), Boundary::flat("minus_one", -1.0)];
        run_batch(400, seed, mode, |_, r| first_passage(&s, &cfg, State::new(-0.5, 0.0), &b, r))
            .into_values()
            .into_iter()
            .map(|r| r.hit_phi)
            .collect()
    }

    #[test]
    fn parallelism_does_not_change_results() {
        let a = hit_phis(42, Parallelism::Sequential);
        let b = hit_phis(42, Parallelism::Threads(8));
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn distinct_seeds_sample_the_same_law() {
        // permutation test of the two-sample KS distance
        let a = hit_phis(1, Parallelism::Auto);
        let b = hit_phis(2, Parallelism::Auto);
        let d0 = stats::ks_two_sample(&a, &b).statistic;
        let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
        let mut r = rng::stream(99, 0);
        let mut exceed = 0;
        let perms = 500;
        for _ in 0..perms {
            for i in (1..pooled.len()).rev() {
                pooled.swap(i, r.random_range(0..=i));
            }
            let (x, y) = pooled.split_at(a.len());
            if stats::ks_two_sample(x, y).statistic >= d0 {
                exceed += 1;
            }
        }
        let p = (exceed as f64 + 1.0) / (perms as f64 + 1.0);
        assert!(p > 0.01, "permutation p = {p}");
    }
}
