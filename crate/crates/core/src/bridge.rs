//! Renewal-bridge Monte Carlo: exact conditional sampling of constrained
//! paths and estimation of the same probabilities the exact engine computes.
//!
//! A bridge is a renewal path under the conditioned law `p_theta` forced to
//! place a renewal exactly at `t`.  The first waiting time of such a path has
//! law
//!
//! ```text
//!     P[S_1 = s | U_t = 1] = p_theta(s) u(t - s) / u(t),    1 <= s <= t,
//! ```
//!
//! and the remainder is an independent bridge on horizon `t - s`; sampling
//! recurses until the horizon is exhausted.  This is exact (no rejection, no
//! truncation bias): estimates converge to the exact-engine values with the
//! usual `1/sqrt(n)` Monte Carlo error, which makes the sampler an
//! independent stochastic oracle for the dynamic-programming code paths.
//!
//! Determinism: samples are drawn in fixed-size chunks, each from its own
//! ChaCha stream derived from `(seed, stream + chunk index)`.  Chunk results
//! are merged as exact integer hit counts, so reports are bit-identical for a
//! given `(seed, stream, n)` regardless of thread count or scheduling.

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::RenewalTables;
use crate::thermo::ProjectedReward;

/// Samples per RNG chunk; one ChaCha stream per chunk.
const CHUNK: u64 = 1 << 16;

/// Exact conditional sampler for renewal bridges.
///
/// Holds the conditioned pmf and renewal mass from a [`RenewalTables`], plus
/// the RNG identity.  First-step inverse-CDF tables are built lazily per
/// horizon and cached (`O(t)` fill, `O(log t)` per draw afterwards); the
/// cache is shared safely across worker threads.
pub struct BridgeSampler<'a> {
    tables: &'a RenewalTables,
    seed: u64,
    stream: u64,
    /// `cum[t][s-1] = sum_{s' <= s} p_theta(s') u(t - s')`; total `= u(t)`.
    cum: Vec<OnceLock<Box<[f64]>>>,
}

/// Path event for Monte Carlo estimation.
#[derive(Clone, Debug)]
pub enum McEvent {
    /// `N_t <= m`: at most `m` renewals up to the horizon.
    CountAtMost { m: u64 },
    /// `sum_i g(S_i) <= alpha t` for the projected reward `g`.
    HalfSpace { reward: ProjectedReward, alpha: f64 },
}

/// Monte Carlo estimate with its sampling pedigree.
///
/// `estimate`, `std_error`, and `n` are bit-identical across runs with the
/// same `(seed, stream, n)`; `wall_time` is informational and excluded from
/// serialized output so result files stay byte-reproducible.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub std_error: f64,
    pub n: u64,
    pub seed: u64,
    pub stream: u64,
    #[serde(skip)]
    pub wall_time: f64,
}

impl<'a> BridgeSampler<'a> {
    pub fn new(tables: &'a RenewalTables, seed: u64, stream: u64) -> Self {
        let cum = (0..=tables.horizon() as usize)
            .map(|_| OnceLock::new())
            .collect();
        Self {
            tables,
            seed,
            stream,
            cum,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_conditioning(&self, t: u64) -> Result<()> {
        if t > self.tables.horizon() {
            return Err(Error::Domain(format!(
                "t = {t} exceeds the table horizon {}",
                self.tables.horizon()
            )));
        }
        if t >= 1 && self.tables.u(t) == 0.0 {
            return Err(Error::Domain(format!(
                "u({t}) = 0: no constrained path reaches t = {t}, conditioning is undefined"
            )));
        }
        Ok(())
    }

    fn cum_table(&self, t: usize) -> &[f64] {
        self.cum[t].get_or_init(|| {
            let pmf = self.tables.pmf_slice();
            let mut c = Vec::with_capacity(t);
            let mut acc = 0.0;
            for s in 1..=t {
                acc += pmf[s] * self.tables.u((t - s) as u64);
                c.push(acc);
            }
            c.into_boxed_slice()
        })
    }

    /// Draw the first waiting time of a bridge on horizon `t >= 1`.
    fn draw_step(&self, t: usize, rng: &mut ChaCha8Rng) -> u64 {
        let cum = self.cum_table(t);
        let total = cum[t - 1];
        let x: f64 = rng.gen::<f64>() * total;
        let idx = cum.partition_point(|&c| c <= x).min(t - 1);
        (idx + 1) as u64
    }

    /// Draw one bridge on horizon `t` as its sequence of waiting times.
    pub fn sample_bridge(&self, t: u64, rng: &mut ChaCha8Rng) -> Result<Vec<u64>> {
        self.check_conditioning(t)?;
        let mut path = Vec::new();
        let mut rem = t as usize;
        while rem > 0 {
            let s = self.draw_step(rem, rng);
            path.push(s);
            rem -= s as usize;
        }
        Ok(path)
    }

    /// The RNG for one sample chunk.  Streams are `stream + chunk`, so two
    /// samplers sharing a seed should keep their stream ids at least
    /// `ceil(n / CHUNK)` apart.
    pub fn chunk_rng(&self, chunk: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream.wrapping_add(chunk));
        rng
    }

    /// Whether one freshly drawn bridge satisfies the event, without
    /// materializing the path.
    fn simulate_event(&self, t: u64, event: &McEvent, rng: &mut ChaCha8Rng) -> bool {
        let mut rem = t as usize;
        let mut count = 0u64;
        let mut gsum = 0.0f64;
        while rem > 0 {
            let s = self.draw_step(rem, rng);
            rem -= s as usize;
            match event {
                McEvent::CountAtMost { .. } => count += 1,
                McEvent::HalfSpace { reward, .. } => gsum += reward.eval_g(s),
            }
        }
        match event {
            McEvent::CountAtMost { m } => count <= *m,
            McEvent::HalfSpace { alpha, .. } => gsum <= alpha * t as f64,
        }
    }

    /// Estimate `P_t^c[event]` from `n` independent bridges.
    ///
    /// Chunks of `CHUNK` samples run in parallel, each on its own RNG
    /// stream with a sample count fixed in advance; hit counts merge as
    /// integers, so the report does not depend on thread scheduling.
    pub fn mc_prob(&self, t: u64, event: &McEvent, n: u64) -> Result<EstimateReport> {
        if n < 1 {
            return Err(Error::Domain("sample count n must be at least 1".into()));
        }
        self.check_conditioning(t)?;
        let start = Instant::now();
        let chunks = n.div_ceil(CHUNK);
        let hits: u64 = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = self.chunk_rng(c);
                let in_chunk = CHUNK.min(n - c * CHUNK);
                let mut h = 0u64;
                for _ in 0..in_chunk {
                    if self.simulate_event(t, event, &mut rng) {
                        h += 1;
                    }
                }
                h
            })
            .sum();
        let estimate = hits as f64 / n as f64;
        // Sample standard deviation of a Bernoulli indicator over sqrt(n).
        let std_error = if n > 1 {
            (estimate * (1.0 - estimate) / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(EstimateReport {
            estimate,
            std_error,
            n,
            seed: self.seed,
            stream: self.stream,
            wall_time: start.elapsed().as_secs_f64(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ConvBackend;
    use crate::model::ModelSpec;
    use crate::thermo::{classify, conditioned_distribution};
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use std::collections::HashMap;

    fn setup(json: &str, horizon: u64) -> (ModelSpec, RenewalTables) {
        let m = ModelSpec::from_json(json).unwrap();
        let cls = classify(&m).unwrap();
        let dist = conditioned_distribution(&m, &cls).unwrap();
        let tables = RenewalTables::build(&dist, horizon).unwrap();
        (m, tables)
    }

    const BERNOULLI: &str = r#"{"waiting": {"family": "finite", "mass": [[1, 0.5], [2, 0.5]]},
        "potential": {"kind": "constant", "beta": 0.0},
        "reward": {"kind": "count"}}"#;

    const CRITICAL_S3: &str = r#"{"waiting": {"family": "power", "kappa": 2.0},
        "potential": {"kind": "constant", "beta": "critical"},
        "reward": {"kind": "count"}}"#;

    #[test]
    fn degenerate_path_is_all_ones() {
        let (_, tables) = setup(
            r#"{"waiting": {"family": "finite", "mass": [[1, 1.0]]},
                "potential": {"kind": "constant", "beta": 0.0},
                "reward": {"kind": "count"}}"#,
            8,
        );
        let sampler = BridgeSampler::new(&tables, 7, 0);
        let mut rng = sampler.chunk_rng(0);
        let path = sampler.sample_bridge(5, &mut rng).unwrap();
        assert_eq!(path, vec![1, 1, 1, 1, 1]);
    }

    #[test]
    fn bernoulli_first_step_probability() {
        // P[path = (2)] = p(2) u(0) / u(2) = (1/2) / (3/4) = 2/3.
        let (_, tables) = setup(BERNOULLI, 8);
        let sampler = BridgeSampler::new(&tables, 11, 0);
        let mut rng = sampler.chunk_rng(0);
        let n = 100_000;
        let mut hits = 0u64;
        for _ in 0..n {
            if sampler.sample_bridge(2, &mut rng).unwrap() == vec![2] {
                hits += 1;
            }
        }
        let freq = hits as f64 / n as f64;
        assert!(
            (freq - 2.0 / 3.0).abs() < 0.007,
            "freq = {freq}"
        );
    }

    #[test]
    fn path_distribution_matches_enumeration() {
        // Support {1, 2, 3}: enumerate all bridges of t = 8 exactly and
        // compare against a million samples in total variation.
        let (_, tables) = setup(
            r#"{"waiting": {"family": "finite", "mass": [[1, 0.45], [2, 0.3], [3, 0.25]]},
                "potential": {"kind": "constant", "beta": 0.1},
                "reward": {"kind": "count"}}"#,
            8,
        );
        let t = 8u64;
        let pmf = tables.pmf_slice().to_vec();
        let mut exact: HashMap<Vec<u64>, f64> = HashMap::new();
        fn enumerate(
            pmf: &[f64],
            rem: u64,
            prefix: &mut Vec<u64>,
            weight: f64,
            out: &mut HashMap<Vec<u64>, f64>,
        ) {
            if rem == 0 {
                out.insert(prefix.clone(), weight);
                return;
            }
            for s in 1..=rem.min(3) {
                let p = pmf[s as usize];
                if p > 0.0 {
                    prefix.push(s);
                    enumerate(pmf, rem - s, prefix, weight * p, out);
                    prefix.pop();
                }
            }
        }
        enumerate(&pmf, t, &mut Vec::new(), 1.0, &mut exact);
        let u_t: f64 = exact.values().sum();
        assert!((u_t - tables.u(t)).abs() < 1e-12);

        let sampler = BridgeSampler::new(&tables, 2024, 0);
        let n = 1_000_000u64;
        let mut counts: HashMap<Vec<u64>, u64> = HashMap::new();
        let mut rng = sampler.chunk_rng(0);
        for _ in 0..n {
            *counts
                .entry(sampler.sample_bridge(t, &mut rng).unwrap())
                .or_insert(0) += 1;
        }
        let mut tv = 0.0;
        for (path, &w) in &exact {
            let p = w / u_t;
            let f = counts.get(path).copied().unwrap_or(0) as f64 / n as f64;
            tv += (p - f).abs();
        }
        tv /= 2.0;
        assert!(tv <= 5e-3, "total variation {tv}");
    }

    #[test]
    fn first_step_chi_square() {
        // Empirical first-step frequencies at t = 64 against
        // p_theta(s) u(t-s) / u(t), aggregated chi-square below the 99th
        // percentile.
        let (_, tables) = setup(CRITICAL_S3, 64);
        let t = 64u64;
        let pmf = tables.pmf_slice();
        let expected: Vec<f64> = (1..=t)
            .map(|s| pmf[s as usize] * tables.u(t - s) / tables.u(t))
            .collect();
        let sampler = BridgeSampler::new(&tables, 31337, 0);
        let n = 1_000_000u64;
        let mut obs = vec![0u64; t as usize];
        let mut rng = sampler.chunk_rng(0);
        for _ in 0..n {
            let s = sampler.sample_bridge(t, &mut rng).unwrap()[0];
            obs[s as usize - 1] += 1;
        }
        // Merge cells with small expected counts into the trailing bucket.
        let mut x2 = 0.0;
        let mut df = 0usize;
        let (mut tail_e, mut tail_o) = (0.0, 0.0);
        for (o, e) in obs.iter().zip(expected.iter()) {
            let e_n = e * n as f64;
            if e_n >= 10.0 {
                x2 += (*o as f64 - e_n).powi(2) / e_n;
                df += 1;
            } else {
                tail_e += e_n;
                tail_o += *o as f64;
            }
        }
        if tail_e > 0.0 {
            x2 += (tail_o - tail_e).powi(2) / tail_e;
            df += 1;
        }
        let chi = ChiSquared::new((df - 1) as f64).unwrap();
        let cutoff = chi.inverse_cdf(0.99);
        assert!(x2 < cutoff, "chi-square {x2} vs cutoff {cutoff} at {df} cells");
    }

    #[test]
    fn mc_prob_trivial_event() {
        let (_, tables) = setup(CRITICAL_S3, 64);
        let sampler = BridgeSampler::new(&tables, 5, 0);
        let event = McEvent::CountAtMost { m: 64 };
        let rep = sampler.mc_prob(64, &event, 10_000).unwrap();
        assert_eq!(rep.estimate, 1.0);
        assert_eq!(rep.std_error, 0.0);
        assert_eq!(rep.n, 10_000);
    }

    #[test]
    fn mc_prob_matches_exact_count() {
        let (_, tables) = setup(CRITICAL_S3, 128);
        let t = 128;
        let m = 40;
        let exact = tables.exact_prob_count(t, m, ConvBackend::Direct).unwrap();
        let sampler = BridgeSampler::new(&tables, 91, 0);
        let rep = sampler
            .mc_prob(t, &McEvent::CountAtMost { m }, 200_000)
            .unwrap();
        assert!(
            (rep.estimate - exact).abs() <= 4.0 * rep.std_error,
            "estimate {} vs exact {exact} (stderr {})",
            rep.estimate,
            rep.std_error
        );
        assert!(rep.std_error > 0.0);
    }

    #[test]
    fn mc_prob_is_deterministic() {
        let (_, tables) = setup(BERNOULLI, 32);
        let sampler_a = BridgeSampler::new(&tables, 1234, 7);
        let sampler_b = BridgeSampler::new(&tables, 1234, 7);
        let event = McEvent::CountAtMost { m: 20 };
        // Straddle a chunk boundary so the multi-stream path is exercised.
        let n = CHUNK + 123;
        let a = sampler_a.mc_prob(32, &event, n).unwrap();
        let b = sampler_b.mc_prob(32, &event, n).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());

        let other = BridgeSampler::new(&tables, 1234, 99)
            .mc_prob(32, &event, n)
            .unwrap();
        assert_ne!(a.estimate.to_bits(), other.estimate.to_bits());
    }

    #[test]
    fn conditioning_on_unreachable_horizon_errors() {
        let (_, tables) = setup(
            r#"{"waiting": {"family": "finite", "mass": [[2, 0.5], [3, 0.5]]},
                "potential": {"kind": "constant", "beta": 0.0},
                "reward": {"kind": "count"}}"#,
            16,
        );
        let sampler = BridgeSampler::new(&tables, 1, 0);
        let mut rng = sampler.chunk_rng(0);
        assert!(matches!(
            sampler.sample_bridge(1, &mut rng),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sampler.mc_prob(1, &McEvent::CountAtMost { m: 1 }, 10),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn halfspace_event_matches_count_for_count_reward() {
        // For the count reward g = 1/w_c is constant, so the half-space
        // event coincides with a count threshold; MC must agree with the
        // exact engine through the same reduction.
        let m = ModelSpec::from_json(CRITICAL_S3).unwrap();
        let cls = classify(&m).unwrap();
        let dist = conditioned_distribution(&m, &cls).unwrap();
        let tables = RenewalTables::build(&dist, 96).unwrap();
        let reward = ProjectedReward::new(&m, &cls).unwrap();
        let alpha = 0.4;
        let w_c = cls.w_c.unwrap().mid();
        let t = 96u64;
        let mcount = (alpha * w_c * t as f64 + 1e-9).floor() as u64;
        let exact = tables
            .exact_prob_count(t, mcount, ConvBackend::Direct)
            .unwrap();
        let sampler = BridgeSampler::new(&tables, 4242, 0);
        let rep = sampler
            .mc_prob(t, &McEvent::HalfSpace { reward, alpha }, 200_000)
            .unwrap();
        assert!(
            (rep.estimate - exact).abs() <= 4.0 * rep.std_error.max(1e-4),
            "estimate {} vs exact {exact}",
            rep.estimate
        );
    }
}
