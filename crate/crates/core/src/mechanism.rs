//! Laplace mechanism, unit sensitivity and the privacy-budget ledger.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClusterAggregate, Dataset, ExactSum};

/// Slack allowed when comparing cumulative spend against the total, scaled by
/// `max(1, total)`.
pub const LEDGER_TOLERANCE: f64 = 1e-12;

/// Reserved stream ids for non-noise randomness derived from a master seed.
pub mod streams {
    /// Random-row initial centroids (RF/RU/non-private baselines).
    pub const RANDOM_INIT: u64 = (1 << 63) | 1;
    /// Data-independent fill for missing canopy centroids.
    pub const CANOPY_FILL: u64 = (1 << 63) | 2;
    /// Canopy subsample selection.
    pub const SUBSAMPLE: u64 = (1 << 63) | 3;

    /// Noise stream of one reduce task. Iteration 0 is the initialization phase.
    pub fn reduce(iteration: usize, cluster: usize) -> u64 {
        ((iteration as u64) << 32) | cluster as u64
    }
}

/// Deterministic RNG for a `(master_seed, stream)` pair.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Maps a uniform draw `u` in `(0, 1)` to a zero-mean Laplace variate with scale `b`
/// by inverting the CDF.
pub fn laplace_from_uniform(u: f64, scale: f64) -> f64 {
    let c = u - 0.5;
    if c == 0.0 {
        return 0.0;
    }
    -scale * c.signum() * (-2.0 * c.abs()).ln_1p()
}

/// Single-owner Laplace noise source.
#[derive(Debug, Clone)]
pub struct LaplaceSampler {
    rng: ChaCha8Rng,
    seed: u64,
    draw_count: u64,
}

impl LaplaceSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            draw_count: 0,
        }
    }

    /// Independent sampler for one reduce task; depends only on its key, never on
    /// scheduling order.
    pub fn for_reduce(master_seed: u64, iteration: usize, cluster: usize) -> Self {
        Self {
            rng: stream_rng(master_seed, streams::reduce(iteration, cluster)),
            seed: master_seed,
            draw_count: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draw_count(&self) -> u64 {
        self.draw_count
    }

    /// Uniform on the open interval `(0, 1)`.
    fn open_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub fn sample(&mut self, scale: f64) -> Result<f64> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "laplace scale must be positive, got {scale}"
            )));
        }
        let u = self.open_uniform();
        self.draw_count += 1;
        Ok(laplace_from_uniform(u, scale))
    }
}

/// Convenience wrapper matching the operation name used throughout the engine.
pub fn sample_laplace(sampler: &mut LaplaceSampler, scale: f64) -> Result<f64> {
    sampler.sample(scale)
}

/// Global sensitivity of the count and per-dimension sum queries.
///
/// Only obtainable for normalized data, where adding or removing one row moves
/// the count by at most 1 and every coordinate sum by at most 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    count: f64,
    sum: f64,
}

impl Sensitivity {
    pub fn unit_for(data: &Dataset) -> Result<Self> {
        if !data.is_normalized() {
            return Err(Error::Unnormalized);
        }
        Ok(Self::UNIT)
    }

    pub(crate) const UNIT: Sensitivity = Sensitivity {
        count: 1.0,
        sum: 1.0,
    };

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.sum
    }
}

/// Adds `Lap(GS/eps_count)` to the count, then `Lap(GS/eps_dim)` to each sum.
/// Consumes exactly `d + 1` draws.
pub fn perturb_aggregate(
    agg: &ClusterAggregate,
    sensitivity: Sensitivity,
    eps_count: f64,
    eps_dim: f64,
    sampler: &mut LaplaceSampler,
) -> Result<ClusterAggregate> {
    if !(eps_count > 0.0 && eps_dim > 0.0) {
        return Err(Error::InvalidInput(format!(
            "per-query budgets must be positive (count {eps_count}, dim {eps_dim})"
        )));
    }
    let count = agg.count + sampler.sample(sensitivity.count / eps_count)?;
    let sums = agg
        .sums
        .iter()
        .map(|&s| Ok(s + sampler.sample(sensitivity.sum / eps_dim)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClusterAggregate {
        cluster_index: agg.cluster_index,
        count,
        sums,
    })
}

/// Everything a reduce task needs to release a noisy aggregate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub sensitivity: Sensitivity,
    pub eps_count: f64,
    pub eps_dim: f64,
    pub master_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub phase: String,
    pub amount: f64,
}

/// Sequential-composition accounting. Each charged phase costs its amount; reduce
/// tasks within a phase act on disjoint clusters and share the phase's charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    total: f64,
    entries: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new(total: f64) -> Result<Self> {
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "total budget must be positive, got {total}"
            )));
        }
        Ok(Self {
            total,
            entries: Vec::new(),
        })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn spent(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.amount)
            .collect::<ExactSum>()
            .value()
    }

    pub fn remaining(&self) -> f64 {
        self.total - self.spent()
    }

    pub fn charge(&mut self, phase: impl Into<String>, amount: f64) -> Result<()> {
        let phase = phase.into();
        if !(amount > 0.0 && amount.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "charge for '{phase}' must be positive, got {amount}"
            )));
        }
        let after = self.spent() + amount;
        if after > self.total + self.slack() {
            return Err(Error::BudgetExhausted {
                phase,
                requested: amount,
                remaining: self.remaining(),
            });
        }
        self.entries.push(LedgerEntry { phase, amount });
        Ok(())
    }

    /// True when the spend reconciles with the total.
    pub fn is_fully_spent(&self) -> bool {
        (self.spent() - self.total).abs() <= self.slack()
    }

    fn slack(&self) -> f64 {
        LEDGER_TOLERANCE * self.total.max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_uniform_maps_to_zero() {
        assert_eq!(laplace_from_uniform(0.5, 1.0), 0.0);
        assert_eq!(laplace_from_uniform(0.5, 7.0), 0.0);
    }

    #[test]
    fn inverse_cdf_quantiles() {
        // F^{-1}(0.75) = b ln 2, F^{-1}(0.25) = -b ln 2
        let b = 2.5;
        assert!((laplace_from_uniform(0.75, b) - b * 2f64.ln()).abs() < 1e-12);
        assert!((laplace_from_uniform(0.25, b) + b * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_scale_rejected() {
        let mut s = LaplaceSampler::new(1);
        assert!(s.sample(0.0).is_err());
        assert!(s.sample(-1.0).is_err());
        assert!(s.sample(f64::NAN).is_err());
        assert_eq!(s.draw_count(), 0);
    }

    #[test]
    fn identical_seeds_identical_streams() {
        let mut a = LaplaceSampler::new(42);
        let mut b = LaplaceSampler::new(42);
        for _ in 0..100 {
            assert_eq!(
                a.sample(1.0).unwrap().to_bits(),
                b.sample(1.0).unwrap().to_bits()
            );
        }
        let mut c = LaplaceSampler::for_reduce(42, 1, 0);
        let mut d = LaplaceSampler::for_reduce(42, 1, 1);
        assert_ne!(c.sample(1.0).unwrap(), d.sample(1.0).unwrap());
    }

    #[test]
    fn perturb_vanishing_noise_and_draw_count() {
        let agg = ClusterAggregate {
            cluster_index: 3,
            count: 10.0,
            sums: vec![1.0; 6],
        };
        let mut s = LaplaceSampler::new(9);
        let out = perturb_aggregate(&agg, Sensitivity::UNIT, 1e12, 1e12, &mut s).unwrap();
        assert_eq!(s.draw_count(), 7);
        assert_eq!(out.cluster_index, 3);
        assert!((out.count - 10.0).abs() < 1e-9);
        assert!(out.sums.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn unnormalized_data_has_no_unit_sensitivity() {
        let raw = Dataset::new(vec![0.0, 3.0], 1, "raw").unwrap();
        assert!(matches!(
            Sensitivity::unit_for(&raw),
            Err(Error::Unnormalized)
        ));
        let norm = Dataset::new(vec![0.0, 1.0], 1, "n")
            .unwrap()
            .into_normalized()
            .unwrap();
        assert!(Sensitivity::unit_for(&norm).is_ok());
    }

    #[test]
    fn ledger_examples() {
        let mut l = BudgetLedger::new(1.0).unwrap();
        l.charge("a", 0.5).unwrap();
        l.charge("b", 0.5).unwrap();
        assert_eq!(l.spent(), 1.0);
        assert!(l.is_fully_spent());

        let mut l = BudgetLedger::new(1.0).unwrap();
        l.charge("a", 0.6).unwrap();
        assert!(matches!(
            l.charge("b", 0.6),
            Err(Error::BudgetExhausted { .. })
        ));
        assert_eq!(l.entries().len(), 1);

        let mut l = BudgetLedger::new(2.0).unwrap();
        for t in 0..4 {
            l.charge(format!("iter {t}"), 2.0 / 4.0).unwrap();
        }
        assert_eq!(l.spent(), 2.0);

        assert!(BudgetLedger::new(0.0).is_err());
        assert!(l.charge("zero", 0.0).is_err());
    }

    #[test]
    fn ledger_sevenths_reconcile() {
        let mut l = BudgetLedger::new(1.0).unwrap();
        for t in 0..7 {
            l.charge(format!("iter {t}"), 1.0 / 7.0).unwrap();
        }
        assert!(l.is_fully_spent());
    }
}
