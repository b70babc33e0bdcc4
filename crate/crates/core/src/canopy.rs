//! Private initial-centroid selection via canopy pre-clustering.
//!
//! A seeded uniform subsample (default `20k` rows) is grouped into canopies with a
//! loose radius `t1` (membership) and a tight radius `t2` (removal). The `k`
//! most populous canopies each release one noisy centroid computed over their
//! tight members. Tight-member sets are pairwise disjoint, so the per-canopy
//! noise composes in parallel and the whole phase costs one iteration's budget.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{perturb_aggregate, stream_rng, streams, LaplaceSampler, NoiseConfig};
use crate::model::{sq_dist, CentroidSet, Dataset, PartialAggregate};

/// Times `t1`/`t2` are halved when fewer than `k` canopies form.
pub const MAX_THRESHOLD_RETRIES: usize = 3;

/// Working sets at least this large are scanned in parallel.
const PAR_SCAN_MIN: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanopyParams {
    /// Loose distance; defaults to `2 * t2`.
    pub t1: Option<f64>,
    /// Tight distance; defaults to half the mean pairwise distance of the subsample.
    pub t2: Option<f64>,
    /// Defaults to `20 * k`, capped at `N`.
    pub subsample_size: Option<usize>,
    pub seed: u64,
}

impl CanopyParams {
    pub fn seeded(seed: u64) -> Self {
        Self {
            t1: None,
            t2: None,
            subsample_size: None,
            seed,
        }
    }

    pub fn resolved_subsample_size(&self, n_rows: usize, k: usize) -> usize {
        self.subsample_size.unwrap_or(20 * k).clamp(1, n_rows)
    }

    /// Fills unset thresholds from the subsample and checks `t1 > t2 > 0`.
    pub fn resolve_thresholds(&self, subsample: &Dataset) -> Result<(f64, f64)> {
        let (t1, t2) = match (self.t1, self.t2) {
            (Some(t1), Some(t2)) => (t1, t2),
            (Some(t1), None) => (t1, t1 / 2.0),
            (None, Some(t2)) => (2.0 * t2, t2),
            (None, None) => {
                let t2 = (mean_pairwise_distance(subsample) / 2.0).max(f64::MIN_POSITIVE);
                (2.0 * t2, t2)
            }
        };
        if !(t2 > 0.0 && t1 > t2 && t1.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "canopy thresholds need t1 > t2 > 0 (t1={t1}, t2={t2})"
            )));
        }
        Ok((t1, t2))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canopy {
    /// Row (within the subsample) that started the canopy.
    pub center: usize,
    /// Rows within `t1` of the center, center included.
    pub members: Vec<usize>,
    /// Rows within `t2` of the center, center included; removed from the working set.
    pub tight_members: Vec<usize>,
}

pub fn mean_pairwise_distance(data: &Dataset) -> f64 {
    let n = data.n_rows();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += sq_dist(data.row(i), data.row(j)).sqrt();
        }
    }
    total / (n * (n - 1) / 2) as f64
}

/// Runs the canopy removal loop. Seeds are popped in ascending row order.
pub fn run_canopy(subsample: &Dataset, t1: f64, t2: f64) -> Result<Vec<Canopy>> {
    if !(t2 > 0.0 && t1 > t2) {
        return Err(Error::InvalidInput(format!(
            "canopy thresholds need t1 > t2 > 0 (t1={t1}, t2={t2})"
        )));
    }
    let (t1_sq, t2_sq) = (t1 * t1, t2 * t2);
    let mut working: Vec<usize> = (0..subsample.n_rows()).collect();
    let mut canopies = Vec::new();

    while !working.is_empty() {
        let center = working.remove(0);
        let c = subsample.row(center);
        let dists: Vec<f64> = if working.len() >= PAR_SCAN_MIN {
            working
                .par_iter()
                .map(|&i| sq_dist(subsample.row(i), c))
                .collect()
        } else {
            working
                .iter()
                .map(|&i| sq_dist(subsample.row(i), c))
                .collect()
        };

        let mut members = vec![center];
        let mut tight_members = vec![center];
        let mut remaining = Vec::with_capacity(working.len());
        for (&i, &d) in working.iter().zip(&dists) {
            if d < t1_sq {
                members.push(i);
            }
            if d < t2_sq {
                tight_members.push(i);
            } else {
                remaining.push(i);
            }
        }
        working = remaining;
        canopies.push(Canopy {
            center,
            members,
            tight_members,
        });
    }
    Ok(canopies)
}

/// Indices of the `k` canopies with the most members; earlier canopies win ties.
pub fn rank_canopies(member_counts: &[usize], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..member_counts.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(member_counts[i]));
    order.truncate(k);
    order
}

/// Seeded uniform subsample without replacement, rows kept in ascending order.
pub fn draw_subsample(data: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    let mut rng = stream_rng(seed, streams::SUBSAMPLE);
    let mut rows = index::sample(&mut rng, data.n_rows(), size.min(data.n_rows())).into_vec();
    rows.sort_unstable();
    data.select_rows(&rows, format!("{} (canopy subsample)", data.source_label()))
}

fn check_tight_disjoint(canopies: &[Canopy], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for c in canopies {
        for &i in &c.tight_members {
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Invariant(format!(
                    "row {i} is a tight member of two canopies"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitOutcome {
    pub centroids: CentroidSet,
    pub subsample_size: usize,
    pub canopies_found: usize,
    /// Positions (creation order) of the canopies that produced centroids.
    pub selected: Vec<usize>,
    pub t1: f64,
    pub t2: f64,
    pub threshold_retries: usize,
    /// Centroids filled with data-independent random points.
    pub random_fill: usize,
    pub noise_draws: u64,
    pub notes: Vec<String>,
}

/// Selects `k` initial centroids. With `noise` set, each centroid is released as
/// `(sum + Lap) / max(count + Lap, 1)` clamped to `[0, 1]`, drawing from reduce
/// stream `(0, j)`; without it the exact tight-member means are returned.
pub fn select_initial_centroids(
    data: &Dataset,
    k: usize,
    params: &CanopyParams,
    noise: Option<&NoiseConfig>,
) -> Result<InitOutcome> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be >= 1".into()));
    }
    if !data.is_normalized() {
        return Err(Error::Unnormalized);
    }
    let size = params.resolved_subsample_size(data.n_rows(), k);
    let subsample = draw_subsample(data, size, params.seed)?;
    let (mut t1, mut t2) = params.resolve_thresholds(&subsample)?;

    let mut notes = Vec::new();
    let mut retries = 0;
    let mut canopies = run_canopy(&subsample, t1, t2)?;
    while canopies.len() < k && retries < MAX_THRESHOLD_RETRIES {
        retries += 1;
        t1 /= 2.0;
        t2 /= 2.0;
        notes.push(format!(
            "only {} canopies for k={k}; retry {retries} with t1={t1:.6}, t2={t2:.6}",
            canopies.len()
        ));
        canopies = run_canopy(&subsample, t1, t2)?;
    }
    check_tight_disjoint(&canopies, subsample.n_rows())?;

    let counts: Vec<usize> = canopies.iter().map(|c| c.members.len()).collect();
    let selected = rank_canopies(&counts, k);

    let d = data.n_dims();
    let mut centroids = Vec::with_capacity(k);
    let mut noise_draws = 0;
    for (j, &ci) in selected.iter().enumerate() {
        let mut exact = PartialAggregate::empty(d);
        for &row in &canopies[ci].tight_members {
            exact.add_point(subsample.row(row));
        }
        let agg = exact.to_aggregate(j);
        let released = match noise {
            Some(cfg) => {
                let mut sampler = LaplaceSampler::for_reduce(cfg.master_seed, 0, j);
                let noisy = perturb_aggregate(
                    &agg,
                    cfg.sensitivity,
                    cfg.eps_count,
                    cfg.eps_dim,
                    &mut sampler,
                )?;
                noise_draws += sampler.draw_count();
                noisy
            }
            None => agg,
        };
        centroids.push(released.release_centroid(1.0, true));
    }

    let random_fill = k - selected.len();
    if random_fill > 0 {
        notes.push(format!(
            "canopy fallback exhausted: {random_fill} of {k} centroids filled with uniform random points"
        ));
        let mut rng = stream_rng(params.seed, streams::CANOPY_FILL);
        for _ in 0..random_fill {
            centroids.push((0..d).map(|_| rng.random::<f64>()).collect());
        }
    }

    Ok(InitOutcome {
        centroids: CentroidSet::new(centroids, noise.is_some())?,
        subsample_size: subsample.n_rows(),
        canopies_found: canopies.len(),
        selected,
        t1,
        t2,
        threshold_retries: retries,
        random_fill,
        noise_draws,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::Sensitivity;

    fn norm(rows: &[Vec<f64>]) -> Dataset {
        Dataset::from_rows(rows, "t")
            .unwrap()
            .into_normalized()
            .unwrap()
    }

    fn vanishing(seed: u64) -> NoiseConfig {
        NoiseConfig {
            sensitivity: Sensitivity::UNIT,
            eps_count: 1e12,
            eps_dim: 1e12,
            master_seed: seed,
        }
    }

    #[test]
    fn huge_loose_radius_gives_one_canopy() {
        let data = norm(&[
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![0.3, 0.9],
            vec![0.5, 0.1],
        ]);
        let cs = run_canopy(&data, 10.0, 1.0).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].members, vec![0, 1, 2, 3]);

        let cs = run_canopy(&data, 10.0, 10.0 - 1e-3).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].members, vec![0, 1, 2, 3]);
        assert_eq!(cs[0].tight_members, vec![0, 1, 2, 3]);
    }

    #[test]
    fn three_point_hand_trace() {
        let data = norm(&[vec![0.0, 0.0], vec![0.05, 0.0], vec![0.9, 0.9]]);
        let cs = run_canopy(&data, 0.2, 0.1).unwrap();
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].members, vec![0, 1]);
        assert_eq!(cs[0].tight_members, vec![0, 1]);
        assert_eq!(cs[1].center, 2);
        assert_eq!(cs[1].members, vec![2]);
    }

    #[test]
    fn loose_members_can_seed_later_canopies() {
        let data = norm(&[vec![0.0], vec![0.15], vec![0.3]]);
        let cs = run_canopy(&data, 0.2, 0.1).unwrap();
        assert_eq!(cs.len(), 3);
        assert_eq!(cs[0].members, vec![0, 1]);
        assert_eq!(cs[1].members, vec![1, 2]);
        let mut covered: Vec<usize> = cs.iter().flat_map(|c| c.members.clone()).collect();
        covered.sort_unstable();
        covered.dedup();
        assert_eq!(covered, vec![0, 1, 2]);
    }

    #[test]
    fn ranking_uses_creation_order_on_ties() {
        assert_eq!(rank_canopies(&[7, 3, 9, 2, 9], 2), vec![2, 4]);
        assert_eq!(rank_canopies(&[1, 1, 1], 5), vec![0, 1, 2]);
    }

    #[test]
    fn vanishing_noise_centroid_is_tight_mean() {
        let data = norm(&[vec![0.0, 0.0], vec![1.0, 1.0]]);
        let params = CanopyParams {
            t1: Some(10.0),
            t2: Some(5.0),
            subsample_size: None,
            seed: 3,
        };
        let out = select_initial_centroids(&data, 1, &params, Some(&vanishing(1))).unwrap();
        let c = out.centroids.centroid(0);
        assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9);
        assert_eq!(out.noise_draws, 3);
        assert!(out.centroids.is_noisy());
    }

    #[test]
    fn seeded_three_point_selection() {
        let data = norm(&[vec![0.0, 0.0], vec![0.05, 0.0], vec![0.9, 0.9]]);
        let params = CanopyParams {
            t1: Some(0.2),
            t2: Some(0.1),
            subsample_size: None,
            seed: 11,
        };
        let out = select_initial_centroids(&data, 2, &params, Some(&vanishing(5))).unwrap();
        assert_eq!(out.canopies_found, 2);
        assert_eq!(out.random_fill, 0);
        let c0 = out.centroids.centroid(0);
        let c1 = out.centroids.centroid(1);
        assert!((c0[0] - 0.025).abs() < 1e-3 && c0[1].abs() < 1e-3);
        assert!((c1[0] - 0.9).abs() < 1e-3 && (c1[1] - 0.9).abs() < 1e-3);
        assert_eq!(out.noise_draws, 2 * 3);
    }

    #[test]
    fn fallback_fills_with_random_points() {
        // all points identical: a single canopy regardless of threshold halving
        let data = norm(&vec![vec![0.4, 0.4]; 10]);
        let params = CanopyParams {
            t1: Some(0.2),
            t2: Some(0.1),
            subsample_size: None,
            seed: 2,
        };
        let out = select_initial_centroids(&data, 3, &params, None).unwrap();
        assert_eq!(out.threshold_retries, MAX_THRESHOLD_RETRIES);
        assert_eq!(out.random_fill, 2);
        assert_eq!(out.centroids.k(), 3);
        assert!(out.notes.iter().any(|n| n.contains("fallback exhausted")));
        assert!(out
            .centroids
            .as_slice()
            .iter()
            .flatten()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn halving_recovers_enough_canopies() {
        let data = norm(&[vec![0.0], vec![0.3], vec![0.6], vec![0.9]]);
        let params = CanopyParams {
            t1: Some(2.0),
            t2: Some(1.0),
            subsample_size: None,
            seed: 2,
        };
        let out = select_initial_centroids(&data, 2, &params, None).unwrap();
        assert!(out.threshold_retries >= 1);
        assert_eq!(out.random_fill, 0);
        assert!(out.canopies_found >= 2);
    }

    #[test]
    fn deterministic_and_clamped() {
        let rows: Vec<Vec<f64>> = (0..200)
            .map(|i| {
                let x = (i as f64 * 0.6180339887).fract();
                vec![x, (x * 7.3).fract(), (x * 3.1).fract()]
            })
            .collect();
        let data = norm(&rows);
        let params = CanopyParams::seeded(77);
        let noise = NoiseConfig {
            sensitivity: Sensitivity::UNIT,
            eps_count: 0.05,
            eps_dim: 0.05,
            master_seed: 4,
        };
        let a = select_initial_centroids(&data, 4, &params, Some(&noise)).unwrap();
        let b = select_initial_centroids(&data, 4, &params, Some(&noise)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.subsample_size, 80);
        assert!(a
            .centroids
            .as_slice()
            .iter()
            .flatten()
            .all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn threshold_defaults_and_validation() {
        let data = norm(&[vec![0.0], vec![1.0]]);
        let (t1, t2) = CanopyParams::seeded(0).resolve_thresholds(&data).unwrap();
        assert_eq!(t2, 0.5);
        assert_eq!(t1, 1.0);
        let bad = CanopyParams {
            t1: Some(0.1),
            t2: Some(0.2),
            subsample_size: None,
            seed: 0,
        };
        assert!(bad.resolve_thresholds(&data).is_err());
        assert!(run_canopy(&data, 0.1, 0.1).is_err());
    }

    #[test]
    fn unnormalized_refused() {
        let raw = Dataset::from_rows(&[vec![3.0], vec![5.0]], "raw").unwrap();
        assert!(matches!(
            select_initial_centroids(&raw, 1, &CanopyParams::seeded(0), None),
            Err(Error::Unnormalized)
        ));
    }
}
