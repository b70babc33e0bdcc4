//! Shared domain types and distance primitives.
//!
//! Points are stored row-major, one point per row, with the dimension fixed at
//! construction. All types here are immutable once built and can be shared
//! freely across map tasks.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `N x d` matrix of finite coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<f64>,
    n_rows: usize,
    n_dims: usize,
    normalized: bool,
    source_label: String,
}

impl Dataset {
    /// Builds a raw (not normalized) dataset from a flat row-major buffer.
    pub fn new(points: Vec<f64>, n_dims: usize, source_label: impl Into<String>) -> Result<Self> {
        if n_dims == 0 {
            return Err(Error::InvalidInput("dataset dimension must be >= 1".into()));
        }
        if points.is_empty() {
            return Err(Error::Empty("dataset has no rows".into()));
        }
        if !points.len().is_multiple_of(n_dims) {
            return Err(Error::InvalidInput(format!(
                "buffer of {} values is not a multiple of dimension {n_dims}",
                points.len()
            )));
        }
        if let Some(pos) = points.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate at row {}, dim {}",
                pos / n_dims,
                pos % n_dims
            )));
        }
        Ok(Self {
            n_rows: points.len() / n_dims,
            points,
            n_dims,
            normalized: false,
            source_label: source_label.into(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], source_label: impl Into<String>) -> Result<Self> {
        let n_dims = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Empty("no rows".into()))?;
        let mut points = Vec::with_capacity(rows.len() * n_dims);
        for row in rows {
            if row.len() != n_dims {
                return Err(Error::DimensionMismatch {
                    expected: n_dims,
                    got: row.len(),
                });
            }
            points.extend_from_slice(row);
        }
        Self::new(points, n_dims, source_label)
    }

    /// Marks the dataset as normalized after checking every coordinate is in `[0, 1]`.
    pub fn into_normalized(mut self) -> Result<Self> {
        if let Some(pos) = self.points.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!(
                "coordinate {} at row {}, dim {} is outside [0, 1]",
                self.points[pos],
                pos / self.n_dims,
                pos % self.n_dims
            )));
        }
        self.normalized = true;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn source_label(&self) -> &str {
        &self.source_label
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.n_dims)
    }

    /// Copies the given rows, in order, into a new dataset with the same flags.
    pub fn select_rows(&self, indices: &[usize], source_label: impl Into<String>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("row selection is empty".into()));
        }
        let mut points = Vec::with_capacity(indices.len() * self.n_dims);
        for &i in indices {
            if i >= self.n_rows {
                return Err(Error::InvalidInput(format!("row index {i} out of range")));
            }
            points.extend_from_slice(self.row(i));
        }
        Ok(Self {
            n_rows: indices.len(),
            points,
            n_dims: self.n_dims,
            normalized: self.normalized,
            source_label: source_label.into(),
        })
    }

    /// Splits the rows into `n` contiguous, disjoint, near-equal blocks.
    pub fn partitions(&self, n: usize) -> Result<Vec<Partition<'_>>> {
        if n == 0 || n > self.n_rows {
            return Err(Error::InvalidInput(format!(
                "partition count {n} must be in [1, {}]",
                self.n_rows
            )));
        }
        let base = self.n_rows / n;
        let extra = self.n_rows % n;
        let mut start = 0;
        let parts = (0..n)
            .map(|index| {
                let len = base + usize::from(index < extra);
                let rows = start..start + len;
                start += len;
                Partition {
                    index,
                    points: &self.points[rows.start * self.n_dims..rows.end * self.n_dims],
                    rows,
                    n_dims: self.n_dims,
                }
            })
            .collect();
        Ok(parts)
    }
}

/// A contiguous block of dataset rows handled by one map task.
#[derive(Debug, Clone)]
pub struct Partition<'a> {
    pub index: usize,
    pub rows: Range<usize>,
    pub points: &'a [f64],
    pub n_dims: usize,
}

impl<'a> Partition<'a> {
    pub fn from_slice(index: usize, points: &'a [f64], n_dims: usize) -> Self {
        Self {
            index,
            rows: 0..points.len() / n_dims,
            points,
            n_dims,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'a, f64> {
        self.points.chunks_exact(self.n_dims)
    }
}

/// `k` centroids of a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    centroids: Vec<Vec<f64>>,
    noisy: bool,
}

impl CentroidSet {
    pub fn new(centroids: Vec<Vec<f64>>, noisy: bool) -> Result<Self> {
        let d = centroids
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("centroid set must have k >= 1".into()))?;
        if d == 0 {
            return Err(Error::InvalidInput(
                "centroid dimension must be >= 1".into(),
            ));
        }
        if let Some(bad) = centroids.iter().find(|c| c.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Ok(Self { centroids, noisy })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn n_dims(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn is_noisy(&self) -> bool {
        self.noisy
    }

    pub fn centroid(&self, j: usize) -> &[f64] {
        &self.centroids[j]
    }

    pub fn as_slice(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    pub fn into_inner(self) -> Vec<Vec<f64>> {
        self.centroids
    }

    /// Largest Euclidean displacement of any centroid between two sets.
    pub fn max_shift(&self, other: &CentroidSet) -> f64 {
        self.centroids
            .iter()
            .zip(&other.centroids)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Per-row cluster labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub labels: Vec<usize>,
}

impl Assignment {
    /// Assigns every row to its nearest centroid.
    pub fn compute(data: &Dataset, cs: &CentroidSet) -> Result<Self> {
        check_dims(data.n_dims(), cs)?;
        Ok(Self {
            labels: data.rows().map(|x| nearest(x, cs).0).collect(),
        })
    }
}

/// Per-cluster count and per-dimension coordinate sums; the reduce-side
/// sufficient statistics. Values may be noisy after perturbation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAggregate {
    pub cluster_index: usize,
    pub count: f64,
    pub sums: Vec<f64>,
}

impl ClusterAggregate {
    pub fn n_dims(&self) -> usize {
        self.sums.len()
    }

    /// Mean `sums / max(count, min_count)`, optionally clamped into `[0, 1]`.
    pub fn release_centroid(&self, min_count: f64, clamp: bool) -> Vec<f64> {
        let denom = self.count.max(min_count);
        self.sums
            .iter()
            .map(|s| {
                let v = s / denom;
                if clamp {
                    v.clamp(0.0, 1.0)
                } else {
                    v
                }
            })
            .collect()
    }
}

/// Exact partial aggregate produced by a map task. Merging is associative and
/// commutative bit-for-bit, so the merged total does not depend on how rows were
/// partitioned.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAggregate {
    pub count: u64,
    pub sums: Vec<ExactSum>,
}

impl PartialAggregate {
    pub fn empty(n_dims: usize) -> Self {
        Self {
            count: 0,
            sums: vec![ExactSum::default(); n_dims],
        }
    }

    pub fn add_point(&mut self, x: &[f64]) {
        self.count += 1;
        for (s, &v) in self.sums.iter_mut().zip(x) {
            s.add(v);
        }
    }

    pub fn merge(&mut self, other: &PartialAggregate) {
        self.count += other.count;
        for (s, o) in self.sums.iter_mut().zip(&other.sums) {
            s.merge(o);
        }
    }

    pub fn to_aggregate(&self, cluster_index: usize) -> ClusterAggregate {
        ClusterAggregate {
            cluster_index,
            count: self.count as f64,
            sums: self.sums.iter().map(ExactSum::value).collect(),
        }
    }
}

/// Per-cluster partials of one map task, keyed by cluster index.
pub type PartialMap = BTreeMap<usize, PartialAggregate>;

/// Exactly rounded floating-point summation.
///
/// Keeps a list of non-overlapping partials (Shewchuk's algorithm) so the running
/// sum carries no rounding error; [`ExactSum::value`] rounds once, to nearest.
/// The result is therefore independent of the order and grouping of additions.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn add(&mut self, value: f64) {
        let mut x = value;
        let mut kept = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        self.partials.truncate(kept);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    /// The exact sum rounded to the nearest `f64` (ties to even).
    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Half-way case: the remaining partials decide the rounding direction.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

impl FromIterator<f64> for ExactSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = ExactSum::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}

/// Squared Euclidean distance.
pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(sq_dist(a, b))
}

/// Index of the nearest centroid; ties go to the lowest index.
pub fn nearest_centroid(x: &[f64], cs: &CentroidSet) -> Result<usize> {
    if cs.n_dims() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: cs.n_dims(),
            got: x.len(),
        });
    }
    Ok(nearest(x, cs).0)
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unchecked nearest-centroid search returning `(index, squared distance)`.
#[inline]
pub(crate) fn nearest(x: &[f64], cs: &CentroidSet) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in cs.centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        // strict comparison keeps the lowest index on ties
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub(crate) fn check_dims(n_dims: usize, cs: &CentroidSet) -> Result<()> {
    if cs.n_dims() != n_dims {
        return Err(Error::DimensionMismatch {
            expected: n_dims,
            got: cs.n_dims(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cs(rows: &[&[f64]]) -> CentroidSet {
        CentroidSet::new(rows.iter().map(|r| r.to_vec()).collect(), false).unwrap()
    }

    #[test]
    fn squared_distance_examples() {
        assert_eq!(squared_distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(squared_distance(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 2.0);

        let a = [0.1, 0.2, 0.3];
        let b = [0.4, 0.0, 0.3];
        let mut oracle = 0.0;
        for i in 0..3 {
            let diff = a[i] - b[i];
            oracle += diff * diff;
        }
        let got = squared_distance(&a, &b).unwrap();
        assert!((got - 0.13).abs() < 1e-15);
        assert!((got - oracle).abs() < 1e-15);
    }

    #[test]
    fn squared_distance_rejects_mismatch() {
        assert!(matches!(
            squared_distance(&[0.0], &[0.0, 1.0]),
            Err(Error::DimensionMismatch {
                expected: 1,
                got: 2
            })
        ));
    }

    #[test]
    fn nearest_centroid_examples() {
        let two = cs(&[&[0.0, 0.0], &[1.0, 1.0]]);
        assert_eq!(nearest_centroid(&[0.1, 0.1], &two).unwrap(), 0);
        // equidistant: lowest index wins
        assert_eq!(nearest_centroid(&[0.5, 0.5], &two).unwrap(), 0);

        let three = cs(&[&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[0.8, 0.8, 0.8]]);
        let x = [0.9, 0.9, 0.9];
        // brute-force distance table
        let table: Vec<f64> = three
            .as_slice()
            .iter()
            .map(|c| squared_distance(&x, c).unwrap())
            .collect();
        let argmin = (0..3)
            .min_by(|&a, &b| table[a].partial_cmp(&table[b]).unwrap())
            .unwrap();
        // [1,1,1] and [0.8,0.8,0.8] are both at 0.03 (bitwise equal in f64), so the
        // tie rule picks index 1
        assert_eq!(table[1].to_bits(), table[2].to_bits());
        assert_eq!(argmin, 1);
        assert_eq!(nearest_centroid(&x, &three).unwrap(), 1);

        let shifted = cs(&[&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0], &[0.85, 0.85, 0.85]]);
        assert_eq!(nearest_centroid(&x, &shifted).unwrap(), 2);
    }

    #[test]
    fn empty_centroid_set_rejected() {
        assert!(CentroidSet::new(vec![], false).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(vec![], 2, "x").is_err());
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], 2, "x").is_err());
        assert!(Dataset::new(vec![1.0, f64::NAN], 2, "x").is_err());
        let d = Dataset::new(vec![0.0, 1.5], 2, "x").unwrap();
        assert!(d.into_normalized().is_err());
    }

    #[test]
    fn partitions_cover_rows_in_order() {
        let data = Dataset::new((0..20).map(f64::from).collect(), 2, "x").unwrap();
        let parts = data.partitions(3).unwrap();
        assert_eq!(
            parts.iter().map(Partition::len).collect::<Vec<_>>(),
            vec![4, 3, 3]
        );
        let joined: Vec<f64> = parts
            .iter()
            .flat_map(|p| p.points.iter().copied())
            .collect();
        assert_eq!(joined, data.points());
        assert!(data.partitions(0).is_err());
        assert!(data.partitions(11).is_err());
    }

    #[test]
    fn exact_sum_cancellation() {
        let s: ExactSum = [1e100, 1.0, -1e100, 1e-100].into_iter().collect();
        assert_eq!(s.value(), 1.0);
        let s: ExactSum = std::iter::repeat_n(0.1, 10).collect();
        assert_eq!(s.value(), 1.0);
    }

    proptest! {
        #[test]
        fn squared_distance_symmetric_nonnegative(
            pair in (1usize..6).prop_flat_map(|d| (
                prop::collection::vec(-1.0f64..1.0, d),
                prop::collection::vec(-1.0f64..1.0, d),
            ))
        ) {
            let (a, b) = pair;
            let ab = squared_distance(&a, &b).unwrap();
            let ba = squared_distance(&b, &a).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
        }

        #[test]
        fn nearest_matches_argmin_of_euclidean(
            x in prop::collection::vec(0.0f64..1.0, 3),
            cents in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..6),
        ) {
            let set = CentroidSet::new(cents.clone(), false).unwrap();
            let got = nearest_centroid(&x, &set).unwrap();
            let dists: Vec<f64> = cents.iter().map(|c| sq_dist(&x, c).sqrt()).collect();
            let mut best = 0;
            for j in 1..dists.len() {
                if dists[j] < dists[best] { best = j; }
            }
            prop_assert_eq!(got, best);
            prop_assert_eq!(nearest_centroid(&x, &set).unwrap(), got);
        }

        #[test]
        fn exact_sum_grouping_invariant(
            values in prop::collection::vec(-1e3f64..1e3, 0..64),
            split in 0usize..64,
        ) {
            let whole: ExactSum = values.iter().copied().collect();
            let cut = split.min(values.len());
            let mut left: ExactSum = values[..cut].iter().copied().collect();
            let right: ExactSum = values[cut..].iter().rev().copied().collect();
            left.merge(&right);
            prop_assert_eq!(whole.value().to_bits(), left.value().to_bits());
            let naive: f64 = values.iter().sum();
            prop_assert!((whole.value() - naive).abs() <= 1e-9);
        }
    }
}
