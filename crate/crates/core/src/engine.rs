//! Partitioned map/reduce k-means with noisy reduces.
//!
//! Each Lloyd iteration runs one map task per partition, producing exact partial
//! aggregates per cluster. The coordinator merges partials in ascending partition
//! order and runs one reduce task per cluster. In DP mode a reduce task perturbs
//! the merged count and sums with Laplace noise drawn from its own stream keyed by
//! `(master_seed, iteration, cluster)`, so released centroids depend neither on
//! the partition count nor on task scheduling.
//!
//! Variants:
//! - `EDPDCS`: canopy-based private initialization charged as iteration 1,
//!   then `T - 1` Lloyd iterations at `eps / T` each.
//! - `RF_DPKM`: random-row initialization, `T` Lloyd iterations at `eps / T`.
//! - `RU_DPKM`: random-row initialization, iteration `t` charged `eps / 2^(t+1)`,
//!   stops on small centroid shift or an iteration cap.
//! - `NONPRIVATE`: plain Lloyd to convergence.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canopy::{select_initial_centroids, CanopyParams};
use crate::error::{Error, Result};
use crate::evaluation::RunReport;
use crate::mechanism::{
    perturb_aggregate, stream_rng, streams, BudgetLedger, LaplaceSampler, NoiseConfig, Sensitivity,
};
use crate::model::{
    check_dims, nearest, Assignment, CentroidSet, ClusterAggregate, Dataset, ExactSum,
    PartialAggregate, PartialMap, Partition,
};
use crate::planner::{make_plan, PlannerInputs};

pub const NONPRIVATE_MAX_ITERS: usize = 100;
pub const NONPRIVATE_SHIFT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "EDPDCS")]
    Edpdcs,
    #[serde(rename = "RF_DPKM")]
    RfDpkm,
    #[serde(rename = "RU_DPKM")]
    RuDpkm,
    #[serde(rename = "NONPRIVATE")]
    NonPrivate,
}

impl Variant {
    pub const DP: [Variant; 3] = [Variant::Edpdcs, Variant::RfDpkm, Variant::RuDpkm];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Edpdcs => "EDPDCS",
            Variant::RfDpkm => "RF_DPKM",
            Variant::RuDpkm => "RU_DPKM",
            Variant::NonPrivate => "NONPRIVATE",
        }
    }

    pub fn is_private(&self) -> bool {
        !matches!(self, Variant::NonPrivate)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "edpdcs" => Ok(Variant::Edpdcs),
            "rf" | "rf_dpkm" | "rfdpkm" => Ok(Variant::RfDpkm),
            "ru" | "ru_dpkm" | "rudpkm" => Ok(Variant::RuDpkm),
            "nonprivate" | "non_private" | "lloyd" => Ok(Variant::NonPrivate),
            other => Err(Error::InvalidInput(format!("unknown variant '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub variant: Variant,
    pub n_partitions: usize,
    pub master_seed: u64,
    pub clamp_centroids: bool,
    /// Floor applied to noisy counts before division.
    pub min_count: f64,
    pub ru_max_iters: usize,
    pub ru_shift_tol: f64,
    /// Keep exact and noisy aggregates in the iteration trace.
    pub diagnostics: bool,
}

impl EngineConfig {
    pub fn new(variant: Variant, master_seed: u64) -> Self {
        Self {
            variant,
            n_partitions: 1,
            master_seed,
            clamp_centroids: true,
            min_count: 1.0,
            ru_max_iters: 10,
            ru_shift_tol: 1e-4,
            diagnostics: false,
        }
    }

    pub fn with_partitions(mut self, n: usize) -> Self {
        self.n_partitions = n;
        self
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        if self.n_partitions == 0 || self.n_partitions > data.n_rows() {
            return Err(Error::InvalidInput(format!(
                "n_partitions must be in [1, N={}], got {}",
                data.n_rows(),
                self.n_partitions
            )));
        }
        if !(self.min_count > 0.0) {
            return Err(Error::InvalidInput(format!(
                "min_count must be > 0, got {}",
                self.min_count
            )));
        }
        if self.ru_max_iters == 0 {
            return Err(Error::InvalidInput("ru_max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregatePair {
    pub exact: ClusterAggregate,
    pub noisy: Option<ClusterAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub budget_charged: f64,
    pub noise_draws: u64,
    pub centroids_before: CentroidSet,
    pub centroids_after: CentroidSet,
    pub shift: f64,
    pub nicv_after: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aggregates: Option<Vec<AggregatePair>>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub centroids: CentroidSet,
    pub assignment: Assignment,
    pub report: RunReport,
}

/// Map task: exact per-cluster partial aggregates of one partition. Clusters with
/// no local rows are absent.
pub fn map_assign(partition: &Partition<'_>, cs: &CentroidSet) -> Result<PartialMap> {
    check_dims(partition.n_dims, cs)?;
    let mut out = PartialMap::new();
    for x in partition.rows() {
        let (j, _) = nearest(x, cs);
        out.entry(j)
            .or_insert_with(|| PartialAggregate::empty(partition.n_dims))
            .add_point(x);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseOptions {
    pub min_count: f64,
    pub clamp: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReduceOutput {
    pub centroid: Vec<f64>,
    pub exact: ClusterAggregate,
    pub noisy: Option<ClusterAggregate>,
}

/// Reduce task for one cluster. `partials` must be in ascending partition order.
///
/// With noise, the centroid is `S' / max(C', min_count)`, so empty clusters still
/// release a (pure noise) centroid. Without noise an empty cluster keeps `previous`.
pub fn reduce_cluster(
    cluster: usize,
    partials: &[&PartialAggregate],
    previous: &[f64],
    noise: Option<(&NoiseConfig, &mut LaplaceSampler)>,
    opts: ReleaseOptions,
) -> Result<ReduceOutput> {
    let mut merged = PartialAggregate::empty(previous.len());
    for p in partials {
        if p.sums.len() != previous.len() {
            return Err(Error::DimensionMismatch {
                expected: previous.len(),
                got: p.sums.len(),
            });
        }
        merged.merge(p);
    }
    let exact = merged.to_aggregate(cluster);
    match noise {
        Some((cfg, sampler)) => {
            let noisy =
                perturb_aggregate(&exact, cfg.sensitivity, cfg.eps_count, cfg.eps_dim, sampler)?;
            let centroid = noisy.release_centroid(opts.min_count, opts.clamp);
            Ok(ReduceOutput {
                centroid,
                exact,
                noisy: Some(noisy),
            })
        }
        None if merged.count == 0 => Ok(ReduceOutput {
            centroid: previous.to_vec(),
            exact,
            noisy: None,
        }),
        None => {
            let centroid = exact.release_centroid(1.0, opts.clamp);
            Ok(ReduceOutput {
                centroid,
                exact,
                noisy: None,
            })
        }
    }
}

struct StepOutput {
    centroids: CentroidSet,
    noise_draws: u64,
    aggregates: Vec<AggregatePair>,
}

/// One assign-and-update round over all partitions.
fn lloyd_step(
    parts: &[Partition<'_>],
    current: &CentroidSet,
    iteration: usize,
    noise: Option<&NoiseConfig>,
    opts: ReleaseOptions,
) -> Result<StepOutput> {
    let maps: Vec<PartialMap> = parts
        .par_iter()
        .map(|p| map_assign(p, current))
        .collect::<Result<_>>()?;

    let reduced: Vec<(ReduceOutput, u64)> = (0..current.k())
        .into_par_iter()
        .map(|j| {
            let partials: Vec<&PartialAggregate> = maps.iter().filter_map(|m| m.get(&j)).collect();
            match noise {
                Some(cfg) => {
                    let mut sampler = LaplaceSampler::for_reduce(cfg.master_seed, iteration, j);
                    let out = reduce_cluster(
                        j,
                        &partials,
                        current.centroid(j),
                        Some((cfg, &mut sampler)),
                        opts,
                    )?;
                    Ok((out, sampler.draw_count()))
                }
                None => Ok((
                    reduce_cluster(j, &partials, current.centroid(j), None, opts)?,
                    0,
                )),
            }
        })
        .collect::<Result<_>>()?;

    let mut centroids = Vec::with_capacity(reduced.len());
    let mut aggregates = Vec::with_capacity(reduced.len());
    let mut noise_draws = 0;
    for (out, draws) in reduced {
        noise_draws += draws;
        centroids.push(out.centroid);
        aggregates.push(AggregatePair {
            exact: out.exact,
            noisy: out.noisy,
        });
    }
    Ok(StepOutput {
        centroids: CentroidSet::new(centroids, noise.is_some())?,
        noise_draws,
        aggregates,
    })
}

/// Mean squared distance to the nearest centroid, summed exactly per partition.
fn partitioned_cost(parts: &[Partition<'_>], cs: &CentroidSet, n_rows: usize) -> f64 {
    let sums: Vec<ExactSum> = parts
        .par_iter()
        .map(|p| p.rows().map(|x| nearest(x, cs).1).collect())
        .collect();
    let mut total = ExactSum::default();
    for s in &sums {
        total.merge(s);
    }
    total.value() / n_rows as f64
}

fn partitioned_assignment(parts: &[Partition<'_>], cs: &CentroidSet) -> Assignment {
    let blocks: Vec<Vec<usize>> = parts
        .par_iter()
        .map(|p| p.rows().map(|x| nearest(x, cs).0).collect())
        .collect();
    Assignment {
        labels: blocks.concat(),
    }
}

fn random_rows_init(data: &Dataset, k: usize, seed: u64) -> Result<CentroidSet> {
    let mut rng = stream_rng(seed, streams::RANDOM_INIT);
    let rows = index::sample(&mut rng, data.n_rows(), k);
    CentroidSet::new(rows.iter().map(|i| data.row(i).to_vec()).collect(), false)
}

fn check_planner(data: &Dataset, k: usize, planner: &PlannerInputs) -> Result<()> {
    if planner.n_rows != data.n_rows() || planner.n_dims != data.n_dims() || planner.k != k {
        return Err(Error::InvalidInput(format!(
            "planner inputs (N={}, d={}, k={}) do not match the run (N={}, d={}, k={k})",
            planner.n_rows,
            planner.n_dims,
            planner.k,
            data.n_rows(),
            data.n_dims()
        )));
    }
    Ok(())
}

fn check_k(data: &Dataset, k: usize) -> Result<()> {
    if k == 0 || k > data.n_rows() {
        return Err(Error::InvalidInput(format!(
            "k must be in [1, N={}], got {k}",
            data.n_rows()
        )));
    }
    Ok(())
}

fn noise_for(
    sensitivity: Sensitivity,
    epsilon_t: f64,
    n_dims: usize,
    master_seed: u64,
) -> NoiseConfig {
    let split = epsilon_t / (n_dims as f64 + 1.0);
    NoiseConfig {
        sensitivity,
        eps_count: split,
        eps_dim: split,
        master_seed,
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Shared Lloyd driver state.
struct Driver<'a> {
    data: &'a Dataset,
    parts: Vec<Partition<'a>>,
    cfg: &'a EngineConfig,
    opts: ReleaseOptions,
    trace: Vec<IterationTrace>,
}

impl<'a> Driver<'a> {
    fn new(data: &'a Dataset, cfg: &'a EngineConfig) -> Result<Self> {
        cfg.validate(data)?;
        Ok(Self {
            data,
            parts: data.partitions(cfg.n_partitions)?,
            cfg,
            opts: ReleaseOptions {
                min_count: cfg.min_count,
                clamp: cfg.clamp_centroids && data.is_normalized(),
            },
            trace: Vec::new(),
        })
    }

    fn step(
        &mut self,
        current: &CentroidSet,
        iteration: usize,
        charged: f64,
        noise: Option<&NoiseConfig>,
    ) -> Result<CentroidSet> {
        let out = lloyd_step(&self.parts, current, iteration, noise, self.opts)?;
        let nicv_after = partitioned_cost(&self.parts, &out.centroids, self.data.n_rows());
        self.trace.push(IterationTrace {
            iteration,
            budget_charged: charged,
            noise_draws: out.noise_draws,
            centroids_before: current.clone(),
            shift: current.max_shift(&out.centroids),
            centroids_after: out.centroids.clone(),
            nicv_after,
            aggregates: self.cfg.diagnostics.then_some(out.aggregates),
        });
        Ok(out.centroids)
    }

    fn finish(
        self,
        k: usize,
        epsilon: Option<f64>,
        initial: CentroidSet,
        final_centroids: CentroidSet,
        ledger: Option<&BudgetLedger>,
        mut timings: BTreeMap<String, f64>,
        started: Instant,
    ) -> RunOutcome {
        let t = Instant::now();
        let assignment = partitioned_assignment(&self.parts, &final_centroids);
        let nicv = partitioned_cost(&self.parts, &final_centroids, self.data.n_rows());
        timings.insert("final_assignment".into(), ms_since(t));
        timings.insert("total".into(), ms_since(started));

        let (spent, residual, entries) = match ledger {
            Some(l) => (l.spent(), l.total() - l.spent(), l.entries().to_vec()),
            None => (0.0, 0.0, Vec::new()),
        };
        let report = RunReport {
            variant: self.cfg.variant,
            epsilon,
            seed: self.cfg.master_seed,
            k,
            n_rows: self.data.n_rows(),
            n_dims: self.data.n_dims(),
            n_partitions: self.cfg.n_partitions,
            source_label: self.data.source_label().to_string(),
            nicv,
            iterations_run: self.trace.len(),
            budget_spent: spent,
            budget_residual: residual,
            ledger: entries,
            plan: None,
            init: None,
            initial_centroids: initial,
            final_centroids: final_centroids.clone(),
            trace: self.trace,
            notes: Vec::new(),
            wall_clock_ms: Some(timings),
        };
        RunOutcome {
            centroids: final_centroids,
            assignment,
            report,
        }
    }
}

/// The full private pipeline: plan, canopy initialization charged as the first
/// iteration, then `T - 1` noisy Lloyd iterations. Spends exactly `eps`.
pub fn run_edpdcs(
    data: &Dataset,
    k: usize,
    planner: &PlannerInputs,
    canopy: &CanopyParams,
    cfg: &EngineConfig,
) -> Result<RunOutcome> {
    if cfg.variant != Variant::Edpdcs {
        return Err(Error::InvalidInput(format!(
            "run_edpdcs called with variant {}",
            cfg.variant
        )));
    }
    let started = Instant::now();
    let sensitivity = Sensitivity::unit_for(data)?;
    check_k(data, k)?;
    check_planner(data, k, planner)?;
    let plan = make_plan(planner)?;
    let mut driver = Driver::new(data, cfg)?;
    let mut ledger = BudgetLedger::new(plan.epsilon_total)?;
    let mut timings = BTreeMap::new();
    let noise = noise_for(
        sensitivity,
        plan.epsilon_per_iter,
        data.n_dims(),
        cfg.master_seed,
    );

    let t = Instant::now();
    ledger.charge("init", plan.epsilon_per_iter)?;
    let init = select_initial_centroids(data, k, canopy, Some(&noise))?;
    timings.insert("init".into(), ms_since(t));

    let t = Instant::now();
    let mut current = init.centroids.clone();
    for iteration in 1..plan.iterations {
        ledger.charge(format!("iteration {iteration}"), plan.epsilon_per_iter)?;
        current = driver.step(&current, iteration, plan.epsilon_per_iter, Some(&noise))?;
    }
    timings.insert("iterations".into(), ms_since(t));

    if !ledger.is_fully_spent() {
        return Err(Error::Invariant(format!(
            "ledger spent {} of {} after the planned iterations",
            ledger.spent(),
            ledger.total()
        )));
    }
    let mut notes = init.notes.clone();
    if plan.epsilon_m_overridden {
        notes.push(format!(
            "eps_m override {} used instead of closed-form {:.6}",
            plan.epsilon_m, plan.epsilon_m_computed
        ));
    }
    let initial = init.centroids.clone();
    let mut out = driver.finish(
        k,
        Some(plan.epsilon_total),
        initial,
        current,
        Some(&ledger),
        timings,
        started,
    );
    out.report.plan = Some(plan);
    out.report.init = Some(init);
    out.report.notes = notes;
    Ok(out)
}

/// Baselines: RF and RU differentially private k-means and non-private Lloyd, all
/// from random-row initial centroids.
pub fn run_baseline(
    data: &Dataset,
    k: usize,
    planner: &PlannerInputs,
    cfg: &EngineConfig,
) -> Result<RunOutcome> {
    check_k(data, k)?;
    let initial = random_rows_init(data, k, cfg.master_seed)?;
    match cfg.variant {
        Variant::NonPrivate => run_nonprivate_from(data, initial, cfg),
        Variant::RfDpkm => run_fixed(data, k, planner, cfg, initial),
        Variant::RuDpkm => run_halving(data, k, planner.epsilon_total, cfg, initial),
        Variant::Edpdcs => Err(Error::InvalidInput(
            "EDPDCS is not a baseline; use run_edpdcs".into(),
        )),
    }
}

fn run_fixed(
    data: &Dataset,
    k: usize,
    planner: &PlannerInputs,
    cfg: &EngineConfig,
    initial: CentroidSet,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let sensitivity = Sensitivity::unit_for(data)?;
    check_planner(data, k, planner)?;
    let plan = make_plan(planner)?;
    let mut driver = Driver::new(data, cfg)?;
    let mut ledger = BudgetLedger::new(plan.epsilon_total)?;
    let noise = noise_for(
        sensitivity,
        plan.epsilon_per_iter,
        data.n_dims(),
        cfg.master_seed,
    );

    let t = Instant::now();
    let mut current = initial.clone();
    for iteration in 1..=plan.iterations {
        ledger.charge(format!("iteration {iteration}"), plan.epsilon_per_iter)?;
        current = driver.step(&current, iteration, plan.epsilon_per_iter, Some(&noise))?;
    }
    let timings = BTreeMap::from([("iterations".to_string(), ms_since(t))]);
    if !ledger.is_fully_spent() {
        return Err(Error::Invariant(format!(
            "ledger spent {} of {} after the planned iterations",
            ledger.spent(),
            ledger.total()
        )));
    }
    let mut out = driver.finish(
        k,
        Some(plan.epsilon_total),
        initial,
        current,
        Some(&ledger),
        timings,
        started,
    );
    out.report.plan = Some(plan);
    Ok(out)
}

fn run_halving(
    data: &Dataset,
    k: usize,
    epsilon: f64,
    cfg: &EngineConfig,
    initial: CentroidSet,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let sensitivity = Sensitivity::unit_for(data)?;
    let mut driver = Driver::new(data, cfg)?;
    let mut ledger = BudgetLedger::new(epsilon)?;

    let t = Instant::now();
    let mut current = initial.clone();
    let mut converged = false;
    for iteration in 1..=cfg.ru_max_iters {
        let amount = ru_iteration_budget(epsilon, iteration);
        ledger.charge(format!("iteration {iteration}"), amount)?;
        let noise = noise_for(sensitivity, amount, data.n_dims(), cfg.master_seed);
        let next = driver.step(&current, iteration, amount, Some(&noise))?;
        let shift = next.max_shift(&current);
        current = next;
        if shift < cfg.ru_shift_tol {
            converged = true;
            break;
        }
    }
    let timings = BTreeMap::from([("iterations".to_string(), ms_since(t))]);
    let mut out = driver.finish(
        k,
        Some(epsilon),
        initial,
        current,
        Some(&ledger),
        timings,
        started,
    );
    out.report.notes.push(format!(
        "{} after {} iterations; residual budget {:e} unspent",
        if converged {
            "converged"
        } else {
            "iteration cap reached"
        },
        out.report.iterations_run,
        out.report.budget_residual
    ));
    Ok(out)
}

/// Budget of RU iteration `t` (1-based): `eps / 2^(t+1)`.
pub fn ru_iteration_budget(epsilon: f64, iteration: usize) -> f64 {
    epsilon / 2f64.powi(iteration as i32 + 1)
}

/// Plain Lloyd from the given centroids until the largest centroid shift drops below
/// `1e-9` or 100 iterations have run. No noise and no ledger.
pub fn run_nonprivate_from(
    data: &Dataset,
    initial: CentroidSet,
    cfg: &EngineConfig,
) -> Result<RunOutcome> {
    check_dims(data.n_dims(), &initial)?;
    let started = Instant::now();
    let mut driver = Driver::new(data, cfg)?;
    let t = Instant::now();
    let mut current = initial.clone();
    for iteration in 1..=NONPRIVATE_MAX_ITERS {
        let next = driver.step(&current, iteration, 0.0, None)?;
        let shift = next.max_shift(&current);
        current = next;
        if shift < NONPRIVATE_SHIFT_TOL {
            break;
        }
    }
    let timings = BTreeMap::from([("iterations".to_string(), ms_since(t))]);
    Ok(driver.finish(initial.k(), None, initial, current, None, timings, started))
}

/// Dispatches on `cfg.variant`.
pub fn run_variant(
    data: &Dataset,
    k: usize,
    planner: &PlannerInputs,
    canopy: &CanopyParams,
    cfg: &EngineConfig,
) -> Result<RunOutcome> {
    match cfg.variant {
        Variant::Edpdcs => run_edpdcs(data, k, planner, canopy, cfg),
        _ => run_baseline(data, k, planner, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::nicv;

    fn norm(rows: &[Vec<f64>]) -> Dataset {
        Dataset::from_rows(rows, "t")
            .unwrap()
            .into_normalized()
            .unwrap()
    }

    fn centroids(rows: &[&[f64]]) -> CentroidSet {
        CentroidSet::new(rows.iter().map(|r| r.to_vec()).collect(), false).unwrap()
    }

    const OPTS: ReleaseOptions = ReleaseOptions {
        min_count: 1.0,
        clamp: true,
    };

    #[test]
    fn map_assign_examples() {
        let data = norm(&[vec![0.0, 0.0], vec![0.1, 0.0]]);
        let cs = centroids(&[&[0.0, 0.0], &[1.0, 1.0]]);
        let part = data.partitions(1).unwrap().remove(0);
        let out = map_assign(&part, &cs).unwrap();
        assert_eq!(out.len(), 1);
        let agg = out[&0].to_aggregate(0);
        assert_eq!(agg.count, 2.0);
        assert_eq!(agg.sums, vec![0.1, 0.0]);
        assert!(!out.contains_key(&1));

        let empty = Partition::from_slice(0, &[], 2);
        assert!(map_assign(&empty, &cs).unwrap().is_empty());

        let single = Partition::from_slice(0, &[1.0, 1.0], 2);
        let out = map_assign(&single, &cs).unwrap();
        assert_eq!(out[&1].to_aggregate(1).sums, vec![1.0, 1.0]);
        assert_eq!(out[&1].count, 1);
    }

    fn partials_c4_s23() -> Vec<PartialAggregate> {
        let mut a = PartialAggregate::empty(2);
        a.add_point(&[0.5, 1.0]);
        a.add_point(&[0.5, 1.0]);
        let mut b = PartialAggregate::empty(2);
        b.add_point(&[1.0, 0.5]);
        b.add_point(&[0.0, 0.5]);
        vec![a, b]
    }

    #[test]
    fn reduce_exact_mean() {
        let parts = partials_c4_s23();
        let refs: Vec<&PartialAggregate> = parts.iter().collect();
        let out = reduce_cluster(0, &refs, &[0.0, 0.0], None, OPTS).unwrap();
        assert_eq!(out.exact.count, 4.0);
        assert_eq!(out.exact.sums, vec![2.0, 3.0]);
        assert_eq!(out.centroid, vec![0.5, 0.75]);
    }

    #[test]
    fn reduce_vanishing_noise() {
        let parts = partials_c4_s23();
        let refs: Vec<&PartialAggregate> = parts.iter().collect();
        let cfg = NoiseConfig {
            sensitivity: Sensitivity::UNIT,
            eps_count: 1e12,
            eps_dim: 1e12,
            master_seed: 1,
        };
        let mut s = LaplaceSampler::for_reduce(1, 1, 0);
        let out = reduce_cluster(0, &refs, &[0.0, 0.0], Some((&cfg, &mut s)), OPTS).unwrap();
        assert!((out.centroid[0] - 0.5).abs() < 1e-9);
        assert!((out.centroid[1] - 0.75).abs() < 1e-9);
        assert_eq!(s.draw_count(), 3);
    }

    #[test]
    fn negative_noisy_count_floored_and_clamped() {
        let noisy = ClusterAggregate {
            cluster_index: 0,
            count: -2.0,
            sums: vec![3.0, -0.5],
        };
        assert_eq!(noisy.release_centroid(1.0, true), vec![1.0, 0.0]);
    }

    #[test]
    fn empty_cluster_behaviour() {
        let prev = [0.3, 0.7];
        let out = reduce_cluster(0, &[], &prev, None, OPTS).unwrap();
        assert_eq!(out.centroid, prev.to_vec());

        // DP mode still releases a pure-noise centroid
        let cfg = NoiseConfig {
            sensitivity: Sensitivity::UNIT,
            eps_count: 0.1,
            eps_dim: 0.1,
            master_seed: 1,
        };
        let mut s = LaplaceSampler::for_reduce(1, 2, 0);
        let out = reduce_cluster(0, &[], &prev, Some((&cfg, &mut s)), OPTS).unwrap();
        assert_eq!(s.draw_count(), 3);
        assert_eq!(out.exact.count, 0.0);
        assert!(out.centroid.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn nonprivate_square_corners_fixed_point() {
        let data = norm(&[
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ]);
        let init = centroids(&[&[0.0, 0.5], &[1.0, 0.5]]);
        let out = run_nonprivate_from(
            &data,
            init.clone(),
            &EngineConfig::new(Variant::NonPrivate, 0),
        )
        .unwrap();
        assert_eq!(out.report.iterations_run, 1);
        assert_eq!(out.centroids, init);
        assert_eq!(out.report.nicv, 0.25);
        assert_eq!(out.assignment.labels, vec![0, 0, 1, 1]);
    }

    #[test]
    fn ru_schedule() {
        assert_eq!(ru_iteration_budget(1.0, 1), 0.25);
        assert_eq!(ru_iteration_budget(1.0, 2), 0.125);
        assert_eq!(ru_iteration_budget(1.0, 3), 0.0625);
    }

    fn grid_data(n: usize, d: usize) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|j| ((i * (j + 3)) as f64 * 0.618_033_988_7).fract())
                    .collect()
            })
            .collect();
        norm(&rows)
    }

    #[test]
    fn k_one_infinite_budget_is_dataset_mean() {
        let data = grid_data(60, 3);
        let planner = PlannerInputs::new(60, 3, 1, 1e15);
        let cfg = EngineConfig::new(Variant::Edpdcs, 3);
        let out = run_edpdcs(&data, 1, &planner, &CanopyParams::seeded(3), &cfg).unwrap();
        let mean: Vec<f64> = (0..3)
            .map(|j| data.rows().map(|r| r[j]).sum::<f64>() / 60.0)
            .collect();
        for (a, b) in out.centroids.centroid(0).iter().zip(&mean) {
            assert!((a - b).abs() < 1e-9);
        }
        let variance: f64 = data
            .rows()
            .map(|r| {
                r.iter()
                    .zip(&mean)
                    .map(|(x, m)| (x - m).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / 60.0;
        assert!((out.report.nicv - variance).abs() < 1e-9);
    }

    #[test]
    fn edpdcs_spends_exactly_and_draws_per_iteration() {
        let data = grid_data(748, 4);
        let planner = PlannerInputs::new(748, 4, 2, 3.0).with_epsilon_m_override(Some(0.65508));
        let cfg = EngineConfig::new(Variant::Edpdcs, 9);
        let out = run_edpdcs(&data, 2, &planner, &CanopyParams::seeded(9), &cfg).unwrap();
        let r = &out.report;
        assert_eq!(r.ledger.len(), 4);
        assert_eq!(r.ledger[0].phase, "init");
        assert!(r.ledger.iter().all(|e| e.amount == 0.75));
        assert_eq!(r.iterations_run, 3);
        assert!((r.budget_spent - 3.0).abs() <= 1e-12);
        assert!(r.trace.iter().all(|t| t.noise_draws == 2 * 5));
        assert_eq!(r.init.as_ref().unwrap().noise_draws, 2 * 5);
    }

    #[test]
    fn rf_small_budget_two_iterations() {
        let data = grid_data(100, 2);
        let planner = PlannerInputs::new(100, 2, 2, 1.0);
        let eps_m = crate::planner::minimal_iteration_budget(&planner).unwrap();
        let planner = planner.with_epsilon(2.0 * eps_m);
        let out = run_baseline(&data, 2, &planner, &EngineConfig::new(Variant::RfDpkm, 1)).unwrap();
        assert_eq!(out.report.iterations_run, 2);
        assert!(out.report.ledger.iter().all(|e| e.amount == eps_m));
        assert!((out.report.budget_spent - 2.0 * eps_m).abs() < 1e-12);
    }

    #[test]
    fn ru_spends_geometric_prefix() {
        let data = grid_data(200, 3);
        let planner = PlannerInputs::new(200, 3, 3, 1.0);
        let out = run_baseline(&data, 3, &planner, &EngineConfig::new(Variant::RuDpkm, 5)).unwrap();
        let r = &out.report;
        let expected: f64 = (1..=r.iterations_run)
            .map(|t| ru_iteration_budget(1.0, t))
            .sum();
        assert!((r.budget_spent - expected).abs() < 1e-12);
        assert!(r.budget_spent < 1.0);
        assert!(r.budget_residual > 0.0);
    }

    #[test]
    fn partition_invariance_exact_and_noisy() {
        let data = grid_data(300, 3);
        let planner = PlannerInputs::new(300, 3, 3, 1.0);
        let run = |variant, parts| {
            let cfg = EngineConfig::new(variant, 21).with_partitions(parts);
            let mut out = run_variant(&data, 3, &planner, &CanopyParams::seeded(21), &cfg).unwrap();
            out.report.wall_clock_ms = None;
            out.report.n_partitions = 0;
            out
        };
        for variant in [
            Variant::NonPrivate,
            Variant::Edpdcs,
            Variant::RfDpkm,
            Variant::RuDpkm,
        ] {
            let one = run(variant, 1);
            let eight = run(variant, 8);
            assert_eq!(one.report, eight.report, "{variant}");
            assert_eq!(one.assignment, eight.assignment);
        }
    }

    #[test]
    fn nonprivate_nicv_non_increasing() {
        let data = grid_data(500, 2);
        let out = run_baseline(
            &data,
            4,
            &PlannerInputs::new(500, 2, 4, 1.0),
            &EngineConfig::new(Variant::NonPrivate, 8),
        )
        .unwrap();
        let trace = &out.report.trace;
        for w in trace.windows(2) {
            assert!(w[1].nicv_after <= w[0].nicv_after + 1e-12);
        }
        assert_eq!(
            out.report.nicv,
            nicv(&data, &out.centroids, &out.assignment).unwrap()
        );
    }

    #[test]
    fn config_errors() {
        let data = grid_data(10, 2);
        let planner = PlannerInputs::new(10, 2, 2, 1.0);
        let cfg = EngineConfig::new(Variant::RfDpkm, 0).with_partitions(11);
        assert!(run_baseline(&data, 2, &planner, &cfg).is_err());
        let cfg = EngineConfig::new(Variant::Edpdcs, 0);
        assert!(run_baseline(&data, 2, &planner, &cfg).is_err());
        assert!(run_edpdcs(&data, 3, &planner, &CanopyParams::seeded(0), &cfg).is_err());
        let raw = Dataset::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]], "raw").unwrap();
        let p = PlannerInputs::new(2, 2, 1, 1.0);
        assert!(matches!(
            run_edpdcs(&raw, 1, &p, &CanopyParams::seeded(0), &cfg),
            Err(Error::Unnormalized)
        ));
    }

    #[test]
    fn variant_parsing() {
        assert_eq!("rf".parse::<Variant>().unwrap(), Variant::RfDpkm);
        assert_eq!("RU-DPKM".parse::<Variant>().unwrap(), Variant::RuDpkm);
        assert_eq!(
            "nonprivate".parse::<Variant>().unwrap(),
            Variant::NonPrivate
        );
        assert!("kmeans".parse::<Variant>().is_err());
    }
}
