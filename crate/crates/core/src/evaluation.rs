//! NICV, run reports, seeded comparison sweeps and timing sweeps.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::canopy::{CanopyParams, InitOutcome};
use crate::engine::{run_variant, EngineConfig, IterationTrace, Variant};
use crate::error::{Error, Result};
use crate::mechanism::{stream_rng, LedgerEntry};
use crate::model::{sq_dist, Assignment, CentroidSet, Dataset, ExactSum};
use crate::planner::{BudgetPlan, PlannerInputs};

/// Stream used to resample datasets to a requested size for timing sweeps.
const RESAMPLE_STREAM: u64 = (1 << 63) | 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    /// Total budget; `None` for non-private runs.
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub k: usize,
    pub n_rows: usize,
    pub n_dims: usize,
    pub n_partitions: usize,
    pub source_label: String,
    pub nicv: f64,
    /// Lloyd iterations after initialization.
    pub iterations_run: usize,
    pub budget_spent: f64,
    pub budget_residual: f64,
    pub ledger: Vec<LedgerEntry>,
    pub plan: Option<BudgetPlan>,
    pub init: Option<InitOutcome>,
    pub initial_centroids: CentroidSet,
    pub final_centroids: CentroidSet,
    pub trace: Vec<IterationTrace>,
    pub notes: Vec<String>,
    /// Wall-clock phase timings. Not reproducible; omitted from deterministic output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_ms: Option<BTreeMap<String, f64>>,
}

impl RunReport {
    pub fn without_timings(mut self) -> Self {
        self.wall_clock_ms = None;
        self
    }
}

/// Mean over all rows of the squared distance to the assigned centroid.
pub fn nicv(data: &Dataset, cs: &CentroidSet, asg: &Assignment) -> Result<f64> {
    if cs.n_dims() != data.n_dims() {
        return Err(Error::DimensionMismatch {
            expected: data.n_dims(),
            got: cs.n_dims(),
        });
    }
    if asg.labels.len() != data.n_rows() {
        return Err(Error::InvalidInput(format!(
            "assignment has {} labels for {} rows",
            asg.labels.len(),
            data.n_rows()
        )));
    }
    let mut total = ExactSum::default();
    for (x, &j) in data.rows().zip(&asg.labels) {
        if j >= cs.k() {
            return Err(Error::InvalidInput(format!(
                "label {j} out of range for k={}",
                cs.k()
            )));
        }
        total.add(sq_dist(x, cs.centroid(j)));
    }
    Ok(total.value() / data.n_rows() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub variant: Variant,
    pub epsilon: Option<f64>,
    pub seed_count: usize,
    pub mean_nicv: f64,
    pub sd_nicv: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub cells: Vec<SummaryCell>,
    /// Non-private Lloyd reference, run once.
    pub floor: Option<SummaryCell>,
    pub runs: Vec<RunReport>,
    pub notes: Vec<String>,
}

impl ComparisonSummary {
    pub fn cell(&self, variant: Variant, epsilon: f64) -> Option<&SummaryCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.epsilon == Some(epsilon))
    }

    /// Flat CSV: `variant,epsilon,seed_count,mean_nicv,sd_nicv`. The floor row has
    /// an empty epsilon.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            variant: &'a str,
            epsilon: Option<f64>,
            seed_count: usize,
            mean_nicv: f64,
            sd_nicv: f64,
        }
        let mut w = csv::Writer::from_writer(out);
        for c in self.cells.iter().chain(&self.floor) {
            w.serialize(Row {
                variant: c.variant.as_str(),
                epsilon: c.epsilon,
                seed_count: c.seed_count,
                mean_nicv: c.mean_nicv,
                sd_nicv: c.sd_nicv,
            })?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Shared settings for sweeps; per-run seeds and budgets are filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub k: usize,
    /// Template for budget planning; `n_rows`, `n_dims`, `k` and the budget are
    /// overwritten per run.
    pub planner: PlannerInputs,
    /// Template canopy parameters; the seed is replaced by each run's seed.
    pub canopy: CanopyParams,
    /// Template engine settings; variant and seed are replaced per run.
    pub engine: EngineConfig,
    pub base_seed: u64,
    pub variants: Vec<Variant>,
    pub include_floor: bool,
}

impl SweepConfig {
    pub fn new(data: &Dataset, k: usize, base_seed: u64) -> Self {
        Self {
            k,
            planner: PlannerInputs::new(data.n_rows(), data.n_dims(), k, 1.0),
            canopy: CanopyParams::seeded(base_seed),
            engine: EngineConfig::new(Variant::Edpdcs, base_seed),
            base_seed,
            variants: Variant::DP.to_vec(),
            include_floor: true,
        }
    }

    fn run_one(
        &self,
        data: &Dataset,
        variant: Variant,
        epsilon: f64,
        seed: u64,
    ) -> Result<RunReport> {
        let mut planner = self.planner.clone();
        planner.n_rows = data.n_rows();
        planner.n_dims = data.n_dims();
        planner.k = self.k;
        planner.epsilon_total = epsilon;
        let canopy = CanopyParams {
            seed,
            ..self.canopy.clone()
        };
        let engine = EngineConfig {
            variant,
            master_seed: seed,
            ..self.engine.clone()
        };
        Ok(run_variant(data, self.k, &planner, &canopy, &engine)?.report)
    }
}

/// Runs every `(variant, epsilon)` cell with `n_seeds` seeds (`base_seed + s`),
/// plus one non-private floor run. Failing runs are counted and noted, never fatal.
pub fn compare_variants(
    data: &Dataset,
    epsilons: &[f64],
    n_seeds: usize,
    cfg: &SweepConfig,
) -> Result<ComparisonSummary> {
    if n_seeds == 0 {
        return Err(Error::InvalidInput("n_seeds must be >= 1".into()));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "epsilon values must be > 0, got {e}"
        )));
    }

    let jobs: Vec<(Variant, f64, u64)> = epsilons
        .iter()
        .flat_map(|&eps| {
            cfg.variants
                .iter()
                .flat_map(move |&v| (0..n_seeds as u64).map(move |s| (v, eps, s)))
        })
        .collect();
    let results: Vec<Result<RunReport>> = jobs
        .par_iter()
        .map(|&(v, eps, s)| cfg.run_one(data, v, eps, cfg.base_seed.wrapping_add(s)))
        .collect();

    let mut cells = Vec::new();
    let mut runs = Vec::new();
    let mut notes = Vec::new();
    let mut cursor = results.into_iter();
    for &eps in epsilons {
        for &variant in &cfg.variants {
            let mut values = Vec::with_capacity(n_seeds);
            let mut failures = 0;
            for s in 0..n_seeds {
                match cursor.next().expect("one result per job") {
                    Ok(r) => {
                        values.push(r.nicv);
                        runs.push(r);
                    }
                    Err(e) => {
                        failures += 1;
                        notes.push(format!(
                            "{variant} eps={eps} seed={}: {e}",
                            cfg.base_seed.wrapping_add(s as u64)
                        ));
                    }
                }
            }
            let (mean_nicv, sd_nicv) = mean_sd(&values);
            cells.push(SummaryCell {
                variant,
                epsilon: Some(eps),
                seed_count: values.len(),
                mean_nicv,
                sd_nicv,
                failures,
            });
        }
    }

    let floor = if cfg.include_floor {
        let eps = epsilons.first().copied().unwrap_or(1.0);
        match cfg.run_one(data, Variant::NonPrivate, eps, cfg.base_seed) {
            Ok(r) => {
                let cell = SummaryCell {
                    variant: Variant::NonPrivate,
                    epsilon: None,
                    seed_count: 1,
                    mean_nicv: r.nicv,
                    sd_nicv: 0.0,
                    failures: 0,
                };
                runs.push(r);
                Some(cell)
            }
            Err(e) => {
                notes.push(format!("NONPRIVATE floor: {e}"));
                None
            }
        }
    } else {
        None
    };

    Ok(ComparisonSummary {
        cells,
        floor,
        runs,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingCell {
    pub n_rows: usize,
    pub n_partitions: usize,
    pub repetitions: usize,
    pub median_ms: f64,
    /// Median of the smallest partition count at this size divided by this median.
    pub speedup: f64,
}

/// Resamples `data` to `size` rows: without replacement when `size <= N`, with
/// replacement otherwise.
pub fn resample(data: &Dataset, size: usize, seed: u64) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::InvalidInput("sample size must be >= 1".into()));
    }
    let mut rng = stream_rng(seed, RESAMPLE_STREAM);
    let rows: Vec<usize> = if size <= data.n_rows() {
        let mut rows = index::sample(&mut rng, data.n_rows(), size).into_vec();
        rows.sort_unstable();
        rows
    } else {
        (0..size)
            .map(|_| rng.random_range(0..data.n_rows()))
            .collect()
    };
    data.select_rows(
        &rows,
        format!("{} (resampled to {size})", data.source_label()),
    )
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Wall-clock EDPDCS runs per `(size, partitions)` cell; runs execute one at a time.
pub fn timing_sweep(
    data: &Dataset,
    sizes: &[usize],
    partition_counts: &[usize],
    repetitions: usize,
    epsilon: f64,
    cfg: &SweepConfig,
) -> Result<Vec<TimingCell>> {
    if repetitions == 0 || sizes.is_empty() || partition_counts.is_empty() {
        return Err(Error::InvalidInput(
            "timing sweep needs sizes, partition counts and repetitions >= 1".into(),
        ));
    }
    let min_parts = *partition_counts.iter().min().expect("non-empty");
    let mut cells = Vec::new();
    for &size in sizes {
        let sample = resample(data, size, cfg.base_seed)?;
        let mut row = Vec::new();
        for &parts in partition_counts {
            let sweep = SweepConfig {
                engine: EngineConfig {
                    n_partitions: parts,
                    ..cfg.engine.clone()
                },
                ..cfg.clone()
            };
            let mut times = Vec::with_capacity(repetitions);
            for _ in 0..repetitions {
                let t = Instant::now();
                sweep.run_one(&sample, Variant::Edpdcs, epsilon, cfg.base_seed)?;
                times.push(t.elapsed().as_secs_f64() * 1e3);
            }
            row.push(TimingCell {
                n_rows: size,
                n_partitions: parts,
                repetitions,
                median_ms: median(&mut times),
                speedup: f64::NAN,
            });
        }
        let base = row
            .iter()
            .find(|c| c.n_partitions == min_parts)
            .map(|c| c.median_ms)
            .unwrap_or(f64::NAN);
        for c in &mut row {
            c.speedup = base / c.median_ms;
        }
        cells.extend(row);
    }
    Ok(cells)
}

/// CSV with columns `n_rows,n_partitions,repetitions,median_ms,speedup`. The last
/// two are wall-clock measurements and not reproducible.
pub fn write_timing_csv<W: Write>(cells: &[TimingCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}
