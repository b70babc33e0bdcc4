//! Command-line front end.
//!
//! Exit status: 0 success, 1 usage error, 2 data error, 3 internal invariant
//! violation. Every output file embeds the resolved configuration and seed.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::canopy::CanopyParams;
use crate::engine::{run_variant, EngineConfig, Variant};
use crate::error::{Error, Result};
use crate::evaluation::{
    compare_variants, timing_sweep, write_timing_csv, RunReport, SweepConfig, TimingCell,
};
use crate::ingest::{self, synthetic, ColumnSpec, LoadedTable, Schema};
use crate::model::Dataset;
use crate::planner::{
    make_plan, minimal_iteration_budget, reference_epsilon_m, BudgetPlan, PlannerInputs,
    DEFAULT_MSE_THRESHOLD, DEFAULT_RHO, DEFAULT_T_CAP,
};

#[derive(Debug, Parser)]
#[command(
    name = "edpdcs",
    version,
    about = "Differentially private k-means over partitioned map/reduce"
)]
pub struct Cli {
    /// Worker threads for the engine and sweeps [default: available parallelism]
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Directory for output files
    #[arg(long, global = true, env = "EDPDCS_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the budget plan (eps_m, T, per-iteration and per-query budgets)
    Plan(PlanArgs),
    /// Run one variant and write its report as JSON
    Run(RunArgs),
    /// Seeded NICV comparison of the DP variants over an epsilon grid
    Compare(CompareArgs),
    /// Wall-clock timing over data sizes and partition counts
    Bench(BenchArgs),
    /// Write a seeded surrogate dataset in the UCI file layout
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaArg {
    Blood,
    Adult,
    Numeric,
}

impl From<SchemaArg> for Schema {
    fn from(s: SchemaArg) -> Self {
        match s {
            SchemaArg::Blood => Schema::Blood,
            SchemaArg::Adult => Schema::Adult,
            SchemaArg::Numeric => Schema::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticKind {
    Blood,
    Adult,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Input CSV file(s); several files with one layout are concatenated
    #[arg(long, value_delimiter = ',')]
    pub dataset: Vec<PathBuf>,

    /// File layout [default: guessed from the file name, else numeric]
    #[arg(long, value_enum)]
    pub schema: Option<SchemaArg>,

    /// The numeric layout has a header row
    #[arg(long)]
    pub header: bool,

    /// Built-in surrogate used when no --dataset is given
    #[arg(long, value_enum, default_value = "blood")]
    pub synthetic: SyntheticKind,

    #[arg(long, default_value_t = 0)]
    pub synthetic_seed: u64,

    /// Row count for the adult surrogate
    #[arg(long)]
    pub synthetic_rows: Option<usize>,

    /// Number of clusters [default: 2 for blood, 5 for adult]
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PlannerArgs {
    #[arg(long, default_value_t = DEFAULT_RHO)]
    pub rho: f64,

    /// Use this eps_m instead of the closed-form value
    #[arg(long)]
    pub eps_m_override: Option<f64>,

    #[arg(long, default_value_t = DEFAULT_MSE_THRESHOLD)]
    pub mse_threshold: f64,

    #[arg(long, default_value_t = DEFAULT_T_CAP)]
    pub t_cap: usize,
}

impl PlannerArgs {
    fn inputs(&self, n_rows: usize, n_dims: usize, k: usize, epsilon: f64) -> PlannerInputs {
        PlannerInputs {
            mse_threshold: self.mse_threshold,
            t_cap: self.t_cap,
            ..PlannerInputs::new(n_rows, n_dims, k, epsilon)
                .with_rho(self.rho)
                .with_epsilon_m_override(self.eps_m_override)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EngineArgs {
    /// Canopy loose threshold [default: 2 * t2]
    #[arg(long)]
    pub t1: Option<f64>,

    /// Canopy tight threshold [default: half the mean pairwise distance]
    #[arg(long)]
    pub t2: Option<f64>,

    /// Canopy subsample size [default: 20 * k]
    #[arg(long)]
    pub subsample: Option<usize>,

    /// Floor for noisy counts before division
    #[arg(long, default_value_t = 1.0)]
    pub min_count: f64,

    /// Do not clamp released centroids to [0, 1]
    #[arg(long)]
    pub no_clamp: bool,

    #[arg(long, default_value_t = 10)]
    pub ru_max_iters: usize,

    #[arg(long, default_value_t = 1e-4)]
    pub ru_shift_tol: f64,

    /// Keep exact and noisy aggregates in the iteration trace
    #[arg(long)]
    pub diagnostics: bool,
}

impl EngineArgs {
    fn canopy(&self, seed: u64) -> CanopyParams {
        CanopyParams {
            t1: self.t1,
            t2: self.t2,
            subsample_size: self.subsample,
            seed,
        }
    }

    fn engine(&self, variant: Variant, seed: u64, partitions: usize) -> EngineConfig {
        EngineConfig {
            clamp_centroids: !self.no_clamp,
            min_count: self.min_count,
            ru_max_iters: self.ru_max_iters,
            ru_shift_tol: self.ru_shift_tol,
            diagnostics: self.diagnostics,
            ..EngineConfig::new(variant, seed).with_partitions(partitions)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub n: Option<usize>,

    #[arg(long)]
    pub d: Option<usize>,

    /// Total budget(s), comma separated
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,3")]
    pub eps: Vec<f64>,

    #[arg(long, value_enum, default_value = "both")]
    pub format: OutputFormat,

    #[command(flatten)]
    pub planner: PlannerArgs,

    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "edpdcs")]
    pub variant: Variant,

    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 1)]
    pub partitions: usize,

    /// Report path [default: <out-dir>/run-<variant>-seed<seed>.json]
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Include wall-clock timings (makes the report non-reproducible)
    #[arg(long)]
    pub timings: bool,

    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub planner: PlannerArgs,

    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,1.5,2,3")]
    pub eps: Vec<f64>,

    /// Seeds per (variant, eps) cell
    #[arg(long, default_value_t = 30)]
    pub seeds: usize,

    /// Base seed; run s uses base + s
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_delimiter = ',', default_value = "EDPDCS,RF_DPKM,RU_DPKM")]
    pub variants: Vec<Variant>,

    #[arg(long, default_value_t = 1)]
    pub partitions: usize,

    /// Skip the non-private reference run
    #[arg(long)]
    pub no_floor: bool,

    /// Output path prefix [default: <out-dir>/compare-seed<seed>]
    #[arg(long)]
    pub out_prefix: Option<PathBuf>,

    #[arg(long)]
    pub timings: bool,

    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub planner: PlannerArgs,

    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Data sizes (resampled from the dataset) [default: the dataset size]
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,

    #[arg(long, value_delimiter = ',', default_value = "1,4")]
    pub partitions: Vec<usize>,

    #[arg(long, default_value_t = 3)]
    pub reps: usize,

    #[arg(long, default_value_t = 1.0)]
    pub eps: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output path prefix [default: <out-dir>/bench-seed<seed>]
    #[arg(long)]
    pub out_prefix: Option<PathBuf>,

    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub planner: PlannerArgs,

    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub kind: SyntheticKind,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Row count (adult only)
    #[arg(long)]
    pub rows: Option<usize>,

    /// Output file [default: standard output]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum DataSource {
    Files {
        paths: Vec<String>,
        schema: SchemaArg,
        header: bool,
    },
    Synthetic {
        kind: SyntheticKind,
        seed: u64,
        rows: usize,
    },
}

/// A normalized dataset with its provenance.
pub struct LoadedData {
    pub data: Dataset,
    pub source: DataSource,
    pub k: usize,
    pub columns: Vec<ColumnSpec>,
    pub dropped_rows: usize,
}

fn guess_schema(path: &Path) -> SchemaArg {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if name.contains("adult") {
        SchemaArg::Adult
    } else if name.contains("blood") || name.contains("transfusion") {
        SchemaArg::Blood
    } else {
        SchemaArg::Numeric
    }
}

impl DataArgs {
    pub fn load(&self) -> Result<LoadedData> {
        let (table, source, schema): (LoadedTable, DataSource, Schema) = if self.dataset.is_empty()
        {
            let (text, schema, rows) = match self.synthetic {
                SyntheticKind::Blood => (
                    synthetic::blood_like_csv(self.synthetic_seed),
                    Schema::Blood,
                    synthetic::BLOOD_ROWS,
                ),
                SyntheticKind::Adult => {
                    let rows = self.synthetic_rows.unwrap_or(synthetic::ADULT_ROWS);
                    (
                        synthetic::adult_like_csv(self.synthetic_seed, rows),
                        Schema::Adult,
                        rows,
                    )
                }
            };
            let specs = match schema {
                Schema::Adult => ingest::adult_columns(),
                _ => ingest::blood_columns(),
            };
            let label = format!(
                "synthetic-{}-seed{}",
                schema_name(schema),
                self.synthetic_seed
            );
            let table = ingest::load_csv_reader(
                text.as_bytes(),
                &specs,
                &schema.csv_options(false),
                &label,
            )?;
            (
                table,
                DataSource::Synthetic {
                    kind: self.synthetic,
                    seed: self.synthetic_seed,
                    rows,
                },
                schema,
            )
        } else {
            let schema_arg = self
                .schema
                .unwrap_or_else(|| guess_schema(&self.dataset[0]));
            let schema: Schema = schema_arg.into();
            let paths: Vec<&Path> = self.dataset.iter().map(PathBuf::as_path).collect();
            let table = ingest::load_schema(schema, &paths, self.header)?;
            let source = DataSource::Files {
                paths: self
                    .dataset
                    .iter()
                    .map(|p| p.display().to_string())
                    .collect(),
                schema: schema_arg,
                header: self.header,
            };
            (table, source, schema)
        };
        let k = match self.k.or(schema.default_k()) {
            Some(k) => k,
            None => {
                return Err(Error::InvalidInput(
                    "--k is required for the numeric layout".into(),
                ))
            }
        };
        let dropped_rows = table.dropped_rows;
        let (data, table) = table.normalize()?;
        Ok(LoadedData {
            data,
            source,
            k,
            columns: table.columns,
            dropped_rows,
        })
    }
}

fn schema_name(s: Schema) -> &'static str {
    match s {
        Schema::Blood => "blood",
        Schema::Adult => "adult",
        Schema::Numeric => "numeric",
    }
}

/// Data-related part of the embedded configuration.
#[derive(Debug, Clone, Serialize)]
struct DataConfig {
    source: DataSource,
    n_rows: usize,
    n_dims: usize,
    dropped_rows: usize,
    columns: Vec<ColumnSpec>,
}

impl DataConfig {
    fn of(loaded: &LoadedData) -> Self {
        Self {
            source: loaded.source.clone(),
            n_rows: loaded.data.n_rows(),
            n_dims: loaded.data.n_dims(),
            dropped_rows: loaded.dropped_rows,
            columns: loaded.columns.clone(),
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a C,
    result: &'a R,
}

fn write_json<C: Serialize, R: Serialize>(
    path: &Path,
    command: &'static str,
    config: &C,
    result: &R,
) -> Result<()> {
    let env = Envelope {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        result,
    };
    let mut text = serde_json::to_string_pretty(&env)?;
    text.push('\n');
    ensure_parent(path)?;
    fs::write(path, text)?;
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn with_extension(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

#[derive(Debug, Clone, Serialize)]
struct PlanOutput {
    n_rows: usize,
    n_dims: usize,
    k: usize,
    rho: f64,
    mse_threshold: f64,
    t_cap: usize,
    epsilon_m_computed: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon_m_override: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_epsilon_m: Option<f64>,
    plans: Vec<BudgetPlan>,
}

fn cmd_plan(args: &PlanArgs, out: &mut dyn Write) -> Result<()> {
    let (n, d, k) = match (args.n, args.d) {
        (Some(n), Some(d)) => {
            let k = args
                .data
                .k
                .ok_or_else(|| Error::InvalidInput("--k is required with --n/--d".into()))?;
            (n, d, k)
        }
        (None, None) => {
            let loaded = args.data.load()?;
            (loaded.data.n_rows(), loaded.data.n_dims(), loaded.k)
        }
        _ => {
            return Err(Error::InvalidInput(
                "--n and --d must be given together".into(),
            ))
        }
    };
    if args.eps.is_empty() {
        return Err(Error::InvalidInput("--eps needs at least one value".into()));
    }
    let base = args.planner.inputs(n, d, k, args.eps[0]);
    let computed = minimal_iteration_budget(&base)?;
    let reference = reference_epsilon_m(&base);
    if let Some(r) = reference {
        if (r - computed).abs() > 1e-9 {
            log::warn!(
                "closed-form eps_m {computed:.6} differs from the published value {r} for this shape (ratio {:.4})",
                r / computed
            );
        }
    }
    let plans = args
        .eps
        .iter()
        .map(|&e| make_plan(&base.clone().with_epsilon(e)))
        .collect::<Result<Vec<_>>>()?;
    let output = PlanOutput {
        n_rows: n,
        n_dims: d,
        k,
        rho: base.rho,
        mse_threshold: base.mse_threshold,
        t_cap: base.t_cap,
        epsilon_m_computed: computed,
        epsilon_m_override: base.epsilon_m_override,
        reference_epsilon_m: reference,
        plans,
    };

    if matches!(args.format, OutputFormat::Text | OutputFormat::Both) {
        writeln!(
            out,
            "N={n} d={d} k={k} rho={} mse_threshold={} t_cap={}",
            base.rho, base.mse_threshold, base.t_cap
        )?;
        writeln!(out, "eps_m (closed form): {computed:.6}")?;
        if let Some(m) = base.epsilon_m_override {
            writeln!(out, "eps_m (override):    {m}")?;
        }
        if let Some(r) = reference {
            writeln!(
                out,
                "eps_m (published):   {r}  (closed form / published = {:.4})",
                computed / r
            )?;
        }
        writeln!(
            out,
            "{:>8} {:>3} {:>12} {:>12} {:>12}",
            "eps", "T", "eps_t", "eps_i", "eps_0"
        )?;
        for p in &output.plans {
            writeln!(
                out,
                "{:>8} {:>3} {:>12.6} {:>12.6} {:>12.6}",
                p.epsilon_total, p.iterations, p.epsilon_per_iter, p.epsilon_dim, p.epsilon_count
            )?;
        }
    }
    if matches!(args.format, OutputFormat::Json | OutputFormat::Both) {
        serde_json::to_writer_pretty(&mut *out, &output)?;
        writeln!(out)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct RunConfig {
    data: DataConfig,
    k: usize,
    variant: Variant,
    epsilon: f64,
    seed: u64,
    n_partitions: usize,
    planner: PlannerInputs,
    canopy: CanopyParams,
    engine: EngineConfig,
    timings_included: bool,
}

fn cmd_run(args: &RunArgs, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let loaded = args.data.load()?;
    let data = &loaded.data;
    let planner = args
        .planner
        .inputs(data.n_rows(), data.n_dims(), loaded.k, args.eps);
    let canopy = args.engine.canopy(args.seed);
    let engine = args.engine.engine(args.variant, args.seed, args.partitions);
    let outcome = run_variant(data, loaded.k, &planner, &canopy, &engine)?;
    let report: RunReport = if args.timings {
        outcome.report
    } else {
        outcome.report.without_timings()
    };

    let config = RunConfig {
        data: DataConfig::of(&loaded),
        k: loaded.k,
        variant: args.variant,
        epsilon: args.eps,
        seed: args.seed,
        n_partitions: args.partitions,
        planner,
        canopy,
        engine,
        timings_included: args.timings,
    };
    let path = args.out.clone().unwrap_or_else(|| {
        out_dir.join(format!(
            "run-{}-seed{}.json",
            args.variant.as_str().to_ascii_lowercase(),
            args.seed
        ))
    });
    write_json(&path, "run", &config, &report)?;
    writeln!(
        out,
        "{} nicv={:.6} iterations={} spent={} -> {}",
        report.variant,
        report.nicv,
        report.iterations_run,
        report.budget_spent,
        path.display()
    )?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct CompareConfig {
    data: DataConfig,
    epsilons: Vec<f64>,
    n_seeds: usize,
    sweep: SweepConfig,
    timings_included: bool,
}

fn cmd_compare(args: &CompareArgs, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let loaded = args.data.load()?;
    let data = &loaded.data;
    let sweep = SweepConfig {
        planner: args.planner.inputs(
            data.n_rows(),
            data.n_dims(),
            loaded.k,
            args.eps.first().copied().unwrap_or(1.0),
        ),
        canopy: args.engine.canopy(args.seed),
        engine: args
            .engine
            .engine(Variant::Edpdcs, args.seed, args.partitions),
        variants: args.variants.clone(),
        include_floor: !args.no_floor,
        ..SweepConfig::new(data, loaded.k, args.seed)
    };
    let mut summary = compare_variants(data, &args.eps, args.seeds, &sweep)?;
    if !args.timings {
        summary.runs = summary
            .runs
            .into_iter()
            .map(RunReport::without_timings)
            .collect();
    }
    let config = CompareConfig {
        data: DataConfig::of(&loaded),
        epsilons: args.eps.clone(),
        n_seeds: args.seeds,
        sweep,
        timings_included: args.timings,
    };
    let prefix = args
        .out_prefix
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("compare-seed{}", args.seed)));
    let csv_path = with_extension(&prefix, "csv");
    ensure_parent(&csv_path)?;
    summary.write_csv(fs::File::create(&csv_path)?)?;
    let json_path = with_extension(&prefix, "json");
    write_json(&json_path, "compare", &config, &summary)?;

    for c in &summary.cells {
        writeln!(
            out,
            "{:<10} eps={:<5} mean_nicv={:.6} sd={:.6} n={}",
            c.variant.as_str(),
            c.epsilon.map(|e| e.to_string()).unwrap_or_default(),
            c.mean_nicv,
            c.sd_nicv,
            c.seed_count
        )?;
    }
    if let Some(f) = &summary.floor {
        writeln!(
            out,
            "{:<10} floor     nicv={:.6}",
            f.variant.as_str(),
            f.mean_nicv
        )?;
    }
    for n in &summary.notes {
        writeln!(out, "note: {n}")?;
    }
    writeln!(out, "-> {} {}", csv_path.display(), json_path.display())?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct BenchConfig {
    data: DataConfig,
    sizes: Vec<usize>,
    partitions: Vec<usize>,
    repetitions: usize,
    epsilon: f64,
    threads: usize,
    sweep: SweepConfig,
}

#[derive(Debug, Clone, Serialize)]
struct BenchResult<'a> {
    /// `median_ms` and `speedup` are wall-clock measurements and are not reproducible.
    note: &'static str,
    cells: &'a [TimingCell],
}

fn cmd_bench(args: &BenchArgs, out_dir: &Path, out: &mut dyn Write) -> Result<()> {
    let loaded = args.data.load()?;
    let data = &loaded.data;
    let sizes = if args.sizes.is_empty() {
        vec![data.n_rows()]
    } else {
        args.sizes.clone()
    };
    let sweep = SweepConfig {
        planner: args
            .planner
            .inputs(data.n_rows(), data.n_dims(), loaded.k, args.eps),
        canopy: args.engine.canopy(args.seed),
        engine: args.engine.engine(Variant::Edpdcs, args.seed, 1),
        ..SweepConfig::new(data, loaded.k, args.seed)
    };
    let cells = timing_sweep(data, &sizes, &args.partitions, args.reps, args.eps, &sweep)?;
    let config = BenchConfig {
        data: DataConfig::of(&loaded),
        sizes,
        partitions: args.partitions.clone(),
        repetitions: args.reps,
        epsilon: args.eps,
        threads: rayon::current_num_threads(),
        sweep,
    };
    let prefix = args
        .out_prefix
        .clone()
        .unwrap_or_else(|| out_dir.join(format!("bench-seed{}", args.seed)));
    let csv_path = with_extension(&prefix, "csv");
    ensure_parent(&csv_path)?;
    write_timing_csv(&cells, fs::File::create(&csv_path)?)?;
    let json_path = with_extension(&prefix, "json");
    let result = BenchResult {
        note: "median_ms and speedup are wall-clock values and not reproducible",
        cells: &cells,
    };
    write_json(&json_path, "bench", &config, &result)?;
    for c in &cells {
        writeln!(
            out,
            "N={:<7} partitions={:<3} median_ms={:.2} speedup={:.2}",
            c.n_rows, c.n_partitions, c.median_ms, c.speedup
        )?;
    }
    writeln!(out, "-> {} {}", csv_path.display(), json_path.display())?;
    Ok(())
}

fn cmd_synth(args: &SynthArgs, out: &mut dyn Write) -> Result<()> {
    let text = match args.kind {
        SyntheticKind::Blood => synthetic::blood_like_csv(args.seed),
        SyntheticKind::Adult => {
            synthetic::adult_like_csv(args.seed, args.rows.unwrap_or(synthetic::ADULT_ROWS))
        }
    };
    match &args.out {
        Some(path) => {
            ensure_parent(path)?;
            fs::write(path, text)?;
        }
        None => out.write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Runs a parsed command, writing human-readable output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidInput("--threads must be >= 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::warn!("could not configure thread pool: {e}");
        }
    }
    match &cli.command {
        Command::Plan(a) => cmd_plan(a, out),
        Command::Run(a) => cmd_run(a, &cli.out_dir, out),
        Command::Compare(a) => cmd_compare(a, &cli.out_dir, out),
        Command::Bench(a) => cmd_bench(a, &cli.out_dir, out),
        Command::Synth(a) => cmd_synth(a, out),
    }
}

/// Parses arguments, runs the command and returns the process exit status.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match execute(&cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("edpdcs").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn plan_json_table_row() {
        let cli = parse(&[
            "plan",
            "--n",
            "748",
            "--d",
            "4",
            "--k",
            "2",
            "--eps",
            "0.5",
            "--eps-m-override",
            "0.65508",
            "--format",
            "json",
        ]);
        let mut buf = Vec::new();
        execute(&cli, &mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["plans"][0]["iterations"], 2);
        assert_eq!(v["reference_epsilon_m"], 0.65508);
    }

    #[test]
    fn plan_rejects_half_shape() {
        let cli = parse(&["plan", "--n", "748", "--k", "2"]);
        let err = execute(&cli, &mut Vec::new()).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_from_args(["edpdcs", "plan", "--bogus"]), 1);
        assert_eq!(run_from_args(["edpdcs", "run", "--variant", "nope"]), 1);
        assert_eq!(run_from_args(["edpdcs", "--help"]), 0);
    }

    #[test]
    fn schema_guess_from_name() {
        assert_eq!(guess_schema(Path::new("/x/adult.data")), SchemaArg::Adult);
        assert_eq!(
            guess_schema(Path::new("transfusion.data")),
            SchemaArg::Blood
        );
        assert_eq!(guess_schema(Path::new("pts.csv")), SchemaArg::Numeric);
    }

    #[test]
    fn prefix_extension_keeps_dots() {
        assert_eq!(
            with_extension(Path::new("out/a.b"), "csv"),
            PathBuf::from("out/a.b.csv")
        );
    }
}
