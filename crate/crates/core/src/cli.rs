//! Command-line driver. Every subcommand validates its inputs, computes all
//! results in memory and only then writes its outputs, each atomically.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::eval::{digest_json, run_evaluation, EvalConfig, EvaluationReport, Provenance};
use crate::filter::{apply_filter, FilterAudit, FilterMode, FilterPolicy, ResidualMode};
use crate::io::{read_json, write_atomic, write_json};
use crate::model::{gradient_check, train, AttributeAccuracy, FactorModel, GradientCheck, Hyperparams, TrainingLog};
use crate::schema::{load_dataset, save_dataset, Dataset};
use crate::stats::{association_matrix, AssociationMatrix, LabelSource, Metric};
use crate::svg;
use crate::synthworld::{make_world_from, planted_cramers_v, ConditionalTable, DependencySpec, WorldConfig};

/// Largest batch used for the post-training gradient check.
pub const GRADCHECK_BATCH: usize = 512;
/// Training is rejected when the gradient check exceeds this.
pub const GRADCHECK_LIMIT: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "factorfilter", version, about = "Attribute filtering with disentangled factor codes")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Overrides every seed in the input configuration files.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a labelled dataset from a synthetic world.
    Gen {
        /// World configuration JSON; defaults to the built-in world.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n: usize,
    },
    /// Train a factor model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        hyperparams: Option<PathBuf>,
        /// Comma-separated attributes that get factor codes; default all.
        #[arg(long, value_delimiter = ',')]
        disentangle: Vec<String>,
    },
    /// Filter a dataset through a trained model.
    Filter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Filter policy JSON.
        #[arg(long)]
        policy: PathBuf,
    },
    /// Attribute association matrices.
    Correlate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::All)]
        metric: MetricArg,
        #[arg(long, value_enum, default_value_t = SourceArg::GroundTruth)]
        source: SourceArg,
        /// Required with `--source predictions`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Accuracy matrices, drop studies and the unseen-attribute study.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Full pipeline on the built-in six-attribute world.
    Demo {
        #[arg(long, default_value_t = 20_000)]
        n: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MetricArg {
    All,
    CramersV,
    UncertaintyCoefficient,
}

impl MetricArg {
    fn metrics(self) -> Vec<Metric> {
        match self {
            MetricArg::All => Metric::ALL.to_vec(),
            MetricArg::CramersV => vec![Metric::CramersV],
            MetricArg::UncertaintyCoefficient => vec![Metric::UncertaintyCoefficient],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum SourceArg {
    GroundTruth,
    Predictions,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Schema(_)
            | Error::Row { .. }
            | Error::Json { .. }
            | Error::Dimension { .. }
            | Error::InvalidArgument(_)
            | Error::UnknownAttribute(_)
            | Error::InsufficientSamples { .. } => Failure::Usage(e.to_string()),
            Error::Io { .. } | Error::NonFiniteLoss { .. } | Error::MissingReport(_) => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

struct Ctx {
    seed: Option<u64>,
    out: PathBuf,
    verbose: u8,
}

impl Ctx {
    fn log(&self, msg: impl AsRef<str>) {
        if self.verbose > 0 {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn require(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("input file not found: {}", path.display())))
    }
}

fn load_data(path: &Path) -> CliResult<Dataset> {
    require(path)?;
    require(&crate::schema::schema_path_for(path))?;
    Ok(load_dataset(path)?)
}

fn load_config<T: Default + serde::de::DeserializeOwned>(path: Option<&Path>) -> CliResult<T> {
    match path {
        Some(p) => {
            require(p)?;
            Ok(read_json(p)?)
        }
        None => Ok(T::default()),
    }
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Errors are printed to standard error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {f}");
            f.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::Runtime(e.to_string()))?;
    let ctx = Ctx {
        seed: cli.global.seed,
        out: cli.global.out,
        verbose: cli.global.verbose,
    };
    pool.install(|| match cli.command {
        Command::Gen { spec, n } => cmd_gen(&ctx, spec.as_deref(), n),
        Command::Train {
            data,
            hyperparams,
            disentangle,
        } => cmd_train(&ctx, &data, hyperparams.as_deref(), &disentangle),
        Command::Filter { data, model, policy } => cmd_filter(&ctx, &data, &model, &policy),
        Command::Correlate {
            data,
            metric,
            source,
            model,
        } => cmd_correlate(&ctx, &data, metric, source, model.as_deref()),
        Command::Eval { data, model, config } => cmd_eval(&ctx, &data, &model, config.as_deref()),
        Command::Demo { n } => cmd_demo(&ctx, n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub samples: usize,
    pub attributes: Vec<String>,
    pub cardinalities: Vec<usize>,
    pub feature_dim: usize,
    /// Population Cramér's V implied by the dependency tables.
    pub planted_cramers_v: Option<Vec<Vec<f64>>>,
    pub measured_cramers_v: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

fn format_table(names: &[String], values: &[Vec<f64>]) -> String {
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:width$}", "");
    for n in names {
        s.push_str(&format!(" {n:>width$}"));
    }
    for (n, row) in names.iter().zip(values) {
        s.push_str(&format!("\n{n:width$}"));
        for v in row {
            s.push_str(&format!(" {v:>width$.3}"));
        }
    }
    s
}

fn generate(ctx: &Ctx, cfg: &WorldConfig, n: usize) -> CliResult<(Dataset, GenSummary)> {
    let spec = cfg.build()?;
    ctx.log(format!("sampling {n} rows"));
    let data = make_world_from(&spec, 0, n)?;
    let measured = if n > 0 && spec.schema.len() >= 2 {
        association_matrix(&data, Metric::CramersV, LabelSource::GroundTruth)?.values
    } else {
        Vec::new()
    };
    let mut provenance = Provenance {
        seeds: Default::default(),
        digests: Default::default(),
    };
    provenance.seeds.insert("world".into(), cfg.seed);
    provenance.digests.insert("world_config".into(), digest_json(cfg));
    let summary = GenSummary {
        samples: n,
        attributes: spec.schema.names(),
        cardinalities: spec.schema.cardinalities(),
        feature_dim: spec.render.feature_dim,
        planted_cramers_v: planted_cramers_v(&spec),
        measured_cramers_v: measured,
        provenance,
    };
    Ok((data, summary))
}

fn print_gen_summary(s: &GenSummary) {
    println!("samples: {}", s.samples);
    let schema: Vec<String> = s.attributes.iter().zip(&s.cardinalities).map(|(a, k)| format!("{a}({k})")).collect();
    println!("schema: {}", schema.join(", "));
    if let Some(v) = &s.planted_cramers_v {
        println!("planted Cramér's V:\n{}", format_table(&s.attributes, v));
    }
}

fn cmd_gen(ctx: &Ctx, spec: Option<&Path>, n: usize) -> CliResult<()> {
    let mut cfg: WorldConfig = load_config(spec)?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    let (data, summary) = generate(ctx, &cfg, n)?;
    create_out(&ctx.out)?;
    save_dataset(&data, &ctx.path("data.csv"))?;
    write_json(&ctx.path("gen.json"), &summary)?;
    print_gen_summary(&summary);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub disentangled: Vec<String>,
    pub accuracies: Vec<AttributeAccuracy>,
    pub gradient_check: GradientCheck,
    pub training: Option<TrainingLog>,
    pub provenance: Provenance,
}

fn fit(ctx: &Ctx, data: &Dataset, hp: &Hyperparams, names: &[String]) -> CliResult<(FactorModel, TrainReport)> {
    let schema = data.schema();
    let set: Vec<usize> = if names.is_empty() {
        (0..schema.len()).collect()
    } else {
        names.iter().map(|n| schema.index_of(n)).collect::<crate::Result<_>>()?
    };
    ctx.log(format!("training on {} samples", data.len()));
    let model = train(data, hp, &set)?;
    let mut taken = 0;
    let batch = data.filter(|_| {
        taken += 1;
        taken <= GRADCHECK_BATCH
    });
    let check = gradient_check(&model, &batch)?;
    ctx.log(format!("gradient check: max relative error {:.3e}", check.max_relative_error));
    if !(check.max_relative_error <= GRADCHECK_LIMIT) {
        return Err(Failure::Runtime(format!(
            "gradient check failed: max relative error {:.3e} exceeds {GRADCHECK_LIMIT:e}",
            check.max_relative_error
        )));
    }
    let mut provenance = Provenance {
        seeds: Default::default(),
        digests: Default::default(),
    };
    provenance.seeds.insert("training".into(), hp.seed);
    provenance.digests.insert("hyperparams".into(), digest_json(hp));
    provenance.digests.insert("data".into(), digest_json(&data.samples()));
    let report = TrainReport {
        disentangled: model.disentangled.iter().map(|&a| schema.name(a).to_string()).collect(),
        accuracies: model.accuracies.clone(),
        gradient_check: check,
        training: model.training.clone(),
        provenance,
    };
    Ok((model, report))
}

fn cmd_train(ctx: &Ctx, data: &Path, hyperparams: Option<&Path>, disentangle: &[String]) -> CliResult<()> {
    let data = load_data(data)?;
    let mut hp: Hyperparams = load_config(hyperparams)?;
    if let Some(seed) = ctx.seed {
        hp.seed = seed;
    }
    let (model, report) = fit(ctx, &data, &hp, disentangle)?;
    create_out(&ctx.out)?;
    write_json(&ctx.path("model.json"), &model)?;
    write_json(&ctx.path("train.json"), &report)?;
    for a in &report.accuracies {
        println!("{}: train {:.4}, validation {:.4}", a.attribute, a.train, a.validation);
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<FactorModel> {
    require(path)?;
    Ok(read_json(path)?)
}

fn filtered(model: &FactorModel, data: &Dataset, policy: &FilterPolicy) -> CliResult<(Dataset, FilterAudit)> {
    if model.schema != *data.schema() {
        return Err(Failure::Usage("dataset schema differs from the model schema".into()));
    }
    let batch = apply_filter(model, data, policy)?;
    let audit = FilterAudit::new(model, policy, &batch);
    Ok((batch.to_dataset(data)?, audit))
}

fn cmd_filter(ctx: &Ctx, data: &Path, model: &Path, policy: &Path) -> CliResult<()> {
    let data = load_data(data)?;
    let model = load_model(model)?;
    require(policy)?;
    let mut policy: FilterPolicy = read_json(policy)?;
    if let Some(seed) = ctx.seed {
        policy.seed = seed;
    }
    let (out, audit) = filtered(&model, &data, &policy)?;
    create_out(&ctx.out)?;
    save_dataset(&out, &ctx.path("filtered.csv"))?;
    write_json(&ctx.path("audit.json"), &audit)?;
    println!("filtered {} samples, hidden: {}", audit.samples, audit.hidden_attributes.join(", "));
    Ok(())
}

fn matrix_csv(header_corner: &str, cols: &[String], rows: &[String], cell: impl Fn(usize, usize) -> String) -> CliResult<Vec<u8>> {
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let err = |e: csv::Error| Failure::Runtime(e.to_string());
    let mut header = vec![header_corner.to_string()];
    header.extend(cols.iter().cloned());
    wtr.write_record(&header).map_err(err)?;
    for (i, r) in rows.iter().enumerate() {
        let mut rec = vec![r.clone()];
        rec.extend((0..cols.len()).map(|j| cell(i, j)));
        wtr.write_record(&rec).map_err(err)?;
    }
    wtr.into_inner().map_err(|e| Failure::Runtime(e.to_string()))
}

fn write_correlation(ctx: &Ctx, a: &AssociationMatrix) -> CliResult<()> {
    let stem = format!("correlation_{}", a.metric.as_str());
    write_json(&ctx.path(&format!("{stem}.json")), a)?;
    let csv = matrix_csv("attribute", &a.attributes, &a.attributes, |i, j| a.get(i, j).to_string())?;
    write_atomic(&ctx.path(&format!("{stem}.csv")), &csv)?;
    write_atomic(&ctx.path(&format!("{stem}.svg")), svg::association_heatmap(a).as_bytes())?;
    Ok(())
}

fn cmd_correlate(ctx: &Ctx, data: &Path, metric: MetricArg, source: SourceArg, model: Option<&Path>) -> CliResult<()> {
    let mut data = load_data(data)?;
    let source = match source {
        SourceArg::GroundTruth => LabelSource::GroundTruth,
        SourceArg::Predictions => {
            let path = model.ok_or_else(|| Failure::Usage("--source predictions requires --model".into()))?;
            let model = load_model(path)?;
            if model.schema != *data.schema() {
                return Err(Failure::Usage("dataset schema differs from the model schema".into()));
            }
            let labels: Vec<Vec<usize>> = data
                .samples()
                .iter()
                .map(|s| (0..model.schema.len()).map(|a| model.predict(&s.features, a)).collect())
                .collect();
            data = data.with_labels(labels)?;
            LabelSource::Predictions
        }
    };
    let matrices: Vec<AssociationMatrix> =
        metric.metrics().into_iter().map(|m| association_matrix(&data, m, source)).collect::<crate::Result<_>>()?;
    create_out(&ctx.out)?;
    for a in &matrices {
        write_correlation(ctx, a)?;
        println!("{}:\n{}", a.metric.as_str(), format_table(&a.attributes, &a.values));
    }
    Ok(())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_report(ctx: &Ctx, report: &EvaluationReport) -> CliResult<()> {
    write_json(&ctx.path("report.json"), report)?;
    for m in &report.matrices {
        let stem = format!("accuracy_{}_{}", m.mode.as_str(), m.residual_mode.as_str());
        let csv = matrix_csv("classified", &m.filtered_attributes, &m.classified_attributes, |i, j| opt_cell(m.rel_acc[i][j]))?;
        write_atomic(&ctx.path(&format!("{stem}.csv")), &csv)?;
        write_atomic(&ctx.path(&format!("{stem}.svg")), svg::accuracy_heatmap(m).as_bytes())?;
    }
    for a in &report.correlations {
        write_correlation(ctx, a)?;
    }
    for s in &report.studies {
        let name = format!("drop_{}_{}.svg", s.metric.as_str(), s.mode.as_str());
        write_atomic(&ctx.path(&name), svg::regression_scatter(s).as_bytes())?;
    }
    Ok(())
}

fn print_report(report: &EvaluationReport) {
    for m in &report.matrices {
        println!(
            "{}/{}: mean diagonal {:.3}, mean off-diagonal {:.3}",
            m.mode.as_str(),
            m.residual_mode.as_str(),
            m.mean_diagonal(),
            m.mean_off_diagonal()
        );
    }
    for s in &report.studies {
        match &s.summary {
            Some(sm) => println!(
                "drop vs {} ({}): r = {:.3}, p = {:.3}, n = {}",
                s.metric.as_str(),
                s.mode.as_str(),
                sm.pearson_r,
                sm.p_value,
                sm.n_points
            ),
            None => println!("drop vs {} ({}): r undefined", s.metric.as_str(), s.mode.as_str()),
        }
    }
}


fn override_eval_seeds(cfg: &mut EvalConfig, seed: Option<u64>) {
    if let Some(seed) = seed {
        cfg.seed = seed;
        cfg.unseen.world.seed = seed;
        cfg.unseen.hyperparams.seed = seed;
    }
}

fn cmd_eval(ctx: &Ctx, data: &Path, model: &Path, config: Option<&Path>) -> CliResult<()> {
    let data = load_data(data)?;
    let model = load_model(model)?;
    let mut cfg: EvalConfig = load_config(config)?;
    override_eval_seeds(&mut cfg, ctx.seed);
    if model.schema != *data.schema() {
        return Err(Failure::Usage("dataset schema differs from the model schema".into()));
    }
    let mut provenance = Provenance {
        seeds: Default::default(),
        digests: Default::default(),
    };
    provenance.seeds.insert("training".into(), model.hyperparams.seed);
    provenance.digests.insert("data".into(), digest_json(&data.samples()));
    ctx.log("running evaluation");
    let report = run_evaluation(&model, &data, &cfg, provenance)?;
    create_out(&ctx.out)?;
    write_report(ctx, &report)?;
    print_report(&report);
    Ok(())
}

/// World used by `demo`: the six face attributes with their built-in
/// dependencies, moderate noise and entanglement and some residual leakage.
pub fn demo_world(seed: u64) -> WorldConfig {
    WorldConfig {
        dependency: Some(DependencySpec::faces()),
        noise_sigma: 0.5,
        entanglement: 0.3,
        residual_leakage: 0.3,
        seed,
        ..WorldConfig::default()
    }
}

/// Demo world for the unseen-attribute study: independent attributes, so
/// the held-out one is not predictable from the others.
pub fn demo_unseen_world(seed: u64) -> WorldConfig {
    let schema = crate::schema::AttributeSchema::faces();
    let tables = schema.cardinalities().into_iter().map(ConditionalTable::uniform).collect();
    WorldConfig {
        dependency: Some(DependencySpec {
            order: (0..schema.len()).collect(),
            tables,
        }),
        noise_sigma: 0.5,
        seed,
        ..WorldConfig::default()
    }
}

fn cmd_demo(ctx: &Ctx, n: usize) -> CliResult<()> {
    if n < 100 {
        return Err(Failure::Usage("demo needs --n of at least 100".into()));
    }
    let seed = ctx.seed.unwrap_or(0);
    let world = demo_world(seed);
    let (data, summary) = generate(ctx, &world, n)?;
    let spec = world.build()?;
    let eval_set = make_world_from(&spec, n as u64, n / 2)?;
    let hp = Hyperparams {
        seed,
        ..Hyperparams::default()
    };
    let (model, train_report) = fit(ctx, &data, &hp, &[])?;
    let policy = FilterPolicy::new(FilterMode::OptOut, &["gender"], ResidualMode::SwapWithinBatch, seed);
    let (filtered_set, audit) = filtered(&model, &eval_set, &policy)?;
    let mut cfg = EvalConfig {
        seed,
        ..EvalConfig::default()
    };
    cfg.unseen.world = demo_unseen_world(seed);
    cfg.unseen.hyperparams.seed = seed;
    let mut provenance = Provenance {
        seeds: Default::default(),
        digests: Default::default(),
    };
    provenance.seeds.insert("world".into(), world.seed);
    provenance.seeds.insert("training".into(), hp.seed);
    provenance.digests.insert("world_config".into(), digest_json(&world));
    ctx.log("running evaluation");
    let report = run_evaluation(&model, &eval_set, &cfg, provenance)?;

    create_out(&ctx.out)?;
    save_dataset(&data, &ctx.path("data.csv"))?;
    write_json(&ctx.path("gen.json"), &summary)?;
    save_dataset(&eval_set, &ctx.path("eval.csv"))?;
    write_json(&ctx.path("model.json"), &model)?;
    write_json(&ctx.path("train.json"), &train_report)?;
    save_dataset(&filtered_set, &ctx.path("filtered.csv"))?;
    write_json(&ctx.path("audit.json"), &audit)?;
    write_report(ctx, &report)?;

    print_gen_summary(&summary);
    print_report(&report);
    Ok(())
}
