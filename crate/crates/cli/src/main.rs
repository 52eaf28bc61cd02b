//! `fragility` command-line tool.
//!
//! Exit codes: 0 success, 1 gate failure (severe collinearity flagged or a
//! check that did not pass), 2 input or usage error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fragility_core::attribution::MethodTag;
use fragility_core::audit::{self, AuditConfig};
use fragility_core::caa::{self, ClusterRule};
use fragility_core::data::{self, train_test_split};
use fragility_core::fragility::{self, DEFAULT_EPSILON, DEFAULT_TOP_K};
use fragility_core::models::{self, ModelSpec, TrainConfig};
use fragility_core::pipeline::{run_pipeline, PipelineConfig};
use fragility_core::report::{self, Metadata, Provenance};
use fragility_core::sharp::{self, AblationData, SharpConfig, SharpModel, DEFAULT_LAMBDA_GRID};
use fragility_core::theorem::{self, NonIdentifiabilitySpec, SyntheticSpec, DEFAULT_RHO_GRID};
use fragility_core::{
    Aggregation, AttributionMatrix, AttributionMethod, BootstrapPlan, DatasetSchema, Error, FeatureMatrix, KernelConfig,
    LabelVector, ModelParams, OutputScale,
};
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "fragility", version, about = "Multicollinearity audit and attribution fragility toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Correlations, clusters and VIF; exits 1 when a feature is severe.
    Audit(AuditArgs),
    /// Drop features until VIF and |rho| are under the thresholds.
    Prune(AuditArgs),
    /// Fit a model and report held-out metrics.
    Train(TrainArgs),
    /// Attribute held-out rows with a fitted model.
    Explain(ExplainArgs),
    /// Bootstrap fragility scores and rank stability.
    Fragility(FragilityArgs),
    /// Aggregate attributions over correlated feature clusters.
    CaaFilter(CaaArgs),
    /// Train with the fragility penalty.
    Sharp(SharpArgs),
    /// Lambda ablation of the fragility penalty.
    Ablate(AblateArgs),
    /// Synthetic VIF / attribution-variance checks; exits 1 on failure.
    TheoremCheck(TheoremArgs),
    /// Control vs pruned comparison.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON (`{"label": ..., "categorical": [...], "drop": [...]}`) or `unsw-nb15`.
    #[arg(long)]
    schema: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ThresholdArgs {
    #[arg(long, default_value_t = audit::SEVERE_VIF)]
    vif_thresh: f64,
    #[arg(long, default_value_t = audit::DEFAULT_RHO_THRESH)]
    rho_thresh: f64,
}

#[derive(Args, Debug, Clone)]
struct AuditArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    /// Row cap for the VIF regressions (0 uses every row).
    #[arg(long, default_value_t = audit::DEFAULT_VIF_SAMPLE_ROWS)]
    vif_rows: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum ModelArg {
    Ols,
    Logistic,
    Mlp,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum MethodArg {
    Linear,
    Taylor,
    Kernel,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum AggregationArg {
    Mean,
    Max,
    Sum,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::Max => Aggregation::Max,
            AggregationArg::Sum => Aggregation::Sum,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ModelArg::Logistic)]
    model: ModelArg,
    /// Hidden layer widths for the MLP, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "16")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

impl ModelArgs {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            l2: self.l2,
        }
    }

    fn spec(&self, seed: u64) -> ModelSpec {
        let config = self.train_config(seed);
        match self.model {
            ModelArg::Ols => ModelSpec::Ols,
            ModelArg::Logistic => ModelSpec::Logistic { config },
            ModelArg::Mlp => ModelSpec::Mlp {
                config,
                hidden: self.hidden.clone(),
            },
        }
    }
}

#[derive(Args, Debug, Clone)]
struct MethodArgs {
    /// Defaults to linear for OLS/logistic and taylor for the MLP.
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Kernel SHAP coalitions per instance.
    #[arg(long, default_value_t = 2048)]
    coalitions: usize,
    /// Kernel SHAP background rows.
    #[arg(long, default_value_t = 100)]
    background: usize,
    /// Explain probabilities instead of logits (taylor and kernel).
    #[arg(long)]
    probability: bool,
}

impl MethodArgs {
    fn method(&self, spec: &ModelSpec, seed: u64) -> AttributionMethod {
        let scale = if self.probability { OutputScale::Probability } else { OutputScale::Raw };
        match self.method {
            None => match AttributionMethod::default_for(spec.kind()) {
                AttributionMethod::Taylor { .. } => AttributionMethod::Taylor { scale },
                m => m,
            },
            Some(MethodArg::Linear) => AttributionMethod::Linear,
            Some(MethodArg::Taylor) => AttributionMethod::Taylor { scale },
            Some(MethodArg::Kernel) => AttributionMethod::Kernel {
                config: KernelConfig {
                    num_coalitions: self.coalitions,
                    background_size: self.background,
                    seed,
                    scale,
                },
            },
        }
    }
}

#[derive(Args, Debug, Clone)]
struct PlanArgs {
    #[arg(long, default_value_t = 10)]
    resamples: usize,
    /// Rows per resample; defaults to min(10000, training rows).
    #[arg(long)]
    sample_size: Option<usize>,
    /// Held-out rows attributed in every resample.
    #[arg(long, default_value_t = 200)]
    eval_rows: usize,
}

impl PlanArgs {
    fn plan(&self, n_train: usize, seed: u64) -> Result<BootstrapPlan, Error> {
        BootstrapPlan::new(self.resamples, self.sample_size.unwrap_or(n_train.min(10_000)), seed)
    }
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug, Clone)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    method: MethodArgs,
    /// Use a fitted model (model.json from `train`) instead of training.
    #[arg(long)]
    model_file: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    eval_rows: usize,
}

#[derive(Args, Debug, Clone)]
struct FragilityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args, Debug, Clone)]
struct CaaArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[arg(long, default_value_t = audit::DEFAULT_RHO_THRESH)]
    rho_thresh: f64,
    #[arg(long, value_enum, default_value_t = AggregationArg::Mean)]
    aggregation: AggregationArg,
    /// Also join features that both exceed this VIF (extension rule).
    #[arg(long)]
    shared_vif: Option<f64>,
    /// Attribution CSV to filter instead of computing one; rows must match the held-out rows.
    #[arg(long)]
    attributions: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    eval_rows: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
enum SharpModelArg {
    Logistic,
    Mlp,
}

#[derive(Args, Debug, Clone)]
struct SharpArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = SharpModelArg::Logistic)]
    model: SharpModelArg,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Penalise on epochs divisible by this interval.
    #[arg(long, default_value_t = 1)]
    k_interval: usize,
    #[arg(long, default_value_t = 2)]
    penalty_resamples: usize,
    #[arg(long, default_value_t = 1)]
    inner_steps: usize,
    /// Evaluate the penalty on the first batch of a penalised epoch only.
    #[arg(long)]
    once_per_epoch: bool,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    l2: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

impl SharpArgs {
    fn sharp_model(&self) -> SharpModel {
        match self.model {
            SharpModelArg::Logistic => SharpModel::Logistic,
            SharpModelArg::Mlp => SharpModel::Mlp {
                hidden: self.hidden.clone(),
            },
        }
    }

    fn config(&self, seed: u64) -> SharpConfig {
        SharpConfig {
            lambda: self.lambda,
            fragility_interval: self.k_interval,
            penalty_resamples: self.penalty_resamples,
            inner_steps: self.inner_steps,
            base: TrainConfig {
                learning_rate: self.learning_rate,
                epochs: self.epochs,
                batch_size: self.batch_size,
                seed,
                l2: self.l2,
            },
            epsilon: DEFAULT_EPSILON,
            once_per_epoch: self.once_per_epoch,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct AblateArgs {
    #[command(flatten)]
    sharp: SharpArgs,
    /// Lambda grid; must contain 0 and increase strictly.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[command(flatten)]
    plan: PlanArgs,
}

#[derive(Args, Debug, Clone)]
struct TheoremArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Features in the synthetic design (pair 0-1 is correlated).
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[arg(long, default_value_t = 200)]
    resamples: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct PipelineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    thresholds: ThresholdArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    plan: PlanArgs,
}

enum Failure {
    Gate(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gate(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> CliResult {
    let start = Instant::now();
    let (name, out) = match &command {
        Command::Audit(a) => ("audit", a.data.out.clone()),
        Command::Prune(a) => ("prune", a.data.out.clone()),
        Command::Train(a) => ("train", a.data.out.clone()),
        Command::Explain(a) => ("explain", a.data.out.clone()),
        Command::Fragility(a) => ("fragility", a.data.out.clone()),
        Command::CaaFilter(a) => ("caa-filter", a.data.out.clone()),
        Command::Sharp(a) => ("sharp", a.data.out.clone()),
        Command::Ablate(a) => ("ablate", a.sharp.data.out.clone()),
        Command::TheoremCheck(a) => ("theorem-check", a.out.clone()),
        Command::Pipeline(a) => ("pipeline", a.data.out.clone()),
    };
    report::ensure_dir(&out)?;
    let result = match command {
        Command::Audit(a) => cmd_audit(&a),
        Command::Prune(a) => cmd_prune(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Explain(a) => cmd_explain(&a),
        Command::Fragility(a) => cmd_fragility(&a),
        Command::CaaFilter(a) => cmd_caa(&a),
        Command::Sharp(a) => cmd_sharp(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::TheoremCheck(a) => cmd_theorem(&a),
        Command::Pipeline(a) => cmd_pipeline(&a),
    };
    let meta = Metadata {
        command: name.into(),
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        ..Metadata::default()
    };
    report::write_json(out.join("metadata.json"), &meta)?;
    result
}

fn schema(arg: &Option<String>) -> Result<DatasetSchema, Error> {
    match arg.as_deref() {
        None => Ok(DatasetSchema::with_label("label")),
        Some("unsw-nb15") => Ok(DatasetSchema::unsw_nb15()),
        Some(path) => DatasetSchema::from_json_file(path),
    }
}

fn load(d: &DataArgs) -> Result<(FeatureMatrix, LabelVector), Error> {
    data::load_csv(&d.data, &schema(&d.schema)?)
}

fn provenance(command: &str, d: &DataArgs) -> Result<Provenance, Error> {
    Provenance::new(command)
        .seed("seed", d.seed)
        .setting("data", d.data.display().to_string())?
        .setting("schema", d.schema.clone())
}

/// Stratified split, with both halves standardised on the training rows.
struct Prepared {
    train_x: FeatureMatrix,
    train_y: LabelVector,
    test_x: FeatureMatrix,
    test_y: LabelVector,
}

fn prepare(d: &DataArgs, test_fraction: f64) -> Result<Prepared, Error> {
    let (x, y) = load(d)?;
    let split = train_test_split(&x, &y, test_fraction, d.seed)?;
    let train_x = split.train_x.standardize()?;
    let test_x = split.test_x.standardize_like(&train_x)?;
    Ok(Prepared {
        train_x,
        train_y: split.train_y,
        test_x,
        test_y: split.test_y,
    })
}

fn head(x: &FeatureMatrix, rows: usize) -> FeatureMatrix {
    x.select_rows(&(0..rows.min(x.nrows())).collect::<Vec<_>>())
}

fn audit_config(t: &ThresholdArgs, vif_rows: Option<usize>, seed: u64) -> AuditConfig {
    AuditConfig {
        vif_thresh: t.vif_thresh,
        rho_thresh: t.rho_thresh,
        vif_sample_rows: vif_rows,
        seed,
    }
}

fn run_audit(a: &AuditArgs) -> Result<(FeatureMatrix, LabelVector, audit::AuditReport, AuditConfig, Provenance), Error> {
    let (raw, y) = load(&a.data)?;
    let x = raw.standardize()?;
    let cfg = audit_config(&a.thresholds, (a.vif_rows > 0).then_some(a.vif_rows), a.data.seed);
    let report = audit::audit(&x, &cfg)?;
    let prov = provenance("audit", &a.data)?
        .threshold("vif", cfg.vif_thresh)
        .threshold("rho", cfg.rho_thresh)
        .setting("vif_sample_rows", cfg.vif_sample_rows)?;
    Ok((raw, y, report, cfg, prov))
}

fn cmd_audit(a: &AuditArgs) -> CliResult {
    let (_, _, report, _, prov) = run_audit(a)?;
    let out = &a.data.out;
    report::write_report(out.join("audit.json"), &prov, &report)?;
    let rows: Vec<Vec<String>> = report
        .vif
        .entries
        .iter()
        .map(|e| {
            vec![
                e.name.clone(),
                e.vif.map(fmt_vif).unwrap_or_default(),
                e.r_squared.map(|v| v.to_string()).unwrap_or_default(),
                format!("{:?}", e.status).to_lowercase(),
            ]
        })
        .collect();
    report::write_table(out.join("vif_table.csv"), &["feature", "vif", "r2", "status"], &rows)?;
    report::write_report(out.join("clusters.json"), &prov, &report.cluster_names())?;
    let flagged = &report.flagged;
    println!(
        "{} features; high VIF: [{}]; high correlation: [{}]",
        report.column_names().len(),
        flagged.high_vif.join(", "),
        flagged.high_corr.join(", ")
    );
    if report.has_severe() {
        return Err(Failure::Gate(format!("flagged: {}", flagged.high_vif.join(", "))));
    }
    Ok(())
}

fn fmt_vif(v: f64) -> String {
    if v.is_infinite() { "inf".into() } else { v.to_string() }
}

#[derive(Serialize)]
struct PruneSummary<'a> {
    removed: &'a [String],
    kept: &'a [String],
}

fn cmd_prune(a: &AuditArgs) -> CliResult {
    let (raw, y, report, cfg, prov) = run_audit(a)?;
    let z = raw.standardize()?;
    let out = audit::prune_by_audit(&z, &report, &cfg)?;
    let prov = Provenance { command: "prune".into(), ..prov };
    report::write_report(a.data.out.join("prune.json"), &prov, &PruneSummary { removed: &out.removed, kept: &out.kept })?;
    raw.select_named(&out.kept)?.write_csv(a.data.out.join("pruned.csv"), Some(&y))?;
    println!("removed [{}]; kept {}", out.removed.join(", "), out.kept.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    metrics: &'a models::MetricSet,
    train_rows: usize,
    test_rows: usize,
}

fn cmd_train(a: &TrainArgs) -> CliResult {
    let p = prepare(&a.data, a.model.test_fraction)?;
    let spec = a.model.spec(a.data.seed);
    let m = spec.fit(&p.train_x, &p.train_y.to_f64())?;
    let metrics = models::evaluate(&m, &p.test_x, &p.test_y)?;
    let prov = provenance("train", &a.data)?.setting("model", &spec)?;
    write_model(&a.data.out, &m)?;
    report::write_report(
        a.data.out.join("metrics.json"),
        &prov,
        &TrainSummary {
            metrics: &metrics,
            train_rows: p.train_x.nrows(),
            test_rows: p.test_x.nrows(),
        },
    )?;
    println!("accuracy {:.4}, f1 {:.4}", metrics.accuracy, metrics.f1);
    Ok(())
}

fn write_model(out: &Path, m: &ModelParams) -> Result<(), Error> {
    let path = out.join("model.json");
    std::fs::write(&path, m.to_json()? + "\n").map_err(|e| Error::Io { path, source: e })
}

fn attribute(
    m: &ModelParams,
    method: &AttributionMethod,
    eval: &FeatureMatrix,
    train_x: &FeatureMatrix,
) -> Result<AttributionMatrix, Error> {
    method.attribute(m, eval, &train_x.current_means(), train_x)
}

fn cmd_explain(a: &ExplainArgs) -> CliResult {
    let p = prepare(&a.data, a.model.test_fraction)?;
    let spec = a.model.spec(a.data.seed);
    let m = match &a.model_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            ModelParams::from_json(&text)?
        }
        None => spec.fit(&p.train_x, &p.train_y.to_f64())?,
    };
    let method = a.method.method(&spec, a.data.seed);
    let eval = head(&p.test_x, a.eval_rows);
    let s = attribute(&m, &method, &eval, &p.train_x)?;
    s.write_csv(a.data.out.join("attributions.csv"))?;
    let prov = provenance("explain", &a.data)?.setting("model", &spec)?.setting("method", &method)?;
    let mean_abs: Vec<(String, f64)> = s.feature_names.iter().cloned().zip(s.mean_abs()).collect();
    report::write_report(a.data.out.join("explain.json"), &prov, &mean_abs)?;
    Ok(())
}

fn cmd_fragility(a: &FragilityArgs) -> CliResult {
    let p = prepare(&a.data, a.model.test_fraction)?;
    let spec = a.model.spec(a.data.seed);
    let method = a.method.method(&spec, a.data.seed);
    let plan = a.plan.plan(p.train_x.nrows(), a.data.seed)?;
    let eval = head(&p.test_x, a.plan.eval_rows);
    let samples = fragility::bootstrap_attributions(&p.train_x, &p.train_y.to_f64(), &eval, &spec, &plan, &method)?;
    let frag = fragility::fragility_scores(&samples, DEFAULT_EPSILON)?.with_plan(plan);
    let stab = fragility::stability_report(&samples, &DEFAULT_TOP_K)?;
    let prov = provenance("fragility", &a.data)?
        .seed("bootstrap", plan.seed)
        .setting("model", &spec)?
        .setting("method", &method)?
        .setting("plan", plan)?;
    report::write_report(a.data.out.join("fragility.json"), &prov, &frag)?;
    report::write_report(a.data.out.join("stability.json"), &prov, &stab)?;
    let rows: Vec<Vec<String>> = frag
        .features
        .iter()
        .map(|f| vec![f.name.clone(), f.var_phi.to_string(), f.mean_abs_phi.to_string(), f.fragility.to_string()])
        .collect();
    report::write_table(a.data.out.join("fragility.csv"), &["feature", "var_phi", "mean_abs_phi", "fragility"], &rows)?;
    println!(
        "mean fragility {:.6}; tau top20 {:.4}; tau top50 {:.4}",
        frag.mean_fragility(),
        stab.tau_top20,
        stab.tau_top50
    );
    Ok(())
}

fn cmd_caa(a: &CaaArgs) -> CliResult {
    let p = prepare(&a.data, a.model.test_fraction)?;
    let spec = a.model.spec(a.data.seed);
    let method = a.method.method(&spec, a.data.seed);
    let eval = head(&p.test_x, a.eval_rows);
    let s = match &a.attributions {
        Some(path) => AttributionMatrix::read_csv(path, MethodTag::Taylor)?,
        None => {
            let m = spec.fit(&p.train_x, &p.train_y.to_f64())?;
            attribute(&m, &method, &eval, &p.train_x)?
        }
    };
    let s = if s.feature_names == eval.column_names() && s.nrows() == eval.nrows() {
        s
    } else {
        return Err(Failure::Core(Error::invalid(
            "attributions must cover the held-out rows and features in order",
        )));
    };
    let table;
    let rule = match a.shared_vif {
        Some(vif_thresh) => {
            table = audit::vif(&eval)?;
            ClusterRule::CorrelationOrSharedVif { vif: &table, vif_thresh }
        }
        None => ClusterRule::Correlation,
    };
    let mapping = caa::build_clusters(&eval, a.rho_thresh, rule, a.aggregation.into())?;
    let filtered = caa::apply_mapping(&s, &mapping)?;
    filtered.write_csv(a.data.out.join("filtered_attributions.csv"))?;
    let path = a.data.out.join("cluster_mapping.json");
    std::fs::write(&path, mapping.to_json()? + "\n").map_err(|e| Error::Io { path, source: e })?;
    let ranking: Vec<&String> = caa::cluster_importance_ranking(&filtered)?
        .into_iter()
        .map(|c| &filtered.cluster_names[c])
        .collect();
    let prov = provenance("caa-filter", &a.data)?
        .threshold("rho", a.rho_thresh)
        .setting("aggregation", Aggregation::from(a.aggregation))?
        .setting("shared_vif", a.shared_vif)?;
    report::write_report(a.data.out.join("cluster_ranking.json"), &prov, &ranking)?;
    println!("{} clusters from {} features", mapping.len(), eval.ncols());
    Ok(())
}

#[derive(Serialize)]
struct SharpSummary<'a> {
    metrics: &'a models::MetricSet,
    penalised_steps: usize,
    final_penalty: Option<f64>,
    epoch_losses: &'a [f64],
}

fn cmd_sharp(a: &SharpArgs) -> CliResult {
    let p = prepare(&a.data, a.test_fraction)?;
    let cfg = a.config(a.data.seed);
    let model = a.sharp_model();
    let (m, trace) = sharp::train_sharp(&p.train_x, &p.train_y, &model, &cfg)?;
    let metrics = models::evaluate(&m, &p.test_x, &p.test_y)?;
    write_model(&a.data.out, &m)?;
    let prov = provenance("sharp", &a.data)?.setting("model", &model)?.setting("sharp", cfg)?;
    report::write_report(
        a.data.out.join("sharp.json"),
        &prov,
        &SharpSummary {
            metrics: &metrics,
            penalised_steps: trace.penalties.len(),
            final_penalty: trace.penalties.last().map(|s| s.penalty),
            epoch_losses: &trace.train.epoch_losses,
        },
    )?;
    let rows: Vec<Vec<String>> = trace
        .penalties
        .iter()
        .map(|s| {
            vec![
                s.epoch.to_string(),
                s.batch.to_string(),
                s.base_loss.to_string(),
                s.penalty.to_string(),
                s.total_loss.to_string(),
            ]
        })
        .collect();
    report::write_table(a.data.out.join("sharp_trace.csv"), &["epoch", "batch", "base_loss", "penalty", "total_loss"], &rows)?;
    println!("accuracy {:.4}; {} penalised steps", metrics.accuracy, trace.penalties.len());
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> CliResult {
    let d = &a.sharp.data;
    let p = prepare(d, a.sharp.test_fraction)?;
    let cfg = a.sharp.config(d.seed);
    let model = a.sharp.sharp_model();
    let grid = a.lambdas.clone().unwrap_or_else(|| DEFAULT_LAMBDA_GRID.to_vec());
    let plan = a.plan.plan(p.train_x.nrows(), d.seed)?;
    let eval = head(&p.test_x, a.plan.eval_rows);
    let data = AblationData {
        train_x: &p.train_x,
        train_y: &p.train_y,
        test_x: &p.test_x,
        test_y: &p.test_y,
        eval_x: &eval,
    };
    let mut result = sharp::lambda_ablation(data, &model, &grid, &cfg, &plan)?;
    let meta = Metadata {
        command: "ablate".into(),
        wall_time_ms: 0.0,
        stages_ms: result.rows.iter().map(|r| (format!("lambda={}", r.lambda), r.wall_time_ms)).collect(),
    };
    report::write_json(d.out.join("ablation_timing.json"), &meta)?;
    // Timings live in the metadata file only.
    for r in &mut result.rows {
        r.wall_time_ms = 0.0;
    }
    let prov = provenance("ablate", d)?
        .seed("bootstrap", plan.seed)
        .setting("model", &model)?
        .setting("grid", &grid)?;
    report::write_report(d.out.join("ablation.json"), &prov, &result)?;
    result.write_csv(d.out.join("ablation.csv"))?;
    for r in &result.rows {
        println!(
            "lambda {:>6}: accuracy {:.4} fragility {:.6} tau50 {:.4}",
            r.lambda, r.metrics.accuracy, r.mean_fragility, r.tau_top50
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct TheoremSummary<'a> {
    identity: &'a theorem::IdentityCheck,
    bound: &'a theorem::TheoremCheckReport,
    non_identifiability: &'a theorem::NonIdentifiabilityReport,
    passed: bool,
}

fn cmd_theorem(a: &TheoremArgs) -> CliResult {
    let grid = a.rho_grid.clone().unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec());
    let template = SyntheticSpec::independent(a.n, a.p, a.sigma, a.seed);
    let (x, _) = theorem::generate_synthetic(&template.clone().with_pair(0, 1, 0.9))?;
    let identity = theorem::ols_variance_identity_check(&x.standardize()?, a.sigma)?;
    let plan = BootstrapPlan::new(a.resamples, a.n, a.seed)?;
    let bound = theorem::variance_bound_experiment(&grid, &template, &plan)?;
    let non_id = theorem::non_identifiability_check(&NonIdentifiabilitySpec {
        seed: a.seed,
        ..NonIdentifiabilitySpec::default()
    })?;
    let passed = identity.passed && bound.passed && non_id.passed;
    let prov = Provenance::new("theorem-check")
        .seed("seed", a.seed)
        .threshold("bound_slack", theorem::BOUND_SLACK)
        .setting("n", a.n)?
        .setting("p", a.p)?
        .setting("sigma", a.sigma)?
        .setting("grid", &grid)?;
    report::write_report(
        a.out.join("theorem.json"),
        &prov,
        &TheoremSummary {
            identity: &identity,
            bound: &bound,
            non_identifiability: &non_id,
            passed,
        },
    )?;
    bound.write_csv(a.out.join("theorem.csv"))?;
    println!(
        "identity max rel error {:.2e}; spearman {:.3}; c_hat {:.3e}; monotone {}; violations {}; non-identifiability {}",
        identity.max_relative_error, bound.spearman_vif_fragility, bound.c_hat, bound.monotone, bound.bound_violations, non_id.passed
    );
    if passed {
        Ok(())
    } else {
        Err(Failure::Gate("theorem check failed".into()))
    }
}

fn cmd_pipeline(a: &PipelineArgs) -> CliResult {
    let (x, y) = load(&a.data)?;
    let spec = a.model.spec(a.data.seed);
    let n_train = x.nrows() - (x.nrows() as f64 * a.model.test_fraction).round() as usize;
    let plan = a.plan.plan(n_train.max(1), a.data.seed)?;
    let cfg = PipelineConfig {
        audit: audit_config(&a.thresholds, Some(audit::DEFAULT_VIF_SAMPLE_ROWS), a.data.seed),
        method: Some(a.method.method(&spec, a.data.seed)),
        test_fraction: a.model.test_fraction,
        split_seed: a.data.seed,
        eval_rows: a.plan.eval_rows,
        ..PipelineConfig::new(spec.clone(), plan)
    };
    let r = run_pipeline(&x, &y, &cfg)?;
    let prov = provenance("pipeline", &a.data)?
        .seed("bootstrap", plan.seed)
        .threshold("vif", a.thresholds.vif_thresh)
        .threshold("rho", a.thresholds.rho_thresh)
        .setting("model", &spec)?
        .setting("method", cfg.method())?
        .setting("plan", plan)?;
    report::write_report(a.data.out.join("pipeline.json"), &prov, &r)?;
    let rows: Vec<Vec<String>> = r
        .drops
        .iter()
        .map(|d| vec![d.metric.clone(), d.control.to_string(), d.hypothesis.to_string(), d.drop_percent.to_string()])
        .collect();
    report::write_table(a.data.out.join("drops.csv"), &["metric", "control", "hypothesis", "drop_percent"], &rows)?;
    println!(
        "removed [{}]; tau top50 {:.4} -> {:.4}; accuracy {:.4} -> {:.4}",
        r.removed.join(", "),
        r.control.stability.tau_top50,
        r.hypothesis.stability.tau_top50,
        r.control.metrics.accuracy,
        r.hypothesis.metrics.accuracy
    );
    Ok(())
}
