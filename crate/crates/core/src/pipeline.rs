//! Control vs pruned comparison.
//!
//! The data are split, standardised on the training rows, audited and pruned.
//! The same model is then trained on the full ("control") and pruned
//! ("hypothesis") feature sets and each is scored on held-out metrics,
//! bootstrap fragility and top-K rank stability.

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionMethod;
use crate::audit::{audit, prune_by_audit, AuditConfig, AuditReport};
use crate::data::{train_test_split, BootstrapPlan, FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::fragility::{bootstrap_attributions, fragility_scores, stability_report, FragilityReport, StabilityReport, DEFAULT_EPSILON, DEFAULT_TOP_K};
use crate::models::{evaluate, MetricSet, ModelSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub audit: AuditConfig,
    pub model: ModelSpec,
    /// `None` picks linear SHAP for linear kinds and Taylor for the MLP.
    pub method: Option<AttributionMethod>,
    pub plan: BootstrapPlan,
    pub test_fraction: f64,
    pub split_seed: u64,
    /// Held-out rows attributed in every resample.
    pub eval_rows: usize,
    pub epsilon: f64,
}

impl PipelineConfig {
    pub fn new(model: ModelSpec, plan: BootstrapPlan) -> Self {
        PipelineConfig {
            audit: AuditConfig::default(),
            model,
            method: None,
            plan,
            test_fraction: 0.2,
            split_seed: 0,
            eval_rows: 200,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn method(&self) -> AttributionMethod {
        self.method.unwrap_or_else(|| AttributionMethod::default_for(self.model.kind()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub features: Vec<String>,
    pub metrics: MetricSet,
    pub fragility: FragilityReport,
    pub stability: StabilityReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DropRow {
    pub metric: String,
    pub control: f64,
    pub hypothesis: f64,
    /// `(control − hypothesis) / control · 100`.
    pub drop_percent: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub audit: AuditReport,
    pub removed: Vec<String>,
    pub control: ScenarioReport,
    pub hypothesis: ScenarioReport,
    pub drops: Vec<DropRow>,
    pub train_rows: usize,
    pub test_rows: usize,
    pub eval_rows: usize,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// Train, evaluate and bootstrap one feature set.
pub fn run_scenario(
    train_x: &FeatureMatrix,
    train_y: &LabelVector,
    test_x: &FeatureMatrix,
    test_y: &LabelVector,
    eval_x: &FeatureMatrix,
    cfg: &PipelineConfig,
) -> Result<ScenarioReport> {
    let y = train_y.to_f64();
    let model = cfg.model.fit(train_x, &y)?;
    let metrics = evaluate(&model, test_x, test_y)?;
    let samples = bootstrap_attributions(train_x, &y, eval_x, &cfg.model, &cfg.plan, &cfg.method())?;
    let fragility = fragility_scores(&samples, cfg.epsilon)?.with_plan(cfg.plan);
    let stability = stability_report(&samples, &DEFAULT_TOP_K)?;
    Ok(ScenarioReport {
        features: train_x.column_names().to_vec(),
        metrics,
        fragility,
        stability,
    })
}

pub fn run_pipeline(x: &FeatureMatrix, y: &LabelVector, cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.audit.validate()?;
    cfg.plan.validate()?;
    if cfg.eval_rows == 0 {
        return Err(Error::invalid("eval_rows must be positive"));
    }
    let split = stage("split", train_test_split(x, y, cfg.test_fraction, cfg.split_seed))?;
    let train_x = stage("standardize", split.train_x.standardize())?;
    let test_x = stage("standardize", split.test_x.standardize_like(&train_x))?;
    let report = stage("audit", audit(&train_x, &cfg.audit))?;
    let pruned = stage("prune", prune_by_audit(&train_x, &report, &cfg.audit))?;
    let eval_idx: Vec<usize> = (0..cfg.eval_rows.min(test_x.nrows())).collect();
    let eval_full = test_x.select_rows(&eval_idx);

    let control = stage(
        "control",
        run_scenario(&train_x, &split.train_y, &test_x, &split.test_y, &eval_full, cfg),
    )?;
    let test_pruned = stage("hypothesis", test_x.select_named(&pruned.kept))?;
    let eval_pruned = test_pruned.select_rows(&eval_idx);
    let hypothesis = stage(
        "hypothesis",
        run_scenario(&pruned.matrix, &split.train_y, &test_pruned, &split.test_y, &eval_pruned, cfg),
    )?;
    let drops = drop_table(&control, &hypothesis);
    Ok(PipelineReport {
        audit: report,
        removed: pruned.removed,
        control,
        hypothesis,
        drops,
        train_rows: train_x.nrows(),
        test_rows: test_x.nrows(),
        eval_rows: eval_idx.len(),
    })
}

fn drop_table(c: &ScenarioReport, h: &ScenarioReport) -> Vec<DropRow> {
    let pairs = [
        ("accuracy", Some(c.metrics.accuracy), Some(h.metrics.accuracy)),
        ("precision", Some(c.metrics.precision), Some(h.metrics.precision)),
        ("recall", Some(c.metrics.recall), Some(h.metrics.recall)),
        ("f1", Some(c.metrics.f1), Some(h.metrics.f1)),
        ("roc_auc", c.metrics.roc_auc, h.metrics.roc_auc),
    ];
    pairs
        .into_iter()
        .filter_map(|(name, a, b)| {
            let (a, b) = (a?, b?);
            Some(DropRow {
                metric: name.into(),
                control: a,
                hypothesis: b,
                drop_percent: if a == 0.0 { 0.0 } else { (a - b) / a * 100.0 },
            })
        })
        .collect()
}
