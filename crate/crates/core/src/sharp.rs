//! Fragility-regularised training.
//!
//! On every epoch divisible by the fragility interval, each mini-batch `B`
//! is resampled with replacement, temporary parameters θ′ are fitted on the
//! resample with a few gradient steps from θ, and the batch fragility of
//! first-order Taylor attributions under θ and θ′ is added to the loss with
//! weight λ. θ′ is held constant when differentiating the penalty.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMethod, OutputScale};
use crate::data::{BootstrapPlan, FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::fragility::{self, DEFAULT_EPSILON};
use crate::models::{self, Classifier, GradientHook, MetricSet, ModelKind, ModelParams, TrainConfig, TrainTrace};
use crate::network::{Dual, Net};
use crate::seed;

pub const DEFAULT_LAMBDA_GRID: [f64; 5] = [0.0, 0.01, 0.1, 1.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharpConfig {
    pub lambda: f64,
    /// Penalty is active on epochs `e` (1-based) with `e % fragility_interval == 0`.
    pub fragility_interval: usize,
    /// Attribution samples per penalty evaluation (θ plus `penalty_resamples - 1` θ′).
    pub penalty_resamples: usize,
    /// Gradient steps used to fit each θ′ from θ.
    pub inner_steps: usize,
    pub base: TrainConfig,
    pub epsilon: f64,
    /// Evaluate the penalty on the first batch of a gated epoch only.
    #[serde(default)]
    pub once_per_epoch: bool,
}

impl Default for SharpConfig {
    fn default() -> Self {
        SharpConfig {
            lambda: 0.5,
            fragility_interval: 1,
            penalty_resamples: 2,
            inner_steps: 1,
            base: TrainConfig::default(),
            epsilon: DEFAULT_EPSILON,
            once_per_epoch: false,
        }
    }
}

impl SharpConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be a nonnegative finite number"));
        }
        if self.fragility_interval == 0 || self.inner_steps == 0 {
            return Err(Error::invalid("fragility interval and inner steps must be positive"));
        }
        if self.penalty_resamples < 2 {
            return Err(Error::invalid("penalty needs at least 2 attribution samples"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::invalid("epsilon must be nonnegative"));
        }
        Ok(())
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        SharpConfig { lambda, ..self }
    }
}

/// Differentiable models SHARP can train.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum SharpModel {
    Logistic,
    Mlp { hidden: Vec<usize> },
}

impl SharpModel {
    fn classifier(&self, p: usize) -> Classifier {
        match self {
            SharpModel::Logistic => Classifier::logistic(p),
            SharpModel::Mlp { hidden } => Classifier::mlp(p, hidden),
        }
    }

    /// Post-training attribution: linear SHAP for logistic, logit-scale Taylor for MLP.
    pub fn evaluation_method(&self) -> AttributionMethod {
        match self {
            SharpModel::Logistic => AttributionMethod::Linear,
            SharpModel::Mlp { .. } => AttributionMethod::Taylor {
                scale: OutputScale::Raw,
            },
        }
    }
}

/// One penalised mini-batch step.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PenaltyStep {
    pub epoch: usize,
    pub batch: usize,
    pub base_loss: f64,
    pub penalty: f64,
    pub total_loss: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SharpTrace {
    pub train: TrainTrace,
    pub penalties: Vec<PenaltyStep>,
}

struct SharpHook<'a> {
    model: &'a Classifier,
    x: &'a FeatureMatrix,
    y: &'a [f64],
    cfg: &'a SharpConfig,
    baseline: Vec<f64>,
    rng: rand_chacha::ChaCha8Rng,
    log: Vec<PenaltyStep>,
}

impl SharpHook<'_> {
    /// ∂z/∂x for every row of the batch under `theta`.
    fn input_gradients(&self, theta: &[f64], rows: &[usize]) -> Vec<Vec<f64>> {
        let p = self.x.ncols();
        match self.model.kind {
            ModelKind::Logistic => vec![theta[..p].to_vec(); rows.len()],
            _ => {
                let net = Net::new(&self.model.shapes, theta);
                rows.iter().map(|&i| net.pass(&self.x.row(i)).grad_input).collect()
            }
        }
    }

    fn batch_loss(&self, theta: &[f64], rows: &[usize]) -> f64 {
        let logits: Vec<f64> = rows.iter().map(|&i| self.model.logit(theta, &self.x.row(i))).collect();
        let ys: Vec<f64> = rows.iter().map(|&i| self.y[i]).collect();
        models::bce_loss(&logits, &ys, self.cfg.base.l2, theta, self.model.mask())
    }
}

impl GradientHook for SharpHook<'_> {
    fn extra(&mut self, epoch: usize, batch: usize, rows: &[usize], theta: &[f64]) -> Result<Option<Vec<f64>>> {
        let cfg = self.cfg;
        if cfg.lambda == 0.0 || epoch % cfg.fragility_interval != 0 || (cfg.once_per_epoch && batch > 0) {
            return Ok(None);
        }
        let m = rows.len();
        let p = self.x.ncols();

        // θ′ per bootstrap batch.
        let mut thetas = vec![theta.to_vec()];
        for _ in 1..cfg.penalty_resamples {
            let resampled: Vec<usize> = (0..m).map(|_| rows[self.rng.random_range(0..m)]).collect();
            let mut t = theta.to_vec();
            for _ in 0..cfg.inner_steps {
                let g = self.model.loss_gradient(&t, self.x, self.y, &resampled, cfg.base.l2);
                for (tk, gk) in t.iter_mut().zip(&g) {
                    *tk -= cfg.base.learning_rate * gk;
                }
            }
            thetas.push(t);
        }

        // φ[s][row][feature]
        let phis: Vec<Vec<Vec<f64>>> = thetas
            .iter()
            .map(|t| {
                self.input_gradients(t, rows)
                    .into_iter()
                    .zip(rows)
                    .map(|(g, &i)| {
                        let xi = self.x.values().row(i);
                        (0..p).map(|j| g[j] * (xi[j] - self.baseline[j])).collect()
                    })
                    .collect()
            })
            .collect();
        if phis.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite attribution in epoch {epoch}, batch {batch}"
            )));
        }

        let s = phis.len() as f64;
        let mf = m as f64;
        let mut penalty = 0.0;
        // c[row][feature] = ∂penalty/∂φ₀ · (x − μ)
        let mut c = vec![vec![0.0; p]; m];
        for j in 0..p {
            let mut var = 0.0;
            let mut abs = 0.0;
            let mut centred0 = vec![0.0; m];
            for r in 0..m {
                let mean = phis.iter().map(|ph| ph[r][j]).sum::<f64>() / s;
                var += phis.iter().map(|ph| (ph[r][j] - mean).powi(2)).sum::<f64>() / (s - 1.0);
                abs += phis.iter().map(|ph| ph[r][j].abs()).sum::<f64>();
                centred0[r] = phis[0][r][j] - mean;
            }
            var /= mf;
            abs /= mf * s;
            let denom = abs + cfg.epsilon;
            if denom == 0.0 {
                continue;
            }
            penalty += var / denom / p as f64;
            let xj = self.x.values().column(j);
            for r in 0..m {
                let dvar = 2.0 * centred0[r] / ((s - 1.0) * mf);
                let dabs = phis[0][r][j].signum() / (mf * s);
                let dfrag = dvar / denom - var * dabs / (denom * denom);
                c[r][j] = dfrag / p as f64 * (xj[rows[r]] - self.baseline[j]);
            }
        }

        let mut grad = vec![0.0; theta.len()];
        match self.model.kind {
            ModelKind::Logistic => {
                for cr in &c {
                    for j in 0..p {
                        grad[j] += cr[j];
                    }
                }
            }
            _ => {
                let net = Net::new(&self.model.shapes, theta);
                for (r, &i) in rows.iter().enumerate() {
                    let xi = self.x.row(i);
                    let xd: Vec<Dual> = xi.iter().zip(&c[r]).map(|(&a, &b)| Dual::new(a, b)).collect();
                    let pass = net.pass(&xd);
                    for (g, d) in grad.iter_mut().zip(&pass.grad_params) {
                        *g += d.du;
                    }
                }
            }
        }
        grad.iter_mut().for_each(|g| *g *= cfg.lambda);

        let base_loss = self.batch_loss(theta, rows);
        self.log.push(PenaltyStep {
            epoch,
            batch,
            base_loss,
            penalty,
            total_loss: base_loss + cfg.lambda * penalty,
        });
        Ok(Some(grad))
    }
}

/// Train a logistic or MLP classifier with the fragility penalty. With
/// `lambda = 0` (or an interval longer than the run) the trajectory is that
/// of [`models::fit_logistic`] / [`models::fit_mlp`] under the same config.
pub fn train_sharp(x: &FeatureMatrix, y: &LabelVector, model: &SharpModel, cfg: &SharpConfig) -> Result<(ModelParams, SharpTrace)> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if !y.has_both_classes() {
        return Err(Error::invalid("training labels must contain both classes"));
    }
    let classifier = model.classifier(x.ncols());
    let yf = y.to_f64();
    let mut hook = SharpHook {
        model: &classifier,
        x,
        y: &yf,
        cfg,
        baseline: x.current_means(),
        rng: seed::rng(cfg.base.seed, 2),
        log: Vec::new(),
    };
    let (theta, train) = models::gradient_descent(&classifier, x, &yf, &cfg.base, &mut hook)?;
    let penalties = hook.log;
    Ok((classifier.into_params(theta, x, &cfg.base), SharpTrace { train, penalties }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub lambda: f64,
    pub metrics: MetricSet,
    pub mean_fragility: f64,
    pub tau_top50: f64,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub plan: BootstrapPlan,
    pub config: SharpConfig,
    pub eval_instances: usize,
}

impl AblationResult {
    /// `lambda,accuracy,f1,roc_auc,fragility,tau_top50`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["lambda", "accuracy", "f1", "roc_auc", "fragility", "tau_top50"])?;
        for r in &self.rows {
            w.write_record([
                r.lambda.to_string(),
                r.metrics.accuracy.to_string(),
                r.metrics.f1.to_string(),
                r.metrics.roc_auc.map(|v| v.to_string()).unwrap_or_default(),
                r.mean_fragility.to_string(),
                r.tau_top50.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn fragilities(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mean_fragility).collect()
    }
}

/// Data for [`lambda_ablation`].
#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub train_x: &'a FeatureMatrix,
    pub train_y: &'a LabelVector,
    pub test_x: &'a FeatureMatrix,
    pub test_y: &'a LabelVector,
    /// Fixed instances whose attributions are compared across resamples.
    pub eval_x: &'a FeatureMatrix,
}

/// Train with each λ on the grid; report held-out metrics, bootstrap mean
/// fragility and top-50 tau for each.
pub fn lambda_ablation(
    data: AblationData<'_>,
    model: &SharpModel,
    grid: &[f64],
    cfg: &SharpConfig,
    plan: &BootstrapPlan,
) -> Result<AblationResult> {
    if grid.is_empty() || !grid.contains(&0.0) {
        return Err(Error::invalid("lambda grid must be nonempty and contain 0"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("lambda grid must be strictly increasing"));
    }
    cfg.validate()?;
    plan.validate()?;
    let method = model.evaluation_method();
    let train_yf = data.train_y.to_f64();
    let rows = grid
        .par_iter()
        .map(|&lambda| {
            let run = || -> Result<AblationRow> {
                let start = Instant::now();
                let c = cfg.with_lambda(lambda);
                let (m, _) = train_sharp(data.train_x, data.train_y, model, &c)?;
                let metrics = models::evaluate(&m, data.test_x, data.test_y)?;
                let samples = fragility::bootstrap_attributions_with(
                    data.train_x,
                    &train_yf,
                    data.eval_x,
                    plan,
                    &method,
                    |x, y| train_sharp(x, &LabelVector::from_f64(y)?, model, &c).map(|(m, _)| m),
                )?;
                let frag = fragility::fragility_scores(&samples, c.epsilon)?;
                let stab = fragility::stability_report(&samples, &[50])?;
                Ok(AblationRow {
                    lambda,
                    metrics,
                    mean_fragility: frag.mean_fragility(),
                    tau_top50: stab.tau_top50,
                    wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
                })
            };
            run().map_err(|e| Error::Ablation {
                lambda,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationResult {
        rows,
        plan: *plan,
        config: *cfg,
        eval_instances: data.eval_x.nrows(),
    })
}
