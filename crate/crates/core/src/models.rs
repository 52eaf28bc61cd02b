//! Trainable predictors: closed-form OLS, logistic regression and a tanh
//! MLP, all sharing one seeded mini-batch gradient-descent loop.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::linalg::{self, sigmoid};
use crate::network::{self, Net};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LinearOls,
    Logistic,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 64,
            seed: 0,
            l2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::invalid("l2 penalty must be nonnegative"));
        }
        Ok(())
    }
}

/// Trained parameters.
///
/// Layouts: `linear_ols` stores β (length p, no intercept). `logistic`
/// stores `[w_1..w_p, b]`. `mlp` stores each layer's row-major weight block
/// followed by its bias, for widths `layer_shapes = [p, hidden.., 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub weights: Vec<f64>,
    #[serde(default)]
    pub layer_shapes: Vec<usize>,
    pub feature_names: Vec<String>,
    pub training_config: Option<TrainConfig>,
    /// The OLS design was rank deficient (minimum-norm solution returned).
    #[serde(default)]
    pub rank_deficient: bool,
}

impl ModelParams {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Widths of the network view of the model (`[p, 1]` for logistic).
    pub fn shapes(&self) -> Vec<usize> {
        match self.kind {
            ModelKind::Mlp => self.layer_shapes.clone(),
            _ => vec![self.n_features(), 1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.n_features();
        let expected = match self.kind {
            ModelKind::LinearOls => p,
            ModelKind::Logistic => p + 1,
            ModelKind::Mlp => {
                let s = &self.layer_shapes;
                if s.len() < 2 || s[0] != p || *s.last().unwrap() != 1 {
                    return Err(Error::invalid("mlp layer shapes must be [p, hidden.., 1]"));
                }
                network::num_params(s)
            }
        };
        if self.weights.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.weights.len(),
            });
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("model weights are not finite".into()));
        }
        Ok(())
    }

    /// Linear coefficients β (no bias) for linear kinds.
    pub fn linear_coefficients(&self) -> Option<&[f64]> {
        match self.kind {
            ModelKind::LinearOls | ModelKind::Logistic => Some(&self.weights[..self.n_features()]),
            ModelKind::Mlp => None,
        }
    }

    /// Raw score: the regression output for OLS, the logit otherwise.
    pub fn raw(&self, x: &[f64]) -> f64 {
        match self.kind {
            ModelKind::LinearOls => dot(&self.weights, x),
            ModelKind::Logistic => {
                let p = self.n_features();
                dot(&self.weights[..p], x) + self.weights[p]
            }
            ModelKind::Mlp => Net::new(&self.layer_shapes, &self.weights).logit(x),
        }
    }

    /// Probability for classifiers; the raw score for OLS.
    pub fn proba(&self, x: &[f64]) -> f64 {
        match self.kind {
            ModelKind::LinearOls => self.raw(x),
            _ => sigmoid(self.raw(x)),
        }
    }

    /// ∂raw/∂x at `x`.
    pub fn raw_input_gradient(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            ModelKind::LinearOls | ModelKind::Logistic => self.linear_coefficients().unwrap().to_vec(),
            ModelKind::Mlp => Net::new(&self.layer_shapes, &self.weights).pass(x).grad_input,
        }
    }

    pub fn check_input(&self, x: &FeatureMatrix) -> Result<()> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelParams = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// What to train, independent of the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelSpec {
    Ols,
    Logistic { config: TrainConfig },
    Mlp { config: TrainConfig, hidden: Vec<usize> },
}

impl ModelSpec {
    /// Train on `x`; `y` holds reals for OLS and 0/1 labels otherwise.
    pub fn fit(&self, x: &FeatureMatrix, y: &[f64]) -> Result<ModelParams> {
        match self {
            ModelSpec::Ols => fit_ols(x, y),
            ModelSpec::Logistic { config } => fit_logistic(x, &LabelVector::from_f64(y)?, config),
            ModelSpec::Mlp { config, hidden } => fit_mlp(x, &LabelVector::from_f64(y)?, config, hidden),
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelSpec::Ols => ModelKind::LinearOls,
            ModelSpec::Logistic { .. } => ModelKind::Logistic,
            ModelSpec::Mlp { .. } => ModelKind::Mlp,
        }
    }
}

/// Minimum-norm least squares without intercept.
pub fn fit_ols(x: &FeatureMatrix, y: &[f64]) -> Result<ModelParams> {
    if x.nrows() == 0 {
        return Err(Error::Empty("OLS needs at least one row".into()));
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    let fit = linalg::lstsq(x.values(), &DVector::from_column_slice(y));
    Ok(ModelParams {
        kind: ModelKind::LinearOls,
        weights: fit.solution.iter().copied().collect(),
        layer_shapes: Vec::new(),
        feature_names: x.column_names().to_vec(),
        training_config: None,
        rank_deficient: fit.rank_deficient(x.ncols()),
    })
}

/// Record of a gradient-descent run.
#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainTrace {
    /// Full-data base loss after each epoch.
    pub epoch_losses: Vec<f64>,
    /// Parameters after each epoch.
    pub trajectory: Vec<Vec<f64>>,
}

/// Numerically stable `log(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean binary cross-entropy of logits plus `l2/2 · ||weights||²`.
pub(crate) fn bce_loss(logits: &[f64], y: &[f64], l2: f64, theta: &[f64], mask: &[bool]) -> f64 {
    let data = logits.iter().zip(y).map(|(&z, &t)| softplus(z) - t * z).sum::<f64>() / logits.len() as f64;
    let reg: f64 = theta.iter().zip(mask).filter(|(_, &m)| m).map(|(w, _)| w * w).sum();
    data + 0.5 * l2 * reg
}

/// Differentiable binary classifier used by the gradient loop.
#[derive(Debug, Clone)]
pub(crate) struct Classifier {
    pub shapes: Vec<usize>,
    pub kind: ModelKind,
    mask: Vec<bool>,
}

impl Classifier {
    pub fn logistic(p: usize) -> Self {
        let shapes = vec![p, 1];
        Classifier {
            mask: network::weight_mask(&shapes),
            shapes,
            kind: ModelKind::Logistic,
        }
    }

    pub fn mlp(p: usize, hidden: &[usize]) -> Self {
        let mut shapes = vec![p];
        shapes.extend_from_slice(hidden);
        shapes.push(1);
        Classifier {
            mask: network::weight_mask(&shapes),
            shapes,
            kind: ModelKind::Mlp,
        }
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Uniform(±1/√fan_in) weights, zero biases.
    pub fn init(&self, seed_value: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed_value, 0);
        let mut theta = Vec::with_capacity(network::num_params(&self.shapes));
        for w in self.shapes.windows(2) {
            let bound = 1.0 / (w[0].max(1) as f64).sqrt();
            for _ in 0..w[0] * w[1] {
                theta.push(rng.random_range(-bound..bound));
            }
            theta.extend(std::iter::repeat_n(0.0, w[1]));
        }
        theta
    }

    pub fn logit(&self, theta: &[f64], x: &[f64]) -> f64 {
        match self.kind {
            ModelKind::Logistic => {
                let p = self.shapes[0];
                dot(&theta[..p], x) + theta[p]
            }
            _ => Net::new(&self.shapes, theta).logit(x),
        }
    }

    /// Gradient of the mean BCE (plus L2) over `rows`.
    pub fn loss_gradient(&self, theta: &[f64], x: &FeatureMatrix, y: &[f64], rows: &[usize], l2: f64) -> Vec<f64> {
        let m = rows.len() as f64;
        let mut g = vec![0.0; theta.len()];
        match self.kind {
            ModelKind::Logistic => {
                let p = self.shapes[0];
                for &i in rows {
                    let xi = x.values().row(i);
                    let z = theta[p] + (0..p).map(|j| theta[j] * xi[j]).sum::<f64>();
                    let r = (sigmoid(z) - y[i]) / m;
                    for j in 0..p {
                        g[j] += r * xi[j];
                    }
                    g[p] += r;
                }
            }
            _ => {
                let net = Net::new(&self.shapes, theta);
                for &i in rows {
                    let xi = x.row(i);
                    let pass = net.pass(&xi);
                    let r = (sigmoid(pass.z) - y[i]) / m;
                    for (gk, dk) in g.iter_mut().zip(&pass.grad_params) {
                        *gk += r * dk;
                    }
                }
            }
        }
        if l2 > 0.0 {
            for ((gk, &w), &is_w) in g.iter_mut().zip(theta).zip(&self.mask) {
                if is_w {
                    *gk += l2 * w;
                }
            }
        }
        g
    }

    pub fn full_loss(&self, theta: &[f64], x: &FeatureMatrix, y: &[f64], l2: f64) -> f64 {
        let logits: Vec<f64> = (0..x.nrows()).map(|i| self.logit(theta, &x.row(i))).collect();
        bce_loss(&logits, y, l2, theta, &self.mask)
    }

    pub fn into_params(&self, theta: Vec<f64>, x: &FeatureMatrix, cfg: &TrainConfig) -> ModelParams {
        ModelParams {
            kind: self.kind,
            weights: theta,
            layer_shapes: if self.kind == ModelKind::Mlp {
                self.shapes.clone()
            } else {
                Vec::new()
            },
            feature_names: x.column_names().to_vec(),
            training_config: Some(*cfg),
            rank_deficient: false,
        }
    }
}

/// Extra gradient contributed on top of the base loss for one batch.
pub(crate) trait GradientHook {
    /// `epoch` is 1-based. Returns `None` when the hook is inactive.
    fn extra(&mut self, epoch: usize, batch: usize, rows: &[usize], theta: &[f64]) -> Result<Option<Vec<f64>>>;
}

pub(crate) struct NoHook;

impl GradientHook for NoHook {
    fn extra(&mut self, _: usize, _: usize, _: &[usize], _: &[f64]) -> Result<Option<Vec<f64>>> {
        Ok(None)
    }
}

/// Seeded mini-batch gradient descent. Epoch `e` visits a fresh shuffle
/// drawn from a stream independent of initialisation.
pub(crate) fn gradient_descent(
    model: &Classifier,
    x: &FeatureMatrix,
    y: &[f64],
    cfg: &TrainConfig,
    hook: &mut dyn GradientHook,
) -> Result<(Vec<f64>, TrainTrace)> {
    cfg.validate()?;
    let n = x.nrows();
    let mut theta = model.init(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed::rng(cfg.seed, 1);
    let mut trace = TrainTrace::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let mut g = model.loss_gradient(&theta, x, y, rows, cfg.l2);
            if let Some(extra) = hook.extra(epoch, b, rows, &theta)? {
                for (gk, ek) in g.iter_mut().zip(extra) {
                    *gk += ek;
                }
            }
            for (t, gk) in theta.iter_mut().zip(&g) {
                *t -= cfg.learning_rate * gk;
            }
        }
        let loss = model.full_loss(&theta, x, y, cfg.l2);
        if !loss.is_finite() || theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        trace.epoch_losses.push(loss);
        trace.trajectory.push(theta.clone());
    }
    Ok((theta, trace))
}

fn check_labels(x: &FeatureMatrix, y: &LabelVector) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if !y.has_both_classes() {
        return Err(Error::invalid("training labels must contain both classes"));
    }
    Ok(())
}

pub fn fit_logistic(x: &FeatureMatrix, y: &LabelVector, cfg: &TrainConfig) -> Result<ModelParams> {
    fit_logistic_traced(x, y, cfg).map(|(m, _)| m)
}

pub fn fit_logistic_traced(x: &FeatureMatrix, y: &LabelVector, cfg: &TrainConfig) -> Result<(ModelParams, TrainTrace)> {
    check_labels(x, y)?;
    let model = Classifier::logistic(x.ncols());
    let (theta, trace) = gradient_descent(&model, x, &y.to_f64(), cfg, &mut NoHook)?;
    Ok((model.into_params(theta, x, cfg), trace))
}

/// tanh MLP with a sigmoid output. `hidden = []` is logistic regression with
/// the same initialisation and batch schedule.
pub fn fit_mlp(x: &FeatureMatrix, y: &LabelVector, cfg: &TrainConfig, hidden: &[usize]) -> Result<ModelParams> {
    fit_mlp_traced(x, y, cfg, hidden).map(|(m, _)| m)
}

pub fn fit_mlp_traced(
    x: &FeatureMatrix,
    y: &LabelVector,
    cfg: &TrainConfig,
    hidden: &[usize],
) -> Result<(ModelParams, TrainTrace)> {
    check_labels(x, y)?;
    if hidden.contains(&0) {
        return Err(Error::invalid("hidden layer widths must be positive"));
    }
    let model = Classifier::mlp(x.ncols(), hidden);
    let (theta, trace) = gradient_descent(&model, x, &y.to_f64(), cfg, &mut NoHook)?;
    Ok((model.into_params(theta, x, cfg), trace))
}

/// Probabilities for classifiers; raw regression scores for OLS.
pub fn predict_proba(m: &ModelParams, x: &FeatureMatrix) -> Result<Vec<f64>> {
    m.check_input(x)?;
    Ok((0..x.nrows()).map(|i| m.proba(&x.row(i))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when only one class is present.
    pub roc_auc: Option<f64>,
}

/// Threshold-0.5 classification metrics plus rank-statistic ROC AUC.
pub fn evaluate(m: &ModelParams, x: &FeatureMatrix, y: &LabelVector) -> Result<MetricSet> {
    let scores = predict_proba(m, x)?;
    if scores.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: y.len(),
        });
    }
    Ok(metrics_from_scores(&scores, y.values()))
}

pub fn metrics_from_scores(scores: &[f64], labels: &[u8]) -> MetricSet {
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= 0.5, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fneg += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    MetricSet {
        accuracy: ratio(tp + tn, labels.len()),
        precision,
        recall,
        f1,
        roc_auc: roc_auc(scores, labels),
    }
}

/// Mann-Whitney AUC with midranks for tied scores.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = linalg::midranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}
