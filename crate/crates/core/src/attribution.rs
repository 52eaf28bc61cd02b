//! Feature attributions.
//!
//! All methods explain a scalar model output relative to a baseline:
//! the raw score (regression output or logit) by default, or the
//! probability when [`OutputScale::Probability`] is requested.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::models::{ModelKind, ModelParams};
use crate::seed;

/// Largest feature count accepted by [`brute_force_shapley`].
pub const MAX_BRUTE_FORCE_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    /// Regression output for OLS, logit for classifiers.
    #[default]
    Raw,
    Probability,
}

impl OutputScale {
    pub fn eval(self, m: &ModelParams, x: &[f64]) -> f64 {
        match self {
            OutputScale::Raw => m.raw(x),
            OutputScale::Probability => m.proba(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    LinearExact,
    Taylor,
    KernelShap,
    BruteForce,
}

/// n×p attributions for a set of explained instances.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub values: DMatrix<f64>,
    pub baseline: Vec<f64>,
    pub method: MethodTag,
    pub model_ref: String,
    pub feature_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct AttributionJson {
    method: MethodTag,
    model_ref: String,
    feature_names: Vec<String>,
    baseline: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl AttributionMatrix {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.values.row_iter().map(|r| r.sum()).collect()
    }

    /// Mean |φ| per feature over instances.
    pub fn mean_abs(&self) -> Vec<f64> {
        let n = self.nrows().max(1) as f64;
        self.values.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / n).collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.feature_names)?;
        for r in self.values.row_iter() {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Read a CSV written by [`AttributionMatrix::write_csv`]. Metadata not
    /// stored in the CSV is filled with the given method and a zero baseline.
    pub fn read_csv(path: impl AsRef<Path>, method: MethodTag) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let feature_names: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut flat = Vec::new();
        let mut n = 0;
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            for (j, v) in rec.iter().enumerate() {
                flat.push(v.parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    column: feature_names[j].clone(),
                    value: v.to_string(),
                })?);
            }
            n += 1;
        }
        let p = feature_names.len();
        if flat.len() != n * p {
            return Err(Error::invalid("ragged attribution csv"));
        }
        Ok(AttributionMatrix {
            values: DMatrix::from_row_slice(n, p, &flat),
            baseline: vec![0.0; p],
            method,
            model_ref: path.as_ref().display().to_string(),
            feature_names,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let j = AttributionJson {
            method: self.method,
            model_ref: self.model_ref.clone(),
            feature_names: self.feature_names.clone(),
            baseline: self.baseline.clone(),
            values: self.values.row_iter().map(|r| r.iter().copied().collect()).collect(),
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: AttributionJson = serde_json::from_str(text)?;
        let p = j.feature_names.len();
        let flat: Vec<f64> = j.values.iter().flatten().copied().collect();
        if flat.len() != j.values.len() * p {
            return Err(Error::invalid("ragged attribution json"));
        }
        Ok(AttributionMatrix {
            values: DMatrix::from_row_slice(j.values.len(), p, &flat),
            baseline: j.baseline,
            method: j.method,
            model_ref: j.model_ref,
            feature_names: j.feature_names,
        })
    }
}

fn model_ref(m: &ModelParams) -> String {
    format!("{:?}/{}w", m.kind, m.weights.len()).to_lowercase()
}

fn check_baseline(m: &ModelParams, x_eval: &FeatureMatrix, baseline: &[f64]) -> Result<()> {
    m.check_input(x_eval)?;
    if baseline.len() != m.n_features() {
        return Err(Error::DimensionMismatch {
            expected: m.n_features(),
            found: baseline.len(),
        });
    }
    Ok(())
}

/// φᵢ = βᵢ (xᵢ − μᵢ). Logistic models are explained on the logit scale.
pub fn linear_shap(m: &ModelParams, x_eval: &FeatureMatrix, baseline: &[f64]) -> Result<AttributionMatrix> {
    check_baseline(m, x_eval, baseline)?;
    let beta = m
        .linear_coefficients()
        .ok_or_else(|| Error::invalid("linear SHAP needs a linear model (ols or logistic)"))?;
    let values = DMatrix::from_fn(x_eval.nrows(), x_eval.ncols(), |i, j| {
        beta[j] * (x_eval.values()[(i, j)] - baseline[j])
    });
    Ok(AttributionMatrix {
        values,
        baseline: baseline.to_vec(),
        method: MethodTag::LinearExact,
        model_ref: model_ref(m),
        feature_names: x_eval.column_names().to_vec(),
    })
}

/// First-order Taylor attribution φᵢ = ∂f/∂xᵢ|ₓ · (xᵢ − μᵢ), with the
/// gradient taken analytically.
pub fn taylor_attribution(
    m: &ModelParams,
    x_eval: &FeatureMatrix,
    baseline: &[f64],
    scale: OutputScale,
) -> Result<AttributionMatrix> {
    check_baseline(m, x_eval, baseline)?;
    let rows: Vec<Vec<f64>> = (0..x_eval.nrows())
        .into_par_iter()
        .map(|i| {
            let x = x_eval.row(i);
            let mut g = m.raw_input_gradient(&x);
            if scale == OutputScale::Probability && m.kind != ModelKind::LinearOls {
                let p = m.proba(&x);
                g.iter_mut().for_each(|v| *v *= p * (1.0 - p));
            }
            g.iter().enumerate().map(|(j, gj)| gj * (x[j] - baseline[j])).collect()
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(AttributionMatrix {
        values: DMatrix::from_row_slice(x_eval.nrows(), x_eval.ncols(), &flat),
        baseline: baseline.to_vec(),
        method: MethodTag::Taylor,
        model_ref: model_ref(m),
        feature_names: x_eval.column_names().to_vec(),
    })
}

/// Exact Shapley values of `f` at `x`, features outside a coalition set to
/// `baseline`. Enumerates all 2^p coalitions.
pub fn brute_force_shapley_fn<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], baseline: &[f64]) -> Result<Vec<f64>> {
    let p = x.len();
    if baseline.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: baseline.len(),
        });
    }
    if p > MAX_BRUTE_FORCE_FEATURES {
        return Err(Error::invalid(format!(
            "brute-force Shapley supports at most {MAX_BRUTE_FORCE_FEATURES} features, got {p}"
        )));
    }
    let total = 1usize << p;
    let mut point = vec![0.0; p];
    let values: Vec<f64> = (0..total)
        .map(|mask| {
            for j in 0..p {
                point[j] = if mask >> j & 1 == 1 { x[j] } else { baseline[j] };
            }
            f(&point)
        })
        .collect();
    // weight[s] = s! (p - s - 1)! / p!
    let mut weight = vec![0.0; p.max(1)];
    for (s, w) in weight.iter_mut().enumerate().take(p) {
        *w = 1.0 / (p as f64 * binomial(p - 1, s));
    }
    let mut phi = vec![0.0; p];
    for mask in 0..total {
        let s = (mask as u64).count_ones() as usize;
        for (i, ph) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *ph += weight[s] * (values[mask | (1 << i)] - values[mask]);
            }
        }
    }
    Ok(phi)
}

pub fn brute_force_shapley(m: &ModelParams, x: &[f64], baseline: &[f64], scale: OutputScale) -> Result<Vec<f64>> {
    if x.len() != m.n_features() {
        return Err(Error::DimensionMismatch {
            expected: m.n_features(),
            found: x.len(),
        });
    }
    brute_force_shapley_fn(|z| scale.eval(m, z), x, baseline)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Coalitions per instance; at or above `2^p - 2` all coalitions are enumerated.
    pub num_coalitions: usize,
    /// Background rows averaged over for masked features.
    pub background_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub scale: OutputScale,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            num_coalitions: 2048,
            background_size: 100,
            seed: 0,
            scale: OutputScale::Raw,
        }
    }
}

/// Shapley-kernel weight of a coalition of size `s` out of `p`.
fn kernel_weight(p: usize, s: usize) -> f64 {
    (p - 1) as f64 / (binomial(p, s) * s as f64 * (p - s) as f64)
}

/// Coalitions (as feature masks) with regression weights.
fn coalitions(p: usize, cfg: &KernelConfig, rng: &mut impl Rng) -> Vec<(Vec<bool>, f64)> {
    let total = (1usize << p.min(62)).saturating_sub(2);
    if p < 63 && cfg.num_coalitions >= total {
        return (1..(1usize << p) - 1)
            .map(|mask| {
                let z: Vec<bool> = (0..p).map(|j| mask >> j & 1 == 1).collect();
                let s = z.iter().filter(|&&b| b).count();
                (z, kernel_weight(p, s))
            })
            .collect();
    }
    // Sizes drawn in proportion to their total kernel mass, then a uniform
    // subset of that size; duplicates accumulate weight.
    let size_mass: Vec<f64> = (1..p).map(|s| (p - 1) as f64 / (s as f64 * (p - s) as f64)).collect();
    let mass_total: f64 = size_mass.iter().sum();
    let mut seen: std::collections::HashMap<Vec<bool>, f64> = std::collections::HashMap::new();
    let mut order = Vec::new();
    for _ in 0..cfg.num_coalitions {
        let mut u = rng.random::<f64>() * mass_total;
        let mut s = p - 1;
        for (k, m) in size_mass.iter().enumerate() {
            if u < *m {
                s = k + 1;
                break;
            }
            u -= m;
        }
        let picked = index::sample(rng, p, s);
        let mut z = vec![false; p];
        for j in picked.iter() {
            z[j] = true;
        }
        let entry = seen.entry(z.clone()).or_insert_with(|| {
            order.push(z);
            0.0
        });
        *entry += 1.0;
    }
    order.into_iter().map(|z| {
        let w = seen[&z];
        (z, w)
    }).collect()
}

/// Kernel SHAP: per instance, the Shapley-kernel weighted least-squares fit
/// of coalition values under the efficiency constraint
/// Σφ = f(x) − mean f(background). Masked features take background values
/// and the model output is averaged over background rows (interventional
/// imputation).
pub fn kernel_shap(
    m: &ModelParams,
    x_eval: &FeatureMatrix,
    background: &FeatureMatrix,
    cfg: &KernelConfig,
) -> Result<AttributionMatrix> {
    m.check_input(x_eval)?;
    m.check_input(background)?;
    let scale = cfg.scale;
    let out = kernel_shap_fn(|z| scale.eval(m, z), x_eval, background, cfg)?;
    Ok(AttributionMatrix {
        model_ref: model_ref(m),
        ..out
    })
}

/// [`kernel_shap`] for an arbitrary scalar function.
pub fn kernel_shap_fn<F: Fn(&[f64]) -> f64 + Sync>(
    f: F,
    x_eval: &FeatureMatrix,
    background: &FeatureMatrix,
    cfg: &KernelConfig,
) -> Result<AttributionMatrix> {
    let p = x_eval.ncols();
    if background.nrows() == 0 {
        return Err(Error::Empty("kernel SHAP needs a nonempty background".into()));
    }
    if background.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: background.ncols(),
        });
    }
    if p == 0 {
        return Err(Error::invalid("no features to explain"));
    }
    if cfg.background_size == 0 {
        return Err(Error::invalid("background size must be positive"));
    }
    let total = if p < 63 { (1usize << p) - 2 } else { usize::MAX };
    if cfg.num_coalitions < (p + 2).min(total) {
        return Err(Error::invalid(format!(
            "{} coalitions cannot determine {p} attributions",
            cfg.num_coalitions
        )));
    }
    let bg = if background.nrows() > cfg.background_size {
        let mut rng = seed::rng(cfg.seed, u64::MAX);
        let mut rows = index::sample(&mut rng, background.nrows(), cfg.background_size).into_vec();
        rows.sort_unstable();
        background.select_rows(&rows)
    } else {
        background.clone()
    };
    let bg_rows: Vec<Vec<f64>> = (0..bg.nrows()).map(|i| bg.row(i)).collect();
    let base_value = bg_rows.iter().map(|b| f(b)).sum::<f64>() / bg_rows.len() as f64;

    let rows: Vec<Result<Vec<f64>>> = (0..x_eval.nrows())
        .into_par_iter()
        .map(|i| {
            let x = x_eval.row(i);
            let fx = f(&x);
            let mut attempt = 0u64;
            loop {
                let mut rng = seed::rng(seed::derive(cfg.seed, i as u64), attempt);
                let coal = coalitions(p, cfg, &mut rng);
                match solve_instance(&f, &x, fx, base_value, &bg_rows, &coal) {
                    Some(phi) => return Ok(phi),
                    None if attempt == 0 => attempt += 1,
                    None => {
                        return Err(Error::Singular(format!(
                            "kernel SHAP design for instance {i} is singular after resampling coalitions"
                        )))
                    }
                }
            }
        })
        .collect();
    let mut flat = Vec::with_capacity(x_eval.nrows() * p);
    for r in rows {
        flat.extend(r?);
    }
    Ok(AttributionMatrix {
        values: DMatrix::from_row_slice(x_eval.nrows(), p, &flat),
        baseline: linalg::column_means(bg.values()),
        method: MethodTag::KernelShap,
        model_ref: "fn".into(),
        feature_names: x_eval.column_names().to_vec(),
    })
}

/// Constrained WLS with the last feature eliminated:
/// φ_last = Δ − Σ_{k<last} φ_k.
fn solve_instance<F: Fn(&[f64]) -> f64>(
    f: &F,
    x: &[f64],
    fx: f64,
    base_value: f64,
    bg: &[Vec<f64>],
    coal: &[(Vec<bool>, f64)],
) -> Option<Vec<f64>> {
    let p = x.len();
    let delta = fx - base_value;
    if p == 1 {
        return Some(vec![delta]);
    }
    let last = p - 1;
    let mut a = DMatrix::zeros(coal.len(), p - 1);
    let mut b = DVector::zeros(coal.len());
    let mut point = vec![0.0; p];
    for (r, (z, w)) in coal.iter().enumerate() {
        let mut v = 0.0;
        for row in bg {
            for j in 0..p {
                point[j] = if z[j] { x[j] } else { row[j] };
            }
            v += f(&point);
        }
        v /= bg.len() as f64;
        let sw = w.sqrt();
        let zl = if z[last] { 1.0 } else { 0.0 };
        for k in 0..last {
            let zk = if z[k] { 1.0 } else { 0.0 };
            a[(r, k)] = sw * (zk - zl);
        }
        b[r] = sw * (v - base_value - zl * delta);
    }
    let fit = linalg::lstsq(&a, &b);
    if fit.rank < p - 1 {
        return None;
    }
    let mut phi: Vec<f64> = fit.solution.iter().copied().collect();
    let rest: f64 = phi.iter().sum();
    phi.push(delta - rest);
    Some(phi)
}

/// Attribution methods selectable from configuration and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AttributionMethod {
    Linear,
    Taylor { scale: OutputScale },
    Kernel { config: KernelConfig },
}

impl AttributionMethod {
    /// Attribute `x_eval`. `reference` supplies the background for kernel
    /// SHAP; `baseline` is used by the linear and Taylor methods.
    pub fn attribute(
        &self,
        m: &ModelParams,
        x_eval: &FeatureMatrix,
        baseline: &[f64],
        reference: &FeatureMatrix,
    ) -> Result<AttributionMatrix> {
        match self {
            AttributionMethod::Linear => linear_shap(m, x_eval, baseline),
            AttributionMethod::Taylor { scale } => taylor_attribution(m, x_eval, baseline, *scale),
            AttributionMethod::Kernel { config } => kernel_shap(m, x_eval, reference, config),
        }
    }

    /// Linear SHAP for linear kinds, logit-scale Taylor otherwise.
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Mlp => AttributionMethod::Taylor {
                scale: OutputScale::Raw,
            },
            _ => AttributionMethod::Linear,
        }
    }
}
