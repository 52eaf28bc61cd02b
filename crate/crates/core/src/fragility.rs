//! Attribution instability: bootstrap retraining, fragility scores
//! `Var(φᵢ) / (E|φᵢ| + ε)` and Kendall's tau rank stability.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMatrix, AttributionMethod};
use crate::data::{bootstrap_indices, BootstrapPlan, FeatureMatrix};
use crate::error::{Error, Result};
use crate::models::{ModelParams, ModelSpec};

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_TOP_K: [usize; 2] = [20, 50];

/// Retrain on each bootstrap resample of `(train_x, train_y)` and attribute
/// the fixed `eval_set`. The baseline is the full training-set column means
/// so only the fitted parameters vary between resamples.
pub fn bootstrap_attributions(
    train_x: &FeatureMatrix,
    train_y: &[f64],
    eval_set: &FeatureMatrix,
    model_spec: &ModelSpec,
    plan: &BootstrapPlan,
    method: &AttributionMethod,
) -> Result<Vec<AttributionMatrix>> {
    bootstrap_attributions_with(train_x, train_y, eval_set, plan, method, |x, y| model_spec.fit(x, y))
}

/// [`bootstrap_attributions`] with a caller-supplied trainer.
pub fn bootstrap_attributions_with<F>(
    train_x: &FeatureMatrix,
    train_y: &[f64],
    eval_set: &FeatureMatrix,
    plan: &BootstrapPlan,
    method: &AttributionMethod,
    train: F,
) -> Result<Vec<AttributionMatrix>>
where
    F: Fn(&FeatureMatrix, &[f64]) -> Result<ModelParams> + Sync,
{
    if train_x.nrows() != train_y.len() {
        return Err(Error::DimensionMismatch {
            expected: train_x.nrows(),
            found: train_y.len(),
        });
    }
    if eval_set.column_names() != train_x.column_names() {
        return Err(Error::invalid("evaluation set columns differ from training columns"));
    }
    let resamples = bootstrap_indices(train_x.nrows(), plan)?;
    let baseline = train_x.current_means();
    resamples
        .par_iter()
        .enumerate()
        .map(|(r, idx)| {
            let x = train_x.select_rows(idx);
            let y: Vec<f64> = idx.iter().map(|&i| train_y[i]).collect();
            train(&x, &y)
                .and_then(|m| method.attribute(&m, eval_set, &baseline, train_x))
                .map_err(|e| Error::Resample {
                    index: r,
                    source: Box::new(e),
                })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureFragility {
    pub name: String,
    pub var_phi: f64,
    pub mean_abs_phi: f64,
    pub fragility: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FragilityReport {
    pub features: Vec<FeatureFragility>,
    pub epsilon: f64,
    pub num_samples: usize,
    pub eval_instances: usize,
    /// Bootstrap plan that produced the samples, when known.
    pub plan: Option<BootstrapPlan>,
    /// Feature indices by decreasing fragility (ties by index), top 20.
    pub top_fragile: Vec<usize>,
}

impl FragilityReport {
    pub fn scores(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.fragility).collect()
    }

    pub fn mean_fragility(&self) -> f64 {
        let n = self.features.len().max(1) as f64;
        self.features.iter().map(|f| f.fragility).sum::<f64>() / n
    }

    pub fn with_plan(mut self, plan: BootstrapPlan) -> Self {
        self.plan = Some(plan);
        self
    }

    /// Indices by decreasing fragility.
    pub fn ranking(&self) -> Vec<usize> {
        rank_by_importance(&self.scores())
    }
}

fn check_congruent(samples: &[AttributionMatrix]) -> Result<(usize, usize)> {
    if samples.len() < 2 {
        return Err(Error::invalid("need at least 2 attribution samples"));
    }
    let shape = samples[0].values.shape();
    for s in samples {
        if s.values.shape() != shape {
            return Err(Error::invalid(format!(
                "attribution shape {:?} differs from {:?}",
                s.values.shape(),
                shape
            )));
        }
    }
    Ok(shape)
}

/// Fragility per feature. The sample (n − 1) variance across resamples is
/// taken per evaluation instance and averaged over instances; E|φ| is the
/// mean over instances and resamples.
pub fn fragility_scores(samples: &[AttributionMatrix], epsilon: f64) -> Result<FragilityReport> {
    let (n, p) = check_congruent(samples)?;
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be nonnegative"));
    }
    let views: Vec<&DMatrix<f64>> = samples.iter().map(|s| &s.values).collect();
    let stats = pooled_moments(&views, n, p);
    let features: Vec<FeatureFragility> = stats
        .into_iter()
        .enumerate()
        .map(|(j, (var_phi, mean_abs_phi))| FeatureFragility {
            name: samples[0].feature_names.get(j).cloned().unwrap_or_else(|| format!("x{j}")),
            var_phi,
            mean_abs_phi,
            fragility: var_phi / (mean_abs_phi + epsilon),
        })
        .collect();
    let scores: Vec<f64> = features.iter().map(|f| f.fragility).collect();
    let mut top_fragile = rank_by_importance(&scores);
    top_fragile.truncate(20);
    Ok(FragilityReport {
        features,
        epsilon,
        num_samples: samples.len(),
        eval_instances: n,
        plan: None,
        top_fragile,
    })
}

/// (mean per-instance sample variance, mean |φ|) per feature.
pub(crate) fn pooled_moments(samples: &[&DMatrix<f64>], n: usize, p: usize) -> Vec<(f64, f64)> {
    let r = samples.len() as f64;
    (0..p)
        .map(|j| {
            let mut var_sum = 0.0;
            let mut abs_sum = 0.0;
            for i in 0..n {
                // Shifted by the first sample so identical values give exactly 0.
                let shift = samples[0][(i, j)];
                let (d, d2) = samples.iter().fold((0.0, 0.0), |(a, b), s| {
                    let d = s[(i, j)] - shift;
                    (a + d, b + d * d)
                });
                var_sum += ((d2 - d * d / r) / (r - 1.0)).max(0.0);
                abs_sum += samples.iter().map(|s| s[(i, j)].abs()).sum::<f64>();
            }
            (var_sum / n.max(1) as f64, abs_sum / (n.max(1) as f64 * r))
        })
        .collect()
}

/// Indices ordered by decreasing score; equal scores keep index order.
pub fn rank_by_importance(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Kendall's tau-a between two orderings of the same items.
///
/// Items are mapped to their positions in `rank_b`, taken in `rank_a`
/// order; discordant pairs are the inversions of that sequence, counted
/// by merge sort in O(n log n).
pub fn kendall_tau(rank_a: &[usize], rank_b: &[usize]) -> Result<f64> {
    let n = rank_a.len();
    if n < 2 {
        return Err(Error::invalid("Kendall's tau needs at least 2 items"));
    }
    if rank_b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: rank_b.len(),
        });
    }
    let max = rank_a.iter().chain(rank_b).copied().max().unwrap_or(0);
    let mut pos_b = vec![usize::MAX; max + 1];
    for (pos, &item) in rank_b.iter().enumerate() {
        if pos_b[item] != usize::MAX {
            return Err(Error::invalid(format!("item {item} repeated in ranking")));
        }
        pos_b[item] = pos;
    }
    let mut seen = vec![false; max + 1];
    let mut seq = Vec::with_capacity(n);
    for &item in rank_a {
        if pos_b[item] == usize::MAX || seen[item] {
            return Err(Error::invalid("rankings do not contain the same items"));
        }
        seen[item] = true;
        seq.push(pos_b[item]);
    }
    let discordant = count_inversions(&mut seq);
    let pairs = (n * (n - 1) / 2) as f64;
    Ok((pairs - 2.0 * discordant as f64) / pairs)
}

fn count_inversions(v: &mut [usize]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[i] <= v[j] {
            merged.push(v[i]);
            i += 1;
        } else {
            inv += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    inv
}

/// Tau between the top-`k` heads of two full rankings. The union of both
/// heads is ordered by each full ranking (members absent from one head keep
/// their full-list position) before computing tau.
pub fn top_k_tau(full_a: &[usize], full_b: &[usize], k: usize) -> Result<f64> {
    let k = k.min(full_a.len());
    let mut union: Vec<usize> = full_a[..k].to_vec();
    for &item in &full_b[..k.min(full_b.len())] {
        if !union.contains(&item) {
            union.push(item);
        }
    }
    let order_by = |full: &[usize]| -> Vec<usize> {
        full.iter().copied().filter(|i| union.contains(i)).collect()
    };
    kendall_tau(&order_by(full_a), &order_by(full_b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingBasis {
    MeanAbsShapImportance,
    FragilityScore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TauAtK {
    pub k: usize,
    /// `k` after clamping to the number of ranked items.
    pub k_used: usize,
    pub clamped: bool,
    pub mean_tau: f64,
    pub pairwise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityReport {
    pub tau_top20: f64,
    pub tau_top50: f64,
    pub by_k: Vec<TauAtK>,
    pub ranking_basis: RankingBasis,
    pub num_rankings: usize,
}

impl StabilityReport {
    pub fn tau_at(&self, k: usize) -> Option<f64> {
        self.by_k.iter().find(|t| t.k == k).map(|t| t.mean_tau)
    }
}

/// Mean pairwise top-K tau of per-resample rankings by mean |φ|.
pub fn stability_report(samples: &[AttributionMatrix], k_values: &[usize]) -> Result<StabilityReport> {
    check_congruent(samples)?;
    let rankings: Vec<Vec<usize>> = samples.iter().map(|s| rank_by_importance(&s.mean_abs())).collect();
    stability_from_rankings(&rankings, k_values, RankingBasis::MeanAbsShapImportance)
}

/// Mean pairwise top-K tau over precomputed full rankings.
pub fn stability_from_rankings(rankings: &[Vec<usize>], k_values: &[usize], basis: RankingBasis) -> Result<StabilityReport> {
    if rankings.len() < 2 {
        return Err(Error::invalid("need at least 2 rankings"));
    }
    let p = rankings[0].len();
    if p < 2 {
        return Err(Error::invalid("need at least 2 ranked items"));
    }
    let mut ks: Vec<usize> = k_values.to_vec();
    for k in DEFAULT_TOP_K {
        if !ks.contains(&k) {
            ks.push(k);
        }
    }
    let r = rankings.len();
    let mut by_k = Vec::new();
    for &k in &ks {
        let k_used = k.clamp(2, p);
        let mut pairwise = vec![vec![1.0; r]; r];
        let mut sum = 0.0;
        for a in 0..r {
            for b in (a + 1)..r {
                let t = top_k_tau(&rankings[a], &rankings[b], k_used)?;
                pairwise[a][b] = t;
                pairwise[b][a] = t;
                sum += t;
            }
        }
        by_k.push(TauAtK {
            k,
            k_used,
            clamped: k_used != k,
            mean_tau: sum / (r * (r - 1) / 2) as f64,
            pairwise,
        });
    }
    let at = |k: usize| by_k.iter().find(|t| t.k == k).map(|t| t.mean_tau).unwrap();
    Ok(StabilityReport {
        tau_top20: at(20),
        tau_top50: at(50),
        by_k,
        ranking_basis: basis,
        num_rankings: r,
    })
}
