//! Synthetic checks of the link between VIF and OLS attribution variance.
//!
//! - [`generate_synthetic`] draws Gaussian designs with a target correlation.
//! - [`ols_variance_identity_check`] compares the Gram-inverse diagonal with
//!   `VIF / (n · Var(x))` computed from the audit regressions.
//! - [`variance_bound_experiment`] measures bootstrap `Var(φ)` of exact linear
//!   SHAP along a correlation grid and fits `Var(φ) ≈ c · (VIF − 1)`.
//! - [`non_identifiability_check`] exhibits coefficient vectors with equal
//!   predictions and different attributions under exact dependence.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::attribution::{linear_shap, AttributionMethod};
use crate::audit;
use crate::data::{BootstrapPlan, FeatureMatrix};
use crate::error::{Error, Result};
use crate::fragility::{bootstrap_attributions, fragility_scores};
use crate::linalg::{centered, population_variance, spearman};
use crate::models::{fit_ols, ModelKind, ModelParams, ModelSpec};
use crate::seed;

pub const DEFAULT_RHO_GRID: [f64; 4] = [0.0, 0.9, 0.99, 0.999];
pub const BOUND_SLACK: f64 = 0.2;
pub const VARIANCE_FACTOR: f64 = 3.0;
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrelationTarget {
    /// Unit diagonal with the listed off-diagonal entries, zero elsewhere.
    Pairs { pairs: Vec<(usize, usize, f64)> },
    Full { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub correlation: CorrelationTarget,
    /// Response noise σ; 0 gives a noiseless response.
    pub noise_sigma: f64,
    pub beta_true: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Independent standard-normal features with `y = x₀ + ε`.
    pub fn independent(n: usize, p: usize, noise_sigma: f64, seed: u64) -> Self {
        let mut beta_true = vec![0.0; p];
        if p > 0 {
            beta_true[0] = 1.0;
        }
        SyntheticSpec {
            n,
            p,
            correlation: CorrelationTarget::Pairs { pairs: Vec::new() },
            noise_sigma,
            beta_true,
            seed,
        }
    }

    pub fn with_pair(mut self, i: usize, j: usize, rho: f64) -> Self {
        self.correlation = CorrelationTarget::Pairs {
            pairs: vec![(i, j, rho)],
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 {
            return Err(Error::invalid("synthetic spec needs n >= 2 and p >= 1"));
        }
        if self.beta_true.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                found: self.beta_true.len(),
            });
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid("noise sigma must be nonnegative and finite"));
        }
        self.target_matrix().map(|_| ())
    }

    pub fn target_matrix(&self) -> Result<DMatrix<f64>> {
        let p = self.p;
        let m = match &self.correlation {
            CorrelationTarget::Pairs { pairs } => {
                let mut m = DMatrix::identity(p, p);
                for &(i, j, rho) in pairs {
                    if i >= p || j >= p || i == j {
                        return Err(Error::invalid(format!("invalid correlation pair ({i}, {j})")));
                    }
                    m[(i, j)] = rho;
                    m[(j, i)] = rho;
                }
                m
            }
            CorrelationTarget::Full { matrix } => {
                if matrix.len() != p || matrix.iter().any(|r| r.len() != p) {
                    return Err(Error::invalid("target correlation matrix must be p x p"));
                }
                DMatrix::from_fn(p, p, |i, j| matrix[i][j])
            }
        };
        for i in 0..p {
            if (m[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::invalid("target correlation diagonal must be 1"));
            }
            for j in 0..p {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 || m[(i, j)].abs() > 1.0 {
                    return Err(Error::invalid("target correlation must be symmetric with entries in [-1, 1]"));
                }
            }
        }
        Ok(m)
    }

    /// `L` with `L Lᵀ` equal to the target correlation.
    pub fn factor(&self) -> Result<DMatrix<f64>> {
        let r = self.target_matrix()?;
        if let Some(ch) = r.clone().cholesky() {
            return Ok(ch.l());
        }
        let eig = SymmetricEigen::new(r);
        let min = eig.eigenvalues.min();
        if min < -PSD_TOL {
            return Err(Error::invalid(format!(
                "target correlation is not positive semi-definite (eigenvalue {min:.3e})"
            )));
        }
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
    }

    /// `L · 1`: a point at unit distance along every latent direction.
    pub fn latent_ones_point(&self) -> Result<Vec<f64>> {
        let l = self.factor()?;
        Ok((&l * DVector::from_element(self.p, 1.0)).iter().copied().collect())
    }
}

/// Rows `z Lᵀ` with `z ~ N(0, I)` and `y = Xβ + σ ε`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(FeatureMatrix, Vec<f64>)> {
    spec.validate()?;
    let l = spec.factor()?;
    let mut rng = seed::rng(spec.seed, 0);
    let z = DMatrix::<f64>::from_fn(spec.n, spec.p, |_, _| StandardNormal.sample(&mut rng));
    let x = z * l.transpose();
    let mut noise_rng = seed::rng(spec.seed, 1);
    let beta = DVector::from_column_slice(&spec.beta_true);
    let signal: DVector<f64> = &x * beta;
    let y = signal
        .iter()
        .map(|&s| {
            if spec.noise_sigma == 0.0 {
                s
            } else {
                let e: f64 = StandardNormal.sample(&mut noise_rng);
                s + spec.noise_sigma * e
            }
        })
        .collect();
    Ok((FeatureMatrix::unnamed(x)?, y))
}

/// Diagonal of `(XcᵀXc)⁻¹` for the column-centred design.
pub fn gram_inverse_diagonal(x: &FeatureMatrix) -> Result<Vec<f64>> {
    let xc = centered(x.values());
    let gram = xc.transpose() * &xc;
    let inv = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("centred Gram matrix is not positive definite".into()))?
        .inverse();
    Ok(inv.diagonal().iter().copied().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityRow {
    pub name: String,
    pub gram_inverse: f64,
    pub vif_based: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub sigma: f64,
    pub rows: Vec<IdentityRow>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// `σ²(XcᵀXc)⁻¹ᵢᵢ` against `σ² · VIFᵢ / (n · Var(xᵢ))` with the population
/// variance and VIF from the audit regressions.
pub fn ols_variance_identity_check(x: &FeatureMatrix, sigma: f64) -> Result<IdentityCheck> {
    const TOLERANCE: f64 = 1e-6;
    if x.ncols() < 2 {
        return Err(Error::invalid("identity check needs at least 2 features"));
    }
    let gram = gram_inverse_diagonal(x)?;
    let table = audit::vif(x)?;
    let n = x.nrows() as f64;
    let s2 = sigma * sigma;
    let mut rows = Vec::with_capacity(x.ncols());
    for (j, entry) in table.entries.iter().enumerate() {
        let v = entry
            .vif
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Singular(format!("feature {} has unbounded or undefined VIF", entry.name)))?;
        let var = population_variance(&x.column(j));
        let lhs = s2 * gram[j];
        let rhs = s2 * v / (n * var);
        let relative_error = if lhs == rhs { 0.0 } else { (lhs - rhs).abs() / lhs.abs().max(rhs.abs()) };
        rows.push(IdentityRow {
            name: entry.name.clone(),
            gram_inverse: lhs,
            vif_based: rhs,
            relative_error,
        });
    }
    let max_relative_error = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    Ok(IdentityCheck {
        sigma,
        rows,
        max_relative_error,
        tolerance: TOLERANCE,
        passed: max_relative_error <= TOLERANCE,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundRow {
    pub rho: f64,
    pub feature: usize,
    /// Member of the correlated pair.
    pub in_block: bool,
    pub vif: f64,
    pub var_phi: f64,
    pub predicted: f64,
    /// `x*ᵢ − μᵢ`.
    pub offset: f64,
}

impl BoundRow {
    pub fn ratio(&self) -> f64 {
        self.var_phi / self.predicted
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TheoremCheckReport {
    pub grid: Vec<f64>,
    pub pair: (usize, usize),
    pub rows: Vec<BoundRow>,
    pub c_hat: f64,
    pub spearman_vif_fragility: f64,
    pub bound_violations: usize,
    pub slack: f64,
    /// `Var(φ)` strictly increasing along the grid for both block features.
    pub monotone: bool,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// Every `var_phi / predicted` within `[1/3, 3]`.
    pub within_factor: bool,
    pub plan: BootstrapPlan,
    pub passed: bool,
}

impl TheoremCheckReport {
    /// `rho,feature,vif,var_phi,predicted`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rho", "feature", "vif", "var_phi", "predicted"])?;
        for r in &self.rows {
            w.write_record([
                r.rho.to_string(),
                r.feature.to_string(),
                r.vif.to_string(),
                r.var_phi.to_string(),
                r.predicted.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn block_variances(&self, feature: usize) -> Vec<f64> {
        self.rows.iter().filter(|r| r.feature == feature).map(|r| r.var_phi).collect()
    }
}

/// For each ρ, correlate the template's features `(0, 1)` at ρ, fit OLS on
/// bootstrap resamples and record `Var(φ)` of exact linear SHAP at
/// `x* = L·1`, with `μ` the full-sample means. The same seed is reused at
/// every grid point so only ρ changes between rows.
pub fn variance_bound_experiment(grid: &[f64], template: &SyntheticSpec, plan: &BootstrapPlan) -> Result<TheoremCheckReport> {
    if grid.is_empty() {
        return Err(Error::invalid("rho grid must be nonempty"));
    }
    if grid.iter().any(|r| !(r.abs() < 1.0)) {
        return Err(Error::invalid("rho grid values must lie in (-1, 1)"));
    }
    if template.p < 2 {
        return Err(Error::invalid("bound experiment needs at least 2 features"));
    }
    if !(template.noise_sigma > 0.0) {
        return Err(Error::invalid("bound experiment needs noise sigma > 0"));
    }
    plan.validate()?;
    let pair = (0, 1);
    let mut rows = Vec::new();
    for &rho in grid {
        let spec = template.clone().with_pair(pair.0, pair.1, rho);
        let (x, y) = generate_synthetic(&spec)?;
        let mu = x.current_means();
        let star = spec.latent_ones_point()?;
        let offsets: Vec<f64> = star.iter().zip(&mu).map(|(s, m)| s - m).collect();
        if offsets[..2].iter().any(|d| d.abs() < 0.5) {
            return Err(Error::Numerical(format!("x* too close to the mean at rho = {rho}")));
        }
        let eval = FeatureMatrix::new(DMatrix::from_row_slice(1, spec.p, &star), x.column_names().to_vec())?;
        let samples = bootstrap_attributions(&x, &y, &eval, &ModelSpec::Ols, plan, &AttributionMethod::Linear)?;
        let frag = fragility_scores(&samples, 0.0)?;
        let table = audit::vif(&x)?;
        let n = x.nrows() as f64;
        for j in 0..spec.p {
            let vif = table.entries[j]
                .vif
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Singular(format!("feature {j} has no finite VIF")))?;
            let var = population_variance(&x.column(j));
            rows.push(BoundRow {
                rho,
                feature: j,
                in_block: j == pair.0 || j == pair.1,
                vif,
                var_phi: frag.features[j].var_phi,
                predicted: spec.noise_sigma.powi(2) * offsets[j].powi(2) * vif / (n * var),
                offset: offsets[j],
            });
        }
    }

    let block: Vec<&BoundRow> = rows.iter().filter(|r| r.in_block).collect();
    let (num, den) = block
        .iter()
        .fold((0.0, 0.0), |(a, b), r| (a + (r.vif - 1.0) * r.var_phi, b + (r.vif - 1.0).powi(2)));
    let c_hat = if den > 0.0 { num / den } else { 0.0 };
    let vifs: Vec<f64> = block.iter().map(|r| r.vif).collect();
    let vars: Vec<f64> = block.iter().map(|r| r.var_phi).collect();
    let spearman_vif_fragility = spearman(&vifs, &vars);
    let bound_violations = rows
        .iter()
        .filter(|r| r.var_phi < (1.0 - BOUND_SLACK) * c_hat * (r.vif - 1.0))
        .count();
    let monotone = [pair.0, pair.1].iter().all(|&f| {
        let v: Vec<f64> = rows.iter().filter(|r| r.feature == f).map(|r| r.var_phi).collect();
        v.windows(2).all(|w| w[1] > w[0])
    });
    let ratios: Vec<f64> = rows.iter().map(BoundRow::ratio).collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let within_factor = min_ratio >= 1.0 / VARIANCE_FACTOR && max_ratio <= VARIANCE_FACTOR;
    let passed = c_hat > 0.0 && monotone && spearman_vif_fragility >= 0.9 && bound_violations == 0 && within_factor;
    Ok(TheoremCheckReport {
        grid: grid.to_vec(),
        pair,
        rows,
        c_hat,
        spearman_vif_fragility,
        bound_violations,
        slack: BOUND_SLACK,
        monotone,
        min_ratio,
        max_ratio,
        within_factor,
        plan: *plan,
        passed,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonIdentifiabilitySpec {
    pub n: usize,
    pub seed: u64,
    pub t_values: Vec<f64>,
}

impl Default for NonIdentifiabilitySpec {
    fn default() -> Self {
        NonIdentifiabilitySpec {
            n: 500,
            seed: 0,
            t_values: vec![-1.0, 0.0, 1.0, 10.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftOutcome {
    pub t: f64,
    pub max_prediction_delta: f64,
    pub attribution_delta: Vec<f64>,
    pub expected_delta: Vec<f64>,
    pub max_delta_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NonIdentifiabilityReport {
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub x_star: Vec<f64>,
    pub baseline: Vec<f64>,
    pub null_residual: f64,
    pub design_norm: f64,
    pub shifts: Vec<ShiftOutcome>,
    pub passed: bool,
}

/// Features `a`, `b` and `c = a + b` on small integers (exact in floating
/// point). `γ = (−1, −1, 1)` spans the null space; `β` is the min-norm OLS fit
/// of a noisy response, and predictions and linear SHAP attributions are
/// compared under `β + tγ`.
pub fn non_identifiability_check(spec: &NonIdentifiabilitySpec) -> Result<NonIdentifiabilityReport> {
    if spec.n < 3 {
        return Err(Error::invalid("non-identifiability check needs n >= 3"));
    }
    let mut rng = seed::rng(spec.seed, 0);
    let mut vals = Vec::with_capacity(spec.n * 3);
    let mut y = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let a = rng.random_range(-8i32..=8) as f64;
        let b = rng.random_range(-8i32..=8) as f64;
        let e: f64 = StandardNormal.sample(&mut rng);
        vals.extend([a, b, a + b]);
        y.push(a - 0.5 * b + 0.25 * e);
    }
    let names = ["a", "b", "c"].map(String::from).to_vec();
    let x = FeatureMatrix::new(DMatrix::from_row_slice(spec.n, 3, &vals), names)?;
    let alpha = vec![1.0, 1.0];
    let gamma = vec![-alpha[0], -alpha[1], 1.0];
    let g = DVector::from_column_slice(&gamma);
    let null_residual = (x.values() * &g).norm();
    let design_norm = x.values().norm();
    if !(null_residual <= 1e-8 * design_norm) {
        return Err(Error::Numerical(format!("dependence construction failed: |X gamma| = {null_residual:e}")));
    }

    let base = fit_ols(&x, &y)?;
    let beta = base.weights.clone();
    let baseline = x.current_means();
    let x_star: Vec<f64> = baseline.iter().zip([1.0, 1.0, 2.0]).map(|(m, d)| m + d).collect();
    let star = FeatureMatrix::new(DMatrix::from_row_slice(1, 3, &x_star), x.column_names().to_vec())?;
    let phi_base = linear_shap(&base, &star, &baseline)?;
    let pred_base: Vec<f64> = (0..x.nrows()).map(|i| base.raw(&x.row(i))).collect();

    let mut shifts = Vec::new();
    for &t in &spec.t_values {
        let shifted = ModelParams {
            weights: beta.iter().zip(&gamma).map(|(b, g)| b + t * g).collect(),
            ..base.clone()
        };
        debug_assert_eq!(shifted.kind, ModelKind::LinearOls);
        let max_prediction_delta = (0..x.nrows())
            .map(|i| (shifted.raw(&x.row(i)) - pred_base[i]).abs())
            .fold(0.0, f64::max);
        let phi = linear_shap(&shifted, &star, &baseline)?;
        let attribution_delta: Vec<f64> = (0..3).map(|j| phi.values[(0, j)] - phi_base.values[(0, j)]).collect();
        let expected_delta: Vec<f64> = (0..3).map(|j| t * gamma[j] * (x_star[j] - baseline[j])).collect();
        let max_delta_error = attribution_delta
            .iter()
            .zip(&expected_delta)
            .map(|(a, e)| (a - e).abs())
            .fold(0.0, f64::max);
        shifts.push(ShiftOutcome {
            t,
            max_prediction_delta,
            attribution_delta,
            expected_delta,
            max_delta_error,
        });
    }
    let passed = shifts.iter().all(|s| {
        let visible = s.t == 0.0 || s.attribution_delta.iter().any(|d| d.abs() >= 0.1 * s.t.abs().min(1.0));
        s.max_prediction_delta <= 1e-10 && s.max_delta_error <= 1e-8 && visible
    });
    Ok(NonIdentifiabilityReport {
        alpha,
        gamma,
        beta,
        x_star,
        baseline,
        null_residual,
        design_norm,
        shifts,
        passed,
    })
}
