//! Multicollinearity audit: Pearson correlations, greedy correlation
//! clusters, variance inflation factors and audit-driven pruning.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::seed;

/// R² at or above `1 - INFINITE_VIF_DELTA` is reported as an infinite VIF.
pub const INFINITE_VIF_DELTA: f64 = 1e-10;
pub const MODERATE_VIF: f64 = 5.0;
pub const SEVERE_VIF: f64 = 10.0;
pub const DEFAULT_RHO_THRESH: f64 = 0.85;
pub const DEFAULT_VIF_SAMPLE_ROWS: usize = 5000;

/// Symmetric matrix of Pearson correlations.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationMatrix {
    #[serde(serialize_with = "ser_matrix")]
    pub values: DMatrix<f64>,
    pub column_names: Vec<String>,
    /// Constant columns, whose off-diagonal correlations are set to 0.
    pub constant: Vec<bool>,
}

fn ser_matrix<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
    rows.serialize(s)
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest off-diagonal |ρ|.
    pub fn max_abs_off_diagonal(&self) -> f64 {
        let p = self.len();
        let mut best = 0.0_f64;
        for i in 0..p {
            for j in (i + 1)..p {
                best = best.max(self.values[(i, j)].abs());
            }
        }
        best
    }
}

pub fn correlation_matrix(x: &FeatureMatrix) -> Result<CorrelationMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("correlation needs at least 2 rows"));
    }
    let c = linalg::centered(x.values());
    let gram = c.transpose() * &c;
    let p = x.ncols();
    let constant: Vec<bool> = (0..p).map(|j| gram[(j, j)] <= 0.0 || x.constant_columns()[j]).collect();
    let mut values = DMatrix::identity(p, p);
    for i in 0..p {
        for j in (i + 1)..p {
            let r = if constant[i] || constant[j] {
                0.0
            } else {
                (gram[(i, j)] / (gram[(i, i)] * gram[(j, j)]).sqrt()).clamp(-1.0, 1.0)
            };
            values[(i, j)] = r;
            values[(j, i)] = r;
        }
    }
    Ok(CorrelationMatrix {
        values,
        column_names: x.column_names().to_vec(),
        constant,
    })
}

/// Greedy single-pass grouping: the lowest unassigned index seeds a
/// cluster and absorbs every unassigned higher index whose |ρ| with the
/// seed exceeds `rho_thresh`.
pub fn correlation_clusters(r: &CorrelationMatrix, rho_thresh: f64) -> Result<Vec<Vec<usize>>> {
    if !(rho_thresh > 0.0 && rho_thresh <= 1.0) {
        return Err(Error::invalid(format!("rho threshold {rho_thresh} is not in (0, 1]")));
    }
    Ok(greedy_clusters(r.len(), |i, j| r.get(i, j).abs() > rho_thresh))
}

pub(crate) fn greedy_clusters(p: usize, joins: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut assigned = vec![false; p];
    let mut clusters = Vec::new();
    for i in 0..p {
        if assigned[i] {
            continue;
        }
        assigned[i] = true;
        let mut group = vec![i];
        for j in (i + 1)..p {
            if !assigned[j] && joins(i, j) {
                assigned[j] = true;
                group.push(j);
            }
        }
        clusters.push(group);
    }
    clusters
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VifStatus {
    Ok,
    Moderate,
    Severe,
    Infinite,
    /// Constant column; excluded from the regressions.
    Constant,
}

impl VifStatus {
    pub fn classify(vif: f64) -> Self {
        if vif.is_infinite() {
            VifStatus::Infinite
        } else if vif > SEVERE_VIF {
            VifStatus::Severe
        } else if vif > MODERATE_VIF {
            VifStatus::Moderate
        } else {
            VifStatus::Ok
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VifEntry {
    pub name: String,
    /// `None` for constant columns, `Some(f64::INFINITY)` for exact collinearity.
    pub vif: Option<f64>,
    pub r_squared: Option<f64>,
    pub status: VifStatus,
}

impl Serialize for VifEntry {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("VifEntry", 4)?;
        st.serialize_field("name", &self.name)?;
        match self.vif {
            Some(v) if v.is_infinite() => st.serialize_field("vif", "inf")?,
            other => st.serialize_field("vif", &other)?,
        }
        st.serialize_field("r2", &self.r_squared)?;
        st.serialize_field("status", &self.status)?;
        st.end()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VifTable {
    pub entries: Vec<VifEntry>,
    /// Fewer rows than features + 1 were available.
    pub underdetermined: bool,
    pub rows_used: usize,
}

impl VifTable {
    pub fn values(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e.vif).collect()
    }

    /// VIF of feature `j`, with constant columns reported as 1.
    pub fn vif(&self, j: usize) -> f64 {
        self.entries[j].vif.unwrap_or(1.0)
    }

    /// Indices sorted by decreasing VIF (infinite first), constants last.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.entries.len()).collect();
        idx.sort_by(|&a, &b| {
            let va = self.entries[a].vif.unwrap_or(f64::NEG_INFINITY);
            let vb = self.entries[b].vif.unwrap_or(f64::NEG_INFINITY);
            vb.total_cmp(&va).then(a.cmp(&b))
        });
        idx
    }

    pub fn max_vif(&self) -> f64 {
        self.entries.iter().filter_map(|e| e.vif).fold(1.0, f64::max)
    }
}

/// Variance inflation factor of every column.
///
/// Column j is regressed (with intercept) on the remaining non-constant
/// columns. The centred design is reduced to its triangular QR factor `R`
/// once; each regression then runs on `R` (p×p) instead of the n-row data,
/// using a rank-revealing SVD so singular designs give the minimum-norm fit.
pub fn vif(x: &FeatureMatrix) -> Result<VifTable> {
    let p = x.ncols();
    if p < 2 {
        return Err(Error::invalid("VIF needs at least 2 features"));
    }
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid("VIF needs at least 2 rows"));
    }
    let active: Vec<usize> = (0..p).filter(|&j| !x.constant_columns()[j]).collect();
    let xc = linalg::centered(&x.values().select_columns(&active));
    let r = if n > active.len() {
        xc.qr().r()
    } else {
        xc
    };
    let q = active.len();
    let fits: Vec<(f64, f64)> = (0..q)
        .into_par_iter()
        .map(|k| regress_column(&r, k))
        .collect();

    let mut entries: Vec<VifEntry> = x
        .column_names()
        .iter()
        .map(|name| VifEntry {
            name: name.clone(),
            vif: None,
            r_squared: None,
            status: VifStatus::Constant,
        })
        .collect();
    for (k, &j) in active.iter().enumerate() {
        let (r2, v) = if q < 2 { (0.0, 1.0) } else { fits[k] };
        entries[j].r_squared = Some(r2);
        entries[j].vif = Some(v);
        entries[j].status = VifStatus::classify(v);
    }
    Ok(VifTable {
        entries,
        underdetermined: n < p + 1,
        rows_used: n,
    })
}

/// (R², VIF) of column `k` of `r` regressed on the other columns.
fn regress_column(r: &DMatrix<f64>, k: usize) -> (f64, f64) {
    let target: DVector<f64> = r.column(k).into_owned();
    let tss = target.norm_squared();
    if tss == 0.0 {
        return (0.0, 1.0);
    }
    let others = r.clone().remove_column(k);
    let fit = linalg::lstsq(&others, &target);
    let r2 = (1.0 - fit.rss / tss).clamp(0.0, 1.0);
    if r2 >= 1.0 - INFINITE_VIF_DELTA {
        (r2, f64::INFINITY)
    } else {
        (r2, 1.0 / (1.0 - r2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub vif_thresh: f64,
    pub rho_thresh: f64,
    /// Row cap for the VIF regressions; `None` uses every row.
    pub vif_sample_rows: Option<usize>,
    pub seed: u64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            vif_thresh: SEVERE_VIF,
            rho_thresh: DEFAULT_RHO_THRESH,
            vif_sample_rows: Some(DEFAULT_VIF_SAMPLE_ROWS),
            seed: 0,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.vif_thresh > 0.0) {
            return Err(Error::invalid("VIF threshold must be positive"));
        }
        if !(self.rho_thresh > 0.0 && self.rho_thresh <= 1.0) {
            return Err(Error::invalid("rho threshold must be in (0, 1]"));
        }
        Ok(())
    }
}

/// VIF on a seeded row subsample when the matrix exceeds the row cap.
pub fn vif_sampled(x: &FeatureMatrix, cfg: &AuditConfig) -> Result<VifTable> {
    match cfg.vif_sample_rows {
        Some(cap) if x.nrows() > cap => {
            let mut rng = seed::rng(cfg.seed, 0x5649_46);
            let mut rows = index::sample(&mut rng, x.nrows(), cap).into_vec();
            rows.sort_unstable();
            vif(&x.select_rows(&rows))
        }
        _ => vif(x),
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FlaggedSets {
    /// Features in at least one pair with |ρ| above the threshold.
    pub high_corr: Vec<String>,
    /// Features with VIF above the threshold (infinite included).
    pub high_vif: Vec<String>,
}

impl FlaggedSets {
    pub fn is_empty(&self) -> bool {
        self.high_corr.is_empty() && self.high_vif.is_empty()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub config: AuditConfig,
    pub correlation: CorrelationMatrix,
    pub clusters: Vec<Vec<usize>>,
    pub vif: VifTable,
    pub flagged: FlaggedSets,
}

impl AuditReport {
    pub fn column_names(&self) -> &[String] {
        &self.correlation.column_names
    }

    pub fn cluster_names(&self) -> Vec<Vec<String>> {
        let names = self.column_names();
        self.clusters
            .iter()
            .map(|c| c.iter().map(|&j| names[j].clone()).collect())
            .collect()
    }

    /// Any feature at or beyond the severe threshold.
    pub fn has_severe(&self) -> bool {
        self.vif
            .entries
            .iter()
            .any(|e| matches!(e.status, VifStatus::Severe | VifStatus::Infinite))
    }
}

pub fn audit(x: &FeatureMatrix, cfg: &AuditConfig) -> Result<AuditReport> {
    cfg.validate()?;
    let correlation = correlation_matrix(x)?;
    let clusters = correlation_clusters(&correlation, cfg.rho_thresh)?;
    let vif = vif_sampled(x, cfg)?;
    let flagged = flag(&correlation, &vif, cfg);
    Ok(AuditReport {
        config: *cfg,
        correlation,
        clusters,
        vif,
        flagged,
    })
}

fn flag(r: &CorrelationMatrix, vif: &VifTable, cfg: &AuditConfig) -> FlaggedSets {
    let p = r.len();
    let names = &r.column_names;
    let high_corr = (0..p)
        .filter(|&i| (0..p).any(|j| j != i && r.get(i, j).abs() > cfg.rho_thresh))
        .map(|i| names[i].clone())
        .collect();
    let high_vif = vif
        .entries
        .iter()
        .filter(|e| e.vif.is_some_and(|v| v > cfg.vif_thresh))
        .map(|e| e.name.clone())
        .collect();
    FlaggedSets { high_corr, high_vif }
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub matrix: FeatureMatrix,
    /// Removed feature names, in removal order.
    pub removed: Vec<String>,
    pub kept: Vec<String>,
}

/// Remove features until every VIF ≤ `vif_thresh` and every off-diagonal
/// |ρ| ≤ `rho_thresh`.
///
/// The VIF phase drops the largest VIF each round (ties: highest index).
/// The correlation phase drops the higher-indexed member of the first pair
/// above the threshold. VIF is recomputed after each removal.
pub fn prune_by_audit(x: &FeatureMatrix, report: &AuditReport, cfg: &AuditConfig) -> Result<PruneOutcome> {
    cfg.validate()?;
    if report.column_names() != x.column_names() {
        return Err(Error::invalid("audit report was computed on different columns"));
    }
    let mut keep: Vec<usize> = (0..x.ncols()).collect();
    let mut removed = Vec::new();
    let mut table = Some(report.vif.clone());
    let corr = correlation_matrix(x)?;

    loop {
        let current = x.select_columns(&keep);
        if keep.len() >= 2 {
            let t = match table.take() {
                Some(t) => t,
                None => vif_sampled(&current, cfg)?,
            };
            // Highest VIF, ties resolved towards the highest index.
            let worst = t
                .entries
                .iter()
                .enumerate()
                .filter_map(|(k, e)| e.vif.map(|v| (k, v)))
                .filter(|&(_, v)| v > cfg.vif_thresh)
                .max_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if let Some((k, _)) = worst {
                removed.push(x.column_names()[keep[k]].clone());
                keep.remove(k);
                if keep.is_empty() {
                    return Err(Error::invalid("pruning would remove every feature"));
                }
                continue;
            }
        }
        let pair = (0..keep.len()).find_map(|a| {
            ((a + 1)..keep.len()).find(|&b| corr.get(keep[a], keep[b]).abs() > cfg.rho_thresh)
        });
        match pair {
            Some(b) => {
                removed.push(x.column_names()[keep[b]].clone());
                keep.remove(b);
            }
            None => break,
        }
    }
    let matrix = x.select_columns(&keep);
    let kept = matrix.column_names().to_vec();
    Ok(PruneOutcome { matrix, removed, kept })
}
