//! Collinearity-aware attribution filter: cluster correlated features and
//! replace their attributions with one aggregated value per cluster.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMatrix, MethodTag};
use crate::audit::{correlation_matrix, greedy_clusters, VifTable};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::fragility::rank_by_importance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Signed value of the member with the largest |φ| (ties: lowest index).
    Max,
    Sum,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            "sum" => Ok(Aggregation::Sum),
            other => Err(Error::invalid(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMapping {
    pub clusters: Vec<Vec<usize>>,
    pub names: Vec<Vec<String>>,
    pub threshold: f64,
    pub aggregation: Aggregation,
}

#[derive(Serialize)]
struct ClusterMappingJson<'a> {
    clusters: &'a [Vec<String>],
    threshold: f64,
    aggregation: Aggregation,
}

impl ClusterMapping {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// `{clusters: [[names]], threshold, aggregation}`.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ClusterMappingJson {
            clusters: &self.names,
            threshold: self.threshold,
            aggregation: self.aggregation,
        })?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredAttributionMatrix {
    pub values: DMatrix<f64>,
    pub cluster_names: Vec<String>,
    pub source_method: MethodTag,
}

impl FilteredAttributionMatrix {
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.cluster_names)?;
        for r in self.values.row_iter() {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Mean |value| per cluster.
    pub fn mean_abs(&self) -> Vec<f64> {
        let n = self.values.nrows().max(1) as f64;
        self.values.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>() / n).collect()
    }
}

/// How clusters are formed.
#[derive(Debug, Clone, Copy)]
pub enum ClusterRule<'a> {
    /// |ρ| with the cluster seed above the threshold.
    Correlation,
    /// Correlation rule, plus: features that both exceed the VIF threshold
    /// share a cluster.
    CorrelationOrSharedVif { vif: &'a VifTable, vif_thresh: f64 },
}

/// Build the cluster mapping from the correlations of `x`.
pub fn build_clusters(x: &FeatureMatrix, rho_thresh: f64, rule: ClusterRule<'_>, aggregation: Aggregation) -> Result<ClusterMapping> {
    if !(rho_thresh > 0.0 && rho_thresh <= 1.0) {
        return Err(Error::invalid(format!("rho threshold {rho_thresh} is not in (0, 1]")));
    }
    let r = correlation_matrix(x)?;
    let clusters = match rule {
        ClusterRule::Correlation => greedy_clusters(x.ncols(), |i, j| r.get(i, j).abs() > rho_thresh),
        ClusterRule::CorrelationOrSharedVif { vif, vif_thresh } => {
            if vif.entries.len() != x.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: x.ncols(),
                    found: vif.entries.len(),
                });
            }
            let high = |j: usize| vif.entries[j].vif.is_some_and(|v| v > vif_thresh);
            greedy_clusters(x.ncols(), |i, j| r.get(i, j).abs() > rho_thresh || (high(i) && high(j)))
        }
    };
    let names = clusters
        .iter()
        .map(|c| c.iter().map(|&j| x.column_names()[j].clone()).collect())
        .collect();
    Ok(ClusterMapping {
        clusters,
        names,
        threshold: rho_thresh,
        aggregation,
    })
}

/// Aggregate attributions according to an existing mapping.
pub fn apply_mapping(s: &AttributionMatrix, mapping: &ClusterMapping) -> Result<FilteredAttributionMatrix> {
    let p = s.ncols();
    let covered: usize = mapping.clusters.iter().map(Vec::len).sum();
    if covered != p || mapping.clusters.iter().flatten().any(|&j| j >= p) {
        return Err(Error::DimensionMismatch { expected: p, found: covered });
    }
    let n = s.nrows();
    let mut values = DMatrix::zeros(n, mapping.len());
    for (c, group) in mapping.clusters.iter().enumerate() {
        for i in 0..n {
            let members = group.iter().map(|&j| s.values[(i, j)]);
            values[(i, c)] = match mapping.aggregation {
                Aggregation::Mean => members.sum::<f64>() / group.len() as f64,
                Aggregation::Sum => members.sum::<f64>(),
                Aggregation::Max => {
                    let mut best = s.values[(i, group[0])];
                    for v in members.skip(1) {
                        if v.abs() > best.abs() {
                            best = v;
                        }
                    }
                    best
                }
            };
        }
    }
    let cluster_names = mapping.names.iter().map(|m| m.join("+")).collect();
    Ok(FilteredAttributionMatrix {
        values,
        cluster_names,
        source_method: s.method,
    })
}

/// Cluster the columns of `x` by |ρ| > `rho_thresh` (lowest unassigned
/// index seeds each cluster) and aggregate the columns of `s` per cluster.
pub fn caa_filter(
    s: &AttributionMatrix,
    x: &FeatureMatrix,
    rho_thresh: f64,
    aggregation: Aggregation,
) -> Result<(FilteredAttributionMatrix, ClusterMapping)> {
    if s.ncols() != x.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: s.ncols(),
        });
    }
    let mapping = build_clusters(x, rho_thresh, ClusterRule::Correlation, aggregation)?;
    let filtered = apply_mapping(s, &mapping)?;
    Ok((filtered, mapping))
}

/// Cluster indices by decreasing mean |value|, ties by cluster index.
pub fn cluster_importance_ranking(f: &FilteredAttributionMatrix) -> Result<Vec<usize>> {
    if f.values.ncols() == 0 {
        return Err(Error::Empty("no clusters to rank".into()));
    }
    Ok(rank_by_importance(&f.mean_abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attr(rows: &[Vec<f64>]) -> AttributionMatrix {
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        AttributionMatrix {
            values: DMatrix::from_row_slice(rows.len(), p, &flat),
            baseline: vec![0.0; p],
            method: MethodTag::LinearExact,
            model_ref: "t".into(),
            feature_names: (0..p).map(|j| format!("f{j}")).collect(),
        }
    }

    fn features(cols: &[Vec<f64>]) -> FeatureMatrix {
        let n = cols[0].len();
        let m = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        FeatureMatrix::new(m, (0..cols.len()).map(|j| format!("f{j}")).collect()).unwrap()
    }

    fn pair_data() -> FeatureMatrix {
        // f0 and f1 perfectly correlated, f2 orthogonal to both.
        features(&[vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 4.0, 6.0, 8.0], vec![1.0, -1.0, -1.0, 1.0]])
    }

    #[test]
    fn singletons_are_identity() {
        let x = features(&[vec![1.0, -1.0, 1.0, -1.0], vec![1.0, 1.0, -1.0, -1.0]]);
        let s = attr(&[vec![0.3, -0.5], vec![1.0, 2.0], vec![0.0, 0.1], vec![-4.0, 0.2]]);
        for agg in [Aggregation::Mean, Aggregation::Max, Aggregation::Sum] {
            let (f, m) = caa_filter(&s, &x, 0.85, agg).unwrap();
            assert_eq!(m.clusters, vec![vec![0], vec![1]]);
            assert_eq!(f.values, s.values);
        }
    }

    #[test]
    fn aggregation_trace() {
        let x = pair_data();
        let s = attr(&[vec![0.3, -0.5, 0.7], vec![0.0, 0.0, 0.0], vec![1.0, 1.0, 1.0], vec![-2.0, 1.0, 0.5]]);
        let (f, m) = caa_filter(&s, &x, 0.85, Aggregation::Max).unwrap();
        assert_eq!(m.clusters, vec![vec![0, 1], vec![2]]);
        assert_eq!(f.cluster_names, vec!["f0+f1".to_string(), "f2".to_string()]);
        assert_eq!(f.values[(0, 0)], -0.5);
        assert_eq!(f.values[(3, 0)], -2.0);
        // equal magnitude: lowest member index wins
        let s2 = attr(&[vec![1.0, -1.0, 0.0], vec![-1.0, 1.0, 0.0], vec![0.0; 3], vec![0.0; 3]]);
        let (f2, _) = caa_filter(&s2, &x, 0.85, Aggregation::Max).unwrap();
        assert_eq!((f2.values[(0, 0)], f2.values[(1, 0)]), (1.0, -1.0));

        let (f, _) = caa_filter(&s, &x, 0.85, Aggregation::Mean).unwrap();
        assert!((f.values[(0, 0)] + 0.1).abs() < 1e-15);
        let (f, _) = caa_filter(&s, &x, 0.85, Aggregation::Sum).unwrap();
        assert!((f.values[(0, 0)] + 0.2).abs() < 1e-15);
        for i in 0..4 {
            assert!((f.values.row(i).sum() - s.values.row(i).sum()).abs() < 1e-12);
        }
    }

    #[test]
    fn column_mismatch() {
        let s = attr(&[vec![0.3, -0.5]]);
        assert!(caa_filter(&s, &pair_data(), 0.85, Aggregation::Mean).is_err());
    }

    #[test]
    fn ranking() {
        let f = FilteredAttributionMatrix {
            values: DMatrix::from_row_slice(2, 3, &[0.1, 0.4, 0.1, -0.1, -0.4, 0.1]),
            cluster_names: vec!["a".into(), "b".into(), "c".into()],
            source_method: MethodTag::LinearExact,
        };
        assert_eq!(cluster_importance_ranking(&f).unwrap(), vec![1, 0, 2]);
        let one = FilteredAttributionMatrix {
            values: DMatrix::from_row_slice(1, 1, &[0.2]),
            cluster_names: vec!["a".into()],
            source_method: MethodTag::LinearExact,
        };
        assert_eq!(cluster_importance_ranking(&one).unwrap(), vec![0]);
    }

    #[test]
    fn threshold_one_groups_only_exact_duplicates() {
        let x = features(&[vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.0], vec![1.0, 2.0, 3.0, 4.5]]);
        let m = build_clusters(&x, 1.0, ClusterRule::Correlation, Aggregation::Mean).unwrap();
        // ρ ≤ 1 never exceeds 1, so nothing clusters at the limit itself
        assert_eq!(m.clusters.len(), 3);
        let m = build_clusters(&x, 1.0 - 1e-12, ClusterRule::Correlation, Aggregation::Mean).unwrap();
        assert_eq!(m.clusters, vec![vec![0, 1], vec![2]]);
        assert!(build_clusters(&x, 1.5, ClusterRule::Correlation, Aggregation::Mean).is_err());
    }

    #[test]
    fn mapping_json_shape() {
        let m = build_clusters(&pair_data(), 0.85, ClusterRule::Correlation, Aggregation::Sum).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["clusters"][0], serde_json::json!(["f0", "f1"]));
        assert_eq!(v["aggregation"], "sum");
    }
}
