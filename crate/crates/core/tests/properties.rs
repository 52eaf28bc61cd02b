//! Property tests over randomly generated inputs.

mod common;

use fragility_core::attribution::{kernel_shap_fn, linear_shap, MethodTag};
use fragility_core::audit::{audit, correlation_clusters, correlation_matrix, prune_by_audit, vif, AuditConfig};
use fragility_core::caa::{caa_filter, Aggregation};
use fragility_core::data::bootstrap_indices;
use fragility_core::fragility::{fragility_scores, kendall_tau};
use fragility_core::models::fit_ols;
use fragility_core::{AttributionMatrix, BootstrapPlan, FeatureMatrix, KernelConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// n×p matrix with column j mixing in `share` of column 0.
fn design(n: usize, p: usize, share: f64, values: &[f64]) -> FeatureMatrix {
    let base = DMatrix::from_column_slice(n, p, &values[..n * p]);
    let mixed = DMatrix::from_fn(n, p, |i, j| if j == 0 { base[(i, 0)] } else { share * base[(i, 0)] + base[(i, j)] });
    FeatureMatrix::unnamed(mixed).unwrap()
}

fn values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, len)
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn clusters_partition_features(share in 0.0f64..3.0, v in values(30 * 6), thresh in 0.3f64..1.0) {
        let x = design(30, 6, share, &v);
        let r = correlation_matrix(&x).unwrap();
        let clusters = correlation_clusters(&r, thresh).unwrap();
        let mut seen: Vec<usize> = clusters.iter().flatten().copied().collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn vif_is_at_least_one(share in 0.0f64..3.0, v in values(40 * 5)) {
        let x = design(40, 5, share, &v);
        for e in vif(&x).unwrap().entries {
            if let Some(val) = e.vif {
                prop_assert!(val >= 1.0 - 1e-9);
            }
        }
    }

    #[test]
    fn pruning_meets_both_thresholds(share in 0.0f64..6.0, v in values(40 * 6)) {
        let x = design(40, 6, share, &v);
        let cfg = AuditConfig::default();
        let out = prune_by_audit(&x, &audit(&x, &cfg).unwrap(), &cfg).unwrap();
        prop_assert_eq!(out.kept.len() + out.removed.len(), 6);
        if out.matrix.ncols() >= 2 {
            let r = correlation_matrix(&out.matrix).unwrap();
            prop_assert!(r.max_abs_off_diagonal() <= cfg.rho_thresh);
            prop_assert!(vif(&out.matrix).unwrap().max_vif() <= cfg.vif_thresh);
        }
    }

    #[test]
    fn sum_aggregation_preserves_row_sums(share in 0.0f64..4.0, v in values(20 * 5), phi in values(20 * 5)) {
        let x = design(20, 5, share, &v);
        let s = AttributionMatrix {
            values: DMatrix::from_row_slice(20, 5, &phi),
            baseline: vec![0.0; 5],
            method: MethodTag::LinearExact,
            model_ref: "p".into(),
            feature_names: x.column_names().to_vec(),
        };
        let (f, _) = caa_filter(&s, &x, 0.85, Aggregation::Sum).unwrap();
        for i in 0..20 {
            let a: f64 = s.values.row(i).sum();
            let b: f64 = f.values.row(i).sum();
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn kendall_tau_matches_pair_counts(a in permutation(12), b in permutation(12)) {
        let t = kendall_tau(&a, &b).unwrap();
        prop_assert_eq!(t, common::tau_pairs(&a, &b));
        prop_assert_eq!(t, kendall_tau(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&t));
        let rev: Vec<usize> = a.iter().rev().copied().collect();
        prop_assert_eq!(kendall_tau(&a, &rev).unwrap(), -1.0);
    }

    #[test]
    fn fragility_is_nonnegative(phi in prop::collection::vec(values(12), 2..6)) {
        let samples: Vec<AttributionMatrix> = phi
            .iter()
            .map(|v| AttributionMatrix {
                values: DMatrix::from_row_slice(3, 4, v),
                baseline: vec![0.0; 4],
                method: MethodTag::LinearExact,
                model_ref: "p".into(),
                feature_names: (0..4).map(|j| format!("x{j}")).collect(),
            })
            .collect();
        for f in fragility_scores(&samples, 1e-8).unwrap().features {
            prop_assert!(f.fragility >= 0.0 && f.var_phi >= 0.0 && f.mean_abs_phi >= 0.0);
        }
    }

    #[test]
    fn linear_shap_is_efficient(v in values(30 * 4), y in values(30)) {
        let x = design(30, 4, 0.5, &v);
        let m = fit_ols(&x, &y).unwrap();
        let mu = x.current_means();
        let phi = linear_shap(&m, &x, &mu).unwrap();
        for i in 0..30 {
            let gap = m.raw(&x.row(i)) - m.raw(&mu);
            prop_assert!((phi.values.row(i).sum() - gap).abs() <= 1e-9);
        }
    }

    #[test]
    fn kernel_shap_is_efficient(point in values(5), bg in values(3 * 5), seed in 0u64..1000) {
        let f = |v: &[f64]| v[0] * v[1] + (v[2] - v[3]).sin() + v[4].powi(2);
        let x = FeatureMatrix::unnamed(DMatrix::from_row_slice(1, 5, &point)).unwrap();
        let background = FeatureMatrix::unnamed(DMatrix::from_row_slice(3, 5, &bg)).unwrap();
        let cfg = KernelConfig { num_coalitions: 12, background_size: 3, seed, ..KernelConfig::default() };
        let phi = kernel_shap_fn(f, &x, &background, &cfg).unwrap();
        let base: f64 = (0..3).map(|i| f(&background.row(i))).sum::<f64>() / 3.0;
        prop_assert!((phi.values.row(0).sum() - (f(&point) - base)).abs() <= 1e-8);
    }

    #[test]
    fn bootstrap_indices_are_in_range_and_seeded(n in 1usize..200, r in 2usize..6, m in 1usize..300, seed in any::<u64>()) {
        let plan = BootstrapPlan::new(r, m, seed).unwrap();
        let a = bootstrap_indices(n, &plan).unwrap();
        prop_assert_eq!(a.len(), r);
        prop_assert!(a.iter().all(|idx| idx.len() == m && idx.iter().all(|&i| i < n)));
        prop_assert_eq!(a, bootstrap_indices(n, &plan).unwrap());
    }

    #[test]
    fn standardisation_invariant(v in values(25 * 3), shift in -100.0f64..100.0, scale in 0.1f64..50.0) {
        let raw = DMatrix::from_column_slice(25, 3, &v).map(|e| e * scale + shift);
        let x = FeatureMatrix::unnamed(raw).unwrap();
        let z = x.standardize().unwrap();
        prop_assert!(z.check_standardized().is_ok());
    }
}
