//! Dense least-squares helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `a * x ≈ b`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub rank: usize,
    /// Residual sum of squares `||a x - b||²`.
    pub rss: f64,
}

impl LeastSquares {
    pub fn rank_deficient(&self, ncols: usize) -> bool {
        self.rank < ncols
    }
}

fn svd_tolerance(singular_values: &DVector<f64>, rows: usize, cols: usize) -> f64 {
    let max_sv = singular_values.iter().cloned().fold(0.0_f64, f64::max);
    max_sv * (rows.max(cols) as f64) * f64::EPSILON
}

/// Solve by SVD directly; singular values below a relative rank tolerance
/// are treated as zero, which yields the minimum-norm solution.
fn svd_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, usize) {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return (DVector::zeros(0), 0);
    }
    let svd = a.clone().svd(true, true);
    let tol = svd_tolerance(&svd.singular_values, rows, cols);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let utb = u.transpose() * b;
    let mut scaled = DVector::zeros(svd.singular_values.len());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            scaled[k] = utb[k] / s;
        }
    }
    (v_t.transpose() * scaled, rank)
}

/// Minimum-norm least squares. Tall systems are first reduced with a
/// Householder QR so the SVD runs on the small triangular factor; the
/// minimiser set and its minimum-norm element are unchanged by the
/// orthogonal reduction.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> LeastSquares {
    let (rows, cols) = a.shape();
    assert_eq!(rows, b.len(), "lstsq: row count mismatch");
    let (solution, rank) = if rows > 2 * cols && cols > 0 {
        let qr = a.clone().qr();
        let r = qr.r();
        let mut qtb = b.clone();
        qr.q_tr_mul(&mut qtb);
        let qtb_head = qtb.rows(0, cols).into_owned();
        svd_lstsq(&r, &qtb_head)
    } else {
        svd_lstsq(a, b)
    };
    let rss = (a * &solution - b).norm_squared();
    LeastSquares {
        solution,
        rank,
        rss,
    }
}

/// Column means of a matrix.
pub fn column_means(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows().max(1) as f64;
    m.column_iter().map(|c| c.sum() / n).collect()
}

/// Copy of `m` with every column centred on its mean.
pub fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = column_means(m);
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    out
}

/// Sample (n - 1) variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Population (n) variance.
pub fn population_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Average ranks (1-based) with ties sharing their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of two equal-length slices (0 when either is constant).
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Spearman rank correlation using midranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&midranks(a), &midranks(b))
}
