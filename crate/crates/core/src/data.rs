//! Tabular ingestion: CSV loading with one-hot encoding, z-scoring,
//! stratified splits and bootstrap index plans.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Tolerance for the standardisation invariants.
const STANDARDIZE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    OneHot { origin: String },
}

/// Dense n×p design matrix with column metadata.
///
/// Immutable once built; every transforming operation returns a new matrix.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    values: DMatrix<f64>,
    column_names: Vec<String>,
    column_kinds: Vec<ColumnKind>,
    standardized: bool,
    column_means: Vec<f64>,
    column_stds: Vec<f64>,
    constant: Vec<bool>,
}

impl FeatureMatrix {
    /// Build a numeric matrix; all columns are tagged [`ColumnKind::Numeric`].
    pub fn new(values: DMatrix<f64>, column_names: Vec<String>) -> Result<Self> {
        let kinds = vec![ColumnKind::Numeric; column_names.len()];
        Self::with_kinds(values, column_names, kinds)
    }

    pub fn with_kinds(
        values: DMatrix<f64>,
        column_names: Vec<String>,
        column_kinds: Vec<ColumnKind>,
    ) -> Result<Self> {
        let p = values.ncols();
        if column_names.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: column_names.len(),
            });
        }
        if column_kinds.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: column_kinds.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::invalid(format!("duplicate column name `{name}`")));
            }
        }
        if let Some((idx, _)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            let (row, col) = (idx % values.nrows(), idx / values.nrows());
            return Err(Error::invalid(format!(
                "non-finite value at row {row}, column `{}`",
                column_names[col]
            )));
        }
        let (column_means, column_stds) = column_stats(&values);
        let constant = column_stds.iter().map(|&s| s == 0.0).collect();
        Ok(FeatureMatrix {
            values,
            column_names,
            column_kinds,
            standardized: false,
            column_means,
            column_stds,
            constant,
        })
    }

    /// Convenience constructor from row-major data.
    pub fn from_rows(rows: &[Vec<f64>], column_names: Vec<String>) -> Result<Self> {
        let p = column_names.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: bad.len(),
            });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), p, &flat), column_names)
    }

    /// Matrix with generated names `x0..x{p-1}`.
    pub fn unnamed(values: DMatrix<f64>) -> Result<Self> {
        let names = (0..values.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(values, names)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn column_kinds(&self) -> &[ColumnKind] {
        &self.column_kinds
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Per-column means, in original units when standardised.
    pub fn column_means(&self) -> &[f64] {
        &self.column_means
    }

    /// Per-column sample standard deviations, in original units when standardised.
    pub fn column_stds(&self) -> &[f64] {
        &self.column_stds
    }

    pub fn constant_columns(&self) -> &[bool] {
        &self.constant
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|n| n == name)
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.column(j).iter().copied().collect()
    }

    /// Means of the current values (zero for standardised columns).
    pub fn current_means(&self) -> Vec<f64> {
        crate::linalg::column_means(&self.values)
    }

    /// Rows in the given order (repeats allowed). A standardised matrix keeps
    /// its transform statistics; a raw one gets statistics of the subset.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let values = self.values.select_rows(indices);
        let (column_means, column_stds, constant) = if self.standardized {
            (self.column_means.clone(), self.column_stds.clone(), self.constant.clone())
        } else {
            let (m, s) = column_stats(&values);
            let c = s.iter().map(|&v| v == 0.0).collect();
            (m, s, c)
        };
        FeatureMatrix {
            values,
            column_names: self.column_names.clone(),
            column_kinds: self.column_kinds.clone(),
            standardized: self.standardized,
            column_means,
            column_stds,
            constant,
        }
    }

    pub fn select_columns(&self, indices: &[usize]) -> FeatureMatrix {
        let pick = |v: &[f64]| indices.iter().map(|&j| v[j]).collect::<Vec<_>>();
        FeatureMatrix {
            values: self.values.select_columns(indices),
            column_names: indices.iter().map(|&j| self.column_names[j].clone()).collect(),
            column_kinds: indices.iter().map(|&j| self.column_kinds[j].clone()).collect(),
            standardized: self.standardized,
            column_means: pick(&self.column_means),
            column_stds: pick(&self.column_stds),
            constant: indices.iter().map(|&j| self.constant[j]).collect(),
        }
    }

    /// Select columns by name, in the order given.
    pub fn select_named(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_columns(&idx))
    }

    /// Per-column z-score using the sample standard deviation. Constant
    /// columns become all-zero and stay flagged.
    pub fn standardize(&self) -> Result<FeatureMatrix> {
        if self.standardized {
            return Err(Error::invalid("matrix is already standardized"));
        }
        let out = self.apply_transform(&self.column_means, &self.column_stds);
        debug_assert!(out.check_standardized().is_ok());
        Ok(out)
    }

    /// Standardise with the statistics of another (training) matrix.
    pub fn standardize_like(&self, reference: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.standardized {
            return Err(Error::invalid("matrix is already standardized"));
        }
        if reference.column_names != self.column_names {
            return Err(Error::invalid(
                "reference matrix has different columns than the matrix to transform",
            ));
        }
        let mut out = self.apply_transform(&reference.column_means, &reference.column_stds);
        out.constant = reference.constant.clone();
        Ok(out)
    }

    fn apply_transform(&self, means: &[f64], stds: &[f64]) -> FeatureMatrix {
        let mut values = self.values.clone();
        for (j, mut col) in values.column_iter_mut().enumerate() {
            if stds[j] == 0.0 {
                col.fill(0.0);
            } else {
                col.apply(|v| *v = (*v - means[j]) / stds[j]);
            }
        }
        FeatureMatrix {
            values,
            column_names: self.column_names.clone(),
            column_kinds: self.column_kinds.clone(),
            standardized: true,
            column_means: means.to_vec(),
            column_stds: stds.to_vec(),
            constant: stds.iter().map(|&s| s == 0.0).collect(),
        }
    }

    /// Verify the z-score invariant on every non-constant column.
    pub fn check_standardized(&self) -> Result<()> {
        let (means, stds) = column_stats(&self.values);
        for j in 0..self.ncols() {
            if self.constant[j] {
                continue;
            }
            if means[j].abs() > STANDARDIZE_TOL || (stds[j] - 1.0).abs() > STANDARDIZE_TOL {
                return Err(Error::Numerical(format!(
                    "column `{}` has mean {} and std {} after standardisation",
                    self.column_names[j], means[j], stds[j]
                )));
            }
        }
        Ok(())
    }

    /// Write as CSV with a header row; values use Rust's shortest
    /// round-trip float formatting.
    pub fn write_csv(&self, path: impl AsRef<Path>, labels: Option<&LabelVector>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = self.column_names.clone();
        if labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for i in 0..self.nrows() {
            let mut rec: Vec<String> = self.values.row(i).iter().map(|v| v.to_string()).collect();
            if let Some(l) = labels {
                rec.push(l.values()[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

fn column_stats(values: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    values
        .column_iter()
        .map(|c| {
            let v: Vec<f64> = c.iter().copied().collect();
            let mean = v.iter().sum::<f64>() / v.len().max(1) as f64;
            let std = crate::linalg::sample_variance(&v).sqrt();
            // Treat columns whose spread is pure rounding noise as constant.
            let std = if std <= 1e-14 * mean.abs().max(1.0) { 0.0 } else { std };
            (mean, std)
        })
        .unzip()
}

/// Binary labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(values: Vec<u8>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("label {v} is not binary")));
        }
        Ok(LabelVector(values))
    }

    /// Parse from reals that must be exactly 0 or 1.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        values
            .iter()
            .map(|&v| match v {
                v if v == 0.0 => Ok(0),
                v if v == 1.0 => Ok(1),
                v => Err(Error::invalid(format!("label {v} is not binary"))),
            })
            .collect::<Result<Vec<u8>>>()
            .map(LabelVector)
    }

    pub fn values(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn count_positive(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.count_positive();
        pos > 0 && pos < self.0.len()
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector(indices.iter().map(|&i| self.0[i]).collect())
    }
}

/// Dataset layout: which column is the label, which are categorical and
/// which are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub label: String,
    #[serde(default)]
    pub categorical: Vec<String>,
    #[serde(default)]
    pub drop: Vec<String>,
}

impl DatasetSchema {
    pub fn with_label(label: impl Into<String>) -> Self {
        DatasetSchema {
            label: label.into(),
            categorical: Vec::new(),
            drop: Vec::new(),
        }
    }

    /// Layout of the public UNSW-NB15 training/testing CSVs.
    pub fn unsw_nb15() -> Self {
        DatasetSchema {
            label: "label".into(),
            categorical: vec!["proto".into(), "service".into(), "state".into()],
            drop: vec!["id".into(), "attack_cat".into()],
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Bootstrap resampling plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub num_resamples: usize,
    pub sample_size: usize,
    pub seed: u64,
}

impl BootstrapPlan {
    pub fn new(num_resamples: usize, sample_size: usize, seed: u64) -> Result<Self> {
        let plan = BootstrapPlan {
            num_resamples,
            sample_size,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_resamples < 2 {
            return Err(Error::invalid("bootstrap needs at least 2 resamples"));
        }
        if self.sample_size == 0 {
            return Err(Error::invalid("bootstrap sample size must be positive"));
        }
        Ok(())
    }

    /// Seed used for resample `index`.
    pub fn resample_seed(&self, index: usize) -> u64 {
        seed::derive(self.seed, index as u64)
    }
}

/// Load a CSV into features and labels according to `schema`.
///
/// Categorical columns are one-hot encoded as `<col>_<value>` with values in
/// lexicographic order; dropped columns are ignored entirely.
pub fn load_csv(path: impl AsRef<Path>, schema: &DatasetSchema) -> Result<(FeatureMatrix, LabelVector)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// [`load_csv`] over any reader.
pub fn read_csv<R: std::io::Read>(reader: R, schema: &DatasetSchema) -> Result<(FeatureMatrix, LabelVector)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Empty("csv has no header".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| *h == schema.label)
        .ok_or_else(|| Error::MissingColumn(schema.label.clone()))?;
    for c in schema.categorical.iter() {
        if !headers.contains(c) {
            return Err(Error::MissingColumn(c.clone()));
        }
    }
    let drop: BTreeSet<&str> = schema.drop.iter().map(String::as_str).collect();
    let categorical: BTreeSet<&str> = schema.categorical.iter().map(String::as_str).collect();

    let records: Vec<csv::StringRecord> = rdr.records().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::Empty("csv has no data rows".into()));
    }

    enum Slot {
        Numeric(usize),
        Categorical(usize),
    }
    let mut slots = Vec::new();
    for (j, h) in headers.iter().enumerate() {
        if j == label_idx || drop.contains(h.as_str()) {
            continue;
        }
        if categorical.contains(h.as_str()) {
            slots.push(Slot::Categorical(j));
        } else {
            slots.push(Slot::Numeric(j));
        }
    }

    let field = |row: usize, rec: &csv::StringRecord, j: usize| -> Result<String> {
        match rec.get(j) {
            Some(s) if !s.is_empty() => Ok(s.to_string()),
            _ => Err(Error::MissingValue {
                row,
                column: headers[j].clone(),
            }),
        }
    };

    // Category levels, sorted for a stable column order.
    let mut levels: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for slot in &slots {
        if let Slot::Categorical(j) = slot {
            let mut set = BTreeSet::new();
            for (row, rec) in records.iter().enumerate() {
                set.insert(field(row, rec, *j)?);
            }
            levels.insert(*j, set.into_iter().collect());
        }
    }

    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for slot in &slots {
        match slot {
            Slot::Numeric(j) => {
                names.push(headers[*j].clone());
                kinds.push(ColumnKind::Numeric);
            }
            Slot::Categorical(j) => {
                for level in &levels[j] {
                    names.push(format!("{}_{}", headers[*j], level));
                    kinds.push(ColumnKind::OneHot {
                        origin: headers[*j].clone(),
                    });
                }
            }
        }
    }

    let n = records.len();
    let p = names.len();
    let mut values = DMatrix::zeros(n, p);
    let mut labels = Vec::with_capacity(n);
    for (row, rec) in records.iter().enumerate() {
        let mut col = 0;
        for slot in &slots {
            match slot {
                Slot::Numeric(j) => {
                    let raw = field(row, rec, *j)?;
                    values[(row, col)] = parse_number(&raw, row, &headers[*j])?;
                    col += 1;
                }
                Slot::Categorical(j) => {
                    let raw = field(row, rec, *j)?;
                    let lv = &levels[j];
                    let pos = lv.binary_search(&raw).expect("level collected above");
                    values[(row, col + pos)] = 1.0;
                    col += lv.len();
                }
            }
        }
        let raw = field(row, rec, label_idx)?;
        let v = parse_number(&raw, row, &schema.label)?;
        labels.push(v);
    }
    let x = FeatureMatrix::with_kinds(values, names, kinds)?;
    let y = LabelVector::from_f64(&labels)?;
    Ok((x, y))
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

/// `plan.num_resamples` index vectors drawn uniformly with replacement from
/// `0..n`. Resample `r` uses its own seed derived from `plan.seed`.
pub fn bootstrap_indices(n: usize, plan: &BootstrapPlan) -> Result<Vec<Vec<usize>>> {
    if n == 0 {
        return Err(Error::Empty("cannot bootstrap an empty dataset".into()));
    }
    plan.validate()?;
    Ok((0..plan.num_resamples)
        .map(|r| {
            let mut rng = seed::rng(plan.seed, r as u64);
            (0..plan.sample_size).map(|_| rng.random_range(0..n)).collect()
        })
        .collect())
}

/// Train/test partition produced by [`train_test_split`].
#[derive(Debug, Clone)]
pub struct Split {
    pub train_x: FeatureMatrix,
    pub train_y: LabelVector,
    pub test_x: FeatureMatrix,
    pub test_y: LabelVector,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// Stratified split: each class contributes `round(fraction * count)`
/// instances to the test side (at least one, leaving at least one for
/// training).
pub fn train_test_split(x: &FeatureMatrix, y: &LabelVector, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid(format!("test fraction {test_fraction} is not in (0, 1)")));
    }
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in 0..=1u8 {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y.values()[i] == class).collect();
        if idx.len() < 2 {
            return Err(Error::invalid(format!(
                "class {class} has {} instance(s); stratified split needs at least 2",
                idx.len()
            )));
        }
        let mut rng = seed::rng(seed, class as u64);
        idx.shuffle(&mut rng);
        let k = ((test_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split {
        train_x: x.select_rows(&train),
        train_y: y.select(&train),
        test_x: x.select_rows(&test),
        test_y: y.select(&test),
        train_indices: train,
        test_indices: test,
    })
}
