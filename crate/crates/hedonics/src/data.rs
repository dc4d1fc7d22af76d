//! Core tabular types shared by the whole pipeline: factor descriptions,
//! normalization state, and the immutable `Dataset` every model consumes.
//!
//! Continuous factor columns are stored as z-scores (sample mean/sd with the
//! n-1 denominator); binary columns are stored as 0/1. The response is the
//! base-10 logarithm of the sale price.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this standard deviation a column is treated as constant.
pub const CONSTANT_SD_FLOOR: f64 = 1e-12;

/// Tolerance for the "z-scored column has mean 0, sd 1" invariant.
const ZSCORE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("factor '{0}' is constant (sd below {CONSTANT_SD_FLOOR:e}); cannot normalize")]
    ConstantColumn(String),
    #[error("factor '{factor}' is binary but contains value {value}")]
    BinaryValue { factor: String, value: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate factor name '{0}'")]
    DuplicateFactor(String),
    #[error("unknown factor '{0}'")]
    UnknownFactor(String),
    #[error("need n > m + 2 observations for m factors, got n={n}, m={m}")]
    TooFewObservations { n: usize, m: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("factor '{factor}' violates normalization invariant: {detail}")]
    NotNormalized { factor: String, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorKind {
    Continuous,
    Binary,
}

/// Reporting group of a factor. The ESG flags (waterfront, green rating,
/// accessibility) are grouped under `Esg` even though they are otherwise
/// intrinsic or extrinsic attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorCategory {
    Intrinsic,
    Extrinsic,
    Esg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub kind: FactorKind,
    pub category: FactorCategory,
}

impl FactorSpec {
    pub fn continuous(name: &str, category: FactorCategory) -> Self {
        Self {
            name: name.to_string(),
            kind: FactorKind::Continuous,
            category,
        }
    }

    pub fn binary(name: &str, category: FactorCategory) -> Self {
        Self {
            name: name.to_string(),
            kind: FactorKind::Binary,
            category,
        }
    }

    pub fn is_esg(&self) -> bool {
        self.category == FactorCategory::Esg
    }
}

/// The ten-factor roster used throughout the reports: seven intrinsic or
/// extrinsic continuous factors plus three binary ESG flags.
pub fn paper_roster() -> Vec<FactorSpec> {
    use FactorCategory::*;
    vec![
        FactorSpec::continuous("SqFt", Intrinsic),
        FactorSpec::continuous("Lot", Intrinsic),
        FactorSpec::continuous("Beds", Intrinsic),
        FactorSpec::continuous("Baths", Intrinsic),
        FactorSpec::continuous("Year", Intrinsic),
        FactorSpec::continuous("Lat", Extrinsic),
        FactorSpec::continuous("Long", Extrinsic),
        FactorSpec::binary("Water", Esg),
        FactorSpec::binary("Green", Esg),
        FactorSpec::binary("Access", Esg),
    ]
}

/// Sample mean and standard deviation of one raw column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub sd: f64,
}

impl ColumnStats {
    /// Computes mean and sd (n-1 denominator) of a raw column.
    pub fn from_column(raw: &[f64]) -> Result<Self, DataError> {
        if raw.len() < 2 {
            return Err(DataError::DimensionMismatch(
                "need at least 2 values for column statistics".into(),
            ));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("column statistics input".into()));
        }
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let ss: f64 = raw.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1.0)).sqrt();
        Ok(Self { mean, sd })
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Per-factor normalization state. Binary factors carry `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    stats: Vec<Option<ColumnStats>>,
}

impl NormalizationStats {
    pub fn new(stats: Vec<Option<ColumnStats>>) -> Self {
        Self { stats }
    }

    pub fn get(&self, j: usize) -> Option<&ColumnStats> {
        self.stats.get(j).and_then(|s| s.as_ref())
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    fn subset(&self, keep: &[usize]) -> Self {
        Self {
            stats: keep.iter().map(|&j| self.stats[j]).collect(),
        }
    }
}

/// Converts a raw column to z-scores using the given statistics.
pub fn normalize(raw: &[f64], stats: &ColumnStats) -> Result<Vec<f64>, DataError> {
    if stats.sd < CONSTANT_SD_FLOOR {
        return Err(DataError::ConstantColumn("<unnamed>".into()));
    }
    Ok(raw.iter().map(|v| (v - stats.mean) / stats.sd).collect())
}

/// Base-10 log transform applied to sale prices.
pub fn log_price(price: f64) -> Result<f64, DataError> {
    if !(price > 0.0) || !price.is_finite() {
        return Err(DataError::NonPositivePrice(price));
    }
    Ok(price.log10())
}

/// An immutable design matrix plus response. Construction validates every
/// invariant; all model fits share the dataset read-only.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    factors: Vec<FactorSpec>,
    x: DMatrix<f64>,
    y: DVector<f64>,
    norm: NormalizationStats,
}

impl Dataset {
    /// Builds a dataset from raw (unnormalized) columns: z-scores continuous
    /// columns, validates binary columns, and rejects constant columns.
    pub fn from_raw(
        factors: Vec<FactorSpec>,
        raw: DMatrix<f64>,
        y: DVector<f64>,
    ) -> Result<Self, DataError> {
        let m = factors.len();
        if raw.ncols() != m {
            return Err(DataError::DimensionMismatch(format!(
                "{} factors but {} columns",
                m,
                raw.ncols()
            )));
        }
        let n = raw.nrows();
        let mut x = DMatrix::<f64>::zeros(n, m);
        let mut stats = Vec::with_capacity(m);
        for (j, f) in factors.iter().enumerate() {
            let col: Vec<f64> = raw.column(j).iter().copied().collect();
            match f.kind {
                FactorKind::Continuous => {
                    let s = ColumnStats::from_column(&col)?;
                    if s.sd < CONSTANT_SD_FLOOR {
                        return Err(DataError::ConstantColumn(f.name.clone()));
                    }
                    let z = normalize(&col, &s)?;
                    for (i, v) in z.iter().enumerate() {
                        x[(i, j)] = *v;
                    }
                    stats.push(Some(s));
                }
                FactorKind::Binary => {
                    for (i, &v) in col.iter().enumerate() {
                        if v != 0.0 && v != 1.0 {
                            return Err(DataError::BinaryValue {
                                factor: f.name.clone(),
                                value: v,
                            });
                        }
                        x[(i, j)] = v;
                    }
                    if col.iter().all(|&v| v == col[0]) {
                        return Err(DataError::ConstantColumn(f.name.clone()));
                    }
                    stats.push(None);
                }
            }
        }
        Self::from_normalized(factors, x, y, NormalizationStats::new(stats))
    }

    /// Assembles a dataset from already-normalized columns, validating every
    /// invariant (finiteness, z-score means/sds, binary values, n > m + 2).
    pub fn from_normalized(
        factors: Vec<FactorSpec>,
        x: DMatrix<f64>,
        y: DVector<f64>,
        norm: NormalizationStats,
    ) -> Result<Self, DataError> {
        let m = factors.len();
        let n = x.nrows();
        if x.ncols() != m || norm.len() != m {
            return Err(DataError::DimensionMismatch(format!(
                "factors={}, columns={}, norm entries={}",
                m,
                x.ncols(),
                norm.len()
            )));
        }
        if y.len() != n {
            return Err(DataError::DimensionMismatch(format!(
                "{} rows but {} responses",
                n,
                y.len()
            )));
        }
        if n <= m + 2 {
            return Err(DataError::TooFewObservations { n, m });
        }
        for (idx, f) in factors.iter().enumerate() {
            if factors[..idx].iter().any(|g| g.name == f.name) {
                return Err(DataError::DuplicateFactor(f.name.clone()));
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite("response".into()));
        }
        for (j, f) in factors.iter().enumerate() {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            if col.iter().any(|v| !v.is_finite()) {
                return Err(DataError::NonFinite(format!("factor '{}'", f.name)));
            }
            match f.kind {
                FactorKind::Continuous => {
                    if norm.get(j).is_none() {
                        return Err(DataError::NotNormalized {
                            factor: f.name.clone(),
                            detail: "missing normalization statistics".into(),
                        });
                    }
                    let s = ColumnStats::from_column(&col)?;
                    if s.mean.abs() > ZSCORE_TOL {
                        return Err(DataError::NotNormalized {
                            factor: f.name.clone(),
                            detail: format!("column mean {} != 0", s.mean),
                        });
                    }
                    if (s.sd - 1.0).abs() > ZSCORE_TOL {
                        return Err(DataError::NotNormalized {
                            factor: f.name.clone(),
                            detail: format!("column sd {} != 1", s.sd),
                        });
                    }
                }
                FactorKind::Binary => {
                    for &v in &col {
                        if v != 0.0 && v != 1.0 {
                            return Err(DataError::BinaryValue {
                                factor: f.name.clone(),
                                value: v,
                            });
                        }
                    }
                }
            }
        }
        Ok(Self { factors, x, y, norm })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn m(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn norm(&self) -> &NormalizationStats {
        &self.norm
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn column_vec(&self, j: usize) -> Vec<f64> {
        self.x.column(j).iter().copied().collect()
    }

    /// New dataset with one factor removed (used by leave-one-out refits).
    pub fn drop_factor(&self, name: &str) -> Result<Self, DataError> {
        let j = self
            .factor_index(name)
            .ok_or_else(|| DataError::UnknownFactor(name.to_string()))?;
        let keep: Vec<usize> = (0..self.m()).filter(|&i| i != j).collect();
        self.select(&keep)
    }

    /// New dataset with factors reordered by name.
    pub fn with_factor_order(&self, names: &[&str]) -> Result<Self, DataError> {
        if names.len() != self.m() {
            return Err(DataError::DimensionMismatch(format!(
                "expected {} names, got {}",
                self.m(),
                names.len()
            )));
        }
        let mut order = Vec::with_capacity(names.len());
        for name in names {
            let j = self
                .factor_index(name)
                .ok_or_else(|| DataError::UnknownFactor(name.to_string()))?;
            if order.contains(&j) {
                return Err(DataError::DuplicateFactor(name.to_string()));
            }
            order.push(j);
        }
        self.select(&order)
    }

    fn select(&self, cols: &[usize]) -> Result<Self, DataError> {
        let n = self.n();
        let mut x = DMatrix::<f64>::zeros(n, cols.len());
        for (out_j, &j) in cols.iter().enumerate() {
            x.set_column(out_j, &self.x.column(j));
        }
        let factors = cols.iter().map(|&j| self.factors[j].clone()).collect();
        Self::from_normalized(factors, x, self.y.clone(), self.norm.subset(cols))
    }
}
