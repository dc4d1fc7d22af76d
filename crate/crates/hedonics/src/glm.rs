//! Benchmark linear model: ordinary least squares with coefficient
//! standard errors, two-sided t-tests, and adjusted R-squared.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::data::{Dataset, FactorSpec, NormalizationStats};
use crate::inference::t_sf;

/// Condition-number threshold on the column-scaled design above which the
/// fit refuses to produce coefficients.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("design matrix is rank deficient; near-collinear columns: {0:?}")]
    RankDeficient(Vec<String>),
    #[error("need n > m + 1 observations, got n={n} for {m} factors")]
    TooFewObservations { n: usize, m: usize },
    #[error("response is constant; nothing to fit")]
    ConstantResponse,
    #[error("normal equations could not be factored")]
    SingularSystem,
}

/// OLS fit of log-price on an intercept plus all factor columns.
#[derive(Debug, Clone, PartialEq)]
pub struct GlmModel {
    factors: Vec<FactorSpec>,
    norm: NormalizationStats,
    /// Intercept first, then one coefficient per factor in roster order.
    pub beta: DVector<f64>,
    pub se: DVector<f64>,
    pub t_stats: DVector<f64>,
    pub p_values: DVector<f64>,
    pub fitted: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
    pub tss: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub df_resid: f64,
    pub n: usize,
}

impl GlmModel {
    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn factor_names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.name.clone()).collect()
    }

    pub fn norm(&self) -> &NormalizationStats {
        &self.norm
    }

    /// Prediction on columns already in model units (z-scores / 0-1 flags).
    pub fn predict_normalized(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut out = DVector::from_element(x.nrows(), self.beta[0]);
        for j in 0..self.factors.len() {
            let coef = self.beta[j + 1];
            for i in 0..x.nrows() {
                out[i] += coef * x[(i, j)];
            }
        }
        out
    }
}

fn design_matrix(dataset: &Dataset) -> DMatrix<f64> {
    let n = dataset.n();
    let m = dataset.m();
    let mut x = DMatrix::<f64>::zeros(n, m + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
    }
    for j in 0..m {
        for i in 0..n {
            x[(i, j + 1)] = dataset.x()[(i, j)];
        }
    }
    x
}

/// Checks the scaled design's condition number and names the columns with
/// large weight in the smallest-eigenvalue direction when it fails.
fn check_rank(x: &DMatrix<f64>, dataset: &Dataset) -> Result<(), GlmError> {
    let p = x.ncols();
    let mut scaled = x.clone();
    for j in 0..p {
        let norm = scaled.column(j).norm();
        if norm == 0.0 {
            return Err(GlmError::RankDeficient(vec![column_name(dataset, j)]));
        }
        scaled.column_mut(j).scale_mut(1.0 / norm);
    }
    let gram = scaled.transpose() * &scaled;
    let eig = gram.symmetric_eigen();
    let mut max_ev = f64::NEG_INFINITY;
    let mut min_ev = f64::INFINITY;
    let mut min_idx = 0;
    for (i, v) in eig.eigenvalues.iter().enumerate() {
        if *v > max_ev {
            max_ev = *v;
        }
        if *v < min_ev {
            min_ev = *v;
            min_idx = i;
        }
    }
    let cond = if min_ev > 0.0 {
        (max_ev / min_ev).sqrt()
    } else {
        f64::INFINITY
    };
    if cond > CONDITION_LIMIT {
        let dir = eig.eigenvectors.column(min_idx);
        let peak = dir.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let culprits: Vec<String> = (0..p)
            .filter(|&j| dir[j].abs() > 0.3 * peak)
            .map(|j| column_name(dataset, j))
            .collect();
        return Err(GlmError::RankDeficient(culprits));
    }
    Ok(())
}

fn column_name(dataset: &Dataset, j: usize) -> String {
    if j == 0 {
        "(Intercept)".to_string()
    } else {
        dataset.factors()[j - 1].name.clone()
    }
}

/// Fits the pure linear model by least squares and derives the per-factor
/// inference columns.
pub fn fit_glm(dataset: &Dataset) -> Result<GlmModel, GlmError> {
    let n = dataset.n();
    let m = dataset.m();
    let p = m + 1;
    if n <= p {
        return Err(GlmError::TooFewObservations { n, m });
    }
    let x = design_matrix(dataset);
    check_rank(&x, dataset)?;
    let y = dataset.y();
    let xtx = x.transpose() * &x;
    let xty = x.transpose() * y;
    let chol = Cholesky::new(xtx).ok_or(GlmError::SingularSystem)?;
    let beta = chol.solve(&xty);
    let xtx_inv = chol.inverse();
    let fitted = &x * &beta;
    let residuals = y - &fitted;
    let rss = residuals.dot(&residuals);
    let ybar = y.iter().sum::<f64>() / n as f64;
    let tss: f64 = y.iter().map(|v| (v - ybar) * (v - ybar)).sum();
    if tss <= 0.0 {
        return Err(GlmError::ConstantResponse);
    }
    let df_resid = (n - p) as f64;
    let sigma2 = rss / df_resid;
    let mut se = DVector::zeros(p);
    let mut t_stats = DVector::zeros(p);
    let mut p_values = DVector::zeros(p);
    for j in 0..p {
        se[j] = (sigma2 * xtx_inv[(j, j)]).sqrt();
        t_stats[j] = if se[j] > 0.0 { beta[j] / se[j] } else { 0.0 };
        p_values[j] = t_sf(t_stats[j], df_resid).unwrap_or(f64::NAN);
    }
    let r2 = 1.0 - rss / tss;
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / df_resid;
    Ok(GlmModel {
        factors: dataset.factors().to_vec(),
        norm: dataset.norm().clone(),
        beta,
        se,
        t_stats,
        p_values,
        fitted,
        residuals,
        rss,
        tss,
        r2,
        adj_r2,
        df_resid,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FactorCategory, FactorSpec};
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        ((rng.next_u64() >> 11) as f64 + 0.5) / 9007199254740992.0
    }

    fn dataset_from_columns(cols: Vec<Vec<f64>>, y: Vec<f64>) -> Dataset {
        let factors: Vec<FactorSpec> = (0..cols.len())
            .map(|j| FactorSpec::continuous(&format!("x{j}"), FactorCategory::Intrinsic))
            .collect();
        let n = y.len();
        let mut raw = DMatrix::<f64>::zeros(n, cols.len());
        for (j, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                raw[(i, j)] = *v;
            }
        }
        Dataset::from_raw(factors, raw, DVector::from_vec(y)).unwrap()
    }

    #[test]
    fn exact_linear_fit_has_unit_r2() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
        let d = dataset_from_columns(vec![x], y);
        let model = fit_glm(&d).unwrap();
        assert!((model.r2 - 1.0).abs() < 1e-12);
        assert!(model.residuals.iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn three_collinear_points_recover_slope() {
        // (0,0), (1,1), (2,2) plus a spare dimension of timing noise is not
        // needed: minimal case n=4 with the intercept requirement satisfied
        // by adding a fourth point on the same line.
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![0.0, 1.0, 2.0, 3.0];
        let d = dataset_from_columns(vec![x.clone()], y);
        let model = fit_glm(&d).unwrap();
        // slope is in z-units: beta_1 / sd(x) recovers the raw slope 1
        let sd = crate::data::ColumnStats::from_column(&x).unwrap().sd;
        assert!((model.beta[0] - 1.5).abs() < 1e-10); // intercept = mean(y)
        assert!((model.beta[1] / sd - 1.0).abs() < 1e-10);
    }

    #[test]
    fn matches_brute_force_normal_equations() {
        // independent oracle: explicit Gauss-Jordan inverse of X'X
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 50;
        let m = 3;
        let cols: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| uniform(&mut rng) * 10.0).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                1.0 + 0.5 * cols[0][i] - 0.2 * cols[1][i] + 0.05 * cols[2][i]
                    + (uniform(&mut rng) - 0.5)
            })
            .collect();
        let d = dataset_from_columns(cols, y);
        let model = fit_glm(&d).unwrap();

        let p = m + 1;
        let x = design_matrix(&d);
        let yv = d.y();
        let xtx = x.transpose() * &x;
        let inv = gauss_jordan_inverse(&xtx);
        let beta = &inv * (x.transpose() * yv);
        let resid = yv - &x * &beta;
        let rss = resid.dot(&resid);
        let sigma2 = rss / (n - p) as f64;
        for j in 0..p {
            let rel = (model.beta[j] - beta[j]).abs() / beta[j].abs().max(1e-12);
            assert!(rel < 1e-8, "beta[{j}]");
            let se = (sigma2 * inv[(j, j)]).sqrt();
            assert!((model.se[j] - se).abs() / se < 1e-8, "se[{j}]");
            let t = beta[j] / se;
            assert!((model.t_stats[j] - t).abs() / t.abs().max(1e-12) < 1e-8);
            let p_val = t_sf(t, (n - p) as f64).unwrap();
            assert!((model.p_values[j] - p_val).abs() < 1e-10);
        }
    }

    fn gauss_jordan_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = a.nrows();
        let mut aug = DMatrix::<f64>::zeros(n, 2 * n);
        for i in 0..n {
            for j in 0..n {
                aug[(i, j)] = a[(i, j)];
            }
            aug[(i, n + i)] = 1.0;
        }
        for col in 0..n {
            let mut pivot = col;
            for r in col + 1..n {
                if aug[(r, col)].abs() > aug[(pivot, col)].abs() {
                    pivot = r;
                }
            }
            if pivot != col {
                aug.swap_rows(pivot, col);
            }
            let pv = aug[(col, col)];
            for j in 0..2 * n {
                aug[(col, j)] /= pv;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[(r, col)];
                    for j in 0..2 * n {
                        aug[(r, j)] -= f * aug[(col, j)];
                    }
                }
            }
        }
        let mut inv = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                inv[(i, j)] = aug[(i, n + j)];
            }
        }
        inv
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        let cols: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..n).map(|_| uniform(&mut rng)).collect())
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 3.0 * cols[0][i] - cols[1][i] + uniform(&mut rng))
            .collect();
        let y_scaled: Vec<f64> = y.iter().map(|v| v * 7.0).collect();
        let m1 = fit_glm(&dataset_from_columns(cols.clone(), y)).unwrap();
        let m2 = fit_glm(&dataset_from_columns(cols, y_scaled)).unwrap();
        for j in 0..m1.beta.len() {
            assert!((m2.beta[j] - 7.0 * m1.beta[j]).abs() < 1e-10 * m1.beta[j].abs().max(1.0));
            assert!((m2.t_stats[j] - m1.t_stats[j]).abs() < 1e-10);
            assert!((m2.p_values[j] - m1.p_values[j]).abs() < 1e-10);
        }
        assert!((m2.r2 - m1.r2).abs() < 1e-10);
        assert!((m2.adj_r2 - m1.adj_r2).abs() < 1e-10);
    }

    #[test]
    fn pure_noise_column_never_lowers_r2() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 60;
        let x0: Vec<f64> = (0..n).map(|_| uniform(&mut rng)).collect();
        let y: Vec<f64> = x0.iter().map(|v| 2.0 * v + 0.3).collect();
        let noise: Vec<f64> = (0..n).map(|_| uniform(&mut rng)).collect();
        let base = fit_glm(&dataset_from_columns(vec![x0.clone()], y.clone())).unwrap();
        let bigger = fit_glm(&dataset_from_columns(vec![x0, noise], y)).unwrap();
        assert!(bigger.r2 >= base.r2 - 1e-12);
    }

    #[test]
    fn fitted_plus_residuals_reconstruct_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 30;
        let x0: Vec<f64> = (0..n).map(|_| uniform(&mut rng)).collect();
        let y: Vec<f64> = x0.iter().map(|v| v + uniform(&mut rng)).collect();
        let d = dataset_from_columns(vec![x0], y);
        let model = fit_glm(&d).unwrap();
        let recon = &model.fitted + &model.residuals;
        for i in 0..n {
            assert!((recon[i] - d.y()[i]).abs() < 1e-12);
        }
        // residual orthogonality to the design
        let x = design_matrix(&d);
        let xtr = x.transpose() * &model.residuals;
        let bound = 1e-8 * d.y().norm();
        assert!(xtr.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
        let factors = vec![
            FactorSpec::continuous("a", FactorCategory::Intrinsic),
            FactorSpec::continuous("b", FactorCategory::Intrinsic),
        ];
        let n = x.len();
        let mut raw = DMatrix::<f64>::zeros(n, 2);
        for i in 0..n {
            raw[(i, 0)] = x[i];
            raw[(i, 1)] = x[i];
        }
        let d = Dataset::from_raw(factors, raw, DVector::from_vec(y)).unwrap();
        match fit_glm(&d) {
            Err(GlmError::RankDeficient(cols)) => {
                assert!(cols.contains(&"a".to_string()) || cols.contains(&"b".to_string()));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }
}
