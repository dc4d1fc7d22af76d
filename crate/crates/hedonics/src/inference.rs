//! Distribution tail functions and per-term significance tests.
//!
//! Student-t and F upper tails are computed through the regularized
//! incomplete beta function, evaluated by a Lentz-style continued fraction
//! with a power-series fallback. Fractional degrees of freedom (from smooth
//! terms) are handled natively.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::gam::{fit_gam, GamConfig, GamError, GamModel};
use crate::glm::GlmModel;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("degrees of freedom must be positive and finite, got {0}")]
    BadDegreesOfFreedom(f64),
    #[error("statistic must be finite, got {0}")]
    BadStatistic(f64),
    #[error("incomplete beta arguments out of range: a={a}, b={b}, x={x}")]
    BadBetaArgs { a: f64, b: f64, x: f64 },
}

/// Significance marker used by the report tables: "***" iff p < 0.001.
pub fn stars_for(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else {
        ""
    }
}

/// ln Gamma(x) for x > 0 (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection formula
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Continued fraction for the incomplete beta (modified Lentz algorithm).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 400;
    const EPS: f64 = 1e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Power series for I_x(a, b), used when b*x is small (cephes-style fallback).
fn beta_series(a: f64, b: f64, x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0 / a;
    let mut n = 1.0;
    loop {
        term *= (n - b) * x / n;
        let v = term / (a + n);
        sum += v;
        if v.abs() < 1e-17 * sum.abs() || n > 10_000.0 {
            break;
        }
        n += 1.0;
    }
    let ln_front = a * x.ln() - ln_beta(a, b);
    if sum <= 0.0 {
        return 0.0;
    }
    (ln_front + sum.ln()).exp()
}

/// Regularized incomplete beta function I_x(a, b).
pub fn reg_inc_beta(a: f64, b: f64, x: f64) -> Result<f64, InferenceError> {
    if !(a > 0.0) || !(b > 0.0) || !(0.0..=1.0).contains(&x) || !x.is_finite() {
        return Err(InferenceError::BadBetaArgs { a, b, x });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    if b * x <= 1.0 && x <= 0.95 {
        return Ok(beta_series(a, b, x).clamp(0.0, 1.0));
    }
    let value = if x < (a + 1.0) / (a + b + 2.0) {

        let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
        (ln_front.exp() / a) * beta_cf(a, b, x)
    } else {
        1.0 - reg_inc_beta(b, a, 1.0 - x)?
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Two-sided Student-t tail probability P(|T_df| >= |t|).
pub fn t_sf(t: f64, df: f64) -> Result<f64, InferenceError> {
    if !(df > 0.0) || !df.is_finite() {
        return Err(InferenceError::BadDegreesOfFreedom(df));
    }
    if !t.is_finite() {
        return Err(InferenceError::BadStatistic(t));
    }
    let x = df / (df + t * t);
    reg_inc_beta(0.5 * df, 0.5, x)
}

/// Upper-tail F probability P(F_{df1, df2} >= f); fractional df allowed.
pub fn f_sf(f: f64, df1: f64, df2: f64) -> Result<f64, InferenceError> {
    if !(df1 > 0.0) || !df1.is_finite() {
        return Err(InferenceError::BadDegreesOfFreedom(df1));
    }
    if !(df2 > 0.0) || !df2.is_finite() {
        return Err(InferenceError::BadDegreesOfFreedom(df2));
    }
    if !(f >= 0.0) || !f.is_finite() {
        return Err(InferenceError::BadStatistic(f));
    }
    let x = df2 / (df2 + df1 * f);
    reg_inc_beta(0.5 * df2, 0.5 * df1, x)
}

/// One factor's significance test, for either model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermTest {
    pub factor: String,
    /// t value for linear-coefficient tests, F value for smooth-term tests.
    pub statistic: f64,
    pub df1: f64,
    pub df2: f64,
    pub p_value: f64,
    /// "***" iff p < 0.001, else empty.
    pub stars: String,
    /// Set when the test could not be computed cleanly (non-convergent
    /// reduced fit or non-positive df); the p-value is then a fallback.
    pub unreliable: bool,
}

impl TermTest {
    fn new(factor: &str, statistic: f64, df1: f64, df2: f64, p: f64, unreliable: bool) -> Self {
        Self {
            factor: factor.to_string(),
            statistic,
            df1,
            df2,
            p_value: p,
            stars: stars_for(p).to_string(),
            unreliable,
        }
    }
}

/// Per-coefficient two-sided t-tests for the linear benchmark (intercept
/// excluded), in roster order.
pub fn glm_term_significance(model: &GlmModel) -> Vec<TermTest> {
    let df = model.df_resid;
    model
        .factor_names()
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let t = model.t_stats[j + 1];
            let p = t_sf(t, df).unwrap_or(f64::NAN);
            TermTest::new(name, t, 1.0, df, p, false)
        })
        .collect()
}

/// Nested-refit F-tests for the additive model: each factor is removed, the
/// model refit with the same configuration (lambdas reselected for the
/// remaining terms), and the RSS increase converted to an F statistic
///
///   F = ((RSS_red - RSS_full) / (edf_full - edf_red)) / (RSS_full / (n - edf_full))
///
/// with p from the F upper tail at (edf_full - edf_red, n - edf_full)
/// degrees of freedom. This approximates the nonparametric-effects ANOVA of
/// common GAM software; it is not an exact test.
pub fn gam_term_significance(
    dataset: &Dataset,
    config: &GamConfig,
    full_model: &GamModel,
) -> Result<Vec<TermTest>, GamError> {
    let n = dataset.n() as f64;
    let rss_full = full_model.rss;
    let edf_full = full_model.total_edf;
    let df2 = n - edf_full;
    let mut tests = Vec::with_capacity(dataset.m());
    for factor in dataset.factors() {
        let reduced_data = dataset.drop_factor(&factor.name)?;
        let reduced = fit_gam(&reduced_data, config)?;
        let df1 = edf_full - reduced.total_edf;
        let unreliable = !reduced.converged || !full_model.converged || df1 <= 1e-8 || df2 <= 0.0;
        if unreliable {
            tests.push(TermTest::new(&factor.name, 0.0, df1, df2, 1.0, true));
            continue;
        }
        let f = ((reduced.rss - rss_full) / df1) / (rss_full / df2);
        let f = f.max(0.0);
        let p = f_sf(f, df1, df2).unwrap_or(f64::NAN);
        tests.push(TermTest::new(&factor.name, f, df1, df2, p, false));
    }
    Ok(tests)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-14);
        assert!((ln_gamma(2.0)).abs() < 1e-14);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn t_tail_at_zero_is_one() {
        assert_eq!(t_sf(0.0, 5.0).unwrap(), 1.0);
    }

    #[test]
    fn t_tail_cauchy_identity() {
        // P(|T_1| >= 1) = 1/2 from the Cauchy CDF
        let p = t_sf(1.0, 1.0).unwrap();
        assert!((p - 0.5).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn f_tail_edges() {
        assert_eq!(f_sf(0.0, 3.0, 10.0).unwrap(), 1.0);
        let p = f_sf(1.0, 1.0, 1.0).unwrap();
        assert!((p - 0.5).abs() < 1e-12, "got {p}");
    }

    #[test]
    fn tail_functions_reject_bad_df() {
        assert!(t_sf(1.0, 0.0).is_err());
        assert!(t_sf(1.0, -2.0).is_err());
        assert!(f_sf(1.0, 0.0, 3.0).is_err());
        assert!(f_sf(-1.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn t_and_f_consistency() {
        for &df in &[1.0, 2.5, 7.0, 30.0, 121.5] {
            for &t in &[0.1, 0.8, 1.5, 2.5, 4.0] {
                let pt = t_sf(t, df).unwrap();
                let pf = f_sf(t * t, 1.0, df).unwrap();
                assert!((pt - pf).abs() < 1e-10, "t={t}, df={df}");
            }
        }
    }

    #[test]
    fn monotone_in_statistic() {
        let mut prev = 1.0 + 1e-12;
        for i in 0..60 {
            let t = i as f64 * 0.2;
            let p = t_sf(t, 7.3).unwrap();
            assert!(p <= prev + 1e-13);
            prev = p;
        }
        let mut prev = 1.0 + 1e-12;
        for i in 0..60 {
            let f = i as f64 * 0.3;
            let p = f_sf(f, 3.4, 50.0).unwrap();
            assert!(p <= prev + 1e-13);
            prev = p;
        }
    }

    #[test]
    fn stars_threshold() {
        assert_eq!(stars_for(0.0009), "***");
        assert_eq!(stars_for(0.002), "");
        assert_eq!(stars_for(0.001), "");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn incomplete_beta_symmetry(
            a in 0.2f64..50.0,
            b in 0.2f64..50.0,
            x in 0.0f64..1.0,
        ) {
            let lhs = reg_inc_beta(a, b, x).unwrap();
            let rhs = reg_inc_beta(b, a, 1.0 - x).unwrap();
            prop_assert!((lhs + rhs - 1.0).abs() <= 1e-12);
        }
    }
}
