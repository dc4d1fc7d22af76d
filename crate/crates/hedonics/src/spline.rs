//! P-spline machinery: B-spline bases on equally spaced knots, discrete
//! difference penalties, penalized least squares, effective degrees of
//! freedom, and smoothing-parameter selection.
//!
//! The curvature penalty on each smooth is the standard order-2 difference
//! penalty on adjacent B-spline coefficients, which for equally spaced knots
//! matches the integrated squared second derivative up to a constant factor
//! absorbed into lambda.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Search window for lambda selection, in log10 units.
pub const LOG10_LAMBDA_MIN: f64 = -8.0;
pub const LOG10_LAMBDA_MAX: f64 = 12.0;

/// Bisection stops when the achieved edf is within this of the target.
pub const EDF_TOL: f64 = 1e-4;

const MAX_BISECT_ITER: usize = 200;

#[derive(Debug, Error)]
pub enum SplineError {
    #[error("degenerate domain [{0}, {1}]")]
    DegenerateDomain(f64, f64),
    #[error("need at least one segment, got {0}")]
    NoSegments(usize),
    #[error("difference order {order} must satisfy 0 < order < k = {k}")]
    BadPenaltyOrder { k: usize, order: usize },
    #[error("design matrix has {rows} rows but response has {len}")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("penalty built for k={penalty_k} coefficients, design has {design_k}")]
    PenaltyMismatch { penalty_k: usize, design_k: usize },
    #[error("lambda must be nonnegative and finite, got {0}")]
    BadLambda(f64),
    #[error("penalized system is singular even after ridge jitter (condition estimate {cond:.3e})")]
    SingularSystem { cond: f64 },
    #[error(
        "target edf {target} outside achievable range [{min:.4}, {max:.4}] for this basis/penalty"
    )]
    EdfOutOfRange { target: f64, min: f64, max: f64 },
}

/// Cubic (by default) B-spline basis with equally spaced interior knots and
/// uniform knot extension beyond the data boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    degree: usize,
    n_segments: usize,
    x_min: f64,
    x_max: f64,
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Builds a basis of `n_segments + degree` functions spanning
    /// `[x_min, x_max]` with segment width `(x_max - x_min) / n_segments`.
    pub fn new(
        x_min: f64,
        x_max: f64,
        n_segments: usize,
        degree: usize,
    ) -> Result<Self, SplineError> {
        if !x_min.is_finite() || !x_max.is_finite() || !(x_min < x_max) {
            return Err(SplineError::DegenerateDomain(x_min, x_max));
        }
        if n_segments == 0 {
            return Err(SplineError::NoSegments(0));
        }
        let h = (x_max - x_min) / n_segments as f64;
        if h < f64::MIN_POSITIVE * 1e4 {
            return Err(SplineError::DegenerateDomain(x_min, x_max));
        }
        let total = n_segments + 2 * degree + 1;
        let knots = (0..total)
            .map(|i| x_min + (i as f64 - degree as f64) * h)
            .collect();
        Ok(Self {
            degree,
            n_segments,
            x_min,
            x_max,
            knots,
        })
    }

    /// Number of basis functions.
    pub fn k(&self) -> usize {
        self.n_segments + self.degree
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    fn segment_width(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_segments as f64
    }

    /// Nonzero basis values at one point after clamping to the domain.
    /// Returns the index of the first nonzero function and the `degree + 1`
    /// values (de Boor's triangular recurrence).
    pub fn evaluate_point(&self, x: f64) -> (usize, Vec<f64>) {
        let x = x.clamp(self.x_min, self.x_max);
        let h = self.segment_width();
        // segment index in [0, n_segments - 1]; the right endpoint belongs
        // to the last segment
        let mut seg = ((x - self.x_min) / h).floor() as usize;
        if seg >= self.n_segments {
            seg = self.n_segments - 1;
        }
        let span = seg + self.degree; // knots[span] <= x <= knots[span + 1]
        let d = self.degree;
        let mut values = vec![0.0; d + 1];
        values[0] = 1.0;
        let mut left = vec![0.0; d + 1];
        let mut right = vec![0.0; d + 1];
        for j in 1..=d {
            left[j] = x - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = values[r] / (right[r + 1] + left[j - r]);
                values[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            values[j] = saved;
        }
        (span - d, values)
    }

    /// N x k design matrix; out-of-domain inputs are clamped to the
    /// domain endpoints.
    pub fn evaluate(&self, x: &[f64]) -> DMatrix<f64> {
        let k = self.k();
        let mut b = DMatrix::<f64>::zeros(x.len(), k);
        for (i, &xi) in x.iter().enumerate() {
            let (first, values) = self.evaluate_point(xi);
            for (offset, v) in values.iter().enumerate() {
                b[(i, first + offset)] = *v;
            }
        }
        b
    }
}

/// Convenience wrapper matching the basis constructor.
pub fn make_basis(
    x_min: f64,
    x_max: f64,
    n_segments: usize,
    degree: usize,
) -> Result<BSplineBasis, SplineError> {
    BSplineBasis::new(x_min, x_max, n_segments, degree)
}

/// Order-`order` difference operator `D` and its gram matrix `G = D'D`.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyMatrix {
    order: usize,
    d: DMatrix<f64>,
    g: DMatrix<f64>,
}

impl PenaltyMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn k(&self) -> usize {
        self.d.ncols()
    }
}

/// Builds the (k - order) x k difference operator with binomial-coefficient
/// rows, e.g. order 2 over k = 4: [[1, -2, 1, 0], [0, 1, -2, 1]].
pub fn difference_penalty(k: usize, order: usize) -> Result<PenaltyMatrix, SplineError> {
    if order == 0 || k <= order {
        return Err(SplineError::BadPenaltyOrder { k, order });
    }
    let mut coeffs = vec![0.0f64; order + 1];
    let mut binom = 1.0f64;
    for (j, c) in coeffs.iter_mut().enumerate() {
        let sign = if (order - j) % 2 == 0 { 1.0 } else { -1.0 };
        *c = sign * binom;
        binom = binom * (order - j) as f64 / (j + 1) as f64;
    }
    let rows = k - order;
    let mut d = DMatrix::<f64>::zeros(rows, k);
    for r in 0..rows {
        for (j, c) in coeffs.iter().enumerate() {
            d[(r, r + j)] = *c;
        }
    }
    let g = d.transpose() * &d;
    Ok(PenaltyMatrix { order, d, g })
}

/// A penalized least-squares solution for one smooth term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothFit {
    pub coef: DVector<f64>,
    pub lambda: f64,
    /// Trace of the smoother (hat) matrix.
    pub edf: f64,
    /// Ridge jitter added to the normal-equations diagonal, 0 when none was
    /// needed.
    pub jitter: f64,
}

struct PenalizedSystem {
    chol: Cholesky<f64, Dyn>,
    jitter: f64,
}

/// Factors `B'B + lambda * G` by Cholesky, retrying once with a small ridge
/// jitter (1e-10 * trace(B'B) / k) when the unjittered system fails.
fn factor_system(
    btb: &DMatrix<f64>,
    g: &DMatrix<f64>,
    lambda: f64,
) -> Result<PenalizedSystem, SplineError> {
    let k = btb.nrows();
    let a = btb + g * lambda;
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(PenalizedSystem { chol, jitter: 0.0 });
    }
    let jitter = 1e-10 * btb.trace() / k as f64;
    let mut aj = a.clone();
    for i in 0..k {
        aj[(i, i)] += jitter;
    }
    if let Some(chol) = Cholesky::new(aj) {
        return Ok(PenalizedSystem { chol, jitter });
    }
    let eig = a.symmetric_eigenvalues();
    let max = eig.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    Err(SplineError::SingularSystem { cond })
}

fn edf_from_gram(
    btb: &DMatrix<f64>,
    g: &DMatrix<f64>,
    lambda: f64,
) -> Result<f64, SplineError> {
    let sys = factor_system(btb, g, lambda)?;
    // trace(B (B'B + lG)^-1 B') = trace((B'B + lG)^-1 B'B)
    let solved = sys.chol.solve(btb);
    Ok(solved.trace())
}

fn check_dims(
    b: &DMatrix<f64>,
    y: Option<&DVector<f64>>,
    penalty: &PenaltyMatrix,
    lambda: f64,
) -> Result<(), SplineError> {
    if let Some(y) = y {
        if b.nrows() != y.len() {
            return Err(SplineError::DimensionMismatch {
                rows: b.nrows(),
                len: y.len(),
            });
        }
    }
    if penalty.k() != b.ncols() {
        return Err(SplineError::PenaltyMismatch {
            penalty_k: penalty.k(),
            design_k: b.ncols(),
        });
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(SplineError::BadLambda(lambda));
    }
    Ok(())
}

/// Solves `(B'B + lambda G) a = B'y` and reports the hat-matrix trace.
pub fn fit_penalized(
    b: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: &PenaltyMatrix,
    lambda: f64,
) -> Result<SmoothFit, SplineError> {
    check_dims(b, Some(y), penalty, lambda)?;
    let btb = b.transpose() * b;
    let bty = b.transpose() * y;
    let sys = factor_system(&btb, penalty.g(), lambda)?;
    let coef = sys.chol.solve(&bty);
    let edf = sys.chol.solve(&btb).trace();
    Ok(SmoothFit {
        coef,
        lambda,
        edf,
        jitter: sys.jitter,
    })
}

/// Effective degrees of freedom (hat-matrix trace) at a given lambda.
pub fn edf_for_lambda(
    b: &DMatrix<f64>,
    penalty: &PenaltyMatrix,
    lambda: f64,
) -> Result<f64, SplineError> {
    check_dims(b, None, penalty, lambda)?;
    let btb = b.transpose() * b;
    edf_from_gram(&btb, penalty.g(), lambda)
}

/// Outcome of a lambda search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaChoice {
    pub lambda: f64,
    /// Hat-matrix trace achieved at `lambda`.
    pub edf: f64,
    /// True when the search stopped at the edge of the lambda window instead
    /// of meeting the target exactly.
    pub at_boundary: bool,
}

/// Bisection on log10(lambda) over [-8, 12] until the hat-matrix trace is
/// within `EDF_TOL` of `target_edf`.
///
/// A target at or above the unpenalized trace returns the lambda floor with
/// `at_boundary` set, provided the target does not exceed the basis
/// dimension; anything else outside the achievable range is an error.
pub fn solve_lambda_for_edf(
    b: &DMatrix<f64>,
    penalty: &PenaltyMatrix,
    target_edf: f64,
) -> Result<LambdaChoice, SplineError> {
    check_dims(b, None, penalty, 0.0)?;
    let btb = b.transpose() * b;
    let g = penalty.g();
    let lambda_lo = 10f64.powf(LOG10_LAMBDA_MIN);
    let lambda_hi = 10f64.powf(LOG10_LAMBDA_MAX);
    let edf_max = edf_from_gram(&btb, g, lambda_lo)?;
    let edf_min = edf_from_gram(&btb, g, lambda_hi)?;
    let k = b.ncols() as f64;
    if target_edf >= edf_max - EDF_TOL {
        if target_edf <= k + 1e-9 {
            return Ok(LambdaChoice {
                lambda: lambda_lo,
                edf: edf_max,
                at_boundary: true,
            });
        }
        return Err(SplineError::EdfOutOfRange {
            target: target_edf,
            min: edf_min,
            max: edf_max,
        });
    }
    if target_edf <= edf_min + EDF_TOL {
        return Err(SplineError::EdfOutOfRange {
            target: target_edf,
            min: edf_min,
            max: edf_max,
        });
    }
    let mut lo = LOG10_LAMBDA_MIN; // edf(lo) > target
    let mut hi = LOG10_LAMBDA_MAX; // edf(hi) < target
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..MAX_BISECT_ITER {
        mid = 0.5 * (lo + hi);
        let edf = edf_from_gram(&btb, g, 10f64.powf(mid))?;
        if (edf - target_edf).abs() <= EDF_TOL {
            return Ok(LambdaChoice {
                lambda: 10f64.powf(mid),
                edf,
                at_boundary: false,
            });
        }
        if edf > target_edf {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 10f64.powf(mid);
    let edf = edf_from_gram(&btb, g, lambda)?;
    Ok(LambdaChoice {
        lambda,
        edf,
        at_boundary: true,
    })
}

/// Golden-section search on log10(lambda) minimizing the GCV score
/// `n * RSS / (n - edf)^2`.
pub fn gcv_lambda(
    b: &DMatrix<f64>,
    y: &DVector<f64>,
    penalty: &PenaltyMatrix,
) -> Result<LambdaChoice, SplineError> {
    check_dims(b, Some(y), penalty, 0.0)?;
    let btb = b.transpose() * b;
    let bty = b.transpose() * y;
    let n = y.len() as f64;
    let score = |log_lambda: f64| -> Result<f64, SplineError> {
        let lambda = 10f64.powf(log_lambda);
        let sys = factor_system(&btb, penalty.g(), lambda)?;
        let coef = sys.chol.solve(&bty);
        let resid = y - b * &coef;
        let rss = resid.dot(&resid);
        let edf = sys.chol.solve(&btb).trace();
        let denom = n - edf;
        if denom <= 0.0 {
            return Ok(f64::INFINITY);
        }
        Ok(n * rss / (denom * denom))
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = LOG10_LAMBDA_MIN;
    let mut c = LOG10_LAMBDA_MAX;
    let mut x1 = c - inv_phi * (c - a);
    let mut x2 = a + inv_phi * (c - a);
    let mut f1 = score(x1)?;
    let mut f2 = score(x2)?;
    while c - a > 1e-6 {
        if f1 <= f2 {
            c = x2;
            x2 = x1;
            f2 = f1;
            x1 = c - inv_phi * (c - a);
            f1 = score(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (c - a);
            f2 = score(x2)?;
        }
    }
    let log_best = 0.5 * (a + c);
    let lambda = 10f64.powf(log_best);
    let edf = edf_from_gram(&btb, penalty.g(), lambda)?;
    let at_boundary = log_best - LOG10_LAMBDA_MIN < 1e-3 || LOG10_LAMBDA_MAX - log_best < 1e-3;
    Ok(LambdaChoice {
        lambda,
        edf,
        at_boundary,
    })
}
