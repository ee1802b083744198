//! Quasi-score linearity test against an alternative whose nonlinear
//! parameters are identifiable under the null.

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::{inverse_with_jitter, pinv_sym, symmetrize};
use crate::model::{Domain, Family, ModelSpec};
use crate::netgraph::Network;
use crate::panel::Panel;
use crate::qmle::{fit_linear, quasi_terms, Design, FitResult};
use crate::stats::chi2_sf;

/// Eigenvalue cutoff (relative to the largest) for pseudo-inverting the
/// score covariance.
pub const PINV_CUTOFF: f64 = 1e-12;

fn blocks(a: &DMatrix<f64>, m1: usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let m = a.nrows();
    let m2 = m - m1;
    (
        a.view((0, 0), (m1, m1)).into_owned(),
        a.view((0, m1), (m1, m2)).into_owned(),
        a.view((m1, 0), (m2, m1)).into_owned(),
        a.view((m1, m1), (m2, m2)).into_owned(),
    )
}

fn check_square(h: &DMatrix<f64>, b: &DMatrix<f64>, m1: usize) -> Result<()> {
    if !h.is_square() || h.shape() != b.shape() {
        return Err(Error::Shape("H and B must be square and of equal size".into()));
    }
    if m1 == 0 || m1 >= h.nrows() {
        return Err(Error::Shape(format!("linear block size {m1} for a {}x{} matrix", h.nrows(), h.ncols())));
    }
    Ok(())
}

fn invert_block(h11: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    h11.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("H11 block".into()))
}

/// Covariance of the partial score after estimating the linear block:
/// `B22 - H21 H11^-1 B12 - B21 H11^-1 H12 + H21 H11^-1 B11 H11^-1 H12`.
pub fn sigma_correction(h: &DMatrix<f64>, b: &DMatrix<f64>, m1: usize) -> Result<DMatrix<f64>> {
    check_square(h, b, m1)?;
    let (h11, _, h21, _) = blocks(h, m1);
    let (b11, b12, b21, b22) = blocks(b, m1);
    let h11_inv = invert_block(&h11)?;
    let p = &h21 * &h11_inv; // m2 x m1
    let mut sigma = b22 - &p * &b12 - &b21 * p.transpose() + &p * &b11 * p.transpose();
    symmetrize(&mut sigma);
    Ok(sigma)
}

/// `B22 - B21 B11^-1 B12`.
pub fn sigma_opg(b: &DMatrix<f64>, m1: usize) -> Result<DMatrix<f64>> {
    check_square(b, b, m1)?;
    let (b11, b12, b21, b22) = blocks(b, m1);
    let inv = invert_block(&b11)?;
    let mut sigma = b22 - &b21 * inv * &b12;
    symmetrize(&mut sigma);
    Ok(sigma)
}

/// `S' Sigma^+ S`, floored at zero.
pub fn quadratic_statistic(score2: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let (pinv, _) = pinv_sym(sigma, PINV_CUTOFF);
    score2.dot(&(&pinv * score2)).max(0.0)
}

#[derive(Debug, Clone)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub method: &'static str,
    pub partial_score: Vec<f64>,
    pub sigma_used: DMatrix<f64>,
    pub null_fit: FitResult,
}

impl TestResult {
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "method": self.method,
            "partial_score": self.partial_score,
            "sigma_used": self.sigma_used.row_iter().map(|r| r.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "null_fit": self.null_fit.to_json(),
        })
    }

    pub fn rejects(&self, level: f64) -> bool {
        self.p_value <= level
    }
}

fn check_alternative(alt: Family) -> Result<()> {
    if alt != Family::InterceptDrift {
        return Err(Error::Unsupported(format!(
            "the chi-square score test needs an identifiable alternative (drift); use the sup tests for {alt}"
        )));
    }
    Ok(())
}

/// Quasi-score test of the linear model against `alt` (currently the
/// intercept-drift family). Fits the linear null internally.
pub fn lm_test(panel: &Panel, net: &Network, alt: Family) -> Result<TestResult> {
    check_alternative(alt)?;
    let fit = fit_linear(panel, net)?;
    lm_test_with_fit(panel, net, alt, fit)
}

/// As [`lm_test`] with a precomputed null fit.
pub fn lm_test_with_fit(panel: &Panel, net: &Network, alt: Family, null_fit: FitResult) -> Result<TestResult> {
    check_alternative(alt)?;
    if !null_fit.converged {
        return Err(Error::NotConverged { iterations: null_fit.iterations });
    }
    if null_fit.family != Family::Linear || null_fit.domain != panel.domain() {
        return Err(Error::InvalidArgument("null fit must be a linear fit on the same panel".into()));
    }
    let domain = panel.domain();
    let mut theta = null_fit.theta_hat.clone();
    theta.resize(alt.n_params(), 0.0);
    let spec = ModelSpec::new_unchecked(alt, domain, theta);
    let terms = quasi_terms(&Design::new(panel, net)?, &spec)?;
    let m1 = 3;
    let df = alt.m2();
    let sigma = match domain {
        Domain::Count => sigma_correction(&terms.hessian, &terms.opg, m1)?,
        Domain::Continuous => sigma_opg(&terms.opg, m1)?,
    };
    if sigma.iter().any(|v| !v.is_finite()) || sigma.amax() == 0.0 {
        return Err(Error::Singular("partial score covariance".into()));
    }
    let score2 = terms.score.rows(m1, df).into_owned();
    let statistic = quadratic_statistic(&score2, &sigma);
    Ok(TestResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df)?,
        method: "chi2",
        partial_score: score2.iter().copied().collect(),
        sigma_used: sigma,
        null_fit,
    })
}

/// Classical score statistic `S2' (H22 - H21 H11^-1 H12)^-1 S2`.
pub fn classical_score_statistic(score: &DVector<f64>, h: &DMatrix<f64>, m1: usize) -> Result<f64> {
    let (h11, h12, h21, h22) = blocks(h, m1);
    let schur = h22 - &h21 * invert_block(&h11)? * &h12;
    let inv = inverse_with_jitter(&schur)?.inverse;
    let s2 = score.rows(m1, h.nrows() - m1).into_owned();
    Ok(s2.dot(&(&inv * &s2)))
}
