//! Quasi-likelihood estimation: Poisson QMLE for counts, least squares for
//! continuous data, and the Hessian / outer-product / sandwich matrices.
//!
//! Sums run over `t = 2..T` (1-based): the first cross-section only
//! conditions the recursion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::{from_upper, inverse_with_jitter, rank1_upper, symmetrize};
use crate::model::{Domain, Family, ModelSpec};
use crate::netgraph::Network;
use crate::panel::Panel;

/// Intensities below this floor make a parameter vector inadmissible.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Lower bound of the projection box for count-model coordinates.
pub const COUNT_LOWER: f64 = 1e-8;

/// Lagged regressors of a panel on a network.
#[derive(Debug, Clone)]
pub struct Design<'a> {
    pub panel: &'a Panel,
    /// `X_t = W Y_t`, time-major.
    pub x: Vec<f64>,
}

impl<'a> Design<'a> {
    pub fn new(panel: &'a Panel, net: &Network) -> Result<Self> {
        if panel.t() < 2 {
            return Err(Error::Shape("need at least two time steps".into()));
        }
        Ok(Self { panel, x: panel.network_effects(net)? })
    }

    pub fn n(&self) -> usize {
        self.panel.n()
    }

    /// Number of usable time steps (`T - 1`).
    pub fn steps(&self) -> usize {
        self.panel.t() - 1
    }

    /// Number of observations entering the sums.
    pub fn nt(&self) -> usize {
        self.n() * self.steps()
    }

    /// `(X_{i,t-1}, Y_{i,t-1}, Y_{i,t})` for usable step `s` (`t = s + 1`).
    #[inline]
    pub fn obs(&self, s: usize, i: usize) -> (f64, f64, f64) {
        let n = self.n();
        (self.x[s * n + i], self.panel.values()[s * n + i], self.panel.values()[(s + 1) * n + i])
    }
}

/// Likelihood, score, Hessian and outer-product matrices at one point.
#[derive(Debug, Clone)]
pub struct QuasiTerms {
    pub loglik: f64,
    pub score: DVector<f64>,
    /// Per-time score contributions `s_t`, one row per usable step.
    pub per_time: DMatrix<f64>,
    /// `H_T`: minus the second derivative of the quasi-likelihood.
    pub hessian: DMatrix<f64>,
    /// `B_T = sum_t s_t s_t'`.
    pub opg: DMatrix<f64>,
}

/// Evaluates the quasi-likelihood quantities for `spec` (its own `theta`).
/// Counts use the independence Poisson likelihood; continuous data use
/// `-1/2` times the residual sum of squares.
pub fn quasi_terms(design: &Design, spec: &ModelSpec) -> Result<QuasiTerms> {
    let n = design.n();
    let steps = design.steps();
    let m = spec.n_grad();
    let count = spec.domain() == Domain::Count;
    let mut loglik = 0.0;
    let mut per_time = DMatrix::zeros(steps, m);
    let mut h = vec![0.0; m * m];
    let mut b = vec![0.0; m * m];
    let mut g = vec![0.0; m];
    let mut st = vec![0.0; m];
    for s in 0..steps {
        st.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let (x, yl, y) = design.obs(s, i);
            let lambda = spec.mean_at(x, yl);
            if !lambda.is_finite() {
                return Err(Error::NonFinite(format!("conditional mean at node {i}, time {}", s + 2)));
            }
            spec.grad_at(x, yl, &mut g);
            let (resid, weight) = if count {
                if lambda < LAMBDA_FLOOR {
                    return Err(Error::IntensityTooSmall { node: i, time: s + 2, value: lambda });
                }
                if y > 0.0 {
                    loglik += y * lambda.ln();
                }
                loglik -= lambda;
                (y / lambda - 1.0, y / (lambda * lambda))
            } else {
                let e = y - lambda;
                loglik -= 0.5 * e * e;
                (e, 1.0)
            };
            for a in 0..m {
                st[a] += resid * g[a];
            }
            rank1_upper(&mut h, m, &g, weight);
            spec.hess_at(x, yl, |a, c, v| h[a * m + c] -= resid * v);
        }
        rank1_upper(&mut b, m, &st, 1.0);
        for a in 0..m {
            per_time[(s, a)] = st[a];
        }
    }
    let score = DVector::from_iterator(m, (0..m).map(|a| per_time.column(a).sum()));
    Ok(QuasiTerms { loglik, score, per_time, hessian: from_upper(&h, m), opg: from_upper(&b, m) })
}

fn count_spec(spec: &ModelSpec, theta: &[f64]) -> Result<ModelSpec> {
    if spec.domain() != Domain::Count {
        return Err(Error::InvalidArgument("Poisson quasi-likelihood needs a count model".into()));
    }
    if theta.len() != spec.family().n_params() {
        return Err(Error::Shape(format!(
            "{} parameters given for the {} family",
            theta.len(),
            spec.family()
        )));
    }
    Ok(ModelSpec::new_unchecked(spec.family(), spec.domain(), theta.to_vec()))
}

/// Poisson quasi-log-likelihood at `theta` (full parameter vector).
pub fn poisson_quasi_loglik(panel: &Panel, net: &Network, spec: &ModelSpec, theta: &[f64]) -> Result<f64> {
    let spec = count_spec(spec, theta)?;
    let design = Design::new(panel, net)?;
    let n = design.n();
    let mut l = 0.0;
    for s in 0..design.steps() {
        for i in 0..n {
            let (x, yl, y) = design.obs(s, i);
            let lambda = spec.mean_at(x, yl);
            if !(lambda >= LAMBDA_FLOOR) {
                return Err(Error::IntensityTooSmall { node: i, time: s + 2, value: lambda });
            }
            if y > 0.0 {
                l += y * lambda.ln();
            }
            l -= lambda;
        }
    }
    Ok(l)
}

/// Total score and its per-time contributions.
#[derive(Debug, Clone)]
pub struct Score {
    pub total: Vec<f64>,
    pub per_time: Vec<Vec<f64>>,
}

pub fn poisson_score(panel: &Panel, net: &Network, spec: &ModelSpec, theta: &[f64]) -> Result<Score> {
    let spec = count_spec(spec, theta)?;
    let terms = quasi_terms(&Design::new(panel, net)?, &spec)?;
    let per_time = terms.per_time.row_iter().map(|r| r.iter().copied().collect()).collect();
    Ok(Score { total: terms.score.iter().copied().collect(), per_time })
}

pub fn poisson_hessian(panel: &Panel, net: &Network, spec: &ModelSpec, theta: &[f64]) -> Result<DMatrix<f64>> {
    let spec = count_spec(spec, theta)?;
    Ok(quasi_terms(&Design::new(panel, net)?, &spec)?.hessian)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    Ols,
    Qmle,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub family: Family,
    pub domain: Domain,
    pub theta_hat: Vec<f64>,
    pub loglik: f64,
    pub score_at_opt: Vec<f64>,
    pub hessian: DMatrix<f64>,
    pub opg: DMatrix<f64>,
    /// Sandwich covariance `H^-1 B H^-1` of the estimator.
    pub cov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub method: FitMethod,
    /// Ridge added to `H` before inversion (0 when none was needed).
    pub jitter_applied: f64,
    /// Moment estimate of the error variance (continuous fits).
    pub sigma2: Option<f64>,
    /// Number of observations in the sums.
    pub nt: usize,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl FitResult {
    /// The fitted model.
    pub fn spec(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.family, self.domain, self.theta_hat.clone())
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "family": self.family,
            "domain": self.domain,
            "method": self.method,
            "theta_hat": self.theta_hat,
            "se": self.se,
            "loglik": self.loglik,
            "converged": self.converged,
            "iterations": self.iterations,
            "jitter_applied": self.jitter_applied,
            "sigma2": self.sigma2,
            "score_at_opt": self.score_at_opt,
            "nt": self.nt,
            "hessian": matrix_rows(&self.hessian),
            "opg": matrix_rows(&self.opg),
            "cov": matrix_rows(&self.cov),
        })
    }
}

/// Sandwich covariance `H^-1 B H^-1` with standard errors. Returns the
/// ridge jitter applied to `H` as well.
pub fn sandwich_cov(h: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, f64)> {
    if h.shape() != b.shape() || !h.is_square() {
        return Err(Error::Shape("H and B must be square and of equal size".into()));
    }
    let inv = inverse_with_jitter(h)?;
    let mut cov = &inv.inverse * b * &inv.inverse;
    symmetrize(&mut cov);
    let se = cov.diagonal().iter().map(|v| v.max(0.0).sqrt()).collect();
    Ok((cov, se, inv.jitter))
}

/// Closed-form least squares for the linear continuous model.
pub fn ols_fit_linear(panel: &Panel, net: &Network) -> Result<FitResult> {
    if panel.domain() != Domain::Continuous {
        return Err(Error::InvalidArgument("least squares fitting needs a continuous panel".into()));
    }
    if panel.t() < 3 {
        return Err(Error::Shape("least squares needs T >= 3".into()));
    }
    let design = Design::new(panel, net)?;
    let mut xtx = [0.0; 9];
    let mut xty = [0.0; 3];
    for s in 0..design.steps() {
        for i in 0..design.n() {
            let (x, yl, y) = design.obs(s, i);
            let d = [1.0, x, yl];
            rank1_upper(&mut xtx, 3, &d, 1.0);
            for a in 0..3 {
                xty[a] += d[a] * y;
            }
        }
    }
    let xtx = from_upper(&xtx, 3);
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("design matrix (1, X, Y) is rank deficient".into()))?;
    let inv_cond = {
        let ev = xtx.symmetric_eigen().eigenvalues;
        ev.min() / ev.max()
    };
    if !(inv_cond > 1e-13) {
        return Err(Error::Singular("design matrix (1, X, Y) is rank deficient".into()));
    }
    let beta = chol.solve(&DVector::from_column_slice(&xty));
    let spec = ModelSpec::new(Family::Linear, Domain::Continuous, beta.iter().copied().collect())?;
    let terms = quasi_terms(&design, &spec)?;
    let (cov, se, jitter) = sandwich_cov(&terms.hessian, &terms.opg)?;
    let nt = design.nt();
    let sigma2 = -2.0 * terms.loglik / nt as f64;
    Ok(FitResult {
        family: Family::Linear,
        domain: Domain::Continuous,
        theta_hat: spec.theta().to_vec(),
        loglik: terms.loglik,
        score_at_opt: terms.score.iter().copied().collect(),
        hessian: terms.hessian,
        opg: terms.opg,
        cov,
        se,
        iterations: 0,
        converged: true,
        method: FitMethod::Ols,
        jitter_applied: jitter,
        sigma2: Some(sigma2),
        nt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Converged when `max |S| < score_tol * NT`.
    pub score_tol: f64,
    /// ... or when `max |step| < step_tol`.
    pub step_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iter: 200, score_tol: 1e-6, step_tol: 1e-9 }
    }
}

/// Default starting point: `b0 = 0.6 mean(Y)`, `b1 = b2 = 0.2`, nonlinear
/// coordinates copied from `spec`.
pub fn default_start(panel: &Panel, spec: &ModelSpec) -> Vec<f64> {
    let mut theta = spec.theta().to_vec();
    theta[0] = (0.6 * panel.mean()).max(0.1);
    theta[1] = 0.2;
    theta[2] = 0.2;
    theta
}

fn project(theta: &mut [f64], m: usize) {
    for v in theta.iter_mut().take(m) {
        if *v < COUNT_LOWER {
            *v = COUNT_LOWER;
        }
    }
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Poisson QMLE by projected Newton iterations with step halving.
/// `spec` selects the family; its differentiated coordinates are estimated
/// and any remaining ones (the TNAR threshold) stay fixed.
pub fn qmle_fit(
    panel: &Panel,
    net: &Network,
    spec: &ModelSpec,
    theta0: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FitResult> {
    if spec.domain() != Domain::Count || panel.domain() != Domain::Count {
        return Err(Error::InvalidArgument("QMLE fitting needs a count model and a count panel".into()));
    }
    let design = Design::new(panel, net)?;
    let m = spec.n_grad();
    let mut theta = match theta0 {
        Some(t) => {
            if t.len() != spec.family().n_params() {
                return Err(Error::Shape(format!("theta0 has {} entries, expected {}", t.len(), spec.family().n_params())));
            }
            t.to_vec()
        }
        None => default_start(panel, spec),
    };
    project(&mut theta, m);
    let nt = design.nt();
    let score_tol = opts.score_tol * nt as f64;

    let eval = |theta: &[f64]| -> Result<QuasiTerms> {
        quasi_terms(&design, &ModelSpec::new_unchecked(spec.family(), Domain::Count, theta.to_vec()))
    };
    let loglik_at = |theta: &[f64]| -> Option<f64> {
        let s = ModelSpec::new_unchecked(spec.family(), Domain::Count, theta.to_vec());
        let mut l = 0.0;
        for st in 0..design.steps() {
            for i in 0..design.n() {
                let (x, yl, y) = design.obs(st, i);
                let lambda = s.mean_at(x, yl);
                if !(lambda >= LAMBDA_FLOOR) || !lambda.is_finite() {
                    return None;
                }
                if y > 0.0 {
                    l += y * lambda.ln();
                }
                l -= lambda;
            }
        }
        Some(l)
    };

    let mut terms = eval(&theta)?;
    let mut converged = false;
    let mut iterations = 0;
    let mut jitter = 0.0;
    while iterations < opts.max_iter {
        if max_abs(terms.score.iter().copied()) < score_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let inv = inverse_with_jitter(&terms.hessian)?;
        jitter = inv.jitter;
        let mut dir = &inv.inverse * &terms.score;
        if dir.dot(&terms.score) <= 0.0 {
            // Hessian not positive definite here: fall back to a scaled gradient step.
            let scale = terms.hessian.trace().abs().max(1.0);
            dir = &terms.score / scale;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = theta.clone();
            for a in 0..m {
                cand[a] += step * dir[a];
            }
            project(&mut cand, m);
            if let Some(l) = loglik_at(&cand) {
                if l >= terms.loglik - 1e-12 * terms.loglik.abs().max(1.0) {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(cand) = accepted else {
            // No ascent possible along the Newton direction.
            break;
        };
        let moved = max_abs((0..m).map(|a| cand[a] - theta[a]));
        theta = cand;
        terms = eval(&theta)?;
        if moved < opts.step_tol {
            converged = true;
            break;
        }
    }
    if !converged && max_abs(terms.score.iter().copied()) < score_tol {
        converged = true;
    }
    let (cov, se, cov_jitter) = sandwich_cov(&terms.hessian, &terms.opg)?;
    Ok(FitResult {
        family: spec.family(),
        domain: Domain::Count,
        theta_hat: theta,
        loglik: terms.loglik,
        score_at_opt: terms.score.iter().copied().collect(),
        hessian: terms.hessian,
        opg: terms.opg,
        cov,
        se,
        iterations,
        converged,
        method: FitMethod::Qmle,
        jitter_applied: jitter.max(cov_jitter),
        sigma2: None,
        nt,
    })
}

/// Fits the linear null model appropriate for the panel domain.
pub fn fit_linear(panel: &Panel, net: &Network) -> Result<FitResult> {
    match panel.domain() {
        Domain::Continuous => ols_fit_linear(panel, net),
        Domain::Count => {
            let spec = ModelSpec::linear(Domain::Count, [1.0, 0.2, 0.2])?;
            qmle_fit(panel, net, &spec, None, &FitOptions::default())
        }
    }
}
