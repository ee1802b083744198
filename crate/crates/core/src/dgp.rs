//! Data generation: Gaussian-error NAR recursions and copula-Poisson PNAR
//! recursions.
//!
//! Counts use the waiting-time construction: unit-rate exponential
//! inter-arrival times `-ln U` are accumulated per node, with the uniforms
//! `U` drawn jointly from a Gaussian copula, and `Y_i` counts the arrivals
//! inside `[0, lambda_i]`. Marginals are exactly Poisson.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cond_mean, stability_check, Domain, Family, ModelSpec};
use crate::netgraph::Network;
use crate::panel::Panel;
use crate::rng::{norm_cdf, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaStructure {
    Ar1,
    #[serde(alias = "exch")]
    Exchangeable,
    #[serde(alias = "indep")]
    Identity,
}

/// Gaussian copula with a structured correlation matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub structure: CopulaStructure,
    #[serde(default)]
    pub rho: f64,
}

impl CopulaSpec {
    pub fn identity() -> Self {
        Self { structure: CopulaStructure::Identity, rho: 0.0 }
    }

    pub fn ar1(rho: f64) -> Self {
        Self { structure: CopulaStructure::Ar1, rho }
    }

    pub fn exchangeable(rho: f64) -> Self {
        Self { structure: CopulaStructure::Exchangeable, rho }
    }

    /// Correlation `R_ij`.
    pub fn corr(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        match self.structure {
            CopulaStructure::Identity => 0.0,
            CopulaStructure::Ar1 => self.rho.powi((i as i64 - j as i64).unsigned_abs() as i32),
            CopulaStructure::Exchangeable => self.rho,
        }
    }

    pub fn corr_matrix(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| self.corr(i, j))
    }

    /// Dense lower Cholesky factor of `R`.
    pub fn dense_cholesky(&self, n: usize) -> Result<DMatrix<f64>> {
        self.corr_matrix(n)
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::NotPositiveDefinite(format!("{self} correlation matrix of size {n}")))
    }
}

impl fmt::Display for CopulaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.structure {
            CopulaStructure::Identity => f.write_str("indep"),
            CopulaStructure::Ar1 => write!(f, "gaussian-ar1:{}", self.rho),
            CopulaStructure::Exchangeable => write!(f, "gaussian-exch:{}", self.rho),
        }
    }
}

impl FromStr for CopulaSpec {
    type Err = Error;
    /// `indep | gaussian-ar1:RHO | gaussian-exch:RHO`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("indep") || s.eq_ignore_ascii_case("identity") {
            return Ok(Self::identity());
        }
        let (kind, rho) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("copula '{s}': expected indep or gaussian-<ar1|exch>:rho")))?;
        let rho: f64 = rho.trim().parse().map_err(|e| Error::Parse(format!("copula rho: {e}")))?;
        match kind.trim().to_ascii_lowercase().as_str() {
            "gaussian-ar1" | "ar1" => Ok(Self::ar1(rho)),
            "gaussian-exch" | "exch" | "exchangeable" => Ok(Self::exchangeable(rho)),
            other => Err(Error::Parse(format!("unknown copula '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Identity,
    /// `x_1 = z_1`, `x_i = rho x_{i-1} + sqrt(1 - rho^2) z_i`.
    Ar1 { rho: f64, scale: f64 },
    /// Cholesky factor of an exchangeable matrix: column `k` has diagonal
    /// `d[k]` and the constant value `c[k]` below it.
    Exchangeable { d: Vec<f64>, c: Vec<f64> },
}

/// A copula prepared for a fixed dimension. Applying the factor is `O(n)`
/// for every supported structure and equals multiplication by the lower
/// Cholesky factor of `R`.
#[derive(Debug, Clone)]
pub struct CopulaSampler {
    n: usize,
    factor: Factor,
    z: Vec<f64>,
}

impl CopulaSampler {
    pub fn new(cop: &CopulaSpec, n: usize) -> Result<Self> {
        let rho = cop.rho;
        if !rho.is_finite() {
            return Err(Error::InvalidArgument("copula rho must be finite".into()));
        }
        let factor = match cop.structure {
            // R = I whatever the structure
            _ if rho == 0.0 => Factor::Identity,
            CopulaStructure::Identity => Factor::Identity,
            CopulaStructure::Ar1 => {
                if rho.abs() >= 1.0 {
                    return Err(Error::NotPositiveDefinite(format!("AR(1) correlation with rho = {rho}")));
                }
                Factor::Ar1 { rho, scale: (1.0 - rho * rho).sqrt() }
            }
            CopulaStructure::Exchangeable => {
                let mut d = Vec::with_capacity(n);
                let mut c = Vec::with_capacity(n);
                let mut acc = 0.0f64; // sum of c_k^2 over earlier columns
                for _ in 0..n {
                    let d2 = 1.0 - acc;
                    if d2 <= 1e-14 || rho >= 1.0 {
                        return Err(Error::NotPositiveDefinite(format!(
                            "exchangeable correlation with rho = {rho} in dimension {n}"
                        )));
                    }
                    let dk = d2.sqrt();
                    let ck = (rho - acc) / dk;
                    d.push(dk);
                    c.push(ck);
                    acc += ck * ck;
                }
                Factor::Exchangeable { d, c }
            }
        };
        Ok(Self { n, factor, z: vec![0.0; n] })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Writes `L z` into `out` for a given standard normal `z`.
    pub fn apply_factor(&self, z: &[f64], out: &mut [f64]) {
        match &self.factor {
            Factor::Identity => out.copy_from_slice(z),
            Factor::Ar1 { rho, scale } => {
                let mut prev = 0.0;
                for (k, (o, &zk)) in out.iter_mut().zip(z).enumerate() {
                    prev = if k == 0 { zk } else { rho * prev + scale * zk };
                    *o = prev;
                }
            }
            Factor::Exchangeable { d, c } => {
                let mut prefix = 0.0;
                for k in 0..z.len() {
                    out[k] = prefix + d[k] * z[k];
                    prefix += c[k] * z[k];
                }
            }
        }
    }

    /// One copula draw `u = Phi(L z)` into `out`.
    pub fn draw_into(&mut self, stream: &mut Stream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        if let Factor::Identity = self.factor {
            for o in out.iter_mut() {
                *o = stream.uniform();
            }
            return;
        }
        for z in self.z.iter_mut() {
            *z = stream.normal();
        }
        let z = std::mem::take(&mut self.z);
        self.apply_factor(&z, out);
        self.z = z;
        for o in out.iter_mut() {
            // Phi(x) stays strictly inside (0, 1) for |x| < 37.
            *o = norm_cdf(*o).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0);
        }
    }
}

/// One draw from the Gaussian copula in dimension `n`.
pub fn draw_copula_uniform(cop: &CopulaSpec, n: usize, stream: &mut Stream) -> Result<Vec<f64>> {
    let mut sampler = CopulaSampler::new(cop, n)?;
    let mut u = vec![0.0; n];
    sampler.draw_into(stream, &mut u);
    Ok(u)
}

/// Event cap for a single draw with largest intensity `max_lambda`.
pub fn event_cap(max_lambda: f64) -> usize {
    (10.0 * (max_lambda + 10.0 * max_lambda.sqrt() + 50.0)).ceil() as usize
}

/// Copula-Poisson count vector with intensities `lambda`, using a prepared
/// sampler (avoids re-deriving the factor every time step).
pub fn copula_poisson_draw_with(lambda: &[f64], sampler: &mut CopulaSampler, stream: &mut Stream) -> Result<Vec<u64>> {
    let n = lambda.len();
    if sampler.dim() != n {
        return Err(Error::Shape(format!("copula of dimension {} for {n} intensities", sampler.dim())));
    }
    let mut max_l = 0.0f64;
    for (i, &l) in lambda.iter().enumerate() {
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("intensity at node {i}")));
        }
        if l < 0.0 {
            return Err(Error::InvalidArgument(format!("negative intensity {l} at node {i}")));
        }
        max_l = max_l.max(l);
    }
    let mut counts = vec![0u64; n];
    if n == 0 || max_l == 0.0 {
        return Ok(counts);
    }
    let cap = event_cap(max_l);
    let mut s = vec![0.0f64; n];
    let mut u = vec![0.0f64; n];
    for _ in 0..cap {
        sampler.draw_into(stream, &mut u);
        let mut min_s = f64::INFINITY;
        for i in 0..n {
            s[i] -= u[i].ln();
            if s[i] <= lambda[i] {
                counts[i] += 1;
            }
            min_s = min_s.min(s[i]);
        }
        if min_s > max_l {
            return Ok(counts);
        }
    }
    Err(Error::EventCap { cap })
}

pub fn copula_poisson_draw(lambda: &[f64], cop: &CopulaSpec, stream: &mut Stream) -> Result<Vec<u64>> {
    let mut sampler = CopulaSampler::new(cop, lambda.len())?;
    copula_poisson_draw_with(lambda, &mut sampler, stream)
}

/// How the recursion is started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Counts: `lambda_0 = 1` plus burn-in. Continuous: as
    /// `LinearStationary`, falling back to a zero start with burn-in when the
    /// linear part has no stationary law.
    #[default]
    Auto,
    /// Continuous linear only: `Y_0` drawn from the stationary Gaussian law;
    /// burn-in is skipped.
    Stationary,
    /// Continuous, any family: `Y_0` drawn from the stationary law of the
    /// embedded linear model (`beta`), no burn-in. Nonlinear samples start
    /// with the transient towards their own regime.
    LinearStationary,
    /// Counts: the initial intensity `lambda_0`. Continuous: `Y_0` itself.
    Fixed(Vec<f64>),
    Zero,
    /// Start at the stationary mean of the embedded linear model.
    LinearMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub seed: u64,
    /// Error standard deviation (continuous only). Zero gives the
    /// deterministic skeleton.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default)]
    pub init: Init,
}

fn default_burn_in() -> usize {
    300
}

fn default_sigma() -> f64 {
    1.0
}

impl SimConfig {
    pub fn new(t: usize, seed: u64) -> Self {
        Self { t, burn_in: default_burn_in(), seed, sigma: default_sigma(), init: Init::Auto }
    }

    pub fn burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.t < 1 {
            return Err(Error::InvalidArgument("T must be at least 1".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        Ok(())
    }
}

fn linear_mean(beta: [f64; 3]) -> Result<f64> {
    let d = 1.0 - beta[1] - beta[2];
    if d.abs() < 1e-12 {
        return Err(Error::Unstable(format!("b1 + b2 = {} has no finite mean", beta[1] + beta[2])));
    }
    Ok(beta[0] / d)
}

/// Mean and covariance of the stationary Gaussian linear NAR process.
#[derive(Debug, Clone)]
pub struct StationaryLaw {
    pub mu: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// Lower Cholesky factor of `cov` (absent when `sigma = 0`).
    chol: Option<DMatrix<f64>>,
}

impl StationaryLaw {
    pub fn new(beta: [f64; 3], net: &Network, sigma: f64) -> Result<Self> {
        let (mu, cov) = stationary_init_linear_gaussian(beta, net, sigma)?;
        let chol = if sigma > 0.0 {
            Some(
                cov.clone()
                    .cholesky()
                    .ok_or_else(|| Error::NotPositiveDefinite("stationary covariance".into()))?
                    .l(),
            )
        } else {
            None
        };
        Ok(Self { mu, cov, chol })
    }

    pub fn draw(&self, stream: &mut Stream) -> Vec<f64> {
        let n = self.mu.len();
        match &self.chol {
            None => self.mu.clone(),
            Some(l) => {
                let z = DVector::from_fn(n, |_, _| stream.normal());
                let x = l * z;
                self.mu.iter().zip(x.iter()).map(|(m, v)| m + v).collect()
            }
        }
    }
}

/// Solves `Sigma = G Sigma G' + sigma^2 I` with `G = b1 W + b2 I`, returning
/// the stationary mean vector and covariance.
///
/// The fixed point is reached by the doubling form of the iteration
/// (`S <- S + A S A'`, `A <- A^2`), which sums the same series
/// `sum_k G^k G'^k sigma^2` in logarithmically many steps.
pub fn stationary_init_linear_gaussian(beta: [f64; 3], net: &Network, sigma: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let [_, b1, b2] = beta;
    if b1.abs() + b2.abs() >= 1.0 || b1 + b2 >= 1.0 {
        return Err(Error::Unstable(format!("|b1| + |b2| = {} is not below 1", b1.abs() + b2.abs())));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
    }
    let n = net.n();
    let mu = vec![linear_mean(beta)?; n];
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = b2;
        for (j, w) in net.w_row(i) {
            a[(i, j)] += b1 * w;
        }
    }
    let mut s = DMatrix::<f64>::identity(n, n) * (sigma * sigma);
    for _ in 0..64 {
        let inc = &a * &s * a.transpose();
        let delta = inc.amax();
        s += inc;
        if delta < 1e-10 * (1.0 + sigma * sigma) {
            crate::linalg::symmetrize(&mut s);
            return Ok((mu, s));
        }
        a = &a * &a;
    }
    Err(Error::Unstable("stationary covariance iteration did not converge".into()))
}

/// Simulates the Gaussian-error recursion `Y_t = lambda_t + xi_t`.
pub fn simulate_gaussian(spec: &ModelSpec, net: &Network, cfg: &SimConfig) -> Result<Panel> {
    simulate_gaussian_cached(spec, net, cfg, None)
}

/// As [`simulate_gaussian`], reusing a precomputed stationary law.
pub fn simulate_gaussian_cached(
    spec: &ModelSpec,
    net: &Network,
    cfg: &SimConfig,
    law: Option<&StationaryLaw>,
) -> Result<Panel> {
    cfg.validate()?;
    if spec.domain() != Domain::Continuous {
        return Err(Error::InvalidArgument("simulate_gaussian needs a continuous model".into()));
    }
    let n = net.n();
    let mut stream = Stream::new(cfg.seed);
    if matches!(cfg.init, Init::Stationary) && spec.family() != Family::Linear {
        return Err(Error::Unsupported(
            "stationary initialization is only available for the linear family; use linear_stationary or a fixed start with burn-in".into(),
        ));
    }
    let owned;
    let law = match (&cfg.init, law) {
        (Init::Stationary | Init::LinearStationary | Init::Auto, Some(l)) => Some(l),
        (Init::Stationary | Init::LinearStationary, None) => {
            owned = StationaryLaw::new(spec.beta(), net, cfg.sigma)?;
            Some(&owned)
        }
        (Init::Auto, None) => match StationaryLaw::new(spec.beta(), net, cfg.sigma) {
            Ok(l) => {
                owned = l;
                Some(&owned)
            }
            Err(e) => {
                log::warn!("no stationary start ({e}); starting at zero with burn-in");
                None
            }
        },
        _ => None,
    };
    let (y0, burn_in) = match law {
        Some(law) => {
            if law.mu.len() != n {
                return Err(Error::Shape("stationary law dimension differs from the network".into()));
            }
            (law.draw(&mut stream), 0)
        }
        None => {
            let y0 = match &cfg.init {
                Init::Fixed(v) => {
                    if v.len() != n {
                        return Err(Error::Shape(format!("initial vector has {} entries for {n} nodes", v.len())));
                    }
                    v.clone()
                }
                Init::LinearMean => vec![linear_mean(spec.beta())?; n],
                _ => vec![0.0; n],
            };
            (y0, cfg.burn_in)
        }
    };
    let total = burn_in + cfg.t;
    let mut values = Vec::with_capacity(n * cfg.t);
    let mut prev = y0;
    let mut x = vec![0.0; n];
    for step in 1..=total {
        net.network_effect(&prev, &mut x);
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let e = stream.normal();
            let v = spec.mean_at(x[i], prev[i]) + cfg.sigma * e;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "simulated value at node {i}, step {step}; parameters look explosive"
                )));
            }
            next.push(v);
        }
        if step > burn_in {
            values.extend_from_slice(&next);
        }
        prev = next;
    }
    let mut panel = Panel::from_time_major(n, cfg.t, Domain::Continuous, values)?;
    panel.t0 = burn_in + 1;
    Ok(panel)
}

/// Simulates the copula-Poisson count recursion.
pub fn simulate_count(spec: &ModelSpec, net: &Network, cop: &CopulaSpec, cfg: &SimConfig) -> Result<Panel> {
    cfg.validate()?;
    if spec.domain() != Domain::Count {
        return Err(Error::InvalidArgument("simulate_count needs a count model".into()));
    }
    let verdict = stability_check(spec, net);
    if !verdict.sufficient_holds {
        log::warn!("stability condition not verified: {}", verdict.condition_name);
    }
    let n = net.n();
    let lambda0 = match &cfg.init {
        Init::Auto => vec![1.0; n],
        Init::Fixed(v) => {
            if v.len() != n {
                return Err(Error::Shape(format!("initial intensity has {} entries for {n} nodes", v.len())));
            }
            v.clone()
        }
        Init::Zero => vec![0.0; n],
        Init::LinearMean => vec![linear_mean(spec.beta())?; n],
        Init::Stationary | Init::LinearStationary => {
            return Err(Error::Unsupported("stationary initialization is not available for count models".into()))
        }
    };
    let mut stream = Stream::new(cfg.seed);
    let mut sampler = CopulaSampler::new(cop, n)?;
    let mut prev: Vec<f64> = copula_poisson_draw_with(&lambda0, &mut sampler, &mut stream)?
        .into_iter()
        .map(|c| c as f64)
        .collect();
    let total = cfg.burn_in + cfg.t;
    let mut values = Vec::with_capacity(n * cfg.t);
    for step in 1..=total {
        let lambda = cond_mean(spec, net, &prev)?;
        if let Some(i) = lambda.iter().position(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!(
                "intensity at node {i}, step {step}; parameters look explosive"
            )));
        }
        let y = copula_poisson_draw_with(&lambda, &mut sampler, &mut stream)?;
        prev = y.into_iter().map(|c| c as f64).collect();
        if step > cfg.burn_in {
            values.extend_from_slice(&prev);
        }
    }
    let mut panel = Panel::from_time_major(n, cfg.t, Domain::Count, values)?;
    panel.t0 = cfg.burn_in + 1;
    Ok(panel)
}

/// Dispatches on the model domain. The copula is ignored for continuous data.
pub fn simulate(spec: &ModelSpec, net: &Network, cop: &CopulaSpec, cfg: &SimConfig) -> Result<Panel> {
    match spec.domain() {
        Domain::Count => simulate_count(spec, net, cop, cfg),
        Domain::Continuous => simulate_gaussian(spec, net, cfg),
    }
}
