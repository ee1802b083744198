//! Linearity tests when the nonlinear model carries a parameter `gamma`
//! that vanishes under the null: an LM profile over a grid of `gamma`
//! values, sup/ave functionals, the Davies bound and the multiplier
//! (score) bootstrap.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::{eigen_ratio, pinv_sym, quad_form};
use crate::lintest::{sigma_correction, PINV_CUTOFF};
use crate::model::{Domain, Family};
use crate::netgraph::Network;
use crate::panel::Panel;
use crate::qmle::{fit_linear, Design, FitResult};
use crate::rng::{derive_seed, Stream};
use crate::stats::{chi2_sf, gamma_fn, quantile_sorted};

/// Grid points whose score covariance has eigenvalue ratio below this are
/// treated as degenerate and dropped.
pub const DEGENERATE_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSource {
    Explicit,
    StnarDefault,
    TnarQuantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    pub values: Vec<f64>,
    pub source: GridSource,
}

impl GammaGrid {
    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("empty gamma grid".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gamma grid value".into()));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("gamma grid must be strictly increasing".into()));
        }
        Ok(Self { values, source: GridSource::Explicit })
    }

    /// `n` equidistant points on `[lo, hi]`.
    pub fn linspace(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("grid needs at least one point".into()));
        }
        if n == 1 {
            return Self::explicit(vec![lo]);
        }
        if !(hi > lo) {
            return Err(Error::InvalidArgument(format!("grid bounds {lo}:{hi} are not increasing")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut v: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
        v[n - 1] = hi;
        Self::explicit(v)
    }

    /// Parses `lo:hi:n`.
    pub fn parse_range(text: &str) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Parse(format!("grid '{text}': expected lo:hi:n")));
        }
        let lo: f64 = parts[0].parse().map_err(|e| Error::Parse(format!("grid lo: {e}")))?;
        let hi: f64 = parts[1].parse().map_err(|e| Error::Parse(format!("grid hi: {e}")))?;
        let n: usize = parts[2].parse().map_err(|e| Error::Parse(format!("grid n: {e}")))?;
        Self::linspace(lo, hi, n)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of points in the default grids.
pub const DEFAULT_GRID_POINTS: usize = 10;

/// Lagged network regressors `X_{i,t-1}` that enter the tests, grouped by node.
fn lagged_x_by_node(panel: &Panel, net: &Network) -> Result<Vec<Vec<f64>>> {
    let x = panel.network_effects(net)?;
    let n = panel.n();
    let steps = panel.t() - 1;
    Ok((0..n).map(|i| (0..steps).map(|s| x[s * n + i]).collect()).collect())
}

/// Default grid: STNAR uses 10 points on `[0.05, 2]`. TNAR spans from the
/// smallest per-node 10% quantile to the largest per-node 90% quantile of
/// the lagged network regressor; points that fall on or outside the pooled
/// range of `X` are moved to the midpoint between the extreme value and its
/// nearest distinct neighbor, so every grid point lies strictly inside.
pub fn default_grid(family: Family, panel: Option<&Panel>, net: Option<&Network>) -> Result<GammaGrid> {
    match family {
        Family::Stnar => {
            let mut g = GammaGrid::linspace(0.05, 2.0, DEFAULT_GRID_POINTS)?;
            g.source = GridSource::StnarDefault;
            Ok(g)
        }
        Family::Tnar => {
            let (panel, net) = match (panel, net) {
                (Some(p), Some(n)) => (p, n),
                _ => return Err(Error::InvalidArgument("the TNAR grid needs the panel and network".into())),
            };
            if panel.t() < 2 {
                return Err(Error::Shape("need at least two time steps".into()));
            }
            let by_node = lagged_x_by_node(panel, net)?;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            let mut pooled = Vec::new();
            for mut xs in by_node {
                xs.sort_by(f64::total_cmp);
                lo = lo.min(quantile_sorted(&xs, 0.1));
                hi = hi.max(quantile_sorted(&xs, 0.9));
                pooled.extend(xs);
            }
            pooled.sort_by(f64::total_cmp);
            pooled.dedup();
            if pooled.len() < 3 {
                return Err(Error::InvalidArgument(
                    "network regressor takes fewer than three distinct values; no interior threshold grid".into(),
                ));
            }
            let k = pooled.len();
            let (min_x, max_x) = (pooled[0], pooled[k - 1]);
            let low_inner = 0.5 * (pooled[0] + pooled[1]);
            let high_inner = 0.5 * (pooled[k - 2] + pooled[k - 1]);
            let raw = if hi > lo {
                GammaGrid::linspace(lo, hi, DEFAULT_GRID_POINTS)?.values
            } else {
                vec![lo]
            };
            let mut values: Vec<f64> = raw
                .into_iter()
                .map(|g| {
                    if g <= min_x {
                        low_inner
                    } else if g >= max_x {
                        high_inner
                    } else {
                        g
                    }
                })
                .collect();
            values.dedup();
            Ok(GammaGrid { values, source: GridSource::TnarQuantile })
        }
        other => Err(Error::Unsupported(format!("no nuisance grid for the {other} family"))),
    }
}

/// Number of tested coordinates for a nuisance family.
pub fn k2(family: Family) -> Result<usize> {
    match family {
        Family::Stnar => Ok(1),
        Family::Tnar => Ok(3),
        other => Err(Error::Unsupported(format!("{other} has no unidentified nuisance parameter"))),
    }
}

#[inline]
fn fill_h(family: Family, gamma: f64, x: f64, y: f64, out: &mut [f64]) {
    match family {
        Family::Stnar => out[0] = (-gamma * x * x).exp() * x,
        _ => {
            let ind = if x <= gamma { 1.0 } else { 0.0 };
            out[0] = ind;
            out[1] = ind * x;
            out[2] = ind * y;
        }
    }
}

/// LM statistics over a grid, with the pieces the bootstrap reuses.
#[derive(Debug, Clone)]
pub struct LMProfile {
    pub family: Family,
    pub domain: Domain,
    /// Retained grid points (degenerate points removed).
    pub grid: GammaGrid,
    pub lm: Vec<f64>,
    pub k2: usize,
    pub dropped_points: Vec<f64>,
    /// Per retained point: per-time partial scores projected off the linear
    /// block, `s_t^(2) - H21 H11^-1 s_t^(1)`, one row per usable time step.
    /// Their outer products sum to the corrected covariance.
    pub per_time_scores: Vec<DMatrix<f64>>,
    /// Per retained point: pseudo-inverse of the corrected covariance.
    pub sigma_inv: Vec<DMatrix<f64>>,
    pub null_theta: Vec<f64>,
}

/// Profile of the quasi-score statistic against the STNAR or TNAR
/// alternative. Fits the linear null internally.
pub fn lm_profile(panel: &Panel, net: &Network, family: Family, grid: &GammaGrid) -> Result<LMProfile> {
    k2(family)?;
    let fit = fit_linear(panel, net)?;
    lm_profile_with_fit(panel, net, family, grid, &fit)
}

pub fn lm_profile_with_fit(
    panel: &Panel,
    net: &Network,
    family: Family,
    grid: &GammaGrid,
    null_fit: &FitResult,
) -> Result<LMProfile> {
    let k2 = k2(family)?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty gamma grid".into()));
    }
    if !null_fit.converged {
        return Err(Error::NotConverged { iterations: null_fit.iterations });
    }
    if null_fit.family != Family::Linear || null_fit.domain != panel.domain() {
        return Err(Error::InvalidArgument("null fit must be a linear fit on the same panel".into()));
    }
    let design = Design::new(panel, net)?;
    let domain = panel.domain();
    let count = domain == Domain::Count;
    let [b0, b1, b2] = [null_fit.theta_hat[0], null_fit.theta_hat[1], null_fit.theta_hat[2]];
    let n = design.n();
    let steps = design.steps();

    // Per-observation residual weight and Hessian weight under the null.
    let mut resid = vec![0.0; n * steps];
    let mut hw = vec![0.0; n * steps];
    let mut s1 = DMatrix::<f64>::zeros(steps, 3);
    let mut h11 = DMatrix::<f64>::zeros(3, 3);
    for s in 0..steps {
        for i in 0..n {
            let (x, yl, y) = design.obs(s, i);
            let lambda = b0 + b1 * x + b2 * yl;
            let (r, w) = if count {
                if !(lambda > 0.0) {
                    return Err(Error::IntensityTooSmall { node: i, time: s + 2, value: lambda });
                }
                ((y - lambda) / lambda, y / (lambda * lambda))
            } else {
                (y - lambda, 1.0)
            };
            resid[s * n + i] = r;
            hw[s * n + i] = w;
            let z = [1.0, x, yl];
            for a in 0..3 {
                s1[(s, a)] += r * z[a];
                for c in 0..3 {
                    h11[(a, c)] += w * z[a] * z[c];
                }
            }
        }
    }
    let b11 = s1.transpose() * &s1;
    let h11_inv = h11.clone().try_inverse().ok_or_else(|| Error::Singular("H11 block".into()))?;

    let mut kept = Vec::new();
    let mut lm = Vec::new();
    let mut dropped = Vec::new();
    let mut per_time_scores = Vec::new();
    let mut sigma_inv = Vec::new();
    let mut h = vec![0.0; k2];
    for &gamma in &grid.values {
        let mut s2 = DMatrix::<f64>::zeros(steps, k2);
        let mut h21 = DMatrix::<f64>::zeros(k2, 3);
        let mut h22 = DMatrix::<f64>::zeros(k2, k2);
        for s in 0..steps {
            for i in 0..n {
                let (x, yl, _) = design.obs(s, i);
                fill_h(family, gamma, x, yl, &mut h);
                let r = resid[s * n + i];
                let w = hw[s * n + i];
                let z = [1.0, x, yl];
                for a in 0..k2 {
                    if h[a] == 0.0 {
                        continue;
                    }
                    s2[(s, a)] += r * h[a];
                    for c in 0..3 {
                        h21[(a, c)] += w * h[a] * z[c];
                    }
                    for c in 0..k2 {
                        h22[(a, c)] += w * h[a] * h[c];
                    }
                }
            }
        }
        let m = 3 + k2;
        let mut hm = DMatrix::<f64>::zeros(m, m);
        let mut bm = DMatrix::<f64>::zeros(m, m);
        hm.view_mut((0, 0), (3, 3)).copy_from(&h11);
        hm.view_mut((3, 0), (k2, 3)).copy_from(&h21);
        hm.view_mut((0, 3), (3, k2)).copy_from(&h21.transpose());
        hm.view_mut((3, 3), (k2, k2)).copy_from(&h22);
        let b12 = s1.transpose() * &s2;
        bm.view_mut((0, 0), (3, 3)).copy_from(&b11);
        bm.view_mut((0, 3), (3, k2)).copy_from(&b12);
        bm.view_mut((3, 0), (k2, 3)).copy_from(&b12.transpose());
        bm.view_mut((3, 3), (k2, k2)).copy_from(&(s2.transpose() * &s2));
        let sigma = sigma_correction(&hm, &bm, 3)?;
        let finite = sigma.iter().all(|v| v.is_finite());
        if !finite || eigen_ratio(&sigma) < DEGENERATE_RATIO {
            log::warn!("dropping degenerate grid point gamma = {gamma}");
            dropped.push(gamma);
            continue;
        }
        let (inv, _) = pinv_sym(&sigma, PINV_CUTOFF);
        let total = DVector::from_iterator(k2, (0..k2).map(|a| s2.column(a).sum()));
        lm.push(quad_form(&inv, &total).max(0.0));
        kept.push(gamma);
        let proj = &h21 * &h11_inv;
        per_time_scores.push(s2 - &s1 * proj.transpose());
        sigma_inv.push(inv);
    }
    if kept.is_empty() {
        return Err(Error::AllGridPointsDegenerate);
    }
    Ok(LMProfile {
        family,
        domain,
        grid: GammaGrid { values: kept, source: grid.source },
        lm,
        k2,
        dropped_points: dropped,
        per_time_scores,
        sigma_inv,
        null_theta: null_fit.theta_hat.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Sup,
    Ave,
}

impl FromStr for Aggregate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sup" => Ok(Aggregate::Sup),
            "ave" | "avg" | "mean" => Ok(Aggregate::Ave),
            other => Err(Error::Parse(format!("unknown aggregate '{other}'"))),
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Sup => "sup",
            Aggregate::Ave => "ave",
        })
    }
}

pub fn aggregate_values(values: &[f64], g: Aggregate) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("empty profile".into()));
    }
    Ok(match g {
        Aggregate::Sup => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Aggregate::Ave => values.iter().sum::<f64>() / values.len() as f64,
    })
}

pub fn aggregate(profile: &LMProfile, g: Aggregate) -> Result<f64> {
    aggregate_values(&profile.lm, g)
}

/// Total variation `sum |sqrt(LM_{j+1}) - sqrt(LM_j)|` of a profile.
pub fn total_variation(lm: &[f64]) -> f64 {
    lm.windows(2).map(|w| (w[1].sqrt() - w[0].sqrt()).abs()).sum()
}

/// Davies upper bound on the p-value of `sup LM` for raw profile values.
pub fn davies_bound(lm: &[f64], k2: usize) -> Result<f64> {
    if lm.len() < 2 {
        return Err(Error::InvalidArgument("the Davies bound needs at least two grid points".into()));
    }
    if k2 < 1 {
        return Err(Error::InvalidArgument("k2 must be at least 1".into()));
    }
    let m = aggregate_values(lm, Aggregate::Sup)?;
    let v = total_variation(lm);
    let k = k2 as f64;
    let tail = chi2_sf(m, k2)?;
    let corr = if v > 0.0 {
        v * m.powf((k - 1.0) / 2.0) * (-m / 2.0).exp() * 2f64.powf(-k / 2.0) / gamma_fn(k / 2.0)
    } else {
        0.0
    };
    Ok((tail + corr).min(1.0))
}

/// Davies bound for a profile; only scalar smooth nuisance (STNAR).
pub fn davies_pvalue(profile: &LMProfile) -> Result<f64> {
    if profile.family == Family::Tnar {
        return Err(Error::Unsupported(
            "the Davies bound needs a differentiable profile; use the bootstrap for TNAR".into(),
        ));
    }
    if profile.k2 != 1 {
        return Err(Error::Unsupported("the Davies bound is implemented for scalar nuisance only".into()));
    }
    davies_bound(&profile.lm, profile.k2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapDiagnostics {
    pub draws: Vec<f64>,
    pub statistic: f64,
    pub exceedances: usize,
}

/// Perturbed statistic for one set of multipliers `nu`.
pub fn perturbed_aggregate(profile: &LMProfile, nu: &[f64], g: Aggregate) -> Result<f64> {
    let mut vals = Vec::with_capacity(profile.lm.len());
    for (s2, inv) in profile.per_time_scores.iter().zip(&profile.sigma_inv) {
        if nu.len() != s2.nrows() {
            return Err(Error::Shape(format!("{} multipliers for {} time steps", nu.len(), s2.nrows())));
        }
        let total = s2.transpose() * DVector::from_column_slice(nu);
        vals.push(quad_form(inv, &total).max(0.0));
    }
    aggregate_values(&vals, g)
}

/// Score-bootstrap p-value with `j` replications. Replication `j` draws one
/// N(0, 1) multiplier per time step from the stream seeded by
/// `derive_seed(seed, j)` and applies it at every grid point.
pub fn hansen_bootstrap(profile: &LMProfile, g: Aggregate, j: usize, seed: u64) -> Result<(f64, BootstrapDiagnostics)> {
    if j < 1 {
        return Err(Error::InvalidArgument("bootstrap needs at least one replication".into()));
    }
    let statistic = aggregate(profile, g)?;
    let steps = profile.per_time_scores[0].nrows();
    let draws: Vec<f64> = (0..j)
        .into_par_iter()
        .map(|r| {
            let mut stream = Stream::new(derive_seed(seed, r as u64));
            let nu: Vec<f64> = (0..steps).map(|_| stream.normal()).collect();
            perturbed_aggregate(profile, &nu, g)
        })
        .collect::<Result<_>>()?;
    let exceedances = draws.iter().filter(|&&d| d >= statistic).count();
    Ok((exceedances as f64 / j as f64, BootstrapDiagnostics { draws, statistic, exceedances }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueMethod {
    Davies,
    Bootstrap,
    Both,
}

impl FromStr for PValueMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "davies" => Ok(Self::Davies),
            "bootstrap" | "boot" => Ok(Self::Bootstrap),
            "both" => Ok(Self::Both),
            other => Err(Error::Parse(format!("unknown p-value method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTestResult {
    pub g_sup: f64,
    pub g_ave: f64,
    pub davies_p: Option<f64>,
    pub boot_p: Option<f64>,
    #[serde(rename = "J")]
    pub j: Option<usize>,
    #[serde(rename = "V")]
    pub v: f64,
    pub seed: Option<u64>,
    pub agg: Aggregate,
}

impl ProfileTestResult {
    /// The p-value of the requested method (bootstrap preferred when both).
    pub fn p_value(&self) -> Option<f64> {
        self.boot_p.or(self.davies_p)
    }
}

/// Runs the profile test and attaches the requested p-values.
pub fn profile_test(
    profile: &LMProfile,
    method: PValueMethod,
    agg: Aggregate,
    j: usize,
    seed: u64,
) -> Result<ProfileTestResult> {
    let davies_p = match method {
        PValueMethod::Davies | PValueMethod::Both => Some(davies_pvalue(profile)?),
        PValueMethod::Bootstrap => None,
    };
    let (boot_p, j, seed) = match method {
        PValueMethod::Bootstrap | PValueMethod::Both => (Some(hansen_bootstrap(profile, agg, j, seed)?.0), Some(j), Some(seed)),
        PValueMethod::Davies => (None, None, None),
    };
    Ok(ProfileTestResult {
        g_sup: aggregate(profile, Aggregate::Sup)?,
        g_ave: aggregate(profile, Aggregate::Ave)?,
        davies_p,
        boot_p,
        j,
        v: total_variation(&profile.lm),
        seed,
        agg,
    })
}

impl LMProfile {
    pub fn to_json(&self, result: &ProfileTestResult) -> serde_json::Value {
        json!({
            "g_sup": result.g_sup,
            "g_ave": result.g_ave,
            "davies_p": result.davies_p,
            "boot_p": result.boot_p,
            "J": result.j,
            "V": result.v,
            "agg": result.agg,
            "grid": self.grid.values,
            "profile": self.lm,
            "dropped_points": self.dropped_points,
            "seed": result.seed,
            "family": self.family,
            "domain": self.domain,
            "k2": self.k2,
            "null_theta": self.null_theta,
        })
    }
}
