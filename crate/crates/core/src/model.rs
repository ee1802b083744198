//! Model families, conditional means, analytic derivatives and stability checks.
//!
//! Parameter layout (linear block first, always):
//!
//! | family           | theta                                   | Jacobian columns            |
//! |------------------|-----------------------------------------|-----------------------------|
//! | `Linear`         | `b0, b1, b2`                            | `b0, b1, b2`                |
//! | `InterceptDrift` | `b0, b1, b2, gamma`                     | `b0, b1, b2, gamma`         |
//! | `Stnar`          | `b0, b1, b2, alpha, gamma`              | `b0, b1, b2, alpha, gamma`  |
//! | `Tnar`           | `b0, b1, b2, a0, a1, a2, gamma`         | `b0, b1, b2, a0, a1, a2`    |
//!
//! The TNAR threshold is never differentiated; it is a fixed grid coordinate.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Count,
    #[serde(alias = "cont")]
    Continuous,
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "count" | "pnar" => Ok(Domain::Count),
            "cont" | "continuous" | "nar" => Ok(Domain::Continuous),
            other => Err(Error::Parse(format!("unknown domain '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    #[serde(rename = "drift")]
    InterceptDrift,
    Stnar,
    Tnar,
}

impl Family {
    pub fn n_params(self) -> usize {
        match self {
            Family::Linear => 3,
            Family::InterceptDrift => 4,
            Family::Stnar => 5,
            Family::Tnar => 7,
        }
    }

    /// Number of differentiated coordinates (Jacobian columns).
    pub fn n_grad(self) -> usize {
        match self {
            Family::Tnar => 6,
            f => f.n_params(),
        }
    }

    /// Size of the nonlinear block of `theta`.
    pub fn m2(self) -> usize {
        self.n_params() - 3
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Linear => "linear",
            Family::InterceptDrift => "drift",
            Family::Stnar => "stnar",
            Family::Tnar => "tnar",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    family: Family,
    domain: Domain,
    theta: Vec<f64>,
}

impl ModelSpec {
    pub fn new(family: Family, domain: Domain, theta: Vec<f64>) -> Result<Self> {
        let spec = Self { family, domain, theta };
        spec.validate()?;
        Ok(spec)
    }

    /// Skips admissibility checks (e.g. a zero intercept); only the
    /// parameter count is verified.
    #[doc(hidden)]
    pub fn new_unchecked(family: Family, domain: Domain, theta: Vec<f64>) -> Self {
        assert_eq!(theta.len(), family.n_params());
        Self { family, domain, theta }
    }

    pub fn linear(domain: Domain, beta: [f64; 3]) -> Result<Self> {
        Self::new(Family::Linear, domain, beta.to_vec())
    }

    pub fn intercept_drift(domain: Domain, beta: [f64; 3], gamma: f64) -> Result<Self> {
        Self::new(Family::InterceptDrift, domain, vec![beta[0], beta[1], beta[2], gamma])
    }

    pub fn stnar(domain: Domain, beta: [f64; 3], alpha: f64, gamma: f64) -> Result<Self> {
        Self::new(Family::Stnar, domain, vec![beta[0], beta[1], beta[2], alpha, gamma])
    }

    pub fn tnar(domain: Domain, beta: [f64; 3], alpha: [f64; 3], gamma: f64) -> Result<Self> {
        Self::new(
            Family::Tnar,
            domain,
            vec![beta[0], beta[1], beta[2], alpha[0], alpha[1], alpha[2], gamma],
        )
    }

    /// Parses `linear | drift:gamma=G | stnar:alpha=A,gamma=G |
    /// tnar:a0=..,a1=..,a2=..,gamma=G` and attaches the linear block `beta`.
    pub fn parse(text: &str, domain: Domain, beta: [f64; 3]) -> Result<Self> {
        let (name, args) = match text.split_once(':') {
            Some((n, a)) => (n.trim(), a.trim()),
            None => (text.trim(), ""),
        };
        let mut kv = std::collections::BTreeMap::new();
        for part in args.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value, got '{part}'")))?;
            let v: f64 = v.trim().parse().map_err(|e| Error::Parse(format!("{k}: {e}")))?;
            kv.insert(k.trim().to_ascii_lowercase(), v);
        }
        let mut take = |key: &str| -> Result<f64> {
            kv.remove(key).ok_or_else(|| Error::Parse(format!("model '{name}' needs '{key}='")))
        };
        let spec = match name.to_ascii_lowercase().as_str() {
            "linear" => Self::linear(domain, beta),
            "drift" => Self::intercept_drift(domain, beta, take("gamma")?),
            "stnar" => Self::stnar(domain, beta, take("alpha")?, take("gamma")?),
            "tnar" => {
                let a = [take("a0")?, take("a1")?, take("a2")?];
                Self::tnar(domain, beta, a, take("gamma")?)
            }
            other => return Err(Error::Parse(format!("unknown model family '{other}'"))),
        }?;
        if let Some(k) = kv.keys().next() {
            return Err(Error::Parse(format!("unexpected parameter '{k}' for model '{name}'")));
        }
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let want = self.family.n_params();
        if self.theta.len() != want {
            return Err(Error::InvalidSpec(format!(
                "{} expects {want} parameters, got {}",
                self.family,
                self.theta.len()
            )));
        }
        if self.theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("non-finite parameter".into()));
        }
        if self.domain == Domain::Count {
            let t = &self.theta;
            if t[0] <= 0.0 || t[1] < 0.0 || t[2] < 0.0 {
                return Err(Error::InvalidSpec(
                    "count models need b0 > 0 and b1, b2 >= 0".into(),
                ));
            }
            let ok = match self.family {
                Family::Linear => true,
                Family::InterceptDrift => t[3] >= 0.0,
                Family::Stnar => t[3] >= 0.0 && t[4] >= 0.0,
                Family::Tnar => t[3..].iter().all(|&v| v >= 0.0),
            };
            if !ok {
                return Err(Error::InvalidSpec(
                    "count models need nonnegative nonlinear parameters".into(),
                ));
            }
        } else if matches!(self.family, Family::InterceptDrift | Family::Stnar) && self.theta[self.theta.len() - 1] < 0.0 {
            return Err(Error::InvalidSpec("gamma must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn beta(&self) -> [f64; 3] {
        [self.theta[0], self.theta[1], self.theta[2]]
    }

    pub fn n_grad(&self) -> usize {
        self.family.n_grad()
    }

    /// Same family and domain with a new parameter vector.
    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.family, self.domain, theta)
    }

    /// The embedded linear model.
    pub fn linear_part(&self) -> ModelSpec {
        Self { family: Family::Linear, domain: self.domain, theta: self.theta[..3].to_vec() }
    }

    /// Drift-term base `1 + x` (uses `|x|` for continuous data).
    fn drift_base(&self, x: f64) -> f64 {
        match self.domain {
            Domain::Count => 1.0 + x,
            Domain::Continuous => 1.0 + x.abs(),
        }
    }

    /// Conditional mean for one node given its network regressor `x` and
    /// own lag `y`.
    #[inline]
    pub fn mean_at(&self, x: f64, y: f64) -> f64 {
        let t = &self.theta;
        match self.family {
            Family::Linear => t[0] + t[1] * x + t[2] * y,
            Family::InterceptDrift => t[0] * self.drift_base(x).powf(-t[3]) + t[1] * x + t[2] * y,
            Family::Stnar => t[0] + (t[1] + t[3] * (-t[4] * x * x).exp()) * x + t[2] * y,
            Family::Tnar => {
                let lin = t[0] + t[1] * x + t[2] * y;
                if x <= t[6] {
                    lin + t[3] + t[4] * x + t[5] * y
                } else {
                    lin
                }
            }
        }
    }

    /// Gradient of [`ModelSpec::mean_at`] with respect to the
    /// differentiated coordinates.
    #[inline]
    pub fn grad_at(&self, x: f64, y: f64, out: &mut [f64]) {
        let t = &self.theta;
        out[1] = x;
        out[2] = y;
        match self.family {
            Family::Linear => out[0] = 1.0,
            Family::InterceptDrift => {
                let base = self.drift_base(x);
                let c = base.powf(-t[3]);
                out[0] = c;
                out[3] = -t[0] * base.ln() * c;
            }
            Family::Stnar => {
                let e = (-t[4] * x * x).exp();
                out[0] = 1.0;
                out[3] = e * x;
                out[4] = -t[3] * x * x * x * e;
            }
            Family::Tnar => {
                let ind = if x <= t[6] { 1.0 } else { 0.0 };
                out[0] = 1.0;
                out[3] = ind;
                out[4] = ind * x;
                out[5] = ind * y;
            }
        }
    }

    /// Nonzero second derivatives `(a, b, value)` with `a <= b`.
    #[inline]
    pub fn hess_at(&self, x: f64, _y: f64, mut visit: impl FnMut(usize, usize, f64)) {
        let t = &self.theta;
        match self.family {
            Family::Linear | Family::Tnar => {}
            Family::InterceptDrift => {
                let base = self.drift_base(x);
                let c = base.powf(-t[3]);
                let l = base.ln();
                visit(0, 3, -l * c);
                visit(3, 3, t[0] * l * l * c);
            }
            Family::Stnar => {
                let e = (-t[4] * x * x).exp();
                let x3 = x * x * x;
                visit(3, 4, -x3 * e);
                visit(4, 4, t[3] * x3 * x * x * e);
            }
        }
    }
}

fn check_inputs(spec: &ModelSpec, net: &Network, y_prev: &[f64]) -> Result<()> {
    if y_prev.len() != net.n() {
        return Err(Error::Shape(format!("y_prev has {} entries for {} nodes", y_prev.len(), net.n())));
    }
    for (i, &v) in y_prev.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("y_prev[{i}] = {v}")));
        }
        if spec.domain == Domain::Count && v < 0.0 {
            return Err(Error::NegativeCount { node: i, value: v });
        }
    }
    Ok(())
}

/// Conditional mean vector `lambda_t` given `Y_{t-1}`.
pub fn cond_mean(spec: &ModelSpec, net: &Network, y_prev: &[f64]) -> Result<Vec<f64>> {
    check_inputs(spec, net, y_prev)?;
    let x = net.apply_w(y_prev);
    Ok(x.iter().zip(y_prev).map(|(&xi, &yi)| spec.mean_at(xi, yi)).collect())
}

/// `N x m` Jacobian of the conditional mean, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CondMeanJacobian {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CondMeanJacobian {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn cond_mean_grad(spec: &ModelSpec, net: &Network, y_prev: &[f64]) -> Result<CondMeanJacobian> {
    check_inputs(spec, net, y_prev)?;
    let x = net.apply_w(y_prev);
    let m = spec.n_grad();
    let mut values = vec![0.0; net.n() * m];
    for (i, row) in values.chunks_mut(m).enumerate() {
        spec.grad_at(x[i], y_prev[i], row);
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("Jacobian entry {v}")));
    }
    Ok(CondMeanJacobian { rows: net.n(), cols: m, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub condition_value: f64,
    pub threshold: f64,
    pub sufficient_holds: bool,
    /// Names the applied sufficient condition. When it does not hold the
    /// result is inconclusive, not a proof of instability.
    pub condition_name: String,
}

/// Evaluates the family-specific sufficient stability condition.
pub fn stability_check(spec: &ModelSpec, net: &Network) -> StabilityVerdict {
    let t = spec.theta();
    let (b0, b1, b2) = (t[0], t[1], t[2]);
    let count = spec.domain() == Domain::Count;
    let (value, name) = match (spec.family(), count) {
        (Family::Linear, true) => (b1 + b2, "linear/count: b1 + b2 < 1"),
        (Family::Linear, false) => (b1.abs() + b2.abs(), "linear/continuous: |b1| + |b2| < 1"),
        (Family::InterceptDrift, true) => {
            let b1_star = b1.max(b0 * t[3] - b1);
            (b1_star + b2, "drift/count: max{b1, b0*gamma - b1} + b2 < 1")
        }
        (Family::InterceptDrift, false) => {
            let g = t[3];
            let b1_bar = b1.abs().max((b0 * g - b1).abs()).max((b1 - b0 * g).abs());
            (b1_bar + b2.abs(), "drift/continuous: max{|b1|, |b0*gamma - b1|, |b1 - b0*gamma|} + |b2| < 1")
        }
        (Family::Stnar, true) => (b1 + t[3] + b2, "stnar/count: b1 + alpha + b2 < 1"),
        (Family::Stnar, false) => (
            b1.abs().max((b1 + t[3]).abs()) + b2.abs(),
            "stnar/continuous: max{|b1|, |b1 + alpha|} + |b2| < 1",
        ),
        (Family::Tnar, true) => {
            let net_coef = (b1 + t[4]).abs();
            let own = (b2 + t[5]).abs();
            let norm1 = net.w_col_sums().iter().map(|c| own + net_coef * c).fold(0.0, f64::max);
            (norm1, "tnar/count: |||(b1 + a1) W + (b2 + a2) I|||_1 < 1")
        }
        (Family::Tnar, false) => (
            b1.abs().max((b1 + t[4]).abs()) + b2.abs().max((b2 + t[5]).abs()),
            "tnar/continuous: max{|b1|, |b1 + a1|} + max{|b2|, |b2 + a2|} < 1",
        ),
    };
    let holds = value < 1.0;
    let condition_name = if holds {
        format!("{name} (holds)")
    } else {
        format!("{name} (fails: inconclusive)")
    };
    StabilityVerdict { condition_value: value, threshold: 1.0, sufficient_holds: holds, condition_name }
}
