//! N x T observation panels and their CSV form.
//!
//! CSV layout: a header row of node labels, then one row per time step.
//! Count panels are written as integers.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Domain;
use crate::netgraph::{check_permutation, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    n: usize,
    t: usize,
    domain: Domain,
    /// Time-major: `values[t * n + i]`.
    values: Vec<f64>,
    labels: Vec<String>,
    /// Index of the first stored time step in the generating recursion.
    pub t0: usize,
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

impl Panel {
    /// Builds a panel from time-major values.
    pub fn from_time_major(n: usize, t: usize, domain: Domain, values: Vec<f64>) -> Result<Self> {
        Self::with_labels(n, t, domain, values, default_labels(n))
    }

    pub fn with_labels(n: usize, t: usize, domain: Domain, values: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if n == 0 || t == 0 {
            return Err(Error::Shape("panel needs at least one node and one time step".into()));
        }
        if values.len() != n * t {
            return Err(Error::Shape(format!("{} values for a {n}x{t} panel", values.len())));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} nodes", labels.len())));
        }
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("panel cell (node {}, time {})", k % n, k / n)));
            }
            if domain == Domain::Count && (v < 0.0 || v.fract() != 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "count panel cell (node {}, time {}) = {v} is not a nonnegative integer",
                    k % n,
                    k / n
                )));
            }
        }
        Ok(Self { n, t, domain, values, labels, t0: 0 })
    }

    /// Builds a panel from one vector per time step.
    pub fn from_rows(rows: &[Vec<f64>], domain: Domain) -> Result<Self> {
        let t = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("ragged panel rows".into()));
        }
        Self::from_time_major(n, t, domain, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Observation `Y_{i,t}` (0-based time).
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.values[t * self.n + i]
    }

    /// Cross-section `Y_t`.
    pub fn at(&self, t: usize) -> &[f64] {
        &self.values[t * self.n..(t + 1) * self.n]
    }

    /// Time series of node `i`.
    pub fn series(&self, i: usize) -> Vec<f64> {
        (0..self.t).map(|t| self.get(i, t)).collect()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check_network(&self, net: &Network) -> Result<()> {
        if net.n() != self.n {
            return Err(Error::Shape(format!("panel has {} nodes, network has {}", self.n, net.n())));
        }
        Ok(())
    }

    /// Network regressors `X_t = W Y_t` for every time step, time-major.
    pub fn network_effects(&self, net: &Network) -> Result<Vec<f64>> {
        self.check_network(net)?;
        let mut x = vec![0.0; self.values.len()];
        for t in 0..self.t {
            net.network_effect(self.at(t), &mut x[t * self.n..(t + 1) * self.n]);
        }
        Ok(x)
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let mut values = vec![0.0; self.values.len()];
        let mut labels = vec![String::new(); self.n];
        for t in 0..self.t {
            for i in 0..self.n {
                values[t * self.n + perm[i]] = self.get(i, t);
            }
        }
        for i in 0..self.n {
            labels[perm[i]] = self.labels[i].clone();
        }
        Ok(Self { values, labels, ..self.clone() })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: std::io::Write>(&self, w: &mut csv::Writer<W>) -> Result<()> {
        w.write_record(&self.labels)?;
        let mut rec = Vec::with_capacity(self.n);
        for t in 0..self.t {
            rec.clear();
            for &v in self.at(t) {
                rec.push(match self.domain {
                    Domain::Count => format!("{}", v as u64),
                    Domain::Continuous => format!("{v:?}"),
                });
            }
            w.write_record(&rec)?;
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>, domain: Domain) -> Result<Self> {
        let rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
        Self::read_from(rdr, domain)
    }

    pub fn read_from<R: std::io::Read>(mut rdr: csv::Reader<R>, domain: Domain) -> Result<Self> {
        let labels: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let n = labels.len();
        let mut values = Vec::new();
        let mut t = 0;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != n {
                return Err(Error::Shape(format!("row {} has {} cells, header has {n}", row + 1, rec.len())));
            }
            for (i, cell) in rec.iter().enumerate() {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}, column {}: '{cell}' is not numeric", row + 1, i + 1)))?;
                if domain == Domain::Count && v < 0.0 {
                    return Err(Error::NegativeCount { node: i, value: v });
                }
                values.push(v);
            }
            t += 1;
        }
        Self::with_labels(n, t, domain, values, labels)
    }
}

/// Reads a panel CSV.
pub fn load_panel_csv(path: impl AsRef<Path>, domain: Domain) -> Result<Panel> {
    Panel::read_csv(path, domain)
}
