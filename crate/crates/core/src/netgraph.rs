//! Directed networks and the row-normalized adjacency operator.
//!
//! A [`Network`] stores its edges as sorted adjacency lists (CSR layout), so
//! the network regressor `X = W y` costs `O(|edges|)`. Nodes with no outgoing
//! edges keep an all-zero row of `W` and are reported in `warnings`.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// What to do with `(i, i)` pairs handed to [`Network::from_edges`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelfLoops {
    #[default]
    Reject,
    Drop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    warnings: Vec<String>,
}

impl Network {
    /// Builds the network and its row-normalized operator from a directed
    /// edge set. Duplicate edges are collapsed with a warning.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], self_loops: SelfLoops) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("a network needs at least one node".into()));
        }
        let mut warnings = Vec::new();
        let mut set = BTreeSet::new();
        let mut duplicates = 0usize;
        let mut dropped_loops = 0usize;
        for &(i, j) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::NodeOutOfRange { index, n });
                }
            }
            if i == j {
                match self_loops {
                    SelfLoops::Reject => return Err(Error::SelfLoop(i)),
                    SelfLoops::Drop => {
                        dropped_loops += 1;
                        continue;
                    }
                }
            }
            if !set.insert((i, j)) {
                duplicates += 1;
            }
        }
        if duplicates > 0 {
            warnings.push(format!("{duplicates} duplicate edge(s) removed"));
        }
        if dropped_loops > 0 {
            warnings.push(format!("{dropped_loops} self-loop(s) dropped"));
        }

        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(set.len());
        for &(i, j) in &set {
            row_ptr[i + 1] += 1;
            cols.push(j);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let isolated = (0..n).filter(|&i| row_ptr[i + 1] == row_ptr[i]).count();
        if isolated > 0 {
            let msg = format!("{isolated} node(s) with zero out-degree have an all-zero row in W");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        Ok(Self { n, row_ptr, cols, warnings })
    }

    /// Undirected pairs are stored as two directed edges.
    pub fn from_undirected(n: usize, pairs: &[(usize, usize)], self_loops: SelfLoops) -> Result<Self> {
        let edges: Vec<_> = pairs.iter().flat_map(|&(i, j)| [(i, j), (j, i)]).collect();
        Self::from_edges(n, &edges, self_loops)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.cols.len()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn has_isolated_nodes(&self) -> bool {
        (0..self.n).any(|i| self.out_degree(i) == 0)
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.out_degree(i)).collect()
    }

    /// Targets of node `i`, sorted ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    /// Sorted directed edge list.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.n).flat_map(|i| self.neighbors(i).iter().map(move |&j| (i, j))).collect()
    }

    /// Entry `w_ij` of the row-normalized adjacency matrix.
    pub fn w(&self, i: usize, j: usize) -> f64 {
        match self.neighbors(i).binary_search(&j) {
            Ok(_) => 1.0 / self.out_degree(i) as f64,
            Err(_) => 0.0,
        }
    }

    /// Row `i` of `W` as `(column, weight)` pairs.
    pub fn w_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let d = self.out_degree(i);
        let weight = if d > 0 { 1.0 / d as f64 } else { 0.0 };
        self.neighbors(i).iter().map(move |&j| (j, weight))
    }

    /// Network regressor `X_i = sum_j w_ij y_j`.
    pub fn network_effect(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        for (i, o) in out.iter_mut().enumerate() {
            let nb = self.neighbors(i);
            *o = if nb.is_empty() {
                0.0
            } else {
                nb.iter().map(|&j| y[j]).sum::<f64>() / nb.len() as f64
            };
        }
    }

    pub fn apply_w(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.network_effect(y, &mut out);
        out
    }

    /// Column sums of `W`.
    pub fn w_col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n];
        for i in 0..self.n {
            for (j, w) in self.w_row(i) {
                sums[j] += w;
            }
        }
        sums
    }

    /// Dense copy of `W` (row-major), for tests and small networks.
    pub fn dense_w(&self) -> Vec<Vec<f64>> {
        let mut w = vec![vec![0.0; self.n]; self.n];
        for (i, row) in w.iter_mut().enumerate() {
            for (j, v) in self.w_row(i) {
                row[j] = v;
            }
        }
        w
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.n)?;
        let edges: Vec<_> = self.edges().into_iter().map(|(i, j)| (perm[i], perm[j])).collect();
        Self::from_edges(self.n, &edges, SelfLoops::Reject)
    }

    pub fn summary(&self) -> NetworkSummary {
        network_summary(self)
    }
}

pub(crate) fn check_permutation(perm: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Shape(format!("permutation of length {} for {n} nodes", perm.len())));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::InvalidArgument("not a permutation".into()));
        }
    }
    Ok(())
}

/// Equivalent to [`Network::from_edges`] with self-loops rejected.
pub fn row_normalize(edges: &[(usize, usize)], n: usize) -> Result<Network> {
    Network::from_edges(n, edges, SelfLoops::Reject)
}

/// Stochastic block model: blocks assigned uniformly at random, edge
/// probability `n^-0.3` within a block and `1/n` across blocks.
pub fn gen_sbm(n: usize, k: usize, seed: u64) -> Result<Network> {
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!("SBM needs n >= k >= 1 (n={n}, k={k})")));
    }
    let mut stream = Stream::new(seed);
    let blocks: Vec<usize> = (0..n).map(|_| stream.below(k)).collect();
    let p_in = (n as f64).powf(-0.3);
    let p_out = 1.0 / n as f64;
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let p = if blocks[i] == blocks[j] { p_in } else { p_out };
            if stream.uniform() < p {
                edges.push((i, j));
            }
        }
    }
    Network::from_edges(n, &edges, SelfLoops::Reject)
}

/// Default Erdos-Renyi edge probability `n^-0.3`.
pub fn default_er_probability(n: usize) -> f64 {
    (n as f64).powf(-0.3)
}

/// Erdos-Renyi graph: every ordered pair `i != j` is an edge with
/// probability `p`, independently.
pub fn gen_er(n: usize, p: Option<f64>, seed: u64) -> Result<Network> {
    let p = p.unwrap_or_else(|| default_er_probability(n));
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("edge probability {p} outside [0, 1]")));
    }
    let mut stream = Stream::new(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && stream.uniform() < p {
                edges.push((i, j));
            }
        }
    }
    Network::from_edges(n, &edges, SelfLoops::Reject)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSummary {
    pub nodes: usize,
    pub edges: usize,
    pub density: f64,
    pub median_out_degree: f64,
    pub zero_out_degree: usize,
}

pub fn network_summary(net: &Network) -> NetworkSummary {
    let n = net.n();
    let density = if n > 1 { net.edge_count() as f64 / (n * (n - 1)) as f64 } else { 0.0 };
    let mut deg = net.out_degrees();
    deg.sort_unstable();
    let median_out_degree = if n % 2 == 1 {
        deg[n / 2] as f64
    } else {
        0.5 * (deg[n / 2 - 1] + deg[n / 2]) as f64
    };
    NetworkSummary {
        nodes: n,
        edges: net.edge_count(),
        density,
        median_out_degree,
        zero_out_degree: deg.iter().filter(|&&d| d == 0).count(),
    }
}

/// Reads an edge list: one `i j` pair per line (0-based), `#` comments.
/// The node count is `n` when given, else a `# nodes N` comment if present,
/// else one past the largest index.
pub fn load_edges(path: impl AsRef<Path>, n: Option<usize>) -> Result<Network> {
    let file = std::fs::File::open(path)?;
    let mut edges = Vec::new();
    let mut hint = None;
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("nodes") {
                hint = v.trim().parse::<usize>().ok();
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let mut next = || -> Result<usize> {
            parts
                .next()
                .ok_or_else(|| Error::Parse(format!("line {}: expected two node indices", lineno + 1)))?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))
        };
        let (i, j) = (next()?, next()?);
        edges.push((i, j));
    }
    let inferred = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
    let n = n.or(hint).unwrap_or(inferred);
    Network::from_edges(n, &edges, SelfLoops::Reject)
}

pub fn write_edges(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "# nodes {}", net.n())?;
    for (i, j) in net.edges() {
        writeln!(out, "{i} {j}")?;
    }
    out.flush()?;
    Ok(())
}
