//! Closed-form spectra and variances for the line, ring and complete
//! graphs, the trace identity for the average variance, and the tree
//! Wiener-index connection.
//!
//! Everything here assumes `Q = sigma2 * I`; covariances scale linearly in
//! `sigma2` and Laplacian eigenvalues by `1 / sigma2`. Antenna indices are
//! 0-based.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calibrate::GeneralizedLaplacian;
use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::topology::Topology;

/// `N * sum 1/λ_i` over a tree equals this constant times its Wiener index.
/// Fixed by exhaustive enumeration of labeled trees up to seven nodes.
pub const TREE_WIENER_CONSTANT: f64 = 1.0;

/// Cosine eigenvectors of the unit-noise line Laplacian with their
/// eigenvalues `4 sin^2(k π / 2N)`, `k = 0..N`. Vector `k = 0` is all ones.
pub fn line_eigenpairs(n: usize) -> Result<(Vec<DVector<f64>>, Vec<f64>)> {
    if n < 2 {
        return Err(Error::InvalidTopology("line needs at least two nodes".into()));
    }
    let nf = n as f64;
    let vectors = (0..n)
        .map(|k| DVector::from_fn(n, |i, _| ((2 * i + 1) as f64 * k as f64 * PI / (2.0 * nf)).cos()))
        .collect();
    let values = (0..n).map(|k| line_eigenvalue(k, n)).collect();
    Ok((vectors, values))
}

fn line_eigenvalue(k: usize, n: usize) -> f64 {
    let s = (k as f64 * PI / (2.0 * n as f64)).sin();
    4.0 * s * s
}

/// Variance of the estimate at antenna `node` (0-based) of a line of `n`
/// antennas with `Q = sigma2 * I`, from the eigenvector expansion.
pub fn line_variance(node: usize, n: usize, sigma2: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidTopology("line needs at least two nodes".into()));
    }
    if node >= n {
        return Err(Error::IndexOutOfRange {
            index: node,
            node_count: n,
        });
    }
    let nf = n as f64;
    // every non-constant eigenvector has squared norm N/2
    let half = nf / 2.0;
    let sum: f64 = (1..n)
        .map(|k| {
            let c = ((2 * node + 1) as f64 * k as f64 * PI / (2.0 * nf)).cos();
            let s = (k as f64 * PI / (2.0 * nf)).sin();
            c * c / (s * s * half)
        })
        .sum();
    Ok(sigma2 * sum / 4.0)
}

pub fn line_lower_bound(n: usize) -> f64 {
    n as f64 / (32.0 * PI * PI)
}

pub fn ring_lower_bound(n: usize) -> f64 {
    n as f64 / (4.0 * PI * PI)
}

/// Common diagonal covariance entry of the unit-noise ring, `(N^2 - 1) / 12N`.
pub fn ring_variance(n: usize, sigma2: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidTopology("ring needs at least three nodes".into()));
    }
    let nf = n as f64;
    Ok(sigma2 * (nf * nf - 1.0) / (12.0 * nf))
}

pub fn complete_variance(n: usize, sigma2: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidTopology("complete graph needs at least two nodes".into()));
    }
    let nf = n as f64;
    Ok(sigma2 * (1.0 / nf - 1.0 / (nf * nf)))
}

/// Mean of the diagonal of the full-case covariance, as `(1/N) sum 1/λ_i`
/// over the eigenvalues of `Z^T L Z`.
pub fn average_variance(gl: &GeneralizedLaplacian) -> Result<f64> {
    if gl.omega().is_some() {
        return Err(Error::Degenerate("average variance is defined for the full problem".into()));
    }
    let sum: f64 = gl.reduced_eigenvalues().iter().map(|l| 1.0 / l).sum();
    Ok(sum / gl.node_count() as f64)
}

/// Sum of hop distances over unordered node pairs.
pub fn wiener_index(t: &Topology) -> Result<u64> {
    let adj = t.neighbors();
    let n = t.node_count();
    let mut total = 0u64;
    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for source in 0..n {
        dist.fill(usize::MAX);
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        if dist.contains(&usize::MAX) {
            return Err(Error::Disconnected);
        }
        total += dist[source + 1..].iter().map(|&d| d as u64).sum::<u64>();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeWienerCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub relative_gap: f64,
}

/// Compare `N * sum 1/λ_i` (unit noise) with the constant times the Wiener index.
pub fn tree_wiener_check(tree: &Topology) -> Result<TreeWienerCheck> {
    if !tree.is_tree() {
        return Err(Error::NotATree(format!(
            "{} nodes, {} edges",
            tree.node_count(),
            tree.edge_count()
        )));
    }
    let q = NoiseModel::scalar(tree.edge_count(), 1.0)?;
    let gl = GeneralizedLaplacian::full(&tree.incidence(), &q)?;
    let n = tree.node_count() as f64;
    let lhs = n * gl.reduced_eigenvalues().iter().map(|l| 1.0 / l).sum::<f64>();
    let rhs = TREE_WIENER_CONSTANT * wiener_index(tree)? as f64;
    Ok(TreeWienerCheck {
        lhs,
        rhs,
        relative_gap: (lhs - rhs).abs() / rhs,
    })
}

/// Labeled tree on `seq.len() + 2` nodes decoded from a Prüfer sequence.
pub fn pruefer_tree(seq: &[usize]) -> Result<Topology> {
    let n = seq.len() + 2;
    if let Some(&bad) = seq.iter().find(|&&s| s >= n) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            node_count: n,
        });
    }
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&i| degree[i] == 1).expect("a leaf always exists");
        edges.push((leaf, s));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    edges.push((rest[0], rest[1]));
    Topology::from_edge_list(n, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClosedFormKind {
    Line,
    Ring,
    Complete,
}

impl fmt::Display for ClosedFormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClosedFormKind::Line => "line",
            ClosedFormKind::Ring => "ring",
            ClosedFormKind::Complete => "complete",
        })
    }
}

impl FromStr for ClosedFormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "line" => Ok(ClosedFormKind::Line),
            "ring" => Ok(ClosedFormKind::Ring),
            "complete" => Ok(ClosedFormKind::Complete),
            other => Err(Error::Parse(format!("no closed form for topology `{other}`"))),
        }
    }
}

/// Closed-form eigenvalues and per-node variances next to their deviation
/// from the numeric computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormReport {
    #[serde(rename = "topology")]
    pub topology_kind: ClosedFormKind,
    #[serde(rename = "N")]
    pub node_count: usize,
    pub sigma2: f64,
    /// Nonzero Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    #[serde(rename = "variances")]
    pub per_node_variance: Vec<f64>,
    /// Lower bound on every variance; the complete graph has none.
    pub bound: Option<f64>,
    pub max_rel_dev: f64,
    pub matches_numeric: bool,
}

/// Relative deviation at which a closed form counts as matching.
pub const CLOSED_FORM_TOLERANCE: f64 = 1e-10;

fn max_rel_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

pub fn closed_form_report(kind: ClosedFormKind, n: usize, sigma2: f64) -> Result<ClosedFormReport> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("noise variance {sigma2}")));
    }
    let (topology, mut eigenvalues, variances, bound) = match kind {
        ClosedFormKind::Line => {
            let t = Topology::line(n)?;
            let ev = (1..n).map(|k| line_eigenvalue(k, n) / sigma2).collect::<Vec<_>>();
            let var = (0..n).map(|i| line_variance(i, n, sigma2)).collect::<Result<Vec<_>>>()?;
            (t, ev, var, Some(sigma2 * line_lower_bound(n)))
        }
        ClosedFormKind::Ring => {
            let t = Topology::ring(n)?;
            let ev = (1..n)
                .map(|k| {
                    let s = (k as f64 * PI / n as f64).sin();
                    4.0 * s * s / sigma2
                })
                .collect();
            let var = vec![ring_variance(n, sigma2)?; n];
            (t, ev, var, Some(sigma2 * ring_lower_bound(n)))
        }
        ClosedFormKind::Complete => {
            let t = Topology::complete(n)?;
            let ev = vec![n as f64 / sigma2; n - 1];
            let var = vec![complete_variance(n, sigma2)?; n];
            (t, ev, var, None)
        }
    };
    eigenvalues.sort_by(f64::total_cmp);
    let q = NoiseModel::scalar(topology.edge_count(), sigma2)?;
    let gl = GeneralizedLaplacian::full(&topology.incidence(), &q)?;
    let mut numeric_ev = gl.reduced_eigenvalues().to_vec();
    numeric_ev.sort_by(f64::total_cmp);
    let cov: DMatrix<f64> = gl.covariance();
    let numeric_var: Vec<f64> = cov.diagonal().iter().copied().collect();
    let dev = max_rel_dev(&eigenvalues, &numeric_ev).max(max_rel_dev(&variances, &numeric_var));
    Ok(ClosedFormReport {
        topology_kind: kind,
        node_count: n,
        sigma2,
        eigenvalues,
        per_node_variance: variances,
        bound,
        max_rel_dev: dev,
        matches_numeric: dev <= CLOSED_FORM_TOLERANCE,
    })
}
