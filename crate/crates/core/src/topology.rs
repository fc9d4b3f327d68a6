//! Measurement graphs and their incidence matrices.
//!
//! Nodes are antennas, indexed from 0. Every undirected edge is one
//! pairwise phase-difference measurement and is stored as `(i, j)` with
//! `i < j`. The incidence matrix puts `+1` on the lower endpoint and `-1`
//! on the higher endpoint of each row.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// An undirected edge with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub lo: usize,
    pub hi: usize,
}

impl Edge {
    fn normalized(a: usize, b: usize) -> Self {
        Edge {
            lo: a.min(b),
            hi: a.max(b),
        }
    }
}

/// Who-measures-on-whom graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    node_count: usize,
    edges: Vec<Edge>,
}

impl Topology {
    /// Radio-stripe topology: each antenna measures on its immediate neighbors.
    pub fn line(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!(
                "line needs at least 2 nodes, got {n}"
            )));
        }
        let edges = (0..n - 1).map(|k| Edge { lo: k, hi: k + 1 }).collect();
        Ok(Topology {
            node_count: n,
            edges,
        })
    }

    /// Line plus the closing edge `(0, n-1)`.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidTopology(format!(
                "ring needs at least 3 nodes, got {n}"
            )));
        }
        let mut edges: Vec<Edge> = (0..n - 1).map(|k| Edge { lo: k, hi: k + 1 }).collect();
        edges.push(Edge { lo: 0, hi: n - 1 });
        edges.sort();
        Ok(Topology {
            node_count: n,
            edges,
        })
    }

    /// Planar surface where each antenna measures on its eight nearest
    /// neighbors. Node `r * cols + c` sits at row `r` (counted from the
    /// bottom) and column `c` (counted from the left); there is no wraparound.
    pub fn grid8(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidTopology(format!(
                "grid needs at least 2x2 nodes, got {rows}x{cols}"
            )));
        }
        let idx = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push(Edge::normalized(idx(r, c), idx(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push(Edge::normalized(idx(r, c), idx(r + 1, c)));
                    if c + 1 < cols {
                        edges.push(Edge::normalized(idx(r, c), idx(r + 1, c + 1)));
                        edges.push(Edge::normalized(idx(r, c + 1), idx(r + 1, c)));
                    }
                }
            }
        }
        edges.sort();
        Ok(Topology {
            node_count: rows * cols,
            edges,
        })
    }

    /// Every antenna measures on every other antenna.
    pub fn complete(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidTopology(format!(
                "complete graph needs at least 2 nodes, got {n}"
            )));
        }
        let edges = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| Edge { lo: i, hi: j }))
            .collect();
        Ok(Topology {
            node_count: n,
            edges,
        })
    }

    /// Builds a topology from arbitrary index pairs. Pairs are normalized to
    /// `(lo, hi)` and sorted; a pair given twice (in either orientation) is
    /// rejected.
    pub fn from_edge_list(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidTopology("node count must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in pairs {
            for index in [a, b] {
                if index >= n {
                    return Err(Error::IndexOutOfRange {
                        index,
                        node_count: n,
                    });
                }
            }
            if a == b {
                return Err(Error::SelfLoop(a));
            }
            let e = Edge::normalized(a, b);
            if !seen.insert(e) {
                return Err(Error::DuplicateEdge(e.lo, e.hi));
            }
        }
        Ok(Topology {
            node_count: n,
            edges: seen.into_iter().collect(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.node_count];
        for e in &self.edges {
            deg[e.lo] += 1;
            deg[e.hi] += 1;
        }
        deg
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for e in &self.edges {
            adj[e.lo].push(e.hi);
            adj[e.hi].push(e.lo);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let all: Vec<usize> = (0..self.node_count).collect();
        connected_within(self, &all)
    }

    pub fn is_tree(&self) -> bool {
        self.edge_count() + 1 == self.node_count && self.is_connected()
    }

    /// Whether the subgraph induced by `subset` is connected.
    pub fn omega_connected(&self, subset: &SubsetSpec) -> bool {
        connected_within(self, subset.members())
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        let rows: Vec<(usize, usize)> = self.edges.iter().map(|e| (e.lo, e.hi)).collect();
        let mut b = IncidenceMatrix::from_oriented_rows(self.node_count, &rows)
            .expect("topology edges are valid by construction");
        b.edge_order = (0..self.edges.len()).collect();
        b
    }

    /// Single-source shortest path lengths (in hops); `None` for unreachable nodes.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let adj = self.neighbors();
        let mut dist = vec![None; self.node_count];
        let mut queue = VecDeque::new();
        dist[source] = Some(0);
        queue.push_back(source);
        while let Some(v) = queue.pop_front() {
            let d = dist[v].unwrap();
            for &w in &adj[v] {
                if dist[w].is_none() {
                    dist[w] = Some(d + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Edge-list text: a header line `N M` followed by one `i j` line per edge.
    pub fn to_edge_list_text(&self) -> String {
        let mut out = format!("{} {}\n", self.node_count, self.edges.len());
        for e in &self.edges {
            let _ = writeln!(out, "{} {}", e.lo, e.hi);
        }
        out
    }

    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace().map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::Parse(format!("edge list: '{t}' is not a node index")))
        });
        let mut next = |what: &str| {
            tokens
                .next()
                .unwrap_or_else(|| Err(Error::Parse(format!("edge list: missing {what}"))))
        };
        let n = next("node count")?;
        let m = next("edge count")?;
        let mut pairs = Vec::with_capacity(m);
        for _ in 0..m {
            let a = next("edge endpoint")?;
            let b = next("edge endpoint")?;
            pairs.push((a, b));
        }
        if tokens.next().is_some() {
            return Err(Error::Parse(format!(
                "edge list: more than the declared {m} edges"
            )));
        }
        Topology::from_edge_list(n, &pairs)
    }
}

fn connected_within(t: &Topology, members: &[usize]) -> bool {
    if members.is_empty() {
        return false;
    }
    let mut inside = vec![false; t.node_count];
    for &m in members {
        inside[m] = true;
    }
    let adj = t.neighbors();
    let mut seen = vec![false; t.node_count];
    let mut queue = VecDeque::from([members[0]]);
    seen[members[0]] = true;
    let mut reached = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if inside[w] && !seen[w] {
                seen[w] = true;
                reached += 1;
                queue.push_back(w);
            }
        }
    }
    reached == members.len()
}

/// The set Ω of antennas that take part in beamforming (and, in the
/// subset-calibration case, in calibration).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetSpec {
    node_count: usize,
    members: Vec<usize>,
}

impl SubsetSpec {
    pub fn new(node_count: usize, members: &[usize]) -> Result<Self> {
        let set: BTreeSet<usize> = members.iter().copied().collect();
        if set.is_empty() {
            return Err(Error::InvalidSubset("subset is empty".into()));
        }
        if set.len() != members.len() {
            return Err(Error::InvalidSubset("subset lists a node twice".into()));
        }
        if let Some(&index) = set.iter().find(|&&i| i >= node_count) {
            return Err(Error::IndexOutOfRange { index, node_count });
        }
        Ok(SubsetSpec {
            node_count,
            members: set.into_iter().collect(),
        })
    }

    pub fn all(node_count: usize) -> Self {
        SubsetSpec {
            node_count,
            members: (0..node_count).collect(),
        }
    }

    /// The `k x k` block in the lower-left corner of a `rows x cols` grid.
    pub fn grid_corner(rows: usize, cols: usize, k: usize) -> Result<Self> {
        if k == 0 || k > rows || k > cols {
            return Err(Error::InvalidSubset(format!(
                "{k}x{k} corner does not fit a {rows}x{cols} grid"
            )));
        }
        let members: Vec<usize> = (0..k)
            .flat_map(|r| (0..k).map(move |c| r * cols + c))
            .collect();
        SubsetSpec::new(rows * cols, &members)
    }

    pub fn parse(node_count: usize, text: &str) -> Result<Self> {
        let members = text
            .split_whitespace()
            .map(|t| {
                t.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("subset: '{t}' is not a node index")))
            })
            .collect::<Result<Vec<_>>>()?;
        SubsetSpec::new(node_count, &members)
    }

    pub fn to_text(&self) -> String {
        let items: Vec<String> = self.members.iter().map(|m| m.to_string()).collect();
        items.join(" ") + "\n"
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.members.len() == self.node_count
    }

    pub fn contains(&self, node: usize) -> bool {
        self.members.binary_search(&node).is_ok()
    }

    /// Ω̄, the non-participating nodes, sorted.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.node_count).filter(|&n| !self.contains(n)).collect()
    }

    /// Indicator mask over all nodes.
    pub fn mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.node_count];
        for &m in &self.members {
            mask[m] = true;
        }
        mask
    }

    /// Selector matrix with one unit column per listed node.
    pub fn selector(node_count: usize, nodes: &[usize]) -> DMatrix<f64> {
        let mut e = DMatrix::zeros(node_count, nodes.len());
        for (k, &n) in nodes.iter().enumerate() {
            e[(n, k)] = 1.0;
        }
        e
    }
}

impl FromStr for SubsetSpec {
    type Err = Error;

    /// Parses `"N: i j k"`.
    fn from_str(s: &str) -> Result<Self> {
        let (n, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse("subset must look like 'N: i j k'".into()))?;
        let n = n
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("subset: bad node count '{n}'")))?;
        SubsetSpec::parse(n, rest)
    }
}

/// `M x N` edge-by-node matrix with one `+1` and one `-1` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix {
    matrix: DMatrix<f64>,
    /// `(plus, minus)` node of every row.
    rows: Vec<(usize, usize)>,
    /// For each row, the index of the corresponding edge in the source topology.
    pub edge_order: Vec<usize>,
}

impl IncidenceMatrix {
    /// Rows with an explicit orientation: `+1` at the first node of each
    /// pair, `-1` at the second.
    pub fn from_oriented_rows(node_count: usize, rows: &[(usize, usize)]) -> Result<Self> {
        let mut matrix = DMatrix::zeros(rows.len(), node_count);
        for (m, &(plus, minus)) in rows.iter().enumerate() {
            for index in [plus, minus] {
                if index >= node_count {
                    return Err(Error::IndexOutOfRange { index, node_count });
                }
            }
            if plus == minus {
                return Err(Error::SelfLoop(plus));
            }
            matrix[(m, plus)] = 1.0;
            matrix[(m, minus)] = -1.0;
        }
        Ok(IncidenceMatrix {
            matrix,
            rows: rows.to_vec(),
            edge_order: (0..rows.len()).collect(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn rows(&self) -> &[(usize, usize)] {
        &self.rows
    }

    pub fn edge_count(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn node_count(&self) -> usize {
        self.matrix.ncols()
    }

    /// Same measurement with the orientation of row `m` reversed.
    pub fn flipped(&self, m: usize) -> Self {
        let mut out = self.clone();
        let (p, q) = out.rows[m];
        out.rows[m] = (q, p);
        out.matrix[(m, p)] = -1.0;
        out.matrix[(m, q)] = 1.0;
        out
    }

    /// Whether the nodes touched by these rows form one connected component
    /// that covers every node in `nodes`.
    pub fn connects(&self, nodes: &[usize]) -> bool {
        if nodes.is_empty() {
            return false;
        }
        let n = self.node_count();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &self.rows {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
            }
        }
        let root = find(&mut parent, nodes[0]);
        nodes.iter().all(|&v| find(&mut parent, v) == root)
    }
}

/// Rows of `B` whose endpoints both lie in Ω, in their original relative
/// order, together with each row's index in `B`.
pub fn subset_rows(t: &Topology, s: &SubsetSpec) -> Result<(IncidenceMatrix, Vec<usize>)> {
    if s.node_count() != t.node_count() {
        return Err(Error::DimensionMismatch {
            what: "subset node count",
            expected: t.node_count(),
            actual: s.node_count(),
        });
    }
    if !t.omega_connected(s) {
        return Err(Error::SubsetDisconnected);
    }
    let mask = s.mask();
    let (map, rows): (Vec<usize>, Vec<(usize, usize)>) = t
        .edges()
        .iter()
        .enumerate()
        .filter(|(_, e)| mask[e.lo] && mask[e.hi])
        .map(|(m, e)| (m, (e.lo, e.hi)))
        .unzip();
    let mut b = IncidenceMatrix::from_oriented_rows(t.node_count(), &rows)?;
    b.edge_order = map.clone();
    Ok((b, map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(t: &Topology) -> Vec<(usize, usize)> {
        t.edges().iter().map(|e| (e.lo, e.hi)).collect()
    }

    /// Brute-force 8-neighbor enumeration by coordinate distance.
    fn grid8_brute_force_edges(rows: usize, cols: usize) -> usize {
        let n = rows * cols;
        let mut count = 0;
        for a in 0..n {
            for b in a + 1..n {
                let (ra, ca) = ((a / cols) as i64, (a % cols) as i64);
                let (rb, cb) = ((b / cols) as i64, (b % cols) as i64);
                if (ra - rb).abs() <= 1 && (ca - cb).abs() <= 1 {
                    count += 1;
                }
            }
        }
        count
    }

    #[test]
    fn line_builder() {
        assert_eq!(pairs(&Topology::line(2).unwrap()), vec![(0, 1)]);
        assert_eq!(
            pairs(&Topology::line(4).unwrap()),
            vec![(0, 1), (1, 2), (2, 3)]
        );
        let t = Topology::line(12).unwrap();
        assert_eq!(t.edge_count(), 11);
        assert!(t.is_connected());
        assert!(Topology::line(1).is_err());
    }

    #[test]
    fn ring_builder() {
        assert_eq!(
            pairs(&Topology::ring(3).unwrap()),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        let t = Topology::ring(8).unwrap();
        assert_eq!(t.edge_count(), 8);
        assert!(t.degrees().iter().all(|&d| d == 2));
        assert!(Topology::ring(2).is_err());
    }

    #[test]
    fn ring_laplacian_is_circulant() {
        let n = 100;
        let b = Topology::ring(n).unwrap().incidence();
        let l = b.matrix().transpose() * b.matrix();
        for i in 0..n {
            for j in 0..n {
                let expected = match (j + n - i) % n {
                    0 => 2.0,
                    1 => -1.0,
                    k if k == n - 1 => -1.0,
                    _ => 0.0,
                };
                assert_eq!(l[(i, j)], expected);
            }
        }
    }

    #[test]
    fn grid8_edge_counts() {
        assert_eq!(Topology::grid8(2, 2).unwrap().edge_count(), 6);
        assert_eq!(Topology::grid8(3, 3).unwrap().edge_count(), 20);
        assert_eq!(Topology::grid8(4, 4).unwrap().edge_count(), 42);
        for (r, c) in [(2, 5), (3, 7), (6, 4), (10, 10)] {
            let t = Topology::grid8(r, c).unwrap();
            assert_eq!(t.edge_count(), grid8_brute_force_edges(r, c));
            assert_eq!(t.edge_count(), r * (c - 1) + c * (r - 1) + 2 * (r - 1) * (c - 1));
        }
        assert!(Topology::grid8(1, 5).is_err());
    }

    #[test]
    fn complete_builder() {
        assert_eq!(Topology::complete(3).unwrap().edge_count(), 3);
        assert_eq!(Topology::complete(10).unwrap().edge_count(), 45);
        assert_eq!(Topology::complete(2).unwrap(), Topology::line(2).unwrap());
    }

    #[test]
    fn edge_list_normalization_and_errors() {
        let t = Topology::from_edge_list(3, &[(1, 0), (1, 2)]).unwrap();
        assert_eq!(pairs(&t), vec![(0, 1), (1, 2)]);
        assert!(matches!(
            Topology::from_edge_list(3, &[(0, 0)]),
            Err(Error::SelfLoop(0))
        ));
        assert!(matches!(
            Topology::from_edge_list(3, &[(0, 3)]),
            Err(Error::IndexOutOfRange { index: 3, .. })
        ));
        assert!(matches!(
            Topology::from_edge_list(3, &[(0, 1), (1, 0)]),
            Err(Error::DuplicateEdge(0, 1))
        ));
    }

    #[test]
    fn edge_list_text_round_trip() {
        let t = Topology::grid8(3, 4).unwrap();
        let parsed = Topology::parse_edge_list(&t.to_edge_list_text()).unwrap();
        assert_eq!(parsed, t);
        assert!(Topology::parse_edge_list("3 2\n0 1\n").is_err());
        assert!(Topology::parse_edge_list("3 1\n0 1\n1 2\n").is_err());
        assert!(Topology::parse_edge_list("3 1\n0 x\n").is_err());
    }

    #[test]
    fn incidence_rows() {
        let b = Topology::line(2).unwrap().incidence();
        assert_eq!(b.matrix().as_slice(), &[1.0, -1.0]);
        for t in [
            Topology::line(7).unwrap(),
            Topology::ring(5).unwrap(),
            Topology::grid8(3, 4).unwrap(),
            Topology::complete(6).unwrap(),
        ] {
            let b = t.incidence();
            for m in 0..b.edge_count() {
                assert_eq!(b.matrix().row(m).sum(), 0.0);
            }
        }
    }

    #[test]
    fn incidence_rank_of_line() {
        let b = Topology::line(5).unwrap().incidence();
        let sv = b.matrix().clone().singular_values();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * sv.max()).count();
        assert_eq!(rank, 4);
    }

    #[test]
    fn subset_rows_selection() {
        let t = Topology::line(4).unwrap();
        let (b, map) = subset_rows(&t, &SubsetSpec::new(4, &[0, 1]).unwrap()).unwrap();
        assert_eq!(b.edge_count(), 1);
        assert_eq!(b.matrix().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, -1.0, 0.0, 0.0]);
        assert_eq!(map, vec![0]);

        let (b, map) = subset_rows(&t, &SubsetSpec::all(4)).unwrap();
        assert_eq!(&b, &t.incidence());
        assert_eq!(map, vec![0, 1, 2]);

        let err = subset_rows(&t, &SubsetSpec::new(4, &[0, 2]).unwrap());
        assert!(matches!(err, Err(Error::SubsetDisconnected)));
    }

    #[test]
    fn connectivity() {
        assert!(Topology::line(5).unwrap().is_connected());
        assert!(!Topology::from_edge_list(4, &[(0, 1), (2, 3)])
            .unwrap()
            .is_connected());
        let g = Topology::grid8(3, 3).unwrap();
        for r in 0..3 {
            let row = SubsetSpec::new(9, &[3 * r, 3 * r + 1, 3 * r + 2]).unwrap();
            assert!(g.omega_connected(&row));
        }
    }

    #[test]
    fn subset_spec_validation() {
        assert!(SubsetSpec::new(4, &[]).is_err());
        assert!(SubsetSpec::new(4, &[4]).is_err());
        assert!(SubsetSpec::new(4, &[1, 1]).is_err());
        let s = SubsetSpec::new(5, &[3, 0, 1]).unwrap();
        assert_eq!(s.members(), &[0, 1, 3]);
        assert_eq!(s.complement(), vec![2, 4]);
        let c = SubsetSpec::grid_corner(4, 4, 3).unwrap();
        assert_eq!(c.members(), &[0, 1, 2, 4, 5, 6, 8, 9, 10]);
        let parsed: SubsetSpec = "5: 3 0 1".parse().unwrap();
        assert_eq!(parsed, s);
    }

    #[test]
    fn flipped_orientation_changes_one_row() {
        let b = Topology::ring(4).unwrap().incidence();
        let f = b.flipped(2);
        for m in 0..b.edge_count() {
            let sign = if m == 2 { -1.0 } else { 1.0 };
            assert_eq!(f.matrix().row(m), b.matrix().row(m) * sign);
        }
    }
}
