//! Benchmark network families and their incidence structure.
//!
//! A [`Graph`] is a connected simple graph. Edges are stored as
//! `(i, j)` with `i < j` in lexicographic order, so edge indices (and hence
//! incidence-matrix rows and sampled edge blocks) are stable across runs.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;

pub type Edge = (usize, usize);

/// Redraws allowed before [`Graph::random_geometric`] gives up.
pub const RGG_MAX_ATTEMPTS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    coords: Option<Vec<[f64; 2]>>,
}

impl Graph {
    /// Builds a graph from an arbitrary edge list. Endpoints are put in
    /// `(min, max)` order and the list is sorted; self-loops, duplicates and
    /// disconnected graphs are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        Self::build(n, edges, None)
    }

    pub fn with_coords(
        n: usize,
        edges: impl IntoIterator<Item = Edge>,
        coords: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if coords.len() != n {
            return Err(Error::InvalidParameter(format!(
                "{} coordinates for {} nodes",
                coords.len(),
                n
            )));
        }
        Self::build(n, edges, Some(coords))
    }

    fn build(
        n: usize,
        edges: impl IntoIterator<Item = Edge>,
        coords: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "graph needs at least one node".into(),
            ));
        }
        let mut canonical = Vec::new();
        for (a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::InvalidParameter(format!(
                    "edge ({a}, {b}) has an endpoint outside 0..{n}"
                )));
            }
            if a == b {
                return Err(Error::InvalidParameter(format!("self-loop at node {a}")));
            }
            canonical.push((a.min(b), a.max(b)));
        }
        canonical.sort_unstable();
        if let Some(w) = canonical.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let graph = Graph {
            n,
            edges: canonical,
            coords,
        };
        let all: Vec<usize> = (0..graph.edges.len()).collect();
        let components = graph.connected_components(&all)?.len();
        if components != 1 {
            return Err(Error::Disconnected { components });
        }
        Ok(graph)
    }

    /// Ring on `n >= 3` nodes.
    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidParameter(format!(
                "cycle needs at least 3 nodes, got {n}"
            )));
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    /// `rows x cols` lattice, nodes numbered row-major.
    pub fn grid2d(rows: usize, cols: usize) -> Result<Self> {
        if rows < 2 || cols < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid needs at least 2 rows and 2 columns, got {rows}x{cols}"
            )));
        }
        let id = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::with_capacity(rows * (cols - 1) + cols * (rows - 1));
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                }
            }
        }
        Self::new(rows * cols, edges)
    }

    /// Random geometric graph: `n` uniform points in the unit square joined
    /// when their distance is at most [`rgg_radius`]`(n)`. Disconnected draws
    /// are discarded and all points redrawn from the same seeded stream, up
    /// to [`RGG_MAX_ATTEMPTS`] times.
    pub fn random_geometric(n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!(
                "random geometric graph needs at least 2 nodes, got {n}"
            )));
        }
        let mut stream = rng::derive_stream(seed, &[b"rgg", &(n as u64).to_le_bytes()]);
        let radius = rgg_radius(n);
        for _ in 0..RGG_MAX_ATTEMPTS {
            let points: Vec<[f64; 2]> = (0..n)
                .map(|_| [stream.random::<f64>(), stream.random::<f64>()])
                .collect();
            match Self::geometric(points, radius) {
                Ok(g) => return Ok(g),
                Err(Error::Disconnected { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::GenerationFailed {
            n,
            attempts: RGG_MAX_ATTEMPTS,
        })
    }

    /// Geometric graph on fixed points: edge `(i, j)` iff `|p_i - p_j| <= radius`.
    pub fn geometric(points: Vec<[f64; 2]>, radius: f64) -> Result<Self> {
        let n = points.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                if (dx * dx + dy * dy).sqrt() <= radius {
                    edges.push((i, j));
                }
            }
        }
        Self::with_coords(n, edges, points)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> Result<Edge> {
        self.edges
            .get(index)
            .copied()
            .ok_or(Error::EdgeIndexOutOfRange {
                index,
                edges: self.edges.len(),
            })
    }

    pub fn coords(&self) -> Option<&[[f64; 2]]> {
        self.coords.as_deref()
    }

    /// Index of the edge joining `a` and `b`, in either orientation.
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        self.edges.binary_search(&(a.min(b), a.max(b))).ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    /// `|E| x n` matrix whose row for edge `(i, j)` is `e_i - e_j`.
    pub fn incidence_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.edges.len(), self.n);
        for (row, &(i, j)) in self.edges.iter().enumerate() {
            a[(row, i)] = 1.0;
            a[(row, j)] = -1.0;
        }
        a
    }

    /// Degree matrix minus adjacency matrix.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        l
    }

    /// Components of the subgraph that keeps every node but only the edges
    /// listed in `edge_subset`. Untouched nodes become singletons.
    pub fn connected_components(&self, edge_subset: &[usize]) -> Result<Partition> {
        let mut sets = DisjointSet::new(self.n);
        for &e in edge_subset {
            let (i, j) = self.edge(e)?;
            sets.union(i, j);
        }
        Ok(Partition::from_disjoint_set(&mut sets))
    }

    /// Plain-text edge list: `n m`, then `i j` per edge, then (for graphs
    /// with positions) a `coords` line followed by `x y` per node.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n, self.edges.len());
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        if let Some(coords) = &self.coords {
            out.push_str("coords\n");
            for [x, y] in coords {
                let _ = writeln!(out, "{x:.16e} {y:.16e}");
            }
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(no, l)| (no + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());

        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "missing `n m` header".into(),
        })?;
        let [n, m] = parse_fields::<usize, 2>(line, header)?;

        let mut edges = Vec::with_capacity(m);
        for k in 0..m {
            let (line, text) = lines.next().ok_or(Error::Parse {
                line: line + k + 1,
                message: format!("expected {m} edges, found {k}"),
            })?;
            let [i, j] = parse_fields::<usize, 2>(line, text)?;
            edges.push((i, j));
        }

        let coords = match lines.next() {
            None => None,
            Some((_, "coords")) => {
                let mut coords = Vec::with_capacity(n);
                for k in 0..n {
                    let (line, text) = lines.next().ok_or(Error::Parse {
                        line: 0,
                        message: format!("expected {n} coordinate lines, found {k}"),
                    })?;
                    coords.push(parse_fields::<f64, 2>(line, text)?);
                }
                Some(coords)
            }
            Some((line, other)) => {
                return Err(Error::Parse {
                    line,
                    message: format!("unexpected trailing content `{other}`"),
                })
            }
        };
        if let Some((line, other)) = lines.next() {
            return Err(Error::Parse {
                line,
                message: format!("unexpected trailing content `{other}`"),
            });
        }
        match coords {
            Some(c) => Self::with_coords(n, edges, c),
            None => Self::new(n, edges),
        }
    }
}

fn parse_fields<T, const K: usize>(line: usize, text: &str) -> Result<[T; K]>
where
    T: std::str::FromStr + Copy + Default,
{
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != K {
        return Err(Error::Parse {
            line,
            message: format!("expected {K} fields, found {}", fields.len()),
        });
    }
    let mut out = [T::default(); K];
    for (slot, field) in out.iter_mut().zip(fields) {
        *slot = field.parse().map_err(|_| Error::Parse {
            line,
            message: format!("cannot parse `{field}`"),
        })?;
    }
    Ok(out)
}

/// Connection radius `sqrt(ln(n) / n)`.
pub fn rgg_radius(n: usize) -> f64 {
    let n = n as f64;
    (n.ln() / n).sqrt()
}

/// Split of the node set into disjoint components.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    components: Vec<Vec<usize>>,
}

impl Partition {
    fn from_disjoint_set(sets: &mut DisjointSet) -> Self {
        let n = sets.len();
        let mut root_to_id = vec![usize::MAX; n];
        let mut components: Vec<Vec<usize>> = Vec::new();
        // ids follow the smallest node of each component
        let assignment = (0..n)
            .map(|node| {
                let root = sets.find(node);
                if root_to_id[root] == usize::MAX {
                    root_to_id[root] = components.len();
                    components.push(Vec::new());
                }
                let id = root_to_id[root];
                components[id].push(node);
                id
            })
            .collect();
        Partition {
            assignment,
            components,
        }
    }

    pub fn component_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn components(&self) -> &[Vec<usize>] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

#[derive(Clone, Debug)]
struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn len(&self) -> usize {
        self.parent.len()
    }

    fn find(&mut self, mut node: usize) -> usize {
        let mut root = node;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[node] != root {
            let next = self.parent[node];
            self.parent[node] = root;
            node = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut a, mut b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        if self.size[a] < self.size[b] {
            std::mem::swap(&mut a, &mut b);
        }
        self.parent[b] = a;
        self.size[a] += self.size[b];
    }
}
