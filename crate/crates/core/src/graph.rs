//! Monitoring graphs and their metric structure.

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{smax, smin, Scalar};

/// Nodes are addressed by their position in the graph file.
pub type NodeId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Edge<S> {
    pub u: NodeId,
    pub v: NodeId,
    pub length: S,
}

impl<S> Edge<S> {
    pub fn other(&self, x: NodeId) -> NodeId {
        if x == self.u {
            self.v
        } else {
            self.u
        }
    }
}

/// A point of the geometric realization: a node, or an interior point of an
/// edge at `offset` from the edge's `u` endpoint.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GraphPoint<S> {
    Node(NodeId),
    Edge { edge: usize, offset: S },
}

/// Undirected, connected graph with positive node weights and edge lengths.
#[derive(Clone, Debug)]
pub struct MonitorGraph<S> {
    ids: Vec<String>,
    weights: Vec<S>,
    edges: Vec<Edge<S>>,
    /// `(neighbor, edge index)` sorted by neighbor.
    adjacency: Vec<Vec<(NodeId, usize)>>,
    index: HashMap<String, NodeId>,
    dist: Vec<Vec<S>>,
    w_max: S,
    w_min: S,
}

/// Number literal in a graph or config file: a JSON number or a decimal /
/// fraction string such as `"0.1"` or `"3/2"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Text(String),
    Number(serde_json::Number),
}

impl Literal {
    pub fn parse<S: Scalar>(&self) -> Result<S> {
        let text = match self {
            Literal::Text(s) => s.clone(),
            Literal::Number(n) => n.to_string(),
        };
        S::parse_literal(&text).ok_or_else(|| Error::Parse(format!("bad number literal `{text}`")))
    }

    pub fn text(&self) -> String {
        match self {
            Literal::Text(s) => s.clone(),
            Literal::Number(n) => n.to_string(),
        }
    }
}

impl From<&str> for Literal {
    fn from(s: &str) -> Self {
        Literal::Text(s.to_string())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: Literal,
    pub weight: Literal,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub u: Literal,
    pub v: Literal,
    pub length: Literal,
}

/// On-disk graph format.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub nodes: Vec<NodeEntry>,
    #[serde(default)]
    pub edges: Vec<EdgeEntry>,
}

pub fn load_graph<S: Scalar>(path: impl AsRef<Path>) -> Result<MonitorGraph<S>> {
    let text = std::fs::read_to_string(path.as_ref())?;
    MonitorGraph::from_json(&text)
}

impl<S: Scalar> MonitorGraph<S> {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_file(&file)
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        let nodes = file
            .nodes
            .iter()
            .map(|n| Ok((n.id.text(), n.weight.parse()?)))
            .collect::<Result<Vec<_>>>()?;
        let edges = file
            .edges
            .iter()
            .map(|e| Ok((e.u.text(), e.v.text(), e.length.parse()?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(nodes, edges)
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            nodes: self
                .ids
                .iter()
                .zip(&self.weights)
                .map(|(id, w)| NodeEntry { id: Literal::Text(id.clone()), weight: Literal::Text(w.to_string()) })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeEntry {
                    u: Literal::Text(self.ids[e.u].clone()),
                    v: Literal::Text(self.ids[e.v].clone()),
                    length: Literal::Text(e.length.to_string()),
                })
                .collect(),
        }
    }

    /// Builds and validates a graph from `(id, weight)` and `(u, v, length)` lists.
    pub fn new(nodes: Vec<(String, S)>, edges: Vec<(String, String, S)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        let mut index = HashMap::new();
        let mut ids = Vec::with_capacity(nodes.len());
        let mut weights = Vec::with_capacity(nodes.len());
        for (i, (id, w)) in nodes.into_iter().enumerate() {
            if !(w > S::zero()) {
                return Err(Error::InvalidGraph(format!("node `{id}` has nonpositive weight {w}")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node id `{id}`")));
            }
            ids.push(id);
            weights.push(w);
        }
        let n = ids.len();
        let mut adjacency = vec![Vec::new(); n];
        let mut parsed = Vec::with_capacity(edges.len());
        for (a, b, len) in edges {
            let u = *index.get(&a).ok_or_else(|| Error::UnknownNode(a.clone()))?;
            let v = *index.get(&b).ok_or_else(|| Error::UnknownNode(b.clone()))?;
            if u == v {
                return Err(Error::InvalidGraph(format!("self-loop at `{a}`")));
            }
            if !(len > S::zero()) {
                return Err(Error::InvalidGraph(format!("edge ({a},{b}) has nonpositive length {len}")));
            }
            if adjacency[u].iter().any(|&(x, _)| x == v) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({a},{b})")));
            }
            let e = parsed.len();
            adjacency[u].push((v, e));
            adjacency[v].push((u, e));
            parsed.push(Edge { u, v, length: len });
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(x, _)| x);
        }

        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(x) = queue.pop_front() {
            for &(y, _) in &adjacency[x] {
                if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidGraph(format!("graph is disconnected (node `{}` unreachable)", ids[i])));
        }

        let dist = all_pairs(n, &parsed);
        let w_max = weights.iter().cloned().fold(weights[0].clone(), smax);
        let w_min = weights.iter().cloned().fold(weights[0].clone(), smin);
        Ok(Self { ids, weights, edges: parsed, adjacency, index, dist, w_max, w_min })
    }

    /// Graph with ids `"1".."n"`; handy for generated instances.
    pub fn from_indexed(weights: Vec<S>, edges: Vec<(NodeId, NodeId, S)>) -> Result<Self> {
        let nodes = weights.into_iter().enumerate().map(|(i, w)| ((i + 1).to_string(), w)).collect();
        let edges = edges.into_iter().map(|(u, v, l)| ((u + 1).to_string(), (v + 1).to_string(), l)).collect();
        Self::new(nodes, edges)
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn id(&self, v: NodeId) -> &str {
        &self.ids[v]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn node(&self, id: &str) -> Result<NodeId> {
        self.index.get(id).copied().ok_or_else(|| Error::UnknownNode(id.to_string()))
    }

    pub fn weight(&self, v: NodeId) -> &S {
        &self.weights[v]
    }

    pub fn weights(&self) -> &[S] {
        &self.weights
    }

    pub fn w_max(&self) -> &S {
        &self.w_max
    }

    pub fn w_min(&self) -> &S {
        &self.w_min
    }

    pub fn edges(&self) -> &[Edge<S>] {
        &self.edges
    }

    pub fn neighbors(&self, v: NodeId) -> &[(NodeId, usize)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency[v].len()
    }

    pub fn edge_between(&self, u: NodeId, v: NodeId) -> Option<usize> {
        self.adjacency.get(u)?.iter().find(|&&(x, _)| x == v).map(|&(_, e)| e)
    }

    pub fn edge_length(&self, u: NodeId, v: NodeId) -> Option<&S> {
        self.edge_between(u, v).map(|e| &self.edges[e].length)
    }

    /// Shortest-path distance between two nodes.
    pub fn dist(&self, u: NodeId, v: NodeId) -> &S {
        &self.dist[u][v]
    }

    /// Canonical shortest node path from `a` to `b` (both included): at each
    /// step the smallest-index neighbor that stays on a shortest path.
    pub fn node_path(&self, a: NodeId, b: NodeId) -> Vec<NodeId> {
        let mut path = vec![a];
        let mut cur = a;
        while cur != b {
            let next = self.adjacency[cur]
                .iter()
                .find(|&&(x, e)| self.edges[e].length.clone() + self.dist[x][b].clone() == self.dist[cur][b])
                .map(|&(x, _)| x)
                .expect("shortest path successor exists in a connected graph");
            path.push(next);
            cur = next;
        }
        path
    }

    fn check_point(&self, p: &GraphPoint<S>) -> Result<()> {
        match p {
            GraphPoint::Node(v) if *v < self.node_count() => Ok(()),
            GraphPoint::Node(v) => Err(Error::Range(format!("node index {v} not in graph"))),
            GraphPoint::Edge { edge, offset } => {
                let e = self.edges.get(*edge).ok_or_else(|| Error::Range(format!("edge index {edge} not in graph")))?;
                if *offset > S::zero() && *offset < e.length {
                    Ok(())
                } else {
                    Err(Error::Range(format!("offset {offset} not inside edge {edge}")))
                }
            }
        }
    }

    /// Ways to leave a point: `(node, cost to reach it)`.
    fn portals(&self, p: &GraphPoint<S>) -> Vec<(NodeId, S)> {
        match p {
            GraphPoint::Node(v) => vec![(*v, S::zero())],
            GraphPoint::Edge { edge, offset } => {
                let e = &self.edges[*edge];
                vec![(e.u, offset.clone()), (e.v, e.length.clone() - offset.clone())]
            }
        }
    }

    /// Path-metric distance between two points of the geometric realization
    /// and the canonical waypoint sequence realizing it.
    pub fn shortest_path(&self, a: &GraphPoint<S>, b: &GraphPoint<S>) -> Result<(S, Vec<GraphPoint<S>>)> {
        self.check_point(a)?;
        self.check_point(b)?;
        if a == b {
            return Ok((S::zero(), vec![a.clone()]));
        }
        // best candidate: (distance, node sequence)
        let mut best: Option<(S, Vec<NodeId>)> = None;
        if let (GraphPoint::Edge { edge: e1, offset: s1 }, GraphPoint::Edge { edge: e2, offset: s2 }) = (a, b) {
            if e1 == e2 {
                best = Some(((s1.clone() - s2.clone()).abs(), Vec::new()));
            }
        }
        for (x, cx) in self.portals(a) {
            for (y, cy) in self.portals(b) {
                let d = cx.clone() + self.dist[x][y].clone() + cy.clone();
                let nodes = self.node_path(x, y);
                let better = match &best {
                    None => true,
                    Some((bd, bn)) => d < *bd || (d == *bd && nodes < *bn),
                };
                if better {
                    best = Some((d, nodes));
                }
            }
        }
        let (d, nodes) = best.expect("at least one portal pair");
        let mut path = Vec::with_capacity(nodes.len() + 2);
        if matches!(a, GraphPoint::Edge { .. }) {
            path.push(a.clone());
        }
        path.extend(nodes.into_iter().map(GraphPoint::Node));
        if matches!(b, GraphPoint::Edge { .. }) {
            path.push(b.clone());
        }
        Ok((d, path))
    }

    /// Diameter of the geometric realization (edge interiors included).
    pub fn diameter(&self) -> S {
        let two = S::one() + S::one();
        let mut best = S::zero();
        for (i, e1) in self.edges.iter().enumerate() {
            // two points on the same edge: the far side wraps around through the graph
            let same = (e1.length.clone() + self.dist[e1.u][e1.v].clone()) / two.clone();
            best = smax(best, same);
            for e2 in &self.edges[i + 1..] {
                best = smax(best, self.edge_pair_diameter(e1, e2));
            }
        }
        best
    }

    /// Largest distance between a point of `e1` and a point of `e2 != e1`.
    fn edge_pair_diameter(&self, e1: &Edge<S>, e2: &Edge<S>) -> S {
        let two = S::one() + S::one();
        let (a, b, l1) = (e1.u, e1.v, e1.length.clone());
        // distance from the point at offset s on e1 to node j
        let reach = |s: &S, j: NodeId| {
            smin(s.clone() + self.dist[a][j].clone(), l1.clone() - s.clone() + self.dist[b][j].clone())
        };
        let mut candidates = vec![S::zero(), l1.clone()];
        for j in [e2.u, e2.v] {
            let s = (l1.clone() + self.dist[b][j].clone() - self.dist[a][j].clone()) / two.clone();
            if s > S::zero() && s < l1 {
                candidates.push(s);
            }
        }
        candidates
            .iter()
            .map(|s| (reach(s, e2.u) + reach(s, e2.v) + e2.length.clone()) / two.clone())
            .fold(S::zero(), smax)
    }

    /// Closed TSP tour over all nodes in the shortest-path metric.
    pub fn tsp_tour(&self) -> (Vec<NodeId>, S) {
        let all: Vec<NodeId> = (0..self.node_count()).collect();
        self.tsp_tour_over(&all)
    }

    /// Nearest-neighbor tour from the smallest node of `nodes`, improved by
    /// 2-opt until no improving exchange remains.
    pub fn tsp_tour_over(&self, nodes: &[NodeId]) -> (Vec<NodeId>, S) {
        let mut rest: Vec<NodeId> = nodes.to_vec();
        rest.sort_unstable();
        rest.dedup();
        if rest.is_empty() {
            return (Vec::new(), S::zero());
        }
        let mut tour = vec![rest.remove(0)];
        while !rest.is_empty() {
            let last = *tour.last().unwrap();
            let mut pick = 0;
            for (i, &x) in rest.iter().enumerate() {
                if self.dist[last][x] < self.dist[last][rest[pick]] {
                    pick = i;
                }
            }
            tour.push(rest.remove(pick));
        }
        self.two_opt(&mut tour);
        let len = self.tour_length(&tour);
        (tour, len)
    }

    fn two_opt(&self, tour: &mut [NodeId]) {
        let n = tour.len();
        if n < 4 {
            return;
        }
        let d = |x: NodeId, y: NodeId| self.dist[x][y].clone();
        let mut budget = 10_000 * n * n;
        'improve: while budget > 0 {
            for i in 0..n - 1 {
                for j in i + 2..n {
                    if i == 0 && j == n - 1 {
                        continue;
                    }
                    budget = budget.saturating_sub(1);
                    let (a, b, c, e) = (tour[i], tour[i + 1], tour[j], tour[(j + 1) % n]);
                    let delta = d(a, c) + d(b, e) - d(a, b) - d(c, e);
                    if delta < S::zero() && (S::is_exact() || delta.as_f64() < -1e-12) {
                        tour[i + 1..=j].reverse();
                        continue 'improve;
                    }
                }
            }
            break;
        }
    }

    /// Closed length of a tour in the shortest-path metric.
    pub fn tour_length(&self, tour: &[NodeId]) -> S {
        if tour.len() < 2 {
            return S::zero();
        }
        (0..tour.len()).fold(S::zero(), |acc, i| acc + self.dist[tour[i]][tour[(i + 1) % tour.len()]].clone())
    }

    /// Expands a metric tour into a closed walk on the graph (start not repeated).
    pub fn expand_tour(&self, tour: &[NodeId]) -> Vec<NodeId> {
        if tour.len() < 2 {
            return tour.to_vec();
        }
        let mut walk = Vec::new();
        for i in 0..tour.len() {
            let leg = self.node_path(tour[i], tour[(i + 1) % tour.len()]);
            walk.extend_from_slice(&leg[..leg.len() - 1]);
        }
        walk
    }

    /// Full spectrum of the symmetric normalized Laplacian of the (unweighted)
    /// adjacency, ascending, with eigenvectors as columns.
    pub fn laplacian_spectrum(&self) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.node_count();
        let deg: Vec<f64> = (0..n).map(|v| self.degree(v) as f64).collect();
        let mut lap = DMatrix::<f64>::identity(n, n);
        for e in &self.edges {
            let x = -1.0 / (deg[e.u] * deg[e.v]).sqrt();
            lap[(e.u, e.v)] = x;
            lap[(e.v, e.u)] = x;
        }
        if n == 1 {
            lap[(0, 0)] = 0.0;
        }
        let eig = SymmetricEigen::new(lap);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let mut vectors = DMatrix::<f64>::zeros(n, n);
        for (c, &i) in order.iter().enumerate() {
            let mut col = eig.eigenvectors.column(i).into_owned();
            if let Some(first) = col.iter().find(|x| x.abs() > 1e-12) {
                if *first < 0.0 {
                    col = -col;
                }
            }
            vectors.set_column(c, &col);
        }
        (values, vectors)
    }

    /// Laplacian positional encoding with `d_gpe` non-trivial eigenvectors.
    pub fn laplacian_gpe(&self, d_gpe: usize) -> Result<GpeTable> {
        let n = self.node_count();
        if d_gpe + 1 > n {
            return Err(Error::Range(format!("d_gpe = {d_gpe} exceeds |V| - 1 = {}", n - 1)));
        }
        let (values, vectors) = self.laplacian_spectrum();
        let rows = (0..n).map(|v| (1..=d_gpe).map(|c| vectors[(v, c)]).collect()).collect();
        Ok(GpeTable { eigenvalues: values[1..=d_gpe].to_vec(), rows })
    }
}

/// Per-node spectral coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpeTable {
    pub eigenvalues: Vec<f64>,
    /// `rows[v]` is the embedding of node `v`.
    pub rows: Vec<Vec<f64>>,
}

impl GpeTable {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn row(&self, v: NodeId) -> &[f64] {
        &self.rows[v]
    }
}

fn all_pairs<S: Scalar>(n: usize, edges: &[Edge<S>]) -> Vec<Vec<S>> {
    let mut dist: Vec<Vec<Option<S>>> = vec![vec![None; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = Some(S::zero());
    }
    for e in edges {
        dist[e.u][e.v] = Some(e.length.clone());
        dist[e.v][e.u] = Some(e.length.clone());
    }
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = dist[i][k].clone() else { continue };
            for j in 0..n {
                if let Some(kj) = &dist[k][j] {
                    let via = ik.clone() + kj.clone();
                    if dist[i][j].as_ref().map_or(true, |cur| via < *cur) {
                        dist[i][j] = Some(via);
                    }
                }
            }
        }
    }
    dist.into_iter().map(|row| row.into_iter().map(|d| d.expect("connected")).collect()).collect()
}
