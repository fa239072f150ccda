//! Linearized computational graphs and the chain rule over them.
//!
//! Vertices follow the single-assignment numbering: inputs are `1-n..=0`,
//! intermediates `1..=p` and outputs `p+1..=p+m`. Every edge `(i, j)` carries
//! the elemental partial derivative of `v_j` with respect to `v_i`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::linalg::DenseMatrix;

/// Largest number of source-to-sink paths [`jacobian_by_paths`] will enumerate.
pub const PATH_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(pub i64);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
    pub label: f64,
}

impl Edge {
    pub fn new(src: i64, dst: i64, label: f64) -> Self {
        Self {
            src: VertexId(src),
            dst: VertexId(dst),
            label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Input,
    Intermediate,
    Output,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DagError {
    #[error("invalid DAG: {}", display_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("more than {budget} source-to-sink paths")]
    PathBudgetExceeded { budget: u64 },
    #[error("path count overflows u64")]
    PathCountOverflow,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("DAG is not layered")]
    NotLayered,
    #[error("DAG is not uniformly layered")]
    NotUniform,
    #[error("no edge ({src}, {dst})")]
    EdgeNotFound { src: VertexId, dst: VertexId },
    #[error("layer transition {0} does not exist")]
    NoSuchTransition(usize),
    #[error("component is not a pure layered tripartite sub-DAG: {0}")]
    ComponentNotPure(String),
    #[error("structural impossibility: {0}")]
    Structural(String),
}

fn display_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    UnknownVertex(Edge),
    Cycle(Vec<VertexId>),
    InputHasInEdge(VertexId),
    OutputHasOutEdge(VertexId),
    NoInEdge(VertexId),
    NoOutEdge(VertexId),
    NonFiniteLabel(Edge),
    DuplicateEdge(Edge),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnknownVertex(e) => write!(f, "edge ({}, {}) names an unknown vertex", e.src, e.dst),
            Violation::Cycle(vs) => {
                let ids: Vec<String> = vs.iter().map(|v| v.to_string()).collect();
                write!(f, "cycle through vertices {}", ids.join(","))
            }
            Violation::InputHasInEdge(v) => write!(f, "input {v} has an in-edge"),
            Violation::OutputHasOutEdge(v) => write!(f, "output {v} has an out-edge"),
            Violation::NoInEdge(v) => write!(f, "intermediate {v} has no in-edge"),
            Violation::NoOutEdge(v) => write!(f, "intermediate {v} has no out-edge"),
            Violation::NonFiniteLabel(e) => write!(f, "edge ({}, {}) has non-finite label", e.src, e.dst),
            Violation::DuplicateEdge(e) => write!(f, "edge ({}, {}) appears more than once", e.src, e.dst),
        }
    }
}

/// A linearized DAG. Construction does not validate; see [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    n: usize,
    p: usize,
    m: usize,
    edges: Vec<Edge>,
    synthetic: BTreeSet<VertexId>,
}

impl Dag {
    pub fn new(n: usize, p: usize, m: usize, edges: Vec<Edge>) -> Self {
        Self {
            n,
            p,
            m,
            edges,
            synthetic: BTreeSet::new(),
        }
    }

    pub(crate) fn with_synthetic(mut self, synthetic: BTreeSet<VertexId>) -> Self {
        self.synthetic = synthetic;
        self
    }

    pub fn num_inputs(&self) -> usize {
        self.n
    }

    pub fn num_intermediates(&self) -> usize {
        self.p
    }

    pub fn num_outputs(&self) -> usize {
        self.m
    }

    pub fn num_vertices(&self) -> usize {
        self.n + self.p + self.m
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Vertices inserted by transformations (split dummies, identity factors).
    pub fn synthetic(&self) -> &BTreeSet<VertexId> {
        &self.synthetic
    }

    pub fn inputs(&self) -> impl Iterator<Item = VertexId> {
        (1 - self.n as i64..=0).map(VertexId)
    }

    pub fn intermediates(&self) -> impl Iterator<Item = VertexId> {
        (1..=self.p as i64).map(VertexId)
    }

    pub fn outputs(&self) -> impl Iterator<Item = VertexId> {
        let p = self.p as i64;
        (p + 1..=p + self.m as i64).map(VertexId)
    }

    pub fn vertices(&self) -> impl Iterator<Item = VertexId> {
        let lo = 1 - self.n as i64;
        let hi = (self.p + self.m) as i64;
        (lo..=hi).map(VertexId)
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.kind(v).is_some()
    }

    pub fn kind(&self, v: VertexId) -> Option<VertexKind> {
        let id = v.0;
        if id <= 0 && id > -(self.n as i64) {
            Some(VertexKind::Input)
        } else if id >= 1 && id <= self.p as i64 {
            Some(VertexKind::Intermediate)
        } else if id > self.p as i64 && id <= (self.p + self.m) as i64 {
            Some(VertexKind::Output)
        } else {
            None
        }
    }

    /// Dense position of a vertex, `0..num_vertices()`.
    pub fn index(&self, v: VertexId) -> usize {
        (v.0 + self.n as i64 - 1) as usize
    }

    pub fn vertex_at(&self, index: usize) -> VertexId {
        VertexId(index as i64 + 1 - self.n as i64)
    }

    /// Position of an input among the inputs (column of the Jacobian).
    pub fn input_position(&self, v: VertexId) -> usize {
        (v.0 + self.n as i64 - 1) as usize
    }

    /// Position of an output among the outputs (row of the Jacobian).
    pub fn output_position(&self, v: VertexId) -> usize {
        (v.0 - self.p as i64 - 1) as usize
    }

    pub fn find_edge(&self, src: VertexId, dst: VertexId) -> Option<&Edge> {
        self.edges.iter().find(|e| e.src == src && e.dst == dst)
    }

    pub(crate) fn adjacency(&self) -> Adjacency {
        let nv = self.num_vertices();
        let mut succ = vec![Vec::new(); nv];
        let mut pred = vec![Vec::new(); nv];
        for (k, e) in self.edges.iter().enumerate() {
            succ[self.index(e.src)].push(k);
            pred[self.index(e.dst)].push(k);
        }
        Adjacency { succ, pred }
    }

    fn require_valid(&self) -> Result<(), DagError> {
        let v = validate(self);
        if v.is_empty() {
            Ok(())
        } else {
            Err(DagError::Invalid(v))
        }
    }

    /// Topological order of vertex indices; `None` on a cycle.
    pub(crate) fn topological_order(&self) -> Option<Vec<usize>> {
        let adj = self.adjacency();
        let nv = self.num_vertices();
        let mut indeg: Vec<usize> = adj.pred.iter().map(Vec::len).collect();
        let mut queue: VecDeque<usize> = (0..nv).filter(|&v| indeg[v] == 0).collect();
        let mut order = Vec::with_capacity(nv);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &k in &adj.succ[v] {
                let w = self.index(self.edges[k].dst);
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        (order.len() == nv).then_some(order)
    }
}

/// Edge indices leaving and entering each vertex index.
pub(crate) struct Adjacency {
    pub succ: Vec<Vec<usize>>,
    pub pred: Vec<Vec<usize>>,
}

/// Lists every broken structural invariant; empty means the DAG is valid.
pub fn validate(dag: &Dag) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut known = Vec::new();
    for e in &dag.edges {
        if !dag.contains(e.src) || !dag.contains(e.dst) {
            out.push(Violation::UnknownVertex(*e));
            continue;
        }
        if !e.label.is_finite() {
            out.push(Violation::NonFiniteLabel(*e));
        }
        if !seen.insert((e.src, e.dst)) {
            out.push(Violation::DuplicateEdge(*e));
        }
        known.push(*e);
    }
    // structural checks run on the edges whose endpoints exist
    let probe = Dag::new(dag.n, dag.p, dag.m, known);
    let adj = probe.adjacency();
    for v in probe.vertices() {
        let i = probe.index(v);
        match probe.kind(v) {
            Some(VertexKind::Input) if !adj.pred[i].is_empty() => out.push(Violation::InputHasInEdge(v)),
            Some(VertexKind::Output) if !adj.succ[i].is_empty() => out.push(Violation::OutputHasOutEdge(v)),
            Some(VertexKind::Intermediate) => {
                if adj.pred[i].is_empty() {
                    out.push(Violation::NoInEdge(v));
                }
                if adj.succ[i].is_empty() {
                    out.push(Violation::NoOutEdge(v));
                }
            }
            _ => {}
        }
    }
    if probe.topological_order().is_none() {
        out.push(Violation::Cycle(cycle_members(&probe)));
    }
    out
}

/// Vertices that remain after repeatedly peeling sources and sinks.
fn cycle_members(dag: &Dag) -> Vec<VertexId> {
    let adj = dag.adjacency();
    let nv = dag.num_vertices();
    let mut indeg: Vec<usize> = adj.pred.iter().map(Vec::len).collect();
    let mut removed = vec![false; nv];
    let mut queue: VecDeque<usize> = (0..nv).filter(|&v| indeg[v] == 0).collect();
    while let Some(v) = queue.pop_front() {
        removed[v] = true;
        for &k in &adj.succ[v] {
            let w = dag.index(dag.edges[k].dst);
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    (0..nv).filter(|&v| !removed[v]).map(|v| dag.vertex_at(v)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerReport {
    /// Longest path length from any source.
    pub layer_of: BTreeMap<VertexId, usize>,
    pub is_layered: bool,
    pub is_uniform: bool,
    pub layer_sizes: Vec<usize>,
    pub violating_edges: Vec<Edge>,
}

impl LayerReport {
    /// Vertices of each layer in ascending id order.
    pub fn layers(&self) -> Vec<Vec<VertexId>> {
        let mut layers = vec![Vec::new(); self.layer_sizes.len()];
        for (&v, &l) in &self.layer_of {
            layers[l].push(v);
        }
        layers
    }

    pub fn depth(&self) -> usize {
        self.layer_sizes.len().saturating_sub(1)
    }

    pub fn span(&self, e: &Edge) -> usize {
        self.layer_of[&e.dst] - self.layer_of[&e.src]
    }
}

pub fn layer_report(dag: &Dag) -> Result<LayerReport, DagError> {
    dag.require_valid()?;
    let order = dag.topological_order().expect("validated DAG is acyclic");
    let adj = dag.adjacency();
    let mut depth = vec![0usize; dag.num_vertices()];
    for &v in &order {
        for &k in &adj.succ[v] {
            let w = dag.index(dag.edges[k].dst);
            depth[w] = depth[w].max(depth[v] + 1);
        }
    }
    let max_layer = depth.iter().copied().max().unwrap_or(0);
    let mut layer_sizes = vec![0; max_layer + 1];
    let mut layer_of = BTreeMap::new();
    for (i, &d) in depth.iter().enumerate() {
        layer_sizes[d] += 1;
        layer_of.insert(dag.vertex_at(i), d);
    }
    let violating_edges: Vec<Edge> = dag
        .edges
        .iter()
        .filter(|e| depth[dag.index(e.dst)] - depth[dag.index(e.src)] != 1)
        .copied()
        .collect();
    let sinks_aligned = dag.outputs().all(|v| depth[dag.index(v)] == max_layer);
    let sources_aligned = dag.inputs().all(|v| depth[dag.index(v)] == 0);
    let is_layered = violating_edges.is_empty() && sinks_aligned && sources_aligned;
    let is_uniform = is_layered && dag.n == dag.m && layer_sizes.iter().all(|&s| s == dag.n);
    Ok(LayerReport {
        layer_of,
        is_layered,
        is_uniform,
        layer_sizes,
        violating_edges,
    })
}

/// Number of distinct input-to-output paths.
pub fn path_count(dag: &Dag) -> Result<u64, DagError> {
    dag.require_valid()?;
    let order = dag.topological_order().expect("acyclic");
    let adj = dag.adjacency();
    let mut count = vec![0u64; dag.num_vertices()];
    for v in dag.inputs() {
        count[dag.index(v)] = 1;
    }
    for &v in &order {
        let c = count[v];
        if c == 0 {
            continue;
        }
        for &k in &adj.succ[v] {
            let w = dag.index(dag.edges[k].dst);
            count[w] = count[w].checked_add(c).ok_or(DagError::PathCountOverflow)?;
        }
    }
    dag.outputs().try_fold(0u64, |acc, v| {
        acc.checked_add(count[dag.index(v)]).ok_or(DagError::PathCountOverflow)
    })
}

/// Jacobian as the sum over paths of label products. Exponential; for
/// desk-scale checks only.
pub fn jacobian_by_paths(dag: &Dag) -> Result<DenseMatrix, DagError> {
    if path_count(dag)? > PATH_BUDGET {
        return Err(DagError::PathBudgetExceeded { budget: PATH_BUDGET });
    }
    let adj = dag.adjacency();
    let mut jac = DenseMatrix::zeros(dag.m, dag.n).into_full();
    let mut acc = vec![0.0; dag.m * dag.n];

    fn walk(dag: &Dag, adj: &Adjacency, v: usize, prod: f64, col: usize, acc: &mut [f64]) {
        let id = dag.vertex_at(v);
        if dag.kind(id) == Some(VertexKind::Output) {
            acc[dag.output_position(id) * dag.n + col] += prod;
        }
        for &k in &adj.succ[v] {
            let e = &dag.edges[k];
            walk(dag, adj, dag.index(e.dst), prod * e.label, col, acc);
        }
    }

    for x in dag.inputs() {
        walk(dag, &adj, dag.index(x), 1.0, dag.input_position(x), &mut acc);
    }
    for r in 0..dag.m {
        for c in 0..dag.n {
            jac.set(r, c, acc[r * dag.n + c]);
        }
    }
    Ok(jac)
}

/// Forward sweep: `F'·xdot`.
pub fn tangent_product(dag: &Dag, xdot: &[f64]) -> Result<Vec<f64>, DagError> {
    dag.require_valid()?;
    if xdot.len() != dag.n {
        return Err(DagError::DimensionMismatch {
            expected: dag.n,
            got: xdot.len(),
        });
    }
    let order = dag.topological_order().expect("acyclic");
    let adj = dag.adjacency();
    let mut dot = vec![0.0; dag.num_vertices()];
    dot[..dag.n].copy_from_slice(xdot);
    for &v in &order {
        if v < dag.n {
            continue;
        }
        dot[v] = adj.pred[v]
            .iter()
            .map(|&k| {
                let e = &dag.edges[k];
                e.label * dot[dag.index(e.src)]
            })
            .sum();
    }
    Ok(dot[dag.n + dag.p..].to_vec())
}

/// Reverse sweep: `F'^T·ybar`.
pub fn adjoint_product(dag: &Dag, ybar: &[f64]) -> Result<Vec<f64>, DagError> {
    dag.require_valid()?;
    if ybar.len() != dag.m {
        return Err(DagError::DimensionMismatch {
            expected: dag.m,
            got: ybar.len(),
        });
    }
    let order = dag.topological_order().expect("acyclic");
    let adj = dag.adjacency();
    let mut bar = vec![0.0; dag.num_vertices()];
    bar[dag.n + dag.p..].copy_from_slice(ybar);
    for &v in order.iter().rev() {
        if v >= dag.n + dag.p {
            continue;
        }
        bar[v] = adj.succ[v]
            .iter()
            .map(|&k| {
                let e = &dag.edges[k];
                e.label * bar[dag.index(e.dst)]
            })
            .sum();
    }
    Ok(bar[..dag.n].to_vec())
}

/// One local Jacobian of a layered DAG in coordinate form.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalJacobian {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl LocalJacobian {
    pub fn to_dense(&self) -> DenseMatrix {
        let mut d = DenseMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            d.set(r, c, d.get(r, c) + v);
        }
        d
    }

    /// Tightest (lower, upper) bandwidths covering every stored entry.
    pub fn bandwidths(&self) -> (usize, usize) {
        self.entries.iter().fold((0, 0), |(lo, up), &(r, c, _)| {
            if r > c {
                (lo.max(r - c), up)
            } else {
                (lo, up.max(c - r))
            }
        })
    }
}

/// Local Jacobians `F'_1, …, F'_q` of a uniformly layered DAG.
///
/// Row and column positions follow ascending vertex id within each layer.
pub fn extract_chain(dag: &Dag) -> Result<Vec<LocalJacobian>, DagError> {
    let report = layer_report(dag)?;
    if !report.is_uniform {
        return Err(DagError::NotUniform);
    }
    Ok(layer_transitions(dag, &report))
}

pub(crate) fn layer_transitions(dag: &Dag, report: &LayerReport) -> Vec<LocalJacobian> {
    let layers = report.layers();
    let mut position = BTreeMap::new();
    for layer in &layers {
        for (k, v) in layer.iter().enumerate() {
            position.insert(*v, k);
        }
    }
    let mut chain: Vec<LocalJacobian> = (1..layers.len())
        .map(|t| LocalJacobian {
            rows: layers[t].len(),
            cols: layers[t - 1].len(),
            entries: Vec::new(),
        })
        .collect();
    for e in &dag.edges {
        let t = report.layer_of[&e.dst];
        chain[t - 1].entries.push((position[&e.dst], position[&e.src], e.label));
    }
    for j in &mut chain {
        j.entries.sort_by_key(|&(r, c, _)| (r, c));
    }
    chain
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> Dag {
        Dag::new(
            2,
            2,
            2,
            vec![
                Edge::new(-1, 1, 2.0),
                Edge::new(0, 1, 3.0),
                Edge::new(0, 2, 5.0),
                Edge::new(1, 3, 7.0),
                Edge::new(1, 4, 11.0),
                Edge::new(2, 4, 13.0),
            ],
        )
    }

    #[test]
    fn sample_dag_is_valid_and_uniform() {
        let d = fig1();
        assert!(validate(&d).is_empty());
        let r = layer_report(&d).unwrap();
        assert!(r.is_layered && r.is_uniform);
        assert_eq!(r.layer_sizes, vec![2, 2, 2]);
        // four connected input-output pairs, one of them reached twice
        assert_eq!(path_count(&d).unwrap(), 5);
    }

    #[test]
    fn self_loop_is_a_cycle() {
        let d = Dag::new(
            1,
            1,
            1,
            vec![Edge::new(0, 1, 1.0), Edge::new(1, 1, 1.0), Edge::new(1, 2, 1.0)],
        );
        let v = validate(&d);
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::Cycle(c) if c.contains(&VertexId(1)))));
    }

    #[test]
    fn dangling_intermediate_is_reported() {
        let d = Dag::new(
            1,
            2,
            1,
            vec![Edge::new(0, 1, 1.0), Edge::new(0, 2, 1.0), Edge::new(1, 3, 1.0)],
        );
        assert_eq!(validate(&d), vec![Violation::NoOutEdge(VertexId(2))]);
        assert!(matches!(layer_report(&d), Err(DagError::Invalid(_))));
    }

    #[test]
    fn other_violations() {
        let d = Dag::new(
            1,
            0,
            1,
            vec![
                Edge::new(0, 1, f64::NAN),
                Edge::new(0, 1, 1.0),
                Edge::new(1, 0, 1.0),
                Edge::new(0, 9, 1.0),
            ],
        );
        let v = validate(&d);
        assert!(v.contains(&Violation::InputHasInEdge(VertexId(0))));
        assert!(v.contains(&Violation::OutputHasOutEdge(VertexId(1))));
        assert!(v.iter().any(|x| matches!(x, Violation::NonFiniteLabel(_))));
        assert!(v.iter().any(|x| matches!(x, Violation::DuplicateEdge(_))));
        assert!(v.iter().any(|x| matches!(x, Violation::UnknownVertex(_))));
    }

    #[test]
    fn single_edge_is_uniform() {
        let d = Dag::new(1, 0, 1, vec![Edge::new(0, 1, 4.0)]);
        let r = layer_report(&d).unwrap();
        assert!(r.is_layered && r.is_uniform);
    }

    #[test]
    fn jacobian_entry_is_sum_of_two_paths() {
        let j = jacobian_by_paths(&fig1()).unwrap();
        assert_eq!(j.get(1, 1), 11.0 * 3.0 + 13.0 * 5.0);
        assert_eq!(j.get(0, 0), 14.0);
        assert_eq!(j.get(0, 1), 21.0);
        assert_eq!(j.get(1, 0), 22.0);
    }

    #[test]
    fn unconnected_outputs_give_zero_jacobian() {
        let d = Dag::new(2, 0, 2, vec![]);
        let j = jacobian_by_paths(&d).unwrap();
        assert_eq!(j.max_abs(), 0.0);
        assert_eq!(path_count(&d).unwrap(), 0);
    }

    #[test]
    fn tangent_and_adjoint_recover_columns_and_rows() {
        let d = fig1();
        assert_eq!(tangent_product(&d, &[1.0, 0.0]).unwrap(), vec![14.0, 22.0]);
        assert_eq!(adjoint_product(&d, &[0.0, 1.0]).unwrap(), vec![22.0, 98.0]);
        assert_eq!(adjoint_product(&d, &[1.0, 0.0]).unwrap(), vec![14.0, 21.0]);
        assert_eq!(tangent_product(&d, &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            tangent_product(&d, &[1.0]),
            Err(DagError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn chain_of_sample_dag() {
        let c = extract_chain(&fig1()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(
            c[0].to_dense(),
            DenseMatrix::from_rows(&[vec![2.0, 3.0], vec![0.0, 5.0]])
        );
        assert_eq!(
            c[1].to_dense(),
            DenseMatrix::from_rows(&[vec![7.0, 0.0], vec![11.0, 13.0]])
        );
        assert_eq!(c[0].bandwidths(), (0, 1));
        assert_eq!(c[1].bandwidths(), (1, 0));
    }

    #[test]
    fn identity_layer_extracts_identity() {
        let d = Dag::new(3, 0, 3, (0..3).map(|k| Edge::new(-k, 3 - k, 1.0)).collect());
        let c = extract_chain(&d).unwrap();
        assert_eq!(c[0].to_dense(), DenseMatrix::identity(3).into_full());
    }
}
