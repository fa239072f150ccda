//! Jacobian-preserving rewrites that turn invertible DAGs into uniformly
//! layered ones: edge splitting, preaccumulation of pure tripartite
//! sub-DAGs, and splitting of bipartite blocks through an identity factor.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::dag::{layer_report, validate, Dag, DagError, Edge, LayerReport, VertexId, VertexKind};

pub use crate::dag::path_count;

/// Which of the two edges created by a split keeps the original label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitPolicy {
    /// `(i, k)` carries the label, `(k, j)` is unit.
    #[default]
    LabelOnLowerEdge,
    /// `(i, k)` is unit, `(k, j)` carries the label.
    LabelOnUpperEdge,
}

/// A pure tripartite sub-DAG `predecessors -> intermediates -> successors`.
/// With no intermediates it describes the bipartite block between
/// `predecessors` and `successors`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Component {
    pub intermediate_vertices: BTreeSet<VertexId>,
    pub predecessors: BTreeSet<VertexId>,
    pub successors: BTreeSet<VertexId>,
}

type Key = (i64, i64, u64);

#[derive(Debug, Clone)]
enum Role {
    Input(usize),
    Intermediate,
    Output(usize),
}

#[derive(Debug, Clone)]
struct Node {
    role: Role,
    key: Key,
    synthetic: bool,
    alive: bool,
}

/// Mutable graph on stable handles; ids are reassigned only in `into_dag`.
struct Work {
    n: usize,
    m: usize,
    nodes: Vec<Node>,
    edges: Vec<(usize, usize, f64)>,
    counter: u64,
}

impl Work {
    fn from_dag(dag: &Dag) -> Self {
        let nodes = dag
            .vertices()
            .map(|v| {
                let role = match dag.kind(v).expect("vertex in range") {
                    VertexKind::Input => Role::Input(dag.input_position(v)),
                    VertexKind::Intermediate => Role::Intermediate,
                    VertexKind::Output => Role::Output(dag.output_position(v)),
                };
                Node {
                    role,
                    key: (v.0, 0, 0),
                    synthetic: dag.synthetic().contains(&v),
                    alive: true,
                }
            })
            .collect();
        let edges = dag
            .edges()
            .iter()
            .map(|e| (dag.index(e.src), dag.index(e.dst), e.label))
            .collect();
        Self {
            n: dag.num_inputs(),
            m: dag.num_outputs(),
            nodes,
            edges,
            counter: 0,
        }
    }

    fn add_synthetic(&mut self, primary: i64) -> usize {
        self.counter += 1;
        self.nodes.push(Node {
            role: Role::Intermediate,
            key: (primary, 1, self.counter),
            synthetic: true,
            alive: true,
        });
        self.nodes.len() - 1
    }

    fn into_dag(self) -> Result<Dag, DagError> {
        let nn = self.nodes.len();
        let mut succ = vec![Vec::new(); nn];
        let mut indeg = vec![0usize; nn];
        for &(s, d, _) in &self.edges {
            succ[s].push(d);
            indeg[d] += 1;
        }
        let mut layer = vec![0usize; nn];
        let mut queue: VecDeque<usize> = (0..nn).filter(|&v| self.nodes[v].alive && indeg[v] == 0).collect();
        let mut seen = 0;
        while let Some(v) = queue.pop_front() {
            seen += 1;
            for &w in &succ[v] {
                layer[w] = layer[w].max(layer[v] + 1);
                indeg[w] -= 1;
                if indeg[w] == 0 {
                    queue.push_back(w);
                }
            }
        }
        let alive = self.nodes.iter().filter(|x| x.alive).count();
        if seen != alive {
            return Err(DagError::Structural("rewrite produced a cycle".into()));
        }
        let mut inter: Vec<usize> = (0..nn)
            .filter(|&v| self.nodes[v].alive && matches!(self.nodes[v].role, Role::Intermediate))
            .collect();
        inter.sort_by_key(|&v| (layer[v], self.nodes[v].key));
        let p = inter.len();
        let mut id = vec![0i64; nn];
        for (v, node) in self.nodes.iter().enumerate() {
            match node.role {
                Role::Input(k) => id[v] = k as i64 + 1 - self.n as i64,
                Role::Output(k) => id[v] = (p + k + 1) as i64,
                Role::Intermediate => {}
            }
        }
        for (k, &v) in inter.iter().enumerate() {
            id[v] = k as i64 + 1;
        }
        let mut edges: Vec<Edge> = self.edges.iter().map(|&(s, d, l)| Edge::new(id[s], id[d], l)).collect();
        edges.sort_by_key(|e| (e.src, e.dst));
        let synthetic = inter
            .iter()
            .filter(|&&v| self.nodes[v].synthetic)
            .map(|&v| VertexId(id[v]))
            .collect();
        Ok(Dag::new(self.n, p, self.m, edges).with_synthetic(synthetic))
    }

    /// Replaces edge `k` by a path through `count` new vertices.
    fn split(&mut self, k: usize, count: usize, policy: SplitPolicy) {
        let (src, dst, label) = self.edges[k];
        let primary = self.nodes[dst].key.0;
        let mut chain = vec![src];
        for _ in 0..count {
            chain.push(self.add_synthetic(primary));
        }
        chain.push(dst);
        let last = chain.len() - 2;
        let mut new_edges = Vec::with_capacity(count + 1);
        for (s, w) in chain.windows(2).enumerate() {
            let carries = match policy {
                SplitPolicy::LabelOnLowerEdge => s == 0,
                SplitPolicy::LabelOnUpperEdge => s == last,
            };
            new_edges.push((w[0], w[1], if carries { label } else { 1.0 }));
        }
        self.edges[k] = new_edges[0];
        self.edges.extend_from_slice(&new_edges[1..]);
    }

    /// Removes `z` and returns the nonzero entries of the local Jacobian
    /// from `x` to `y` as edge triples (not yet inserted).
    fn preaccumulate(&mut self, x: &[usize], z: &[usize], y: &[usize]) -> Vec<(usize, usize, f64)> {
        let zset: BTreeSet<usize> = z.iter().copied().collect();
        let xpos: BTreeMap<usize, usize> = x.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        let ypos: BTreeMap<usize, usize> = y.iter().enumerate().map(|(k, &v)| (v, k)).collect();
        // tangent sweep per predecessor through the removed layer
        let mut into_z: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        let mut out_of_z: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
        for &(s, d, l) in &self.edges {
            if zset.contains(&d) {
                into_z.entry(s).or_default().push((d, l));
            }
            if zset.contains(&s) {
                out_of_z.entry(s).or_default().push((d, l));
            }
        }
        let mut acc = vec![0.0; x.len() * y.len()];
        for (&xs, targets) in &into_z {
            let mut zdot: BTreeMap<usize, f64> = BTreeMap::new();
            for &(zv, l) in targets {
                *zdot.entry(zv).or_default() += l;
            }
            let col = xpos[&xs];
            for (zv, dz) in zdot {
                for &(yv, l) in out_of_z.get(&zv).into_iter().flatten() {
                    acc[ypos[&yv] * x.len() + col] += l * dz;
                }
            }
        }
        self.edges.retain(|(s, d, _)| !zset.contains(s) && !zset.contains(d));
        for &v in z {
            self.nodes[v].alive = false;
        }
        let mut block = Vec::new();
        for (r, &yv) in y.iter().enumerate() {
            for (c, &xv) in x.iter().enumerate() {
                let a = acc[r * x.len() + c];
                if a != 0.0 {
                    block.push((xv, yv, a));
                }
            }
        }
        block
    }

    fn merge_direct(&mut self, block: Vec<(usize, usize, f64)>) {
        for (s, d, a) in block {
            match self.edges.iter_mut().find(|(es, ed, _)| *es == s && *ed == d) {
                Some(e) => e.2 += a,
                None => self.edges.push((s, d, a)),
            }
        }
        self.edges.retain(|e| e.2 != 0.0);
    }

    /// Routes the nonzero `x -> y` entries of `block` through new vertices.
    fn split_block(&mut self, x: &[usize], y: &[usize], block: &[(usize, usize, f64)], primary: Option<i64>) {
        let identity_on_input = x.len() <= y.len();
        let side = if identity_on_input { x } else { y };
        let mut via = BTreeMap::new();
        for &v in side {
            let p = primary.unwrap_or(self.nodes[v].key.0);
            via.insert(v, self.add_synthetic(p));
        }
        for &(s, d, a) in block {
            if identity_on_input {
                self.edges.push((via[&s], d, a));
            } else {
                self.edges.push((s, via[&d], a));
            }
        }
        for (&v, &k) in &via {
            if identity_on_input {
                self.edges.push((v, k, 1.0));
            } else {
                self.edges.push((k, v, 1.0));
            }
        }
    }
}

fn require_valid(dag: &Dag) -> Result<(), DagError> {
    let v = validate(dag);
    if v.is_empty() {
        Ok(())
    } else {
        Err(DagError::Invalid(v))
    }
}

/// Replaces `(src, dst)` by `(src, k)` and `(k, dst)` through a fresh vertex.
pub fn split_edge(dag: &Dag, src: VertexId, dst: VertexId, policy: SplitPolicy) -> Result<Dag, DagError> {
    let k = dag
        .edges()
        .iter()
        .position(|e| e.src == src && e.dst == dst)
        .ok_or(DagError::EdgeNotFound { src, dst })?;
    let mut w = Work::from_dag(dag);
    w.split(k, 1, policy);
    w.into_dag()
}

/// Splits every edge spanning more than one layer into unit-linked paths.
///
/// Outputs are placed on the deepest layer, so edges into shallow outputs
/// are split as well.
pub fn make_layered(dag: &Dag, policy: SplitPolicy) -> Result<Dag, DagError> {
    let report = layer_report(dag)?;
    if report.is_layered {
        return Ok(dag.clone());
    }
    let depth = report.depth();
    let target = |v: VertexId| match dag.kind(v) {
        Some(VertexKind::Output) => depth,
        _ => report.layer_of[&v],
    };
    if let Some(v) = dag.outputs().find(|&v| report.layer_of[&v] == 0 && depth > 0) {
        return Err(DagError::Structural(format!(
            "output {v} has no predecessors and cannot be moved to layer {depth}"
        )));
    }
    let mut w = Work::from_dag(dag);
    for (k, e) in dag.edges().iter().enumerate() {
        let span = target(e.dst) - report.layer_of[&e.src];
        if span > 1 {
            w.split(k, span - 1, policy);
        }
    }
    w.into_dag()
}

/// Dummy vertices [`make_layered`] inserts: `Σ (span - 1)` with outputs
/// counted on the deepest layer.
pub fn dummy_vertex_count(dag: &Dag, report: &LayerReport) -> usize {
    let depth = report.depth();
    dag.edges()
        .iter()
        .map(|e| {
            let dst = match dag.kind(e.dst) {
                Some(VertexKind::Output) => depth,
                _ => report.layer_of[&e.dst],
            };
            dst - report.layer_of[&e.src] - 1
        })
        .sum()
}

fn predecessors_of(dag: &Dag, z: &BTreeSet<VertexId>) -> BTreeSet<VertexId> {
    dag.edges()
        .iter()
        .filter(|e| z.contains(&e.dst))
        .map(|e| e.src)
        .collect()
}

fn successors_of(dag: &Dag, z: &BTreeSet<VertexId>) -> BTreeSet<VertexId> {
    dag.edges()
        .iter()
        .filter(|e| z.contains(&e.src))
        .map(|e| e.dst)
        .collect()
}

/// Connected components of the bipartite transition from layer `t - 1` to
/// layer `t`.
///
/// Each component lists its layer `t - 1` vertices as
/// `intermediate_vertices`, its layer `t` vertices as `successors`, and the
/// direct predecessors of the former as `predecessors`.
pub fn connected_components(dag: &Dag, t: usize) -> Result<Vec<Component>, DagError> {
    let report = layer_report(dag)?;
    if !report.is_layered {
        return Err(DagError::NotLayered);
    }
    if t == 0 || t > report.depth() {
        return Err(DagError::NoSuchTransition(t));
    }
    let layers = report.layers();
    let (lower, upper) = (&layers[t - 1], &layers[t]);
    let mut neighbors: BTreeMap<VertexId, Vec<VertexId>> = BTreeMap::new();
    for v in lower.iter().chain(upper) {
        neighbors.insert(*v, Vec::new());
    }
    for e in dag.edges() {
        if report.layer_of[&e.dst] == t {
            neighbors.get_mut(&e.src).expect("lower vertex").push(e.dst);
            neighbors.get_mut(&e.dst).expect("upper vertex").push(e.src);
        }
    }
    let mut assigned = BTreeSet::new();
    let mut out = Vec::new();
    for &start in lower.iter().chain(upper) {
        if assigned.contains(&start) {
            continue;
        }
        let mut comp = Component::default();
        let mut stack = vec![start];
        assigned.insert(start);
        while let Some(v) = stack.pop() {
            if report.layer_of[&v] == t {
                comp.successors.insert(v);
            } else {
                comp.intermediate_vertices.insert(v);
            }
            for &w in &neighbors[&v] {
                if assigned.insert(w) {
                    stack.push(w);
                }
            }
        }
        comp.predecessors = predecessors_of(dag, &comp.intermediate_vertices);
        out.push(comp);
    }
    Ok(out)
}

fn check_pure(dag: &Dag, c: &Component) -> Result<(), DagError> {
    let bad = |msg: String| Err(DagError::ComponentNotPure(msg));
    if c.intermediate_vertices.is_empty() {
        return bad("no intermediate vertices".into());
    }
    if let Some(v) = c
        .intermediate_vertices
        .iter()
        .find(|&&v| dag.kind(v) != Some(VertexKind::Intermediate))
    {
        return bad(format!("{v} is not an intermediate vertex"));
    }
    let p = predecessors_of(dag, &c.intermediate_vertices);
    let s = successors_of(dag, &c.intermediate_vertices);
    if p != c.predecessors {
        return bad("predecessor set differs from P(Z)".into());
    }
    if s != c.successors {
        return bad("successor set differs from S(Z)".into());
    }
    let z = &c.intermediate_vertices;
    if !p.is_disjoint(z) || !s.is_disjoint(z) || !p.is_disjoint(&s) {
        return bad("predecessor, intermediate and successor sets overlap".into());
    }
    Ok(())
}

fn handles(dag: &Dag, set: &BTreeSet<VertexId>) -> Vec<usize> {
    set.iter().map(|&v| dag.index(v)).collect()
}

/// Replaces a pure tripartite sub-DAG by direct edges labeled with its
/// local Jacobian. Exact-zero entries produce no edge.
pub fn preaccumulate(dag: &Dag, component: &Component) -> Result<Dag, DagError> {
    require_valid(dag)?;
    check_pure(dag, component)?;
    let mut w = Work::from_dag(dag);
    let x = handles(dag, &component.predecessors);
    let z = handles(dag, &component.intermediate_vertices);
    let y = handles(dag, &component.successors);
    let block = w.preaccumulate(&x, &z, &y);
    w.merge_direct(block);
    w.into_dag()
}

/// Re-layers the bipartite block `predecessors -> successors` as
/// `F'·I_n` when `n <= m`, else `I_m·F'`.
pub fn split_bipartite(dag: &Dag, block: &Component) -> Result<Dag, DagError> {
    require_valid(dag)?;
    if !block.intermediate_vertices.is_empty() {
        return Err(DagError::ComponentNotPure("bipartite block has intermediates".into()));
    }
    let (xs, ys) = (&block.predecessors, &block.successors);
    let mut w = Work::from_dag(dag);
    let x = handles(dag, xs);
    let y = handles(dag, ys);
    let mut direct = Vec::new();
    w.edges.retain(|&(s, d, l)| {
        let inside = x.contains(&s) && y.contains(&d);
        if inside {
            direct.push((s, d, l));
        }
        !inside
    });
    w.split_block(&x, &y, &direct, None);
    w.into_dag()
}

fn layer_component(dag: &Dag, report: &LayerReport, t: usize) -> Component {
    let z: BTreeSet<VertexId> = report.layers()[t].iter().copied().collect();
    Component {
        predecessors: predecessors_of(dag, &z),
        successors: successors_of(dag, &z),
        intermediate_vertices: z,
    }
}

/// Preaccumulates `c` and splits the resulting block in one rewrite, placing
/// the new vertices where the removed ones were.
fn collapse(dag: &Dag, c: &Component) -> Result<Dag, DagError> {
    check_pure(dag, c)?;
    let mut w = Work::from_dag(dag);
    let x = handles(dag, &c.predecessors);
    let z = handles(dag, &c.intermediate_vertices);
    let y = handles(dag, &c.successors);
    let primary = c.intermediate_vertices.iter().next().map(|v| v.0);
    let block = w.preaccumulate(&x, &z, &y);
    w.split_block(&x, &y, &block, primary);
    w.into_dag()
}

fn reduces(c: &Component) -> bool {
    c.predecessors.len().min(c.successors.len()) < c.intermediate_vertices.len()
}

/// Applies every component collapse that lowers the vertex count of its
/// layer, sweeping intermediate layers in ascending order.
pub fn preaccumulate_greedy(dag: &Dag) -> Result<Dag, DagError> {
    let mut d = dag.clone();
    let mut t = 1;
    loop {
        let report = layer_report(&d)?;
        if !report.is_layered {
            return Err(DagError::NotLayered);
        }
        if t >= report.depth() {
            return Ok(d);
        }
        match connected_components(&d, t + 1)?.into_iter().find(reduces) {
            Some(c) => d = collapse(&d, &c)?,
            None => t += 1,
        }
    }
}

/// Full pipeline: layer by edge splitting, then shrink every intermediate
/// layer to `n` vertices by selective preaccumulation.
pub fn make_uniform(dag: &Dag, policy: SplitPolicy) -> Result<Dag, DagError> {
    let n = dag.num_inputs();
    if n != dag.num_outputs() {
        return Err(DagError::Structural(format!(
            "{} inputs but {} outputs",
            n,
            dag.num_outputs()
        )));
    }
    let mut d = make_layered(dag, policy)?;
    let mut t = 1;
    loop {
        let report = layer_report(&d)?;
        if report.is_uniform {
            return Ok(d);
        }
        if !report.is_layered {
            return Err(DagError::Structural("layering lost during preaccumulation".into()));
        }
        if t >= report.depth() {
            return Err(DagError::Structural(format!(
                "layer sizes {:?} cannot be made uniform",
                report.layer_sizes
            )));
        }
        let size = report.layer_sizes[t];
        if size == n {
            t += 1;
            continue;
        }
        if size < n {
            return Err(DagError::Structural(format!(
                "layer {t} has {size} < {n} vertices; the Jacobian is singular"
            )));
        }
        let comps = connected_components(&d, t + 1)?;
        d = match comps.into_iter().find(reduces) {
            Some(c) => collapse(&d, &c)?,
            None => collapse(&d, &layer_component(&d, &report, t))?,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::jacobian_by_paths;

    fn fig4() -> Dag {
        Dag::new(
            2,
            1,
            2,
            vec![
                Edge::new(-1, 1, 2.0),
                Edge::new(0, 1, 3.0),
                Edge::new(0, 3, 5.0),
                Edge::new(1, 2, 7.0),
                Edge::new(1, 3, 11.0),
            ],
        )
    }

    #[test]
    fn split_inserts_dummy_with_policy() {
        let d = fig4();
        let lower = split_edge(&d, VertexId(0), VertexId(3), SplitPolicy::LabelOnLowerEdge).unwrap();
        assert_eq!(lower.num_intermediates(), 2);
        assert!(lower.edges().contains(&Edge::new(0, 2, 5.0)));
        assert!(lower.edges().contains(&Edge::new(2, 4, 1.0)));
        assert_eq!(lower.synthetic().iter().copied().collect::<Vec<_>>(), vec![VertexId(2)]);
        let upper = split_edge(&d, VertexId(0), VertexId(3), SplitPolicy::LabelOnUpperEdge).unwrap();
        assert!(upper.edges().contains(&Edge::new(0, 2, 1.0)));
        assert!(upper.edges().contains(&Edge::new(2, 4, 5.0)));
        let j = jacobian_by_paths(&d).unwrap();
        assert_eq!(jacobian_by_paths(&lower).unwrap().max_abs_diff(&j), 0.0);
        assert_eq!(jacobian_by_paths(&upper).unwrap().max_abs_diff(&j), 0.0);
    }

    #[test]
    fn missing_edge_is_an_error() {
        assert!(matches!(
            split_edge(&fig4(), VertexId(-1), VertexId(3), SplitPolicy::default()),
            Err(DagError::EdgeNotFound { .. })
        ));
    }

    #[test]
    fn zero_label_split_keeps_jacobian() {
        let d = Dag::new(1, 0, 1, vec![Edge::new(0, 1, 0.0)]);
        let s = split_edge(&d, VertexId(0), VertexId(1), SplitPolicy::default()).unwrap();
        let labels: Vec<f64> = s.edges().iter().map(|e| e.label).collect();
        assert_eq!(labels, vec![0.0, 1.0]);
        assert_eq!(jacobian_by_paths(&s).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn layered_input_is_a_fixed_point() {
        let d = Dag::new(1, 1, 1, vec![Edge::new(0, 1, 2.0), Edge::new(1, 2, 3.0)]);
        assert_eq!(make_layered(&d, SplitPolicy::default()).unwrap(), d);
    }

    #[test]
    fn impure_component_is_rejected() {
        let d = fig4();
        let c = Component {
            intermediate_vertices: [VertexId(1)].into(),
            predecessors: [VertexId(-1)].into(),
            successors: [VertexId(2), VertexId(3)].into(),
        };
        assert!(matches!(preaccumulate(&d, &c), Err(DagError::ComponentNotPure(_))));
    }

    #[test]
    fn unit_chain_preaccumulates_to_original_label() {
        let d = Dag::new(1, 1, 1, vec![Edge::new(0, 1, 1.0), Edge::new(1, 2, 4.5)]);
        let c = Component {
            intermediate_vertices: [VertexId(1)].into(),
            predecessors: [VertexId(0)].into(),
            successors: [VertexId(2)].into(),
        };
        let r = preaccumulate(&d, &c).unwrap();
        assert_eq!(r.edges(), &[Edge::new(0, 1, 4.5)]);
    }

    #[test]
    fn diagonal_layer_has_singleton_components() {
        let d = Dag::new(3, 0, 3, (0..3).map(|k| Edge::new(-k, 3 - k, 2.0)).collect());
        assert_eq!(connected_components(&d, 1).unwrap().len(), 3);
        assert!(matches!(
            connected_components(&d, 2),
            Err(DagError::NoSuchTransition(2))
        ));
    }

    #[test]
    fn square_block_puts_identity_on_input_side() {
        let d = Dag::new(
            2,
            0,
            2,
            vec![Edge::new(-1, 1, 2.0), Edge::new(0, 2, 3.0), Edge::new(0, 1, 1.0)],
        );
        let block = Component {
            intermediate_vertices: BTreeSet::new(),
            predecessors: [VertexId(-1), VertexId(0)].into(),
            successors: [VertexId(1), VertexId(2)].into(),
        };
        let s = split_bipartite(&d, &block).unwrap();
        assert_eq!(s.num_intermediates(), 2);
        // unit edges leave the inputs
        assert!(s.edges().iter().filter(|e| e.src.0 <= 0).all(|e| e.label == 1.0));
        assert_eq!(jacobian_by_paths(&s).unwrap(), jacobian_by_paths(&d).unwrap());
    }

    #[test]
    fn uniform_input_is_unchanged() {
        let d = Dag::new(2, 0, 2, vec![Edge::new(-1, 1, 2.0), Edge::new(0, 2, 3.0)]);
        assert_eq!(make_uniform(&d, SplitPolicy::default()).unwrap(), d);
    }
}
