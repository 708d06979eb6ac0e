//! The undirected belief tree: node and arc storage, structural checks and
//! neighbour/path queries.
//!
//! Missing arcs mean adjusted orthogonality given the rest of the tree; no
//! covariance between non-adjacent nodes is stored. Forests are allowed.

use std::collections::{BTreeSet, HashMap, VecDeque};

use indexmap::IndexMap;
use serde::Serialize;

use crate::belief::{BeliefSpec, CrossCov};
use crate::error::{Error, Result};
use crate::kernel::{self, Matrix, Tolerances};

/// A named block of quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    labels: Vec<String>,
    spec: BeliefSpec,
    observed: BTreeSet<String>,
    scale: f64,
}

impl Node {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn spec(&self) -> &BeliefSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    /// Labels of quantities that have been observed and not yet pruned.
    pub fn observed(&self) -> &BTreeSet<String> {
        &self.observed
    }

    pub fn is_fully_observed(&self) -> bool {
        self.labels.iter().all(|l| self.observed.contains(l))
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Largest absolute variance entry as specified, before any adjustment.
    /// Round-off in adjusted variances is measured against it.
    pub fn reference_scale(&self) -> f64 {
        self.scale
    }

    pub(crate) fn set_reference_scale(&mut self, scale: f64) {
        self.scale = scale;
    }

    pub(crate) fn spec_mut(&mut self) -> &mut BeliefSpec {
        &mut self.spec
    }

    pub(crate) fn mark_observed(&mut self, indices: &[usize]) {
        for &i in indices {
            self.observed.insert(self.labels[i].clone());
        }
    }
}

/// A node name plus an optional subset of its quantity labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeRef {
    pub name: String,
    pub selection: Option<Vec<String>>,
}

impl NodeRef {
    pub fn whole(name: impl Into<String>) -> Self {
        NodeRef {
            name: name.into(),
            selection: None,
        }
    }

    pub fn partial<S: Into<String>>(name: impl Into<String>, labels: impl IntoIterator<Item = S>) -> Self {
        NodeRef {
            name: name.into(),
            selection: Some(labels.into_iter().map(Into::into).collect()),
        }
    }
}

fn arc_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Finding {
    NotPsdNode {
        node: String,
        detail: String,
    },
    NotPsdArc {
        from: String,
        to: String,
        detail: String,
    },
    Cycle {
        nodes: Vec<String>,
    },
    ShapeMismatch {
        from: String,
        to: String,
        detail: String,
    },
    /// Informational only.
    Disconnected {
        components: usize,
    },
}

impl Finding {
    pub fn is_error(&self) -> bool {
        !matches!(self, Finding::Disconnected { .. })
    }
}

impl std::fmt::Display for Finding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Finding::NotPsdNode { node, detail } => write!(f, "node {node}: {detail}"),
            Finding::NotPsdArc { from, to, detail } => write!(f, "arc {from} -- {to}: joint block {detail}"),
            Finding::Cycle { nodes } => write!(f, "cycle: {}", nodes.join(" -- ")),
            Finding::ShapeMismatch { from, to, detail } => write!(f, "arc {from} -- {to}: {detail}"),
            Finding::Disconnected { components } => write!(f, "forest with {components} components (informational)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub node_count: usize,
    pub arc_count: usize,
    pub acyclic: bool,
    pub components: Vec<Vec<String>>,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.acyclic && !self.findings.iter().any(Finding::is_error)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BeliefTree {
    nodes: IndexMap<String, Node>,
    arcs: IndexMap<(String, String), CrossCov>,
    adjacency: HashMap<String, Vec<String>>,
    version: u64,
    tolerances: Tolerances,
}

impl BeliefTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_tolerances(tolerances: Tolerances) -> Self {
        BeliefTree {
            tolerances,
            ..Self::default()
        }
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tolerances
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub(crate) fn bump(&mut self) {
        self.version += 1;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn node_names(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&str, &Node)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn arcs(&self) -> impl Iterator<Item = &CrossCov> {
        self.arcs.values()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.nodes.contains_key(name)
    }

    pub fn node(&self, name: &str) -> Result<&Node> {
        self.nodes.get(name).ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub(crate) fn node_mut(&mut self, name: &str) -> Result<&mut Node> {
        self.nodes
            .get_mut(name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn arc(&self, a: &str, b: &str) -> Option<&CrossCov> {
        self.arcs.get(&arc_key(a, b))
    }

    pub(crate) fn arc_mut(&mut self, a: &str, b: &str) -> Option<&mut CrossCov> {
        self.arcs.get_mut(&arc_key(a, b))
    }

    /// `cov(from, to)` for adjacent nodes.
    pub fn cov(&self, from: &str, to: &str) -> Result<Matrix> {
        self.arc(from, to)
            .ok_or_else(|| Error::NoPath(from.to_string(), to.to_string()))?
            .oriented(from, to)
    }

    /// Adds a node after checking that its variance is PSD.
    pub fn add_node<S: Into<String>>(
        &mut self,
        name: impl Into<String>,
        labels: impl IntoIterator<Item = S>,
        spec: BeliefSpec,
    ) -> Result<()> {
        spec.check_psd(&self.tolerances)?;
        self.add_node_unchecked(name, labels, spec)
    }

    /// Adds a node checking shapes and labels only; PSD problems surface in
    /// [`BeliefTree::validate`].
    pub fn add_node_unchecked<S: Into<String>>(
        &mut self,
        name: impl Into<String>,
        labels: impl IntoIterator<Item = S>,
        spec: BeliefSpec,
    ) -> Result<()> {
        let name = name.into();
        if self.nodes.contains_key(&name) {
            return Err(Error::DuplicateNode(name));
        }
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() != spec.dim() {
            return Err(Error::Shape(format!(
                "node {name} has {} labels but its belief specification has dimension {}",
                labels.len(),
                spec.dim()
            )));
        }
        let mut seen = BTreeSet::new();
        for l in &labels {
            if !seen.insert(l) {
                return Err(Error::DuplicateLabel {
                    node: name,
                    label: l.clone(),
                });
            }
        }
        self.adjacency.insert(name.clone(), Vec::new());
        let scale = kernel::max_abs(spec.variance());
        self.nodes.insert(
            name,
            Node {
                labels,
                spec,
                observed: BTreeSet::new(),
                scale,
            },
        );
        self.bump();
        Ok(())
    }

    /// Adds an arc carrying `cov.matrix = cov(row_block, col_block)`.
    pub fn add_arc(&mut self, cov: CrossCov) -> Result<()> {
        let (a, b) = (cov.row_block.clone(), cov.col_block.clone());
        let rows = self.node(&a)?.dim();
        let cols = self.node(&b)?.dim();
        if a == b {
            return Err(Error::Cycle {
                from: a.clone(),
                to: b,
                cycle: vec![a],
            });
        }
        if cov.matrix.shape() != (rows, cols) {
            return Err(Error::Shape(format!(
                "arc {a} -- {b} carries a {}x{} matrix, expected {rows}x{cols}",
                cov.matrix.nrows(),
                cov.matrix.ncols()
            )));
        }
        if let Ok(existing) = self.path(&a, &b) {
            return Err(Error::Cycle {
                from: a,
                to: b,
                cycle: existing,
            });
        }
        self.adjacency.get_mut(&a).unwrap().push(b.clone());
        self.adjacency.get_mut(&b).unwrap().push(a.clone());
        self.arcs.insert(arc_key(&a, &b), cov);
        self.bump();
        Ok(())
    }

    /// Shorthand for `add_arc` with `matrix = cov(from, to)`.
    pub fn connect(&mut self, from: &str, to: &str, matrix: Matrix) -> Result<()> {
        self.add_arc(CrossCov::new(from, to, matrix)?)
    }

    pub fn neighbors(&self, name: &str) -> Result<&[String]> {
        self.adjacency
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn degree(&self, name: &str) -> Result<usize> {
        Ok(self.neighbors(name)?.len())
    }

    /// The unique simple path from `from` to `to`, both ends included.
    pub fn path(&self, from: &str, to: &str) -> Result<Vec<String>> {
        self.node(from)?;
        self.node(to)?;
        let mut parent: HashMap<&str, &str> = HashMap::new();
        let mut queue = VecDeque::from([from]);
        parent.insert(from, from);
        while let Some(cur) = queue.pop_front() {
            if cur == to {
                let mut out = vec![to.to_string()];
                let mut at = to;
                while at != from {
                    at = parent[at];
                    out.push(at.to_string());
                }
                out.reverse();
                return Ok(out);
            }
            for next in &self.adjacency[cur] {
                if !parent.contains_key(next.as_str()) {
                    parent.insert(next, cur);
                    queue.push_back(next);
                }
            }
        }
        Err(Error::NoPath(from.to_string(), to.to_string()))
    }

    /// Nodes of the component containing `name`, in breadth-first order.
    pub fn component(&self, name: &str) -> Result<Vec<String>> {
        self.node(name)?;
        let mut seen: BTreeSet<&str> = BTreeSet::from([name]);
        let mut order = vec![name.to_string()];
        let mut i = 0;
        while i < order.len() {
            for next in &self.adjacency[order[i].as_str()] {
                if seen.insert(next) {
                    order.push(next.clone());
                }
            }
            i += 1;
        }
        Ok(order)
    }

    pub fn components(&self) -> Vec<Vec<String>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for name in self.nodes.keys() {
            if seen.contains(name) {
                continue;
            }
            let comp = self.component(name).expect("node exists");
            seen.extend(comp.iter().cloned());
            out.push(comp);
        }
        out
    }

    /// Indices of the selected quantities within the node (all of them when
    /// the selection is absent).
    pub fn resolve(&self, r: &NodeRef) -> Result<Vec<usize>> {
        let node = self.node(&r.name)?;
        match &r.selection {
            None => Ok((0..node.dim()).collect()),
            Some(labels) => {
                let mut out = Vec::with_capacity(labels.len());
                for l in labels {
                    let i = node.index_of(l).ok_or_else(|| Error::UnknownLabel {
                        node: r.name.clone(),
                        label: l.clone(),
                    })?;
                    if out.contains(&i) {
                        return Err(Error::DuplicateLabel {
                            node: r.name.clone(),
                            label: l.clone(),
                        });
                    }
                    out.push(i);
                }
                if out.is_empty() {
                    return Err(Error::Shape(format!("empty selection on node {}", r.name)));
                }
                Ok(out)
            }
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let tol = &self.tolerances;
        let mut findings = Vec::new();

        // Union-find over arcs; the insertion path already refuses cycles but
        // a report is cheap to produce.
        let index: HashMap<&str, usize> = self.nodes.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut acyclic = true;
        for cov in self.arcs.values() {
            let (a, b) = (index[cov.row_block.as_str()], index[cov.col_block.as_str()]);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra == rb {
                acyclic = false;
                findings.push(Finding::Cycle {
                    nodes: vec![cov.row_block.clone(), cov.col_block.clone()],
                });
            } else {
                parent[ra] = rb;
            }
        }

        for (name, node) in &self.nodes {
            if let Err(e) = node.spec.check_psd(tol) {
                findings.push(Finding::NotPsdNode {
                    node: name.clone(),
                    detail: e.to_string(),
                });
            }
        }
        for cov in self.arcs.values() {
            let a = &self.nodes[&cov.row_block];
            let b = &self.nodes[&cov.col_block];
            if cov.matrix.shape() != (a.dim(), b.dim()) {
                findings.push(Finding::ShapeMismatch {
                    from: cov.row_block.clone(),
                    to: cov.col_block.clone(),
                    detail: format!("matrix is {}x{}", cov.matrix.nrows(), cov.matrix.ncols()),
                });
                continue;
            }
            let joint = joint_block(a.spec.variance(), &cov.matrix, b.spec.variance());
            if let Err(e) = kernel::check_psd(&joint, tol) {
                findings.push(Finding::NotPsdArc {
                    from: cov.row_block.clone(),
                    to: cov.col_block.clone(),
                    detail: e.to_string(),
                });
            }
        }

        let components = self.components();
        if components.len() > 1 {
            findings.push(Finding::Disconnected {
                components: components.len(),
            });
        }
        ValidationReport {
            node_count: self.nodes.len(),
            arc_count: self.arcs.len(),
            acyclic,
            components,
            findings,
        }
    }

    /// Removes a node with all of its arcs.
    pub(crate) fn remove_node(&mut self, name: &str) -> Result<Node> {
        let node = self
            .nodes
            .shift_remove(name)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))?;
        let nbrs = self.adjacency.remove(name).unwrap_or_default();
        for n in nbrs {
            self.arcs.shift_remove(&arc_key(name, &n));
            if let Some(list) = self.adjacency.get_mut(&n) {
                list.retain(|x| x != name);
            }
        }
        self.bump();
        Ok(node)
    }

    /// Drops the quantities at `drop` from a node and from its incident arcs.
    pub(crate) fn remove_quantities(&mut self, name: &str, drop: &[usize]) -> Result<()> {
        let node = self.node(name)?;
        let keep: Vec<usize> = (0..node.dim()).filter(|i| !drop.contains(i)).collect();
        let nbrs = self.adjacency[name].clone();
        for n in &nbrs {
            let arc = self.arc_mut(name, n).expect("adjacent");
            let c = arc.oriented(name, n)?.select_rows(&keep);
            arc.set_oriented(name, n, c);
        }
        let node = self.node_mut(name)?;
        node.spec = node.spec.restrict(&keep);
        let dropped: Vec<String> = drop.iter().map(|&i| node.labels[i].clone()).collect();
        node.labels = keep.iter().map(|&i| node.labels[i].clone()).collect();
        for l in dropped {
            node.observed.remove(&l);
        }
        self.bump();
        Ok(())
    }

    /// Copy of the tree restricted to `names` and the arcs among them.
    pub(crate) fn induced(&self, names: &[String]) -> Result<BeliefTree> {
        let mut out = BeliefTree::with_tolerances(self.tolerances);
        for n in names {
            let node = self.node(n)?;
            out.adjacency.insert(n.clone(), Vec::new());
            out.nodes.insert(n.clone(), node.clone());
        }
        for cov in self.arcs.values() {
            if out.nodes.contains_key(&cov.row_block) && out.nodes.contains_key(&cov.col_block) {
                out.adjacency
                    .get_mut(&cov.row_block)
                    .unwrap()
                    .push(cov.col_block.clone());
                out.adjacency
                    .get_mut(&cov.col_block)
                    .unwrap()
                    .push(cov.row_block.clone());
                out.arcs.insert(arc_key(&cov.row_block, &cov.col_block), cov.clone());
            }
        }
        Ok(out)
    }
}

pub(crate) fn joint_block(va: &Matrix, c: &Matrix, vb: &Matrix) -> Matrix {
    let (n, m) = (va.nrows(), vb.nrows());
    let mut j = Matrix::zeros(n + m, n + m);
    j.view_mut((0, 0), (n, n)).copy_from(va);
    j.view_mut((0, n), (n, m)).copy_from(c);
    j.view_mut((n, 0), (m, n)).copy_from(&c.transpose());
    j.view_mut((n, n), (m, m)).copy_from(vb);
    j
}
