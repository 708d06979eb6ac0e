//! Transform propagation, observation updating, pruning, sequential and
//! strong-root evidence handling.
//!
//! Propagation walks breadth-first outward from the adjusting node. Every
//! node of a level depends only on its predecessor's pair and on beliefs
//! local to the arc, so a level is computed in parallel. The update sweep
//! writes each node and the arc to its predecessor exactly once, so the
//! write sets of different branches are disjoint.

use std::collections::{HashMap, HashSet};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::belief::{self, TransformPair};
use crate::error::{Error, Result};
use crate::kernel::{self, Matrix, Tolerances, Vector};
use crate::tree::{BeliefTree, Node, NodeRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PlanStatus {
    Planned,
    Observed,
}

/// Projections and transforms for every node reachable from an adjustment
/// source, computed before the data are seen.
#[derive(Debug, Clone, Serialize)]
pub struct AdjustmentPlan {
    source: NodeRef,
    #[serde(skip)]
    source_indices: Vec<usize>,
    transforms: IndexMap<String, TransformPair>,
    #[serde(skip)]
    parents: HashMap<String, String>,
    version: u64,
    status: PlanStatus,
}

impl AdjustmentPlan {
    pub fn source(&self) -> &NodeRef {
        &self.source
    }

    pub fn status(&self) -> PlanStatus {
        self.status
    }

    /// Tree version the plan was computed against.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn transform(&self, node: &str) -> Option<&TransformPair> {
        self.transforms.get(node)
    }

    /// Pairs in propagation order, the source first.
    pub fn pairs(&self) -> impl Iterator<Item = &TransformPair> {
        self.transforms.values()
    }

    /// Neighbour one step closer to the source.
    pub fn predecessor(&self, node: &str) -> Option<&str> {
        self.parents.get(node).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }
}

/// Observed values for some or all quantities of one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub node: NodeRef,
    pub values: Vector,
}

impl Observation {
    pub fn new(node: NodeRef, values: &[f64]) -> Self {
        Observation {
            node,
            values: Vector::from_column_slice(values),
        }
    }

    pub fn whole(name: &str, values: &[f64]) -> Self {
        Self::new(NodeRef::whole(name), values)
    }
}

struct Outward {
    order: Vec<String>,
    pairs: HashMap<String, (Matrix, Matrix)>,
    parents: HashMap<String, String>,
}

/// Breadth-first outward propagation of `(P, T)` from `start`, never
/// entering nodes in `exclude`.
fn propagate_from(
    tree: &BeliefTree,
    start: &str,
    start_pair: (Matrix, Matrix),
    exclude: &HashSet<String>,
) -> Result<Outward> {
    let tol = tree.tolerances();
    let component: Vec<String> = tree
        .component(start)?
        .into_iter()
        .filter(|n| !exclude.contains(n))
        .collect();
    let pinvs: HashMap<String, Matrix> = component
        .par_iter()
        .map(|n| Ok((n.clone(), node_pinv(tree.node(n)?, tol)?)))
        .collect::<Result<_>>()?;

    let mut out = Outward {
        order: vec![start.to_string()],
        pairs: HashMap::from([(start.to_string(), start_pair)]),
        parents: HashMap::new(),
    };
    let mut frontier: Vec<(String, String)> = children(tree, start, None, exclude)?;
    while !frontier.is_empty() {
        let computed: Vec<(String, String, Matrix, Matrix)> = frontier
            .par_iter()
            .map(|(parent, child)| {
                let (p_parent, t_parent) = &out.pairs[parent];
                let cov_zy = tree.cov(child, parent)?;
                let p_yz = &cov_zy * &pinvs[parent];
                let p_zy = cov_zy.transpose() * &pinvs[child];
                let p = belief::compose_projection(&p_yz, p_parent)?;
                let t = belief::compose_transform(&p_yz, t_parent, &p_zy)?;
                Ok((parent.clone(), child.clone(), p, t))
            })
            .collect::<Result<_>>()?;
        let mut next = Vec::new();
        for (parent, child, p, t) in computed {
            next.extend(children(tree, &child, Some(&parent), exclude)?);
            out.order.push(child.clone());
            out.parents.insert(child.clone(), parent);
            out.pairs.insert(child, (p, t));
        }
        frontier = next;
    }
    Ok(out)
}

/// Pseudo-inverse of a node's current variance, ignoring directions that
/// are round-off relative to the variance as originally specified.
fn node_pinv(node: &Node, tol: &Tolerances) -> Result<Matrix> {
    kernel::pseudo_inverse_floor(node.spec().variance(), tol, tol.noise * node.reference_scale())
}

fn children(
    tree: &BeliefTree,
    node: &str,
    parent: Option<&str>,
    exclude: &HashSet<String>,
) -> Result<Vec<(String, String)>> {
    Ok(tree
        .neighbors(node)?
        .iter()
        .filter(|n| Some(n.as_str()) != parent && !exclude.contains(*n))
        .map(|n| (node.to_string(), n.clone()))
        .collect())
}

/// Source pair for adjustment by the selected quantities `X` of a node `B`:
/// `P_X[B] = cov(B, X) Var(X)^+` and `T_X[B] = P_X[B] P_B[X]`.
fn source_pair(tree: &BeliefTree, name: &str, idx: &[usize], tol: &Tolerances) -> Result<(Matrix, Matrix)> {
    let node = tree.node(name)?;
    let v = node.spec().variance();
    let cov_bx = v.select_columns(idx);
    let var_x = cov_bx.select_rows(idx);
    let floor = tol.noise * node.reference_scale();
    let p = &cov_bx * kernel::pseudo_inverse_floor(&var_x, tol, floor)?;
    let p_back = cov_bx.transpose() * node_pinv(node, tol)?;
    let t = &p * p_back;
    Ok((p, t))
}

/// Computes `P_X[Z]` and `T_X[Z]` for every node `Z` in the source's
/// component. The tree is not modified.
pub fn propagate_transforms(tree: &BeliefTree, source: &NodeRef) -> Result<AdjustmentPlan> {
    let idx = tree.resolve(source)?;
    let pair = source_pair(tree, &source.name, &idx, tree.tolerances())?;
    let out = propagate_from(tree, &source.name, pair, &HashSet::new())?;
    let mut pairs = out.pairs;
    let transforms = out
        .order
        .iter()
        .map(|n| {
            let (projection, transform) = pairs.remove(n).expect("computed");
            (
                n.clone(),
                TransformPair {
                    source: source.name.clone(),
                    target: n.clone(),
                    projection,
                    transform,
                },
            )
        })
        .collect();
    Ok(AdjustmentPlan {
        source: source.clone(),
        source_indices: idx,
        transforms,
        parents: out.parents,
        version: tree.version(),
        status: PlanStatus::Planned,
    })
}

struct NodeUpdate {
    name: String,
    expectation: Vector,
    variance: Matrix,
    /// `(predecessor, cov(predecessor, name))` after adjustment.
    arc: Option<(String, Matrix)>,
}

/// New moments for every node in `order` except those in `skip`.
fn sweep_updates(
    tree: &BeliefTree,
    order: &[String],
    pairs: &HashMap<String, (&Matrix, &Matrix)>,
    parents: &HashMap<String, String>,
    innovation: &Vector,
    skip: &HashSet<String>,
) -> Result<Vec<NodeUpdate>> {
    order
        .par_iter()
        .filter(|n| !skip.contains(*n))
        .map(|name| {
            let spec = tree.node(name)?.spec();
            let (p, t) = pairs[name];
            let n = spec.dim();
            let expectation = spec.expectation() + p * innovation;
            let variance = kernel::symmetrize(&((Matrix::identity(n, n) - t) * spec.variance()))?;
            let arc = match parents.get(name) {
                Some(parent) => {
                    let (_, t_parent) = pairs[parent];
                    let c = belief::update_cross_covariance(t_parent, &tree.cov(parent, name)?)?;
                    Some((parent.clone(), c))
                }
                None => None,
            };
            Ok(NodeUpdate {
                name: name.clone(),
                expectation,
                variance,
                arc,
            })
        })
        .collect()
}

fn write_updates(tree: &mut BeliefTree, updates: Vec<NodeUpdate>) -> Result<()> {
    for u in updates {
        tree.node_mut(&u.name)?.spec_mut().replace(u.expectation, u.variance);
        if let Some((parent, c)) = u.arc {
            tree.arc_mut(&parent, &u.name)
                .expect("plan follows tree arcs")
                .set_oriented(&parent, &u.name, c);
        }
    }
    Ok(())
}

/// Observed quantities become known exactly: expectation equal to the data,
/// zero variance and zero covariance with everything else.
fn pin_observed(tree: &mut BeliefTree, name: &str, idx: &[usize], values: &Vector) -> Result<()> {
    let nbrs = tree.neighbors(name)?.to_vec();
    let node = tree.node_mut(name)?;
    let mut e = node.spec().expectation().clone();
    let mut v = node.spec().variance().clone();
    for (k, &i) in idx.iter().enumerate() {
        e[i] = values[k];
        v.row_mut(i).fill(0.0);
        v.column_mut(i).fill(0.0);
    }
    node.spec_mut().replace(e, v);
    node.mark_observed(idx);
    for n in nbrs {
        let arc = tree.arc_mut(name, &n).expect("adjacent");
        let mut c = arc.oriented(name, &n)?;
        for &i in idx {
            c.row_mut(i).fill(0.0);
        }
        arc.set_oriented(name, &n, c);
    }
    Ok(())
}

/// Updates expectations, variances and arc covariances over the source's
/// component after observing `obs`.
pub fn apply_observation(tree: &mut BeliefTree, plan: &mut AdjustmentPlan, obs: &Observation) -> Result<()> {
    if plan.status == PlanStatus::Observed {
        return Err(Error::PlanAlreadyApplied);
    }
    if plan.version != tree.version() {
        return Err(Error::StalePlan {
            planned: plan.version,
            current: tree.version(),
        });
    }
    if obs.node.name != plan.source.name || tree.resolve(&obs.node)? != plan.source_indices {
        return Err(Error::Shape(format!(
            "observation on {:?} does not match the plan source {:?}",
            obs.node, plan.source
        )));
    }
    let idx = &plan.source_indices;
    if obs.values.len() != idx.len() {
        return Err(Error::Shape(format!(
            "{} values supplied for {} observed quantities",
            obs.values.len(),
            idx.len()
        )));
    }
    kernel::check_finite_vector(&obs.values)?;

    let source = &plan.source.name;
    let prior = tree.node(source)?.spec().expectation().select_rows(idx.iter());
    let innovation = &obs.values - prior;

    let pairs: HashMap<String, (&Matrix, &Matrix)> = plan
        .transforms
        .iter()
        .map(|(k, tp)| (k.clone(), (&tp.projection, &tp.transform)))
        .collect();
    let order: Vec<String> = plan.transforms.keys().cloned().collect();
    let updates = sweep_updates(tree, &order, &pairs, &plan.parents, &innovation, &HashSet::new())?;
    write_updates(tree, updates)?;
    pin_observed(tree, source, idx, &obs.values)?;
    tree.bump();
    plan.status = PlanStatus::Observed;
    Ok(())
}

/// Propagates and applies one observation, returning the applied plan.
pub fn adjust(tree: &mut BeliefTree, obs: &Observation) -> Result<AdjustmentPlan> {
    let mut plan = propagate_transforms(tree, &obs.node)?;
    apply_observation(tree, &mut plan, obs)?;
    Ok(plan)
}

/// Removes a node, or observed quantities of a node.
///
/// Without a selection the node is dropped with its arcs; this requires the
/// node to be a leaf or fully observed. With a selection, the selected
/// quantities must all have been observed; their rows and columns are
/// removed from the node and its arcs (the node goes if nothing remains).
pub fn prune(tree: &mut BeliefTree, target: &NodeRef) -> Result<()> {
    let node = tree.node(&target.name)?;
    match &target.selection {
        None => {
            if node.is_fully_observed() || tree.degree(&target.name)? <= 1 {
                tree.remove_node(&target.name)?;
                Ok(())
            } else {
                Err(Error::InvalidPrune {
                    node: target.name.clone(),
                    reason: "interior node that is not fully observed".into(),
                })
            }
        }
        Some(_) => {
            let idx = tree.resolve(target)?;
            if let Some(&i) = idx.iter().find(|&&i| !node.observed().contains(&node.labels()[i])) {
                return Err(Error::InvalidPrune {
                    node: target.name.clone(),
                    reason: format!("quantity `{}` has not been observed", node.labels()[i]),
                });
            }
            if idx.len() == node.dim() {
                tree.remove_node(&target.name)?;
                Ok(())
            } else {
                tree.remove_quantities(&target.name, &idx)
            }
        }
    }
}

/// Observed quantities of the observation's node, as a prune target.
fn observed_part(obs: &Observation) -> NodeRef {
    obs.node.clone()
}

/// Incorporates observations one node at a time. With `prune` set, each
/// observed block is removed after its update. Returns the applied plans.
pub fn sequential_adjust(
    tree: &mut BeliefTree,
    observations: &[Observation],
    prune_observed: bool,
) -> Result<Vec<AdjustmentPlan>> {
    let mut plans = Vec::with_capacity(observations.len());
    for obs in observations {
        plans.push(adjust(tree, obs)?);
        if prune_observed {
            prune(tree, &observed_part(obs))?;
        }
    }
    Ok(plans)
}

/// Result of a strong-root adjustment.
#[derive(Debug, Clone)]
pub struct StrongRootOutcome {
    /// Nodes on the evidence side, the root included.
    pub evidence_region: Vec<String>,
    /// Transform of the root given all of the evidence.
    pub root_transform: Matrix,
    /// Plans for the individual observations within the evidence region.
    pub local_plans: Vec<AdjustmentPlan>,
}

/// The smallest subtree containing `root` and every evidence node, after
/// checking that only `root` connects it to the rest of the tree.
pub fn evidence_region(tree: &BeliefTree, root: &str, evidence: &[&str]) -> Result<Vec<String>> {
    tree.node(root)?;
    let mut region: Vec<String> = vec![root.to_string()];
    for e in evidence {
        let path = tree.path(root, e).map_err(|_| Error::InvalidRoot {
            root: root.to_string(),
            reason: format!("evidence node `{e}` is not connected to the root"),
        })?;
        for n in path {
            if !region.contains(&n) {
                region.push(n);
            }
        }
    }
    for n in &region {
        if n == root {
            continue;
        }
        if let Some(out) = tree.neighbors(n)?.iter().find(|m| !region.contains(m)) {
            return Err(Error::InvalidRoot {
                root: root.to_string(),
                reason: format!("`{n}` on the evidence side is also joined to `{out}`"),
            });
        }
    }
    Ok(region)
}

/// Absorbs evidence on the evidence side of a strong root, then sends the
/// root's combined adjustment outward once.
pub fn strong_root_adjust(
    tree: &mut BeliefTree,
    root: &str,
    observations: &[Observation],
) -> Result<StrongRootOutcome> {
    let evidence: Vec<&str> = observations.iter().map(|o| o.node.name.as_str()).collect();
    let region = evidence_region(tree, root, &evidence)?;

    let mut local = tree.induced(&region)?;
    let prior = tree.node(root)?.spec().clone();
    let n = prior.dim();
    let mut root_transform = Matrix::zeros(n, n);
    let mut local_plans = Vec::with_capacity(observations.len());
    for obs in observations {
        let plan = adjust(&mut local, obs)?;
        let stage = &plan.transform(root).expect("root is in the region").transform;
        root_transform = belief::accumulate_transform(&root_transform, stage)?;
        local_plans.push(plan);
    }
    let shift = local.node(root)?.spec().expectation() - prior.expectation();

    let exclude: HashSet<String> = region.iter().filter(|n| n.as_str() != root).cloned().collect();
    let outward = propagate_from(tree, root, (Matrix::identity(n, n), root_transform.clone()), &exclude)?;
    let pairs: HashMap<String, (&Matrix, &Matrix)> =
        outward.pairs.iter().map(|(k, (p, t))| (k.clone(), (p, t))).collect();
    let skip = HashSet::from([root.to_string()]);
    let updates = sweep_updates(tree, &outward.order, &pairs, &outward.parents, &shift, &skip)?;

    for name in &region {
        let updated = local.node(name)?.clone();
        *tree.node_mut(name)? = updated;
    }
    for cov in local.arcs() {
        *tree
            .arc_mut(&cov.row_block, &cov.col_block)
            .expect("induced arcs exist in the full tree") = cov.clone();
    }
    write_updates(tree, updates)?;
    tree.bump();
    Ok(StrongRootOutcome {
        evidence_region: region,
        root_transform,
        local_plans,
    })
}
