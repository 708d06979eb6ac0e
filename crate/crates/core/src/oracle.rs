//! Brute-force reference: assemble the full joint over every quantity in the
//! tree and adjust it in one dense step.
//!
//! Shares nothing with the propagation engine beyond the tree accessors.
//! Non-adjacent cross-covariances are filled in along the unique path as
//! `cov(B_a, B_c) = cov(B_a, B_b) Var(B_b)^+ cov(B_b, B_c)`; quantities
//! sharing a label collapse to a single coordinate.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tree::BeliefTree;

/// Largest tree the oracle will assemble.
pub const ORACLE_NODE_LIMIT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointBelief {
    pub labels: Vec<String>,
    pub expectation: DVector<f64>,
    pub variance: DMatrix<f64>,
}

/// Pseudo-inverse of a symmetric PSD matrix through its eigendecomposition,
/// dropping eigenvalues below `1e-10 * lambda_max`. Observations that are
/// linear functions of each other leave round-off eigenvalues well above
/// machine epsilon, so a tighter cutoff would invert noise.
fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    let cutoff = 1e-10 * top;
    let mut out = DMatrix::zeros(n, n);
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let q = eig.eigenvectors.column(k);
            out += q * q.transpose() / lambda;
        }
    }
    out
}

impl JointBelief {
    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn indices(&self, labels: &[String]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.index(l)
                    .ok_or_else(|| Error::Shape(format!("label `{l}` is not in the joint")))
            })
            .collect()
    }

    /// Expectation and variance of the listed quantities.
    pub fn block(&self, labels: &[String]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let idx = self.indices(labels)?;
        Ok((
            self.expectation.select_rows(idx.iter()),
            self.variance.select_rows(idx.iter()).select_columns(idx.iter()),
        ))
    }
}

/// Joint expectation and variance over the union of the tree's quantities.
/// Components are assembled separately; covariance across components is zero.
pub fn assemble_joint(tree: &BeliefTree) -> Result<JointBelief> {
    if tree.len() > ORACLE_NODE_LIMIT {
        return Err(Error::OracleTooLarge {
            nodes: tree.len(),
            limit: ORACLE_NODE_LIMIT,
        });
    }
    let mut labels: Vec<String> = Vec::new();
    let mut position: HashMap<String, usize> = HashMap::new();
    for (_, node) in tree.nodes() {
        for l in node.labels() {
            if !position.contains_key(l) {
                position.insert(l.clone(), labels.len());
                labels.push(l.clone());
            }
        }
    }
    let q = labels.len();
    let mut expectation = DVector::zeros(q);
    let mut variance = DMatrix::zeros(q, q);

    let index_of = |name: &str| -> Vec<usize> {
        tree.node(name)
            .expect("listed node")
            .labels()
            .iter()
            .map(|l| position[l])
            .collect()
    };

    for (name, node) in tree.nodes() {
        let rows = index_of(name);
        for (k, &r) in rows.iter().enumerate() {
            expectation[r] = node.spec().expectation()[k];
        }
        // cov(B_name, B_other) for every node in the component, walking out.
        let mut stack: Vec<(String, String, DMatrix<f64>)> =
            vec![(name.to_string(), name.to_string(), node.spec().variance().clone())];
        while let Some((at, from, cov)) = stack.pop() {
            let cols = index_of(&at);
            for (a, &r) in rows.iter().enumerate() {
                for (b, &c) in cols.iter().enumerate() {
                    variance[(r, c)] = cov[(a, b)];
                }
            }
            let v_at = tree.node(&at)?.spec().variance();
            let through = &cov * pinv(v_at);
            for next in tree.neighbors(&at)? {
                if *next == from {
                    continue;
                }
                let arc = tree.cov(&at, next)?;
                stack.push((next.clone(), at.clone(), &through * arc));
            }
        }
    }
    let variance = (&variance + variance.transpose()) * 0.5;
    Ok(JointBelief {
        labels,
        expectation,
        variance,
    })
}

/// Adjusts every quantity of the joint by the observed labels at once.
pub fn global_adjust(joint: &JointBelief, observed: &[String], values: &DVector<f64>) -> Result<JointBelief> {
    if observed.len() != values.len() {
        return Err(Error::Shape(format!(
            "{} labels but {} values",
            observed.len(),
            values.len()
        )));
    }
    if observed.is_empty() {
        return Ok(joint.clone());
    }
    let d = joint.indices(observed)?;
    let cov_all_d = joint.variance.select_columns(d.iter());
    let var_d = cov_all_d.select_rows(d.iter());
    let gain = &cov_all_d * pinv(&var_d);
    let innovation = values - joint.expectation.select_rows(d.iter());
    let expectation = &joint.expectation + &gain * innovation;
    let variance = &joint.variance - &gain * cov_all_d.transpose();
    let variance = (&variance + variance.transpose()) * 0.5;
    Ok(JointBelief {
        labels: joint.labels.clone(),
        expectation,
        variance,
    })
}

/// Largest deviation between the tree's node moments and the joint,
/// relative to the magnitude of each oracle block (floored at one).
pub fn max_deviation(tree: &BeliefTree, joint: &JointBelief) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (_, node) in tree.nodes() {
        let (e, v) = joint.block(node.labels())?;
        let de = (node.spec().expectation() - &e).amax() / e.amax().max(1.0);
        let dv = (node.spec().variance() - &v).amax() / v.amax().max(1.0);
        worst = worst.max(de).max(dv);
    }
    Ok(worst)
}
