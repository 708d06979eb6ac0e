//! Size, expected size, bearing and size ratio of an adjustment, for a
//! chosen target node, computed locally.
//!
//! Before data arrive the prior moments `E`, `V` of the target are recorded
//! together with a lower-triangular factor `A` (`V = A A^T`). After the
//! update, `A^+ (E' - E)` gives the bearing coordinates in the orthonormal
//! prior basis `A^+ (B - E)`. The expected size is the trace of the
//! cumulative transform, carried from stage to stage as
//! `I - (I - T_partial)(I - T_cumulative)`.

use serde::Serialize;

use crate::belief;
use crate::engine::{self, Observation};
use crate::error::{Error, Result};
use crate::kernel::{self, Matrix, Vector};
use crate::tree::{BeliefTree, NodeRef};

/// Sizes below this are treated as zero when deciding whether a ratio exists.
const ZERO_SIZE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticSnapshot {
    pub node: String,
    pub prior_expectation: Vector,
    pub prior_factor: Matrix,
    pub cumulative_transform: Matrix,
    #[serde(skip)]
    factor_pinv: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticReport {
    pub node: String,
    pub bearing: Vector,
    pub size: f64,
    pub expected_size: f64,
    /// `None` when neither a change was expected nor one occurred.
    pub size_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosticLevel {
    /// Ratio below 1/3. Symmetric counterpart of the warning band, not a
    /// conventional threshold.
    Low,
    Expected,
    /// Ratio above 3: possible conflict between prior beliefs and data.
    Warning,
}

impl std::fmt::Display for DiagnosticLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DiagnosticLevel::Low => "low",
            DiagnosticLevel::Expected => "expected",
            DiagnosticLevel::Warning => "warning",
        })
    }
}

/// Records the prior moments of `node` before any data arrive.
pub fn open_snapshot(tree: &BeliefTree, node: &str) -> Result<DiagnosticSnapshot> {
    let spec = tree.node(node)?.spec();
    let tol = tree.tolerances();
    let factor = kernel::psd_factor_with(spec.variance(), tol)?;
    let factor_pinv = kernel::pseudo_inverse_with(&factor, tol)?;
    let n = spec.dim();
    Ok(DiagnosticSnapshot {
        node: node.to_string(),
        prior_expectation: spec.expectation().clone(),
        prior_factor: factor,
        cumulative_transform: Matrix::zeros(n, n),
        factor_pinv,
    })
}

impl DiagnosticSnapshot {
    /// Folds in the partial transform of one further stage of adjustment.
    pub fn advance(&self, partial: &Matrix) -> Result<DiagnosticSnapshot> {
        let cumulative_transform = belief::accumulate_transform(&self.cumulative_transform, partial)?;
        Ok(DiagnosticSnapshot {
            cumulative_transform,
            ..self.clone()
        })
    }

    pub fn expected_size(&self) -> f64 {
        self.cumulative_transform.trace()
    }

    /// Bearing, size and size ratio of the change from the recorded prior to
    /// the current expectation of the node in `tree_after`.
    pub fn bearing(&self, tree_after: &BeliefTree) -> Result<DiagnosticReport> {
        let current = tree_after.node(&self.node)?.spec().expectation();
        if current.len() != self.prior_expectation.len() {
            return Err(Error::Shape(format!(
                "node {} changed dimension from {} to {}",
                self.node,
                self.prior_expectation.len(),
                current.len()
            )));
        }
        let bearing = &self.factor_pinv * (current - &self.prior_expectation);
        let size = bearing.norm_squared();
        let expected_size = self.expected_size();
        let size_ratio = if expected_size > ZERO_SIZE {
            Some(size / expected_size)
        } else if size > ZERO_SIZE {
            return Err(Error::DegenerateRatio { size });
        } else {
            None
        };
        Ok(DiagnosticReport {
            node: self.node.clone(),
            bearing,
            size,
            expected_size,
            size_ratio,
        })
    }
}

pub fn flag_size_ratio(report: &DiagnosticReport) -> DiagnosticLevel {
    match report.size_ratio {
        Some(r) if r > 3.0 => DiagnosticLevel::Warning,
        Some(r) if r < 1.0 / 3.0 => DiagnosticLevel::Low,
        _ => DiagnosticLevel::Expected,
    }
}

/// Partial and cumulative diagnostics after one observation.
#[derive(Debug, Clone, Serialize)]
pub struct StageDiagnostics {
    pub observation: NodeRef,
    pub partial_transform: Matrix,
    pub partial: DiagnosticReport,
    pub partial_level: DiagnosticLevel,
    pub cumulative_transform: Matrix,
    pub cumulative: DiagnosticReport,
    pub cumulative_level: DiagnosticLevel,
}

/// Adjusts `tree` by each observation in turn, reporting diagnostics for
/// `target` at every stage. The target must survive pruning.
pub fn diagnose_sequence(
    tree: &mut BeliefTree,
    target: &str,
    observations: &[Observation],
    prune_observed: bool,
) -> Result<Vec<StageDiagnostics>> {
    let mut cumulative = open_snapshot(tree, target)?;
    let mut stages = Vec::with_capacity(observations.len());
    for obs in observations {
        let stage = open_snapshot(tree, target)?;
        let mut plan = engine::propagate_transforms(tree, &obs.node)?;
        let n = stage.prior_expectation.len();
        // A target in another component is untouched by this observation.
        let partial_transform = plan
            .transform(target)
            .map(|p| p.transform.clone())
            .unwrap_or_else(|| Matrix::zeros(n, n));
        let stage = stage.advance(&partial_transform)?;
        cumulative = cumulative.advance(&partial_transform)?;
        engine::apply_observation(tree, &mut plan, obs)?;
        if prune_observed {
            engine::prune(tree, &obs.node)?;
        }
        let partial = stage.bearing(tree)?;
        let cum = cumulative.bearing(tree)?;
        stages.push(StageDiagnostics {
            observation: obs.node.clone(),
            partial_transform,
            partial_level: flag_size_ratio(&partial),
            partial,
            cumulative_transform: cumulative.cumulative_transform.clone(),
            cumulative_level: flag_size_ratio(&cum),
            cumulative: cum,
        });
    }
    Ok(stages)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::BeliefSpec;

    fn single(e: &[f64], v: &[&[f64]]) -> BeliefTree {
        let mut t = BeliefTree::new();
        let labels: Vec<String> = (0..e.len()).map(|i| format!("q{i}")).collect();
        t.add_node("n", labels, BeliefSpec::from_slices(e, v).unwrap()).unwrap();
        t
    }

    fn report(ratio: Option<f64>) -> DiagnosticReport {
        DiagnosticReport {
            node: "n".into(),
            bearing: Vector::zeros(1),
            size: 0.0,
            expected_size: 1.0,
            size_ratio: ratio,
        }
    }

    #[test]
    fn identity_prior_factor() {
        let t = single(&[0.0, 0.0], &[&[1.0, 0.0], &[0.0, 1.0]]);
        let s = open_snapshot(&t, "n").unwrap();
        assert_eq!(s.prior_factor, Matrix::identity(2, 2));
        assert_eq!(s.cumulative_transform, Matrix::zeros(2, 2));
    }

    #[test]
    fn singular_prior_has_zero_column() {
        let t = single(&[0.0, 0.0], &[&[1.0, 1.0], &[1.0, 1.0]]);
        let s = open_snapshot(&t, "n").unwrap();
        assert!(s.prior_factor.column(1).norm() < 1e-12);
        assert!((&s.prior_factor * s.prior_factor.transpose() - Matrix::from_element(2, 2, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn unknown_node() {
        let t = single(&[0.0], &[&[1.0]]);
        assert!(matches!(open_snapshot(&t, "zz"), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn no_change_zero_bearing() {
        let t = single(&[1.0, 2.0], &[&[2.0, 0.3], &[0.3, 1.0]]);
        let s = open_snapshot(&t, "n").unwrap();
        let s = s.advance(&Matrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0])).unwrap();
        let r = s.bearing(&t).unwrap();
        assert_eq!(r.size, 0.0);
        assert_eq!(r.bearing, Vector::zeros(2));
        assert_eq!(r.size_ratio, Some(0.0));
    }

    #[test]
    fn degenerate_ratio() {
        let t = single(&[0.0], &[&[1.0]]);
        let s = open_snapshot(&t, "n").unwrap();
        let mut moved = t.clone();
        moved
            .node_mut("n")
            .unwrap()
            .spec_mut()
            .replace(Vector::from_element(1, 1.0), Matrix::identity(1, 1));
        assert!(matches!(s.bearing(&moved), Err(Error::DegenerateRatio { .. })));
        assert_eq!(s.bearing(&t).unwrap().size_ratio, None);
    }

    #[test]
    fn advance_shape_mismatch() {
        let t = single(&[0.0], &[&[1.0]]);
        let s = open_snapshot(&t, "n").unwrap();
        assert!(s.advance(&Matrix::zeros(2, 2)).is_err());
        assert_eq!(s.advance(&Matrix::zeros(1, 1)).unwrap(), s);
    }

    #[test]
    fn flag_bands() {
        assert_eq!(flag_size_ratio(&report(Some(0.016))), DiagnosticLevel::Low);
        assert_eq!(flag_size_ratio(&report(Some(1.0))), DiagnosticLevel::Expected);
        assert_eq!(flag_size_ratio(&report(Some(3.0))), DiagnosticLevel::Expected);
        assert_eq!(flag_size_ratio(&report(Some(3.5))), DiagnosticLevel::Warning);
        assert_eq!(flag_size_ratio(&report(None)), DiagnosticLevel::Expected);
    }
}
