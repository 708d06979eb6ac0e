//! TOML model files.
//!
//! ```toml
//! [settings]            # optional
//! pinv_rel_tol = 1e-12
//!
//! [[nodes]]
//! name = "X1"
//! labels = ["X1"]
//! expectation = [20.0]
//! variance = [[571.0]]
//! reference_scale = 571.0   # optional; written for adjusted nodes
//!
//! [[arcs]]
//! from = "X1"
//! to = "theta1"
//! covariance = [[400.0, 0.0]]   # rows index the `from` quantities
//!
//! [builders.dlm]        # optional; expanded before `nodes` and `arcs`
//! horizon = 4
//! ```
//!
//! Numbers are written with 12 significant digits.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::belief::{BeliefSpec, CrossCov};
use crate::error::{Error, Result};
use crate::kernel::{max_abs, Matrix, Tolerances, Vector};
use crate::models::{self, DlmSpec, NStepSpec, NoiseTiming};
use crate::tree::BeliefTree;

pub const SIGNIFICANT_DIGITS: usize = 12;

/// Rounds to the file precision.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(default)]
    settings: Option<Settings>,
    #[serde(default)]
    nodes: Vec<RawNode>,
    #[serde(default)]
    arcs: Vec<RawArc>,
    #[serde(default)]
    builders: Option<Builders>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinv_rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psd_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_tol: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    name: Spanned<String>,
    labels: Vec<String>,
    expectation: Spanned<Vec<f64>>,
    variance: Spanned<Rows>,
    #[serde(default)]
    observed: Vec<String>,
    reference_scale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArc {
    from: Spanned<String>,
    to: String,
    covariance: Spanned<Rows>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Builders {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dlm: Option<DlmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nstep: Option<NStepParams>,
}

/// DLM parameters; anything omitted takes the linear growth example value.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DlmParams {
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_map: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_transition: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state1_expectation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state1_variance: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obs_noise_variance: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_noise_variance: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_timing: Option<NoiseTiming>,
}

/// n-step parameters; omitted moments default to the triangular kernel.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NStepParams {
    pub n: usize,
    pub observables: usize,
    #[serde(default = "one")]
    pub series_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_expectation: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_variance: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_covariances: Option<Vec<Rows>>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Serialize)]
struct OutModel {
    #[serde(skip_serializing_if = "Option::is_none")]
    settings: Option<Settings>,
    nodes: Vec<OutNode>,
    arcs: Vec<OutArc>,
}

#[derive(Debug, Serialize)]
struct OutNode {
    name: String,
    labels: Vec<String>,
    expectation: Vec<f64>,
    variance: Rows,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    observed: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference_scale: Option<f64>,
}

#[derive(Debug, Serialize)]
struct OutArc {
    from: String,
    to: String,
    covariance: Rows,
}

/// Converts a byte offset into 1-based line and column.
fn location(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

fn located(text: &str, span: Range<usize>, msg: impl std::fmt::Display) -> Error {
    let (line, col) = location(text, span.start);
    Error::Parse(format!("line {line}, column {col}: {msg}"))
}

pub(crate) fn rows_to_matrix(rows: &Rows) -> std::result::Result<Matrix, String> {
    let r = rows.len();
    if r == 0 {
        return Err("matrix has no rows".into());
    }
    let c = rows[0].len();
    if c == 0 {
        return Err("matrix row is empty".into());
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, row)| row.len() != c) {
        return Err(format!("row {} has {} entries, expected {c}", i + 1, row.len()));
    }
    Ok(Matrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &Matrix) -> Rows {
    m.row_iter()
        .map(|row| row.iter().map(|&x| round_sig(x)).collect())
        .collect()
}

fn param_matrix(rows: &Option<Rows>, default: &Matrix, what: &str) -> Result<Matrix> {
    match rows {
        None => Ok(default.clone()),
        Some(r) => rows_to_matrix(r).map_err(|e| Error::Parse(format!("builders: {what}: {e}"))),
    }
}

impl DlmParams {
    pub fn to_spec(&self) -> Result<DlmSpec> {
        let base = DlmSpec::linear_growth_example(self.horizon);
        Ok(DlmSpec {
            horizon: self.horizon,
            obs_map: param_matrix(&self.obs_map, &base.obs_map, "obs_map")?,
            state_transition: param_matrix(&self.state_transition, &base.state_transition, "state_transition")?,
            state1_expectation: self
                .state1_expectation
                .as_ref()
                .map(|v| Vector::from_column_slice(v))
                .unwrap_or(base.state1_expectation),
            state1_variance: param_matrix(&self.state1_variance, &base.state1_variance, "state1_variance")?,
            obs_noise_variance: param_matrix(&self.obs_noise_variance, &base.obs_noise_variance, "obs_noise_variance")?,
            state_noise_variance: param_matrix(
                &self.state_noise_variance,
                &base.state_noise_variance,
                "state_noise_variance",
            )?,
            noise_timing: self.noise_timing.unwrap_or_default(),
        })
    }
}

impl NStepParams {
    pub fn to_spec(&self) -> Result<NStepSpec> {
        let base = NStepSpec::triangular(self.n, self.observables, self.series_count);
        let residual_covariances = match &self.residual_covariances {
            None => base.residual_covariances,
            Some(lags) => lags
                .iter()
                .map(|r| rows_to_matrix(r).map_err(|e| Error::Parse(format!("builders: residual_covariances: {e}"))))
                .collect::<Result<_>>()?,
        };
        Ok(NStepSpec {
            n: self.n,
            series_count: self.series_count,
            observables: self.observables,
            mean_expectation: self
                .mean_expectation
                .as_ref()
                .map(|v| Vector::from_column_slice(v))
                .unwrap_or(base.mean_expectation),
            mean_variance: param_matrix(&self.mean_variance, &base.mean_variance, "mean_variance")?,
            residual_covariances,
        })
    }
}

/// Parses a model file into a tree.
///
/// Shape, label and cycle problems are errors (with a location where one is
/// known). Variance matrices are not checked for positive
/// semi-definiteness here; run [`BeliefTree::validate`] for that.
pub fn parse_model(text: &str) -> Result<BeliefTree> {
    let raw: RawModel = toml::from_str(text).map_err(|e| match e.span() {
        Some(span) => located(text, span, e.message().trim()),
        None => Error::Parse(e.message().trim().to_string()),
    })?;

    let mut tol = Tolerances::default();
    if let Some(s) = &raw.settings {
        if let Some(p) = s.pinv_rel_tol {
            tol.pinv_rel = Some(p);
        }
        if let Some(p) = s.psd_tol {
            tol.psd = p;
        }
        if let Some(p) = s.noise_tol {
            tol.noise = p;
        }
    }

    let mut tree = BeliefTree::with_tolerances(tol);
    if let Some(b) = &raw.builders {
        if let Some(dlm) = &b.dlm {
            merge(&mut tree, models::build_dlm(&dlm.to_spec()?)?)?;
        }
        if let Some(ns) = &b.nstep {
            merge(&mut tree, models::build_nstep_chain(&ns.to_spec()?)?)?;
        }
    }

    for node in &raw.nodes {
        let variance = rows_to_matrix(node.variance.get_ref()).map_err(|e| {
            located(
                text,
                node.variance.span(),
                format!("node {}: variance: {e}", node.name.get_ref()),
            )
        })?;
        let expectation = Vector::from_column_slice(node.expectation.get_ref());
        if variance.shape() != (expectation.len(), expectation.len()) {
            return Err(located(
                text,
                node.variance.span(),
                format!(
                    "node {}: variance is {}x{} but expectation has length {}",
                    node.name.get_ref(),
                    variance.nrows(),
                    variance.ncols(),
                    expectation.len()
                ),
            ));
        }
        let spec = BeliefSpec::new(expectation, variance)
            .map_err(|e| located(text, node.name.span(), format!("node {}: {e}", node.name.get_ref())))?;
        let name = node.name.get_ref().clone();
        tree.add_node_unchecked(name.clone(), node.labels.clone(), spec)
            .map_err(|e| located(text, node.name.span(), e))?;
        if !node.observed.is_empty() {
            let idx = tree
                .resolve(&crate::tree::NodeRef::partial(name.clone(), node.observed.clone()))
                .map_err(|e| located(text, node.name.span(), e))?;
            tree.node_mut(&name)?.mark_observed(&idx);
        }
        if let Some(scale) = node.reference_scale {
            tree.node_mut(&name)?.set_reference_scale(scale);
        }
    }
    for arc in &raw.arcs {
        let m = rows_to_matrix(arc.covariance.get_ref()).map_err(|e| {
            located(
                text,
                arc.covariance.span(),
                format!("arc {} -- {}: covariance: {e}", arc.from.get_ref(), arc.to),
            )
        })?;
        let cov = CrossCov::new(arc.from.get_ref().clone(), arc.to.clone(), m)
            .map_err(|e| located(text, arc.from.span(), e))?;
        tree.add_arc(cov).map_err(|e| match e {
            Error::Cycle { .. } => e,
            other => located(text, arc.from.span(), other),
        })?;
    }
    Ok(tree)
}

fn scale_changed(node: &crate::tree::Node) -> bool {
    let scale = node.reference_scale();
    (scale - max_abs(node.spec().variance())).abs() > 1e-9 * scale
}

fn merge(into: &mut BeliefTree, from: BeliefTree) -> Result<()> {
    for (name, node) in from.nodes() {
        into.add_node_unchecked(name, node.labels().to_vec(), node.spec().clone())?;
    }
    for cov in from.arcs() {
        into.add_arc(cov.clone())?;
    }
    Ok(())
}

/// Writes the tree as a model file.
pub fn serialize_tree(tree: &BeliefTree) -> Result<String> {
    let tol = tree.tolerances();
    let defaults = Tolerances::default();
    let settings = (tol != &defaults).then(|| Settings {
        pinv_rel_tol: tol.pinv_rel,
        psd_tol: (tol.psd != defaults.psd).then_some(tol.psd),
        noise_tol: (tol.noise != defaults.noise).then_some(tol.noise),
    });
    let out = OutModel {
        settings,
        nodes: tree
            .nodes()
            .map(|(name, node)| OutNode {
                name: name.to_string(),
                labels: node.labels().to_vec(),
                expectation: node.spec().expectation().iter().map(|&x| round_sig(x)).collect(),
                variance: matrix_to_rows(node.spec().variance()),
                observed: node
                    .labels()
                    .iter()
                    .filter(|l| node.observed().contains(*l))
                    .cloned()
                    .collect(),
                reference_scale: scale_changed(node).then(|| round_sig(node.reference_scale())),
            })
            .collect(),
        arcs: tree
            .arcs()
            .map(|c| OutArc {
                from: c.row_block.clone(),
                to: c.col_block.clone(),
                covariance: matrix_to_rows(&c.matrix),
            })
            .collect(),
    };
    toml::to_string(&out).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_model(path: &std::path::Path) -> Result<BeliefTree> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_model(&text)
}

pub fn write_model(tree: &BeliefTree, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, serialize_tree(tree)?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
