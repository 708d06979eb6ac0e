//! Bayes linear belief trees: local adjustment of second-order beliefs by
//! propagating resolution transforms outward from the observed node.
//!
//! ```
//! use bltree::{adjust, build_dlm, DlmSpec, Observation};
//!
//! let mut tree = build_dlm(&DlmSpec::linear_growth_example(4)).unwrap();
//! let plan = adjust(&mut tree, &Observation::whole("X1", &[17.0])).unwrap();
//! let t = &plan.transform("theta4").unwrap().transform;
//! assert!((t[(0, 0)] - 0.674).abs() < 5e-4);
//! let e = tree.node("theta4").unwrap().spec().expectation();
//! assert!((e[0] - 17.9).abs() < 0.05);
//! ```

pub mod belief;
pub mod cli;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod kernel;
pub mod model_file;
pub mod models;
pub mod oracle;
pub mod tree;

pub use belief::{BeliefSpec, CrossCov, TransformPair};
pub use diagnostics::{
    diagnose_sequence, flag_size_ratio, open_snapshot, DiagnosticLevel, DiagnosticReport, DiagnosticSnapshot,
    StageDiagnostics,
};
pub use engine::{
    adjust, apply_observation, evidence_region, propagate_transforms, prune, sequential_adjust, strong_root_adjust,
    AdjustmentPlan, Observation, PlanStatus, StrongRootOutcome,
};
pub use error::{Error, Result};
pub use kernel::{Matrix, Tolerances, Vector};
pub use models::{build_dlm, build_nstep_chain, DlmSpec, NStepSpec, NoiseTiming};
pub use oracle::{assemble_joint, global_adjust, JointBelief};
pub use tree::{BeliefTree, Finding, Node, NodeRef, ValidationReport};
