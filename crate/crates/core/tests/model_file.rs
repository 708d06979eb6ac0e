mod common;

use bltree::model_file::{parse_model, read_model, serialize_tree, write_model};
use bltree::{adjust, build_dlm, DlmSpec, Error, Observation};
use common::{random_tree, rng};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn serialized_trees_read_back(seed in any::<u64>(), nodes in 1usize..7) {
        let mut r = rng(seed);
        let model = random_tree(&mut r, nodes, 1..=3, false);
        let text = serialize_tree(&model.tree).unwrap();
        let back = parse_model(&text).unwrap();
        prop_assert_eq!(back.len(), model.tree.len());
        prop_assert_eq!(back.arc_count(), model.tree.arc_count());
        for (name, node) in model.tree.nodes() {
            let other = back.node(name).unwrap();
            prop_assert_eq!(other.labels(), node.labels());
            let s = node.spec().variance().amax().max(1.0);
            prop_assert!((other.spec().variance() - node.spec().variance()).amax() <= 1e-10 * s);
            prop_assert!((other.spec().expectation() - node.spec().expectation()).amax() <= 1e-10 * s);
        }
        prop_assert_eq!(serialize_tree(&back).unwrap(), text);
    }
}

#[test]
fn adjusted_tree_round_trips_with_observations_and_scale() {
    let mut tree = build_dlm(&DlmSpec::linear_growth_example(3)).unwrap();
    adjust(&mut tree, &Observation::whole("X1", &[17.0])).unwrap();
    let text = serialize_tree(&tree).unwrap();
    assert!(text.contains("observed = [\"X1\"]"));
    assert!(text.contains("reference_scale"));
    let back = parse_model(&text).unwrap();
    assert!(back.node("X1").unwrap().is_fully_observed());
    assert_eq!(back.node("X1").unwrap().reference_scale(), 571.0);
    assert_eq!(serialize_tree(&back).unwrap(), text);
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dlm.toml");
    let tree = build_dlm(&DlmSpec::linear_growth_example(4)).unwrap();
    write_model(&tree, &path).unwrap();
    let back = read_model(&path).unwrap();
    assert_eq!(back.len(), 8);
    assert_eq!(back.arc_count(), 7);
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(
        read_model(std::path::Path::new("/no/such/model.toml")),
        Err(Error::Io(_))
    ));
}

#[test]
fn builder_and_explicit_nodes_combine() {
    let text = r#"
[builders.dlm]
horizon = 2

[[nodes]]
name = "extra"
labels = ["e"]
expectation = [1.0]
variance = [[2.0]]

[[arcs]]
from = "X2"
to = "extra"
covariance = [[0.5]]
"#;
    let tree = parse_model(text).unwrap();
    assert_eq!(tree.len(), 5);
    assert_eq!(tree.arc_count(), 4);
}

#[test]
fn settings_are_applied_and_written() {
    let text = r#"
[settings]
pinv_rel_tol = 1e-9
noise_tol = 1e-8

[[nodes]]
name = "a"
labels = ["a"]
expectation = [0.0]
variance = [[1.0]]
"#;
    let tree = parse_model(text).unwrap();
    assert_eq!(tree.tolerances().pinv_rel, Some(1e-9));
    assert_eq!(tree.tolerances().noise, 1e-8);
    let out = serialize_tree(&tree).unwrap();
    assert!(out.contains("pinv_rel_tol") && out.contains("noise_tol"));
}

#[test]
fn unknown_fields_are_rejected() {
    let text = "[[nodes]]\nname = \"a\"\nlabels = [\"a\"]\nexpectation = [0.0]\nvariance = [[1.0]]\ncolour = 3\n";
    let err = parse_model(text).unwrap_err();
    assert!(err.to_string().contains("line"), "{err}");
}

#[test]
fn indefinite_variance_is_reported() {
    let text = "[[nodes]]\nname = \"a\"\nlabels = [\"a\", \"b\"]\nexpectation = [0.0, 0.0]\nvariance = [[1.0, 2.0], [2.0, 1.0]]\n";
    let tree = parse_model(text).unwrap();
    assert!(!tree.validate().is_valid());
}
