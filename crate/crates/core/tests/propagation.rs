mod common;

use bltree::oracle::{self, max_deviation};
use bltree::{
    adjust, apply_observation, propagate_transforms, prune, sequential_adjust, BeliefSpec, BeliefTree, Error, Matrix,
    NodeRef, Observation, Vector,
};
use common::{min_eigenvalue, random_tree, rng, scale, RandomTree};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn labels_of(tree: &BeliefTree, r: &NodeRef) -> Vec<String> {
    let node = tree.node(&r.name).unwrap();
    tree.resolve(r)
        .unwrap()
        .iter()
        .map(|&i| node.labels()[i].clone())
        .collect()
}

/// Up to `count` observations on distinct nodes, some of them partial.
fn draw_observations(r: &mut rand_chacha::ChaCha8Rng, model: &RandomTree, count: usize) -> Vec<Observation> {
    let sample = model.sample(r);
    let mut order: Vec<usize> = (0..model.names.len()).collect();
    order.shuffle(r);
    order
        .into_iter()
        .take(count)
        .map(|k| {
            let dim = sample[k].len();
            let name = &model.names[k];
            if dim > 1 && r.random_bool(0.3) {
                let i = r.random_range(0..dim);
                let label = model.tree.node(name).unwrap().labels()[i].clone();
                Observation::new(NodeRef::partial(name.clone(), [label]), &[sample[k][i]])
            } else {
                Observation::whole(name, sample[k].as_slice())
            }
        })
        .collect()
}

fn joint_oracle(model: &RandomTree, obs: &[Observation]) -> bltree::JointBelief {
    let joint = oracle::assemble_joint(&model.tree).unwrap();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for o in obs {
        labels.extend(labels_of(&model.tree, &o.node));
        values.extend(o.values.iter().copied());
    }
    oracle::global_adjust(&joint, &labels, &Vector::from_vec(values)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sequential_matches_joint_conditioning(seed in any::<u64>(), nodes in 1usize..9, count in 1usize..4, chain: bool) {
        let mut r = rng(seed);
        let model = random_tree(&mut r, nodes, 1..=4, chain);
        let obs = draw_observations(&mut r, &model, count);
        let want = joint_oracle(&model, &obs);
        let mut tree = model.tree.clone();
        sequential_adjust(&mut tree, &obs, false).unwrap();
        let dev = max_deviation(&tree, &want).unwrap();
        prop_assert!(dev <= 1e-6, "deviation {dev:e}");
    }

    #[test]
    fn adjustment_invariants(seed in any::<u64>(), nodes in 2usize..9) {
        let mut r = rng(seed);
        let model = random_tree(&mut r, nodes, 1..=4, false);
        let obs = draw_observations(&mut r, &model, 1);
        let mut tree = model.tree.clone();
        let plan = adjust(&mut tree, &obs[0]).unwrap();
        for pair in plan.pairs() {
            prop_assert!(pair.spectrum_ok(tree.tolerances()).unwrap(), "spectrum of {}", pair.target);
        }
        for (name, node) in tree.nodes() {
            let prior = model.tree.node(name).unwrap().spec().variance();
            let post = node.spec().variance();
            let s = scale(prior);
            prop_assert!(min_eigenvalue(post) >= -1e-8 * s, "{name} not PSD");
            prop_assert!(post.trace() <= prior.trace() + 1e-8 * s, "{name} trace grew");
        }
        for label in labels_of(&model.tree, &obs[0].node) {
            let node = tree.node(&obs[0].node.name).unwrap();
            prop_assert!(node.observed().contains(&label));
        }
    }

    #[test]
    fn pruning_keeps_the_rest_exact(seed in any::<u64>(), nodes in 2usize..8) {
        let mut r = rng(seed);
        let model = random_tree(&mut r, nodes, 1..=3, false);
        let sample = model.sample(&mut r);
        let k = r.random_range(0..nodes);
        let obs = Observation::whole(&model.names[k], sample[k].as_slice());
        let want = joint_oracle(&model, std::slice::from_ref(&obs));
        let mut tree = model.tree.clone();
        adjust(&mut tree, &obs).unwrap();
        prune(&mut tree, &obs.node).unwrap();
        prop_assert!(!tree.contains(&model.names[k]));
        prop_assert!(max_deviation(&tree, &want).unwrap() <= 1e-6);
    }
}

fn scalar(e: f64, v: f64) -> BeliefSpec {
    BeliefSpec::from_slices(&[e], &[&[v]]).unwrap()
}

fn pair_tree() -> BeliefTree {
    let mut t = BeliefTree::new();
    t.add_node("a", ["a"], scalar(1.0, 2.0)).unwrap();
    t.add_node("b", ["b"], scalar(0.0, 1.0)).unwrap();
    t.connect("a", "b", Matrix::from_element(1, 1, 0.5)).unwrap();
    t
}

#[test]
fn observed_quantities_are_pinned() {
    let mut t = pair_tree();
    adjust(&mut t, &Observation::whole("a", &[3.0])).unwrap();
    let a = t.node("a").unwrap().spec();
    assert_eq!(a.expectation()[0], 3.0);
    assert_eq!(a.variance()[(0, 0)], 0.0);
    let b = t.node("b").unwrap().spec();
    assert!((b.expectation()[0] - 0.5).abs() < 1e-15);
    assert!((b.variance()[(0, 0)] - 0.875).abs() < 1e-15);
    assert_eq!(t.cov("a", "b").unwrap()[(0, 0)], 0.0);
}

#[test]
fn stale_plan_is_refused() {
    let mut t = pair_tree();
    let mut plan = propagate_transforms(&t, &NodeRef::whole("a")).unwrap();
    adjust(&mut t, &Observation::whole("b", &[0.2])).unwrap();
    let err = apply_observation(&mut t, &mut plan, &Observation::whole("a", &[3.0])).unwrap_err();
    assert!(matches!(err, Error::StalePlan { .. }));
}

#[test]
fn plan_applies_once() {
    let mut t = pair_tree();
    let mut plan = propagate_transforms(&t, &NodeRef::whole("a")).unwrap();
    let obs = Observation::whole("a", &[3.0]);
    apply_observation(&mut t, &mut plan, &obs).unwrap();
    assert!(matches!(
        apply_observation(&mut t, &mut plan, &obs),
        Err(Error::PlanAlreadyApplied)
    ));
}

#[test]
fn other_components_are_untouched() {
    let mut t = pair_tree();
    t.add_node("c", ["c"], scalar(5.0, 4.0)).unwrap();
    let before = t.node("c").unwrap().clone();
    let plan = adjust(&mut t, &Observation::whole("a", &[3.0])).unwrap();
    assert!(plan.transform("c").is_none());
    assert_eq!(t.node("c").unwrap().spec(), before.spec());
}

#[test]
fn interior_node_not_fully_observed_cannot_be_pruned() {
    let mut t = pair_tree();
    t.add_node("c", ["c"], scalar(0.0, 1.0)).unwrap();
    t.connect("b", "c", Matrix::from_element(1, 1, 0.3)).unwrap();
    assert!(matches!(
        prune(&mut t, &NodeRef::whole("b")),
        Err(Error::InvalidPrune { .. })
    ));
    adjust(&mut t, &Observation::whole("b", &[1.0])).unwrap();
    prune(&mut t, &NodeRef::whole("b")).unwrap();
    assert_eq!(t.len(), 2);
}

#[test]
fn mismatched_value_count_is_a_shape_error() {
    let mut t = pair_tree();
    assert!(matches!(
        adjust(&mut t, &Observation::whole("a", &[1.0, 2.0])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn unknown_node_is_reported() {
    let mut t = pair_tree();
    assert!(matches!(
        adjust(&mut t, &Observation::whole("z", &[1.0])),
        Err(Error::UnknownNode(_))
    ));
}

#[test]
fn long_chain_matches_oracle() {
    let mut r = rng(7);
    let model = random_tree(&mut r, 40, 2..=3, true);
    let sample = model.sample(&mut r);
    let obs = [
        Observation::whole(&model.names[0], sample[0].as_slice()),
        Observation::whole(&model.names[39], sample[39].as_slice()),
    ];
    let want = joint_oracle(&model, &obs);
    let mut tree = model.tree.clone();
    sequential_adjust(&mut tree, &obs, false).unwrap();
    assert!(max_deviation(&tree, &want).unwrap() <= 1e-6);
}
