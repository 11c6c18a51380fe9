//! Structural invariants of spaces: flatten/unflatten and fold/unfold are
//! inverse on random nested spaces, samples satisfy containment, and flat
//! ordering is a pure function of structure.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rlstage_core::space::{fold_time_into_batch, unfold_time_from_batch};
use rlstage_core::{Space, Value};

fn arb_box() -> impl Strategy<Value = Space> {
    prop_oneof![
        proptest::collection::vec(0usize..4, 0..3).prop_map(|s| Space::float_box(&s)),
        (1usize..6).prop_map(Space::int_box),
        proptest::collection::vec(1usize..3, 0..2).prop_map(|s| Space::bool_box(&s)),
        proptest::collection::vec(1usize..4, 1..3)
            .prop_map(|s| Space::float_box_bounded(&s, -2.0, 2.0)),
    ]
}

/// Random spaces with nesting depth at most 3.
fn arb_space() -> impl Strategy<Value = Space> {
    arb_box().prop_recursive(3, 12, 4, |inner| {
        prop_oneof![
            proptest::collection::vec(inner.clone(), 1..4)
                .prop_map(|items| Space::tuple(items).unwrap()),
            proptest::collection::btree_map("[a-d][a-z]{0,3}", inner, 1..4).prop_map(|m| {
                let pairs: Vec<(&str, Space)> =
                    m.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
                Space::dict(pairs).unwrap()
            }),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn unflatten_inverts_flatten_and_samples_contained(space in arb_space(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = space.sample(&mut rng, None, None).unwrap();
        prop_assert!(space.contains(&v));

        let pairs: Vec<(String, rlstage_core::Tensor)> =
            v.flatten().into_iter().map(|(k, t)| (k, t.clone())).collect();
        let rebuilt = Value::unflatten(pairs).unwrap();
        prop_assert_eq!(rebuilt, v);
    }

    #[test]
    fn flat_keys_are_unique_and_sorted(space in arb_space()) {
        let keys: Vec<String> = space.flatten().into_iter().map(|(k, _)| k).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        sorted.dedup();
        prop_assert_eq!(&keys, &sorted);
    }

    #[test]
    fn fold_unfold_roundtrip(space in arb_space(), seed in any::<u64>(), b in 1usize..4, t in 1usize..4) {
        let space = space.with_batch_rank(true).with_time_rank(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = space.sample(&mut rng, Some(b), Some(t)).unwrap();
        let folded = fold_time_into_batch(&v, &space).unwrap();
        let back = unfold_time_from_batch(&folded, &space, b, t).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn batched_samples_contained(space in arb_space(), seed in any::<u64>(), b in 1usize..5) {
        let space = space.with_batch_rank(true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = space.sample(&mut rng, Some(b), None).unwrap();
        prop_assert!(space.contains(&v));
    }
}

#[test]
fn flatten_is_stable_across_constructions() {
    let build = || {
        Space::dict(vec![
            ("zeta", Space::float_box(&[2])),
            ("alpha", Space::tuple(vec![Space::int_box(3), Space::bool_box(&[])]).unwrap()),
        ])
        .unwrap()
    };
    let a: Vec<String> = build().flatten().into_iter().map(|(k, _)| k).collect();
    let b: Vec<String> = build().flatten().into_iter().map(|(k, _)| k).collect();
    assert_eq!(a, b);
    assert_eq!(a, vec!["/alpha/0", "/alpha/1", "/zeta"]);
}
