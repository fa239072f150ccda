mod common;

use common::*;
use mfnewton::dag::{jacobian_by_paths, layer_report, path_count, validate, Dag};
use mfnewton::format::{parse_dag, write_dag};
use mfnewton::problems::{random_dag, RandomDagSpec};
use mfnewton::transform::{
    connected_components, make_layered, make_uniform, preaccumulate, preaccumulate_greedy, split_edge, SplitPolicy,
};
use proptest::prelude::*;

fn dag_spec(square: bool) -> impl Strategy<Value = RandomDagSpec> {
    (1usize..=4, 1usize..=4, 0usize..=10, 0.05f64..0.6, any::<u64>()).prop_map(move |(n, m, p, density, seed)| {
        RandomDagSpec {
            inputs: n,
            intermediates: p,
            outputs: if square { n } else { m },
            density,
            seed,
        }
    })
}

fn policy() -> impl Strategy<Value = SplitPolicy> {
    prop_oneof![Just(SplitPolicy::LabelOnLowerEdge), Just(SplitPolicy::LabelOnUpperEdge)]
}

fn jac(d: &Dag) -> Mat {
    to_mat(&jacobian_by_paths(d).unwrap())
}

fn all_outputs_reached(d: &Dag) -> bool {
    d.outputs().all(|v| d.edges().iter().any(|e| e.dst == v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn paths_match_enumeration(spec in dag_spec(false)) {
        let d = random_dag(&spec);
        prop_assert!(validate(&d).is_empty());
        prop_assert_eq!(path_count(&d).unwrap(), paths_by_enumeration(&d));
        prop_assert!(jac_rel_close(&jac(&d), &jacobian_by_enumeration(&d), 1e-14));
    }

    #[test]
    fn split_edge_keeps_paths(spec in dag_spec(false), pick in any::<prop::sample::Index>(), pol in policy()) {
        let d = random_dag(&spec);
        let e = *pick.get(d.edges());
        let s = split_edge(&d, e.src, e.dst, pol).unwrap();
        prop_assert_eq!(s.num_intermediates(), d.num_intermediates() + 1);
        prop_assert_eq!(path_count(&s).unwrap(), path_count(&d).unwrap());
        prop_assert!(jac_rel_close(&jac(&s), &jac(&d), 1e-14));
    }

    #[test]
    fn make_layered_is_idempotent(spec in dag_spec(false), pol in policy()) {
        let d = random_dag(&spec);
        prop_assume!(all_outputs_reached(&d));
        let once = make_layered(&d, pol).unwrap();
        prop_assert!(layer_report(&once).unwrap().is_layered);
        prop_assert_eq!(make_layered(&once, pol).unwrap(), once);
    }

    #[test]
    fn preaccumulation_never_adds_paths(spec in dag_spec(false)) {
        let d = random_dag(&spec);
        prop_assume!(all_outputs_reached(&d));
        let layered = make_layered(&d, SplitPolicy::default()).unwrap();
        let before = path_count(&layered).unwrap();
        let depth = layer_report(&layered).unwrap().depth();
        for t in 2..=depth {
            for c in connected_components(&layered, t).unwrap() {
                let out = preaccumulate(&layered, &c).unwrap();
                prop_assert!(path_count(&out).unwrap() <= before);
                prop_assert!(jac_rel_close(&jac(&out), &jac(&layered), 1e-13));
            }
        }
        let greedy = preaccumulate_greedy(&layered).unwrap();
        prop_assert!(path_count(&greedy).unwrap() <= before);
        prop_assert!(jac_rel_close(&jac(&greedy), &jac(&layered), 1e-13));
    }

    #[test]
    fn make_uniform_keeps_invertibility(spec in dag_spec(true), pol in policy()) {
        let d = random_dag(&spec);
        let j = jac(&d);
        prop_assume!(sigma_min_lower_bound(&j) > 1e-6);
        let u = make_uniform(&d, pol).unwrap();
        let r = layer_report(&u).unwrap();
        prop_assert!(r.is_uniform);
        prop_assert!(r.layer_sizes.iter().all(|&s| s == spec.inputs));
        prop_assert!(sigma_min_lower_bound(&jac(&u)) > 1e-10);
        prop_assert!(jac_rel_close(&jac(&u), &j, 1e-13));
    }

    #[test]
    fn text_format_round_trips(spec in dag_spec(false)) {
        let d = random_dag(&spec);
        prop_assert_eq!(parse_dag(&write_dag(&d)).unwrap(), d);
    }
}
