mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use aegraph::expansion::{expand, validate_expanded, ExpandedNetDocument, Violation};
use aegraph::graph::{map_to_graph, validate_graph, AssignmentGraph, GraphError, GraphViolation, A_TRANSITION, E_TRANSITION};
use aegraph::net::{AttributeSchema, MarkedAEPN, NetSpec, PlaceSpec, Tag, TransitionSpec};
use aegraph::problems::example_net;
use proptest::prelude::*;

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

fn example_graph() -> AssignmentGraph {
    let src = MarkedAEPN::build(&example_net()).unwrap();
    let (x, emap) = expand(&src);
    map_to_graph(&x, Some(&emap)).unwrap().0
}

#[test]
fn example_net_maps_to_two_action_nodes() {
    let src = MarkedAEPN::build(&example_net()).unwrap();
    let (x, emap) = expand(&src);
    assert!(validate_expanded(&src, &x, &emap).is_empty());
    let (g, prov) = map_to_graph(&x, Some(&emap)).unwrap();
    let count = |ty: &str| g.nodes.iter().filter(|n| n.ty == ty).count();
    assert_eq!(count(A_TRANSITION), 2);
    assert_eq!(count(E_TRANSITION), 1);
    assert!(validate_graph(&g).is_empty());

    let budgets: Vec<f64> = g
        .action_nodes()
        .into_iter()
        .map(|a| {
            let origin = prov.action(a).unwrap();
            assert_eq!(origin.source_transition, "Start");
            g.predecessors(a).filter_map(|p| g.attr(p, "budget")).next().unwrap()
        })
        .collect();
    let mut sorted = budgets.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(sorted, vec![100.0, 200.0]);

    let dot = g.to_dot();
    assert_eq!(dot.matches("shape=box, style=filled, fillcolor=lightblue").count(), 2);
}

#[test]
fn all_empty_net_yields_one_transition_node() {
    let spec = NetSpec {
        places: vec![PlaceSpec {
            id: "P".into(),
            attrs: AttributeSchema::new(["a"]).unwrap(),
            colors: None,
        }],
        transitions: vec![TransitionSpec {
            id: "E".into(),
            tag: Tag::Evolution,
            guard: vec![],
            reward: None,
        }],
        arcs: vec![aegraph::net::ArcSpec {
            source: "P".into(),
            target: "E".into(),
            expr: None,
        }],
        initial_marking: BTreeMap::new(),
        tag: Tag::Evolution,
        horizon: 1.0,
        initial_reward: 0.0,
        seed: 0,
        clock: None,
        cum_reward: None,
    };
    let src = MarkedAEPN::build(&spec).unwrap();
    let (x, emap) = expand(&src);
    let (g, _) = map_to_graph(&x, Some(&emap)).unwrap();
    assert_eq!(g.nodes.len(), 1);
    assert_eq!(g.nodes[0].ty, E_TRANSITION);
    assert!(g.edges.is_empty());
}

#[test]
fn golden_example_graph() {
    let g = example_graph();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden("")).unwrap();
        std::fs::write(golden("example_graph.json"), g.to_json()).unwrap();
        std::fs::write(golden("example_graph.dot"), g.to_dot()).unwrap();
    }
    let json = std::fs::read_to_string(golden("example_graph.json")).unwrap();
    assert_eq!(AssignmentGraph::from_json(&json).unwrap(), g);
    let dot = std::fs::read_to_string(golden("example_graph.dot")).unwrap();
    assert_eq!(dot, g.to_dot());
}

#[test]
fn unexpanded_nets_are_rejected_by_the_mapper() {
    let src = MarkedAEPN::build(&example_net()).unwrap();
    assert!(matches!(map_to_graph(&src, None), Err(GraphError::NotExpanded { .. })));
}

#[test]
fn seeded_expansion_defects_are_caught() {
    let src = MarkedAEPN::build(&example_net()).unwrap();
    let (x, emap) = expand(&src);

    // A duplicated token in an image place.
    let mut spec = x.to_spec();
    let (pid, toks) = spec.initial_marking.iter_mut().next().unwrap();
    let pid = pid.clone();
    toks.push(toks[0].clone());
    let broken = MarkedAEPN::build(&spec).unwrap();
    let v = validate_expanded(&src, &broken, &emap);
    assert!(v.iter().any(|v| matches!(v, Violation::MultiToken { place, .. } if *place == pid)), "{v:?}");

    // An action copy removed.
    let mut spec = x.to_spec();
    let drop = spec.transitions.iter().position(|t| t.tag == Tag::Action).unwrap();
    let gone = spec.transitions.remove(drop).id;
    spec.arcs.retain(|a| a.source != gone && a.target != gone);
    let mut emap2 = emap.clone();
    emap2.transition_map.retain(|o| o.target != gone);
    let broken = MarkedAEPN::build(&spec).unwrap();
    assert!(validate_expanded(&src, &broken, &emap2).iter().any(|v| matches!(v, Violation::MissingCopy { .. })));

    // A copy whose reward changed.
    let mut spec = x.to_spec();
    let t = spec.transitions.iter_mut().find(|t| t.tag == Tag::Action).unwrap();
    t.reward = Some(aegraph::net::ValueExpr::Const(1.0));
    let broken = MarkedAEPN::build(&spec).unwrap();
    assert!(validate_expanded(&src, &broken, &emap).iter().any(|v| matches!(v, Violation::RewardMismatch { .. })));

    // A copy whose output goes elsewhere.
    let mut spec = x.to_spec();
    let t = spec.transitions.iter().find(|t| t.tag == Tag::Action).unwrap().id.clone();
    let out = spec.arcs.iter_mut().find(|a| a.source == t && a.target.starts_with("Busy")).unwrap();
    out.target = "Resources#0".into();
    out.expr = None;
    let broken = MarkedAEPN::build(&spec);
    if let Ok(broken) = broken {
        assert!(!validate_expanded(&src, &broken, &emap).is_empty());
    }
}

#[test]
fn seeded_graph_defects_are_caught() {
    let g = example_graph();
    let a = g.action_nodes()[0];
    let e = g.nodes.iter().position(|n| n.ty == E_TRANSITION).unwrap();

    let mut bad = g.clone();
    bad.edges.push((a, e));
    assert!(validate_graph(&bad).contains(&GraphViolation::TransitionEdge { from: a, to: e }));

    let mut bad = g.clone();
    bad.nodes[a].attrs.push(1.0);
    assert!(validate_graph(&bad).contains(&GraphViolation::TransitionAttrs { node: a }));

    let mut bad = g.clone();
    bad.nodes[0].attrs.pop();
    assert!(matches!(validate_graph(&bad)[..], [GraphViolation::AttrLength { node: 0, .. }]));

    let mut bad = g.clone();
    bad.nodes[0].ty = "P{nope}".into();
    assert!(matches!(validate_graph(&bad)[..], [GraphViolation::UnknownType { node: 0, .. }]));

    let mut bad = g.clone();
    bad.edges.push((0, 99));
    assert!(validate_graph(&bad).contains(&GraphViolation::DanglingEdge { from: 0, to: 99 }));

    let mut bad = g;
    bad.nodes[1].id = 7;
    assert!(validate_graph(&bad).contains(&GraphViolation::NodeId { position: 1, id: 7 }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn expansion_preserves_behavior(seed in any::<u64>()) {
        let src = MarkedAEPN::build(&common::random_net(seed)).unwrap();
        let (x, emap) = expand(&src);
        let v = validate_expanded(&src, &x, &emap);
        prop_assert!(v.is_empty(), "{}", v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "));
        prop_assert!(x.places().iter().all(|p| p.marking.len() <= 1));
        prop_assert_eq!(x.clock(), src.clock());
        prop_assert_eq!(x.tag(), src.tag());
        prop_assert_eq!(x.cum_reward(), src.cum_reward());
    }

    #[test]
    fn graph_counts_match_oracle(seed in any::<u64>()) {
        let src = MarkedAEPN::build(&common::random_net(seed)).unwrap();
        let (x, emap) = expand(&src);
        let (g, prov) = map_to_graph(&x, Some(&emap)).unwrap();

        let occupied = |id: &str| x.place_index(id).map(|p| !x.place(p).marking.is_empty());
        let place_nodes = x.places().iter().filter(|p| !p.marking.is_empty()).count();
        prop_assert_eq!(place_nodes, src.token_count());
        prop_assert_eq!(g.len(), place_nodes + x.transitions().len());
        let live_arcs = x.structure().arcs.iter()
            .filter(|a| occupied(&a.source).unwrap_or(true) && occupied(&a.target).unwrap_or(true))
            .count();
        prop_assert_eq!(g.edges.len(), live_arcs);

        let actions: usize = src.action_transitions().map(|t| src.enabled_bindings(t).len()).sum();
        prop_assert_eq!(g.action_nodes().len(), actions);
        prop_assert_eq!(
            g.nodes.iter().filter(|n| n.ty == E_TRANSITION).count(),
            src.evolution_transitions().count()
        );
        prop_assert!(validate_graph(&g).is_empty());

        // Provenance is complete: every node names an element; every action
        // node carries the source binding it stands for.
        prop_assert_eq!(prov.elements.len(), g.len());
        for a in g.action_nodes() {
            let origin = prov.action(a).unwrap();
            let b = origin.binding.as_ref().unwrap();
            let t = src.transition_index(&origin.source_transition).unwrap();
            prop_assert!(src.enabled_bindings(t).contains(b));
        }
        for n in &g.nodes {
            prop_assert_eq!(n.attrs.len(), g.type_registry.get(&n.ty).map_or(0, |a| a.len()));
        }
    }

    #[test]
    fn serialized_forms_round_trip(seed in any::<u64>()) {
        let src = MarkedAEPN::build(&common::random_net(seed)).unwrap();
        let (x, emap) = expand(&src);
        let doc = ExpandedNetDocument::new(&x, &emap);
        let back = ExpandedNetDocument::from_json(&doc.to_json()).unwrap();
        prop_assert_eq!(&back, &doc);
        let rebuilt = MarkedAEPN::build(&back.net).unwrap();
        prop_assert!(validate_expanded(&src, &rebuilt, &back.expansion_map).is_empty());

        let (g, _) = map_to_graph(&x, Some(&emap)).unwrap();
        prop_assert_eq!(AssignmentGraph::from_json(&g.to_json()).unwrap(), g);
    }

    #[test]
    fn expansion_is_idempotent_on_graphs(seed in any::<u64>()) {
        let src = MarkedAEPN::build(&common::random_net(seed)).unwrap();
        let (x, _) = expand(&src);
        let (xx, _) = expand(&x);
        let (g1, _) = map_to_graph(&x, None).unwrap();
        let (g2, _) = map_to_graph(&xx, None).unwrap();
        prop_assert_eq!(g1.len(), g2.len());
        prop_assert_eq!(g1.edges.len(), g2.edges.len());
    }
}
