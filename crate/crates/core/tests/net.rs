mod common;

use std::collections::BTreeMap;

use aegraph::net::{
    ArcExpr, ArcSpec, AttributeSchema, CmpOp, GuardAtom, MarkedAEPN, NetError, NetSpec, Phase, PlaceSpec, Tag,
    TokenSpec, TransitionSpec, ValueExpr,
};
use aegraph::problems::{build_problem1, build_problem3, example_net};

use proptest::prelude::*;

fn place(id: &str, attrs: &[&str]) -> PlaceSpec {
    PlaceSpec {
        id: id.into(),
        attrs: AttributeSchema::new(attrs.iter().copied()).unwrap(),
        colors: None,
    }
}

fn transition(id: &str, tag: Tag) -> TransitionSpec {
    TransitionSpec {
        id: id.into(),
        tag,
        guard: vec![],
        reward: None,
    }
}

fn arc(s: &str, t: &str, expr: Option<ArcExpr>) -> ArcSpec {
    ArcSpec {
        source: s.into(),
        target: t.into(),
        expr,
    }
}

fn tok(time: f64, attrs: &[(&str, f64)]) -> TokenSpec {
    TokenSpec {
        time,
        attrs: attrs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    }
}

fn net(places: Vec<PlaceSpec>, transitions: Vec<TransitionSpec>, arcs: Vec<ArcSpec>) -> NetSpec {
    NetSpec {
        places,
        transitions,
        arcs,
        initial_marking: BTreeMap::new(),
        tag: Tag::Evolution,
        horizon: 10.0,
        initial_reward: 0.0,
        seed: 0,
        clock: None,
        cum_reward: None,
    }
}

#[test]
fn build_rejects_structural_errors() {
    let dup = net(vec![place("P", &[]), place("P", &[])], vec![], vec![]);
    assert!(matches!(MarkedAEPN::build(&dup), Err(NetError::DuplicateId(_))));

    let dangling = net(vec![place("P", &[])], vec![transition("T", Tag::Action)], vec![arc("Q", "T", None)]);
    assert!(matches!(MarkedAEPN::build(&dangling), Err(NetError::DanglingArc { .. })));

    let dotted = net(vec![place("P.x", &[])], vec![], vec![]);
    assert!(matches!(MarkedAEPN::build(&dotted), Err(NetError::InvalidId(_))));

    let mut bad_token = net(vec![place("P", &["a"])], vec![], vec![]);
    bad_token.initial_marking.insert("P".into(), vec![tok(0.0, &[("b", 1.0)])]);
    assert!(matches!(MarkedAEPN::build(&bad_token), Err(NetError::Schema { .. })));

    let mut bad_ref = net(
        vec![place("P", &["a"])],
        vec![transition("T", Tag::Action)],
        vec![arc("P", "T", None)],
    );
    bad_ref.transitions[0].reward = Some(ValueExpr::attr("P.zzz"));
    assert!(matches!(MarkedAEPN::build(&bad_ref), Err(NetError::Expression { .. })));

    let mut ambiguous = net(
        vec![place("P", &["a"]), place("Q", &["a"])],
        vec![transition("T", Tag::Action)],
        vec![arc("P", "T", None), arc("Q", "T", None)],
    );
    ambiguous.transitions[0].reward = Some(ValueExpr::attr("a"));
    assert!(matches!(MarkedAEPN::build(&ambiguous), Err(NetError::Expression { .. })));

    let mut random_guard = net(
        vec![place("P", &["a"])],
        vec![transition("T", Tag::Action)],
        vec![arc("P", "T", None)],
    );
    random_guard.transitions[0].guard = vec![GuardAtom::new(ValueExpr::attr("a"), CmpOp::Lt, ValueExpr::Uniform([0.0, 1.0]))];
    assert!(MarkedAEPN::build(&random_guard).is_err());
}

#[test]
fn example_net_is_at_a_decision() {
    let mut n = MarkedAEPN::build(&example_net()).unwrap();
    assert_eq!(n.tag(), Tag::Action);
    assert_eq!(n.run_until_decision().unwrap(), Phase::Decision);
    let start = n.transition_index("Start").unwrap();
    assert_eq!(n.enabled_bindings(start).len(), 2);
}

#[test]
fn firing_assigns_a_project_and_earns_its_budget() {
    let mut n = MarkedAEPN::build(&example_net()).unwrap();
    let start = n.transition_index("Start").unwrap();
    let waiting = n.place_index("Waiting").unwrap();
    let b = n
        .enabled_bindings(start)
        .into_iter()
        .find(|b| n.place(waiting).attr(b.token(waiting).unwrap(), "budget") == Some(200.0))
        .unwrap();
    assert_eq!(n.fire(start, &b).unwrap(), 200.0);
    assert_eq!(n.cum_reward(), 200.0);
    let busy = n.place(n.place_index("Busy").unwrap());
    assert_eq!(busy.marking.len(), 1);
    assert_eq!(busy.attr(&busy.marking[0], "budget"), Some(200.0));
    let res = n.place(n.place_index("Resources").unwrap());
    assert_eq!(res.marking[0].time, 1.0);
    // The consumed token is gone: the same binding is stale now.
    assert_eq!(n.fire(start, &b), Err(NetError::StaleBinding("Start".into())));
}

#[test]
fn firing_checks_the_network_tag() {
    let mut spec = example_net();
    let n = MarkedAEPN::build(&spec).unwrap();
    let start = n.transition_index("Start").unwrap();
    let b = n.enabled_bindings(start).remove(0);
    spec.tag = Tag::Evolution;
    let mut e = MarkedAEPN::build(&spec).unwrap();
    assert!(matches!(e.fire(start, &b), Err(NetError::TagMismatch { .. })));
}

#[test]
fn sink_transitions_consume_without_producing() {
    let mut spec = net(vec![place("P", &["a"])], vec![transition("Drop", Tag::Action)], vec![arc("P", "Drop", None)]);
    spec.initial_marking.insert("P".into(), vec![tok(0.0, &[("a", 1.0)])]);
    spec.tag = Tag::Action;
    let mut n = MarkedAEPN::build(&spec).unwrap();
    let b = n.enabled_bindings(0).remove(0);
    n.fire(0, &b).unwrap();
    assert_eq!(n.token_count(), 0);
}

#[test]
fn run_until_decision_walks_through_problem1() {
    let mut n = build_problem1();
    assert_eq!(n.run_until_decision().unwrap(), Phase::Decision);
    assert_eq!(n.clock(), 0.0);
    let start = n.transition_index("Start").unwrap();
    for expected_clock in 1..10 {
        let b = n.enabled_bindings(start).remove(0);
        n.fire(start, &b).unwrap();
        assert_eq!(n.run_until_decision().unwrap(), Phase::Decision);
        assert_eq!(n.clock(), expected_clock as f64);
    }
    let b = n.enabled_bindings(start).remove(0);
    n.fire(start, &b).unwrap();
    assert_eq!(n.run_until_decision().unwrap(), Phase::Done);
    assert_eq!(n.clock(), 10.0);
}

#[test]
fn livelock_is_reported() {
    let mut spec = net(vec![place("P", &[])], vec![transition("Spin", Tag::Evolution)], vec![arc("P", "Spin", None), arc("Spin", "P", None)]);
    spec.initial_marking.insert("P".into(), vec![tok(0.0, &[])]);
    let mut n = MarkedAEPN::build(&spec).unwrap();
    assert!(matches!(n.run_until_decision(), Err(NetError::Livelock(_))));
}

#[test]
fn clock_advance_target_examples() {
    let mut spec = net(vec![place("P", &["a"])], vec![transition("T", Tag::Action)], vec![arc("P", "T", None)]);
    assert_eq!(MarkedAEPN::build(&spec).unwrap().clock_advance_target(), f64::INFINITY);

    spec.initial_marking.insert("P".into(), vec![tok(3.0, &[("a", 0.0)]), tok(2.5, &[("a", 0.0)])]);
    assert_eq!(MarkedAEPN::build(&spec).unwrap().clock_advance_target(), 2.5);

    spec.transitions[0].guard = vec![GuardAtom::new(ValueExpr::Clock, CmpOp::Ge, ValueExpr::attr("P.a"))];
    spec.initial_marking.insert("P".into(), vec![tok(0.0, &[("a", 4.0)])]);
    assert_eq!(MarkedAEPN::build(&spec).unwrap().clock_advance_target(), 4.0);

    // A guard that can never hold yields no target.
    spec.transitions[0].guard = vec![GuardAtom::new(ValueExpr::attr("P.a"), CmpOp::Gt, ValueExpr::Const(10.0))];
    assert_eq!(MarkedAEPN::build(&spec).unwrap().clock_advance_target(), f64::INFINITY);
}

#[test]
fn same_seed_same_trajectory() {
    let run = |seed: u64| {
        let mut n = build_problem3();
        n.reseed(seed);
        let start = n.transition_index("Start").unwrap();
        let mut log = Vec::new();
        while n.run_until_decision().unwrap() == Phase::Decision {
            let b = n.enabled_bindings(start).remove(0);
            log.push((n.clock(), n.fire(start, &b).unwrap()));
        }
        log
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

#[test]
fn json_round_trip_preserves_the_net() {
    let n = MarkedAEPN::build(&example_net()).unwrap();
    let back = MarkedAEPN::from_json(&n.to_json()).unwrap();
    assert_eq!(n.to_spec(), back.to_spec());
    assert!(matches!(MarkedAEPN::from_json("{"), Err(NetError::Malformed(_))));
}

/// Guard evaluation for the atom shapes the random generator emits.
fn guard_oracle(atoms: &[GuardAtom], spec: &NetSpec, bound: &[(String, &TokenSpec)], clock: f64) -> bool {
    let eval = |e: &ValueExpr| match e {
        ValueExpr::Const(c) => *c,
        ValueExpr::Clock => clock,
        ValueExpr::Attr(path) => {
            let (p, a) = path.split_once('.').unwrap();
            let _ = spec;
            bound.iter().find(|(id, _)| id == p).unwrap().1.attrs[a]
        }
        other => panic!("unexpected guard operand {other:?}"),
    };
    atoms.iter().all(|g| {
        let (l, r) = (eval(&g.lhs), eval(&g.rhs));
        match g.op {
            CmpOp::Le => l <= r,
            CmpOp::Ge => l >= r,
            CmpOp::Lt => l < r,
            CmpOp::Gt => l > r,
            CmpOp::Eq => l == r,
            CmpOp::Ne => l != r,
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn enabled_bindings_match_brute_force(seed in any::<u64>()) {
        let spec = common::random_net(seed);
        let n = MarkedAEPN::build(&spec).unwrap();
        let clock = n.clock();
        for (ti, ts) in spec.transitions.iter().enumerate() {
            let mut inputs: Vec<String> = spec.arcs.iter().filter(|a| a.target == ts.id).map(|a| a.source.clone()).collect();
            inputs.sort();
            let empty = Vec::new();
            let markings: Vec<&Vec<TokenSpec>> = inputs.iter().map(|p| spec.initial_marking.get(p).unwrap_or(&empty)).collect();
            let mut expected = Vec::new();
            let total: usize = markings.iter().map(|m| m.len()).product();
            for mut k in 0..total {
                let mut pick = vec![0; inputs.len()];
                for s in (0..inputs.len()).rev() {
                    pick[s] = k % markings[s].len();
                    k /= markings[s].len();
                }
                let bound: Vec<(String, &TokenSpec)> = inputs.iter().cloned().zip(pick.iter().enumerate().map(|(s, &i)| &markings[s][i])).collect();
                let ready = bound.iter().all(|(_, t)| t.time <= clock);
                if ready && guard_oracle(&ts.guard, &spec, &bound, clock) {
                    expected.push(pick);
                }
            }
            let got: Vec<Vec<usize>> = n.enabled_bindings(ti).iter().map(|b| {
                b.assignments.iter().map(|(p, t)| n.place(*p).marking.iter().position(|m| m.id == t.id).unwrap()).collect()
            }).collect();
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn rewards_accumulate(seed in any::<u64>()) {
        let spec = common::random_net(seed);
        let mut n = MarkedAEPN::build(&spec).unwrap();
        let mut total = 0.0;
        for _ in 0..5 {
            let Some((t, b)) = n.action_transitions().collect::<Vec<_>>().into_iter()
                .find_map(|t| n.enabled_bindings(t).into_iter().next().map(|b| (t, b))) else { break };
            total += n.fire(t, &b).unwrap();
        }
        prop_assert!((n.cum_reward() - n.initial_reward() - total).abs() < 1e-9);
    }
}
