//! Random small nets for property tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use aegraph::net::{
    ArcExpr, ArcSpec, AttributeSchema, CmpOp, GuardAtom, NetSpec, PlaceSpec, Tag, TokenSpec, TransitionSpec,
    ValueExpr,
};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ATTRS: [&str; 3] = ["a", "b", "c"];

fn value_for(rng: &mut ChaCha8Rng, inputs: &[(String, Vec<String>)]) -> ValueExpr {
    match rng.random_range(0..4) {
        0 => ValueExpr::Const((rng.random_range(0.0..10.0f64) * 10.0).round() / 10.0),
        1 => ValueExpr::Uniform([0.0, 5.0]),
        _ => {
            let with_attrs: Vec<_> = inputs.iter().filter(|(_, a)| !a.is_empty()).collect();
            match with_attrs.choose(rng) {
                Some((p, attrs)) => {
                    let a = attrs.choose(rng).unwrap();
                    let unique = inputs.iter().filter(|(_, xs)| xs.contains(a)).count() == 1;
                    if unique && rng.random_bool(0.5) {
                        ValueExpr::attr(a.clone())
                    } else {
                        ValueExpr::attr(format!("{p}.{a}"))
                    }
                }
                None => ValueExpr::Normal([1.0, 0.5]),
            }
        }
    }
}

/// A net with at most 5 places, 4 tokens per place and 3 transitions, at
/// clock 1 with tag `A`.
pub fn random_net(seed: u64) -> NetSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_places = rng.random_range(1..=5);
    let mut places = Vec::new();
    let mut marking = BTreeMap::new();
    for i in 0..n_places {
        let k = rng.random_range(0..=2);
        let mut chosen: Vec<String> = ATTRS.choose_multiple(&mut rng, k).map(|s| s.to_string()).collect();
        chosen.sort();
        let id = format!("P{i}");
        let tokens: Vec<TokenSpec> = (0..rng.random_range(0..=4))
            .map(|_| TokenSpec {
                time: *[0.0, 0.5, 1.0, 2.0].choose(&mut rng).unwrap(),
                attrs: chosen
                    .iter()
                    .map(|a| (a.clone(), (rng.random_range(0.0..10.0f64) * 10.0).round() / 10.0))
                    .collect(),
            })
            .collect();
        if !tokens.is_empty() {
            marking.insert(id.clone(), tokens);
        }
        places.push(PlaceSpec {
            id,
            attrs: AttributeSchema::new(chosen).unwrap(),
            colors: None,
        });
    }

    let mut transitions = Vec::new();
    let mut arcs = Vec::new();
    for t in 0..rng.random_range(1..=3) {
        let id = format!("T{t}");
        let tag = if rng.random_bool(0.6) { Tag::Action } else { Tag::Evolution };
        let n_in = rng.random_range(1..=2.min(n_places));
        let mut idx: Vec<usize> = (0..n_places).collect();
        idx.shuffle(&mut rng);
        let inputs: Vec<(String, Vec<String>)> = idx[..n_in]
            .iter()
            .map(|&i| (places[i].id.clone(), places[i].attrs.names().to_vec()))
            .collect();
        for (p, _) in &inputs {
            arcs.push(ArcSpec {
                source: p.clone(),
                target: id.clone(),
                expr: None,
            });
        }
        let mut guard = Vec::new();
        if rng.random_bool(0.4) {
            if let Some((p, attrs)) = inputs.iter().find(|(_, a)| !a.is_empty()) {
                let a = attrs.choose(&mut rng).unwrap();
                guard.push(if rng.random_bool(0.5) {
                    GuardAtom::new(ValueExpr::attr(format!("{p}.{a}")), CmpOp::Le, ValueExpr::Const(6.0))
                } else {
                    GuardAtom::new(ValueExpr::Clock, CmpOp::Ge, ValueExpr::attr(format!("{p}.{a}")))
                });
            }
        }
        let reward = match rng.random_range(0..4) {
            0 => None,
            1 => Some(ValueExpr::Normal([3.0, 1.0])),
            _ => Some(ValueExpr::add(value_for(&mut rng, &inputs), ValueExpr::Const(1.0))),
        };
        for _ in 0..rng.random_range(0..=2) {
            let target = &places[rng.random_range(0..n_places)];
            let tattrs = target.attrs.names().to_vec();
            let donor = inputs
                .iter()
                .find(|(_, a)| tattrs.iter().all(|x| a.contains(x)))
                .map(|(p, _)| p.clone());
            let expr = match (donor, rng.random_range(0..3)) {
                (Some(from), 0) => ArcExpr::Identity { from: Some(from) },
                (Some(from), 1) => ArcExpr::Delay {
                    from: Some(from),
                    by: ValueExpr::Exponential(2.0),
                },
                (from, _) => {
                    let attrs = tattrs.iter().map(|a| (a.clone(), value_for(&mut rng, &inputs))).collect();
                    match from {
                        Some(from) => ArcExpr::SetAttrs {
                            from: Some(from),
                            attrs,
                            delay: Some(ValueExpr::Const(0.5)),
                        },
                        None => ArcExpr::Emit { attrs, delay: None },
                    }
                }
            };
            arcs.push(ArcSpec {
                source: id.clone(),
                target: target.id.clone(),
                expr: Some(expr),
            });
        }
        transitions.push(TransitionSpec { id, tag, guard, reward });
    }
    NetSpec {
        places,
        transitions,
        arcs,
        initial_marking: marking,
        tag: Tag::Action,
        horizon: 10.0,
        initial_reward: 0.0,
        seed: seed ^ 0xDEAD_BEEF,
        clock: Some(1.0),
        cum_reward: None,
    }
}
