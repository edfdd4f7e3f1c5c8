use std::rc::Rc;

use aegraph::env::{greedy_policy, Observation, TaskEnv};
use aegraph::expansion::expand;
use aegraph::graph::{map_to_graph, AssignmentGraph};
use aegraph::net::MarkedAEPN;
use aegraph::nn::{
    clip_grad_norm, grad_norm, split_probs, ActorCritic, Adam, EncodedGraph, GraphActorCritic, GraphModelConfig,
    NnError, ParamSet, Tape, Tensor, Var, VectorActorCritic, VectorInput,
};
use aegraph::problems::{build_problem, example_net, ProblemId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect())
}

/// Compares reverse-mode gradients of `f` at `inputs` with central differences.
fn check_op(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        // Weight the output so every element contributes differently.
        let (r, c) = tape.shape(out);
        let w = tape.leaf(Tensor::from_vec(r, c, (0..r * c).map(|i| 1.0 + 0.37 * i as f64).collect()));
        let y = tape.mul(out, w);
        let loss = tape.sum(y);
        (tape, vars, loss)
    };
    let (tape, vars, loss) = eval(&inputs);
    let grads = tape.backward(loss);
    let h = 1e-6;
    for (k, x) in inputs.iter().enumerate() {
        let g = grads.get(vars[k]).cloned().unwrap_or_else(|| Tensor::zeros(x.rows, x.cols));
        for i in 0..x.data.len() {
            let mut plus = inputs.clone();
            plus[k].data[i] += h;
            let mut minus = inputs.clone();
            minus[k].data[i] -= h;
            let (tp, _, lp) = eval(&plus);
            let (tm, _, lm) = eval(&minus);
            let fd = (tp.value(lp).item() - tm.value(lm).item()) / (2.0 * h);
            let tol = 1e-5 * (1.0 + fd.abs());
            assert!((g.data[i] - fd).abs() < tol, "input {k}[{i}]: analytic {} vs numeric {fd}", g.data[i]);
        }
    }
}

#[test]
fn tape_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let b = rand_tensor(&mut rng, 4, 2, -1.0, 1.0);
    let c = rand_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let row = rand_tensor(&mut rng, 1, 4, -1.0, 1.0);
    let col = rand_tensor(&mut rng, 3, 1, -1.0, 1.0);
    let pos = rand_tensor(&mut rng, 3, 4, 0.5, 2.0);
    let seg = Rc::new(vec![0, 0, 1, 2, 2, 2]);
    let v6 = rand_tensor(&mut rng, 6, 1, -2.0, 2.0);

    check_op(vec![a.clone(), b.clone()], |t, v| t.matmul(v[0], v[1]));
    check_op(vec![a.clone(), row], |t, v| t.add_row(v[0], v[1]));
    check_op(vec![a.clone(), c.clone()], |t, v| t.add(v[0], v[1]));
    check_op(vec![a.clone(), c.clone()], |t, v| t.sub(v[0], v[1]));
    check_op(vec![a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]));
    check_op(vec![a.clone(), c.clone()], |t, v| t.min(v[0], v[1]));
    check_op(vec![a.clone()], |t, v| t.scale(v[0], -2.5));
    check_op(vec![a.clone()], |t, v| t.add_scalar(v[0], 0.7));
    check_op(vec![a.clone()], |t, v| t.relu(v[0]));
    check_op(vec![a.clone()], |t, v| t.leaky_relu(v[0], 0.2));
    check_op(vec![a.clone()], |t, v| t.tanh(v[0]));
    check_op(vec![a.clone()], |t, v| t.exp(v[0]));
    check_op(vec![pos], |t, v| t.log(v[0]));
    check_op(vec![a.clone()], |t, v| t.clamp(v[0], -0.5, 0.5));
    check_op(vec![a.clone()], |t, v| t.gather_rows(v[0], Rc::new(vec![2, 0, 2, 1])));
    check_op(vec![a.clone()], |t, v| t.scatter_add_rows(v[0], Rc::new(vec![1, 1, 0]), 4));
    check_op(vec![v6.clone()], |t, v| t.segment_softmax(v[0], seg.clone()));
    check_op(vec![v6], |t, v| t.segment_log_softmax(v[0], seg.clone()));
    check_op(vec![a.clone(), col], |t, v| t.mul_col(v[0], v[1]));
    check_op(vec![a.clone()], |t, v| t.reshape(v[0], 6, 2));
    check_op(vec![a], |t, v| t.mean(v[0]));
}

#[test]
fn sum_of_all_parameters_has_unit_gradients() {
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    ps.glorot("w", 3, 5, &mut rng);
    ps.zeros("b", 1, 5);
    let mut tape = Tape::new();
    let vars = ps.bind(&mut tape);
    let s0 = tape.sum(vars[0]);
    let s1 = tape.sum(vars[1]);
    let loss = tape.add(s0, s1);
    let mut grads = tape.backward(loss);
    for g in ps.collect_grads(&vars, &mut grads) {
        assert!(g.data.iter().all(|&x| x == 1.0));
    }
}

fn small_config(seed: u64) -> GraphModelConfig {
    GraphModelConfig {
        hidden: 8,
        rounds: 2,
        seed,
        ..GraphModelConfig::default()
    }
}

/// Observations from several states of one problem, reached greedily.
fn observations(id: ProblemId, seeds: &[u64], steps: usize) -> Vec<Observation> {
    let mut out = Vec::new();
    for &s in seeds {
        let mut env = TaskEnv::new(build_problem(id));
        let mut obs = env.reset(s).unwrap();
        out.push(obs.clone());
        for _ in 0..steps {
            let r = env.step(greedy_policy(&obs).unwrap()).unwrap();
            if r.done {
                break;
            }
            obs = r.observation;
            out.push(obs.clone());
        }
    }
    out
}

fn weighted_loss<M: ActorCritic>(model: &M, inputs: &[&M::Input], seed: u64) -> (f64, Vec<Tensor>) {
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let out = model.forward(&mut tape, &vars, inputs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, _) = tape.shape(out.log_probs);
    let wl = tape.leaf(rand_tensor(&mut rng, c, 1, -1.0, 1.0));
    let wv = tape.leaf(rand_tensor(&mut rng, inputs.len(), 1, -1.0, 1.0));
    let a = tape.mul(out.log_probs, wl);
    let a = tape.sum(a);
    let b = tape.mul(out.values, wv);
    let b = tape.sum(b);
    let loss = tape.add(a, b);
    let mut grads = tape.backward(loss);
    let g = model.params().collect_grads(&vars, &mut grads);
    (tape.value(loss).item(), g)
}

fn check_model_gradients<M: ActorCritic + Clone>(model: &M, inputs: &[&M::Input], seed: u64, probes: usize) {
    let (_, g) = weighted_loss(model, inputs, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
    let h = 1e-6;
    for _ in 0..probes {
        let k = loop {
            let k = rng.random_range(0..model.params().len());
            if !model.params().tensors()[k].data.is_empty() {
                break k;
            }
        };
        let i = rng.random_range(0..model.params().tensors()[k].data.len());
        let mut plus = model.clone();
        plus.params_mut().tensors_mut()[k].data[i] += h;
        let mut minus = model.clone();
        minus.params_mut().tensors_mut()[k].data[i] -= h;
        let fd = (weighted_loss(&plus, inputs, seed).0 - weighted_loss(&minus, inputs, seed).0) / (2.0 * h);
        let name = &model.params().names()[k];
        assert!(
            (g[k].data[i] - fd).abs() < 1e-4 * (1.0 + fd.abs()),
            "{name}[{i}]: analytic {} vs numeric {fd}",
            g[k].data[i]
        );
    }
}

#[test]
fn graph_model_gradients_match_finite_differences() {
    for (id, seed) in [(ProblemId::P1, 1), (ProblemId::P2, 2), (ProblemId::P3, 3)] {
        let template = build_problem(id);
        let model = GraphActorCritic::for_net(&template, small_config(seed));
        let obs = observations(id, &[seed, seed + 10], 3);
        let inputs: Vec<EncodedGraph> = obs.iter().map(|o| model.encode(o).unwrap().0).collect();
        let refs: Vec<&EncodedGraph> = inputs.iter().collect();
        check_model_gradients(&model, &refs, seed, 60);
    }
}

#[test]
fn vector_model_gradients_match_finite_differences() {
    let obs = {
        let mut env = TaskEnv::new(build_problem(ProblemId::P2)).with_vector().unwrap();
        let o = env.reset(5).unwrap();
        let o2 = env.step(greedy_policy(&o).unwrap()).unwrap().observation;
        vec![o, o2]
    };
    let n = obs[0].vector.as_ref().unwrap().len();
    let m = obs[0].vector_actions.as_ref().unwrap().len();
    let model = VectorActorCritic::new(n, m, 16, 4);
    let inputs: Vec<VectorInput> = obs.iter().map(|o| model.encode(o).unwrap().0).collect();
    let refs: Vec<&VectorInput> = inputs.iter().collect();
    check_model_gradients(&model, &refs, 7, 80);
}

fn example_graph() -> (MarkedAEPN, AssignmentGraph) {
    let src = MarkedAEPN::build(&example_net()).unwrap();
    let (x, emap) = expand(&src);
    let g = map_to_graph(&x, Some(&emap)).unwrap().0;
    (src, g)
}

fn probs_and_values(model: &GraphActorCritic, graphs: &[&EncodedGraph]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let out = model.forward(&mut tape, &vars, graphs).unwrap();
    (split_probs(&tape, &out), tape.value(out.values).data.clone())
}

#[test]
fn probabilities_are_normalized_per_graph() {
    let model = GraphActorCritic::for_net(&build_problem(ProblemId::P2), small_config(0));
    let obs = observations(ProblemId::P2, &[1, 2, 3], 4);
    let inputs: Vec<EncodedGraph> = obs.iter().map(|o| model.encode(o).unwrap().0).collect();
    let refs: Vec<&EncodedGraph> = inputs.iter().collect();
    let (probs, values) = probs_and_values(&model, &refs);
    assert_eq!(probs.len(), inputs.len());
    assert_eq!(values.len(), inputs.len());
    for (p, g) in probs.iter().zip(&inputs) {
        assert_eq!(p.len(), g.actions.len());
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn batching_does_not_change_outputs() {
    let model = GraphActorCritic::for_net(&build_problem(ProblemId::P3), small_config(5));
    let obs = observations(ProblemId::P3, &[4, 8], 3);
    let inputs: Vec<EncodedGraph> = obs.iter().map(|o| model.encode(o).unwrap().0).collect();
    let refs: Vec<&EncodedGraph> = inputs.iter().collect();
    let (bp, bv) = probs_and_values(&model, &refs);
    for (k, g) in inputs.iter().enumerate() {
        let (p, v) = probs_and_values(&model, &[g]);
        for (x, y) in p[0].iter().zip(&bp[k]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((v[0] - bv[k]).abs() < 1e-12);
    }
    let copies = vec![&inputs[0]; 4];
    let (cp, cv) = probs_and_values(&model, &copies);
    assert!(cp.windows(2).all(|w| w[0] == w[1]));
    assert!(cv.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn single_action_gets_probability_one() {
    let (src, mut g) = example_graph();
    let model = GraphActorCritic::for_net(&src, small_config(1));
    // Drop the second action node.
    let drop = g.action_nodes()[1];
    g.nodes.remove(drop);
    g.edges.retain(|&(s, d)| s != drop && d != drop);
    for (i, n) in g.nodes.iter_mut().enumerate() {
        n.id = i;
    }
    for e in &mut g.edges {
        e.0 -= (e.0 > drop) as usize;
        e.1 -= (e.1 > drop) as usize;
    }
    let enc = model.encode_graph(&g, 0.0).unwrap();
    let (p, _) = probs_and_values(&model, &[&enc]);
    assert_eq!(p[0], vec![1.0]);
}

#[test]
fn indistinguishable_actions_split_evenly() {
    let mut spec = example_net();
    for t in spec.initial_marking.get_mut("Waiting").unwrap() {
        t.attrs.insert("type".into(), 0.0);
        t.attrs.insert("budget".into(), 150.0);
    }
    // Arrivals land on the first image only, which would tell the two apart.
    spec.arcs.retain(|a| !(a.source == "Arrive" && a.target == "Waiting"));
    let src = MarkedAEPN::build(&spec).unwrap();
    let (x, emap) = expand(&src);
    let g = map_to_graph(&x, Some(&emap)).unwrap().0;
    let model = GraphActorCritic::for_net(&src, small_config(2));
    let enc = model.encode_graph(&g, 0.0).unwrap();
    let (p, _) = probs_and_values(&model, &[&enc]);
    assert_eq!(p[0].len(), 2);
    assert!((p[0][0] - 0.5).abs() < 1e-12 && (p[0][1] - 0.5).abs() < 1e-12);
}

#[test]
fn outputs_do_not_depend_on_node_order() {
    let model = GraphActorCritic::for_net(&build_problem(ProblemId::P2), small_config(9));
    let obs = &observations(ProblemId::P2, &[6], 2)[2];
    let g = &obs.graph;
    let n = g.len();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut perm: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(&mut rng);
    // perm[old] = new
    let mut h = g.clone();
    for (old, node) in g.nodes.iter().enumerate() {
        let mut node = node.clone();
        node.id = perm[old];
        h.nodes[perm[old]] = node;
    }
    h.edges = g.edges.iter().map(|&(s, d)| (perm[s], perm[d])).collect();

    let e1 = model.encode_graph(g, obs.clock).unwrap();
    let e2 = model.encode_graph(&h, obs.clock).unwrap();
    let (p1, v1) = probs_and_values(&model, &[&e1]);
    let (p2, v2) = probs_and_values(&model, &[&e2]);
    assert!((v1[0] - v2[0]).abs() < 1e-9);
    for (k, &a) in e1.actions.iter().enumerate() {
        let k2 = e2.actions.iter().position(|&b| b == perm[a]).unwrap();
        assert!((p1[0][k] - p2[0][k2]).abs() < 1e-9);
    }
}

#[test]
fn attribute_free_types_train_through_their_bias() {
    let (src, g) = example_graph();
    let model = GraphActorCritic::for_net(&src, small_config(3));
    let enc = model.encode_graph(&g, 0.0).unwrap();
    let (_, grads) = weighted_loss(&model, &[&enc], 1);
    for name in ["pi.proj.A_Transition.b", "vf.proj.A_Transition.b"] {
        let k = model.params().index_of(name).unwrap();
        assert!(grad_norm(&grads[k..k + 1]) > 0.0, "{name} gets no gradient");
        let w = model.params().get(name).unwrap();
        assert!(w.data.iter().any(|&x| x != 0.0));
    }
}

#[test]
fn unknown_node_types_are_rejected() {
    let (src, mut g) = example_graph();
    let model = GraphActorCritic::for_net(&src, small_config(0));
    g.nodes[0].ty = "P{other}".into();
    assert!(matches!(model.encode_graph(&g, 0.0), Err(NnError::UnknownNodeType(_))));
}

#[test]
fn checkpoints_round_trip() {
    let (src, g) = example_graph();
    let model = GraphActorCritic::for_net(&src, small_config(11));
    let text = model.params().to_json();
    let loaded = ParamSet::from_json(&text).unwrap();
    assert_eq!(&loaded, model.params());

    let mut fresh = GraphActorCritic::for_net(&src, small_config(12));
    fresh.params_mut().load_from(&loaded).unwrap();
    let enc = model.encode_graph(&g, 0.0).unwrap();
    assert_eq!(probs_and_values(&model, &[&enc]), probs_and_values(&fresh, &[&enc]));

    let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
    assert!(matches!(ParamSet::from_json(&bumped), Err(NnError::Checkpoint(_))));
    let mut wrong = GraphActorCritic::for_net(&src, GraphModelConfig { hidden: 4, ..small_config(0) });
    assert!(wrong.params_mut().load_from(&loaded).is_err());
}

#[test]
fn vector_value_matches_hand_computation() {
    let model = VectorActorCritic::new(3, 2, 4, 21);
    let x = vec![1.0, -2.0, 0.5];
    let input = VectorInput { x: x.clone(), valid: vec![0, 1] };
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let out = model.forward(&mut tape, &vars, &[&input]).unwrap();
    let got = tape.value(out.values).item();

    let p = |n: &str| model.params().get(n).unwrap();
    let (w1, b1, w2, b2) = (p("vf.w1"), p("vf.b1"), p("vf.w2"), p("vf.b2"));
    let hidden: Vec<f64> = (0..4)
        .map(|j| (b1.get(0, j) + (0..3).map(|i| x[i] * w1.get(i, j)).sum::<f64>()).max(0.0))
        .collect();
    let want = b2.get(0, 0) + (0..4).map(|j| hidden[j] * w2.get(j, 0)).sum::<f64>();
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn vector_masking_keeps_only_valid_actions() {
    let model = VectorActorCritic::new(3, 5, 8, 2);
    let input = VectorInput { x: vec![1.0, 0.0, 2.0], valid: vec![1, 3] };
    let mut tape = Tape::new();
    let vars = model.params().bind(&mut tape);
    let out = model.forward(&mut tape, &vars, &[&input]).unwrap();
    let p = split_probs(&tape, &out);
    assert_eq!(p[0].len(), 2);
    assert!((p[0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let empty = VectorInput { x: vec![0.0; 3], valid: vec![] };
    assert!(matches!(model.forward(&mut tape, &vars, &[&empty]), Err(NnError::NoActions)));
}

#[test]
fn gradient_clipping_caps_the_norm() {
    let mut g = vec![Tensor::from_vec(1, 2, vec![3.0, 4.0]), Tensor::scalar(12.0)];
    let before = clip_grad_norm(&mut g, 1.3);
    assert!((before - 13.0).abs() < 1e-12);
    assert!((grad_norm(&g) - 1.3).abs() < 1e-12);
    let mut small = vec![Tensor::scalar(0.1)];
    clip_grad_norm(&mut small, 1.0);
    assert_eq!(small[0].item(), 0.1);
}

#[test]
fn adam_minimizes_a_quadratic() {
    let mut ps = ParamSet::new();
    ps.push("x", Tensor::from_vec(1, 3, vec![4.0, -3.0, 1.0]));
    let mut opt = Adam::new(&ps, 0.05);
    for _ in 0..2000 {
        let mut tape = Tape::new();
        let vars = ps.bind(&mut tape);
        let target = tape.leaf(Tensor::from_vec(1, 3, vec![1.0, 2.0, -1.0]));
        let d = tape.sub(vars[0], target);
        let sq = tape.mul(d, d);
        let loss = tape.sum(sq);
        let mut grads = tape.backward(loss);
        let g = ps.collect_grads(&vars, &mut grads);
        opt.step(&mut ps, &g);
    }
    for (x, t) in ps.get("x").unwrap().data.iter().zip([1.0, 2.0, -1.0]) {
        assert!((x - t).abs() < 1e-3, "{x} vs {t}");
    }
}
