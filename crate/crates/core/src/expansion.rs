//! Expansion of a marked net into an equivalent net with at most one token
//! per place and one action transition per enabled binding.
//!
//! Place `p` holding tokens `t0, t1, ...` becomes places `p#0, p#1, ...`, each
//! marked with one token; empty places are kept as they are. Evolution
//! transitions are copied once and read from every image of their input
//! places. Each enabled binding `k` of an action transition `tr` becomes a
//! transition `tr#k` that reads exactly the images holding the bound tokens.
//! Output arcs go to the first image of their place (the place itself when
//! empty), so a firing produces the same tokens as in the source net.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::net::expr::Renamer;
use crate::net::{
    ArcExpr, ArcSpec, Binding, MarkedAEPN, NetError, NetSpec, PlaceSpec, Tag, TokenSpec, TransitionSpec,
};

/// One token of a source binding, by place id and insertion ordinal.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundToken {
    pub place: String,
    pub index: usize,
}

/// Where a target transition came from.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionOrigin {
    pub target: String,
    pub source: String,
    /// Source binding for expanded action transitions; `None` for evolution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub binding: Option<Vec<BoundToken>>,
    #[serde(skip)]
    pub(crate) resolved: Option<Binding>,
}

impl PartialEq for TransitionOrigin {
    fn eq(&self, other: &Self) -> bool {
        self.target == other.target && self.source == other.source && self.binding == other.binding
    }
}

impl TransitionOrigin {
    /// The source binding with live token identities, when produced by
    /// [`expand`] in this process.
    pub fn source_binding(&self) -> Option<&Binding> {
        self.resolved.as_ref()
    }
}

/// Provenance of an expansion.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpansionMap {
    /// `(source place, target place)`, one pair per source token, or `(p, p)`
    /// for an empty source place.
    pub place_map: Vec<(String, String)>,
    pub transition_map: Vec<TransitionOrigin>,
}

impl ExpansionMap {
    pub fn origin(&self, target_transition: &str) -> Option<&TransitionOrigin> {
        self.transition_map.iter().find(|o| o.target == target_transition)
    }

    /// Source place of a target place.
    pub fn source_place(&self, target_place: &str) -> Option<&str> {
        self.place_map
            .iter()
            .find(|(_, t)| t == target_place)
            .map(|(s, _)| s.as_str())
    }

    /// Resolves a binding stored by ordinals against the source net.
    pub fn resolve_binding(&self, source: &MarkedAEPN, origin: &TransitionOrigin) -> Option<Binding> {
        if let Some(b) = &origin.resolved {
            return Some(b.clone());
        }
        let tokens = origin.binding.as_ref()?;
        let tr = source.transition_index(&origin.source)?;
        let mut assignments = Vec::with_capacity(tokens.len());
        for &p in &source.transition(tr).inputs {
            let bt = tokens.iter().find(|bt| source.place(p).id == bt.place)?;
            assignments.push((p, source.place(p).marking.get(bt.index)?.clone()));
        }
        let enabling_time = assignments.iter().fold(0.0f64, |m, (_, t)| m.max(t.time));
        Some(Binding {
            assignments,
            enabling_time,
        })
    }
}

/// Expanded net serialized with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandedNetDocument {
    #[serde(flatten)]
    pub net: NetSpec,
    pub expansion_map: ExpansionMap,
}

fn ordinals(net: &MarkedAEPN, b: &Binding) -> Vec<BoundToken> {
    b.assignments
        .iter()
        .map(|(p, tok)| {
            let place = net.place(*p);
            BoundToken {
                place: place.id.clone(),
                index: place
                    .marking
                    .iter()
                    .position(|m| m.id == tok.id)
                    .expect("enabled bindings reference live tokens"),
            }
        })
        .collect()
}

fn image_id(place: &str, k: usize) -> String {
    format!("{place}#{k}")
}

/// Makes an implicit `from` explicit so the copy still compiles when the
/// target transition reads several images of the same place.
fn explicit_from(expr: &ArcExpr, only_input: Option<&str>) -> ArcExpr {
    let mut e = expr.clone();
    if let Some(input) = only_input {
        match &mut e {
            ArcExpr::Identity { from } | ArcExpr::Delay { from, .. } | ArcExpr::SetAttrs { from, .. } => {
                if from.is_none() {
                    *from = Some(input.to_string());
                }
            }
            ArcExpr::Emit { .. } => {}
        }
    }
    e
}

/// Expands `source` so that every place holds at most one token.
pub fn expand(source: &MarkedAEPN) -> (MarkedAEPN, ExpansionMap) {
    let structure = source.structure();
    let mut places = Vec::new();
    let mut marking: BTreeMap<String, Vec<TokenSpec>> = BTreeMap::new();
    let mut emap = ExpansionMap::default();
    // Images of each source place, in token order.
    let mut images: Vec<Vec<String>> = Vec::with_capacity(source.places().len());

    for (pi, p) in source.places().iter().enumerate() {
        let decl = &structure.places[pi];
        if p.marking.is_empty() {
            places.push(decl.clone());
            emap.place_map.push((p.id.clone(), p.id.clone()));
            images.push(vec![p.id.clone()]);
            continue;
        }
        let mut imgs = Vec::with_capacity(p.marking.len());
        for (k, tok) in p.marking.iter().enumerate() {
            let id = image_id(&p.id, k);
            places.push(PlaceSpec {
                id: id.clone(),
                ..decl.clone()
            });
            marking.insert(id.clone(), vec![crate::net::token_spec(p, tok)]);
            emap.place_map.push((p.id.clone(), id.clone()));
            imgs.push(id);
        }
        images.push(imgs);
    }

    let mut transitions = Vec::new();
    let mut arcs = Vec::new();
    for (ti, tr) in source.transitions().iter().enumerate() {
        let decl = &structure.transitions[ti];
        let only_input = (tr.inputs.len() == 1).then(|| source.place(tr.inputs[0]).id.as_str());
        let out_arcs: Vec<&ArcSpec> = structure.arcs.iter().filter(|a| a.source == tr.id).collect();
        let owner_of = |attr: &str| {
            tr.inputs
                .iter()
                .find(|&&p| source.place(p).schema.index_of(attr).is_some())
                .map(|&p| source.place(p).id.clone())
        };
        let first_image = |place: &str| source.place_index(place).map(|p| images[p][0].clone());

        match tr.tag {
            Tag::Evolution => {
                let renamer = Renamer {
                    place: &first_image,
                    bare: &owner_of,
                };
                transitions.push(rename_transition(decl, &tr.id, &renamer));
                for &p in &tr.inputs {
                    for img in &images[p] {
                        arcs.push(ArcSpec {
                            source: img.clone(),
                            target: tr.id.clone(),
                            expr: None,
                        });
                    }
                }
                for a in &out_arcs {
                    arcs.push(rename_out_arc(a, &tr.id, &images, source, only_input, &renamer));
                }
                emap.transition_map.push(TransitionOrigin {
                    target: tr.id.clone(),
                    source: tr.id.clone(),
                    binding: None,
                    resolved: None,
                });
            }
            Tag::Action => {
                for (k, b) in source.enabled_bindings(ti).into_iter().enumerate() {
                    let id = image_id(&tr.id, k);
                    let mut bound_image: HashMap<String, String> = HashMap::new();
                    let bound = ordinals(source, &b);
                    for ((p, _), bt) in b.assignments.iter().zip(&bound) {
                        bound_image.insert(bt.place.clone(), images[*p][bt.index].clone());
                    }
                    let to_bound = |place: &str| bound_image.get(place).cloned();
                    let renamer = Renamer {
                        place: &to_bound,
                        bare: &owner_of,
                    };
                    transitions.push(rename_transition(decl, &id, &renamer));
                    for bt in &bound {
                        arcs.push(ArcSpec {
                            source: bound_image[&bt.place].clone(),
                            target: id.clone(),
                            expr: None,
                        });
                    }
                    for a in &out_arcs {
                        arcs.push(rename_out_arc(a, &id, &images, source, only_input, &renamer));
                    }
                    emap.transition_map.push(TransitionOrigin {
                        target: id,
                        source: tr.id.clone(),
                        binding: Some(bound),
                        resolved: Some(b),
                    });
                }
            }
        }
    }

    let spec = NetSpec {
        places,
        transitions,
        arcs,
        initial_marking: marking,
        tag: source.tag(),
        horizon: source.horizon(),
        initial_reward: source.initial_reward(),
        seed: source.seed(),
        clock: Some(source.clock()),
        cum_reward: Some(source.cum_reward()),
    };
    let mut target = MarkedAEPN::build(&spec).expect("expansion of a valid net is valid");
    target.set_rng_state(source.rng_state().clone());
    (target, emap)
}

fn rename_transition(decl: &TransitionSpec, id: &str, renamer: &Renamer<'_>) -> TransitionSpec {
    let mut t = decl.clone();
    t.id = id.to_string();
    for atom in &mut t.guard {
        atom.lhs.rename_places(renamer);
        atom.rhs.rename_places(renamer);
    }
    if let Some(r) = &mut t.reward {
        r.rename_places(renamer);
    }
    t
}

fn rename_out_arc(
    a: &ArcSpec,
    transition: &str,
    images: &[Vec<String>],
    source: &MarkedAEPN,
    only_input: Option<&str>,
    renamer: &Renamer<'_>,
) -> ArcSpec {
    let target_place = source.place_index(&a.target).expect("validated arc");
    let mut expr = explicit_from(a.expr.as_ref().unwrap_or(&ArcExpr::Identity { from: None }), only_input);
    expr.rename_places(renamer);
    ArcSpec {
        source: transition.to_string(),
        target: images[target_place][0].clone(),
        expr: Some(expr),
    }
}

/// A reason an expanded net is not a faithful single-token expansion.
#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    MultiToken { place: String, tokens: usize },
    UnmappedTransition(String),
    DuplicateBinding { transition: String, source: String },
    MissingBinding { transition: String },
    Fire { transition: String, error: NetError },
    RewardMismatch { transition: String, source: f64, target: f64 },
    MarkingMismatch { transition: String },
    /// An enabled source binding without an action copy.
    MissingCopy { source: String, binding: Vec<BoundToken> },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::MultiToken { place, tokens } => write!(f, "place `{place}` holds {tokens} tokens"),
            Violation::UnmappedTransition(t) => write!(f, "action transition `{t}` has no source binding"),
            Violation::DuplicateBinding { transition, source } => {
                write!(f, "`{transition}` repeats a binding of `{source}`")
            }
            Violation::MissingBinding { transition } => {
                write!(f, "`{transition}` cannot fire with its source binding's tokens")
            }
            Violation::Fire { transition, error } => write!(f, "firing `{transition}` failed: {error}"),
            Violation::RewardMismatch {
                transition,
                source,
                target,
            } => write!(f, "`{transition}` earns {target}, its source earns {source}"),
            Violation::MarkingMismatch { transition } => {
                write!(f, "`{transition}` changes the marking differently from its source")
            }
            Violation::MissingCopy { source, binding } => {
                let tokens: Vec<String> = binding.iter().map(|b| format!("{}[{}]", b.place, b.index)).collect();
                write!(f, "binding ({}) of `{source}` has no action copy", tokens.join(", "))
            }
        }
    }
}

/// Tokens removed and added by one firing, projected per source place and
/// sorted, as `(time, values)` pairs.
type Delta = BTreeMap<String, (Vec<(f64, Vec<f64>)>, Vec<(f64, Vec<f64>)>)>;

fn firing_delta(before: &MarkedAEPN, after: &MarkedAEPN, project: &dyn Fn(&str) -> String) -> Delta {
    let mut delta: Delta = BTreeMap::new();
    for (pb, pa) in before.places().iter().zip(after.places()) {
        let key = project(&pb.id);
        let entry = delta.entry(key).or_default();
        for t in &pb.marking {
            if !pa.marking.iter().any(|m| m.id == t.id) {
                entry.0.push((t.time, t.values.clone()));
            }
        }
        for t in &pa.marking {
            if !pb.marking.iter().any(|m| m.id == t.id) {
                entry.1.push((t.time, t.values.clone()));
            }
        }
    }
    for (removed, added) in delta.values_mut() {
        removed.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        added.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    }
    delta.retain(|_, (r, a)| !r.is_empty() || !a.is_empty());
    delta
}

/// Checks that `target` holds at most one token per place and that every
/// target action transition fires exactly like its source binding does.
pub fn validate_expanded(source: &MarkedAEPN, target: &MarkedAEPN, emap: &ExpansionMap) -> Vec<Violation> {
    let mut out = Vec::new();
    for p in target.places() {
        if p.marking.len() > 1 {
            out.push(Violation::MultiToken {
                place: p.id.clone(),
                tokens: p.marking.len(),
            });
        }
    }

    let mut seen: Vec<(&str, &[BoundToken])> = Vec::new();
    for ti in target.action_transitions() {
        let tr = target.transition(ti);
        let Some(origin) = emap.origin(&tr.id).filter(|o| o.binding.is_some()) else {
            out.push(Violation::UnmappedTransition(tr.id.clone()));
            continue;
        };
        let bound = origin.binding.as_deref().unwrap_or_default();
        if seen.iter().any(|(s, b)| *s == origin.source && *b == bound) {
            out.push(Violation::DuplicateBinding {
                transition: tr.id.clone(),
                source: origin.source.clone(),
            });
            continue;
        }
        seen.push((&origin.source, bound));

        let (Some(src_tr), Some(src_binding)) = (
            source.transition_index(&origin.source),
            emap.resolve_binding(source, origin),
        ) else {
            out.push(Violation::UnmappedTransition(tr.id.clone()));
            continue;
        };
        // The target binding holding the same colors as the source tokens.
        let candidate = target.enabled_bindings(ti).into_iter().find(|tb| {
            tb.assignments.iter().all(|(tp, tt)| {
                let sp = emap.source_place(&target.place(*tp).id);
                src_binding
                    .assignments
                    .iter()
                    .any(|(p, st)| Some(source.place(*p).id.as_str()) == sp && st.same_color(tt))
            })
        });
        let Some(target_binding) = candidate else {
            out.push(Violation::MissingBinding {
                transition: tr.id.clone(),
            });
            continue;
        };

        let mut s = source.clone();
        let mut t = target.clone();
        t.set_rng_state(s.rng_state().clone());
        let (rs, rt) = match (s.fire(src_tr, &src_binding), t.fire(ti, &target_binding)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(error), _) | (_, Err(error)) => {
                out.push(Violation::Fire {
                    transition: tr.id.clone(),
                    error,
                });
                continue;
            }
        };
        if rs != rt {
            out.push(Violation::RewardMismatch {
                transition: tr.id.clone(),
                source: rs,
                target: rt,
            });
        }
        let ds = firing_delta(source, &s, &|p| p.to_string());
        let dt = firing_delta(target, &t, &|p| emap.source_place(p).unwrap_or(p).to_string());
        if ds != dt {
            out.push(Violation::MarkingMismatch {
                transition: tr.id.clone(),
            });
        }
    }

    for st in source.action_transitions() {
        let id = &source.transition(st).id;
        for b in source.enabled_bindings(st) {
            let ordinals = ordinals(source, &b);
            if !seen.iter().any(|(s, bt)| s == id && *bt == ordinals.as_slice()) {
                out.push(Violation::MissingCopy {
                    source: id.clone(),
                    binding: ordinals,
                });
            }
        }
    }
    out
}

impl ExpandedNetDocument {
    pub fn new(target: &MarkedAEPN, emap: &ExpansionMap) -> Self {
        ExpandedNetDocument {
            net: target.to_spec(),
            expansion_map: emap.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("expanded nets always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        serde_json::from_str(text).map_err(|e| NetError::Malformed(e.to_string()))
    }
}
