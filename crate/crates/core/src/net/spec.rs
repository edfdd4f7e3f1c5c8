//! JSON net description and validation into a [`MarkedAEPN`].

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expr::{CExpr, CGuard, Producer, SlotScope};
use super::{
    ArcExpr, AttributeSchema, GuardAtom, MarkedAEPN, NetError, Place, Tag, Token, Transition,
    ValueExpr,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    pub places: Vec<PlaceSpec>,
    #[serde(default)]
    pub transitions: Vec<TransitionSpec>,
    #[serde(default)]
    pub arcs: Vec<ArcSpec>,
    #[serde(default)]
    pub initial_marking: BTreeMap<String, Vec<TokenSpec>>,
    #[serde(default = "default_tag")]
    pub tag: Tag,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub initial_reward: f64,
    #[serde(default, skip_serializing_if = "is_zero_u64")]
    pub seed: u64,
    /// Clock of a snapshot taken mid-episode; 0 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock: Option<f64>,
    /// Cumulative reward of a snapshot; `initial_reward` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cum_reward: Option<f64>,
}

fn default_tag() -> Tag {
    Tag::Evolution
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn is_zero_u64(x: &u64) -> bool {
    *x == 0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceSpec {
    pub id: String,
    #[serde(default)]
    pub attrs: AttributeSchema,
    /// Finite color declaration used by vector observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colors: Option<Vec<ColorDomain>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionSpec {
    pub id: String,
    pub tag: Tag,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub guard: Vec<GuardAtom>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<ValueExpr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArcSpec {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<ArcExpr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSpec {
    pub time: f64,
    #[serde(default)]
    pub attrs: BTreeMap<String, f64>,
}

/// Finite domain of one attribute: explicit values, or ranges bucketed by `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorDomain {
    pub attr: String,
    #[serde(flatten)]
    pub kind: DomainKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DomainKind {
    Values { values: Vec<f64> },
    Ranges { ranges: Vec<[f64; 2]>, step: f64 },
}

impl ColorDomain {
    pub fn values(attr: &str, values: Vec<f64>) -> Self {
        ColorDomain {
            attr: attr.into(),
            kind: DomainKind::Values { values },
        }
    }

    pub fn ranges(attr: &str, ranges: Vec<[f64; 2]>, step: f64) -> Self {
        ColorDomain {
            attr: attr.into(),
            kind: DomainKind::Ranges { ranges, step },
        }
    }

    fn range_len(lo: f64, hi: f64, step: f64) -> usize {
        ((hi - lo) / step + 1e-9).floor() as usize + 1
    }

    pub fn size(&self) -> usize {
        match &self.kind {
            DomainKind::Values { values } => values.len(),
            DomainKind::Ranges { ranges, step } => {
                ranges.iter().map(|[lo, hi]| Self::range_len(*lo, *hi, *step)).sum()
            }
        }
    }

    /// Bucket of `v`, if it falls inside the domain.
    pub fn index_of(&self, v: f64) -> Option<usize> {
        match &self.kind {
            DomainKind::Values { values } => values.iter().position(|x| (x - v).abs() < 1e-9),
            DomainKind::Ranges { ranges, step } => {
                let mut offset = 0;
                for [lo, hi] in ranges {
                    let n = Self::range_len(*lo, *hi, *step);
                    let k = ((v - lo) / step).round();
                    if k >= 0.0 && (k as usize) < n {
                        return Some(offset + k as usize);
                    }
                    offset += n;
                }
                None
            }
        }
    }
}

fn check_id(id: &str) -> Result<(), NetError> {
    if id.is_empty() || id.contains('.') {
        return Err(NetError::InvalidId(id.to_string()));
    }
    Ok(())
}

impl MarkedAEPN {
    /// Validates a description and materializes the marked net.
    pub fn build(spec: &NetSpec) -> Result<Self, NetError> {
        let mut place_index = HashMap::new();
        let mut places = Vec::with_capacity(spec.places.len());
        for p in &spec.places {
            check_id(&p.id)?;
            if place_index.insert(p.id.clone(), places.len()).is_some() {
                return Err(NetError::DuplicateId(p.id.clone()));
            }
            if let Some(colors) = &p.colors {
                for c in colors {
                    if p.attrs.index_of(&c.attr).is_none() {
                        return Err(NetError::Schema {
                            place: p.id.clone(),
                            reason: format!("color domain for unknown attribute `{}`", c.attr),
                        });
                    }
                }
            }
            places.push(Place {
                id: p.id.clone(),
                schema: p.attrs.clone(),
                colors: p.colors.clone(),
                marking: Vec::new(),
            });
        }

        let mut transition_index = HashMap::new();
        for (i, t) in spec.transitions.iter().enumerate() {
            check_id(&t.id)?;
            if place_index.contains_key(&t.id) || transition_index.insert(t.id.clone(), i).is_some() {
                return Err(NetError::DuplicateId(t.id.clone()));
            }
        }

        let n_tr = spec.transitions.len();
        let mut inputs: Vec<Vec<usize>> = vec![Vec::new(); n_tr];
        let mut outputs: Vec<Vec<(usize, ArcExpr)>> = vec![Vec::new(); n_tr];
        for a in &spec.arcs {
            let dangling = |reason: &str| NetError::DanglingArc {
                from: a.source.clone(),
                to: a.target.clone(),
                reason: reason.to_string(),
            };
            match (
                place_index.get(&a.source),
                transition_index.get(&a.target),
                transition_index.get(&a.source),
                place_index.get(&a.target),
            ) {
                (Some(&p), Some(&t), _, _) => {
                    if a.expr.is_some() {
                        return Err(dangling("input arcs carry no expression"));
                    }
                    if inputs[t].contains(&p) {
                        return Err(dangling("duplicate input arc"));
                    }
                    inputs[t].push(p);
                }
                (_, _, Some(&t), Some(&p)) => {
                    let expr = a.expr.clone().unwrap_or(ArcExpr::Identity { from: None });
                    outputs[t].push((p, expr));
                }
                (None, _, None, _) => return Err(dangling("unknown source")),
                _ => return Err(dangling("unknown target or arc between two nodes of the same kind")),
            }
        }

        let mut transitions = Vec::with_capacity(n_tr);
        for (t, ts) in spec.transitions.iter().enumerate() {
            let mut ins = std::mem::take(&mut inputs[t]);
            if ins.is_empty() {
                return Err(NetError::Expression {
                    transition: ts.id.clone(),
                    reason: "transition has no input arcs".into(),
                });
            }
            ins.sort_by(|a, b| places[*a].id.cmp(&places[*b].id));
            let scope = SlotScope {
                transition: &ts.id,
                slots: ins.iter().map(|&p| (places[p].id.as_str(), &places[p].schema)).collect(),
            };
            let guard = CGuard::compile(&ts.guard, &scope)?;
            let reward = ts.reward.as_ref().map(|r| CExpr::compile(r, &scope)).transpose()?;
            let producers = outputs[t]
                .iter()
                .map(|(p, e)| Producer::compile(e, *p, (&places[*p].id, &places[*p].schema), &scope))
                .collect::<Result<Vec<_>, _>>()?;
            transitions.push(Transition {
                id: ts.id.clone(),
                tag: ts.tag,
                inputs: ins,
                guard,
                reward,
                producers,
            });
        }

        let clock = spec.clock.unwrap_or(0.0);
        if !(clock >= 0.0) {
            return Err(NetError::Malformed(format!("clock {clock} is negative")));
        }
        let mut net = MarkedAEPN {
            places,
            transitions,
            spec: NetSpec {
                initial_marking: BTreeMap::new(),
                clock: None,
                cum_reward: None,
                ..spec.clone()
            },
            place_index,
            transition_index,
            clock,
            tag: spec.tag,
            cum_reward: spec.cum_reward.unwrap_or(spec.initial_reward),
            initial_reward: spec.initial_reward,
            horizon: spec.horizon,
            seed: spec.seed,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            next_token: 0,
        };

        // Places in declaration order so token serials follow the description.
        for p in 0..net.places.len() {
            let Some(tokens) = spec.initial_marking.get(&net.places[p].id) else {
                continue;
            };
            for ts in tokens {
                let values = token_values(&net.places[p], ts)?;
                net.add_token(p, ts.time, values)?;
            }
        }
        if let Some(unknown) = spec.initial_marking.keys().find(|k| !net.place_index.contains_key(*k)) {
            return Err(NetError::Schema {
                place: unknown.clone(),
                reason: "marking for an unknown place".into(),
            });
        }
        Ok(net)
    }

    /// Snapshot of structure and current marking as a description.
    pub fn to_spec(&self) -> NetSpec {
        let mut spec = self.spec.clone();
        spec.tag = self.tag;
        spec.horizon = self.horizon;
        spec.seed = self.seed;
        spec.clock = (self.clock != 0.0).then_some(self.clock);
        spec.cum_reward = (self.cum_reward != self.initial_reward).then_some(self.cum_reward);
        spec.initial_marking = self
            .places
            .iter()
            .filter(|p| !p.marking.is_empty())
            .map(|p| (p.id.clone(), p.marking.iter().map(|t| token_spec(p, t)).collect()))
            .collect();
        spec
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let spec: NetSpec = serde_json::from_str(text).map_err(|e| NetError::Malformed(e.to_string()))?;
        MarkedAEPN::build(&spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_spec()).expect("net descriptions always serialize")
    }
}

fn token_values(place: &Place, ts: &TokenSpec) -> Result<Vec<f64>, NetError> {
    let violation = |reason: String| NetError::Schema {
        place: place.id.clone(),
        reason,
    };
    if let Some(extra) = ts.attrs.keys().find(|k| place.schema.index_of(k).is_none()) {
        return Err(violation(format!("token has unknown attribute `{extra}`")));
    }
    place
        .schema
        .names()
        .iter()
        .map(|n| {
            ts.attrs
                .get(n)
                .copied()
                .ok_or_else(|| violation(format!("token is missing attribute `{n}`")))
        })
        .collect()
}

pub(crate) fn token_spec(place: &Place, t: &Token) -> TokenSpec {
    TokenSpec {
        time: t.time,
        attrs: place
            .schema
            .names()
            .iter()
            .cloned()
            .zip(t.values.iter().copied())
            .collect(),
    }
}
