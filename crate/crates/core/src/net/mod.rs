//! Attributed action-evolution Petri nets.
//!
//! A [`MarkedAEPN`] is a timed colored net whose tokens carry real-valued
//! attributes. Transitions are tagged [`Tag::Action`] (fired with a binding
//! chosen by an agent) or [`Tag::Evolution`] (fired by the environment), and
//! the network tag decides which kind may fire next.

mod engine;
pub mod expr;
mod spec;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use engine::{Phase, LIVELOCK_LIMIT};
pub use expr::{ArcExpr, CmpOp, GuardAtom, ValueExpr};
pub(crate) use spec::token_spec;
pub use spec::{ArcSpec, ColorDomain, NetSpec, PlaceSpec, TokenSpec, TransitionSpec};

use expr::{CExpr, CGuard, Producer};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("invalid id `{0}`: ids must be non-empty and contain no `.`")]
    InvalidId(String),
    #[error("arc {from} -> {to}: {reason}")]
    DanglingArc {
        from: String,
        to: String,
        reason: String,
    },
    #[error("schema violation on place `{place}`: {reason}")]
    Schema { place: String, reason: String },
    #[error("transition `{transition}`: {reason}")]
    Expression { transition: String, reason: String },
    #[error("unknown transition `{0}`")]
    UnknownTransition(String),
    #[error("stale binding for `{0}`: a bound token is no longer in its place")]
    StaleBinding(String),
    #[error("binding for `{0}` is not enabled at the current clock")]
    NotEnabled(String),
    #[error("cannot fire {transition} transition `{id}` while the network tag is {tag}")]
    TagMismatch {
        id: String,
        transition: Tag,
        tag: Tag,
    },
    #[error("livelock: more than {0} evolution firings without clock advance")]
    Livelock(usize),
    #[error("malformed net description: {0}")]
    Malformed(String),
}

/// Transition tag and network tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tag {
    #[serde(rename = "A")]
    Action,
    #[serde(rename = "E")]
    Evolution,
}

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tag::Action => "A",
            Tag::Evolution => "E",
        })
    }
}

/// Ordered, duplicate-free attribute names of a place.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct AttributeSchema {
    names: Vec<String>,
}

impl AttributeSchema {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, String> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(format!("duplicate attribute `{n}`"));
            }
        }
        Ok(AttributeSchema { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for AttributeSchema {
    type Error = String;
    fn try_from(v: Vec<String>) -> Result<Self, String> {
        AttributeSchema::new(v)
    }
}

impl From<AttributeSchema> for Vec<String> {
    fn from(s: AttributeSchema) -> Self {
        s.names
    }
}

/// Net-unique token serial, assigned in insertion order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenId(pub u64);

/// A timestamped attribute record. `values` is aligned with the schema of the
/// place holding the token.
#[derive(Clone, Debug, PartialEq)]
pub struct Token {
    pub id: TokenId,
    pub time: f64,
    pub values: Vec<f64>,
}

impl Token {
    /// Same color and time, regardless of identity.
    pub fn same_color(&self, other: &Token) -> bool {
        self.time == other.time && self.values == other.values
    }
}

#[derive(Clone, Debug)]
pub struct Place {
    pub id: String,
    pub schema: AttributeSchema,
    pub colors: Option<Vec<ColorDomain>>,
    pub marking: Vec<Token>,
}

impl Place {
    pub fn attr(&self, token: &Token, name: &str) -> Option<f64> {
        self.schema.index_of(name).map(|i| token.values[i])
    }
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub id: String,
    pub tag: Tag,
    /// Input places (indices), sorted by place id; one binding slot each.
    pub inputs: Vec<usize>,
    pub(crate) guard: CGuard,
    pub(crate) reward: Option<CExpr>,
    pub(crate) producers: Vec<Producer>,
}

impl Transition {
    /// Output places in arc order.
    pub fn outputs(&self) -> impl Iterator<Item = usize> + '_ {
        self.producers.iter().map(|p| p.place)
    }
}

/// One token per input place of a transition, in the transition's slot order.
#[derive(Clone, Debug, PartialEq)]
pub struct Binding {
    pub assignments: Vec<(usize, Token)>,
    pub enabling_time: f64,
}

impl Binding {
    pub fn token(&self, place: usize) -> Option<&Token> {
        self.assignments.iter().find(|(p, _)| *p == place).map(|(_, t)| t)
    }
}

/// A marked attributed action-evolution Petri net with its clock, tag,
/// cumulative reward and random stream.
#[derive(Clone, Debug)]
pub struct MarkedAEPN {
    places: Vec<Place>,
    transitions: Vec<Transition>,
    spec: NetSpec,
    place_index: HashMap<String, usize>,
    transition_index: HashMap<String, usize>,
    pub(crate) clock: f64,
    pub(crate) tag: Tag,
    pub(crate) cum_reward: f64,
    initial_reward: f64,
    horizon: f64,
    seed: u64,
    pub(crate) rng: ChaCha8Rng,
    next_token: u64,
}

impl MarkedAEPN {
    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn place(&self, idx: usize) -> &Place {
        &self.places[idx]
    }

    pub fn place_index(&self, id: &str) -> Option<usize> {
        self.place_index.get(id).copied()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn transition(&self, idx: usize) -> &Transition {
        &self.transitions[idx]
    }

    pub fn transition_index(&self, id: &str) -> Option<usize> {
        self.transition_index.get(id).copied()
    }

    /// Net structure as described, independent of the current marking.
    pub fn structure(&self) -> &NetSpec {
        &self.spec
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn tag(&self) -> Tag {
        self.tag
    }

    pub fn cum_reward(&self) -> f64 {
        self.cum_reward
    }

    pub fn initial_reward(&self) -> f64 {
        self.initial_reward
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn set_horizon(&mut self, horizon: f64) {
        self.horizon = horizon;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Restarts the random stream.
    pub fn reseed(&mut self, seed: u64) {
        self.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub(crate) fn rng_state(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub(crate) fn set_rng_state(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    pub fn is_done(&self) -> bool {
        self.clock >= self.horizon
    }

    /// Total number of tokens in the marking.
    pub fn token_count(&self) -> usize {
        self.places.iter().map(|p| p.marking.len()).sum()
    }

    /// True when every place with attributes declares a finite color domain.
    pub fn is_finite_color(&self) -> bool {
        self.places
            .iter()
            .all(|p| p.schema.is_empty() || p.colors.is_some())
    }

    pub fn action_transitions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.transitions.len()).filter(|&i| self.transitions[i].tag == Tag::Action)
    }

    pub fn evolution_transitions(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.transitions.len()).filter(|&i| self.transitions[i].tag == Tag::Evolution)
    }

    fn fresh_token(&mut self, time: f64, values: Vec<f64>) -> Token {
        let id = TokenId(self.next_token);
        self.next_token += 1;
        Token { id, time, values }
    }

    /// Appends a token to a place; values must match the place schema.
    pub fn add_token(&mut self, place: usize, time: f64, values: Vec<f64>) -> Result<TokenId, NetError> {
        let p = &self.places[place];
        if values.len() != p.schema.len() {
            return Err(NetError::Schema {
                place: p.id.clone(),
                reason: format!("expected {} attribute values, got {}", p.schema.len(), values.len()),
            });
        }
        if !(time >= 0.0) {
            return Err(NetError::Schema {
                place: p.id.clone(),
                reason: format!("token time {time} is negative"),
            });
        }
        let tok = self.fresh_token(time, values);
        let id = tok.id;
        self.places[place].marking.push(tok);
        Ok(id)
    }
}
