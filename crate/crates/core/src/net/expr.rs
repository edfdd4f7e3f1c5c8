//! Expression language for guards, rewards and arc inscriptions.
//!
//! Expressions are written against place ids (`"Waiting.budget"`) and are
//! compiled per transition into slot/attribute indices, so evaluation never
//! touches strings.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::{AttributeSchema, NetError, Token};

/// A real-valued expression over the tokens bound by a transition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueExpr {
    Const(f64),
    /// Uniform on `[lo, hi)`.
    Uniform([f64; 2]),
    /// Normal with `[mean, std]`.
    Normal([f64; 2]),
    /// Exponential with the given rate.
    Exponential(f64),
    /// Attribute of a bound token, `"place.attr"` or a bare `"attr"` when a
    /// single input place carries it.
    Attr(String),
    /// The current network clock.
    Clock,
    Add(Box<ValueExpr>, Box<ValueExpr>),
    Round {
        value: Box<ValueExpr>,
        decimals: u32,
    },
    /// Picks `cases[k]` where `k` is the (rounded) value of the `on` attribute.
    Switch {
        on: String,
        cases: Vec<ValueExpr>,
    },
}

impl ValueExpr {
    pub fn attr(path: impl Into<String>) -> Self {
        ValueExpr::Attr(path.into())
    }

    pub fn add(a: ValueExpr, b: ValueExpr) -> Self {
        ValueExpr::Add(Box::new(a), Box::new(b))
    }

    pub fn round(value: ValueExpr, decimals: u32) -> Self {
        ValueExpr::Round {
            value: Box::new(value),
            decimals,
        }
    }

    pub fn switch(on: impl Into<String>, cases: Vec<ValueExpr>) -> Self {
        ValueExpr::Switch {
            on: on.into(),
            cases,
        }
    }

    /// Rewrites place references. `place` maps a place id to its new id;
    /// `bare` names the place that owns an unqualified attribute, so bare
    /// references come out qualified.
    pub(crate) fn rename_places(&mut self, r: &Renamer<'_>) {
        match self {
            ValueExpr::Attr(path) => *path = r.path(path),
            ValueExpr::Switch { on, cases } => {
                *on = r.path(on);
                for c in cases {
                    c.rename_places(r);
                }
            }
            ValueExpr::Add(a, b) => {
                a.rename_places(r);
                b.rename_places(r);
            }
            ValueExpr::Round { value, .. } => value.rename_places(r),
            _ => {}
        }
    }
}

/// Place renaming used when rewriting expressions for an expanded net.
pub(crate) struct Renamer<'a> {
    pub place: &'a dyn Fn(&str) -> Option<String>,
    pub bare: &'a dyn Fn(&str) -> Option<String>,
}

impl Renamer<'_> {
    fn path(&self, path: &str) -> String {
        let (place, attr) = match path.split_once('.') {
            Some((p, a)) => (Some(p.to_string()), a),
            None => ((self.bare)(path), path),
        };
        match place {
            Some(p) => format!("{}.{attr}", (self.place)(&p).unwrap_or(p)),
            None => path.to_string(),
        }
    }

    fn id(&self, place: &str) -> String {
        (self.place)(place).unwrap_or_else(|| place.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }

    fn flip(self) -> Self {
        match self {
            CmpOp::Lt => CmpOp::Gt,
            CmpOp::Le => CmpOp::Ge,
            CmpOp::Gt => CmpOp::Lt,
            CmpOp::Ge => CmpOp::Le,
            other => other,
        }
    }
}

/// One comparison of a guard; a guard is the conjunction of its atoms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardAtom {
    pub lhs: ValueExpr,
    pub op: CmpOp,
    pub rhs: ValueExpr,
}

impl GuardAtom {
    pub fn new(lhs: ValueExpr, op: CmpOp, rhs: ValueExpr) -> Self {
        GuardAtom { lhs, op, rhs }
    }
}

/// Output arc inscription.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArcExpr {
    /// Copy the token bound on `from`, available at the firing time.
    Identity {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<String>,
    },
    /// Copy the token bound on `from`, available `by` time units after firing.
    Delay {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<String>,
        by: ValueExpr,
    },
    /// Copy `from` (if given) and overwrite or fill the listed attributes.
    SetAttrs {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<String>,
        attrs: BTreeMap<String, ValueExpr>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delay: Option<ValueExpr>,
    },
    /// Produce a fresh token from samplers only.
    Emit {
        attrs: BTreeMap<String, ValueExpr>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delay: Option<ValueExpr>,
    },
}

impl ArcExpr {
    pub(crate) fn rename_places(&mut self, r: &Renamer<'_>) {
        let (from, attrs, delay) = match self {
            ArcExpr::Identity { from } => (from, None, None),
            ArcExpr::Delay { from, by } => (from, None, Some(by)),
            ArcExpr::SetAttrs { from, attrs, delay } => (from, Some(attrs), delay.as_mut()),
            ArcExpr::Emit { attrs, delay } => {
                for e in attrs.values_mut() {
                    e.rename_places(r);
                }
                if let Some(d) = delay {
                    d.rename_places(r);
                }
                return;
            }
        };
        if let Some(f) = from {
            *f = r.id(f);
        }
        if let Some(attrs) = attrs {
            for e in attrs.values_mut() {
                e.rename_places(r);
            }
        }
        if let Some(d) = delay {
            d.rename_places(r);
        }
    }
}

/// Input slots of a transition as seen by the compiler: place id and schema,
/// in binding order.
pub(crate) struct SlotScope<'a> {
    pub transition: &'a str,
    pub slots: Vec<(&'a str, &'a AttributeSchema)>,
}

impl SlotScope<'_> {
    fn resolve(&self, path: &str) -> Result<(usize, usize), NetError> {
        let err = |reason: &str| NetError::Expression {
            transition: self.transition.to_string(),
            reason: format!("{reason} `{path}`"),
        };
        match path.split_once('.') {
            Some((place, attr)) => {
                let slot = self
                    .slots
                    .iter()
                    .position(|(p, _)| *p == place)
                    .ok_or_else(|| err("reference to a place that is not an input"))?;
                let idx = self.slots[slot]
                    .1
                    .index_of(attr)
                    .ok_or_else(|| err("unknown attribute"))?;
                Ok((slot, idx))
            }
            None => {
                let hits: Vec<(usize, usize)> = self
                    .slots
                    .iter()
                    .enumerate()
                    .filter_map(|(s, (_, schema))| schema.index_of(path).map(|i| (s, i)))
                    .collect();
                match hits.as_slice() {
                    [one] => Ok(*one),
                    [] => Err(err("unknown attribute")),
                    _ => Err(err("ambiguous attribute")),
                }
            }
        }
    }

    pub fn slot_of(&self, place: &str) -> Result<usize, NetError> {
        self.slots
            .iter()
            .position(|(p, _)| *p == place)
            .ok_or_else(|| NetError::Expression {
                transition: self.transition.to_string(),
                reason: format!("`{place}` is not an input place"),
            })
    }
}

#[derive(Clone, Debug)]
pub(crate) enum CExpr {
    Const(f64),
    Uniform(f64, f64),
    Normal(Normal<f64>),
    Exponential(Exp<f64>),
    Attr { slot: usize, idx: usize },
    Clock,
    Add(Box<CExpr>, Box<CExpr>),
    Round { value: Box<CExpr>, scale: f64 },
    Switch {
        slot: usize,
        idx: usize,
        cases: Vec<CExpr>,
    },
}

impl CExpr {
    pub fn compile(expr: &ValueExpr, scope: &SlotScope<'_>) -> Result<Self, NetError> {
        let bad = |reason: String| NetError::Expression {
            transition: scope.transition.to_string(),
            reason,
        };
        Ok(match expr {
            ValueExpr::Const(c) => CExpr::Const(*c),
            ValueExpr::Uniform([lo, hi]) => {
                if !(lo <= hi) {
                    return Err(bad(format!("uniform bounds [{lo}, {hi}]")));
                }
                CExpr::Uniform(*lo, *hi)
            }
            ValueExpr::Normal([m, s]) => CExpr::Normal(
                Normal::new(*m, *s).map_err(|e| bad(format!("normal({m}, {s}): {e}")))?,
            ),
            ValueExpr::Exponential(rate) => CExpr::Exponential(
                Exp::new(*rate).map_err(|e| bad(format!("exponential({rate}): {e}")))?,
            ),
            ValueExpr::Attr(path) => {
                let (slot, idx) = scope.resolve(path)?;
                CExpr::Attr { slot, idx }
            }
            ValueExpr::Clock => CExpr::Clock,
            ValueExpr::Add(a, b) => CExpr::Add(
                Box::new(CExpr::compile(a, scope)?),
                Box::new(CExpr::compile(b, scope)?),
            ),
            ValueExpr::Round { value, decimals } => CExpr::Round {
                value: Box::new(CExpr::compile(value, scope)?),
                scale: 10f64.powi(*decimals as i32),
            },
            ValueExpr::Switch { on, cases } => {
                if cases.is_empty() {
                    return Err(bad("switch without cases".into()));
                }
                let (slot, idx) = scope.resolve(on)?;
                CExpr::Switch {
                    slot,
                    idx,
                    cases: cases
                        .iter()
                        .map(|c| CExpr::compile(c, scope))
                        .collect::<Result<_, _>>()?,
                }
            }
        })
    }

    pub fn eval<R: Rng + ?Sized>(&self, bound: &[&Token], clock: f64, rng: &mut R) -> f64 {
        match self {
            CExpr::Const(c) => *c,
            CExpr::Uniform(lo, hi) => {
                if lo == hi {
                    *lo
                } else {
                    rng.random_range(*lo..*hi)
                }
            }
            CExpr::Normal(d) => d.sample(rng),
            CExpr::Exponential(d) => d.sample(rng),
            CExpr::Attr { slot, idx } => bound[*slot].values[*idx],
            CExpr::Clock => clock,
            CExpr::Add(a, b) => a.eval(bound, clock, rng) + b.eval(bound, clock, rng),
            CExpr::Round { value, scale } => (value.eval(bound, clock, rng) * scale).round() / scale,
            CExpr::Switch { slot, idx, cases } => {
                let k = bound[*slot].values[*idx].round();
                let k = if k < 0.0 { 0 } else { k as usize };
                cases[k.min(cases.len() - 1)].eval(bound, clock, rng)
            }
        }
    }

    pub fn is_random(&self) -> bool {
        match self {
            CExpr::Uniform(lo, hi) => lo != hi,
            CExpr::Normal(_) | CExpr::Exponential(_) => true,
            CExpr::Add(a, b) => a.is_random() || b.is_random(),
            CExpr::Round { value, .. } => value.is_random(),
            CExpr::Switch { cases, .. } => cases.iter().any(CExpr::is_random),
            _ => false,
        }
    }

    pub fn uses_clock(&self) -> bool {
        match self {
            CExpr::Clock => true,
            CExpr::Add(a, b) => a.uses_clock() || b.uses_clock(),
            CExpr::Round { value, .. } => value.uses_clock(),
            CExpr::Switch { cases, .. } => cases.iter().any(CExpr::uses_clock),
            _ => false,
        }
    }

    /// Deterministic evaluation for guard operands; guards reject samplers at
    /// compile time, so sampler arms only see degenerate distributions.
    fn value(&self, bound: &[&Token], clock: f64) -> f64 {
        match self {
            CExpr::Const(c) | CExpr::Uniform(c, _) => *c,
            CExpr::Normal(d) => d.mean(),
            CExpr::Exponential(_) => f64::NAN,
            CExpr::Attr { slot, idx } => bound[*slot].values[*idx],
            CExpr::Clock => clock,
            CExpr::Add(a, b) => a.value(bound, clock) + b.value(bound, clock),
            CExpr::Round { value, scale } => (value.value(bound, clock) * scale).round() / scale,
            CExpr::Switch { slot, idx, cases } => {
                let k = bound[*slot].values[*idx].round().max(0.0) as usize;
                cases[k.min(cases.len() - 1)].value(bound, clock)
            }
        }
    }
}

#[derive(Clone, Debug)]
struct CAtom {
    lhs: CExpr,
    op: CmpOp,
    rhs: CExpr,
}

/// Compiled conjunction of comparisons.
#[derive(Clone, Debug, Default)]
pub(crate) struct CGuard {
    atoms: Vec<CAtom>,
}

impl CGuard {
    pub fn compile(atoms: &[GuardAtom], scope: &SlotScope<'_>) -> Result<Self, NetError> {
        let mut out = Vec::with_capacity(atoms.len());
        for a in atoms {
            let lhs = CExpr::compile(&a.lhs, scope)?;
            let rhs = CExpr::compile(&a.rhs, scope)?;
            if lhs.is_random() || rhs.is_random() {
                return Err(NetError::Expression {
                    transition: scope.transition.to_string(),
                    reason: "guards must be deterministic".into(),
                });
            }
            out.push(CAtom { lhs, op: a.op, rhs });
        }
        Ok(CGuard { atoms: out })
    }

    pub fn holds(&self, bound: &[&Token], clock: f64) -> bool {
        self.atoms
            .iter()
            .all(|a| a.op.apply(a.lhs.value(bound, clock), a.rhs.value(bound, clock)))
    }

    /// Earliest time `t >= not_before` at which the guard holds, considering
    /// lower bounds of the form `clock >= e` / `clock > e`. Other atoms are
    /// checked at that single candidate time.
    pub fn earliest(&self, bound: &[&Token], not_before: f64) -> Option<f64> {
        let mut t = not_before;
        for a in &self.atoms {
            let (op, other) = match (&a.lhs, &a.rhs) {
                (CExpr::Clock, e) if !e.uses_clock() => (a.op, e),
                (e, CExpr::Clock) if !e.uses_clock() => (a.op.flip(), e),
                _ => continue,
            };
            let v = other.value(bound, t);
            match op {
                CmpOp::Ge => t = t.max(v),
                CmpOp::Gt if t <= v => t = v.next_up(),
                _ => {}
            }
        }
        self.holds(bound, t).then_some(t)
    }
}

/// Where a produced token's attribute comes from.
#[derive(Clone, Debug)]
pub(crate) enum AttrSource {
    Copy { slot: usize, idx: usize },
    Expr(CExpr),
}

/// Compiled output arc: builds one token for `place`.
#[derive(Clone, Debug)]
pub(crate) struct Producer {
    pub place: usize,
    pub delay: Option<CExpr>,
    pub attrs: Vec<AttrSource>,
}

impl Producer {
    pub fn compile(
        expr: &ArcExpr,
        place: usize,
        target: (&str, &AttributeSchema),
        scope: &SlotScope<'_>,
    ) -> Result<Self, NetError> {
        let (from, set, delay): (Option<&String>, Option<&BTreeMap<String, ValueExpr>>, Option<&ValueExpr>) =
            match expr {
                ArcExpr::Identity { from } => (from.as_ref(), None, None),
                ArcExpr::Delay { from, by } => (from.as_ref(), None, Some(by)),
                ArcExpr::SetAttrs { from, attrs, delay } => (from.as_ref(), Some(attrs), delay.as_ref()),
                ArcExpr::Emit { attrs, delay } => (None, Some(attrs), delay.as_ref()),
            };
        let violation = |reason: String| NetError::Schema {
            place: target.0.to_string(),
            reason,
        };
        let from_slot = match (from, expr) {
            (_, ArcExpr::Emit { .. }) => None,
            (Some(p), _) => Some(scope.slot_of(p)?),
            (None, _) if scope.slots.len() == 1 => Some(0),
            (None, _) => None,
        };
        if let Some(set) = set {
            if let Some(extra) = set.keys().find(|k| target.1.index_of(k).is_none()) {
                return Err(violation(format!(
                    "arc from `{}` sets unknown attribute `{extra}`",
                    scope.transition
                )));
            }
        }
        let mut attrs = Vec::with_capacity(target.1.len());
        for name in target.1.names() {
            if let Some(e) = set.and_then(|s| s.get(name)) {
                attrs.push(AttrSource::Expr(CExpr::compile(e, scope)?));
                continue;
            }
            let slot = from_slot.ok_or_else(|| {
                violation(format!(
                    "attribute `{name}` produced by `{}` has no source",
                    scope.transition
                ))
            })?;
            let idx = scope.slots[slot].1.index_of(name).ok_or_else(|| {
                violation(format!(
                    "attribute `{name}` missing on source place `{}`",
                    scope.slots[slot].0
                ))
            })?;
            attrs.push(AttrSource::Copy { slot, idx });
        }
        Ok(Producer {
            place,
            delay: delay.map(|d| CExpr::compile(d, scope)).transpose()?,
            attrs,
        })
    }

    /// Evaluates the produced token's time and attribute values.
    pub fn produce<R: Rng + ?Sized>(&self, bound: &[&Token], clock: f64, rng: &mut R) -> (f64, Vec<f64>) {
        let values = self
            .attrs
            .iter()
            .map(|a| match a {
                AttrSource::Copy { slot, idx } => bound[*slot].values[*idx],
                AttrSource::Expr(e) => e.eval(bound, clock, rng),
            })
            .collect();
        let delay = self
            .delay
            .as_ref()
            .map_or(0.0, |d| d.eval(bound, clock, rng).max(0.0));
        (clock + delay, values)
    }
}
