//! Benchmark task-assignment nets.
//!
//! All three share one shape: an `Arrival` generator place per task type
//! feeds `Waiting` through the evolution transition `Arrive`; the action
//! transition `Start` binds one resource and one waiting task, earns the
//! task's budget and returns the resource after its processing time.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::net::{
    ArcExpr, ArcSpec, AttributeSchema, CmpOp, ColorDomain, GuardAtom, MarkedAEPN, NetSpec, PlaceSpec, Tag,
    TokenSpec, TransitionSpec, ValueExpr,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemId {
    P1,
    P2,
    P3,
}

impl ProblemId {
    pub const ALL: [ProblemId; 3] = [ProblemId::P1, ProblemId::P2, ProblemId::P3];
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProblemId::P1 => "p1",
            ProblemId::P2 => "p2",
            ProblemId::P3 => "p3",
        })
    }
}

impl FromStr for ProblemId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "p1" | "1" => Ok(ProblemId::P1),
            "p2" | "2" => Ok(ProblemId::P2),
            "p3" | "3" => Ok(ProblemId::P3),
            other => Err(format!("unknown problem `{other}` (expected p1, p2 or p3)")),
        }
    }
}

/// How task budgets are drawn, per task type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetModel {
    Fixed(Vec<f64>),
    /// Uniform on `[lo, hi]` rounded to `decimals`.
    Uniform { ranges: Vec<[f64; 2]>, decimals: u32 },
    /// Normal with `[mean, std]`.
    Normal(Vec<[f64; 2]>),
}

/// Time between two arrivals of the same task type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalModel {
    Periodic(f64),
    Exponential(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: ProblemId,
    pub horizon: f64,
    pub arrivals: ArrivalModel,
    pub budgets: BudgetModel,
    /// Processing time of each resource; one resource per entry.
    pub processing_times: Vec<f64>,
    /// Rate of the exponential acceptance window; `None` means tasks wait
    /// indefinitely.
    pub window_rate: Option<f64>,
}

impl ProblemSpec {
    pub fn new(id: ProblemId) -> Self {
        match id {
            ProblemId::P1 => ProblemSpec {
                id,
                horizon: 10.0,
                arrivals: ArrivalModel::Periodic(1.0),
                budgets: BudgetModel::Fixed(vec![100.0, 200.0]),
                processing_times: vec![1.0],
                window_rate: None,
            },
            ProblemId::P2 => ProblemSpec {
                budgets: BudgetModel::Uniform {
                    ranges: vec![[70.0, 130.0], [170.0, 230.0]],
                    decimals: 2,
                },
                ..ProblemSpec::new(ProblemId::P1)
            }
            .with_id(id),
            ProblemId::P3 => ProblemSpec {
                id,
                horizon: 10.0,
                arrivals: ArrivalModel::Exponential(1.0),
                budgets: BudgetModel::Normal(vec![[100.0, 10.0], [200.0, 10.0]]),
                processing_times: vec![0.5, 1.5],
                window_rate: Some(0.5),
            },
        }
    }

    fn with_id(mut self, id: ProblemId) -> Self {
        self.id = id;
        self
    }

    fn task_types(&self) -> usize {
        match &self.budgets {
            BudgetModel::Fixed(v) => v.len(),
            BudgetModel::Uniform { ranges, .. } => ranges.len(),
            BudgetModel::Normal(v) => v.len(),
        }
    }

    fn budget_expr(&self) -> ValueExpr {
        let cases = match &self.budgets {
            BudgetModel::Fixed(v) => v.iter().map(|&b| ValueExpr::Const(b)).collect(),
            BudgetModel::Uniform { ranges, decimals } => ranges
                .iter()
                .map(|&r| ValueExpr::round(ValueExpr::Uniform(r), *decimals))
                .collect(),
            BudgetModel::Normal(v) => v.iter().map(|&p| ValueExpr::Normal(p)).collect(),
        };
        ValueExpr::switch("Arrival.type", cases)
    }

    /// Finite colors of waiting tasks, when budgets have finitely many values.
    fn waiting_colors(&self) -> Option<Vec<ColorDomain>> {
        if self.window_rate.is_some() {
            return None;
        }
        match &self.budgets {
            BudgetModel::Fixed(v) => Some(vec![ColorDomain::values(
                "type",
                (0..v.len()).map(|k| k as f64).collect(),
            )]),
            // Integer buckets over the budget ranges.
            BudgetModel::Uniform { ranges, .. } => Some(vec![ColorDomain::ranges("budget", ranges.clone(), 1.0)]),
            BudgetModel::Normal(_) => None,
        }
    }

    pub fn net_spec(&self) -> NetSpec {
        let types = self.task_types();
        let schema = |names: &[&str]| AttributeSchema::new(names.iter().copied()).expect("distinct names");
        let type_colors = Some(vec![ColorDomain::values("type", (0..types).map(|k| k as f64).collect())]);
        let resource_count = self.processing_times.len();
        let mut waiting_attrs = vec!["type", "budget"];
        if self.window_rate.is_some() {
            waiting_attrs.push("window_end");
        }
        let places = vec![
            PlaceSpec {
                id: "Arrival".into(),
                attrs: schema(&["type"]),
                colors: type_colors,
            },
            PlaceSpec {
                id: "Resources".into(),
                attrs: schema(&["id"]),
                colors: Some(vec![ColorDomain::values(
                    "id",
                    (0..resource_count).map(|k| k as f64).collect(),
                )]),
            },
            PlaceSpec {
                id: "Waiting".into(),
                attrs: schema(&waiting_attrs),
                colors: self.waiting_colors(),
            },
        ];

        let mut transitions = vec![
            TransitionSpec {
                id: "Arrive".into(),
                tag: Tag::Evolution,
                guard: Vec::new(),
                reward: None,
            },
            TransitionSpec {
                id: "Start".into(),
                tag: Tag::Action,
                guard: Vec::new(),
                reward: Some(ValueExpr::attr("Waiting.budget")),
            },
        ];

        let gap = match self.arrivals {
            ArrivalModel::Periodic(dt) => ValueExpr::Const(dt),
            ArrivalModel::Exponential(rate) => ValueExpr::Exponential(rate),
        };
        let mut task_attrs = BTreeMap::from([("budget".to_string(), self.budget_expr())]);
        if let Some(rate) = self.window_rate {
            task_attrs.insert(
                "window_end".into(),
                ValueExpr::add(ValueExpr::Clock, ValueExpr::Exponential(rate)),
            );
        }
        let processing = if self.processing_times.iter().all(|&p| p == self.processing_times[0]) {
            ValueExpr::Const(self.processing_times[0])
        } else {
            ValueExpr::switch(
                "Resources.id",
                self.processing_times.iter().map(|&p| ValueExpr::Const(p)).collect(),
            )
        };
        let arc = |s: &str, t: &str, expr: Option<ArcExpr>| ArcSpec {
            source: s.into(),
            target: t.into(),
            expr,
        };
        let mut arcs = vec![
            arc("Arrival", "Arrive", None),
            arc("Arrive", "Arrival", Some(ArcExpr::Delay { from: None, by: gap })),
            arc(
                "Arrive",
                "Waiting",
                Some(ArcExpr::SetAttrs {
                    from: Some("Arrival".into()),
                    attrs: task_attrs,
                    delay: None,
                }),
            ),
            arc("Resources", "Start", None),
            arc("Waiting", "Start", None),
            arc(
                "Start",
                "Resources",
                Some(ArcExpr::Delay {
                    from: Some("Resources".into()),
                    by: processing,
                }),
            ),
        ];
        if self.window_rate.is_some() {
            transitions.push(TransitionSpec {
                id: "Expire".into(),
                tag: Tag::Evolution,
                guard: vec![GuardAtom::new(
                    ValueExpr::Clock,
                    CmpOp::Ge,
                    ValueExpr::attr("Waiting.window_end"),
                )],
                reward: None,
            });
            arcs.push(arc("Waiting", "Expire", None));
        }

        let token = |attrs: &[(&str, f64)]| TokenSpec {
            time: 0.0,
            attrs: attrs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        };
        let initial_marking = BTreeMap::from([
            (
                "Arrival".to_string(),
                (0..types).map(|k| token(&[("type", k as f64)])).collect(),
            ),
            (
                "Resources".to_string(),
                (0..resource_count).map(|k| token(&[("id", k as f64)])).collect(),
            ),
        ]);
        NetSpec {
            places,
            transitions,
            arcs,
            initial_marking,
            tag: Tag::Evolution,
            horizon: self.horizon,
            initial_reward: 0.0,
            seed: 0,
            clock: None,
            cum_reward: None,
        }
    }

    pub fn build(&self) -> MarkedAEPN {
        MarkedAEPN::build(&self.net_spec()).expect("benchmark nets are valid")
    }
}

/// Fixed budgets 100/200 by type, one arrival of each type per time unit,
/// one resource with unit processing time.
pub fn build_problem1() -> MarkedAEPN {
    ProblemSpec::new(ProblemId::P1).build()
}

/// As problem 1 with budgets uniform on [70, 130] / [170, 230], two decimals.
pub fn build_problem2() -> MarkedAEPN {
    ProblemSpec::new(ProblemId::P2).build()
}

/// Exponential arrivals per type, normal budgets, expiring acceptance windows
/// and two resources with different processing times.
pub fn build_problem3() -> MarkedAEPN {
    ProblemSpec::new(ProblemId::P3).build()
}

pub fn build_problem(id: ProblemId) -> MarkedAEPN {
    ProblemSpec::new(id).build()
}

/// Small worked example: one resource and two waiting projects (budgets 100
/// and 200) at a decision point. Assigned projects move to `Busy`.
pub fn example_net() -> NetSpec {
    let mut spec = ProblemSpec::new(ProblemId::P1).net_spec();
    spec.places.push(PlaceSpec {
        id: "Busy".into(),
        attrs: AttributeSchema::new(["type", "budget"]).expect("distinct names"),
        colors: None,
    });
    spec.arcs.push(ArcSpec {
        source: "Start".into(),
        target: "Busy".into(),
        expr: Some(ArcExpr::Identity {
            from: Some("Waiting".into()),
        }),
    });
    let tok = |time: f64, attrs: &[(&str, f64)]| TokenSpec {
        time,
        attrs: attrs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
    };
    spec.initial_marking.insert(
        "Arrival".into(),
        vec![tok(1.0, &[("type", 0.0)]), tok(1.0, &[("type", 1.0)])],
    );
    spec.initial_marking.insert(
        "Waiting".into(),
        vec![
            tok(0.0, &[("type", 0.0), ("budget", 100.0)]),
            tok(0.0, &[("type", 1.0), ("budget", 200.0)]),
        ],
    );
    spec.tag = Tag::Action;
    spec
}
