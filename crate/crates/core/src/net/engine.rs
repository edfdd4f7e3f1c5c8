//! Firing semantics: binding enumeration, firing, clock advancement and the
//! alternation between action and evolution phases.

use rand::Rng;

use super::{Binding, MarkedAEPN, NetError, Tag, Token};

/// Evolution firings allowed at a single clock instant before the net is
/// declared livelocked.
pub const LIVELOCK_LIMIT: usize = 100_000;

/// Outcome of running the environment side of the net.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// At least one action binding is enabled; the tag is `A`.
    Decision,
    /// The clock reached the horizon.
    Done,
}

/// Iterates the cross product of the markings of `inputs`, first input
/// slowest, each place in insertion order.
fn for_each_combination<'a>(
    net: &'a MarkedAEPN,
    inputs: &[usize],
    mut visit: impl FnMut(&[&'a Token]),
) {
    let markings: Vec<&'a [Token]> = inputs.iter().map(|&p| net.places[p].marking.as_slice()).collect();
    if markings.iter().any(|m| m.is_empty()) {
        return;
    }
    let mut cursor = vec![0usize; inputs.len()];
    let mut bound: Vec<&'a Token> = markings.iter().map(|m| &m[0]).collect();
    loop {
        visit(&bound);
        let mut k = inputs.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            cursor[k] += 1;
            if cursor[k] < markings[k].len() {
                bound[k] = &markings[k][cursor[k]];
                break;
            }
            cursor[k] = 0;
            bound[k] = &markings[k][0];
        }
    }
}

fn max_time(bound: &[&Token]) -> f64 {
    bound.iter().fold(0.0f64, |m, t| m.max(t.time))
}

impl MarkedAEPN {
    /// Guard-satisfying bindings of `tr` whose enabling time is not after the
    /// clock, ordered by input place id and then token insertion order.
    pub fn enabled_bindings(&self, tr: usize) -> Vec<Binding> {
        let t = &self.transitions[tr];
        let mut out = Vec::new();
        for_each_combination(self, &t.inputs, |bound| {
            let enabling_time = max_time(bound);
            if enabling_time <= self.clock && t.guard.holds(bound, self.clock) {
                out.push(Binding {
                    assignments: t.inputs.iter().copied().zip(bound.iter().map(|&tok| tok.clone())).collect(),
                    enabling_time,
                });
            }
        });
        out
    }

    fn has_enabled(&self, tr: usize) -> bool {
        let t = &self.transitions[tr];
        let mut found = false;
        for_each_combination(self, &t.inputs, |bound| {
            found = found || (max_time(bound) <= self.clock && t.guard.holds(bound, self.clock));
        });
        found
    }

    /// Whether any action transition has an enabled binding.
    pub fn has_action_binding(&self) -> bool {
        self.action_transitions().any(|t| self.has_enabled(t))
    }

    /// Number of enabled bindings over all action transitions.
    pub fn action_binding_count(&self) -> usize {
        self.action_transitions().map(|t| self.enabled_bindings(t).len()).sum()
    }

    /// Fires `tr` with binding `b` and returns the reward it earned.
    pub fn fire(&mut self, tr: usize, b: &Binding) -> Result<f64, NetError> {
        let t = &self.transitions[tr];
        if t.tag != self.tag {
            return Err(NetError::TagMismatch {
                id: t.id.clone(),
                transition: t.tag,
                tag: self.tag,
            });
        }
        if b.assignments.len() != t.inputs.len()
            || b.assignments.iter().zip(&t.inputs).any(|((p, _), q)| p != q)
        {
            return Err(NetError::NotEnabled(t.id.clone()));
        }
        let mut positions = Vec::with_capacity(b.assignments.len());
        for (p, tok) in &b.assignments {
            match self.places[*p].marking.iter().position(|m| m.id == tok.id) {
                Some(i) => positions.push(i),
                None => return Err(NetError::StaleBinding(t.id.clone())),
            }
        }
        let bound: Vec<&Token> = b
            .assignments
            .iter()
            .zip(&positions)
            .map(|((p, _), &i)| &self.places[*p].marking[i])
            .collect();
        if max_time(&bound) > self.clock || !t.guard.holds(&bound, self.clock) {
            return Err(NetError::NotEnabled(t.id.clone()));
        }

        let clock = self.clock;
        let mut rng = self.rng.clone();
        let reward = t.reward.as_ref().map_or(0.0, |r| r.eval(&bound, clock, &mut rng));
        let produced: Vec<(usize, f64, Vec<f64>)> = t
            .producers
            .iter()
            .map(|prod| {
                let (time, values) = prod.produce(&bound, clock, &mut rng);
                (prod.place, time, values)
            })
            .collect();
        self.rng = rng;

        for (p, tok) in &b.assignments {
            self.places[*p].marking.retain(|m| m.id != tok.id);
        }
        for (p, time, values) in produced {
            let tok = self.fresh_token(time, values);
            self.places[p].marking.push(tok);
        }
        self.cum_reward += reward;
        Ok(reward)
    }

    /// Earliest time after the clock at which some transition becomes
    /// enabled, or `+inf` when nothing ever will.
    pub fn clock_advance_target(&self) -> f64 {
        let mut best = f64::INFINITY;
        for t in &self.transitions {
            for_each_combination(self, &t.inputs, |bound| {
                let not_before = max_time(bound).max(self.clock);
                if let Some(at) = t.guard.earliest(bound, not_before) {
                    best = best.min(at);
                }
            });
        }
        best
    }

    /// Sets the tag to `A` if any action binding is enabled, `E` otherwise.
    pub fn refresh_tag(&mut self) -> Tag {
        self.tag = if self.has_action_binding() {
            Tag::Action
        } else {
            Tag::Evolution
        };
        self.tag
    }

    /// Runs the environment until the agent has a decision to make or the
    /// horizon is reached.
    ///
    /// Evolution transitions enabled at the current instant fire in uniformly
    /// random order until none is left; then the tag flips to `A` if an action
    /// binding exists, otherwise the clock jumps to the next enabling time.
    pub fn run_until_decision(&mut self) -> Result<Phase, NetError> {
        if self.tag == Tag::Action && self.has_action_binding() {
            return Ok(Phase::Decision);
        }
        self.tag = Tag::Evolution;
        let mut firings_at_instant = 0usize;
        loop {
            if self.is_done() {
                return Ok(Phase::Done);
            }
            let mut candidates: Vec<(usize, Binding)> = Vec::new();
            for tr in self.evolution_transitions().collect::<Vec<_>>() {
                candidates.extend(self.enabled_bindings(tr).into_iter().map(|b| (tr, b)));
            }
            if !candidates.is_empty() {
                firings_at_instant += 1;
                if firings_at_instant > LIVELOCK_LIMIT {
                    return Err(NetError::Livelock(LIVELOCK_LIMIT));
                }
                let k = if candidates.len() == 1 {
                    0
                } else {
                    self.rng.random_range(0..candidates.len())
                };
                let (tr, b) = candidates.swap_remove(k);
                self.fire(tr, &b)?;
                continue;
            }
            if self.has_action_binding() {
                self.tag = Tag::Action;
                return Ok(Phase::Decision);
            }
            let next = self.clock_advance_target();
            if next >= self.horizon || next <= self.clock {
                self.clock = self.clock.max(self.horizon);
                return Ok(Phase::Done);
            }
            self.clock = next;
            firings_at_instant = 0;
        }
    }
}
