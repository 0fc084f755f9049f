//! Two-phase transmission schedules.
//!
//! Phase 1 (side-information learning) lets subsets of users transmit while
//! the other users and all relays listen; phase 2 (space-time relay
//! transmission) is relay-only broadcast. The schedule also answers, for any
//! user and symbol, what that symbol is to the user once phase 1 is over
//! ([`SymbolRole`]), which drives both precoder verification and decoding.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::RangeInclusive;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Symbol s_{dest,src}: sent by user `src`, wanted by user `dest`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SymbolId {
    pub dest: usize,
    pub src: usize,
}

impl SymbolId {
    /// Panics if `dest == src`.
    pub fn new(dest: usize, src: usize) -> Self {
        assert_ne!(dest, src, "a symbol cannot be addressed to its own sender");
        SymbolId { dest, src }
    }
}

impl fmt::Display for SymbolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{},{}", self.dest, self.src)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Node {
    User(usize),
    /// All relays, which always act together.
    Relays,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotPlan {
    pub sources: BTreeSet<Node>,
    pub destinations: BTreeSet<Node>,
    pub relay_listen: bool,
}

impl SlotPlan {
    fn uplink(sources: impl IntoIterator<Item = usize>, listeners: impl IntoIterator<Item = usize>) -> Self {
        let mut destinations: BTreeSet<Node> = listeners.into_iter().map(Node::User).collect();
        destinations.insert(Node::Relays);
        SlotPlan { sources: sources.into_iter().map(Node::User).collect(), destinations, relay_listen: true }
    }

    fn broadcast(users: usize) -> Self {
        SlotPlan {
            sources: BTreeSet::from([Node::Relays]),
            destinations: (1..=users).map(Node::User).collect(),
            relay_listen: false,
        }
    }

    /// Users that receive in this slot.
    pub fn listening_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.destinations.iter().filter_map(|n| match n {
            Node::User(u) => Some(*u),
            Node::Relays => None,
        })
    }
}

/// What a symbol is to a given user at decoding time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolRole {
    /// Addressed to the user.
    Desired,
    /// Someone else's symbol that shares a phase-1 equation with the user's
    /// desired symbols; it is resolved jointly by the ZF decoder.
    Resolvable,
    /// Sent by the user itself.
    Own,
    /// Overheard in phase-1 slot `slot` in an equation without desired
    /// symbols; the relay must reproduce that equation's coefficient.
    Overheard { slot: usize },
    /// Never seen by the user; the relay must neutralize it.
    Unmanageable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Scenario {
    /// Two-pair two-way interference channel with a two-antenna relay.
    Twic,
    /// Two-pair two-way X channel with a two-antenna relay.
    Twxc,
    /// K1 users, full unicast exchange, interference neutralization only.
    Case1 { k1: usize },
    /// K2 users, each sending to K2-2 others, neutralization plus alignment.
    Case2 { k2: usize },
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Twic => "twic",
            Scenario::Twxc => "twxc",
            Scenario::Case1 { .. } => "case1",
            Scenario::Case2 { .. } => "case2",
        }
    }

    /// Number of users taking part.
    pub fn users(&self) -> usize {
        match *self {
            Scenario::Twic | Scenario::Twxc => 4,
            Scenario::Case1 { k1 } => k1,
            Scenario::Case2 { k2 } => k2,
        }
    }

    pub fn schedule(&self) -> Result<Schedule> {
        match *self {
            Scenario::Twic => Ok(schedule_twic()),
            Scenario::Twxc => Ok(schedule_twxc()),
            Scenario::Case1 { k1 } => schedule_case1(k1),
            Scenario::Case2 { k2 } => schedule_case2(k2),
        }
    }

    /// Sum-DoF the construction delivers: symbols over slots.
    pub fn expected_dof(&self) -> Rational64 {
        let r = |n: usize, d: usize| Rational64::new(n as i64, d as i64);
        match *self {
            Scenario::Twic => r(4, 3),
            Scenario::Twxc => r(8, 5),
            Scenario::Case1 { k1 } => r(k1 * (k1 - 1), 2 * k1 - 2),
            Scenario::Case2 { k2 } => r(k2 * (k2 - 2), 2 * k2 - 3),
        }
    }

    /// Rank of every user's effective decoding matrix.
    pub fn expected_rank(&self) -> usize {
        match *self {
            Scenario::Twic | Scenario::Twxc => 2,
            Scenario::Case1 { k1 } => k1 - 1,
            Scenario::Case2 { k2 } => k2 - 2,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Case1 { k1 } => write!(f, "case1(k1={k1})"),
            Scenario::Case2 { k2 } => write!(f, "case2(k2={k2})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub scenario: Scenario,
    pub users: usize,
    /// Slot plans; slot `t` is `slots[t - 1]`.
    pub slots: Vec<SlotPlan>,
    pub phase1_len: usize,
    pub phase2_len: usize,
    /// (phase-1 slot, transmitting user) -> symbol sent.
    pub symbol_plan: BTreeMap<(usize, usize), SymbolId>,
}

impl Schedule {
    fn new(scenario: Scenario, users: usize, phase1: Vec<Vec<SymbolId>>, listeners: Vec<Vec<usize>>, phase2_len: usize) -> Self {
        let mut slots = Vec::new();
        let mut symbol_plan = BTreeMap::new();
        for (idx, (syms, heard)) in phase1.into_iter().zip(listeners).enumerate() {
            let t = idx + 1;
            slots.push(SlotPlan::uplink(syms.iter().map(|s| s.src), heard));
            for s in syms {
                symbol_plan.insert((t, s.src), s);
            }
        }
        let phase1_len = slots.len();
        slots.extend((0..phase2_len).map(|_| SlotPlan::broadcast(users)));
        Schedule { scenario, users, slots, phase1_len, phase2_len, symbol_plan }
    }

    /// Total number of slots.
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Plan of slot `t` (1-based).
    pub fn slot(&self, t: usize) -> &SlotPlan {
        &self.slots[t - 1]
    }

    pub fn phase1_slots(&self) -> RangeInclusive<usize> {
        1..=self.phase1_len
    }

    pub fn phase2_slots(&self) -> RangeInclusive<usize> {
        self.phase1_len + 1..=self.len()
    }

    pub fn is_phase2(&self, t: usize) -> bool {
        t > self.phase1_len && t <= self.len()
    }

    /// Symbols sent in slot `t`, ordered by transmitting user.
    pub fn transmissions(&self, t: usize) -> Vec<SymbolId> {
        self.symbol_plan.range((t, 0)..(t + 1, 0)).map(|(_, s)| *s).collect()
    }

    /// Every symbol of the schedule in `SymbolId` order.
    pub fn symbols(&self) -> Vec<SymbolId> {
        let set: BTreeSet<SymbolId> = self.symbol_plan.values().copied().collect();
        set.into_iter().collect()
    }

    /// Phase-1 slot in which `sym` is transmitted.
    pub fn slot_of(&self, sym: SymbolId) -> Option<usize> {
        self.symbol_plan.iter().find(|(_, s)| **s == sym).map(|((t, _), _)| *t)
    }

    /// Symbols addressed to `user`.
    pub fn desired(&self, user: usize) -> Vec<SymbolId> {
        self.symbols().into_iter().filter(|s| s.dest == user).collect()
    }

    /// Symbols sent by `user`.
    pub fn own(&self, user: usize) -> Vec<SymbolId> {
        self.symbols().into_iter().filter(|s| s.src == user).collect()
    }

    /// Phase-1 slots in which `user` listens.
    pub fn listened_slots(&self, user: usize) -> Vec<usize> {
        self.phase1_slots()
            .filter(|&t| self.slot(t).destinations.contains(&Node::User(user)))
            .collect()
    }

    /// Classifies `sym` from the point of view of `user`.
    pub fn role(&self, user: usize, sym: SymbolId) -> SymbolRole {
        if sym.dest == user {
            return SymbolRole::Desired;
        }
        if sym.src == user {
            return SymbolRole::Own;
        }
        let Some(t) = self.slot_of(sym) else {
            return SymbolRole::Unmanageable;
        };
        if !self.slot(t).destinations.contains(&Node::User(user)) {
            return SymbolRole::Unmanageable;
        }
        if self.transmissions(t).iter().any(|s| s.dest == user) {
            SymbolRole::Resolvable
        } else {
            SymbolRole::Overheard { slot: t }
        }
    }

    /// Achieved sum-DoF of the schedule: symbols over slots.
    pub fn dof(&self) -> Rational64 {
        Rational64::new(self.symbols().len() as i64, self.len() as i64)
    }

    /// Checks the structural invariants every schedule must satisfy.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.slots.len() != self.phase1_len + self.phase2_len {
            return bad("slot count differs from phase lengths".into());
        }
        for (idx, plan) in self.slots.iter().enumerate() {
            let t = idx + 1;
            if !plan.sources.is_disjoint(&plan.destinations) {
                return bad(format!("slot {t} is not half-duplex"));
            }
            let relay_sends = plan.sources.contains(&Node::Relays);
            if t <= self.phase1_len && relay_sends {
                return bad(format!("relay transmits in phase-1 slot {t}"));
            }
            if t > self.phase1_len && plan.sources.iter().any(|n| matches!(n, Node::User(_))) {
                return bad(format!("user transmits in phase-2 slot {t}"));
            }
        }
        let mut seen = BTreeSet::new();
        for (&(t, src), sym) in &self.symbol_plan {
            if t > self.phase1_len || sym.src != src || !self.slot(t).sources.contains(&Node::User(src)) {
                return bad(format!("{sym} is not sent by its source in phase 1"));
            }
            if !seen.insert(*sym) {
                return bad(format!("{sym} transmitted twice"));
            }
        }
        Ok(())
    }
}

/// k_j = ((k - 1 + j) mod k2) + 1.
pub fn index_fn(k: usize, j: usize, k2: usize) -> usize {
    (k - 1 + j) % k2 + 1
}

/// Two-pair two-way interference channel: pairs (1,3) and (2,4), three slots.
pub fn schedule_twic() -> Schedule {
    let s = SymbolId::new;
    Schedule::new(
        Scenario::Twic,
        4,
        vec![vec![s(3, 1), s(4, 2)], vec![s(1, 3), s(2, 4)]],
        vec![vec![3, 4], vec![1, 2]],
        1,
    )
}

/// Two-pair two-way X channel: users {1,2} and {3,4} exchange all cross
/// messages over four uplink slots and one relay slot.
pub fn schedule_twxc() -> Schedule {
    let s = SymbolId::new;
    Schedule::new(
        Scenario::Twxc,
        4,
        vec![
            vec![s(3, 1), s(3, 2)],
            vec![s(4, 1), s(4, 2)],
            vec![s(1, 3), s(1, 4)],
            vec![s(2, 3), s(2, 4)],
        ],
        vec![vec![3, 4], vec![3, 4], vec![1, 2], vec![1, 2]],
        1,
    )
}

/// In slot k every user but k sends its symbol for k; k1-2 relay slots follow.
pub fn schedule_case1(k1: usize) -> Result<Schedule> {
    if k1 < 3 {
        return Err(Error::InvalidUserCount { got: k1, min: 3 });
    }
    let phase1 = (1..=k1)
        .map(|k| (1..=k1).filter(|&i| i != k).map(|i| SymbolId::new(k, i)).collect())
        .collect();
    let listeners = (1..=k1).map(|k| vec![k]).collect();
    Ok(Schedule::new(Scenario::Case1 { k1 }, k1, phase1, listeners, k1 - 2))
}

/// In slot k users k_2..k_{K2-1} send to k while k and k_1 listen; k2-3
/// relay slots follow.
pub fn schedule_case2(k2: usize) -> Result<Schedule> {
    if k2 < 4 {
        return Err(Error::InvalidUserCount { got: k2, min: 4 });
    }
    let phase1 = (1..=k2)
        .map(|k| (2..k2).map(|j| SymbolId::new(k, index_fn(k, j, k2))).collect())
        .collect();
    let listeners = (1..=k2).map(|k| vec![k, index_fn(k, 1, k2)]).collect();
    Ok(Schedule::new(Scenario::Case2 { k2 }, k2, phase1, listeners, k2 - 3))
}
