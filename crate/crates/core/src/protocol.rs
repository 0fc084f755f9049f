//! Two-phase protocol execution: uplink, relay processing, relay broadcast
//! and per-user decoding.
//!
//! Observations are stored normalized. A phase-1 observation is divided by
//! `sqrt(P)` and a phase-2 observation by the relay slot gain, both of which
//! receivers know. With this scaling an aligned phase-2 coefficient equals
//! the stored phase-1 coefficient exactly, so an overheard equation can be
//! subtracted as is.

use std::collections::BTreeMap;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channels, sample_cn, sample_nonzero, stream_rng, ChannelSet, NetworkConfig, Seed, CHANNEL_STREAMS};
use crate::error::{Error, Result};
use crate::linalg::{rank, zf_solve, CMatrix, Tolerance, C64};
use crate::precoder::{design, PrecoderMode, PrecoderSet, verify_constraints};
use crate::scheduler::{Scenario, Schedule, SymbolId, SymbolRole};

const SYMBOL_STREAM: u64 = CHANNEL_STREAMS;
const PHASE1_NOISE_STREAM: u64 = CHANNEL_STREAMS + 1;
const PHASE2_NOISE_STREAM: u64 = CHANNEL_STREAMS + 2;

pub type CoeffMap = BTreeMap<SymbolId, C64>;

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolVector {
    pub values: BTreeMap<SymbolId, C64>,
}

impl SymbolVector {
    /// Unit-power complex Gaussian symbols for every symbol of `sched`.
    pub fn draw(sched: &Schedule, seed: Seed) -> Self {
        let mut rng = stream_rng(seed, SYMBOL_STREAM);
        let values = sched.symbols().into_iter().map(|s| (s, sample_nonzero(&mut rng))).collect();
        SymbolVector { values }
    }

    pub fn get(&self, sym: SymbolId) -> C64 {
        self.values[&sym]
    }

    /// The symbols sent by `user`.
    pub fn own(&self, user: usize) -> CoeffMap {
        self.values.iter().filter(|(s, _)| s.src == user).map(|(s, v)| (*s, *v)).collect()
    }
}

/// Split of a phase-2 coefficient map by what each symbol is to the receiver.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubEquations {
    pub desired: CoeffMap,
    pub resolvable: CoeffMap,
    pub self_interference: CoeffMap,
    /// Keyed by the phase-1 slot whose equation the terms should reproduce.
    pub overheard: BTreeMap<usize, CoeffMap>,
    pub unmanageable: CoeffMap,
}

/// One scalar observation at a user.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub slot: usize,
    pub coeffs: CoeffMap,
    pub observed: C64,
    /// Present for phase-2 equations.
    pub parts: Option<SubEquations>,
}

/// The vector a relay received in one phase-1 slot.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayObservation {
    pub relay: usize,
    pub slot: usize,
    pub coeffs: BTreeMap<SymbolId, CMatrix>,
    pub observed: CMatrix,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EquationLedger {
    pub users: BTreeMap<usize, Vec<Equation>>,
    /// Indexed by relay.
    pub relays: Vec<Vec<RelayObservation>>,
}

fn apply(coeffs: &CoeffMap, syms: &SymbolVector) -> C64 {
    coeffs.iter().map(|(s, c)| c * syms.get(*s)).sum()
}

impl EquationLedger {
    pub fn user(&self, k: usize) -> &[Equation] {
        self.users.get(&k).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Largest gap between an observation and its coefficient map applied to
    /// `syms`, over every user and relay equation. Zero without noise.
    pub fn linearity_residual(&self, syms: &SymbolVector) -> f64 {
        let users = self.users.values().flatten().map(|e| (e.observed - apply(&e.coeffs, syms)).norm());
        let relays = self.relays.iter().flatten().flat_map(|o| {
            (0..o.observed.rows()).map(move |a| {
                let predicted: C64 = o.coeffs.iter().map(|(s, c)| c[(a, 0)] * syms.get(*s)).sum();
                (o.observed[(a, 0)] - predicted).norm()
            })
        });
        users.chain(relays).fold(0.0, f64::max)
    }

    /// Largest gap between the overheard part of a phase-2 equation and the
    /// phase-1 equation it should reproduce, over all users. A missing or
    /// extra symbol counts with its full coefficient.
    pub fn alignment_residual(&self, sched: &Schedule) -> f64 {
        let mut worst: f64 = 0.0;
        for eqs in self.users.values() {
            for e in eqs {
                let Some(parts) = &e.parts else { continue };
                for (m, oi) in &parts.overheard {
                    let stored = eqs.iter().find(|x| x.slot == *m && !sched.is_phase2(x.slot));
                    let empty = CoeffMap::new();
                    let target = stored.map_or(&empty, |x| &x.coeffs);
                    for s in oi.keys().chain(target.keys()) {
                        let a = oi.get(s).copied().unwrap_or_default();
                        let b = target.get(s).copied().unwrap_or_default();
                        worst = worst.max((a - b).norm());
                    }
                }
            }
        }
        worst
    }

    /// Largest unmanageable coefficient left in any phase-2 equation.
    pub fn neutralization_residual(&self) -> f64 {
        self.users
            .values()
            .flatten()
            .filter_map(|e| e.parts.as_ref())
            .flat_map(|p| p.unmanageable.values())
            .map(|c| c.norm())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelayMode {
    DecodeForward,
    LinearForward,
}

impl RelayMode {
    /// The two-pair examples decode at the relay; the general constructions
    /// forward linearly.
    pub fn for_scenario(scenario: Scenario) -> Self {
        match scenario {
            Scenario::Twic | Scenario::Twxc => RelayMode::DecodeForward,
            Scenario::Case1 { .. } | Scenario::Case2 { .. } => RelayMode::LinearForward,
        }
    }
}

/// What the relays send in phase 2.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayPlan {
    pub mode: RelayMode,
    pub gains: BTreeMap<usize, f64>,
    /// (relay, phase-2 slot) -> transmitted vector.
    pub signals: BTreeMap<(usize, usize), CMatrix>,
    /// (relay, phase-2 slot) -> per-symbol part of the transmitted vector.
    pub coeffs: BTreeMap<(usize, usize), BTreeMap<SymbolId, CMatrix>>,
}

/// Phase 1: every user transmits `sqrt(P) s`, listeners and relays store one
/// equation per slot.
pub fn run_phase1(sched: &Schedule, ch: &ChannelSet, syms: &SymbolVector, cfg: &NetworkConfig, seed: Seed) -> EquationLedger {
    let mut rng = stream_rng(seed, PHASE1_NOISE_STREAM);
    let amp = cfg.power.sqrt();
    let mut ledger = EquationLedger { users: BTreeMap::new(), relays: vec![Vec::new(); ch.relays()] };
    for t in sched.phase1_slots() {
        let sent = sched.transmissions(t);
        for j in sched.slot(t).listening_users() {
            let coeffs: CoeffMap = sent.iter().map(|&s| (s, ch.direct(j, s.src, t))).collect();
            let noise = sample_cn(&mut rng, cfg.noise_var);
            let observed = (apply(&coeffs, syms) * amp + noise) / amp;
            ledger.users.entry(j).or_default().push(Equation { slot: t, coeffs, observed, parts: None });
        }
        if !sched.slot(t).relay_listen {
            continue;
        }
        for (l, store) in ledger.relays.iter_mut().enumerate() {
            let m = ch.relay_antennas()[l];
            let coeffs: BTreeMap<SymbolId, CMatrix> = sent.iter().map(|&s| (s, ch.uplink(l, s.src, t).clone())).collect();
            let mut observed = CMatrix::zeros(m, 1);
            for (s, h) in &coeffs {
                observed = &observed + &h.scale(syms.get(*s));
            }
            for a in 0..m {
                let y = observed[(a, 0)] * amp + sample_cn(&mut rng, cfg.noise_var);
                observed[(a, 0)] = y / amp;
            }
            store.push(RelayObservation { relay: l, slot: t, coeffs, observed });
        }
    }
    ledger
}

/// Turns the relays' stored observations into phase-2 transmit vectors.
pub fn relay_process(
    ledger: &EquationLedger,
    p: &PrecoderSet,
    ch: &ChannelSet,
    sched: &Schedule,
    mode: RelayMode,
) -> Result<RelayPlan> {
    let mut plan = RelayPlan { mode, gains: BTreeMap::new(), signals: BTreeMap::new(), coeffs: BTreeMap::new() };
    for t in sched.phase2_slots() {
        plan.gains.insert(t, p.gain(t));
    }
    match mode {
        RelayMode::DecodeForward => {
            let estimates = relay_decode(ledger, sched)?;
            for t in sched.phase2_slots() {
                let alpha = C64::new(p.gain(t), 0.0);
                for l in 0..ch.relays() {
                    let m = ch.relay_antennas()[l];
                    let mut x = CMatrix::zeros(m, 1);
                    let mut parts = BTreeMap::new();
                    for (&s, &est) in &estimates {
                        let beam = p.symbol_beam(ch, sched, l, t, s).scale(alpha);
                        x = &x + &beam.scale(est);
                        parts.insert(s, beam);
                    }
                    plan.signals.insert((l, t), x);
                    plan.coeffs.insert((l, t), parts);
                }
            }
        }
        RelayMode::LinearForward => {
            if p.mode != PrecoderMode::PerBlock {
                return Err(Error::InvalidConfig("linear forwarding needs per-block relay matrices".into()));
            }
            for t in sched.phase2_slots() {
                let alpha = C64::new(p.gain(t), 0.0);
                for (l, observations) in ledger.relays.iter().enumerate() {
                    let m = ch.relay_antennas()[l];
                    let mut x = CMatrix::zeros(m, 1);
                    let mut parts: BTreeMap<SymbolId, CMatrix> = BTreeMap::new();
                    for obs in observations {
                        let Some(v) = p.per_block.get(&(l, t, obs.slot)) else {
                            continue;
                        };
                        let v = v.scale(alpha);
                        x = &x + &(&v * &obs.observed);
                        for (s, h) in &obs.coeffs {
                            let term = &v * h;
                            let acc = parts.remove(s).unwrap_or_else(|| CMatrix::zeros(m, 1));
                            parts.insert(*s, &acc + &term);
                        }
                    }
                    plan.signals.insert((l, t), x);
                    plan.coeffs.insert((l, t), parts);
                }
            }
        }
    }
    Ok(plan)
}

/// Zero-forcing estimate of every scheduled symbol from all relay antennas.
fn relay_decode(ledger: &EquationLedger, sched: &Schedule) -> Result<BTreeMap<SymbolId, C64>> {
    let symbols = sched.symbols();
    let mut rows = Vec::new();
    let mut ys = Vec::new();
    for obs in ledger.relays.iter().flatten() {
        for a in 0..obs.observed.rows() {
            rows.push(symbols.iter().map(|s| obs.coeffs.get(s).map_or(C64::new(0.0, 0.0), |c| c[(a, 0)])).collect());
            ys.push(obs.observed[(a, 0)]);
        }
    }
    if rows.len() < symbols.len() {
        return Err(Error::RankDeficient { rank: rows.len(), expected: symbols.len() });
    }
    let h = CMatrix::from_rows(&rows);
    let s = zf_solve(&h, &CMatrix::column(&ys), &Tolerance::default())?;
    Ok(symbols.into_iter().enumerate().map(|(i, sym)| (sym, s[(i, 0)])).collect())
}

/// Phase 2: every listening user stores the relay broadcast, normalized by the
/// slot gain, with its coefficient map split by symbol role.
pub fn run_phase2(
    ledger: &mut EquationLedger,
    plan: &RelayPlan,
    sched: &Schedule,
    ch: &ChannelSet,
    noise_var: f64,
    seed: Seed,
) {
    let mut rng = stream_rng(seed, PHASE2_NOISE_STREAM);
    for t in sched.phase2_slots() {
        let alpha = plan.gains.get(&t).copied().unwrap_or(1.0);
        for j in sched.slot(t).listening_users() {
            let mut received = C64::new(0.0, 0.0);
            let mut coeffs = CoeffMap::new();
            for l in 0..ch.relays() {
                let row = ch.downlink(j, l, t);
                if let Some(x) = plan.signals.get(&(l, t)) {
                    received += (row * x).scalar();
                }
                for (s, c) in plan.coeffs.get(&(l, t)).into_iter().flatten() {
                    *coeffs.entry(*s).or_default() += (row * c).scalar() / alpha;
                }
            }
            let observed = (received + sample_cn(&mut rng, noise_var)) / alpha;
            let parts = decompose(sched, j, &coeffs);
            ledger.users.entry(j).or_default().push(Equation { slot: t, coeffs, observed, parts: Some(parts) });
        }
    }
}

fn decompose(sched: &Schedule, user: usize, coeffs: &CoeffMap) -> SubEquations {
    let mut parts = SubEquations::default();
    for (&s, &c) in coeffs {
        match sched.role(user, s) {
            SymbolRole::Desired => parts.desired.insert(s, c),
            SymbolRole::Resolvable => parts.resolvable.insert(s, c),
            SymbolRole::Own => parts.self_interference.insert(s, c),
            SymbolRole::Overheard { slot } => parts.overheard.entry(slot).or_default().insert(s, c),
            SymbolRole::Unmanageable => parts.unmanageable.insert(s, c),
        };
    }
    parts
}

/// Result of decoding at one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDecode {
    pub recovered: BTreeMap<SymbolId, C64>,
    pub rank: usize,
    /// Largest coefficient left on a symbol outside the unknowns after
    /// self-interference and overheard-interference cancellation.
    pub interference_residual: f64,
    /// Largest coefficient left on the user's own symbols after cancellation.
    pub self_interference_residual: f64,
}

/// Decodes user `k`: cancels its own symbols and every overheard equation
/// from the phase-2 observations, stacks them with the phase-1 equations that
/// carry desired symbols, and zero-forces.
pub fn decode_user(
    k: usize,
    ledger: &EquationLedger,
    sched: &Schedule,
    own: &CoeffMap,
    tol: &Tolerance,
) -> Result<UserDecode> {
    let equations = ledger.user(k);
    let unknowns: Vec<SymbolId> = sched
        .symbols()
        .into_iter()
        .filter(|&s| matches!(sched.role(k, s), SymbolRole::Desired | SymbolRole::Resolvable))
        .collect();
    let phase1: BTreeMap<usize, &Equation> =
        equations.iter().filter(|e| !sched.is_phase2(e.slot)).map(|e| (e.slot, e)).collect();

    let mut rows: Vec<(CoeffMap, C64)> = Vec::new();
    for e in equations.iter().filter(|e| !sched.is_phase2(e.slot)) {
        if e.coeffs.keys().any(|s| s.dest == k) {
            rows.push((e.coeffs.clone(), e.observed));
        }
    }
    let mut si_residual: f64 = 0.0;
    for e in equations.iter().filter(|e| sched.is_phase2(e.slot)) {
        let mut coeffs = e.coeffs.clone();
        let mut observed = e.observed;
        for (s, c) in coeffs.iter_mut().filter(|(s, _)| s.src == k) {
            let value = own.get(s).ok_or_else(|| Error::DimensionMismatch(format!("user {k} does not know {s}")))?;
            observed -= *c * value;
            *c = C64::new(0.0, 0.0);
        }
        si_residual = si_residual.max(coeffs.iter().filter(|(s, _)| s.src == k).map(|(_, c)| c.norm()).fold(0.0, f64::max));
        let overheard_slots: Vec<usize> = e.parts.as_ref().map(|p| p.overheard.keys().copied().collect()).unwrap_or_default();
        for m in overheard_slots {
            let stored = phase1
                .get(&m)
                .ok_or_else(|| Error::DimensionMismatch(format!("user {k} has no equation for slot {m}")))?;
            observed -= stored.observed;
            for (s, c) in &stored.coeffs {
                *coeffs.entry(*s).or_default() -= c;
            }
        }
        rows.push((coeffs, observed));
    }

    let interference_residual = rows
        .iter()
        .flat_map(|(c, _)| c.iter())
        .filter(|(s, _)| !unknowns.contains(s))
        .map(|(_, c)| c.norm())
        .fold(0.0, f64::max);

    let h = CMatrix::from_rows(
        &rows
            .iter()
            .map(|(c, _)| unknowns.iter().map(|s| c.get(s).copied().unwrap_or_default()).collect())
            .collect::<Vec<_>>(),
    );
    let y = CMatrix::column(&rows.iter().map(|(_, y)| *y).collect::<Vec<_>>());
    let r = rank(&h, tol);
    let s = zf_solve(&h, &y, tol)?;
    let recovered = unknowns
        .iter()
        .enumerate()
        .filter(|(_, sym)| sym.dest == k)
        .map(|(i, sym)| (*sym, s[(i, 0)]))
        .collect();
    Ok(UserDecode { recovered, rank: r, interference_residual, self_interference_residual: si_residual })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub scenario: Scenario,
    pub relay_mode: RelayMode,
    pub recovered: BTreeMap<SymbolId, C64>,
    /// Largest |s_hat - s| / |s| over all desired symbols.
    pub max_symbol_error: f64,
    pub effective_ranks: BTreeMap<usize, usize>,
    pub slots_used: usize,
    pub symbols_delivered: usize,
    pub achieved_dof: Rational64,
    /// Largest neutralization or alignment violation of the precoders.
    pub constraint_residual: f64,
    /// Largest interference coefficient surviving cancellation at any user.
    pub interference_residual: f64,
    pub self_interference_residual: f64,
    /// Largest gap between overheard phase-2 terms and the stored equation.
    pub alignment_residual: f64,
    /// Largest unmanageable coefficient reaching any user.
    pub neutralization_residual: f64,
    pub ledger_residual: f64,
}

/// Runs one trial with the scenario's default relay mode.
pub fn run_end_to_end(scenario: Scenario, cfg: &NetworkConfig, seed: Seed) -> Result<SimReport> {
    run_with_mode(scenario, cfg, seed, RelayMode::for_scenario(scenario))
}

pub fn run_with_mode(scenario: Scenario, cfg: &NetworkConfig, seed: Seed, mode: RelayMode) -> Result<SimReport> {
    cfg.validate()?;
    let sched = scenario.schedule()?;
    if cfg.users != sched.users {
        return Err(Error::InvalidConfig(format!("{scenario} needs {} users, config has {}", sched.users, cfg.users)));
    }
    let ch = draw_channels(cfg, sched.len(), seed)?;
    let mut p = design(scenario, &ch)?;
    p.normalize_power(&ch, &sched, cfg.power);
    let syms = SymbolVector::draw(&sched, seed);

    let mut ledger = run_phase1(&sched, &ch, &syms, cfg, seed);
    let plan = relay_process(&ledger, &p, &ch, &sched, mode)?;
    run_phase2(&mut ledger, &plan, &sched, &ch, cfg.noise_var, seed);

    let tol = Tolerance::default();
    let mut report = SimReport {
        scenario,
        relay_mode: mode,
        recovered: BTreeMap::new(),
        max_symbol_error: 0.0,
        effective_ranks: BTreeMap::new(),
        slots_used: sched.len(),
        symbols_delivered: 0,
        achieved_dof: Rational64::from_integer(0),
        constraint_residual: verify_constraints(&p, &ch, &sched),
        interference_residual: 0.0,
        self_interference_residual: 0.0,
        alignment_residual: ledger.alignment_residual(&sched),
        neutralization_residual: ledger.neutralization_residual(),
        ledger_residual: ledger.linearity_residual(&syms),
    };
    for k in 1..=sched.users {
        let out = decode_user(k, &ledger, &sched, &syms.own(k), &tol)?;
        report.effective_ranks.insert(k, out.rank);
        report.interference_residual = report.interference_residual.max(out.interference_residual);
        report.self_interference_residual = report.self_interference_residual.max(out.self_interference_residual);
        for (s, est) in out.recovered {
            let truth = syms.get(s);
            report.max_symbol_error = report.max_symbol_error.max((est - truth).norm() / truth.norm());
            report.recovered.insert(s, est);
        }
    }
    report.symbols_delivered = report.recovered.len();
    report.achieved_dof = Rational64::new(report.symbols_delivered as i64, report.slots_used as i64);
    Ok(report)
}
