//! Relay space-time precoder synthesis.
//!
//! Two precoder shapes exist. The two-pair examples (TWIC, TWXC) use one
//! beam per decoded symbol at a single relay. The general constructions use a
//! matrix `V^l[t,k]` per relay that is applied to everything the relay heard
//! in phase-1 slot `k` and sent in phase-2 slot `t`; the neutralization and
//! alignment conditions become linear in `vec(V^l[t,k])` through
//! `h_j^* V h_i = (h_i^T kron h_j^*) vec(V)`.

use std::collections::BTreeMap;

use crate::channel::ChannelSet;
use crate::error::{Error, Result};
use crate::linalg::{self, kron, null_space, solve_least_norm, unvectorize, CMatrix, Tolerance, C64};
use crate::scheduler::{index_fn, Scenario, Schedule, SymbolId, SymbolRole};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecoderMode {
    PerSymbol,
    PerBlock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderSet {
    pub mode: PrecoderMode,
    /// (phase-2 slot, symbol) -> M x 1 beam at relay 0.
    pub per_symbol: BTreeMap<(usize, SymbolId), CMatrix>,
    /// (relay, phase-2 slot t, phase-1 slot k) -> M_l x M_l matrix V^l_R[t,k].
    pub per_block: BTreeMap<(usize, usize, usize), CMatrix>,
    /// Amplitude applied to the whole relay transmission of each phase-2 slot.
    /// Receivers know it and divide it out. Missing entries mean 1.
    pub gains: BTreeMap<usize, f64>,
    /// Largest constraint violation seen during synthesis.
    pub residual: f64,
}

impl PrecoderSet {
    fn empty(mode: PrecoderMode) -> Self {
        PrecoderSet {
            mode,
            per_symbol: BTreeMap::new(),
            per_block: BTreeMap::new(),
            gains: BTreeMap::new(),
            residual: 0.0,
        }
    }

    pub fn gain(&self, t: usize) -> f64 {
        self.gains.get(&t).copied().unwrap_or(1.0)
    }

    /// M_l x 1 vector that relay `relay` radiates per unit of `sym` in slot `t`,
    /// before the slot gain.
    pub fn symbol_beam(&self, ch: &ChannelSet, sched: &Schedule, relay: usize, t: usize, sym: SymbolId) -> CMatrix {
        let m = ch.relay_antennas()[relay];
        match self.mode {
            PrecoderMode::PerSymbol => match self.per_symbol.get(&(t, sym)) {
                Some(v) if relay == 0 => v.clone(),
                _ => CMatrix::zeros(m, 1),
            },
            PrecoderMode::PerBlock => {
                let Some(k) = sched.slot_of(sym) else {
                    return CMatrix::zeros(m, 1);
                };
                match self.per_block.get(&(relay, t, k)) {
                    Some(v) => v * ch.uplink(relay, sym.src, k),
                    None => CMatrix::zeros(m, 1),
                }
            }
        }
    }

    /// End-to-end relay-path coefficient of `sym` at user `j` in slot `t`,
    /// summed over relays and excluding the slot gain.
    pub fn end_to_end(&self, ch: &ChannelSet, sched: &Schedule, j: usize, t: usize, sym: SymbolId) -> C64 {
        (0..ch.relays())
            .map(|l| (ch.downlink(j, l, t) * &self.symbol_beam(ch, sched, l, t, sym)).scalar())
            .sum()
    }

    /// Sets each slot gain so that the expected relay transmit power, summed
    /// over relays and with unit-power symbols, equals `power`.
    pub fn normalize_power(&mut self, ch: &ChannelSet, sched: &Schedule, power: f64) {
        let symbols = sched.symbols();
        for t in sched.phase2_slots() {
            let energy: f64 = (0..ch.relays())
                .flat_map(|l| symbols.iter().map(move |&s| (l, s)))
                .map(|(l, s)| self.symbol_beam(ch, sched, l, t, s).frobenius_norm().powi(2))
                .sum();
            let gain = if energy > 0.0 { (power / energy).sqrt() } else { 1.0 };
            self.gains.insert(t, gain);
        }
    }
}

fn require_single_relay(ch: &ChannelSet, what: &str) -> Result<()> {
    if ch.relays() != 1 {
        return Err(Error::InvalidConfig(format!("{what} needs exactly one relay, got {}", ch.relays())));
    }
    Ok(())
}

fn require_dims(ch: &ChannelSet, users: usize, slots: usize) -> Result<()> {
    if ch.users() < users || ch.slots() < slots {
        return Err(Error::DimensionMismatch(format!(
            "channel set covers {} users x {} slots, need {users} x {slots}",
            ch.users(),
            ch.slots()
        )));
    }
    Ok(())
}

/// Relay beams for the two-pair interference channel (slot 3).
///
/// Each beam lies in the null space of the one user for which its symbol is
/// unmanageable interference.
pub fn design_twic(ch: &ChannelSet) -> Result<PrecoderSet> {
    require_single_relay(ch, "TWIC")?;
    require_dims(ch, 4, 3)?;
    let tol = Tolerance::default();
    let t = 3;
    let s = SymbolId::new;
    // (symbol, user that must not see it)
    let nulls = [(s(3, 1), 2), (s(1, 3), 4), (s(2, 4), 3), (s(4, 2), 1)];
    let mut p = PrecoderSet::empty(PrecoderMode::PerSymbol);
    for (sym, victim) in nulls {
        let row = ch.downlink(victim, 0, t);
        let basis = null_space(row, &tol);
        if basis.cols() == 0 {
            return Err(Error::SynthesisFailed(format!("no beam for {sym} avoids user {victim}")));
        }
        let v = basis.col(0);
        p.residual = p.residual.max((row * &v).max_abs());
        p.per_symbol.insert((t, sym), v);
    }
    Ok(p)
}

/// Relay beams for the two-pair X channel (slot 5).
///
/// Every beam solves a 2-row system: zero at the user for which the symbol is
/// unmanageable, and at the overhearing user the coefficient it saw in phase 1.
pub fn design_twxc(ch: &ChannelSet) -> Result<PrecoderSet> {
    require_single_relay(ch, "TWXC")?;
    require_dims(ch, 4, 5)?;
    let tol = Tolerance::default();
    let t = 5;
    let s = SymbolId::new;
    // (symbol, neutralized user, aligned user, phase-1 slot of the alignment target)
    let table = [
        (s(3, 1), 2, 4, 1),
        (s(4, 1), 2, 3, 2),
        (s(3, 2), 1, 4, 1),
        (s(4, 2), 1, 3, 2),
        (s(1, 3), 4, 2, 3),
        (s(2, 3), 4, 1, 4),
        (s(1, 4), 3, 2, 3),
        (s(2, 4), 3, 1, 4),
    ];
    let mut p = PrecoderSet::empty(PrecoderMode::PerSymbol);
    for (sym, zero_at, align_at, heard_in) in table {
        let a = CMatrix::vstack(&[ch.downlink(zero_at, 0, t), ch.downlink(align_at, 0, t)]);
        let b = CMatrix::column(&[C64::new(0.0, 0.0), ch.direct(align_at, sym.src, heard_in)]);
        let v = solve_least_norm(&a, &b, &tol)
            .map_err(|e| Error::SynthesisFailed(format!("beam for {sym}: {e}")))?;
        p.residual = p.residual.max((&(&a * &v) - &b).max_abs());
        p.per_symbol.insert((t, sym), v);
    }
    Ok(p)
}

/// g^l_{j,R,i}[t,k] = h^l_{R,i}[k]^T kron (h^l_{j,R}[t])^*, a 1 x M_l^2 row.
pub fn effective_channel(ch: &ChannelSet, relay: usize, j: usize, i: usize, t: usize, k: usize) -> CMatrix {
    kron(&ch.uplink(relay, i, k).transpose(), ch.downlink(j, relay, t))
}

/// Effective channels of all relays side by side (1 x sum M_l^2).
pub fn stacked_effective_channel(ch: &ChannelSet, j: usize, i: usize, t: usize, k: usize) -> CMatrix {
    let parts: Vec<CMatrix> = (0..ch.relays()).map(|l| effective_channel(ch, l, j, i, t, k)).collect();
    CMatrix::hstack(&parts.iter().collect::<Vec<_>>())
}

/// Splits a stacked `f_R[t,k]` into the per-relay matrices `V^l_R[t,k]`.
fn unstack(f: &CMatrix, antennas: &[usize]) -> Result<Vec<CMatrix>> {
    let mut out = Vec::with_capacity(antennas.len());
    let mut offset = 0;
    for &m in antennas {
        out.push(unvectorize(&f.row_block(offset, m * m), m, m)?);
        offset += m * m;
    }
    Ok(out)
}

/// Neutralization constraint matrix for block (t, k) of the Case-1 construction.
///
/// One row per (i, j) with i in S_k = {1..k1} \ {k}, j not in {i, k}, in
/// lexicographic (i, j) order; (k1-1)(k1-2) rows in total.
pub fn build_stacked_constraints_case1(ch: &ChannelSet, k1: usize, t: usize, k: usize) -> CMatrix {
    let width = ch.relay_antennas().iter().map(|m| m * m).sum();
    let rows: Vec<CMatrix> = (1..=k1)
        .filter(|&i| i != k)
        .flat_map(|i| (1..=k1).filter(move |&j| j != i && j != k).map(move |j| (i, j)))
        .map(|(i, j)| stacked_effective_channel(ch, j, i, t, k))
        .collect();
    if rows.is_empty() {
        return CMatrix::zeros(0, width);
    }
    CMatrix::vstack(&rows.iter().collect::<Vec<_>>())
}

fn case2_system(ch: &ChannelSet, k2: usize, t: usize, k: usize) -> (CMatrix, CMatrix) {
    let overhearer = index_fn(k, 1, k2);
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for j_idx in 2..k2 {
        let sender = index_fn(k, j_idx, k2);
        for j in (1..=k2).filter(|&j| j != k && j != overhearer && j != sender) {
            rows.push(stacked_effective_channel(ch, j, sender, t, k));
            targets.push(C64::new(0.0, 0.0));
        }
        rows.push(stacked_effective_channel(ch, overhearer, sender, t, k));
        targets.push(ch.direct(overhearer, sender, k));
    }
    (CMatrix::vstack(&rows.iter().collect::<Vec<_>>()), CMatrix::column(&targets))
}

/// Interference-neutralizing relay matrices for the Case-1 construction.
pub fn design_case1(ch: &ChannelSet, k1: usize) -> Result<PrecoderSet> {
    let sched = crate::scheduler::schedule_case1(k1)?;
    require_dims(ch, k1, sched.len())?;
    let tol = Tolerance::default();
    let available: usize = ch.relay_antennas().iter().map(|m| m * m).sum();
    let mut p = PrecoderSet::empty(PrecoderMode::PerBlock);
    for t in sched.phase2_slots() {
        for k in sched.phase1_slots() {
            let a = build_stacked_constraints_case1(ch, k1, t, k);
            let basis = null_space(&a, &tol);
            if basis.cols() == 0 {
                return Err(Error::AntennaDeficit { required: (k1 - 1) * (k1 - 2) + 1, available });
            }
            let f = basis.col(0);
            if a.rows() > 0 {
                p.residual = p.residual.max((&a * &f).max_abs());
            }
            for (l, v) in unstack(&f, ch.relay_antennas())?.into_iter().enumerate() {
                p.per_block.insert((l, t, k), v);
            }
        }
    }
    Ok(p)
}

/// Joint neutralization and alignment relay matrices for the Case-2 construction.
pub fn design_case2(ch: &ChannelSet, k2: usize) -> Result<PrecoderSet> {
    let sched = crate::scheduler::schedule_case2(k2)?;
    require_dims(ch, k2, sched.len())?;
    let tol = Tolerance::default();
    let available: usize = ch.relay_antennas().iter().map(|m| m * m).sum();
    let mut p = PrecoderSet::empty(PrecoderMode::PerBlock);
    for t in sched.phase2_slots() {
        for k in sched.phase1_slots() {
            let (a, b) = case2_system(ch, k2, t, k);
            let f = solve_least_norm(&a, &b, &tol).map_err(|e| match e {
                Error::InconsistentSystem { .. } => Error::AntennaDeficit { required: (k2 - 2) * (k2 - 2), available },
                other => other,
            })?;
            p.residual = p.residual.max((&(&a * &f) - &b).max_abs());
            for (l, v) in unstack(&f, ch.relay_antennas())?.into_iter().enumerate() {
                p.per_block.insert((l, t, k), v);
            }
        }
    }
    Ok(p)
}

/// Synthesizes the precoders a scenario calls for.
pub fn design(scenario: Scenario, ch: &ChannelSet) -> Result<PrecoderSet> {
    match scenario {
        Scenario::Twic => design_twic(ch),
        Scenario::Twxc => design_twxc(ch),
        Scenario::Case1 { k1 } => design_case1(ch, k1),
        Scenario::Case2 { k2 } => design_case2(ch, k2),
    }
}

/// Largest violation of the neutralization and alignment conditions.
///
/// Recomputed from the raw channels and the schedule: for every phase-2 slot,
/// user and symbol, an unmanageable symbol must arrive with coefficient zero
/// and an overheard one with the coefficient the user stored in phase 1.
/// Slot gains are not applied.
pub fn verify_constraints(p: &PrecoderSet, ch: &ChannelSet, sched: &Schedule) -> f64 {
    let mut worst: f64 = 0.0;
    for t in sched.phase2_slots() {
        for j in 1..=sched.users {
            for sym in sched.symbols() {
                let violation = match sched.role(j, sym) {
                    SymbolRole::Unmanageable => p.end_to_end(ch, sched, j, t, sym).norm(),
                    SymbolRole::Overheard { slot } => {
                        (p.end_to_end(ch, sched, j, t, sym) - ch.direct(j, sym.src, slot)).norm()
                    }
                    _ => 0.0,
                };
                worst = worst.max(violation);
            }
        }
    }
    worst
}

/// Re-export for callers that only need the vec/unvec helpers.
pub use linalg::vectorize;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{draw_channels, NetworkConfig, Seed};
    use crate::scheduler::{schedule_case1, schedule_case2, schedule_twic, schedule_twxc};

    fn channels(users: usize, antennas: Vec<usize>, slots: usize, seed: u64) -> ChannelSet {
        draw_channels(&NetworkConfig::noiseless(users, antennas).unwrap(), slots, Seed(seed)).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn twic_constraints_hold() {
        for seed in 0..20 {
            let ch = channels(4, vec![2], 3, seed);
            let p = design_twic(&ch).unwrap();
            assert!(p.residual < 1e-10);
            assert!(verify_constraints(&p, &ch, &schedule_twic()) < 1e-10);
            for v in p.per_symbol.values() {
                assert!((v.frobenius_norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn twic_axis_null_space() {
        let mut ch = channels(4, vec![2], 3, 1);
        ch.set_downlink(2, 0, 3, CMatrix::row(&[c(1.0, 0.0), c(0.0, 0.0)]));
        let p = design_twic(&ch).unwrap();
        let v = &p.per_symbol[&(3, SymbolId::new(3, 1))];
        assert!(v[(0, 0)].norm() < 1e-14);
        assert!((v[(1, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn twxc_constraints_hold() {
        for seed in 0..20 {
            let ch = channels(4, vec![2], 5, seed);
            let p = design_twxc(&ch).unwrap();
            assert!(p.residual < 1e-10);
            assert!(verify_constraints(&p, &ch, &schedule_twxc()) < 1e-10);
        }
    }

    #[test]
    fn two_pair_designs_need_one_relay() {
        let ch = channels(4, vec![2, 2], 5, 0);
        assert!(matches!(design_twic(&ch), Err(Error::InvalidConfig(_))));
        assert!(matches!(design_twxc(&ch), Err(Error::InvalidConfig(_))));
        let ch = channels(4, vec![1], 5, 0);
        assert!(matches!(design_twic(&ch), Err(Error::SynthesisFailed(_))));
    }

    #[test]
    fn case1_constraint_matrix_shape_and_rows() {
        let ch = channels(3, vec![2], 4, 3);
        let a = build_stacked_constraints_case1(&ch, 3, 4, 1);
        assert_eq!(a.shape(), (2, 4));
        // rows are (i, j) = (2, 3), (3, 2)
        for (r, (i, j)) in [(2, 3), (3, 2)].into_iter().enumerate() {
            let h = ch.uplink(0, i, 1);
            let g = ch.downlink(j, 0, 4);
            for p in 0..2 {
                for q in 0..2 {
                    assert_eq!(a[(r, p * 2 + q)], h[(p, 0)] * g[(0, q)]);
                }
            }
        }
        let ch2 = channels(2, vec![2], 2, 0);
        assert_eq!(build_stacked_constraints_case1(&ch2, 2, 2, 1).rows(), 0);
    }

    #[test]
    fn case1_feasibility() {
        let ch = channels(3, vec![2], 4, 5);
        let p = design_case1(&ch, 3).unwrap();
        assert!(p.residual < 1e-10);
        assert!(verify_constraints(&p, &ch, &schedule_case1(3).unwrap()) < 1e-10);

        let ch = channels(4, vec![2], 6, 5);
        assert_eq!(design_case1(&ch, 4), Err(Error::AntennaDeficit { required: 7, available: 4 }));

        let ch = channels(4, vec![3], 6, 5);
        let p = design_case1(&ch, 4).unwrap();
        assert!(verify_constraints(&p, &ch, &schedule_case1(4).unwrap()) < 1e-10);
    }

    #[test]
    fn case1_boundary_with_distributed_relays() {
        // k1 = 4 needs 7 dimensions: seven single-antenna relays suffice, six do not.
        let ch = channels(4, vec![1; 7], 6, 8);
        assert!(design_case1(&ch, 4).is_ok());
        let ch = channels(4, vec![1; 6], 6, 8);
        assert!(matches!(design_case1(&ch, 4), Err(Error::AntennaDeficit { .. })));
    }

    #[test]
    fn case2_feasibility() {
        let ch = channels(4, vec![2], 5, 2);
        let p = design_case2(&ch, 4).unwrap();
        assert!(p.residual < 1e-10);
        assert!(verify_constraints(&p, &ch, &schedule_case2(4).unwrap()) < 1e-10);

        let ch = channels(5, vec![2], 7, 2);
        assert_eq!(design_case2(&ch, 5), Err(Error::AntennaDeficit { required: 9, available: 4 }));

        // boundary: 9 dimensions exactly, then 8
        let ch = channels(5, vec![2, 2, 1], 7, 2);
        assert!(design_case2(&ch, 5).is_ok());
        let ch = channels(5, vec![2, 2], 7, 2);
        assert!(matches!(design_case2(&ch, 5), Err(Error::AntennaDeficit { .. })));
    }

    #[test]
    fn verification_detects_perturbation() {
        use rand::{Rng, SeedableRng};
        let ch = channels(4, vec![2], 5, 11);
        let sched = schedule_twxc();
        let mut p = design_twxc(&ch).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for v in p.per_symbol.values_mut() {
            for i in 0..v.rows() {
                v[(i, 0)] += c(rng.random_range(-1e-3..1e-3), rng.random_range(-1e-3..1e-3));
            }
        }
        assert!(verify_constraints(&p, &ch, &sched) > 1e-5);
    }

    #[test]
    fn zero_precoders_violate_by_target_magnitude() {
        let ch = channels(4, vec![2], 5, 12);
        let sched = schedule_twxc();
        let mut p = design_twxc(&ch).unwrap();
        for v in p.per_symbol.values_mut() {
            *v = CMatrix::zeros(2, 1);
        }
        let expected = [(4, 1, 1), (3, 1, 2), (4, 2, 1), (3, 2, 2), (2, 3, 3), (1, 3, 4), (2, 4, 3), (1, 4, 4)]
            .iter()
            .map(|&(k, i, t)| ch.direct(k, i, t).norm())
            .fold(0.0, f64::max);
        assert!((verify_constraints(&p, &ch, &sched) - expected).abs() < 1e-15);
    }

    #[test]
    fn power_normalization_hits_target() {
        let ch = channels(4, vec![2], 3, 0);
        let sched = schedule_twic();
        let mut p = design_twic(&ch).unwrap();
        p.normalize_power(&ch, &sched, 10.0);
        // four unit-norm beams share the power evenly
        assert!((p.gain(3) - (10.0f64 / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn synthesis_is_deterministic() {
        let ch = channels(5, vec![3], 7, 21);
        assert_eq!(design_case2(&ch, 5).unwrap(), design_case2(&ch, 5).unwrap());
        let ch = channels(4, vec![3], 6, 21);
        assert_eq!(design_case1(&ch, 4).unwrap(), design_case1(&ch, 4).unwrap());
    }
}
