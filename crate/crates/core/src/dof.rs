//! Closed-form sum-DoF inner bounds.
//!
//! Everything is exact: the only irrational step, `floor(sqrt(.))`, is done
//! with integer square roots.

use std::fmt::Write as _;

use num_rational::Rational64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KStars {
    pub k1: u64,
    pub k2: u64,
    pub k3: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DoFResult {
    pub k1_star: u64,
    pub k2_star: u64,
    pub k3_star: u64,
    /// Neutralization-only term, K1/2.
    pub term_in: Rational64,
    /// Joint neutralization and alignment term, K2(K2-2)/(2K2-3).
    pub term_in_ia: Rational64,
    /// Relay-aided alignment term, K3^2/(2K3-1).
    pub term_ia: Rational64,
    pub gof: Rational64,
    /// K/2.
    pub cap: Rational64,
    pub value: Rational64,
    /// The relays can neutralize everything and `value` is K/2.
    pub optimal: bool,
}

fn sum_sq(antennas: &[usize]) -> u64 {
    antennas.iter().map(|&m| (m * m) as u64).sum()
}

fn check_antennas(antennas: &[usize]) -> Result<()> {
    if antennas.is_empty() || antennas.contains(&0) {
        return Err(Error::InvalidConfig("need at least one relay and one antenna per relay".into()));
    }
    Ok(())
}

fn r(n: u64, d: u64) -> Rational64 {
    Rational64::new(n as i64, d as i64)
}

/// Critical user counts for ΣM² = `n`.
///
/// k1 = floor(sqrt(n - 3/4) + 3/2) = floor((sqrt(4n - 3) + 3) / 2), and the
/// fractional part of sqrt(4n - 3) can never carry the sum past the next
/// integer, so the integer square root is exact.
pub fn k_stars_for(n: u64) -> KStars {
    assert!(n >= 1, "at least one relay antenna is required");
    let s = n.isqrt();
    KStars { k1: ((4 * n - 3).isqrt() + 3) / 2, k2: s + 2, k3: s + 1 }
}

pub fn k_stars(antennas: &[usize]) -> Result<KStars> {
    check_antennas(antennas)?;
    Ok(k_stars_for(sum_sq(antennas)))
}

fn term_in(k1: u64) -> Rational64 {
    r(k1, 2)
}

fn term_in_ia(k2: u64) -> Rational64 {
    r(k2 * (k2 - 2), 2 * k2 - 3)
}

fn term_ia(k3: u64) -> Rational64 {
    r(k3 * k3, 2 * k3 - 1)
}

fn evaluate(k: u64, n: u64) -> DoFResult {
    let ks = k_stars_for(n);
    let term_in = term_in(ks.k1.min(k));
    let term_in_ia = term_in_ia(ks.k2.min(k));
    let term_ia = term_ia(ks.k3.min(k));
    let cap = r(k, 2);
    let best = term_in.max(term_in_ia).max(term_ia);
    DoFResult {
        k1_star: ks.k1,
        k2_star: ks.k2,
        k3_star: ks.k3,
        term_in,
        term_in_ia,
        term_ia,
        gof: gof_for(k, n),
        cap,
        value: cap.min(best),
        optimal: n >= (k - 1) * (k - 2) + 1,
    }
}

/// Sum-DoF inner bound of a `k`-user network served by relays with the given
/// antenna counts. Each critical user count is clamped to `k` before its
/// term is evaluated.
pub fn sum_dof(k: usize, antennas: &[usize]) -> Result<DoFResult> {
    if k < 3 {
        return Err(Error::InvalidUserCount { got: k, min: 3 });
    }
    check_antennas(antennas)?;
    Ok(evaluate(k as u64, sum_sq(antennas)))
}

fn gof_for(k: u64, n: u64) -> Rational64 {
    r(k.min(n.isqrt() + 1), 2)
}

/// Sum-DoF reached by generalized opportunistic forwarding.
pub fn gof_dof(k: usize, antennas: &[usize]) -> Result<Rational64> {
    if k < 2 {
        return Err(Error::InvalidUserCount { got: k, min: 2 });
    }
    check_antennas(antennas)?;
    Ok(gof_for(k as u64, sum_sq(antennas)))
}

/// The three single-relay terms (M1+1)/2, (M1+2)M1/(2M1+1) and
/// (M1+1)^2/(2M1+1), each with its user count clamped to `k`.
pub fn single_relay_terms(k: usize, m1: usize) -> Result<[Rational64; 3]> {
    if k < 3 {
        return Err(Error::InvalidUserCount { got: k, min: 3 });
    }
    if m1 == 0 {
        return Err(Error::InvalidConfig("relay needs at least one antenna".into()));
    }
    let (k, m) = (k as u64, m1 as u64);
    Ok([term_in((m + 1).min(k)), term_in_ia((m + 2).min(k)), term_ia((m + 1).min(k))])
}

/// Sum-DoF with a single relay of `m1` antennas.
pub fn single_relay_dof(k: usize, m1: usize) -> Result<Rational64> {
    let [a, b, c] = single_relay_terms(k, m1)?;
    Ok(r(k as u64, 2).min(a.max(b).max(c)))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRow {
    pub relays: usize,
    pub result: DoFResult,
}

/// One row per L = 1..=l_max single-antenna relays.
pub fn relay_sweep(k: usize, l_max: usize) -> Result<Vec<SweepRow>> {
    (1..=l_max).map(|l| Ok(SweepRow { relays: l, result: sum_dof(k, &vec![1; l])? })).collect()
}

pub const SWEEP_CSV_HEADER: &str = "L,term_in,term_in_ia,term_ia,gof,stpnc_value,stpnc_value_exact";

/// Decimal rendering with six significant digits.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn dec(q: Rational64) -> String {
    format_sig6(*q.numer() as f64 / *q.denom() as f64)
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let d = &row.result;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            row.relays,
            dec(d.term_in),
            dec(d.term_in_ia),
            dec(d.term_ia),
            dec(d.gof),
            dec(d.value),
            d.value
        );
    }
    out
}
