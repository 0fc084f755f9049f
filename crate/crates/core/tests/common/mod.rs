//! Properties shared by the proptest suite and the acceptance runner.

#![allow(dead_code)]

use num_rational::Rational64;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stpnc::channel::{derive_trial_seed, draw_channels, sample_cn, NetworkConfig, Seed};
use stpnc::dof::{gof_dof, k_stars, sum_dof};
use stpnc::error::Error;
use stpnc::linalg::{
    kron, null_space, rank, singular_values, solve_least_norm, unvectorize, vectorize, zf_solve, CMatrix, Tolerance,
    C64,
};
use stpnc::precoder::{design, verify_constraints};
use stpnc::protocol::{run_end_to_end, run_phase1, SymbolVector};
use stpnc::scheduler::{schedule_case1, schedule_case2, Scenario};

pub const CASES: u32 = 1000;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries: Vec<C64> = (0..rows * cols).map(|_| sample_cn(&mut rng, 1.0)).collect();
    CMatrix::from_row_major(rows, cols, &entries).unwrap()
}

fn close(a: &CMatrix, b: &CMatrix, tol: f64) -> Result<(), TestCaseError> {
    prop_assert_eq!(a.shape(), b.shape());
    let gap = (a - b).max_abs();
    prop_assert!(gap <= tol * (1.0 + b.max_abs()), "gap {:e}", gap);
    Ok(())
}

pub fn kron_entries(shape: (usize, usize, usize, usize), seed: u64) -> Result<(), TestCaseError> {
    let (m, n, p, q) = shape;
    let a = random_matrix(m, n, seed);
    let b = random_matrix(p, q, seed ^ 0x5555);
    let k = kron(&a, &b);
    prop_assert_eq!(k.shape(), (m * p, n * q));
    for i in 0..m {
        for j in 0..n {
            for r in 0..p {
                for s in 0..q {
                    prop_assert_eq!(k[(i * p + r, j * q + s)], a[(i, j)] * b[(r, s)]);
                }
            }
        }
    }
    Ok(())
}

pub fn vec_triple_product(shape: (usize, usize, usize, usize), seed: u64) -> Result<(), TestCaseError> {
    let (m, n, p, q) = shape;
    let a = random_matrix(m, n, seed);
    let x = random_matrix(n, p, seed + 1);
    let b = random_matrix(p, q, seed + 2);
    let lhs = vectorize(&(&(&a * &x) * &b));
    let rhs = &kron(&b.transpose(), &a) * &vectorize(&x);
    close(&lhs, &rhs, 1e-12)?;
    close(&unvectorize(&vectorize(&x), n, p).unwrap(), &x, 0.0)
}

pub fn null_space_props(rows: usize, cols: usize, deficiency: usize, seed: u64) -> Result<(), TestCaseError> {
    // rank-limited matrix: product of random rows x r and r x cols factors
    let r = rows.min(cols).saturating_sub(deficiency).max(1);
    let a = &random_matrix(rows, r, seed) * &random_matrix(r, cols, seed + 7);
    let tol = Tolerance::default();
    let n = null_space(&a, &tol);
    prop_assert_eq!(rank(&a, &tol), r);
    prop_assert_eq!(n.cols(), cols - r);
    if n.cols() > 0 {
        prop_assert!((&a * &n).max_abs() < 1e-9 * (1.0 + a.frobenius_norm()));
        close(&(&n.adjoint() * &n), &CMatrix::identity(n.cols()), 1e-10)?;
    }
    let sv = singular_values(&a);
    prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
    Ok(())
}

pub fn least_norm_props(rows: usize, cols: usize, seed: u64) -> Result<(), TestCaseError> {
    let a = random_matrix(rows, cols, seed);
    let x0 = random_matrix(cols, 1, seed + 3);
    let b = &a * &x0;
    let tol = Tolerance::default();
    let x = solve_least_norm(&a, &b, &tol).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!((&(&a * &x) - &b).max_abs() < 1e-9 * (1.0 + b.max_abs()));
    prop_assert!(x.frobenius_norm() <= x0.frobenius_norm() * (1.0 + 1e-10));
    // the minimum-norm solution has no component in null(A)
    let n = null_space(&a, &tol);
    if n.cols() > 0 {
        prop_assert!((&n.adjoint() * &x).max_abs() < 1e-9 * (1.0 + x.max_abs()));
    }
    Ok(())
}

pub fn zf_round_trip(rows: usize, cols: usize, seed: u64) -> Result<(), TestCaseError> {
    let h = random_matrix(rows, cols, seed);
    let s = random_matrix(cols, 1, seed + 11);
    let est = zf_solve(&h, &(&h * &s), &Tolerance::default()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let tol = 1e-8 * (1.0 + s.max_abs());
    prop_assert!((&est - &s).max_abs() < tol);
    Ok(())
}

pub fn channel_determinism(users: usize, antennas: Vec<usize>, slots: usize, seed: u64) -> Result<(), TestCaseError> {
    let cfg = NetworkConfig::noiseless(users, antennas).unwrap();
    let a = draw_channels(&cfg, slots, Seed(seed)).unwrap();
    let b = draw_channels(&cfg, slots, Seed(seed)).unwrap();
    prop_assert_eq!(&a, &b);
    let longer = draw_channels(&cfg, slots + 2, Seed(seed)).unwrap();
    for t in 1..=slots {
        for k in 1..=users {
            for i in 1..=users {
                prop_assert_eq!(a.direct(k, i, t), longer.direct(k, i, t));
            }
        }
    }
    Ok(())
}

pub fn seed_derivation(seed: u64, i: u64, j: u64) -> Result<(), TestCaseError> {
    if i != j {
        prop_assert_ne!(derive_trial_seed(Seed(seed), i), derive_trial_seed(Seed(seed), j));
    }
    prop_assert_eq!(derive_trial_seed(Seed(seed), i), derive_trial_seed(Seed(seed), i));
    Ok(())
}

pub fn scenario_strategy() -> impl Strategy<Value = (Scenario, Vec<usize>)> {
    prop_oneof![
        Just((Scenario::Twic, vec![2])),
        Just((Scenario::Twxc, vec![2])),
        (3usize..=5).prop_map(|k1| (Scenario::Case1 { k1 }, vec![k1 - 1])),
        (4usize..=6).prop_map(|k2| (Scenario::Case2 { k2 }, vec![k2 - 2])),
        Just((Scenario::Case1 { k1: 4 }, vec![2, 1, 1, 1])),
        Just((Scenario::Case2 { k2: 5 }, vec![2, 2, 1])),
    ]
}

/// Noiseless end-to-end run: exact recovery, full rank, exact DoF, clean
/// cancellation.
pub fn noiseless_exactness(scenario: Scenario, antennas: Vec<usize>, seed: u64) -> Result<(), TestCaseError> {
    let cfg = NetworkConfig::noiseless(scenario.users(), antennas).unwrap();
    let r = run_end_to_end(scenario, &cfg, Seed(seed)).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert!(r.max_symbol_error < 1e-8, "error {:e}", r.max_symbol_error);
    prop_assert!(r.effective_ranks.values().all(|&k| k == scenario.expected_rank()));
    prop_assert_eq!(r.achieved_dof, scenario.expected_dof());
    prop_assert_eq!(r.achieved_dof, Rational64::new(r.symbols_delivered as i64, r.slots_used as i64));
    prop_assert!(r.constraint_residual < 1e-9);
    prop_assert!(r.alignment_residual < 1e-9);
    prop_assert!(r.neutralization_residual < 1e-9);
    prop_assert!(r.self_interference_residual < 1e-10);
    Ok(())
}

/// Observations equal their coefficient maps applied to the symbols, checked
/// from the raw ledger.
pub fn ledger_linearity(scenario: Scenario, antennas: Vec<usize>, seed: u64) -> Result<(), TestCaseError> {
    let sched = scenario.schedule().unwrap();
    let cfg = NetworkConfig::noiseless(scenario.users(), antennas).unwrap();
    let ch = draw_channels(&cfg, sched.len(), Seed(seed)).unwrap();
    let syms = SymbolVector::draw(&sched, Seed(seed));
    let ledger = run_phase1(&sched, &ch, &syms, &cfg, Seed(seed));
    for (k, eqs) in &ledger.users {
        for e in eqs {
            let mut predicted = C64::new(0.0, 0.0);
            for (s, c) in &e.coeffs {
                prop_assert_eq!(*c, ch.direct(*k, s.src, e.slot));
                predicted += c * syms.values[s];
            }
            prop_assert!((predicted - e.observed).norm() < 1e-12);
        }
    }
    Ok(())
}

pub fn run_determinism(scenario: Scenario, antennas: Vec<usize>, seed: u64) -> Result<(), TestCaseError> {
    let cfg = NetworkConfig::noiseless(scenario.users(), antennas).unwrap();
    let a = run_end_to_end(scenario, &cfg, Seed(seed)).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let b = run_end_to_end(scenario, &cfg, Seed(seed)).map_err(|e| TestCaseError::fail(e.to_string()))?;
    prop_assert_eq!(a, b);
    Ok(())
}

/// Case 1 synthesizes exactly when the relays offer more dimensions than
/// there are neutralization constraints.
pub fn case1_boundary(k1: usize, antennas: Vec<usize>, seed: u64) -> Result<(), TestCaseError> {
    let sched = schedule_case1(k1).unwrap();
    let cfg = NetworkConfig::noiseless(k1, antennas.clone()).unwrap();
    let ch = draw_channels(&cfg, sched.len(), Seed(seed)).unwrap();
    let dims: usize = antennas.iter().map(|m| m * m).sum();
    let required = (k1 - 1) * (k1 - 2) + 1;
    match design(Scenario::Case1 { k1 }, &ch) {
        Ok(p) => {
            prop_assert!(dims >= required, "synthesized with {} < {} dims", dims, required);
            prop_assert!(verify_constraints(&p, &ch, &sched) < 1e-9);
        }
        Err(e) => {
            prop_assert!(dims < required, "failed with {} >= {} dims: {}", dims, required, e);
            prop_assert_eq!(e, Error::AntennaDeficit { required, available: dims });
        }
    }
    Ok(())
}

pub fn case2_boundary(k2: usize, antennas: Vec<usize>, seed: u64) -> Result<(), TestCaseError> {
    let sched = schedule_case2(k2).unwrap();
    let cfg = NetworkConfig::noiseless(k2, antennas.clone()).unwrap();
    let ch = draw_channels(&cfg, sched.len(), Seed(seed)).unwrap();
    let dims: usize = antennas.iter().map(|m| m * m).sum();
    let required = (k2 - 2) * (k2 - 2);
    match design(Scenario::Case2 { k2 }, &ch) {
        Ok(p) => {
            prop_assert!(dims >= required, "synthesized with {} < {} dims", dims, required);
            prop_assert!(verify_constraints(&p, &ch, &sched) < 1e-9);
        }
        Err(e) => {
            prop_assert!(dims < required, "failed with {} >= {} dims: {}", dims, required, e);
            prop_assert_eq!(e, Error::AntennaDeficit { required, available: dims });
        }
    }
    Ok(())
}

/// Perturbing any designed precoder is caught by the independent checker.
pub fn perturbation_detected(scenario: Scenario, antennas: Vec<usize>, seed: u64) -> Result<(), TestCaseError> {
    let sched = scenario.schedule().unwrap();
    let cfg = NetworkConfig::noiseless(scenario.users(), antennas).unwrap();
    let ch = draw_channels(&cfg, sched.len(), Seed(seed)).unwrap();
    let mut p = design(scenario, &ch).unwrap();
    let bump = random_matrix(1, 1, seed)[(0, 0)].scale(1e-3);
    if let Some(v) = p.per_symbol.values_mut().next() {
        v[(0, 0)] += bump;
    } else if let Some(v) = p.per_block.values_mut().next() {
        v[(0, 0)] += bump;
    }
    prop_assert!(verify_constraints(&p, &ch, &sched) > 1e-7);
    Ok(())
}

pub fn dof_props(k: usize, antennas: Vec<usize>) -> Result<(), TestCaseError> {
    let d = sum_dof(k, &antennas).unwrap();
    let half = Rational64::new(k as i64, 2);
    prop_assert!(d.value <= half);
    prop_assert_eq!(d.value, half.min(d.term_in.max(d.term_in_ia).max(d.term_ia)));
    let n: usize = antennas.iter().map(|m| m * m).sum();
    prop_assert_eq!(d.optimal, n >= (k - 1) * (k - 2) + 1);
    if d.optimal {
        prop_assert_eq!(d.value, half);
    }
    // one more antenna on any relay, or one more relay, never hurts
    let mut more = antennas.clone();
    more[0] += 1;
    prop_assert!(sum_dof(k, &more).unwrap().value >= d.value);
    let mut extra = antennas.clone();
    extra.push(1);
    prop_assert!(sum_dof(k, &extra).unwrap().value >= d.value);
    if n <= (k - 1) * (k - 1) {
        prop_assert!(gof_dof(k, &antennas).unwrap() <= d.value);
    }
    let ks = k_stars(&antennas).unwrap();
    let k1_oracle = (2u64..).take_while(|&x| (x - 1) * (x - 2) + 1 <= n as u64).last().unwrap();
    prop_assert_eq!(ks.k1, k1_oracle);
    let s = (0u64..).take_while(|&x| x * x <= n as u64).last().unwrap();
    prop_assert_eq!((ks.k2, ks.k3), (s + 2, s + 1));
    Ok(())
}

pub fn antennas_strategy(max_relays: usize, max_m: usize) -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(1..=max_m, 1..=max_relays)
}

/// Runs one property through `CASES` random cases; returns the failure text.
pub fn check<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let mut runner = TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

/// Every property, by name, at `CASES` cases each.
pub fn all_properties() -> Vec<(&'static str, Result<(), String>)> {
    let shape = (1usize..4, 1usize..4, 1usize..4, 1usize..4);
    vec![
        ("kron entries", check((shape.clone(), any::<u64>()), |(s, seed)| kron_entries(s, seed))),
        ("vec triple product", check((shape, any::<u64>()), |(s, seed)| vec_triple_product(s, seed))),
        (
            "null space",
            check((1usize..7, 1usize..7, 0usize..3, any::<u64>()), |(r, c, d, seed)| null_space_props(r, c, d, seed)),
        ),
        ("least norm", check((1usize..6, 1usize..8, any::<u64>()), |(r, c, seed)| least_norm_props(r, c.max(r), seed))),
        ("zf round trip", check((1usize..6, 0usize..4, any::<u64>()), |(c, extra, seed)| zf_round_trip(c + extra, c, seed))),
        (
            "channel determinism",
            check((3usize..6, antennas_strategy(3, 3), 1usize..5, any::<u64>()), |(u, a, t, seed)| {
                channel_determinism(u, a, t, seed)
            }),
        ),
        ("seed derivation", check((any::<u64>(), any::<u64>(), any::<u64>()), |(s, i, j)| seed_derivation(s, i, j))),
        (
            "noiseless exactness",
            check((scenario_strategy(), any::<u64>()), |((sc, a), seed)| noiseless_exactness(sc, a, seed)),
        ),
        ("ledger linearity", check((scenario_strategy(), any::<u64>()), |((sc, a), seed)| ledger_linearity(sc, a, seed))),
        ("run determinism", check((scenario_strategy(), any::<u64>()), |((sc, a), seed)| run_determinism(sc, a, seed))),
        (
            "perturbation detected",
            check((scenario_strategy(), any::<u64>()), |((sc, a), seed)| perturbation_detected(sc, a, seed)),
        ),
        (
            "case1 feasibility boundary",
            check((3usize..=5, antennas_strategy(4, 4), any::<u64>()), |(k, a, seed)| case1_boundary(k, a, seed)),
        ),
        (
            "case2 feasibility boundary",
            check((4usize..=6, antennas_strategy(4, 4), any::<u64>()), |(k, a, seed)| case2_boundary(k, a, seed)),
        ),
        ("dof formulas", check((3usize..12, antennas_strategy(6, 5)), |(k, a)| dof_props(k, a))),
    ]
}
