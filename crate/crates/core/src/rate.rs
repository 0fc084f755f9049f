//! Finite-SNR ergodic rates of the two-pair interference channel, against a
//! TDMA baseline.
//!
//! Every trial draws fresh channels from a derived seed. The per-trial gains
//! do not depend on the SNR, so they are computed once and reused across the
//! whole grid.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{derive_trial_seed, draw_channels, ChannelSet, NetworkConfig, Seed};
use crate::error::{Error, Result};
use crate::linalg::{null_space, Tolerance};
use crate::precoder::{design_twic, PrecoderSet};
use crate::scheduler::SymbolId;

/// Effective noise scaling of the relay broadcast after maximum-ratio combining.
pub const DOWNLINK_NOISE_FACTOR: f64 = 2.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateConfig {
    /// P / sigma^2 in dB.
    pub snr_db: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl RateConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("SNR grid must be nonempty and finite".into()));
        }
        Ok(())
    }
}

/// Linear SNR from dB.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = pairwise_sum(xs) / n;
        if xs.len() < 2 {
            return Estimate { mean, stderr: 0.0 };
        }
        let dev: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
        let var = pairwise_sum(&dev) / (n - 1.0);
        Estimate { mean, stderr: (var / n).sqrt() }
    }
}

/// Sum with a fixed binary reduction tree, so the result does not depend on
/// how the samples were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Relay decoding rate of s_{1,3} in slot 2, zero-forcing s_{2,4} with a
/// unit-norm combiner orthogonal to h_{R,4}[2].
pub fn uplink_rate(ch: &ChannelSet, power: f64, noise_var: f64) -> Result<f64> {
    Ok((1.0 + power / noise_var * uplink_gain(ch)?).log2())
}

fn uplink_gain(ch: &ChannelSet) -> Result<f64> {
    let interferer = ch.uplink(0, 4, 2);
    let u = null_space(&interferer.adjoint(), &Tolerance::default());
    if u.cols() == 0 {
        return Err(Error::SynthesisFailed("no combiner orthogonal to h_R4[2]".into()));
    }
    Ok((&u.col(0).adjoint() * ch.uplink(0, 3, 2)).scalar().norm_sqr())
}

/// Squared norm of [h_{1,3}[2], h_{1,R}^*[3] v_{1,3}[3]].
fn downlink_gain(ch: &ChannelSet, p: &PrecoderSet) -> Result<f64> {
    let v = p
        .per_symbol
        .get(&(3, SymbolId::new(1, 3)))
        .ok_or_else(|| Error::SynthesisFailed("no beam for s1,3".into()))?;
    let relay_path = (ch.downlink(1, 0, 3) * v).scalar();
    Ok(ch.direct(1, 3, 2).norm_sqr() + relay_path.norm_sqr())
}

/// Rate of s_{1,3} at user 1 from slots 2 and 3 after maximum-ratio combining.
pub fn downlink_rate(ch: &ChannelSet, p: &PrecoderSet, power: f64, noise_var: f64) -> Result<f64> {
    Ok((1.0 + power / (DOWNLINK_NOISE_FACTOR * noise_var) * downlink_gain(ch, p)?).log2())
}

/// Decode-and-forward rate: the weaker of the two hops.
pub fn df_rate(uplink: f64, downlink: f64) -> f64 {
    uplink.min(downlink)
}

pub fn df_pair_rate(ch: &ChannelSet, p: &PrecoderSet, power: f64, noise_var: f64) -> Result<f64> {
    Ok(df_rate(uplink_rate(ch, power, noise_var)?, downlink_rate(ch, p, power, noise_var)?))
}

/// SNR-independent quantities of one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialGains {
    pub uplink: f64,
    pub downlink: f64,
    pub direct: f64,
}

impl TrialGains {
    pub fn stpnc_rate(&self, snr: f64) -> f64 {
        let up = (1.0 + snr * self.uplink).log2();
        let down = (1.0 + snr / DOWNLINK_NOISE_FACTOR * self.downlink).log2();
        4.0 / 3.0 * df_rate(up, down)
    }

    pub fn tdma_rate(&self, snr: f64) -> f64 {
        (1.0 + snr * self.direct).log2()
    }
}

/// Gains of trial `trial` under root seed `seed`.
pub fn trial_gains(seed: Seed, trial: u64) -> Result<TrialGains> {
    let cfg = NetworkConfig::noiseless(4, vec![2])?;
    let ch = draw_channels(&cfg, 3, derive_trial_seed(seed, trial))?;
    let p = design_twic(&ch)?;
    Ok(TrialGains { uplink: uplink_gain(&ch)?, downlink: downlink_gain(&ch, &p)?, direct: ch.direct(1, 3, 2).norm_sqr() })
}

/// Gains of every trial, in trial order.
pub fn all_trial_gains(cfg: &RateConfig) -> Result<Vec<TrialGains>> {
    cfg.validate()?;
    (0..cfg.trials as u64).into_par_iter().map(|t| trial_gains(Seed(cfg.seed), t)).collect()
}

fn estimates(gains: &[TrialGains], snr_db: &[f64], f: impl Fn(&TrialGains, f64) -> f64 + Sync) -> Vec<Estimate> {
    snr_db
        .iter()
        .map(|&db| {
            let snr = db_to_linear(db);
            let xs: Vec<f64> = gains.par_iter().map(|g| f(g, snr)).collect();
            Estimate::from_samples(&xs)
        })
        .collect()
}

/// Ergodic sum rate, 4/3 E[min(uplink, downlink)], per SNR point.
pub fn stpnc_sum_rate(cfg: &RateConfig) -> Result<Vec<Estimate>> {
    let gains = all_trial_gains(cfg)?;
    Ok(estimates(&gains, &cfg.snr_db, TrialGains::stpnc_rate))
}

/// TDMA sum rate E[log2(1 + rho |h|^2)] per SNR point.
pub fn tdma_sum_rate(cfg: &RateConfig) -> Result<Vec<Estimate>> {
    let gains = all_trial_gains(cfg)?;
    Ok(estimates(&gains, &cfg.snr_db, TrialGains::tdma_rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub snr_db: f64,
    pub stpnc: Estimate,
    pub tdma: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub rows: Vec<RateRow>,
    /// SNR in dB at which ST-PNC first overtakes TDMA, interpolated on the grid.
    pub crossover_db: Option<f64>,
}

pub fn snr_sweep(cfg: &RateConfig) -> Result<RateResult> {
    let gains = all_trial_gains(cfg)?;
    let stpnc = estimates(&gains, &cfg.snr_db, TrialGains::stpnc_rate);
    let tdma = estimates(&gains, &cfg.snr_db, TrialGains::tdma_rate);
    let rows: Vec<RateRow> = cfg
        .snr_db
        .iter()
        .zip(stpnc.into_iter().zip(tdma))
        .map(|(&snr_db, (stpnc, tdma))| RateRow { snr_db, stpnc, tdma })
        .collect();
    Ok(RateResult { crossover_db: crossover(&rows), rows })
}

/// First grid interval where ST-PNC moves from at most TDMA to above it.
pub fn crossover(rows: &[RateRow]) -> Option<f64> {
    rows.windows(2).find_map(|w| {
        let d0 = w[0].stpnc.mean - w[0].tdma.mean;
        let d1 = w[1].stpnc.mean - w[1].tdma.mean;
        (d0 <= 0.0 && d1 > 0.0).then(|| w[0].snr_db + (w[1].snr_db - w[0].snr_db) * (-d0) / (d1 - d0))
    })
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Ratio of the ST-PNC and TDMA slopes (bits per dB) over rows with
/// `lo <= snr_db <= hi`.
pub fn slope_ratio(rows: &[RateRow], lo: f64, hi: f64) -> Option<f64> {
    let sel: Vec<&RateRow> = rows.iter().filter(|r| r.snr_db >= lo && r.snr_db <= hi).collect();
    if sel.len() < 2 {
        return None;
    }
    let x: Vec<f64> = sel.iter().map(|r| r.snr_db).collect();
    let s: Vec<f64> = sel.iter().map(|r| r.stpnc.mean).collect();
    let t: Vec<f64> = sel.iter().map(|r| r.tdma.mean).collect();
    Some(ls_slope(&x, &s) / ls_slope(&x, &t))
}

pub const RATE_CSV_HEADER: &str = "snr_db,stpnc_rate,stpnc_stderr,tdma_rate,tdma_stderr";

pub fn rates_to_csv(result: &RateResult) -> String {
    let mut out = String::from(RATE_CSV_HEADER);
    out.push('\n');
    for r in &result.rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{:.6}", r.snr_db, r.stpnc.mean, r.stpnc.stderr, r.tdma.mean, r.tdma.stderr);
    }
    out
}

/// Inclusive grid `start, start + step, ..., stop`.
pub fn snr_grid(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !stop.is_finite() || stop < start {
        return Err(Error::InvalidConfig(format!("bad SNR grid {start}:{stop}:{step}")));
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| start + i as f64 * step).collect())
}
