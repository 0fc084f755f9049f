//! Network configuration and seeded Rayleigh channel generation.
//!
//! Users and time slots are numbered from 1, as in the protocol descriptions;
//! relays are addressed by their 0-based position in
//! [`NetworkConfig::relay_antennas`].
//!
//! Every coefficient is drawn from CN(0, 1). Each slot owns an independent
//! ChaCha stream keyed by the slot number, so a channel set for `T` slots is a
//! prefix of the set for any `T' > T` drawn from the same seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

/// Stream identifiers below this value are reserved for per-slot channel draws.
pub(crate) const CHANNEL_STREAMS: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of single-antenna users, K.
    pub users: usize,
    /// Antenna count of each relay.
    pub relay_antennas: Vec<usize>,
    /// Per-node average transmit power P.
    pub power: f64,
    /// Receiver noise variance; zero selects the noiseless mode.
    pub noise_var: f64,
}

impl NetworkConfig {
    pub fn new(users: usize, relay_antennas: Vec<usize>, power: f64, noise_var: f64) -> Result<Self> {
        let cfg = NetworkConfig { users, relay_antennas, power, noise_var };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Noiseless network with unit power.
    pub fn noiseless(users: usize, relay_antennas: Vec<usize>) -> Result<Self> {
        Self::new(users, relay_antennas, 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.users < 2 {
            return Err(Error::InvalidUserCount { got: self.users, min: 2 });
        }
        if self.relay_antennas.is_empty() || self.relay_antennas.contains(&0) {
            return Err(Error::InvalidConfig("every relay needs at least one antenna".into()));
        }
        if !(self.power.is_finite() && self.power > 0.0) {
            return Err(Error::InvalidConfig(format!("power must be positive, got {}", self.power)));
        }
        if !(self.noise_var.is_finite() && self.noise_var >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "noise variance must be non-negative, got {}",
                self.noise_var
            )));
        }
        Ok(())
    }

    pub fn relays(&self) -> usize {
        self.relay_antennas.len()
    }

    /// Total precoder dimension, the sum of squared relay antenna counts.
    pub fn sum_sq_antennas(&self) -> usize {
        self.relay_antennas.iter().map(|m| m * m).sum()
    }
}

/// Root seed of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Seed(pub u64);

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer; a bijection on `u64`.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for Monte Carlo trial `trial`.
///
/// `root + (trial + 1) * gamma` is injective in `trial` for odd `gamma`, and
/// the finalizer is a bijection, so distinct trials never share a seed.
pub fn derive_trial_seed(seed: Seed, trial: u64) -> Seed {
    Seed(mix64(seed.0.wrapping_add(trial.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))))
}

/// Random stream `stream` of `seed`.
pub(crate) fn stream_rng(seed: Seed, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed.0);
    rng.set_stream(stream);
    rng
}

/// One CN(0, `var`) sample.
pub fn sample_cn<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let scale = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * scale, im * scale)
}

pub(crate) fn sample_nonzero<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    loop {
        let z = sample_cn(rng, 1.0);
        if z != C64::new(0.0, 0.0) {
            return z;
        }
    }
}

/// All channel coefficients of a network over a block of time slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    users: usize,
    relay_antennas: Vec<usize>,
    slots: usize,
    /// `direct[t][k][i]` = h_{k,i}[t] (0-based storage).
    direct: Vec<Vec<Vec<C64>>>,
    /// `uplink[t][l][i]` = h^l_{R,i}[t], an M_l x 1 column.
    uplink: Vec<Vec<Vec<CMatrix>>>,
    /// `downlink[t][k][l]` = (h^l_{k,R}[t])^*, a 1 x M_l row.
    downlink: Vec<Vec<Vec<CMatrix>>>,
}

impl ChannelSet {
    pub fn users(&self) -> usize {
        self.users
    }

    pub fn relay_antennas(&self) -> &[usize] {
        &self.relay_antennas
    }

    pub fn relays(&self) -> usize {
        self.relay_antennas.len()
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    fn check(&self, user: usize, slot: usize) {
        assert!((1..=self.users).contains(&user), "user {user} out of range 1..={}", self.users);
        assert!((1..=self.slots).contains(&slot), "slot {slot} out of range 1..={}", self.slots);
    }

    /// Direct coefficient h_{k,i}[t] from user `i` to user `k`.
    pub fn direct(&self, k: usize, i: usize, t: usize) -> C64 {
        self.check(k, t);
        self.check(i, t);
        self.direct[t - 1][k - 1][i - 1]
    }

    /// Column h^l_{R,i}[t] from user `i` to relay `l`.
    pub fn uplink(&self, relay: usize, i: usize, t: usize) -> &CMatrix {
        self.check(i, t);
        &self.uplink[t - 1][relay][i - 1]
    }

    /// Row (h^l_{k,R}[t])^* from relay `l` to user `k`.
    pub fn downlink(&self, k: usize, relay: usize, t: usize) -> &CMatrix {
        self.check(k, t);
        &self.downlink[t - 1][k - 1][relay]
    }

    pub fn set_direct(&mut self, k: usize, i: usize, t: usize, value: C64) {
        self.check(k, t);
        self.check(i, t);
        self.direct[t - 1][k - 1][i - 1] = value;
    }

    pub fn set_uplink(&mut self, relay: usize, i: usize, t: usize, column: CMatrix) {
        self.check(i, t);
        assert_eq!(column.shape(), (self.relay_antennas[relay], 1), "uplink must be an M x 1 column");
        self.uplink[t - 1][relay][i - 1] = column;
    }

    pub fn set_downlink(&mut self, k: usize, relay: usize, t: usize, row: CMatrix) {
        self.check(k, t);
        assert_eq!(row.shape(), (1, self.relay_antennas[relay]), "downlink must be a 1 x M row");
        self.downlink[t - 1][k - 1][relay] = row;
    }

    /// Every stored coefficient, in a fixed traversal order.
    pub fn coefficients(&self) -> Vec<C64> {
        let mut out = Vec::new();
        for t in 0..self.slots {
            out.extend(self.direct[t].iter().flatten().copied());
            out.extend(self.uplink[t].iter().flatten().flat_map(|m| m.to_vec()));
            out.extend(self.downlink[t].iter().flatten().flat_map(|m| m.to_vec()));
        }
        out
    }
}

/// Draws an independent CN(0, 1) realization of every link over `slots` slots.
pub fn draw_channels(cfg: &NetworkConfig, slots: usize, seed: Seed) -> Result<ChannelSet> {
    cfg.validate()?;
    if slots == 0 {
        return Err(Error::InvalidConfig("at least one time slot is required".into()));
    }
    let k_users = cfg.users;
    let mut direct = Vec::with_capacity(slots);
    let mut uplink = Vec::with_capacity(slots);
    let mut downlink = Vec::with_capacity(slots);
    for t in 1..=slots {
        let mut rng = stream_rng(seed, t as u64);
        let d: Vec<Vec<C64>> =
            (0..k_users).map(|_| (0..k_users).map(|_| sample_nonzero(&mut rng)).collect()).collect();
        let up: Vec<Vec<CMatrix>> = cfg
            .relay_antennas
            .iter()
            .map(|&m| {
                (0..k_users)
                    .map(|_| {
                        let v: Vec<C64> = (0..m).map(|_| sample_nonzero(&mut rng)).collect();
                        CMatrix::column(&v)
                    })
                    .collect()
            })
            .collect();
        let down: Vec<Vec<CMatrix>> = (0..k_users)
            .map(|_| {
                cfg.relay_antennas
                    .iter()
                    .map(|&m| {
                        let v: Vec<C64> = (0..m).map(|_| sample_nonzero(&mut rng)).collect();
                        CMatrix::row(&v)
                    })
                    .collect()
            })
            .collect();
        direct.push(d);
        uplink.push(up);
        downlink.push(down);
    }
    Ok(ChannelSet {
        users: k_users,
        relay_antennas: cfg.relay_antennas.clone(),
        slots,
        direct,
        uplink,
        downlink,
    })
}
