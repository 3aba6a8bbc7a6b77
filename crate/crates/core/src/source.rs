//! The central photon-pair source.
//!
//! Three concerns live here: the joint measurement statistics of the
//! time-bin entangled state `(|e,e⟩ + e^{iφ}|l,l⟩)/√2` seen through two
//! unbalanced receiver interferometers, the per-frame pair statistics, and
//! the symmetric WDM channel pairing that connects users.
//!
//! Every photon carries a uniform *fate* variable. Loss stages downstream
//! keep a photon when its fate is below the stage's transmission and then
//! rescale the fate, so a chain of stages transmits with the product of the
//! individual probabilities while reusing a single random number. This lets
//! the sampler skip pairs that can never be detected (see
//! [`PairSampler::with_acceptance`]) and makes counterfactual runs share their
//! randomness.

use std::f64::consts::TAU;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::timebase::{ClockConfig, Picos, TimeBin};

/// Interferometer output port.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Port {
    One,
    Two,
}

impl Port {
    pub const BOTH: [Port; 2] = [Port::One, Port::Two];

    pub fn index(self) -> usize {
        match self {
            Port::One => 0,
            Port::Two => 1,
        }
    }

    /// Sign picked up by the long-arm amplitude on the way to this port.
    pub fn sign(self) -> f64 {
        match self {
            Port::One => 1.0,
            Port::Two => -1.0,
        }
    }

    /// Key bit encoded by this port in the phase basis.
    pub fn bit(self) -> u8 {
        self.index() as u8
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn other(self) -> Port {
        match self {
            Port::One => Port::Two,
            Port::Two => Port::One,
        }
    }
}

/// Source phase φ and the two receivers' interferometer phases, reduced
/// modulo 2π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    source: f64,
    a: f64,
    b: f64,
}

impl PhaseConfig {
    pub fn new(source: f64, a: f64, b: f64) -> Self {
        Self {
            source: source.rem_euclid(TAU),
            a: a.rem_euclid(TAU),
            b: b.rem_euclid(TAU),
        }
    }

    /// Phases with `α + β − φ` equal to `sum` (all of it on receiver A).
    pub fn with_sum(sum: f64) -> Self {
        Self::new(0.0, sum, 0.0)
    }

    pub fn source(&self) -> f64 {
        self.source
    }
    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn b(&self) -> f64 {
        self.b
    }

    /// `α + β − φ`, the only combination the statistics depend on.
    pub fn phase_sum(&self) -> f64 {
        self.a + self.b - self.source
    }
}

/// One of the 36 nominal (bin, port) × (bin, port) detection outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JointOutcome {
    pub a_bin: TimeBin,
    pub a_port: Port,
    pub b_bin: TimeBin,
    pub b_port: Port,
}

impl JointOutcome {
    pub fn index(&self) -> usize {
        ((self.a_bin.index() * 2 + self.a_port.index()) * 3 + self.b_bin.index()) * 2
            + self.b_port.index()
    }

    pub fn all() -> impl Iterator<Item = JointOutcome> {
        TimeBin::ALL.into_iter().flat_map(|a_bin| {
            Port::BOTH.into_iter().flat_map(move |a_port| {
                TimeBin::ALL.into_iter().flat_map(move |b_bin| {
                    Port::BOTH.into_iter().map(move |b_port| JointOutcome {
                        a_bin,
                        a_port,
                        b_bin,
                        b_port,
                    })
                })
            })
        })
    }
}

/// Probability table over all 36 joint outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    probs: [f64; 36],
}

impl JointTable {
    pub fn prob(&self, o: &JointOutcome) -> f64 {
        self.probs[o.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (JointOutcome, f64)> + '_ {
        JointOutcome::all().map(|o| (o, self.probs[o.index()]))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Probability of a bin combination summed over all four port pairs.
    pub fn bin_marginal(&self, a_bin: TimeBin, b_bin: TimeBin) -> f64 {
        self.iter()
            .filter(|(o, _)| o.a_bin == a_bin && o.b_bin == b_bin)
            .map(|(_, p)| p)
            .sum()
    }

    /// Port probabilities conditioned on both photons landing in the central bin.
    pub fn central_conditional(&self, a_port: Port, b_port: Port) -> f64 {
        let cc = self.bin_marginal(TimeBin::Central, TimeBin::Central);
        self.prob(&JointOutcome {
            a_bin: TimeBin::Central,
            a_port,
            b_bin: TimeBin::Central,
            b_port,
        }) / cc
    }
}

/// Closed-form joint outcome distribution.
///
/// Each receiver is a 50:50 interferometer whose short arm contributes
/// amplitude 1/2 to both ports and whose long arm contributes
/// `±e^{iθ}/2` (minus on port 2). Early–Early and Late–Late arise from a
/// single path and have probability 1/32 per port pair, mixed
/// central/non-central combinations likewise, Early–Late is impossible, and
/// the two indistinguishable central–central paths interfere:
/// `P = (1 + s_a s_b cos(α + β − φ)) / 16`.
pub fn joint_distribution(phases: &PhaseConfig) -> JointTable {
    use TimeBin::*;
    let cos = phases.phase_sum().cos();
    let mut probs = [0.0; 36];
    for o in JointOutcome::all() {
        probs[o.index()] = match (o.a_bin, o.b_bin) {
            (Early, Late) | (Late, Early) => 0.0,
            (Central, Central) => (1.0 + o.a_port.sign() * o.b_port.sign() * cos) / 16.0,
            _ => 1.0 / 32.0,
        };
    }
    JointTable { probs }
}

/// Inverse-CDF sampler over the non-zero outcomes of a [`JointTable`].
#[derive(Debug, Clone)]
struct OutcomeSampler {
    cdf: Vec<(f64, JointOutcome)>,
}

impl OutcomeSampler {
    fn new(table: &JointTable) -> Self {
        let mut acc = 0.0;
        let mut cdf = Vec::new();
        for (o, p) in table.iter() {
            if p > 0.0 {
                acc += p;
                cdf.push((acc, o));
            }
        }
        let total = acc;
        for e in &mut cdf {
            e.0 /= total;
        }
        Self { cdf }
    }

    fn sample(&self, u: f64) -> JointOutcome {
        let i = self.cdf.partition_point(|(c, _)| *c <= u);
        self.cdf[i.min(self.cdf.len() - 1)].1
    }
}

/// A pair of users sharing one mirrored channel pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserPair {
    pub a: String,
    pub b: String,
}

impl UserPair {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        Self { a: a.into(), b: b.into() }
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.a, self.b)
    }
}

/// Assignment of user pairs to WDM channels mirrored around the pump
/// frequency: pair `p` receives channels `(k, −k)`, user `a` on `+k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelMap {
    capacity: u32,
    slots: Vec<(u32, UserPair)>,
}

impl ChannelMap {
    pub fn capacity(&self) -> u32 {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// `(channel, user pair)` entries, channel `k` meaning the pair `(k, −k)`.
    pub fn iter(&self) -> impl Iterator<Item = (u32, &UserPair)> {
        self.slots.iter().map(|(k, p)| (*k, p))
    }

    /// The user receiving signed channel `channel`.
    pub fn user_on(&self, channel: i32) -> Option<&str> {
        let k = channel.unsigned_abs();
        let (_, pair) = self.slots.iter().find(|(c, _)| *c == k)?;
        Some(if channel > 0 { &pair.a } else { &pair.b })
    }

    /// Signed channels `(+k, −k)` of a user pair.
    pub fn channels_of(&self, pair: &UserPair) -> Option<(i32, i32)> {
        self.slots
            .iter()
            .find(|(_, p)| p == pair)
            .map(|(k, _)| (*k as i32, -(*k as i32)))
    }

    /// Exchange the channel pairs of two user pairs (index into [`Self::iter`]).
    pub fn swap(&mut self, i: usize, j: usize) {
        let ki = self.slots[i].0;
        self.slots[i].0 = self.slots[j].0;
        self.slots[j].0 = ki;
        self.slots.sort_by_key(|(k, _)| *k);
    }

    fn check(&self) -> Result<()> {
        let mut users: Vec<&str> = Vec::new();
        for (k, p) in &self.slots {
            if *k == 0 || *k > self.capacity {
                return Err(Error::config("pairs", format!("channel {k} outside 1..={}", self.capacity)));
            }
            for u in [p.a.as_str(), p.b.as_str()] {
                if users.contains(&u) {
                    return Err(Error::config("pairs", format!("user `{u}` appears on more than one channel")));
                }
                users.push(u);
            }
        }
        Ok(())
    }
}

pub fn assign_channels(user_pairs: &[UserPair], k: u32) -> Result<ChannelMap> {
    if user_pairs.len() > k as usize {
        return Err(Error::Capacity {
            pairs: user_pairs.len(),
            channels: k,
        });
    }
    let map = ChannelMap {
        capacity: k,
        slots: user_pairs
            .iter()
            .enumerate()
            .map(|(i, p)| (i as u32 + 1, p.clone()))
            .collect(),
    };
    map.check()?;
    Ok(map)
}

/// Pair statistics for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Mean number of pairs per double pulse and channel pair, μ.
    pub mean_pairs: f64,
    pub frames: u64,
    pub seed: u64,
}

impl SourceConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        if !(self.mean_pairs >= 0.0 && self.mean_pairs.is_finite()) {
            return Err(Error::config(format!("{path}.mean_pairs"), "must be a finite non-negative number"));
        }
        if self.mean_pairs > 0.2 {
            log::warn!(
                "mean pairs per frame {} exceeds 0.2; independent multi-pair emission becomes a poor model",
                self.mean_pairs
            );
        }
        Ok(())
    }
}

/// One photon on its way to a receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Photon {
    pub bin: TimeBin,
    pub port: Port,
    /// Absolute arrival time, including every delay applied so far.
    pub time: Picos,
    /// Uniform survival variable consumed by loss stages.
    pub fate: f64,
}

impl Photon {
    /// Pass a stage with transmission `p`; returns whether the photon survives.
    pub fn survive(&mut self, p: f64) -> bool {
        thin(&mut self.fate, p)
    }
}

/// Shared loss-stage rule: keep when `fate < p`, then renormalise the fate so
/// it is again uniform on `[0, 1)` for the next stage.
pub(crate) fn thin(fate: &mut f64, p: f64) -> bool {
    if *fate < p {
        if p < 1.0 {
            *fate /= p;
        }
        true
    } else {
        false
    }
}

/// A generated pair. Photons that were pruned by the acceptance bound are `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonPairEvent {
    pub pair_id: u64,
    pub frame: u64,
    /// Positive channel number `k` of the pair `(k, −k)`.
    pub channel: u32,
    pub outcome: JointOutcome,
    pub a: Option<Photon>,
    pub b: Option<Photon>,
}

/// Poisson pair generator for one channel pair.
///
/// Frames with at least one pair are reached by geometric skipping, so the
/// cost is proportional to the number of generated pairs rather than frames.
pub struct PairSampler {
    rng: ChaCha8Rng,
    clock: ClockConfig,
    outcomes: OutcomeSampler,
    sigma: f64,
    mean_pairs: f64,
    /// Upper bounds on the end-to-end survival of each photon.
    accept: (f64, f64),
    lambda: f64,
    next_frame: u64,
    end_frame: u64,
    current_frame: u64,
    pending: u32,
    channel: u32,
    next_id: u64,
}

impl PairSampler {
    /// Sampler over frames `1..=cfg.frames` of channel pair `channel`.
    ///
    /// Frame 0 is skipped so that Gaussian pulse spread never produces a
    /// negative timestamp.
    pub fn new(cfg: &SourceConfig, clock: &ClockConfig, phases: &PhaseConfig, channel: u32) -> Self {
        let rng = rng::stream(cfg.seed, &[rng::TAG_SOURCE, channel as u64]);
        Self::over(cfg.mean_pairs, clock, phases, channel, 1..cfg.frames + 1, rng, 0)
    }

    pub(crate) fn over(
        mean_pairs: f64,
        clock: &ClockConfig,
        phases: &PhaseConfig,
        channel: u32,
        frames: Range<u64>,
        rng: ChaCha8Rng,
        first_id: u64,
    ) -> Self {
        Self {
            rng,
            clock: *clock,
            outcomes: OutcomeSampler::new(&joint_distribution(phases)),
            sigma: clock.pulse_sigma_ps(),
            mean_pairs,
            accept: (1.0, 1.0),
            lambda: mean_pairs,
            next_frame: frames.start.max(1),
            end_frame: frames.end,
            current_frame: 0,
            pending: 0,
            channel,
            next_id: first_id,
        }
    }

    /// Emit only pairs where at least one photon can still be detected.
    ///
    /// `a_max` and `b_max` bound the probability that a photon survives every
    /// downstream stage. A photon is kept with its fate drawn uniformly on
    /// `[0, max)` – exactly the fates that can survive – and pairs with
    /// neither photon kept are never generated. The statistics of everything
    /// downstream are unchanged.
    pub fn with_acceptance(mut self, a_max: f64, b_max: f64) -> Self {
        let a = a_max.clamp(0.0, 1.0);
        let b = b_max.clamp(0.0, 1.0);
        self.accept = (a, b);
        self.lambda = self.mean_pairs * (1.0 - (1.0 - a) * (1.0 - b));
        self
    }

    fn advance_frame(&mut self) -> bool {
        if self.lambda <= 0.0 || self.next_frame >= self.end_frame {
            return false;
        }
        // Frames are empty with probability exp(−λ), so the number of empty
        // frames before the next occupied one is geometric.
        let u: f64 = 1.0 - self.rng.random::<f64>();
        let skip = -u.ln() / self.lambda;
        let remaining = (self.end_frame - self.next_frame) as f64;
        if skip >= remaining {
            self.next_frame = self.end_frame;
            return false;
        }
        let frame = self.next_frame + skip as u64;
        // Zero-truncated Poisson count for the occupied frame.
        let target = self.rng.random::<f64>() * -(-self.lambda).exp_m1();
        let mut term = self.lambda * (-self.lambda).exp();
        let mut cum = term;
        let mut n = 1u32;
        while cum < target && n < 64 {
            n += 1;
            term *= self.lambda / n as f64;
            cum += term;
        }
        self.current_frame = frame;
        self.pending = n;
        self.next_frame = frame + 1;
        true
    }

    fn photon(&mut self, bin: TimeBin, port: Port, base: i64, fate_bound: f64) -> Photon {
        Photon {
            bin,
            port,
            time: (base + self.clock.bin_offset(bin) as i64).max(0) as Picos,
            fate: self.rng.random::<f64>() * fate_bound,
        }
    }
}

impl Iterator for PairSampler {
    type Item = PhotonPairEvent;

    fn next(&mut self) -> Option<PhotonPairEvent> {
        if self.pending == 0 && !self.advance_frame() {
            return None;
        }
        self.pending -= 1;
        let outcome = self.outcomes.sample(self.rng.random());
        let (a_max, b_max) = self.accept;
        let (keep_a, keep_b) = if a_max >= 1.0 && b_max >= 1.0 {
            (true, true)
        } else {
            // Conditional on at least one photon being detectable, choose
            // which ones are.
            let pa = a_max * (1.0 - b_max);
            let pb = b_max * (1.0 - a_max);
            let r = 1.0 - (1.0 - a_max) * (1.0 - b_max);
            let u = self.rng.random::<f64>() * r;
            if u < pa {
                (true, false)
            } else if u < pa + pb {
                (false, true)
            } else {
                (true, true)
            }
        };
        // One pump pulse produces both photons, so they share its time spread.
        let spread: f64 = self.rng.sample::<f64, _>(StandardNormal) * self.sigma;
        let base = (self.current_frame * self.clock.repetition_period_ps) as i64 + spread.round() as i64;
        let a = keep_a.then(|| self.photon(outcome.a_bin, outcome.a_port, base, a_max));
        let b = keep_b.then(|| self.photon(outcome.b_bin, outcome.b_port, base, b_max));
        let id = self.next_id;
        self.next_id += 1;
        Some(PhotonPairEvent {
            pair_id: id,
            frame: self.current_frame,
            channel: self.channel,
            outcome,
            a,
            b,
        })
    }
}

/// Generate pairs for every channel pair of `map`, one independent stream
/// per channel pair, concatenated in channel order.
pub fn sample_pairs<'a>(
    cfg: &'a SourceConfig,
    clock: &'a ClockConfig,
    map: &'a ChannelMap,
    phases: &'a PhaseConfig,
) -> impl Iterator<Item = PhotonPairEvent> + 'a {
    map.iter()
        .flat_map(move |(k, _)| PairSampler::new(cfg, clock, phases, k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn cc(a: Port, b: Port) -> JointOutcome {
        JointOutcome {
            a_bin: TimeBin::Central,
            a_port: a,
            b_bin: TimeBin::Central,
            b_port: b,
        }
    }

    #[test]
    fn zero_phase_sum_central_correlation() {
        let t = joint_distribution(&PhaseConfig::with_sum(0.0));
        assert!((t.central_conditional(Port::One, Port::One) - 0.5).abs() < 1e-15);
        assert!(t.central_conditional(Port::One, Port::Two).abs() < 1e-15);
        assert!((t.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_is_uncorrelated() {
        let t = joint_distribution(&PhaseConfig::with_sum(FRAC_PI_2));
        for a in Port::BOTH {
            for b in Port::BOTH {
                assert!((t.central_conditional(a, b) - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn time_basis_structure() {
        let t = joint_distribution(&PhaseConfig::new(0.3, 1.1, 2.9));
        use TimeBin::*;
        assert_eq!(t.bin_marginal(Early, Late), 0.0);
        assert_eq!(t.bin_marginal(Late, Early), 0.0);
        assert!((t.bin_marginal(Early, Early) - 0.125).abs() < 1e-15);
        assert!((t.bin_marginal(Late, Late) - 0.125).abs() < 1e-15);
        assert!((t.bin_marginal(Central, Central) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn parity_flips_interference() {
        let t = joint_distribution(&PhaseConfig::with_sum(PI / 3.0));
        let same = t.prob(&cc(Port::One, Port::One)) - 1.0 / 16.0;
        let diff = t.prob(&cc(Port::One, Port::Two)) - 1.0 / 16.0;
        assert!((same + diff).abs() < 1e-15);
        assert!(same > 0.0);
    }

    #[test]
    fn phases_stored_modulo_two_pi() {
        let p = PhaseConfig::new(-0.5, 7.0, TAU);
        assert!((p.source() - (TAU - 0.5)).abs() < 1e-12);
        assert!((p.a() - (7.0 - TAU)).abs() < 1e-12);
        assert_eq!(p.b(), 0.0);
    }

    #[test]
    fn channel_assignment() {
        let pairs = [UserPair::new("alice", "bob"), UserPair::new("charlie", "diana")];
        let m = assign_channels(&pairs, 2).unwrap();
        assert_eq!(m.channels_of(&pairs[0]), Some((1, -1)));
        assert_eq!(m.channels_of(&pairs[1]), Some((2, -2)));
        assert_eq!(m.user_on(-2), Some("diana"));
        assert!(assign_channels(&[], 2).unwrap().is_empty());
        let three = [pairs[0].clone(), pairs[1].clone(), UserPair::new("eve", "frank")];
        assert!(matches!(assign_channels(&three, 2), Err(Error::Capacity { pairs: 3, channels: 2 })));

        let mut m = m;
        m.swap(0, 1);
        assert_eq!(m.channels_of(&pairs[0]), Some((2, -2)));
        assert_eq!(m.user_on(1), Some("charlie"));
    }

    #[test]
    fn duplicate_user_rejected() {
        let pairs = [UserPair::new("alice", "bob"), UserPair::new("bob", "carol")];
        assert!(assign_channels(&pairs, 4).is_err());
    }

    #[test]
    fn zero_mean_gives_empty_stream() {
        let cfg = SourceConfig { mean_pairs: 0.0, frames: 1000, seed: 1 };
        let n = PairSampler::new(&cfg, &ClockConfig::default(), &PhaseConfig::with_sum(0.0), 1).count();
        assert_eq!(n, 0);
    }

    #[test]
    fn pairs_stay_inside_frame_range() {
        let cfg = SourceConfig { mean_pairs: 0.5, frames: 200, seed: 9 };
        for e in PairSampler::new(&cfg, &ClockConfig::default(), &PhaseConfig::with_sum(0.0), 1) {
            assert!((1..=200).contains(&e.frame));
            assert!(e.a.is_some() && e.b.is_some());
        }
    }

    #[test]
    fn thinning_composes_multiplicatively() {
        let mut rng = rng::stream(3, &[]);
        let n = 200_000;
        let mut kept = 0;
        for _ in 0..n {
            let mut f: f64 = rng.random();
            if thin(&mut f, 0.5) && thin(&mut f, 0.4) {
                kept += 1;
            }
        }
        let p = kept as f64 / n as f64;
        assert!((p - 0.2).abs() < 4.0 * (0.2f64 * 0.8 / n as f64).sqrt());
    }
}
