//! Key processing: clock-offset recovery, coincidence matching, sifting,
//! error rates, the asymptotic secure-rate estimate and the DTM penalty
//! decomposition.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::demux::ClassifiedEvent;
use crate::error::{Error, Result};
use crate::link::LinkConfig;
use crate::source::Port;
use crate::timebase::{ClockConfig, Picos, TimeBin};

/// Coarse cross-correlation resolution used by [`recover_offset`].
pub const COARSE_BIN_PS: i64 = 1000;
/// Final resolution of [`recover_offset`].
pub const FINE_BIN_PS: i64 = 20;

/// Offset `o` such that events of stream `b` occur at `a + o`.
///
/// Both streams must be time-ordered. Differences `b_j − a_i` within
/// `±search_window_ps` are histogrammed at 1 ns resolution; the strongest
/// bin must clear a Poisson noise floor, and the peak is then refined at
/// 20 ps resolution with a centroid.
pub fn recover_offset(a: &[Picos], b: &[Picos], search_window_ps: Picos) -> Result<i64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Sync("cannot correlate an empty stream".into()));
    }
    let w = search_window_ps as i64;
    let nbins = (2 * w / COARSE_BIN_PS + 1) as usize;
    let mut coarse = vec![0u32; nbins];
    let mut total = 0u64;
    let mut lo = 0usize;
    for &ta in a {
        let ta = ta as i64;
        while lo < b.len() && (b[lo] as i64) < ta - w {
            lo += 1;
        }
        for &tb in &b[lo..] {
            let d = tb as i64 - ta;
            if d > w {
                break;
            }
            coarse[((d + w) / COARSE_BIN_PS) as usize] += 1;
            total += 1;
        }
    }
    // Pairs of adjacent bins, so a peak straddling a boundary is not split.
    let (mut best, mut best_sum) = (0usize, 0u64);
    for i in 0..nbins - 1 {
        let s = coarse[i] as u64 + coarse[i + 1] as u64;
        if s > best_sum {
            best_sum = s;
            best = i;
        }
    }
    let mean = 2.0 * total as f64 / nbins as f64;
    let floor = mean + 6.0 * mean.sqrt() + 5.0;
    if (best_sum as f64) < floor {
        return Err(Error::Sync(format!(
            "no correlation peak: best {best_sum} counts against a noise floor of {floor:.1}"
        )));
    }
    let center = best as i64 * COARSE_BIN_PS - w + COARSE_BIN_PS;

    // Fine pass over ±1.5 coarse bins around the peak.
    let span = 3 * COARSE_BIN_PS / 2;
    let nfine = (2 * span / FINE_BIN_PS + 1) as usize;
    let mut fine = vec![0u32; nfine];
    let mut lo = 0usize;
    for &ta in a {
        let ta = ta as i64;
        while lo < b.len() && (b[lo] as i64) < ta + center - span {
            lo += 1;
        }
        for &tb in &b[lo..] {
            let d = tb as i64 - ta - center;
            if d > span {
                break;
            }
            fine[((d + span) / FINE_BIN_PS) as usize] += 1;
        }
    }
    let smooth = |i: usize| -> u64 {
        (i.saturating_sub(2)..=(i + 2).min(nfine - 1)).map(|k| fine[k] as u64).sum()
    };
    let peak = (0..nfine).max_by_key(|&i| (smooth(i), std::cmp::Reverse(i))).unwrap_or(0);
    let mut wsum = 0.0;
    let mut msum = 0.0;
    for k in peak.saturating_sub(3)..=(peak + 3).min(nfine - 1) {
        let pos = (k as i64 * FINE_BIN_PS - span) as f64 + FINE_BIN_PS as f64 / 2.0;
        wsum += fine[k] as f64;
        msum += fine[k] as f64 * pos;
    }
    Ok(center + (msum / wsum).round() as i64)
}

/// One frame in which both receivers registered a classified detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceRecord {
    pub frame: i64,
    pub a_port: Port,
    pub a_bin: TimeBin,
    pub b_port: Port,
    pub b_bin: TimeBin,
    pub a_index: u32,
    pub b_index: u32,
    /// Both detections stem from the same photon pair (known only in simulation).
    pub genuine: bool,
}

/// Pair classified events sharing a frame index.
///
/// Inputs must be ordered by frame. When a receiver has several detections
/// in one frame, the first one is used.
pub fn match_events(a: &[ClassifiedEvent], b: &[ClassifiedEvent]) -> Vec<CoincidenceRecord> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let (fa, fb) = (a[i].frame, b[j].frame);
        if fa < fb {
            i += 1;
        } else if fb < fa {
            j += 1;
        } else {
            let (ea, eb) = (&a[i], &b[j]);
            let genuine = matches!((ea.truth, eb.truth), (Some(x), Some(y)) if x.pair_id == y.pair_id);
            out.push(CoincidenceRecord {
                frame: fa,
                a_port: ea.port,
                a_bin: ea.bin,
                b_port: eb.port,
                b_bin: eb.bin,
                a_index: ea.index,
                b_index: eb.index,
                genuine,
            });
            while i < a.len() && a[i].frame == fa {
                i += 1;
            }
            while j < b.len() && b[j].frame == fa {
                j += 1;
            }
        }
    }
    out
}

/// Sifted bits of both receivers, per basis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SiftedKey {
    pub time_a: Vec<u8>,
    pub time_b: Vec<u8>,
    pub phase_a: Vec<u8>,
    pub phase_b: Vec<u8>,
    pub discarded: u64,
}

fn time_bit(bin: TimeBin) -> Option<u8> {
    match bin {
        TimeBin::Early => Some(0),
        TimeBin::Late => Some(1),
        TimeBin::Central => None,
    }
}

/// Basis sifting.
///
/// Both detections in Early/Late give a time-basis bit each (Early = 0,
/// Late = 1); both Central give a phase-basis bit each (port 1 = 0,
/// port 2 = 1), so that bits agree at `α + β − φ = 0`. Coincidences with
/// one Central and one non-central detection measured in different bases
/// and are discarded.
pub fn sift(coincidences: &[CoincidenceRecord]) -> SiftedKey {
    let mut k = SiftedKey::default();
    for c in coincidences {
        match (time_bit(c.a_bin), time_bit(c.b_bin)) {
            (Some(x), Some(y)) => {
                k.time_a.push(x);
                k.time_b.push(y);
            }
            (None, None) => {
                k.phase_a.push(c.a_port.bit());
                k.phase_b.push(c.b_port.bit());
            }
            _ => k.discarded += 1,
        }
    }
    k
}

/// Fraction of positions where the two bit strings differ.
pub fn qber(bits_a: &[u8], bits_b: &[u8]) -> Result<f64> {
    if bits_a.len() != bits_b.len() {
        return Err(Error::Domain(format!(
            "bit strings differ in length ({} vs {})",
            bits_a.len(),
            bits_b.len()
        )));
    }
    if bits_a.is_empty() {
        return Err(Error::UndefinedRate("QBER of an empty key".into()));
    }
    let errors = bits_a.iter().zip(bits_b).filter(|(x, y)| x != y).count();
    Ok(errors as f64 / bits_a.len() as f64)
}

/// Binary entropy in bits.
///
/// The two terms are summed, so swapping `q` and `1 − q` gives a bit-identical
/// result whenever `1 − q` is exactly representable.
pub fn h2(q: f64) -> f64 {
    if q <= 0.0 || q >= 1.0 {
        return 0.0;
    }
    let r = 1.0 - q;
    (-q * q.log2()) + (-r * r.log2())
}

/// Error-correction efficiency `f_ec`, constant or tabulated against QBER.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EcEfficiency {
    Constant(f64),
    /// `(qber, f_ec)` points, linearly interpolated and clamped at the ends.
    Table(Vec<(f64, f64)>),
}

impl Default for EcEfficiency {
    fn default() -> Self {
        EcEfficiency::Constant(1.2)
    }
}

impl EcEfficiency {
    pub fn at(&self, q: f64) -> f64 {
        match self {
            EcEfficiency::Constant(f) => *f,
            EcEfficiency::Table(points) => {
                let Some(first) = points.first() else { return 1.0 };
                if q <= first.0 {
                    return first.1;
                }
                for w in points.windows(2) {
                    let ((q0, f0), (q1, f1)) = (w[0], w[1]);
                    if q <= q1 {
                        return f0 + (f1 - f0) * (q - q0) / (q1 - q0);
                    }
                }
                points.last().unwrap().1
            }
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        let ok = match self {
            EcEfficiency::Constant(f) => f.is_finite() && *f >= 1.0,
            EcEfficiency::Table(p) => {
                !p.is_empty()
                    && p.iter().all(|(q, f)| (0.0..0.5).contains(q) && f.is_finite() && *f >= 1.0)
                    && p.windows(2).all(|w| w[0].0 < w[1].0)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                path,
                "f_ec must be ≥ 1, either a number or increasing [qber, f_ec] pairs with qber in [0, 0.5)",
            ))
        }
    }
}

/// Asymptotic one-way secure rate `R · max(0, 1 − f_ec(Q)·h2(Q) − h2(Q))`.
pub fn secure_rate(sifted_rate: f64, q: f64, f_ec: &EcEfficiency) -> Result<f64> {
    if !(0.0..0.5).contains(&q) {
        return Err(Error::Domain(format!("QBER {q} outside [0, 0.5)")));
    }
    let h = h2(q);
    Ok(sifted_rate * (1.0 - f_ec.at(q) * h - h).max(0.0))
}

/// Calibration mode: the constant `f_ec` that maps `(sifted, Q)` to `secure`.
pub fn fit_fec(sifted_rate: f64, q: f64, secure: f64) -> Result<f64> {
    if !(q > 0.0 && q < 0.5) {
        return Err(Error::Domain(format!("cannot fit f_ec at QBER {q}")));
    }
    if !(sifted_rate > 0.0 && (0.0..=sifted_rate).contains(&secure)) {
        return Err(Error::Domain(format!(
            "secure rate {secure} must lie between 0 and the sifted rate {sifted_rate}"
        )));
    }
    let h = h2(q);
    Ok((1.0 - secure / sifted_rate - h) / h)
}

/// Running counts from which [`KeyMetrics`] are derived.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyTally {
    pub coincidences: u64,
    pub accidental_coincidences: u64,
    pub sifted_bits_time: u64,
    pub sifted_bits_phase: u64,
    pub errors_time: u64,
    pub errors_phase: u64,
    pub discarded: u64,
}

impl KeyTally {
    pub fn add(&mut self, coincidences: &[CoincidenceRecord]) {
        for c in coincidences {
            self.coincidences += 1;
            if !c.genuine {
                self.accidental_coincidences += 1;
            }
            match (time_bit(c.a_bin), time_bit(c.b_bin)) {
                (Some(x), Some(y)) => {
                    self.sifted_bits_time += 1;
                    self.errors_time += (x != y) as u64;
                }
                (None, None) => {
                    self.sifted_bits_phase += 1;
                    self.errors_phase += (c.a_port != c.b_port) as u64;
                }
                _ => self.discarded += 1,
            }
        }
    }

    pub fn merge(&mut self, o: &KeyTally) {
        self.coincidences += o.coincidences;
        self.accidental_coincidences += o.accidental_coincidences;
        self.sifted_bits_time += o.sifted_bits_time;
        self.sifted_bits_phase += o.sifted_bits_phase;
        self.errors_time += o.errors_time;
        self.errors_phase += o.errors_phase;
        self.discarded += o.discarded;
    }

    pub fn sifted_bits(&self) -> u64 {
        self.sifted_bits_time + self.sifted_bits_phase
    }

    pub fn metrics(&self, duration_s: f64, f_ec: &EcEfficiency) -> KeyMetrics {
        let ratio = |e: u64, n: u64| (n > 0).then(|| e as f64 / n as f64);
        let qber_time = ratio(self.errors_time, self.sifted_bits_time);
        let qber_phase = ratio(self.errors_phase, self.sifted_bits_phase);
        let qber_combined = ratio(self.errors_time + self.errors_phase, self.sifted_bits());
        let sifted_rate = if duration_s > 0.0 {
            self.sifted_bits() as f64 / duration_s
        } else {
            0.0
        };
        let secure = match qber_combined {
            Some(q) => secure_rate(sifted_rate, q, f_ec).unwrap_or(0.0),
            None => 0.0,
        };
        KeyMetrics {
            duration_s,
            tally: *self,
            qber_time,
            qber_phase,
            qber_combined,
            sifted_rate,
            secure_rate: secure,
        }
    }
}

/// Key statistics of one user pair over some duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyMetrics {
    pub duration_s: f64,
    #[serde(flatten)]
    pub tally: KeyTally,
    /// `None` when no bits were sifted in that basis.
    pub qber_time: Option<f64>,
    pub qber_phase: Option<f64>,
    /// Bit-weighted mean over both bases.
    pub qber_combined: Option<f64>,
    pub sifted_rate: f64,
    pub secure_rate: f64,
}

impl KeyMetrics {
    pub fn empty() -> Self {
        KeyTally::default().metrics(0.0, &EcEfficiency::default())
    }
}

/// Per-receiver parameters that must agree between two runs for a penalty
/// comparison to be meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverShared {
    pub name: String,
    pub phase_rad: f64,
    pub port_transmission: [f64; 2],
    pub link: LinkConfig,
    pub dead_time_ps: Picos,
}

/// Run parameters that must agree between two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedParameters {
    pub clock: ClockConfig,
    pub mean_pairs: f64,
    pub source_phase_rad: f64,
    pub receivers: [ReceiverShared; 2],
}

impl SharedParameters {
    /// Names of the fields that differ.
    pub fn differences(&self, other: &SharedParameters) -> Vec<String> {
        let mut d = Vec::new();
        if self.clock != other.clock {
            d.push("clock".to_string());
        }
        if self.mean_pairs != other.mean_pairs {
            d.push("source.mean_pairs".into());
        }
        if self.source_phase_rad != other.source_phase_rad {
            d.push("source.phase_rad".into());
        }
        for (x, y) in self.receivers.iter().zip(&other.receivers) {
            let n = &x.name;
            if x.name != y.name {
                d.push(format!("receiver {n} vs {}", y.name));
                continue;
            }
            if x.phase_rad != y.phase_rad {
                d.push(format!("{n}.phase_rad"));
            }
            if x.port_transmission != y.port_transmission {
                d.push(format!("{n}.port_transmission"));
            }
            if x.link != y.link {
                d.push(format!("{n}.link"));
            }
            if x.dead_time_ps != y.dead_time_ps {
                d.push(format!("{n}.detector.dead_time_ps"));
            }
        }
        d
    }
}

/// What the penalty decomposition needs to know about one pair of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyInput {
    pub pair: String,
    pub dtm: bool,
    pub shared: SharedParameters,
    /// Measured rate per physical detector, per receiver.
    pub detector_rates_hz: [Vec<f64>; 2],
    pub metrics: KeyMetrics,
    /// Same run with zero dead time.
    pub sifted_rate_tau_off: Option<f64>,
    /// Same run with zero dead time and no DTM path losses (DTM runs only).
    pub sifted_rate_lossless_tau_off: Option<f64>,
}

impl PenaltyInput {
    /// Fraction of sifted rate lost to DTM path losses (zero without DTM).
    fn insertion(&self) -> Result<f64> {
        if !self.dtm {
            return Ok(0.0);
        }
        match (self.sifted_rate_tau_off, self.sifted_rate_lossless_tau_off) {
            (Some(s), Some(l)) if l > 0.0 => Ok(1.0 - s / l),
            _ => Err(Error::UndefinedRate(format!(
                "{}: counterfactual runs needed for the insertion component are missing or empty",
                self.pair
            ))),
        }
    }

    /// Product over receivers of `Σ R_m / Σ R_e`, with `R_e` from the
    /// saturation estimate `R_m / R_e = 1 − τ R_m`.
    fn saturation_factor(&self) -> Result<f64> {
        let mut f = 1.0;
        for (rates, rx) in self.detector_rates_hz.iter().zip(&self.shared.receivers) {
            let measured: f64 = rates.iter().sum();
            if measured <= 0.0 {
                continue;
            }
            let mut expected = 0.0;
            for &r in rates {
                expected += crate::detect::expected_rate(r, rx.dead_time_ps)?;
            }
            f *= measured / expected;
        }
        Ok(f)
    }

    fn simulated_saturation_factor(&self) -> Option<f64> {
        let off = self.sifted_rate_tau_off?;
        (off > 0.0).then(|| self.metrics.sifted_rate / off)
    }
}

/// Decomposition of the sifted-rate change from run `a` (reference, usually
/// without DTM) to run `b` for one user pair. All components are fractional
/// reductions, positive when `b` is worse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPenalty {
    pub pair: String,
    /// From DTM combiner and connection losses, by counterfactual simulation.
    pub insertion: f64,
    /// From detector saturation, by the first-order dead-time estimate
    /// applied to the measured count rates.
    pub saturation: f64,
    /// Saturation cross-check from the simulated dead-time-on/off ratio.
    pub saturation_simulated: Option<f64>,
    /// `1 − (1 − insertion)(1 − saturation)`.
    pub combined: f64,
    /// Observed sifted-rate reduction.
    pub total: f64,
    /// Part of `total` not explained by `combined`:
    /// `1 − (1 − total) / ((1 − insertion)(1 − saturation))`.
    pub residual: f64,
    pub secure_rate_reduction: Option<f64>,
    pub sifted_rate_a: f64,
    pub sifted_rate_b: f64,
    pub secure_rate_a: f64,
    pub secure_rate_b: f64,
    pub qber_a: Option<f64>,
    pub qber_b: Option<f64>,
}

/// Penalty decomposition for every user pair present in both runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyReport {
    pub pairs: Vec<PairPenalty>,
    /// Pairs present in only one of the runs.
    pub skipped: Vec<String>,
}

pub fn pair_penalty(a: &PenaltyInput, b: &PenaltyInput) -> Result<PairPenalty> {
    let diff = a.shared.differences(&b.shared);
    if !diff.is_empty() {
        return Err(Error::Comparison(format!(
            "pair {} differs in more than DTM: {}",
            a.pair,
            diff.join(", ")
        )));
    }
    let ins_a = a.insertion()?;
    let ins_b = b.insertion()?;
    let insertion = 1.0 - (1.0 - ins_b) / (1.0 - ins_a);
    let saturation = 1.0 - b.saturation_factor()? / a.saturation_factor()?;
    let saturation_simulated = match (a.simulated_saturation_factor(), b.simulated_saturation_factor()) {
        (Some(x), Some(y)) if x > 0.0 => Some(1.0 - y / x),
        _ => None,
    };
    let (sa, sb) = (a.metrics.sifted_rate, b.metrics.sifted_rate);
    if sa <= 0.0 {
        return Err(Error::UndefinedRate(format!("pair {} has no sifted key in the reference run", a.pair)));
    }
    let total = 1.0 - sb / sa;
    let kept = (1.0 - insertion) * (1.0 - saturation);
    let combined = 1.0 - kept;
    let residual = if kept > 0.0 { 1.0 - (1.0 - total) / kept } else { f64::NAN };
    let (ka, kb) = (a.metrics.secure_rate, b.metrics.secure_rate);
    Ok(PairPenalty {
        pair: a.pair.clone(),
        insertion,
        saturation,
        saturation_simulated,
        combined,
        total,
        residual,
        secure_rate_reduction: (ka > 0.0).then(|| 1.0 - kb / ka),
        sifted_rate_a: sa,
        sifted_rate_b: sb,
        secure_rate_a: ka,
        secure_rate_b: kb,
        qber_a: a.metrics.qber_combined,
        qber_b: b.metrics.qber_combined,
    })
}

pub fn penalty_report(run_a: &[PenaltyInput], run_b: &[PenaltyInput]) -> Result<PenaltyReport> {
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    for a in run_a {
        match run_b.iter().find(|b| b.pair == a.pair) {
            Some(b) => pairs.push(pair_penalty(a, b)?),
            None => skipped.push(a.pair.clone()),
        }
    }
    for b in run_b {
        if !run_a.iter().any(|a| a.pair == b.pair) {
            skipped.push(b.pair.clone());
        }
    }
    if pairs.is_empty() {
        return Err(Error::Comparison("the runs have no user pair in common".into()));
    }
    Ok(PenaltyReport { pairs, skipped })
}

impl PenaltyReport {
    pub fn summary(&self) -> String {
        let pct = |x: f64| format!("{:6.2} %", 100.0 * x);
        let opt = |x: Option<f64>| x.map(pct).unwrap_or_else(|| "     n/a".into());
        let mut s = String::new();
        for p in &self.pairs {
            let _ = writeln!(s, "pair {}", p.pair);
            let _ = writeln!(s, "  sifted rate           {:10.3} -> {:10.3} bit/s", p.sifted_rate_a, p.sifted_rate_b);
            let _ = writeln!(s, "  secure rate           {:10.3} -> {:10.3} bit/s", p.secure_rate_a, p.secure_rate_b);
            let _ = writeln!(s, "  QBER                  {} -> {}", opt(p.qber_a), opt(p.qber_b));
            let _ = writeln!(s, "  insertion loss        {}", pct(p.insertion));
            let _ = writeln!(s, "  saturation (estimate) {}", pct(p.saturation));
            let _ = writeln!(s, "  saturation (sim.)     {}", opt(p.saturation_simulated));
            let _ = writeln!(s, "  combined              {}", pct(p.combined));
            let _ = writeln!(s, "  observed reduction    {}", pct(p.total));
            let _ = writeln!(s, "  residual              {}", pct(p.residual));
            let _ = writeln!(s, "  secure-rate reduction {}", opt(p.secure_rate_reduction));
        }
        for name in &self.skipped {
            let _ = writeln!(s, "pair {name}: present in only one run, skipped");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::Origin;

    fn ev(frame: i64, bin: TimeBin, port: Port, index: u32) -> ClassifiedEvent {
        ClassifiedEvent {
            frame,
            bin,
            port,
            index,
            origin: Origin::Signal,
            truth: None,
        }
    }

    #[test]
    fn offset_of_shifted_copy() {
        let mut x = 12345u64;
        let a: Vec<Picos> = (0..3000)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (x >> 20) % 1_000_000_000_000
            })
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let b: Vec<Picos> = a.iter().map(|t| t + 123_450).collect();
        let o = recover_offset(&a, &b, 500_000_000).unwrap();
        assert!((o - 123_450).abs() <= FINE_BIN_PS, "{o}");
        let o = recover_offset(&b, &a, 500_000_000).unwrap();
        assert!((o + 123_450).abs() <= FINE_BIN_PS, "{o}");
    }

    #[test]
    fn matching_is_first_wins() {
        use TimeBin::*;
        let a = [ev(1, Early, Port::One, 0), ev(1, Late, Port::One, 1), ev(4, Early, Port::One, 2)];
        let b = [ev(1, Late, Port::Two, 0), ev(2, Early, Port::One, 1), ev(4, Central, Port::One, 2)];
        let m = match_events(&a, &b);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].a_bin, m[0].b_bin), (Early, Late));
        assert_eq!(m[1].frame, 4);
        assert!(match_events(&a[..1], &b[1..2]).is_empty());
    }

    #[test]
    fn sifting_rules() {
        use TimeBin::*;
        let c = |ab, ap, bb, bp| CoincidenceRecord {
            frame: 0,
            a_port: ap,
            a_bin: ab,
            b_port: bp,
            b_bin: bb,
            a_index: 0,
            b_index: 0,
            genuine: true,
        };
        let k = sift(&[
            c(Early, Port::One, Early, Port::Two),
            c(Late, Port::One, Late, Port::One),
            c(Central, Port::One, Central, Port::Two),
            c(Central, Port::One, Early, Port::One),
        ]);
        assert_eq!(k.time_a, vec![0, 1]);
        assert_eq!(k.time_b, vec![0, 1]);
        assert_eq!((k.phase_a.clone(), k.phase_b.clone()), (vec![0], vec![1]));
        assert_eq!(k.discarded, 1);
        assert_eq!(qber(&k.phase_a, &k.phase_b).unwrap(), 1.0);
    }

    #[test]
    fn qber_examples() {
        assert_eq!(qber(&[0, 1, 1], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(qber(&[0, 1, 1], &[1, 0, 0]).unwrap(), 1.0);
        assert!(matches!(qber(&[], &[]), Err(Error::UndefinedRate(_))));
    }

    #[test]
    fn entropy_identities() {
        assert_eq!(h2(0.0), 0.0);
        assert_eq!(h2(0.5), 1.0);
        for q in [0.5625, 0.89, 0.7, 0.99] {
            assert_eq!(h2(q), h2(1.0 - q));
        }
    }

    #[test]
    fn secure_rate_examples() {
        let f = EcEfficiency::default();
        assert_eq!(secure_rate(43.0, 0.0, &f).unwrap(), 43.0);
        assert_eq!(secure_rate(43.0, 0.11, &f).unwrap(), 0.0);
        assert!(1.0 - 2.2 * h2(0.11) < 0.0);
        assert!(matches!(secure_rate(1.0, 0.5, &f), Err(Error::Domain(_))));
        let fit = fit_fec(43.0, 0.0437, 15.3).unwrap();
        assert!((fit - 1.49).abs() < 0.005, "{fit}");
        let back = secure_rate(43.0, 0.0437, &EcEfficiency::Constant(fit)).unwrap();
        assert!((back - 15.3).abs() < 1e-9);
    }

    #[test]
    fn tabulated_efficiency_interpolates() {
        let t = EcEfficiency::Table(vec![(0.02, 1.2), (0.06, 1.6)]);
        assert_eq!(t.at(0.0), 1.2);
        assert!((t.at(0.04) - 1.4).abs() < 1e-12);
        assert_eq!(t.at(0.3), 1.6);
        t.validate("f_ec").unwrap();
        assert!(EcEfficiency::Constant(0.9).validate("f_ec").is_err());
    }
}
