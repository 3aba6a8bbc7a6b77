//! Time-bin classification and virtual-detector assignment.
//!
//! Without DTM each interferometer output has its own detector and a frame
//! contains three windows (Early, Central, Late) spaced by the interferometer
//! delay Δ. With DTM the delayed output is nested between them, giving six
//! windows: virtual detector V0 (undelayed output) at `{0, Δ, 2Δ}` and V1 at
//! `{δ, Δ+δ, 2Δ+δ}` relative to the frame origin.
//!
//! The frame origin is found from the folded arrival histogram, which only
//! pins down the Early peak of *one* of the two nested combs. Which comb
//! belongs to which interferometer output is decided by [`align`], which
//! tests each hypothesis against the partner's bootstrap detections: the
//! correct assignment reproduces the forbidden-pattern structure of the
//! two-photon state (no Early–Late or Late–Early coincidences) and keeps
//! matched frames together, while the wrong one rotates the bin labels of the
//! misassigned output.

use serde::{Deserialize, Serialize};

use crate::detect::{DetectionRecord, Origin, Truth};
use crate::error::{Error, Result};
use crate::keyproc::{match_events, CoincidenceRecord};
use crate::source::{JointTable, Port};
use crate::timebase::{ClockConfig, Histogram, Picos, TimeBin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VirtualDetector {
    V0,
    V1,
}

impl VirtualDetector {
    pub fn label(self) -> &'static str {
        match self {
            VirtualDetector::V0 => "V0",
            VirtualDetector::V1 => "V1",
        }
    }
}

/// One classification window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    /// Center offset within the frame, in `[0, period)`.
    pub center: Picos,
    /// Center before reduction modulo the period (`2Δ + δ` may exceed it).
    pub unwrapped: i64,
    pub half_width: Picos,
    pub detector: VirtualDetector,
    pub bin: TimeBin,
}

impl Window {
    pub fn label(&self) -> String {
        format!("{}-{}", self.detector.label(), self.bin.label())
    }
}

/// Intra-frame windows mapped to (virtual detector, time bin).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTable {
    period: Picos,
    windows: Vec<Window>,
    /// Window index per picosecond offset, `u8::MAX` when unclassified.
    #[serde(skip)]
    lut: Vec<u8>,
}

fn circular_distance(a: Picos, b: Picos, period: Picos) -> Picos {
    let d = a.abs_diff(b) % period;
    d.min(period - d)
}

impl BinTable {
    /// Three windows for a receiver with one detector per output.
    pub fn single(clock: &ClockConfig, half_width: Picos) -> Result<Self> {
        Self::build(clock, None, half_width)
    }

    /// Six windows for a DTM receiver with port 2 delayed by `delay_offset`.
    pub fn dtm(clock: &ClockConfig, delay_offset: Picos, half_width: Picos) -> Result<Self> {
        Self::build(clock, Some(delay_offset), half_width)
    }

    fn build(clock: &ClockConfig, delay: Option<Picos>, half_width: Picos) -> Result<Self> {
        let period = clock.repetition_period_ps;
        let mut windows = Vec::new();
        let mut push = |unwrapped: i64, detector| {
            for bin in TimeBin::ALL {
                let u = unwrapped + clock.bin_offset(bin) as i64;
                windows.push(Window {
                    center: u.rem_euclid(period as i64) as Picos,
                    unwrapped: u,
                    half_width,
                    detector,
                    bin,
                });
            }
        };
        push(0, VirtualDetector::V0);
        if let Some(d) = delay {
            push(d as i64, VirtualDetector::V1);
        }
        let mut table = Self {
            period,
            windows,
            lut: Vec::new(),
        };
        table.check_disjoint()?;
        table.rebuild_lut();
        Ok(table)
    }

    fn check_disjoint(&self) -> Result<()> {
        let windows = &self.windows;
        if windows.iter().any(|w| w.half_width == 0) {
            return Err(Error::config("demux.half_width_ps", "must be positive"));
        }
        for (i, a) in windows.iter().enumerate() {
            for b in &windows[i + 1..] {
                if circular_distance(a.center, b.center, self.period) <= a.half_width + b.half_width {
                    return Err(Error::config(
                        "demux.half_width_ps",
                        format!(
                            "windows {} at {} ps and {} at {} ps overlap with half width {} ps",
                            a.label(),
                            a.center,
                            b.label(),
                            b.center,
                            a.half_width
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    fn rebuild_lut(&mut self) {
        let mut lut = vec![u8::MAX; self.period as usize];
        for (i, w) in self.windows.iter().enumerate() {
            let c = w.center as i64;
            for o in c - w.half_width as i64..=c + w.half_width as i64 {
                lut[o.rem_euclid(self.period as i64) as usize] = i as u8;
            }
        }
        self.lut = lut;
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn period(&self) -> Picos {
        self.period
    }

    pub fn is_dtm(&self) -> bool {
        self.windows.len() == 6
    }

    /// Window containing `offset` (taken modulo the period).
    pub fn lookup(&self, offset: Picos) -> Option<&Window> {
        if self.lut.is_empty() {
            // Deserialised tables have no lookup; fall back to a scan.
            return self
                .windows
                .iter()
                .find(|w| circular_distance(w.center, offset % self.period, self.period) <= w.half_width);
        }
        match self.lut[(offset % self.period) as usize] {
            u8::MAX => None,
            i => Some(&self.windows[i as usize]),
        }
    }

    /// Window containing the time `t_rel` measured from a frame origin, and
    /// the index of the frame the event belongs to.
    pub fn locate(&self, t_rel: i64) -> Option<(&Window, i64)> {
        let w = self.lookup(t_rel.rem_euclid(self.period as i64) as Picos)?;
        let p = self.period as i64;
        let frame = (t_rel - w.unwrapped + p / 2).div_euclid(p);
        Some((w, frame))
    }

    /// Restrict every window to a new half width.
    pub fn with_half_width(&self, half_width: Picos) -> Result<Self> {
        let mut t = self.clone();
        for w in &mut t.windows {
            w.half_width = half_width;
        }
        t.check_disjoint()?;
        t.rebuild_lut();
        Ok(t)
    }
}

/// Result of classifying one detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Classification {
    Classified(VirtualDetector, TimeBin),
    Unclassified,
}

impl Classification {
    pub fn label(&self) -> String {
        match self {
            Classification::Classified(d, b) => format!("{}-{}", d.label(), b.label()),
            Classification::Unclassified => "unclassified".into(),
        }
    }
}

/// Classify a record whose timestamp is already referenced to the frame origin.
pub fn classify(record: &DetectionRecord, table: &BinTable, clock: &ClockConfig) -> Classification {
    let offset = record.timestamp % clock.repetition_period_ps;
    match table.lookup(offset) {
        Some(w) => Classification::Classified(w.detector, w.bin),
        None => Classification::Unclassified,
    }
}

/// A detection resolved to frame, time bin and interferometer output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifiedEvent {
    pub frame: i64,
    pub bin: TimeBin,
    pub port: Port,
    /// Position of the record in the party's detection stream.
    pub index: u32,
    pub origin: Origin,
    pub truth: Option<Truth>,
}

/// How a receiver's detections map onto interferometer outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortRule {
    /// One physical detector per output: `[port 1 id, port 2 id]`.
    ByDetector([u32; 2]),
    /// Shared DTM detector: V0 windows are port 1, V1 windows port 2.
    Virtual,
}

/// Everything needed to turn raw timestamps into classified events.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub table: BinTable,
    /// Time of a port-1 Early arrival of frame 0, in the receiver's aligned
    /// coordinates.
    pub origin: i64,
    /// Subtracted from raw timestamps before decoding (clock offset).
    pub shift: i64,
    pub ports: PortRule,
}

impl Decoder {
    pub fn decode(&self, index: usize, rec: &DetectionRecord) -> Option<ClassifiedEvent> {
        let t_rel = rec.timestamp as i64 - self.shift - self.origin;
        let (w, frame) = self.table.locate(t_rel)?;
        let port = match self.ports {
            PortRule::Virtual => match w.detector {
                VirtualDetector::V0 => Port::One,
                VirtualDetector::V1 => Port::Two,
            },
            PortRule::ByDetector([p1, p2]) => {
                if rec.detector == p1 {
                    Port::One
                } else if rec.detector == p2 {
                    Port::Two
                } else {
                    return None;
                }
            }
        };
        Some(ClassifiedEvent {
            frame,
            bin: w.bin,
            port,
            index: index as u32,
            origin: rec.origin,
            truth: rec.truth,
        })
    }

    pub fn decode_all(&self, records: &[DetectionRecord]) -> Vec<ClassifiedEvent> {
        records
            .iter()
            .enumerate()
            .filter_map(|(i, r)| self.decode(i, r))
            .collect()
    }

    /// Label of the window a record falls into, for classification summaries.
    pub fn window_label(&self, rec: &DetectionRecord) -> String {
        let t_rel = rec.timestamp as i64 - self.shift - self.origin;
        match self.table.locate(t_rel) {
            Some((w, _)) => w.label(),
            None => "unclassified".into(),
        }
    }
}

/// Frame phase of a receiver: the offset of the Early peak of the comb with
/// the strongest `Early + 2·Central + Late` signature.
///
/// A coarse template scan over the histogram is followed by a centroid
/// refinement around the three peaks of the selected comb.
pub fn recover_phase(hist: &Histogram, clock: &ClockConfig) -> Result<f64> {
    let n = hist.counts.len();
    let w = hist.bin_width as f64;
    if hist.total() == 0 {
        return Err(Error::Sync("empty arrival histogram".into()));
    }
    // Circular prefix sums for fast box sums.
    let mut prefix = vec![0u64; 2 * n + 1];
    for i in 0..2 * n {
        prefix[i + 1] = prefix[i] + hist.counts[i % n];
    }
    let radius = ((clock.pulse_fwhm_ps as f64 / w).round() as usize).max(1);
    let span = 2 * radius + 1;
    let box_sum = |center: usize| -> u64 {
        let lo = (center + n - radius % n) % n;
        prefix[lo + span.min(n)] - prefix[lo]
    };
    let step = (clock.interferometer_delay_ps as f64 / w).round() as usize;
    let mut best = (0u64, 0usize);
    for q in 0..n {
        let s = box_sum(q) + 2 * box_sum((q + step) % n) + box_sum((q + 2 * step) % n);
        if s > best.0 {
            best = (s, q);
        }
    }
    // Background-subtracted centroid refinement over the three peaks.
    let mut sorted = hist.counts.clone();
    sorted.sort_unstable();
    let background = sorted[n / 2] as f64;
    let mut weight = 0.0;
    let mut moment = 0.0;
    for k in 0..3 {
        let c = best.1 + k * step;
        for d in -(radius as i64)..=(radius as i64) {
            let idx = (c as i64 + d).rem_euclid(n as i64) as usize;
            let excess = hist.counts[idx] as f64 - background;
            if excess > 0.0 {
                weight += excess;
                // Offset relative to the nominal Early position.
                let pos = (best.1 as i64 + d) as f64 * w + w / 2.0 + (k * step) as f64 * w
                    - k as f64 * clock.interferometer_delay_ps as f64;
                moment += excess * pos;
            }
        }
    }
    let period = clock.repetition_period_ps as f64;
    let phase = if weight > 0.0 {
        moment / weight
    } else {
        best.1 as f64 * w
    };
    Ok(phase.rem_euclid(period))
}

/// Assignment of the comb found by [`recover_phase`] (V0) and the other,
/// nested comb (V1) to interferometer outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub v0_port: Port,
    pub v1_port: Port,
    /// Significance of the winning hypothesis over the runner-up, in σ.
    pub confidence: f64,
    /// Frame-matched coincidences supporting the winning hypothesis.
    pub bootstrap_coincidences: u64,
}

/// Parameters of the bootstrap significance test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub min_bootstrap: u64,
    /// Required separation between best and second-best hypothesis, in σ.
    pub significance: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            min_bootstrap: 100,
            significance: 2.0,
        }
    }
}

/// Outcome of [`align`]: the chosen hypothesis per receiver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub a: usize,
    pub b: usize,
    /// `(d_best − d_second) / sqrt(d_best + d_second)` over the symmetric
    /// difference of supporting coincidence sets; infinite with one hypothesis.
    pub confidence: f64,
    pub coincidences: u64,
}

fn supporting(coinc: &[CoincidenceRecord], model: &JointTable) -> Vec<(u32, u32)> {
    let mut s: Vec<(u32, u32)> = coinc
        .iter()
        .filter(|c| model.bin_marginal(c.a_bin, c.b_bin) > 0.0)
        .map(|c| (c.a_index, c.b_index))
        .collect();
    s.sort_unstable();
    s
}

fn difference_size(x: &[(u32, u32)], y: &[(u32, u32)]) -> u64 {
    // |x \ y| for sorted slices.
    let mut j = 0;
    let mut n = 0;
    for v in x {
        while j < y.len() && y[j] < *v {
            j += 1;
        }
        if j >= y.len() || y[j] != *v {
            n += 1;
        }
    }
    n
}

/// Choose the decoding hypotheses of two receivers from bootstrap data.
///
/// `a_candidates[i]` is receiver A's bootstrap stream decoded under its
/// hypothesis `i` (likewise for B). Every combination is matched frame by
/// frame; a coincidence *supports* a combination when its bin pattern has
/// non-zero probability under `model`. The combination with the most support
/// wins if it has at least `min_bootstrap` supporting coincidences and beats
/// the runner-up by `significance` σ on the coincidences the two disagree
/// about.
pub fn align(
    a_candidates: &[Vec<ClassifiedEvent>],
    b_candidates: &[Vec<ClassifiedEvent>],
    model: &JointTable,
    cfg: &AlignConfig,
) -> Result<Alignment> {
    if a_candidates.is_empty() || b_candidates.is_empty() {
        return Err(Error::InsufficientBootstrap("no decoding hypotheses".into()));
    }
    let mut scored = Vec::new();
    for (i, a) in a_candidates.iter().enumerate() {
        for (j, b) in b_candidates.iter().enumerate() {
            let s = supporting(&match_events(a, b), model);
            scored.push((i, j, s));
        }
    }
    // Stable order: most support first, ties keep hypothesis order.
    scored.sort_by(|x, y| y.2.len().cmp(&x.2.len()));
    let (bi, bj, best) = &scored[0];
    let n = best.len() as u64;
    if n < cfg.min_bootstrap {
        return Err(Error::InsufficientBootstrap(format!(
            "{n} supporting coincidences, at least {} required",
            cfg.min_bootstrap
        )));
    }
    let confidence = match scored.get(1) {
        None => f64::INFINITY,
        Some((_, _, second)) => {
            let d1 = difference_size(best, second) as f64;
            let d2 = difference_size(second, best) as f64;
            if d1 + d2 == 0.0 {
                0.0
            } else {
                (d1 - d2) / (d1 + d2).sqrt()
            }
        }
    };
    if confidence < cfg.significance {
        return Err(Error::InsufficientBootstrap(format!(
            "best assignment only {confidence:.2}σ ahead of the runner-up (need {}σ)",
            cfg.significance
        )));
    }
    Ok(Alignment {
        a: *bi,
        b: *bj,
        confidence,
        coincidences: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{joint_distribution, PhaseConfig};

    fn rec(t: Picos) -> DetectionRecord {
        DetectionRecord {
            detector: 0,
            timestamp: t,
            origin: Origin::Signal,
            truth: None,
        }
    }

    #[test]
    fn classify_examples() {
        let c = ClockConfig::default();
        let t = BinTable::dtm(&c, 1515, 500).unwrap();
        assert_eq!(
            classify(&rec(3030), &t, &c),
            Classification::Classified(VirtualDetector::V0, TimeBin::Central)
        );
        assert_eq!(
            classify(&rec(1515), &t, &c),
            Classification::Classified(VirtualDetector::V1, TimeBin::Early)
        );
        assert_eq!(classify(&rec(800), &t, &c), Classification::Unclassified);
        assert_eq!(
            classify(&rec(9100 * 7 + 9000), &t, &c),
            Classification::Classified(VirtualDetector::V0, TimeBin::Early)
        );
    }

    #[test]
    fn dtm_table_centers() {
        let c = ClockConfig::default();
        let t = BinTable::dtm(&c, 1515, 500).unwrap();
        let mut centers: Vec<_> = t.windows().iter().map(|w| w.center).collect();
        centers.sort();
        assert_eq!(centers, vec![0, 1515, 3030, 4545, 6060, 7575]);
        assert!(BinTable::dtm(&c, 1515, 800).is_err());
        assert!(BinTable::single(&c, 1400).is_ok());
    }

    #[test]
    fn wrapped_window_assigns_the_right_frame() {
        let c = ClockConfig::default();
        // Delay large enough that V1-Late wraps into the next frame.
        let t = BinTable::dtm(&c, 3500, 200).unwrap();
        let late = t
            .windows()
            .iter()
            .find(|w| w.detector == VirtualDetector::V1 && w.bin == TimeBin::Late)
            .unwrap();
        assert_eq!((late.unwrapped, late.center), (9560, 460));
        let (w, f) = t.locate(5 * 9100 + 9560).unwrap();
        assert_eq!((w.bin, f), (TimeBin::Late, 5));
        // Early window straddling the frame start belongs to the next frame.
        let (w, f) = t.locate(5 * 9100 + 9000).unwrap();
        assert_eq!((w.bin, w.detector, f), (TimeBin::Early, VirtualDetector::V0, 6));
        let (w, f) = t.locate(-50).unwrap();
        assert_eq!((w.bin, f), (TimeBin::Early, 0));
    }

    #[test]
    fn phase_of_synthetic_comb() {
        let c = ClockConfig::default();
        let mut h = Histogram::new(&c, 10).unwrap();
        let origin = 2222;
        for (off, n) in [(0, 100), (3030, 200), (6060, 100), (1515, 60), (4545, 120), (7575, 60)] {
            for _ in 0..n {
                h.add_offset((origin + off) % 9100);
            }
        }
        let p = recover_phase(&h, &c).unwrap();
        assert!((p - 2227.0).abs() < 10.0, "{p}");
    }

    #[test]
    fn empty_bootstrap_is_insufficient() {
        let model = joint_distribution(&PhaseConfig::with_sum(0.0));
        let r = align(&[vec![]], &[vec![]], &model, &AlignConfig::default());
        assert!(matches!(r, Err(Error::InsufficientBootstrap(_))));
    }
}
