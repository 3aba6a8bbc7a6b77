//! End-to-end simulation of a scenario: source → links → (DTM combiner) →
//! detectors → demultiplexing → key processing, for every user pair.
//!
//! Time is processed in blocks of frames. Every random stream is keyed by
//! the run seed, the stage, the channel or party and the block index, so the
//! result does not depend on scheduling and the counterfactual variants
//! (zero dead time, loss-free combiner) see exactly the same photons and dark
//! counts as the main run.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demux::{align, recover_phase, AssignmentResult, Decoder, PortRule};
use crate::detect::{combine_dtm, Arrival, DetectionRecord, Detector, DtmConfig, Truth};
use crate::error::{Error, Result};
use crate::keyproc::{
    match_events, recover_offset, KeyMetrics, KeyTally, PenaltyInput, ReceiverShared, SharedParameters,
};
use crate::link::Link;
use crate::rng;
use crate::scenario::{PartyConfig, Scenario};
use crate::source::{joint_distribution, PairSampler, PhaseConfig, Port, UserPair};
use crate::timebase::{wrap, Histogram, Picos};

/// Upper bound on the frames simulated in one block (about 0.6 s at the
/// default clock), which bounds memory use.
pub const MAX_BLOCK_FRAMES: u64 = 1 << 26;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the scenario's seed.
    pub seed: Option<u64>,
    /// Keep every detection record of the main run.
    pub keep_records: bool,
    /// Also simulate the zero-dead-time (and, with DTM, loss-free combiner)
    /// variants needed for the penalty decomposition.
    pub counterfactuals: bool,
}

/// Synchronisation state recovered from the bootstrap period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncInfo {
    /// Clock offset of the second receiver relative to the first.
    pub offset_ps: i64,
    /// Frame phase found in each receiver's bootstrap histogram.
    pub phases_ps: [f64; 2],
    /// Decoding origin of each receiver (port-1 Early arrival of frame 0).
    pub origins_ps: [i64; 2],
    /// Output assignment of receivers with a multiplexed detector.
    pub assignments: [Option<AssignmentResult>; 2],
    pub bootstrap_coincidences: u64,
}

/// One row of a key-rate time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    /// End of the interval, seconds after the bootstrap period.
    pub t_s: f64,
    pub sifted_rate: f64,
    pub qber: Option<f64>,
    pub secure_rate: f64,
}

#[derive(Debug, Clone)]
pub struct PartyResult {
    pub name: String,
    pub detector_ids: Vec<u32>,
    /// Counts per second of each physical detector after the bootstrap period.
    pub detector_rates_hz: Vec<f64>,
    /// Arrival times after the bootstrap period, folded relative to the
    /// decoding origin.
    pub histogram: Histogram,
    /// Window label → count, after the bootstrap period.
    pub classification: BTreeMap<String, u64>,
    /// Every detection, bootstrap included, when requested.
    pub records: Option<Vec<DetectionRecord>>,
}

#[derive(Debug, Clone)]
pub struct PairResult {
    pub pair: UserPair,
    pub channel: u32,
    pub sync: Option<SyncInfo>,
    pub metrics: KeyMetrics,
    pub timeseries: Vec<IntervalRow>,
    pub parties: [PartyResult; 2],
    pub penalty: PenaltyInput,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub scenario: Scenario,
    pub pairs: Vec<PairResult>,
}

/// Simulate every user pair of `scenario`.
pub fn run(scenario: &Scenario, opts: &RunOptions) -> Result<RunResult> {
    let mut scenario = scenario.clone();
    if let Some(s) = opts.seed {
        scenario.seed = s;
    }
    scenario.validate()?;
    let map = scenario.channel_map()?;
    let jobs: Vec<(u32, UserPair)> = map.iter().map(|(k, p)| (k, p.clone())).collect();
    log::info!(
        "running `{}`: {} pair(s), {} s after {} s bootstrap, seed {}",
        scenario.name,
        jobs.len(),
        scenario.duration_s,
        scenario.bootstrap_s,
        scenario.seed
    );
    let pairs = jobs
        .par_iter()
        .map(|(k, p)| PairRun::new(&scenario, p, *k, opts)?.execute())
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResult { scenario, pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    Main,
    TauOff,
    TauOffLossless,
}

/// Per-receiver simulation state.
struct Receiver<'a> {
    index: usize,
    cfg: &'a PartyConfig,
    link_delay: Picos,
    detector_ids: Vec<u32>,
    /// Detectors of each simulated variant, in `variants` order.
    detectors: Vec<Vec<Detector>>,
}

impl Receiver<'_> {
    fn port_rule(&self) -> PortRule {
        match self.detector_ids.as_slice() {
            [a, b] => PortRule::ByDetector([*a, *b]),
            _ => PortRule::Virtual,
        }
    }
}

struct PairRun<'a> {
    scenario: &'a Scenario,
    pair: UserPair,
    channel: u32,
    opts: &'a RunOptions,
    phases: PhaseConfig,
    acceptance: [f64; 2],
    variants: Vec<Variant>,
    rx: [Receiver<'a>; 2],
}

/// Time-sorted detections of both receivers for one block and variant.
type BlockRecords = [Vec<DetectionRecord>; 2];

impl<'a> PairRun<'a> {
    fn new(scenario: &'a Scenario, pair: &UserPair, channel: u32, opts: &'a RunOptions) -> Result<Self> {
        let dtm = scenario.dtm.enabled;
        let mut variants = vec![Variant::Main];
        if opts.counterfactuals {
            variants.push(Variant::TauOff);
            if dtm {
                variants.push(Variant::TauOffLossless);
            }
        }
        let receiver = |name: &str| -> Result<Receiver<'a>> {
            let index = scenario
                .party_index(name)
                .ok_or_else(|| Error::config("pairs", format!("unknown party `{name}`")))?;
            let cfg = &scenario.parties[index];
            let base = 2 * index as u32;
            let detector_ids = if dtm { vec![base] } else { vec![base, base + 1] };
            let detectors = variants
                .iter()
                .map(|v| {
                    let mut d = cfg.detector;
                    if *v != Variant::Main {
                        d.dead_time_ps = 0;
                    }
                    detector_ids.iter().map(|&id| Detector::new(id, d, scenario.seed)).collect()
                })
                .collect();
            Ok(Receiver {
                index,
                cfg,
                link_delay: cfg.link.delay_ps(),
                detector_ids,
                detectors,
            })
        };
        let rx = [receiver(&pair.a)?, receiver(&pair.b)?];
        // Largest end-to-end survival of any photon in any variant; the
        // loss-free variant skips the combiner loss.
        let acceptance = [0, 1].map(|i| {
            let c = rx[i].cfg;
            c.link.survival() * c.port_transmission[0].max(c.port_transmission[1]) * c.detector.conversion(dtm)
        });
        let phases = PhaseConfig::new(scenario.source.phase_rad, rx[0].cfg.phase_rad, rx[1].cfg.phase_rad);
        Ok(Self {
            scenario,
            pair: pair.clone(),
            channel,
            opts,
            phases,
            acceptance,
            variants,
            rx,
        })
    }

    fn period(&self) -> Picos {
        self.scenario.clock.repetition_period_ps
    }

    fn execute(mut self) -> Result<PairResult> {
        let s = self.scenario;
        let clock = s.clock;
        if s.duration_s <= 0.0 {
            return self.empty();
        }
        let boot_frames = clock.frames_in(s.bootstrap_s).max(1);
        let key_frames = clock.frames_in(s.duration_s);
        let interval_frames = clock.frames_in(s.accumulation_interval_s).max(1);

        // Bootstrap: simulate every variant so detector state stays in step,
        // but only the main run's detections are used, for calibration.
        let mut block = 0u64;
        let mut boot: BlockRecords = Default::default();
        let mut kept: [Vec<DetectionRecord>; 2] = Default::default();
        for range in split(1..1 + boot_frames, MAX_BLOCK_FRAMES) {
            let out = self.simulate_block(block, range)?;
            block += 1;
            for (i, recs) in out[0].iter().enumerate() {
                boot[i].extend_from_slice(recs);
                if self.opts.keep_records {
                    kept[i].extend_from_slice(recs);
                }
            }
        }
        let (sync, decoders) = self.calibrate(&boot)?;
        drop(boot);

        let mut totals = vec![KeyTally::default(); self.variants.len()];
        let mut timeseries = Vec::new();
        let mut counts: [Vec<u64>; 2] = [0, 1].map(|i| vec![0; self.rx[i].detector_ids.len()]);
        let mut hists = [
            Histogram::new(&clock, s.demux.histogram_bin_ps)?,
            Histogram::new(&clock, s.demux.histogram_bin_ps)?,
        ];
        let mut classification: [BTreeMap<String, u64>; 2] = Default::default();
        for (i, d) in decoders.iter().enumerate() {
            for w in d.table.windows() {
                classification[i].insert(w.label(), 0);
            }
            classification[i].insert("unclassified".into(), 0);
        }

        let key_start = 1 + boot_frames;
        let key_end = key_start + key_frames;
        let mut elapsed = 0u64;
        for interval in split(key_start..key_end, interval_frames) {
            let n = interval.end - interval.start;
            let mut tally = KeyTally::default();
            for range in split(interval, MAX_BLOCK_FRAMES) {
                let out = self.simulate_block(block, range)?;
                block += 1;
                for (v, recs) in out.iter().enumerate() {
                    let ev = [decoders[0].decode_all(&recs[0]), decoders[1].decode_all(&recs[1])];
                    let coinc = match_events(&ev[0], &ev[1]);
                    if v == 0 {
                        tally.add(&coinc);
                    } else {
                        totals[v].add(&coinc);
                    }
                }
                for i in 0..2 {
                    let recs = &out[0][i];
                    for r in recs {
                        let k = self.rx[i].detector_ids.iter().position(|&id| id == r.detector).unwrap_or(0);
                        counts[i][k] += 1;
                        let t = r.timestamp as i64 - decoders[i].shift - decoders[i].origin;
                        hists[i].add_offset(wrap(t, self.period()));
                        *classification[i].entry(decoders[i].window_label(r)).or_default() += 1;
                    }
                    if self.opts.keep_records {
                        kept[i].extend_from_slice(recs);
                    }
                }
            }
            elapsed += n;
            let secs = n as f64 / clock.repetition_rate_hz();
            let m = tally.metrics(secs, &s.f_ec);
            timeseries.push(IntervalRow {
                t_s: elapsed as f64 / clock.repetition_rate_hz(),
                sifted_rate: m.sifted_rate,
                qber: m.qber_combined,
                secure_rate: m.secure_rate,
            });
            totals[0].merge(&tally);
        }

        let duration = key_frames as f64 / clock.repetition_rate_hz();
        let metrics: Vec<KeyMetrics> = totals.iter().map(|t| t.metrics(duration, &s.f_ec)).collect();
        let rates = [0, 1].map(|i| counts[i].iter().map(|&c| c as f64 / duration).collect::<Vec<_>>());
        let variant_rate = |v: Variant| {
            self.variants.iter().position(|&x| x == v).map(|k| metrics[k].sifted_rate)
        };
        let penalty = PenaltyInput {
            pair: self.pair.label(),
            dtm: s.dtm.enabled,
            shared: self.shared(),
            detector_rates_hz: rates.clone(),
            metrics: metrics[0],
            sifted_rate_tau_off: variant_rate(Variant::TauOff),
            sifted_rate_lossless_tau_off: variant_rate(Variant::TauOffLossless),
        };
        let [ka, kb] = kept;
        let [ha, hb] = hists;
        let [ca, cb] = classification;
        let [ra, rb] = rates;
        let keep = self.opts.keep_records;
        let party = |i: usize, histogram, classification, detector_rates_hz, records: Vec<DetectionRecord>| PartyResult {
            name: self.rx[i].cfg.name.clone(),
            detector_ids: self.rx[i].detector_ids.clone(),
            detector_rates_hz,
            histogram,
            classification,
            records: keep.then_some(records),
        };
        let parties = [party(0, ha, ca, ra, ka), party(1, hb, cb, rb, kb)];
        log::info!(
            "{}: sifted {:.2}/s, QBER {}, secure {:.2}/s",
            self.pair.label(),
            metrics[0].sifted_rate,
            metrics[0].qber_combined.map_or("n/a".into(), |q| format!("{:.2}%", 100.0 * q)),
            metrics[0].secure_rate
        );
        Ok(PairResult {
            pair: self.pair.clone(),
            channel: self.channel,
            sync: Some(sync),
            metrics: metrics[0],
            timeseries,
            parties,
            penalty,
        })
    }

    /// Result of a zero-length run.
    fn empty(&self) -> Result<PairResult> {
        let clock = self.scenario.clock;
        let party = |i: usize| -> Result<PartyResult> {
            let r = &self.rx[i];
            Ok(PartyResult {
                name: r.cfg.name.clone(),
                detector_ids: r.detector_ids.clone(),
                detector_rates_hz: vec![0.0; r.detector_ids.len()],
                histogram: Histogram::new(&clock, self.scenario.demux.histogram_bin_ps)?,
                classification: BTreeMap::new(),
                records: self.opts.keep_records.then(Vec::new),
            })
        };
        let metrics = KeyMetrics::empty();
        let zero = |v: Variant| self.variants.contains(&v).then_some(0.0);
        Ok(PairResult {
            pair: self.pair.clone(),
            channel: self.channel,
            sync: None,
            metrics,
            timeseries: Vec::new(),
            parties: [party(0)?, party(1)?],
            penalty: PenaltyInput {
                pair: self.pair.label(),
                dtm: self.scenario.dtm.enabled,
                shared: self.shared(),
                detector_rates_hz: [0, 1].map(|i| vec![0.0; self.rx[i].detector_ids.len()]),
                metrics,
                sifted_rate_tau_off: zero(Variant::TauOff),
                sifted_rate_lossless_tau_off: zero(Variant::TauOffLossless),
            },
        })
    }

    fn shared(&self) -> SharedParameters {
        let s = self.scenario;
        SharedParameters {
            clock: s.clock,
            mean_pairs: s.source.mean_pairs,
            source_phase_rad: s.source.phase_rad,
            receivers: [0, 1].map(|i| {
                let c = self.rx[i].cfg;
                ReceiverShared {
                    name: c.name.clone(),
                    phase_rad: c.phase_rad,
                    port_transmission: c.port_transmission,
                    link: c.link,
                    dead_time_ps: c.detector.dead_time_ps,
                }
            }),
        }
    }

    /// Generate, transmit and detect the frames `frames`; returns the
    /// detections of each variant.
    fn simulate_block(&mut self, block: u64, frames: Range<u64>) -> Result<Vec<BlockRecords>> {
        let s = self.scenario;
        let seed = s.seed;
        let src_rng = rng::stream(seed, &[rng::TAG_SOURCE, self.channel as u64, block]);
        let sampler = PairSampler::over(
            s.source.mean_pairs,
            &s.clock,
            &self.phases,
            self.channel,
            frames.clone(),
            src_rng,
            block << 40,
        )
        .with_acceptance(self.acceptance[0], self.acceptance[1]);
        let mut links = [0, 1].map(|i| {
            let r = &self.rx[i];
            Link::with_rng(&r.cfg.link, rng::stream(seed, &[rng::TAG_LINK, r.index as u64, block]))
        });
        // Port-resolved arrivals at each receiver's detector inputs.
        let mut ports: [[Vec<Arrival>; 2]; 2] = Default::default();
        for ev in sampler {
            for (i, photon) in [ev.a, ev.b].into_iter().enumerate() {
                let Some(p) = photon else { continue };
                let Some(mut p) = links[i].pass(p) else { continue };
                if !p.survive(self.rx[i].cfg.port_transmission[p.port.index()]) {
                    continue;
                }
                ports[i][p.port.index()].push(Arrival {
                    time: p.time,
                    fate: p.fate,
                    multimode: false,
                    truth: Some(Truth {
                        pair_id: ev.pair_id,
                        frame: ev.frame,
                        bin: p.bin,
                        port: p.port,
                    }),
                });
            }
        }
        for port in ports.iter_mut().flatten() {
            port.sort_by_key(|a| a.time);
        }

        let period = self.period();
        let mut out = Vec::with_capacity(self.variants.len());
        for (v, variant) in self.variants.clone().into_iter().enumerate() {
            let mut recs: BlockRecords = Default::default();
            for i in 0..2 {
                let rx = &mut self.rx[i];
                let window = frames.start * period + rx.link_delay..frames.end * period + rx.link_delay;
                let dets = &mut rx.detectors[v];
                if s.dtm.enabled {
                    let dtm: DtmConfig = if variant == Variant::TauOffLossless {
                        s.dtm.lossless()
                    } else {
                        s.dtm
                    };
                    let merged = combine_dtm(&ports[i][0], &ports[i][1], &dtm);
                    recs[i] = dets[0].process(&merged, window);
                } else {
                    let mut a = dets[0].process(&ports[i][0], window.clone());
                    let b = dets[1].process(&ports[i][1], window);
                    a.extend(b);
                    a.sort_by_key(|r| (r.timestamp, r.detector));
                    recs[i] = a;
                }
            }
            out.push(recs);
        }
        Ok(out)
    }

    /// Recover clock offset, frame phases and output assignment from the
    /// bootstrap detections.
    fn calibrate(&self, boot: &BlockRecords) -> Result<(SyncInfo, [Decoder; 2])> {
        let s = self.scenario;
        let clock = s.clock;
        let period = clock.repetition_period_ps as i64;
        let times = |recs: &[DetectionRecord]| recs.iter().map(|r| r.timestamp).collect::<Vec<_>>();
        let offset = recover_offset(&times(&boot[0]), &times(&boot[1]), s.demux.offset_search_ps)
            .map_err(|e| Error::Sync(format!("{}: clock offset: {e}", self.pair.label())))?;

        let mut phases = [0.0; 2];
        for i in 0..2 {
            let shift = if i == 0 { 0 } else { offset };
            let mut h = Histogram::new(&clock, s.demux.histogram_bin_ps)?;
            for r in &boot[i] {
                h.add_offset(wrap(r.timestamp as i64 - shift, clock.repetition_period_ps));
            }
            phases[i] = recover_phase(&h, &clock)
                .map_err(|e| Error::Sync(format!("{}: frame phase of {}: {e}", self.pair.label(), self.rx[i].cfg.name)))?;
        }
        // Both origins must lie within half a period of each other so frame
        // indices agree; the receiver B origin is moved next to A's.
        let qa = phases[0].round() as i64;
        let qb = qa + signed_wrap(phases[1].round() as i64 - qa, period);
        let table = s.bin_table()?;
        let delta = s.dtm.delay_offset_ps as i64;
        // The recovered comb is port 1 (V0) or, with DTM, possibly the
        // delayed port-2 comb, in which case port 1 sits δ earlier.
        let candidates = |q: i64| if s.dtm.enabled { vec![q, q - delta] } else { vec![q] };
        let (ca, cb) = (candidates(qa), candidates(qb));
        let decoder = |i: usize, origin: i64| Decoder {
            table: table.clone(),
            origin,
            shift: if i == 0 { 0 } else { offset },
            ports: self.rx[i].port_rule(),
        };

        let model = joint_distribution(&self.phases);
        let decode_all = |i: usize, origins: &[i64]| -> Vec<_> {
            origins.iter().map(|&o| decoder(i, o).decode_all(&boot[i])).collect()
        };
        let (ea, eb) = (decode_all(0, &ca), decode_all(1, &cb));
        let alignment = align(&ea, &eb, &model, &s.demux.align_config())
            .map_err(|e| match e {
                Error::InsufficientBootstrap(m) => Error::InsufficientBootstrap(format!("{}: {m}", self.pair.label())),
                other => other,
            })?;
        let chosen = [alignment.a, alignment.b];
        let assignments = [0, 1].map(|i| {
            s.dtm.enabled.then(|| {
                let (v0, v1) = if chosen[i] == 0 {
                    (Port::One, Port::Two)
                } else {
                    (Port::Two, Port::One)
                };
                AssignmentResult {
                    v0_port: v0,
                    v1_port: v1,
                    confidence: alignment.confidence,
                    bootstrap_coincidences: alignment.coincidences,
                }
            })
        });
        let origins = [ca[alignment.a], cb[alignment.b]];
        log::debug!(
            "{}: offset {offset} ps, origins {:?}, {} bootstrap coincidences ({:.1}σ)",
            self.pair.label(),
            origins,
            alignment.coincidences,
            alignment.confidence
        );
        let sync = SyncInfo {
            offset_ps: offset,
            phases_ps: phases,
            origins_ps: origins,
            assignments,
            bootstrap_coincidences: alignment.coincidences,
        };
        Ok((sync, [decoder(0, origins[0]), decoder(1, origins[1])]))
    }
}

/// `value` reduced to `[-period/2, period/2)`.
fn signed_wrap(value: i64, period: i64) -> i64 {
    (value + period / 2).rem_euclid(period) - period / 2
}

/// Consecutive sub-ranges of at most `step` elements.
fn split(range: Range<u64>, step: u64) -> impl Iterator<Item = Range<u64>> {
    let Range { start, end } = range;
    (start..end).step_by(step as usize).map(move |a| a..(a + step).min(end))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_covers_range() {
        let parts: Vec<_> = split(1..11, 4).collect();
        assert_eq!(parts, vec![1..5, 5..9, 9..11]);
        assert_eq!(split(3..3, 4).count(), 0);
    }

    #[test]
    fn signed_wrap_is_centred() {
        assert_eq!(signed_wrap(9000, 9100), -100);
        assert_eq!(signed_wrap(-4600, 9100), 4500);
        assert_eq!(signed_wrap(100, 9100), 100);
    }
}
