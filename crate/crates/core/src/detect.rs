//! Single-photon detectors and the DTM fibre combiner.
//!
//! A detector converts arriving photons with probability `η` (times the
//! mode penalty for photons that came through the multimode combiner), adds
//! dark counts as a Poisson process, and then applies a non-paralyzable dead
//! time: any event within `τ` of the last *accepted* event is lost.
//!
//! For a Poisson input at rate `R_e` this model measures exactly
//! `R_m = R_e / (1 + τ R_e)`, i.e. `R_m / R_e = 1 − τ R_m`, which is the
//! saturation estimate exposed by [`saturation_ratio`].

use std::io::{Read, Write};
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::source::{thin, Port};
use crate::timebase::{Picos, TimeBin};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub efficiency: f64,
    pub dead_time_ps: Picos,
    pub dark_rate_hz: f64,
    /// Relative efficiency for photons delivered through the multimode
    /// combiner; 1.0 for detectors that see all spatial modes equally.
    pub mode_penalty: f64,
    /// Gaussian timing jitter σ; zero folds all jitter into the links.
    pub timing_jitter_ps: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            efficiency: 0.2,
            dead_time_ps: 10_000_000,
            dark_rate_hz: 0.0,
            mode_penalty: 1.0,
            timing_jitter_ps: 0.0,
        }
    }
}

impl DetectorConfig {
    /// Unit efficiency, no dead time, no dark counts.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dead_time_ps: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, v) in [("efficiency", self.efficiency), ("mode_penalty", self.mode_penalty)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{path}.{name}"), format!("{v} is not a probability")));
            }
        }
        for (name, v) in [("dark_rate_hz", self.dark_rate_hz), ("timing_jitter_ps", self.timing_jitter_ps)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{path}.{name}"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    /// Conversion probability for a photon with the given mode flag.
    pub fn conversion(&self, multimode: bool) -> f64 {
        if multimode {
            self.efficiency * self.mode_penalty
        } else {
            self.efficiency
        }
    }
}

/// Detector time multiplexing: both interferometer outputs share one
/// detector, port 2 delayed by `delay_offset_ps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DtmConfig {
    pub enabled: bool,
    pub delay_offset_ps: Picos,
    pub combiner_insertion_loss: f64,
    pub extra_connection_loss: f64,
}

/// Extra connection loss that, together with the 5 % combiner loss, makes two
/// DTM receivers cost 10 % of the coincidence rate: `(0.95·(1−x))² = 0.9`.
pub fn default_extra_connection_loss() -> f64 {
    1.0 - 0.9f64.sqrt() / 0.95
}

impl Default for DtmConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            delay_offset_ps: 1515,
            combiner_insertion_loss: 0.05,
            extra_connection_loss: default_extra_connection_loss(),
        }
    }
}

impl DtmConfig {
    pub fn validate(&self, path: &str, period: Picos) -> Result<()> {
        if self.delay_offset_ps == 0 || self.delay_offset_ps >= period {
            return Err(Error::config(
                format!("{path}.delay_offset_ps"),
                format!("must lie strictly between 0 and the {period} ps period"),
            ));
        }
        for (name, v) in [
            ("combiner_insertion_loss", self.combiner_insertion_loss),
            ("extra_connection_loss", self.extra_connection_loss),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("{path}.{name}"), format!("{v} is not a probability")));
            }
        }
        Ok(())
    }

    /// Probability that a photon makes it through combiner and connections.
    pub fn path_transmission(&self) -> f64 {
        (1.0 - self.combiner_insertion_loss) * (1.0 - self.extra_connection_loss)
    }

    /// The same configuration with all DTM path losses removed.
    pub fn lossless(&self) -> Self {
        Self {
            combiner_insertion_loss: 0.0,
            extra_connection_loss: 0.0,
            ..*self
        }
    }
}

/// Ground truth attached to signal photons for validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub pair_id: u64,
    pub frame: u64,
    pub bin: TimeBin,
    pub port: Port,
}

/// A photon arriving at a detector input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arrival {
    pub time: Picos,
    pub fate: f64,
    /// Delivered through the multimode combiner.
    pub multimode: bool,
    pub truth: Option<Truth>,
}

/// Merge both interferometer outputs into one multimode stream.
///
/// Port-2 events are delayed by `δ`; every event passes the combiner and
/// connection losses by its own fate, so no separate random stream is needed.
pub fn combine_dtm(port1: &[Arrival], port2: &[Arrival], dtm: &DtmConfig) -> Vec<Arrival> {
    let keep = dtm.path_transmission();
    let mut out = Vec::with_capacity(port1.len() + port2.len());
    let mut pass = |a: &Arrival, delay: Picos| {
        let mut a = *a;
        if thin(&mut a.fate, keep) {
            a.time += delay;
            a.multimode = true;
            out.push(a);
        }
    };
    for a in port1 {
        pass(a, 0);
    }
    for a in port2 {
        pass(a, dtm.delay_offset_ps);
    }
    out.sort_by_key(|a| a.time);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Origin {
    Signal,
    Dark,
}

impl Origin {
    pub fn label(self) -> &'static str {
        match self {
            Origin::Signal => "signal",
            Origin::Dark => "dark",
        }
    }
}

/// One accepted detector click.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub detector: u32,
    pub timestamp: Picos,
    pub origin: Origin,
    pub truth: Option<Truth>,
}

/// A detector with dead-time state carried across successive blocks of
/// arrivals. Each call to [`Detector::process`] draws dark counts from a
/// fresh stream derived from the seed and the call index, so runs that make
/// the same calls see the same dark counts.
#[derive(Debug, Clone)]
pub struct Detector {
    id: u32,
    cfg: DetectorConfig,
    seed: u64,
    calls: u64,
    last_accepted: Option<Picos>,
}

impl Detector {
    pub fn new(id: u32, cfg: DetectorConfig, seed: u64) -> Self {
        Self {
            id,
            cfg,
            seed,
            calls: 0,
            last_accepted: None,
        }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Detect a time-ordered block of arrivals; dark counts are generated over
    /// `window`.
    pub fn process(&mut self, arrivals: &[Arrival], window: Range<Picos>) -> Vec<DetectionRecord> {
        let call = self.calls;
        self.calls += 1;
        let mut events: Vec<DetectionRecord> = Vec::with_capacity(arrivals.len() / 4 + 8);

        let mut jitter_rng = rng::stream(self.seed, &[rng::TAG_DET_JITTER, self.id as u64, call]);
        let sigma = self.cfg.timing_jitter_ps;
        for a in arrivals {
            let mut fate = a.fate;
            if !thin(&mut fate, self.cfg.conversion(a.multimode)) {
                continue;
            }
            let mut t = a.time as i64;
            if sigma > 0.0 {
                t += (jitter_rng.sample::<f64, _>(StandardNormal) * sigma).round() as i64;
            }
            events.push(DetectionRecord {
                detector: self.id,
                timestamp: t.max(0) as Picos,
                origin: Origin::Signal,
                truth: a.truth,
            });
        }

        if self.cfg.dark_rate_hz > 0.0 && window.end > window.start {
            let mut dark_rng = rng::stream(self.seed, &[rng::TAG_DARK, self.id as u64, call]);
            let gap = Exp::new(self.cfg.dark_rate_hz / 1e12).expect("positive dark rate");
            let mut t = window.start as f64;
            loop {
                t += gap.sample(&mut dark_rng);
                if t >= window.end as f64 {
                    break;
                }
                events.push(DetectionRecord {
                    detector: self.id,
                    timestamp: t as Picos,
                    origin: Origin::Dark,
                    truth: None,
                });
            }
        }

        events.sort_by_key(|e| e.timestamp);
        let tau = self.cfg.dead_time_ps;
        let mut last = self.last_accepted;
        events.retain(|e| {
            let ok = match last {
                None => true,
                Some(l) => e.timestamp >= l.saturating_add(tau),
            };
            if ok {
                last = Some(e.timestamp);
            }
            ok
        });
        self.last_accepted = last;
        events
    }
}

/// One-shot detection of a whole time-ordered stream lasting `duration_s`.
pub fn detect(arrivals: &[Arrival], det: &DetectorConfig, duration_s: f64, seed: u64) -> Vec<DetectionRecord> {
    let end = (duration_s * 1e12).round() as Picos;
    Detector::new(0, *det, seed).process(arrivals, 0..end)
}

/// `R_m / R_e = 1 − τ R_m` for a measured rate in counts per second.
pub fn saturation_ratio(measured_rate_hz: f64, dead_time_ps: Picos) -> Result<f64> {
    let x = dead_time_ps as f64 * measured_rate_hz / 1e12;
    if !(x.is_finite() && x >= 0.0) || x >= 1.0 {
        return Err(Error::Domain(format!(
            "τ·R_m = {x} is outside [0, 1); the detector cannot measure {measured_rate_hz} counts/s"
        )));
    }
    Ok(1.0 - x)
}

/// Incident rate implied by a measured rate: `R_e = R_m / (1 − τ R_m)`.
pub fn expected_rate(measured_rate_hz: f64, dead_time_ps: Picos) -> Result<f64> {
    Ok(measured_rate_hz / saturation_ratio(measured_rate_hz, dead_time_ps)?)
}

/// Write `detector_id,timestamp_ps,origin` rows.
pub fn write_records_csv<W: Write>(records: &[DetectionRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["detector_id", "timestamp_ps", "origin"])?;
    for r in records {
        w.write_record([r.detector.to_string(), r.timestamp.to_string(), r.origin.label().to_string()])?;
    }
    w.flush()
}

pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<DetectionRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, row) in rd.records().enumerate() {
        let row = row.map_err(|e| Error::parse("records csv", e))?;
        let bad = |m: &str| Error::parse("records csv", format!("row {}: {m}", i + 2));
        if row.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        out.push(DetectionRecord {
            detector: row[0].parse().map_err(|_| bad("bad detector id"))?,
            timestamp: row[1].parse().map_err(|_| bad("bad timestamp"))?,
            origin: match &row[2] {
                "signal" => Origin::Signal,
                "dark" => Origin::Dark,
                _ => return Err(bad("origin must be `signal` or `dark`")),
            },
            truth: None,
        });
    }
    Ok(out)
}
