//! Integer-picosecond time arithmetic shared by all modules: the clock
//! configuration, folding of absolute timestamps into frames, and folded
//! arrival-time histograms with circular peak finding.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute time in picoseconds.
pub type Picos = u64;

/// Source clock and receiver interferometer timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockConfig {
    /// Double-pulse repetition period (9100 ps ≈ 109.89 MHz).
    pub repetition_period_ps: Picos,
    /// Path difference of the unbalanced interferometers, Δ.
    pub interferometer_delay_ps: Picos,
    /// Full width at half maximum of the pump pulses.
    pub pulse_fwhm_ps: Picos,
}

impl Default for ClockConfig {
    fn default() -> Self {
        Self {
            repetition_period_ps: 9100,
            interferometer_delay_ps: 3030,
            pulse_fwhm_ps: 300,
        }
    }
}

impl ClockConfig {
    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, v) in [
            ("repetition_period_ps", self.repetition_period_ps),
            ("interferometer_delay_ps", self.interferometer_delay_ps),
            ("pulse_fwhm_ps", self.pulse_fwhm_ps),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{path}.{name}"), "must be strictly positive"));
            }
        }
        // Early, Central and Late bins plus one pulse width of guard must fit.
        let needed = 2 * self.interferometer_delay_ps + self.pulse_fwhm_ps;
        if self.repetition_period_ps <= needed {
            return Err(Error::config(
                format!("{path}.repetition_period_ps"),
                format!(
                    "period {} ps cannot hold three bins spaced {} ps apart (needs > {needed} ps)",
                    self.repetition_period_ps, self.interferometer_delay_ps
                ),
            ));
        }
        Ok(())
    }

    pub fn repetition_rate_hz(&self) -> f64 {
        1e12 / self.repetition_period_ps as f64
    }

    /// Number of whole frames in `seconds` of simulated time.
    pub fn frames_in(&self, seconds: f64) -> u64 {
        (seconds * 1e12 / self.repetition_period_ps as f64).round() as u64
    }

    /// Gaussian σ of the pulse envelope.
    pub fn pulse_sigma_ps(&self) -> f64 {
        self.pulse_fwhm_ps as f64 / 2.355
    }

    /// Nominal offset of a time bin within its frame.
    pub fn bin_offset(&self, bin: TimeBin) -> Picos {
        bin.index() as Picos * self.interferometer_delay_ps
    }
}

/// The three arrival-time bins of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimeBin {
    /// short–short path combination
    Early,
    /// short–long or long–short
    Central,
    /// long–long
    Late,
}

impl TimeBin {
    pub const ALL: [TimeBin; 3] = [TimeBin::Early, TimeBin::Central, TimeBin::Late];

    pub fn index(self) -> usize {
        match self {
            TimeBin::Early => 0,
            TimeBin::Central => 1,
            TimeBin::Late => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TimeBin::Early => "E",
            TimeBin::Central => "C",
            TimeBin::Late => "L",
        }
    }
}

/// A timestamp split into frame index and intra-frame offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameCoord {
    pub frame_index: u64,
    pub offset: Picos,
}

impl FrameCoord {
    pub fn timestamp(&self, clock: &ClockConfig) -> Picos {
        self.frame_index * clock.repetition_period_ps + self.offset
    }
}

pub fn fold(timestamp: Picos, clock: &ClockConfig) -> FrameCoord {
    let t = clock.repetition_period_ps;
    FrameCoord {
        frame_index: timestamp / t,
        offset: timestamp % t,
    }
}

/// Reduce a signed picosecond value into `[0, period)`.
pub fn wrap(value: i64, period: Picos) -> Picos {
    value.rem_euclid(period as i64) as Picos
}

/// Folded arrival-time histogram over one repetition period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: Picos,
    pub counts: Vec<u64>,
}

/// A peak found in a folded histogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Background-subtracted centroid in `[0, period)`.
    pub center_ps: f64,
    /// Signal above background summed over the peak.
    pub area: f64,
}

impl Histogram {
    pub fn new(clock: &ClockConfig, bin_width: Picos) -> Result<Self> {
        let period = clock.repetition_period_ps;
        if bin_width == 0 || period % bin_width != 0 {
            return Err(Error::config(
                "histogram.bin_width",
                format!("bin width {bin_width} ps does not divide the {period} ps period"),
            ));
        }
        Ok(Self {
            bin_width,
            counts: vec![0; (period / bin_width) as usize],
        })
    }

    pub fn period(&self) -> Picos {
        self.bin_width * self.counts.len() as Picos
    }

    /// Add one event given its intra-frame offset.
    pub fn add_offset(&mut self, offset: Picos) {
        let idx = (offset / self.bin_width) as usize;
        let n = self.counts.len();
        self.counts[idx % n] += 1;
    }

    pub fn add_timestamp(&mut self, timestamp: Picos) {
        self.add_offset(timestamp % self.period());
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Merge another histogram with identical binning into this one.
    pub fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.counts.len(), other.counts.len(), "histogram binning differs");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Circular peak search.
    ///
    /// The histogram is smoothed over about 50 ps and its median taken as
    /// background. Runs of smoothed bins exceeding the background by a tenth
    /// of the tallest excess (and by more than five standard deviations of
    /// Poisson noise) form one peak each; each peak's position is the
    /// background-subtracted circular centroid of the raw counts in its run.
    pub fn peaks(&self) -> Vec<Peak> {
        let n = self.counts.len();
        if n == 0 {
            return Vec::new();
        }
        let half = ((25 / self.bin_width.max(1)) as usize).min((n - 1) / 2);
        let k = (2 * half + 1) as f64;
        let smooth: Vec<f64> = (0..n)
            .map(|i| (0..2 * half + 1).map(|d| self.counts[(i + n + d - half) % n] as f64).sum::<f64>() / k)
            .collect();
        let mut sorted = smooth.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let background = sorted[n / 2];
        let excess = sorted[n - 1] - background;
        if excess <= 0.0 {
            return Vec::new();
        }
        let threshold = background + (0.1 * excess).max(5.0 * (background / k).sqrt());
        let above: Vec<bool> = smooth.iter().map(|&c| c > threshold).collect();
        if above.iter().all(|&a| a) {
            return Vec::new();
        }
        // Start scanning just after a below-threshold bin so no run wraps
        // around the scan origin.
        let start = (0..n).find(|&i| !above[i]).unwrap();
        let period = self.period() as f64;
        let width = self.bin_width as f64;
        let mut peaks = Vec::new();
        let mut run: Vec<usize> = Vec::new();
        for step in 1..=n {
            let i = (start + step) % n;
            if above[i] {
                run.push(i);
            } else if !run.is_empty() {
                let first = run[0] as f64;
                let mut weight = 0.0;
                let mut moment = 0.0;
                for (j, &b) in run.iter().enumerate() {
                    let w = self.counts[b] as f64 - background;
                    weight += w;
                    moment += w * (first + j as f64 + 0.5) * width;
                }
                if weight > 0.0 {
                    peaks.push(Peak {
                        center_ps: (moment / weight).rem_euclid(period),
                        area: weight,
                    });
                }
                run.clear();
            }
        }
        peaks.sort_by(|a, b| a.center_ps.total_cmp(&b.center_ps));
        peaks
    }

    /// Write `offset_ps,count` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["offset_ps", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([(i as Picos * self.bin_width).to_string(), c.to_string()])?;
        }
        w.flush()
    }

    /// Read back a histogram written by [`Histogram::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut offsets = Vec::new();
        let mut counts = Vec::new();
        for row in r.records() {
            let row = row.map_err(|e| Error::parse("histogram csv", e))?;
            let o: Picos = row[0].parse().map_err(|e| Error::parse("histogram csv", e))?;
            let c: u64 = row[1].parse().map_err(|e| Error::parse("histogram csv", e))?;
            offsets.push(o);
            counts.push(c);
        }
        let bin_width = if offsets.len() > 1 { offsets[1] - offsets[0] } else { 1 };
        Ok(Self { bin_width, counts })
    }
}

/// Fold every timestamp into a histogram with `bin_width` resolution.
pub fn histogram(timestamps: &[Picos], clock: &ClockConfig, bin_width: Picos) -> Result<Histogram> {
    let mut h = Histogram::new(clock, bin_width)?;
    for &t in timestamps {
        h.add_timestamp(t);
    }
    Ok(h)
}
