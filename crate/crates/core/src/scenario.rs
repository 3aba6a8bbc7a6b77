//! Scenario files: one TOML document describing clock, source, receivers,
//! links, detectors, DTM settings and run control. Four calibrated presets
//! are bundled with the crate.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demux::{AlignConfig, BinTable};
use crate::detect::{DetectorConfig, DtmConfig};
use crate::error::{Error, Result};
use crate::keyproc::EcEfficiency;
use crate::link::LinkConfig;
use crate::source::{assign_channels, ChannelMap, UserPair};
use crate::timebase::{ClockConfig, Picos};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    /// Mean pairs per double pulse and channel pair.
    pub mean_pairs: f64,
    /// Source interferometer phase φ.
    #[serde(default)]
    pub phase_rad: f64,
    /// Number of mirrored channel pairs available; defaults to the number of user pairs.
    #[serde(default)]
    pub channels: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemuxSection {
    pub half_width_ps: Picos,
    pub min_bootstrap: u64,
    pub significance: f64,
    /// Half width of the clock-offset search.
    pub offset_search_ps: Picos,
    /// Resolution of the folded arrival histograms.
    pub histogram_bin_ps: Picos,
}

impl Default for DemuxSection {
    fn default() -> Self {
        Self {
            half_width_ps: 500,
            min_bootstrap: 100,
            significance: 2.0,
            offset_search_ps: 500_000_000,
            histogram_bin_ps: 10,
        }
    }
}

impl DemuxSection {
    pub fn align_config(&self) -> AlignConfig {
        AlignConfig {
            min_bootstrap: self.min_bootstrap,
            significance: self.significance,
        }
    }
}

fn unit_transmission() -> [f64; 2] {
    [1.0, 1.0]
}

/// One receiver (user).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartyConfig {
    pub name: String,
    /// Receiver interferometer phase.
    #[serde(default)]
    pub phase_rad: f64,
    /// Transmission from interferometer output 1 and 2 to the detector input
    /// (fibre connections, output imbalance).
    #[serde(default = "unit_transmission")]
    pub port_transmission: [f64; 2],
    #[serde(default)]
    pub link: LinkConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonSection {
    /// Preset name or path of the reference scenario.
    pub baseline: String,
}

fn default_bootstrap() -> f64 {
    10.0
}

fn default_interval() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Key-exchange time after the bootstrap period.
    pub duration_s: f64,
    /// Initial period whose detections are used for synchronisation and
    /// output assignment and then discarded.
    #[serde(default = "default_bootstrap")]
    pub bootstrap_s: f64,
    #[serde(default = "default_interval")]
    pub accumulation_interval_s: f64,
    #[serde(default)]
    pub f_ec: EcEfficiency,
    /// User pairs, by party name.
    pub pairs: Vec<[String; 2]>,
    #[serde(default)]
    pub clock: ClockConfig,
    pub source: SourceSection,
    #[serde(default)]
    pub dtm: DtmConfig,
    #[serde(default)]
    pub demux: DemuxSection,
    pub parties: Vec<PartyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonSection>,
}

/// Bundled presets: `(name, TOML text)`.
pub const PRESETS: &[(&str, &str)] = &[
    ("fourparty_baseline", include_str!("../presets/fourparty_baseline.toml")),
    ("fourparty_dtm_id220", include_str!("../presets/fourparty_dtm_id220.toml")),
    ("fourparty_dtm_ideal", include_str!("../presets/fourparty_dtm_ideal.toml")),
    ("twoparty_dtm_idqube", include_str!("../presets/twoparty_dtm_idqube.toml")),
];

/// Alternative names accepted for presets.
const ALIASES: &[(&str, &str)] = &[("fourparty_dtm", "fourparty_dtm_ideal")];

fn finite_nonneg(v: f64, path: &str) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::config(path, format!("{v} must be finite and non-negative")))
    }
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::parse("scenario", e))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = toml::from_str(&text).map_err(|e| Error::parse(path, e))?;
        s.validate()?;
        Ok(s)
    }

    pub fn preset(name: &str) -> Result<Self> {
        let name = ALIASES
            .iter()
            .find(|(alias, _)| *alias == name)
            .map(|(_, target)| *target)
            .unwrap_or(name);
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::config("preset", format!("unknown preset `{name}`")))?;
        Self::from_toml_str(text)
    }

    /// Load a preset by name, or a scenario file by path.
    pub fn load(name_or_path: &str) -> Result<Self> {
        let path = Path::new(name_or_path);
        if path.exists() {
            Self::from_file(path)
        } else {
            Self::preset(name_or_path)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serialises to TOML")
    }

    pub fn user_pairs(&self) -> Vec<UserPair> {
        self.pairs.iter().map(|[a, b]| UserPair::new(a, b)).collect()
    }

    pub fn channel_map(&self) -> Result<ChannelMap> {
        let pairs = self.user_pairs();
        let k = self.source.channels.unwrap_or(pairs.len() as u32);
        assign_channels(&pairs, k)
    }

    pub fn party(&self, name: &str) -> Option<&PartyConfig> {
        self.parties.iter().find(|p| p.name == name)
    }

    pub fn party_index(&self, name: &str) -> Option<usize> {
        self.parties.iter().position(|p| p.name == name)
    }

    /// Bin table used by every receiver of this scenario.
    pub fn bin_table(&self) -> Result<BinTable> {
        if self.dtm.enabled {
            BinTable::dtm(&self.clock, self.dtm.delay_offset_ps, self.demux.half_width_ps)
        } else {
            BinTable::single(&self.clock, self.demux.half_width_ps)
        }
    }

    /// Check every field; errors name the offending field path.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::config("name", "must not be empty"));
        }
        finite_nonneg(self.duration_s, "duration_s")?;
        finite_nonneg(self.bootstrap_s, "bootstrap_s")?;
        if !(self.accumulation_interval_s.is_finite() && self.accumulation_interval_s > 0.0) {
            return Err(Error::config("accumulation_interval_s", "must be positive"));
        }
        if self.duration_s > 0.0 && self.bootstrap_s <= 0.0 {
            return Err(Error::config("bootstrap_s", "must be positive for a non-empty run"));
        }
        self.f_ec.validate("f_ec")?;
        self.clock.validate("clock")?;
        finite_nonneg(self.source.mean_pairs, "source.mean_pairs")?;
        if self.source.mean_pairs > 0.2 {
            log::warn!(
                "source.mean_pairs = {} exceeds 0.2; independent multi-pair emission becomes a poor model",
                self.source.mean_pairs
            );
        }
        if !self.source.phase_rad.is_finite() {
            return Err(Error::config("source.phase_rad", "must be finite"));
        }
        if self.dtm.enabled {
            self.dtm.validate("dtm", self.clock.repetition_period_ps)?;
        }
        if self.demux.histogram_bin_ps == 0 || self.clock.repetition_period_ps % self.demux.histogram_bin_ps != 0 {
            return Err(Error::config("demux.histogram_bin_ps", "must divide the repetition period"));
        }
        if self.demux.offset_search_ps < 10_000 {
            return Err(Error::config("demux.offset_search_ps", "must be at least 10 ns"));
        }
        if !(self.demux.significance.is_finite() && self.demux.significance >= 0.0) {
            return Err(Error::config("demux.significance", "must be non-negative"));
        }
        self.bin_table()?;

        let mut names = BTreeSet::new();
        for (i, p) in self.parties.iter().enumerate() {
            let path = format!("parties[{i}]");
            if p.name.trim().is_empty() {
                return Err(Error::config(format!("{path}.name"), "must not be empty"));
            }
            if !names.insert(p.name.as_str()) {
                return Err(Error::config(format!("{path}.name"), format!("duplicate party `{}`", p.name)));
            }
            if !p.phase_rad.is_finite() {
                return Err(Error::config(format!("{path}.phase_rad"), "must be finite"));
            }
            for (k, t) in p.port_transmission.iter().enumerate() {
                if !(0.0..=1.0).contains(t) {
                    return Err(Error::config(
                        format!("{path}.port_transmission[{k}]"),
                        format!("{t} is not a probability"),
                    ));
                }
            }
            p.link.validate(&format!("{path}.link"))?;
            p.detector.validate(&format!("{path}.detector"))?;
        }
        for (i, [a, b]) in self.pairs.iter().enumerate() {
            for (j, n) in [a, b].into_iter().enumerate() {
                if self.party(n).is_none() {
                    return Err(Error::config(format!("pairs[{i}][{j}]"), format!("unknown party `{n}`")));
                }
            }
            if a == b {
                return Err(Error::config(format!("pairs[{i}]"), "a party cannot pair with itself"));
            }
        }
        self.channel_map()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "mini"
duration_s = 1.0
pairs = [["alice", "bob"]]

[source]
mean_pairs = 0.05

[[parties]]
name = "alice"

[[parties]]
name = "bob"
"#;

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.clock, ClockConfig::default());
        assert_eq!(s.parties[0].port_transmission, [1.0, 1.0]);
        assert_eq!(s.parties[1].detector.dead_time_ps, 10_000_000);
        assert!(!s.dtm.enabled);
        assert_eq!(s.f_ec, EcEfficiency::Constant(1.2));
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad = MINIMAL.replace("name = \"bob\"", "name = \"bob\"\nport_transmission = [1.0, 1.5]");
        let e = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(e.contains("parties[1].port_transmission[1]"), "{e}");

        let bad = MINIMAL.replace("[\"alice\", \"bob\"]", "[\"alice\", \"carol\"]");
        let e = Scenario::from_toml_str(&bad).unwrap_err().to_string();
        assert!(e.contains("pairs[0][1]"), "{e}");

        let bad = MINIMAL.replace("mean_pairs = 0.05", "mean_pairs = -1");
        assert!(Scenario::from_toml_str(&bad).unwrap_err().to_string().contains("source.mean_pairs"));

        let bad = format!("{MINIMAL}\n[dtm]\nenabled = true\ndelay_offset_ps = 9100\n");
        assert!(Scenario::from_toml_str(&bad).unwrap_err().to_string().contains("dtm.delay_offset_ps"));

        let bad = MINIMAL.replace("duration_s = 1.0", "duration_s = 1.0\nbogus = 3");
        assert!(matches!(Scenario::from_toml_str(&bad), Err(Error::Parse { .. })));
    }

    #[test]
    fn presets_load_and_round_trip() {
        for (name, _) in PRESETS {
            let s = Scenario::preset(name).unwrap();
            assert_eq!(&s.name, name);
            let again = Scenario::from_toml_str(&s.to_toml()).unwrap();
            assert_eq!(again, s);
        }
        assert_eq!(Scenario::preset("fourparty_dtm").unwrap().name, "fourparty_dtm_ideal");
        assert!(Scenario::preset("nope").is_err());
    }
}
