//! Fibre links between the source and each receiver.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::source::Photon;
use crate::timebase::Picos;

/// Group delay of standard single-mode fibre, picoseconds per kilometre.
pub const GROUP_DELAY_PS_PER_KM: f64 = 5.0e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub length_km: f64,
    pub attenuation_db_per_km: f64,
    /// Connectors, WSS channel and other fixed losses.
    pub excess_loss_db: f64,
    /// Chromatic-dispersion broadening, applied as Gaussian timing noise.
    pub extra_jitter_sigma_ps: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            length_km: 0.0,
            attenuation_db_per_km: 0.2,
            excess_loss_db: 0.0,
            extra_jitter_sigma_ps: 30.0,
        }
    }
}

impl LinkConfig {
    /// A loss-free, delay-free, jitter-free link.
    pub fn ideal() -> Self {
        Self {
            extra_jitter_sigma_ps: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self, path: &str) -> Result<()> {
        for (name, v) in [
            ("length_km", self.length_km),
            ("attenuation_db_per_km", self.attenuation_db_per_km),
            ("excess_loss_db", self.excess_loss_db),
            ("extra_jitter_sigma_ps", self.extra_jitter_sigma_ps),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{path}.{name}"), "must be finite and non-negative"));
            }
        }
        Ok(())
    }

    pub fn loss_db(&self) -> f64 {
        self.length_km * self.attenuation_db_per_km + self.excess_loss_db
    }

    /// Probability that a photon entering the link reaches the receiver.
    pub fn survival(&self) -> f64 {
        10f64.powf(-self.loss_db() / 10.0)
    }

    pub fn delay_ps(&self) -> Picos {
        (self.length_km * GROUP_DELAY_PS_PER_KM).round() as Picos
    }
}

/// Stateful transmitter: holds the link's jitter stream.
pub struct Link {
    survival: f64,
    delay: Picos,
    sigma: f64,
    rng: ChaCha8Rng,
}

impl Link {
    pub fn new(cfg: &LinkConfig, seed: u64) -> Self {
        Self::with_rng(cfg, rng::stream(seed, &[rng::TAG_LINK]))
    }

    pub(crate) fn with_rng(cfg: &LinkConfig, rng: ChaCha8Rng) -> Self {
        Self {
            survival: cfg.survival(),
            delay: cfg.delay_ps(),
            sigma: cfg.extra_jitter_sigma_ps,
            rng,
        }
    }

    /// Apply loss, then delay and jitter to a survivor.
    ///
    /// Loss consumes only the photon's fate, so the jitter stream advances
    /// once per survivor and is shared by runs that differ downstream.
    pub fn pass(&mut self, mut photon: Photon) -> Option<Photon> {
        if !photon.survive(self.survival) {
            return None;
        }
        let mut t = photon.time as i64 + self.delay as i64;
        if self.sigma > 0.0 {
            let j: f64 = self.rng.sample::<f64, _>(StandardNormal) * self.sigma;
            t += j.round() as i64;
        }
        photon.time = t.max(0) as Picos;
        Some(photon)
    }
}

/// Send a photon stream through one link.
pub fn transmit<I>(photons: I, link: &LinkConfig, seed: u64) -> impl Iterator<Item = Photon>
where
    I: IntoIterator<Item = Photon>,
{
    let mut l = Link::new(link, seed);
    photons.into_iter().filter_map(move |p| l.pass(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::Port;
    use crate::timebase::TimeBin;
    use rand::Rng;

    fn photons(n: usize, seed: u64) -> Vec<Photon> {
        let mut r = rng::stream(seed, &[99]);
        (0..n)
            .map(|i| Photon {
                bin: TimeBin::Early,
                port: Port::One,
                time: i as Picos * 9100,
                fate: r.random(),
            })
            .collect()
    }

    #[test]
    fn ideal_link_is_identity() {
        let p = photons(1000, 1);
        let out: Vec<_> = transmit(p.clone(), &LinkConfig::ideal(), 5).collect();
        assert_eq!(out.len(), 1000);
        for (a, b) in p.iter().zip(&out) {
            assert_eq!(a.time, b.time);
        }
    }

    #[test]
    fn paper_link_survival() {
        let l = LinkConfig {
            length_km: 50.4,
            ..LinkConfig::default()
        };
        assert!((l.survival() - 10f64.powf(-1.008)).abs() < 1e-15);
        assert!((l.survival() - 0.0982).abs() < 5e-5);
        assert_eq!(l.delay_ps(), 252_000_000);
    }

    #[test]
    fn three_db_halves_the_stream() {
        let l = LinkConfig {
            excess_loss_db: 10.0 * 2f64.log10(),
            extra_jitter_sigma_ps: 0.0,
            ..LinkConfig::default()
        };
        let n = 1_000_000;
        let kept = transmit(photons(n, 2), &l, 3).count() as f64;
        let sd = (n as f64 * 0.25).sqrt();
        assert!((kept - 5e5).abs() < 3.0 * sd, "{kept}");
    }

    #[test]
    fn zero_jitter_preserves_order() {
        let l = LinkConfig {
            length_km: 3.0,
            excess_loss_db: 1.0,
            extra_jitter_sigma_ps: 0.0,
            ..LinkConfig::default()
        };
        let out: Vec<_> = transmit(photons(10_000, 4), &l, 1).collect();
        assert!(out.windows(2).all(|w| w[0].time < w[1].time));
        assert!(out.iter().all(|p| p.time % 9100 == 15_000_000 % 9100));
    }

    #[test]
    fn negative_values_rejected() {
        let l = LinkConfig {
            length_km: -1.0,
            ..LinkConfig::default()
        };
        let e = l.validate("parties[0].link").unwrap_err().to_string();
        assert!(e.contains("parties[0].link.length_km"));
    }
}
