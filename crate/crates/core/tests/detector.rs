mod common;

use dtm_qkd::detect::{combine_dtm, detect, saturation_ratio, Arrival, DetectorConfig, DtmConfig, Origin};
use dtm_qkd::timebase::Picos;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn poisson_arrivals(rate_hz: f64, duration_s: f64, seed: u64) -> Vec<Arrival> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(rate_hz / 1e12).unwrap();
    let end = duration_s * 1e12;
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += gap.sample(&mut rng);
        if t >= end {
            break;
        }
        out.push(Arrival {
            time: t as Picos,
            fate: rng.random(),
            multimode: false,
            truth: None,
        });
    }
    out
}

fn counting_detector(dead_time_ps: Picos) -> DetectorConfig {
    DetectorConfig {
        efficiency: 1.0,
        dead_time_ps,
        ..DetectorConfig::ideal()
    }
}

#[test]
fn dead_time_matches_nonparalysable_model() {
    let tau = 10_000_000;
    for incident in [2_000.0, 10_000.0, 30_000.0, 60_000.0] {
        let arrivals = poisson_arrivals(incident, 20.0, incident as u64);
        let recs = detect(&arrivals, &counting_detector(tau), 20.0, 1);
        let measured = recs.len() as f64 / 20.0;
        let oracle = common::nonparalysable_rate(arrivals.len() as f64 / 20.0, 1e-5);
        assert!((measured / oracle - 1.0).abs() < 0.01, "{incident}: {measured} vs {oracle}");
        // Same statement in the measured-rate form.
        let ratio = measured / (arrivals.len() as f64 / 20.0);
        assert!((ratio / saturation_ratio(measured, tau).unwrap() - 1.0).abs() < 0.01);
    }
}

#[test]
fn accepted_clicks_respect_dead_time() {
    let arrivals = poisson_arrivals(200_000.0, 1.0, 5);
    let tau = 10_000_000;
    let recs = detect(&arrivals, &counting_detector(tau), 1.0, 2);
    assert!(recs.windows(2).all(|w| w[1].timestamp - w[0].timestamp >= tau));
}

#[test]
fn dark_counts_have_configured_rate() {
    let cfg = DetectorConfig {
        dark_rate_hz: 3300.0,
        dead_time_ps: 0,
        ..DetectorConfig::ideal()
    };
    let recs = detect(&[], &cfg, 50.0, 9);
    let n = recs.len() as f64;
    let mean = 3300.0 * 50.0;
    assert!((n - mean).abs() < 4.0 * mean.sqrt(), "{n}");
    assert!(recs.iter().all(|r| r.origin == Origin::Dark && r.truth.is_none()));
}

#[test]
fn efficiency_thins_binomially() {
    let arrivals = poisson_arrivals(100_000.0, 2.0, 3);
    let cfg = DetectorConfig {
        efficiency: 0.2,
        dead_time_ps: 0,
        ..DetectorConfig::ideal()
    };
    let n = arrivals.len() as f64;
    let k = detect(&arrivals, &cfg, 2.0, 4).len() as f64;
    let sd = (n * 0.2 * 0.8).sqrt();
    assert!((k - 0.2 * n).abs() < 4.0 * sd);
}

#[test]
fn dtm_merge_delays_port_two_and_loses_ten_percent_per_pair() {
    let dtm = DtmConfig {
        enabled: true,
        ..DtmConfig::default()
    };
    let per_receiver = dtm.path_transmission();
    assert!((per_receiver * per_receiver - 0.9).abs() < 1e-12);

    let p1 = poisson_arrivals(50_000.0, 4.0, 21);
    let p2: Vec<Arrival> = poisson_arrivals(50_000.0, 4.0, 22);
    let merged = combine_dtm(&p1, &p2, &dtm);
    let n = (p1.len() + p2.len()) as f64;
    let sd = (n * per_receiver * (1.0 - per_receiver)).sqrt();
    assert!((merged.len() as f64 - per_receiver * n).abs() < 4.0 * sd);
    assert!(merged.windows(2).all(|w| w[0].time <= w[1].time));
    assert!(merged.iter().all(|a| a.multimode));

    // Without loss, every port-2 time reappears shifted by δ.
    let all = combine_dtm(&p1, &p2, &dtm.lossless());
    assert_eq!(all.len(), p1.len() + p2.len());
    let mut shifted: Vec<Picos> = p2.iter().map(|a| a.time + 1515).collect();
    shifted.extend(p1.iter().map(|a| a.time));
    shifted.sort_unstable();
    assert_eq!(all.iter().map(|a| a.time).collect::<Vec<_>>(), shifted);
}

#[test]
fn mode_penalty_applies_only_to_multimode_photons() {
    let cfg = DetectorConfig {
        efficiency: 0.2,
        mode_penalty: 0.76,
        ..DetectorConfig::default()
    };
    assert!((cfg.conversion(false) - 0.2).abs() < 1e-15);
    assert!((cfg.conversion(true) - 0.152).abs() < 1e-15);
}
