mod common;

use dtm_qkd::source::{joint_distribution, JointOutcome, PairSampler, PhaseConfig, Port, SourceConfig};
use dtm_qkd::timebase::{ClockConfig, TimeBin};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bin_index(b: TimeBin) -> usize {
    b.index()
}

#[test]
fn closed_form_matches_amplitude_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let tau = std::f64::consts::TAU;
    for _ in 0..1000 {
        let (phi, a, b) = (rng.random::<f64>() * tau, rng.random::<f64>() * tau, rng.random::<f64>() * tau);
        let table = joint_distribution(&PhaseConfig::new(phi, a, b));
        let oracle = common::brute_force(phi, a, b);
        for o in JointOutcome::all() {
            let want = oracle[bin_index(o.a_bin)][o.a_port.index()][bin_index(o.b_bin)][o.b_port.index()];
            let got = table.prob(&o);
            assert!((got - want).abs() < 1e-12, "{o:?}: {got} vs {want}");
        }
        assert!((table.total() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn oracle_is_normalised_and_forbids_early_late() {
    let p = common::brute_force(0.3, 1.1, -0.4);
    let total: f64 = p.iter().flatten().flatten().flatten().sum();
    assert!((total - 1.0).abs() < 1e-12);
    for ap in 0..2 {
        for bp in 0..2 {
            assert!(p[0][ap][2][bp] < 1e-15);
            assert!(p[2][ap][0][bp] < 1e-15);
            assert!((p[0][ap][0][bp] - 1.0 / 32.0).abs() < 1e-15);
        }
    }
}

#[test]
fn sampler_frequencies_pass_chi_square() {
    let clock = ClockConfig::default();
    let phases = PhaseConfig::new(0.4, 0.9, 2.2);
    let table = joint_distribution(&phases);
    let cfg = SourceConfig {
        mean_pairs: 0.1,
        frames: 1_000_000,
        seed: 11,
    };
    let mut counts = [0u64; 36];
    let mut n = 0u64;
    for ev in PairSampler::new(&cfg, &clock, &phases, 1) {
        counts[ev.outcome.index()] += 1;
        n += 1;
    }
    // Poisson mean over 10^6 frames.
    let sd = (1e5f64).sqrt();
    assert!((n as f64 - 1e5).abs() < 4.0 * sd, "{n} pairs");
    let mut chi2 = 0.0;
    let mut dof = 0;
    for o in JointOutcome::all() {
        let e = table.prob(&o) * n as f64;
        if e > 0.0 {
            let d = counts[o.index()] as f64 - e;
            chi2 += d * d / e;
            dof += 1;
        } else {
            assert_eq!(counts[o.index()], 0, "forbidden outcome {o:?} sampled");
        }
    }
    // 28 allowed cells: the 0.999 quantile of χ²(27) is about 55.5.
    assert_eq!(dof, 28);
    assert!(chi2 < 55.5, "χ² = {chi2}");
}

#[test]
fn central_correlation_follows_phase_sum() {
    for k in 0..8 {
        let theta = k as f64 * std::f64::consts::TAU / 8.0;
        let t = joint_distribution(&PhaseConfig::with_sum(theta));
        for (i, pa) in Port::BOTH.into_iter().enumerate() {
            for (j, pb) in Port::BOTH.into_iter().enumerate() {
                let want = common::central_port_probability(i, j, theta);
                assert!((t.central_conditional(pa, pb) - want).abs() < 1e-12);
            }
        }
    }
}
