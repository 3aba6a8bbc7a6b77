//! Independent reference models shared by the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;

/// Joint detection probability of (bin, port) for both receivers, computed
/// by summing path amplitudes.
///
/// The pump double pulse takes the short (0) or long (1) path with phase
/// `φ` on the long one; each photon then takes the short or long arm of its
/// receiver's Michelson interferometer (phase `α` or `β` on the long arm).
/// Output 1 collects both arms with `+`, output 2 the long arm with `−`.
/// Paths leading to the same pair of arrival bins interfere.
pub fn brute_force(phi: f64, alpha: f64, beta: f64) -> [[[[f64; 2]; 3]; 2]; 3] {
    // [a_bin][a_port][b_bin][b_port]
    let mut amp = [[[[Complex64::new(0.0, 0.0); 2]; 3]; 2]; 3];
    let arm = |port: usize, long: usize, phase: f64| -> Complex64 {
        let sign = if port == 1 && long == 1 { -1.0 } else { 1.0 };
        Complex64::from_polar(0.5 * sign, phase * long as f64)
    };
    for pump in 0..2 {
        let source = Complex64::from_polar(std::f64::consts::FRAC_1_SQRT_2, phi * pump as f64);
        for la in 0..2 {
            for lb in 0..2 {
                for pa in 0..2 {
                    for pb in 0..2 {
                        let a = source * arm(pa, la, alpha) * arm(pb, lb, beta);
                        amp[pump + la][pa][pump + lb][pb] += a;
                    }
                }
            }
        }
    }
    let mut p = [[[[0.0; 2]; 3]; 2]; 3];
    for ab in 0..3 {
        for ap in 0..2 {
            for bb in 0..3 {
                for bp in 0..2 {
                    p[ab][ap][bb][bp] = amp[ab][ap][bb][bp].norm_sqr();
                }
            }
        }
    }
    p
}

/// Central-bin port correlation: `(1 + (−1)^{i+j} cos θ) / 4`.
pub fn central_port_probability(i: usize, j: usize, theta: f64) -> f64 {
    let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
    0.25 * (1.0 + s * theta.cos())
}

/// Measured rate of a non-paralysable detector with dead time `tau_s`
/// seeing Poisson arrivals at `incident_hz`.
pub fn nonparalysable_rate(incident_hz: f64, tau_s: f64) -> f64 {
    incident_hz / (1.0 + incident_hz * tau_s)
}

/// Expected-value model of one receiver pair's key statistics, used to check
/// simulated runs: singles rates `s_a`, `s_b` (per second, after dead time),
/// genuine coincidence rate `c` and repetition rate `f`. Accidentals are
/// independent detections landing in the same frame.
pub fn accidental_rate(s_a: f64, s_b: f64, frame_rate: f64) -> f64 {
    s_a * s_b / frame_rate
}
