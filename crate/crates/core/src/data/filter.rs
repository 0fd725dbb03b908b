//! Zero-phase low-pass filtering: second-order Butterworth, forward-backward.

use nalgebra::DVector;

use crate::error::{Error, Result};

use super::RawTrajectory;

/// Biquad coefficients via the bilinear transform; DC gain is exactly 1.
fn butter2(cutoff_hz: f64, fs_hz: f64) -> ([f64; 3], [f64; 3]) {
    let wc = (std::f64::consts::PI * cutoff_hz / fs_hz).tan();
    let k1 = std::f64::consts::SQRT_2 * wc;
    let k2 = wc * wc;
    let a0 = 1.0 + k1 + k2;
    let b = [k2 / a0, 2.0 * k2 / a0, k2 / a0];
    let a = [1.0, 2.0 * (k2 - 1.0) / a0, (1.0 - k1 + k2) / a0];
    (b, a)
}

/// Steady-state filter state for a unit-level input (direct form II
/// transposed), so constant signals pass through without transients.
fn steady_state(b: &[f64; 3], a: &[f64; 3]) -> [f64; 2] {
    // solve (I - A) zi = B with the standard companion form
    let a11 = 1.0 + a[1];
    let a21 = a[2];
    let b1 = b[1] - a[1] * b[0];
    let b2 = b[2] - a[2] * b[0];
    // [ [a11, -1], [a21, 1] ] zi = [b1, b2]
    let det = a11 + a21;
    let zi0 = (b1 + b2) / det;
    let zi1 = (a11 * b2 - a21 * b1) / det;
    [zi0, zi1]
}

fn filt(b: &[f64; 3], a: &[f64; 3], x: &[f64]) -> Vec<f64> {
    let zi = steady_state(b, a);
    let mut z = [zi[0] * x[0], zi[1] * x[0]];
    let mut y = Vec::with_capacity(x.len());
    for &xi in x {
        let yi = b[0] * xi + z[0];
        z[0] = b[1] * xi + z[1] - a[1] * yi;
        z[1] = b[2] * xi - a[2] * yi;
        y.push(yi);
    }
    y
}

/// filtfilt on one channel with odd-reflection padding at both ends.
fn filtfilt_channel(b: &[f64; 3], a: &[f64; 3], x: &[f64]) -> Vec<f64> {
    let pad = (3 * 3).min(x.len() - 1);
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        ext.push(2.0 * x[0] - x[i]);
    }
    ext.extend_from_slice(x);
    for i in 1..=pad {
        ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
    }
    let fwd = filt(b, a, &ext);
    let mut rev: Vec<f64> = fwd.into_iter().rev().collect();
    rev = filt(b, a, &rev);
    rev.reverse();
    rev[pad..pad + n].to_vec()
}

/// Zero-phase low-pass of every state channel. Requires at least 7 samples
/// and a cutoff strictly below Nyquist.
pub fn lowpass_filter(traj: &RawTrajectory, cutoff_hz: f64) -> Result<RawTrajectory> {
    if traj.len() < 7 {
        return Err(Error::InvalidConfig(format!(
            "low-pass filter needs >= 7 samples, got {}",
            traj.len()
        )));
    }
    let dt = traj.sample_period()?;
    let fs = 1.0 / dt;
    let nyquist = fs / 2.0;
    if cutoff_hz >= nyquist {
        return Err(Error::CutoffAboveNyquist {
            cutoff: cutoff_hz,
            nyquist,
        });
    }
    let (b, a) = butter2(cutoff_hz, fs);
    let dim = traj.states[0].len();
    let n = traj.len();
    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for d in 0..dim {
        let x: Vec<f64> = traj.states.iter().map(|s| s[d]).collect();
        channels.push(filtfilt_channel(&b, &a, &x));
    }
    let states = (0..n)
        .map(|i| DVector::from_fn(dim, |d, _| channels[d][i]))
        .collect();
    Ok(RawTrajectory {
        times: traj.times.clone(),
        states,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn make_traj(samples: Vec<Vec<f64>>, dt: f64) -> RawTrajectory {
        RawTrajectory {
            times: (0..samples.len()).map(|i| i as f64 * dt).collect(),
            states: samples.into_iter().map(|s| DVector::from_vec(s)).collect(),
        }
    }

    #[test]
    fn constant_signal_is_unchanged() {
        let traj = make_traj(vec![vec![2.5, -1.0]; 50], 0.1);
        let out = lowpass_filter(&traj, 2.0).unwrap();
        for s in &out.states {
            assert!((s[0] - 2.5).abs() < 1e-9);
            assert!((s[1] + 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn high_frequency_sinusoid_is_attenuated() {
        // fs = 10 Hz, cutoff 1 Hz, probe at 4 Hz: two passes of a 2nd-order
        // butterworth cut it far more than 10x
        let fs = 10.0;
        let n = 400;
        let traj = make_traj(
            (0..n)
                .map(|i| vec![(2.0 * std::f64::consts::PI * 4.0 * i as f64 / fs).sin()])
                .collect(),
            1.0 / fs,
        );
        let out = lowpass_filter(&traj, 1.0).unwrap();
        let amp_in: f64 = traj.states[50..350]
            .iter()
            .map(|s| s[0].abs())
            .fold(0.0, f64::max);
        let amp_out: f64 = out.states[50..350]
            .iter()
            .map(|s| s[0].abs())
            .fold(0.0, f64::max);
        assert!(
            amp_out * 10.0 <= amp_in,
            "attenuation too weak: {amp_in} -> {amp_out}"
        );
    }

    #[test]
    fn noisy_ramp_gets_smoother() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let traj = make_traj(
            (0..n)
                .map(|i| vec![0.05 * i as f64 + 0.2 * (rng.gen::<f64>() - 0.5)])
                .collect(),
            0.1,
        );
        let out = lowpass_filter(&traj, 1.0).unwrap();
        let roughness = |t: &RawTrajectory| -> f64 {
            (1..t.len() - 1)
                .map(|i| (t.states[i + 1][0] - 2.0 * t.states[i][0] + t.states[i - 1][0]).abs())
                .sum()
        };
        let before = roughness(&traj);
        let after = roughness(&out);
        assert!(
            after * 5.0 <= before,
            "second differences should shrink >= 5x: {before} -> {after}"
        );
    }

    #[test]
    fn cutoff_at_or_above_nyquist_is_rejected() {
        let traj = make_traj(vec![vec![0.0]; 20], 0.1);
        assert!(matches!(
            lowpass_filter(&traj, 5.0),
            Err(Error::CutoffAboveNyquist { .. })
        ));
    }

    #[test]
    fn too_short_input_is_rejected() {
        let traj = make_traj(vec![vec![0.0]; 5], 0.1);
        assert!(lowpass_filter(&traj, 1.0).is_err());
    }
}
