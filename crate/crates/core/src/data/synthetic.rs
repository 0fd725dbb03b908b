//! Synthetic planar letters so the full pipeline runs hermetically.
//!
//! Catmull-Rom splines through hand-picked waypoints; demo-to-demo variation
//! comes from seeded waypoint jitter, so noise = 0 reproduces one curve.

use nalgebra::DVector;
use rand::Rng;

use super::RawTrajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LetterShape {
    SLike,
    WLike,
    PLike,
}

impl LetterShape {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" | "s-like" | "slike" => Some(LetterShape::SLike),
            "w" | "w-like" | "wlike" => Some(LetterShape::WLike),
            "p" | "p-like" | "plike" => Some(LetterShape::PLike),
            _ => None,
        }
    }

    fn waypoints(self) -> Vec<[f64; 2]> {
        match self {
            // a rounded S drawn top-to-bottom, ending lower-left
            LetterShape::SLike => vec![
                [0.85, 0.95],
                [-0.15, 0.75],
                [-0.55, 0.35],
                [0.25, 0.05],
                [0.65, -0.35],
                [-0.05, -0.75],
                [-0.85, -0.95],
            ],
            // W has three interior turning-direction flips
            LetterShape::WLike => vec![
                [-1.0, 0.85],
                [-0.72, -0.1],
                [-0.5, -0.7],
                [-0.28, -0.05],
                [0.0, 0.55],
                [0.28, -0.05],
                [0.5, -0.7],
                [0.72, -0.1],
                [1.0, 0.85],
            ],
            // loop plus stem
            LetterShape::PLike => vec![
                [-0.5, -1.0],
                [-0.55, -0.2],
                [-0.6, 0.55],
                [-0.3, 0.95],
                [0.35, 0.9],
                [0.6, 0.45],
                [0.3, 0.05],
                [-0.35, 0.1],
            ],
        }
    }
}

fn catmull_rom(p: &[[f64; 2]], seg: usize, u: f64) -> [f64; 2] {
    let idx = |i: isize| -> [f64; 2] {
        let n = p.len() as isize;
        p[i.clamp(0, n - 1) as usize]
    };
    let (p0, p1, p2, p3) = (
        idx(seg as isize - 1),
        idx(seg as isize),
        idx(seg as isize + 1),
        idx(seg as isize + 2),
    );
    let mut out = [0.0; 2];
    for d in 0..2 {
        let (a, b, c, e) = (p0[d], p1[d], p2[d], p3[d]);
        out[d] = 0.5
            * ((2.0 * b)
                + (-a + c) * u
                + (2.0 * a - 5.0 * b + 4.0 * c - e) * u * u
                + (-a + 3.0 * b - 3.0 * c + e) * u * u * u);
    }
    out
}

/// Sample `n_demos` noisy variants of a letter at 10 Hz, 120 samples each.
/// Deterministic given the RNG; noise = 0 yields identical trajectories.
pub fn generate_synthetic_letters<R: Rng>(
    shape: LetterShape,
    n_demos: usize,
    noise: f64,
    rng: &mut R,
) -> Vec<RawTrajectory> {
    let base = shape.waypoints();
    let samples = 120usize;
    let dt = 0.1;
    let mut out = Vec::with_capacity(n_demos);
    for _ in 0..n_demos {
        let jittered: Vec<[f64; 2]> = base
            .iter()
            .map(|w| {
                [
                    w[0] + noise * (2.0 * rng.gen::<f64>() - 1.0),
                    w[1] + noise * (2.0 * rng.gen::<f64>() - 1.0),
                ]
            })
            .collect();
        let segs = jittered.len() - 1;
        let mut states = Vec::with_capacity(samples);
        for i in 0..samples {
            let s = i as f64 / (samples - 1) as f64 * segs as f64;
            let seg = (s.floor() as usize).min(segs - 1);
            let u = s - seg as f64;
            let p = catmull_rom(&jittered, seg, u);
            states.push(DVector::from_row_slice(&p));
        }
        out.push(RawTrajectory {
            times: (0..samples).map(|i| i as f64 * dt).collect(),
            states,
        });
    }
    out
}
