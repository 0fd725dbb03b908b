//! Geodesic k-means: Lloyd iterations with Karcher-mean center updates.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::real::Real;

use super::{ManifoldPoint, ManifoldSpec};

const KARCHER_MAX_ITERS: usize = 100;
const KARCHER_TOL: f64 = 1e-9;

/// Riemannian center of mass by fixed-point iteration
/// `mean <- Exp_mean(avg_i Log_mean(p_i))`.
pub fn karcher_mean<T: Real>(
    spec: &ManifoldSpec,
    points: &[ManifoldPoint<T>],
) -> Result<ManifoldPoint<T>> {
    assert!(!points.is_empty());
    let mut mean = points[0].clone();
    for _ in 0..KARCHER_MAX_ITERS {
        let mut acc = nalgebra::DVector::zeros(spec.ambient_dim());
        for p in points {
            acc += &spec.log_map(&mean, p)?.vec;
        }
        acc /= T::of(points.len() as f64);
        let step = acc.norm();
        let u = super::TangentVector::new(mean.clone(), acc);
        mean = spec.exp_map(&mean, &u)?;
        if step < T::of(KARCHER_TOL) {
            break;
        }
    }
    Ok(mean)
}

/// Lloyd k-means with geodesic assignment. Empty clusters are re-seeded from
/// the point farthest from its assigned center. Deterministic given the RNG.
pub fn kmeans_manifold<T: Real, R: Rng>(
    spec: &ManifoldSpec,
    points: &[ManifoldPoint<T>],
    k: usize,
    rng: &mut R,
) -> Result<Vec<ManifoldPoint<T>>> {
    assert!(k >= 1 && k <= points.len(), "need 1 <= k <= #points");
    let mut centers: Vec<ManifoldPoint<T>> = sample(rng, points.len(), k)
        .iter()
        .map(|i| points[i].clone())
        .collect();

    let mut assignment = vec![0usize; points.len()];
    for _ in 0..200 {
        // assignment step
        let mut changed = false;
        for (pi, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = spec.distance(p, &centers[0]);
            for (ci, c) in centers.iter().enumerate().skip(1) {
                let d = spec.distance(p, c);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            if assignment[pi] != best {
                assignment[pi] = best;
                changed = true;
            }
        }

        // update step
        for ci in 0..k {
            let members: Vec<ManifoldPoint<T>> = points
                .iter()
                .zip(&assignment)
                .filter(|(_, &a)| a == ci)
                .map(|(p, _)| p.clone())
                .collect();
            if members.is_empty() {
                // re-seed from the farthest point overall
                let far = points
                    .iter()
                    .enumerate()
                    .max_by(|(ia, a), (ib, b)| {
                        let da = spec.distance(a, &centers[assignment[*ia]]);
                        let db = spec.distance(b, &centers[assignment[*ib]]);
                        da.partial_cmp(&db).unwrap()
                    })
                    .map(|(i, _)| i)
                    .unwrap();
                centers[ci] = points[far].clone();
                changed = true;
            } else {
                centers[ci] = karcher_mean(spec, &members)?;
            }
        }

        if !changed {
            break;
        }
    }
    Ok(centers)
}
