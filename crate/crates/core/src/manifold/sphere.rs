//! Closed-form operations for a unit hypersphere block embedded in R^{d+1}.
//!
//! Points are unit vectors, tangent vectors at `x` are orthogonal to `x`.
//! All functions here work on plain `DVector` slices of a single block;
//! assembly across product blocks happens in the parent module.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::real::Real;

/// Guard distance to the cut locus: log/transport refuse beyond `pi - CUT_LOCUS_MARGIN`.
pub const CUT_LOCUS_MARGIN: f64 = 1e-6;

/// `sinc(sqrt(rho))` and its first three derivatives with respect to `rho`.
///
/// Everything downstream (exp map, its differentials) is expressed through
/// this family so that it stays smooth across `rho = 0`. Series expansions
/// take over below `rho = 1e-2` where the closed forms cancel badly.
pub fn sinc_family<T: Real>(rho: T) -> (T, T, T, T) {
    if rho < T::of(1e-2) {
        // sinc(sqrt(rho)) = sum_k (-rho)^k / (2k+1)!
        let s0 = T::one()
            + rho * (T::of(-1.0 / 6.0)
                + rho * (T::of(1.0 / 120.0)
                    + rho * (T::of(-1.0 / 5040.0) + rho * T::of(1.0 / 362_880.0))));
        let s1 = T::of(-1.0 / 6.0)
            + rho * (T::of(1.0 / 60.0)
                + rho * (T::of(-1.0 / 1680.0) + rho * T::of(1.0 / 90_720.0)));
        let s2 = T::of(1.0 / 60.0)
            + rho * (T::of(-1.0 / 840.0) + rho * T::of(1.0 / 30_240.0));
        let s3 = T::of(-1.0 / 840.0) + rho * T::of(1.0 / 15_120.0);
        (s0, s1, s2, s3)
    } else {
        let r = rho.sqrt();
        let (sin_r, cos_r) = (r.sin(), r.cos());
        let r3 = rho * r;
        let r5 = r3 * rho;
        let r7 = r5 * rho;
        let two = T::of(2.0);
        let s0 = sin_r / r;
        let s1 = (r * cos_r - sin_r) / (two * r3);
        let s2 = (T::of(6.0) * sin_r - T::of(6.0) * r * cos_r - two * rho * sin_r)
            / (T::of(8.0) * r5);
        let s3 = (T::of(6.0) * rho * sin_r - r3 * cos_r - T::of(15.0) * sin_r
            + T::of(15.0) * r * cos_r)
            / (T::of(8.0) * r7);
        (s0, s1, s2, s3)
    }
}

/// `cos(sqrt(rho))`; its rho-derivative is `-sinc(sqrt(rho))/2`.
pub fn cos_sqrt<T: Real>(rho: T) -> T {
    if rho < T::of(1e-2) {
        T::one()
            + rho * (T::of(-0.5)
                + rho * (T::of(1.0 / 24.0)
                    + rho * (T::of(-1.0 / 720.0) + rho * T::of(1.0 / 40_320.0))))
    } else {
        rho.sqrt().cos()
    }
}

/// `arccos(x . y)` evaluated through half-chords, which is exact for
/// coincident points and stays accurate near both ends of `[0, pi]`
/// (plain arccos loses sqrt(eps) accuracy near +-1).
pub fn geodesic_distance<T: Real>(x: &DVector<T>, y: &DVector<T>) -> T {
    let two = T::of(2.0);
    if x.dot(y) >= T::zero() {
        let half = (x - y).norm() / two;
        two * half.clamp(-T::one(), T::one()).asin()
    } else {
        let half = (x + y).norm() / two;
        T::pi() - two * half.clamp(-T::one(), T::one()).asin()
    }
}

/// Exp_x(u) = x cos|u| + u sinc|u|.  Errors if |u| >= pi.
pub fn exp_map<T: Real>(x: &DVector<T>, u: &DVector<T>) -> Result<DVector<T>> {
    let rho = u.dot(u);
    if rho.sqrt() >= T::pi() {
        return Err(Error::InjectivityRadius {
            norm: rho.sqrt().to_f64(),
        });
    }
    let (s0, _, _, _) = sinc_family(rho);
    Ok(x * cos_sqrt(rho) + u * s0)
}

/// Log_x(y) = d(x,y) (y - (x.y) x) / |y - (x.y) x|, zero in the d -> 0 limit.
pub fn log_map<T: Real>(x: &DVector<T>, y: &DVector<T>) -> Result<DVector<T>> {
    let d = geodesic_distance(x, y);
    if d.to_f64() >= std::f64::consts::PI - CUT_LOCUS_MARGIN {
        return Err(Error::CutLocus);
    }
    if d < T::of(1e-12) {
        return Ok(DVector::zeros(x.len()));
    }
    let q = x.dot(y);
    let p = y - x * q;
    let n = p.norm();
    Ok(p * (d / n))
}

/// Parallel transport of `u` from T_x to T_y along the connecting geodesic.
pub fn parallel_transport<T: Real>(
    x: &DVector<T>,
    y: &DVector<T>,
    u: &DVector<T>,
) -> Result<DVector<T>> {
    let v = log_map(x, y)?;
    let r = v.norm();
    if r < T::of(1e-12) {
        return Ok(u.clone());
    }
    let vbar = &v / r;
    let a = vbar.dot(u);
    // (-x sin r + vbar cos r) (vbar . u) + (u - vbar (vbar . u))
    Ok((x * (-r.sin()) + &vbar * r.cos()) * a + u - vbar * a)
}

/// Orthogonal projection onto T_x: (I - x x^T) v.
pub fn project_to_tangent<T: Real>(x: &DVector<T>, v: &DVector<T>) -> DVector<T> {
    v - x * x.dot(v)
}

pub fn retract<T: Real>(v: &DVector<T>) -> Result<DVector<T>> {
    let n = v.norm();
    if n < T::of(1e-300) || !n.is_finite_real() {
        return Err(Error::DegenerateProjection);
    }
    Ok(v / n)
}

/// Ambient differential of `w -> Exp_c(w)`:
/// `DE = s0 I - s0 c w^T + 2 s1 w w^T`, smooth through `w = 0` where it is `I`.
pub fn d_exp<T: Real>(c: &DVector<T>, w: &DVector<T>) -> DMatrix<T> {
    let n = c.len();
    let rho = w.dot(w);
    let (s0, s1, _, _) = sinc_family(rho);
    let mut m = DMatrix::identity(n, n) * s0;
    // -s0 c w^T + 2 s1 w w^T
    m.ger(-s0, c, w, T::one());
    m.ger(T::of(2.0) * s1, w, w, T::one());
    m
}

/// Directional second differential of the exp map: `Q = d/dw [DE(w) b]`, `b` held fixed.
///
/// Used by the step-map Jacobians of the chart integrator.
pub fn d2_exp_contract<T: Real>(c: &DVector<T>, w: &DVector<T>, b: &DVector<T>) -> DMatrix<T> {
    let n = c.len();
    let rho = w.dot(w);
    let (s0, s1, s2, _) = sinc_family(rho);
    let wb = w.dot(b);
    let two = T::of(2.0);
    // DE(w) b = s0 b - s0 (w.b) c + 2 s1 (w.b) w; differentiate in w, b fixed.
    let mut q = DMatrix::identity(n, n) * (two * s1 * wb);
    q.ger(two * s1, b, w, T::one());
    q.ger(-two * s1 * wb, c, w, T::one());
    q.ger(-s0, c, b, T::one());
    q.ger(T::of(4.0) * s2 * wb, w, w, T::one());
    q.ger(two * s1, w, b, T::one());
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(parts: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(parts)
    }

    #[test]
    fn sinc_family_matches_finite_differences() {
        // h large enough that cancellation noise in the closed forms near the
        // series seam does not dominate the difference quotient
        let h = 1e-4;
        for &rho in &[1e-8, 1e-4, 5e-3, 0.02, 0.5, 2.0, 8.0] {
            let (s0, s1, s2, s3) = sinc_family::<f64>(rho);
            let (p0, p1, p2, _) = sinc_family::<f64>(rho + h);
            let (m0, m1, m2, _) = sinc_family::<f64>(rho - h);
            assert!((s1 - (p0 - m0) / (2.0 * h)).abs() < 1e-8, "s1 at {rho}");
            assert!((s2 - (p1 - m1) / (2.0 * h)).abs() < 1e-8, "s2 at {rho}");
            assert!((s3 - (p2 - m2) / (2.0 * h)).abs() < 1e-8, "s3 at {rho}");
            // cos_sqrt derivative is -s0/2
            let c1 = (cos_sqrt(rho + h) - cos_sqrt(rho - h)) / (2.0 * h);
            assert!((c1 + s0 / 2.0).abs() < 1e-8, "cos' at {rho}");
        }
    }

    #[test]
    fn series_and_closed_form_agree_at_the_seam() {
        for &rho in &[9.9e-3, 1.01e-2] {
            let (a0, a1, a2, a3) = sinc_family::<f64>(rho);
            let r = rho.sqrt();
            assert!((a0 - r.sin() / r).abs() < 1e-13);
            let _ = (a1, a2, a3);
        }
    }

    #[test]
    fn exp_quarter_circle() {
        let x = v(&[0.0, 0.0, 1.0]);
        let u = v(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0]);
        let y = exp_map(&x, &u).unwrap();
        assert!((y - v(&[1.0, 0.0, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn exp_zero_returns_base() {
        let x = v(&[0.0, 0.0, 1.0]);
        let y = exp_map(&x, &v(&[0.0, 0.0, 0.0])).unwrap();
        assert!((y - x).norm() == 0.0);
    }

    #[test]
    fn exp_rejects_injectivity_violation() {
        let x = v(&[0.0, 0.0, 1.0]);
        let u = v(&[std::f64::consts::PI, 0.0, 0.0]);
        assert!(matches!(
            exp_map(&x, &u),
            Err(Error::InjectivityRadius { .. })
        ));
    }

    #[test]
    fn log_orthogonal_points() {
        let x = v(&[1.0, 0.0, 0.0]);
        let y = v(&[0.0, 1.0, 0.0]);
        let u = log_map(&x, &y).unwrap();
        assert!((u - v(&[0.0, std::f64::consts::FRAC_PI_2, 0.0])).norm() < 1e-12);
    }

    #[test]
    fn log_rejects_antipodal() {
        let x = v(&[1.0, 0.0, 0.0]);
        let y = v(&[-1.0, 0.0, 0.0]);
        assert!(matches!(log_map(&x, &y), Err(Error::CutLocus)));
    }

    #[test]
    fn exp_log_roundtrip() {
        let x = v(&[0.0, 0.0, 1.0]);
        let u = v(&[0.3, 0.4, 0.0]);
        let y = exp_map(&x, &u).unwrap();
        assert!((geodesic_distance(&x, &y) - 0.5).abs() < 1e-12);
        let u2 = log_map(&x, &y).unwrap();
        assert!((u2 - u).norm() < 1e-10);
    }

    #[test]
    fn transport_identity_and_isometry() {
        let x = v(&[0.0, 0.0, 1.0]);
        let u = v(&[0.2, -0.1, 0.0]);
        let same = parallel_transport(&x, &x, &u).unwrap();
        assert!((same - &u).norm() < 1e-15);

        let y = v(&[1.0, 0.0, 0.0]);
        let t = parallel_transport(&x, &y, &u).unwrap();
        assert!((t.norm() - u.norm()).abs() < 1e-12);
        assert!(t.dot(&y).abs() < 1e-12, "result must be tangent at y");
    }

    #[test]
    fn projector_examples() {
        let x = v(&[0.0, 0.0, 1.0]);
        let p = project_to_tangent(&x, &v(&[1.0, 2.0, 3.0]));
        assert!((p - v(&[1.0, 2.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn retract_normalizes() {
        let y = retract(&v(&[3.0, 4.0, 0.0])).unwrap();
        assert!((y - v(&[0.6, 0.8, 0.0])).norm() < 1e-15);
        assert!(matches!(
            retract(&v(&[0.0, 0.0, 0.0])),
            Err(Error::DegenerateProjection)
        ));
    }

    #[test]
    fn d_exp_matches_finite_differences() {
        let c = v(&[0.0, 0.0, 1.0]);
        let w = v(&[0.3, -0.2, 0.0]);
        let m = d_exp(&c, &w);
        let h = 1e-6;
        for j in 0..3 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let col = (exp_map(&c, &wp).unwrap() - exp_map(&c, &wm).unwrap()) / (2.0 * h);
            for i in 0..3 {
                assert!((m[(i, j)] - col[i]).abs() < 1e-8, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn d2_exp_matches_finite_differences_of_d_exp() {
        let c = v(&[0.0, 0.0, 1.0]);
        let w = v(&[0.25, 0.1, 0.0]);
        let b = v(&[-0.3, 0.7, 0.1]);
        let q = d2_exp_contract(&c, &w, &b);
        let h = 1e-6;
        for j in 0..3 {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let col = (d_exp(&c, &wp) * &b - d_exp(&c, &wm) * &b) / (2.0 * h);
            for i in 0..3 {
                assert!((q[(i, j)] - col[i]).abs() < 1e-7, "entry ({i},{j})");
            }
        }
    }
}
