//! The composed stable dynamical system: diffeomorphism, geodesic canonical
//! field, pullback, velocity law, Lyapunov diagnostics and rollouts.
//!
//! The velocity at `x` is
//! `xdot = khat(x) * (A* g_n(psi(x))) / |A* g_n(psi(x))|`,
//! where `psi` is the time-1 chart-wise flow of the field network, `g_n` the
//! normalized geodesic field toward the latent attractor `y* = psi(goal)`,
//! and `A*` the differential of the inverse flow. The direction always makes
//! latent progress toward `y*`, so convergence holds for any parameters;
//! training only shapes where the trajectories go on the way.

mod train;

pub use train::{loss_and_gradients, train, ParamGradient, TrainOptions, TrainSample, TrainVars};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{ManifoldPoint, ManifoldSpec, TangentVector};
use crate::netfield::{ScalingNet, VectorFieldNet};
use crate::odeint::{
    flow_chartwise, flow_inverse, flow_with_backward_differential,
    flow_with_forward_differential, IntegrationConfig,
};
use crate::real::Real;

/// Geodesic distance below which a latent point counts as the attractor.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;
/// Pullback vectors shorter than this (before normalization) are an error.
pub const DEGENERATE_PULLBACK_TOL: f64 = 1e-12;

/// The full model: manifold, diffeomorphism network, scaling network,
/// attractor and integration setup.
#[derive(Debug, Clone)]
pub struct RsdsModel<T: Real> {
    pub spec: ManifoldSpec,
    pub field: VectorFieldNet<T>,
    pub scaling: ScalingNet<T>,
    pub goal: ManifoldPoint<T>,
    pub cfg: IntegrationConfig,
}

impl<T: Real> RsdsModel<T> {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.cfg.validate()?;
        self.spec.check_point(&self.goal)?;
        Ok(())
    }

    /// The diffeomorphism `psi`: time-1 chart-wise flow of the field network.
    pub fn forward_diffeo(&self, x: &ManifoldPoint<T>) -> Result<ManifoldPoint<T>> {
        flow_chartwise(&self.field, x, &self.cfg)
    }

    /// Approximate inverse of the diffeomorphism (reversed-time flow).
    pub fn inverse_diffeo(&self, y: &ManifoldPoint<T>) -> Result<ManifoldPoint<T>> {
        flow_inverse(&self.field, y, &self.cfg)
    }

    /// Latent attractor image `y* = psi(goal)`, recomputed from the current
    /// parameters so the attractor stays pinned to the task goal.
    pub fn attractor_image(&self) -> Result<ManifoldPoint<T>> {
        self.forward_diffeo(&self.goal)
    }

    /// Snapshot with the attractor image cached; use for rollouts and sweeps.
    pub fn eval(&self) -> Result<ModelEval<'_, T>> {
        Ok(ModelEval {
            y_star: self.attractor_image()?,
            model: self,
        })
    }
}

/// Normalized geodesic direction toward `y_star`; exactly zero at the goal.
pub fn canonical_direction<T: Real>(
    spec: &ManifoldSpec,
    y: &ManifoldPoint<T>,
    y_star: &ManifoldPoint<T>,
) -> Result<TangentVector<T>> {
    if spec.distance(y, y_star) < T::of(EQUILIBRIUM_TOL) {
        return Ok(TangentVector::zero_at(y.clone()));
    }
    let log = spec.log_map(y, y_star)?;
    let n = log.norm();
    Ok(TangentVector::new(y.clone(), log.vec / n))
}

/// Predicted velocity at `x` (Lyapunov-stable by construction).
pub fn predict_velocity<T: Real>(
    model: &RsdsModel<T>,
    x: &ManifoldPoint<T>,
) -> Result<TangentVector<T>> {
    Ok(model.eval()?.velocity(x)?.velocity)
}

/// Lyapunov value `V(x) = d(psi(x), y*)^2`; zero exactly at the attractor.
pub fn lyapunov_value<T: Real>(model: &RsdsModel<T>, x: &ManifoldPoint<T>) -> Result<T> {
    model.eval()?.lyapunov(x)
}

/// Everything one velocity query produces.
#[derive(Debug, Clone)]
pub struct VelocityInfo<T: Real> {
    pub velocity: TangentVector<T>,
    /// `d(psi(x), y*)^2`
    pub lyapunov: T,
    pub scaling: T,
}

/// Model snapshot with the latent attractor cached.
pub struct ModelEval<'m, T: Real> {
    pub model: &'m RsdsModel<T>,
    pub y_star: ManifoldPoint<T>,
}

impl<'m, T: Real> ModelEval<'m, T> {
    pub fn velocity(&self, x: &ManifoldPoint<T>) -> Result<VelocityInfo<T>> {
        let spec = &self.model.spec;
        let fwd = flow_with_forward_differential(&self.model.field, x, &self.model.cfg)?;
        let y = &fwd.endpoint;
        let dist = spec.distance(y, &self.y_star);
        if dist < T::of(EQUILIBRIUM_TOL) {
            return Ok(VelocityInfo {
                velocity: TangentVector::zero_at(x.clone()),
                lyapunov: dist * dist,
                scaling: self.model.scaling.eval(x),
            });
        }
        let gn = canonical_direction(spec, y, &self.y_star)?;
        let u = &fwd.linmap * &gn.vec;
        let un = u.norm();
        if un < T::of(DEGENERATE_PULLBACK_TOL) {
            return Err(Error::DegeneratePullback);
        }
        let khat = self.model.scaling.eval(x);
        Ok(VelocityInfo {
            velocity: TangentVector::new(x.clone(), u * (khat / un)),
            lyapunov: dist * dist,
            scaling: khat,
        })
    }

    pub fn lyapunov(&self, x: &ManifoldPoint<T>) -> Result<T> {
        let y = self.model.forward_diffeo(x)?;
        let d = self.model.spec.distance(&y, &self.y_star);
        Ok(d * d)
    }
}

/// Direct sphere-only pullback via the constrained least-squares solution
/// `[Dpsi^T Dpsi + x x^T]^{-1} Dpsi^T`, a cross-check of the adjoint route.
pub fn pullback_constrained<T: Real>(
    model: &RsdsModel<T>,
    x: &ManifoldPoint<T>,
    y_dot: &DVector<T>,
) -> Result<TangentVector<T>> {
    if !matches!(model.spec, ManifoldSpec::Sphere { .. }) {
        return Err(Error::InvalidConfig(
            "constrained pullback is specific to a single sphere".into(),
        ));
    }
    let bwd = flow_with_backward_differential(&model.field, x, &model.cfg)?;
    let dpsi = &bwd.linmap;
    let mut k = dpsi.transpose() * dpsi;
    k.ger(T::one(), &x.coords, &x.coords, T::one());
    let svd = k.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin <= T::zero() || (smax / smin).to_f64() > 1e12 {
        return Err(Error::Singular {
            cond: (smax / smin).to_f64(),
        });
    }
    let rhs = dpsi.transpose() * y_dot;
    let sol = k.lu().solve(&rhs).ok_or(Error::Singular { cond: f64::INFINITY })?;
    Ok(TangentVector::new(x.clone(), sol))
}

/// One recorded rollout sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutStep {
    pub t: f64,
    pub point: Vec<f64>,
    pub velocity: Vec<f64>,
    pub lyapunov: f64,
}

/// Geodesic-Euler integral curve of the model's velocity field.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rollout {
    pub steps: Vec<RolloutStep>,
    pub converged: bool,
    pub final_distance: f64,
    /// Set when the rollout aborted on a numerical boundary (cut locus,
    /// degenerate pullback, chart overflow) instead of converging.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions<T: Real> {
    pub dt: T,
    pub max_steps: usize,
    pub conv_tol: T,
}

/// Integrate `x <- Exp_x(dt * velocity(x))` until convergence or the horizon.
/// An optional perturbation overrides the state at the given step, mimicking
/// an external disturbance. Numerical-boundary errors mark the rollout failed
/// rather than propagate, so sweeps can count them.
pub fn rollout<T: Real>(
    model: &RsdsModel<T>,
    x0: &ManifoldPoint<T>,
    opts: &RolloutOptions<T>,
    perturbation: Option<(usize, ManifoldPoint<T>)>,
) -> Result<Rollout> {
    let ev = model.eval()?;
    rollout_with_eval(&ev, x0, opts, perturbation)
}

pub fn rollout_with_eval<T: Real>(
    ev: &ModelEval<'_, T>,
    x0: &ManifoldPoint<T>,
    opts: &RolloutOptions<T>,
    perturbation: Option<(usize, ManifoldPoint<T>)>,
) -> Result<Rollout> {
    let spec = &ev.model.spec;
    spec.check_point(x0)?;
    let mut x = x0.clone();
    let mut steps = Vec::new();
    let mut converged = false;
    let mut failure = None;

    for k in 0..=opts.max_steps {
        if let Some((at, ref to)) = perturbation {
            if k == at && k > 0 {
                spec.check_point(to)?;
                x = to.clone();
            }
        }
        let d_goal = spec.distance(&x, &ev.model.goal);
        if d_goal < opts.conv_tol {
            converged = true;
            steps.push(RolloutStep {
                t: T::of(k as f64).to_f64() * opts.dt.to_f64(),
                point: x.coords.iter().map(|v| v.to_f64()).collect(),
                velocity: vec![0.0; spec.ambient_dim()],
                lyapunov: ev.lyapunov(&x).map(|v| v.to_f64()).unwrap_or(f64::NAN),
            });
            break;
        }
        if k == opts.max_steps {
            break;
        }
        let info = match ev.velocity(&x) {
            Ok(i) => i,
            Err(
                e @ (Error::CutLocus | Error::DegeneratePullback | Error::ChartOverflow { .. }),
            ) => {
                failure = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        };
        steps.push(RolloutStep {
            t: (k as f64) * opts.dt.to_f64(),
            point: x.coords.iter().map(|v| v.to_f64()).collect(),
            velocity: info.velocity.vec.iter().map(|v| v.to_f64()).collect(),
            lyapunov: info.lyapunov.to_f64(),
        });
        let step = TangentVector::new(x.clone(), &info.velocity.vec * opts.dt);
        x = spec.exp_map(&x, &step)?;
    }

    let final_distance = spec.distance(&x, &ev.model.goal).to_f64();
    Ok(Rollout {
        steps,
        converged,
        final_distance,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netfield::DEFAULT_HIDDEN;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn s2() -> ManifoldSpec {
        ManifoldSpec::sphere(2)
    }

    /// Zero-initialized model: identity diffeomorphism, khat ~ 1.
    fn zero_model(seed: u64) -> RsdsModel<f64> {
        let spec = s2();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = VectorFieldNet::identity_init(&spec, DEFAULT_HIDDEN, &mut rng);
        let goal = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let centers = vec![goal.clone()];
        let scaling = ScalingNet::new(&spec, centers, vec![1.0], DVector::zeros(1));
        RsdsModel {
            spec,
            field,
            scaling,
            goal,
            cfg: IntegrationConfig::default(),
        }
    }

    fn random_model(seed: u64, scale: f64) -> RsdsModel<f64> {
        let mut m = zero_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        m.field = VectorFieldNet::random_init(&m.spec, 16, &mut rng, scale);
        m
    }

    #[test]
    fn zero_init_diffeo_is_identity() {
        let m = zero_model(0);
        let x = ManifoldPoint::from_slice(&[0.6, 0.0, 0.8]);
        let y = m.forward_diffeo(&x).unwrap();
        assert!((y.coords - &x.coords).norm() < 1e-12);
    }

    #[test]
    fn diffeo_roundtrip_error_is_small() {
        let m = random_model(1, 0.6);
        let x = ManifoldPoint::from_slice(&[0.0, 0.6, 0.8]);
        let y = m.forward_diffeo(&x).unwrap();
        let back = m.inverse_diffeo(&y).unwrap();
        assert!(m.spec.distance(&back, &x) <= 0.05);
    }

    #[test]
    fn diffeo_injectivity_spot_check() {
        let m = random_model(2, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let points: Vec<ManifoldPoint<f64>> =
            (0..100).map(|_| m.spec.sample_uniform(&mut rng)).collect();
        let images: Vec<ManifoldPoint<f64>> = points
            .iter()
            .map(|p| m.forward_diffeo(p).unwrap())
            .collect();
        let mut min_in = f64::INFINITY;
        let mut min_out = f64::INFINITY;
        for i in 0..images.len() {
            for j in 0..i {
                min_in = min_in.min(m.spec.distance(&points[i], &points[j]));
                min_out = min_out.min(m.spec.distance(&images[i], &images[j]));
            }
        }
        assert!(min_in > 0.0);
        assert!(min_out > 0.0, "distinct inputs collapsed");
    }

    #[test]
    fn canonical_direction_examples() {
        let spec = s2();
        let y = ManifoldPoint::from_slice(&[1.0, 0.0, 0.0]);
        let ys = ManifoldPoint::from_slice(&[0.0, 1.0, 0.0]);
        let g = canonical_direction(&spec, &y, &ys).unwrap();
        assert!((g.vec.clone() - DVector::from_row_slice(&[0.0, 1.0, 0.0])).norm() < 1e-12);
        assert!((g.norm() - 1.0f64).abs() < 1e-12);

        let at_goal = canonical_direction(&spec, &ys, &ys).unwrap();
        assert_eq!(at_goal.norm(), 0.0);

        // following the unit direction for the geodesic distance reaches y*
        let d = spec.distance(&y, &ys);
        let reached = spec
            .exp_map(&y, &TangentVector::new(y.clone(), &g.vec * d))
            .unwrap();
        assert!((reached.coords - &ys.coords).norm() < 1e-9);
    }

    #[test]
    fn zero_init_velocity_is_scaled_geodesic_field() {
        let m = zero_model(3);
        let x = ManifoldPoint::from_slice(&[1.0, 0.0, 0.0]);
        let v = predict_velocity(&m, &x).unwrap();
        let expected_dir = canonical_direction(&m.spec, &x, &m.goal).unwrap();
        let khat = m.scaling.eval(&x);
        assert!((v.norm() - khat).abs() < 1e-10, "norm must equal khat");
        let cosang = v.vec.dot(&expected_dir.vec) / v.norm();
        assert!((cosang - 1.0).abs() < 1e-9, "direction must be geodesic");
    }

    #[test]
    fn velocity_at_goal_is_zero() {
        let m = zero_model(4);
        let v = predict_velocity(&m, &m.goal.clone()).unwrap();
        assert_eq!(v.norm(), 0.0);
    }

    #[test]
    fn velocity_is_tangent_and_norm_equals_scaling() {
        for seed in 0..3 {
            let m = random_model(seed, 0.5);
            let ev = m.eval().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 70);
            for _ in 0..20 {
                let x: ManifoldPoint<f64> = m.spec.sample_uniform(&mut rng);
                if m.spec.distance(&x, &m.goal) < 0.2 {
                    continue;
                }
                let info = ev.velocity(&x).unwrap();
                assert!(x.coords.dot(&info.velocity.vec).abs() <= 1e-9);
                let rel = (info.velocity.norm() - info.scaling).abs() / info.scaling;
                assert!(rel <= 1e-10, "norm != khat, rel err {rel}");
            }
        }
    }

    #[test]
    fn constrained_and_adjoint_pullbacks_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for seed in 0..10 {
            let m = random_model(seed + 30, 0.5);
            let x: ManifoldPoint<f64> = m.spec.sample_uniform(&mut rng);
            let fwd = flow_with_forward_differential(&m.field, &x, &m.cfg).unwrap();
            let ydot = m
                .spec
                .project_to_tangent(&fwd.endpoint, &DVector::from_fn(3, |_, _| rng.gen::<f64>() - 0.5))
                .vec;
            let via_adjoint = &fwd.linmap * &ydot;
            let via_constrained = pullback_constrained(&m, &x, &ydot).unwrap();
            let rel = (via_constrained.vec.clone() - &via_adjoint).norm() / via_adjoint.norm();
            assert!(rel <= 1e-4, "seed {seed}: pullback mismatch {rel}");
            assert!(x.coords.dot(&via_constrained.vec).abs() <= 1e-9);
        }
    }

    #[test]
    fn constrained_pullback_with_identity_flow_returns_input() {
        let m = zero_model(8);
        let x = ManifoldPoint::from_slice(&[0.8, 0.0, 0.6]);
        let ydot = m
            .spec
            .project_to_tangent(&x, &DVector::from_row_slice(&[0.1, -0.4, 0.2]))
            .vec;
        let back = pullback_constrained(&m, &x, &ydot).unwrap();
        assert!((back.vec - ydot).norm() < 1e-10);
    }

    #[test]
    fn lyapunov_values() {
        let m = zero_model(5);
        assert!(lyapunov_value(&m, &m.goal.clone()).unwrap() < 1e-20);
        let x = ManifoldPoint::from_slice(&[1.0, 0.0, 0.0]);
        let v = lyapunov_value(&m, &x).unwrap();
        let d = m.spec.distance(&x, &m.goal);
        assert!((v - d * d).abs() < 1e-12);
    }

    #[test]
    fn rollout_from_goal_is_single_converged_point() {
        let m = zero_model(6);
        let r = rollout(
            &m,
            &m.goal.clone(),
            &RolloutOptions {
                dt: 0.05,
                max_steps: 100,
                conv_tol: 0.05,
            },
            None,
        )
        .unwrap();
        assert!(r.converged);
        assert_eq!(r.steps.len(), 1);
    }

    #[test]
    fn zero_init_rollout_follows_great_circle() {
        let m = zero_model(7);
        let x0 = ManifoldPoint::from_slice(&[1.0, 0.0, 0.0]);
        let r = rollout(
            &m,
            &x0,
            &RolloutOptions {
                dt: 0.05,
                max_steps: 2000,
                conv_tol: 0.05,
            },
            None,
        )
        .unwrap();
        assert!(r.converged, "geodesic field must converge");
        // x0 and goal span the xz-plane; the path must stay in it
        for s in &r.steps {
            assert!(s.point[1].abs() < 1e-6, "left the great circle");
        }
        // Lyapunov values strictly decrease along the way
        for w in r.steps.windows(2) {
            assert!(w[1].lyapunov < w[0].lyapunov + 1e-8);
        }
    }

    #[test]
    fn perturbed_rollout_still_converges() {
        let m = random_model(9, 0.4);
        let x0 = ManifoldPoint::from_slice(&[0.0, 1.0, 0.0]);
        let kick = ManifoldPoint::from_slice(&[0.0, -0.6, 0.8]);
        let r = rollout(
            &m,
            &x0,
            &RolloutOptions {
                dt: 0.02,
                max_steps: 4000,
                conv_tol: 0.05,
            },
            Some((40, kick.clone())),
        )
        .unwrap();
        assert!(r.converged, "perturbed rollout must still converge");
        let jump = &r.steps[40];
        assert!(
            (DVector::from_row_slice(&jump.point) - &kick.coords).norm() < 1e-12,
            "state override must be visible in the trace"
        );
    }

    #[test]
    fn rollout_consecutive_points_satisfy_geodesic_euler() {
        let m = random_model(10, 0.4);
        let x0 = ManifoldPoint::from_slice(&[0.0, 0.8, 0.6]);
        let opts = RolloutOptions {
            dt: 0.05,
            max_steps: 50,
            conv_tol: 1e-6,
        };
        let r = rollout(&m, &x0, &opts, None).unwrap();
        for w in r.steps.windows(2) {
            let p = ManifoldPoint::from_slice(&w[0].point);
            let v = DVector::from_row_slice(&w[0].velocity);
            let stepped = m
                .spec
                .exp_map(&p, &TangentVector::new(p.clone(), v * opts.dt))
                .unwrap();
            let q = DVector::from_row_slice(&w[1].point);
            assert!((stepped.coords - q).norm() <= 1e-9);
        }
    }
}
