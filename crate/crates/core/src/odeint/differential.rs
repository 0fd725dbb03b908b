//! Differentials of the chart-wise flow: the augmented adjoint ODE
//! `dA/dt = -A Df` realized per-step so that the forward and backward
//! linear maps are exact mutual inverses of the discrete flow's Jacobian.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::manifold::ManifoldPoint;
use crate::real::Real;

use super::flow::chartwise_trace;
use super::{step_jacobian, IntegrationConfig, PullbackResult, TimeField};

fn right_solve<T: Real>(a: &DMatrix<T>, m: &DMatrix<T>) -> Result<DMatrix<T>> {
    // X = A M^{-1}  via  M^T X^T = A^T
    let xt = m
        .transpose()
        .lu()
        .solve(&a.transpose())
        .ok_or(Error::Singular { cond: f64::INFINITY })?;
    Ok(xt.transpose())
}

/// Forward-integrated adjoint with `A*(t_s) = I`: returns the flow endpoint
/// `y` and the pullback operator `A*(t_e) ~ D_y(psi^{-1})`, the differential
/// of the inverse diffeomorphism.
///
/// Chart-wise, the inverse of a block `Exp ∘ steps ∘ Log` differentiates to
/// `DExp(w_entry) ∘ (step Jacobians)^{-1} ∘ DLog(z_exit)`; the factors are
/// composed across charts in forward order.
pub fn flow_with_forward_differential<T: Real, F: TimeField<T>>(
    field: &F,
    x0: &ManifoldPoint<T>,
    cfg: &IntegrationConfig,
) -> Result<PullbackResult<T>> {
    let trace = chartwise_trace(field, x0, cfg, true)?;
    let n = field.spec().ambient_dim();
    let mut a = DMatrix::<T>::identity(n, n);
    for ct in &trace.charts {
        // D(block^{-1}) = DE(0) * M_0^{-1} * ... * M_{last}^{-1} * DE(w_end)^{-1}
        // with DE(0) = I; accumulate left-to-right.
        for st in &ct.steps {
            let m = step_jacobian(field, &ct.chart, st)?;
            a = right_solve(&a, &m)?;
        }
        let de_end = ct.chart.d_exp(&ct.w_end);
        a = right_solve(&a, &de_end)?;
    }
    Ok(PullbackResult {
        endpoint: trace.endpoint,
        linmap: a,
    })
}

/// Backward-solved adjoint with `A(t_e) = I`: returns the flow endpoint and
/// `A(t_s) = D_x psi`, the differential of the (forward) diffeomorphism,
/// evaluated along the stored forward trajectory.
pub fn flow_with_backward_differential<T: Real, F: TimeField<T>>(
    field: &F,
    x0: &ManifoldPoint<T>,
    cfg: &IntegrationConfig,
) -> Result<PullbackResult<T>> {
    let trace = chartwise_trace(field, x0, cfg, true)?;
    let n = field.spec().ambient_dim();
    let mut a = DMatrix::<T>::identity(n, n);
    // A <- A * DE(w_end) * M_last * ... * M_0, charts visited in reverse order,
    // which right-multiplies the factors the forward map applies first.
    for ct in trace.charts.iter().rev() {
        let de_end = ct.chart.d_exp(&ct.w_end);
        a = a * de_end;
        for st in ct.steps.iter().rev() {
            let m = step_jacobian(field, &ct.chart, st)?;
            a = a * m;
        }
    }
    Ok(PullbackResult {
        endpoint: trace.endpoint,
        linmap: a,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{ManifoldSpec, TangentVector};
    use crate::odeint::{flow_chartwise, flow_inverse, flow_projection, Chart, ZeroField};
    use nalgebra::DVector;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Smooth synthetic field: f(z, t) = proju_z((A + sin(t) B) z), with the
    /// ambient-extension Jacobian left to the trait's finite-difference default.
    struct LinearField {
        spec: ManifoldSpec,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        scale: f64,
    }

    impl LinearField {
        fn random(spec: ManifoldSpec, scale: f64, seed: u64) -> Self {
            let n = spec.ambient_dim();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
            let b = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
            LinearField { spec, a, b, scale }
        }
    }

    impl TimeField<f64> for LinearField {
        fn spec(&self) -> &ManifoldSpec {
            &self.spec
        }
        fn eval(
            &self,
            z: &ManifoldPoint<f64>,
            t: f64,
        ) -> crate::error::Result<TangentVector<f64>> {
            let raw = (&self.a + &self.b * t.sin()) * &z.coords * self.scale;
            Ok(self.spec.project_to_tangent(z, &raw))
        }
    }

    fn s2() -> ManifoldSpec {
        ManifoldSpec::sphere(2)
    }

    fn north() -> ManifoldPoint<f64> {
        ManifoldPoint::from_slice(&[0.0, 0.0, 1.0])
    }

    #[test]
    fn zero_field_flows_are_identity() {
        let f = ZeroField { spec: s2() };
        let cfg = IntegrationConfig::default();
        let x = north();
        let y = flow_chartwise(&f, &x, &cfg).unwrap();
        assert_eq!(y.coords, x.coords);
        let y2 = flow_projection(&f, &x, &cfg).unwrap();
        assert!((y2.coords - &x.coords).norm() < 1e-15);
        let y3 = flow_inverse(&f, &x, &cfg).unwrap();
        assert!((y3.coords - &x.coords).norm() < 1e-15);
    }

    /// Constant field transported from the start point: the exact flow is the
    /// geodesic Exp_{x0}((t_end - t_start) u).
    struct TransportedField {
        spec: ManifoldSpec,
        x0: ManifoldPoint<f64>,
        u: DVector<f64>,
    }

    impl TimeField<f64> for TransportedField {
        fn spec(&self) -> &ManifoldSpec {
            &self.spec
        }
        fn eval(
            &self,
            z: &ManifoldPoint<f64>,
            _t: f64,
        ) -> crate::error::Result<TangentVector<f64>> {
            // transport breaks down off-manifold; retract first (smooth nearby)
            let zr = self.spec.retract(&z.coords)?;
            let u = TangentVector::new(self.x0.clone(), self.u.clone());
            let moved = self.spec.parallel_transport(&self.x0, &zr, &u)?;
            Ok(TangentVector::new(z.clone(), moved.vec))
        }
    }

    #[test]
    fn transported_constant_field_follows_geodesic() {
        let spec = s2();
        let x0 = north();
        let u = DVector::from_row_slice(&[0.4, -0.3, 0.0]);
        let field = TransportedField {
            spec: spec.clone(),
            x0: x0.clone(),
            u: u.clone(),
        };
        let cfg = IntegrationConfig::default();
        let y = flow_chartwise(&field, &x0, &cfg).unwrap();
        let exact = spec
            .exp_map(&x0, &TangentVector::new(x0.clone(), u))
            .unwrap();
        let err = spec.distance(&y, &exact);
        assert!(err < 5.0 * cfg.step_size, "geodesic error {err}");
    }

    #[test]
    fn halving_step_size_roughly_halves_error() {
        let spec = s2();
        let field = LinearField::random(spec.clone(), 0.4, 3);
        let x0 = north();
        let fine = IntegrationConfig {
            step_size: 1.0 / 4096.0,
            ..Default::default()
        };
        let reference = flow_chartwise(&field, &x0, &fine).unwrap();
        let mut errs = Vec::new();
        for &s in &[1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0] {
            let cfg = IntegrationConfig {
                step_size: s,
                ..Default::default()
            };
            let y = flow_chartwise(&field, &x0, &cfg).unwrap();
            errs.push(spec.distance(&y, &reference));
        }
        let r1 = errs[0] / errs[1];
        let r2 = errs[1] / errs[2];
        assert!(
            (1.5..3.0).contains(&r1) && (1.5..3.0).contains(&r2),
            "first-order convergence expected, got ratios {r1} {r2}"
        );
    }

    #[test]
    fn projection_and_chartwise_agree_on_smooth_fields() {
        let spec = s2();
        let field = LinearField::random(spec.clone(), 0.5, 11);
        let x0 = north();
        let cfg = IntegrationConfig::default();
        let a = flow_chartwise(&field, &x0, &cfg).unwrap();
        let b = flow_projection(&field, &x0, &cfg).unwrap();
        assert!(spec.distance(&a, &b) < 5.0 * cfg.step_size);
        spec.check_point(&b).unwrap();
    }

    #[test]
    fn inverse_roundtrip_error_is_first_order() {
        let spec = s2();
        let field = LinearField::random(spec.clone(), 0.5, 7);
        let x0 = ManifoldPoint::from_slice(&[0.6, 0.0, 0.8]);
        let mut errs = Vec::new();
        for &s in &[1.0 / 32.0, 1.0 / 128.0] {
            let cfg = IntegrationConfig {
                step_size: s,
                ..Default::default()
            };
            let y = flow_chartwise(&field, &x0, &cfg).unwrap();
            let back = flow_inverse(&field, &y, &cfg).unwrap();
            errs.push(spec.distance(&back, &x0));
        }
        assert!(errs[0] <= 0.05, "roundtrip error {} too large", errs[0]);
        let ratio = errs[0] / errs[1];
        assert!(
            (2.5..6.0).contains(&ratio),
            "roundtrip error should shrink ~linearly, ratio {ratio}"
        );
    }

    #[test]
    fn time_antisymmetric_field_returns_near_start() {
        // f(z, t) = (t - 1/2) c(z): the exact time-1 flow is the identity.
        struct OddField {
            spec: ManifoldSpec,
            a: DMatrix<f64>,
        }
        impl TimeField<f64> for OddField {
            fn spec(&self) -> &ManifoldSpec {
                &self.spec
            }
            fn eval(
                &self,
                z: &ManifoldPoint<f64>,
                t: f64,
            ) -> crate::error::Result<TangentVector<f64>> {
                let raw = &self.a * &z.coords * (t - 0.5);
                Ok(self.spec.project_to_tangent(z, &raw))
            }
        }
        let spec = s2();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field = OddField {
            spec: spec.clone(),
            a: DMatrix::from_fn(3, 3, |_, _| rng.gen::<f64>() - 0.5),
        };
        let x0 = north();
        let mut errs = Vec::new();
        for &s in &[1.0 / 64.0, 1.0 / 256.0] {
            let cfg = IntegrationConfig {
                step_size: s,
                ..Default::default()
            };
            let y = flow_chartwise(&field, &x0, &cfg).unwrap();
            errs.push(spec.distance(&y, &x0));
        }
        assert!(errs[0] < 0.05 && errs[1] < errs[0]);
    }

    #[test]
    fn chart_overflow_reports_helpful_error() {
        let spec = s2();
        // a strong transported push keeps moving the state away inside one chart
        let field = TransportedField {
            spec: spec.clone(),
            x0: north(),
            u: DVector::from_row_slice(&[8.0, 0.0, 0.0]),
        };
        let cfg = IntegrationConfig {
            num_charts: 1,
            ..Default::default()
        };
        let err = flow_chartwise(&field, &north(), &cfg).unwrap_err();
        assert!(err.to_string().contains("num_charts"), "got: {err}");
    }

    #[test]
    fn zero_field_differentials_are_tangent_identities() {
        let spec = s2();
        let f = ZeroField { spec: spec.clone() };
        let cfg = IntegrationConfig::default();
        let x = north();
        for res in [
            flow_with_forward_differential(&f, &x, &cfg).unwrap(),
            flow_with_backward_differential(&f, &x, &cfg).unwrap(),
        ] {
            assert_eq!(res.endpoint.coords, x.coords);
            let v = spec
                .project_to_tangent(&x, &DVector::from_row_slice(&[0.3, -0.2, 0.9]))
                .vec;
            assert!(((&res.linmap * &v) - &v).norm() < 1e-12);
        }
    }

    /// Central finite difference of the realized chart-wise flow along a
    /// tangent basis at x0.
    fn fd_forward_jacobian(
        field: &LinearField,
        x0: &ManifoldPoint<f64>,
        cfg: &IntegrationConfig,
        h: f64,
    ) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let spec = field.spec.clone();
        let n = spec.ambient_dim();
        let mut basis = Vec::new();
        for j in 0..n {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            let te = spec.project_to_tangent(x0, &e).vec;
            if te.norm() > 0.5 {
                basis.push(te.normalize());
            }
        }
        let mut images = Vec::new();
        for u in &basis {
            let step = |sgn: f64| {
                let uu = TangentVector::new(x0.clone(), u * (sgn * h));
                let xp = spec.exp_map(x0, &uu).unwrap();
                flow_chartwise(field, &xp, cfg).unwrap().coords
            };
            images.push((step(1.0) - step(-1.0)) / (2.0 * h));
        }
        (basis, images)
    }

    #[test]
    fn backward_differential_matches_finite_differences() {
        let spec = s2();
        let cfg = IntegrationConfig::default();
        for seed in 0..5 {
            let field = LinearField::random(spec.clone(), 0.3, 100 + seed);
            let x0 = ManifoldPoint::from_slice(&[0.0, 0.6, 0.8]);
            let res = flow_with_backward_differential(&field, &x0, &cfg).unwrap();
            let (basis, images) = fd_forward_jacobian(&field, &x0, &cfg, 1e-5);
            let mut num = 0.0;
            let mut den = 0.0;
            for (u, img) in basis.iter().zip(&images) {
                let pred = &res.linmap * u;
                num += (pred - img).norm_squared();
                den += img.norm_squared();
            }
            let rel = (num / den).sqrt();
            assert!(rel < 1e-3, "seed {seed}: relative FD error {rel}");
        }
    }

    #[test]
    fn forward_differential_recovers_input_perturbations() {
        let spec = s2();
        let cfg = IntegrationConfig::default();
        for seed in 0..5 {
            let field = LinearField::random(spec.clone(), 0.3, 200 + seed);
            let x0 = ManifoldPoint::from_slice(&[0.8, 0.0, 0.6]);
            let res = flow_with_forward_differential(&field, &x0, &cfg).unwrap();
            let (basis, images) = fd_forward_jacobian(&field, &x0, &cfg, 1e-5);
            // linmap maps d(psi)/du back onto u
            for (u, img) in basis.iter().zip(&images) {
                let back = &res.linmap * img;
                assert!(
                    (&back - u).norm() < 1e-3,
                    "seed {seed}: |A* dy - u| = {}",
                    (&back - u).norm()
                );
            }
        }
    }

    #[test]
    fn forward_and_backward_differentials_are_mutual_inverses() {
        let spec = ManifoldSpec::sphere(3);
        let cfg = IntegrationConfig::default();
        let field = LinearField::random(spec.clone(), 0.4, 42);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0: ManifoldPoint<f64> = spec.sample_uniform(&mut rng);
        let fwd = flow_with_forward_differential(&field, &x0, &cfg).unwrap();
        let bwd = flow_with_backward_differential(&field, &x0, &cfg).unwrap();
        let compose = &fwd.linmap * &bwd.linmap;
        for _ in 0..10 {
            let v = spec
                .project_to_tangent(&x0, &DVector::from_fn(4, |_, _| rng.gen::<f64>() - 0.5))
                .vec;
            assert!(((&compose * &v) - &v).norm() <= 1e-9 * v.norm().max(1.0));
        }
    }

    #[test]
    fn differential_linmaps_map_tangent_to_tangent() {
        let spec = ManifoldSpec::pose();
        let cfg = IntegrationConfig::default();
        let field = LinearField::random(spec.clone(), 0.3, 77);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x0: ManifoldPoint<f64> = spec.sample_uniform(&mut rng);
        let fwd = flow_with_forward_differential(&field, &x0, &cfg).unwrap();
        let y = &fwd.endpoint;
        for _ in 0..10 {
            let vy = spec
                .project_to_tangent(y, &DVector::from_fn(7, |_, _| rng.gen::<f64>() - 0.5))
                .vec;
            let vx = &fwd.linmap * vy;
            let back = spec.project_to_tangent(&x0, &vx).vec;
            assert!((&vx - back).norm() <= 1e-8 * vx.norm().max(1.0));
        }
    }

    #[test]
    fn two_charts_match_one_chart_on_gentle_fields() {
        let spec = s2();
        let field = LinearField::random(spec.clone(), 0.02, 31);
        let x0 = north();
        let mk = |k: usize| IntegrationConfig {
            step_size: 1e-3,
            num_charts: k,
            ..Default::default()
        };
        let one = flow_with_forward_differential(&field, &x0, &mk(1)).unwrap();
        let two = flow_with_forward_differential(&field, &x0, &mk(2)).unwrap();
        assert!(spec.distance(&one.endpoint, &two.endpoint) < 1e-6);
        let v = spec
            .project_to_tangent(&one.endpoint, &DVector::from_row_slice(&[0.1, 0.2, -0.3]))
            .vec;
        assert!(((&one.linmap - &two.linmap) * v).norm() < 1e-6);
    }

    #[test]
    fn chart_map_differentials_match_finite_differences() {
        let spec = s2();
        let chart = Chart::new(&spec, north());
        let w = DVector::from_row_slice(&[0.4, -0.25, 0.0]);
        let z = chart.from_coords(&w).unwrap();
        let h = 1e-6;

        // D Log at the chart base restricted to the tangent space is identity
        let dlog_at_base = chart.d_log(&north()).unwrap();
        let v = spec
            .project_to_tangent(&north(), &DVector::from_row_slice(&[1.0, 2.0, 0.0]))
            .vec;
        assert!(((&dlog_at_base * &v) - &v).norm() < 1e-12);

        // chain rule: D Exp(w) . D Log(z) = identity on T_z
        let de = chart.d_exp(&w);
        let dlog = chart.d_log(&z).unwrap();
        let tv = spec
            .project_to_tangent(&z, &DVector::from_row_slice(&[-0.3, 0.1, 0.25]))
            .vec;
        assert!(((&de * (&dlog * &tv)) - &tv).norm() < 1e-6);

        // FD agreement of D Exp in tangent directions of the chart
        for j in 0..2 {
            let mut ep = w.clone();
            let mut em = w.clone();
            ep[j] += h;
            em[j] -= h;
            let col =
                (chart.from_coords(&ep).unwrap().coords - chart.from_coords(&em).unwrap().coords)
                    / (2.0 * h);
            let mut ej = DVector::zeros(3);
            ej[j] = 1.0;
            assert!(((&de * &ej) - col).norm() < 1e-6);
        }
    }
}
