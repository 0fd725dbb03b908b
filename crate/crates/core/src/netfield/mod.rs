//! Learnable pieces: the tangent-projected time-dependent MLP that drives the
//! diffeomorphism, and the manifold RBF network for the velocity magnitude.

pub mod adam;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::Result;
use crate::manifold::{kmeans_manifold, ManifoldPoint, ManifoldSpec, TangentVector};
use crate::odeint::TimeField;
use crate::real::Real;

pub use adam::{adam_step, AdamParams, AdamState};

/// Default hidden width for S^2-scale problems; pose tasks use 16.
pub const DEFAULT_HIDDEN: usize = 32;
pub const SCALING_EPSILON: f64 = 1e-8;
pub const DEFAULT_RBF_CENTERS: usize = 50;

/// Fully-connected tanh network `eta(z, t)` with a tangent-projection head:
/// `f(z, t) = proju_z(eta(z, t))`. Layer widths are
/// `[ambient+1, h, h, h, ambient]`.
#[derive(Debug, Clone)]
pub struct VectorFieldNet<T: Real> {
    pub spec: ManifoldSpec,
    pub weights: Vec<DMatrix<T>>,
    pub biases: Vec<DVector<T>>,
}

impl<T: Real> VectorFieldNet<T> {
    /// Hidden layers get Xavier-style uniform weights; the last layer starts
    /// at zero so the initial flow is the identity and the untrained model is
    /// exactly the scaled geodesic field.
    pub fn identity_init<R: Rng>(spec: &ManifoldSpec, hidden: usize, rng: &mut R) -> Self {
        let mut net = Self::random_init(spec, hidden, rng, 1.0);
        let last = net.weights.len() - 1;
        net.weights[last].fill(T::zero());
        net.biases[last].fill(T::zero());
        net
    }

    /// All layers randomized; `scale` multiplies the Xavier bound. Used by
    /// tests and the stability sweeps over arbitrary parameter values.
    pub fn random_init<R: Rng>(
        spec: &ManifoldSpec,
        hidden: usize,
        rng: &mut R,
        scale: f64,
    ) -> Self {
        let n = spec.ambient_dim();
        let widths = [n + 1, hidden, hidden, hidden, n];
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let bound = scale * (6.0 / (fan_in as f64 + fan_out as f64)).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
                T::of(bound * (2.0 * rng.gen::<f64>() - 1.0))
            }));
            biases.push(DVector::zeros(fan_out));
        }
        VectorFieldNet {
            spec: spec.clone(),
            weights,
            biases,
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Pre-activation network output `eta(z, t)` and the hidden activations
    /// (needed by the analytic Jacobian and the training tape).
    pub fn eta_with_hidden(&self, z: &DVector<T>, t: T) -> (DVector<T>, Vec<DVector<T>>) {
        let mut input = DVector::zeros(z.len() + 1);
        input.rows_mut(0, z.len()).copy_from(z);
        input[z.len()] = t;
        let mut hidden = Vec::with_capacity(self.weights.len() - 1);
        let mut a = input;
        for l in 0..self.weights.len() - 1 {
            let mut h = &self.weights[l] * &a + &self.biases[l];
            h.apply(|x| *x = x.tanh());
            hidden.push(h.clone());
            a = h;
        }
        let last = self.weights.len() - 1;
        let eta = &self.weights[last] * &a + &self.biases[last];
        (eta, hidden)
    }

    pub fn eta(&self, z: &DVector<T>, t: T) -> DVector<T> {
        self.eta_with_hidden(z, t).0
    }
}

impl<T: Real> TimeField<T> for VectorFieldNet<T> {
    fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    fn eval(&self, z: &ManifoldPoint<T>, t: T) -> Result<TangentVector<T>> {
        let eta = self.eta(&z.coords, t);
        Ok(self.spec.project_to_tangent(z, &eta))
    }

    /// Analytic ambient Jacobian through the MLP chain rule, including the
    /// projection head: per sphere block,
    /// `d/dz [(I - z z^T) eta] = (I - z z^T) D_eta - (z . eta) I - z eta^T`.
    fn jacobian(&self, z: &ManifoldPoint<T>, t: T) -> Result<DMatrix<T>> {
        let n = z.dim();
        let (eta, hidden) = self.eta_with_hidden(&z.coords, t);
        // D_eta = W_L D_{L-1} ... D_1 W_1[:, 0..n]
        let mut j = self.weights[0].columns(0, n).into_owned();
        for l in 0..hidden.len() {
            for (r, h) in hidden[l].iter().enumerate() {
                let d = T::one() - *h * *h;
                j.row_mut(r).scale_mut(d);
            }
            j = &self.weights[l + 1] * j;
        }
        // head corrections on sphere blocks
        let proj = self.spec.tangent_projector(z);
        let mut out = proj * j;
        for b in self.spec.blocks() {
            if b.is_sphere {
                let zb = z.coords.rows(b.offset, b.len).into_owned();
                let eb = eta.rows(b.offset, b.len).into_owned();
                let ze = zb.dot(&eb);
                let mut blk = out.view_mut((b.offset, b.offset), (b.len, b.len));
                for i in 0..b.len {
                    for k in 0..b.len {
                        blk[(i, k)] -= zb[i] * eb[k];
                        if i == k {
                            blk[(i, k)] -= ze;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Manifold RBF scaling network: `khat(x) = exp(kappa(x) + eps)` with
/// `kappa(x) = sum_i w_i exp(-(d(x, c_i)/sigma_i)^2)`.
///
/// Centers and widths are fixed at construction (k-means and a nearest-center
/// heuristic); only the linear weights train. Far from every center, kappa
/// decays to zero and the magnitude saturates at `exp(eps) ~ 1`.
#[derive(Debug, Clone)]
pub struct ScalingNet<T: Real> {
    pub spec: ManifoldSpec,
    pub centers: Vec<ManifoldPoint<T>>,
    pub sigmas: Vec<T>,
    pub weights: DVector<T>,
    pub epsilon: T,
}

impl<T: Real> ScalingNet<T> {
    pub fn new(
        spec: &ManifoldSpec,
        centers: Vec<ManifoldPoint<T>>,
        sigmas: Vec<T>,
        weights: DVector<T>,
    ) -> Self {
        assert_eq!(centers.len(), sigmas.len());
        assert_eq!(centers.len(), weights.len());
        ScalingNet {
            spec: spec.clone(),
            centers,
            sigmas,
            weights,
            epsilon: T::of(SCALING_EPSILON),
        }
    }

    /// Centers via geodesic k-means on the sample points; each width is the
    /// mean geodesic distance from its center to the 5 nearest centers;
    /// weights start at zero.
    pub fn init_from_points<R: Rng>(
        spec: &ManifoldSpec,
        points: &[ManifoldPoint<T>],
        n_centers: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let k = n_centers.min(points.len());
        let centers = kmeans_manifold(spec, points, k, rng)?;
        let sigmas = centers
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut ds: Vec<T> = centers
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, o)| spec.distance(c, o))
                    .collect();
                ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let take = ds.len().min(5);
                if take == 0 {
                    T::one()
                } else {
                    let sum: T = ds[..take].iter().fold(T::zero(), |acc, d| acc + *d);
                    (sum / T::of(take as f64)).max(T::of(1e-3))
                }
            })
            .collect();
        let weights = DVector::zeros(k);
        Ok(Self::new(spec, centers, sigmas, weights))
    }

    /// The RBF feature vector `phi_i(x) = exp(-(d(x, c_i)/sigma_i)^2)`.
    pub fn features(&self, x: &ManifoldPoint<T>) -> DVector<T> {
        DVector::from_fn(self.centers.len(), |i, _| {
            let r = self.spec.distance(x, &self.centers[i]) / self.sigmas[i];
            (-r * r).exp()
        })
    }

    pub fn kappa(&self, x: &ManifoldPoint<T>) -> T {
        self.weights.dot(&self.features(x))
    }

    /// Strictly positive scaling factor.
    pub fn eval(&self, x: &ManifoldPoint<T>) -> T {
        (self.kappa(x) + self.epsilon).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn s2() -> ManifoldSpec {
        ManifoldSpec::sphere(2)
    }

    #[test]
    fn zero_last_layer_gives_zero_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = VectorFieldNet::<f64>::identity_init(&s2(), 8, &mut rng);
        let z = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let f = net.eval(&z, 0.3).unwrap();
        assert_eq!(f.vec.norm(), 0.0);
        let j = net.jacobian(&z, 0.3).unwrap();
        assert_eq!(j.norm(), 0.0);
    }

    #[test]
    fn field_output_is_tangent_everywhere() {
        let spec = ManifoldSpec::pose();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = VectorFieldNet::<f64>::random_init(&spec, 16, &mut rng, 1.0);
        for i in 0..1000 {
            let z: ManifoldPoint<f64> = spec.sample_uniform(&mut rng);
            let t = (i as f64) / 1000.0;
            let f = net.eval(&z, t).unwrap();
            spec.check_tangent(&f).unwrap();
        }
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        for spec in [s2(), ManifoldSpec::pose()] {
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let net = VectorFieldNet::<f64>::random_init(&spec, 12, &mut rng, 1.0);
            let z: ManifoldPoint<f64> = spec.sample_uniform(&mut rng);
            let t = 0.41;
            let j = net.jacobian(&z, t).unwrap();
            let n = spec.ambient_dim();
            let h = 1e-6;
            for col in 0..n {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp.coords[col] += h;
                zm.coords[col] -= h;
                let fp = net.eval(&zp, t).unwrap().vec;
                let fm = net.eval(&zm, t).unwrap().vec;
                let fd = (fp - fm) / (2.0 * h);
                for row in 0..n {
                    assert!(
                        (j[(row, col)] - fd[row]).abs() < 1e-5 * (1.0 + fd[row].abs()),
                        "({row},{col}): analytic {} vs fd {}",
                        j[(row, col)],
                        fd[row]
                    );
                }
            }
        }
    }

    #[test]
    fn doubling_last_layer_doubles_eta_jacobian() {
        let spec = s2();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = VectorFieldNet::<f64>::random_init(&spec, 8, &mut rng, 1.0);
        let z = ManifoldPoint::from_slice(&[0.6, 0.0, 0.8]);
        let e1 = net.eta(&z.coords, 0.2);
        let last = net.weights.len() - 1;
        net.weights[last] *= 2.0;
        net.biases[last] *= 2.0;
        let e2 = net.eta(&z.coords, 0.2);
        assert!((e2 - &e1 * 2.0).norm() < 1e-12);
    }

    #[test]
    fn scaling_net_basics() {
        let spec = s2();
        let c = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let snet = ScalingNet::new(
            &spec,
            vec![c.clone()],
            vec![1.0],
            DVector::from_row_slice(&[1.0]),
        );
        // at the center: exp(1 + eps)
        let at_c = snet.eval(&c);
        assert!((at_c - (1.0f64 + SCALING_EPSILON).exp()).abs() < 1e-12);

        // zero weights: exp(eps) everywhere
        let zero = ScalingNet::new(&spec, vec![c.clone()], vec![1.0], DVector::zeros(1));
        let far = ManifoldPoint::from_slice(&[1.0, 0.0, 0.0]);
        assert!((zero.eval(&far) - SCALING_EPSILON.exp()).abs() < 1e-15);
        assert!(zero.eval(&far) > 0.0);
    }

    #[test]
    fn scaling_saturates_far_from_centers() {
        let spec = s2();
        let c = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let snet = ScalingNet::new(
            &spec,
            vec![c],
            vec![0.25],
            DVector::from_row_slice(&[3.0]),
        );
        // pi/2 away = 6 sigma: khat within 1e-10 of exp(eps)
        let far = ManifoldPoint::from_slice(&[1.0, 0.0, 0.0]);
        assert!((snet.eval(&far) - SCALING_EPSILON.exp()).abs() < 1e-10);
    }

    #[test]
    fn init_from_points_sets_positive_sigmas() {
        let spec = s2();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<ManifoldPoint<f64>> =
            (0..40).map(|_| spec.sample_uniform(&mut rng)).collect();
        let snet = ScalingNet::init_from_points(&spec, &pts, 10, &mut rng).unwrap();
        assert_eq!(snet.centers.len(), 10);
        assert!(snet.sigmas.iter().all(|s| *s > 0.0));
        assert_eq!(snet.weights.norm(), 0.0);
    }
}
