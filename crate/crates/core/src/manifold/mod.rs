//! Riemannian geometry kernel: spheres, Euclidean spaces and products of them.
//!
//! Every operation treats a point as one flat ambient vector and applies the
//! closed-form block operation to each factor independently. The product
//! metric is the L2 combination of block metrics.

pub mod kmeans;
pub mod sphere;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

pub use kmeans::{karcher_mean, kmeans_manifold};

/// Tolerance for the on-manifold and tangency invariants.
pub const GEOM_TOL: f64 = 1e-9;

/// The geometry: which manifold a vector of ambient coordinates lives on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldSpec {
    /// Flat R^n.
    Euclidean { dim: usize },
    /// Unit sphere S^d embedded in R^{d+1}.
    Sphere { dim: usize },
    /// Ordered product of factors; coordinates are concatenated.
    Product { components: Vec<ManifoldSpec> },
}

/// One flattened factor of a (possibly nested) product.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub offset: usize,
    pub len: usize,
    pub is_sphere: bool,
}

impl ManifoldSpec {
    pub fn euclidean(dim: usize) -> Self {
        ManifoldSpec::Euclidean { dim }
    }

    pub fn sphere(dim: usize) -> Self {
        ManifoldSpec::Sphere { dim }
    }

    pub fn product(components: Vec<ManifoldSpec>) -> Self {
        ManifoldSpec::Product { components }
    }

    /// R^3 x S^3: end-effector position plus unit-quaternion orientation.
    pub fn pose() -> Self {
        ManifoldSpec::product(vec![ManifoldSpec::euclidean(3), ManifoldSpec::sphere(3)])
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            ManifoldSpec::Euclidean { dim } => *dim,
            ManifoldSpec::Sphere { dim } => dim + 1,
            ManifoldSpec::Product { components } => {
                components.iter().map(|c| c.ambient_dim()).sum()
            }
        }
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self {
            ManifoldSpec::Euclidean { dim } => *dim,
            ManifoldSpec::Sphere { dim } => *dim,
            ManifoldSpec::Product { components } => {
                components.iter().map(|c| c.intrinsic_dim()).sum()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ManifoldSpec::Euclidean { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidConfig("Euclidean dim must be >= 1".into()));
                }
            }
            ManifoldSpec::Sphere { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidConfig("Sphere dim must be >= 1".into()));
                }
            }
            ManifoldSpec::Product { components } => {
                if components.is_empty() {
                    return Err(Error::InvalidConfig(
                        "Product must have at least one component".into(),
                    ));
                }
                for c in components {
                    c.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Flattened factor list with ambient offsets.
    pub fn blocks(&self) -> Vec<Block> {
        fn rec(spec: &ManifoldSpec, offset: &mut usize, out: &mut Vec<Block>) {
            match spec {
                ManifoldSpec::Euclidean { dim } => {
                    out.push(Block {
                        offset: *offset,
                        len: *dim,
                        is_sphere: false,
                    });
                    *offset += dim;
                }
                ManifoldSpec::Sphere { dim } => {
                    out.push(Block {
                        offset: *offset,
                        len: dim + 1,
                        is_sphere: true,
                    });
                    *offset += dim + 1;
                }
                ManifoldSpec::Product { components } => {
                    for c in components {
                        rec(c, offset, out);
                    }
                }
            }
        }
        let mut out = Vec::new();
        let mut offset = 0;
        rec(self, &mut offset, &mut out);
        out
    }

    pub fn has_sphere_block(&self) -> bool {
        self.blocks().iter().any(|b| b.is_sphere)
    }
}

/// A point on the manifold, stored in ambient coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint<T: Real> {
    pub coords: DVector<T>,
}

impl<T: Real> ManifoldPoint<T> {
    pub fn new(coords: DVector<T>) -> Self {
        ManifoldPoint { coords }
    }

    pub fn from_slice(coords: &[T]) -> Self {
        ManifoldPoint {
            coords: DVector::from_row_slice(coords),
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A tangent vector together with its base point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<T: Real> {
    pub base: ManifoldPoint<T>,
    pub vec: DVector<T>,
}

impl<T: Real> TangentVector<T> {
    pub fn new(base: ManifoldPoint<T>, vec: DVector<T>) -> Self {
        TangentVector { base, vec }
    }

    pub fn zero_at(base: ManifoldPoint<T>) -> Self {
        let n = base.dim();
        TangentVector {
            base,
            vec: DVector::zeros(n),
        }
    }

    pub fn norm(&self) -> T {
        self.vec.norm()
    }
}

impl ManifoldSpec {
    fn check_dim<T: Real>(&self, v: &DVector<T>) -> Result<()> {
        if v.len() != self.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.ambient_dim(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// On-manifold invariant: each sphere block has unit norm within 1e-9.
    pub fn check_point<T: Real>(&self, x: &ManifoldPoint<T>) -> Result<()> {
        self.check_dim(&x.coords)?;
        for b in self.blocks() {
            if b.is_sphere {
                let n = x.coords.rows(b.offset, b.len).norm();
                if (n - T::one()).abs() > T::of(GEOM_TOL) {
                    return Err(Error::OffManifold(format!(
                        "sphere block at offset {} has norm {}",
                        b.offset,
                        n.to_f64()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Tangency invariant: each sphere block of `u.vec` is orthogonal to the base block.
    pub fn check_tangent<T: Real>(&self, u: &TangentVector<T>) -> Result<()> {
        self.check_point(&u.base)?;
        self.check_dim(&u.vec)?;
        for b in self.blocks() {
            if b.is_sphere {
                let dot = u
                    .base
                    .coords
                    .rows(b.offset, b.len)
                    .dot(&u.vec.rows(b.offset, b.len));
                if dot.abs() > T::of(GEOM_TOL) {
                    return Err(Error::NotTangent(format!(
                        "sphere block at offset {} has <base, vec> = {}",
                        b.offset,
                        dot.to_f64()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Exponential map; per block, Euclidean blocks translate.
    pub fn exp_map<T: Real>(
        &self,
        x: &ManifoldPoint<T>,
        u: &TangentVector<T>,
    ) -> Result<ManifoldPoint<T>> {
        self.check_dim(&x.coords)?;
        self.check_dim(&u.vec)?;
        let mut out = DVector::zeros(self.ambient_dim());
        for b in self.blocks() {
            let xb = x.coords.rows(b.offset, b.len).into_owned();
            let ub = u.vec.rows(b.offset, b.len).into_owned();
            let yb = if b.is_sphere {
                sphere::exp_map(&xb, &ub)?
            } else {
                xb + ub
            };
            out.rows_mut(b.offset, b.len).copy_from(&yb);
        }
        Ok(ManifoldPoint::new(out))
    }

    /// Logarithmic map; inverse of `exp_map` within the injectivity radius.
    pub fn log_map<T: Real>(
        &self,
        x: &ManifoldPoint<T>,
        y: &ManifoldPoint<T>,
    ) -> Result<TangentVector<T>> {
        self.check_dim(&x.coords)?;
        self.check_dim(&y.coords)?;
        let mut out = DVector::zeros(self.ambient_dim());
        for b in self.blocks() {
            let xb = x.coords.rows(b.offset, b.len).into_owned();
            let yb = y.coords.rows(b.offset, b.len).into_owned();
            let ub = if b.is_sphere {
                sphere::log_map(&xb, &yb)?
            } else {
                yb - xb
            };
            out.rows_mut(b.offset, b.len).copy_from(&ub);
        }
        Ok(TangentVector::new(x.clone(), out))
    }

    /// Geodesic distance: root-sum-of-squares of per-block distances.
    pub fn distance<T: Real>(&self, x: &ManifoldPoint<T>, y: &ManifoldPoint<T>) -> T {
        let mut acc = T::zero();
        for b in self.blocks() {
            let xb = x.coords.rows(b.offset, b.len).into_owned();
            let yb = y.coords.rows(b.offset, b.len).into_owned();
            let d = if b.is_sphere {
                sphere::geodesic_distance(&xb, &yb)
            } else {
                (yb - xb).norm()
            };
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Parallel transport of `u` from `x` to `y` along the per-block geodesics.
    pub fn parallel_transport<T: Real>(
        &self,
        x: &ManifoldPoint<T>,
        y: &ManifoldPoint<T>,
        u: &TangentVector<T>,
    ) -> Result<TangentVector<T>> {
        self.check_dim(&x.coords)?;
        self.check_dim(&y.coords)?;
        self.check_dim(&u.vec)?;
        let mut out = DVector::zeros(self.ambient_dim());
        for b in self.blocks() {
            let xb = x.coords.rows(b.offset, b.len).into_owned();
            let yb = y.coords.rows(b.offset, b.len).into_owned();
            let ub = u.vec.rows(b.offset, b.len).into_owned();
            let tb = if b.is_sphere {
                sphere::parallel_transport(&xb, &yb, &ub)?
            } else {
                ub
            };
            out.rows_mut(b.offset, b.len).copy_from(&tb);
        }
        Ok(TangentVector::new(y.clone(), out))
    }

    /// Orthogonal projection of an ambient vector onto T_x.
    pub fn project_to_tangent<T: Real>(
        &self,
        x: &ManifoldPoint<T>,
        v: &DVector<T>,
    ) -> TangentVector<T> {
        let mut out = v.clone();
        for b in self.blocks() {
            if b.is_sphere {
                let xb = x.coords.rows(b.offset, b.len).into_owned();
                let vb = v.rows(b.offset, b.len).into_owned();
                out.rows_mut(b.offset, b.len)
                    .copy_from(&sphere::project_to_tangent(&xb, &vb));
            }
        }
        TangentVector::new(x.clone(), out)
    }

    /// The projector onto T_x as an ambient matrix (identity on Euclidean blocks).
    pub fn tangent_projector<T: Real>(&self, x: &ManifoldPoint<T>) -> DMatrix<T> {
        let n = self.ambient_dim();
        let mut m = DMatrix::identity(n, n);
        for b in self.blocks() {
            if b.is_sphere {
                let xb = x.coords.rows(b.offset, b.len).into_owned();
                let mut blk = m.view_mut((b.offset, b.offset), (b.len, b.len));
                for i in 0..b.len {
                    for j in 0..b.len {
                        blk[(i, j)] -= xb[i] * xb[j];
                    }
                }
            }
        }
        m
    }

    /// Nearest-point retraction: normalize each sphere block.
    pub fn retract<T: Real>(&self, v: &DVector<T>) -> Result<ManifoldPoint<T>> {
        self.check_dim(v)?;
        let mut out = v.clone();
        for b in self.blocks() {
            if b.is_sphere {
                let vb = v.rows(b.offset, b.len).into_owned();
                out.rows_mut(b.offset, b.len)
                    .copy_from(&sphere::retract(&vb)?);
            }
        }
        Ok(ManifoldPoint::new(out))
    }

    /// Uniform sample: normalized Gaussian per sphere block, `[-1, 1]` box on
    /// Euclidean blocks. Deterministic given the RNG state.
    pub fn sample_uniform<T: Real, R: Rng>(&self, rng: &mut R) -> ManifoldPoint<T> {
        let lo = vec![-1.0; self.ambient_dim()];
        let hi = vec![1.0; self.ambient_dim()];
        self.sample_uniform_in_box(rng, &lo, &hi)
    }

    /// Uniform sample with an explicit box for the Euclidean coordinates.
    pub fn sample_uniform_in_box<T: Real, R: Rng>(
        &self,
        rng: &mut R,
        lo: &[f64],
        hi: &[f64],
    ) -> ManifoldPoint<T> {
        let n = self.ambient_dim();
        assert_eq!(lo.len(), n);
        assert_eq!(hi.len(), n);
        let mut out = DVector::zeros(n);
        for b in self.blocks() {
            if b.is_sphere {
                loop {
                    let mut norm2 = 0.0;
                    let mut g = vec![0.0f64; b.len];
                    for gi in g.iter_mut() {
                        *gi = sample_standard_normal(rng);
                        norm2 += *gi * *gi;
                    }
                    if norm2 > 1e-12 {
                        let norm = norm2.sqrt();
                        for (i, gi) in g.iter().enumerate() {
                            out[b.offset + i] = T::of(gi / norm);
                        }
                        break;
                    }
                }
            } else {
                for i in 0..b.len {
                    let u: f64 = rng.gen::<f64>();
                    out[b.offset + i] =
                        T::of(lo[b.offset + i] + u * (hi[b.offset + i] - lo[b.offset + i]));
                }
            }
        }
        ManifoldPoint::new(out)
    }
}

/// Box-Muller; keeps the sampler independent of distribution-crate versions.
fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
