//! Manifold ODE integration: dynamic-chart and projection methods, plus the
//! adjoint-style differentials of the resulting flow maps.
//!
//! A chart is built from the exponential map at a base point; the field is
//! pulled into chart coordinates and integrated there with fixed-step Euler.
//! The "inverse" flow and all differentials are defined with respect to the
//! same discretization and chart schedule as the forward flow, so the
//! inverse-pair and finite-difference checks hold at solver accuracy.

mod differential;
mod flow;

pub use differential::{flow_with_backward_differential, flow_with_forward_differential};
pub use flow::{flow_chartwise, flow_inverse, flow_projection};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{sphere, ManifoldPoint, ManifoldSpec, TangentVector};
use crate::real::Real;

/// Tangent-coordinate norm (per sphere block) beyond which a chart is
/// considered overflowed; stay well inside the injectivity radius.
pub const CHART_OVERFLOW_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Euler,
}

/// Fixed-step integration setup shared by the flow and its differentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    pub step_size: f64,
    pub num_charts: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub solver: Solver,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            step_size: 1.0 / 32.0,
            num_charts: 4,
            t_start: 0.0,
            t_end: 1.0,
            solver: Solver::Euler,
        }
    }
}

impl IntegrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidConfig("step_size must be > 0".into()));
        }
        if self.num_charts == 0 {
            return Err(Error::InvalidConfig("num_charts must be >= 1".into()));
        }
        if !(self.t_end > self.t_start) {
            return Err(Error::InvalidConfig("t_end must exceed t_start".into()));
        }
        Ok(())
    }

    /// Number of Euler steps for a subinterval of this length.
    pub(crate) fn steps_for(&self, len: f64) -> usize {
        ((len / self.step_size) - 1e-9).ceil().max(1.0) as usize
    }

    pub(crate) fn chart_len(&self) -> f64 {
        (self.t_end - self.t_start) / self.num_charts as f64
    }
}

/// A time-dependent tangent vector field on a manifold.
///
/// `eval` must be a smooth ambient extension: it is queried at points a
/// finite-difference step away from the manifold, and its output must be
/// tangent (per the spec's projection head) at on-manifold inputs.
pub trait TimeField<T: Real>: Sync {
    fn spec(&self) -> &ManifoldSpec;

    fn eval(&self, z: &ManifoldPoint<T>, t: T) -> Result<TangentVector<T>>;

    /// Ambient Jacobian d f / d z, including the projection head's
    /// dependence on `z`. Default: central finite differences.
    fn jacobian(&self, z: &ManifoldPoint<T>, t: T) -> Result<DMatrix<T>> {
        let n = z.dim();
        let h = T::of(1e-6);
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.coords[j] += h;
            zm.coords[j] -= h;
            let fp = self.eval(&zp, t)?.vec;
            let fm = self.eval(&zm, t)?.vec;
            m.set_column(j, &((fp - fm) / (T::of(2.0) * h)));
        }
        Ok(m)
    }
}

/// The identically-zero field; the flow is the identity map.
pub struct ZeroField {
    pub spec: ManifoldSpec,
}

impl<T: Real> TimeField<T> for ZeroField {
    fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }
    fn eval(&self, z: &ManifoldPoint<T>, _t: T) -> Result<TangentVector<T>> {
        Ok(TangentVector::zero_at(z.clone()))
    }
    fn jacobian(&self, z: &ManifoldPoint<T>, _t: T) -> Result<DMatrix<T>> {
        Ok(DMatrix::zeros(z.dim(), z.dim()))
    }
}

/// Coordinate chart built from the exponential map at `base`.
#[derive(Debug, Clone)]
pub struct Chart<T: Real> {
    pub base: ManifoldPoint<T>,
    spec: ManifoldSpec,
}

impl<T: Real> Chart<T> {
    pub fn new(spec: &ManifoldSpec, base: ManifoldPoint<T>) -> Self {
        Chart {
            base,
            spec: spec.clone(),
        }
    }

    /// Chart coordinates of a manifold point: `Log_base(z)`.
    pub fn to_coords(&self, z: &ManifoldPoint<T>) -> Result<DVector<T>> {
        Ok(self.spec.log_map(&self.base, z)?.vec)
    }

    /// Manifold point for chart coordinates: `Exp_base(w)`.
    pub fn from_coords(&self, w: &DVector<T>) -> Result<ManifoldPoint<T>> {
        let u = TangentVector::new(self.base.clone(), w.clone());
        self.spec.exp_map(&self.base, &u)
    }

    /// Ambient differential of `w -> Exp_base(w)` (block diagonal).
    pub fn d_exp(&self, w: &DVector<T>) -> DMatrix<T> {
        let n = self.spec.ambient_dim();
        let mut m = DMatrix::identity(n, n);
        for b in self.spec.blocks() {
            if b.is_sphere {
                let cb = self.base.coords.rows(b.offset, b.len).into_owned();
                let wb = w.rows(b.offset, b.len).into_owned();
                let blk = sphere::d_exp(&cb, &wb);
                m.view_mut((b.offset, b.offset), (b.len, b.len)).copy_from(&blk);
            }
        }
        m
    }

    /// Ambient differential of `z -> Log_base(z)` at `z`, computed as the
    /// inverse of `d_exp` at `w = Log_base(z)`; exact on tangent spaces.
    pub fn d_log(&self, z: &ManifoldPoint<T>) -> Result<DMatrix<T>> {
        let w = self.to_coords(z)?;
        let de = self.d_exp(&w);
        de.clone().try_inverse().ok_or(Error::Singular { cond: f64::INFINITY })
    }

    /// Directional second differential `d/dw [d_exp(w) b]` (block diagonal).
    pub fn d2_exp_contract(&self, w: &DVector<T>, bvec: &DVector<T>) -> DMatrix<T> {
        let n = self.spec.ambient_dim();
        let mut m = DMatrix::zeros(n, n);
        for b in self.spec.blocks() {
            if b.is_sphere {
                let cb = self.base.coords.rows(b.offset, b.len).into_owned();
                let wb = w.rows(b.offset, b.len).into_owned();
                let bb = bvec.rows(b.offset, b.len).into_owned();
                let blk = sphere::d2_exp_contract(&cb, &wb, &bb);
                m.view_mut((b.offset, b.offset), (b.len, b.len)).copy_from(&blk);
            }
        }
        m
    }

    /// Errors if any sphere block of `w` leaves the safe chart region.
    pub fn check_overflow(&self, w: &DVector<T>) -> Result<()> {
        let limit = T::of(std::f64::consts::PI - CHART_OVERFLOW_MARGIN);
        for b in self.spec.blocks() {
            if b.is_sphere {
                let n = w.rows(b.offset, b.len).norm();
                if n >= limit {
                    return Err(Error::ChartOverflow { norm: n.to_f64() });
                }
            }
        }
        Ok(())
    }
}

/// Endpoint of a flow together with the linear map carrying tangent vectors
/// through it (or through its inverse).
#[derive(Debug, Clone)]
pub struct PullbackResult<T: Real> {
    pub endpoint: ManifoldPoint<T>,
    pub linmap: DMatrix<T>,
}

/// One recorded Euler step inside a chart.
#[derive(Debug, Clone)]
pub(crate) struct StepTrace<T: Real> {
    pub w: DVector<T>,
    pub t: T,
    pub dt: T,
    /// Chart-coordinate velocity `g = DE(w)^{-1} f(E(w), t)`.
    pub g: DVector<T>,
    pub z: ManifoldPoint<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct ChartTrace<T: Real> {
    pub chart: Chart<T>,
    pub steps: Vec<StepTrace<T>>,
    pub w_end: DVector<T>,
}

/// Full record of a chart-wise flow, reused by the differential routines.
#[derive(Debug, Clone)]
pub(crate) struct FlowTrace<T: Real> {
    pub charts: Vec<ChartTrace<T>>,
    pub endpoint: ManifoldPoint<T>,
}

/// Jacobian of one Euler step map `w -> w + dt g(w)` in chart coordinates:
/// `M = I + dt DE^{-1} (Df DE - Q[g])`.
pub(crate) fn step_jacobian<T: Real, F: TimeField<T>>(
    field: &F,
    chart: &Chart<T>,
    step: &StepTrace<T>,
) -> Result<DMatrix<T>> {
    let n = step.w.len();
    let de = chart.d_exp(&step.w);
    let df = field.jacobian(&step.z, step.t)?;
    let q = chart.d2_exp_contract(&step.w, &step.g);
    let rhs = df * &de - q;
    let dg = de
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular { cond: f64::INFINITY })?;
    Ok(DMatrix::identity(n, n) + dg * step.dt)
}
