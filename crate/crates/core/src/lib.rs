//! Learning globally (quasi-globally) asymptotically stable dynamical systems
//! on Riemannian manifolds from demonstrated trajectories.
//!
//! The model composes a learnable manifold diffeomorphism (a neural manifold
//! ODE integrated with dynamic charts) with a Lyapunov-stable geodesic field
//! in latent space and a pullback operator that maps latent velocities back to
//! the original tangent spaces. Stability holds by construction for any
//! parameter values; training only shapes accuracy.
//!
//! Everything numerical is generic over the scalar type (`f32`/`f64`) via
//! [`Real`]; the `f64` aliases below are what most users want.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifold;
pub mod model;
pub mod netfield;
pub mod odeint;
pub mod real;

pub use error::{Error, Result};
pub use real::Real;

/// `f64` aliases for the main types.
pub type Point = manifold::ManifoldPoint<f64>;
pub type Tangent = manifold::TangentVector<f64>;
pub type Spec = manifold::ManifoldSpec;
// pub type Model = model::RsdsModel<f64>;
// pub type Config = odeint::IntegrationConfig;
