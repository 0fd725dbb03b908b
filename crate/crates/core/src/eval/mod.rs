//! Metrics and baselines: velocity MSE, dynamic-time-warping distance,
//! seeded stability sweeps, and the ambient-space comparison models.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Demonstration;
use crate::error::{Error, Result};
use crate::manifold::{ManifoldPoint, ManifoldSpec};
use crate::model::{
    rollout_with_eval, train, ModelEval, RolloutOptions, RsdsModel, TrainOptions,
};
use crate::netfield::{ScalingNet, VectorFieldNet};
use crate::odeint::IntegrationConfig;
use crate::real::Real;

/// Exclusion radius around the attractor's cut-locus preimage in sweeps.
pub const CUT_LOCUS_EXCLUSION: f64 = 0.1;

// ---- velocity MSE ------------------------------------------------------------

/// Mean over all demo points of the squared ambient velocity error.
/// Points where the model raises a cut-locus style error are counted with the
/// maximum finite error observed and reported in the flagged count.
pub fn velocity_mse<T: Real>(
    predict: &(dyn Fn(&ManifoldPoint<T>) -> Result<DVector<T>> + Sync),
    demos: &[Demonstration<T>],
) -> Result<(T, usize)> {
    let mut errs: Vec<Option<T>> = Vec::new();
    for d in demos {
        for i in 0..d.len() {
            match predict(&d.points[i]) {
                Ok(v) => errs.push(Some((v - &d.velocities[i]).norm_squared())),
                Err(Error::CutLocus | Error::DegeneratePullback | Error::ChartOverflow { .. }) => {
                    errs.push(None)
                }
                Err(e) => return Err(e),
            }
        }
    }
    if errs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max_finite = errs
        .iter()
        .flatten()
        .fold(T::zero(), |acc, e| if *e > acc { *e } else { acc });
    let flagged = errs.iter().filter(|e| e.is_none()).count();
    let total = errs
        .iter()
        .map(|e| e.unwrap_or(max_finite))
        .fold(T::zero(), |a, b| a + b);
    Ok((total / T::of(errs.len() as f64), flagged))
}

// ---- dynamic time warping ------------------------------------------------------

/// DTW distance with geodesic local cost and symmetric unit steps
/// (match / insert / delete), no windowing.
pub fn dtwd<T: Real>(
    a: &[ManifoldPoint<T>],
    b: &[ManifoldPoint<T>],
    spec: &ManifoldSpec,
) -> T {
    assert!(!a.is_empty() && !b.is_empty(), "dtwd needs nonempty inputs");
    let (n, m) = (a.len(), b.len());
    let inf = T::of(f64::INFINITY);
    let mut dp = vec![inf; (n + 1) * (m + 1)];
    let idx = |i: usize, j: usize| i * (m + 1) + j;
    dp[idx(0, 0)] = T::zero();
    for i in 1..=n {
        for j in 1..=m {
            let cost = spec.distance(&a[i - 1], &b[j - 1]);
            let best = dp[idx(i - 1, j)]
                .min(dp[idx(i, j - 1)])
                .min(dp[idx(i - 1, j - 1)]);
            dp[idx(i, j)] = cost + best;
        }
    }
    dp[idx(n, m)]
}

// ---- stability sweep -----------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub seed: u64,
    pub conv_tol: f64,
    pub dt: f64,
    pub max_steps: usize,
    pub exclusion_radius: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n: 1000,
            seed: 0,
            conv_tol: 0.05,
            dt: 0.02,
            max_steps: 4000,
            exclusion_radius: CUT_LOCUS_EXCLUSION,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StartOutcome {
    pub start: Vec<f64>,
    pub converged: bool,
    pub final_distance: f64,
    /// strict Lyapunov decrease (slack 1e-8) held along the whole rollout;
    /// absent for models without a Lyapunov certificate
    pub lyapunov_monotone: Option<bool>,
    /// largest |norm - 1| over sphere blocks seen along the rollout
    pub max_off_manifold: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub config: SweepConfig,
    pub n_converged: usize,
    pub success_rate: f64,
    pub outcomes: Vec<StartOutcome>,
}

/// Anything the sweep can roll out from a start point.
pub trait SweepTarget<T: Real>: Sync {
    /// Manifold the start points are sampled from.
    fn sampling_spec(&self) -> &ManifoldSpec;
    /// Center of the cut-locus exclusion ball, if the model has one.
    fn exclusion_center(&self) -> Option<ManifoldPoint<T>>;
    fn run(&self, x0: &ManifoldPoint<T>, cfg: &SweepConfig) -> StartOutcome;
}

impl<T: Real> SweepTarget<T> for ModelEval<'_, T> {
    fn sampling_spec(&self) -> &ManifoldSpec {
        &self.model.spec
    }

    /// Preimage under the flow of the latent point antipodal (per sphere
    /// block) to `y*`; rollouts from around it are excluded by quasi-globality.
    fn exclusion_center(&self) -> Option<ManifoldPoint<T>> {
        let spec = &self.model.spec;
        if !spec.has_sphere_block() {
            return None;
        }
        let mut anti = self.y_star.coords.clone();
        for b in spec.blocks() {
            if b.is_sphere {
                let mut blk = anti.rows_mut(b.offset, b.len);
                blk.neg_mut();
            }
        }
        self.model
            .inverse_diffeo(&ManifoldPoint::new(anti))
            .ok()
    }

    fn run(&self, x0: &ManifoldPoint<T>, cfg: &SweepConfig) -> StartOutcome {
        let opts = RolloutOptions {
            dt: T::of(cfg.dt),
            max_steps: cfg.max_steps,
            conv_tol: T::of(cfg.conv_tol),
        };
        match rollout_with_eval(self, x0, &opts, None) {
            Ok(r) => {
                let mut monotone = true;
                for w in r.steps.windows(2) {
                    if !(w[1].lyapunov < w[0].lyapunov + 1e-8) {
                        monotone = false;
                    }
                }
                StartOutcome {
                    start: x0.coords.iter().map(|v| v.to_f64()).collect(),
                    converged: r.converged && r.failure.is_none(),
                    final_distance: r.final_distance,
                    lyapunov_monotone: Some(monotone),
                    max_off_manifold: 0.0,
                    failure: r.failure,
                }
            }
            Err(e) => StartOutcome {
                start: x0.coords.iter().map(|v| v.to_f64()).collect(),
                converged: false,
                final_distance: f64::INFINITY,
                lyapunov_monotone: Some(false),
                max_off_manifold: 0.0,
                failure: Some(e.to_string()),
            },
        }
    }
}

/// Seeded uniform sweep. Start points are drawn sequentially from one RNG
/// stream (resampling inside the exclusion ball), then rolled out in
/// parallel; the report is assembled in start order, so it is deterministic.
pub fn stability_sweep<T: Real>(target: &dyn SweepTarget<T>, cfg: &SweepConfig) -> SweepResult {
    let spec = target.sampling_spec();
    let exclusion = target.exclusion_center();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts: Vec<ManifoldPoint<T>> = Vec::with_capacity(cfg.n);
    while starts.len() < cfg.n {
        let x: ManifoldPoint<T> = spec.sample_uniform(&mut rng);
        if let Some(ref c) = exclusion {
            if near_block_antipode(spec, &x, c, cfg.exclusion_radius) {
                continue;
            }
        }
        starts.push(x);
    }
    let outcomes: Vec<StartOutcome> = starts.par_iter().map(|x| target.run(x, cfg)).collect();
    let n_converged = outcomes.iter().filter(|o| o.converged).count();
    SweepResult {
        config: *cfg,
        n_converged,
        success_rate: n_converged as f64 / cfg.n as f64,
        outcomes,
    }
}

/// Within `radius` of the excluded point on any sphere block.
fn near_block_antipode<T: Real>(
    spec: &ManifoldSpec,
    x: &ManifoldPoint<T>,
    center: &ManifoldPoint<T>,
    radius: f64,
) -> bool {
    for b in spec.blocks() {
        if b.is_sphere {
            let xb = x.coords.rows(b.offset, b.len).into_owned();
            let cb = center.coords.rows(b.offset, b.len).into_owned();
            if crate::manifold::sphere::geodesic_distance(&xb, &cb) < T::of(radius) {
                return true;
            }
        }
    }
    false
}

// ---- baselines ------------------------------------------------------------------

/// Ambient-space flow model ("EuclideanFlow"): the same network shapes trained
/// with flows in R^n, no tangent projection anywhere, straight-line canonical
/// field and Euclidean-distance RBF scaling. With `projected` set, evaluation
/// retracts states onto the data manifold and projects velocities, which is
/// the fair-comparison variant; without it, rollouts are free to leave the
/// manifold (that failure mode is the point of the comparison).
#[derive(Debug, Clone)]
pub struct BaselineModel<T: Real> {
    pub inner: RsdsModel<T>,
    pub data_spec: ManifoldSpec,
    pub projected: bool,
}

impl<T: Real> BaselineModel<T> {
    /// Raw ambient velocity (no manifold awareness).
    pub fn velocity_raw(&self, x: &ManifoldPoint<T>) -> Result<DVector<T>> {
        let ev = self.inner.eval()?;
        Ok(ev.velocity(x)?.velocity.vec)
    }

    /// Velocity as evaluated in comparisons: projected onto the tangent space
    /// of the data manifold when `projected` is set.
    pub fn velocity_eval(&self, x: &ManifoldPoint<T>) -> Result<DVector<T>> {
        let v = self.velocity_raw(x)?;
        if self.projected {
            Ok(self.data_spec.project_to_tangent(x, &v).vec)
        } else {
            Ok(v)
        }
    }
}

/// Hyperparameters mirroring the manifold model's training recipe.
#[derive(Debug, Clone, Copy)]
pub struct BaselineHyper {
    pub hidden: usize,
    pub rbf_centers: usize,
    pub train: TrainOptions,
    pub cfg: IntegrationConfig,
    pub seed: u64,
}

/// Train an ambient-space baseline on manifold demonstrations: the points are
/// reinterpreted as plain R^n states, velocities as plain vectors.
pub fn train_baseline<T: Real>(
    demos: &[Demonstration<T>],
    projected: bool,
    hyper: &BaselineHyper,
) -> Result<(BaselineModel<T>, Vec<f64>)> {
    let first = demos.first().ok_or(Error::EmptyInput)?;
    let data_spec = first.spec.clone();
    let ambient = ManifoldSpec::euclidean(data_spec.ambient_dim());
    let flat_demos: Vec<Demonstration<T>> = demos
        .iter()
        .map(|d| Demonstration {
            spec: ambient.clone(),
            dt: d.dt,
            points: d.points.clone(),
            velocities: d.velocities.clone(),
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let field = VectorFieldNet::identity_init(&ambient, hyper.hidden, &mut rng);
    let points: Vec<ManifoldPoint<T>> = flat_demos
        .iter()
        .flat_map(|d| d.points.iter().cloned())
        .collect();
    let scaling = ScalingNet::init_from_points(&ambient, &points, hyper.rbf_centers, &mut rng)?;
    let mut inner = RsdsModel {
        spec: ambient,
        field,
        scaling,
        goal: first.goal().clone(),
        cfg: hyper.cfg,
    };
    let history = train(&mut inner, &flat_demos, &hyper.train, |_, _, _| {})?;
    Ok((
        BaselineModel {
            inner,
            data_spec,
            projected,
        },
        history,
    ))
}

impl<T: Real> BaselineModel<T> {
    /// Ambient Euler rollout (with retraction and projection when
    /// `projected`); returns the visited states plus the sweep outcome.
    pub fn run_rollout(
        &self,
        x0: &ManifoldPoint<T>,
        cfg: &SweepConfig,
    ) -> (Vec<ManifoldPoint<T>>, StartOutcome) {
        let goal = &self.inner.goal;
        let mut x = x0.clone();
        let mut path = Vec::new();
        let mut converged = false;
        let mut failure = None;
        let mut max_off = 0.0f64;
        let ev = match self.inner.eval() {
            Ok(ev) => ev,
            Err(e) => {
                return (
                    path,
                    StartOutcome {
                        start: x0.coords.iter().map(|v| v.to_f64()).collect(),
                        converged: false,
                        final_distance: f64::INFINITY,
                        lyapunov_monotone: None,
                        max_off_manifold: 0.0,
                        failure: Some(e.to_string()),
                    },
                )
            }
        };
        for _ in 0..cfg.max_steps {
            path.push(x.clone());
            for b in self.data_spec.blocks() {
                if b.is_sphere {
                    let r = x.coords.rows(b.offset, b.len).norm().to_f64();
                    max_off = max_off.max((r - 1.0).abs());
                }
            }
            let dist = if self.projected {
                self.data_spec.distance(&x, goal)
            } else {
                (&x.coords - &goal.coords).norm()
            };
            if dist < T::of(cfg.conv_tol) {
                converged = true;
                break;
            }
            let v = match ev.velocity(&x) {
                Ok(i) => i.velocity.vec,
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            };
            if self.projected {
                let vp = self.data_spec.project_to_tangent(&x, &v).vec;
                let ambient = &x.coords + vp * T::of(cfg.dt);
                x = match self.data_spec.retract(&ambient) {
                    Ok(p) => p,
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                };
            } else {
                x = ManifoldPoint::new(&x.coords + v * T::of(cfg.dt));
            }
            if !x.coords.iter().all(|c| c.is_finite_real()) {
                failure = Some("state diverged to non-finite values".into());
                break;
            }
        }
        let final_distance = if self.projected {
            self.data_spec.distance(&x, goal).to_f64()
        } else {
            (&x.coords - &goal.coords).norm().to_f64()
        };
        (
            path,
            StartOutcome {
                start: x0.coords.iter().map(|v| v.to_f64()).collect(),
                converged: converged && failure.is_none(),
                final_distance,
                lyapunov_monotone: None,
                max_off_manifold: max_off,
                failure,
            },
        )
    }

    /// Reproduce one demo from its start and measure the DTWD against it.
    pub fn reproduction_dtwd(&self, demo: &Demonstration<T>, cfg: &SweepConfig) -> Result<f64> {
        let mut local = *cfg;
        local.dt = demo.dt.to_f64();
        local.max_steps = demo.len() * 3;
        let (path, _) = self.run_rollout(&demo.points[0], &local);
        if path.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(dtwd(&path, &demo.points, &self.data_spec).to_f64())
    }
}

impl<T: Real> SweepTarget<T> for BaselineModel<T> {
    fn sampling_spec(&self) -> &ManifoldSpec {
        &self.data_spec
    }

    fn exclusion_center(&self) -> Option<ManifoldPoint<T>> {
        None
    }

    fn run(&self, x0: &ManifoldPoint<T>, cfg: &SweepConfig) -> StartOutcome {
        self.run_rollout(x0, cfg).1
    }
}

// ---- the combined report -----------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model_kind: String,
    pub velocity_mse: f64,
    pub mse_flagged_points: usize,
    pub dtwd_per_demo: Vec<f64>,
    pub dtwd_mean: f64,
    pub success_rate: f64,
    pub n_rollouts: usize,
    pub n_converged: usize,
    pub sweep_config: SweepConfig,
    /// echoed run configuration for provenance
    pub run_config: serde_json::Value,
}

impl MetricsReport {
    pub fn csv_header() -> &'static str {
        "model_kind,velocity_mse,mse_flagged_points,dtwd_mean,success_rate,n_rollouts,n_converged,seed,conv_tol,dt,max_steps,exclusion_radius"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.16e},{},{:.16e},{:.16e},{},{},{},{:.16e},{:.16e},{},{:.16e}",
            self.model_kind,
            self.velocity_mse,
            self.mse_flagged_points,
            self.dtwd_mean,
            self.success_rate,
            self.n_rollouts,
            self.n_converged,
            self.sweep_config.seed,
            self.sweep_config.conv_tol,
            self.sweep_config.dt,
            self.sweep_config.max_steps,
            self.sweep_config.exclusion_radius,
        )
    }
}

/// Rollout reproduction of one demonstration (same start, same dt, horizon a
/// multiple of the demo length) and its DTWD against the demo.
pub fn reproduction_dtwd<T: Real>(
    ev: &ModelEval<'_, T>,
    demo: &Demonstration<T>,
    conv_tol: f64,
    horizon_factor: f64,
) -> Result<f64> {
    let opts = RolloutOptions {
        dt: demo.dt,
        max_steps: ((demo.len() as f64) * horizon_factor) as usize,
        conv_tol: T::of(conv_tol),
    };
    let r = rollout_with_eval(ev, &demo.points[0], &opts, None)?;
    let path: Vec<ManifoldPoint<T>> = r
        .steps
        .iter()
        .map(|s| {
            ManifoldPoint::new(DVector::from_iterator(
                s.point.len(),
                s.point.iter().map(|v| T::of(*v)),
            ))
        })
        .collect();
    if path.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(dtwd(&path, &demo.points, &demo.spec).to_f64())
}
