//! Training: exact reverse-mode gradients through the fixed Euler/chart
//! discretization (discretize-then-optimize), plus the Adam loop.
//!
//! Each sample's prediction is rebuilt on the autodiff tape exactly as the
//! plain evaluation path computes it, including chart re-centering and the
//! per-step Jacobian factors of the pullback chain. The latent attractor
//! `y* = psi(goal)` also depends on the parameters; its contribution is
//! accumulated once per batch by seeding one goal-flow tape with the summed
//! cotangents (the split is exact, not an approximation).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::autodiff::{Id, Tape, Val};
use crate::error::{Error, Result};
use crate::manifold::{Block, ManifoldPoint};
use crate::netfield::{adam_step, AdamState};
use crate::odeint::CHART_OVERFLOW_MARGIN;
use crate::real::Real;

use super::{RsdsModel, EQUILIBRIUM_TOL};
use crate::data::Demonstration;

/// Which parameter groups receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainVars {
    Both,
    FieldOnly,
    ScalingOnly,
}

/// One training pair: a state and the demonstrated tangent velocity there.
#[derive(Debug, Clone)]
pub struct TrainSample<T: Real> {
    pub x: ManifoldPoint<T>,
    pub xdot: DVector<T>,
}

pub fn samples_from_demos<T: Real>(demos: &[Demonstration<T>]) -> Vec<TrainSample<T>> {
    demos
        .iter()
        .flat_map(|d| {
            (0..d.len()).map(move |i| TrainSample {
                x: d.points[i].clone(),
                xdot: d.velocities[i].clone(),
            })
        })
        .collect()
}

/// Per-parameter gradients mirroring the model's parameter layout.
#[derive(Debug, Clone)]
pub struct ParamGradient<T: Real> {
    pub field_weights: Vec<DMatrix<T>>,
    pub field_biases: Vec<DVector<T>>,
    pub scaling_weights: DVector<T>,
}

impl<T: Real> ParamGradient<T> {
    pub fn zeros_like(model: &RsdsModel<T>) -> Self {
        ParamGradient {
            field_weights: model
                .field
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            field_biases: model
                .field
                .biases
                .iter()
                .map(|b| DVector::zeros(b.len()))
                .collect(),
            scaling_weights: DVector::zeros(model.scaling.weights.len()),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.field_weights.iter_mut().zip(&other.field_weights) {
            *a += b;
        }
        for (a, b) in self.field_biases.iter_mut().zip(&other.field_biases) {
            *a += b;
        }
        self.scaling_weights += &other.scaling_weights;
    }

    pub fn scale(&mut self, s: T) {
        for a in &mut self.field_weights {
            *a *= s;
        }
        for a in &mut self.field_biases {
            *a *= s;
        }
        self.scaling_weights *= s;
    }

    pub fn is_finite(&self) -> bool {
        self.field_weights
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite_real()))
            && self
                .field_biases
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite_real()))
            && self.scaling_weights.iter().all(|v| v.is_finite_real())
    }

    pub fn mask(&mut self, vars: TrainVars) {
        match vars {
            TrainVars::Both => {}
            TrainVars::FieldOnly => self.scaling_weights.fill(T::zero()),
            TrainVars::ScalingOnly => {
                for m in &mut self.field_weights {
                    m.fill(T::zero());
                }
                for b in &mut self.field_biases {
                    b.fill(T::zero());
                }
            }
        }
    }
}

// ---- flat parameter vector (Adam operates on this) --------------------------

pub fn flatten_params<T: Real>(model: &RsdsModel<T>) -> DVector<T> {
    let mut out = Vec::new();
    for w in &model.field.weights {
        out.extend(w.iter().copied());
    }
    for b in &model.field.biases {
        out.extend(b.iter().copied());
    }
    out.extend(model.scaling.weights.iter().copied());
    DVector::from_vec(out)
}

pub fn flatten_grads<T: Real>(g: &ParamGradient<T>) -> DVector<T> {
    let mut out = Vec::new();
    for w in &g.field_weights {
        out.extend(w.iter().copied());
    }
    for b in &g.field_biases {
        out.extend(b.iter().copied());
    }
    out.extend(g.scaling_weights.iter().copied());
    DVector::from_vec(out)
}

pub fn assign_params<T: Real>(model: &mut RsdsModel<T>, flat: &DVector<T>) {
    let mut k = 0;
    for w in &mut model.field.weights {
        for v in w.iter_mut() {
            *v = flat[k];
            k += 1;
        }
    }
    for b in &mut model.field.biases {
        for v in b.iter_mut() {
            *v = flat[k];
            k += 1;
        }
    }
    for v in model.scaling.weights.iter_mut() {
        *v = flat[k];
        k += 1;
    }
    debug_assert_eq!(k, flat.len());
}

// ---- taped geometry ----------------------------------------------------------

struct TapedParams {
    w: Vec<Id>,
    b: Vec<Id>,
    sw: Id,
}

fn insert_params<T: Real>(tape: &mut Tape<T>, model: &RsdsModel<T>) -> TapedParams {
    TapedParams {
        w: model
            .field
            .weights
            .iter()
            .map(|w| tape.leaf_m(w.clone()))
            .collect(),
        b: model
            .field
            .biases
            .iter()
            .map(|b| tape.leaf_v(b.clone()))
            .collect(),
        sw: tape.leaf_v(model.scaling.weights.clone()),
    }
}

/// `Exp_c(w)` per block, smooth through `w = 0`.
fn taped_exp<T: Real>(tape: &mut Tape<T>, blocks: &[Block], c: Id, w: Id) -> Id {
    let mut parts = Vec::with_capacity(blocks.len());
    for b in blocks {
        let cb = tape.v_slice(c, b.offset, b.len);
        let wb = tape.v_slice(w, b.offset, b.len);
        if b.is_sphere {
            let rho = tape.dot(wb, wb);
            let cc = tape.cos_sqrt(rho);
            let ss = tape.sinc_sqrt(rho);
            let t1 = tape.v_scale_s(cb, cc);
            let t2 = tape.v_scale_s(wb, ss);
            parts.push(tape.v_add(t1, t2));
        } else {
            parts.push(tape.v_add(cb, wb));
        }
    }
    tape.v_concat(&parts)
}

/// Normalize sphere blocks of `z` (the retraction the plain path applies).
fn taped_retract<T: Real>(tape: &mut Tape<T>, blocks: &[Block], z: Id, one: Id) -> Id {
    let mut parts = Vec::with_capacity(blocks.len());
    for b in blocks {
        let zb = tape.v_slice(z, b.offset, b.len);
        if b.is_sphere {
            let n2 = tape.dot(zb, zb);
            let n = tape.s_sqrt(n2);
            let inv = tape.s_div(one, n);
            parts.push(tape.v_scale_s(zb, inv));
        } else {
            parts.push(zb);
        }
    }
    tape.v_concat(&parts)
}

/// Ambient differential of `w -> Exp_c(w)` (block diagonal on the tape).
fn taped_d_exp<T: Real>(
    tape: &mut Tape<T>,
    blocks: &[Block],
    ambient: usize,
    c: Id,
    w: Id,
) -> Id {
    let mut de = tape.leaf_m(DMatrix::identity(ambient, ambient));
    for b in blocks {
        if b.is_sphere {
            let cb = tape.v_slice(c, b.offset, b.len);
            let wb = tape.v_slice(w, b.offset, b.len);
            let rho = tape.dot(wb, wb);
            let s0 = tape.sinc_sqrt(rho);
            let s1 = tape.sinc_sqrt_d1(rho);
            let eye = tape.leaf_m(DMatrix::identity(b.len, b.len));
            let t1 = tape.m_scale_s(eye, s0);
            let ocw = tape.outer(cb, wb);
            let t2 = tape.m_scale_s(ocw, s0);
            let t12 = tape.m_sub(t1, t2);
            let oww = tape.outer(wb, wb);
            let t3a = tape.m_scale_s(oww, s1);
            let t3 = tape.m_scale_c(t3a, 2.0);
            let blk = tape.m_add(t12, t3);
            de = tape.set_block(de, blk, b.offset);
        }
    }
    de
}

/// `d/dw [DE(w) g]` with `g` held fixed (block diagonal, zero on Euclidean).
fn taped_d2_exp_contract<T: Real>(
    tape: &mut Tape<T>,
    blocks: &[Block],
    ambient: usize,
    c: Id,
    w: Id,
    g: Id,
) -> Id {
    let mut q = tape.leaf_m(DMatrix::zeros(ambient, ambient));
    for b in blocks {
        if b.is_sphere {
            let cb = tape.v_slice(c, b.offset, b.len);
            let wb = tape.v_slice(w, b.offset, b.len);
            let gb = tape.v_slice(g, b.offset, b.len);
            let rho = tape.dot(wb, wb);
            let s0 = tape.sinc_sqrt(rho);
            let s1 = tape.sinc_sqrt_d1(rho);
            let s2 = tape.sinc_sqrt_d2(rho);
            let wg = tape.dot(wb, gb);
            let eye = tape.leaf_m(DMatrix::identity(b.len, b.len));

            let obw = tape.outer(gb, wb);
            let t1a = tape.m_scale_s(obw, s1);
            let t1 = tape.m_scale_c(t1a, 2.0);

            let ocw = tape.outer(cb, wb);
            let s1wg = tape.s_mul(s1, wg);
            let t2a = tape.m_scale_s(ocw, s1wg);
            let t2 = tape.m_scale_c(t2a, -2.0);

            let ocb = tape.outer(cb, gb);
            let t3a = tape.m_scale_s(ocb, s0);
            let t3 = tape.m_scale_c(t3a, -1.0);

            let oww = tape.outer(wb, wb);
            let s2wg = tape.s_mul(s2, wg);
            let t4a = tape.m_scale_s(oww, s2wg);
            let t4 = tape.m_scale_c(t4a, 4.0);

            let owb = tape.outer(wb, gb);
            let t5a = tape.m_scale_s(owb, s1);
            let t5 = tape.m_scale_c(t5a, 2.0);

            let t6a = tape.m_scale_s(eye, s1wg);
            let t6 = tape.m_scale_c(t6a, 2.0);

            let s12 = tape.m_add(t1, t2);
            let s34 = tape.m_add(t3, t4);
            let s56 = tape.m_add(t5, t6);
            let s1234 = tape.m_add(s12, s34);
            let blk = tape.m_add(s1234, s56);
            q = tape.set_block(q, blk, b.offset);
        }
    }
    q
}

/// MLP forward on the tape: returns `eta` and the hidden activations.
fn taped_eta<T: Real>(
    tape: &mut Tape<T>,
    params: &TapedParams,
    z: Id,
    t: f64,
) -> (Id, Vec<Id>) {
    let t_leaf = tape.leaf_v(DVector::from_row_slice(&[T::of(t)]));
    let mut a = tape.v_concat(&[z, t_leaf]);
    let mut hidden = Vec::with_capacity(params.w.len() - 1);
    for l in 0..params.w.len() - 1 {
        let lin = tape.mat_vec(params.w[l], a);
        let pre = tape.v_add(lin, params.b[l]);
        let h = tape.tanh(pre);
        hidden.push(h);
        a = h;
    }
    let last = params.w.len() - 1;
    let lin = tape.mat_vec(params.w[last], a);
    let eta = tape.v_add(lin, params.b[last]);
    (eta, hidden)
}

/// Tangent-projection head per sphere block.
fn taped_field_head<T: Real>(tape: &mut Tape<T>, blocks: &[Block], z: Id, eta: Id) -> Id {
    let mut parts = Vec::with_capacity(blocks.len());
    for b in blocks {
        let eb = tape.v_slice(eta, b.offset, b.len);
        if b.is_sphere {
            let zb = tape.v_slice(z, b.offset, b.len);
            let ze = tape.dot(zb, eb);
            let corr = tape.v_scale_s(zb, ze);
            parts.push(tape.v_sub(eb, corr));
        } else {
            parts.push(eb);
        }
    }
    tape.v_concat(&parts)
}

/// Ambient Jacobian of the projected field, mirroring the analytic formula.
fn taped_field_jacobian<T: Real>(
    tape: &mut Tape<T>,
    blocks: &[Block],
    ambient: usize,
    params: &TapedParams,
    z: Id,
    eta: Id,
    hidden: &[Id],
) -> Id {
    let mut j = tape.slice_cols(params.w[0], 0, ambient);
    for (l, h) in hidden.iter().enumerate() {
        let d = tape.v_one_minus_sq(*h);
        let scaled = tape.scale_rows(d, j);
        j = tape.mat_mul(params.w[l + 1], scaled);
    }
    // projector and head corrections
    let mut p = tape.leaf_m(DMatrix::identity(ambient, ambient));
    for b in blocks {
        if b.is_sphere {
            let zb = tape.v_slice(z, b.offset, b.len);
            let ozz = tape.outer(zb, zb);
            let eye = tape.leaf_m(DMatrix::identity(b.len, b.len));
            let pb = tape.m_sub(eye, ozz);
            p = tape.set_block(p, pb, b.offset);
        }
    }
    let mut out = tape.mat_mul(p, j);
    for b in blocks {
        if b.is_sphere {
            let zb = tape.v_slice(z, b.offset, b.len);
            let eb = tape.v_slice(eta, b.offset, b.len);
            let ze = tape.dot(zb, eb);
            let eye = tape.leaf_m(DMatrix::identity(b.len, b.len));
            let c1 = tape.m_scale_s(eye, ze);
            let c2 = tape.outer(zb, eb);
            let sum = tape.m_add(c1, c2);
            let corr = tape.m_scale_c(sum, -1.0);
            out = tape.add_block(out, corr, b.offset);
        }
    }
    out
}

struct TapedChart {
    de_end: Id,
    /// per-step Jacobian factors `M = I + dt Dg`, forward order
    step_ms: Vec<Id>,
}

/// Chart-wise flow on the tape, mirroring `odeint::chartwise_trace`.
/// `with_jacobians` records what the pullback chain needs.
fn taped_flow<T: Real>(
    tape: &mut Tape<T>,
    model: &RsdsModel<T>,
    params: &TapedParams,
    x0: &ManifoldPoint<T>,
    one: Id,
    with_jacobians: bool,
) -> Result<(Id, Vec<TapedChart>)> {
    let spec = &model.spec;
    let blocks = spec.blocks();
    let n = spec.ambient_dim();
    let cfg = &model.cfg;
    let chart_len = cfg.chart_len();
    let steps = cfg.steps_for(chart_len);
    let dt = chart_len / steps as f64;
    let limit = std::f64::consts::PI - CHART_OVERFLOW_MARGIN;

    let mut state = tape.leaf_v(x0.coords.clone());
    let mut charts = Vec::new();
    for ci in 0..cfg.num_charts {
        let c = state;
        let t_entry = cfg.t_start + ci as f64 * chart_len;
        let mut w = tape.leaf_v(DVector::zeros(n));
        let mut step_ms = Vec::new();
        for si in 0..steps {
            let t = t_entry + si as f64 * dt;
            let z = taped_exp(tape, &blocks, c, w);
            let (eta, hidden) = taped_eta(tape, params, z, t);
            let f = taped_field_head(tape, &blocks, z, eta);
            let de = taped_d_exp(tape, &blocks, n, c, w);
            let g = tape.solve_vec(de, f);
            if with_jacobians {
                let df = taped_field_jacobian(tape, &blocks, n, params, z, eta, &hidden);
                let q = taped_d2_exp_contract(tape, &blocks, n, c, w, g);
                let dfde = tape.mat_mul(df, de);
                let rhs = tape.m_sub(dfde, q);
                let dg = tape.solve_mat(de, rhs);
                let dgdt = tape.m_scale_c(dg, dt);
                step_ms.push(tape.add_eye_c(dgdt, 1.0));
            }
            let gdt = tape.v_scale_c(g, dt);
            w = tape.v_add(w, gdt);
            for b in &blocks {
                if b.is_sphere {
                    let norm = tape.v(w).rows(b.offset, b.len).norm();
                    if norm.to_f64() >= limit {
                        return Err(Error::ChartOverflow {
                            norm: norm.to_f64(),
                        });
                    }
                }
            }
        }
        let de_end = taped_d_exp(tape, &blocks, n, c, w);
        let z_end = taped_exp(tape, &blocks, c, w);
        state = taped_retract(tape, &blocks, z_end, one);
        charts.push(TapedChart { de_end, step_ms });
    }
    Ok((state, charts))
}

/// `Log_y(y_star)` assembled per block; errors on a cut-locus block.
fn taped_log<T: Real>(
    tape: &mut Tape<T>,
    blocks: &[Block],
    y: Id,
    y_star: Id,
) -> Result<Id> {
    let mut parts = Vec::with_capacity(blocks.len());
    for b in blocks {
        let yb = tape.v_slice(y, b.offset, b.len);
        let sb = tape.v_slice(y_star, b.offset, b.len);
        if b.is_sphere {
            let q = tape.dot(yb, sb);
            let dist = tape.s(q).to_f64().clamp(-1.0, 1.0).acos();
            if dist >= std::f64::consts::PI - 1e-6 {
                return Err(Error::CutLocus);
            }
            if dist < 1e-12 {
                // the limit Log_y(y) = 0; constant zero block
                parts.push(tape.leaf_v(DVector::zeros(b.len)));
                continue;
            }
            let ysq = tape.v_scale_s(yb, q);
            let p = tape.v_sub(sb, ysq);
            let p2 = tape.dot(p, p);
            let s = tape.s_sqrt(p2);
            let theta = tape.atan2(s, q);
            let coef = tape.s_div(theta, s);
            parts.push(tape.v_scale_s(p, coef));
        } else {
            parts.push(tape.v_sub(sb, yb));
        }
    }
    Ok(tape.v_concat(&parts))
}

enum SampleOutcome<T: Real> {
    /// loss that carries no parameter gradient (exact equilibrium point)
    Constant(T),
    Built {
        loss: T,
        grad: ParamGradient<T>,
        y_star_cotangent: DVector<T>,
    },
}

/// Tape and backward pass for one sample, with `y*` clamped as a leaf.
fn sample_loss<T: Real>(
    model: &RsdsModel<T>,
    y_star: &ManifoldPoint<T>,
    sample: &TrainSample<T>,
) -> Result<SampleOutcome<T>> {
    let spec = &model.spec;
    let blocks = spec.blocks();
    let mut tape: Tape<T> = Tape::new();
    let params = insert_params(&mut tape, model);
    let one = tape.leaf_s(T::one());
    let ys_leaf = tape.leaf_v(y_star.coords.clone());

    let (y, charts) = taped_flow(&mut tape, model, &params, &sample.x, one, true)?;

    // equilibrium branch: prediction is exactly zero, loss is constant
    let y_val = ManifoldPoint::new(tape.v(y).clone());
    if spec.distance(&y_val, y_star) < T::of(EQUILIBRIUM_TOL) {
        return Ok(SampleOutcome::Constant(sample.xdot.norm_squared()));
    }

    let log = taped_log(&mut tape, &blocks, y, ys_leaf)?;
    let log_n2 = tape.dot(log, log);
    let log_n = tape.s_sqrt(log_n2);
    let inv_log_n = tape.s_div(one, log_n);
    let gn = tape.v_scale_s(log, inv_log_n);

    // pullback chain applied to the direction vector
    let mut a = gn;
    for ct in charts.iter().rev() {
        a = tape.solve_vec(ct.de_end, a);
        for m in ct.step_ms.iter().rev() {
            a = tape.solve_vec(*m, a);
        }
    }
    let a_n2 = tape.dot(a, a);
    let a_n = tape.s_sqrt(a_n2);
    if tape.s(a_n).to_f64() < super::DEGENERATE_PULLBACK_TOL {
        return Err(Error::DegeneratePullback);
    }

    // scaling factor: the RBF features depend on x only, so they are constants
    let feats = tape.leaf_v(model.scaling.features(&sample.x));
    let kappa = tape.dot(params.sw, feats);
    let eps = tape.leaf_s(model.scaling.epsilon);
    let k_arg = tape.s_add(kappa, eps);
    let khat = tape.s_exp(k_arg);

    let coef = tape.s_div(khat, a_n);
    let pred = tape.v_scale_s(a, coef);
    let demo = tape.leaf_v(sample.xdot.clone());
    let err = tape.v_sub(pred, demo);
    let loss = tape.dot(err, err);

    let grads = tape.backward(loss);
    let gw = params
        .w
        .iter()
        .zip(&model.field.weights)
        .map(|(id, w)| grads.matrix(*id, w.nrows(), w.ncols()))
        .collect();
    let gb = params
        .b
        .iter()
        .zip(&model.field.biases)
        .map(|(id, b)| grads.vector(*id, b.len()))
        .collect();
    let gsw = grads.vector(params.sw, model.scaling.weights.len());
    Ok(SampleOutcome::Built {
        loss: tape.s(loss),
        grad: ParamGradient {
            field_weights: gw,
            field_biases: gb,
            scaling_weights: gsw,
        },
        y_star_cotangent: grads.vector(ys_leaf, spec.ambient_dim()),
    })
}

/// Gradient contribution of the goal flow: one tape seeded with the batch's
/// summed cotangent at `y*`.
fn goal_flow_gradient<T: Real>(
    model: &RsdsModel<T>,
    cotangent: &DVector<T>,
) -> Result<ParamGradient<T>> {
    let mut tape: Tape<T> = Tape::new();
    let params = insert_params(&mut tape, model);
    let one = tape.leaf_s(T::one());
    let (y_star, _) = taped_flow(&mut tape, model, &params, &model.goal, one, false)?;
    let grads = tape.backward_seeded(&[(y_star, Val::V(cotangent.clone()))]);
    Ok(ParamGradient {
        field_weights: params
            .w
            .iter()
            .zip(&model.field.weights)
            .map(|(id, w)| grads.matrix(*id, w.nrows(), w.ncols()))
            .collect(),
        field_biases: params
            .b
            .iter()
            .zip(&model.field.biases)
            .map(|(id, b)| grads.vector(*id, b.len()))
            .collect(),
        scaling_weights: DVector::zeros(model.scaling.weights.len()),
    })
}

/// Mean squared velocity error over the batch and its exact gradient.
pub fn loss_and_gradients<T: Real>(
    model: &RsdsModel<T>,
    samples: &[TrainSample<T>],
    vars: TrainVars,
) -> Result<(T, ParamGradient<T>)> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let y_star = model.attractor_image()?;

    let outcomes: Result<Vec<SampleOutcome<T>>> = samples
        .par_iter()
        .map(|s| sample_loss(model, &y_star, s))
        .collect();
    let outcomes = outcomes?;

    let mut loss_sum = T::zero();
    let mut grad = ParamGradient::zeros_like(model);
    let mut cot = DVector::zeros(model.spec.ambient_dim());
    for o in &outcomes {
        match o {
            SampleOutcome::Constant(l) => loss_sum += *l,
            SampleOutcome::Built {
                loss,
                grad: g,
                y_star_cotangent,
            } => {
                loss_sum += *loss;
                grad.add_assign(g);
                cot += y_star_cotangent;
            }
        }
    }
    if cot.norm() > T::zero() && vars != TrainVars::ScalingOnly {
        let goal_grad = goal_flow_gradient(model, &cot)?;
        grad.add_assign(&goal_grad);
    }

    let inv_n = T::one() / T::of(samples.len() as f64);
    grad.scale(inv_n);
    grad.mask(vars);
    Ok((loss_sum * inv_n, grad))
}

/// Training-loop knobs; defaults follow the reference recipe
/// (Adam, lr 1e-3 decaying by 0.1 after epoch 1000).
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub vars: TrainVars,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 2000,
            lr: 1e-3,
            lr_decay_epoch: 1000,
            lr_decay_factor: 0.1,
            vars: TrainVars::Both,
        }
    }
}

/// Full-batch Adam. Returns the per-epoch loss history (the loss is recorded
/// before each update). On a non-finite loss the model keeps the last good
/// parameters and an error is returned.
pub fn train<T: Real>(
    model: &mut RsdsModel<T>,
    demos: &[Demonstration<T>],
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(usize, f64, &RsdsModel<T>),
) -> Result<Vec<f64>> {
    let samples = samples_from_demos(demos);
    let mut flat = flatten_params(model);
    let mut adam = AdamState::new(flat.len());
    let mut history = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        let last_good = flat.clone();
        let (loss, grad) = loss_and_gradients(model, &samples, opts.vars)?;
        if !loss.is_finite_real() || !grad.is_finite() {
            assign_params(model, &last_good);
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(loss.to_f64());
        let lr = if epoch >= opts.lr_decay_epoch {
            opts.lr * opts.lr_decay_factor
        } else {
            opts.lr
        };
        let gflat = flatten_grads(&grad);
        adam_step(&mut flat, &gflat, &mut adam, T::of(lr));
        assign_params(model, &flat);
        on_epoch(epoch, loss.to_f64(), model);
    }
    Ok(history)
}
