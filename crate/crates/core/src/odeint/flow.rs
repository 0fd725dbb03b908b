//! Flow maps: chart-wise integration, the projection method, and the
//! time-reversed (approximate inverse) flow.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::manifold::ManifoldPoint;
use crate::real::Real;

use super::{Chart, ChartTrace, FlowTrace, IntegrationConfig, StepTrace, TimeField};

/// Integrate the field over `[t_start, t_end]` with `num_charts` equal time
/// subintervals; each chart is re-centered at the state entering it.
pub fn flow_chartwise<T: Real, F: TimeField<T>>(
    field: &F,
    x0: &ManifoldPoint<T>,
    cfg: &IntegrationConfig,
) -> Result<ManifoldPoint<T>> {
    Ok(chartwise_trace(field, x0, cfg, false)?.endpoint)
}

/// As `flow_chartwise`, but records per-step state for differential passes.
pub(crate) fn chartwise_trace<T: Real, F: TimeField<T>>(
    field: &F,
    x0: &ManifoldPoint<T>,
    cfg: &IntegrationConfig,
    record: bool,
) -> Result<FlowTrace<T>> {
    cfg.validate()?;
    let spec = field.spec();
    spec.check_point(x0)?;
    let n = spec.ambient_dim();
    let chart_len = cfg.chart_len();
    let steps = cfg.steps_for(chart_len);
    let dt = T::of(chart_len / steps as f64);

    let mut state = x0.clone();
    let mut charts = Vec::with_capacity(if record { cfg.num_charts } else { 0 });
    for ci in 0..cfg.num_charts {
        let chart = Chart::new(spec, state.clone());
        let t_entry = cfg.t_start + ci as f64 * chart_len;
        let mut w: DVector<T> = DVector::zeros(n);
        let mut trace_steps = Vec::with_capacity(if record { steps } else { 0 });
        for si in 0..steps {
            let t = T::of(t_entry + si as f64 * (chart_len / steps as f64));
            let z = chart.from_coords(&w)?;
            let f = field.eval(&z, t)?;
            let de = chart.d_exp(&w);
            let g = de
                .lu()
                .solve(&f.vec)
                .ok_or(Error::Singular { cond: f64::INFINITY })?;
            if record {
                trace_steps.push(StepTrace {
                    w: w.clone(),
                    t,
                    dt,
                    g: g.clone(),
                    z,
                });
            }
            w += g * dt;
            chart.check_overflow(&w)?;
        }
        state = chart.from_coords(&w)?;
        // re-retract so accumulated roundoff never leaves the manifold
        state = spec.retract(&state.coords)?;
        if record {
            charts.push(ChartTrace {
                chart,
                steps: trace_steps,
                w_end: w,
            });
        }
    }
    Ok(FlowTrace {
        charts,
        endpoint: state,
    })
}

/// Projection method: ambient Euler step, then retract onto the manifold.
pub fn flow_projection<T: Real, F: TimeField<T>>(
    field: &F,
    x0: &ManifoldPoint<T>,
    cfg: &IntegrationConfig,
) -> Result<ManifoldPoint<T>> {
    cfg.validate()?;
    let spec = field.spec();
    spec.check_point(x0)?;
    let len = cfg.t_end - cfg.t_start;
    let steps = cfg.steps_for(len);
    let dt = T::of(len / steps as f64);
    let mut state = x0.clone();
    for si in 0..steps {
        let t = T::of(cfg.t_start + si as f64 * (len / steps as f64));
        let f = field.eval(&state, t)?;
        let ambient = &state.coords + f.vec * dt;
        state = spec.retract(&ambient)?;
    }
    Ok(state)
}

/// Approximate inverse of `flow_chartwise`: integrate over the reversed time
/// interval with the same chart count and step size, re-centering charts at
/// the state entering each reversed subinterval.
pub fn flow_inverse<T: Real, F: TimeField<T>>(
    field: &F,
    y: &ManifoldPoint<T>,
    cfg: &IntegrationConfig,
) -> Result<ManifoldPoint<T>> {
    cfg.validate()?;
    let spec = field.spec();
    spec.check_point(y)?;
    let n = spec.ambient_dim();
    let chart_len = cfg.chart_len();
    let steps = cfg.steps_for(chart_len);
    let dt = T::of(chart_len / steps as f64);

    let mut state = y.clone();
    for ci in 0..cfg.num_charts {
        let chart = Chart::new(spec, state.clone());
        let t_entry = cfg.t_end - ci as f64 * chart_len;
        let mut w: DVector<T> = DVector::zeros(n);
        for si in 0..steps {
            let t = T::of(t_entry - si as f64 * (chart_len / steps as f64));
            let z = chart.from_coords(&w)?;
            let f = field.eval(&z, t)?;
            let de = chart.d_exp(&w);
            let g = de
                .lu()
                .solve(&f.vec)
                .ok_or(Error::Singular { cond: f64::INFINITY })?;
            w -= g * dt;
            chart.check_overflow(&w)?;
        }
        state = chart.from_coords(&w)?;
        state = spec.retract(&state.coords)?;
    }
    Ok(state)
}
