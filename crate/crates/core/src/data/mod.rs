//! Demonstration ingestion and preprocessing: CSV/JSON loading, low-pass
//! filtering, planar-letter projection onto S^2, and goal alignment.

pub mod filter;
pub mod synthetic;

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{karcher_mean, ManifoldPoint, ManifoldSpec, TangentVector};
use crate::real::Real;

pub use filter::lowpass_filter;
pub use synthetic::{generate_synthetic_letters, LetterShape};

/// A raw time-stamped state sequence (planar letter or 7-D pose).
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
}

impl RawTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::EmptyInput);
        }
        if self.times.len() != self.states.len() {
            return Err(Error::InvalidConfig(
                "times and states lengths differ".into(),
            ));
        }
        let dim = self.dim();
        for (i, s) in self.states.iter().enumerate() {
            if s.len() != dim {
                return Err(Error::Parse {
                    row: i + 1,
                    msg: format!("state dim {} != {}", s.len(), dim),
                });
            }
        }
        for i in 1..self.times.len() {
            if self.times[i] <= self.times[i - 1] {
                return Err(Error::Parse {
                    row: i + 1,
                    msg: format!(
                        "timestamps must be strictly increasing ({} after {})",
                        self.times[i],
                        self.times[i - 1]
                    ),
                });
            }
        }
        Ok(())
    }

    /// Median sampling period.
    pub fn sample_period(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(Error::InvalidConfig("need >= 2 samples".into()));
        }
        let mut dts: Vec<f64> = self.times.windows(2).map(|w| w[1] - w[0]).collect();
        dts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(dts[dts.len() / 2])
    }

    /// Normalize unit-quaternion blocks in place (7-D pose rows: xyz + quat).
    pub fn normalize_quaternion_blocks(&mut self, spec: &ManifoldSpec) -> Result<()> {
        for s in &mut self.states {
            for b in spec.blocks() {
                if b.is_sphere {
                    let n = s.rows(b.offset, b.len).norm();
                    if n < 1e-12 {
                        return Err(Error::DegenerateProjection);
                    }
                    s.rows_mut(b.offset, b.len).scale_mut(1.0 / n);
                }
            }
        }
        Ok(())
    }
}

/// A preprocessed demonstration: on-manifold points with tangent velocities
/// satisfying `Exp_{x_t}(dt * v_t) = x_{t+1}` and a shared final goal.
#[derive(Debug, Clone)]
pub struct Demonstration<T: Real> {
    pub spec: ManifoldSpec,
    pub dt: T,
    pub points: Vec<ManifoldPoint<T>>,
    pub velocities: Vec<DVector<T>>,
}

impl<T: Real> Demonstration<T> {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn goal(&self) -> &ManifoldPoint<T> {
        self.points.last().expect("empty demonstration")
    }

    pub fn duration(&self) -> T {
        self.dt * T::of(self.len().saturating_sub(1) as f64)
    }

    pub fn tangent_at(&self, i: usize) -> TangentVector<T> {
        TangentVector::new(self.points[i].clone(), self.velocities[i].clone())
    }

    /// On-manifold, tangency, and construction-identity invariants.
    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if self.points.len() != self.velocities.len() {
            return Err(Error::InvalidConfig(
                "points and velocities lengths differ".into(),
            ));
        }
        for (i, p) in self.points.iter().enumerate() {
            self.spec.check_point(p)?;
            self.spec.check_tangent(&self.tangent_at(i))?;
        }
        for i in 0..self.len() - 1 {
            let stepped = self.spec.exp_map(
                &self.points[i],
                &TangentVector::new(self.points[i].clone(), &self.velocities[i] * self.dt),
            )?;
            let err = (&stepped.coords - &self.points[i + 1].coords).norm();
            if err > T::of(1e-9) {
                return Err(Error::InvalidConfig(format!(
                    "velocity at sample {i} violates the construction identity (residual {})",
                    err.to_f64()
                )));
            }
        }
        Ok(())
    }

    /// Velocities from forward log-differences; the final velocity is zero so
    /// the sequence is consistent with an attractor at the last point.
    pub fn from_points(spec: &ManifoldSpec, dt: T, points: Vec<ManifoldPoint<T>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut velocities = Vec::with_capacity(points.len());
        for i in 0..points.len() - 1 {
            let v = spec.log_map(&points[i], &points[i + 1])?.vec / dt;
            velocities.push(v);
        }
        velocities.push(DVector::zeros(spec.ambient_dim()));
        Ok(Demonstration {
            spec: spec.clone(),
            dt,
            points,
            velocities,
        })
    }
}

// ---- CSV ------------------------------------------------------------------

/// Load one trajectory from a `t,x0,x1,...` CSV file.
pub fn load_csv(path: &Path) -> Result<RawTrajectory> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<RawTrajectory> {
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() || l.starts_with('#') => continue,
            Some((i, l)) => break (i, l),
            None => return Err(Error::EmptyInput),
        }
    };
    if !header.1.trim_start().starts_with('t') {
        return Err(Error::Parse {
            row: header.0 + 1,
            msg: "expected header starting with 't'".into(),
        });
    }
    let mut line_numbers = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut vals = Vec::new();
        for tok in line.split(',') {
            let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
                row: i + 1,
                msg: format!("cannot parse number {tok:?}"),
            })?;
            vals.push(v);
        }
        if vals.len() < 2 {
            return Err(Error::Parse {
                row: i + 1,
                msg: "need a timestamp and at least one state column".into(),
            });
        }
        times.push(vals[0]);
        states.push(DVector::from_vec(vals[1..].to_vec()));
        line_numbers.push(i + 1);
    }
    for i in 1..times.len() {
        if times[i] <= times[i - 1] {
            return Err(Error::Parse {
                row: line_numbers[i],
                msg: format!(
                    "timestamps must be strictly increasing ({} after {})",
                    times[i],
                    times[i - 1]
                ),
            });
        }
    }
    let traj = RawTrajectory { times, states };
    traj.validate()?;
    Ok(traj)
}

/// Write a trajectory with 17-significant-digit decimals.
pub fn format_csv(traj: &RawTrajectory) -> String {
    let dim = traj.dim();
    let mut out = String::from("t");
    for d in 0..dim {
        out.push_str(&format!(",x{d}"));
    }
    out.push('\n');
    for (t, s) in traj.times.iter().zip(&traj.states) {
        out.push_str(&format!("{t:.16e}"));
        for v in s.iter() {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    out
}

pub fn save_csv(traj: &RawTrajectory, path: &Path) -> Result<()> {
    crate::checkpoint::atomic_write(path, format_csv(traj).as_bytes())
}

/// Load every `*.csv` in a directory (sorted by name), or the single file.
pub fn load_trajectories(path: &Path) -> Result<Vec<RawTrajectory>> {
    if path.is_dir() {
        let mut files: Vec<_> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().map_or(false, |e| e == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::EmptyInput);
        }
        files.iter().map(|f| load_csv(f)).collect()
    } else {
        Ok(vec![load_csv(path)?])
    }
}

// ---- demo container (JSON) --------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct DemoSampleJson {
    t: f64,
    point: Vec<f64>,
    velocity: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DemoContainerJson {
    pub spec: ManifoldSpec,
    pub dt: f64,
    /// run configuration echoed by the CLI for provenance
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_config: Option<serde_json::Value>,
    demos: Vec<Vec<DemoSampleJson>>,
}

pub fn demos_to_json<T: Real>(demos: &[Demonstration<T>]) -> Result<DemoContainerJson> {
    let first = demos.first().ok_or(Error::EmptyInput)?;
    let spec = first.spec.clone();
    let dt = first.dt.to_f64();
    let mut out = Vec::new();
    for d in demos {
        let mut rows = Vec::new();
        for i in 0..d.len() {
            rows.push(DemoSampleJson {
                t: i as f64 * d.dt.to_f64(),
                point: d.points[i].coords.iter().map(|v| v.to_f64()).collect(),
                velocity: d.velocities[i].iter().map(|v| v.to_f64()).collect(),
            });
        }
        out.push(rows);
    }
    Ok(DemoContainerJson {
        spec,
        dt,
        run_config: None,
        demos: out,
    })
}

pub fn demos_from_json<T: Real>(json: &DemoContainerJson) -> Result<Vec<Demonstration<T>>> {
    let mut out = Vec::new();
    for rows in &json.demos {
        let points = rows
            .iter()
            .map(|r| ManifoldPoint::new(DVector::from_iterator(r.point.len(), r.point.iter().map(|v| T::of(*v)))))
            .collect();
        let velocities = rows
            .iter()
            .map(|r| DVector::from_iterator(r.velocity.len(), r.velocity.iter().map(|v| T::of(*v))))
            .collect();
        let demo = Demonstration {
            spec: json.spec.clone(),
            dt: T::of(json.dt),
            points,
            velocities,
        };
        demo.validate()?;
        out.push(demo);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(out)
}

pub fn save_demos<T: Real>(demos: &[Demonstration<T>], path: &Path) -> Result<()> {
    save_demos_with_config(demos, path, None)
}

pub fn save_demos_with_config<T: Real>(
    demos: &[Demonstration<T>],
    path: &Path,
    run_config: Option<serde_json::Value>,
) -> Result<()> {
    let mut json = demos_to_json(demos)?;
    json.run_config = run_config;
    let text = serde_json::to_string_pretty(&json)?;
    crate::checkpoint::atomic_write(path, text.as_bytes())
}

pub fn load_demos<T: Real>(path: &Path) -> Result<Vec<Demonstration<T>>> {
    let text = std::fs::read_to_string(path)?;
    let json: DemoContainerJson = serde_json::from_str(&text)?;
    demos_from_json(&json)
}

// ---- planar letters onto S^2 -------------------------------------------------

/// Deterministic orthonormal basis of the tangent plane at `base`.
fn tangent_basis<T: Real>(base: &ManifoldPoint<T>) -> (DVector<T>, DVector<T>) {
    let n = base.coords.len();
    let mut cands = Vec::new();
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = T::one();
        let t = &e - &base.coords * base.coords.dot(&e);
        cands.push((t.norm(), t));
    }
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let e1 = cands[0].1.normalize();
    let raw2 = &cands[1].1 - &e1 * e1.dot(&cands[1].1);
    let e2 = raw2.normalize();
    (e1, e2)
}

/// Center and scale the planar letters into a tangent disk of radius
/// `pi/2 * scale` at `base`, then map through the exponential map.
/// One common transform is used for all trajectories so their mutual layout
/// survives; velocities come from forward log-differences.
pub fn project_letters_to_sphere<T: Real>(
    trajs: &[RawTrajectory],
    base: &ManifoldPoint<T>,
    scale: f64,
) -> Result<Vec<Demonstration<T>>> {
    if trajs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let spec = ManifoldSpec::sphere(2);
    spec.check_point(base)?;
    let target_radius = std::f64::consts::FRAC_PI_2 * scale;
    if target_radius >= std::f64::consts::PI - 0.2 {
        return Err(Error::InvalidConfig(format!(
            "scale {scale} pushes the letter beyond the injectivity disk"
        )));
    }
    for t in trajs {
        t.validate()?;
        if t.dim() != 2 {
            return Err(Error::InvalidConfig(format!(
                "letter projection expects 2-D states, got {}",
                t.dim()
            )));
        }
    }

    // common center and radius over all trajectories
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for t in trajs {
        for s in &t.states {
            for d in 0..2 {
                lo[d] = lo[d].min(s[d]);
                hi[d] = hi[d].max(s[d]);
            }
        }
    }
    let center = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let mut max_r = 0.0f64;
    for t in trajs {
        for s in &t.states {
            let r = ((s[0] - center[0]).powi(2) + (s[1] - center[1]).powi(2)).sqrt();
            max_r = max_r.max(r);
        }
    }
    let gain = if max_r > 0.0 { target_radius / max_r } else { 1.0 };

    let (e1, e2) = tangent_basis(base);
    let mut demos = Vec::new();
    for t in trajs {
        let dt = T::of(if t.len() >= 2 { t.sample_period()? } else { 0.1 });
        let mut points = Vec::with_capacity(t.len());
        for s in &t.states {
            let a = T::of((s[0] - center[0]) * gain);
            let b = T::of((s[1] - center[1]) * gain);
            let w = &e1 * a + &e2 * b;
            let u = TangentVector::new(base.clone(), w);
            points.push(spec.exp_map(base, &u)?);
        }
        demos.push(Demonstration::from_points(&spec, dt, points)?);
    }
    shift_to_common_goal(&demos)
}

// ---- goal alignment -----------------------------------------------------------

/// Move every demonstration so all of them end at the same goal (the Karcher
/// mean of the individual endpoints). Each trajectory is rigidly carried
/// along the goal-correction geodesic: log-offsets from the old goal are
/// parallel-transported to the new goal and re-exponentiated, which reduces
/// to an additive shift on Euclidean blocks.
pub fn shift_to_common_goal<T: Real>(
    demos: &[Demonstration<T>],
) -> Result<Vec<Demonstration<T>>> {
    if demos.is_empty() {
        return Err(Error::EmptyInput);
    }
    let spec = demos[0].spec.clone();
    let goals: Vec<ManifoldPoint<T>> = demos.iter().map(|d| d.goal().clone()).collect();
    for a in &goals {
        for b in &goals {
            for blk in spec.blocks() {
                if blk.is_sphere {
                    let xa = a.coords.rows(blk.offset, blk.len).into_owned();
                    let xb = b.coords.rows(blk.offset, blk.len).into_owned();
                    if crate::manifold::sphere::geodesic_distance(&xa, &xb)
                        > T::of(std::f64::consts::FRAC_PI_2)
                    {
                        return Err(Error::GoalsTooFarApart);
                    }
                }
            }
        }
    }
    let goal = karcher_mean(&spec, &goals)?;

    let mut out = Vec::with_capacity(demos.len());
    for d in demos {
        let old_goal = d.goal().clone();
        let mut points = Vec::with_capacity(d.len());
        for p in &d.points {
            let offset = spec.log_map(&old_goal, p)?;
            let moved = spec.parallel_transport(&old_goal, &goal, &offset)?;
            points.push(spec.exp_map(&goal, &moved)?);
        }
        // the endpoint maps to Exp_goal(transport of 0) = goal exactly
        *points.last_mut().unwrap() = goal.clone();
        out.push(Demonstration::from_points(&spec, d.dt, points)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let traj = RawTrajectory {
            times: vec![0.0, 0.1],
            states: vec![
                DVector::from_row_slice(&[0.1, -2.5e-7]),
                DVector::from_row_slice(&[1.0 / 3.0, 7.00000001]),
            ],
        };
        let text = format_csv(&traj);
        let back = parse_csv(&text).unwrap();
        assert_eq!(traj, back);
    }

    #[test]
    fn empty_and_malformed_csv_errors() {
        assert!(matches!(parse_csv(""), Err(Error::EmptyInput)));
        let bad = "t,x0\n0.0,1.0\n0.0,2.0\n";
        match parse_csv(bad) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error naming row 3, got {other:?}"),
        }
        let nonnum = "t,x0\n0.0,abc\n";
        assert!(matches!(parse_csv(nonnum), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn radial_segment_maps_to_great_circle() {
        // a straight planar segment through the disk center maps onto a great
        // circle: all image points stay coplanar with the origin
        let n = 20;
        let traj = RawTrajectory {
            times: (0..n).map(|i| i as f64 * 0.1).collect(),
            states: (0..n)
                .map(|i| DVector::from_row_slice(&[i as f64 / (n - 1) as f64 - 0.5, 0.0]))
                .collect(),
        };
        let base = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let demos = project_letters_to_sphere::<f64>(&[traj], &base, 0.5).unwrap();
        let d = &demos[0];
        // normal of the plane spanned by the first two image points
        let a = &d.points[0].coords;
        let b = &d.points[n / 2].coords;
        let normal = DVector::from_row_slice(&[
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]);
        let normal = normal.normalize();
        for p in &d.points {
            assert!(normal.dot(&p.coords).abs() < 1e-9, "point off great circle");
        }
    }

    #[test]
    fn zero_length_trajectory_at_center_maps_to_base() {
        let traj = RawTrajectory {
            times: vec![0.0],
            states: vec![DVector::from_row_slice(&[0.3, -0.2])],
        };
        let base = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let demos = project_letters_to_sphere::<f64>(&[traj], &base, 0.5).unwrap();
        assert!((demos[0].points[0].coords.clone() - &base.coords).norm() < 1e-12);
    }

    #[test]
    fn projection_satisfies_construction_identity() {
        let trajs = generate_synthetic_letters(LetterShape::SLike, 3, 0.02, &mut ChaCha8Rng::seed_from_u64(5));
        let base = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let demos = project_letters_to_sphere::<f64>(&trajs, &base, 0.32).unwrap();
        for d in &demos {
            d.validate().unwrap();
        }
        // all demos share one goal
        let g0 = demos[0].goal().coords.clone();
        for d in &demos {
            assert!((d.goal().coords.clone() - &g0).norm() < 1e-9);
        }
    }

    #[test]
    fn aligned_demos_are_unchanged_by_shift() {
        let spec = ManifoldSpec::sphere(2);
        let base = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let mk = |offs: &[f64]| {
            let points = offs
                .iter()
                .map(|o| {
                    let u = TangentVector::new(
                        base.clone(),
                        DVector::from_row_slice(&[*o, 0.1 * o, 0.0]),
                    );
                    spec.exp_map(&base, &u).unwrap()
                })
                .collect();
            Demonstration::from_points(&spec, 0.1, points).unwrap()
        };
        let demos = vec![mk(&[0.4, 0.2, 0.0]), mk(&[-0.3, -0.1, 0.0])];
        let shifted = shift_to_common_goal(&demos).unwrap();
        for (a, b) in demos.iter().zip(&shifted) {
            for (pa, pb) in a.points.iter().zip(&b.points) {
                assert!((pa.coords.clone() - &pb.coords).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn euclidean_shift_is_additive() {
        let spec = ManifoldSpec::euclidean(2);
        let mk = |c: f64| {
            let points = (0..5)
                .map(|i| ManifoldPoint::from_slice(&[i as f64 + c, 2.0 * i as f64 - c]))
                .collect();
            Demonstration::from_points(&spec, 0.1, points).unwrap()
        };
        let demos = vec![mk(0.0), mk(0.7)];
        let shifted = shift_to_common_goal(&demos).unwrap();
        let g = shifted[0].goal().coords.clone();
        assert!((shifted[1].goal().coords.clone() - &g).norm() < 1e-12);
        // internal displacements unchanged
        for (orig, moved) in demos.iter().zip(&shifted) {
            for i in 0..orig.len() - 1 {
                let do_ = &orig.points[i + 1].coords - &orig.points[i].coords;
                let dm = &moved.points[i + 1].coords - &moved.points[i].coords;
                assert!((do_ - dm).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn sphere_shift_keeps_shape_within_one_percent() {
        let spec = ManifoldSpec::sphere(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let anchor: ManifoldPoint<f64> = spec.sample_uniform(&mut rng);
        let mk = |rng: &mut ChaCha8Rng, tilt: f64| {
            let dir = DVector::from_fn(4, |_, _| rng.gen::<f64>() - 0.5);
            let dir = spec.project_to_tangent(&anchor, &dir).vec.normalize();
            let points: Vec<ManifoldPoint<f64>> = (0..30)
                .map(|i| {
                    let s = 0.8 * (1.0 - i as f64 / 29.0);
                    let wiggle = (3.0 * s).sin() * 0.1;
                    let mut w = &dir * s;
                    w += spec
                        .project_to_tangent(
                            &anchor,
                            &DVector::from_fn(4, |j, _| ((j as f64) + s).sin() * wiggle),
                        )
                        .vec;
                    // tilt the endpoint so goals differ by ~0.1 rad across demos
                    w += &dir * (tilt * (i as f64 / 29.0));
                    spec.exp_map(&anchor, &TangentVector::new(anchor.clone(), w))
                        .unwrap()
                })
                .collect();
            Demonstration::from_points(&spec, 0.1, points).unwrap()
        };
        let demos = vec![mk(&mut rng, 0.0), mk(&mut rng, 0.1)];
        let shifted = shift_to_common_goal(&demos).unwrap();
        let g = shifted[0].goal().coords.clone();
        assert!((shifted[1].goal().coords.clone() - &g).norm() < 1e-9);
        for (orig, moved) in demos.iter().zip(&shifted) {
            for i in 0..orig.len() - 1 {
                let before = spec.distance(&orig.points[i], &orig.points[i + 1]);
                let after = spec.distance(&moved.points[i], &moved.points[i + 1]);
                if before > 1e-6 {
                    assert!(
                        ((after - before) / before).abs() <= 0.01,
                        "consecutive distance distorted by more than 1%"
                    );
                }
            }
        }
    }

    #[test]
    fn demo_container_roundtrip() {
        let trajs = generate_synthetic_letters(LetterShape::WLike, 2, 0.01, &mut ChaCha8Rng::seed_from_u64(1));
        let base = ManifoldPoint::from_slice(&[0.0, 0.0, 1.0]);
        let demos = project_letters_to_sphere::<f64>(&trajs, &base, 0.32).unwrap();
        let dir = std::env::temp_dir().join("rsds_demo_roundtrip_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("demos.json");
        save_demos(&demos, &path).unwrap();
        let back: Vec<Demonstration<f64>> = load_demos(&path).unwrap();
        assert_eq!(back.len(), demos.len());
        for (a, b) in demos.iter().zip(&back) {
            assert_eq!(a.len(), b.len());
            for i in 0..a.len() {
                assert_eq!(a.points[i].coords, b.points[i].coords, "bit-exact points");
                assert_eq!(a.velocities[i], b.velocities[i], "bit-exact velocities");
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
