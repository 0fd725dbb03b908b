//! Command implementations. Every output embeds the full run configuration:
//! JSON outputs carry a `run_config` field, CSVs start with a `# config=`
//! comment line. All numbers in CSVs use 17 significant digits.

use std::path::PathBuf;

use clap::{ArgMatches, Args};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use rsds_core::checkpoint::{atomic_write, Checkpoint, ModelKind, TrainingMeta};
use rsds_core::data::{
    self, generate_synthetic_letters, lowpass_filter, project_letters_to_sphere,
    shift_to_common_goal, Demonstration, LetterShape, RawTrajectory,
};
use rsds_core::eval::{
    reproduction_dtwd, stability_sweep, velocity_mse, BaselineModel, MetricsReport, SweepConfig,
};
use rsds_core::manifold::{ManifoldPoint, ManifoldSpec};
use rsds_core::model::{
    self, RolloutOptions, RsdsModel, TrainOptions, TrainVars,
};
use rsds_core::netfield::{ScalingNet, VectorFieldNet, DEFAULT_RBF_CENTERS};
use rsds_core::odeint::{IntegrationConfig, Solver};
use rsds_core::{Error, Result};

fn parse_point(s: &str) -> Result<ManifoldPoint<f64>> {
    let coords: std::result::Result<Vec<f64>, _> =
        s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    match coords {
        Ok(c) if !c.is_empty() => Ok(ManifoldPoint::new(DVector::from_vec(c))),
        _ => Err(Error::InvalidConfig(format!("cannot parse point {s:?}"))),
    }
}

fn config_json<A: Serialize>(args: &A) -> serde_json::Value {
    serde_json::to_value(args).expect("serializable args")
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

// ---------------------------------------------------------------- preprocess

#[derive(Args, Serialize)]
pub struct PreprocessArgs {
    /// CSV file or directory of CSVs (header `t,x0,x1,...`).
    #[arg(long, conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Synthetic letter instead of files: s | w | p.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, default_value_t = 3)]
    pub n_demos: usize,
    /// Waypoint jitter for synthetic letters.
    #[arg(long, default_value_t = 0.03)]
    pub noise: f64,
    /// Low-pass cutoff in Hz; 0 disables filtering.
    #[arg(long, default_value_t = 2.0)]
    pub cutoff: f64,
    /// Tangent base point for the S^2 letter projection.
    #[arg(long, default_value = "0,0,1")]
    pub base: String,
    /// Letter disk radius = pi/2 * scale.
    #[arg(long, default_value_t = 0.32)]
    pub scale: f64,
    /// Target manifold: s2 (planar letters) or pose (R^3 x S^3 states).
    #[arg(long, default_value = "s2")]
    pub manifold: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let mut trajs: Vec<RawTrajectory> = if let Some(shape) = &args.synthetic {
        let shape = LetterShape::parse(shape)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown synthetic shape {shape:?}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        generate_synthetic_letters(shape, args.n_demos, args.noise, &mut rng)
    } else if let Some(input) = &args.input {
        data::load_trajectories(input)?
    } else {
        return Err(Error::InvalidConfig(
            "either --input or --synthetic is required".into(),
        ));
    };

    if args.cutoff > 0.0 {
        trajs = trajs
            .iter()
            .map(|t| lowpass_filter(t, args.cutoff))
            .collect::<Result<Vec<_>>>()?;
    }

    let demos: Vec<Demonstration<f64>> = match args.manifold.as_str() {
        "s2" => {
            let base = parse_point(&args.base)?;
            project_letters_to_sphere(&trajs, &base, args.scale)?
        }
        "pose" => {
            let spec = ManifoldSpec::pose();
            let mut demos = Vec::new();
            for mut t in trajs {
                t.normalize_quaternion_blocks(&spec)?;
                let dt = t.sample_period()?;
                let points = t
                    .states
                    .iter()
                    .map(|s| {
                        let p = ManifoldPoint::new(s.clone());
                        spec.check_point(&p).map(|_| p)
                    })
                    .collect::<Result<Vec<_>>>()?;
                demos.push(Demonstration::from_points(&spec, dt, points)?);
            }
            shift_to_common_goal(&demos)?
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown manifold {other:?} (expected s2 or pose)"
            )))
        }
    };

    for d in &demos {
        d.validate()?;
    }
    data::save_demos_with_config(&demos, &args.output, Some(config_json(&args)))?;

    let goal = demos[0].goal();
    println!(
        "wrote {} demos (lengths: {:?}) to {}",
        demos.len(),
        demos.iter().map(|d| d.len()).collect::<Vec<_>>(),
        args.output.display()
    );
    println!(
        "goal: [{}]",
        goal.coords
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args, Serialize, Clone)]
pub struct TrainArgs {
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// rsds (manifold-aware) or euclidean (ambient baseline).
    #[arg(long, default_value = "rsds")]
    pub model: String,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub lr_decay_epoch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr_decay_factor: f64,
    /// Hidden width; defaults to 32 on S^2-sized states and 16 on pose states.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub charts: usize,
    #[arg(long, default_value_t = 1.0 / 32.0)]
    pub step_size: f64,
    #[arg(long, default_value_t = DEFAULT_RBF_CENTERS)]
    pub rbf_centers: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint every N epochs so interruptions keep a valid file.
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: usize,
    /// JSON file with default overrides (precedence: defaults < file < flags).
    #[arg(long)]
    pub config: Option<PathBuf>,
}

/// Merge precedence for numeric hyperparameters: defaults < config file <
/// explicitly passed flags.
fn apply_config_file(args: &mut TrainArgs, matches: &ArgMatches) -> Result<()> {
    let Some(path) = &args.config else {
        return Ok(());
    };
    let text = std::fs::read_to_string(path)?;
    let file: serde_json::Value = serde_json::from_str(&text)?;
    let sub = matches
        .subcommand_matches("train")
        .expect("train subcommand");
    let from_cli = |name: &str| {
        sub.value_source(name)
            .map(|s| s == clap::parser::ValueSource::CommandLine)
            .unwrap_or(false)
    };
    macro_rules! merge {
        ($field:ident, $key:literal, $ty:ty, $as:ident) => {
            if !from_cli($key) {
                if let Some(v) = file.get($key).and_then(|v| v.$as()) {
                    args.$field = v as $ty;
                }
            }
        };
    }
    merge!(epochs, "epochs", usize, as_u64);
    merge!(lr, "lr", f64, as_f64);
    merge!(lr_decay_epoch, "lr_decay_epoch", usize, as_u64);
    merge!(lr_decay_factor, "lr_decay_factor", f64, as_f64);
    merge!(charts, "charts", usize, as_u64);
    merge!(step_size, "step_size", f64, as_f64);
    merge!(rbf_centers, "rbf_centers", usize, as_u64);
    merge!(seed, "seed", u64, as_u64);
    if !from_cli("hidden") {
        if let Some(v) = file.get("hidden").and_then(|v| v.as_u64()) {
            args.hidden = Some(v as usize);
        }
    }
    Ok(())
}

pub fn train(mut args: TrainArgs, matches: &ArgMatches) -> Result<()> {
    apply_config_file(&mut args, matches)?;
    let demos: Vec<Demonstration<f64>> = data::load_demos(&args.demos)?;
    let spec = demos[0].spec.clone();
    let hidden = args
        .hidden
        .unwrap_or(if spec.ambient_dim() <= 3 { 32 } else { 16 });
    let cfg = IntegrationConfig {
        step_size: args.step_size,
        num_charts: args.charts,
        t_start: 0.0,
        t_end: 1.0,
        solver: Solver::Euler,
    };
    cfg.validate()?;
    let opts = TrainOptions {
        epochs: args.epochs,
        lr: args.lr,
        lr_decay_epoch: args.lr_decay_epoch,
        lr_decay_factor: args.lr_decay_factor,
        vars: TrainVars::Both,
    };
    std::fs::create_dir_all(&args.output_dir)?;
    let ckpt_path = args.output_dir.join("checkpoint.json");
    let loss_path = args.output_dir.join("loss.csv");
    let run_config = config_json(&args);

    let demo_dt = demos[0].dt;
    let demo_duration = demos
        .iter()
        .map(|d| d.duration())
        .fold(0.0f64, f64::max);
    let meta = |epochs_done: usize, final_loss: Option<f64>| TrainingMeta {
        epochs: epochs_done,
        final_loss,
        seed: Some(args.seed),
        demo_dt: Some(demo_dt),
        demo_duration: Some(demo_duration),
        run_config: Some(run_config.clone()),
    };

    let mut loss_rows: Vec<String> = Vec::with_capacity(args.epochs);

    let history = match args.model.as_str() {
        "rsds" => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let field = VectorFieldNet::identity_init(&spec, hidden, &mut rng);
            let points: Vec<ManifoldPoint<f64>> = demos
                .iter()
                .flat_map(|d| d.points.iter().cloned())
                .collect();
            let scaling =
                ScalingNet::init_from_points(&spec, &points, args.rbf_centers, &mut rng)?;
            let mut m = RsdsModel {
                spec: spec.clone(),
                field,
                scaling,
                goal: demos[0].goal().clone(),
                cfg,
            };
            let every = args.checkpoint_every.max(1);
            let result = model::train(&mut m, &demos, &opts, |epoch, loss, model| {
                loss_rows.push(format!("{epoch},{}", fmt17(loss)));
                if (epoch + 1) % every == 0 {
                    let ck = Checkpoint::from_model(model, ModelKind::Rsds, meta(epoch + 1, Some(loss)));
                    ck.save(&ckpt_path).ok();
                }
            });
            // keep the last good checkpoint even when training aborts
            let final_loss = loss_rows
                .last()
                .and_then(|r| r.split(',').nth(1))
                .and_then(|v| v.parse::<f64>().ok());
            let ck = Checkpoint::from_model(&m, ModelKind::Rsds, meta(loss_rows.len(), final_loss));
            ck.save(&ckpt_path)?;
            result?
        }
        "euclidean" => {
            let hyper = rsds_core::eval::BaselineHyper {
                hidden,
                rbf_centers: args.rbf_centers,
                train: opts,
                cfg,
                seed: args.seed,
            };
            let (baseline, history) = rsds_core::eval::train_baseline(&demos, false, &hyper)?;
            for (epoch, loss) in history.iter().enumerate() {
                loss_rows.push(format!("{epoch},{}", fmt17(*loss)));
            }
            let mut ck = Checkpoint::from_model(
                &baseline.inner,
                ModelKind::EuclideanFlow,
                meta(history.len(), history.last().copied()),
            );
            ck.data_manifold = Some(spec.clone());
            ck.save(&ckpt_path)?;
            history
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown model {other:?} (expected rsds or euclidean)"
            )))
        }
    };

    let mut csv = format!("# config={}\nepoch,loss\n", run_config);
    csv.push_str(&loss_rows.join("\n"));
    csv.push('\n');
    atomic_write(&loss_path, csv.as_bytes())?;
    println!(
        "trained {} epochs, loss {} -> {}; checkpoint at {}",
        history.len(),
        history.first().map(|v| format!("{v:.6}")).unwrap_or_default(),
        history.last().map(|v| format!("{v:.6}")).unwrap_or_default(),
        ckpt_path.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub sweep_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub conv_tol: f64,
    /// Sweep rollout step; defaults to a fifth of the demo sampling period.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 4000)]
    pub max_steps: usize,
    /// Interpret the checkpoint as a baseline: euclidean | projected.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let demos: Vec<Demonstration<f64>> = data::load_demos(&args.demos)?;
    let sweep_cfg = SweepConfig {
        n: args.sweep_n,
        seed: args.seed,
        conv_tol: args.conv_tol,
        dt: args.dt.unwrap_or(demos[0].dt / 5.0),
        max_steps: args.max_steps,
        exclusion_radius: rsds_core::eval::CUT_LOCUS_EXCLUSION,
    };
    let run_config = config_json(&args);

    let report = match (ck.model_kind, args.baseline.as_deref()) {
        (ModelKind::Rsds, None) => {
            let model: RsdsModel<f64> = ck.to_model()?;
            let ev = model.eval()?;
            let predict = |x: &ManifoldPoint<f64>| Ok(ev.velocity(x)?.velocity.vec);
            let (mse, flagged) = velocity_mse(&predict, &demos)?;
            let dtwds: Vec<f64> = demos
                .iter()
                .map(|d| reproduction_dtwd(&ev, d, args.conv_tol, 3.0))
                .collect::<Result<Vec<_>>>()?;
            let sweep = stability_sweep(&ev, &sweep_cfg);
            build_report("rsds", mse, flagged, dtwds, &sweep, sweep_cfg, run_config)
        }
        (ModelKind::Rsds, Some(_)) => {
            return Err(Error::InvalidConfig(
                "--baseline only applies to euclidean_flow checkpoints".into(),
            ))
        }
        (ModelKind::EuclideanFlow, which) => {
            let projected = match which {
                None | Some("euclidean") => false,
                Some("projected") => true,
                Some(other) => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown baseline {other:?} (expected euclidean or projected)"
                    )))
                }
            };
            let inner: RsdsModel<f64> = ck.to_model()?;
            let data_spec = ck.data_manifold.clone().ok_or_else(|| {
                Error::InvalidConfig("baseline checkpoint lacks data_manifold".into())
            })?;
            let baseline = BaselineModel {
                inner,
                data_spec,
                projected,
            };
            let predict = |x: &ManifoldPoint<f64>| baseline.velocity_eval(x);
            let (mse, flagged) = velocity_mse(&predict, &demos)?;
            let dtwds: Vec<f64> = demos
                .iter()
                .map(|d| baseline.reproduction_dtwd(d, &sweep_cfg))
                .collect::<Result<Vec<_>>>()?;
            let sweep = stability_sweep(&baseline, &sweep_cfg);
            let kind = if projected {
                "projected_euclidean_flow"
            } else {
                "euclidean_flow"
            };
            build_report(kind, mse, flagged, dtwds, &sweep, sweep_cfg, run_config)
        }
    };

    let json = serde_json::to_string_pretty(&report)?;
    atomic_write(&args.output, json.as_bytes())?;
    let csv_path = args.output.with_extension("csv");
    let csv = format!(
        "{}\n{}\n",
        MetricsReport::csv_header(),
        report.to_csv_row()
    );
    atomic_write(&csv_path, csv.as_bytes())?;
    println!(
        "{}: mse {:.6}, dtwd mean {:.4}, success rate {:.4} ({}/{})",
        report.model_kind,
        report.velocity_mse,
        report.dtwd_mean,
        report.success_rate,
        report.n_converged,
        report.n_rollouts
    );
    Ok(())
}

fn build_report(
    kind: &str,
    mse: f64,
    flagged: usize,
    dtwds: Vec<f64>,
    sweep: &rsds_core::eval::SweepResult,
    sweep_cfg: SweepConfig,
    run_config: serde_json::Value,
) -> MetricsReport {
    let dtwd_mean = dtwds.iter().sum::<f64>() / dtwds.len().max(1) as f64;
    MetricsReport {
        model_kind: kind.into(),
        velocity_mse: mse,
        mse_flagged_points: flagged,
        dtwd_per_demo: dtwds,
        dtwd_mean,
        success_rate: sweep.success_rate,
        n_rollouts: sweep.config.n,
        n_converged: sweep.n_converged,
        sweep_config: sweep_cfg,
        run_config,
    }
}

// ---------------------------------------------------------------- export-field

#[derive(Args, Serialize)]
pub struct ExportFieldArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of grid points (exact row count of the CSV).
    #[arg(long, default_value_t = 500)]
    pub grid_density: usize,
    #[arg(long)]
    pub output: PathBuf,
}

/// Spherical Fibonacci spiral on S^2; seeded uniform samples on other sphere
/// blocks; an even lattice per Euclidean block.
fn grid_points(spec: &ManifoldSpec, n: usize) -> Vec<ManifoldPoint<f64>> {
    let blocks = spec.blocks();
    let dim = spec.ambient_dim();
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1B0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut coords = DVector::zeros(dim);
        for b in &blocks {
            if b.is_sphere && b.len == 3 {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                coords[b.offset] = r * phi.cos();
                coords[b.offset + 1] = r * phi.sin();
                coords[b.offset + 2] = z;
            } else if b.is_sphere {
                let sub = ManifoldSpec::sphere(b.len - 1);
                let p: ManifoldPoint<f64> = sub.sample_uniform(&mut rng);
                coords.rows_mut(b.offset, b.len).copy_from(&p.coords);
            } else {
                for j in 0..b.len {
                    let frac = (i as f64 + 0.5) / n as f64;
                    // stride the axes so the lattice is not degenerate
                    let shifted = (frac * (j as f64 + 1.0)).fract();
                    coords[b.offset + j] = -1.0 + 2.0 * shifted;
                }
            }
        }
        out.push(ManifoldPoint::new(coords));
    }
    out
}

pub fn export_field(args: ExportFieldArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    if ck.model_kind != ModelKind::Rsds {
        return Err(Error::InvalidConfig(
            "field export needs an rsds checkpoint".into(),
        ));
    }
    let model: RsdsModel<f64> = ck.to_model()?;
    let ev = model.eval()?;
    let n = model.spec.ambient_dim();
    let mut csv = format!("# config={}\n", config_json(&args));
    let cols_p: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    let cols_v: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    csv.push_str(&format!(
        "{},{},scaling,lyapunov\n",
        cols_p.join(","),
        cols_v.join(",")
    ));
    for p in grid_points(&model.spec, args.grid_density) {
        let info = match ev.velocity(&p) {
            Ok(i) => i,
            Err(Error::CutLocus | Error::DegeneratePullback) => continue,
            Err(e) => return Err(e),
        };
        let row: Vec<String> = p
            .coords
            .iter()
            .chain(info.velocity.vec.iter())
            .map(|v| fmt17(*v))
            .collect();
        csv.push_str(&format!(
            "{},{},{}\n",
            row.join(","),
            fmt17(info.scaling),
            fmt17(info.lyapunov)
        ));
    }
    atomic_write(&args.output, csv.as_bytes())?;
    println!("wrote field grid to {}", args.output.display());
    Ok(())
}

// ---------------------------------------------------------------- rollout

#[derive(Args, Serialize)]
pub struct RolloutArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Start point, comma separated ambient coordinates.
    #[arg(long)]
    pub start: String,
    /// Step size; defaults to the demo sampling period stored at training.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 4000)]
    pub max_steps: usize,
    #[arg(long, default_value_t = 0.05)]
    pub conv_tol: f64,
    /// Step index at which to override the state.
    #[arg(long, requires = "perturb_to")]
    pub perturb_at: Option<usize>,
    /// State to jump to at --perturb-at.
    #[arg(long, requires = "perturb_at")]
    pub perturb_to: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
}

pub fn rollout(args: RolloutArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    if ck.model_kind != ModelKind::Rsds {
        return Err(Error::InvalidConfig(
            "rollout needs an rsds checkpoint (evaluate baselines via eval)".into(),
        ));
    }
    let model: RsdsModel<f64> = ck.to_model()?;
    let start = parse_point(&args.start)?;
    model.spec.check_point(&start)?;
    let perturbation = match (&args.perturb_at, &args.perturb_to) {
        (Some(at), Some(to)) => {
            let p = parse_point(to)?;
            model.spec.check_point(&p)?;
            Some((*at, p))
        }
        _ => None,
    };
    let dt = args
        .dt
        .or(ck.training.demo_dt)
        .unwrap_or(0.05);
    let opts = RolloutOptions {
        dt,
        max_steps: args.max_steps,
        conv_tol: args.conv_tol,
    };
    let r = model::rollout(&model, &start, &opts, perturbation)?;

    let n = model.spec.ambient_dim();
    let mut csv = format!("# config={}\n", config_json(&args));
    let cols_p: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
    let cols_v: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    csv.push_str(&format!(
        "t,{},{},lyapunov\n",
        cols_p.join(","),
        cols_v.join(",")
    ));
    for s in &r.steps {
        let cells: Vec<String> = std::iter::once(s.t)
            .chain(s.point.iter().copied())
            .chain(s.velocity.iter().copied())
            .chain(std::iter::once(s.lyapunov))
            .map(fmt17)
            .collect();
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    atomic_write(&args.output, csv.as_bytes())?;
    println!(
        "rollout: {} steps, converged = {}, final distance = {:.6}{}",
        r.steps.len(),
        r.converged,
        r.final_distance,
        r.failure
            .map(|f| format!(" (failure: {f})"))
            .unwrap_or_default()
    );
    Ok(())
}
