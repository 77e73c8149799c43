//! Subcommands of the `physmocap` tool.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{debug, info, warn};
use nalgebra::{DVector, Vector3};
use physmocap::clips::{self, WalkParams};
use physmocap::dynamics::DynState;
use physmocap::estimator::{Estimator, MotionStatus, Networks, DEFAULT_ACC_SCALE, X_LAYOUT};
use physmocap::imu::{
    calibrate_tpose, oracle_sequence, synthesize_contact_labels, synthesize_gt_velocity, synthesize_imu, Calibration,
    RawImuFrame, DEFAULT_CONTACT_SPEED, DEFAULT_SMOOTHING_SPAN,
};
use physmocap::io::{read_sequence, write_sequence, SeqHeader, SeqKind, SequenceReader, SequenceWriter, DEFAULT_FPS};
use physmocap::metrics::{evaluate, LatencyStats, MetricConfig, ZmpMode};
use physmocap::optimizer::{determine_contacts, Optimizer, OptimizerConfig};
use physmocap::skeleton::{Model, ModelConfig};
use physmocap::weights;
use serde::{Deserialize, Serialize};

pub const FPS: f64 = DEFAULT_FPS as f64;
/// Frame budget at 60 fps, ms.
pub const DEADLINE_MS: f64 = 1000.0 / FPS;
/// Environment variable holding the log filter.
pub const LOG_ENV: &str = "PHYSMOCAP_LOG";

/// Failure classes mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) | CliError::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl From<physmocap::Error> for CliError {
    fn from(e: physmocap::Error) -> Self {
        use physmocap::Error as E;
        match e {
            E::Io { .. }
            | E::IoBare(_)
            | E::Format(_)
            | E::Weights(_)
            | E::InvalidConfig(_)
            | E::InvalidModel(_)
            | E::InvalidTree(_)
            | E::Shape { .. }
            | E::LengthMismatch { .. }
            | E::TooShort { .. }
            | E::CalibrationUnstable(_) => CliError::Input(e.into()),
            _ => CliError::Runtime(e.into()),
        }
    }
}

fn input_err(msg: impl std::fmt::Display) -> CliError {
    CliError::Input(anyhow::anyhow!("{msg}"))
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Input(anyhow::anyhow!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "physmocap", version, about = "Physics-aware motion capture from six IMUs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate sensor-to-bone offsets from a raw T-pose recording.
    Calibrate(CalibrateArgs),
    /// Track motion from IMU frames.
    Run(RunArgs),
    /// Compare a tracked motion with ground truth.
    Eval(EvalArgs),
    /// Produce IMU, velocity and contact files from a motion.
    Synthesize(SynthesizeArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model config (TOML); the bundled 24-joint model by default.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

impl ModelArgs {
    pub fn load(&self) -> CliResult<Model<f64>> {
        Ok(match &self.model {
            Some(p) => ModelConfig::load(p)?.build()?,
            None => Model::default_smpl(),
        })
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Raw recording: frame 0 holds the alignment sample (sensor 0 laid on
    /// the world axes), the remaining frames the still T-pose.
    #[arg(long)]
    pub raw: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// IMU input file, or `-` for standard input.
    #[arg(long)]
    pub imu: String,
    /// With a calibration the input holds raw samples.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Weight file.
    #[arg(long, conflicts_with_all = ["random_weights", "oracle"])]
    pub weights: Option<PathBuf>,
    /// Use random networks from this seed instead of a weight file.
    #[arg(long)]
    pub random_weights: Option<u64>,
    /// Hidden width of the random networks.
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    /// Replace the estimator by ground-truth kinematics from this motion file.
    #[arg(long, conflicts_with = "random_weights")]
    pub oracle: Option<PathBuf>,
    /// Optimizer config (TOML).
    #[arg(long)]
    pub optimizer: Option<PathBuf>,
    /// Tracked motion output.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame records (JSON lines): timing, solver status, τ and λ.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Per-frame foot contact probabilities used by the optimizer.
    #[arg(long)]
    pub out_contacts: Option<PathBuf>,
    /// Pace processing to 60 fps.
    #[arg(long)]
    pub realtime: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ZmpArg {
    Full,
    ComOnly,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Tracked motion.
    #[arg(long)]
    pub est: PathBuf,
    /// Ground-truth motion.
    #[arg(long)]
    pub gt: PathBuf,
    /// Contact probabilities of the tracked motion; both feet count as
    /// probable contacts when absent.
    #[arg(long)]
    pub contacts: Option<PathBuf>,
    /// Records written by `run`, for latency statistics.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub zmp: ZmpArg,
    /// Distance between samples of the translation curve, m.
    #[arg(long, default_value_t = 1.0)]
    pub bin: f64,
    /// Report output (JSON).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-frame CSV output.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClipArg {
    Standing,
    Walking,
    SitStand,
    LongSit,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Source motion file.
    #[arg(long, required_unless_present = "clip", conflicts_with = "clip")]
    pub motion: Option<PathBuf>,
    /// Generate a procedural clip instead.
    #[arg(long, value_enum)]
    pub clip: Option<ClipArg>,
    /// Walking distance, m.
    #[arg(long, default_value_t = 20.0)]
    pub distance: f64,
    /// Length of standing and sitting clips, frames.
    #[arg(long, default_value_t = 600)]
    pub frames: usize,
    /// Acceleration smoothing span, frames.
    #[arg(long, default_value_t = DEFAULT_SMOOTHING_SPAN)]
    pub span: usize,
    /// Foot speed below which a contact is labelled, m/s.
    #[arg(long, default_value_t = DEFAULT_CONTACT_SPEED)]
    pub contact_speed: f64,
    #[arg(long)]
    pub out_imu: PathBuf,
    #[arg(long)]
    pub out_velocity: Option<PathBuf>,
    #[arg(long)]
    pub out_contacts: Option<PathBuf>,
    /// Also write the source motion (useful with `--clip`).
    #[arg(long)]
    pub out_motion: Option<PathBuf>,
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Calibrate(a) => calibrate(&a).map(|_| ()),
        Command::Run(a) => {
            let summary = run(&a)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            Ok(())
        }
        Command::Eval(a) => eval(&a).map(|_| ()),
        Command::Synthesize(a) => synthesize(&a).map(|_| ()),
    }
}

// ---------------------------------------------------------------------------

pub fn calibrate(a: &CalibrateArgs) -> CliResult<Calibration> {
    let seq = read_sequence(&a.raw, SeqKind::Raw)?;
    let frames = seq
        .frames
        .iter()
        .map(RawImuFrame::from_vector)
        .collect::<physmocap::Result<Vec<_>>>()?;
    let (first, rest) = frames
        .split_first()
        .ok_or_else(|| input_err(format!("{}: no alignment frame", a.raw.display())))?;
    let calib = calibrate_tpose(&first.orientations[0], rest, FPS)?;
    std::fs::write(&a.out, calib.to_toml()).map_err(|e| io_err(&a.out, e))?;
    info!("calibrated from {} T-pose frames", rest.len());
    Ok(calib)
}

// ---------------------------------------------------------------------------

/// One line of the `run` records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    /// Estimation plus optimization time, ms.
    pub latency_ms: f64,
    /// The frame was skipped and the previous state held.
    pub held: bool,
    pub qp_status: Option<String>,
    pub qp_iterations: usize,
    pub contact_points: usize,
    pub root_residual: [f64; 3],
    pub vertical_force: f64,
    pub eom_residual: f64,
    pub tau: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub frames: usize,
    pub warnings: usize,
    pub held_frames: usize,
    pub deadline_misses: usize,
    pub latency: LatencyStats,
}

enum Source {
    Estimator(Box<Estimator<f64>>, physmocap::estimator::EstimatorState<f64>),
    Oracle(Vec<MotionStatus<f64>>),
}

fn load_networks(a: &RunArgs, model: &Model<f64>) -> CliResult<Networks<f64>> {
    let nets = match (&a.weights, a.random_weights) {
        (Some(p), _) => weights::load::<f64>(p)?,
        (None, Some(seed)) => weights::random_networks::<f64>(model.tree.num_joints(), a.hidden, seed),
        (None, None) => return Err(input_err("one of --weights, --random-weights or --oracle is required")),
    };
    if nets.num_joints() != model.tree.num_joints() {
        return Err(input_err(format!(
            "weights are for {} joints, the model has {}",
            nets.num_joints(),
            model.tree.num_joints()
        )));
    }
    if nets.meta.x_layout != X_LAYOUT {
        return Err(input_err(format!("weights expect input layout `{}`", nets.meta.x_layout)));
    }
    Ok(nets)
}

fn open_input(spec: &str) -> CliResult<Box<dyn Read>> {
    if spec == "-" {
        return Ok(Box::new(io::stdin().lock()));
    }
    let p = Path::new(spec);
    let f = File::open(p).map_err(|e| io_err(p, e))?;
    Ok(Box::new(BufReader::new(f)))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

pub fn run(a: &RunArgs) -> CliResult<RunSummary> {
    let model = a.model.load()?;
    let cfg = match &a.optimizer {
        Some(p) => OptimizerConfig::load(p)?,
        None => OptimizerConfig::default(),
    };
    let optimizer = Optimizer::new(model.clone(), cfg)?;
    let calibration = match &a.calibration {
        Some(p) => Some(Calibration::from_toml(&std::fs::read_to_string(p).map_err(|e| io_err(p, e))?)?),
        None => None,
    };

    let (mut source, q0, acc_scale) = match &a.oracle {
        Some(path) => {
            let gt = read_sequence(path, SeqKind::Motion)?.frames;
            let q0 = gt.first().cloned().unwrap_or_else(|| model.standing_tpose());
            let statuses = if gt.len() >= 2 { oracle_sequence(&model.tree, &gt, FPS)? } else { Vec::new() };
            (Source::Oracle(statuses), q0, DEFAULT_ACC_SCALE)
        }
        None => {
            let nets = load_networks(a, &model)?;
            let acc_scale = nets.meta.acc_scale;
            let est = Estimator::new(nets)?;
            let tpose = model.standing_tpose();
            let state = est.init_state_from_pose(&model.tree, &tpose)?;
            (Source::Estimator(Box::new(est), state), tpose, acc_scale)
        }
    };

    let mut reader = SequenceReader::new(open_input(&a.imu)?).map_err(|e| input_err(format!("{}: {e}", a.imu)))?;
    let expected = if calibration.is_some() { SeqKind::Raw } else { SeqKind::Imu };
    if reader.header().kind != expected {
        return Err(input_err(format!(
            "{}: expected a {} file, found {}",
            a.imu,
            expected.name(),
            reader.header().kind.name()
        )));
    }
    let mut motion = SequenceWriter::new(create(&a.out)?, SeqHeader::new(SeqKind::Motion, model.tree.num_joints()))?;
    let mut contacts_out = match &a.out_contacts {
        Some(p) => Some(SequenceWriter::new(create(p)?, SeqHeader::new(SeqKind::Contact, model.tree.num_joints()))?),
        None => None,
    };
    let mut records = match &a.records {
        Some(p) => Some(create(p)?),
        None => None,
    };

    let mut state = DynState::at_rest(q0);
    let mut last_c = [1.0, 1.0];
    let mut warnings = 0;
    let mut held = 0;
    let mut misses = 0;
    let mut latencies = Vec::new();
    let started = Instant::now();
    let mut t = 0;
    loop {
        let x = match reader.next_frame() {
            Ok(Some(x)) => x,
            Ok(None) => break,
            Err(e) => return Err(input_err(format!("{}: {e}", a.imu))),
        };
        if a.realtime {
            let due = Duration::from_secs_f64(t as f64 / FPS);
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let clock = Instant::now();
        let status = frame_status(&mut source, &calibration, acc_scale, &x, t);
        let outcome = match status {
            Ok(status) => {
                let res = optimizer.optimize_frame(&state, &status).map_err(|e| CliError::Runtime(e.into()))?;
                state = res.state();
                last_c = status.c;
                Some(res)
            }
            Err(msg) => {
                warn!("frame {t}: {msg}; holding the previous state");
                warnings += 1;
                held += 1;
                None
            }
        };
        let elapsed = clock.elapsed();
        let ms = elapsed.as_secs_f64() * 1e3;
        latencies.push(elapsed);
        if ms > DEADLINE_MS {
            misses += 1;
            debug!("frame {t}: {ms:.2} ms over the {DEADLINE_MS:.1} ms budget");
        }
        motion.write_frame(&state.q)?;
        if let Some(w) = contacts_out.as_mut() {
            w.write_frame(&DVector::from_vec(last_c.to_vec()))?;
        }
        if let Some(w) = records.as_mut() {
            let rec = match &outcome {
                Some(r) => FrameRecord {
                    frame: t,
                    latency_ms: ms,
                    held: false,
                    qp_status: Some(format!("{:?}", r.qp_status)),
                    qp_iterations: r.qp_iterations,
                    contact_points: r.contacts.num_points(),
                    root_residual: r.root_residual().into(),
                    vertical_force: r.vertical_force(),
                    eom_residual: r.eom_residual,
                    tau: r.tau.iter().copied().collect(),
                    lambda: r.lambda.iter().copied().collect(),
                },
                None => FrameRecord {
                    frame: t,
                    latency_ms: ms,
                    held: true,
                    qp_status: None,
                    qp_iterations: 0,
                    contact_points: 0,
                    root_residual: [0.0; 3],
                    vertical_force: 0.0,
                    eom_residual: 0.0,
                    tau: Vec::new(),
                    lambda: Vec::new(),
                },
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(w, "{line}").map_err(|e| io_err(a.records.as_deref().unwrap_or(Path::new("records")), e))?;
        }
        if let Some(r) = &outcome {
            debug!(
                "frame {t}: {ms:.2} ms, {} QP iterations, {} contact points",
                r.qp_iterations,
                r.contacts.num_points()
            );
        }
        t += 1;
    }
    if reader.partial_bytes() > 0 {
        warn!("{}: ignored {} bytes of an incomplete final frame", a.imu, reader.partial_bytes());
        warnings += 1;
    }
    let mut out = motion.finish()?;
    out.flush().map_err(|e| io_err(&a.out, e))?;
    if let Some(w) = contacts_out {
        w.finish()?.flush().map_err(|e| io_err(a.out_contacts.as_deref().unwrap_or(Path::new("contacts")), e))?;
    }
    if let Some(mut w) = records {
        w.flush().map_err(|e| io_err(a.records.as_deref().unwrap_or(Path::new("records")), e))?;
    }
    let latency = LatencyStats::from_durations(&latencies);
    info!(
        "{t} frames, mean {:.2} ms, p99 {:.2} ms, {misses} over budget, {warnings} warnings",
        latency.mean_ms, latency.p99_ms
    );
    Ok(RunSummary {
        frames: t,
        warnings,
        held_frames: held,
        deadline_misses: misses,
        latency,
    })
}

/// Motion status for frame `t`, or a reason to hold the previous state.
fn frame_status(
    source: &mut Source,
    calibration: &Option<Calibration>,
    acc_scale: f64,
    x: &DVector<f64>,
    t: usize,
) -> Result<MotionStatus<f64>, String> {
    if !x.iter().all(|v| v.is_finite()) {
        return Err("non-finite IMU sample".into());
    }
    let x = match calibration {
        Some(c) => {
            let raw = RawImuFrame::from_vector(x).map_err(|e| e.to_string())?;
            c.apply(&raw).to_input(acc_scale)
        }
        None => x.clone(),
    };
    match source {
        Source::Estimator(est, state) => est.step(state, &x).map(|o| o.status).map_err(|e| e.to_string()),
        Source::Oracle(s) => s.get(t).cloned().ok_or_else(|| format!("no oracle kinematics for frame {t}")),
    }
}

// ---------------------------------------------------------------------------

/// Contact points of every frame of `motion` under the optimizer's contact rule.
pub fn contact_points(model: &Model<f64>, motion: &[DVector<f64>], probs: Option<&[DVector<f64>]>) -> Vec<Vec<Vector3<f64>>> {
    let w = OptimizerConfig::default().weights;
    motion
        .iter()
        .enumerate()
        .map(|(t, q)| {
            let c = probs.and_then(|p| p.get(t)).map_or([1.0, 1.0], |c| [c[0], c[1]]);
            determine_contacts(model, q, c, &w).points
        })
        .collect()
}

pub fn eval(a: &EvalArgs) -> CliResult<physmocap::metrics::MetricReport> {
    let model = a.model.load()?;
    let est = read_sequence(&a.est, SeqKind::Motion)?.frames;
    let gt = read_sequence(&a.gt, SeqKind::Motion)?.frames;
    if est.len() != gt.len() {
        return Err(input_err(format!(
            "estimate {} has {} frames but ground truth {} has {}",
            a.est.display(),
            est.len(),
            a.gt.display(),
            gt.len()
        )));
    }
    let probs = match &a.contacts {
        Some(p) => Some(read_sequence(p, SeqKind::Contact)?.frames),
        None => None,
    };
    let contacts = contact_points(&model, &est, probs.as_deref());
    let latency = match &a.records {
        Some(p) => Some(read_latencies(p)?),
        None => None,
    };
    let cfg = MetricConfig {
        zmp_mode: match a.zmp {
            ZmpArg::Full => ZmpMode::Full,
            ZmpArg::ComOnly => ZmpMode::ComOnly,
        },
        translation_bin: a.bin,
        fps: FPS,
    };
    let (report, frames) = evaluate(&est, &gt, &model, &contacts, latency.as_deref(), &cfg)?;
    std::fs::write(&a.out, report.to_json()).map_err(|e| io_err(&a.out, e))?;
    if let Some(p) = &a.csv {
        std::fs::write(p, frames.to_csv()).map_err(|e| io_err(p, e))?;
    }
    Ok(report)
}

pub fn read_latencies(path: &Path) -> CliResult<Vec<Duration>> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let r: FrameRecord =
                serde_json::from_str(l).map_err(|e| input_err(format!("{}:{}: {e}", path.display(), i + 1)))?;
            Ok(Duration::from_secs_f64(r.latency_ms / 1e3))
        })
        .collect()
}

// ---------------------------------------------------------------------------

/// Written outputs of `synthesize`.
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub motion: Vec<DVector<f64>>,
    pub imu: Vec<DVector<f64>>,
    pub velocity: Vec<DVector<f64>>,
    pub contacts: Vec<DVector<f64>>,
}

pub fn synthesize(a: &SynthesizeArgs) -> CliResult<Synthesized> {
    let model = a.model.load()?;
    let motion = match (&a.motion, a.clip) {
        (Some(p), _) => read_sequence(p, SeqKind::Motion)?.frames,
        (None, Some(ClipArg::Standing)) => clips::standing(&model, a.frames),
        (None, Some(ClipArg::Walking)) => clips::walking(&model, a.distance, &WalkParams::default())?,
        (None, Some(ClipArg::SitStand)) => clips::sit_stand(&model, a.frames / 3, a.frames / 6),
        (None, Some(ClipArg::LongSit)) => clips::long_sit(&model, a.frames),
        (None, None) => return Err(input_err("one of --motion or --clip is required")),
    };
    let tree = &model.tree;
    let imu: Vec<DVector<f64>> = synthesize_imu(tree, &model.sensors, &motion, a.span, FPS)?
        .iter()
        .map(|f| f.to_input(DEFAULT_ACC_SCALE))
        .collect();
    let velocity = synthesize_gt_velocity(tree, &motion, FPS)?;
    let contacts: Vec<DVector<f64>> = synthesize_contact_labels(tree, &motion, FPS, a.contact_speed)?
        .iter()
        .map(|c| DVector::from_vec(c.to_vec()))
        .collect();
    let nj = tree.num_joints();
    write_sequence(&a.out_imu, SeqKind::Imu, nj, &imu)?;
    if let Some(p) = &a.out_velocity {
        write_sequence(p, SeqKind::Velocity, nj, &velocity)?;
    }
    if let Some(p) = &a.out_contacts {
        write_sequence(p, SeqKind::Contact, nj, &contacts)?;
    }
    if let Some(p) = &a.out_motion {
        write_sequence(p, SeqKind::Motion, nj, &motion)?;
    }
    info!("synthesized {} frames", motion.len());
    Ok(Synthesized {
        motion,
        imu,
        velocity,
        contacts,
    })
}
