//! End-to-end runs of the `physmocap` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DVector, Matrix3, Vector3};
use physmocap::clips;
use physmocap::imu::{Calibration, ImuFrame, RawImuFrame};
use physmocap::io::{read_sequence, write_sequence, write_sequence_to, SeqKind};
use physmocap::metrics::{evaluate, positional_error, MetricConfig, MetricReport};
use physmocap::rotation::euler_to_matrix;
use physmocap::skeleton::Model;
use physmocap_cli::{contact_points, FrameRecord, RunSummary};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_physmocap"));
    c.env("PHYSMOCAP_LOG", "warn");
    c
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Dir(TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
}

fn summary(out: &Output) -> RunSummary {
    serde_json::from_slice(&out.stdout).unwrap()
}

/// Synthesizes `clip` into `d` and returns the motion path and IMU path.
fn synth(d: &Dir, clip: &[&str]) -> (PathBuf, PathBuf) {
    let (m, x, c, v) = (d.path("gt.pmot"), d.path("x.pimu"), d.path("c.pcon"), d.path("v.pvel"));
    let mut args = vec!["synthesize"];
    args.extend_from_slice(clip);
    args.extend_from_slice(&["--out-motion", s(&m), "--out-imu", s(&x), "--out-contacts", s(&c), "--out-velocity", s(&v)]);
    run_ok(&args);
    (m, x)
}

#[test]
fn empty_input_exits_cleanly() {
    let d = Dir::new();
    let x = d.path("empty.pimu");
    write_sequence(&x, SeqKind::Imu, 24, &[]).unwrap();
    let out_path = d.path("out.pmot");
    let out = run_ok(&["run", "--imu", s(&x), "--random-weights", "3", "--out", s(&out_path)]);
    let sum = summary(&out);
    assert_eq!(sum.frames, 0);
    assert_eq!(sum.warnings, 0);
    assert!(read_sequence(&out_path, SeqKind::Motion).unwrap().frames.is_empty());
}

#[test]
fn truncated_final_frame_gives_one_warning() {
    let d = Dir::new();
    let (m, x) = synth(&d, &["--clip", "standing", "--frames", "30"]);
    let mut bytes = std::fs::read(&x).unwrap();
    bytes.extend_from_slice(&[0u8; 100]);
    std::fs::write(&x, bytes).unwrap();
    let out_path = d.path("out.pmot");
    let out = run_ok(&["run", "--imu", s(&x), "--oracle", s(&m), "--out", s(&out_path)]);
    let sum = summary(&out);
    assert_eq!(sum.frames, 30);
    assert_eq!(sum.warnings, 1);
    assert_eq!(read_sequence(&out_path, SeqKind::Motion).unwrap().frames.len(), 30);
}

#[test]
fn malformed_frame_is_skipped_and_state_held() {
    let d = Dir::new();
    let (m, x) = synth(&d, &["--clip", "standing", "--frames", "20"]);
    let mut frames = read_sequence(&x, SeqKind::Imu).unwrap().frames;
    frames[5][3] = f64::NAN;
    write_sequence(&x, SeqKind::Imu, 24, &frames).unwrap();
    let (out_path, rec) = (d.path("out.pmot"), d.path("rec.jsonl"));
    let out = run_ok(&["run", "--imu", s(&x), "--oracle", s(&m), "--out", s(&out_path), "--records", s(&rec)]);
    let sum = summary(&out);
    assert_eq!((sum.frames, sum.warnings, sum.held_frames), (20, 1, 1));
    let q = read_sequence(&out_path, SeqKind::Motion).unwrap().frames;
    assert_eq!(q[5], q[4]);
    let text = std::fs::read_to_string(&rec).unwrap();
    let records: Vec<FrameRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 20);
    assert!(records[5].held && !records[4].held);
}

#[test]
fn missing_ground_truth_names_the_path() {
    let d = Dir::new();
    let est = d.path("est.pmot");
    write_sequence(&est, SeqKind::Motion, 24, &clips::standing(&Model::default_smpl(), 4)).unwrap();
    let missing = d.path("nowhere/gt.pmot");
    let out = bin()
        .args(["eval", "--est", s(&est), "--gt", s(&missing), "--out", s(&d.path("r.json"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains(s(&missing)), "{err}");
}

#[test]
fn misaligned_lengths_name_both() {
    let d = Dir::new();
    let m = Model::default_smpl();
    let (a, b) = (d.path("a.pmot"), d.path("b.pmot"));
    write_sequence(&a, SeqKind::Motion, 24, &clips::standing(&m, 7)).unwrap();
    write_sequence(&b, SeqKind::Motion, 24, &clips::standing(&m, 9)).unwrap();
    let out = bin().args(["eval", "--est", s(&a), "--gt", s(&b), "--out", s(&d.path("r.json"))]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains('7') && err.contains('9'), "{err}");
}

#[test]
fn identical_motion_gives_zero_report() {
    let d = Dir::new();
    let (m, _) = synth(&d, &["--clip", "standing", "--frames", "40"]);
    let r = d.path("r.json");
    run_ok(&["eval", "--est", s(&m), "--gt", s(&m), "--out", s(&r)]);
    let report = MetricReport::from_json(&std::fs::read_to_string(&r).unwrap()).unwrap();
    assert_eq!(report.sip_error, 0.0);
    assert_eq!(report.angular_error, 0.0);
    assert_eq!(report.positional_error, 0.0);
    assert_eq!(report.relative_jitter, 0.0);
    assert_eq!(report.absolute_jitter, 0.0);
    assert_eq!(report.zmp_distance, 0.0);
    assert!(report.cumulative_translation_error.is_empty());
}

#[test]
fn eval_matches_library_and_walk_closes_the_loop() {
    let d = Dir::new();
    let (m, x) = synth(&d, &["--clip", "walking", "--distance", "4"]);
    let (est_path, con) = (d.path("est.pmot"), d.path("est.pcon"));
    run_ok(&["run", "--imu", s(&x), "--oracle", s(&m), "--out", s(&est_path), "--out-contacts", s(&con)]);
    let r = d.path("r.json");
    let csv = d.path("r.csv");
    run_ok(&["eval", "--est", s(&est_path), "--gt", s(&m), "--contacts", s(&con), "--out", s(&r), "--csv", s(&csv)]);

    let model = Model::default_smpl();
    let est = read_sequence(&est_path, SeqKind::Motion).unwrap().frames;
    let gt = read_sequence(&m, SeqKind::Motion).unwrap().frames;
    let probs = read_sequence(&con, SeqKind::Contact).unwrap().frames;
    let points = contact_points(&model, &est, Some(&probs));
    let (lib, frames) = evaluate(&est, &gt, &model, &points, None, &MetricConfig::default()).unwrap();
    assert_eq!(std::fs::read_to_string(&r).unwrap(), lib.to_json());
    assert_eq!(std::fs::read_to_string(&csv).unwrap(), frames.to_csv());
    let pe = positional_error(&est, &gt, &model.tree).unwrap();
    assert!(pe <= 2.0, "positional error {pe} cm");
}

#[test]
fn run_is_deterministic() {
    let d = Dir::new();
    let (m, x) = synth(&d, &["--clip", "sit-stand", "--frames", "90"]);
    let (a, b) = (d.path("a.pmot"), d.path("b.pmot"));
    run_ok(&["run", "--imu", s(&x), "--oracle", s(&m), "--out", s(&a)]);
    run_ok(&["run", "--imu", s(&x), "--oracle", s(&m), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn standard_input_streams_frames() {
    use std::io::Write;
    use std::process::Stdio;
    let d = Dir::new();
    let (m, x) = synth(&d, &["--clip", "standing", "--frames", "12"]);
    let out_path = d.path("out.pmot");
    let mut child = bin()
        .args(["run", "--imu", "-", "--oracle", s(&m), "--out", s(&out_path)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&std::fs::read(&x).unwrap()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    assert_eq!(summary(&out).frames, 12);
}

#[test]
fn weight_file_and_random_weights_run() {
    let d = Dir::new();
    let (_, x) = synth(&d, &["--clip", "standing", "--frames", "10"]);
    let w = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/assets/weights_h32.safetensors");
    let out = bin()
        .args(["run", "--imu", s(&x), "--weights", s(&w), "--out", s(&d.path("a.pmot"))])
        .output()
        .unwrap();
    // Untrained networks may drive the character anywhere; only a clean
    // success or a runtime failure is acceptable.
    assert!(matches!(out.status.code(), Some(0) | Some(2)), "{}", String::from_utf8_lossy(&out.stderr));
    let bad = d.path("bad.safetensors");
    std::fs::write(&bad, b"garbage").unwrap();
    let out = bin().args(["run", "--imu", s(&x), "--weights", s(&bad), "--out", s(&d.path("b.pmot"))]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synthesized_files_match_library_values() {
    let d = Dir::new();
    let (m, x) = synth(&d, &["--clip", "standing", "--frames", "20"]);
    let imu = read_sequence(&x, SeqKind::Imu).unwrap().frames;
    for f in &imu {
        assert!(f.rows(0, 18).iter().all(|&a| a == 0.0));
    }
    let args = physmocap_cli::SynthesizeArgs {
        model: physmocap_cli::ModelArgs { model: None },
        motion: Some(m.clone()),
        clip: None,
        distance: 0.0,
        frames: 0,
        span: physmocap::imu::DEFAULT_SMOOTHING_SPAN,
        contact_speed: physmocap::imu::DEFAULT_CONTACT_SPEED,
        out_imu: d.path("again.pimu"),
        out_velocity: None,
        out_contacts: None,
        out_motion: None,
    };
    let lib = physmocap_cli::synthesize(&args).unwrap();
    assert_eq!(lib.imu, imu);
    let bytes = write_sequence_to(Vec::new(), SeqKind::Imu, 24, &lib.imu).unwrap();
    assert_eq!(bytes, std::fs::read(&x).unwrap());
    let contacts = read_sequence(d.path("c.pcon"), SeqKind::Contact).unwrap().frames;
    assert_eq!(contacts, lib.contacts);
}

#[test]
fn calibrate_recovers_mounting() {
    let d = Dir::new();
    let mounting: [Matrix3<f64>; 6] = std::array::from_fn(|s| euler_to_matrix(&Vector3::new(0.3 * s as f64, -0.2, 0.1 * s as f64)));
    let alignment = euler_to_matrix(&Vector3::new(0.1, 1.2, -0.3));
    let truth = Calibration::new(&mounting, &alignment.transpose());
    let mut raw = vec![RawImuFrame {
        orientations: [alignment; 6],
        accelerations: [Vector3::zeros(); 6],
    }
    .to_vector()];
    raw.extend((0..90).map(|_| truth.unapply(&ImuFrame::<f64>::identity()).to_vector()));
    let raw_path = d.path("raw.praw");
    write_sequence(&raw_path, SeqKind::Raw, 24, &raw).unwrap();
    let toml = d.path("calib.toml");
    run_ok(&["calibrate", "--raw", s(&raw_path), "--out", s(&toml)]);
    let cal = Calibration::from_toml(&std::fs::read_to_string(&toml).unwrap()).unwrap();
    for (k, m) in mounting.iter().enumerate() {
        // raw files hold f32 values
        assert!((cal.sensor_to_bone::<f64>(k) - m).amax() < 1e-5);
    }

    // The calibrated raw stream tracks like the calibrated one.
    let (gt, x) = synth(&d, &["--clip", "standing", "--frames", "15"]);
    let frames: Vec<DVector<f64>> = read_sequence(&x, SeqKind::Imu)
        .unwrap()
        .frames
        .iter()
        .map(|f| truth.unapply(&ImuFrame::from_input(f, 30.0).unwrap()).to_vector())
        .collect();
    let rx = d.path("stream.praw");
    write_sequence(&rx, SeqKind::Raw, 24, &frames).unwrap();
    let out = run_ok(&[
        "run", "--imu", s(&rx), "--calibration", s(&toml), "--oracle", s(&gt), "--out", s(&d.path("o.pmot")),
    ]);
    assert_eq!(summary(&out).frames, 15);
    let raw_without_calibration = bin()
        .args(["run", "--imu", s(&rx), "--oracle", s(&gt), "--out", s(&d.path("p.pmot"))])
        .output()
        .unwrap();
    assert_eq!(raw_without_calibration.status.code(), Some(1));
}
