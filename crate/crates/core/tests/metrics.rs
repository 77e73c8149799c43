//! Metric examples and independent oracles.

mod common;

use std::time::Duration;

use common::{
    brute_force_zmp, com, foot_contacts, quat_angle_deg, square, straight_walk, tipping_motion, trajectory, FPS,
};
use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use physmocap::metrics::{
    absolute_jitter, angular_error, convex_hull, cumulative_translation_error, distance_to_hull, evaluate, jitter,
    positional_error, relative_jitter, sip_error, zmp_distance, zmp_trajectory, LatencyStats, MetricConfig,
    MetricReport, ZmpMode,
};
use physmocap::rotation::{euler_to_matrix, matrix_to_euler};
use physmocap::skeleton::{forward_kinematics, Model};
use physmocap::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn model() -> Model<f64> {
    Model::default_smpl()
}

fn random_pose(rng: &mut ChaCha8Rng, spread: f64) -> DVector<f64> {
    common::random_pose(&model(), rng, spread)
}

fn set_root_rotation(q: &mut DVector<f64>, r: &Matrix3<f64>) {
    let e = matrix_to_euler(r).angles;
    q.fixed_rows_mut::<3>(3).copy_from(&e);
}

fn root_rotation(q: &DVector<f64>) -> Matrix3<f64> {
    euler_to_matrix(&q.fixed_rows::<3>(3).into_owned())
}

// ---------------------------------------------------------------------------
// Orientation errors

#[test]
fn identical_sequences_score_zero() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seq: Vec<DVector<f64>> = (0..8).map(|_| random_pose(&mut rng, 0.3)).collect();
    let contacts: Vec<Vec<Vector3<f64>>> = seq.iter().map(|q| foot_contacts(&m, q)).collect();
    let (r, _) = evaluate(&seq, &seq, &m, &contacts, None, &MetricConfig::default()).unwrap();
    assert_eq!(r.sip_error, 0.0);
    assert_eq!(r.angular_error, 0.0);
    assert!(r.positional_error < 1e-12);
    assert!(r.cumulative_translation_error.iter().all(|p| p.error == 0.0));
}

#[test]
fn one_upper_arm_off_by_30_degrees() {
    let m = model();
    let gt = vec![m.standing_tpose()];
    let mut est = gt.clone();
    let arm = m.sip_joints[0];
    est[0][3 + 3 * arm] += 30f64.to_radians();
    let e = sip_error(&est, &gt, &m.tree, &m.sip_joints).unwrap();
    assert!((e - 7.5).abs() < 1e-9, "{e}");
}

#[test]
fn sip_error_matches_quaternion_oracle() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let est: Vec<DVector<f64>> = (0..20).map(|_| random_pose(&mut rng, 1.5)).collect();
    let gt: Vec<DVector<f64>> = (0..20).map(|_| random_pose(&mut rng, 1.5)).collect();
    let mut sum = 0.0;
    for (e, g) in est.iter().zip(&gt) {
        let fe = forward_kinematics(&m.tree, e);
        let fg = forward_kinematics(&m.tree, g);
        for &j in &m.sip_joints {
            sum += quat_angle_deg(&fe.rotations[j], &fg.rotations[j]);
        }
    }
    let oracle = sum / (20 * m.sip_joints.len()) as f64;
    let e = sip_error(&est, &gt, &m.tree, &m.sip_joints).unwrap();
    assert!((e - oracle).abs() < 1e-9, "{e} vs {oracle}");
}

#[test]
fn length_mismatch_is_an_error() {
    let m = model();
    let a = vec![m.standing_tpose(); 3];
    let b = vec![m.standing_tpose(); 2];
    assert!(matches!(sip_error(&a, &b, &m.tree, &m.sip_joints), Err(Error::LengthMismatch { .. })));
    assert!(angular_error(&a, &b, &m.tree).is_err());
    assert!(positional_error(&a, &b, &m.tree).is_err());
}

#[test]
fn rigid_root_rotation_only_affects_angular_error() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let angle = 0.4;
    let off = euler_to_matrix(&Vector3::new(0.0, angle, 0.0));
    let gt: Vec<DVector<f64>> = (0..5).map(|_| random_pose(&mut rng, 0.5)).collect();
    let est: Vec<DVector<f64>> = gt
        .iter()
        .map(|g| {
            let mut e = g.clone();
            set_root_rotation(&mut e, &(off * root_rotation(g)));
            e
        })
        .collect();
    assert!(positional_error(&est, &gt, &m.tree).unwrap() < 1e-10);
    let a = angular_error(&est, &gt, &m.tree).unwrap();
    assert!((a - angle.to_degrees()).abs() < 1e-8, "{a}");
}

#[test]
fn positional_error_matches_direct_recomputation() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gt: Vec<DVector<f64>> = (0..6).map(|_| random_pose(&mut rng, 0.5)).collect();
    let est: Vec<DVector<f64>> = gt.iter().map(|g| g + DVector::from_fn(75, |_, _| rng.random_range(-0.1..0.1))).collect();
    let mut sum = 0.0;
    for (e, g) in est.iter().zip(&gt) {
        // Move est so its root coincides with gt's, then compare joint by joint.
        let mut moved = e.clone();
        moved.fixed_rows_mut::<3>(0).copy_from(&g.fixed_rows::<3>(0));
        set_root_rotation(&mut moved, &root_rotation(g));
        let fe = forward_kinematics(&m.tree, &moved);
        let fg = forward_kinematics(&m.tree, g);
        sum += (0..24).map(|j| (fe.positions[j] - fg.positions[j]).norm()).sum::<f64>() / 24.0;
    }
    let oracle = 100.0 * sum / 6.0;
    let p = positional_error(&est, &gt, &m.tree).unwrap();
    assert!((p - oracle).abs() < 1e-9, "{p} vs {oracle}");
}

// ---------------------------------------------------------------------------
// Jitter

#[test]
fn jitter_of_linear_and_quadratic_motion_vanishes() {
    let lin = trajectory(30, |t| Vector3::new(1.0, -2.0, 0.5) * t + Vector3::new(0.3, 1.0, 0.0));
    let quad = trajectory(30, |t| Vector3::new(4.0, -9.81, 2.0) * t * t * 0.5 + Vector3::new(1.0, 0.0, -1.0) * t);
    assert!(jitter(&lin, FPS).unwrap() < 1e-9);
    assert!(jitter(&quad, FPS).unwrap() < 1e-9);
}

#[test]
fn jitter_of_cubic_is_six_c() {
    let c = Vector3::new(0.5, -1.0, 2.0);
    let cubic = trajectory(20, |t| c * t * t * t);
    let j = jitter(&cubic, FPS).unwrap();
    let expected = 6.0 * c.norm() / 1000.0;
    assert!((j - expected).abs() < 1e-9 * expected.max(1.0), "{j} vs {expected}");
}

#[test]
fn jitter_needs_four_frames() {
    let short = trajectory(3, |t| Vector3::new(t, 0.0, 0.0));
    assert!(matches!(jitter(&short, FPS), Err(Error::TooShort { needed: 4, actual: 3 })));
}

#[test]
fn relative_jitter_ignores_root_translation() {
    let m = model();
    let seq: Vec<DVector<f64>> = (0..10)
        .map(|k| {
            let mut q = m.standing_tpose();
            q[0] += (k as f64 / FPS).powi(3) * 50.0;
            q
        })
        .collect();
    assert!(relative_jitter(&seq, &m.tree, FPS).unwrap() < 1e-9);
    let abs = absolute_jitter(&seq, &m.tree, FPS).unwrap();
    assert!((abs - 0.3).abs() < 1e-6, "{abs}");
}

// ---------------------------------------------------------------------------
// Zero moment point

#[test]
fn static_standing_has_zero_zmp_distance() {
    let m = model();
    let q = m.standing_tpose();
    let seq = vec![q.clone(); 5];
    let contacts = vec![foot_contacts(&m, &q); 5];
    for mode in [ZmpMode::Full, ZmpMode::ComOnly] {
        assert_eq!(zmp_distance(&seq, &m, &contacts, FPS, mode).unwrap(), 0.0);
    }
}

#[test]
fn static_com_outside_hull_by_a_tenth() {
    let m = model();
    let q = m.standing_tpose();
    let c = com(&m, &q);
    let seq = vec![q; 3];
    let contacts = vec![square(c.x + 0.1 + 0.05, c.z, 0.05); 3];
    let d = zmp_distance(&seq, &m, &contacts, FPS, ZmpMode::Full).unwrap();
    assert!((d - 0.1).abs() < 1e-12, "{d}");
}

#[test]
fn frames_without_contacts_or_support_are_skipped() {
    let m = model();
    let q = m.standing_tpose();
    let seq = vec![q.clone(); 4];
    let contacts = vec![Vec::new(); 4];
    assert_eq!(zmp_distance(&seq, &m, &contacts, FPS, ZmpMode::Full).unwrap(), 0.0);
    // Free fall: the vertical load vanishes.
    let fall: Vec<DVector<f64>> = (0..4)
        .map(|k| {
            let mut q = q.clone();
            let t = k as f64 / FPS;
            q[1] -= 0.5 * 9.81 * t * t;
            q
        })
        .collect();
    let zmp = zmp_trajectory(&fall, &m, FPS, ZmpMode::Full).unwrap();
    assert!(zmp.iter().all(Option::is_none));
}

#[test]
fn tipping_zmp_matches_brute_force_moment_balance() {
    let m = model();
    let seq = tipping_motion(&m, 12);
    let zmp = zmp_trajectory(&seq, &m, FPS, ZmpMode::Full).unwrap();
    assert!(zmp[0].is_none() && zmp[11].is_none());
    for t in 1..11 {
        let z = zmp[t].unwrap();
        let oracle = brute_force_zmp(&m, &seq, t);
        assert!((z - oracle).norm() < 1e-6, "frame {t}: {z} vs {oracle}");
    }
    let contacts: Vec<Vec<Vector3<f64>>> = (0..12).map(|_| square(0.0, 0.6, 0.05)).collect();
    let d = zmp_distance(&seq, &m, &contacts, FPS, ZmpMode::Full).unwrap();
    let hull: Vec<Vector2<f64>> = convex_hull(&contacts[0].iter().map(|p| Vector2::new(p.x, p.z)).collect::<Vec<_>>());
    let oracle: f64 = (1..11).map(|t| distance_to_hull(brute_force_zmp(&m, &seq, t), &hull)).sum::<f64>() / 10.0;
    assert!(d > 0.0);
    assert!((d - oracle).abs() < 1e-6, "{d} vs {oracle}");
}

#[test]
fn com_only_mode_differs_under_rotation() {
    let m = model();
    let seq = tipping_motion(&m, 6);
    let full = zmp_trajectory(&seq, &m, FPS, ZmpMode::Full).unwrap();
    let com_only = zmp_trajectory(&seq, &m, FPS, ZmpMode::ComOnly).unwrap();
    assert!((full[2].unwrap() - com_only[2].unwrap()).norm() > 1e-4);
}

#[test]
fn hull_distance_handles_degenerate_supports() {
    let p = Vector2::new(1.0, 1.0);
    assert_eq!(distance_to_hull(p, &convex_hull(&[Vector2::new(1.0, 0.0)])), 1.0);
    let seg = convex_hull(&[Vector2::new(0.0, 0.0), Vector2::new(2.0, 0.0), Vector2::new(1.0, 0.0)]);
    assert_eq!(seg.len(), 2);
    assert_eq!(distance_to_hull(p, &seg), 1.0);
    let sq = convex_hull(&[
        Vector2::new(0.0, 0.0),
        Vector2::new(2.0, 0.0),
        Vector2::new(2.0, 2.0),
        Vector2::new(0.0, 2.0),
        Vector2::new(1.0, 1.0),
    ]);
    assert_eq!(sq.len(), 4);
    assert_eq!(distance_to_hull(p, &sq), 0.0);
    assert!((distance_to_hull(Vector2::new(3.0, 3.0), &sq) - 2f64.sqrt()).abs() < 1e-12);
    assert_eq!(distance_to_hull(Vector2::new(2.0, 1.0), &sq), 0.0);
}

// ---------------------------------------------------------------------------
// Translation

#[test]
fn translation_curve_of_identical_and_offset_paths() {
    let gt = straight_walk(10.0, 1000);
    let same = cumulative_translation_error(&gt, &gt, 1.0).unwrap();
    assert_eq!(same.len(), 10);
    assert!(same.iter().all(|p| p.error == 0.0));
    let d = Vector3::new(0.3, 0.0, 0.4);
    let off: Vec<Vector3<f64>> = gt.iter().map(|p| p + d).collect();
    for p in cumulative_translation_error(&off, &gt, 1.0).unwrap() {
        assert!((p.error - 0.5).abs() < 1e-12);
    }
}

#[test]
fn scaled_walk_error_grows_linearly() {
    let gt = straight_walk(10.0, 600);
    let est: Vec<Vector3<f64>> = gt.iter().map(|p| Vector3::new(p.x, p.y, p.z * 1.05)).collect();
    let curve = cumulative_translation_error(&est, &gt, 1.0).unwrap();
    assert_eq!(curve.len(), 10);
    for p in curve {
        assert!((p.error - 0.05 * p.distance).abs() < 1e-9, "{p:?}");
    }
}

#[test]
fn translation_rejects_bad_bin() {
    let gt = straight_walk(1.0, 10);
    assert!(cumulative_translation_error(&gt, &gt, 0.0).is_err());
}

// ---------------------------------------------------------------------------
// Latency and report

#[test]
fn latency_percentiles_use_nearest_rank() {
    let d: Vec<Duration> = (1..=100).map(Duration::from_millis).collect();
    let s = LatencyStats::from_durations(&d);
    assert_eq!(s.frames, 100);
    assert!((s.mean_ms - 50.5).abs() < 1e-9);
    assert!((s.p99_ms - 99.0).abs() < 1e-9);
    assert!((s.max_ms - 100.0).abs() < 1e-9);
    assert_eq!(LatencyStats::from_durations(&[]), LatencyStats::default());
}

#[test]
fn report_round_trips_and_csv_has_one_row_per_frame() {
    let m = model();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let gt: Vec<DVector<f64>> = (0..6).map(|_| random_pose(&mut rng, 0.2)).collect();
    let est: Vec<DVector<f64>> = (0..6).map(|_| random_pose(&mut rng, 0.2)).collect();
    let contacts: Vec<Vec<Vector3<f64>>> = est.iter().map(|q| foot_contacts(&m, q)).collect();
    let lat = vec![Duration::from_micros(800); 6];
    let (r, frames) = evaluate(&est, &gt, &m, &contacts, Some(&lat), &MetricConfig::default()).unwrap();
    assert!(r.sip_error > 0.0 && r.angular_error > 0.0 && r.positional_error > 0.0);
    assert!(r.relative_jitter >= 0.0 && r.absolute_jitter >= 0.0 && r.zmp_distance >= 0.0);
    assert_eq!(MetricReport::from_json(&r.to_json()).unwrap(), r);
    let csv = frames.to_csv();
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().nth(1).unwrap().starts_with("0,"));
}

#[test]
fn short_sequences_still_produce_a_report() {
    let m = model();
    let seq = vec![m.standing_tpose(); 2];
    let (r, _) = evaluate(&seq, &seq, &m, &[Vec::new(), Vec::new()], None, &MetricConfig::default()).unwrap();
    assert_eq!(r.relative_jitter, 0.0);
    assert_eq!(r.zmp_distance, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn jitter_ignores_added_quadratics(a in prop::array::uniform3(-5.0f64..5.0), b in prop::array::uniform3(-5.0f64..5.0), seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base: Vec<Vec<Vector3<f64>>> = (0..8)
            .map(|_| (0..3).map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * 1e-3).collect())
            .collect();
        let (a, b) = (Vector3::from(a), Vector3::from(b));
        let shifted: Vec<Vec<Vector3<f64>>> = base
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let t = k as f64 / FPS;
                f.iter().map(|p| p + a * t * t + b * t).collect()
            })
            .collect();
        let j0 = jitter(&base, FPS).unwrap();
        let j1 = jitter(&shifted, FPS).unwrap();
        prop_assert!((j0 - j1).abs() < 1e-6 * j0.max(1.0));
    }

    #[test]
    fn orientation_errors_ignore_shared_global_rotation(yaw in -3.0f64..3.0, pitch in -1.0f64..1.0, seed in 0u64..1000) {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let est: Vec<DVector<f64>> = (0..3).map(|_| random_pose(&mut rng, 0.6)).collect();
        let gt: Vec<DVector<f64>> = (0..3).map(|_| random_pose(&mut rng, 0.6)).collect();
        let g = euler_to_matrix(&Vector3::new(pitch, yaw, 0.0));
        let turn = |s: &[DVector<f64>]| -> Vec<DVector<f64>> {
            s.iter().map(|q0| { let mut q = q0.clone(); set_root_rotation(&mut q, &(g * root_rotation(q0))); q }).collect()
        };
        let before = (sip_error(&est, &gt, &m.tree, &m.sip_joints).unwrap(), angular_error(&est, &gt, &m.tree).unwrap());
        let (et, gtt) = (turn(&est), turn(&gt));
        let after = (sip_error(&et, &gtt, &m.tree, &m.sip_joints).unwrap(), angular_error(&et, &gtt, &m.tree).unwrap());
        prop_assert!((before.0 - after.0).abs() < 1e-7);
        prop_assert!((before.1 - after.1).abs() < 1e-7);
    }
}
