//! IMU handling: calibration, input-vector layout, synthesis from motion,
//! ground-truth velocities, contact labels and bias alignment.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{MotionStatus, IMU_DIM};
use crate::rotation::{geodesic_angle, matrix_to_rot6d, orthonormalize};
use crate::scalar::{lit, to_f64, Scalar};
use crate::skeleton::{forward_kinematics, FkResult, KinematicTree, SensorPlacement, NUM_SENSORS};

/// Minimum number of still frames accepted for calibration.
pub const MIN_CALIBRATION_FRAMES: usize = 60;
pub const DEFAULT_SMOOTHING_SPAN: usize = 4;
/// Foot speed below which a frame is labelled as in contact, m/s.
pub const DEFAULT_CONTACT_SPEED: f64 = 0.008;

/// Calibrated measurements of the six sensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuFrame<T: Scalar> {
    /// Bone orientations in the world frame.
    pub orientations: [Matrix3<T>; NUM_SENSORS],
    /// Gravity-free accelerations in the world frame, m/s².
    pub accelerations: [Vector3<T>; NUM_SENSORS],
}

impl<T: Scalar> ImuFrame<T> {
    pub fn identity() -> Self {
        Self {
            orientations: [Matrix3::identity(); NUM_SENSORS],
            accelerations: [Vector3::zeros(); NUM_SENSORS],
        }
    }

    /// `x = [a_0 … a_5 | R_0 … R_5]` with accelerations divided by `acc_scale`
    /// and rotations row-major.
    pub fn to_input(&self, acc_scale: T) -> DVector<T> {
        let mut x = DVector::zeros(IMU_DIM);
        for s in 0..NUM_SENSORS {
            for k in 0..3 {
                x[3 * s + k] = self.accelerations[s][k] / acc_scale;
            }
            for r in 0..3 {
                for c in 0..3 {
                    x[18 + 9 * s + 3 * r + c] = self.orientations[s][(r, c)];
                }
            }
        }
        x
    }

    pub fn from_input(x: &DVector<T>, acc_scale: T) -> Result<Self> {
        if x.len() != IMU_DIM {
            return Err(Error::Shape {
                what: "IMU input",
                expected: IMU_DIM,
                actual: x.len(),
            });
        }
        let mut f = Self::identity();
        for s in 0..NUM_SENSORS {
            f.accelerations[s] = Vector3::new(x[3 * s], x[3 * s + 1], x[3 * s + 2]) * acc_scale;
            f.orientations[s] = Matrix3::from_fn(|r, c| x[18 + 9 * s + 3 * r + c]);
        }
        Ok(f)
    }

    /// Largest deviation of any orientation block from orthonormality.
    pub fn orthonormality_error(&self) -> T {
        self.orientations
            .iter()
            .map(|r| (r.transpose() * r - Matrix3::identity()).amax())
            .fold(T::zero(), |a, b| a.max(b))
    }

    pub fn cast<U: Scalar>(&self) -> ImuFrame<U> {
        let c = |x: T| lit::<U>(to_f64(x));
        ImuFrame {
            orientations: self.orientations.map(|r| r.map(c)),
            accelerations: self.accelerations.map(|a| a.map(c)),
        }
    }
}

/// One raw sample: sensor-to-inertial orientations and gravity-free
/// accelerations in the inertial frame. Serialized with the same layout as
/// the network input (no acceleration scaling).
#[derive(Debug, Clone, PartialEq)]
pub struct RawImuFrame<T: Scalar> {
    pub orientations: [Matrix3<T>; NUM_SENSORS],
    pub accelerations: [Vector3<T>; NUM_SENSORS],
}

impl<T: Scalar> RawImuFrame<T> {
    pub fn to_vector(&self) -> DVector<T> {
        ImuFrame {
            orientations: self.orientations,
            accelerations: self.accelerations,
        }
        .to_input(T::one())
    }

    pub fn from_vector(x: &DVector<T>) -> Result<Self> {
        let f = ImuFrame::from_input(x, T::one())?;
        Ok(Self {
            orientations: f.orientations,
            accelerations: f.accelerations,
        })
    }
}

/// Sensor-to-bone offsets and the inertial-to-world alignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    /// `R_SB` per sensor.
    pub sensor_to_bone: [[[f64; 3]; 3]; NUM_SENSORS],
    /// `R_GI`.
    pub inertial_to_world: [[f64; 3]; 3],
}

fn to_array<T: Scalar>(m: &Matrix3<T>) -> [[f64; 3]; 3] {
    let mut a = [[0.0; 3]; 3];
    for (r, row) in a.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = to_f64(m[(r, c)]);
        }
    }
    a
}

fn from_array<T: Scalar>(a: &[[f64; 3]; 3]) -> Matrix3<T> {
    Matrix3::from_fn(|r, c| lit(a[r][c]))
}

/// Still-pose guard: mean angular speed above this fails calibration, rad/s.
pub const STILLNESS_RATE: f64 = 2.0 * std::f64::consts::PI / 180.0;
/// Still-pose guard on the calibrated acceleration magnitude, m/s².
pub const STILLNESS_ACCEL: f64 = 0.3;

impl Calibration {
    pub fn identity() -> Self {
        let eye = to_array(&Matrix3::<f64>::identity());
        Self {
            sensor_to_bone: [eye; NUM_SENSORS],
            inertial_to_world: eye,
        }
    }

    pub fn new<T: Scalar>(sensor_to_bone: &[Matrix3<T>; NUM_SENSORS], inertial_to_world: &Matrix3<T>) -> Self {
        Self {
            sensor_to_bone: sensor_to_bone.map(|m| to_array(&m)),
            inertial_to_world: to_array(inertial_to_world),
        }
    }

    pub fn sensor_to_bone<T: Scalar>(&self, s: usize) -> Matrix3<T> {
        from_array(&self.sensor_to_bone[s])
    }

    pub fn inertial_to_world<T: Scalar>(&self) -> Matrix3<T> {
        from_array(&self.inertial_to_world)
    }

    /// Raw sample to calibrated frame: `G_B = R_GI R_IS R_SB`, `a_G = R_GI a_I`.
    pub fn apply<T: Scalar>(&self, raw: &RawImuFrame<T>) -> ImuFrame<T> {
        let gi = self.inertial_to_world::<T>();
        let mut f = ImuFrame::identity();
        for s in 0..NUM_SENSORS {
            f.orientations[s] = gi * raw.orientations[s] * self.sensor_to_bone::<T>(s);
            f.accelerations[s] = gi * raw.accelerations[s];
        }
        f
    }

    /// Inverse of [`Calibration::apply`]: the raw sample a device would report.
    pub fn unapply<T: Scalar>(&self, frame: &ImuFrame<T>) -> RawImuFrame<T> {
        let ig = self.inertial_to_world::<T>().transpose();
        let mut orientations = [Matrix3::identity(); NUM_SENSORS];
        let mut accelerations = [Vector3::zeros(); NUM_SENSORS];
        for s in 0..NUM_SENSORS {
            orientations[s] = ig * frame.orientations[s] * self.sensor_to_bone::<T>(s).transpose();
            accelerations[s] = ig * frame.accelerations[s];
        }
        RawImuFrame {
            orientations,
            accelerations,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let ok = c
            .sensor_to_bone
            .iter()
            .chain(std::iter::once(&c.inertial_to_world))
            .all(|a| {
                let m = from_array::<f64>(a);
                (m.transpose() * m - Matrix3::identity()).amax() <= 1e-6
            });
        if !ok {
            return Err(Error::Format("calibration rotations are not orthonormal".into()));
        }
        Ok(c)
    }
}

/// Chordal mean of rotations.
fn mean_rotation<T: Scalar>(rs: impl Iterator<Item = Matrix3<T>>) -> Matrix3<T> {
    orthonormalize(&rs.fold(Matrix3::zeros(), |a, r| a + r))
}

/// T-pose calibration.
///
/// `alignment` is the raw orientation of a sensor held with its axes on the
/// world axes (so `R_GI = alignmentᵀ`); `frames` is the still T-pose window,
/// during which every bone has the identity global orientation.
pub fn calibrate_tpose<T: Scalar>(alignment: &Matrix3<T>, frames: &[RawImuFrame<T>], fps: f64) -> Result<Calibration> {
    if frames.len() < MIN_CALIBRATION_FRAMES {
        return Err(Error::TooShort {
            needed: MIN_CALIBRATION_FRAMES,
            actual: frames.len(),
        });
    }
    let all_finite = frames
        .iter()
        .all(|f| f.orientations.iter().all(|r| r.iter().all(|x| x.is_finite())) && f.accelerations.iter().all(|a| a.iter().all(|x| x.is_finite())));
    if !all_finite || !alignment.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("calibration frames"));
    }
    for s in 0..NUM_SENSORS {
        let total: f64 = frames
            .windows(2)
            .map(|w| to_f64(geodesic_angle(&w[0].orientations[s], &w[1].orientations[s])))
            .sum();
        let rate = total * fps / (frames.len() - 1) as f64;
        if rate > STILLNESS_RATE {
            return Err(Error::CalibrationUnstable(format!(
                "sensor {s} rotates at {:.2} deg/s",
                rate.to_degrees()
            )));
        }
    }
    let gi = orthonormalize(alignment).transpose();
    let mut offsets = [Matrix3::identity(); NUM_SENSORS];
    for (s, off) in offsets.iter_mut().enumerate() {
        let mean = mean_rotation(frames.iter().map(|f| f.orientations[s]));
        *off = (gi * mean).transpose();
    }
    let calib = Calibration::new(&offsets, &gi);
    for s in 0..NUM_SENSORS {
        let mean_acc: f64 = frames
            .iter()
            .map(|f| to_f64((gi * f.accelerations[s]).norm()))
            .sum::<f64>()
            / frames.len() as f64;
        if mean_acc > STILLNESS_ACCEL {
            return Err(Error::CalibrationUnstable(format!(
                "sensor {s} mean acceleration {mean_acc:.3} m/s²"
            )));
        }
    }
    Ok(calib)
}

// ---------------------------------------------------------------------------
// Synthesis

fn sensor_positions<T: Scalar>(fk: &FkResult<T>, sensors: &[SensorPlacement<T>]) -> Vec<Vector3<T>> {
    sensors
        .iter()
        .map(|s| fk.positions[s.joint] + fk.rotations[s.joint] * s.offset)
        .collect()
}

/// Second difference at frame `t` with smoothing span `n`; the span shrinks
/// near the ends and the two end frames use one-sided differences.
fn second_difference<T: Scalar>(p: &[Vec<Vector3<T>>], t: usize, n: usize, dt: f64, k: usize) -> Vector3<T> {
    let len = p.len();
    let inner = n.min(t).min(len - 1 - t);
    let (a, b, c, m) = if inner >= 1 {
        (t - inner, t, t + inner, inner)
    } else {
        let m = n.min((len - 1) / 2).max(1);
        if t == 0 {
            (0, m, 2 * m, m)
        } else {
            (len - 1 - 2 * m, len - 1 - m, len - 1, m)
        }
    };
    let h = lit::<T>(m as f64 * dt);
    (p[a][k] + p[c][k] - p[b][k] * lit::<T>(2.0)) / (h * h)
}

/// Calibrated IMU frames from a motion sequence: bone orientations from
/// forward kinematics, accelerations by second differences of the sensor
/// positions with smoothing span `span`.
pub fn synthesize_imu<T: Scalar>(
    tree: &KinematicTree<T>,
    sensors: &[SensorPlacement<T>],
    motion: &[DVector<T>],
    span: usize,
    fps: f64,
) -> Result<Vec<ImuFrame<T>>> {
    if motion.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            actual: motion.len(),
        });
    }
    if sensors.len() != NUM_SENSORS {
        return Err(Error::Shape {
            what: "sensor placements",
            expected: NUM_SENSORS,
            actual: sensors.len(),
        });
    }
    if span == 0 {
        return Err(Error::InvalidConfig("smoothing span must be positive".into()));
    }
    let fks: Vec<FkResult<T>> = motion.iter().map(|q| forward_kinematics(tree, q)).collect();
    let pos: Vec<Vec<Vector3<T>>> = fks.iter().map(|fk| sensor_positions(fk, sensors)).collect();
    let dt = 1.0 / fps;
    Ok((0..motion.len())
        .map(|t| {
            let mut f = ImuFrame::identity();
            for (s, sp) in sensors.iter().enumerate() {
                f.orientations[s] = fks[t].rotations[sp.joint];
                f.accelerations[s] = second_difference(&pos, t, span, dt, s);
            }
            f
        })
        .collect())
}

/// Joint velocities in the root frame, `R_root(t)ᵀ (r(t) − r(t−1)) / Δt`;
/// frame 0 copies frame 1.
pub fn synthesize_gt_velocity<T: Scalar>(tree: &KinematicTree<T>, motion: &[DVector<T>], fps: f64) -> Result<Vec<DVector<T>>> {
    if motion.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            actual: motion.len(),
        });
    }
    let fks: Vec<FkResult<T>> = motion.iter().map(|q| forward_kinematics(tree, q)).collect();
    let nj = tree.num_joints();
    let rate = lit::<T>(fps);
    let mut out = Vec::with_capacity(motion.len());
    for t in 1..motion.len() {
        let rt = fks[t].rotations[0].transpose();
        let mut v = DVector::zeros(3 * nj);
        for j in 0..nj {
            let d = rt * (fks[t].positions[j] - fks[t - 1].positions[j]) * rate;
            v.fixed_rows_mut::<3>(3 * j).copy_from(&d);
        }
        if t == 1 {
            out.push(v.clone());
        }
        out.push(v);
    }
    Ok(out)
}

/// Foot contact labels from foot joint speed (backward differences).
pub fn synthesize_contact_labels<T: Scalar>(
    tree: &KinematicTree<T>,
    motion: &[DVector<T>],
    fps: f64,
    speed_threshold: f64,
) -> Result<Vec<[T; 2]>> {
    if motion.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            actual: motion.len(),
        });
    }
    if tree.foot_ids.len() != 2 {
        return Err(Error::InvalidModel("contact labels need exactly two foot joints".into()));
    }
    let fks: Vec<FkResult<T>> = motion.iter().map(|q| forward_kinematics(tree, q)).collect();
    let label = |t: usize, k: usize| {
        let f = tree.foot_ids[k];
        let speed = to_f64((fks[t].positions[f] - fks[t - 1].positions[f]).norm()) * fps;
        if speed < speed_threshold {
            T::one()
        } else {
            T::zero()
        }
    };
    Ok((0..motion.len())
        .map(|t| {
            let t = t.max(1);
            [label(t, 0), label(t, 1)]
        })
        .collect())
}

/// Shifts each sensor axis of `measured` by a constant so its mean equals the
/// mean of `synthetic`.
pub fn debias_accelerations<T: Scalar>(measured: &[ImuFrame<T>], synthetic: &[ImuFrame<T>]) -> Result<Vec<ImuFrame<T>>> {
    if measured.len() != synthetic.len() {
        return Err(Error::LengthMismatch {
            left: measured.len(),
            right: synthetic.len(),
        });
    }
    if measured.is_empty() {
        return Ok(Vec::new());
    }
    let n = lit::<T>(measured.len() as f64);
    let mut out = measured.to_vec();
    for s in 0..NUM_SENSORS {
        let mean = |seq: &[ImuFrame<T>]| seq.iter().fold(Vector3::zeros(), |a, f| a + f.accelerations[s]) / n;
        let offset = mean(synthetic) - mean(measured);
        for f in &mut out {
            f.accelerations[s] += offset;
        }
    }
    Ok(out)
}

/// Ground-truth motion status for one frame: global root orientation,
/// root-relative joint orientations, root-frame velocities and contact labels.
pub fn oracle_motion_status<T: Scalar>(tree: &KinematicTree<T>, q: &DVector<T>, v: &DVector<T>, c: [T; 2]) -> MotionStatus<T> {
    let fk = forward_kinematics(tree, q);
    let nj = tree.num_joints();
    let root = fk.rotations[0];
    let mut phi = DVector::zeros(6 * nj);
    phi.rows_mut(0, 6).copy_from_slice(&matrix_to_rot6d(&root));
    for j in 1..nj {
        phi.rows_mut(6 * j, 6)
            .copy_from_slice(&matrix_to_rot6d(&(root.transpose() * fk.rotations[j])));
    }
    MotionStatus { phi, v: v.clone(), c }
}

/// Oracle motion statuses for a whole clip.
pub fn oracle_sequence<T: Scalar>(tree: &KinematicTree<T>, motion: &[DVector<T>], fps: f64) -> Result<Vec<MotionStatus<T>>> {
    let v = synthesize_gt_velocity(tree, motion, fps)?;
    let c = synthesize_contact_labels(tree, motion, fps, DEFAULT_CONTACT_SPEED)?;
    Ok(motion
        .iter()
        .zip(v.iter().zip(&c))
        .map(|(q, (v, c))| oracle_motion_status(tree, q, v, *c))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{exp_map, rot_y};
    use crate::skeleton::Model;
    use approx::assert_relative_eq;

    fn frame_with(orient: impl Fn(usize) -> Matrix3<f64>, acc: impl Fn(usize) -> Vector3<f64>) -> ImuFrame<f64> {
        let mut f = ImuFrame::identity();
        for s in 0..NUM_SENSORS {
            f.orientations[s] = orient(s);
            f.accelerations[s] = acc(s);
        }
        f
    }

    #[test]
    fn input_layout_round_trip() {
        let f = frame_with(|s| exp_map(&Vector3::new(0.1 * s as f64, 0.2, -0.3)), |s| Vector3::new(s as f64, 1.0, -2.0));
        let x = f.to_input(30.0);
        assert_eq!(x.len(), 72);
        assert_eq!(x[3], 1.0 / 30.0);
        assert_eq!(x[18 + 9 * 2 + 1], f.orientations[2][(0, 1)]);
        let back = ImuFrame::from_input(&x, 30.0).unwrap();
        assert_relative_eq!(back.accelerations[4], f.accelerations[4], epsilon = 1e-14);
        assert_eq!(back.orientations, f.orientations);
    }

    #[test]
    fn identity_calibration() {
        let raw = RawImuFrame {
            orientations: [Matrix3::<f64>::identity(); NUM_SENSORS],
            accelerations: [Vector3::zeros(); NUM_SENSORS],
        };
        let c = calibrate_tpose(&Matrix3::identity(), &vec![raw; 60], 60.0).unwrap();
        assert_eq!(c, Calibration::identity());
    }

    #[test]
    fn calibration_toml_round_trip() {
        let offs: [Matrix3<f64>; NUM_SENSORS] = std::array::from_fn(|s| exp_map(&Vector3::new(0.3, s as f64 * 0.1, 0.0)));
        let c = Calibration::new(&offs, &rot_y(0.4));
        assert_eq!(Calibration::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn static_pose_has_zero_acceleration() {
        let m = Model::<f64>::default_smpl();
        let q = m.standing_tpose();
        let frames = synthesize_imu(&m.tree, &m.sensors, &vec![q; 10], 4, 60.0).unwrap();
        for f in &frames {
            assert!(f.accelerations.iter().all(|a| a.norm() == 0.0));
            assert_eq!(f.orientations, frames[0].orientations);
        }
    }

    #[test]
    fn too_short_inputs() {
        let m = Model::<f64>::default_smpl();
        let q = m.standing_tpose();
        assert!(matches!(
            synthesize_imu(&m.tree, &m.sensors, &vec![q.clone(); 2], 4, 60.0),
            Err(Error::TooShort { .. })
        ));
        assert!(synthesize_gt_velocity(&m.tree, &[q], 60.0).is_err());
    }
}
