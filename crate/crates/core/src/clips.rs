//! Procedural reference motions at 60 fps for the default skeleton:
//! standing, straight-line walking with planted feet, sitting and
//! sit/stand transitions.

use nalgebra::{DVector, Vector2};

use crate::error::{Error, Result};
use crate::skeleton::Model;

const L_HIP: usize = 1;
const R_HIP: usize = 2;
const L_KNEE: usize = 4;
const R_KNEE: usize = 5;
const L_ANKLE: usize = 7;
const R_ANKLE: usize = 8;
const L_SHOULDER: usize = 16;
const R_SHOULDER: usize = 17;
const L_ELBOW: usize = 18;
const R_ELBOW: usize = 19;

const ARM_DROP: f64 = 1.25;

fn set_angle(q: &mut DVector<f64>, joint: usize, axis: usize, value: f64) {
    q[3 + 3 * joint + axis] = value;
}

fn check_model(model: &Model<f64>) -> Result<()> {
    let n = model.tree.num_joints();
    if n != 24 {
        return Err(Error::InvalidModel(format!("procedural clips need the 24-joint skeleton, got {n}")));
    }
    Ok(())
}

/// `frames` copies of the calibration T-pose standing on the ground.
pub fn standing(model: &Model<f64>, frames: usize) -> Vec<DVector<f64>> {
    vec![model.standing_tpose(); frames]
}

/// Standing with the arms lowered.
pub fn relaxed_standing_pose(model: &Model<f64>) -> DVector<f64> {
    let mut q = model.standing_tpose();
    set_angle(&mut q, L_SHOULDER, 2, -ARM_DROP);
    set_angle(&mut q, R_SHOULDER, 2, ARM_DROP);
    q
}

/// Seated pose: thighs horizontal, shins vertical, feet on the ground.
pub fn sitting_pose(model: &Model<f64>) -> DVector<f64> {
    let mut q = relaxed_standing_pose(model);
    let half_pi = std::f64::consts::FRAC_PI_2;
    for (hip, knee) in [(L_HIP, L_KNEE), (R_HIP, R_KNEE)] {
        set_angle(&mut q, hip, 0, -half_pi);
        set_angle(&mut q, knee, 0, half_pi);
    }
    set_angle(&mut q, L_ELBOW, 1, 0.6);
    set_angle(&mut q, R_ELBOW, 1, -0.6);
    let fk = crate::skeleton::forward_kinematics(&model.tree, &q);
    let lowest = model.tree.foot_ids.iter().map(|&f| fk.positions[f].y).fold(f64::MAX, f64::min);
    q[1] -= lowest;
    q
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (u * (u * 6.0 - 15.0) + 10.0)
}

/// `frames` of `a`, blending to `b` over `blend` frames, then holding `b`.
fn blend(a: &DVector<f64>, b: &DVector<f64>, hold_a: usize, blend: usize, hold_b: usize) -> Vec<DVector<f64>> {
    let mut out = vec![a.clone(); hold_a];
    for k in 0..blend {
        let s = smoothstep((k + 1) as f64 / blend as f64);
        out.push(a + (b - a) * s);
    }
    out.extend(std::iter::repeat_n(b.clone(), hold_b));
    out
}

/// Stand, sit down, hold, stand up, hold.
pub fn sit_stand(model: &Model<f64>, hold: usize, transition: usize) -> Vec<DVector<f64>> {
    let stand = relaxed_standing_pose(model);
    let sit = sitting_pose(model);
    let mut out = blend(&stand, &sit, hold, transition, hold);
    out.extend(blend(&sit, &stand, 0, transition, hold));
    out
}

/// A long seated hold.
pub fn long_sit(model: &Model<f64>, frames: usize) -> Vec<DVector<f64>> {
    vec![sitting_pose(model); frames]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkParams {
    /// Distance between successive footfalls of the same foot, m.
    pub stride: f64,
    /// Duration of one stride, s.
    pub period: f64,
    /// Fraction of the stride a foot spends on the ground.
    pub duty: f64,
    /// Peak foot lift during swing, m.
    pub lift: f64,
    /// Pelvis height while walking, m.
    pub pelvis_height: f64,
    /// Arm swing amplitude, rad.
    pub arm_swing: f64,
}

impl Default for WalkParams {
    fn default() -> Self {
        Self {
            stride: 0.8,
            period: 1.1,
            duty: 0.6,
            lift: 0.05,
            pelvis_height: 0.88,
            arm_swing: 0.25,
        }
    }
}

impl WalkParams {
    pub fn speed(&self) -> f64 {
        self.stride / self.period
    }
}

/// Two-link planar inverse kinematics in the sagittal plane `(z, y)`.
/// Returns hip and knee pitch so the ankle reaches `target` relative to the hip.
fn leg_ik(thigh: Vector2<f64>, shin: Vector2<f64>, target: Vector2<f64>, guess: (f64, f64)) -> Result<(f64, f64)> {
    // Rotation about x by angle a maps (z, y) = (z cos a + y sin a, y cos a − z sin a).
    let rot = |a: f64, v: Vector2<f64>| Vector2::new(v.x * a.cos() + v.y * a.sin(), v.y * a.cos() - v.x * a.sin());
    let (mut a, mut b) = guess;
    for _ in 0..50 {
        let knee = rot(a, thigh);
        let ankle = knee + rot(a + b, shin);
        let err = ankle - target;
        if err.norm() < 1e-13 {
            return Ok((a, b));
        }
        let eps = 1e-7;
        let da = (rot(a + eps, thigh) + rot(a + eps + b, shin) - ankle) / eps;
        let db = (rot(a + b + eps, shin) - rot(a + b, shin)) / eps;
        let jac = nalgebra::Matrix2::from_columns(&[da, db]);
        let step = jac
            .try_inverse()
            .ok_or_else(|| Error::InvalidConfig("walking leg IK is singular".into()))?
            * err;
        a -= step.x;
        b -= step.y;
    }
    let knee = rot(a, thigh);
    let ankle = knee + rot(a + b, shin);
    if (ankle - target).norm() > 1e-9 {
        return Err(Error::InvalidConfig("walking foot target out of reach".into()));
    }
    Ok((a, b))
}

/// Foot position along the walking direction and height at time `t` for a
/// foot whose stride starts `offset` seconds early.
fn foot_track(p: &WalkParams, t: f64, offset: f64, z0: f64) -> (f64, f64) {
    let s = (t + offset) / p.period;
    let k = s.floor();
    let u = s - k;
    let plant = z0 + k * p.stride;
    if u < p.duty {
        (plant, 0.0)
    } else {
        let w = (u - p.duty) / (1.0 - p.duty);
        let lift = p.lift * (std::f64::consts::PI * w).sin().powi(2);
        (plant + p.stride * smoothstep(w), lift)
    }
}

/// Straight walk along +z covering at least `distance` meters. Feet stay
/// exactly planted during stance and are lifted along smooth arcs.
pub fn walking(model: &Model<f64>, distance: f64, params: &WalkParams) -> Result<Vec<DVector<f64>>> {
    check_model(model)?;
    if !(params.duty > 0.5 && params.duty < 1.0) || params.period <= 0.0 || params.stride <= 0.0 {
        return Err(Error::InvalidConfig("walk needs 0.5 < duty < 1 and positive stride/period".into()));
    }
    let tree = &model.tree;
    let fps = 60.0;
    let v = params.speed();
    let frames = (distance / v * fps).ceil() as usize + 1;
    let yz = |j: usize| {
        let o = tree.joint(j).offset;
        Vector2::new(o.z, o.y)
    };
    let thigh = yz(L_KNEE);
    let shin = yz(L_ANKLE);
    let foot = yz(model.tree.foot_ids[0]);
    let hip_y = yz(L_HIP).y;
    let base = relaxed_standing_pose(model);
    // the foot is under the hip at mid-stance
    let mid = params.duty * params.period * 0.5;
    let mut out = Vec::with_capacity(frames);
    let mut guess = [(-0.2, 0.4); 2];
    for f in 0..frames {
        let t = f as f64 / fps;
        let mut q = base.clone();
        let root_z = v * t;
        q[1] = params.pelvis_height;
        q[2] = root_z;
        let phase = [0.0, 0.5 * params.period];
        for (side, (&hip, (&knee, &ankle))) in [L_HIP, R_HIP].iter().zip([L_KNEE, R_KNEE].iter().zip([L_ANKLE, R_ANKLE].iter())).enumerate() {
            let offset = phase[side];
            let z0 = v * (mid - offset) + foot.x + shin.x;
            let (fz, fy) = foot_track(params, t, offset, z0);
            // foot stays level: the ankle sits at a fixed offset from the foot joint
            let ankle_target = Vector2::new(fz - foot.x, fy - foot.y) - Vector2::new(root_z, params.pelvis_height + hip_y);
            let (a, b) = leg_ik(thigh, shin, ankle_target, guess[side])?;
            guess[side] = (a, b);
            set_angle(&mut q, hip, 0, a);
            set_angle(&mut q, knee, 0, b);
            set_angle(&mut q, ankle, 0, -(a + b));
        }
        let swing = params.arm_swing * (2.0 * std::f64::consts::PI * (t - mid) / params.period).sin();
        set_angle(&mut q, L_SHOULDER, 0, swing);
        set_angle(&mut q, R_SHOULDER, 0, -swing);
        out.push(q);
    }
    Ok(out)
}
