//! Evaluation metrics over estimated and ground-truth motion.
//!
//! Angles are reported in degrees, positional error in centimeters, jitter in
//! km/s³, distances in meters and latency in milliseconds.

use std::fmt::Write as _;
use std::time::Duration;

use nalgebra::{DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::GRAVITY;
use crate::error::{Error, Result};
use crate::rotation::{geodesic_angle, log_map};
use crate::scalar::{lit, to_f64, Scalar};
use crate::skeleton::{forward_kinematics, BodyParams, FkResult, KinematicTree, Model};

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    Ok(())
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn fk_all<T: Scalar>(tree: &KinematicTree<T>, motion: &[DVector<T>]) -> Vec<FkResult<T>> {
    motion.iter().map(|q| forward_kinematics(tree, q)).collect()
}

// ---------------------------------------------------------------------------
// Orientation and position errors

/// Mean geodesic angle over frames and `joints` between global rotations.
pub fn rotation_error<T: Scalar>(est: &[Vec<Matrix3<T>>], gt: &[Vec<Matrix3<T>>], joints: &[usize]) -> Result<f64> {
    same_len(est.len(), gt.len())?;
    let mut sum = 0.0;
    let mut n = 0;
    for (e, g) in est.iter().zip(gt) {
        for &j in joints {
            sum += to_f64(geodesic_angle(&e[j], &g[j])).to_degrees();
            n += 1;
        }
    }
    Ok(mean(sum, n))
}

fn global_rotations<T: Scalar>(tree: &KinematicTree<T>, motion: &[DVector<T>]) -> Vec<Vec<Matrix3<T>>> {
    fk_all(tree, motion).into_iter().map(|f| f.rotations).collect()
}

/// Mean global orientation error of the upper arms and upper legs.
pub fn sip_error<T: Scalar>(est: &[DVector<T>], gt: &[DVector<T>], tree: &KinematicTree<T>, sip_joints: &[usize]) -> Result<f64> {
    same_len(est.len(), gt.len())?;
    rotation_error(&global_rotations(tree, est), &global_rotations(tree, gt), sip_joints)
}

/// Mean global orientation error over all joints.
pub fn angular_error<T: Scalar>(est: &[DVector<T>], gt: &[DVector<T>], tree: &KinematicTree<T>) -> Result<f64> {
    same_len(est.len(), gt.len())?;
    let all: Vec<usize> = (0..tree.num_joints()).collect();
    rotation_error(&global_rotations(tree, est), &global_rotations(tree, gt), &all)
}

/// Per-frame mean joint position error with the estimated root position and
/// orientation moved onto the ground truth, in centimeters.
pub fn positional_error_per_frame<T: Scalar>(est: &[DVector<T>], gt: &[DVector<T>], tree: &KinematicTree<T>) -> Result<Vec<f64>> {
    same_len(est.len(), gt.len())?;
    let fe = fk_all(tree, est);
    let fg = fk_all(tree, gt);
    let nj = tree.num_joints();
    Ok(fe
        .iter()
        .zip(&fg)
        .map(|(e, g)| {
            // Comparing in each root frame equals moving est onto gt's root.
            let (re, rg) = (e.rotations[0].transpose(), g.rotations[0].transpose());
            let sum: f64 = (0..nj)
                .map(|j| {
                    let pe = re * (e.positions[j] - e.positions[0]);
                    let pg = rg * (g.positions[j] - g.positions[0]);
                    to_f64((pe - pg).norm())
                })
                .sum();
            100.0 * sum / nj as f64
        })
        .collect())
}

pub fn positional_error<T: Scalar>(est: &[DVector<T>], gt: &[DVector<T>], tree: &KinematicTree<T>) -> Result<f64> {
    let per = positional_error_per_frame(est, gt, tree)?;
    Ok(mean(per.iter().sum(), per.len()))
}

// ---------------------------------------------------------------------------
// Jitter

/// Mean magnitude of the third finite difference over joints and frames,
/// in km/s³.
pub fn jitter<T: Scalar>(positions: &[Vec<Vector3<T>>], fps: f64) -> Result<f64> {
    if positions.len() < 4 {
        return Err(Error::TooShort {
            needed: 4,
            actual: positions.len(),
        });
    }
    let three = lit::<T>(3.0);
    let mut sum = 0.0;
    let mut n = 0;
    for t in 3..positions.len() {
        for j in 0..positions[t].len() {
            let d = (positions[t][j] - positions[t - 3][j]) - (positions[t - 1][j] - positions[t - 2][j]) * three;
            sum += to_f64(d.norm()) * fps.powi(3);
            n += 1;
        }
    }
    Ok(mean(sum, n) / 1000.0)
}

/// Jitter of global joint positions.
pub fn absolute_jitter<T: Scalar>(motion: &[DVector<T>], tree: &KinematicTree<T>, fps: f64) -> Result<f64> {
    let p: Vec<Vec<Vector3<T>>> = fk_all(tree, motion).into_iter().map(|f| f.positions).collect();
    jitter(&p, fps)
}

/// Jitter of joint positions expressed in the root frame.
pub fn relative_jitter<T: Scalar>(motion: &[DVector<T>], tree: &KinematicTree<T>, fps: f64) -> Result<f64> {
    let p: Vec<Vec<Vector3<T>>> = fk_all(tree, motion)
        .into_iter()
        .map(|f| {
            let rt = f.rotations[0].transpose();
            f.positions.iter().map(|p| rt * (p - f.positions[0])).collect()
        })
        .collect();
    jitter(&p, fps)
}

// ---------------------------------------------------------------------------
// Zero moment point

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZmpMode {
    /// COM acceleration plus the rate of angular momentum about the COM.
    #[default]
    Full,
    /// COM acceleration only.
    ComOnly,
}

/// Mass-weighted link centers and world inertia tensors for one frame.
struct LinkFrame {
    com: Vec<Vector3<f64>>,
    rot: Vec<Matrix3<f64>>,
}

fn link_frame<T: Scalar>(fk: &FkResult<T>, body: &BodyParams<T>) -> LinkFrame {
    let to = |v: Vector3<T>| v.map(to_f64);
    let rot: Vec<Matrix3<f64>> = fk.rotations.iter().map(|r| r.map(to_f64)).collect();
    let com = body
        .links
        .iter()
        .enumerate()
        .map(|(j, l)| to(fk.positions[j]) + rot[j] * to(l.com))
        .collect();
    LinkFrame { com, rot }
}

/// Angular momentum about `about` between frames `a` and `b`, with link
/// velocities taken as `(b − a)·fps` at the midpoint positions.
fn angular_momentum_between(a: &LinkFrame, b: &LinkFrame, masses: &[f64], inertia: &[Matrix3<f64>], about: impl Fn(usize) -> Vector3<f64>, fps: f64) -> Vector3<f64> {
    let mut l = Vector3::zeros();
    for i in 0..masses.len() {
        let v = (b.com[i] - a.com[i]) * fps;
        let mid = (a.com[i] + b.com[i]) * 0.5;
        let w = log_map(&(b.rot[i] * a.rot[i].transpose())) * fps;
        let iw = a.rot[i] * inertia[i] * a.rot[i].transpose();
        l += iw * w + (mid - about(i)).cross(&v) * masses[i];
    }
    l
}

/// ZMP on the ground plane at each interior frame, `None` where the vertical
/// load is too small for it to be defined.
pub fn zmp_trajectory<T: Scalar>(motion: &[DVector<T>], model: &Model<T>, fps: f64, mode: ZmpMode) -> Result<Vec<Option<Vector2<f64>>>> {
    if motion.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            actual: motion.len(),
        });
    }
    let frames: Vec<LinkFrame> = fk_all(&model.tree, motion).iter().map(|f| link_frame(f, &model.body)).collect();
    let masses: Vec<f64> = model.body.links.iter().map(|l| to_f64(l.mass)).collect();
    let inertia: Vec<Matrix3<f64>> = model.body.links.iter().map(|l| l.inertia.map(to_f64)).collect();
    let total: f64 = masses.iter().sum();
    let com = |f: &LinkFrame| f.com.iter().zip(&masses).fold(Vector3::zeros(), |a, (c, m)| a + c * *m) / total;
    let coms: Vec<Vector3<f64>> = frames.iter().map(com).collect();
    let mut out = vec![None; motion.len()];
    for t in 1..motion.len() - 1 {
        let c = coms[t];
        let cdd = (coms[t + 1] - c * 2.0 + coms[t - 1]) * fps * fps;
        let ay = cdd.y + GRAVITY;
        if ay <= 0.1 * GRAVITY {
            continue;
        }
        let ldot = match mode {
            ZmpMode::ComOnly => Vector3::zeros(),
            ZmpMode::Full => {
                let ahead = angular_momentum_between(&frames[t], &frames[t + 1], &masses, &inertia, |_| (coms[t] + coms[t + 1]) * 0.5, fps);
                let behind = angular_momentum_between(&frames[t - 1], &frames[t], &masses, &inertia, |_| (coms[t - 1] + coms[t]) * 0.5, fps);
                (ahead - behind) * fps
            }
        };
        let x = c.x - c.y * cdd.x / ay + ldot.z / (total * ay);
        let z = c.z - c.y * cdd.z / ay - ldot.x / (total * ay);
        out[t] = Some(Vector2::new(x, z));
    }
    Ok(out)
}

fn cross2(o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull (counter-clockwise, no collinear points) of points in the plane.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut p: Vec<Vector2<f64>> = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && cross2(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

fn segment_distance(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let u = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (a + ab * u - p).norm()
}

/// Distance from `p` to the convex polygon `hull`; zero inside.
pub fn distance_to_hull(p: Vector2<f64>, hull: &[Vector2<f64>]) -> f64 {
    match hull.len() {
        0 => f64::INFINITY,
        1 => (p - hull[0]).norm(),
        2 => segment_distance(p, hull[0], hull[1]),
        n => {
            let inside = (0..n).all(|i| cross2(hull[i], hull[(i + 1) % n], p) >= 0.0);
            if inside {
                0.0
            } else {
                (0..n).map(|i| segment_distance(p, hull[i], hull[(i + 1) % n])).fold(f64::INFINITY, f64::min)
            }
        }
    }
}

/// Mean distance from the ZMP to the support polygon spanned by each frame's
/// contact points. Frames without contacts or without a defined ZMP are skipped.
pub fn zmp_distance<T: Scalar>(
    motion: &[DVector<T>],
    model: &Model<T>,
    contacts: &[Vec<Vector3<T>>],
    fps: f64,
    mode: ZmpMode,
) -> Result<f64> {
    same_len(motion.len(), contacts.len())?;
    let zmp = zmp_trajectory(motion, model, fps, mode)?;
    let mut sum = 0.0;
    let mut n = 0;
    for (z, pts) in zmp.iter().zip(contacts) {
        let (Some(z), false) = (z, pts.is_empty()) else { continue };
        let flat: Vec<Vector2<f64>> = pts.iter().map(|p| Vector2::new(to_f64(p.x), to_f64(p.z))).collect();
        sum += distance_to_hull(*z, &convex_hull(&flat));
        n += 1;
    }
    Ok(mean(sum, n))
}

// ---------------------------------------------------------------------------
// Translation

/// One point of the error-versus-distance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TranslationPoint {
    /// Ground-truth distance traveled at the sampled frame, m.
    pub distance: f64,
    /// Root position error at that frame, m.
    pub error: f64,
}

/// Root position error at the first frame whose ground-truth arc length
/// reaches each multiple of `bin`.
pub fn cumulative_translation_error<T: Scalar>(est: &[Vector3<T>], gt: &[Vector3<T>], bin: f64) -> Result<Vec<TranslationPoint>> {
    same_len(est.len(), gt.len())?;
    if !(bin > 0.0) {
        return Err(Error::InvalidConfig("translation bin must be positive".into()));
    }
    let mut out = Vec::new();
    let mut travelled = 0.0;
    let mut next = bin;
    for t in 1..gt.len() {
        travelled += to_f64((gt[t] - gt[t - 1]).norm());
        if travelled >= next {
            out.push(TranslationPoint {
                distance: travelled,
                error: to_f64((est[t] - gt[t]).norm()),
            });
            while next <= travelled {
                next += bin;
            }
        }
    }
    Ok(out)
}

fn root_positions<T: Scalar>(motion: &[DVector<T>]) -> Vec<Vector3<T>> {
    motion.iter().map(|q| Vector3::new(q[0], q[1], q[2])).collect()
}

// ---------------------------------------------------------------------------
// Latency

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LatencyStats {
    pub frames: usize,
    pub mean_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank percentile statistics.
    pub fn from_durations(d: &[Duration]) -> Self {
        let mut ms: Vec<f64> = d.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        if ms.is_empty() {
            return Self::default();
        }
        ms.sort_by(f64::total_cmp);
        let rank = ((0.99 * ms.len() as f64).ceil() as usize).clamp(1, ms.len());
        Self {
            frames: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p99_ms: ms[rank - 1],
            max_ms: ms[ms.len() - 1],
        }
    }
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub zmp_mode: ZmpMode,
    /// Distance between samples of the translation curve, m.
    pub translation_bin: f64,
    pub fps: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            zmp_mode: ZmpMode::Full,
            translation_bin: 1.0,
            fps: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub frames: usize,
    /// Degrees.
    pub sip_error: f64,
    /// Degrees.
    pub angular_error: f64,
    /// Centimeters.
    pub positional_error: f64,
    /// km/s³.
    pub relative_jitter: f64,
    /// km/s³.
    pub absolute_jitter: f64,
    /// Meters.
    pub zmp_distance: f64,
    pub cumulative_translation_error: Vec<TranslationPoint>,
    pub latency: Option<LatencyStats>,
}

/// Per-frame values behind a report, for plotting.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub positional_error: Vec<f64>,
    pub root_error: Vec<f64>,
    pub zmp: Vec<Option<Vector2<f64>>>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Evaluates an estimated motion against the ground truth. `contacts` holds
/// the contact points used by the estimate at each frame.
pub fn evaluate<T: Scalar>(
    est: &[DVector<T>],
    gt: &[DVector<T>],
    model: &Model<T>,
    contacts: &[Vec<Vector3<T>>],
    latency: Option<&[Duration]>,
    cfg: &MetricConfig,
) -> Result<(MetricReport, FrameMetrics)> {
    same_len(est.len(), gt.len())?;
    let tree = &model.tree;
    let jitter_or_zero = |r: Result<f64>| match r {
        Err(Error::TooShort { .. }) => Ok(0.0),
        other => other,
    };
    let zmp_or_zero = |r: Result<f64>| match r {
        Err(Error::TooShort { .. }) => Ok(0.0),
        other => other,
    };
    let pos = positional_error_per_frame(est, gt, tree)?;
    let (re, rg) = (root_positions(est), root_positions(gt));
    let zmp = if est.len() >= 3 {
        zmp_trajectory(est, model, cfg.fps, cfg.zmp_mode)?
    } else {
        vec![None; est.len()]
    };
    let report = MetricReport {
        frames: est.len(),
        sip_error: sip_error(est, gt, tree, &model.sip_joints)?,
        angular_error: angular_error(est, gt, tree)?,
        positional_error: mean(pos.iter().sum(), pos.len()),
        relative_jitter: jitter_or_zero(relative_jitter(est, tree, cfg.fps))?,
        absolute_jitter: jitter_or_zero(absolute_jitter(est, tree, cfg.fps))?,
        zmp_distance: zmp_or_zero(zmp_distance(est, model, contacts, cfg.fps, cfg.zmp_mode))?,
        cumulative_translation_error: cumulative_translation_error(&re, &rg, cfg.translation_bin)?,
        latency: latency.map(LatencyStats::from_durations),
    };
    let frames = FrameMetrics {
        positional_error: pos,
        root_error: re.iter().zip(&rg).map(|(a, b)| to_f64((a - b).norm())).collect(),
        zmp,
    };
    Ok((report, frames))
}

impl FrameMetrics {
    /// `frame,positional_error_cm,root_error_m,zmp_x,zmp_z` with empty ZMP
    /// cells where it is undefined.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame,positional_error_cm,root_error_m,zmp_x,zmp_z\n");
        for t in 0..self.positional_error.len() {
            let (zx, zz) = match self.zmp.get(t).copied().flatten() {
                Some(z) => (z.x.to_string(), z.y.to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(s, "{t},{},{},{zx},{zz}", self.positional_error[t], self.root_error[t]);
        }
        s
    }
}
