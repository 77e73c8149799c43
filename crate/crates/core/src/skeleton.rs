//! The articulated character: kinematic tree, link mass properties, sensor
//! placement, and forward kinematics.
//!
//! Configuration layout is `q = [r_root (3) | θ_0 (3) | θ_1 (3) | ... ]` with
//! `N = 3 + 3J`. Each `θ_j` holds intrinsic X-Y-Z Euler angles of joint `j`
//! relative to its parent (for the root, relative to the world).

use std::path::Path;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::euler_to_matrix;
use crate::scalar::{lit, Scalar};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const NUM_SMPL_JOINTS: usize = 24;
pub const NUM_SENSORS: usize = 6;

const DEFAULT_MODEL: &str = include_str!("../assets/smpl24.toml");

#[derive(Debug, Clone, PartialEq)]
pub struct Joint<T: Scalar> {
    pub name: String,
    pub parent: Option<usize>,
    /// Rest offset from the parent joint, in the parent's frame.
    pub offset: Vector3<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree<T: Scalar> {
    joints: Vec<Joint<T>>,
    children: Vec<Vec<usize>>,
    pub root_id: usize,
    pub leaf_ids: Vec<usize>,
    pub foot_ids: Vec<usize>,
}

impl<T: Scalar> KinematicTree<T> {
    /// Builds a tree after checking topological order, a single root at
    /// index 0, and finite offsets. Any joint count is accepted here; the
    /// 24-joint requirement is enforced when loading a character model.
    pub fn new(joints: Vec<Joint<T>>, leaf_ids: Vec<usize>, foot_ids: Vec<usize>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidTree("no joints".into()));
        }
        let n = joints.len();
        let mut children = vec![Vec::new(); n];
        for (i, j) in joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(Error::InvalidTree("joint 0 must be the root".into())),
                (_, None) => {
                    return Err(Error::InvalidTree(format!("joint {i} has no parent; only one root allowed")))
                }
                (_, Some(p)) if p >= i => {
                    return Err(Error::InvalidTree(format!(
                        "joint {i} has parent {p}; parents must precede children"
                    )))
                }
                (_, Some(p)) => children[p].push(i),
            }
            if !j.offset.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidTree(format!("joint {i} has a non-finite offset")));
            }
        }
        for &id in leaf_ids.iter().chain(&foot_ids) {
            if id >= n {
                return Err(Error::InvalidTree(format!("joint index {id} out of range")));
            }
        }
        Ok(Self {
            joints,
            children,
            root_id: 0,
            leaf_ids,
            foot_ids,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Degrees of freedom `N = 3 + 3J`.
    pub fn dof(&self) -> usize {
        3 + 3 * self.joints.len()
    }

    pub fn joints(&self) -> &[Joint<T>] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &Joint<T> {
        &self.joints[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.joints[i].parent
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// True when `ancestor` lies on the path from the root to `joint`
    /// (a joint is its own ancestor).
    pub fn is_ancestor(&self, ancestor: usize, joint: usize) -> bool {
        let mut j = Some(joint);
        while let Some(k) = j {
            if k == ancestor {
                return true;
            }
            j = self.joints[k].parent;
        }
        false
    }

    /// Joint positions of the all-zero configuration with the root at the origin.
    pub fn rest_positions(&self) -> Vec<Vector3<T>> {
        let mut p = vec![Vector3::zeros(); self.num_joints()];
        for (i, j) in self.joints.iter().enumerate().skip(1) {
            p[i] = p[j.parent.unwrap()] + j.offset;
        }
        p
    }

    /// Root height at which the lowest joint of the rest pose touches y = 0.
    pub fn standing_root_height(&self) -> T {
        let min_y = self
            .rest_positions()
            .iter()
            .map(|p| p.y)
            .fold(T::zero(), |a, b| a.min(b));
        -min_y
    }

    pub fn cast<U: Scalar>(&self) -> KinematicTree<U> {
        KinematicTree {
            joints: self
                .joints
                .iter()
                .map(|j| Joint {
                    name: j.name.clone(),
                    parent: j.parent,
                    offset: j.offset.map(|x| lit::<U>(crate::scalar::to_f64(x))),
                })
                .collect(),
            children: self.children.clone(),
            root_id: self.root_id,
            leaf_ids: self.leaf_ids.clone(),
            foot_ids: self.foot_ids.clone(),
        }
    }
}

/// Mass properties of the link rigidly attached to one joint frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkInertia<T: Scalar> {
    pub mass: T,
    /// Center of mass in the joint frame.
    pub com: Vector3<T>,
    /// Inertia tensor about the center of mass, joint-frame axes.
    pub inertia: Matrix3<T>,
}

impl<T: Scalar> LinkInertia<T> {
    /// Solid cylinder of the given radius spanning `segment` from the joint origin.
    pub fn cylinder(mass: T, radius: T, segment: Vector3<T>) -> Self {
        let len = segment.norm();
        let half = lit::<T>(0.5);
        let i_axial = half * mass * radius * radius;
        let i_perp = mass * (lit::<T>(3.0) * radius * radius + len * len) / lit(12.0);
        let inertia = if len > T::tiny() {
            let a = segment / len;
            Matrix3::identity() * i_perp + a * a.transpose() * (i_axial - i_perp)
        } else {
            Matrix3::identity() * i_axial
        };
        Self {
            mass,
            com: segment * half,
            inertia,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyParams<T: Scalar> {
    pub links: Vec<LinkInertia<T>>,
}

impl<T: Scalar> BodyParams<T> {
    pub fn total_mass(&self) -> T {
        self.links.iter().fold(T::zero(), |a, l| a + l.mass)
    }

    pub fn validate(&self, tree: &KinematicTree<T>) -> Result<()> {
        if self.links.len() != tree.num_joints() {
            return Err(Error::Shape {
                what: "body links",
                expected: tree.num_joints(),
                actual: self.links.len(),
            });
        }
        for (i, l) in self.links.iter().enumerate() {
            if !(l.mass > T::zero()) {
                return Err(Error::InvalidModel(format!("link {i} mass must be positive")));
            }
            let sym = (l.inertia - l.inertia.transpose()).norm();
            if sym > lit::<T>(1e-9) * (T::one() + l.inertia.norm()) {
                return Err(Error::InvalidModel(format!("link {i} inertia not symmetric")));
            }
            if l.inertia.cholesky().is_none() {
                return Err(Error::InvalidModel(format!("link {i} inertia not positive-definite")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> BodyParams<U> {
        let c = |x: T| lit::<U>(crate::scalar::to_f64(x));
        BodyParams {
            links: self
                .links
                .iter()
                .map(|l| LinkInertia {
                    mass: c(l.mass),
                    com: l.com.map(c),
                    inertia: l.inertia.map(c),
                })
                .collect(),
        }
    }
}

/// Sensor rigidly attached to a joint frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorPlacement<T: Scalar> {
    pub name: String,
    pub joint: usize,
    pub offset: Vector3<T>,
}

/// Configuration split into root translation and per-joint Euler angles.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseEuler<T: Scalar> {
    pub root_translation: Vector3<T>,
    pub angles: Vec<Vector3<T>>,
}

impl<T: Scalar> PoseEuler<T> {
    pub fn zeros(num_joints: usize) -> Self {
        Self {
            root_translation: Vector3::zeros(),
            angles: vec![Vector3::zeros(); num_joints],
        }
    }

    pub fn from_q(q: &DVector<T>) -> Result<Self> {
        if q.len() < 3 || (q.len() - 3) % 3 != 0 {
            return Err(Error::Shape {
                what: "configuration",
                expected: 3 + 3 * ((q.len().max(3) - 3) / 3),
                actual: q.len(),
            });
        }
        let j = (q.len() - 3) / 3;
        Ok(Self {
            root_translation: q.fixed_rows::<3>(0).into_owned(),
            angles: (0..j).map(|k| q.fixed_rows::<3>(3 + 3 * k).into_owned()).collect(),
        })
    }

    pub fn to_q(&self) -> DVector<T> {
        let mut q = DVector::zeros(3 + 3 * self.angles.len());
        q.fixed_rows_mut::<3>(0).copy_from(&self.root_translation);
        for (k, a) in self.angles.iter().enumerate() {
            q.fixed_rows_mut::<3>(3 + 3 * k).copy_from(a);
        }
        q
    }
}

/// Global joint positions and orientations.
#[derive(Debug, Clone, PartialEq)]
pub struct FkResult<T: Scalar> {
    pub positions: Vec<Vector3<T>>,
    pub rotations: Vec<Matrix3<T>>,
}

impl<T: Scalar> FkResult<T> {
    pub fn flat_positions(&self) -> DVector<T> {
        DVector::from_iterator(
            3 * self.positions.len(),
            self.positions.iter().flat_map(|p| p.iter().copied()),
        )
    }
}

pub fn forward_kinematics<T: Scalar>(tree: &KinematicTree<T>, q: &DVector<T>) -> FkResult<T> {
    assert_eq!(q.len(), tree.dof(), "configuration length");
    let n = tree.num_joints();
    let mut positions = Vec::with_capacity(n);
    let mut rotations: Vec<Matrix3<T>> = Vec::with_capacity(n);
    for (i, joint) in tree.joints().iter().enumerate() {
        let local = euler_to_matrix(&q.fixed_rows::<3>(3 + 3 * i).into_owned());
        match joint.parent {
            None => {
                positions.push(q.fixed_rows::<3>(0).into_owned());
                rotations.push(local);
            }
            Some(p) => {
                let rp = rotations[p];
                positions.push(positions[p] + rp * joint.offset);
                rotations.push(rp * local);
            }
        }
    }
    FkResult {
        positions,
        rotations,
    }
}

/// Rotates each per-joint 3-vector by the root rotation.
pub fn local_to_global_velocity<T: Scalar>(v_local: &DVector<T>, root_rotation: &Matrix3<T>) -> DVector<T> {
    let mut out = DVector::zeros(v_local.len());
    for j in 0..v_local.len() / 3 {
        let v = root_rotation * v_local.fixed_rows::<3>(3 * j);
        out.fixed_rows_mut::<3>(3 * j).copy_from(&v);
    }
    out
}

// ---------------------------------------------------------------------------
// Model config file

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct JointConfig {
    pub name: String,
    #[serde(default)]
    pub parent: Option<usize>,
    pub offset: [f64; 3],
    pub mass_fraction: f64,
    pub radius: f64,
    #[serde(default)]
    pub segment: Option<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SensorConfig {
    pub name: String,
    pub joint: usize,
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub format_version: u32,
    pub total_mass: f64,
    pub root: usize,
    pub leaves: Vec<usize>,
    pub feet: Vec<usize>,
    pub sip_joints: Vec<usize>,
    pub joints: Vec<JointConfig>,
    pub sensors: Vec<SensorConfig>,
}

impl ModelConfig {
    pub fn default_smpl() -> Self {
        Self::from_toml(DEFAULT_MODEL).expect("bundled model config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::InvalidModel(e.to_string()))?;
        if cfg.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidModel(format!(
                "unsupported format_version {} (expected {MODEL_FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("model config serializes")
    }

    /// Builds the character, enforcing the 24-joint topology and plausibility ranges.
    pub fn build<T: Scalar>(&self) -> Result<Model<T>> {
        let model = self.build_unchecked()?;
        let tree = &model.tree;
        if tree.num_joints() != NUM_SMPL_JOINTS {
            return Err(Error::InvalidModel(format!(
                "expected {NUM_SMPL_JOINTS} joints, found {}",
                tree.num_joints()
            )));
        }
        if self.root != 0 {
            return Err(Error::InvalidModel("root must be joint 0".into()));
        }
        if self.leaves.len() != 5 || self.feet.len() != 2 {
            return Err(Error::InvalidModel("need 5 leaf joints and 2 foot joints".into()));
        }
        if self.sensors.len() != NUM_SENSORS {
            return Err(Error::InvalidModel(format!("need {NUM_SENSORS} sensors")));
        }
        if self.sensors[NUM_SENSORS - 1].joint != 0 {
            return Err(Error::InvalidModel("the last sensor must sit on the root".into()));
        }
        let ys: Vec<f64> = tree.rest_positions().iter().map(|p| crate::scalar::to_f64(p.y)).collect();
        let height = ys.iter().cloned().fold(f64::MIN, f64::max) - ys.iter().cloned().fold(f64::MAX, f64::min);
        if !(1.0..=2.2).contains(&height) {
            return Err(Error::InvalidModel(format!("rest height {height:.3} m outside [1.0, 2.2]")));
        }
        if !(40.0..=120.0).contains(&self.total_mass) {
            return Err(Error::InvalidModel(format!(
                "total mass {} kg outside [40, 120]",
                self.total_mass
            )));
        }
        Ok(model)
    }

    /// Builds a character of any size (used for reduced test models).
    pub fn build_unchecked<T: Scalar>(&self) -> Result<Model<T>> {
        let v = |a: [f64; 3]| Vector3::new(lit::<T>(a[0]), lit(a[1]), lit(a[2]));
        let joints: Vec<Joint<T>> = self
            .joints
            .iter()
            .map(|j| Joint {
                name: j.name.clone(),
                parent: j.parent,
                offset: v(j.offset),
            })
            .collect();
        let tree = KinematicTree::new(joints, self.leaves.clone(), self.feet.clone())?;
        let frac_sum: f64 = self.joints.iter().map(|j| j.mass_fraction).sum();
        if !(frac_sum > 0.0) {
            return Err(Error::InvalidModel("mass fractions must sum to a positive value".into()));
        }
        let mut links = Vec::with_capacity(self.joints.len());
        for (i, j) in self.joints.iter().enumerate() {
            if !(j.mass_fraction > 0.0) || !(j.radius > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "joint {i} needs positive mass_fraction and radius"
                )));
            }
            let segment = match j.segment {
                Some(s) => v(s),
                None => {
                    let ch = tree.children(i);
                    if ch.is_empty() {
                        return Err(Error::InvalidModel(format!("leaf joint {i} needs an explicit segment")));
                    }
                    let sum = ch.iter().fold(Vector3::zeros(), |a, &c| a + tree.joint(c).offset);
                    sum / lit::<T>(ch.len() as f64)
                }
            };
            let mass = lit::<T>(self.total_mass * j.mass_fraction / frac_sum);
            links.push(LinkInertia::cylinder(mass, lit(j.radius), segment));
        }
        let body = BodyParams { links };
        body.validate(&tree)?;
        for s in &self.sensors {
            if s.joint >= tree.num_joints() {
                return Err(Error::InvalidModel(format!("sensor {} on missing joint {}", s.name, s.joint)));
            }
        }
        for &k in &self.sip_joints {
            if k >= tree.num_joints() {
                return Err(Error::InvalidModel(format!("sip joint {k} out of range")));
            }
        }
        Ok(Model {
            tree,
            body,
            sensors: self
                .sensors
                .iter()
                .map(|s| SensorPlacement {
                    name: s.name.clone(),
                    joint: s.joint,
                    offset: v(s.offset),
                })
                .collect(),
            sip_joints: self.sip_joints.clone(),
        })
    }
}

/// Everything known about the simulated character.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar> {
    pub tree: KinematicTree<T>,
    pub body: BodyParams<T>,
    pub sensors: Vec<SensorPlacement<T>>,
    pub sip_joints: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    pub fn default_smpl() -> Self {
        ModelConfig::default_smpl().build().expect("bundled model is valid")
    }

    /// Configuration of the calibration T-pose standing on the ground.
    pub fn standing_tpose(&self) -> DVector<T> {
        let mut q = DVector::zeros(self.tree.dof());
        q[1] = self.tree.standing_root_height();
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::rot_x;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn chain(offsets: &[[f64; 3]]) -> KinematicTree<f64> {
        let joints = offsets
            .iter()
            .enumerate()
            .map(|(i, o)| Joint {
                name: format!("j{i}"),
                parent: if i == 0 { None } else { Some(i - 1) },
                offset: Vector3::from(*o),
            })
            .collect();
        KinematicTree::new(joints, vec![], vec![]).unwrap()
    }

    #[test]
    fn default_model_is_valid() {
        let m = Model::<f64>::default_smpl();
        assert_eq!(m.tree.num_joints(), 24);
        assert_eq!(m.tree.dof(), 75);
        assert_relative_eq!(m.body.total_mass(), 70.0, epsilon = 1e-9);
        assert_eq!(m.tree.foot_ids, vec![10, 11]);
        for i in 1..24 {
            assert!(m.tree.parent(i).unwrap() < i);
        }
        let feet_y = forward_kinematics(&m.tree, &m.standing_tpose()).positions[10].y;
        assert_relative_eq!(feet_y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn model_config_rejects_bad_input() {
        let mut cfg = ModelConfig::default_smpl();
        cfg.format_version = 9;
        assert!(ModelConfig::from_toml(&cfg.to_toml()).is_err());

        let mut cfg = ModelConfig::default_smpl();
        cfg.joints[5].parent = Some(7);
        assert!(matches!(cfg.build::<f64>(), Err(Error::InvalidTree(_))));

        let mut cfg = ModelConfig::default_smpl();
        cfg.total_mass = 300.0;
        assert!(cfg.build::<f64>().is_err());

        let mut cfg = ModelConfig::default_smpl();
        cfg.joints.pop();
        assert!(cfg.build::<f64>().is_err());
    }

    #[test]
    fn model_config_toml_roundtrip() {
        let cfg = ModelConfig::default_smpl();
        assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn fk_rest_is_accumulated_offsets() {
        let m = Model::<f64>::default_smpl();
        let fk = forward_kinematics(&m.tree, &DVector::zeros(75));
        for (a, b) in fk.positions.iter().zip(m.tree.rest_positions()) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn fk_translation_equivariance() {
        let m = Model::<f64>::default_smpl();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = DVector::from_fn(75, |_, _| rng.random::<f64>() - 0.5);
        let a = forward_kinematics(&m.tree, &q);
        q[0] += 1.0;
        q[1] += 2.0;
        q[2] += 3.0;
        let b = forward_kinematics(&m.tree, &q);
        for (pa, pb) in a.positions.iter().zip(&b.positions) {
            assert_relative_eq!(pb - pa, Vector3::new(1.0, 2.0, 3.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn fk_root_rotation_equivariance() {
        let m = Model::<f64>::default_smpl();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = DVector::from_fn(75, |i, _| if i < 6 { 0.0 } else { rng.random::<f64>() - 0.5 });
        let mut qr = q.clone();
        qr[3] = 0.7;
        let a = forward_kinematics(&m.tree, &q);
        let b = forward_kinematics(&m.tree, &qr);
        let r = rot_x(0.7);
        for (pa, pb) in a.positions.iter().zip(&b.positions) {
            assert_relative_eq!(r * pa, *pb, epsilon = 1e-12);
        }
    }

    #[test]
    fn fk_two_link_quarter_turn() {
        let tree = chain(&[[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]);
        let mut q = DVector::zeros(tree.dof());
        // rotate joint 1 (first link after the root) by 90° about x
        q[6] = FRAC_PI_2;
        let fk = forward_kinematics(&tree, &q);
        // joint 1 at z = 1; link 2 tip rotated from +z to -y
        assert_relative_eq!(fk.positions[1], Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(fk.positions[2], Vector3::new(0.0, -1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn velocity_frame_change() {
        let v = DVector::from_vec(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(local_to_global_velocity(&v, &Matrix3::identity()), v);
        let half_turn = crate::rotation::rot_y(std::f64::consts::PI);
        let g = local_to_global_velocity(&v, &half_turn);
        assert_relative_eq!(g, DVector::from_vec(vec![-1.0, 0.0, 0.0, -1.0, 0.0, 0.0]), epsilon = 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = crate::rotation::exp_map(&Vector3::new(0.3, -1.2, 0.8));
        let v = DVector::from_fn(72, |_, _| rng.random::<f64>() * 4.0 - 2.0);
        let g = local_to_global_velocity(&v, &r);
        for j in 0..24 {
            assert!((g.fixed_rows::<3>(3 * j).norm() - v.fixed_rows::<3>(3 * j).norm()).abs() <= 1e-12);
        }
    }

    #[test]
    fn tree_validation() {
        let j = |p: Option<usize>| Joint {
            name: String::new(),
            parent: p,
            offset: Vector3::<f64>::zeros(),
        };
        assert!(KinematicTree::new(vec![j(None), j(None)], vec![], vec![]).is_err());
        assert!(KinematicTree::new(vec![j(None), j(Some(1))], vec![], vec![]).is_err());
        assert!(KinematicTree::new(vec![j(Some(0))], vec![], vec![]).is_err());
        let mut bad = j(Some(0));
        bad.offset.x = f64::NAN;
        assert!(KinematicTree::new(vec![j(None), bad], vec![], vec![]).is_err());
    }

    #[test]
    fn cylinder_inertia_parallel_to_axis() {
        let l = LinkInertia::cylinder(2.0, 0.1, Vector3::new(0.0, 0.4, 0.0));
        assert_relative_eq!(l.inertia[(1, 1)], 0.5 * 2.0 * 0.01, epsilon = 1e-15);
        assert_relative_eq!(l.inertia[(0, 0)], 2.0 * (0.03 + 0.16) / 12.0, epsilon = 1e-15);
        assert_relative_eq!(l.com, Vector3::new(0.0, 0.2, 0.0));
    }
}
