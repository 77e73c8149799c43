//! Floating-base rigid-body dynamics over the Euler-angle configuration.
//!
//! Every scalar coordinate of `q` is modelled as a one-DoF joint: three
//! prismatic joints along the world axes for the root translation, then for
//! each skeleton joint three revolute joints about the local x, y and z axes
//! (intrinsic X-Y-Z). The first two revolute bodies of each triple are
//! massless; the third carries the link. Generalized velocities are therefore
//! Euler-angle rates, and the composite-rigid-body (CRBA) and recursive
//! Newton-Euler (RNEA) algorithms run unchanged on 6D spatial quantities.
//!
//! The root residual force `τ[..6]` lives in the same coordinates: the first
//! three entries are world-frame forces, the next three are generalized forces
//! conjugate to the root Euler-angle rates.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::rotation::{rot_x, rot_y, rot_z, skew};
use crate::scalar::{lit, Scalar};
use crate::skeleton::{BodyParams, KinematicTree, LinkInertia};

pub const GRAVITY: f64 = 9.81;

/// Bound on `‖q̇‖` beyond which a state is treated as a blown-up simulation.
pub const MAX_QDOT_NORM: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct DynState<T: Scalar> {
    pub q: DVector<T>,
    pub qdot: DVector<T>,
}

impl<T: Scalar> DynState<T> {
    pub fn new(q: DVector<T>, qdot: DVector<T>) -> Self {
        Self { q, qdot }
    }

    pub fn at_rest(q: DVector<T>) -> Self {
        let n = q.len();
        Self {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.q.len() != self.qdot.len() {
            return Err(Error::Shape {
                what: "state velocity",
                expected: self.q.len(),
                actual: self.qdot.len(),
            });
        }
        if !self.q.iter().chain(self.qdot.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("dynamic state"));
        }
        if self.qdot.norm() >= lit(MAX_QDOT_NORM) {
            return Err(Error::Diverged(format!("generalized velocity norm above {MAX_QDOT_NORM}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynCoefficients<T: Scalar> {
    /// Joint-space inertia matrix `M`.
    pub mass: DMatrix<T>,
    /// Nonlinear effects `h` (gravity, Coriolis, centripetal).
    pub bias: DVector<T>,
}

/// Contact joints, their ground contact points, and the associated Jacobians.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSet<T: Scalar> {
    pub joint_ids: Vec<usize>,
    /// Contact points in world coordinates, four per joint.
    pub points: Vec<Vector3<T>>,
    /// Owning joint of each point.
    pub point_joint: Vec<usize>,
    /// `3n_c × N` contact-point Jacobian.
    pub jc: DMatrix<T>,
    /// `3n_j × N` contact-joint Jacobian.
    pub jj: DMatrix<T>,
}

impl<T: Scalar> ContactSet<T> {
    pub fn empty(dof: usize) -> Self {
        Self {
            joint_ids: Vec::new(),
            points: Vec::new(),
            point_joint: Vec::new(),
            jc: DMatrix::zeros(0, dof),
            jj: DMatrix::zeros(0, dof),
        }
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_joints(&self) -> usize {
        self.joint_ids.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn unit<T: Scalar>(self) -> Vector3<T> {
        match self {
            Axis::X => Vector3::x(),
            Axis::Y => Vector3::y(),
            Axis::Z => Vector3::z(),
        }
    }

    fn rotation<T: Scalar>(self, angle: T) -> Matrix3<T> {
        match self {
            Axis::X => rot_x(angle),
            Axis::Y => rot_y(angle),
            Axis::Z => rot_z(angle),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum JointKind {
    Prismatic(Axis),
    Revolute(Axis),
}

#[derive(Debug, Clone)]
struct Body<T: Scalar> {
    parent: Option<usize>,
    kind: JointKind,
    /// Fixed translation from the parent body frame, applied before the joint motion.
    offset: Vector3<T>,
    inertia: Matrix6<T>,
    /// Motion subspace in body coordinates.
    subspace: Vector6<T>,
}

/// Precomputed one-DoF body chain for a skeleton.
#[derive(Debug, Clone)]
pub struct MultiBody<T: Scalar> {
    bodies: Vec<Body<T>>,
    num_joints: usize,
    gravity: Vector3<T>,
}

/// Per-configuration body transforms.
#[derive(Debug, Clone)]
pub struct BodyPoses<T: Scalar> {
    /// Spatial motion transforms parent → body.
    x_up: Vec<Matrix6<T>>,
    /// Body orientation in world coordinates (body → world).
    pub rot: Vec<Matrix3<T>>,
    /// Body origin in world coordinates.
    pub origin: Vec<Vector3<T>>,
}

fn spatial_inertia<T: Scalar>(link: &LinkInertia<T>) -> Matrix6<T> {
    let c = skew(&link.com);
    let m = link.mass;
    let i_o = link.inertia + c * c.transpose() * m;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&i_o);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c * m));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c.transpose() * m));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
    out
}

/// Plücker transform taking motion vectors from a parent frame to a child
/// frame whose axes are `r` (child → parent) and whose origin is `p`.
fn motion_transform<T: Scalar>(r: &Matrix3<T>, p: &Vector3<T>) -> Matrix6<T> {
    let e = r.transpose();
    let mut x = Matrix6::zeros();
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(&e);
    x.fixed_view_mut::<3, 3>(3, 3).copy_from(&e);
    x.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-(e * skew(p))));
    x
}

fn cross_motion<T: Scalar>(v: &Vector6<T>, m: &Vector6<T>) -> Vector6<T> {
    let w = v.fixed_rows::<3>(0);
    let vl = v.fixed_rows::<3>(3);
    let mw = m.fixed_rows::<3>(0);
    let ml = m.fixed_rows::<3>(3);
    let a = w.cross(&mw);
    let b = w.cross(&ml) + vl.cross(&mw);
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

fn cross_force<T: Scalar>(v: &Vector6<T>, f: &Vector6<T>) -> Vector6<T> {
    let w = v.fixed_rows::<3>(0);
    let vl = v.fixed_rows::<3>(3);
    let n = f.fixed_rows::<3>(0);
    let fl = f.fixed_rows::<3>(3);
    let a = w.cross(&n) + vl.cross(&fl);
    let b = w.cross(&fl);
    Vector6::new(a.x, a.y, a.z, b.x, b.y, b.z)
}

impl<T: Scalar> MultiBody<T> {
    pub fn new(tree: &KinematicTree<T>, params: &BodyParams<T>) -> Self {
        assert_eq!(params.links.len(), tree.num_joints(), "one link per joint");
        let mut bodies = Vec::with_capacity(tree.dof());
        let zero6 = Matrix6::zeros();
        let axes = [Axis::X, Axis::Y, Axis::Z];
        for (k, axis) in axes.iter().enumerate() {
            let mut s = Vector6::zeros();
            s.fixed_rows_mut::<3>(3).copy_from(&axis.unit::<T>());
            bodies.push(Body {
                parent: if k == 0 { None } else { Some(k - 1) },
                kind: JointKind::Prismatic(*axis),
                offset: Vector3::zeros(),
                inertia: zero6,
                subspace: s,
            });
        }
        for (j, joint) in tree.joints().iter().enumerate() {
            let attach = match joint.parent {
                None => 2,
                Some(p) => 3 + 3 * p + 2,
            };
            for (k, axis) in axes.iter().enumerate() {
                let mut s = Vector6::zeros();
                s.fixed_rows_mut::<3>(0).copy_from(&axis.unit::<T>());
                bodies.push(Body {
                    parent: Some(if k == 0 { attach } else { 3 + 3 * j + k - 1 }),
                    kind: JointKind::Revolute(*axis),
                    offset: if k == 0 && joint.parent.is_some() {
                        joint.offset
                    } else {
                        Vector3::zeros()
                    },
                    inertia: if k == 2 { spatial_inertia(&params.links[j]) } else { zero6 },
                    subspace: s,
                });
            }
        }
        Self {
            bodies,
            num_joints: tree.num_joints(),
            gravity: Vector3::new(T::zero(), lit(-GRAVITY), T::zero()),
        }
    }

    pub fn dof(&self) -> usize {
        self.bodies.len()
    }

    pub fn gravity(&self) -> Vector3<T> {
        self.gravity
    }

    /// Body that carries joint `j`'s link and frame.
    pub fn joint_body(j: usize) -> usize {
        3 + 3 * j + 2
    }

    pub fn poses(&self, q: &DVector<T>) -> BodyPoses<T> {
        assert_eq!(q.len(), self.dof(), "configuration length");
        let n = self.dof();
        let mut x_up = Vec::with_capacity(n);
        let mut rot: Vec<Matrix3<T>> = Vec::with_capacity(n);
        let mut origin: Vec<Vector3<T>> = Vec::with_capacity(n);
        for (i, b) in self.bodies.iter().enumerate() {
            let (r_local, p_local) = match b.kind {
                JointKind::Prismatic(a) => (Matrix3::identity(), b.offset + a.unit::<T>() * q[i]),
                JointKind::Revolute(a) => (a.rotation(q[i]), b.offset),
            };
            x_up.push(motion_transform(&r_local, &p_local));
            match b.parent {
                None => {
                    rot.push(r_local);
                    origin.push(p_local);
                }
                Some(p) => {
                    let rp = rot[p];
                    origin.push(origin[p] + rp * p_local);
                    rot.push(rp * r_local);
                }
            }
        }
        BodyPoses { x_up, rot, origin }
    }

    /// Joint-space inertia matrix (composite rigid body algorithm).
    pub fn mass_matrix_with(&self, poses: &BodyPoses<T>) -> DMatrix<T> {
        let n = self.dof();
        let mut ic: Vec<Matrix6<T>> = self.bodies.iter().map(|b| b.inertia).collect();
        for i in (0..n).rev() {
            if let Some(p) = self.bodies[i].parent {
                let x = &poses.x_up[i];
                let add = x.transpose() * ic[i] * x;
                ic[p] += add;
            }
        }
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            let mut f = ic[i] * self.bodies[i].subspace;
            m[(i, i)] = self.bodies[i].subspace.dot(&f);
            let mut j = i;
            while let Some(p) = self.bodies[j].parent {
                f = poses.x_up[j].transpose() * f;
                j = p;
                let v = self.bodies[j].subspace.dot(&f);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    }

    /// Inverse dynamics (recursive Newton-Euler). With `with_gravity = false`
    /// the gravity load is omitted.
    pub fn inverse_dynamics_with(
        &self,
        poses: &BodyPoses<T>,
        qdot: &DVector<T>,
        qddot: &DVector<T>,
        with_gravity: bool,
    ) -> DVector<T> {
        let n = self.dof();
        let mut a0 = Vector6::zeros();
        if with_gravity {
            a0.fixed_rows_mut::<3>(3).copy_from(&(-self.gravity));
        }
        let mut v: Vec<Vector6<T>> = Vec::with_capacity(n);
        let mut a: Vec<Vector6<T>> = Vec::with_capacity(n);
        let mut f: Vec<Vector6<T>> = Vec::with_capacity(n);
        for (i, b) in self.bodies.iter().enumerate() {
            let vj = b.subspace * qdot[i];
            let (vp, ap) = match b.parent {
                None => (Vector6::zeros(), a0),
                Some(p) => (v[p], a[p]),
            };
            let vi = poses.x_up[i] * vp + vj;
            let ai = poses.x_up[i] * ap + b.subspace * qddot[i] + cross_motion(&vi, &vj);
            f.push(b.inertia * ai + cross_force(&vi, &(b.inertia * vi)));
            v.push(vi);
            a.push(ai);
        }
        let mut tau = DVector::zeros(n);
        for i in (0..n).rev() {
            tau[i] = self.bodies[i].subspace.dot(&f[i]);
            if let Some(p) = self.bodies[i].parent {
                let fp = poses.x_up[i].transpose() * f[i];
                f[p] += fp;
            }
        }
        tau
    }

    pub fn mass_matrix(&self, q: &DVector<T>) -> DMatrix<T> {
        self.mass_matrix_with(&self.poses(q))
    }

    pub fn bias_forces(&self, q: &DVector<T>, qdot: &DVector<T>) -> DVector<T> {
        let zero = DVector::zeros(self.dof());
        self.inverse_dynamics_with(&self.poses(q), qdot, &zero, true)
    }

    pub fn coefficients(&self, q: &DVector<T>, qdot: &DVector<T>) -> DynCoefficients<T> {
        let poses = self.poses(q);
        let zero = DVector::zeros(self.dof());
        DynCoefficients {
            mass: self.mass_matrix_with(&poses),
            bias: self.inverse_dynamics_with(&poses, qdot, &zero, true),
        }
    }

    /// Ancestor bodies of `body` (inclusive), i.e. the DoFs that move it.
    fn support(&self, body: usize) -> impl Iterator<Item = usize> + '_ {
        std::iter::successors(Some(body), move |&b| self.bodies[b].parent)
    }

    fn axis_world(&self, poses: &BodyPoses<T>, k: usize) -> Vector3<T> {
        match self.bodies[k].kind {
            JointKind::Prismatic(a) => {
                let r = match self.bodies[k].parent {
                    None => Matrix3::identity(),
                    Some(p) => poses.rot[p],
                };
                r * a.unit::<T>()
            }
            JointKind::Revolute(a) => poses.rot[k] * a.unit::<T>(),
        }
    }

    /// Writes the 3×N linear Jacobian of world point `x` fixed to `body` into `out`.
    fn point_jacobian_into(
        &self,
        poses: &BodyPoses<T>,
        body: usize,
        x: &Vector3<T>,
        out: &mut nalgebra::DMatrixViewMut<'_, T>,
    ) {
        for k in self.support(body) {
            let axis = self.axis_world(poses, k);
            let col = match self.bodies[k].kind {
                JointKind::Prismatic(_) => axis,
                JointKind::Revolute(_) => axis.cross(&(x - poses.origin[k])),
            };
            out.fixed_view_mut::<3, 1>(0, k).copy_from(&col);
        }
    }

    /// `3J × N` Jacobian of the global joint positions.
    pub fn joint_jacobian_with(&self, poses: &BodyPoses<T>) -> DMatrix<T> {
        let mut jac = DMatrix::zeros(3 * self.num_joints, self.dof());
        for j in 0..self.num_joints {
            let b = Self::joint_body(j);
            let x = poses.origin[b];
            self.point_jacobian_into(poses, b, &x, &mut jac.view_mut((3 * j, 0), (3, self.dof())));
        }
        jac
    }

    /// Jacobian of world points rigidly attached to the links of `joints`.
    pub fn points_jacobian_with(&self, poses: &BodyPoses<T>, joints: &[usize], points: &[Vector3<T>]) -> DMatrix<T> {
        assert_eq!(joints.len(), points.len());
        let mut jac = DMatrix::zeros(3 * points.len(), self.dof());
        for (r, (&j, x)) in joints.iter().zip(points).enumerate() {
            let b = Self::joint_body(j);
            self.point_jacobian_into(poses, b, x, &mut jac.view_mut((3 * r, 0), (3, self.dof())));
        }
        jac
    }

    /// Velocity-product accelerations `J̇q̇` of the joint origins: the world
    /// acceleration each joint would have with `q̈ = 0` and gravity off.
    pub fn jdot_qdot_with(&self, poses: &BodyPoses<T>, qdot: &DVector<T>) -> DVector<T> {
        let joints: Vec<usize> = (0..self.num_joints).collect();
        let zeros = vec![Vector3::zeros(); self.num_joints];
        self.points_bias_acceleration(poses, qdot, &joints, &zeros)
    }

    /// `J̇q̇` for points given by their offsets in the owning joint's link frame.
    pub fn points_bias_acceleration(
        &self,
        poses: &BodyPoses<T>,
        qdot: &DVector<T>,
        joints: &[usize],
        local_points: &[Vector3<T>],
    ) -> DVector<T> {
        let n = self.dof();
        let mut v: Vec<Vector6<T>> = Vec::with_capacity(n);
        let mut a: Vec<Vector6<T>> = Vec::with_capacity(n);
        for (i, b) in self.bodies.iter().enumerate() {
            let vj = b.subspace * qdot[i];
            let (vp, ap) = match b.parent {
                None => (Vector6::zeros(), Vector6::zeros()),
                Some(p) => (v[p], a[p]),
            };
            let vi = poses.x_up[i] * vp + vj;
            let ai = poses.x_up[i] * ap + cross_motion(&vi, &vj);
            v.push(vi);
            a.push(ai);
        }
        let mut out = DVector::zeros(3 * joints.len());
        for (r, (&j, p)) in joints.iter().zip(local_points).enumerate() {
            let b = Self::joint_body(j);
            let w = v[b].fixed_rows::<3>(0).into_owned();
            let vo = v[b].fixed_rows::<3>(3).into_owned();
            let alpha = a[b].fixed_rows::<3>(0).into_owned();
            let ao = a[b].fixed_rows::<3>(3).into_owned();
            let vp = vo + w.cross(p);
            let acc = ao + alpha.cross(p) + w.cross(&vp);
            out.fixed_rows_mut::<3>(3 * r).copy_from(&(poses.rot[b] * acc));
        }
        out
    }

    /// Kinetic plus gravitational potential energy.
    pub fn total_energy(&self, params: &BodyParams<T>, q: &DVector<T>, qdot: &DVector<T>) -> T {
        let poses = self.poses(q);
        let m = self.mass_matrix_with(&poses);
        let kinetic = (qdot.transpose() * &m * qdot)[(0, 0)] * lit(0.5);
        let mut potential = T::zero();
        for (j, link) in params.links.iter().enumerate() {
            let b = Self::joint_body(j);
            let com = poses.origin[b] + poses.rot[b] * link.com;
            potential -= link.mass * self.gravity.dot(&com);
        }
        kinetic + potential
    }

    /// `q̈ = M⁻¹(τ − h)`.
    pub fn forward_dynamics(&self, q: &DVector<T>, qdot: &DVector<T>, tau: &DVector<T>) -> Result<DVector<T>> {
        let c = self.coefficients(q, qdot);
        let chol = c
            .mass
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("mass matrix not positive-definite".into()))?;
        Ok(chol.solve(&(tau - c.bias)))
    }
}

pub fn mass_matrix<T: Scalar>(tree: &KinematicTree<T>, params: &BodyParams<T>, q: &DVector<T>) -> DMatrix<T> {
    MultiBody::new(tree, params).mass_matrix(q)
}

pub fn bias_forces<T: Scalar>(
    tree: &KinematicTree<T>,
    params: &BodyParams<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
) -> DVector<T> {
    MultiBody::new(tree, params).bias_forces(q, qdot)
}

/// Kinematics-only body chain (link masses are irrelevant to Jacobians).
fn kinematic_chain<T: Scalar>(tree: &KinematicTree<T>) -> MultiBody<T> {
    let unit = LinkInertia {
        mass: T::one(),
        com: Vector3::zeros(),
        inertia: Matrix3::identity(),
    };
    let params = BodyParams {
        links: vec![unit; tree.num_joints()],
    };
    MultiBody::new(tree, &params)
}

pub fn joint_jacobian<T: Scalar>(tree: &KinematicTree<T>, q: &DVector<T>) -> DMatrix<T> {
    let mb = kinematic_chain(tree);
    mb.joint_jacobian_with(&mb.poses(q))
}

/// Recomputes `J_c` for the contact points of `contacts` at configuration `q`.
pub fn contact_jacobian<T: Scalar>(tree: &KinematicTree<T>, q: &DVector<T>, contacts: &ContactSet<T>) -> DMatrix<T> {
    let mb = kinematic_chain(tree);
    mb.points_jacobian_with(&mb.poses(q), &contacts.point_joint, &contacts.points)
}

pub fn jdot_qdot<T: Scalar>(tree: &KinematicTree<T>, q: &DVector<T>, qdot: &DVector<T>) -> DVector<T> {
    let mb = kinematic_chain(tree);
    mb.jdot_qdot_with(&mb.poses(q), qdot)
}
