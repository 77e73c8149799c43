//! Physics-aware per-frame motion optimizer.
//!
//! Each frame turns the estimated motion status into desired accelerations
//! with a dual PD controller (joint rotations and joint positions), solves a
//! tracking QP over `z = [q̈ | λ | τ]` subject to the equation of motion,
//! a linearized friction cone and a no-sliding bound on contact joints, and
//! advances the simulated state by one explicit step.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{BodyPoses, ContactSet, DynCoefficients, DynState, MultiBody};
use crate::error::{Error, Result};
use crate::estimator::MotionStatus;
use crate::qp::{solve_qp, KktResiduals, QpProblem, QpSettings, QpStatus};
use crate::rotation::{matrix_to_euler, wrap_angle};
use crate::scalar::{lit, Scalar};
use crate::skeleton::{KinematicTree, Model};

pub const FRAME_DT: f64 = 1.0 / 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdGains {
    pub k_p_theta: f64,
    pub k_d_theta: f64,
    pub k_p_r: f64,
    pub k_d_r: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            k_p_theta: 2400.0,
            k_d_theta: 60.0,
            k_p_r: 3600.0,
            k_d_r: 60.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerWeights {
    pub k_theta: f64,
    pub k_r: f64,
    pub k_lambda: f64,
    pub k_res: f64,
    pub k_tau: f64,
    /// Friction coefficient.
    pub mu: f64,
    /// Sliding speed bound for contact joints, m/s.
    pub sigma: f64,
    /// Side of the contact square drawn under each contact joint, m.
    pub square: f64,
    /// Foot joints below this height are always in contact, m.
    pub foot_height: f64,
    /// Foot joints below this height are in contact when the probability agrees, m.
    pub foot_height_probable: f64,
    /// Other joints below this height are in contact, m.
    pub other_height: f64,
    pub contact_probability: f64,
    /// Height added to every contact joint's Signorini weight, m.
    pub signorini_floor: f64,
    pub dt: f64,
}

impl Default for OptimizerWeights {
    fn default() -> Self {
        Self {
            k_theta: 1.0,
            k_r: 1.0,
            k_lambda: 10.0,
            k_res: 0.1,
            k_tau: 0.01,
            mu: 0.6,
            sigma: 0.01,
            square: 0.2,
            foot_height: 0.005,
            foot_height_probable: 0.03,
            other_height: 0.005,
            contact_probability: 0.5,
            signorini_floor: 0.0,
            dt: FRAME_DT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub gains: PdGains,
    pub weights: OptimizerWeights,
    pub qp: QpSettings,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let g = &self.gains;
        let w = &self.weights;
        let positive = [
            ("k_p_theta", g.k_p_theta),
            ("k_d_theta", g.k_d_theta),
            ("k_p_r", g.k_p_r),
            ("k_d_r", g.k_d_r),
            ("k_theta", w.k_theta),
            ("k_r", w.k_r),
            ("k_lambda", w.k_lambda),
            ("k_res", w.k_res),
            ("k_tau", w.k_tau),
            ("mu", w.mu),
            ("sigma", w.sigma),
            ("square", w.square),
            ("foot_height", w.foot_height),
            ("foot_height_probable", w.foot_height_probable),
            ("other_height", w.other_height),
            ("contact_probability", w.contact_probability),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(w.signorini_floor >= 0.0 && w.signorini_floor.is_finite()) {
            return Err(Error::InvalidConfig("signorini_floor must be non-negative".into()));
        }
        if w.mu >= 1.0 {
            return Err(Error::InvalidConfig(format!("mu must be below 1, got {}", w.mu)));
        }
        if w.contact_probability >= 1.0 {
            return Err(Error::InvalidConfig("contact_probability must be below 1".into()));
        }
        if w.dt != FRAME_DT {
            return Err(Error::InvalidConfig(format!("dt must be 1/60 s, got {}", w.dt)));
        }
        if self.qp.max_iter == 0 {
            return Err(Error::InvalidConfig("qp.max_iter must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("optimizer config serializes")
    }
}

// ---------------------------------------------------------------------------
// Contacts

/// Contact joints and their square-vertex contact points, without Jacobians.
pub fn contact_geometry<T: Scalar>(
    tree: &KinematicTree<T>,
    heights: &[Vector3<T>],
    c: [T; 2],
    w: &OptimizerWeights,
) -> (Vec<usize>, Vec<Vector3<T>>, Vec<usize>) {
    let mut joints = Vec::new();
    for (j, p) in heights.iter().enumerate() {
        let d = p.y;
        let in_contact = match tree.foot_ids.iter().position(|&f| f == j) {
            Some(k) => {
                d < lit(w.foot_height)
                    || (d < lit(w.foot_height_probable) && c.get(k).is_some_and(|&ck| ck > lit(w.contact_probability)))
            }
            None => d < lit(w.other_height),
        };
        if in_contact {
            joints.push(j);
        }
    }
    let half = lit::<T>(w.square * 0.5);
    let mut points = Vec::with_capacity(4 * joints.len());
    let mut owner = Vec::with_capacity(4 * joints.len());
    for &j in &joints {
        let p = heights[j];
        for (sx, sz) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            points.push(Vector3::new(p.x + half * lit(sx), T::zero(), p.z + half * lit(sz)));
            owner.push(j);
        }
    }
    (joints, points, owner)
}

fn contacts_with<T: Scalar>(
    mb: &MultiBody<T>,
    poses: &BodyPoses<T>,
    positions: &[Vector3<T>],
    tree: &KinematicTree<T>,
    c: [T; 2],
    w: &OptimizerWeights,
) -> ContactSet<T> {
    let (joint_ids, points, point_joint) = contact_geometry(tree, positions, c, w);
    let jc = mb.points_jacobian_with(poses, &point_joint, &points);
    let origins: Vec<Vector3<T>> = joint_ids.iter().map(|&j| positions[j]).collect();
    let jj = mb.points_jacobian_with(poses, &joint_ids, &origins);
    ContactSet {
        joint_ids,
        points,
        point_joint,
        jc,
        jj,
    }
}

/// Contact joints and points for configuration `q` with foot contact
/// probabilities `c` (left, right).
pub fn determine_contacts<T: Scalar>(model: &Model<T>, q: &DVector<T>, c: [T; 2], w: &OptimizerWeights) -> ContactSet<T> {
    let mb = MultiBody::new(&model.tree, &model.body);
    let poses = mb.poses(q);
    let positions = joint_positions(&poses, model.tree.num_joints());
    contacts_with(&mb, &poses, &positions, &model.tree, c, w)
}

fn joint_positions<T: Scalar>(poses: &BodyPoses<T>, num_joints: usize) -> Vec<Vector3<T>> {
    (0..num_joints).map(|j| poses.origin[MultiBody::<T>::joint_body(j)]).collect()
}

// ---------------------------------------------------------------------------
// Dual PD controller

/// Euler angles of the parent-relative target rotations, choosing per joint
/// the decomposition branch closest to the current angles.
pub fn euler_targets<T: Scalar>(status: &MotionStatus<T>, tree: &KinematicTree<T>, theta: &DVector<T>) -> Result<DVector<T>> {
    let local = status.local_rotations(tree)?;
    let mut out = DVector::zeros(3 * local.len());
    let pi = T::pi();
    for (j, r) in local.iter().enumerate() {
        let eu = matrix_to_euler(r);
        let e = eu.angles;
        let alt = Vector3::new(e.x + pi, pi - e.y, e.z + pi);
        let cur = theta.fixed_rows::<3>(3 * j);
        let dist = |v: &Vector3<T>| (0..3).fold(T::zero(), |a, k| a + wrap_angle(v[k] - cur[k]).abs());
        let pick = if !eu.gimbal_lock && dist(&alt) < dist(&e) { alt } else { e };
        out.fixed_rows_mut::<3>(3 * j).copy_from(&pick.map(wrap_angle));
    }
    Ok(out)
}

/// `θ̈_des = k_pθ·wrap(target − θ) − k_dθ·θ̇`.
pub fn rotation_controller<T: Scalar>(theta: &DVector<T>, theta_dot: &DVector<T>, target: &DVector<T>, gains: &PdGains) -> DVector<T> {
    let kp = lit::<T>(gains.k_p_theta);
    let kd = lit::<T>(gains.k_d_theta);
    DVector::from_fn(theta.len(), |i, _| kp * wrap_angle(target[i] - theta[i]) - kd * theta_dot[i])
}

/// `r̈_des = k_pr·R_root·v·Δt − k_dr·ṙ` with `v` in the root frame.
pub fn position_controller<T: Scalar>(
    r_dot: &DVector<T>,
    v_est: &DVector<T>,
    root_rotation: &Matrix3<T>,
    gains: &PdGains,
    dt: f64,
) -> DVector<T> {
    let kp = lit::<T>(gains.k_p_r * dt);
    let kd = lit::<T>(gains.k_d_r);
    let mut out = DVector::zeros(r_dot.len());
    for j in 0..r_dot.len() / 3 {
        let v = root_rotation * v_est.fixed_rows::<3>(3 * j);
        let a = v * kp - r_dot.fixed_rows::<3>(3 * j) * kd;
        out.fixed_rows_mut::<3>(3 * j).copy_from(&a);
    }
    out
}

// ---------------------------------------------------------------------------
// Tracking QP

/// Everything the tracking QP needs, evaluated at one `(q, q̇)`.
#[derive(Debug, Clone)]
pub struct TrackingInputs<'a, T: Scalar> {
    pub coeffs: &'a DynCoefficients<T>,
    /// `3J × N` joint position Jacobian.
    pub jac: &'a DMatrix<T>,
    pub jdot_qdot: &'a DVector<T>,
    pub contacts: &'a ContactSet<T>,
    pub qdot: &'a DVector<T>,
    /// Height of every joint, m.
    pub joint_heights: &'a [T],
    pub theta_dd: &'a DVector<T>,
    pub r_dd: &'a DVector<T>,
}

/// Layout of the tracking QP's decision vector and inequality rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpLayout {
    pub dof: usize,
    pub num_points: usize,
    pub num_contact_joints: usize,
}

impl QpLayout {
    pub fn num_vars(&self) -> usize {
        2 * self.dof + 3 * self.num_points
    }

    pub fn lambda_offset(&self) -> usize {
        self.dof
    }

    pub fn tau_offset(&self) -> usize {
        self.dof + 3 * self.num_points
    }

    pub fn friction_rows(&self) -> usize {
        4 * self.num_points
    }

    pub fn sliding_rows(&self) -> usize {
        5 * self.num_contact_joints
    }
}

pub fn assemble_tracking_qp<T: Scalar>(inp: &TrackingInputs<'_, T>, w: &OptimizerWeights) -> Result<QpProblem<T>> {
    let n = inp.coeffs.mass.nrows();
    let shape = |what, expected, actual| Error::Shape { what, expected, actual };
    let nj = inp.joint_heights.len();
    let np = inp.contacts.num_points();
    let ncj = inp.contacts.num_joints();
    if inp.coeffs.mass.ncols() != n || inp.coeffs.bias.len() != n {
        return Err(shape("bias forces", n, inp.coeffs.bias.len()));
    }
    if n != 3 + 3 * nj {
        return Err(shape("degrees of freedom", 3 + 3 * nj, n));
    }
    if inp.jac.nrows() != 3 * nj || inp.jac.ncols() != n {
        return Err(shape("joint Jacobian rows", 3 * nj, inp.jac.nrows()));
    }
    if inp.jdot_qdot.len() != 3 * nj {
        return Err(shape("joint bias accelerations", 3 * nj, inp.jdot_qdot.len()));
    }
    if inp.r_dd.len() != 3 * nj {
        return Err(shape("desired joint accelerations", 3 * nj, inp.r_dd.len()));
    }
    if inp.theta_dd.len() != n - 3 {
        return Err(shape("desired angular accelerations", n - 3, inp.theta_dd.len()));
    }
    if inp.qdot.len() != n {
        return Err(shape("generalized velocity", n, inp.qdot.len()));
    }
    if inp.contacts.jc.nrows() != 3 * np || inp.contacts.jc.ncols() != n || inp.contacts.point_joint.len() != np {
        return Err(shape("contact Jacobian rows", 3 * np, inp.contacts.jc.nrows()));
    }
    if inp.contacts.jj.nrows() != 3 * ncj || inp.contacts.jj.ncols() != n {
        return Err(shape("contact joint Jacobian rows", 3 * ncj, inp.contacts.jj.nrows()));
    }
    let layout = QpLayout {
        dof: n,
        num_points: np,
        num_contact_joints: ncj,
    };
    let nz = layout.num_vars();
    let lo = layout.lambda_offset();
    let to = layout.tau_offset();
    let two = lit::<T>(2.0);

    // ½zᵀHz + gᵀz equals the weighted sum of squares up to a constant.
    let mut h = DMatrix::zeros(nz, nz);
    let mut g = DVector::zeros(nz);
    let kt = lit::<T>(w.k_theta);
    for i in 3..n {
        h[(i, i)] += two * kt;
        g[i] -= two * kt * inp.theta_dd[i - 3];
    }
    let kr = lit::<T>(w.k_r);
    let jtj = inp.jac.tr_mul(inp.jac);
    let resid = inp.jdot_qdot - inp.r_dd;
    let jtr = inp.jac.tr_mul(&resid);
    for c in 0..n {
        for r in 0..n {
            h[(r, c)] += two * kr * jtj[(r, c)];
        }
        g[c] += two * kr * jtr[c];
    }
    let kl = lit::<T>(w.k_lambda);
    for (p, &j) in inp.contacts.point_joint.iter().enumerate() {
        let d = inp.joint_heights[j].max(T::zero()) + lit(w.signorini_floor);
        for k in 0..3 {
            h[(lo + 3 * p + k, lo + 3 * p + k)] += two * kl * d;
        }
    }
    for i in 0..n {
        let k = if i < 6 { w.k_res } else { w.k_tau };
        h[(to + i, to + i)] += two * lit::<T>(k);
    }

    // τ + J_cᵀλ − M q̈ = h
    let mut a_eq = DMatrix::zeros(n, nz);
    a_eq.view_mut((0, 0), (n, n)).copy_from(&(-&inp.coeffs.mass));
    if np > 0 {
        a_eq.view_mut((0, lo), (n, 3 * np)).copy_from(&inp.contacts.jc.transpose());
    }
    for i in 0..n {
        a_eq[(i, to + i)] = T::one();
    }
    let b_eq = inp.coeffs.bias.clone();

    let m_in = layout.friction_rows() + layout.sliding_rows();
    let mut a_in = DMatrix::zeros(m_in, nz);
    let mut b_in = DVector::zeros(m_in);
    let mu = lit::<T>(w.mu);
    let mut row = 0;
    for p in 0..np {
        let base = lo + 3 * p;
        for tangent in [0usize, 2] {
            for sign in [T::one(), -T::one()] {
                a_in[(row, base + tangent)] = sign;
                a_in[(row, base + 1)] = -mu;
                row += 1;
            }
        }
    }
    // ṙ = J_j (q̇ + q̈Δt): ṙ_y ≥ 0, |ṙ_x| ≤ σ, |ṙ_z| ≤ σ.
    let dt = lit::<T>(w.dt);
    let sigma = lit::<T>(w.sigma);
    let vel = &inp.contacts.jj * inp.qdot;
    let mut relaxable = Vec::with_capacity(layout.sliding_rows());
    for cj in 0..ncj {
        let jrow = |k: usize| inp.contacts.jj.row(3 * cj + k);
        for c in 0..n {
            a_in[(row, c)] = -jrow(1)[c] * dt;
        }
        b_in[row] = vel[3 * cj + 1];
        relaxable.push(row);
        row += 1;
        for k in [0usize, 2] {
            for sign in [T::one(), -T::one()] {
                for c in 0..n {
                    a_in[(row, c)] = sign * jrow(k)[c] * dt;
                }
                b_in[row] = sigma - sign * vel[3 * cj + k];
                relaxable.push(row);
                row += 1;
            }
        }
    }
    debug_assert_eq!(row, m_in);
    let p = QpProblem {
        h,
        g,
        a_eq,
        b_eq,
        a_in,
        b_in,
        relaxable,
    };
    p.validate()?;
    Ok(p)
}

/// Value of the weighted tracking objective (without the constant offset
/// dropped by the QP form).
pub fn tracking_energy<T: Scalar>(inp: &TrackingInputs<'_, T>, w: &OptimizerWeights, z: &DVector<T>) -> T {
    let n = inp.coeffs.mass.nrows();
    let np = inp.contacts.num_points();
    let qdd = z.rows(0, n);
    let mut e = T::zero();
    for i in 3..n {
        e += lit::<T>(w.k_theta) * (qdd[i] - inp.theta_dd[i - 3]).powi(2);
    }
    let r = inp.jac * qdd + inp.jdot_qdot - inp.r_dd;
    e += lit::<T>(w.k_r) * r.norm_squared();
    e + regularization_energy(inp, w, z, np)
}

/// `E_reg`: the Signorini, residual-force and torque penalties.
pub fn regularization_energy<T: Scalar>(inp: &TrackingInputs<'_, T>, w: &OptimizerWeights, z: &DVector<T>, np: usize) -> T {
    let n = inp.coeffs.mass.nrows();
    let mut e = T::zero();
    for (p, &j) in inp.contacts.point_joint.iter().enumerate().take(np) {
        let d = inp.joint_heights[j].max(T::zero()) + lit(w.signorini_floor);
        e += lit::<T>(w.k_lambda) * d * z.rows(n + 3 * p, 3).norm_squared();
    }
    let to = n + 3 * np;
    for i in 0..n {
        let k = if i < 6 { w.k_res } else { w.k_tau };
        e += lit::<T>(k) * z[to + i] * z[to + i];
    }
    e
}

// ---------------------------------------------------------------------------
// State update and the per-frame driver

/// `q⁺ = q + q̇Δt`, `q̇⁺ = q̇ + q̈Δt`.
pub fn step_state<T: Scalar>(state: &DynState<T>, qdd: &DVector<T>, dt: f64) -> Result<DynState<T>> {
    if qdd.len() != state.q.len() {
        return Err(Error::Shape {
            what: "generalized acceleration",
            expected: state.q.len(),
            actual: qdd.len(),
        });
    }
    let dt = lit::<T>(dt);
    let next = DynState {
        q: &state.q + &state.qdot * dt,
        qdot: &state.qdot + qdd * dt,
    };
    if !next.q.iter().chain(next.qdot.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("state update"));
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult<T: Scalar> {
    pub q_next: DVector<T>,
    pub qdot_next: DVector<T>,
    pub qddot: DVector<T>,
    /// Generalized forces; the first six entries are the root residual.
    pub tau: DVector<T>,
    /// Contact forces, three per contact point.
    pub lambda: DVector<T>,
    pub contacts: ContactSet<T>,
    pub qp_status: QpStatus,
    pub qp_iterations: usize,
    pub kkt: KktResiduals<T>,
    /// Softened sliding rows and their slack.
    pub relaxation: Vec<(usize, T)>,
    /// `‖τ + J_cᵀλ − Mq̈ − h‖∞` at the solution.
    pub eom_residual: T,
}

impl<T: Scalar> FrameResult<T> {
    pub fn state(&self) -> DynState<T> {
        DynState::new(self.q_next.clone(), self.qdot_next.clone())
    }

    pub fn root_residual(&self) -> Vector3<T> {
        self.tau.fixed_rows::<3>(0).into_owned()
    }

    /// Sum of the vertical contact force components.
    pub fn vertical_force(&self) -> T {
        (0..self.lambda.len() / 3).fold(T::zero(), |a, p| a + self.lambda[3 * p + 1])
    }
}

/// An assembled tracking QP.
#[derive(Debug, Clone)]
pub struct FrameProblem<T: Scalar> {
    pub problem: QpProblem<T>,
    pub contacts: ContactSet<T>,
    pub coeffs: DynCoefficients<T>,
    pub theta_dd: DVector<T>,
    pub r_dd: DVector<T>,
}

/// Per-frame tracking optimizer for one character.
#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar> {
    model: Model<T>,
    mb: MultiBody<T>,
    config: OptimizerConfig,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(model: Model<T>, config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        let mb = MultiBody::new(&model.tree, &model.body);
        Ok(Self { model, mb, config })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn multibody(&self) -> &MultiBody<T> {
        &self.mb
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// The tracking QP for one frame, with the pieces needed to interpret its solution.
    pub fn tracking_problem(&self, state: &DynState<T>, status: &MotionStatus<T>) -> Result<FrameProblem<T>> {
        state.validate()?;
        let tree = &self.model.tree;
        let n = tree.dof();
        let nj = tree.num_joints();
        if state.q.len() != n {
            return Err(Error::Shape {
                what: "configuration",
                expected: n,
                actual: state.q.len(),
            });
        }
        if status.phi.len() != 6 * nj || status.v.len() != 3 * nj {
            return Err(Error::Shape {
                what: "motion status rotations",
                expected: 6 * nj,
                actual: status.phi.len(),
            });
        }
        let finite = status.phi.iter().chain(status.v.iter()).chain(status.c.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::NonFinite("motion status"));
        }
        let w = &self.config.weights;
        let c = status.c.map(|p| p.max(T::zero()).min(T::one()));

        let poses = self.mb.poses(&state.q);
        let positions = joint_positions(&poses, nj);
        let contacts = contacts_with(&self.mb, &poses, &positions, tree, c, w);

        let theta = state.q.rows(3, n - 3).into_owned();
        let theta_dot = state.qdot.rows(3, n - 3).into_owned();
        let target = euler_targets(status, tree, &theta)?;
        let theta_dd = rotation_controller(&theta, &theta_dot, &target, &self.config.gains);

        let jac = self.mb.joint_jacobian_with(&poses);
        let r_dot = &jac * &state.qdot;
        let root_rotation = status.global_rotations()?[0];
        let r_dd = position_controller(&r_dot, &status.v, &root_rotation, &self.config.gains, w.dt);

        let zero = DVector::zeros(n);
        let coeffs = DynCoefficients {
            mass: self.mb.mass_matrix_with(&poses),
            bias: self.mb.inverse_dynamics_with(&poses, &state.qdot, &zero, true),
        };
        let jdot_qdot = self.mb.jdot_qdot_with(&poses, &state.qdot);
        let heights: Vec<T> = positions.iter().map(|p| p.y).collect();
        let inputs = TrackingInputs {
            coeffs: &coeffs,
            jac: &jac,
            jdot_qdot: &jdot_qdot,
            contacts: &contacts,
            qdot: &state.qdot,
            joint_heights: &heights,
            theta_dd: &theta_dd,
            r_dd: &r_dd,
        };
        let problem = assemble_tracking_qp(&inputs, w)?;
        Ok(FrameProblem {
            problem,
            contacts,
            coeffs,
            theta_dd,
            r_dd,
        })
    }

    /// One frame: contacts, dual PD, QP, state update.
    pub fn optimize_frame(&self, state: &DynState<T>, status: &MotionStatus<T>) -> Result<FrameResult<T>> {
        let FrameProblem {
            problem,
            contacts,
            coeffs,
            ..
        } = self.tracking_problem(state, status)?;
        let n = self.model.tree.dof();
        let w = &self.config.weights;
        let sol = solve_qp(&problem, &self.config.qp, None)?;

        let np = contacts.num_points();
        let qdd = sol.z.rows(0, n).into_owned();
        let lambda = sol.z.rows(n, 3 * np).into_owned();
        let tau = sol.z.rows(n + 3 * np, n).into_owned();
        let eom = &tau + contacts.jc.tr_mul(&lambda) - &coeffs.mass * &qdd - &coeffs.bias;
        let next = step_state(state, &qdd, w.dt)?;
        Ok(FrameResult {
            q_next: next.q,
            qdot_next: next.qdot,
            qddot: qdd,
            tau,
            lambda,
            contacts,
            qp_status: sol.status,
            qp_iterations: sol.iterations,
            kkt: sol.kkt,
            relaxation: sol.relaxation,
            eom_residual: eom.amax(),
        })
    }
}
