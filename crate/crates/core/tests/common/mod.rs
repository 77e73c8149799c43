//! Independent oracles shared by the unit suites and the acceptance run.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, UnitQuaternion, Vector2, Vector3};
use physmocap::qp::QpProblem;
use physmocap::rotation::log_map;
use physmocap::skeleton::{forward_kinematics, BodyParams, Joint, KinematicTree, LinkInertia, Model};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FPS: f64 = 60.0;

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

pub fn joint(name: &str, parent: Option<usize>, offset: [f64; 3]) -> Joint<f64> {
    Joint {
        name: name.into(),
        parent,
        offset: Vector3::from(offset),
    }
}

// ---------------------------------------------------------------------------
// Dynamics

pub const L1: f64 = 0.7;
pub const LC1: f64 = 0.3;
pub const LC2: f64 = 0.45;
pub const M1: f64 = 2.5;
pub const M2: f64 = 1.7;
pub const I1: f64 = 0.11;
pub const I2: f64 = 0.07;

/// Two links swinging about z: link 0 hangs from the root joint, link 1 from joint 1.
pub fn pendulum() -> (KinematicTree<f64>, BodyParams<f64>) {
    let tree = KinematicTree::new(
        vec![joint("a", None, [0.0; 3]), joint("b", Some(0), [0.0, -L1, 0.0])],
        vec![1],
        vec![],
    )
    .unwrap();
    let link = |m: f64, lc: f64, izz: f64| LinkInertia {
        mass: m,
        com: Vector3::new(0.0, -lc, 0.0),
        inertia: Matrix3::from_diagonal(&Vector3::new(0.05, 0.04, izz)),
    };
    let params = BodyParams {
        links: vec![link(M1, LC1, I1), link(M2, LC2, I2)],
    };
    (tree, params)
}

/// Textbook planar two-link inertia `[m11, m12, m22]` at elbow angle `q2`.
pub fn pendulum_inertia(q2: f64) -> [f64; 3] {
    let c2 = q2.cos();
    [
        I1 + I2 + M1 * LC1 * LC1 + M2 * (L1 * L1 + LC2 * LC2 + 2.0 * L1 * LC2 * c2),
        I2 + M2 * (LC2 * LC2 + L1 * LC2 * c2),
        I2 + M2 * LC2 * LC2,
    ]
}

/// Three cylinders chained under a floating root, used for free-fall audits.
pub fn falling_chain() -> (KinematicTree<f64>, BodyParams<f64>) {
    let tree = KinematicTree::new(
        vec![
            joint("a", None, [0.0; 3]),
            joint("b", Some(0), [0.0, -0.4, 0.05]),
            joint("c", Some(1), [0.1, -0.35, 0.0]),
        ],
        vec![2],
        vec![],
    )
    .unwrap();
    let params = BodyParams {
        links: vec![
            LinkInertia::cylinder(6.0, 0.1, Vector3::new(0.0, -0.4, 0.05)),
            LinkInertia::cylinder(3.0, 0.05, Vector3::new(0.1, -0.35, 0.0)),
            LinkInertia::cylinder(1.0, 0.04, Vector3::new(0.0, -0.2, 0.1)),
        ],
    };
    (tree, params)
}

/// One classical RK4 step of `q̈ = f(q, q̇)`.
pub fn rk4_step(
    q: &mut DVector<f64>,
    qd: &mut DVector<f64>,
    dt: f64,
    accel: impl Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
) {
    let k1v = accel(q, qd);
    let k1x = qd.clone();
    let k2x = &*qd + &k1v * (dt / 2.0);
    let k2v = accel(&(&*q + &k1x * (dt / 2.0)), &k2x);
    let k3x = &*qd + &k2v * (dt / 2.0);
    let k3v = accel(&(&*q + &k2x * (dt / 2.0)), &k3x);
    let k4x = &*qd + &k3v * dt;
    let k4v = accel(&(&*q + &k3x * dt), &k4x);
    *q += (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (dt / 6.0);
    *qd += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
}

/// Central-difference Jacobian of `f` at `q`.
pub fn numeric_jacobian(q: &DVector<f64>, h: f64, f: impl Fn(&DVector<f64>) -> DVector<f64>) -> DMatrix<f64> {
    let rows = f(q).len();
    let mut out = DMatrix::zeros(rows, q.len());
    for k in 0..q.len() {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[k] += h;
        qm[k] -= h;
        out.set_column(k, &((f(&qp) - f(&qm)) / (2.0 * h)));
    }
    out
}

// ---------------------------------------------------------------------------
// QP

/// Strictly convex QP solved by trying every active set.
pub fn brute_force_qp(p: &QpProblem<f64>) -> Option<DVector<f64>> {
    let n = p.num_vars();
    let me = p.a_eq.nrows();
    let mi = p.a_in.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << mi) {
        let act: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let k = me + act.len();
        if k > n {
            continue;
        }
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n).copy_from(&(-&p.g));
        for r in 0..me {
            for j in 0..n {
                kkt[(n + r, j)] = p.a_eq[(r, j)];
                kkt[(j, n + r)] = p.a_eq[(r, j)];
            }
            rhs[n + r] = p.b_eq[r];
        }
        for (r, &i) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + r, j)] = p.a_in[(i, j)];
                kkt[(j, n + me + r)] = p.a_in[(i, j)];
            }
            rhs[n + me + r] = p.b_in[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let z = sol.rows(0, n).into_owned();
        let mult_ok = (0..act.len()).all(|r| sol[n + me + r] >= -1e-9);
        let feas = (&p.a_in * &z - &p.b_in).max() <= 1e-9;
        if mult_ok && feas {
            let f = p.objective(&z);
            if best.as_ref().map_or(true, |(b, _)| f < *b) {
                best = Some((f, z));
            }
        }
    }
    best.map(|(_, z)| z)
}

pub fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem<f64> {
    let n = rng.random_range(2..8);
    let me = rng.random_range(0..n.min(3));
    let mi = rng.random_range(1..=8);
    let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
    let a_eq = DMatrix::from_fn(me, n, |_, _| rng.random_range(-1.0..1.0));
    let a_in = DMatrix::from_fn(mi, n, |_, _| rng.random_range(-1.0..1.0));
    // Feasible by construction: a random point satisfies everything.
    let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let b_eq = &a_eq * &z0;
    let b_in = &a_in * &z0 + DVector::from_fn(mi, |_, _| rng.random_range(0.0..1.0));
    QpProblem {
        h,
        g,
        a_eq,
        b_eq,
        a_in,
        b_in,
        relaxable: Vec::new(),
    }
}

// ---------------------------------------------------------------------------
// Metrics

pub fn random_pose(m: &Model<f64>, rng: &mut ChaCha8Rng, spread: f64) -> DVector<f64> {
    let mut q = m.standing_tpose();
    for i in 0..q.len() {
        q[i] += rng.random_range(-spread..spread);
    }
    q
}

pub fn quat_angle_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let qa = UnitQuaternion::from_matrix(a);
    let qb = UnitQuaternion::from_matrix(b);
    let d = qa.inverse() * qb;
    (2.0 * d.imag().norm().atan2(d.w.abs())).to_degrees()
}

/// Contact square of side 0.2 around each foot at ground level.
pub fn foot_contacts(m: &Model<f64>, q: &DVector<f64>) -> Vec<Vector3<f64>> {
    let fk = forward_kinematics(&m.tree, q);
    let mut pts = Vec::new();
    for &f in &[10, 11] {
        let p = fk.positions[f];
        for (dx, dz) in [(-0.1, -0.1), (0.1, -0.1), (0.1, 0.1), (-0.1, 0.1)] {
            pts.push(Vector3::new(p.x + dx, 0.0, p.z + dz));
        }
    }
    pts
}

pub fn square(cx: f64, cz: f64, half: f64) -> Vec<Vector3<f64>> {
    [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|(a, b)| Vector3::new(cx + a * half, 0.0, cz + b * half))
        .collect()
}

pub fn com(m: &Model<f64>, q: &DVector<f64>) -> Vector3<f64> {
    let fk = forward_kinematics(&m.tree, q);
    let mut c = Vector3::zeros();
    let mut total = 0.0;
    for (j, l) in m.body.links.iter().enumerate() {
        c += (fk.positions[j] + fk.rotations[j] * l.com) * l.mass;
        total += l.mass;
    }
    c / total
}

/// Joint positions of a point moving along `f` for `frames` samples.
pub fn trajectory(frames: usize, f: impl Fn(f64) -> Vector3<f64>) -> Vec<Vec<Vector3<f64>>> {
    (0..frames).map(|k| vec![f(k as f64 / FPS); 3]).collect()
}

pub fn straight_walk(len: f64, frames: usize) -> Vec<Vector3<f64>> {
    (0..=frames).map(|k| Vector3::new(0.0, 0.9, len * k as f64 / frames as f64)).collect()
}

/// ZMP from horizontal moment balance of all links about ground points,
/// without going through the COM.
pub fn brute_force_zmp(m: &Model<f64>, seq: &[DVector<f64>], t: usize) -> Vector2<f64> {
    let g = Vector3::new(0.0, -9.81, 0.0);
    let frames: Vec<_> = seq.iter().map(|q| forward_kinematics(&m.tree, q)).collect();
    let links = &m.body.links;
    let world = |k: usize, j: usize| frames[k].positions[j] + frames[k].rotations[j] * links[j].com;
    let momentum = |a: usize, b: usize, p: Vector3<f64>| {
        let mut l = Vector3::zeros();
        for (j, link) in links.iter().enumerate() {
            let (ra, rb) = (frames[a].rotations[j], frames[b].rotations[j]);
            let w = log_map(&(rb * ra.transpose())) * FPS;
            let v = (world(b, j) - world(a, j)) * FPS;
            let mid = (world(a, j) + world(b, j)) * 0.5;
            l += ra * link.inertia * ra.transpose() * w + (mid - p).cross(&v) * link.mass;
        }
        l
    };
    // Horizontal residual moment about a ground point p; affine in p.
    let residual = |p: Vector3<f64>| {
        let ldot = (momentum(t, t + 1, p) - momentum(t - 1, t, p)) * FPS;
        let grav: Vector3<f64> = links.iter().enumerate().map(|(j, l)| (world(t, j) - p).cross(&(g * l.mass))).sum();
        let r = ldot - grav;
        Vector2::new(r.x, r.z)
    };
    let r0 = residual(Vector3::zeros());
    let rx = residual(Vector3::x()) - r0;
    let rz = residual(Vector3::z()) - r0;
    let a = Matrix2::from_columns(&[rx, rz]);
    let sol = a.lu().solve(&(-r0)).unwrap();
    Vector2::new(sol.x, sol.y)
}

pub fn tipping_motion(m: &Model<f64>, frames: usize) -> Vec<DVector<f64>> {
    (0..frames)
        .map(|k| {
            let t = k as f64 / FPS;
            let mut q = m.standing_tpose();
            let pitch = 0.8 * t * t;
            q[3] += pitch;
            q[0] += 0.1 * t;
            q[3 + 3 * 16 + 2] += 1.5 * t;
            q[3 + 3 * 1] -= 2.0 * t * t;
            q
        })
        .collect()
}
