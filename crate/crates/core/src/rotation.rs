//! Rotation representations: 6D (two matrix columns), intrinsic X-Y-Z Euler
//! angles, and the geodesic distance between rotations.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Six reals holding the first two columns of a rotation matrix, column by
/// column: `[c0.x, c0.y, c0.z, c1.x, c1.y, c1.z]`.
pub type Rot6<T> = [T; 6];

/// Euler angles of one joint together with a gimbal-lock flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles<T: Scalar> {
    pub angles: Vector3<T>,
    /// Set when the middle angle sits at ±90° and the canonical branch
    /// (third angle = 0) was returned.
    pub gimbal_lock: bool,
}

/// Gram-Schmidt reconstruction of a rotation from its 6D encoding.
pub fn rot6d_to_matrix<T: Scalar>(r6: &[T]) -> Result<Matrix3<T>> {
    if r6.len() != 6 {
        return Err(Error::Shape {
            what: "6D rotation",
            expected: 6,
            actual: r6.len(),
        });
    }
    let a1 = Vector3::new(r6[0], r6[1], r6[2]);
    let a2 = Vector3::new(r6[3], r6[4], r6[5]);
    let n1 = a1.norm();
    if !(n1 > T::tiny()) {
        return Err(Error::DegenerateRotation);
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if !(n2 > T::tiny() * (T::one() + a2.norm())) {
        return Err(Error::DegenerateRotation);
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

pub fn matrix_to_rot6d<T: Scalar>(r: &Matrix3<T>) -> Rot6<T> {
    [r[(0, 0)], r[(1, 0)], r[(2, 0)], r[(0, 1)], r[(1, 1)], r[(2, 1)]]
}

pub fn rot_x<T: Scalar>(a: T) -> Matrix3<T> {
    let (s, c) = a.sin_cos();
    Matrix3::new(
        T::one(), T::zero(), T::zero(),
        T::zero(), c, -s,
        T::zero(), s, c,
    )
}

pub fn rot_y<T: Scalar>(a: T) -> Matrix3<T> {
    let (s, c) = a.sin_cos();
    Matrix3::new(
        c, T::zero(), s,
        T::zero(), T::one(), T::zero(),
        -s, T::zero(), c,
    )
}

pub fn rot_z<T: Scalar>(a: T) -> Matrix3<T> {
    let (s, c) = a.sin_cos();
    Matrix3::new(
        c, -s, T::zero(),
        s, c, T::zero(),
        T::zero(), T::zero(), T::one(),
    )
}

/// Intrinsic X-Y-Z: `R = Rx(a) * Ry(b) * Rz(c)`.
pub fn euler_to_matrix<T: Scalar>(e: &Vector3<T>) -> Matrix3<T> {
    rot_x(e.x) * rot_y(e.y) * rot_z(e.z)
}

pub fn matrix_to_euler<T: Scalar>(r: &Matrix3<T>) -> EulerAngles<T> {
    // R02 = sin b, R12 = -sin a cos b, R22 = cos a cos b,
    // R01 = -cos b sin c, R00 = cos b cos c.
    let cb = (r[(0, 0)] * r[(0, 0)] + r[(0, 1)] * r[(0, 1)]).sqrt();
    let b = r[(0, 2)].atan2(cb);
    let lock_eps = lit::<T>(1e-10).max(T::default_epsilon() * lit(8.0));
    if cb > lock_eps {
        let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
        let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
        EulerAngles {
            angles: Vector3::new(a, b, c),
            gimbal_lock: false,
        }
    } else {
        // With c = 0: R11 = cos a, R21 = sin a.
        let a = r[(2, 1)].atan2(r[(1, 1)]);
        EulerAngles {
            angles: Vector3::new(a, b, T::zero()),
            gimbal_lock: true,
        }
    }
}

/// Geodesic angle (radians) between two rotations.
pub fn geodesic_angle<T: Scalar>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    let rel = a.transpose() * b;
    let half = lit::<T>(0.5);
    let v = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    ) * half;
    let cos = (rel.trace() - T::one()) * half;
    v.norm().atan2(cos)
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle<T: Scalar>(x: T) -> T {
    let two_pi = T::two_pi();
    let mut r = x % two_pi;
    if r < T::zero() {
        r += two_pi;
    }
    if r > T::pi() {
        r -= two_pi;
    }
    r
}

/// Projects a near-rotation matrix onto SO(3) (closest in Frobenius norm).
pub fn orthonormalize<T: Scalar>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < T::zero() {
        let mut u2 = u;
        let mut col = u2.column_mut(2);
        col.neg_mut();
        r = u2 * vt;
    }
    r
}

/// Rotation vector (axis times angle) of `r`.
pub fn log_map<T: Scalar>(r: &Matrix3<T>) -> Vector3<T> {
    let half = lit::<T>(0.5);
    let v = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    ) * half;
    let s = v.norm();
    let c = (r.trace() - T::one()) * half;
    let angle = s.atan2(c);
    if s > lit(1e-7) {
        return v * (angle / s);
    }
    if c > T::zero() {
        // small angle: v ≈ sin(angle) axis
        return v;
    }
    // angle close to π: axis from the symmetric part
    let b = (r + r.transpose()) * half - Matrix3::identity() * c;
    let mut best = 0;
    for k in 1..3 {
        if b[(k, k)] > b[(best, best)] {
            best = k;
        }
    }
    let axis = b.column(best).into_owned();
    let axis = axis / axis.norm();
    axis * angle
}

/// Rotation from a rotation vector (Rodrigues).
pub fn exp_map<T: Scalar>(w: &Vector3<T>) -> Matrix3<T> {
    let angle = w.norm();
    if angle < T::tiny() {
        return Matrix3::identity() + skew(w);
    }
    let k = skew(&(w / angle));
    let (s, c) = angle.sin_cos();
    Matrix3::identity() + k * s + k * k * (T::one() - c)
}

pub fn skew<T: Scalar>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(), -v.z, v.y,
        v.z, T::zero(), -v.x,
        -v.y, v.x, T::zero(),
    )
}
