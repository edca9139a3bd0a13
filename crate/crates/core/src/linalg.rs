//! Small fixed-size vector and matrix types with the reverse-mode helpers the
//! differentiable modules need (normalization, cross products, quaternions,
//! axis-angle rotations).

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::real::{lit, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    #[inline]
    pub fn unit(axis: usize) -> Self {
        let mut v = Self::zero();
        v[axis] = T::one();
        v
    }

    pub fn from_array(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_f64(a: [f64; 3]) -> Self {
        Self::new(lit(a[0]), lit(a[1]), lit(a[2]))
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    #[inline]
    pub fn normalized(self) -> Self {
        self * (T::one() / self.norm())
    }

    #[inline]
    pub fn scale(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    #[inline]
    pub fn mul_elem(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn max_abs(self) -> T {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn min_elem(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max_elem(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl<T: Real> SubAssign for Vec3<T> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        self.x -= o.x;
        self.y -= o.y;
        self.z -= o.z;
    }
}

impl<T> Index<usize> for Vec3<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T> IndexMut<usize> for Vec3<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        match i {
            0 => &mut self.x,
            1 => &mut self.y,
            2 => &mut self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

/// Row-major 3×3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn zero() -> Self {
        Self {
            m: [[T::zero(); 3]; 3],
        }
    }

    pub fn identity() -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            r.m[i][i] = T::one();
        }
        r
    }

    pub fn from_rows(r0: Vec3<T>, r1: Vec3<T>, r2: Vec3<T>) -> Self {
        Self {
            m: [r0.to_array(), r1.to_array(), r2.to_array()],
        }
    }

    pub fn from_cols(c0: Vec3<T>, c1: Vec3<T>, c2: Vec3<T>) -> Self {
        Self::from_rows(c0, c1, c2).transpose()
    }

    pub fn diag(d: Vec3<T>) -> Self {
        let mut r = Self::zero();
        r.m[0][0] = d.x;
        r.m[1][1] = d.y;
        r.m[2][2] = d.z;
        r
    }

    /// Skew-symmetric cross-product matrix: `skew(a) * b == a × b`.
    pub fn skew(a: Vec3<T>) -> Self {
        let z = T::zero();
        Self {
            m: [[z, -a.z, a.y], [a.z, z, -a.x], [-a.y, a.x, z]],
        }
    }

    /// `a bᵀ`
    pub fn outer(a: Vec3<T>, b: Vec3<T>) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = a[i] * b[j];
            }
        }
        r
    }

    #[inline]
    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::from_array(self.m[i])
    }

    pub fn set_col(&mut self, j: usize, v: Vec3<T>) {
        for i in 0..3 {
            self.m[i][j] = v[i];
        }
    }

    pub fn transpose(&self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = self.m[j][i];
            }
        }
        r
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }

    /// `selfᵀ v`
    #[inline]
    pub fn tmul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.m[0][0] * v.x + self.m[1][0] * v.y + self.m[2][0] * v.z,
            self.m[0][1] * v.x + self.m[1][1] * v.y + self.m[2][1] * v.z,
            self.m[0][2] * v.x + self.m[1][2] * v.y + self.m[2][2] * v.z,
        )
    }

    pub fn scale(&self, s: T) -> Self {
        let mut r = *self;
        for row in r.m.iter_mut() {
            for v in row.iter_mut() {
                *v *= s;
            }
        }
        r
    }

    /// Frobenius inner product.
    pub fn frob_dot(&self, o: &Self) -> T {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                s += self.m[i][j] * o.m[i][j];
            }
        }
        s
    }

    pub fn det(&self) -> T {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn max_abs_diff(&self, o: &Self) -> T {
        let mut d = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                d = d.max((self.m[i][j] - o.m[i][j]).abs());
            }
        }
        d
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut r = Mat3::<U>::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = U::lit(self.m[i][j].to_f64_lossy());
            }
        }
        r
    }
}

impl<T: Real> Mul for Mat3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut r = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        r
    }
}

impl<T: Real> Add for Mat3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut r = self;
        r += o;
        r
    }
}

impl<T: Real> Sub for Mat3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        let mut r = self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] -= o.m[i][j];
            }
        }
        r
    }
}

impl<T: Real> AddAssign for Mat3<T> {
    fn add_assign(&mut self, o: Self) {
        for i in 0..3 {
            for j in 0..3 {
                self.m[i][j] += o.m[i][j];
            }
        }
    }
}

/// Backward of `e = a / |a|`: maps `de` to `da`.
#[inline]
pub fn normalize_backward<T: Real>(a: Vec3<T>, grad_e: Vec3<T>) -> Vec3<T> {
    let n = a.norm();
    let e = a * (T::one() / n);
    (grad_e - e * e.dot(grad_e)) * (T::one() / n)
}

/// Backward of `c = a × b`: returns `(da, db)`.
#[inline]
pub fn cross_backward<T: Real>(a: Vec3<T>, b: Vec3<T>, grad_c: Vec3<T>) -> (Vec3<T>, Vec3<T>) {
    (b.cross(grad_c), grad_c.cross(a))
}

/// Quaternion stored as `[w, x, y, z]`.
pub type Quat<T> = [T; 4];

pub fn quat_identity<T: Real>() -> Quat<T> {
    [T::one(), T::zero(), T::zero(), T::zero()]
}

pub fn quat_norm<T: Real>(q: &Quat<T>) -> T {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize<T: Real>(q: &Quat<T>) -> Quat<T> {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Backward of quaternion normalization.
pub fn quat_normalize_backward<T: Real>(q: &Quat<T>, grad_unit: &Quat<T>) -> Quat<T> {
    let n = quat_norm(q);
    let u = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let d = u[0] * grad_unit[0] + u[1] * grad_unit[1] + u[2] * grad_unit[2] + u[3] * grad_unit[3];
    let mut out = [T::zero(); 4];
    for i in 0..4 {
        out[i] = (grad_unit[i] - u[i] * d) / n;
    }
    out
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul<T: Real>(a: &Quat<T>, b: &Quat<T>) -> Quat<T> {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Backward of [`quat_mul`]: returns `(da, db)`.
pub fn quat_mul_backward<T: Real>(a: &Quat<T>, b: &Quat<T>, g: &Quat<T>) -> (Quat<T>, Quat<T>) {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    let [gw, gx, gy, gz] = *g;
    let da = [
        gw * bw + gx * bx + gy * by + gz * bz,
        -gw * bx + gx * bw - gy * bz + gz * by,
        -gw * by + gx * bz + gy * bw - gz * bx,
        -gw * bz - gx * by + gy * bx + gz * bw,
    ];
    let db = [
        gw * aw + gx * ax + gy * ay + gz * az,
        -gw * ax + gx * aw + gy * az - gz * ay,
        -gw * ay - gx * az + gy * aw + gz * ax,
        -gw * az + gx * ay - gy * ax + gz * aw,
    ];
    (da, db)
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_mat<T: Real>(q: &Quat<T>) -> Mat3<T> {
    let [w, x, y, z] = *q;
    let one = T::one();
    let two = lit::<T>(2.0);
    Mat3 {
        m: [
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ],
    }
}

/// Backward of [`quat_to_mat`] with respect to the (unit) quaternion entries.
pub fn quat_to_mat_backward<T: Real>(q: &Quat<T>, g: &Mat3<T>) -> Quat<T> {
    let [w, x, y, z] = *q;
    let g = &g.m;
    let two = lit::<T>(2.0);
    let four = lit::<T>(4.0);
    let dw = two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]);
    let dx = two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - w * g[1][2] + z * g[2][0] + w * g[2][1])
        - four * x * (g[1][1] + g[2][2]);
    let dy = two * (x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1])
        - four * y * (g[0][0] + g[2][2]);
    let dz = two * (-w * g[0][1] + x * g[0][2] + w * g[1][0] + y * g[1][2] + x * g[2][0] + y * g[2][1])
        - four * z * (g[0][0] + g[1][1]);
    [dw, dx, dy, dz]
}

/// Unit quaternion of a rotation matrix (Shepperd's method).
pub fn mat_to_quat<T: Real>(r: &Mat3<T>) -> Quat<T> {
    let m = &r.m;
    let one = T::one();
    let quarter = lit::<T>(0.25);
    let trace = m[0][0] + m[1][1] + m[2][2];
    let q = if trace > T::zero() {
        let s = (trace + one).sqrt() * lit(2.0);
        [quarter * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s]
    } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
        let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * lit(2.0);
        [(m[2][1] - m[1][2]) / s, quarter * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s]
    } else if m[1][1] > m[2][2] {
        let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * lit(2.0);
        [(m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, quarter * s, (m[1][2] + m[2][1]) / s]
    } else {
        let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * lit(2.0);
        [(m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, quarter * s]
    };
    let q = quat_normalize(&q);
    if q[0] < T::zero() {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

fn small_angle_threshold<T: Real>() -> T {
    T::epsilon().cbrt()
}

/// Rodrigues' formula: rotation matrix of an axis-angle vector (radians).
pub fn axis_angle_to_mat<T: Real>(v: Vec3<T>) -> Mat3<T> {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let k = Mat3::skew(v);
    let k2 = k * k;
    let (a, b) = if theta < small_angle_threshold::<T>() {
        (T::one() - theta2 / lit(6.0), lit::<T>(0.5) - theta2 / lit(24.0))
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
    };
    Mat3::identity() + k.scale(a) + k2.scale(b)
}

/// Backward of [`axis_angle_to_mat`].
///
/// Uses `∂R/∂v_i = (v_i [v]× + [v × (I − R) e_i]×) R / |v|²` away from the
/// origin and the second-order expansion of `R` near it.
pub fn axis_angle_to_mat_backward<T: Real>(v: Vec3<T>, grad_r: &Mat3<T>) -> Vec3<T> {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let mut out = Vec3::zero();
    if theta < small_angle_threshold::<T>() {
        let k = Mat3::skew(v);
        let half = lit::<T>(0.5);
        for i in 0..3 {
            let ei = Mat3::skew(Vec3::unit(i));
            let d = ei + (ei * k + k * ei).scale(half);
            out[i] = grad_r.frob_dot(&d);
        }
    } else {
        let r = axis_angle_to_mat(v);
        let i_minus_r = Mat3::identity() - r;
        let k = Mat3::skew(v);
        for i in 0..3 {
            let w = v.cross(i_minus_r.col(i));
            let d = (k.scale(v[i]) + Mat3::skew(w)) * r;
            out[i] = grad_r.frob_dot(&d.scale(T::one() / theta2));
        }
    }
    out
}

/// Axis-angle vector of a rotation matrix.
pub fn mat_to_axis_angle<T: Real>(r: &Mat3<T>) -> Vec3<T> {
    let q = mat_to_quat(r);
    let s = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if s < T::epsilon() {
        return Vec3::new(q[1], q[2], q[3]) * lit(2.0);
    }
    let angle = lit::<T>(2.0) * s.atan2(q[0]);
    Vec3::new(q[1], q[2], q[3]) * (angle / s)
}

/// Geodesic angle between two rotations (radians).
pub fn rotation_angle_between<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> T {
    let rel = a.transpose() * *b;
    let c = ((rel.m[0][0] + rel.m[1][1] + rel.m[2][2] - T::one()) * lit(0.5))
        .max(-T::one())
        .min(T::one());
    c.acos()
}
