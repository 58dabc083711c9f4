//! Dense linear algebra and rigid-body helpers shared by every controller.
//!
//! Six-vectors are always ordered linear-first: `[force; torque]` for wrenches
//! and `[linear; angular]` for twists.

use nalgebra::{DMatrix, Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;
pub type MatMN = DMatrix<f64>;

/// Singular values below this fraction of the largest are treated as zero.
pub const SVD_RELATIVE_TOL: f64 = 1e-10;

/// Rigid pose: world-frame position and body-to-world rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: Mat3,
}

impl Pose {
    pub fn new(position: Vec3, rotation: Mat3) -> Self {
        Self { position, rotation }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), Mat3::identity())
    }

    /// `self ∘ other`: express `other` (given in this pose's frame) in the parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.rotation * other.position,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            position: -(rt * self.position),
            rotation: rt,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.position + self.rotation * p
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Spatial velocity in the world frame.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vec6(&self) -> Vec6 {
        stack6(&self.linear, &self.angular)
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        let (linear, angular) = split6(v);
        Self { linear, angular }
    }
}

/// Force/torque pair. The frame is whatever the caller says it is.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vec3,
    pub torque: Vec3,
}

impl Wrench {
    pub fn new(force: Vec3, torque: Vec3) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_vec6(&self) -> Vec6 {
        stack6(&self.force, &self.torque)
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        let (force, torque) = split6(v);
        Self { force, torque }
    }

    pub fn is_finite(&self) -> bool {
        self.force.iter().chain(self.torque.iter()).all(|x| x.is_finite())
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

impl std::ops::Sub for Wrench {
    type Output = Wrench;
    fn sub(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force - rhs.force, self.torque - rhs.torque)
    }
}

impl std::ops::Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench::new(-self.force, -self.torque)
    }
}

pub fn stack6(top: &Vec3, bottom: &Vec3) -> Vec6 {
    Vec6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

pub fn split6(v: &Vec6) -> (Vec3, Vec3) {
    (Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Moore-Penrose inverse when `damping == 0`, damped least-squares inverse otherwise.
///
/// The undamped form goes through the SVD and drops singular values below
/// [`SVD_RELATIVE_TOL`] times the largest one. The damped form solves the
/// regularized normal equations on the smaller side of the matrix.
pub fn pseudoinverse(m: &MatMN, damping: f64) -> MatMN {
    debug_assert!(damping >= 0.0, "damping must be non-negative");
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return MatMN::zeros(cols, rows);
    }
    if damping > 0.0 {
        let lambda2 = damping * damping;
        if rows <= cols {
            let gram = m * m.transpose() + MatMN::identity(rows, rows) * lambda2;
            if let Some(chol) = gram.cholesky() {
                return m.transpose() * chol.inverse();
            }
        } else {
            let gram = m.transpose() * m + MatMN::identity(cols, cols) * lambda2;
            if let Some(chol) = gram.cholesky() {
                return chol.inverse() * m.transpose();
            }
        }
        return svd_inverse(m, |s| s / (s * s + lambda2));
    }
    svd_inverse(m, |s| 1.0 / s)
}

/// Full SVD `(U, s, V)` with `m = U diag(s) Vᵀ`, `U` square in the row
/// count and `V` square in the column count.
fn svd_full(m: &MatMN) -> (MatMN, Vec<f64>, MatMN) {
    let (rows, cols) = m.shape();
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let svd = fm.svd().expect("SVD did not converge");
    let (u, v, s) = (svd.U(), svd.V(), svd.S().column_vector());
    let s: Vec<f64> = (0..rows.min(cols)).map(|k| s[k]).collect();
    (
        MatMN::from_fn(rows, rows, |i, j| u[(i, j)]),
        s,
        MatMN::from_fn(cols, cols, |i, j| v[(i, j)]),
    )
}

fn svd_inverse(m: &MatMN, invert: impl Fn(f64) -> f64) -> MatMN {
    let (u, sv, v) = svd_full(m);
    let s_max = sv.iter().cloned().fold(0.0, f64::max);
    let cutoff = SVD_RELATIVE_TOL * s_max;
    let mut out = MatMN::zeros(m.ncols(), m.nrows());
    for (k, &s) in sv.iter().enumerate() {
        if s <= cutoff || s == 0.0 {
            continue;
        }
        out += v.column(k) * u.column(k).transpose() * invert(s);
    }
    out
}

/// Orthonormal basis of the null space of `m`, one column per null direction.
///
/// A full-column-rank input yields a matrix with zero columns.
pub fn null_space_basis(m: &MatMN) -> MatMN {
    let cols = m.ncols();
    if cols == 0 {
        return MatMN::zeros(0, 0);
    }
    let (_, sv, v) = svd_full(m);
    let s_max = sv.iter().cloned().fold(0.0, f64::max);
    let cutoff = SVD_RELATIVE_TOL * s_max.max(f64::MIN_POSITIVE);
    let null: Vec<usize> = (0..cols).filter(|&k| k >= sv.len() || sv[k] <= cutoff).collect();
    let mut basis = MatMN::zeros(cols, null.len());
    for (j, &k) in null.iter().enumerate() {
        basis.set_column(j, &v.column(k));
    }
    basis
}

/// Smallest and largest singular values.
pub fn singular_value_range(m: &MatMN) -> (f64, f64) {
    let (rows, cols) = m.shape();
    let fm = faer::Mat::<f64>::from_fn(rows, cols, |i, j| m[(i, j)]);
    let s = fm.singular_values().expect("SVD did not converge");
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.iter().cloned().fold(0.0, f64::max);
    (lo, hi)
}

/// Rodrigues map from a rotation vector to a rotation matrix.
pub fn rotvec_to_matrix(axis_angle: &Vec3) -> Mat3 {
    let theta2 = axis_angle.norm_squared();
    let k = skew(axis_angle);
    let (a, b) = if theta2 < 1e-12 {
        // Taylor series of sin(t)/t and (1 - cos t)/t^2.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Inverse of [`rotvec_to_matrix`], returning an angle in `[0, π]`.
pub fn matrix_to_rotvec(r: &Mat3) -> Vec3 {
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin_theta = 0.5 * vee.norm();
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-6 {
        // R ≈ I + [w]x, first-order inverse is exact to O(theta^3).
        return vee * 0.5;
    }
    if theta < std::f64::consts::PI - 1e-3 {
        return vee * (theta / (2.0 * sin_theta));
    }

    // Near π the antisymmetric part vanishes; recover the axis from the
    // symmetric part R + Rᵀ = 2 cos θ I + 2 (1 - cos θ) n nᵀ.
    let b = (r + r.transpose()) * 0.5 - Mat3::identity() * cos_theta;
    let scale = 1.0 - cos_theta;
    let diag = Vec3::new(b[(0, 0)], b[(1, 1)], b[(2, 2)]) / scale;
    let i = diag.imax();
    let mut axis = Vec3::zeros();
    axis[i] = diag[i].max(0.0).sqrt();
    for j in 0..3 {
        if j != i {
            axis[j] = b[(i, j)] / (scale * axis[i]);
        }
    }
    axis.normalize_mut();
    // Match the sign of the residual antisymmetric part.
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

pub fn rot_x(angle: f64) -> Mat3 {
    rotvec_to_matrix(&Vec3::new(angle, 0.0, 0.0))
}

pub fn rot_y(angle: f64) -> Mat3 {
    rotvec_to_matrix(&Vec3::new(0.0, angle, 0.0))
}

pub fn rot_z(angle: f64) -> Mat3 {
    rotvec_to_matrix(&Vec3::new(0.0, 0.0, angle))
}

/// Re-orthonormalize a rotation that has drifted through repeated products.
pub fn orthonormalize(r: &Mat3) -> Mat3 {
    let x = r.column(0).normalize();
    let y = (r.column(1) - x * x.dot(&r.column(1))).normalize();
    let z = x.cross(&y);
    Mat3::from_columns(&[x, y, z])
}

pub fn is_rotation(r: &Mat3, tol: f64) -> bool {
    (r * r.transpose() - Mat3::identity()).amax() <= tol && (r.determinant() - 1.0).abs() <= tol
}
