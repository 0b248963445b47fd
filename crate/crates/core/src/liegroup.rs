//! SO(3) / SE(3) primitives used by the potential and the controller.
//!
//! Twists are ordered `(omega, v)`: angular part first, linear part second.
//! Poses are stored as a rotation block plus a translation and are turned
//! into 4x4 homogeneous matrices on demand.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

/// Frobenius tolerance on `R^T R - I` and on `det(R) - 1`.
pub const ORTHO_TOL: f64 = 1e-9;
/// Tolerance on `|u| - 1` for rotation axes.
pub const AXIS_TOL: f64 = 1e-9;
/// Largest entry allowed outside the wedge sparsity pattern in [`vee`].
pub const TANGENT_TOL: f64 = 1e-9;
/// Below this angle the coefficients of the screw map use Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-4;

/// `y^x`, the matrix with `y^x z = y x z`.
pub fn skew(y: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -y.z, y.y, y.z, 0.0, -y.x, -y.y, y.x, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Checks orthonormality and orientation before wrapping `m`.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let r = Rotation(m);
        let residual = r.orthogonality_error();
        let det = m.determinant();
        if residual > ORTHO_TOL || (det - 1.0).abs() > ORTHO_TOL {
            return Err(Error::NotRotation { residual, det });
        }
        Ok(r)
    }

    /// Wraps `m` without checking. Used for intermediate integrator stages.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `|R^T R - I|_F`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }

    /// Nearest proper rotation in the Frobenius sense (polar projection).
    pub fn renormalize(&self) -> Self {
        let svd = self.0.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return *self;
        };
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Rotation(r)
    }
}

impl Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Rigid-body pose `T(R, p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    /// Reads the rotation and translation blocks of a homogeneous matrix.
    /// The bottom row is ignored and the rotation block is not checked.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Self {
        Pose {
            rotation: Rotation::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    /// `T(R^T, -R^T p)`.
    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt.matrix() * self.translation),
        }
    }

    pub fn compose(&self, other: &Pose) -> Self {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.matrix() * other.translation + self.translation,
        }
    }

    /// Projects the rotation block back onto SO(3); translation is untouched.
    pub fn renormalize(&self) -> Self {
        Pose {
            rotation: self.rotation.renormalize(),
            translation: self.translation,
        }
    }

    /// `|I_4 - X|_F`.
    pub fn distance_to_identity(&self) -> f64 {
        (Matrix4::identity() - self.to_homogeneous()).norm()
    }

    /// `|I_3 - R|_F`.
    pub fn rotation_error(&self) -> f64 {
        (Matrix3::identity() - self.rotation.matrix()).norm()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.matrix().iter().all(|x| x.is_finite())
            && self.translation.iter().all(|x| x.is_finite())
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

/// Body-frame group velocity `xi = (omega, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub omega: Vector3<f64>,
    pub vel: Vector3<f64>,
}

impl Twist {
    pub fn new(omega: Vector3<f64>, vel: Vector3<f64>) -> Self {
        Twist { omega, vel }
    }

    pub fn zero() -> Self {
        Twist::default()
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Twist {
            omega: x.fixed_rows::<3>(0).into_owned(),
            vel: x.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.omega);
        x.fixed_rows_mut::<3>(3).copy_from(&self.vel);
        x
    }
}

/// `xi^`: `[[omega^x, v], [0, 0]]`.
pub fn wedge(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&xi.omega));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.vel);
    m
}

pub fn wedge_vec(x: &Vector6<f64>) -> Matrix4<f64> {
    wedge(&Twist::from_vector(x))
}

/// Inverse of [`wedge`]; rejects matrices outside `se(3)`.
pub fn vee(m: &Matrix4<f64>) -> Result<Twist> {
    let block = m.fixed_view::<3, 3>(0, 0);
    let sym = block + block.transpose();
    let mut residual = sym.amax();
    for c in 0..4 {
        residual = residual.max(m[(3, c)].abs());
    }
    if residual > TANGENT_TOL {
        return Err(Error::MalformedTangent { residual });
    }
    Ok(Twist {
        omega: Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)]),
        vel: m.fixed_view::<3, 1>(0, 3).into_owned(),
    })
}

/// Axial vector of the skew part of `a`: `<<A, y^x>> = 2 y^T psi(A)`.
pub fn psi(a: &Matrix3<f64>) -> Vector3<f64> {
    0.5 * Vector3::new(
        a[(2, 1)] - a[(1, 2)],
        a[(0, 2)] - a[(2, 0)],
        a[(1, 0)] - a[(0, 1)],
    )
}

/// `[psi(A); b / 2]` for `M = [[A, b], [c^T, d]]`, so `<<M, x^>> = 2 x^T psibar(M)`.
pub fn psi_bar(m: &Matrix4<f64>) -> Vector6<f64> {
    let top = psi(&m.fixed_view::<3, 3>(0, 0).into_owned());
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&top);
    out.fixed_rows_mut::<3>(3)
        .copy_from(&(0.5 * m.fixed_view::<3, 1>(0, 3)));
    out
}

/// `Ad_X = [[R, 0], [p^x R, R]]`.
pub fn adjoint(x: &Pose) -> Matrix6<f64> {
    let r = x.rotation.matrix();
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
    m.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(skew(&x.translation) * r));
    m
}

/// `Ad_X^{-T} = Ad_{X^{-1}}^T`, computed in closed form.
pub fn adjoint_inv_transpose(x: &Pose) -> Matrix6<f64> {
    adjoint(&x.inverse()).transpose()
}

/// `ad_xi = [[omega^x, 0], [v^x, omega^x]]`.
pub fn ad_small(xi: &Twist) -> Matrix6<f64> {
    let w = skew(&xi.omega);
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&xi.vel));
    m
}

fn check_axis(u: &Vector3<f64>) -> Result<()> {
    let norm = u.norm();
    if (norm - 1.0).abs() > AXIS_TOL || !norm.is_finite() {
        return Err(Error::InvalidAxis { norm });
    }
    Ok(())
}

/// `R_a(theta, u) = I + sin(theta) u^x + (1 - cos(theta)) (u^x)^2`.
pub fn rot_angle_axis(theta: f64, u: &Vector3<f64>) -> Result<Rotation> {
    check_axis(u)?;
    Ok(rot_angle_axis_unchecked(theta, u))
}

pub(crate) fn rot_angle_axis_unchecked(theta: f64, u: &Vector3<f64>) -> Rotation {
    let k = skew(u);
    Rotation(Matrix3::identity() + theta.sin() * k + (1.0 - theta.cos()) * k * k)
}

/// `U(theta u^x) = I + (1 - cos t)/t u^x + (t - sin t)/t (u^x)^2`, with the
/// removable singularity at `theta = 0` filled by its limit.
pub fn screw_jacobian(theta: f64, u: &Vector3<f64>) -> Matrix3<f64> {
    let (c1, c2) = if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        (theta / 2.0 - theta * t2 / 24.0, t2 / 6.0 - t2 * t2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta, (theta - theta.sin()) / theta)
    };
    let k = skew(u);
    Matrix3::identity() + c1 * k + c2 * k * k
}

/// `exp(theta u_c^)` for `u_c = (u_c1, u_c2)` with unit `u_c1`.
pub fn screw_exp(theta: f64, u_c: &Twist) -> Result<Pose> {
    check_axis(&u_c.omega)?;
    Ok(screw_exp_unchecked(theta, u_c))
}

pub(crate) fn screw_exp_unchecked(theta: f64, u_c: &Twist) -> Pose {
    Pose {
        rotation: rot_angle_axis_unchecked(theta, &u_c.omega),
        translation: screw_jacobian(theta, &u_c.omega) * (theta * u_c.vel),
    }
}
