use nalgebra::{Matrix3, Vector3, Vector4};

use crate::{Error, Result};

/// Tolerance on `‖q‖ − 1` accepted by [`build_covariance`].
pub const UNIT_QUATERNION_TOL: f64 = 1e-6;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a unit quaternion stored `(w, x, y, z)`.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls `∂L/∂R` back onto the quaternion components, evaluated at a unit `q`
/// (the formula of [`quat_to_matrix`] is differentiated as written).
pub fn quat_matrix_vjp(q: &Vector4<f64>, d_r: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0
        * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
            + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
            - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    Vector4::new(dw, dx, dy, dz)
}

/// Symmetric 3×3 covariance `R·S·Sᵀ·Rᵀ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance3D(pub Matrix3<f64>);

impl Covariance3D {
    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Builds the covariance of a Gaussian from a unit quaternion `(w, x, y, z)`
/// and positive per-axis scales.
pub fn build_covariance(rotation: &Vector4<f64>, scale: &Vector3<f64>) -> Result<Covariance3D> {
    let norm = rotation.norm();
    if !((norm - 1.0).abs() <= UNIT_QUATERNION_TOL) {
        return Err(Error::Validation(format!(
            "rotation quaternion must be unit length, got norm {norm}"
        )));
    }
    if scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Validation(format!(
            "scale components must be positive, got {scale:?}"
        )));
    }
    Ok(Covariance3D(covariance_unchecked(rotation, scale)))
}

pub(crate) fn covariance_unchecked(rotation: &Vector4<f64>, scale: &Vector3<f64>) -> Matrix3<f64> {
    let m = quat_to_matrix(rotation) * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// One Gaussian in optimizer parameterization: raw quaternion, log-scales and
/// opacity logit. Use the accessors for the constrained values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vector3<f64>,
    /// `(w, x, y, z)`; normalized on read.
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    /// Degree-0 RGB.
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn new(
        mean: Vector3<f64>,
        rotation: Vector4<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Self {
        Self {
            mean,
            rotation,
            log_scale: scale.map(f64::ln),
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self::new(
            mean,
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            Vector3::repeat(scale),
            opacity,
            color,
        )
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn unit_rotation(&self) -> Vector4<f64> {
        let n = self.rotation.norm();
        if n > 0.0 {
            self.rotation / n
        } else {
            Vector4::new(1.0, 0.0, 0.0, 0.0)
        }
    }

    pub fn covariance(&self) -> Matrix3<f64> {
        covariance_unchecked(&self.unit_rotation(), &self.scale())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{SymmetricEigen, UnitQuaternion};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn q_of(u: &UnitQuaternion<f64>) -> Vector4<f64> {
        Vector4::new(u.w, u.i, u.j, u.k)
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector4<f64> {
        Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize()
    }

    #[test]
    fn identity_rotation_gives_squared_scales() {
        let c = build_covariance(&Vector4::new(1.0, 0.0, 0.0, 0.0), &Vector3::new(1.0, 2.0, 3.0))
            .unwrap();
        assert_eq!(c.0, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0)));
    }

    #[test]
    fn quarter_turn_about_z_permutes_axes() {
        let q = q_of(&UnitQuaternion::from_axis_angle(
            &Vector3::z_axis(),
            std::f64::consts::FRAC_PI_2,
        ));
        let c = build_covariance(&q, &Vector3::new(2.0, 1.0, 1.0)).unwrap();
        assert_relative_eq!(
            c.0,
            Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 1.0)),
            epsilon = 1e-12
        );
    }

    #[test]
    fn eigenvalues_are_squared_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let q = random_unit(&mut rng);
            let s = Vector3::from_fn(|_, _| rng.random_range(0.1..3.0));
            let c = build_covariance(&q, &s).unwrap();
            let mut eig: Vec<f64> = SymmetricEigen::new(c.0).eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut expected: Vec<f64> = s.iter().map(|v| v * v).collect();
            expected.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12 * b.max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        let err = build_covariance(&Vector4::new(1.0, 0.1, 0.0, 0.0), &Vector3::repeat(1.0));
        assert!(matches!(err, Err(Error::Validation(_))));
        let err = build_covariance(&Vector4::new(1.0, 0.0, 0.0, 0.0), &Vector3::new(1.0, 0.0, 1.0));
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn quaternion_matrix_agrees_with_nalgebra() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = random_unit(&mut rng);
            let u = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
            assert_relative_eq!(quat_to_matrix(&q), *u.to_rotation_matrix().matrix(), epsilon = 1e-12);
        }
    }

    #[test]
    fn quaternion_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_unit(&mut rng);
        let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let analytic = quat_matrix_vjp(&q, &g);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fd = (quat_to_matrix(&qp) - quat_to_matrix(&qm)).component_mul(&g).sum() / (2.0 * h);
            assert_relative_eq!(analytic[k], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn log_parameterization_keeps_scale_positive() {
        let g = Gaussian3D {
            mean: Vector3::zeros(),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            log_scale: Vector3::new(-700.0, 0.0, 700.0),
            opacity_logit: 0.0,
            color: Vector3::zeros(),
        };
        assert!(g.scale().iter().all(|s| *s >= 0.0));
        assert_relative_eq!(g.opacity(), 0.5);
    }

    proptest! {
        #[test]
        fn covariance_is_rotation_equivariant(
            a in prop::array::uniform4(-1.0f64..1.0),
            b in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(0.05f64..3.0),
        ) {
            let qa = Vector4::from(a);
            let qb = Vector4::from(b);
            prop_assume!(qa.norm() > 0.1 && qb.norm() > 0.1);
            let ua = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(a[0], a[1], a[2], a[3]));
            let ub = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(b[0], b[1], b[2], b[3]));
            let s = Vector3::from(s);
            let composed = build_covariance(&q_of(&(ua * ub)), &s).unwrap().0;
            let ra = ua.to_rotation_matrix().into_inner();
            let rotated = ra * build_covariance(&q_of(&ub), &s).unwrap().0 * ra.transpose();
            prop_assert!((composed - rotated).abs().max() < 1e-10);
        }

        #[test]
        fn covariance_sign_invariant(
            a in prop::array::uniform4(-1.0f64..1.0),
            s in prop::array::uniform3(0.05f64..3.0),
        ) {
            let q = Vector4::from(a);
            prop_assume!(q.norm() > 0.1);
            let q = q.normalize();
            let s = Vector3::from(s);
            prop_assert_eq!(build_covariance(&q, &s).unwrap(), build_covariance(&-q, &s).unwrap());
        }

        #[test]
        fn finite_log_scale_is_positive(ls in -300.0f64..300.0) {
            prop_assert!(ls.exp() > 0.0);
        }
    }
}
