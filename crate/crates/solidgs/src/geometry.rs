//! Cameras, rigid poses, quaternion rotations, projection, and virtual-view
//! pose synthesis.
//!
//! Conventions used throughout the crate:
//! - world-to-camera poses (`x_cam = R x_world + t`), camera frame x-right,
//!   y-down, z-forward;
//! - pixel `(ix, iy)` is sampled at continuous image coordinates
//!   `(ix + 0.5, iy + 0.5)`;
//! - depth is z-depth (distance along the camera z axis), fixed by the
//!   homogeneous ray having z-component exactly 1.

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("quaternion norm {0:.3e} too small to normalize")]
    ZeroQuaternion(f64),
    #[error("world_to_camera rotation is not orthonormal with det +1 (max deviation {0:.3e})")]
    NotARotation(f64),
    #[error("invalid camera intrinsics: {0}")]
    BadIntrinsics(String),
}

/// A quaternion in (w, x, y, z) order. Stored possibly unnormalized; every
/// consumer normalizes before turning it into a rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(&self) -> Result<Quat, GeometryError> {
        let n = self.norm();
        if n <= 1e-12 {
            return Err(GeometryError::ZeroQuaternion(n));
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    pub fn dot(&self, o: &Quat) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    fn scaled(&self, s: f64) -> Quat {
        Quat::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    fn add(&self, o: &Quat) -> Quat {
        Quat::new(self.w + o.w, self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

/// Rotation matrix of a quaternion, invariant to `q -> -q`.
///
/// Errors on quaternions with norm below 1e-12.
pub fn quat_to_rotation(q: &Quat) -> Result<Matrix3<f64>, GeometryError> {
    let q = q.normalized()?;
    Ok(unit_quat_to_rotation(&q))
}

/// Rotation matrix of an already-normalized quaternion.
pub(crate) fn unit_quat_to_rotation(q: &Quat) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
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

/// Quaternion of a rotation matrix (Shepperd's method). Returns a unit
/// quaternion with non-negative w.
pub fn rotation_to_quat(r: &Matrix3<f64>) -> Quat {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        Quat::new(
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        )
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        )
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        Quat::new(
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        )
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        Quat::new(
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        )
    };
    let q = q.normalized().expect("rotation matrix yields unit quaternion");
    if q.w < 0.0 {
        q.scaled(-1.0)
    } else {
        q
    }
}

/// Spherical interpolation between two unit quaternions along the shorter arc.
fn slerp(a: &Quat, b: &Quat, t: f64) -> Quat {
    let mut d = a.dot(b);
    let mut b = *b;
    if d < 0.0 {
        b = b.scaled(-1.0);
        d = -d;
    }
    if d > 1.0 - 1e-12 {
        // Nearly identical: linear blend keeps endpoints exact.
        return a
            .scaled(1.0 - t)
            .add(&b.scaled(t))
            .normalized()
            .expect("nondegenerate lerp");
    }
    let omega = d.clamp(-1.0, 1.0).acos();
    let so = omega.sin();
    a.scaled(((1.0 - t) * omega).sin() / so)
        .add(&b.scaled((t * omega).sin() / so))
}

/// Pinhole camera with a rigid world-to-camera pose.
///
/// The pose is validated at construction (orthonormal rotation, det +1,
/// principal point inside the image) and kept private so the invariants hold
/// for the camera's whole lifetime.
#[derive(Debug, Clone)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

/// Result of projecting a world point through a camera.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Continuous pixel coordinates (u, v).
    pub pixel: Vector2<f64>,
    /// z-depth (camera-frame z coordinate).
    pub depth: f64,
}

const ROTATION_TOL: f64 = 1e-9;
/// Points with camera-frame z at or below this are treated as invisible.
pub const MIN_VIEW_DEPTH: f64 = 1e-6;

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(GeometryError::BadIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::BadIntrinsics(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(GeometryError::BadIntrinsics(format!(
                "principal point ({cx}, {cy}) outside image {width}x{height}"
            )));
        }
        let gram = rotation * rotation.transpose();
        let mut dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((gram[(i, j)] - target).abs());
            }
        }
        dev = dev.max((rotation.determinant() - 1.0).abs());
        if dev > ROTATION_TOL {
            return Err(GeometryError::NotARotation(dev));
        }
        Ok(Camera { fx, fy, cx, cy, width, height, rotation, translation })
    }

    /// World-to-camera rotation.
    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// World-to-camera translation.
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates (`-R^T t`).
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Transform a world point into the camera frame.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// `K^-1 [u, v, 1]`: the ray through image point (u, v) in the camera
    /// frame, unnormalized, z-component exactly 1.
    pub fn homogeneous_ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Ray through the center of pixel (ix, iy).
    pub fn pixel_ray(&self, ix: usize, iy: usize) -> Vector3<f64> {
        self.homogeneous_ray(ix as f64 + 0.5, iy as f64 + 0.5)
    }

    /// Project a world point. Returns `None` for points at or behind the
    /// camera plane instead of producing non-finite pixels.
    pub fn project_point(&self, x_world: &Vector3<f64>) -> Option<Projection> {
        let p = self.to_camera(x_world);
        if p.z <= MIN_VIEW_DEPTH {
            return None;
        }
        Some(Projection {
            pixel: Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy),
            depth: p.z,
        })
    }

    /// Replace the pose, keeping intrinsics. Pose must already be a rigid
    /// transform; this re-runs validation.
    pub fn with_pose(
        &self,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Camera, GeometryError> {
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            rotation,
            translation,
        )
    }

    /// Camera at `eye` looking at `target`, `up` roughly opposing the image
    /// y axis (y-down convention).
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        eye: &Vector3<f64>,
        target: &Vector3<f64>,
        up: &Vector3<f64>,
    ) -> Result<Camera, GeometryError> {
        let forward = (target - eye).normalize();
        let right = forward.cross(up).normalize();
        let down = forward.cross(&right).normalize();
        // Rows of the world-to-camera rotation are the camera axes
        // (x-right, y-down, z-forward).
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        // Orthonormalize the cross products' rounding away so validation at
        // 1e-9 never trips on long camera rings.
        let rotation = reorthonormalize(&rotation);
        let translation = -(rotation * eye);
        Camera::new(fx, fy, cx, cy, width, height, rotation, translation)
    }
}

fn reorthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd of 3x3");
    let vt = svd.v_t.expect("svd of 3x3");
    let mut rot = u * vt;
    if rot.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        rot = u * vt;
    }
    rot
}

/// One camera as stored in a bundle's `cameras.json`: intrinsics plus the
/// world-to-camera pose as 12 row-major reals (3x4).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: [f64; 12],
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera) -> CameraRecord {
        let r = cam.rotation();
        let t = cam.translation();
        let mut m = [0.0; 12];
        for row in 0..3 {
            for col in 0..3 {
                m[row * 4 + col] = r[(row, col)];
            }
            m[row * 4 + 3] = t[row];
        }
        CameraRecord {
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
            world_to_camera: m,
        }
    }

    pub fn to_camera(&self) -> Result<Camera, GeometryError> {
        let m = &self.world_to_camera;
        let rotation = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let translation = Vector3::new(m[3], m[7], m[11]);
        Camera::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height, rotation, translation)
    }
}

/// Standard normal sample via Box-Muller.
pub(crate) fn sample_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

/// Synthesize a virtual camera between two training poses.
///
/// Rotation is the spherical interpolation of the two rotations at `t`; the
/// camera center is the linear interpolation of the two centers plus
/// isotropic Gaussian noise with standard deviation `noise_scale`. The
/// rotation is left unperturbed so the virtual view keeps its framing.
/// Intrinsics are copied from `cam_a`.
pub fn sample_virtual_view<R: Rng + ?Sized>(
    cam_a: &Camera,
    cam_b: &Camera,
    t: f64,
    noise_scale: f64,
    rng: &mut R,
) -> Camera {
    let qa = rotation_to_quat(cam_a.rotation());
    let qb = rotation_to_quat(cam_b.rotation());
    let q = slerp(&qa, &qb, t).normalized().expect("slerp of unit quaternions");
    let rotation = unit_quat_to_rotation(&q);

    let ca = cam_a.center();
    let cb = cam_b.center();
    let mut center = ca * (1.0 - t) + cb * t;
    if noise_scale > 0.0 {
        center += Vector3::new(
            sample_standard_normal(rng),
            sample_standard_normal(rng),
            sample_standard_normal(rng),
        ) * noise_scale;
    }
    let translation = -(rotation * center);
    Camera {
        fx: cam_a.fx,
        fy: cam_a.fy,
        cx: cam_a.cx,
        cy: cam_a.cy,
        width: cam_a.width,
        height: cam_a.height,
        rotation,
        translation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_quat(rng: &mut ChaCha8Rng) -> Quat {
        Quat::new(
            sample_standard_normal(rng),
            sample_standard_normal(rng),
            sample_standard_normal(rng),
            sample_standard_normal(rng),
        )
    }

    fn test_camera() -> Camera {
        Camera::new(
            100.0,
            100.0,
            50.0,
            50.0,
            100,
            100,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    #[test]
    fn identity_quat_gives_identity_rotation() {
        let r = quat_to_rotation(&Quat::IDENTITY).unwrap();
        assert_relative_eq!(r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn quarter_turn_about_z() {
        let h = (0.5f64).sqrt();
        let r = quat_to_rotation(&Quat::new(h, 0.0, 0.0, h)).unwrap();
        let v = r * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(v, Vector3::new(0.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn zero_quaternion_is_rejected() {
        assert!(matches!(
            quat_to_rotation(&Quat::new(0.0, 0.0, 0.0, 0.0)),
            Err(GeometryError::ZeroQuaternion(_))
        ));
    }

    #[test]
    fn random_quats_give_orthonormal_rotations_and_sign_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let q = random_quat(&mut rng);
            if q.norm() < 1e-6 {
                continue;
            }
            let r = quat_to_rotation(&q).unwrap();
            let gram = r * r.transpose();
            assert_relative_eq!(gram, Matrix3::identity(), epsilon = 1e-12);
            assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
            let r_neg = quat_to_rotation(&q.scaled(-1.0)).unwrap();
            assert_relative_eq!(r, r_neg, epsilon = 1e-12);
        }
    }

    #[test]
    fn rotation_quat_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let q = random_quat(&mut rng).normalized().unwrap();
            let r = unit_quat_to_rotation(&q);
            let q2 = rotation_to_quat(&r);
            let r2 = unit_quat_to_rotation(&q2);
            assert_relative_eq!(r, r2, epsilon = 1e-12);
        }
    }

    #[test]
    fn ray_at_principal_point_is_z_axis() {
        let cam = test_camera();
        assert_relative_eq!(
            cam.homogeneous_ray(50.0, 50.0),
            Vector3::new(0.0, 0.0, 1.0),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            cam.homogeneous_ray(150.0, 50.0),
            Vector3::new(1.0, 0.0, 1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ray_roundtrips_through_intrinsics() {
        let cam = Camera::new(
            321.5,
            298.25,
            61.0,
            70.5,
            128,
            144,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let u: f64 = rng.gen_range(-50.0..200.0);
            let v: f64 = rng.gen_range(-50.0..200.0);
            let ray = cam.homogeneous_ray(u, v);
            // K * ray must reproduce [u, v, 1]
            assert_relative_eq!(cam.fx * ray.x + cam.cx * ray.z, u, epsilon = 1e-12);
            assert_relative_eq!(cam.fy * ray.y + cam.cy * ray.z, v, epsilon = 1e-12);
            assert_relative_eq!(ray.z, 1.0, epsilon = 0.0);
        }
    }

    #[test]
    fn projection_examples() {
        let cam = test_camera();
        let p = cam.project_point(&Vector3::new(0.0, 0.0, 5.0)).unwrap();
        assert_relative_eq!(p.pixel, Vector2::new(50.0, 50.0), epsilon = 1e-12);
        assert_relative_eq!(p.depth, 5.0, epsilon = 1e-12);

        let p = cam.project_point(&Vector3::new(0.5, 0.0, 5.0)).unwrap();
        assert_relative_eq!(p.pixel, Vector2::new(60.0, 50.0), epsilon = 1e-12);

        assert!(cam.project_point(&Vector3::new(0.0, 0.0, -1.0)).is_none());
    }

    #[test]
    fn project_then_ray_reconstructs_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eye = Vector3::new(2.0, -1.0, 3.0);
        let cam = Camera::look_at(
            140.0,
            140.0,
            64.0,
            64.0,
            128,
            128,
            &eye,
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        for _ in 0..200 {
            let p_world = Vector3::new(
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let Some(proj) = cam.project_point(&p_world) else { continue };
            let p_cam = cam.to_camera(&p_world);
            let rec = cam.homogeneous_ray(proj.pixel.x, proj.pixel.y) * proj.depth;
            assert_relative_eq!(rec, p_cam, epsilon = 1e-9);
        }
    }

    #[test]
    fn camera_validation_rejects_bad_inputs() {
        let r = Matrix3::identity() * 1.1;
        assert!(matches!(
            Camera::new(100.0, 100.0, 50.0, 50.0, 100, 100, r, Vector3::zeros()),
            Err(GeometryError::NotARotation(_))
        ));
        assert!(Camera::new(
            -1.0,
            100.0,
            50.0,
            50.0,
            100,
            100,
            Matrix3::identity(),
            Vector3::zeros()
        )
        .is_err());
        assert!(Camera::new(
            100.0,
            100.0,
            150.0,
            50.0,
            100,
            100,
            Matrix3::identity(),
            Vector3::zeros()
        )
        .is_err());
    }

    #[test]
    fn camera_record_roundtrip() {
        let cam = Camera::look_at(
            140.0,
            141.0,
            63.5,
            64.5,
            128,
            128,
            &Vector3::new(3.0, 0.5, 1.5),
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap();
        let rec = CameraRecord::from_camera(&cam);
        let json = serde_json::to_string(&rec).unwrap();
        let back: CameraRecord = serde_json::from_str(&json).unwrap();
        let cam2 = back.to_camera().unwrap();
        assert_eq!(cam.fx, cam2.fx);
        assert_eq!(cam.rotation(), cam2.rotation());
        assert_eq!(cam.translation(), cam2.translation());
    }

    #[test]
    fn camera_record_rejects_missing_fields() {
        let json = r#"{"fx": 100.0, "fy": 100.0, "cx": 50.0, "cy": 50.0, "width": 100}"#;
        assert!(serde_json::from_str::<CameraRecord>(json).is_err());
    }

    fn ring_camera(azimuth: f64) -> Camera {
        let eye = Vector3::new(3.0 * azimuth.cos(), 3.0 * azimuth.sin(), 1.5);
        Camera::look_at(
            140.0,
            140.0,
            64.0,
            64.0,
            128,
            128,
            &eye,
            &Vector3::zeros(),
            &Vector3::new(0.0, 0.0, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn virtual_view_endpoints() {
        let a = ring_camera(0.2);
        let b = ring_camera(0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v0 = sample_virtual_view(&a, &b, 0.0, 0.0, &mut rng);
        assert_relative_eq!(v0.rotation(), a.rotation(), epsilon = 1e-12);
        assert_relative_eq!(v0.center(), a.center(), epsilon = 1e-12);
        let v1 = sample_virtual_view(&a, &b, 1.0, 0.0, &mut rng);
        assert_relative_eq!(v1.rotation(), b.rotation(), epsilon = 1e-12);
        assert_relative_eq!(v1.center(), b.center(), epsilon = 1e-12);
    }

    #[test]
    fn virtual_view_center_midpoint() {
        let cam = test_camera();
        let a = cam
            .with_pose(Matrix3::identity(), Vector3::zeros())
            .unwrap();
        let b = cam
            .with_pose(Matrix3::identity(), -Vector3::new(2.0, 0.0, 0.0))
            .unwrap();
        assert_relative_eq!(b.center(), Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mid = sample_virtual_view(&a, &b, 0.5, 0.0, &mut rng);
        assert_relative_eq!(mid.center(), Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn slerp_geodesic_is_proportional_to_t() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let geodesic = |a: &Quat, b: &Quat| 2.0 * a.dot(b).abs().clamp(-1.0, 1.0).acos();
        for _ in 0..100 {
            let qa = random_quat(&mut rng).normalized().unwrap();
            let qb = random_quat(&mut rng).normalized().unwrap();
            let total = geodesic(&qa, &qb);
            if total < 1e-3 || total > std::f64::consts::PI - 1e-3 {
                continue;
            }
            let t: f64 = rng.gen_range(0.0..1.0);
            let q = slerp(&qa, &qb, t);
            assert_relative_eq!(geodesic(&qa, &q), t * total, epsilon = 1e-9);
            assert_relative_eq!(geodesic(&q, &qb), (1.0 - t) * total, epsilon = 1e-9);
        }
    }

    #[test]
    fn virtual_view_keeps_camera_invariants() {
        let a = ring_camera(0.1);
        let b = ring_camera(1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let t: f64 = rng.gen_range(0.0..1.0);
            let v = sample_virtual_view(&a, &b, t, 0.01, &mut rng);
            // Re-validates rotation orthonormality and intrinsics.
            assert!(v.with_pose(*v.rotation(), *v.translation()).is_ok());
            assert_eq!(v.fx, a.fx);
            assert_eq!(v.width, a.width);
        }
    }
}
