//! The Gaussian scene representation: per-primitive parameters stored in
//! unconstrained form (log scales, opacity logits, raw quaternions), one
//! global solidness scalar, covariance construction, per-view splat frames.
//!
//! Parameter storage conventions:
//! - scales are stored as logs and exponentiated on use, so gradient steps
//!   stay unconstrained while actual scales stay positive;
//! - opacity is stored as a logit and mapped through the logistic function;
//! - the solidness exponent is stored as `beta_raw` with
//!   `beta_g = 1 + ln(1 + exp(beta_raw))`, keeping `beta_g > 1` (the kernel
//!   is not differentiable at its center for exponents at or below 1) and
//!   hitting exactly 2 (a standard Gaussian) at `beta_raw = ln(e - 1)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{quat_to_rotation, Camera, Quat, MIN_VIEW_DEPTH};
use crate::ply;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("checkpoint i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint is missing the beta_raw comment")]
    MissingBetaRaw,
    #[error("field arrays have inconsistent lengths")]
    InconsistentLengths,
}

impl From<ply::PlyError> for FieldError {
    fn from(e: ply::PlyError) -> Self {
        FieldError::Format(e.to_string())
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (1.0 + (-x.abs()).exp()).ln()
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of the logistic function on (0, 1).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `beta_raw` value that makes `beta_g` equal the given exponent (> 1).
pub fn beta_raw_for(beta_g: f64) -> f64 {
    let y = beta_g - 1.0;
    debug_assert!(y > 0.0);
    if y > 30.0 {
        y
    } else {
        (y.exp() - 1.0).ln()
    }
}

/// Arrays of per-primitive parameters plus the shared solidness scalar.
#[derive(Debug, Clone, Default)]
pub struct GaussianField {
    /// World positions.
    pub mu: Vec<Vector3<f64>>,
    /// Orientations, raw (normalized on use).
    pub quat: Vec<Quat>,
    /// Log of the per-axis scales.
    pub log_scale: Vec<Vector3<f64>>,
    /// Opacity logits.
    pub rho: Vec<f64>,
    /// RGB colors in [0, 1].
    pub color: Vec<Vector3<f64>>,
    /// Raw parameter behind the shared solidness factor.
    pub beta_raw: f64,
}

impl GaussianField {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let n = self.mu.len();
        if self.quat.len() != n
            || self.log_scale.len() != n
            || self.rho.len() != n
            || self.color.len() != n
        {
            return Err(FieldError::InconsistentLengths);
        }
        Ok(())
    }

    /// The shared solidness exponent, always > 1. Extremely negative raw
    /// values would make `1 + softplus` round to exactly 1 in f64, so the
    /// result is floored just above it.
    pub fn beta_g(&self) -> f64 {
        (1.0 + softplus(self.beta_raw)).max(1.0 + 1e-9)
    }

    /// d(beta_g)/d(beta_raw).
    pub fn d_beta_g_d_raw(&self) -> f64 {
        sigmoid(self.beta_raw)
    }

    pub fn set_beta_g(&mut self, beta_g: f64) {
        self.beta_raw = beta_raw_for(beta_g);
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.rho[i])
    }

    pub fn scales(&self, i: usize) -> Vector3<f64> {
        self.log_scale[i].map(f64::exp)
    }

    pub fn push(
        &mut self,
        mu: Vector3<f64>,
        quat: Quat,
        log_scale: Vector3<f64>,
        rho: f64,
        color: Vector3<f64>,
    ) {
        self.mu.push(mu);
        self.quat.push(quat);
        self.log_scale.push(log_scale);
        self.rho.push(rho);
        self.color.push(color);
    }

    /// Remove primitive `i` by swapping in the last one.
    pub fn swap_remove(&mut self, i: usize) {
        self.mu.swap_remove(i);
        self.quat.swap_remove(i);
        self.log_scale.swap_remove(i);
        self.rho.swap_remove(i);
        self.color.swap_remove(i);
    }
}

/// `R S S^T R^T` for positive scales and an orientation quaternion.
pub fn covariance3d(scales: &Vector3<f64>, q: &Quat) -> Matrix3<f64> {
    let r = quat_to_rotation(q).expect("orientation quaternion must be normalizable");
    let s2 = Matrix3::from_diagonal(&scales.map(|s| s * s));
    r * s2 * r.transpose()
}

/// Index of the minimum scale axis, ties broken by lowest index.
pub fn min_scale_axis(scales: &Vector3<f64>) -> usize {
    let mut k = 0;
    for i in 1..3 {
        if scales[i] < scales[k] {
            k = i;
        }
    }
    k
}

/// The plane normal of a flattened Gaussian and its positive distance from
/// the camera center, `d = (mu - T_c) . n`.
///
/// The normal is the rotated basis column of the minimum scale axis,
/// sign-flipped so it points away from the camera (making d positive), and
/// returned in the camera frame. Returns `None` when the Gaussian sits
/// exactly at the camera center.
pub fn gaussian_normal(
    field: &GaussianField,
    index: usize,
    cam: &Camera,
) -> Option<(Vector3<f64>, f64)> {
    let r = quat_to_rotation(&field.quat[index]).ok()?;
    let k = min_scale_axis(&field.scales(index));
    let mut n_world: Vector3<f64> = r.column(k).into();
    let offset = field.mu[index] - cam.center();
    let mut d = offset.dot(&n_world);
    if d < 0.0 {
        n_world = -n_world;
        d = -d;
    }
    if d <= 1e-12 {
        // Plane passes through the camera center; no well-defined splat.
        return None;
    }
    Some((cam.rotation() * n_world, d))
}

/// Per-Gaussian, per-camera cache produced by `project_covariance`.
#[derive(Debug, Clone)]
pub struct SplatFrame {
    /// Index of the source Gaussian in the field.
    pub index: usize,
    /// Projected center in continuous pixel coordinates.
    pub mean2d: Vector2<f64>,
    /// Projected 2x2 covariance (pixel^2), low-pass floor included.
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub cov2d_inv: Matrix2<f64>,
    /// Unit plane normal in the camera frame, pointing away from the camera.
    pub normal_cam: Vector3<f64>,
    /// Positive plane-to-camera-center distance (scene units).
    pub plane_dist: f64,
    /// z-depth of the Gaussian center.
    pub view_depth: f64,
    /// Conservative culling radius in pixels.
    pub radius_px: f64,
}

/// EWA-style perspective projection of one Gaussian's covariance to the
/// image plane: `cov2d = J W Sigma W^T J^T + lowpass I`, with J the
/// projection Jacobian at the center and W the pose rotation.
///
/// `mahal_radius` is the Mahalanobis culling radius (from
/// `kernel::effective_radius`); the pixel radius applies it to the larger
/// `cov2d` eigenvalue. Returns `None` for Gaussians behind the camera, with
/// non-finite projections, or centered at the camera.
pub fn project_covariance(
    field: &GaussianField,
    index: usize,
    cam: &Camera,
    lowpass: f64,
    mahal_radius: f64,
) -> Option<SplatFrame> {
    let t = cam.to_camera(&field.mu[index]);
    if t.z <= MIN_VIEW_DEPTH {
        return None;
    }
    let (normal_cam, plane_dist) = gaussian_normal(field, index, cam)?;

    let r = quat_to_rotation(&field.quat[index]).ok()?;
    let s2 = Matrix3::from_diagonal(&field.scales(index).map(|s| s * s));
    let sigma = r * s2 * r.transpose();
    let v = cam.rotation() * sigma * cam.rotation().transpose();

    let inv_z = 1.0 / t.z;
    let j = projection_jacobian(cam, &t);
    let mut cov2d = j * v * j.transpose();
    cov2d[(0, 0)] += lowpass;
    cov2d[(1, 1)] += lowpass;

    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    if !det.is_finite() || det <= 0.0 {
        return None;
    }
    let cov2d_inv = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;

    let mean2d = Vector2::new(cam.fx * t.x * inv_z + cam.cx, cam.fy * t.y * inv_z + cam.cy);
    if !mean2d.x.is_finite() || !mean2d.y.is_finite() {
        return None;
    }

    // Larger eigenvalue of the symmetric 2x2 covariance.
    let mid = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let half_diff = 0.5 * (cov2d[(0, 0)] - cov2d[(1, 1)]);
    let disc = (half_diff * half_diff + cov2d[(0, 1)] * cov2d[(0, 1)]).sqrt();
    let lambda_max = mid + disc;
    let radius_px = mahal_radius * lambda_max.sqrt();

    Some(SplatFrame {
        index,
        mean2d,
        cov2d,
        cov2d_inv,
        normal_cam,
        plane_dist,
        view_depth: t.z,
        radius_px,
    })
}

/// Jacobian of the pinhole projection at camera-frame point t (2x3).
pub(crate) fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> nalgebra::Matrix2x3<f64> {
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    nalgebra::Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * t.x * inv_z2,
        0.0,
        cam.fy * inv_z,
        -cam.fy * t.y * inv_z2,
    )
}

const CHECKPOINT_PROPS: [&str; 14] = [
    "x",
    "y",
    "z",
    "quat_w",
    "quat_x",
    "quat_y",
    "quat_z",
    "log_scale_0",
    "log_scale_1",
    "log_scale_2",
    "opacity_logit",
    "r",
    "g",
    "b",
];

/// Write the field as a binary little-endian PLY checkpoint. All per-vertex
/// properties are doubles; `beta_raw` rides in a header comment.
pub fn save_checkpoint(field: &GaussianField, path: &Path) -> Result<(), FieldError> {
    field.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    let props: Vec<(&str, ply::Scalar)> =
        CHECKPOINT_PROPS.iter().map(|&p| (p, ply::Scalar::Double)).collect();
    ply::write_header(
        &mut w,
        &[format!("beta_raw {}", field.beta_raw)],
        &[("vertex", field.len(), props)],
        &[],
    )?;
    for i in 0..field.len() {
        let q = &field.quat[i];
        let row = [
            field.mu[i].x,
            field.mu[i].y,
            field.mu[i].z,
            q.w,
            q.x,
            q.y,
            q.z,
            field.log_scale[i].x,
            field.log_scale[i].y,
            field.log_scale[i].z,
            field.rho[i],
            field.color[i].x,
            field.color[i].y,
            field.color[i].z,
        ];
        for v in row {
            ply::write_f64(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint written by `save_checkpoint`, validating that every
/// expected property is present.
pub fn load_checkpoint(path: &Path) -> Result<GaussianField, FieldError> {
    let mut r = BufReader::new(File::open(path)?);
    let data = ply::read_ply(&mut r)?;
    let beta_raw = data
        .comments
        .iter()
        .find_map(|c| c.strip_prefix("beta_raw").map(str::trim))
        .ok_or(FieldError::MissingBetaRaw)?
        .parse::<f64>()
        .map_err(|e| FieldError::Format(format!("bad beta_raw comment: {e}")))?;

    let vertex = data.element("vertex")?;
    let mut cols = Vec::with_capacity(CHECKPOINT_PROPS.len());
    for p in CHECKPOINT_PROPS {
        cols.push(vertex.scalar(p)?);
    }
    let n = vertex.count;
    let mut field = GaussianField { beta_raw, ..Default::default() };
    for i in 0..n {
        field.push(
            Vector3::new(cols[0][i], cols[1][i], cols[2][i]),
            Quat::new(cols[3][i], cols[4][i], cols[5][i], cols[6][i]),
            Vector3::new(cols[7][i], cols[8][i], cols[9][i]),
            cols[10][i],
            Vector3::new(cols[11][i], cols[12][i], cols[13][i]),
        );
    }
    Ok(field)
}
