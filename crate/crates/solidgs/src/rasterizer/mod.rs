//! Tile-based forward compositing of color, alpha, plane-distance, normal,
//! depth, and distortion maps, plus the analytic backward pass to every
//! field parameter.
//!
//! The tiled path and the brute-force oracle share one per-pixel compositing
//! routine and one splat ordering, so they agree to floating-point identity:
//! tiling only changes which (pixel, splat) pairs are *considered*, and the
//! conservative cull radius guarantees every skipped pair would have been
//! rejected by the alpha threshold anyway. Per-pixel semantics (front-to-back
//! order, alpha skip at 1/255, transmittance stop at 1e-4) are part of the
//! compositing contract and apply to both paths.

mod backward;

pub use backward::backward;

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::field::{project_covariance, GaussianField, SplatFrame};
use crate::geometry::Camera;
use crate::kernel::{effective_radius, solid_weight};

#[derive(Debug, Error)]
pub enum RasterizerError {
    #[error("non-finite upstream gradient in map '{0}'")]
    NonFiniteUpstream(&'static str),
    #[error("render output is {got}px but camera expects {want}px")]
    DimensionMismatch { got: usize, want: usize },
}

/// Weight convention for the per-ray depth-distortion accumulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DistortionWeight {
    /// Occlusion-aware `T_i * alpha_i` (default).
    TransmittanceAlpha,
    /// The literal blending weight `alpha_i` without transmittance.
    AlphaOnly,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RasterConfig {
    /// Side of the square scheduling tiles, in pixels.
    pub tile_size: usize,
    /// Low-pass floor added to both diagonal entries of cov2d (pixel^2).
    pub lowpass: f64,
    /// Kernel value below which a splat is culled by radius.
    pub cull_epsilon: f64,
    /// Contributions with alpha below this are skipped.
    pub alpha_skip: f64,
    /// Upper clamp on a single contribution's alpha.
    pub alpha_clamp: f64,
    /// Compositing stops once transmittance falls below this.
    pub transmittance_stop: f64,
    /// Floor for ray-plane denominators (grazing rays).
    pub denom_clamp: f64,
    pub distortion_weight: DistortionWeight,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            tile_size: 16,
            lowpass: 0.3,
            cull_epsilon: 1.0 / 255.0,
            alpha_skip: 1.0 / 255.0,
            alpha_clamp: 0.999,
            transmittance_stop: 1e-4,
            denom_clamp: 1e-6,
            distortion_weight: DistortionWeight::TransmittanceAlpha,
        }
    }
}

/// Per-pixel maps produced by one render.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Blended color including the background term.
    pub color: Vec<Vector3<f64>>,
    /// Accumulated alpha in [0, 1].
    pub alpha: Vec<f64>,
    /// Blended plane distance D.
    pub dist: Vec<f64>,
    /// Blended plane normal N in the camera frame (unnormalized blend).
    pub normal: Vec<Vector3<f64>>,
    /// Unbiased depth from intersecting rays with the blended plane.
    pub zdepth: Vec<f64>,
    /// Accumulated pairwise depth spread along each ray.
    pub distortion: Vec<f64>,
    /// Number of composited contributions per pixel.
    pub contrib_count: Vec<u32>,
    /// Splats rejected during projection (behind camera, degenerate).
    pub rejected_splats: usize,
    /// Pixels whose ray-plane denominator hit the clamp.
    pub clamped_denoms: usize,
}

impl RenderOutput {
    fn zeros(width: usize, height: usize) -> RenderOutput {
        let n = width * height;
        RenderOutput {
            width,
            height,
            color: vec![Vector3::zeros(); n],
            alpha: vec![0.0; n],
            dist: vec![0.0; n],
            normal: vec![Vector3::zeros(); n],
            zdepth: vec![0.0; n],
            distortion: vec![0.0; n],
            contrib_count: vec![0; n],
            rejected_splats: 0,
            clamped_denoms: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Upstream gradients on the output maps, fed to [`backward`]. Maps not
/// participating in a loss stay zero.
#[derive(Debug, Clone)]
pub struct OutputGrads {
    pub d_color: Vec<Vector3<f64>>,
    pub d_alpha: Vec<f64>,
    pub d_dist: Vec<f64>,
    pub d_normal: Vec<Vector3<f64>>,
    pub d_zdepth: Vec<f64>,
    pub d_distortion: Vec<f64>,
}

impl OutputGrads {
    pub fn zeros(width: usize, height: usize) -> OutputGrads {
        let n = width * height;
        OutputGrads {
            d_color: vec![Vector3::zeros(); n],
            d_alpha: vec![0.0; n],
            d_dist: vec![0.0; n],
            d_normal: vec![Vector3::zeros(); n],
            d_zdepth: vec![0.0; n],
            d_distortion: vec![0.0; n],
        }
    }
}

/// Per-Gaussian parameter gradients accumulated by the backward pass, plus
/// the screen-space positional gradients the densifier keys off.
#[derive(Debug, Clone)]
pub struct GradientBuffer {
    pub d_mu: Vec<Vector3<f64>>,
    /// Gradients on the raw (unnormalized) quaternion, (w, x, y, z).
    pub d_quat: Vec<[f64; 4]>,
    pub d_log_scale: Vec<Vector3<f64>>,
    pub d_rho: Vec<f64>,
    pub d_color: Vec<Vector3<f64>>,
    pub d_beta_raw: f64,
    /// Gradient of the loss w.r.t. each projected center, in pixels.
    pub d_mean2d: Vec<Vector2<f64>>,
    /// Whether the Gaussian produced a splat in this view.
    pub projected: Vec<bool>,
}

impl GradientBuffer {
    pub fn zeros(n: usize) -> GradientBuffer {
        GradientBuffer {
            d_mu: vec![Vector3::zeros(); n],
            d_quat: vec![[0.0; 4]; n],
            d_log_scale: vec![Vector3::zeros(); n],
            d_rho: vec![0.0; n],
            d_color: vec![Vector3::zeros(); n],
            d_beta_raw: 0.0,
            d_mean2d: vec![Vector2::zeros(); n],
            projected: vec![false; n],
        }
    }

    /// Accumulate another buffer of the same size (e.g. gradients from a
    /// virtual view on top of a training view).
    pub fn accumulate(&mut self, other: &GradientBuffer) {
        assert_eq!(self.d_mu.len(), other.d_mu.len());
        for i in 0..self.d_mu.len() {
            self.d_mu[i] += other.d_mu[i];
            for c in 0..4 {
                self.d_quat[i][c] += other.d_quat[i][c];
            }
            self.d_log_scale[i] += other.d_log_scale[i];
            self.d_rho[i] += other.d_rho[i];
            self.d_color[i] += other.d_color[i];
            self.d_mean2d[i] += other.d_mean2d[i];
            self.projected[i] = self.projected[i] || other.projected[i];
        }
        self.d_beta_raw += other.d_beta_raw;
    }

    pub fn is_finite(&self) -> bool {
        self.d_beta_raw.is_finite()
            && self.d_mu.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_quat.iter().all(|q| q.iter().all(|x| x.is_finite()))
            && self.d_log_scale.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.d_rho.iter().all(|x| x.is_finite())
            && self.d_color.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Splats of one field/camera pair, depth-sorted, with per-splat opacity and
/// color pulled out of the field.
pub(crate) struct PreparedSplats {
    pub frames: Vec<SplatFrame>,
    pub opacity: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
    pub beta: f64,
    pub rejected: usize,
}

pub(crate) fn prepare_splats(
    field: &GaussianField,
    cam: &Camera,
    cfg: &RasterConfig,
) -> PreparedSplats {
    let beta = field.beta_g();
    let mahal_radius = effective_radius(beta, cfg.cull_epsilon);
    let mut frames: Vec<SplatFrame> = (0..field.len())
        .into_par_iter()
        .filter_map(|i| project_covariance(field, i, cam, cfg.lowpass, mahal_radius))
        .collect();
    let rejected = field.len() - frames.len();
    // Front-to-back order, ties broken by index for determinism.
    frames.sort_by(|a, b| {
        a.view_depth
            .total_cmp(&b.view_depth)
            .then(a.index.cmp(&b.index))
    });
    let opacity: Vec<f64> = frames.iter().map(|f| field.opacity(f.index)).collect();
    let color: Vec<Vector3<f64>> = frames.iter().map(|f| field.color[f.index]).collect();
    PreparedSplats { frames, opacity, color, beta, rejected }
}

/// Pixel range [x0, x1] x [y0, y1] (inclusive) covered by a splat's bounding
/// box, or None when it misses the image.
fn pixel_bounds(
    s: &SplatFrame,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let x0 = (s.mean2d.x - s.radius_px - 0.5).floor();
    let x1 = (s.mean2d.x + s.radius_px - 0.5).ceil();
    let y0 = (s.mean2d.y - s.radius_px - 0.5).floor();
    let y1 = (s.mean2d.y + s.radius_px - 0.5).ceil();
    if x1 < 0.0 || y1 < 0.0 || x0 >= width as f64 || y0 >= height as f64 {
        return None;
    }
    Some((
        x0.max(0.0) as usize,
        (x1.max(0.0) as usize).min(width - 1),
        y0.max(0.0) as usize,
        (y1.max(0.0) as usize).min(height - 1),
    ))
}

pub(crate) struct PixelOut {
    pub color: Vector3<f64>,
    pub alpha: f64,
    pub dist: f64,
    pub normal: Vector3<f64>,
    pub zdepth: f64,
    pub distortion: f64,
    pub contrib: u32,
    pub denom_clamped: bool,
}

/// Front-to-back compositing of one pixel over the given splat sequence.
/// `list` holds indices into `prep.frames` in depth order.
#[inline]
fn composite_pixel(
    prep: &PreparedSplats,
    list: &[u32],
    pix: Vector2<f64>,
    ray: Vector3<f64>,
    background: Vector3<f64>,
    cfg: &RasterConfig,
) -> PixelOut {
    let mut transmittance = 1.0;
    let mut color = Vector3::zeros();
    let mut alpha = 0.0;
    let mut dist = 0.0;
    let mut normal = Vector3::zeros();
    let mut distortion = 0.0;
    let (mut mom_w, mut mom_wz, mut mom_wz2) = (0.0, 0.0, 0.0);
    let mut contrib = 0u32;

    for &si in list {
        let s = &prep.frames[si as usize];
        let delta = pix - s.mean2d;
        let m2 = delta.dot(&(s.cov2d_inv * delta));
        let eval = solid_weight(m2, prep.beta);
        let a = (prep.opacity[si as usize] * eval.weight).min(cfg.alpha_clamp);
        if a < cfg.alpha_skip {
            continue;
        }
        let w = transmittance * a;

        let denom_i = s.normal_cam.dot(&ray).max(cfg.denom_clamp);
        let z_i = s.plane_dist / denom_i;
        let om = match cfg.distortion_weight {
            DistortionWeight::TransmittanceAlpha => w,
            DistortionWeight::AlphaOnly => a,
        };
        distortion += om * (z_i * z_i * mom_w - 2.0 * z_i * mom_wz + mom_wz2);
        mom_w += om;
        mom_wz += om * z_i;
        mom_wz2 += om * z_i * z_i;

        color += prep.color[si as usize] * w;
        alpha += w;
        dist += s.plane_dist * w;
        normal += s.normal_cam * w;
        contrib += 1;

        transmittance *= 1.0 - a;
        if transmittance < cfg.transmittance_stop {
            break;
        }
    }

    color += background * transmittance;
    let denom_px = normal.dot(&ray);
    let denom_clamped = contrib > 0 && denom_px < cfg.denom_clamp;
    let zdepth = dist / denom_px.max(cfg.denom_clamp);
    PixelOut { color, alpha, dist, normal, zdepth, distortion, contrib, denom_clamped }
}

/// Per-tile splat lists. Lists inherit the global depth order because splats
/// are visited in sorted order.
pub(crate) fn bin_tiles(
    frames: &[SplatFrame],
    width: usize,
    height: usize,
    tile_size: usize,
) -> (usize, usize, Vec<Vec<u32>>) {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (si, s) in frames.iter().enumerate() {
        let Some((x0, x1, y0, y1)) = pixel_bounds(s, width, height) else { continue };
        for ty in (y0 / tile_size)..=(y1 / tile_size) {
            for tx in (x0 / tile_size)..=(x1 / tile_size) {
                lists[ty * tiles_x + tx].push(si as u32);
            }
        }
    }
    (tiles_x, tiles_y, lists)
}

fn scatter_pixel(out: &mut RenderOutput, idx: usize, p: PixelOut) {
    out.color[idx] = p.color;
    out.alpha[idx] = p.alpha;
    out.dist[idx] = p.dist;
    out.normal[idx] = p.normal;
    out.zdepth[idx] = p.zdepth;
    out.distortion[idx] = p.distortion;
    out.contrib_count[idx] = p.contrib;
    if p.denom_clamped {
        out.clamped_denoms += 1;
    }
}

/// Tiled forward render. Tiles run in parallel; results are identical for
/// any worker count because each tile owns a disjoint block of pixels and
/// the scatter runs in tile order.
pub fn rasterize(
    field: &GaussianField,
    cam: &Camera,
    background: Vector3<f64>,
    cfg: &RasterConfig,
) -> RenderOutput {
    let prep = prepare_splats(field, cam, cfg);
    let (width, height) = (cam.width, cam.height);
    let (tiles_x, tiles_y, lists) = bin_tiles(&prep.frames, width, height, cfg.tile_size);

    let mut out = RenderOutput::zeros(width, height);
    out.rejected_splats = prep.rejected;

    let ts = cfg.tile_size;
    let tile_results: Vec<Vec<PixelOut>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let (x0, y0) = (tx * ts, ty * ts);
            let (x1, y1) = ((x0 + ts).min(width), (y0 + ts).min(height));
            let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for iy in y0..y1 {
                for ix in x0..x1 {
                    let pix = Vector2::new(ix as f64 + 0.5, iy as f64 + 0.5);
                    let ray = cam.pixel_ray(ix, iy);
                    pixels.push(composite_pixel(&prep, &lists[tile], pix, ray, background, cfg));
                }
            }
            pixels
        })
        .collect();

    for (tile, pixels) in tile_results.into_iter().enumerate() {
        let (tx, ty) = (tile % tiles_x, tile / tiles_x);
        let (x0, y0) = (tx * ts, ty * ts);
        let (x1, y1) = ((x0 + ts).min(width), (y0 + ts).min(height));
        let mut it = pixels.into_iter();
        for iy in y0..y1 {
            for ix in x0..x1 {
                scatter_pixel(&mut out, iy * width + ix, it.next().expect("tile pixel count"));
            }
        }
    }
    out
}

/// Per-pixel global-scan oracle: no tiling, no radius culling. Shares the
/// compositing contract (and code) with [`rasterize`].
pub fn rasterize_bruteforce(
    field: &GaussianField,
    cam: &Camera,
    background: Vector3<f64>,
    cfg: &RasterConfig,
) -> RenderOutput {
    let prep = prepare_splats(field, cam, cfg);
    let (width, height) = (cam.width, cam.height);
    let all: Vec<u32> = (0..prep.frames.len() as u32).collect();

    let mut out = RenderOutput::zeros(width, height);
    out.rejected_splats = prep.rejected;

    let rows: Vec<Vec<PixelOut>> = (0..height)
        .into_par_iter()
        .map(|iy| {
            (0..width)
                .map(|ix| {
                    let pix = Vector2::new(ix as f64 + 0.5, iy as f64 + 0.5);
                    let ray = cam.pixel_ray(ix, iy);
                    composite_pixel(&prep, &all, pix, ray, background, cfg)
                })
                .collect()
        })
        .collect();

    for (iy, row) in rows.into_iter().enumerate() {
        for (ix, p) in row.into_iter().enumerate() {
            scatter_pixel(&mut out, iy * width + ix, p);
        }
    }
    out
}

/// Local frame of the depth-normal stencil at one pixel.
struct DepthNormalFrame {
    dx: Vector3<f64>,
    dy: Vector3<f64>,
    cross: Vector3<f64>,
    cross_norm: f64,
    /// +1 or -1 so the normal faces the camera (negative z).
    flip: f64,
}

fn depth_normal_frame(
    zdepth: &[f64],
    cam: &Camera,
    ix: usize,
    iy: usize,
) -> Option<DepthNormalFrame> {
    let (w, h) = (cam.width, cam.height);
    if ix == 0 || iy == 0 || ix + 1 >= w || iy + 1 >= h {
        return None;
    }
    let z = |x: usize, y: usize| zdepth[y * w + x];
    let (zl, zr, zu, zd) = (z(ix - 1, iy), z(ix + 1, iy), z(ix, iy - 1), z(ix, iy + 1));
    if zl <= 0.0 || zr <= 0.0 || zu <= 0.0 || zd <= 0.0 {
        return None;
    }
    let dx = cam.pixel_ray(ix + 1, iy) * zr - cam.pixel_ray(ix - 1, iy) * zl;
    let dy = cam.pixel_ray(ix, iy + 1) * zd - cam.pixel_ray(ix, iy - 1) * zu;
    let cross = dx.cross(&dy);
    let cross_norm = cross.norm();
    if cross_norm < 1e-18 {
        return None;
    }
    let flip = if cross.z > 0.0 { -1.0 } else { 1.0 };
    Some(DepthNormalFrame { dx, dy, cross, cross_norm, flip })
}

/// Unit normals from the gradient of the depth map: back-project the
/// 4-neighborhood, take central differences, and orient the cross product
/// toward the camera (negative z). Border pixels and pixels with a
/// non-positive neighbor depth get a zero normal and are excluded from
/// losses.
pub fn depth_to_normal(zdepth: &[f64], cam: &Camera) -> Vec<Vector3<f64>> {
    assert_eq!(zdepth.len(), cam.width * cam.height);
    let w = cam.width;
    (0..cam.height)
        .into_par_iter()
        .flat_map_iter(|iy| {
            (0..w).map(move |ix| match depth_normal_frame(zdepth, cam, ix, iy) {
                Some(f) => f.cross * (f.flip / f.cross_norm),
                None => Vector3::zeros(),
            })
        })
        .collect()
}

/// Chain upstream gradients on the depth-normal map back to the depth map.
pub fn depth_to_normal_backward(
    zdepth: &[f64],
    cam: &Camera,
    d_normal: &[Vector3<f64>],
) -> Vec<f64> {
    assert_eq!(zdepth.len(), d_normal.len());
    let w = cam.width;
    let mut d_z = vec![0.0; zdepth.len()];
    // Each pixel scatters into its 4 neighbors; kept sequential for
    // deterministic accumulation.
    for iy in 0..cam.height {
        for ix in 0..w {
            let g_n = d_normal[iy * w + ix];
            if g_n.x == 0.0 && g_n.y == 0.0 && g_n.z == 0.0 {
                continue;
            }
            let Some(f) = depth_normal_frame(zdepth, cam, ix, iy) else { continue };
            let u = f.cross / f.cross_norm;
            let g_u = g_n * f.flip;
            let g_cross = (g_u - u * u.dot(&g_u)) / f.cross_norm;
            let g_dx = f.dy.cross(&g_cross);
            let g_dy = g_cross.cross(&f.dx);
            d_z[iy * w + ix + 1] += cam.pixel_ray(ix + 1, iy).dot(&g_dx);
            d_z[iy * w + ix - 1] -= cam.pixel_ray(ix - 1, iy).dot(&g_dx);
            d_z[(iy + 1) * w + ix] += cam.pixel_ray(ix, iy + 1).dot(&g_dy);
            d_z[(iy - 1) * w + ix] -= cam.pixel_ray(ix, iy - 1).dot(&g_dy);
        }
    }
    d_z
}
