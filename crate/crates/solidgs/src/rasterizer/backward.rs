//! Reverse-mode differentiation of the tiled forward pass.
//!
//! Two stages: (1) per-pixel replay accumulates gradients on each splat's
//! screen-space quantities (mean2d, cov2d, camera-frame normal, plane
//! distance, color, opacity, kernel exponent); (2) a per-splat pass chains
//! those through the projection, the covariance factorization, and the
//! quaternion normalization to the raw field parameters.
//!
//! Stage 1 runs parallel over tiles with per-tile accumulators that are
//! reduced in tile order, so results are independent of the worker count.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::{
    bin_tiles, prepare_splats, DistortionWeight, GradientBuffer, OutputGrads, PreparedSplats,
    RasterConfig, RasterizerError, RenderOutput,
};
use crate::field::{min_scale_axis, GaussianField};
use crate::geometry::{unit_quat_to_rotation, Camera, Quat};
use crate::kernel::solid_weight;

/// Gradient of the loss w.r.t. one splat's screen-space quantities.
#[derive(Clone, Copy)]
struct ScreenGrad {
    mean2d: Vector2<f64>,
    cov_xx: f64,
    cov_xy: f64,
    cov_yy: f64,
    normal_cam: Vector3<f64>,
    plane_dist: f64,
    color: Vector3<f64>,
    rho_logit: f64,
}

impl ScreenGrad {
    fn zero() -> ScreenGrad {
        ScreenGrad {
            mean2d: Vector2::zeros(),
            cov_xx: 0.0,
            cov_xy: 0.0,
            cov_yy: 0.0,
            normal_cam: Vector3::zeros(),
            plane_dist: 0.0,
            color: Vector3::zeros(),
            rho_logit: 0.0,
        }
    }

    fn add(&mut self, o: &ScreenGrad) {
        self.mean2d += o.mean2d;
        self.cov_xx += o.cov_xx;
        self.cov_xy += o.cov_xy;
        self.cov_yy += o.cov_yy;
        self.normal_cam += o.normal_cam;
        self.plane_dist += o.plane_dist;
        self.color += o.color;
        self.rho_logit += o.rho_logit;
    }
}

/// One composited contribution recorded during replay.
struct Contrib {
    /// Position in the tile's splat list.
    list_pos: u32,
    alpha: f64,
    /// Transmittance before this contribution.
    t_before: f64,
    /// Blend weight T * alpha.
    weight: f64,
    /// Distortion weight (T*alpha or alpha).
    om: f64,
    /// Ray-plane intersection depth of this splat on this ray.
    z: f64,
    /// Unclamped ray-plane denominator.
    denom_raw: f64,
    /// Whether alpha hit the upper clamp (blocks the opacity/kernel chain).
    alpha_clamped: bool,
    kernel_weight: f64,
    d_weight_d_m2: f64,
    d_weight_d_beta: f64,
}

fn check_finite(name: &'static str, vals: &[f64]) -> Result<(), RasterizerError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(RasterizerError::NonFiniteUpstream(name))
    }
}

fn check_finite_vec3(name: &'static str, vals: &[Vector3<f64>]) -> Result<(), RasterizerError> {
    if vals.iter().all(|v| v.iter().all(|x| x.is_finite())) {
        Ok(())
    } else {
        Err(RasterizerError::NonFiniteUpstream(name))
    }
}

/// Gradients of the loss `L = sum(d_out .* out)` w.r.t. every field
/// parameter, for the forward pass that produced `out` on this camera.
pub fn backward(
    field: &GaussianField,
    cam: &Camera,
    out: &RenderOutput,
    d_out: &OutputGrads,
    background: Vector3<f64>,
    cfg: &RasterConfig,
) -> Result<GradientBuffer, RasterizerError> {
    let n_pix = cam.width * cam.height;
    if out.len() != n_pix || d_out.d_alpha.len() != n_pix {
        return Err(RasterizerError::DimensionMismatch {
            got: out.len().max(d_out.d_alpha.len()),
            want: n_pix,
        });
    }
    check_finite_vec3("color", &d_out.d_color)?;
    check_finite("alpha", &d_out.d_alpha)?;
    check_finite("dist", &d_out.d_dist)?;
    check_finite_vec3("normal", &d_out.d_normal)?;
    check_finite("zdepth", &d_out.d_zdepth)?;
    check_finite("distortion", &d_out.d_distortion)?;

    let prep = prepare_splats(field, cam, cfg);
    let (width, height) = (cam.width, cam.height);
    let (tiles_x, tiles_y, lists) = bin_tiles(&prep.frames, width, height, cfg.tile_size);
    let ts = cfg.tile_size;

    // Stage 1: per-tile screen-space gradients.
    let tile_grads: Vec<(Vec<ScreenGrad>, f64)> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let list = &lists[tile];
            let mut grads = vec![ScreenGrad::zero(); list.len()];
            let mut beta_acc = 0.0;
            if list.is_empty() {
                return (grads, beta_acc);
            }
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let (x0, y0) = (tx * ts, ty * ts);
            let (x1, y1) = ((x0 + ts).min(width), (y0 + ts).min(height));
            let mut contribs: Vec<Contrib> = Vec::with_capacity(list.len().min(64));
            for iy in y0..y1 {
                for ix in x0..x1 {
                    backward_pixel(
                        &prep,
                        list,
                        ix,
                        iy,
                        cam,
                        out,
                        d_out,
                        background,
                        cfg,
                        &mut contribs,
                        &mut grads,
                        &mut beta_acc,
                    );
                }
            }
            (grads, beta_acc)
        })
        .collect();

    // Reduce in tile order (deterministic).
    let mut global = vec![ScreenGrad::zero(); prep.frames.len()];
    let mut d_beta = 0.0;
    for (tile, (grads, beta_acc)) in tile_grads.iter().enumerate() {
        for (k, &si) in lists[tile].iter().enumerate() {
            global[si as usize].add(&grads[k]);
        }
        d_beta += beta_acc;
    }

    // Stage 2: chain screen-space gradients to raw parameters.
    let chained: Vec<ParamGrad> = prep
        .frames
        .par_iter()
        .zip(global.par_iter())
        .map(|(frame, g)| chain_to_params(field, cam, frame.index, g))
        .collect();

    let mut buf = GradientBuffer::zeros(field.len());
    for (frame, (g, chain)) in prep.frames.iter().zip(global.iter().zip(chained.iter())) {
        let gi = frame.index;
        buf.d_mu[gi] = chain.mu;
        buf.d_quat[gi] = chain.quat;
        buf.d_log_scale[gi] = chain.log_scale;
        buf.d_rho[gi] = g.rho_logit;
        buf.d_color[gi] = g.color;
        buf.d_mean2d[gi] = g.mean2d;
        buf.projected[gi] = true;
    }
    buf.d_beta_raw = d_beta * field.d_beta_g_d_raw();
    debug_assert!(buf.is_finite());
    Ok(buf)
}

#[allow(clippy::too_many_arguments)]
fn backward_pixel(
    prep: &PreparedSplats,
    list: &[u32],
    ix: usize,
    iy: usize,
    cam: &Camera,
    out: &RenderOutput,
    d_out: &OutputGrads,
    background: Vector3<f64>,
    cfg: &RasterConfig,
    contribs: &mut Vec<Contrib>,
    grads: &mut [ScreenGrad],
    beta_acc: &mut f64,
) {
    let idx = iy * out.width + ix;
    let uc = d_out.d_color[idx];
    let ua = d_out.d_alpha[idx];
    let un = d_out.d_normal[idx];
    let ud = d_out.d_dist[idx];
    let uz = d_out.d_zdepth[idx];
    let udist = d_out.d_distortion[idx];
    if uc == Vector3::zeros()
        && ua == 0.0
        && un == Vector3::zeros()
        && ud == 0.0
        && uz == 0.0
        && udist == 0.0
    {
        return;
    }

    let pix = Vector2::new(ix as f64 + 0.5, iy as f64 + 0.5);
    let ray = cam.pixel_ray(ix, iy);

    // Fold the zdepth map's gradient into the dist and normal blends:
    // z = D / max(N.ray, clamp).
    let denom_raw = out.normal[idx].dot(&ray);
    let (ud_eff, un_eff) = if denom_raw > cfg.denom_clamp {
        (
            ud + uz / denom_raw,
            un - ray * (uz * out.dist[idx] / (denom_raw * denom_raw)),
        )
    } else {
        (ud + uz / cfg.denom_clamp, un)
    };

    // Replay the forward compositing, recording contributions.
    contribs.clear();
    let mut transmittance = 1.0;
    let (mut mom_w, mut mom_wz, mut mom_wz2) = (0.0, 0.0, 0.0);
    for (list_pos, &si) in list.iter().enumerate() {
        let s = &prep.frames[si as usize];
        let delta = pix - s.mean2d;
        let m2 = delta.dot(&(s.cov2d_inv * delta));
        let eval = solid_weight(m2, prep.beta);
        let raw_alpha = prep.opacity[si as usize] * eval.weight;
        let a = raw_alpha.min(cfg.alpha_clamp);
        if a < cfg.alpha_skip {
            continue;
        }
        let w = transmittance * a;
        let denom_i = s.normal_cam.dot(&ray);
        let z_i = s.plane_dist / denom_i.max(cfg.denom_clamp);
        let om = match cfg.distortion_weight {
            DistortionWeight::TransmittanceAlpha => w,
            DistortionWeight::AlphaOnly => a,
        };
        mom_w += om;
        mom_wz += om * z_i;
        mom_wz2 += om * z_i * z_i;
        contribs.push(Contrib {
            list_pos: list_pos as u32,
            alpha: a,
            t_before: transmittance,
            weight: w,
            om,
            z: z_i,
            denom_raw: denom_i,
            alpha_clamped: raw_alpha > cfg.alpha_clamp,
            kernel_weight: eval.weight,
            d_weight_d_m2: eval.d_weight_d_m2,
            d_weight_d_beta: eval.d_weight_d_beta,
        });
        transmittance *= 1.0 - a;
        if transmittance < cfg.transmittance_stop {
            break;
        }
    }
    if contribs.is_empty() {
        return;
    }

    let (tot_w, tot_wz, tot_wz2) = (mom_w, mom_wz, mom_wz2);
    // Suffix accumulator: sum over later contributions of g_omega * omega,
    // seeded with the background term's dependence on final transmittance.
    let mut suffix = uc.dot(&background) * transmittance;

    for c in contribs.iter().rev() {
        let si = list[c.list_pos as usize] as usize;
        let s = &prep.frames[si];
        let g = &mut grads[c.list_pos as usize];

        // Distortion partials from the pairwise form, via running totals.
        let rest_w = tot_w - c.om;
        let rest_wz = tot_wz - c.om * c.z;
        let rest_wz2 = tot_wz2 - c.om * c.z * c.z;
        let d_dist_d_om = c.z * c.z * rest_w - 2.0 * c.z * rest_wz + rest_wz2;
        let d_dist_d_z = 2.0 * c.om * (c.z * rest_w - rest_wz);
        let g_om = udist * d_dist_d_om;
        let g_z = udist * d_dist_d_z;

        // Gradient w.r.t. this contribution's blend weight w = T * alpha.
        let mut g_w =
            uc.dot(&prep.color[si]) + ua + ud_eff * s.plane_dist + un_eff.dot(&s.normal_cam);
        let mut d_alpha_direct = 0.0;
        match cfg.distortion_weight {
            DistortionWeight::TransmittanceAlpha => g_w += g_om,
            DistortionWeight::AlphaOnly => d_alpha_direct += g_om,
        }

        let d_alpha = c.t_before * g_w - suffix / (1.0 - c.alpha) + d_alpha_direct;
        suffix += g_w * c.weight;

        // Ray-plane depth chain: z = plane_dist / max(denom, clamp).
        let (g_pd_from_z, g_n_from_z) = if c.denom_raw > cfg.denom_clamp {
            (
                g_z / c.denom_raw,
                -ray * (g_z * s.plane_dist / (c.denom_raw * c.denom_raw)),
            )
        } else {
            (g_z / cfg.denom_clamp, Vector3::zeros())
        };

        g.color += uc * c.weight;
        g.plane_dist += ud_eff * c.weight + g_pd_from_z;
        g.normal_cam += un_eff * c.weight + g_n_from_z;

        if !c.alpha_clamped {
            // alpha = rho * kernel(m2, beta)
            let rho = prep.opacity[si];
            let g_kernel = d_alpha * rho;
            g.rho_logit += d_alpha * c.kernel_weight * rho * (1.0 - rho);
            *beta_acc += g_kernel * c.d_weight_d_beta;
            let g_m2 = g_kernel * c.d_weight_d_m2;

            let delta = pix - s.mean2d;
            let lam_delta = s.cov2d_inv * delta;
            g.mean2d += lam_delta * (-2.0 * g_m2);
            // d m2 / d cov2d = -(inv . delta)(inv . delta)^T
            g.cov_xx -= g_m2 * lam_delta.x * lam_delta.x;
            g.cov_xy -= 2.0 * g_m2 * lam_delta.x * lam_delta.y;
            g.cov_yy -= g_m2 * lam_delta.y * lam_delta.y;
        }
    }
}

struct ParamGrad {
    mu: Vector3<f64>,
    quat: [f64; 4],
    log_scale: Vector3<f64>,
}

/// Chain one splat's screen-space gradients to (mu, quat, log_scale).
fn chain_to_params(
    field: &GaussianField,
    cam: &Camera,
    gi: usize,
    g: &ScreenGrad,
) -> ParamGrad {
    let w_rot = cam.rotation();
    let mu = field.mu[gi];
    let t = cam.to_camera(&mu);
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;

    let q_raw = field.quat[gi];
    let q_norm = q_raw.norm();
    let q_hat = Quat::new(
        q_raw.w / q_norm,
        q_raw.x / q_norm,
        q_raw.y / q_norm,
        q_raw.z / q_norm,
    );
    let r = unit_quat_to_rotation(&q_hat);
    let scales = field.scales(gi);
    let s2 = Matrix3::from_diagonal(&scales.map(|s| s * s));
    let sigma = r * s2 * r.transpose();
    let v = w_rot * sigma * w_rot.transpose();
    let j = crate::field::projection_jacobian(cam, &t);

    // Projection chain: mean2d and the Jacobian's own dependence on t.
    let g_cov = Matrix2::new(g.cov_xx, 0.5 * g.cov_xy, 0.5 * g.cov_xy, g.cov_yy);
    let mut g_t = j.transpose() * g.mean2d;
    let g_j = 2.0 * g_cov * j * v;
    g_t.x += g_j[(0, 2)] * (-cam.fx * inv_z2);
    g_t.y += g_j[(1, 2)] * (-cam.fy * inv_z2);
    g_t.z += g_j[(0, 0)] * (-cam.fx * inv_z2)
        + g_j[(1, 1)] * (-cam.fy * inv_z2)
        + g_j[(0, 2)] * (2.0 * cam.fx * t.x * inv_z2 * inv_z)
        + g_j[(1, 2)] * (2.0 * cam.fy * t.y * inv_z2 * inv_z);
    let mut g_mu = w_rot.transpose() * g_t;

    // Covariance chain: cov2d = J (W Sigma W^T) J^T + lowpass.
    let g_v = j.transpose() * g_cov * j;
    let g_sigma = w_rot.transpose() * g_v * w_rot;
    let mut g_r = 2.0 * g_sigma * r * s2;
    let rt_gs_r = r.transpose() * g_sigma * r;
    let mut g_log_scale = Vector3::zeros();
    for k in 0..3 {
        // d sigma / d s2_k picked out by R columns; s2_k = exp(2 ls_k).
        g_log_scale[k] = rt_gs_r[(k, k)] * 2.0 * scales[k] * scales[k];
    }

    // Normal and plane-distance chain through the min-scale column.
    let k_min = min_scale_axis(&scales);
    let col: Vector3<f64> = r.column(k_min).into();
    let offset = mu - cam.center();
    let sign = if offset.dot(&col) < 0.0 { -1.0 } else { 1.0 };
    let n_world = col * sign;
    g_mu += n_world * g.plane_dist;
    let g_col = (w_rot.transpose() * g.normal_cam + offset * g.plane_dist) * sign;
    for row in 0..3 {
        g_r[(row, k_min)] += g_col[row];
    }

    // Quaternion chain: dR/dq at the normalized quaternion, then the
    // normalization pullback.
    let g_q_hat = rotation_grad_to_quat(&g_r, &q_hat);
    let q_hat_v = Vector4::new(q_hat.w, q_hat.x, q_hat.y, q_hat.z);
    let g_q_raw = (g_q_hat - q_hat_v * q_hat_v.dot(&g_q_hat)) / q_norm;

    ParamGrad {
        mu: g_mu,
        quat: [g_q_raw.x, g_q_raw.y, g_q_raw.z, g_q_raw.w],
        log_scale: g_log_scale,
    }
}

/// Contract a gradient on the rotation matrix with dR/dq for a unit
/// quaternion (w, x, y, z). Returns (d/dw, d/dx, d/dy, d/dz).
fn rotation_grad_to_quat(g_r: &Matrix3<f64>, q: &Quat) -> Vector4<f64> {
    let (w, x, y, z) = (q.w, q.x, q.y, q.z);
    let dr_dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dr_dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dr_dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dr_dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    let contract = |d: &Matrix3<f64>| {
        let mut acc = 0.0;
        for i in 0..3 {
            for jj in 0..3 {
                acc += g_r[(i, jj)] * d[(i, jj)];
            }
        }
        acc
    };
    Vector4::new(contract(&dr_dw), contract(&dr_dx), contract(&dr_dy), contract(&dr_dz))
}
