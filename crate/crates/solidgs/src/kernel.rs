//! The generalized-exponential ("solid") kernel, its partial derivatives, and
//! the culling radius where it falls below a visibility threshold.
//!
//! The kernel is `w(m², β) = exp{-(m²/2)^(β/2)}` over the squared Mahalanobis
//! distance m². At β = 2 it is the standard Gaussian `exp(-m²/2)`; as β grows
//! the profile flattens toward a uniform disk inside one standard deviation
//! with a sharp falloff beyond it.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("solidness exponent must be > 1, got {0}")]
    BetaOutOfRange(f64),
}

/// Kernel value and partial derivatives at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct KernelEval {
    /// `exp{-(m²/2)^(β/2)}`, in (0, 1].
    pub weight: f64,
    /// ∂weight/∂m², always ≤ 0.
    pub d_weight_d_m2: f64,
    /// ∂weight/∂β.
    pub d_weight_d_beta: f64,
}

/// Clamp applied to m² inside logarithms and negative powers; removes the
/// center singularity of the β-gradient and of the m²-gradient when β < 2.
const M2_FLOOR: f64 = 1e-12;

/// Evaluate the solid kernel and its derivatives.
///
/// Errors when `beta <= 1` (the kernel loses differentiability at its center
/// for exponents at or below 1). Negative m² from upstream rounding is
/// clamped to zero.
pub fn eval_solid(m2: f64, beta: f64) -> Result<KernelEval, KernelError> {
    if !(beta > 1.0) {
        return Err(KernelError::BetaOutOfRange(beta));
    }
    Ok(solid_weight(m2, beta))
}

/// Unchecked kernel evaluation for callers that validated β once up front.
pub(crate) fn solid_weight(m2: f64, beta: f64) -> KernelEval {
    let m2 = m2.max(0.0);
    let half_exp = 0.5 * beta;
    let u = 0.5 * m2;
    let weight = (-u.powf(half_exp)).exp();

    let d_weight_d_m2 = if m2 == 0.0 {
        if beta > 2.0 {
            0.0
        } else if beta == 2.0 {
            -0.5 * weight
        } else {
            let u_c = 0.5 * M2_FLOOR;
            -0.25 * beta * u_c.powf(half_exp - 1.0) * weight
        }
    } else {
        -0.25 * beta * u.powf(half_exp - 1.0) * weight
    };

    let u_c = u.max(0.5 * M2_FLOOR);
    let d_weight_d_beta = -0.5 * weight * u_c.powf(half_exp) * u_c.ln();

    KernelEval { weight, d_weight_d_m2, d_weight_d_beta }
}

/// Mahalanobis radius r where the kernel drops to `epsilon`:
/// `r = sqrt(2 (ln 1/ε)^(2/β))`. Solid kernels (large β) get markedly
/// smaller culling radii than the classical ~3σ Gaussian footprint.
pub fn effective_radius(beta: f64, epsilon: f64) -> f64 {
    debug_assert!(beta > 1.0 && epsilon > 0.0 && epsilon < 1.0);
    (2.0 * (1.0 / epsilon).ln().powf(2.0 / beta)).sqrt()
}
