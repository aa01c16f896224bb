//! Sparse-view surface reconstruction with solid Gaussian splatting.
//!
//! The crate fits a field of flattened, generalized-exponential ("solid")
//! Gaussians to a handful of posed RGB views, renders depth/normal/distortion
//! maps with an analytically differentiable CPU rasterizer, and extracts a
//! triangle mesh by TSDF fusion + marching cubes.
//!
//! Module map:
//! - [`geometry`]: cameras, quaternions, virtual-view pose synthesis
//! - [`kernel`]: the generalized-exponential kernel and its derivatives
//! - [`field`]: the Gaussian scene representation and its checkpoint format
//! - [`rasterizer`]: tiled forward splatting + analytic backward pass
//! - [`losses`]: photometric, geometric-regularization and prior losses
//! - [`trainer`]: Adam optimization loop, densification, solidness resets
//! - [`mesher`]: TSDF fusion, marching cubes, chamfer/PSNR metrics
//! - [`dataio`]: scene bundles on disk and the synthetic scene generator

pub mod dataio;
pub mod field;
pub mod geometry;
pub mod kernel;
pub mod losses;
pub mod mesher;
pub mod rasterizer;
pub mod trainer;

mod ply;

/// Pixels with accumulated alpha at or below this threshold are treated as
/// background by the geometric losses and by TSDF fusion.
pub const ALPHA_MASK_THRESHOLD: f64 = 0.5;
