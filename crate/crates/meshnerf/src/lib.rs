//! Few-view radiance-field reconstruction guided by a mesh template library.
//!
//! The pipeline has five stages:
//!
//! 1. [`library`] — render binary silhouettes of watertight template meshes
//!    from poses sampled on a sphere and persist them with their cameras.
//! 2. [`retrieval`] — match input silhouettes against the library by IoU,
//!    vote for a template model, and assign one library pose per view with a
//!    backtracking search that keeps the pose order consistent with the
//!    input image order.
//! 3. [`trainer`] phase one — pretrain a density field against occupancy
//!    queries of the retrieved mesh.
//! 4. [`trainer`] phase two — jointly optimize a deformation field and the
//!    camera poses by a re-rendering loss, with coarse-to-fine positional
//!    encoding.
//! 5. [`trainer`] phase three — add the color network and fine-tune
//!    everything with deformation regularizers.
//!
//! [`metrics`] scores novel-view renders (PSNR/SSIM and a combined average
//! metric) and reports pose registration errors after global alignment.

pub mod autodiff;
pub mod camera;
pub mod error;
pub mod fields;
pub mod geom;
pub mod img;
pub mod library;
pub mod mask;
pub mod mesh;
pub mod metrics;
pub mod render;
pub mod retrieval;
pub mod rng;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
