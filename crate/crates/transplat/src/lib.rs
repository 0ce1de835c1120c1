//! CPU toolkit for reconstructing transparent surfaces with Gaussian splatting.
//!
//! The crate covers the full geometry pipeline: a software tile rasterizer
//! with depth-sorted alpha compositing, four per-pixel depth estimators
//! (standard, unbiased, nearest, and first-surface maximum-weight-window),
//! a two-stage trainer that separates geometry learning from appearance
//! refinement, TSDF fusion with marching cubes, and mesh/image metrics.
//! Synthetic scenes with analytic ground truth drive the test suite.
//!
//! See the `book/` guide for narrative chapters on each subsystem, and the
//! `transplat` binary for the command-line pipeline.

pub mod appearance;
pub mod camera;
pub mod cli;
pub mod depth;
pub mod error;
pub mod grad;
pub mod img;
pub mod losses;
pub mod mesh;
pub mod projection;
pub mod rasterizer;
pub mod scene;
pub mod synth;
pub mod trainer;

pub use camera::CameraView;
pub use error::{Error, Result};
pub use scene::{ActivatedGaussian, Gaussian, SceneFile, SceneMeta};

// Compile and run the code samples in the book chapters as doc-tests so the
// guide can never drift out of sync with the API.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/rendering.md")]
    mod rendering {}
    #[doc = include_str!("../../../book/src/depth.md")]
    mod depth {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/meshing.md")]
    mod meshing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
