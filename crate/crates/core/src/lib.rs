//! Curb extraction from mobile LiDAR point clouds.

pub mod cloud_io;
pub mod config;
pub mod energy;
pub mod error;
pub mod evaluation;
pub mod ground_filter;
pub mod lcpm;
pub mod pipeline;
pub mod synth;
pub mod voxel_grid;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/point-clouds.md")]
    mod point_clouds {}
    #[doc = include_str!("../../../book/src/ground.md")]
    mod ground {}
    #[doc = include_str!("../../../book/src/energy.md")]
    mod energy {}
    #[doc = include_str!("../../../book/src/linking.md")]
    mod linking {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
