//! Meta-learned domain generalization for single image dehazing.
//!
//! A hazy image passes through an adaptation network that emits a
//! preliminary parameter; the preliminary parameters of several images from
//! one domain are aggregated into a task parameter that conditions a shared
//! encoder/decoder dehazer. Training samples tasks from several synthetic
//! haze domains and adds a domain classifier and a contrastive regularizer
//! over task parameters. At inference the task parameter comes from the
//! input image plus optional unlabeled context images, with no gradient
//! updates.

pub mod adapt;
pub mod aggregate;
pub mod backbone;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod datagen;
pub mod dcr;
pub mod error;
pub mod evaluate;
pub mod extractor;
pub mod gradcheck;
pub mod image;
pub mod losses;
pub mod nn;
pub mod trainer;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use image::{DepthMap, Image};
