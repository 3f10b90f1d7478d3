//! Box-embedding geometry and analysis toolkit.
//!
//! * [`boxcore`]: hard and Gumbel-smoothed box algebra.
//! * [`synthgen`]: synthetic hierarchies, triplets, scores and the
//!   Monte-Carlo volume oracle.
//! * [`boxfit`]: contrastive fitting of a table of boxes.
//! * [`boxsne`]: Box-SNE reduction to low-dimensional scalar-width boxes.
//! * [`hcluster`]: agglomerative clustering under the join distance.
//! * [`analytics`]: kNN score prediction and tree-quality metrics.
//! * [`io`] and [`render`]: text file formats and SVG output.

pub mod analytics;
pub mod boxcore;
pub mod boxfit;
pub mod boxsne;
pub mod error;
pub mod hcluster;
pub mod io;
pub mod render;
pub mod stats;
pub mod synthgen;

pub use error::{Error, Result};
