//! Diachronic satellite stereo: rectification of multi-date pairs with
//! unipolar disparities, ground-truth disparities from a reference DSM,
//! triangulation and DSM gridding, evaluation, and pair curation.
//!
//! Every stage works on [`Raster`]s (32-bit samples, NaN as nodata) and
//! [`RpcModel`] cameras. The [`synth`] module builds scenes with exact ground
//! truth for checking each stage.

pub mod cli;
pub mod curate;
pub mod dense;
pub mod error;
pub mod evaluate;
pub mod geo;
pub mod gt;
pub mod homography;
pub mod plot;
pub mod raster;
pub mod rectify;
pub mod rpc;
pub mod sparse_match;
pub mod synth;
pub mod triangulate;

pub use error::{Error, Result};
pub use homography::Homography;
pub use raster::{GeoTransform, Raster, RasterFormat, VegetationMask};
pub use rpc::{GroundPoint, PixelPoint, RpcModel};
