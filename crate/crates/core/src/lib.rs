//! Multi-resolution semantic segmentation of dense point clouds.
//!
//! Large structural classes are segmented on a voxel-subsampled cloud with
//! the detail classes merged into them. Only the points landing in those
//! merged ("concatenated") classes are then segmented again at full
//! resolution, and the two results are composed into one labeling.
//!
//! ```no_run
//! use mrseg::{io, pipeline};
//! # fn main() -> mrseg::Result<()> {
//! let config = io::read_config(&std::fs::read_to_string("config.json")?)?;
//! let train = vec![io::load_cloud("train.ply".as_ref())?];
//! let trained = pipeline::train_pipeline(&train, &config)?;
//! let out = trained.run(&io::load_cloud("scan.ply".as_ref())?, &config)?;
//! println!("{}", out.stats.to_json());
//! # Ok(())
//! # }
//! ```

pub mod classifier;
pub mod cloud;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod spatial;
pub mod subsample;
pub mod synthetic;

pub use cloud::{ClassId, ClassSchema, MergeMap, MergedSchema, PointCloud, Resolution};
pub use error::{Error, Result};
