//! Point cloud and configuration I/O.

pub mod config;
pub mod ply;
pub mod text;

pub use config::{read_config, write_config, ConfigDocument, MergeEntry, PipelineConfig};
pub use ply::{parse_header, read_ply, write_ply, PlyFormat, PlyHeader, ScalarKind};
pub use text::{read_labels, read_table, read_xyz, write_labels, write_table, write_xyz};

use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::Result;

/// Reads a `.ply` file, or the plain-text format for any other extension.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    if is_ply(path) {
        read_ply(&std::fs::read(path)?)
    } else {
        read_xyz(&std::fs::read_to_string(path)?)
    }
}

/// Writes binary PLY for `.ply` paths, plain text otherwise.
pub fn save_cloud(path: &Path, cloud: &PointCloud) -> Result<()> {
    if is_ply(path) {
        std::fs::write(path, write_ply(cloud, PlyFormat::BinaryLittleEndian))?;
    } else {
        std::fs::write(path, write_xyz(cloud))?;
    }
    Ok(())
}

fn is_ply(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("ply"))
}
