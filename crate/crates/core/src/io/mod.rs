//! File formats used by the command-line tool.
//!
//! - FMAP: little-endian binary rasters ([`fmap`]).
//! - Boxes CSV with header `image_id,cu,cv,w,h[,score]` ([`boxes_csv`]).
//! - Instance-mask JSON with run-length encoded masks ([`masks_json`]).
//!
//! Floats are written in the shortest decimal form that parses back to the
//! same value, so write/read round trips are exact. Parse failures carry the
//! file path and a byte offset or line number.

pub mod boxes_csv;
pub mod fmap;
pub mod masks_json;

pub use boxes_csv::{read_boxes_csv, write_boxes_csv, BoxRecord};
pub use fmap::{read_fmap, write_fmap};
pub use masks_json::{read_masks_json, write_masks_json, MaskFile, MaskRecord};

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
