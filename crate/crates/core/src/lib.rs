//! Non-learned core of a center-keypoint instance segmentation pipeline.
//!
//! Objects are found as peaks on a downscaled center heatmap; a width/height
//! map and a sub-cell offset map turn each peak into a box. Each box is then
//! cropped from a feature pyramid by bilinear grid sampling, segmented, and
//! pasted back into the image by bilinear vote splatting. Training-time
//! boundary refinement draws random floating-point points and keeps the most
//! uncertain ones.
//!
//! Modules:
//!
//! - [`tensor`]: dense rasters and the sampling kernels everything else uses.
//! - [`codec`]: ground-truth target encoding and box decoding.
//! - [`loss`]: training losses with analytic gradients.
//! - [`roi`]: ROI cropping, vote pasting and mask assembly.
//! - [`points`]: uncertainty-biased point sampling and soft labels.
//! - [`eval`]: IOU, matching, average precision, leaf metrics.
//! - [`mask`]: binary masks and their run-length encoding.
//! - [`io`]: FMAP rasters, boxes CSV and instance-mask JSON.
//! - [`rng`]: the seeded counter-based generator shared by every random step.
//!
//! Coordinates follow the pixel-center-at-integer convention everywhere: the
//! value stored at column `i`, row `j` lives at the continuous point `(i, j)`
//! and pixel `i` covers `[i - 0.5, i + 0.5]`.

pub mod codec;
pub mod error;
pub mod eval;
pub mod io;
pub mod loss;
pub mod mask;
pub mod points;
pub mod rng;
pub mod roi;
pub mod tensor;

pub use codec::{BBox, Detection, DetectionTargets};
pub use error::{Error, Result};
pub use mask::{BinaryMask, InstanceMask};
pub use tensor::{FeatureMap, RoiRect, SamplePoint};
