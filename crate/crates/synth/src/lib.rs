//! Synthetic scenes and brute-force reference oracles.
//!
//! [`scene`] places rotated ellipses (optionally with thin protrusions) on a
//! blank canvas and derives ground-truth boxes, masks and an ideal
//! membership pyramid. [`oracle`] holds slow, direct reimplementations used
//! to check `csk-core`; none of them calls into the code paths it checks.

pub mod oracle;
pub mod scene;

pub use scene::{generate_scene, generate_scene_on_stream, SceneParams, SynthInstance, SynthScene};
