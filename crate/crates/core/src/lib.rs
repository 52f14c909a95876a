//! Size-constrained simplex projection for segmentation heat maps.
//!
//! - [`projection`]: projection of a score vector onto `{w >= 0, sum(w) = size}`.
//! - [`layer`]: softmax, per-class projection, argmax targets, and the
//!   cross-entropy loss built on them.
//! - [`sizes`]: per-class size estimates from thresholded saliency maps.
//! - [`toy`]: a small synthetic training setup that exercises the layer.
//! - [`io`] and [`cli`]: file formats and the command-line front end.

pub mod cli;
pub mod error;
pub mod io;
pub mod layer;
pub mod morph;
pub mod par;
pub mod projection;
pub mod sizes;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use layer::SizeConstraints;
pub use projection::{project_simplex_linear, project_simplex_sort, verify_kkt, ProjectionResult};
pub use tensor::{ChannelStack, LabelMask};

/// Class identifier. Masks are written as 8-bit graymaps, so ids fit in a byte.
pub type ClassId = u8;

/// The background class.
pub const BACKGROUND: ClassId = 0;
