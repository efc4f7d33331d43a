//! Saliency-guided discriminative localization.
//!
//! The crate covers the non-training half of a weakly supervised localization
//! pipeline: class activation maps computed from last-layer convolutional
//! features, Otsu binarization and largest-component pseudo boxes, anchor
//! labeling and RPN loss evaluation, proposal post-processing, and the
//! classification/localization evaluation suite.
//!
//! Modules are ordered bottom-up:
//!
//! - [`tensor`]: dense containers and the NPY interchange format.
//! - [`geometry`]: boxes, IoU, anchors, NMS and RoI pooling.
//! - [`saliency`]: CAM, bilinear upsampling, Otsu, connected components.
//! - [`rpn`]: anchor labeling, box coding, smooth L1 and the RPN loss.
//! - [`metrics`]: accuracy, IoU localization, PCL and confusion analysis.
//! - [`dataset`]: CUB-200-2011 annotation parsing and feature loading.

pub mod dataset;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod rpn;
pub mod saliency;
pub mod tensor;

pub use error::{Error, Result};
pub use geometry::{AnchorGrid, BBox, ScoredBox};
pub use saliency::{BinaryMask, CamSource, PseudoBox, SaliencyMap};
pub use tensor::{Matrix2, Tensor3, TensorFile};
