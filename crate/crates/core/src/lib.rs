//! Dictionary learning and sparse representation for grasp recognition and
//! grid-search grasp detection on RGBD images.
//!
//! The pipeline: derive an 8-channel image from a scene, crop grasp
//! rectangles to 24x24, encode all 6x6 patches of a crop against a learned
//! dictionary, sum-pool per quadrant and classify with a linear SVM.

pub mod bundle;
pub mod dataset;
pub mod dictlearn;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod imageproc;
pub mod model;
pub mod render;
pub mod sparse;
pub mod synth;
pub mod whitening;
