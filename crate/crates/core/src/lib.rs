//! Two-stream RGB / fine-grained-frequency forgery detector with progressive
//! self- and mutual-enhancement, plus the tooling around it: a small
//! reverse-mode autodiff engine, patch-wise DCT decomposition, a synthetic
//! splice-forgery generator, metrics, and Grad-CAM visualizations.

pub mod autodiff;
pub mod enhance;
pub mod error;
pub mod experiments;
pub mod freq;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod net;
pub mod params;
pub mod synth;
pub mod tensor;
pub mod viz;

pub use autodiff::{FilterKind, Gradients, Graph, Var};
pub use error::{Error, Result};
pub use image::{GrayImage, RgbImage};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{Dims, Tensor};
