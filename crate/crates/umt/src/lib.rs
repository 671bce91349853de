//! Video-language pretraining with a frozen image teacher.
//!
//! The crate trains a spatiotemporal vision transformer by masking most
//! patch tokens, keeping the ones a frozen image model attends to, and
//! regressing the survivors onto the teacher's token features. A second
//! stage couples the resulting video encoder with a text encoder and a
//! cross-modal decoder through contrastive, matching and masked-language
//! objectives.
//!
//! Everything runs on the CPU in `f64` over [`ndarray`] with a small
//! reverse-mode tape ([`tape`]), seeded end to end for bit-exact reruns.

pub mod data;
pub mod error;
pub mod masking;
pub mod multimodal;
pub mod nn;
pub mod objectives;
pub mod pipeline;
pub mod rng;
pub mod student;
pub mod tape;
pub mod teacher;
pub mod tensorio;

pub use error::{Error, Result};
