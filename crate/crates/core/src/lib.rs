//! Precision-sampling linear sketches for turnstile streams: `F_k` moments,
//! `l_1` and `l_p` norms, cascaded `l_p(l_q)` norms and `l_p` sampling.

pub mod cascaded;
pub mod cli;
pub(crate) mod codec;
pub mod error;
pub mod estimators;
pub mod hashing;
pub mod oracle;
pub mod psl;
pub mod sampler;
pub mod sketch;

pub use error::{Result, SketchError};
