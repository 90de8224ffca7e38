//! Detection of AI-generated open-ended survey responses.
//!
//! Two independent detectors share one data model: a zero-shot LLM judge
//! ([`detector`]) and signature similarity ([`signature`], [`similarity`]),
//! where responses are compared by cosine similarity against reference answers
//! generated for the same question. All provider traffic goes through the
//! caching [`gateway`], so reruns are deterministic and free.

pub mod dataset;
pub mod detector;
pub mod error;
pub mod gateway;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod signature;
pub mod similarity;

pub use error::{Error, ErrorKind, Result};
