//! The model backend contract and its two implementations.
//!
//! Every neural model the pipeline relies on sits behind [`ModelBackend`]:
//! a change detector, a region describer and an open-vocabulary segmenter.
//! [`FixtureBackend`] answers from a directory of canned responses and
//! [`HttpBackend`] talks to a remote server over the JSON protocol in
//! [`wire`].

mod fixture;
mod http;
#[cfg(feature = "fixture-server")]
pub mod server;
pub mod wire;

use crate::mask::{BinaryMask, ProbabilityMask};
use crate::search::ObjectProposal;
use serde::{Deserialize, Serialize};
use std::fmt;

pub use fixture::{FixtureBackend, FixtureIndex, FixtureWriter, IndexEntry};
pub use http::{HttpBackend, HttpConfig, BACKEND_URL_ENV};

pub type ColorImage = image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Change,
    Describe,
    Segment,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Endpoint::Change => "change",
            Endpoint::Describe => "describe",
            Endpoint::Segment => "segment",
        })
    }
}

/// Which image of a pair a segmentation request targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageRole {
    Live,
    Ref,
}

impl ImageRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ImageRole::Live => "live",
            ImageRole::Ref => "ref",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("{endpoint} [{pair_id}]: fixture missing ({detail})")]
    FixtureMissing {
        endpoint: Endpoint,
        pair_id: String,
        detail: String,
    },
    #[error("{endpoint} [{pair_id}]: transport error: {message}")]
    Transport {
        endpoint: Endpoint,
        pair_id: String,
        message: String,
    },
    #[error("{endpoint} [{pair_id}]: dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        endpoint: Endpoint,
        pair_id: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("{endpoint} [{pair_id}]: malformed response: {message}")]
    Malformed {
        endpoint: Endpoint,
        pair_id: String,
        message: String,
    },
    #[error("{endpoint} [{pair_id}]: invalid request: {message}")]
    InvalidRequest {
        endpoint: Endpoint,
        pair_id: String,
        message: String,
    },
    #[error("fixture index {path}: {message}")]
    Index { path: String, message: String },
}

impl BackendError {
    pub fn endpoint(&self) -> Option<Endpoint> {
        match self {
            BackendError::FixtureMissing { endpoint, .. }
            | BackendError::Transport { endpoint, .. }
            | BackendError::DimensionMismatch { endpoint, .. }
            | BackendError::Malformed { endpoint, .. }
            | BackendError::InvalidRequest { endpoint, .. } => Some(*endpoint),
            BackendError::Index { .. } => None,
        }
    }
}

pub struct ChangeRequest<'a> {
    pub pair_id: &'a str,
    pub reference: &'a ColorImage,
    pub live: &'a ColorImage,
}

pub struct DescribeRequest<'a> {
    pub pair_id: &'a str,
    /// Position of the query region in connected-component order.
    pub region_index: usize,
    pub image: &'a ColorImage,
    pub region: &'a BinaryMask,
    pub prompt: &'a str,
}

pub struct SegmentRequest<'a> {
    pub pair_id: &'a str,
    pub role: ImageRole,
    pub image: &'a ColorImage,
    pub label: &'a str,
}

/// The three model roles. Returned masks always match the dimensions of
/// the submitted image; implementations reject responses that do not.
pub trait ModelBackend: Send + Sync {
    fn detect_change(&self, req: &ChangeRequest<'_>) -> Result<ProbabilityMask, BackendError>;
    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, BackendError>;
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<Vec<ObjectProposal>, BackendError>;
}

impl<B: ModelBackend + ?Sized> ModelBackend for &B {
    fn detect_change(&self, req: &ChangeRequest<'_>) -> Result<ProbabilityMask, BackendError> {
        (**self).detect_change(req)
    }
    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, BackendError> {
        (**self).describe(req)
    }
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<Vec<ObjectProposal>, BackendError> {
        (**self).segment(req)
    }
}

impl<B: ModelBackend + ?Sized> ModelBackend for Box<B> {
    fn detect_change(&self, req: &ChangeRequest<'_>) -> Result<ProbabilityMask, BackendError> {
        (**self).detect_change(req)
    }
    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, BackendError> {
        (**self).describe(req)
    }
    fn segment(&self, req: &SegmentRequest<'_>) -> Result<Vec<ObjectProposal>, BackendError> {
        (**self).segment(req)
    }
}

pub(crate) fn check_dims(
    endpoint: Endpoint,
    pair_id: &str,
    expected: (u32, u32),
    actual: (u32, u32),
) -> Result<(), BackendError> {
    if expected != actual {
        return Err(BackendError::DimensionMismatch {
            endpoint,
            pair_id: pair_id.to_owned(),
            expected,
            actual,
        });
    }
    Ok(())
}

// Request preconditions shared by both implementations.
pub(crate) fn validate_change(req: &ChangeRequest<'_>) -> Result<(), BackendError> {
    check_dims(
        Endpoint::Change,
        req.pair_id,
        req.live.dimensions(),
        req.reference.dimensions(),
    )
}

pub(crate) fn validate_describe(req: &DescribeRequest<'_>) -> Result<(), BackendError> {
    check_dims(
        Endpoint::Describe,
        req.pair_id,
        req.image.dimensions(),
        req.region.dims(),
    )
}

pub(crate) fn validate_segment(req: &SegmentRequest<'_>) -> Result<(), BackendError> {
    if req.label.trim().is_empty() {
        return Err(BackendError::InvalidRequest {
            endpoint: Endpoint::Segment,
            pair_id: req.pair_id.to_owned(),
            message: "empty label".into(),
        });
    }
    Ok(())
}
