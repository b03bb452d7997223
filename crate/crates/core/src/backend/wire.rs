//! JSON bodies of the HTTP backend protocol.
//!
//! | endpoint          | request                                                  | response                 |
//! |-------------------|----------------------------------------------------------|--------------------------|
//! | `POST /v1/change`   | `pair_id`, `ref_png`, `image_png`                        | `prob_png`               |
//! | `POST /v1/describe` | `pair_id`, `region_index`, `image_png`, `region_png`, `prompt` | `text`             |
//! | `POST /v1/segment`  | `pair_id`, `image` (`live`/`ref`), `image_png`, `label`  | `proposals[]`            |
//!
//! Every `*_png` field is a base64-encoded (standard alphabet, padded) PNG.
//! Errors come back as a non-2xx status with an [`ErrorBody`]; a 404 whose
//! `error` is `"fixture missing"` maps to
//! [`BackendError::FixtureMissing`](super::BackendError::FixtureMissing).

use super::{ColorImage, ImageRole};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::ImageFormat;
use serde::{Deserialize, Serialize};
use std::io::Cursor;

pub const CHANGE_PATH: &str = "/v1/change";
pub const DESCRIBE_PATH: &str = "/v1/describe";
pub const SEGMENT_PATH: &str = "/v1/segment";
pub const HEALTH_PATH: &str = "/v1/health";

pub const FIXTURE_MISSING: &str = "fixture missing";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeRequestBody {
    pub pair_id: String,
    pub ref_png: String,
    pub image_png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeResponseBody {
    pub prob_png: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeRequestBody {
    pub pair_id: String,
    pub region_index: usize,
    pub image_png: String,
    pub region_png: String,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeResponseBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequestBody {
    pub pair_id: String,
    pub image: ImageRole,
    pub image_png: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalBody {
    pub label: String,
    pub mask_png: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponseBody {
    pub proposals: Vec<ProposalBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
}

pub fn encode_b64(bytes: &[u8]) -> String {
    STANDARD.encode(bytes)
}

pub fn decode_b64(text: &str) -> Result<Vec<u8>, base64::DecodeError> {
    STANDARD.decode(text)
}

/// RGB image as base64 PNG.
pub fn encode_image(img: &ColorImage) -> String {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    encode_b64(&out.into_inner())
}

pub fn decode_image(text: &str) -> Result<ColorImage, String> {
    let bytes = decode_b64(text).map_err(|e| e.to_string())?;
    image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map(|img| img.into_rgb8())
        .map_err(|e| e.to_string())
}

/// Response of `GET /v1/health`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthBody {
    pub status: String,
    pub endpoints: Vec<String>,
}
