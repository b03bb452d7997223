//! Object search: from a base change mask to live and reference object masks.
//!
//! The base mask is dilated and split into query regions. Each region is
//! described by the backend, the answers are parsed into labels, noisy
//! labels are dropped, and every surviving label is segmented on both the
//! live and the reference image.

use crate::backend::{
    BackendError, ColorImage, DescribeRequest, ImageRole, ModelBackend, SegmentRequest,
};
use crate::mask::{self, BinaryMask, MaskError, DEFAULT_DILATION_ITERATIONS, DEFAULT_KERNEL_SIZE};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// The single query sent with every region.
pub const PROMPT: &str =
    "What is the class name of this object? Please answer like 'This object is ..";

const ANSWER_PATTERN: &str = "this object is";
const NOISE_WORD: &str = "floor";

/// One open-vocabulary segmentation hit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectProposal {
    pub label: String,
    pub mask: BinaryMask,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentLabel {
    pub component: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Labels after parsing, pooling and filtering, in first-seen order.
    pub labels: Vec<String>,
    /// Union of all live proposals (`O_l`).
    pub live_object_mask: BinaryMask,
    /// Union of all reference proposals (`O_r`).
    pub ref_object_mask: BinaryMask,
    pub per_component_labels: Vec<ComponentLabel>,
    /// Dilated query regions in connected-component order.
    pub regions: Vec<BinaryMask>,
    pub live_proposals: Vec<ObjectProposal>,
    pub ref_proposals: Vec<ObjectProposal>,
}

/// How the noise word is matched against a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMatch {
    /// Only a standalone token counts ("wooden floor", not "floorboard").
    #[default]
    WholeWord,
    Substring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub dilation_iterations: usize,
    pub noise_match: NoiseMatch,
    /// Proposals with a confidence below this are dropped; proposals
    /// without a confidence are always kept.
    pub confidence_floor: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            dilation_iterations: DEFAULT_DILATION_ITERATIONS,
            noise_match: NoiseMatch::WholeWord,
            confidence_floor: 0.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("proposal for {label:?} has dimensions {actual:?}, image is {expected:?}")]
    ProposalDimensions {
        label: String,
        expected: (u32, u32),
        actual: (u32, u32),
    },
}

pub fn build_prompt() -> &'static str {
    PROMPT
}

const LEADING_ARTICLES: [&str; 3] = ["a ", "an ", "the "];

/// Extracts the object name from an answer of the form "This object is ...".
pub fn parse_label(response: &str) -> Option<String> {
    let mut phrase = response.to_ascii_lowercase();
    let mut found = false;
    while let Some(pos) = phrase.find(ANSWER_PATTERN) {
        phrase = phrase[pos + ANSWER_PATTERN.len()..].to_owned();
        found = true;
    }
    if !found {
        return None;
    }
    let end = phrase.find(['.', '!', '?', '\n']).unwrap_or(phrase.len());
    let mut label = phrase[..end]
        .trim()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .to_owned();
    for article in LEADING_ARTICLES {
        if let Some(rest) = label.strip_prefix(article) {
            label = rest.trim_start().to_owned();
            break;
        }
    }
    let label = label.split_whitespace().collect::<Vec<_>>().join(" ");
    (!label.is_empty()).then_some(label)
}

fn is_noise(label: &str, mode: NoiseMatch) -> bool {
    match mode {
        NoiseMatch::WholeWord => label
            .split(|c: char| !c.is_alphanumeric())
            .any(|tok| tok.eq_ignore_ascii_case(NOISE_WORD)),
        NoiseMatch::Substring => label.to_lowercase().contains(NOISE_WORD),
    }
}

/// Drops labels naming the floor and removes exact duplicates, keeping
/// first occurrences.
pub fn filter_labels(labels: &[String]) -> Vec<String> {
    filter_labels_with(labels, NoiseMatch::WholeWord)
}

pub fn filter_labels_with(labels: &[String], mode: NoiseMatch) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for label in labels {
        if !is_noise(label, mode) && !out.contains(label) {
            out.push(label.clone());
        }
    }
    out
}

/// Dilates the base mask with the 5×5 element and splits it into
/// per-object query regions.
pub fn prepare_query_regions(base: &BinaryMask, dilation_iterations: usize) -> Vec<BinaryMask> {
    let dilated = mask::dilate(base, DEFAULT_KERNEL_SIZE, dilation_iterations)
        .expect("default kernel is odd");
    mask::connected_components(&dilated)
}

/// Runs the full object search for one image pair.
///
/// Backend calls for distinct regions and labels run concurrently; results
/// are merged in region and label order.
pub fn search_objects<B: ModelBackend + ?Sized>(
    pair_id: &str,
    live: &ColorImage,
    reference: &ColorImage,
    base_mask: &BinaryMask,
    backend: &B,
    config: &SearchConfig,
) -> Result<SearchResult, SearchError> {
    let dims = live.dimensions();
    let check = |expected: (u32, u32), actual: (u32, u32)| {
        if expected == actual {
            Ok(())
        } else {
            Err(MaskError::DimensionMismatch {
                left: expected,
                right: actual,
            })
        }
    };
    check(dims, reference.dimensions())?;
    check(dims, base_mask.dims())?;

    let regions = prepare_query_regions(base_mask, config.dilation_iterations);
    let parsed: Vec<Option<String>> = regions
        .par_iter()
        .enumerate()
        .map(|(i, region)| {
            let text = backend.describe(&DescribeRequest {
                pair_id,
                region_index: i,
                image: live,
                region,
                prompt: PROMPT,
            })?;
            Ok(parse_label(&text))
        })
        .collect::<Result<_, BackendError>>()?;

    let pooled: Vec<String> = parsed.iter().flatten().cloned().collect();
    let labels = filter_labels_with(&pooled, config.noise_match);
    let per_component_labels = parsed
        .iter()
        .enumerate()
        .filter_map(|(component, label)| {
            let label = label.as_ref()?;
            labels.contains(label).then(|| ComponentLabel {
                component,
                label: label.clone(),
            })
        })
        .collect();

    let queries: Vec<(ImageRole, &str)> = labels
        .iter()
        .flat_map(|l| [(ImageRole::Live, l.as_str()), (ImageRole::Ref, l.as_str())])
        .collect();
    let answers: Vec<(ImageRole, Vec<ObjectProposal>)> = queries
        .par_iter()
        .map(|&(role, label)| {
            let image = match role {
                ImageRole::Live => live,
                ImageRole::Ref => reference,
            };
            let proposals = backend.segment(&SegmentRequest {
                pair_id,
                role,
                image,
                label,
            })?;
            for p in &proposals {
                if p.mask.dims() != dims {
                    return Err(SearchError::ProposalDimensions {
                        label: label.to_owned(),
                        expected: dims,
                        actual: p.mask.dims(),
                    });
                }
            }
            Ok((role, proposals))
        })
        .collect::<Result<_, SearchError>>()?;

    let mut live_proposals = Vec::new();
    let mut ref_proposals = Vec::new();
    for (role, proposals) in answers {
        let kept = proposals
            .into_iter()
            .filter(|p| p.confidence.is_none_or(|c| c >= config.confidence_floor));
        match role {
            ImageRole::Live => live_proposals.extend(kept),
            ImageRole::Ref => ref_proposals.extend(kept),
        }
    }

    let union_of = |ps: &[ObjectProposal]| {
        let masks: Vec<BinaryMask> = ps.iter().map(|p| p.mask.clone()).collect();
        mask::union(&masks, Some(dims))
    };
    Ok(SearchResult {
        labels,
        live_object_mask: union_of(&live_proposals)?,
        ref_object_mask: union_of(&ref_proposals)?,
        per_component_labels,
        regions,
        live_proposals,
        ref_proposals,
    })
}
