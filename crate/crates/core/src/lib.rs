//! Change-mask fusion driven by the degree of ill-posedness (DoI) of a
//! passive change-detection result.
//!
//! A base detector yields a change mask `M_o`. Object search labels its
//! components and segments those labels on the live and reference images,
//! giving `O_l` and `O_r`. The DoI decides which mask is trusted:
//!
//! ```text
//! DoI = f_b(O_l, O_r) * (1 - IoU(O_l, M_o))
//! ```
//!
//! where `f_b` is 1 when the two object masks are disjoint. `O_l` is adopted
//! when `0 < DoI < 0.9`, otherwise `M_o` is kept.
//!
//! ```
//! use doi_core::{compute_doi, fuse, BinaryMask, Decision, DoiThresholds};
//!
//! let base = BinaryMask::from_ascii("##..\n##..\n....").unwrap();
//! let live = BinaryMask::from_ascii("##..\n##..\n##..").unwrap();
//! let reference = BinaryMask::new(4, 3);
//! let rec = compute_doi(&live, &reference, &base, DoiThresholds::default()).unwrap();
//! assert_eq!(rec.decision, Decision::AdoptOvs);
//! assert_eq!(fuse(&rec, &live, &base).unwrap(), live);
//! ```

pub mod backend;
pub mod config;
pub mod doi;
pub mod eval;
pub mod mask;
pub mod pipeline;
pub mod search;
pub mod synth;

pub use backend::{
    BackendError, ColorImage, FixtureBackend, HttpBackend, HttpConfig, ModelBackend,
};
pub use config::Settings;
pub use doi::{compute_doi, fuse, Decision, DoiRecord, DoiThresholds};
pub use eval::{count_pixels, score, EvalCounts, ScoreRow, Scores};
pub use mask::{iou, threshold, BinaryMask, BoundingBox, MaskError, ProbabilityMask};
pub use pipeline::{run_pair, PairOutcome, PipelineConfig, RunRecord};
pub use search::{search_objects, ObjectProposal, SearchConfig, SearchResult};
