//! Per-pair detection and fusion, plus the on-disk artifacts it produces.

use crate::backend::{BackendError, ChangeRequest, ColorImage, ModelBackend};
use crate::doi::{self, Decision, DoiRecord, DoiThresholds};
use crate::mask::{self, BinaryMask, BoundingBox, MaskError};
use crate::search::{self, SearchConfig, SearchError, SearchResult};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const BASE_MASK_FILE: &str = "base.png";
pub const FUSED_MASK_FILE: &str = "fused.png";
pub const OVS_MASK_FILE: &str = "ovs.png";
pub const DOI_FILE: &str = "doi.json";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl PipelineError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One line of a JSON-lines pair manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub pair_id: String,
    pub ref_path: PathBuf,
    pub live_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_path: Option<PathBuf>,
    pub dataset_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairManifest {
    pub entries: Vec<PairEntry>,
}

impl PairManifest {
    /// Loads a manifest, resolving relative paths against its directory.
    /// Pair ids must be unique and every referenced file must exist.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let bad = |message: String| PipelineError::Manifest {
            path: path.to_path_buf(),
            message,
        };
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut e: PairEntry =
                serde_json::from_str(line).map_err(|err| bad(format!("line {}: {err}", n + 1)))?;
            if e.pair_id.is_empty() || e.pair_id.contains(['/', '\\']) || e.pair_id.starts_with('.')
            {
                return Err(bad(format!(
                    "line {}: invalid pair_id {:?}",
                    n + 1,
                    e.pair_id
                )));
            }
            if !seen.insert(e.pair_id.clone()) {
                return Err(bad(format!("duplicate pair_id {:?}", e.pair_id)));
            }
            e.ref_path = base.join(&e.ref_path);
            e.live_path = base.join(&e.live_path);
            e.gt_path = e.gt_path.map(|p| base.join(p));
            for p in [Some(&e.ref_path), Some(&e.live_path), e.gt_path.as_ref()]
                .into_iter()
                .flatten()
            {
                if !p.is_file() {
                    return Err(bad(format!(
                        "pair {:?}: missing file {}",
                        e.pair_id,
                        p.display()
                    )));
                }
            }
            entries.push(e);
        }
        Ok(Self { entries })
    }
}

pub fn load_color(path: &Path) -> Result<ColorImage, PipelineError> {
    Ok(image::open(path)
        .map_err(|e| PipelineError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .into_rgb8())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub threshold: f64,
    pub doi: DoiThresholds,
    pub search: SearchConfig,
    /// Skip object search and fusion; the fused mask is the base mask.
    pub no_ovs: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: crate::config::DEFAULT_THRESHOLD,
            doi: DoiThresholds::default(),
            search: SearchConfig::default(),
            no_ovs: false,
        }
    }
}

/// Wall-clock time spent per stage, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub change_ms: f64,
    pub search_ms: f64,
    pub fusion_ms: f64,
}

/// A labelled change component for the lost-and-found listing. Pixel count
/// and box describe the base mask restricted to the dilated query region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedObject {
    pub component: usize,
    pub label: String,
    pub pixels: usize,
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub base: BinaryMask,
    pub fused: BinaryMask,
    pub doi: Option<DoiRecord>,
    pub search: Option<SearchResult>,
    pub objects: Vec<DetectedObject>,
    pub timing: StageTiming,
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Change detection, thresholding, object search, DoI and fusion for one
/// pre-aligned image pair.
pub fn run_pair<B: ModelBackend + ?Sized>(
    pair_id: &str,
    reference: &ColorImage,
    live: &ColorImage,
    backend: &B,
    config: &PipelineConfig,
) -> Result<PairOutcome, PipelineError> {
    let mut timing = StageTiming::default();
    let t = Instant::now();
    let prob = backend.detect_change(&ChangeRequest {
        pair_id,
        reference,
        live,
    })?;
    let base = mask::threshold(&prob, config.threshold);
    timing.change_ms = elapsed_ms(t);

    if config.no_ovs {
        return Ok(PairOutcome {
            fused: base.clone(),
            base,
            doi: None,
            search: None,
            objects: Vec::new(),
            timing,
        });
    }

    let t = Instant::now();
    let found = search::search_objects(pair_id, live, reference, &base, backend, &config.search)?;
    timing.search_ms = elapsed_ms(t);

    let t = Instant::now();
    let record = doi::compute_doi(
        &found.live_object_mask,
        &found.ref_object_mask,
        &base,
        config.doi,
    )?;
    let fused = doi::fuse(&record, &found.live_object_mask, &base)?;
    timing.fusion_ms = elapsed_ms(t);

    let objects = found
        .per_component_labels
        .iter()
        .map(|c| {
            let support = base.intersection(&found.regions[c.component])?;
            Ok(DetectedObject {
                component: c.component,
                label: c.label.clone(),
                pixels: support.count(),
                bbox: support.bounding_box(),
            })
        })
        .collect::<Result<_, MaskError>>()?;

    Ok(PairOutcome {
        base,
        fused,
        doi: Some(record),
        search: Some(found),
        objects,
        timing,
    })
}

/// The persisted summary of one pair's run. Paths are relative to the
/// record's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub pair_id: String,
    pub dataset_id: String,
    pub doi: Option<DoiRecord>,
    pub base_mask: String,
    pub fused_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ovs_mask: Option<String>,
    pub fused_source: FusedSource,
    pub labels: Vec<String>,
    pub objects: Vec<DetectedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing_ms: Option<StageTiming>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusedSource {
    Base,
    Ovs,
    /// Fusion was bypassed.
    BaseOnly,
}

fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("record serializes");
    s.push('\n');
    s
}

/// Writes `base.png`, `fused.png`, `ovs.png` (when search ran), `doi.json`
/// (when fusion ran) and `run.json` under `out_dir/<pair_id>/`.
pub fn write_outcome(
    out_dir: &Path,
    pair_id: &str,
    dataset_id: &str,
    outcome: &PairOutcome,
    record_timing: bool,
) -> Result<RunRecord, PipelineError> {
    let dir = out_dir.join(pair_id);
    std::fs::create_dir_all(&dir).map_err(PipelineError::io(&dir))?;
    let save = |m: &BinaryMask, name: &str| mask::save_mask(m, dir.join(name));
    save(&outcome.base, BASE_MASK_FILE)?;
    save(&outcome.fused, FUSED_MASK_FILE)?;
    let ovs_mask = match &outcome.search {
        Some(s) => {
            save(&s.live_object_mask, OVS_MASK_FILE)?;
            Some(OVS_MASK_FILE.to_owned())
        }
        None => None,
    };
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(PipelineError::io(&p))
    };
    if let Some(d) = &outcome.doi {
        write(DOI_FILE, to_pretty_json(d))?;
    }
    let fused_source = match &outcome.doi {
        None => FusedSource::BaseOnly,
        Some(d) if d.decision == Decision::AdoptOvs => FusedSource::Ovs,
        Some(_) => FusedSource::Base,
    };
    let record = RunRecord {
        pair_id: pair_id.to_owned(),
        dataset_id: dataset_id.to_owned(),
        doi: outcome.doi.clone(),
        base_mask: BASE_MASK_FILE.to_owned(),
        fused_mask: FUSED_MASK_FILE.to_owned(),
        ovs_mask,
        fused_source,
        labels: outcome
            .search
            .as_ref()
            .map(|s| s.labels.clone())
            .unwrap_or_default(),
        objects: outcome.objects.clone(),
        timing_ms: record_timing.then_some(outcome.timing),
    };
    write(RUN_FILE, to_pretty_json(&record))?;
    Ok(record)
}

pub fn read_run_record(path: &Path) -> Result<RunRecord, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Lost-and-found rows as tab-separated text with a header line.
pub fn object_listing(records: &[RunRecord]) -> String {
    let mut out = String::from("pair_id\tcomponent\tlabel\tpixels\tbbox\n");
    for r in records {
        for o in &r.objects {
            let bbox = match o.bbox {
                Some(b) => format!("{},{},{},{}", b.x0, b.y0, b.x1, b.y1),
                None => "-".to_owned(),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.pair_id, o.component, o.label, o.pixels, bbox
            ));
        }
    }
    out
}
