//! File-fixture backend.
//!
//! Layout under the fixture root:
//!
//! ```text
//! index.json
//! <pair_id>/change.png
//! <pair_id>/describe/<region_index>.txt
//! <pair_id>/segment/<live|ref>/<url-encoded label>/<k>.png
//! ```
//!
//! `index.json` lists every response file as an [`IndexEntry`]; it is the
//! only place a proposal confidence can be recorded.

use super::{
    check_dims, validate_change, validate_describe, validate_segment, BackendError, ChangeRequest,
    DescribeRequest, Endpoint, ImageRole, ModelBackend, SegmentRequest,
};
use crate::mask::{self, BinaryMask, ProbabilityMask};
use crate::search::ObjectProposal;
use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

pub const INDEX_FILE: &str = "index.json";

/// A stored proposal PNG and its recorded confidence.
pub type ProposalPng = (Vec<u8>, Option<f64>);

const LABEL_ENCODE_SET: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'_');

pub fn encode_label(label: &str) -> String {
    utf8_percent_encode(label, LABEL_ENCODE_SET).to_string()
}

/// One manifest line: a request fingerprint and the file that answers it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub pair_id: String,
    pub endpoint: Endpoint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Relative to the fixture root, `/`-separated.
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct IndexFile {
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone)]
struct StoredProposal {
    k: usize,
    file: PathBuf,
    confidence: Option<f64>,
}

type SegmentKey = (String, ImageRole, String);

/// Parsed and validated `index.json`.
#[derive(Debug, Clone)]
pub struct FixtureIndex {
    root: PathBuf,
    pairs: BTreeSet<String>,
    change: BTreeMap<String, PathBuf>,
    describe: BTreeMap<(String, usize), PathBuf>,
    segment: BTreeMap<SegmentKey, Vec<StoredProposal>>,
}

impl FixtureIndex {
    /// Loads `<root>/index.json`; every entry must name an existing file.
    pub fn load(root: impl AsRef<Path>) -> Result<Self, BackendError> {
        let root = root.as_ref().to_path_buf();
        let path = root.join(INDEX_FILE);
        let index_err = |message: String| BackendError::Index {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(&path).map_err(|e| index_err(e.to_string()))?;
        let parsed: IndexFile =
            serde_json::from_str(&text).map_err(|e| index_err(e.to_string()))?;
        Self::from_entries(root.clone(), parsed.entries).map_err(index_err)
    }

    fn from_entries(root: PathBuf, entries: Vec<IndexEntry>) -> Result<Self, String> {
        let mut index = FixtureIndex {
            root,
            pairs: BTreeSet::new(),
            change: BTreeMap::new(),
            describe: BTreeMap::new(),
            segment: BTreeMap::new(),
        };
        for (n, e) in entries.into_iter().enumerate() {
            let file = index.root.join(&e.file);
            if !file.is_file() {
                return Err(format!("entry {n}: file {} does not exist", e.file));
            }
            index.pairs.insert(e.pair_id.clone());
            match e.endpoint {
                Endpoint::Change => {
                    if index.change.insert(e.pair_id.clone(), file).is_some() {
                        return Err(format!(
                            "entry {n}: duplicate change entry for {}",
                            e.pair_id
                        ));
                    }
                }
                Endpoint::Describe => {
                    let region = e
                        .region_index
                        .ok_or_else(|| format!("entry {n}: describe entry without region_index"))?;
                    if index
                        .describe
                        .insert((e.pair_id.clone(), region), file)
                        .is_some()
                    {
                        return Err(format!("entry {n}: duplicate describe entry"));
                    }
                }
                Endpoint::Segment => {
                    let (Some(role), Some(label), Some(k)) = (e.image, e.label.clone(), e.k) else {
                        return Err(format!("entry {n}: segment entry needs image, label and k"));
                    };
                    index
                        .segment
                        .entry((e.pair_id.clone(), role, label))
                        .or_default()
                        .push(StoredProposal {
                            k,
                            file,
                            confidence: e.confidence,
                        });
                }
            }
        }
        for list in index.segment.values_mut() {
            list.sort_by_key(|p| p.k);
            if list.windows(2).any(|w| w[0].k == w[1].k) {
                return Err("duplicate segment proposal index".into());
            }
        }
        Ok(index)
    }

    /// Builds an index by walking a directory that follows the fixture
    /// layout. Proposal confidences are left unset.
    pub fn scan(root: impl AsRef<Path>) -> Result<Vec<IndexEntry>, BackendError> {
        let root = root.as_ref();
        let io_err = |p: &Path, e: std::io::Error| BackendError::Index {
            path: p.display().to_string(),
            message: e.to_string(),
        };
        let mut entries = Vec::new();
        for pair_dir in sorted_dirs(root).map_err(|e| io_err(root, e))? {
            let pair_id = file_name(&pair_dir);
            if pair_dir.join("change.png").is_file() {
                entries.push(entry(
                    &pair_id,
                    Endpoint::Change,
                    format!("{pair_id}/change.png"),
                ));
            }
            let describe_dir = pair_dir.join("describe");
            if describe_dir.is_dir() {
                let mut regions: Vec<usize> = std::fs::read_dir(&describe_dir)
                    .map_err(|e| io_err(&describe_dir, e))?
                    .filter_map(|f| f.ok())
                    .filter_map(|f| {
                        let name = f.file_name().to_string_lossy().into_owned();
                        name.strip_suffix(".txt")?.parse().ok()
                    })
                    .collect();
                regions.sort_unstable();
                for r in regions {
                    let mut e = entry(
                        &pair_id,
                        Endpoint::Describe,
                        format!("{pair_id}/describe/{r}.txt"),
                    );
                    e.region_index = Some(r);
                    entries.push(e);
                }
            }
            for role in [ImageRole::Live, ImageRole::Ref] {
                let role_dir = pair_dir.join("segment").join(role.as_str());
                if !role_dir.is_dir() {
                    continue;
                }
                for label_dir in sorted_dirs(&role_dir).map_err(|e| io_err(&role_dir, e))? {
                    let encoded = file_name(&label_dir);
                    let label = percent_decode_str(&encoded)
                        .decode_utf8_lossy()
                        .into_owned();
                    let mut ks: Vec<usize> = std::fs::read_dir(&label_dir)
                        .map_err(|e| io_err(&label_dir, e))?
                        .filter_map(|f| f.ok())
                        .filter_map(|f| {
                            let name = f.file_name().to_string_lossy().into_owned();
                            name.strip_suffix(".png")?.parse().ok()
                        })
                        .collect();
                    ks.sort_unstable();
                    for k in ks {
                        let mut e = entry(
                            &pair_id,
                            Endpoint::Segment,
                            format!("{pair_id}/segment/{}/{encoded}/{k}.png", role.as_str()),
                        );
                        e.image = Some(role);
                        e.label = Some(label.clone());
                        e.k = Some(k);
                        entries.push(e);
                    }
                }
            }
        }
        Ok(entries)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn pair_ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(String::as_str)
    }

    pub fn has_pair(&self, pair_id: &str) -> bool {
        self.pairs.contains(pair_id)
    }
}

fn entry(pair_id: &str, endpoint: Endpoint, file: String) -> IndexEntry {
    IndexEntry {
        pair_id: pair_id.to_owned(),
        endpoint,
        region_index: None,
        image: None,
        label: None,
        k: None,
        file,
        confidence: None,
    }
}

fn sorted_dirs(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

/// Read-only lookup backend over a fixture directory.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    index: FixtureIndex,
}

impl FixtureBackend {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, BackendError> {
        Ok(Self {
            index: FixtureIndex::load(root)?,
        })
    }

    pub fn index(&self) -> &FixtureIndex {
        &self.index
    }

    fn missing(endpoint: Endpoint, pair_id: &str, detail: impl Into<String>) -> BackendError {
        BackendError::FixtureMissing {
            endpoint,
            pair_id: pair_id.to_owned(),
            detail: detail.into(),
        }
    }

    fn malformed(endpoint: Endpoint, pair_id: &str, message: impl ToString) -> BackendError {
        BackendError::Malformed {
            endpoint,
            pair_id: pair_id.to_owned(),
            message: message.to_string(),
        }
    }

    /// Raw stored bytes of the change map, as served over HTTP.
    pub fn change_png(&self, pair_id: &str) -> Result<Vec<u8>, BackendError> {
        let path = self
            .index
            .change
            .get(pair_id)
            .ok_or_else(|| Self::missing(Endpoint::Change, pair_id, "no change map"))?;
        std::fs::read(path).map_err(|e| Self::malformed(Endpoint::Change, pair_id, e))
    }

    pub fn describe_text(
        &self,
        pair_id: &str,
        region_index: usize,
    ) -> Result<String, BackendError> {
        let path = self
            .index
            .describe
            .get(&(pair_id.to_owned(), region_index))
            .ok_or_else(|| {
                Self::missing(
                    Endpoint::Describe,
                    pair_id,
                    format!("no response for region {region_index}"),
                )
            })?;
        std::fs::read_to_string(path).map_err(|e| Self::malformed(Endpoint::Describe, pair_id, e))
    }

    /// Raw stored proposal PNGs with their confidences, in `k` order.
    pub fn segment_pngs(
        &self,
        pair_id: &str,
        role: ImageRole,
        label: &str,
    ) -> Result<Vec<ProposalPng>, BackendError> {
        if !self.index.has_pair(pair_id) {
            return Err(Self::missing(Endpoint::Segment, pair_id, "unknown pair"));
        }
        let Some(list) = self
            .index
            .segment
            .get(&(pair_id.to_owned(), role, label.to_owned()))
        else {
            return Ok(Vec::new());
        };
        list.iter()
            .map(|p| {
                std::fs::read(&p.file)
                    .map(|bytes| (bytes, p.confidence))
                    .map_err(|e| Self::malformed(Endpoint::Segment, pair_id, e))
            })
            .collect()
    }
}

impl ModelBackend for FixtureBackend {
    fn detect_change(&self, req: &ChangeRequest<'_>) -> Result<ProbabilityMask, BackendError> {
        validate_change(req)?;
        let bytes = self.change_png(req.pair_id)?;
        let prob = mask::decode_probability_png(&bytes)
            .map_err(|e| Self::malformed(Endpoint::Change, req.pair_id, e))?;
        check_dims(
            Endpoint::Change,
            req.pair_id,
            req.live.dimensions(),
            prob.dims(),
        )?;
        Ok(prob)
    }

    fn describe(&self, req: &DescribeRequest<'_>) -> Result<String, BackendError> {
        validate_describe(req)?;
        self.describe_text(req.pair_id, req.region_index)
    }

    fn segment(&self, req: &SegmentRequest<'_>) -> Result<Vec<ObjectProposal>, BackendError> {
        validate_segment(req)?;
        self.segment_pngs(req.pair_id, req.role, req.label)?
            .into_iter()
            .map(|(bytes, confidence)| {
                let mask = mask::decode_mask_png(&bytes)
                    .map_err(|e| Self::malformed(Endpoint::Segment, req.pair_id, e))?;
                check_dims(
                    Endpoint::Segment,
                    req.pair_id,
                    req.image.dimensions(),
                    mask.dims(),
                )?;
                Ok(ObjectProposal {
                    label: req.label.to_owned(),
                    mask,
                    confidence,
                })
            })
            .collect()
    }
}

/// Writes a fixture tree and its `index.json`.
pub struct FixtureWriter {
    root: PathBuf,
    entries: Vec<IndexEntry>,
}

impl FixtureWriter {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            entries: Vec::new(),
        })
    }

    fn write(&mut self, rel: String, bytes: &[u8]) -> std::io::Result<()> {
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, bytes)
    }

    pub fn change(&mut self, pair_id: &str, prob: &ProbabilityMask) -> std::io::Result<()> {
        let rel = format!("{pair_id}/change.png");
        self.write(rel.clone(), &mask::encode_probability_png(prob))?;
        self.entries.push(entry(pair_id, Endpoint::Change, rel));
        Ok(())
    }

    pub fn describe(
        &mut self,
        pair_id: &str,
        region_index: usize,
        text: &str,
    ) -> std::io::Result<()> {
        let rel = format!("{pair_id}/describe/{region_index}.txt");
        self.write(rel.clone(), text.as_bytes())?;
        let mut e = entry(pair_id, Endpoint::Describe, rel);
        e.region_index = Some(region_index);
        self.entries.push(e);
        Ok(())
    }

    /// Appends a proposal; `k` is assigned in call order per (pair, role, label).
    pub fn segment(
        &mut self,
        pair_id: &str,
        role: ImageRole,
        label: &str,
        mask: &BinaryMask,
        confidence: Option<f64>,
    ) -> std::io::Result<()> {
        let k = self
            .entries
            .iter()
            .filter(|e| {
                e.endpoint == Endpoint::Segment
                    && e.pair_id == pair_id
                    && e.image == Some(role)
                    && e.label.as_deref() == Some(label)
            })
            .count();
        let rel = format!(
            "{pair_id}/segment/{}/{}/{k}.png",
            role.as_str(),
            encode_label(label)
        );
        self.write(rel.clone(), &mask::encode_mask_png(mask))?;
        let mut e = entry(pair_id, Endpoint::Segment, rel);
        e.image = Some(role);
        e.label = Some(label.to_owned());
        e.k = Some(k);
        e.confidence = confidence;
        self.entries.push(e);
        Ok(())
    }

    /// Writes `index.json` and returns the fixture root.
    pub fn finish(self) -> std::io::Result<PathBuf> {
        write_index(&self.root, self.entries)?;
        Ok(self.root)
    }
}

pub fn write_index(root: &Path, entries: Vec<IndexEntry>) -> std::io::Result<()> {
    let mut json = serde_json::to_string_pretty(&IndexFile { entries })?;
    json.push('\n');
    std::fs::write(root.join(INDEX_FILE), json)
}
