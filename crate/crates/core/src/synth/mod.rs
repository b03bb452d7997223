//! Copy-paste synthesis of change-detection training triplets.
//!
//! An object cutout is scaled, placed at a random in-frame position and
//! pasted opaquely onto a reference background. The untouched background is
//! the reference image, the pasted result the pseudo live image and the
//! pasted support the ground-truth change mask.

mod coco;

use crate::backend::ColorImage;
use crate::mask::{self, BinaryMask};
use image::imageops::{self, FilterType};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

pub use coco::{decode_rle_string, load_bank, polygon_mask, rle_mask, CocoSegmentation};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid scale range [{0}, {1}]: need 0 < min <= max <= 1")]
    InvalidScaleRange(f64, f64),
    #[error("no feasible placement for a {cutout:?} cutout in a {background:?} frame")]
    NoFeasiblePlacement {
        cutout: (u32, u32),
        background: (u32, u32),
    },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("invalid cutout {0}: {1}")]
    InvalidCutout(String, String),
}

pub type Result<T> = std::result::Result<T, SynthError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// An object to paste: its pixels and its support, cropped to the support's
/// bounding box.
#[derive(Debug, Clone)]
pub struct ObjectCutout {
    pub object_id: String,
    pub image: ColorImage,
    pub mask: BinaryMask,
}

impl ObjectCutout {
    pub fn new(object_id: impl Into<String>, image: ColorImage, mask: BinaryMask) -> Result<Self> {
        let object_id = object_id.into();
        if mask.is_empty() {
            return Err(SynthError::InvalidCutout(object_id, "empty mask".into()));
        }
        if image.dimensions() != mask.dims() {
            return Err(SynthError::InvalidCutout(
                object_id,
                format!("image {:?} vs mask {:?}", image.dimensions(), mask.dims()),
            ));
        }
        Ok(Self {
            object_id,
            image,
            mask,
        })
    }

    pub fn dims(&self) -> (u32, u32) {
        self.mask.dims()
    }
}

/// Top-left anchor and resize factor of a pasted cutout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub x: u32,
    pub y: u32,
    pub scale: f64,
}

/// Target size of the pasted object's longest side, as a fraction of the
/// background's shorter side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRange {
    pub min: f64,
    pub max: f64,
}

impl Default for ScaleRange {
    fn default() -> Self {
        Self {
            min: 0.02,
            max: 0.20,
        }
    }
}

impl ScaleRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.min > 0.0 && self.min <= self.max && self.max <= 1.0) {
            return Err(SynthError::InvalidScaleRange(self.min, self.max));
        }
        Ok(())
    }
}

/// Size of a `w`×`h` box resized by `scale`, each side at least one pixel.
pub fn scaled_dims(w: u32, h: u32, scale: f64) -> (u32, u32) {
    let side = |v: u32| ((f64::from(v) * scale).round() as u32).max(1);
    (side(w), side(h))
}

/// Nearest-neighbour resize. Destination pixel `d` samples source pixel
/// `floor((2d + 1) * src / (2 * dst))`, the source pixel under its centre.
pub fn resize_mask_nearest(mask: &BinaryMask, width: u32, height: u32) -> BinaryMask {
    let (sw, sh) = (u64::from(mask.width()), u64::from(mask.height()));
    let (dw, dh) = (u64::from(width), u64::from(height));
    BinaryMask::from_fn(width, height, |x, y| {
        let sx = ((2 * u64::from(x) + 1) * sw / (2 * dw)).min(sw - 1);
        let sy = ((2 * u64::from(y) + 1) * sh / (2 * dh)).min(sh - 1);
        mask.get(sx as u32, sy as u32)
    })
}

pub fn sample_placement<R: Rng + ?Sized>(
    rng: &mut R,
    background: (u32, u32),
    cutout: (u32, u32),
    scale_range: ScaleRange,
) -> Result<Placement> {
    scale_range.validate()?;
    let (bw, bh) = background;
    let (cw, ch) = cutout;
    if bw == 0 || bh == 0 || cw == 0 || ch == 0 {
        return Err(SynthError::NoFeasiblePlacement { cutout, background });
    }
    let relative = if scale_range.min == scale_range.max {
        scale_range.min
    } else {
        rng.gen_range(scale_range.min..=scale_range.max)
    };
    let scale = relative * f64::from(bw.min(bh)) / f64::from(cw.max(ch));
    let (sw, sh) = scaled_dims(cw, ch, scale);
    if sw > bw || sh > bh {
        return Err(SynthError::NoFeasiblePlacement { cutout, background });
    }
    Ok(Placement {
        x: rng.gen_range(0..=bw - sw),
        y: rng.gen_range(0..=bh - sh),
        scale,
    })
}

/// Pastes the scaled cutout onto a copy of `background`.
///
/// Returns the pseudo live image and the ground-truth support.
pub fn composite(
    background: &ColorImage,
    cutout: &ObjectCutout,
    placement: Placement,
) -> Result<(ColorImage, BinaryMask)> {
    let mut live = background.clone();
    let (bw, bh) = background.dimensions();
    let mut gt = BinaryMask::new(bw.max(1), bh.max(1));
    paste(&mut live, &mut gt, cutout, placement)?;
    Ok((live, gt))
}

fn paste(
    live: &mut ColorImage,
    gt: &mut BinaryMask,
    cutout: &ObjectCutout,
    placement: Placement,
) -> Result<()> {
    let (bw, bh) = live.dimensions();
    let (cw, ch) = cutout.dims();
    let (sw, sh) = scaled_dims(cw, ch, placement.scale);
    let fits = placement.scale > 0.0
        && u64::from(placement.x) + u64::from(sw) <= u64::from(bw)
        && u64::from(placement.y) + u64::from(sh) <= u64::from(bh);
    if !fits {
        return Err(SynthError::NoFeasiblePlacement {
            cutout: (sw, sh),
            background: (bw, bh),
        });
    }
    let scaled_mask = resize_mask_nearest(&cutout.mask, sw, sh);
    let scaled_image = if (sw, sh) == (cw, ch) {
        cutout.image.clone()
    } else {
        imageops::resize(&cutout.image, sw, sh, FilterType::Triangle)
    };
    for dy in 0..sh {
        for dx in 0..sw {
            if scaled_mask.get(dx, dy) {
                let (x, y) = (placement.x + dx, placement.y + dy);
                live.put_pixel(x, y, *scaled_image.get_pixel(dx, dy));
                gt.set(x, y, true);
            }
        }
    }
    Ok(())
}

/// A background image with its manifest id.
#[derive(Debug, Clone)]
pub struct Background {
    pub id: String,
    pub image: ColorImage,
}

#[derive(Debug, Deserialize)]
struct BackgroundLine {
    id: String,
    path: PathBuf,
}

/// Reads a JSON-lines `{id, path}` manifest; relative paths resolve
/// against the manifest's directory.
pub fn load_backgrounds(manifest: &Path) -> Result<Vec<Background>> {
    let file = std::fs::File::open(manifest).map_err(io_err(manifest))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(manifest))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: BackgroundLine = serde_json::from_str(&line).map_err(|e| SynthError::Parse {
            path: manifest.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        let path = base.join(&entry.path);
        let image = image::open(&path)
            .map_err(|e| SynthError::Image {
                path: path.clone(),
                message: e.to_string(),
            })?
            .into_rgb8();
        out.push(Background {
            id: entry.id,
            image,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    pub scale_range: ScaleRange,
    /// Objects pasted per sample; placements never overlap each other.
    pub objects_per_sample: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 0,
            seed: 0,
            scale_range: ScaleRange::default(),
            objects_per_sample: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePaths {
    #[serde(rename = "ref")]
    pub reference: String,
    pub live: String,
    pub gt: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub object_id: String,
    pub x: u32,
    pub y: u32,
    pub scale: f64,
}

/// One manifest line. The first pasted object is flattened into the top
/// level; further objects, if any, are listed in `additional`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub sample_id: String,
    pub bg: String,
    pub object_id: String,
    pub x: u32,
    pub y: u32,
    pub scale: f64,
    /// Paths relative to the output directory.
    pub paths: SamplePaths,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub additional: Vec<PlacedObject>,
}

impl SynthSample {
    pub fn objects(&self) -> Vec<PlacedObject> {
        let mut all = vec![PlacedObject {
            object_id: self.object_id.clone(),
            x: self.x,
            y: self.y,
            scale: self.scale,
        }];
        all.extend(self.additional.iter().cloned());
        all
    }
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const PLACEMENT_ATTEMPTS: usize = 100;

struct PlannedSample {
    background: usize,
    objects: Vec<(usize, Placement)>,
}

fn boxes_overlap(a: (Placement, (u32, u32)), b: (Placement, (u32, u32))) -> bool {
    let (pa, (wa, ha)) = a;
    let (pb, (wb, hb)) = b;
    pa.x < pb.x + wb && pb.x < pa.x + wa && pa.y < pb.y + hb && pb.y < pa.y + ha
}

fn plan(
    rng: &mut ChaCha8Rng,
    backgrounds: &[Background],
    bank: &[ObjectCutout],
    config: &SynthConfig,
) -> Result<Vec<PlannedSample>> {
    let mut planned = Vec::with_capacity(config.count);
    for _ in 0..config.count {
        let background = rng.gen_range(0..backgrounds.len());
        let bg_dims = backgrounds[background].image.dimensions();
        let mut objects: Vec<(usize, Placement)> = Vec::new();
        let mut boxes = Vec::new();
        for _ in 0..config.objects_per_sample.max(1) {
            let obj = rng.gen_range(0..bank.len());
            let dims = bank[obj].dims();
            let mut placed = None;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let p = sample_placement(rng, bg_dims, dims, config.scale_range)?;
                let b = (p, scaled_dims(dims.0, dims.1, p.scale));
                if boxes.iter().all(|&o| !boxes_overlap(o, b)) {
                    placed = Some(b);
                    break;
                }
            }
            let Some(b) = placed else {
                return Err(SynthError::NoFeasiblePlacement {
                    cutout: dims,
                    background: bg_dims,
                });
            };
            boxes.push(b);
            objects.push((obj, b.0));
        }
        planned.push(PlannedSample {
            background,
            objects,
        });
    }
    Ok(planned)
}

/// Renders one sample's live image and ground truth.
pub fn render(
    background: &ColorImage,
    bank: &[(&ObjectCutout, Placement)],
) -> Result<(ColorImage, BinaryMask)> {
    let mut live = background.clone();
    let (w, h) = background.dimensions();
    let mut gt = BinaryMask::new(w, h);
    for (cutout, placement) in bank {
        paste(&mut live, &mut gt, cutout, *placement)?;
    }
    Ok((live, gt))
}

fn save_rgb(img: &ColorImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| SynthError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Generates `config.count` samples into `out_dir` and writes the manifest.
///
/// All random draws happen up front on one seeded generator; rendering and
/// file writes then run in parallel.
pub fn generate_dataset(
    backgrounds: &[Background],
    bank: &[ObjectCutout],
    config: &SynthConfig,
    out_dir: &Path,
) -> Result<Vec<SynthSample>> {
    if backgrounds.is_empty() {
        return Err(SynthError::EmptyInput("no backgrounds"));
    }
    if bank.is_empty() {
        return Err(SynthError::EmptyInput("empty object bank"));
    }
    config.scale_range.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let planned = plan(&mut rng, backgrounds, bank, config)?;

    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    if !planned.is_empty() {
        for sub in ["ref", "live", "gt"] {
            let d = out_dir.join(sub);
            std::fs::create_dir_all(&d).map_err(io_err(&d))?;
        }
    }

    let samples: Vec<SynthSample> = planned
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let bg = &backgrounds[p.background];
            let pasted: Vec<(&ObjectCutout, Placement)> =
                p.objects.iter().map(|&(o, pl)| (&bank[o], pl)).collect();
            let (live, gt) = render(&bg.image, &pasted)?;
            let sample_id = format!("{i:06}");
            let paths = SamplePaths {
                reference: format!("ref/{sample_id}.png"),
                live: format!("live/{sample_id}.png"),
                gt: format!("gt/{sample_id}.png"),
            };
            save_rgb(&bg.image, &out_dir.join(&paths.reference))?;
            save_rgb(&live, &out_dir.join(&paths.live))?;
            let gt_path = out_dir.join(&paths.gt);
            mask::save_mask(&gt, &gt_path).map_err(|e| SynthError::Image {
                path: gt_path.clone(),
                message: e.to_string(),
            })?;
            let mut objects = p.objects.iter().map(|&(o, pl)| PlacedObject {
                object_id: bank[o].object_id.clone(),
                x: pl.x,
                y: pl.y,
                scale: pl.scale,
            });
            let first = objects.next().expect("at least one object per sample");
            Ok(SynthSample {
                sample_id,
                bg: bg.id.clone(),
                object_id: first.object_id,
                x: first.x,
                y: first.y,
                scale: first.scale,
                paths,
                seed: config.seed,
                additional: objects.collect(),
            })
        })
        .collect::<Result<_>>()?;

    let manifest = out_dir.join(MANIFEST_FILE);
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(&manifest).map_err(io_err(&manifest))?);
    for s in &samples {
        let line = serde_json::to_string(s).expect("sample serializes");
        writeln!(f, "{line}").map_err(io_err(&manifest))?;
    }
    f.flush().map_err(io_err(&manifest))?;
    Ok(samples)
}

pub fn read_manifest(path: &Path) -> Result<Vec<SynthSample>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| SynthError::Parse {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", n + 1),
            })
        })
        .collect()
}
