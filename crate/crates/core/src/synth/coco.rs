//! Object bank loading from COCO-style instance annotations.

use super::{ObjectCutout, Result, SynthError};
use crate::mask::BinaryMask;
use serde::Deserialize;
use std::collections::HashMap;
use std::path::Path;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CocoSegmentation {
    Polygons(Vec<Vec<f64>>),
    Rle { counts: RleCounts, size: [u32; 2] },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum RleCounts {
    Raw(Vec<u32>),
    Compressed(String),
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    segmentation: CocoSegmentation,
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
    #[serde(default)]
    categories: Vec<CocoCategory>,
}

/// Rasterizes polygons: a pixel is foreground when its centre lies inside
/// any polygon under the even-odd rule.
pub fn polygon_mask(polygons: &[Vec<f64>], width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::new(width, height);
    for poly in polygons {
        let pts: Vec<(f64, f64)> = poly.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        if pts.len() < 3 {
            continue;
        }
        for y in 0..height {
            let cy = f64::from(y) + 0.5;
            let mut xs = Vec::new();
            for i in 0..pts.len() {
                let (x0, y0) = pts[i];
                let (x1, y1) = pts[(i + 1) % pts.len()];
                if (y0 <= cy) != (y1 <= cy) {
                    xs.push(x0 + (cy - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                // Centres cx = x + 0.5 with span[0] <= cx < span[1].
                let start = (span[0] - 0.5).ceil().max(0.0);
                let end = (span[1] - 0.5).ceil().min(f64::from(width));
                let mut x = start;
                while x < end {
                    mask.set(x as u32, y, true);
                    x += 1.0;
                }
            }
        }
    }
    mask
}

/// Decodes the compact string form of run-length counts.
pub fn decode_rle_string(s: &str) -> std::result::Result<Vec<u32>, String> {
    let bytes = s.as_bytes();
    let mut counts: Vec<i64> = Vec::new();
    let mut p = 0;
    while p < bytes.len() {
        let mut x: i64 = 0;
        let mut k = 0;
        loop {
            let Some(&b) = bytes.get(p) else {
                return Err("truncated run-length string".into());
            };
            let c = i64::from(b) - 48;
            if !(0..64).contains(&c) || k > 12 {
                return Err(format!("invalid run-length byte {b:#x}"));
            }
            x |= (c & 0x1f) << (5 * k);
            p += 1;
            k += 1;
            if c & 0x20 == 0 {
                if c & 0x10 != 0 {
                    x |= -1i64 << (5 * k);
                }
                break;
            }
        }
        if counts.len() > 2 {
            x += counts[counts.len() - 2];
        }
        if x < 0 || x > i64::from(u32::MAX) {
            return Err(format!("run length {x} out of range"));
        }
        counts.push(x);
    }
    Ok(counts.into_iter().map(|c| c as u32).collect())
}

/// Expands column-major run lengths that alternate background/foreground,
/// starting with background.
pub fn rle_mask(
    counts: &[u32],
    width: u32,
    height: u32,
) -> std::result::Result<BinaryMask, String> {
    let total = u64::from(width) * u64::from(height);
    let sum: u64 = counts.iter().map(|&c| u64::from(c)).sum();
    if sum != total {
        return Err(format!("run lengths sum to {sum}, expected {total}"));
    }
    let mut mask = BinaryMask::new(width, height);
    let mut pos = 0u64;
    for (i, &c) in counts.iter().enumerate() {
        if i % 2 == 1 {
            for idx in pos..pos + u64::from(c) {
                let x = (idx / u64::from(height)) as u32;
                let y = (idx % u64::from(height)) as u32;
                mask.set(x, y, true);
            }
        }
        pos += u64::from(c);
    }
    Ok(mask)
}

fn segmentation_mask(
    seg: &CocoSegmentation,
    width: u32,
    height: u32,
) -> std::result::Result<BinaryMask, String> {
    match seg {
        CocoSegmentation::Polygons(p) => Ok(polygon_mask(p, width, height)),
        CocoSegmentation::Rle { counts, size } => {
            let [h, w] = *size;
            if (w, h) != (width, height) {
                return Err(format!("rle size {w}x{h} vs image {width}x{height}"));
            }
            let counts = match counts {
                RleCounts::Raw(c) => c.clone(),
                RleCounts::Compressed(s) => decode_rle_string(s)?,
            };
            rle_mask(&counts, width, height)
        }
    }
}

/// Loads every non-empty instance as a cutout cropped to its bounding box.
///
/// Object ids are `<category>-<annotation id>`, or the bare annotation id
/// when the category is unknown. Images are looked up in `image_dir`.
pub fn load_bank(annotations: &Path, image_dir: &Path) -> Result<Vec<ObjectCutout>> {
    let text = std::fs::read_to_string(annotations).map_err(|source| SynthError::Io {
        path: annotations.to_path_buf(),
        source,
    })?;
    let coco: CocoFile = serde_json::from_str(&text).map_err(|e| SynthError::Parse {
        path: annotations.to_path_buf(),
        message: e.to_string(),
    })?;
    let images: HashMap<u64, &CocoImage> = coco.images.iter().map(|i| (i.id, i)).collect();
    let categories: HashMap<u64, &str> = coco
        .categories
        .iter()
        .map(|c| (c.id, c.name.as_str()))
        .collect();

    let mut by_image: Vec<&CocoAnnotation> = coco.annotations.iter().collect();
    by_image.sort_by_key(|a| (a.image_id, a.id));

    let mut bank = Vec::new();
    let mut loaded: Option<(u64, image::RgbImage)> = None;
    for ann in by_image {
        let Some(meta) = images.get(&ann.image_id) else {
            return Err(SynthError::Parse {
                path: annotations.to_path_buf(),
                message: format!(
                    "annotation {} references unknown image {}",
                    ann.id, ann.image_id
                ),
            });
        };
        if loaded.as_ref().map(|(id, _)| *id) != Some(meta.id) {
            let path = image_dir.join(&meta.file_name);
            let img = image::open(&path)
                .map_err(|e| SynthError::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?
                .into_rgb8();
            if img.dimensions() != (meta.width, meta.height) {
                return Err(SynthError::Image {
                    path,
                    message: format!(
                        "size {:?} disagrees with annotation {}x{}",
                        img.dimensions(),
                        meta.width,
                        meta.height
                    ),
                });
            }
            loaded = Some((meta.id, img));
        }
        let img = &loaded.as_ref().expect("image loaded above").1;
        let full =
            segmentation_mask(&ann.segmentation, meta.width, meta.height).map_err(|message| {
                SynthError::Parse {
                    path: annotations.to_path_buf(),
                    message: format!("annotation {}: {message}", ann.id),
                }
            })?;
        let Some(bb) = full.bounding_box() else {
            log::debug!("skipping empty annotation {}", ann.id);
            continue;
        };
        let (w, h) = (bb.width(), bb.height());
        let crop = image::imageops::crop_imm(img, bb.x0, bb.y0, w, h).to_image();
        let mask = BinaryMask::from_fn(w, h, |x, y| full.get(bb.x0 + x, bb.y0 + y));
        let object_id = match categories.get(&ann.category_id) {
            Some(name) => format!("{name}-{}", ann.id),
            None => ann.id.to_string(),
        };
        bank.push(ObjectCutout::new(object_id, crop, mask)?);
    }
    Ok(bank)
}
