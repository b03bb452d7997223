//! 8-bit grayscale PNG encoding for both mask kinds.

use super::{BinaryMask, MaskError, ProbabilityMask, Result};
use image::{ColorType, GrayImage, ImageFormat};
use std::io::Cursor;
use std::path::Path;

const FOREGROUND_CUT: u8 = 128;

fn decode_gray(bytes: &[u8], origin: &Path) -> Result<GrayImage> {
    let unsupported = |detail: String| MaskError::UnsupportedFormat {
        path: origin.to_path_buf(),
        detail,
    };
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
        .map_err(|e| unsupported(e.to_string()))?;
    if img.color() != ColorType::L8 {
        return Err(unsupported(format!(
            "expected 8-bit single-channel, got {:?}",
            img.color()
        )));
    }
    let gray = img.into_luma8();
    if gray.width() == 0 || gray.height() == 0 {
        return Err(MaskError::ZeroDimension(gray.width(), gray.height()));
    }
    Ok(gray)
}

fn encode_gray(width: u32, height: u32, data: Vec<u8>) -> Vec<u8> {
    let img = GrayImage::from_raw(width, height, data).expect("buffer sized from dimensions");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory PNG encoding cannot fail");
    out.into_inner()
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| MaskError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Decodes PNG bytes into a binary mask; values `>= 128` are foreground.
pub fn decode_mask_png(bytes: &[u8]) -> Result<BinaryMask> {
    decode_mask_from(bytes, Path::new("<memory>"))
}

fn decode_mask_from(bytes: &[u8], origin: &Path) -> Result<BinaryMask> {
    let gray = decode_gray(bytes, origin)?;
    let (w, h) = gray.dimensions();
    let pixels = gray
        .into_raw()
        .into_iter()
        .map(|v| v >= FOREGROUND_CUT)
        .collect();
    BinaryMask::from_vec(w, h, pixels)
}

/// Encodes foreground as 255 and background as 0.
pub fn encode_mask_png(mask: &BinaryMask) -> Vec<u8> {
    let data = mask
        .pixels()
        .iter()
        .map(|&p| if p { 255 } else { 0 })
        .collect();
    encode_gray(mask.width(), mask.height(), data)
}

pub fn decode_probability_png(bytes: &[u8]) -> Result<ProbabilityMask> {
    decode_probability_from(bytes, Path::new("<memory>"))
}

fn decode_probability_from(bytes: &[u8], origin: &Path) -> Result<ProbabilityMask> {
    let gray = decode_gray(bytes, origin)?;
    let (w, h) = gray.dimensions();
    ProbabilityMask::from_levels(w, h, gray.into_raw())
}

pub fn encode_probability_png(mask: &ProbabilityMask) -> Vec<u8> {
    encode_gray(mask.width(), mask.height(), mask.levels().to_vec())
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    decode_mask_from(&read(path)?, path)
}

pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_mask_png(mask))
}

pub fn load_probability(path: impl AsRef<Path>) -> Result<ProbabilityMask> {
    let path = path.as_ref();
    decode_probability_from(&read(path)?, path)
}

pub fn save_probability(mask: &ProbabilityMask, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_probability_png(mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use rand::{Rng, SeedableRng};

    fn write_gray(
        dir: &Path,
        name: &str,
        w: u32,
        h: u32,
        f: impl Fn(u32, u32) -> u8,
    ) -> std::path::PathBuf {
        let img = GrayImage::from_fn(w, h, |x, y| image::Luma([f(x, y)]));
        let path = dir.join(name);
        img.save(&path).unwrap();
        path
    }

    #[test]
    fn load_saturation_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let full = write_gray(dir.path(), "full.png", 4, 4, |_, _| 255);
        let empty = write_gray(dir.path(), "empty.png", 4, 4, |_, _| 0);
        assert_eq!(load_mask(full).unwrap().count(), 16);
        assert_eq!(load_mask(empty).unwrap().count(), 0);
    }

    #[test]
    fn load_threshold_boundary() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_gray(dir.path(), "b.png", 4, 3, |x, y| {
            if (x + y) % 2 == 0 {
                128
            } else {
                127
            }
        });
        let m = load_mask(p).unwrap();
        assert_eq!(m, BinaryMask::from_fn(4, 3, |x, y| (x + y) % 2 == 0));
    }

    #[test]
    fn save_writes_0_and_255() {
        let dir = tempfile::tempdir().unwrap();
        let e = dir.path().join("e.png");
        let f = dir.path().join("f.png");
        save_mask(&BinaryMask::new(3, 3), &e).unwrap();
        save_mask(&BinaryMask::full(3, 3), &f).unwrap();
        let ge = image::open(&e).unwrap().into_luma8();
        let gf = image::open(&f).unwrap().into_luma8();
        assert!(ge.pixels().all(|p| p.0[0] == 0));
        assert!(gf.pixels().all(|p| p.0[0] == 255));
    }

    #[test]
    fn random_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let m = BinaryMask::from_fn(64, 64, |_, _| rng.gen_bool(0.3));
        let path = dir.path().join("r.png");
        save_mask(&m, &path).unwrap();
        assert_eq!(load_mask(&path).unwrap(), m);

        let p =
            ProbabilityMask::from_levels(64, 64, (0..64 * 64).map(|i| (i % 256) as u8).collect())
                .unwrap();
        let pp = dir.path().join("p.png");
        save_probability(&p, &pp).unwrap();
        assert_eq!(load_probability(&pp).unwrap(), p);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_mask(dir.path().join("nope.png")),
            Err(MaskError::Io { .. })
        ));
        let rgb = dir.path().join("rgb.png");
        RgbImage::from_pixel(2, 2, Rgb([1, 2, 3]))
            .save(&rgb)
            .unwrap();
        assert!(matches!(
            load_mask(&rgb),
            Err(MaskError::UnsupportedFormat { .. })
        ));
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"not a png").unwrap();
        assert!(matches!(
            load_mask(&junk),
            Err(MaskError::UnsupportedFormat { .. })
        ));
    }
}
