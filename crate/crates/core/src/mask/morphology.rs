use super::{BinaryMask, MaskError, Result};

/// Square structuring element side used for query-region preparation.
pub const DEFAULT_KERNEL_SIZE: usize = 5;

/// Number of dilation passes applied when none is configured.
pub const DEFAULT_DILATION_ITERATIONS: usize = 3;

/// Dilates with a `kernel`×`kernel` square, `iterations` times.
///
/// Growth is clipped at the image border. The square element is separable,
/// so each pass is a horizontal running max followed by a vertical one.
pub fn dilate(mask: &BinaryMask, kernel: usize, iterations: usize) -> Result<BinaryMask> {
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(MaskError::InvalidKernel(kernel));
    }
    let radius = kernel / 2;
    let mut out = mask.clone();
    if radius == 0 {
        return Ok(out);
    }
    for _ in 0..iterations {
        out = dilate_once(&out, radius);
    }
    Ok(out)
}

fn dilate_once(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let w = mask.width() as usize;
    let h = mask.height() as usize;
    let src = mask.pixels();

    let mut horizontal = vec![false; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        // Distance to the nearest foreground pixel seen so far from the left,
        // then from the right.
        let mut last: Option<usize> = None;
        for x in 0..w {
            if row[x] {
                last = Some(x);
            }
            if last.is_some_and(|l| x - l <= radius) {
                horizontal[y * w + x] = true;
            }
        }
        last = None;
        for x in (0..w).rev() {
            if row[x] {
                last = Some(x);
            }
            if last.is_some_and(|l| l - x <= radius) {
                horizontal[y * w + x] = true;
            }
        }
    }

    let mut pixels = vec![false; w * h];
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if horizontal[y * w + x] {
                last = Some(y);
            }
            if last.is_some_and(|l| y - l <= radius) {
                pixels[y * w + x] = true;
            }
        }
        last = None;
        for y in (0..h).rev() {
            if horizontal[y * w + x] {
                last = Some(y);
            }
            if last.is_some_and(|l| l - y <= radius) {
                pixels[y * w + x] = true;
            }
        }
    }

    BinaryMask::from_vec(mask.width(), mask.height(), pixels).expect("same dimensions")
}
