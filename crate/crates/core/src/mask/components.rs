use super::BinaryMask;
use std::collections::VecDeque;

/// Splits a mask into its 8-connected foreground components.
///
/// Each component is returned as a full-size mask. Components are ordered by
/// their first pixel in row-major order.
pub fn connected_components(mask: &BinaryMask) -> Vec<BinaryMask> {
    let w = mask.width() as usize;
    let h = mask.height() as usize;
    let src = mask.pixels();
    let mut visited = vec![false; w * h];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();

    for start in 0..w * h {
        if !src[start] || visited[start] {
            continue;
        }
        let mut pixels = vec![false; w * h];
        visited[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            pixels[i] = true;
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if src[j] && !visited[j] {
                        visited[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        components.push(
            BinaryMask::from_vec(mask.width(), mask.height(), pixels).expect("same dimensions"),
        );
    }
    components
}
