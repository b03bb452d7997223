#![allow(dead_code)]

use doi_core::mask;
use doi_core::BinaryMask;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden")
}

pub const GOLDEN_PAIRS: [&str; 3] = ["p1", "p2", "p3"];

pub fn doi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_doi"))
        .args(args)
        .env_remove(doi_core::backend::BACKEND_URL_ENV)
        .output()
        .expect("binary runs")
}

pub fn ascii_mask(path: &Path) -> BinaryMask {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    BinaryMask::from_ascii(&text).unwrap()
}

/// PNG bytes the pipeline must produce for an ASCII golden mask.
pub fn golden_png(path: &Path) -> Vec<u8> {
    mask::encode_mask_png(&ascii_mask(path))
}

/// Every file under `root` with its bytes, keyed by relative path.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}

/// Compares a `detect` output directory with the hand-traced goldens.
/// Returns the mismatching artifacts.
pub fn golden_mismatches(out: &Path) -> Vec<String> {
    let g = golden_dir().join("expected");
    let mut bad = Vec::new();
    for pair in GOLDEN_PAIRS {
        for name in ["base", "fused"] {
            let got = std::fs::read(out.join(pair).join(format!("{name}.png"))).unwrap_or_default();
            if got != golden_png(&g.join(pair).join(format!("{name}.txt"))) {
                bad.push(format!("{pair}/{name}.png"));
            }
        }
        let got = std::fs::read(out.join(pair).join("doi.json")).unwrap_or_default();
        if got != std::fs::read(g.join(pair).join("doi.json")).unwrap() {
            bad.push(format!("{pair}/doi.json"));
        }
    }
    bad
}
