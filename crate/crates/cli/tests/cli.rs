mod common;

use common::*;
use doi_core::backend::server::FixtureServer;
use doi_core::backend::FixtureBackend;
use doi_core::mask;
use std::path::Path;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn golden_detect(out: &Path, extra: &[&str]) -> std::process::Output {
    let g = golden_dir();
    let pairs = g.join("pairs.jsonl");
    let fixtures = g.join("fixtures");
    let mut args = vec![
        "detect",
        "--pairs",
        s(&pairs),
        "--fixtures",
        s(&fixtures),
        "--out",
        s(out),
        "--dilate-iters",
        "1",
        "--assume-aligned",
    ];
    args.extend_from_slice(extra);
    doi(&args)
}

#[test]
fn golden_run_is_byte_exact_and_repeatable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(golden_detect(a.path(), &[]).status.success());
    assert!(golden_detect(b.path(), &["--workers", "1"])
        .status
        .success());
    assert_eq!(golden_mismatches(a.path()), Vec::<String>::new());
    assert_eq!(tree(a.path()), tree(b.path()));

    let listing = doi(&["list-objects", "--runs", s(a.path())]);
    assert!(listing.status.success());
    let expected = std::fs::read(golden_dir().join("expected/listing.tsv")).unwrap();
    assert_eq!(
        String::from_utf8(listing.stdout).unwrap(),
        String::from_utf8(expected).unwrap()
    );
}

#[test]
fn fused_is_always_base_or_object_mask() {
    let out = tempfile::tempdir().unwrap();
    assert!(golden_detect(out.path(), &[]).status.success());
    for pair in GOLDEN_PAIRS {
        let d = out.path().join(pair);
        let fused = mask::load_mask(d.join("fused.png")).unwrap();
        let base = mask::load_mask(d.join("base.png")).unwrap();
        let ovs = mask::load_mask(d.join("ovs.png")).unwrap();
        assert!(fused == base || fused == ovs, "{pair}");
    }
}

#[test]
fn no_ovs_outputs_thresholded_base() {
    let out = tempfile::tempdir().unwrap();
    assert!(golden_detect(out.path(), &["--no-ovs"]).status.success());
    let fx = golden_dir().join("fixtures");
    for pair in GOLDEN_PAIRS {
        let d = out.path().join(pair);
        let prob = mask::load_probability(fx.join(pair).join("change.png")).unwrap();
        let base = mask::threshold(&prob, 0.5);
        assert_eq!(mask::load_mask(d.join("fused.png")).unwrap(), base);
        assert_eq!(mask::load_mask(d.join("base.png")).unwrap(), base);
        assert!(!d.join("doi.json").exists());
    }
}

#[test]
fn http_backend_matches_fixture_backend() {
    let server = FixtureServer::start(
        FixtureBackend::open(golden_dir().join("fixtures")).unwrap(),
        "127.0.0.1:0",
    )
    .unwrap();
    let local = tempfile::tempdir().unwrap();
    let remote = tempfile::tempdir().unwrap();
    assert!(golden_detect(local.path(), &[]).status.success());
    let g = golden_dir();
    let pairs = g.join("pairs.jsonl");
    let out = doi(&[
        "detect",
        "--pairs",
        s(&pairs),
        "--backend-url",
        server.url(),
        "--out",
        s(remote.path()),
        "--dilate-iters",
        "1",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(tree(local.path()), tree(remote.path()));
}

#[test]
fn backend_url_from_environment() {
    let server = FixtureServer::start(
        FixtureBackend::open(golden_dir().join("fixtures")).unwrap(),
        "127.0.0.1:0",
    )
    .unwrap();
    let out = tempfile::tempdir().unwrap();
    let pairs = golden_dir().join("pairs.jsonl");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_doi"))
        .args([
            "detect",
            "--pairs",
            s(&pairs),
            "--out",
            s(out.path()),
            "--dilate-iters",
            "1",
        ])
        .env(doi_core::backend::BACKEND_URL_ENV, server.url())
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(golden_mismatches(out.path()), Vec::<String>::new());
}

#[test]
fn config_file_sets_tunables_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("doi.toml");
    let fixtures = golden_dir().join("fixtures");
    std::fs::write(
        &cfg,
        format!(
            "[search]\ndilation_iterations = 1\n[backend]\nfixtures = {:?}\n",
            s(&fixtures)
        ),
    )
    .unwrap();
    let pairs = golden_dir().join("pairs.jsonl");
    let out = dir.path().join("out");
    let o = doi(&[
        "--config",
        s(&cfg),
        "detect",
        "--pairs",
        s(&pairs),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(golden_mismatches(&out), Vec::<String>::new());

    // A lower upper bound on the command line flips p1 to the base mask.
    let out2 = dir.path().join("out2");
    let o = doi(&[
        "--config",
        s(&cfg),
        "detect",
        "--pairs",
        s(&pairs),
        "--out",
        s(&out2),
        "--doi-upper",
        "0.5",
    ]);
    assert!(o.status.success());
    let rec = std::fs::read_to_string(out2.join("p1/doi.json")).unwrap();
    assert!(
        rec.contains("AdoptBase") && rec.contains("\"upper\": 0.5"),
        "{rec}"
    );
}

#[test]
fn unreachable_backend_fails_naming_endpoint() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let out = tempfile::tempdir().unwrap();
    let pairs = golden_dir().join("pairs.jsonl");
    let url = format!("http://127.0.0.1:{port}");
    let o = doi(&[
        "detect",
        "--pairs",
        s(&pairs),
        "--backend-url",
        &url,
        "--out",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("change") && err.contains("transport"), "{err}");
}

#[test]
fn missing_fixture_pair_is_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let g = golden_dir();
    let extra = format!(
        "{{\"pair_id\":\"ghost\",\"ref_path\":{:?},\"live_path\":{:?},\"dataset_id\":\"x\"}}\n",
        s(&g.join("images/p1_ref.png")),
        s(&g.join("images/p1_live.png"))
    );
    let manifest = dir.path().join("pairs.jsonl");
    let mut text = std::fs::read_to_string(g.join("pairs.jsonl")).unwrap();
    text = text
        .replace("images/", &format!("{}/images/", s(&g)))
        .replace("gt/", &format!("{}/gt/", s(&g)));
    text.push_str(&extra);
    std::fs::write(&manifest, text).unwrap();
    let out = dir.path().join("out");
    let fixtures = g.join("fixtures");
    let o = doi(&[
        "detect",
        "--pairs",
        s(&manifest),
        "--fixtures",
        s(&fixtures),
        "--out",
        s(&out),
        "--dilate-iters",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fixture missing"));
    assert_eq!(golden_mismatches(&out), Vec::<String>::new());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let bgs = dir.path().join("bgs.jsonl");
    std::fs::write(&bgs, "").unwrap();
    let o = doi(&[
        "synth",
        "--bank",
        s(&missing),
        "--backgrounds",
        s(&bgs),
        "--count",
        "1",
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = doi(&["eval", "--pairs", s(&empty), "--pred", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let o = doi(&["list-objects", "--runs", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));

    let pairs = golden_dir().join("pairs.jsonl");
    let o = doi(&["detect", "--pairs", s(&pairs), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no backend"));

    let o = doi(&[
        "detect",
        "--pairs",
        s(&pairs),
        "--out",
        s(dir.path()),
        "--fixtures",
        "x",
        "--threshold",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_perfect_predictions_and_compare() {
    let out = tempfile::tempdir().unwrap();
    assert!(golden_detect(out.path(), &[]).status.success());
    let pairs = golden_dir().join("pairs.jsonl");
    let json = out.path().join("report.json");
    let o = doi(&[
        "eval",
        "--pairs",
        s(&pairs),
        "--pred",
        s(out.path()),
        "--baseline",
        s(out.path()),
        "--json",
        s(&json),
    ]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&json).unwrap()).unwrap();
    assert_eq!(report["report"]["overall"]["mean_f"], 1.0);
    assert_eq!(report["report"]["datasets"]["golden"]["n"], 3);
    assert_eq!(report["comparison"]["wins"], 1);
    assert_eq!(report["comparison"]["losses"], 0);
    assert!(
        report["comparison"]["overall"]["delta_mean_f"]
            .as_f64()
            .unwrap()
            > 0.0
    );
}

#[test]
fn synth_writes_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let obj = image::RgbImage::from_pixel(20, 20, image::Rgb([200, 30, 30]));
    obj.save(dir.path().join("obj.png")).unwrap();
    let bank = serde_json::json!({
        "images": [{"id": 1, "file_name": "obj.png", "width": 20, "height": 20}],
        "annotations": [{"id": 5, "image_id": 1, "category_id": 1,
                         "segmentation": [[2.0, 2.0, 18.0, 2.0, 10.0, 18.0]]}],
        "categories": [{"id": 1, "name": "cone"}]
    });
    std::fs::write(dir.path().join("bank.json"), bank.to_string()).unwrap();
    let bg = image::RgbImage::from_pixel(120, 90, image::Rgb([10, 60, 10]));
    bg.save(dir.path().join("bg.png")).unwrap();
    std::fs::write(
        dir.path().join("bgs.jsonl"),
        "{\"id\":\"room\",\"path\":\"bg.png\"}\n",
    )
    .unwrap();

    let run = |out: &Path, count: &str| {
        doi(&[
            "synth",
            "--bank",
            s(&dir.path().join("bank.json")),
            "--backgrounds",
            s(&dir.path().join("bgs.jsonl")),
            "--count",
            count,
            "--seed",
            "7",
            "--out",
            s(out),
        ])
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&a, "5").status.success());
    assert!(run(&b, "5").status.success());
    assert_eq!(tree(&a), tree(&b));
    let manifest = std::fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    assert!(manifest.contains("\"object_id\":\"cone-5\""));

    let empty = dir.path().join("empty");
    assert!(run(&empty, "0").status.success());
    assert_eq!(
        std::fs::read_to_string(empty.join("manifest.jsonl")).unwrap(),
        ""
    );
}

#[test]
fn listing_with_all_labels_filtered_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("p");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(
        run.join("run.json"),
        r#"{"pair_id":"p","dataset_id":"d","doi":null,"base_mask":"base.png","fused_mask":"fused.png",
            "fused_source":"base","labels":[],"objects":[]}"#,
    )
    .unwrap();
    let o = doi(&["list-objects", "--runs", s(dir.path())]);
    assert!(o.status.success());
    assert_eq!(
        String::from_utf8(o.stdout).unwrap(),
        "pair_id\tcomponent\tlabel\tpixels\tbbox\n"
    );
}
