use doi_core::backend::server::FixtureServer;
use doi_core::backend::{
    wire, ChangeRequest, DescribeRequest, Endpoint, FixtureBackend, FixtureWriter, HttpBackend,
    HttpConfig, ImageRole, ModelBackend, SegmentRequest,
};
use doi_core::{BackendError, BinaryMask, ColorImage, ProbabilityMask, SearchConfig};
use std::path::Path;
use std::time::Duration;

const W: u32 = 12;
const H: u32 = 10;

fn block(x0: u32, y0: u32, x1: u32, y1: u32) -> BinaryMask {
    BinaryMask::from_fn(W, H, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
}

fn write_fixture(root: &Path) -> FixtureBackend {
    let mut w = FixtureWriter::new(root).unwrap();
    let prob = ProbabilityMask::from_fn(W, H, |x, y| {
        if (2..4).contains(&x) && (2..4).contains(&y) {
            0.9
        } else {
            0.1
        }
    });
    w.change("p1", &prob).unwrap();
    w.describe("p1", 0, "This object is a wallet.").unwrap();
    w.segment(
        "p1",
        ImageRole::Live,
        "wallet",
        &block(2, 2, 4, 6),
        Some(0.8),
    )
    .unwrap();
    w.segment("p1", ImageRole::Live, "wallet", &block(8, 8, 9, 9), None)
        .unwrap();
    w.segment(
        "p1",
        ImageRole::Ref,
        "red wallet/2",
        &block(0, 0, 1, 1),
        None,
    )
    .unwrap();
    w.finish().unwrap();
    FixtureBackend::open(root).unwrap()
}

fn image() -> ColorImage {
    ColorImage::from_fn(W, H, |x, y| image::Rgb([x as u8 * 10, y as u8 * 10, 3]))
}

fn client(url: &str) -> HttpBackend {
    let mut cfg = HttpConfig::new(url);
    cfg.timeout = Duration::from_secs(5);
    HttpBackend::new(cfg)
}

#[test]
fn http_matches_local_fixture_backend() {
    let dir = tempfile::tempdir().unwrap();
    let local = write_fixture(dir.path());
    let server = FixtureServer::start(local.clone(), "127.0.0.1:0").unwrap();
    let remote = client(server.url());
    let img = image();

    let req = ChangeRequest {
        pair_id: "p1",
        reference: &img,
        live: &img,
    };
    assert_eq!(
        remote.detect_change(&req).unwrap(),
        local.detect_change(&req).unwrap()
    );

    let region = block(0, 0, 6, 8);
    let req = DescribeRequest {
        pair_id: "p1",
        region_index: 0,
        image: &img,
        region: &region,
        prompt: doi_core::search::PROMPT,
    };
    assert_eq!(remote.describe(&req).unwrap(), "This object is a wallet.");

    for (role, label) in [
        (ImageRole::Live, "wallet"),
        (ImageRole::Ref, "red wallet/2"),
        (ImageRole::Ref, "wallet"),
    ] {
        let req = SegmentRequest {
            pair_id: "p1",
            role,
            image: &img,
            label,
        };
        assert_eq!(remote.segment(&req).unwrap(), local.segment(&req).unwrap());
    }

    let base = doi_core::threshold(
        &local
            .detect_change(&ChangeRequest {
                pair_id: "p1",
                reference: &img,
                live: &img,
            })
            .unwrap(),
        0.5,
    );
    let cfg = SearchConfig::default();
    let a = doi_core::search_objects("p1", &img, &img, &base, &remote, &cfg).unwrap();
    let b = doi_core::search_objects("p1", &img, &img, &base, &local, &cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn health_lists_three_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let server = FixtureServer::start(write_fixture(dir.path()), "127.0.0.1:0").unwrap();
    let h = client(server.url()).health().unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.endpoints, ["change", "describe", "segment"]);
}

#[test]
fn unknown_pair_is_fixture_missing() {
    let dir = tempfile::tempdir().unwrap();
    let server = FixtureServer::start(write_fixture(dir.path()), "127.0.0.1:0").unwrap();
    let img = image();
    let err = client(server.url())
        .detect_change(&ChangeRequest {
            pair_id: "nope",
            reference: &img,
            live: &img,
        })
        .unwrap_err();
    match &err {
        BackendError::FixtureMissing {
            endpoint, pair_id, ..
        } => {
            assert_eq!((*endpoint, pair_id.as_str()), (Endpoint::Change, "nope"));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("fixture missing"));
}

#[test]
fn malformed_base64_gets_400() {
    let dir = tempfile::tempdir().unwrap();
    let server = FixtureServer::start(write_fixture(dir.path()), "127.0.0.1:0").unwrap();
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .http_status_as_error(false)
        .build()
        .into();
    let body = wire::ChangeRequestBody {
        pair_id: "p1".into(),
        ref_png: "***not base64***".into(),
        image_png: wire::encode_image(&image()),
    };
    let mut resp = agent
        .post(format!("{}{}", server.url(), wire::CHANGE_PATH))
        .send_json(&body)
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let err: wire::ErrorBody = resp.body_mut().read_json().unwrap();
    assert!(err.error.starts_with("malformed request"));
}

/// A server that answers every request with the given status and body.
fn canned_server(status: u16, body: &'static str) -> (String, std::thread::JoinHandle<()>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let handle = std::thread::spawn(move || {
        if let Ok(req) = server.recv() {
            let _ = req.respond(tiny_http::Response::from_string(body).with_status_code(status));
        }
    });
    (url, handle)
}

#[test]
fn server_error_names_the_endpoint() {
    let (url, handle) = canned_server(500, "boom");
    let img = image();
    let region = block(0, 0, 2, 2);
    let err = client(&url)
        .describe(&DescribeRequest {
            pair_id: "p9",
            region_index: 0,
            image: &img,
            region: &region,
            prompt: doi_core::search::PROMPT,
        })
        .unwrap_err();
    handle.join().unwrap();
    assert!(matches!(
        err,
        BackendError::Transport {
            endpoint: Endpoint::Describe,
            ..
        }
    ));
    let msg = err.to_string();
    assert!(
        msg.contains("describe") && msg.contains("p9") && msg.contains("500"),
        "{msg}"
    );
}

#[test]
fn wrong_dimensions_are_rejected() {
    let png = doi_core::mask::encode_probability_png(&ProbabilityMask::uniform(3, 3, 0.0));
    let body: &'static str =
        Box::leak(format!(r#"{{"prob_png":"{}"}}"#, wire::encode_b64(&png)).into_boxed_str());
    let (url, handle) = canned_server(200, body);
    let img = image();
    let err = client(&url)
        .detect_change(&ChangeRequest {
            pair_id: "p1",
            reference: &img,
            live: &img,
        })
        .unwrap_err();
    handle.join().unwrap();
    assert!(matches!(
        err,
        BackendError::DimensionMismatch {
            endpoint: Endpoint::Change,
            ..
        }
    ));
    assert!(err.to_string().contains("dimension mismatch"), "{err}");
}

#[test]
fn unreachable_backend_is_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let img = image();
    let err = client(&format!("http://127.0.0.1:{port}"))
        .detect_change(&ChangeRequest {
            pair_id: "p1",
            reference: &img,
            live: &img,
        })
        .unwrap_err();
    assert!(matches!(
        err,
        BackendError::Transport {
            endpoint: Endpoint::Change,
            ..
        }
    ));
    assert!(err.to_string().contains("change"));
}
