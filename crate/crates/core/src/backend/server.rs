//! A blocking HTTP server that answers the wire protocol from a fixture
//! directory. Intended for tests and local demos.

use super::wire::{self, ErrorBody};
use super::{BackendError, FixtureBackend};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::sync::Arc;
use std::thread::JoinHandle;

const WORKERS: usize = 4;

/// Running server; stops and joins its workers on drop.
pub struct FixtureServer {
    server: Arc<tiny_http::Server>,
    url: String,
    workers: Vec<JoinHandle<()>>,
}

struct Reply {
    status: u16,
    body: String,
}

impl Reply {
    fn json<T: Serialize>(status: u16, value: &T) -> Self {
        Self {
            status,
            body: serde_json::to_string(value).expect("response serializes"),
        }
    }

    fn error(status: u16, error: impl Into<String>, pair_id: Option<&str>) -> Self {
        Self::json(
            status,
            &ErrorBody {
                error: error.into(),
                pair_id: pair_id.map(str::to_owned),
            },
        )
    }
}

impl FixtureServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn start(fixtures: FixtureBackend, addr: &str) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(std::io::Error::other)?;
        let server = Arc::new(server);
        let url = match server.server_addr() {
            tiny_http::ListenAddr::IP(a) => format!("http://{a}"),
            #[allow(unreachable_patterns)]
            other => format!("http://{other}"),
        };
        let fixtures = Arc::new(fixtures);
        let workers = (0..WORKERS)
            .map(|_| {
                let server = Arc::clone(&server);
                let fixtures = Arc::clone(&fixtures);
                std::thread::spawn(move || {
                    while let Ok(mut req) = server.recv() {
                        let reply = handle(&fixtures, &mut req);
                        let header =
                            tiny_http::Header::from_bytes("Content-Type", "application/json")
                                .expect("static header");
                        let resp = tiny_http::Response::from_string(reply.body)
                            .with_status_code(reply.status)
                            .with_header(header);
                        if let Err(e) = req.respond(resp) {
                            log::warn!("fixture server: {e}");
                        }
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            url,
            workers,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, Reply> {
    serde_json::from_str(body)
        .map_err(|e| Reply::error(400, format!("malformed request: {e}"), None))
}

fn b64_png(field: &str, value: &str, pair_id: &str) -> Result<(), Reply> {
    let bytes = wire::decode_b64(value).map_err(|e| {
        Reply::error(
            400,
            format!("malformed request: {field}: {e}"),
            Some(pair_id),
        )
    })?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map(|_| ())
        .map_err(|e| {
            Reply::error(
                400,
                format!("malformed request: {field}: {e}"),
                Some(pair_id),
            )
        })
}

fn lookup_error(e: BackendError, pair_id: &str) -> Reply {
    match e {
        BackendError::FixtureMissing { .. } => {
            Reply::error(404, wire::FIXTURE_MISSING, Some(pair_id))
        }
        other => Reply::error(500, other.to_string(), Some(pair_id)),
    }
}

fn handle(fixtures: &FixtureBackend, req: &mut tiny_http::Request) -> Reply {
    let path = req.url().split('?').next().unwrap_or_default().to_owned();
    let method = req.method().clone();
    if path == wire::HEALTH_PATH && method == tiny_http::Method::Get {
        return Reply::json(
            200,
            &wire::HealthBody {
                status: "ok".into(),
                endpoints: vec!["change".into(), "describe".into(), "segment".into()],
            },
        );
    }
    if method != tiny_http::Method::Post {
        return Reply::error(405, "method not allowed", None);
    }
    let mut body = String::new();
    if req.as_reader().read_to_string(&mut body).is_err() {
        return Reply::error(400, "malformed request: unreadable body", None);
    }
    let result = match path.as_str() {
        wire::CHANGE_PATH => change(fixtures, &body),
        wire::DESCRIBE_PATH => describe(fixtures, &body),
        wire::SEGMENT_PATH => segment(fixtures, &body),
        _ => Err(Reply::error(404, "unknown endpoint", None)),
    };
    result.unwrap_or_else(|r| r)
}

fn change(fixtures: &FixtureBackend, body: &str) -> Result<Reply, Reply> {
    let req: wire::ChangeRequestBody = parse(body)?;
    b64_png("ref_png", &req.ref_png, &req.pair_id)?;
    b64_png("image_png", &req.image_png, &req.pair_id)?;
    let png = fixtures
        .change_png(&req.pair_id)
        .map_err(|e| lookup_error(e, &req.pair_id))?;
    Ok(Reply::json(
        200,
        &wire::ChangeResponseBody {
            prob_png: wire::encode_b64(&png),
        },
    ))
}

fn describe(fixtures: &FixtureBackend, body: &str) -> Result<Reply, Reply> {
    let req: wire::DescribeRequestBody = parse(body)?;
    b64_png("image_png", &req.image_png, &req.pair_id)?;
    b64_png("region_png", &req.region_png, &req.pair_id)?;
    let text = fixtures
        .describe_text(&req.pair_id, req.region_index)
        .map_err(|e| lookup_error(e, &req.pair_id))?;
    Ok(Reply::json(200, &wire::DescribeResponseBody { text }))
}

fn segment(fixtures: &FixtureBackend, body: &str) -> Result<Reply, Reply> {
    let req: wire::SegmentRequestBody = parse(body)?;
    b64_png("image_png", &req.image_png, &req.pair_id)?;
    let proposals = fixtures
        .segment_pngs(&req.pair_id, req.image, &req.label)
        .map_err(|e| lookup_error(e, &req.pair_id))?
        .into_iter()
        .map(|(png, confidence)| wire::ProposalBody {
            label: req.label.clone(),
            mask_png: wire::encode_b64(&png),
            confidence,
        })
        .collect();
    Ok(Reply::json(200, &wire::SegmentResponseBody { proposals }))
}
