use super::wire::{self, ErrorBody};
use super::{
    check_dims, validate_change, validate_describe, validate_segment, BackendError, ChangeRequest,
    DescribeRequest, Endpoint, ModelBackend, SegmentRequest,
};
use crate::mask::{self, ProbabilityMask};
use crate::search::ObjectProposal;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

/// Environment variable holding the backend base URL.
pub const BACKEND_URL_ENV: &str = "DOI_BACKEND_URL";

#[derive(Debug, Clone, PartialEq)]
pub struct HttpConfig {
    pub base_url: String,
    pub timeout: Duration,
    /// Extra attempts after a transport failure. HTTP error statuses are
    /// never retried.
    pub retries: u32,
    pub max_connections: usize,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(30),
            retries: 0,
            max_connections: 8,
        }
    }
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Client for a remote backend speaking the [`wire`] protocol.
pub struct HttpBackend {
    base_url: String,
    agent: ureq::Agent,
    retries: u32,
    permits: Permits,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: config.base_url.trim_end_matches('/').to_owned(),
            agent,
            retries: config.retries,
            permits: Permits {
                free: Mutex::new(config.max_connections.max(1)),
                cv: Condvar::new(),
            },
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    /// Queries `GET /v1/health`.
    pub fn health(&self) -> Result<wire::HealthBody, String> {
        let url = format!("{}{}", self.base_url, wire::HEALTH_PATH);
        let mut resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| format!("{url}: {e}"))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(format!("{url}: HTTP {status}"));
        }
        resp.body_mut()
            .read_json()
            .map_err(|e| format!("{url}: {e}"))
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        endpoint: Endpoint,
        path: &str,
        pair_id: &str,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let transport = |message: String| BackendError::Transport {
            endpoint,
            pair_id: pair_id.to_owned(),
            message,
        };
        let url = format!("{}{}", self.base_url, path);
        let _permit = self.permits.acquire();
        let mut attempt = 0;
        let mut response = loop {
            match self.agent.post(&url).send_json(body) {
                Ok(r) => break r,
                Err(e) if attempt < self.retries => {
                    log::warn!("{endpoint} [{pair_id}]: {e}, retrying");
                    attempt += 1;
                }
                Err(e) => return Err(transport(format!("{url}: {e}"))),
            }
        };
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            if let Ok(err) = serde_json::from_str::<ErrorBody>(&text) {
                if status == 404 && err.error == wire::FIXTURE_MISSING {
                    return Err(BackendError::FixtureMissing {
                        endpoint,
                        pair_id: err.pair_id.unwrap_or_else(|| pair_id.to_owned()),
                        detail: format!("HTTP 404 from {url}"),
                    });
                }
            }
            return Err(transport(format!("{url}: HTTP {status}: {}", text.trim())));
        }
        response
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| BackendError::Malformed {
                endpoint,
                pair_id: pair_id.to_owned(),
                message: e.to_string(),
            })
    }
}

fn malformed(endpoint: Endpoint, pair_id: &str, message: impl ToString) -> BackendError {
    BackendError::Malformed {
        endpoint,
        pair_id: pair_id.to_owned(),
        message: message.to_string(),
    }
}

impl ModelBackend for HttpBackend {
    fn detect_change(&self, req: &ChangeRequest<'_>) -> Result<ProbabilityMask, BackendError> {
        validate_change(req)?;
        let body = wire::ChangeRequestBody {
            pair_id: req.pair_id.to_owned(),
            ref_png: wire::encode_image(req.reference),
            image_png: wire::encode_image(req.live),
        };
        let resp: wire::ChangeResponseBody =
            self.post(Endpoint::Change, wire::CHANGE_PATH, req.pair_id, &body)?;
        let bytes = wire::decode_b64(&resp.prob_png)
            .map_err(|e| malformed(Endpoint::Change, req.pair_id, e))?;
        let prob = mask::decode_probability_png(&bytes)
            .map_err(|e| malformed(Endpoint::Change, req.pair_id, e))?;
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
        let body = wire::DescribeRequestBody {
            pair_id: req.pair_id.to_owned(),
            region_index: req.region_index,
            image_png: wire::encode_image(req.image),
            region_png: wire::encode_b64(&mask::encode_mask_png(req.region)),
            prompt: req.prompt.to_owned(),
        };
        let resp: wire::DescribeResponseBody =
            self.post(Endpoint::Describe, wire::DESCRIBE_PATH, req.pair_id, &body)?;
        Ok(resp.text)
    }

    fn segment(&self, req: &SegmentRequest<'_>) -> Result<Vec<ObjectProposal>, BackendError> {
        validate_segment(req)?;
        let body = wire::SegmentRequestBody {
            pair_id: req.pair_id.to_owned(),
            image: req.role,
            image_png: wire::encode_image(req.image),
            label: req.label.to_owned(),
        };
        let resp: wire::SegmentResponseBody =
            self.post(Endpoint::Segment, wire::SEGMENT_PATH, req.pair_id, &body)?;
        resp.proposals
            .into_iter()
            .map(|p| {
                let bytes = wire::decode_b64(&p.mask_png)
                    .map_err(|e| malformed(Endpoint::Segment, req.pair_id, e))?;
                let mask = mask::decode_mask_png(&bytes)
                    .map_err(|e| malformed(Endpoint::Segment, req.pair_id, e))?;
                check_dims(
                    Endpoint::Segment,
                    req.pair_id,
                    req.image.dimensions(),
                    mask.dims(),
                )?;
                if p.label != req.label {
                    return Err(malformed(
                        Endpoint::Segment,
                        req.pair_id,
                        format!(
                            "proposal label {:?} does not match query {:?}",
                            p.label, req.label
                        ),
                    ));
                }
                Ok(ObjectProposal {
                    label: p.label,
                    mask,
                    confidence: p.confidence,
                })
            })
            .collect()
    }
}
