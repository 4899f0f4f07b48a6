//! HTTP client for an external captioning service.
//!
//! One POST per [`CaptionRequest`] with the request serialized as JSON; the
//! service answers `{"captions": [...]}`.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CaptionRequest, Captioner};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub captions: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RemoteCaptioner {
    endpoint: String,
    retries: usize,
    agent: ureq::Agent,
}

impl RemoteCaptioner {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, retries: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        RemoteCaptioner {
            endpoint: endpoint.into(),
            retries,
            agent,
        }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn round_trip(&self, request: &CaptionRequest) -> Result<Vec<String>> {
        let mut response = self
            .agent
            .post(&self.endpoint)
            .send_json(request)
            .map_err(|e| Error::CaptionerUnavailable(format!("{}: {e}", self.endpoint)))?;
        let body: CaptionResponse = response.body_mut().read_json().map_err(|e| {
            Error::CaptionerUnavailable(format!("{}: malformed response: {e}", self.endpoint))
        })?;
        Ok(body.captions)
    }
}

impl Captioner for RemoteCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<Vec<String>> {
        request.validate()?;
        let mut last = None;
        for _ in 0..=self.retries {
            match self.round_trip(request) {
                Ok(c) => return Ok(c),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}
