//! Blocking HTTP client for the `/v1` protocol.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::de::DeserializeOwned;

use super::wire::{
    to_body, AnswerRequest, AsrRequest, EncodeRequest, EncodeResponse, ErrorBody, Health,
    TextResponse, TtsRequest, TtsResponse,
};
use super::{
    AdapterEndpoint, AdapterError, Answerer, AudioPayload, Role, SpeechSynth, Transcriber,
};
use crate::error::Result as CrateResult;
use crate::text::{TextEncoder, Vector};

/// Counting gate capping concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Client bound to one role's endpoint. Safe to share across threads.
#[derive(Debug)]
pub struct WireClient {
    endpoint: AdapterEndpoint,
    agent: ureq::Agent,
    gate: InFlight,
}

impl WireClient {
    pub fn new(endpoint: AdapterEndpoint) -> CrateResult<Self> {
        endpoint.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(WireClient {
            gate: InFlight::new(endpoint.max_in_flight),
            endpoint,
            agent,
        })
    }

    pub fn endpoint(&self) -> &AdapterEndpoint {
        &self.endpoint
    }

    fn expect_role(&self, role: Role) -> Result<(), AdapterError> {
        if self.endpoint.role != role {
            return Err(AdapterError::WrongRole {
                expected: role,
                actual: self.endpoint.role,
            });
        }
        Ok(())
    }

    fn attempt(&self, url: &str, body: &[u8]) -> Result<String, AdapterError> {
        let _permit = self.gate.acquire();
        let result = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(AdapterError::Timeout {
                    url: url.to_string(),
                    timeout_ms: self.endpoint.timeout_ms,
                })
            }
            Err(e) => return Err(AdapterError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => {
                return Err(AdapterError::Timeout {
                    url: url.to_string(),
                    timeout_ms: self.endpoint.timeout_ms,
                })
            }
            Err(e) => return Err(AdapterError::Transport(e.to_string())),
        };
        if !(200..300).contains(&status) {
            let body = serde_json::from_str::<ErrorBody>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            return Err(AdapterError::Protocol { status, body });
        }
        Ok(text)
    }

    /// POSTs `body` with retries on transient failures; at most
    /// `max_attempts` requests are made.
    pub fn post_raw(&self, body: &[u8]) -> Result<String, AdapterError> {
        let url = self.endpoint.url();
        let attempts = self.endpoint.retry.max_attempts.max(1);
        let mut n = 0;
        loop {
            n += 1;
            match self.attempt(&url, body) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_transient() && n < attempts => {
                    std::thread::sleep(Duration::from_millis(self.endpoint.retry.backoff_ms(n)));
                }
                Err(e) if e.is_transient() && attempts > 1 => {
                    return Err(AdapterError::ExhaustedRetries {
                        attempts: n,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn post<T: DeserializeOwned>(&self, body: &[u8]) -> Result<T, AdapterError> {
        let text = self.post_raw(body)?;
        serde_json::from_str(&text).map_err(|e| AdapterError::MalformedResponse(e.to_string()))
    }

    pub fn asr_call(&self, audio: &AudioPayload) -> Result<String, AdapterError> {
        self.expect_role(Role::Asr)?;
        let request = match audio {
            AudioPayload::Ref(r) => AsrRequest {
                audio_ref: Some(r.clone()),
                audio_b64: None,
            },
            AudioPayload::Inline(bytes) => AsrRequest {
                audio_ref: None,
                audio_b64: Some(base64::engine::general_purpose::STANDARD.encode(bytes)),
            },
        };
        Ok(self.post::<TextResponse>(&to_body(&request))?.text)
    }

    pub fn tts_call(&self, text: &str) -> Result<String, AdapterError> {
        self.expect_role(Role::Tts)?;
        let request = TtsRequest {
            text: text.to_string(),
        };
        Ok(self.post::<TtsResponse>(&to_body(&request))?.audio_ref)
    }

    pub fn encode_call(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, AdapterError> {
        self.expect_role(Role::Encode)?;
        if texts.is_empty() {
            return Err(AdapterError::InvalidRequest(
                "encode needs at least one text".into(),
            ));
        }
        let request = EncodeRequest {
            texts: texts.iter().map(|t| t.to_string()).collect(),
        };
        let response: EncodeResponse = self.post(&to_body(&request))?;
        check_encode_response(texts.len(), response)
    }

    pub fn answer_call(&self, prompt: &str, audio_refs: &[String]) -> Result<String, AdapterError> {
        self.expect_role(Role::Answer)?;
        let request = AnswerRequest {
            prompt: prompt.to_string(),
            audio_refs: audio_refs.to_vec(),
        };
        Ok(self.post::<TextResponse>(&to_body(&request))?.text)
    }

    /// `GET /v1/health`, single attempt.
    pub fn health(&self) -> Result<Health, AdapterError> {
        let url = format!("{}/v1/health", self.endpoint.base_url.trim_end_matches('/'));
        let mut response = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| AdapterError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| AdapterError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(AdapterError::Protocol { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| AdapterError::MalformedResponse(e.to_string()))
    }
}

/// Checks count and dimensionality of an encode response.
pub fn check_encode_response(
    expected_count: usize,
    response: EncodeResponse,
) -> Result<Vec<Vec<f64>>, AdapterError> {
    if response.vectors.len() != expected_count {
        return Err(AdapterError::MalformedResponse(format!(
            "{} vectors for {} texts",
            response.vectors.len(),
            expected_count
        )));
    }
    if let Some(v) = response.vectors.iter().find(|v| v.len() != response.dim) {
        return Err(AdapterError::DimensionMismatch {
            expected: response.dim,
            actual: v.len(),
        });
    }
    if response.vectors.iter().flatten().any(|w| !w.is_finite()) {
        return Err(AdapterError::MalformedResponse(
            "non-finite vector weight".into(),
        ));
    }
    Ok(response.vectors)
}

impl Transcriber for WireClient {
    fn transcribe(&self, audio: &AudioPayload) -> Result<String, AdapterError> {
        self.asr_call(audio)
    }
}

impl SpeechSynth for WireClient {
    fn synthesize(&self, text: &str) -> Result<String, AdapterError> {
        self.tts_call(text)
    }
}

impl Answerer for WireClient {
    fn answer(&self, prompt: &str, audio_refs: &[String]) -> Result<String, AdapterError> {
        self.answer_call(prompt, audio_refs)
    }
}

impl TextEncoder for WireClient {
    fn encode_texts(&self, texts: &[&str]) -> CrateResult<Vec<Vector>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        Ok(self
            .encode_call(texts)?
            .iter()
            .map(|v| Vector::from_dense(v))
            .collect())
    }
}
