//! Golden request/response fixtures for the `/v1` protocol and an
//! in-process responder built from the local backends.
//!
//! A fixture pins the exact request bytes a client sends, the response a
//! server returns, and what the client must make of it. Fixtures marked
//! `stub` describe deterministic stub behavior any conforming stub server
//! reproduces; the rest inject server misbehavior for client tests.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::local::decode_inline;
use super::wire::{AnswerRequest, AsrRequest, EncodeRequest, ErrorBody, Health, TtsRequest};
use super::{
    AdapterEndpoint, AdapterError, Answerer, AudioPayload, BagOfCharsEncoder, Role, SentinelTts,
    SpeechSynth, TextProxyAsr, Transcriber, WireClient,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureResponse {
    pub status: u16,
    pub body: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedError {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expect {
    Ok(Value),
    Error(ExpectedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    /// `None` for the health endpoint.
    pub role: Option<Role>,
    pub method: String,
    pub path: String,
    #[serde(default)]
    pub stub: bool,
    /// Client attempts to configure; defaults to the endpoint default.
    #[serde(default)]
    pub max_attempts: Option<u32>,
    #[serde(default)]
    pub request_body: Option<String>,
    pub response: FixtureResponse,
    pub expect: Expect,
}

/// All `*.json` fixtures in `dir`, sorted by file name.
pub fn load_fixtures(dir: impl AsRef<Path>) -> Result<Vec<Fixture>> {
    let dir = dir.as_ref();
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|source| Error::Json {
                path: p.clone(),
                line: 0,
                source,
            })
        })
        .collect()
}

fn error_body(status: u16, msg: impl Into<String>) -> (u16, String) {
    let body = ErrorBody { error: msg.into() };
    (
        status,
        serde_json::to_string(&body).expect("error body serializes"),
    )
}

fn status_of(e: &AdapterError) -> u16 {
    match e {
        AdapterError::Protocol { status, .. } => *status,
        AdapterError::InvalidRequest(_) => 400,
        AdapterError::TranscriptionFailed { .. } => 422,
        _ => 500,
    }
}

fn reply<T: Serialize>(r: std::result::Result<T, AdapterError>) -> (u16, String) {
    match r {
        Ok(v) => (200, serde_json::to_string(&v).expect("response serializes")),
        Err(AdapterError::Protocol { status, body }) => error_body(status, body),
        Err(e) => error_body(status_of(&e), e.to_string()),
    }
}

/// Stub server logic over the local deterministic backends: echo ASR,
/// content-hash TTS, bag-of-characters encoder and an optional answerer.
pub struct LocalStub {
    pub asr: TextProxyAsr,
    pub tts: SentinelTts,
    pub encoder: BagOfCharsEncoder,
    pub answerer: Option<Box<dyn Answerer>>,
}

impl LocalStub {
    pub fn new(answerer: Option<Box<dyn Answerer>>) -> Self {
        LocalStub {
            asr: TextProxyAsr::clean(),
            tts: SentinelTts::default(),
            encoder: BagOfCharsEncoder,
            answerer,
        }
    }

    pub fn roles(&self) -> Vec<Role> {
        Role::ALL
            .into_iter()
            .filter(|r| *r != Role::Answer || self.answerer.is_some())
            .collect()
    }

    /// Status and body for one request.
    pub fn handle(&self, method: &str, path: &str, body: &[u8]) -> (u16, String) {
        if method == "GET" && path == "/v1/health" {
            return reply::<Health>(Ok(Health {
                status: "ok".into(),
                roles: self
                    .roles()
                    .iter()
                    .map(|r| r.as_str().to_string())
                    .collect(),
            }));
        }
        let Some(role) = self.roles().into_iter().find(|r| r.path() == path) else {
            return error_body(404, format!("no route for {path}"));
        };
        if method != "POST" {
            return error_body(405, format!("{path} accepts POST"));
        }
        fn parse<'a, T: Deserialize<'a>>(body: &'a [u8]) -> std::result::Result<T, AdapterError> {
            serde_json::from_slice(body).map_err(|e| AdapterError::InvalidRequest(e.to_string()))
        }
        match role {
            Role::Asr => reply(parse::<AsrRequest>(body).and_then(|r| {
                let payload = match (r.audio_ref, r.audio_b64) {
                    (Some(r), None) => AudioPayload::Ref(r),
                    (None, Some(b)) => AudioPayload::Inline(decode_inline(&b)?),
                    _ => {
                        return Err(AdapterError::InvalidRequest(
                            "exactly one of audio_ref and audio_b64 is required".into(),
                        ))
                    }
                };
                Ok(json!({ "text": self.asr.transcribe(&payload)? }))
            })),
            Role::Tts => reply(
                parse::<TtsRequest>(body)
                    .and_then(|r| Ok(json!({ "audio_ref": self.tts.synthesize(&r.text)? }))),
            ),
            Role::Encode => reply(parse::<EncodeRequest>(body).and_then(|r| {
                if r.texts.is_empty() {
                    return Err(AdapterError::InvalidRequest(
                        "texts must be non-empty".into(),
                    ));
                }
                Ok(self.encoder.respond(&r.texts))
            })),
            Role::Answer => reply(parse::<AnswerRequest>(body).and_then(|r| {
                let answerer = self.answerer.as_ref().expect("role advertised");
                Ok(json!({ "text": answerer.answer(&r.prompt, &r.audio_refs)? }))
            })),
        }
    }
}

/// Endpoint settings a fixture asks for, pointed at `base_url`.
pub fn fixture_endpoint(fixture: &Fixture, base_url: &str) -> AdapterEndpoint {
    let mut ep = AdapterEndpoint::new(fixture.role.unwrap_or(Role::Asr), base_url);
    ep.timeout_ms = 5_000;
    ep.retry.backoff_base_ms = 1;
    if let Some(a) = fixture.max_attempts {
        ep.retry.max_attempts = a;
    }
    ep
}

/// Replays the fixture's request through the typed client call and returns
/// the client-visible result as JSON.
pub fn drive_client(
    fixture: &Fixture,
    client: &WireClient,
) -> std::result::Result<Value, AdapterError> {
    let body = fixture.request_body.as_deref().unwrap_or("");
    let bad = |e: serde_json::Error| AdapterError::InvalidRequest(format!("{}: {e}", fixture.name));
    match fixture.role {
        None => Ok(serde_json::to_value(client.health()?).expect("health serializes")),
        Some(Role::Asr) => {
            let r: AsrRequest = serde_json::from_str(body).map_err(bad)?;
            let payload = match (r.audio_ref, r.audio_b64) {
                (Some(r), _) => AudioPayload::Ref(r),
                (None, Some(b)) => AudioPayload::Inline(decode_inline(&b)?),
                (None, None) => {
                    return Err(AdapterError::InvalidRequest("empty asr request".into()))
                }
            };
            Ok(Value::String(client.asr_call(&payload)?))
        }
        Some(Role::Tts) => {
            let r: TtsRequest = serde_json::from_str(body).map_err(bad)?;
            Ok(Value::String(client.tts_call(&r.text)?))
        }
        Some(Role::Encode) => {
            let r: EncodeRequest = serde_json::from_str(body).map_err(bad)?;
            let texts: Vec<&str> = r.texts.iter().map(String::as_str).collect();
            Ok(json!(client.encode_call(&texts)?))
        }
        Some(Role::Answer) => {
            let r: AnswerRequest = serde_json::from_str(body).map_err(bad)?;
            Ok(Value::String(client.answer_call(&r.prompt, &r.audio_refs)?))
        }
    }
}

/// Whether a client result satisfies the fixture's expectation.
pub fn check_expectation(
    fixture: &Fixture,
    got: &std::result::Result<Value, AdapterError>,
) -> std::result::Result<(), String> {
    match (&fixture.expect, got) {
        (Expect::Ok(want), Ok(v)) if want == v => Ok(()),
        (Expect::Error(want), Err(e)) => {
            let e = match e {
                AdapterError::ExhaustedRetries { last, .. } if want.kind != "exhausted_retries" => {
                    last
                }
                e => e,
            };
            let status = match e {
                AdapterError::Protocol { status, .. } => Some(*status),
                _ => None,
            };
            if e.kind() == want.kind && (want.status.is_none() || want.status == status) {
                Ok(())
            } else {
                Err(format!(
                    "{}: expected {} error, got {e}",
                    fixture.name, want.kind
                ))
            }
        }
        (want, got) => Err(format!("{}: expected {want:?}, got {got:?}", fixture.name)),
    }
}

/// Whether `(status, body)` matches the fixture response; bodies are
/// compared as JSON values.
pub fn check_response(
    fixture: &Fixture,
    status: u16,
    body: &str,
) -> std::result::Result<(), String> {
    let parsed: Value = serde_json::from_str(body)
        .map_err(|e| format!("{}: response is not JSON: {e}", fixture.name))?;
    if status != fixture.response.status || parsed != fixture.response.body {
        return Err(format!(
            "{}: expected {} {}, got {status} {parsed}",
            fixture.name, fixture.response.status, fixture.response.body
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_routes() {
        let stub = LocalStub::new(None);
        assert_eq!(stub.roles(), vec![Role::Asr, Role::Tts, Role::Encode]);
        assert_eq!(stub.handle("POST", "/v1/answer", b"{}").0, 404);
        assert_eq!(stub.handle("GET", "/v1/asr", b"").0, 405);
        assert_eq!(stub.handle("POST", "/v1/encode", b"{\"texts\":[]}").0, 400);
        assert_eq!(stub.handle("POST", "/v1/asr", b"{}").0, 400);
        assert_eq!(
            stub.handle("POST", "/v1/asr", b"{\"audio_ref\":\"x.wav\"}")
                .0,
            422
        );
    }

    #[test]
    fn expectations() {
        let f = Fixture {
            name: "f".into(),
            role: Some(Role::Asr),
            method: "POST".into(),
            path: "/v1/asr".into(),
            stub: false,
            max_attempts: None,
            request_body: None,
            response: FixtureResponse {
                status: 503,
                body: json!({"error": "busy"}),
            },
            expect: Expect::Error(ExpectedError {
                kind: "protocol".into(),
                status: Some(503),
            }),
        };
        let wrapped = AdapterError::ExhaustedRetries {
            attempts: 3,
            last: Box::new(AdapterError::Protocol {
                status: 503,
                body: "busy".into(),
            }),
        };
        assert!(check_expectation(&f, &Err(wrapped)).is_ok());
        assert!(check_expectation(&f, &Ok(json!("x"))).is_err());
        assert!(check_response(&f, 503, "{\"error\":\"busy\"}").is_ok());
        assert!(check_response(&f, 500, "{\"error\":\"busy\"}").is_err());
    }
}
