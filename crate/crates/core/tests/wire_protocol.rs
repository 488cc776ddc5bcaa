//! Client behavior against scripted HTTP servers, driven by the shared
//! golden fixtures in `protocol/fixtures`.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use audiopedia::adapters::conformance::{
    check_expectation, check_response, drive_client, fixture_endpoint, load_fixtures, LocalStub,
};
use audiopedia::adapters::{AdapterEndpoint, AdapterError, AudioPayload, Role, WireClient};
use audiopedia::kb::load_kb;
use audiopedia::pipeline::MockOracleAnswerer;
use audiopedia::synth::Equivalence;

#[derive(Debug, Clone, PartialEq)]
struct Seen {
    method: String,
    path: String,
    body: Vec<u8>,
}

type Handler = dyn Fn(usize, &Seen) -> (u16, String, Duration) + Send + Sync;

struct Stub {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
    peak: Arc<AtomicUsize>,
}

/// Serves each request on its own thread; `handler` gets the 0-based
/// request number.
fn serve(handler: Arc<Handler>) -> Stub {
    let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let peak = Arc::new(AtomicUsize::new(0));
    let active = Arc::new(AtomicUsize::new(0));
    let (seen2, peak2) = (seen.clone(), peak.clone());
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let mut body = Vec::new();
            req.as_reader().read_to_end(&mut body).unwrap();
            let s = Seen {
                method: req.method().as_str().to_string(),
                path: req.url().to_string(),
                body,
            };
            let n = {
                let mut v = seen2.lock().unwrap();
                v.push(s.clone());
                v.len() - 1
            };
            let (handler, active, peak) = (handler.clone(), active.clone(), peak2.clone());
            std::thread::spawn(move || {
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let (status, text, delay) = handler(n, &s);
                std::thread::sleep(delay);
                active.fetch_sub(1, Ordering::SeqCst);
                let header =
                    tiny_http::Header::from_bytes("content-type", "application/json").unwrap();
                let _ = req.respond(
                    tiny_http::Response::from_string(text)
                        .with_status_code(status)
                        .with_header(header),
                );
            });
        }
    });
    Stub { url, seen, peak }
}

fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixtures() -> Vec<audiopedia::adapters::conformance::Fixture> {
    let f = load_fixtures(repo_root().join("protocol/fixtures")).unwrap();
    assert!(f.len() >= 10);
    f
}

fn local_stub() -> LocalStub {
    let (kb, _) = load_kb(repo_root().join("fixtures/restaurants.tsv")).unwrap();
    LocalStub::new(Some(Box::new(MockOracleAnswerer::from_kb(
        &kb,
        Equivalence::ExactObject,
    ))))
}

#[test]
fn golden_fixtures_against_scripted_server() {
    for f in fixtures() {
        let response = serde_json::to_string(&f.response.body).unwrap();
        let status = f.response.status;
        let stub = serve(Arc::new(move |_, _| {
            (status, response.clone(), Duration::ZERO)
        }));
        let client = WireClient::new(fixture_endpoint(&f, &stub.url)).unwrap();
        let got = drive_client(&f, &client);
        check_expectation(&f, &got).unwrap();
        let seen = stub.seen.lock().unwrap().clone();
        assert!(!seen.is_empty(), "{}", f.name);
        for s in &seen {
            assert_eq!(s.method, f.method, "{}", f.name);
            assert_eq!(s.path, f.path, "{}", f.name);
            if let Some(body) = &f.request_body {
                assert_eq!(
                    String::from_utf8_lossy(&s.body),
                    *body,
                    "{}: request bytes",
                    f.name
                );
            }
        }
    }
}

#[test]
fn local_backends_reproduce_stub_fixtures() {
    let stub = local_stub();
    let mut checked = 0;
    for f in fixtures().into_iter().filter(|f| f.stub) {
        let body = f.request_body.clone().unwrap_or_default();
        let (status, text) = stub.handle(&f.method, &f.path, body.as_bytes());
        check_response(&f, status, &text).unwrap();
        checked += 1;
    }
    assert!(checked >= 8);
}

#[test]
fn misbehaving_responses_fail_stub_fixtures() {
    let f = fixtures()
        .into_iter()
        .find(|f| f.name == "encode_repeat")
        .unwrap();
    assert!(check_response(&f, 200, r#"{"vectors":[[1.0],[1.0,0.0]],"dim":2}"#).is_err());
    let f = fixtures()
        .into_iter()
        .find(|f| f.name == "asr_ref_echo")
        .unwrap();
    assert!(check_response(&f, 200, r#"{"transcript":"KFC serves fried chicken."}"#).is_err());
}

#[test]
fn end_to_end_through_local_stub_over_http() {
    let stub = Arc::new(local_stub());
    let server = serve(Arc::new(move |_, s: &Seen| {
        let (status, body) = stub.handle(&s.method, &s.path, &s.body);
        (status, body, Duration::ZERO)
    }));
    for f in fixtures().into_iter().filter(|f| f.stub) {
        let client = WireClient::new(fixture_endpoint(&f, &server.url)).unwrap();
        check_expectation(&f, &drive_client(&f, &client)).unwrap();
    }
}

fn endpoint(role: Role, url: &str, attempts: u32) -> AdapterEndpoint {
    let mut ep = AdapterEndpoint::new(role, url);
    ep.retry.max_attempts = attempts;
    ep.retry.backoff_base_ms = 1;
    ep.timeout_ms = 2_000;
    ep
}

fn flaky(failures: usize, status: u16) -> Arc<Handler> {
    Arc::new(move |n, _| {
        if n < failures {
            (status, r#"{"error":"busy"}"#.into(), Duration::ZERO)
        } else {
            (200, r#"{"text":"hello"}"#.into(), Duration::ZERO)
        }
    })
}

#[test]
fn two_transient_failures_then_success() {
    let stub = serve(flaky(2, 503));
    let client = WireClient::new(endpoint(Role::Asr, &stub.url, 3)).unwrap();
    assert_eq!(
        client.asr_call(&AudioPayload::Ref("a.wav".into())).unwrap(),
        "hello"
    );
    assert_eq!(stub.seen.lock().unwrap().len(), 3);
}

#[test]
fn retries_are_capped() {
    let stub = serve(flaky(usize::MAX, 503));
    let client = WireClient::new(endpoint(Role::Asr, &stub.url, 2)).unwrap();
    let err = client
        .asr_call(&AudioPayload::Ref("a.wav".into()))
        .unwrap_err();
    assert!(
        matches!(err, AdapterError::ExhaustedRetries { attempts: 2, .. }),
        "{err}"
    );
    assert_eq!(stub.seen.lock().unwrap().len(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let stub = serve(flaky(usize::MAX, 400));
    let client = WireClient::new(endpoint(Role::Tts, &stub.url, 3)).unwrap();
    assert_eq!(
        client.tts_call("x"),
        Err(AdapterError::Protocol {
            status: 400,
            body: "busy".into()
        })
    );
    assert_eq!(stub.seen.lock().unwrap().len(), 1);
}

#[test]
fn slow_backend_times_out() {
    let stub = serve(Arc::new(|_, _| {
        (200, r#"{"text":"late"}"#.into(), Duration::from_millis(800))
    }));
    let mut ep = endpoint(Role::Answer, &stub.url, 1);
    ep.timeout_ms = 150;
    let client = WireClient::new(ep).unwrap();
    let err = client.answer_call("p", &[]).unwrap_err();
    assert_eq!(err.kind(), "timeout", "{err}");
}

#[test]
fn identical_inputs_give_identical_bytes() {
    let stub = serve(Arc::new(|_, _| {
        (200, r#"{"text":"ok"}"#.into(), Duration::ZERO)
    }));
    let client = WireClient::new(endpoint(Role::Answer, &stub.url, 1)).unwrap();
    let refs = vec!["z.wav".to_string(), "a.wav".to_string()];
    client.answer_call("Question: x\n", &refs).unwrap();
    client.answer_call("Question: x\n", &refs).unwrap();
    let seen = stub.seen.lock().unwrap();
    assert_eq!(seen[0].body, seen[1].body);
    assert_eq!(
        String::from_utf8_lossy(&seen[0].body),
        r#"{"prompt":"Question: x\n","audio_refs":["z.wav","a.wav"]}"#
    );
}

#[test]
fn in_flight_cap_is_enforced() {
    let stub = serve(Arc::new(|_, _| {
        (
            200,
            r#"{"audio_ref":"r"}"#.into(),
            Duration::from_millis(60),
        )
    }));
    let mut ep = endpoint(Role::Tts, &stub.url, 1);
    ep.max_in_flight = 2;
    let client = Arc::new(WireClient::new(ep).unwrap());
    let threads: Vec<_> = (0..8)
        .map(|i| {
            let c = client.clone();
            std::thread::spawn(move || c.tts_call(&format!("t{i}")).unwrap())
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    assert_eq!(stub.seen.lock().unwrap().len(), 8);
    assert!(stub.peak.load(Ordering::SeqCst) <= 2);
}

#[test]
fn unreachable_endpoint_is_transport_error() {
    let client = WireClient::new(endpoint(Role::Encode, "http://127.0.0.1:9", 1)).unwrap();
    let err = client.encode_call(&["a"]).unwrap_err();
    assert!(err.is_transient(), "{err}");
}
