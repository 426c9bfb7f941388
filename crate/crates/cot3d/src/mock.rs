//! Bundled mock servers for the annotator and judge wire protocols, used
//! by tests and runnable offline. Each binds 127.0.0.1 on an ephemeral
//! port and serves until dropped.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::json;

use crate::cotformat::CoTAnnotation;
use crate::dataset::annotator::AnnotatorRequest;

/// Failure-injection modes shared by both mock servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockBehavior {
    /// Always answer normally.
    Ok,
    /// Return 503 for the first n requests, then answer normally.
    FailFirst(usize),
    /// Annotator only: answer with an empty functional_inference stage.
    EmptyStage2,
    /// Judge only: answer with an out-of-range OBJ score.
    OutOfRangeScore,
    /// Judge only: answer with OBJ null (not applicable).
    NullObj,
}

struct MockServer {
    server: Arc<tiny_http::Server>,
    url: String,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    fn start<F>(handler: F) -> Self
    where
        F: Fn(&str, String) -> (u16, String) + Send + Sync + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock server"));
        let port = match server.server_addr() {
            tiny_http::ListenAddr::IP(addr) => addr.port(),
            _ => unreachable!("mock server binds a TCP port"),
        };
        let url = format!("http://127.0.0.1:{port}");
        let srv = Arc::clone(&server);
        let handle = std::thread::spawn(move || {
            for mut request in srv.incoming_requests() {
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                let (status, payload) = handler(request.url(), body);
                let response = tiny_http::Response::from_string(payload)
                    .with_status_code(status)
                    .with_header(
                        tiny_http::Header::from_bytes(
                            &b"Content-Type"[..],
                            &b"application/json"[..],
                        )
                        .unwrap(),
                    );
                let _ = request.respond(response);
            }
        });
        Self {
            server,
            url,
            handle: Some(handle),
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

/// Mock of the POST /annotate endpoint: returns template annotations
/// derived from the request's family and part metadata.
pub struct MockAnnotator {
    inner: MockServer,
}

impl MockAnnotator {
    pub fn start(behavior: MockBehavior) -> Self {
        let served = AtomicUsize::new(0);
        let inner = MockServer::start(move |url, body| {
            if url != "/annotate" {
                return (404, json!({"error": "unknown path"}).to_string());
            }
            if let MockBehavior::FailFirst(n) = behavior {
                if served.fetch_add(1, Ordering::SeqCst) < n {
                    return (503, json!({"error": "injected failure"}).to_string());
                }
            }
            let req: AnnotatorRequest = match serde_json::from_str(&body) {
                Ok(r) => r,
                Err(e) => return (400, json!({"error": e.to_string()}).to_string()),
            };
            let mut ann = template_annotation(&req);
            if behavior == MockBehavior::EmptyStage2 {
                ann.functional_inference.clear();
            }
            let payload = json!({
                "annotation": ann,
                "model": "mock-annotator-1",
                "latency_ms": 0.1,
            });
            (200, payload.to_string())
        });
        Self { inner }
    }

    pub fn url(&self) -> &str {
        &self.inner.url
    }
}

fn template_annotation(req: &AnnotatorRequest) -> CoTAnnotation {
    let family = req.family.name();
    let labels: Vec<&str> = req.parts.iter().map(|p| p.label.as_str()).collect();
    let object_recognition = format!(
        "This object is a {family} with a {}.",
        if labels.is_empty() { "single body".to_string() } else { labels.join(" and a ") }
    );
    let mut sentences = Vec::new();
    for part in &req.parts {
        for aff in &part.affordances {
            sentences.push(format!("The {} {}.", part.label, aff.function_phrase()));
        }
    }
    if sentences.is_empty() {
        sentences.push(format!("The {family} serves its typical function."));
    }
    CoTAnnotation {
        object_recognition,
        functional_inference: sentences.join(" "),
        causal_reasoning: format!(
            "Because of how its parts are arranged, the {family} supports these interactions."
        ),
        conclusion: format!("A {family}."),
    }
}

/// Mock of the POST /judge endpoint: scores the submitted output against
/// its gold with the deterministic rubric, or injects protocol faults.
pub struct MockJudge {
    inner: MockServer,
}

impl MockJudge {
    pub fn start(behavior: MockBehavior) -> Self {
        let served = AtomicUsize::new(0);
        let inner = MockServer::start(move |url, body| {
            if url != "/judge" {
                return (404, json!({"error": "unknown path"}).to_string());
            }
            if let MockBehavior::FailFirst(n) = behavior {
                if served.fetch_add(1, Ordering::SeqCst) < n {
                    return (503, json!({"error": "injected failure"}).to_string());
                }
            }
            let parsed: serde_json::Value = match serde_json::from_str(&body) {
                Ok(v) => v,
                Err(e) => return (400, json!({"error": e.to_string()}).to_string()),
            };
            let text = parsed["output"].as_str().unwrap_or_default();
            let gold: CoTAnnotation = match serde_json::from_value(parsed["gold"].clone()) {
                Ok(g) => g,
                Err(e) => return (400, json!({"error": e.to_string()}).to_string()),
            };
            let out = crate::evalkit::GeneratedOutput::from_text(text);
            let scores = crate::evalkit::score_sample(&out, &gold);
            let mut payload = json!({
                "obj": scores.obj,
                "func": scores.func,
                "inter": scores.inter,
                "tru": scores.tru,
                "comp": scores.comp,
            });
            match behavior {
                MockBehavior::OutOfRangeScore => payload["obj"] = json!(7.0),
                MockBehavior::NullObj => payload["obj"] = json!(null),
                _ => {}
            }
            (200, payload.to_string())
        });
        Self { inner }
    }

    pub fn url(&self) -> &str {
        &self.inner.url
    }
}
