mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use common::{form_value, MiniServer, Reply};
use scholqa_core::context::{predict, stub_answer, QaBackend, QaError, QaRequest};
use scholqa_core::sparql::{EndpointConfig, Gateway, GatewayError, HttpTransport, QueryCache, Transport};

const RESULTS: &str = r#"{"head":{"vars":["name"]},"results":{"bindings":[{"name":{"type":"literal","value":"Jane Roe"}}]}}"#;
const QUERY: &str = "SELECT ?name WHERE { <https://dblp.org/pid/11/1111> ?p ?name }";

fn endpoint(base: &str) -> EndpointConfig {
    EndpointConfig {
        timeout_secs: 5.0,
        ..EndpointConfig::new("dblp", &format!("{base}/sparql"))
    }
}

#[test]
fn sparql_request_is_a_form_post_asking_for_json_results() {
    let server = MiniServer::start(|_| Reply::new(200, "application/sparql-results+json", RESULTS));
    let reply = HttpTransport::new().post_query(&endpoint(&server.base), QUERY).unwrap();
    assert_eq!(reply.status, 200);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    let r = &reqs[0];
    assert_eq!(r.method, "POST");
    assert_eq!(r.path, "/sparql");
    assert_eq!(r.header("accept"), Some("application/sparql-results+json"));
    assert!(r.header("content-type").unwrap().starts_with("application/x-www-form-urlencoded"));
    assert_eq!(form_value(&r.body, "query").as_deref(), Some(QUERY));
}

#[test]
fn gateway_retries_server_errors_over_http() {
    let hits = Arc::new(AtomicUsize::new(0));
    let h = hits.clone();
    let server = MiniServer::start(move |_| match h.fetch_add(1, Ordering::SeqCst) {
        0 => Reply::new(503, "text/plain", "busy"),
        1 => Reply::new(429, "text/plain", "slow down"),
        _ => Reply::new(200, "application/sparql-results+json", RESULTS),
    });
    let gw = Gateway::new(Arc::new(HttpTransport::new()), None).with_backoff_base(Duration::from_millis(1));
    let rs = gw.execute(&endpoint(&server.base), QUERY).unwrap();
    assert_eq!(rs.value(0, "name"), Some("Jane Roe"));
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn gateway_maps_400_to_rejection_and_caches_success() {
    let server = MiniServer::start(|r| {
        if form_value(&r.body, "query").unwrap().contains("bad") {
            Reply::new(400, "text/plain", "syntax error at line 1")
        } else {
            Reply::new(200, "application/sparql-results+json", RESULTS)
        }
    });
    let dir = tempfile::tempdir().unwrap();
    let gw = Gateway::new(Arc::new(HttpTransport::new()), Some(QueryCache::new(dir.path())));
    let ep = endpoint(&server.base);
    let err = gw.execute(&ep, "SELECT ?bad WHERE { ?s ?p ?bad }").unwrap_err();
    assert!(matches!(err, GatewayError::QueryRejected(ref m) if m.contains("syntax error")));
    gw.execute(&ep, QUERY).unwrap();
    gw.execute(&ep, QUERY).unwrap();
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn unreachable_endpoint_is_a_network_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let ep = EndpointConfig {
        max_retries: 1,
        timeout_secs: 2.0,
        ..EndpointConfig::new("dblp", &format!("http://127.0.0.1:{port}/sparql"))
    };
    let gw = Gateway::new(Arc::new(HttpTransport::new()), None).with_backoff_base(Duration::from_millis(1));
    assert!(matches!(gw.execute(&ep, QUERY), Err(GatewayError::Network { attempts: 2, .. })));
}

fn qa_request() -> QaRequest {
    QaRequest {
        question: "What is the h-index of Jane Roe?".into(),
        context: "Jane Roe has an h-index of 9.".into(),
    }
}

#[test]
fn remote_qa_posts_json_to_answer() {
    let server = MiniServer::start(|r| {
        let req: QaRequest = serde_json::from_slice(&r.body).unwrap();
        Reply::new(200, "application/json", serde_json::to_vec(&stub_answer(&req)).unwrap())
    });
    let backend = QaBackend::remote(&format!("{}/", server.base), Duration::from_secs(5));
    let got = predict(&backend, &qa_request()).unwrap();
    assert_eq!(got, stub_answer(&qa_request()));
    assert_eq!(got.answer, "9");

    let reqs = server.requests();
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/answer");
    assert_eq!(reqs[0].header("content-type"), Some("application/json"));
    let sent: serde_json::Value = serde_json::from_slice(&reqs[0].body).unwrap();
    assert_eq!(sent, serde_json::json!({"question": "What is the h-index of Jane Roe?", "context": "Jane Roe has an h-index of 9."}));
}

#[test]
fn remote_qa_error_mapping() {
    let server = MiniServer::start(|r| match r.path.as_str() {
        "/a/answer" => Reply::new(503, "application/json", r#"{"error":"loading"}"#),
        "/b/answer" => Reply::new(400, "application/json", r#"{"error":"empty context"}"#),
        "/c/answer" => Reply::new(200, "application/json", r#"{"answer":"10","score":0.5,"start":27,"end":28}"#),
        _ => Reply::new(200, "application/json", "not json"),
    });
    let call = |p: &str| predict(&QaBackend::remote(&format!("{}/{p}", server.base), Duration::from_secs(5)), &qa_request());
    assert!(matches!(call("a"), Err(QaError::BackendUnavailable(_))));
    assert!(matches!(call("b"), Err(QaError::InvalidResponse(_))));
    assert!(matches!(call("c"), Err(QaError::InvalidResponse(ref m)) if m.contains("not context")));
    assert!(matches!(call("d"), Err(QaError::InvalidResponse(_))));
}

#[test]
fn remote_qa_never_sends_empty_context() {
    let server = MiniServer::start(|_| Reply::new(500, "text/plain", ""));
    let backend = QaBackend::remote(&server.base, Duration::from_secs(5));
    let req = QaRequest { question: "q".into(), context: "  ".into() };
    assert_eq!(predict(&backend, &req), Err(QaError::EmptyContext));
    assert!(server.requests().is_empty());
}

#[test]
fn remote_qa_unreachable_is_unavailable() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = QaBackend::remote(&format!("http://127.0.0.1:{port}"), Duration::from_secs(2));
    assert!(matches!(predict(&backend, &qa_request()), Err(QaError::BackendUnavailable(_))));
}
