//! Wire-protocol tests against in-process stub servers.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use updkit::adapter::{generate, GenerationRequest, Generator, GeneratorConfig, RemoteGenerator};

struct StubServer {
    port: u16,
    _handle: thread::JoinHandle<()>,
}

/// Spawn a server that answers each request via the handler, spawning a
/// thread per request so concurrency is observable.
fn spawn_server<F>(handler: F) -> StubServer
where
    F: Fn(usize, String) -> (u16, String) + Send + Sync + 'static,
{
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind stub server");
    let port = server.server_addr().to_ip().expect("ip addr").port();
    let handler = Arc::new(handler);
    let counter = Arc::new(AtomicUsize::new(0));
    let handle = thread::spawn(move || {
        for mut request in server.incoming_requests() {
            let handler = Arc::clone(&handler);
            let n = counter.fetch_add(1, Ordering::SeqCst);
            thread::spawn(move || {
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                let (status, response_body) = handler(n, body);
                let response = tiny_http::Response::from_string(response_body)
                    .with_status_code(status)
                    .with_header(
                        tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
                            .expect("header"),
                    );
                let _ = request.respond(response);
            });
        }
    });
    StubServer {
        port,
        _handle: handle,
    }
}

fn config(port: u16) -> GeneratorConfig {
    let mut cfg = GeneratorConfig::new(format!("http://127.0.0.1:{port}/generate"));
    cfg.timeout_secs = 5;
    cfg.retries = 3;
    cfg
}

#[test]
fn echo_server_round_trip() {
    let server = spawn_server(|_, body| {
        let request: serde_json::Value = serde_json::from_str(&body).expect("json body");
        let text = format!("echo: {}", request["prompt"].as_str().unwrap_or(""));
        (200, serde_json::json!({ "text": text }).to_string())
    });
    let req = GenerationRequest::for_prompt("hello refinery");
    let text = generate(&req, &config(server.port)).unwrap();
    assert_eq!(text, "echo: hello refinery");
}

#[test]
fn wire_request_carries_decoding_parameters() {
    let server = spawn_server(|_, body| {
        let request: serde_json::Value = serde_json::from_str(&body).expect("json body");
        assert_eq!(request["temperature"].as_f64(), Some(0.3));
        assert_eq!(request["top_p"].as_f64(), Some(0.95));
        assert_eq!(request["top_k"].as_u64(), Some(5));
        assert!(request["max_tokens"].as_u64().is_some());
        assert!(request.get("tags").is_none(), "tags stay off the wire");
        (200, serde_json::json!({ "text": "ok" }).to_string())
    });
    let req = GenerationRequest::for_prompt("check defaults").tagged("task", "t1");
    assert_eq!(generate(&req, &config(server.port)).unwrap(), "ok");
}

#[test]
fn retries_recover_from_transient_failures() {
    let server = spawn_server(|n, _| {
        if n < 2 {
            (500, "upstream exploded".to_string())
        } else {
            (200, serde_json::json!({ "text": "recovered" }).to_string())
        }
    });
    let req = GenerationRequest::for_prompt("retry me");
    let text = generate(&req, &config(server.port)).unwrap();
    assert_eq!(text, "recovered");
}

#[test]
fn exhausted_retries_surface_a_transport_error() {
    let server = spawn_server(|_, _| (500, "always broken".to_string()));
    let mut cfg = config(server.port);
    cfg.retries = 1;
    let req = GenerationRequest::for_prompt("doomed");
    let err = generate(&req, &cfg).unwrap_err();
    let message = err.to_string();
    assert!(message.contains("after 2 attempt(s)"), "got: {message}");
}

#[test]
fn client_errors_fail_fast_with_a_body_excerpt() {
    let calls = Arc::new(AtomicUsize::new(0));
    let calls_in_handler = Arc::clone(&calls);
    let server = spawn_server(move |_, _| {
        calls_in_handler.fetch_add(1, Ordering::SeqCst);
        (418, "the teapot refuses".to_string())
    });
    let req = GenerationRequest::for_prompt("short and stout");
    let err = generate(&req, &config(server.port)).unwrap_err();
    let message = err.to_string();
    assert!(message.contains("418") && message.contains("teapot"), "got: {message}");
    assert_eq!(calls.load(Ordering::SeqCst), 1, "4xx must not be retried");
}

#[test]
fn malformed_response_bodies_are_rejected() {
    let server = spawn_server(|_, _| (200, "not json at all".to_string()));
    let req = GenerationRequest::for_prompt("give me json");
    let err = generate(&req, &config(server.port)).unwrap_err();
    assert!(err.to_string().contains("malformed"), "got: {err}");
}

#[test]
fn concurrency_stays_within_max_in_flight() {
    let current = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (current_h, peak_h) = (Arc::clone(&current), Arc::clone(&peak));
    let server = spawn_server(move |_, _| {
        let now = current_h.fetch_add(1, Ordering::SeqCst) + 1;
        peak_h.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(50));
        current_h.fetch_sub(1, Ordering::SeqCst);
        (200, serde_json::json!({ "text": "done" }).to_string())
    });

    let mut cfg = config(server.port);
    cfg.max_in_flight = 2;
    let client = Arc::new(RemoteGenerator::new(cfg));
    let mut workers = Vec::new();
    for i in 0..8 {
        let client = Arc::clone(&client);
        workers.push(thread::spawn(move || {
            let req = GenerationRequest::for_prompt(format!("req {i}"));
            client.generate(&req).unwrap()
        }));
    }
    for worker in workers {
        assert_eq!(worker.join().unwrap(), "done");
    }
    assert!(
        peak.load(Ordering::SeqCst) <= 2,
        "peak concurrency {} exceeded max_in_flight 2",
        peak.load(Ordering::SeqCst)
    );
}
