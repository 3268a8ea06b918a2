use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use dualground::backend::wire::{WireRequest, WireResponse};
use dualground::backend::{
    Backend, BackendError, GenerationRequest, GenerationResult, GenerationTask, HttpBackend, ModeHint,
};
use dualground::chain::{classify_first_token, FirstToken};
use dualground::geometry::ScreenshotRef;

type Handler = dyn Fn(&str, &str, &str) -> (u16, String) + Send + Sync;

struct Fixture {
    url: String,
    seen: Arc<Mutex<Vec<(String, String)>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<(String, String, String)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((method, path, String::from_utf8(body).ok()?))
}

fn serve(handler: Box<Handler>) -> Fixture {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some((method, path, body)) = read_request(&mut stream) else { continue };
            let (status, reply) = handler(&method, &path, &body);
            log.lock().unwrap().push((path, body));
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
        }
    });
    Fixture { url, seen }
}

fn fixture_body() -> String {
    std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/generate_response.json"))
        .unwrap()
        .trim()
        .to_string()
}

fn request(hint: ModeHint) -> GenerationRequest {
    GenerationRequest::new(
        ScreenshotRef::new("shots/settings.png", 1080, 2340).unwrap(),
        "Find the Wi-Fi toggle",
        GenerationTask::Ground,
        hint,
    )
    .with_max_new_tokens(256)
    .unwrap()
    .with_seed(Some(3))
}

fn client(url: &str) -> HttpBackend {
    HttpBackend::new(url, Duration::from_secs(5), 2).unwrap()
}

#[test]
fn live_call_matches_recorded_fixture() {
    let body = fixture_body();
    let reply = body.clone();
    let fx = serve(Box::new(move |_, path, _| match path {
        "/v1/generate" => (200, reply.clone()),
        _ => (404, r#"{"error":"no route"}"#.into()),
    }));
    let got = client(&fx.url).generate(&request(ModeHint::ForceSlow)).unwrap();
    let recorded: WireResponse = serde_json::from_str(&body).unwrap();
    assert_eq!(got, GenerationResult::try_from(recorded.clone()).unwrap());
    assert_eq!(WireResponse::from(&got), recorded);
    assert_eq!(classify_first_token(&got.text), FirstToken::SlowLead);

    let seen = fx.seen.lock().unwrap();
    assert_eq!(seen[0].0, "/v1/generate");
    let sent: WireRequest = serde_json::from_str(&seen[0].1).unwrap();
    assert_eq!(sent.screenshot_uri, "shots/settings.png");
    assert_eq!(sent.mode_hint, ModeHint::ForceSlow);
    assert_eq!(sent.max_new_tokens, 256);
    assert_eq!(sent.seed, Some(3));
    assert!(seen[0].1.contains(r#""mode_hint":"force_slow""#));
}

#[test]
fn health_reports_model() {
    let fx = serve(Box::new(|_, path, _| match path {
        "/v1/health" => (200, r#"{"status":"ok","model":"tiny-grounder"}"#.into()),
        _ => (404, "{}".into()),
    }));
    assert_eq!(client(&fx.url).health().unwrap(), "tiny-grounder");
}

#[test]
fn status_codes_map_to_errors() {
    let fx = serve(Box::new(|_, _, body| {
        let req: WireRequest = serde_json::from_str(body).unwrap_or_else(|_| WireRequest {
            screenshot_uri: String::new(),
            prompt: String::new(),
            mode_hint: ModeHint::Free,
            max_new_tokens: 0,
            seed: None,
        });
        match req.screenshot_uri.as_str() {
            "busy" => (503, r#"{"error":"model loading"}"#.into()),
            "bad" => (422, r#"{"error":"unknown mode_hint"}"#.into()),
            "slow" => (504, r#"{"error":"deadline"}"#.into()),
            "empty" => (
                200,
                r#"{"text":"","first_token_probs":{"summary_start":0.1,"grounding_start":0.8,"other":0.1},"latency_ms":3}"#.into(),
            ),
            "skewed" => (
                200,
                r#"{"text":"x","first_token_probs":{"summary_start":0.9,"grounding_start":0.8,"other":0.1},"latency_ms":3}"#.into(),
            ),
            _ => (200, "not json".into()),
        }
    }));
    let c = client(&fx.url);
    let call = |uri: &str| {
        let mut r = request(ModeHint::Free);
        r.screenshot = ScreenshotRef::new(uri, 10, 10).unwrap();
        c.generate(&r)
    };
    assert_eq!(call("busy"), Err(BackendError::Unavailable("model loading".into())));
    assert_eq!(call("bad"), Err(BackendError::Protocol("unknown mode_hint".into())));
    assert_eq!(call("slow"), Err(BackendError::Timeout));
    assert_eq!(call("empty"), Err(BackendError::ModelRefusal));
    assert!(matches!(call("skewed"), Err(BackendError::Protocol(_))));
    assert!(matches!(call("other"), Err(BackendError::Protocol(_))));
}

#[test]
fn dead_endpoint_is_unavailable() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let c = client(&format!("http://127.0.0.1:{port}"));
    assert!(matches!(c.health(), Err(BackendError::Unavailable(_))));
    let err = c.generate(&request(ModeHint::Free)).unwrap_err();
    assert!(err.is_transient());
}

#[test]
fn slow_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    thread::spawn(move || {
        let held: Vec<_> = listener.incoming().take(1).collect();
        thread::sleep(Duration::from_secs(3));
        drop(held);
    });
    let c = HttpBackend::new(&url, Duration::from_millis(300), 1).unwrap();
    assert_eq!(c.generate(&request(ModeHint::Free)), Err(BackendError::Timeout));
}
