use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use geobench::model::http::{BackendConfig, HttpBackend};
use geobench::model::{complete_with_retry, BackendError, ChatBackend, ChatTurn, CompletionRequest, GenerationParams, RetryPolicy};

struct Captured {
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Serves one canned `(status, body)` per connection, in order.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(Captured {
                headers,
                body: serde_json::from_slice(&buf).unwrap_or_default(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1/chat/completions"), rx)
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"{\"country\": \"France\"}"}}]}"#;

fn fast_retry(n: u32) -> RetryPolicy {
    RetryPolicy {
        max_retries: n,
        base_delay_ms: 1,
        max_delay_ms: 2,
    }
}

fn ask(b: &HttpBackend, policy: &RetryPolicy) -> (Result<String, BackendError>, u32) {
    let history = [ChatTurn::system("be brief"), ChatTurn::user("where?")];
    let params = GenerationParams { temperature: 0.2, top_p: 0.9, top_k: Some(4) };
    complete_with_retry(b, &CompletionRequest::new(&history, &params), policy)
}

#[test]
fn sends_openai_shape_with_bearer_token() {
    let (url, rx) = serve(vec![(200, OK)]);
    std::env::set_var("GEOBENCH_TEST_TOKEN_A", "sekrit");
    let mut cfg = BackendConfig::new("remote", url);
    cfg.model = "vision-1".into();
    cfg.auth_env = Some("GEOBENCH_TEST_TOKEN_A".into());
    let b = HttpBackend::new(cfg).unwrap();
    let (reply, attempts) = ask(&b, &RetryPolicy::none());
    assert_eq!(reply.unwrap(), r#"{"country": "France"}"#);
    assert_eq!(attempts, 1);
    let got = rx.recv().unwrap();
    assert!(got.headers.iter().any(|h| h == "Authorization: Bearer sekrit" || h == "authorization: Bearer sekrit"));
    assert_eq!(got.body["model"], "vision-1");
    assert_eq!(got.body["top_k"], 4);
    assert_eq!(got.body["temperature"], 0.2);
    assert_eq!(got.body["messages"][0]["role"], "system");
    assert_eq!(got.body["messages"][1]["content"][0]["text"], "where?");
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, rx) = serve(vec![(503, "{}"), (429, "{}"), (200, OK)]);
    let b = HttpBackend::new(BackendConfig::new("remote", url)).unwrap();
    let (reply, attempts) = ask(&b, &fast_retry(3));
    assert!(reply.is_ok());
    assert_eq!(attempts, 3);
    assert_eq!(rx.iter().take(3).count(), 3);
}

#[test]
fn gives_up_after_retry_budget() {
    let (url, _rx) = serve(vec![(500, "{}"), (500, "{}")]);
    let b = HttpBackend::new(BackendConfig::new("remote", url)).unwrap();
    let (reply, attempts) = ask(&b, &fast_retry(1));
    assert_eq!(reply.unwrap_err().category(), "transport");
    assert_eq!(attempts, 2);
}

#[test]
fn maps_status_codes_without_retrying() {
    for (status, body, category) in [
        (401, "{}", "auth"),
        (400, r#"{"error": "bad"}"#, "rejected"),
        (200, r#"{"choices": []}"#, "malformed"),
    ] {
        let (url, _rx) = serve(vec![(status, body)]);
        let b = HttpBackend::new(BackendConfig::new("remote", url)).unwrap();
        let (reply, attempts) = ask(&b, &fast_retry(3));
        assert_eq!(reply.unwrap_err().category(), category, "status {status}");
        assert_eq!(attempts, 1);
    }
}

#[test]
fn missing_token_is_an_auth_error() {
    let mut cfg = BackendConfig::new("remote", "http://127.0.0.1:9/x");
    cfg.auth_env = Some("GEOBENCH_TEST_TOKEN_UNSET".into());
    let b = HttpBackend::new(cfg).unwrap();
    let (reply, attempts) = ask(&b, &fast_retry(3));
    assert!(matches!(reply, Err(BackendError::Auth(_))));
    assert_eq!(attempts, 1);
    assert_eq!(b.id(), "remote");
}

#[test]
fn config_parses_from_toml_with_defaults() {
    let cfg: BackendConfig = toml::from_str("backend_id = \"m\"\nendpoint = \"http://h/x\"\nrequests_per_minute = 30\n").unwrap();
    assert_eq!(cfg.timeout_secs, 60.0);
    assert_eq!(cfg.retry_policy().max_retries, 3);
    assert_eq!(cfg.requests_per_minute, Some(30));
    assert!(toml::from_str::<BackendConfig>("endpoint = \"x\"").is_err());
}
