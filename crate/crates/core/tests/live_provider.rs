use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use aitdd_core::prompt::assemble_context;
use aitdd_core::provider::{ApiKey, ChatProvider, Gateway, ModelConfig, ProviderError, TokenUsage};

struct Captured {
    request_line: String,
    headers: Vec<String>,
    body: String,
}

/// Serves one canned (status, body) per connection, in order, and records each request.
fn stub(responses: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Captured {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: String::from_utf8(buf).unwrap(),
            });
            let mut stream = stream;
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (url, seen)
}

fn config() -> ModelConfig {
    ModelConfig {
        api_key: Some(ApiKey::new("sk-stub")),
        request_timeout: Duration::from_secs(5),
        ..ModelConfig::default()
    }
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"```python\nx = 1\n```"}}],"usage":{"prompt_tokens":12,"completion_tokens":5}}"#;

#[test]
fn server_errors_are_retried_then_the_reply_is_returned() {
    let (url, seen) = stub(vec![(503, "{}"), (500, "{}"), (200, OK)]);
    let gw = Gateway::live(config(), url).with_backoff(Duration::from_millis(5));
    let reply = gw.complete(&assemble_context(Some("previous"), "next prompt")).unwrap();
    assert_eq!(reply.text, "```python\nx = 1\n```");
    assert_eq!(reply.token_usage, Some(TokenUsage { prompt: 12, completion: 5 }));

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    assert!(seen[0].headers.iter().any(|h| h == "authorization: Bearer sk-stub" || h == "Authorization: Bearer sk-stub"));
    let body: serde_json::Value = serde_json::from_str(&seen[2].body).unwrap();
    assert_eq!(body["model"], "gpt-3.5-turbo-16k");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(
        body["messages"],
        serde_json::json!([
            {"role": "assistant", "content": "previous"},
            {"role": "user", "content": "next prompt"}
        ])
    );
    assert_eq!(gw.recorded().len(), 1);
}

#[test]
fn client_error_is_returned_at_once() {
    let (url, seen) = stub(vec![(401, r#"{"error":"bad key"}"#)]);
    let gw = Gateway::live(config(), url).with_backoff(Duration::from_millis(5));
    let err = gw.complete(&assemble_context(None, "p")).unwrap_err();
    assert!(matches!(err, ProviderError::Rejected { status: 401, ref body } if body.contains("bad key")));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_endpoint_exhausts_retries() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let gw = Gateway::live(config(), url).with_backoff(Duration::from_millis(1));
    let err = gw.complete(&assemble_context(None, "p")).unwrap_err();
    assert!(matches!(err, ProviderError::Transport { attempts: 4, .. }), "{err:?}");
}
