//! The HTTP backend against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use iodiag::corpus::{Origin, Triple};
use iodiag::judge::{
    prompt_version, render_prompt, HttpBackend, HttpConfig, JudgeCache, JudgeOptions, JudgeRunner, Verdict,
};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    request_line: String,
    headers: Vec<(String, String)>,
    body: Value,
}

impl Seen {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

/// Serves one scripted `(status, body)` per connection, then stops.
fn serve(script: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                headers.push((k.trim().to_string(), v.trim().to_string()));
            }
            let len: usize = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                .map(|(_, v)| v.parse().unwrap())
                .unwrap_or(0);
            let mut raw = vec![0; len];
            reader.read_exact(&mut raw).unwrap();
            log.lock().unwrap().push(Seen {
                request_line: request_line.trim_end().to_string(),
                headers,
                body: serde_json::from_slice(&raw).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn completion(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn triple() -> Triple {
    Triple {
        problem_id: "p1".into(),
        submission_id: "s1".into(),
        code: "print(int(input()) + 1)".into(),
        input: "41".into(),
        output: "42".into(),
        label: 1,
        origin: Origin::ExecutedPositive,
    }
}

fn options() -> JudgeOptions {
    JudgeOptions { concurrency: 1, backoff_base_secs: 0.01, ..JudgeOptions::default() }
}

#[test]
fn request_wire_format_and_bearer_token() {
    std::env::set_var("IODIAG_TEST_KEY_WIRE", "sk-test");
    let (endpoint, seen) = serve(vec![(200, completion("Yes."))]);
    let backend = HttpBackend::new(&HttpConfig {
        endpoint,
        api_key_env: Some("IODIAG_TEST_KEY_WIRE".into()),
        request_timeout_secs: 10.0,
    })
    .unwrap();
    let runner = JudgeRunner::new(&backend, "target-model", options(), None);
    let t = triple();
    let record = runner.judge_triple(&t);
    assert_eq!(record.verdict, Verdict::Match);
    assert_eq!(record.success, 1);
    assert_eq!(record.prompt_version, prompt_version());

    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    let req = &seen[0];
    assert_eq!(req.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(req.header("authorization"), Some("Bearer sk-test"));
    assert!(req.header("content-type").unwrap().starts_with("application/json"));
    let prompt = render_prompt(&t);
    let expected = json!({
        "model": "target-model",
        "messages": [
            {"role": "system", "content": prompt.system},
            {"role": "user", "content": prompt.user},
        ],
        "temperature": 0,
    });
    assert_eq!(req.body, expected);
}

#[test]
fn rate_limit_response_is_retried() {
    let (endpoint, seen) = serve(vec![(429, "{}".into()), (503, "{}".into()), (200, completion("no"))]);
    let backend = HttpBackend::new(&HttpConfig { endpoint, api_key_env: None, request_timeout_secs: 10.0 }).unwrap();
    let runner = JudgeRunner::new(&backend, "m", options(), None);
    let record = runner.judge_triple(&triple());
    assert_eq!(record.verdict, Verdict::NoMatch);
    assert_eq!(record.success, 0);
    assert!(record.error.is_none());
    assert_eq!(runner.backend_calls(), 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn fatal_status_is_invalid_and_not_cached() {
    let (endpoint, seen) = serve(vec![(401, r#"{"error":"bad key"}"#.into()), (200, completion("yes"))]);
    let backend = HttpBackend::new(&HttpConfig { endpoint, api_key_env: None, request_timeout_secs: 10.0 }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let runner = JudgeRunner::new(&backend, "m", options(), Some(JudgeCache::new(dir.path())));
    let first = runner.judge_triple(&triple());
    assert_eq!(first.verdict, Verdict::Invalid);
    assert!(first.error.as_deref().unwrap().contains("401"));
    // invalid verdicts count as wrong
    assert_eq!(first.success, 0);
    assert_eq!(runner.backend_calls(), 1);

    let second = runner.judge_triple(&triple());
    assert_eq!(second.verdict, Verdict::Match);
    let third = runner.judge_triple(&triple());
    assert_eq!(third, second);
    assert_eq!(runner.backend_calls(), 2);
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn unparseable_reply_gets_one_more_try() {
    let (endpoint, _seen) = serve(vec![(200, completion("hard to say")), (200, completion("I think yes"))]);
    let backend = HttpBackend::new(&HttpConfig { endpoint, api_key_env: None, request_timeout_secs: 10.0 }).unwrap();
    let runner = JudgeRunner::new(&backend, "m", options(), None);
    let record = runner.judge_triple(&triple());
    assert_eq!(record.verdict, Verdict::Match);
    assert_eq!(record.raw_response, "I think yes");
    assert_eq!(runner.backend_calls(), 2);
}
