//! HTTP chat client against a local TCP server speaking just enough
//! HTTP/1.1 to script responses and capture what the client sent.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use biaslens::annotator::{
    annotate_to_labeled, client_from_config, render_labels, AnnotationSchema, ChatClient,
    ChatRequest, HttpChatClient, LlmConfig, TransportError,
};
use biaslens::corpus::{Article, Domain};
use biaslens::labels::{BiasLabel, BiasVector};

struct Recorded {
    request_line: String,
    headers: Vec<(String, String)>,
    body: serde_json::Value,
}

impl Recorded {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }
}

struct Response {
    status: u16,
    body: String,
}

fn ok_completion(content: &str) -> Response {
    Response {
        status: 200,
        body: serde_json::json!({
            "choices": [ { "message": { "role": "assistant", "content": content } } ]
        })
        .to_string(),
    }
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn read_request(stream: &mut TcpStream) -> Recorded {
    let mut buf = Vec::new();
    let mut tmp = [0u8; 4096];
    let header_end = loop {
        if let Some(pos) = find_subslice(&buf, b"\r\n\r\n") {
            break pos;
        }
        let n = stream.read(&mut tmp).expect("read request");
        assert!(n > 0, "connection closed before headers finished");
        buf.extend_from_slice(&tmp[..n]);
    };
    let header_text = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let mut lines = header_text.split("\r\n");
    let request_line = lines.next().unwrap_or_default().to_string();
    let headers: Vec<(String, String)> = lines
        .filter_map(|l| l.split_once(": "))
        .map(|(k, v)| (k.to_ascii_lowercase(), v.to_string()))
        .collect();
    let content_length: usize = headers
        .iter()
        .find(|(k, _)| k == "content-length")
        .map(|(_, v)| v.parse().expect("content-length"))
        .unwrap_or(0);
    let mut body = buf[header_end + 4..].to_vec();
    while body.len() < content_length {
        let n = stream.read(&mut tmp).expect("read body");
        assert!(n > 0, "connection closed before body finished");
        body.extend_from_slice(&tmp[..n]);
    }
    Recorded {
        request_line,
        headers,
        body: serde_json::from_slice(&body).expect("request body is JSON"),
    }
}

fn write_response(stream: &mut TcpStream, response: &Response) {
    let reason = match response.status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        429 => "Too Many Requests",
        500 => "Internal Server Error",
        _ => "Other",
    };
    let message = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        response.status,
        reason,
        response.body.len(),
        response.body
    );
    stream
        .write_all(message.as_bytes())
        .expect("write response");
}

/// Serves one scripted response per connection, recording each request.
fn serve(script: Vec<Response>) -> (String, Arc<Mutex<Vec<Recorded>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let endpoint = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let log = Arc::new(Mutex::new(Vec::new()));
    let log_clone = Arc::clone(&log);
    let handle = std::thread::spawn(move || {
        for response in script {
            let (mut stream, _) = listener.accept().expect("accept");
            let recorded = read_request(&mut stream);
            log_clone.lock().unwrap().push(recorded);
            write_response(&mut stream, &response);
        }
    });
    (endpoint, log, handle)
}

fn request<'a>(system_text: &'a str, user_text: &'a str) -> ChatRequest<'a> {
    ChatRequest {
        model_id: "annotator-test",
        temperature: 0.25,
        system_text,
        user_text,
    }
}

#[test]
fn posts_openai_shaped_payload_with_bearer_auth() {
    let (endpoint, log, handle) = serve(vec![ok_completion("Political Bias: yes")]);
    let client = HttpChatClient::new(
        &endpoint,
        Some("sk-test-123".to_string()),
        Duration::from_secs(5),
    )
    .unwrap();
    let raw = client
        .complete(&request("classify the article", "Title: T\n\nBody: B"))
        .unwrap();
    handle.join().unwrap();
    assert_eq!(raw, "Political Bias: yes");

    let log = log.lock().unwrap();
    assert_eq!(log.len(), 1);
    let rec = &log[0];
    assert_eq!(rec.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(rec.header("authorization"), Some("Bearer sk-test-123"));
    assert_eq!(rec.header("content-type"), Some("application/json"));

    assert_eq!(rec.body["model"], "annotator-test");
    assert_eq!(rec.body["temperature"], 0.25);
    let messages = rec.body["messages"].as_array().expect("messages array");
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[0]["role"], "system");
    assert_eq!(messages[0]["content"], "classify the article");
    assert_eq!(messages[1]["role"], "user");
    assert_eq!(messages[1]["content"], "Title: T\n\nBody: B");
}

#[test]
fn omits_auth_header_without_key() {
    let (endpoint, log, handle) = serve(vec![ok_completion("x")]);
    let client = HttpChatClient::new(&endpoint, None, Duration::from_secs(5)).unwrap();
    client.complete(&request("s", "u")).unwrap();
    handle.join().unwrap();
    assert_eq!(log.lock().unwrap()[0].header("authorization"), None);
}

#[test]
fn maps_status_codes_to_transport_errors() {
    for (status, retryable) in [(429u16, true), (500, true), (400, false), (401, false)] {
        let (endpoint, _, handle) = serve(vec![Response {
            status,
            body: "{}".to_string(),
        }]);
        let client = HttpChatClient::new(&endpoint, None, Duration::from_secs(5)).unwrap();
        let err = client.complete(&request("s", "u")).unwrap_err();
        handle.join().unwrap();
        assert_eq!(err, TransportError::HttpStatus { code: status });
        assert_eq!(err.is_retryable(), retryable, "status {status}");
    }
}

#[test]
fn rejects_unusable_payloads() {
    let cases = [
        "not json at all",
        r#"{"choices":[]}"#,
        r#"{"choices":[{"message":{"role":"assistant"}}]}"#,
    ];
    for body in cases {
        let (endpoint, _, handle) = serve(vec![Response {
            status: 200,
            body: body.to_string(),
        }]);
        let client = HttpChatClient::new(&endpoint, None, Duration::from_secs(5)).unwrap();
        let err = client.complete(&request("s", "u")).unwrap_err();
        handle.join().unwrap();
        assert!(
            matches!(err, TransportError::BadPayload(_)),
            "body {body:?} gave {err:?}"
        );
    }
}

#[test]
fn reports_timeouts_distinctly() {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let endpoint = format!("http://{}/slow", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let (mut stream, _) = listener.accept().expect("accept");
        let _ = read_request(&mut stream);
        std::thread::sleep(Duration::from_millis(600));
    });
    let client = HttpChatClient::new(&endpoint, None, Duration::from_millis(150)).unwrap();
    let err = client.complete(&request("s", "u")).unwrap_err();
    assert_eq!(err, TransportError::Timeout);
    handle.join().unwrap();
}

#[test]
fn annotates_over_http_with_transport_retry() {
    let schema = AnnotationSchema::standard();
    let mut labels = BiasVector::zeros();
    labels.set(BiasLabel::Gender, true);
    labels.set(BiasLabel::Sensational, true);
    let rendered = render_labels(&labels, &schema);

    // First request is throttled; the retry and the second article succeed.
    let script = vec![
        Response {
            status: 429,
            body: "{}".to_string(),
        },
        ok_completion(&rendered),
        ok_completion(&rendered),
    ];
    let (endpoint, log, handle) = serve(script);

    let dir = tempfile::tempdir().unwrap();
    let config = LlmConfig {
        endpoint_url: endpoint,
        concurrency_limit: 1,
        backoff_base_ms: 0,
        cache_path: dir.path().join("cache.jsonl"),
        ..LlmConfig::default()
    };
    let client = client_from_config(&config, Some("sk-live".to_string())).unwrap();
    let articles: Vec<Article> = (0..2)
        .map(|i| Article {
            id: format!("h{i:04}"),
            domain: Domain::Hollywood,
            title: "Premiere coverage".to_string(),
            body: "A breathless writeup.".to_string(),
            source: None,
        })
        .collect();

    let (labeled, results, summary) =
        annotate_to_labeled(&articles, &schema, &config, client.as_ref()).unwrap();
    handle.join().unwrap();

    assert_eq!(summary.ok, 2);
    assert_eq!(summary.transport_failed, 0);
    assert_eq!(labeled.len(), 2);
    assert!(labeled.iter().all(|l| l.labels == labels));
    assert_eq!(results[0].attempts, 2, "429 then success");
    assert_eq!(results[1].attempts, 1);

    let log = log.lock().unwrap();
    assert_eq!(log.len(), 3);
    assert!(log
        .iter()
        .all(|r| r.header("authorization") == Some("Bearer sk-live")));
    // The retry resends the same prompt.
    assert_eq!(log[0].body["messages"], log[1].body["messages"]);
}
