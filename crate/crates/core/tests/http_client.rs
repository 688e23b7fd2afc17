//! The HTTP endpoint and retrying client against a scripted local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use bcrl_core::generation::{
    ChatClient, ChatRequest, EndpointError, GenerationPlan, HttpEndpoint, RetryPolicy,
};

struct Reply {
    status: u16,
    headers: Vec<(&'static str, &'static str)>,
    body: String,
}

fn ok(content: &str) -> Reply {
    Reply {
        status: 200,
        headers: vec![],
        body:
            serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
                .to_string(),
    }
}

fn status(code: u16) -> Reply {
    Reply {
        status: code,
        headers: vec![],
        body: "{\"error\":\"scripted\"}".into(),
    }
}

/// Serve the scripted replies in order, one per connection; returns the base
/// URL and the request bodies seen.
fn serve(script: Vec<Reply>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for reply in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(String::from_utf8(body).unwrap());
            let mut out = format!(
                "HTTP/1.1 {} Scripted\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                reply.status,
                reply.body.len()
            );
            for (k, v) in &reply.headers {
                out.push_str(&format!("{k}: {v}\r\n"));
            }
            out.push_str("\r\n");
            out.push_str(&reply.body);
            let mut stream = stream;
            stream.write_all(out.as_bytes()).unwrap();
            stream.flush().unwrap();
        }
    });
    (url, seen)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_retries: 3,
        base_delay: Duration::from_millis(5),
        max_delay: Duration::from_millis(50),
    }
}

fn request() -> ChatRequest {
    ChatRequest::from_plan(&GenerationPlan::default(), "How much effort?", 11)
}

#[test]
fn server_errors_are_retried_until_success() {
    let (url, seen) = serve(vec![status(500), status(503), ok("effort: 6")]);
    let client = ChatClient::new(
        Box::new(HttpEndpoint::new(url, None, Duration::from_secs(5))),
        fast_retry(),
        1,
    );
    assert_eq!(client.chat_complete(&request()).unwrap(), "effort: 6");
    let stats = client.stats();
    assert_eq!((stats.requests, stats.retries, stats.failures), (3, 2, 0));
    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let first: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(first["seed"], 11);
    assert_eq!(first["messages"][0]["content"], "How much effort?");
    assert_eq!(bodies[0], bodies[2]);
}

#[test]
fn rate_limit_honours_retry_after() {
    let limited = Reply {
        status: 429,
        headers: vec![("Retry-After", "0.2")],
        body: "{}".into(),
    };
    let (url, _) = serve(vec![limited, ok("[4, 5, 7]")]);
    let client = ChatClient::new(
        Box::new(HttpEndpoint::new(
            url,
            Some("k".into()),
            Duration::from_secs(5),
        )),
        RetryPolicy {
            max_delay: Duration::from_secs(1),
            ..fast_retry()
        },
        1,
    );
    let started = std::time::Instant::now();
    assert_eq!(client.chat_complete(&request()).unwrap(), "[4, 5, 7]");
    assert!(started.elapsed() >= Duration::from_millis(200));
    let stats = client.stats();
    assert_eq!((stats.rate_limited, stats.retries), (1, 1));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, _) = serve(vec![status(401)]);
    let client = ChatClient::new(
        Box::new(HttpEndpoint::new(url, None, Duration::from_secs(5))),
        fast_retry(),
        1,
    );
    match client.chat_complete(&request()) {
        Err(EndpointError::Status { code: 401, .. }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(client.stats().requests, 1);
}

#[test]
fn legacy_text_field_and_empty_content() {
    let legacy = Reply {
        status: 200,
        headers: vec![],
        body: "{\"choices\":[{\"text\":\"effort: 2\"}]}".into(),
    };
    let (url, _) = serve(vec![legacy, ok("   ")]);
    let endpoint = HttpEndpoint::new(url, None, Duration::from_secs(5));
    let client = ChatClient::new(Box::new(endpoint), fast_retry(), 1);
    assert_eq!(client.chat_complete(&request()).unwrap(), "effort: 2");
    assert!(matches!(
        client.chat_complete(&request()),
        Err(EndpointError::EmptyCompletion)
    ));
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let client = ChatClient::new(
        Box::new(HttpEndpoint::new(
            format!("http://127.0.0.1:{port}/x"),
            None,
            Duration::from_secs(2),
        )),
        RetryPolicy {
            max_retries: 1,
            ..fast_retry()
        },
        1,
    );
    assert!(matches!(
        client.chat_complete(&request()),
        Err(EndpointError::Transport(_))
    ));
    let stats = client.stats();
    assert_eq!((stats.requests, stats.retries, stats.failures), (2, 1, 1));
}
