use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use base64::Engine;
use curve_core::imaging::FloatImage;
use curve_core::reward::{LossProvider, LossRequestBody, RemoteClipLoss, RemoteConfig, RewardError};

/// One request as seen by the fake service.
#[derive(Debug, Clone)]
struct Seen {
    method: String,
    path: String,
    body: String,
}

/// Serves `replies` in order (the last one repeats) and records requests.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    std::thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut parts = line.split_whitespace();
            let method = parts.next().unwrap_or_default().to_string();
            let path = parts.next().unwrap_or_default().to_string();
            let mut len = 0;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                if h.trim().is_empty() {
                    break;
                }
                if let Some((k, v)) = h.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        len = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                method,
                path,
                body: String::from_utf8(body).unwrap(),
            });
            let (status, text) = replies[i.min(replies.len() - 1)];
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn quick() -> RemoteConfig {
    RemoteConfig {
        attempts: 3,
        initial_backoff: Duration::from_millis(5),
        timeout: Duration::from_secs(5),
        max_in_flight: 2,
    }
}

fn classes() -> Vec<String> {
    vec!["dog".into(), "Dog".into(), "cat".into()]
}

#[test]
fn loss_round_trip() {
    let (url, seen) = serve(vec![(200, r#"{"loss": 0.42, "n_classes": 2}"#)]);
    let client = RemoteClipLoss::with_config(url, quick());
    let img = FloatImage::filled(3, 224, 224, 0.25).unwrap();
    let loss = client.loss(&img, &classes()).unwrap();
    assert_eq!(loss, 0.42);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 1);
    assert_eq!((seen[0].method.as_str(), seen[0].path.as_str()), ("POST", "/v1/loss"));
    let body: LossRequestBody = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body.classes, ["dog", "cat"]);
    let png = base64::engine::general_purpose::STANDARD.decode(body.image_png_b64).unwrap();
    let info = png::Decoder::new(std::io::Cursor::new(png)).read_info().unwrap();
    assert_eq!((info.info().width, info.info().height), (224, 224));
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) = serve(vec![
        (503, r#"{"error":"busy"}"#),
        (200, r#"{"loss": 1.5, "n_classes": 1}"#),
    ]);
    let client = RemoteClipLoss::with_config(url, quick());
    let img = FloatImage::filled(3, 224, 224, 0.5).unwrap();
    assert_eq!(client.loss(&img, &["x".to_string()]).unwrap(), 1.5);
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn unreachable_endpoint_fails_after_all_attempts() {
    // Bind then drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = RemoteClipLoss::with_config(format!("http://127.0.0.1:{port}"), quick());
    let img = FloatImage::filled(3, 224, 224, 0.5).unwrap();
    match client.loss(&img, &["x".to_string()]) {
        Err(RewardError::Provider { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected provider error, got {other:?}"),
    }
    assert!(client.health_check().is_err());
}

#[test]
fn malformed_and_rejected_replies_are_protocol_errors() {
    let img = FloatImage::filled(3, 224, 224, 0.5).unwrap();
    let (url, seen) = serve(vec![(200, r#"{"los": "#)]);
    let client = RemoteClipLoss::with_config(url, quick());
    match client.loss(&img, &["x".to_string()]) {
        Err(RewardError::Protocol { excerpt, .. }) => assert!(excerpt.contains("los")),
        other => panic!("expected protocol error, got {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 1, "malformed replies are not retried");

    let (url, _) = serve(vec![(400, r#"{"error":"no classes"}"#)]);
    let client = RemoteClipLoss::with_config(url, quick());
    assert!(matches!(
        client.loss(&img, &["x".to_string()]),
        Err(RewardError::Protocol { .. })
    ));
}

#[test]
fn health_status() {
    let (url, seen) = serve(vec![(200, r#"{"model": "ViT-B/32", "status": "ok"}"#)]);
    let client = RemoteClipLoss::with_config(url, quick());
    assert_eq!(client.health().unwrap().model, "ViT-B/32");
    client.health_check().unwrap();
    assert_eq!(seen.lock().unwrap()[0].path, "/v1/health");

    let (url, _) = serve(vec![(200, r#"{"model": "m", "status": "loading"}"#)]);
    let client = RemoteClipLoss::with_config(url, quick());
    assert!(client.health_check().is_err());
}

#[test]
fn bad_queries_are_rejected_locally() {
    let client = RemoteClipLoss::with_config("http://127.0.0.1:9", quick());
    let img = FloatImage::filled(3, 224, 224, 0.5).unwrap();
    assert!(matches!(client.loss(&img, &[]), Err(RewardError::Domain(_))));
    let small = FloatImage::filled(3, 8, 8, 0.5).unwrap();
    assert!(matches!(client.loss(&small, &["x".to_string()]), Err(RewardError::Domain(_))));
}
