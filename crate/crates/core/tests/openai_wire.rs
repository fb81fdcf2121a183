#![cfg(feature = "http")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::{json, Value};

use himm_core::model_gateway::{
    ask_yes_no, embed, ChatModel, ChatRequest, GatewayError, ImageResolver, OpenAiClient, OpenAiConfig, ReplySchema,
    Turn,
};

#[derive(Clone, Debug)]
struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order, recording requests.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    let handle = std::thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let path = line.split_whitespace().nth(1).unwrap_or_default().to_string();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                path,
                auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut out = stream;
            write!(
                out,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (base, seen, handle)
}

fn chat_reply(text: &str) -> (u16, String) {
    (200, json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string())
}

fn client(base: &str, key: Option<&str>) -> OpenAiClient {
    OpenAiClient::new(OpenAiConfig {
        api_base: base.to_string(),
        api_key: key.map(str::to_string),
        chat_model: "test-chat".into(),
        embed_model: "test-embed".into(),
        embed_dim: 3,
        timeout: Duration::from_secs(10),
    })
}

#[test]
fn chat_request_shape_and_reply() {
    let (base, seen, h) = serve(vec![chat_reply("yes")]);
    let c = client(&base, Some("sk-test"));
    let req = ChatRequest::new("locality", ReplySchema::YesNo, "Be brief.").turn(Turn::user("Near?"));
    assert_eq!(c.send(&req).unwrap(), "yes");
    h.join().unwrap();
    let s = seen.lock().unwrap()[0].clone();
    assert_eq!(s.path, "/v1/chat/completions");
    assert_eq!(s.auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(s.body["model"], "test-chat");
    assert_eq!(s.body["temperature"], 0);
    let msgs = s.body["messages"].as_array().unwrap();
    assert_eq!(msgs[0]["role"], "system");
    assert!(msgs[0]["content"].as_str().unwrap().starts_with("Be brief."));
    assert_eq!(msgs[1], json!({"role": "user", "content": "Near?"}));
}

#[test]
fn unparseable_reply_is_retried_with_a_corrective_turn() {
    let (base, seen, h) = serve(vec![chat_reply("maybe"), chat_reply("No.")]);
    let c = client(&base, None);
    let req = ChatRequest::new("t", ReplySchema::YesNo, "sys").turn(Turn::user("Q"));
    let (yes, raw) = ask_yes_no(&c, &req).unwrap();
    h.join().unwrap();
    assert!(!yes);
    assert_eq!(raw, "No.");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    assert!(seen[0].auth.is_none());
    let msgs = seen[1].body["messages"].as_array().unwrap();
    assert_eq!(msgs.len(), 4);
    assert_eq!(msgs[2], json!({"role": "assistant", "content": "maybe"}));
    assert!(msgs[3]["content"].as_str().unwrap().contains("could not be parsed"));
}

struct Fixed;

impl ImageResolver for Fixed {
    fn resolve(&self, locator: &str) -> Option<(String, Vec<u8>)> {
        (locator == "a.png").then(|| ("image/png".to_string(), vec![1, 2, 3]))
    }
}

#[test]
fn images_become_data_urls() {
    let (base, seen, h) = serve(vec![chat_reply("yes")]);
    let c = OpenAiClient::with_resolver(client(&base, None).config().clone(), Arc::new(Fixed));
    let req = ChatRequest::new("t", ReplySchema::YesNo, "sys")
        .turn(Turn::user("look").with_images(["a.png".to_string(), "sim://x".to_string()]));
    c.send(&req).unwrap();
    h.join().unwrap();
    let parts = seen.lock().unwrap()[0].body["messages"][1]["content"].clone();
    assert_eq!(parts[0], json!({"type": "text", "text": "look"}));
    assert_eq!(parts[1]["image_url"]["url"], "data:image/png;base64,AQID");
    assert_eq!(parts[2]["text"], "[image unavailable: sim://x]");
}

#[test]
fn embeddings_are_normalized_and_checked() {
    let body = |v: Value| (200, json!({"data": [{"embedding": v}]}).to_string());
    let (base, seen, h) = serve(vec![body(json!([3.0, 0.0, 4.0])), body(json!([1.0, 2.0]))]);
    let c = client(&base, None);
    assert_eq!(embed(&c, "red mug", 3).unwrap(), vec![0.6, 0.0, 0.8]);
    assert!(matches!(embed(&c, "red mug", 3), Err(GatewayError::Config(_))));
    h.join().unwrap();
    let s = seen.lock().unwrap()[0].clone();
    assert_eq!(s.path, "/v1/embeddings");
    assert_eq!(s.body, json!({"model": "test-embed", "input": "red mug"}));
}

#[test]
fn http_errors_classify_retryability() {
    let (base, _, h) = serve(vec![
        (503, "{}".into()),
        (400, "{\"error\": \"bad\"}".into()),
        (200, "{\"choices\": []}".into()),
    ]);
    let c = client(&base, None);
    let req = ChatRequest::new("t", ReplySchema::YesNo, "sys").turn(Turn::user("Q"));
    let retryable = |r: Result<String, GatewayError>| match r {
        Err(GatewayError::Transport { retryable, .. }) => retryable,
        other => panic!("expected a transport error, got {other:?}"),
    };
    assert!(retryable(c.send(&req)));
    assert!(!retryable(c.send(&req)));
    assert!(!retryable(c.send(&req)));
    h.join().unwrap();
}

#[test]
fn unreachable_server_is_retryable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = client(&format!("http://127.0.0.1:{port}/v1"), None);
    let req = ChatRequest::new("t", ReplySchema::YesNo, "sys").turn(Turn::user("Q"));
    assert!(matches!(c.send(&req), Err(GatewayError::Transport { retryable: true, .. })));
}
