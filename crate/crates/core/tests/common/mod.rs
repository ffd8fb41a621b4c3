//! Minimal HTTP/1.1 server standing in for a chat-completions endpoint.

#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

/// What the stub answers with.
#[derive(Clone)]
pub enum Reply {
    /// `200` with a completion wrapping `content`.
    Content(String),
    /// Arbitrary status and raw body.
    Raw(u16, String),
    /// Waits before answering with `content`.
    Stall(Duration, String),
    /// Echoes the user message back as the completion.
    EchoUser,
}

pub struct StubServer {
    pub url: String,
    requests: Arc<Mutex<Vec<serde_json::Value>>>,
}

impl StubServer {
    pub fn start(reply: Reply) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let reply = reply.clone();
                let log = log.clone();
                thread::spawn(move || serve(stream, reply, log));
            }
        });
        Self { url, requests }
    }

    pub fn requests(&self) -> Vec<serde_json::Value> {
        self.requests.lock().unwrap().clone()
    }
}

pub fn completion(content: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
    })
    .to_string()
}

fn serve(stream: TcpStream, reply: Reply, log: Arc<Mutex<Vec<serde_json::Value>>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    loop {
        let mut length = 0usize;
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        loop {
            line.clear();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let l = line.trim_end();
            if l.is_empty() {
                break;
            }
            if let Some((k, v)) = l.split_once(':') {
                if k.eq_ignore_ascii_case("content-length") {
                    length = v.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0; length];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or(serde_json::Value::Null);
        let user = request["messages"][1]["content"].as_str().unwrap_or_default().to_string();
        log.lock().unwrap().push(request);
        let (status, text) = match &reply {
            Reply::Content(c) => (200, completion(c)),
            Reply::Raw(s, b) => (*s, b.clone()),
            Reply::Stall(d, c) => {
                thread::sleep(*d);
                (200, completion(c))
            }
            Reply::EchoUser => (200, completion(&user)),
        };
        let head = format!(
            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
            text.len()
        );
        let mut out = &stream;
        if out.write_all(head.as_bytes()).and_then(|_| out.write_all(text.as_bytes())).is_err() {
            return;
        }
    }
}
