//! Shared helpers for the integration tests: a tiny OpenAI-compatible HTTP
//! server on a local port, and ready-made synthetic run configs.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;

use gpta::ta::{PoolEntry, RemoteConfig};
use gpta::trainer::{DataConfig, PoolItem, RunConfig, SynthSpec, TaConfig};

#[derive(Debug, Clone)]
pub struct Request {
    pub method: String,
    pub path: String,
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl Request {
    pub fn json(&self) -> serde_json::Value {
        serde_json::from_slice(&self.body).expect("request body is JSON")
    }

    pub fn body_text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }
}

#[derive(Debug, Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Reply {
    pub fn json(status: u16, body: serde_json::Value) -> Self {
        Reply {
            status,
            body: body.to_string(),
        }
    }

    pub fn chat(content: &str) -> Self {
        Reply::json(
            200,
            serde_json::json!({
                "id": "chatcmpl-1",
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]
            }),
        )
    }
}

type Handler = dyn Fn(&Request, usize) -> Reply + Send + Sync;

/// Serves every request with `handler(request, index)`, where `index`
/// counts requests from zero, and records what it received.
pub struct MockServer {
    pub base_url: String,
    log: Arc<Mutex<Vec<Request>>>,
}

impl MockServer {
    pub fn start(handler: impl Fn(&Request, usize) -> Reply + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let thread_log = Arc::clone(&log);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let log = Arc::clone(&thread_log);
                let handler = Arc::clone(&handler);
                thread::spawn(move || serve(stream, &log, handler.as_ref()));
            }
        });
        MockServer { base_url, log }
    }

    pub fn requests(&self) -> Vec<Request> {
        self.log.lock().unwrap().clone()
    }

    pub fn paths(&self) -> Vec<String> {
        self.requests()
            .iter()
            .map(|r| format!("{} {}", r.method, r.path))
            .collect()
    }

    /// Remote settings with fast retries and polling.
    pub fn config(&self) -> RemoteConfig {
        let mut c = RemoteConfig::new(&self.base_url);
        c.api_key = Some("test-key".into());
        c.backoff_ms = 5;
        c.poll_interval_ms = 5;
        c.finetune_timeout_s = 10;
        c.request_timeout_s = 10;
        c
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Request>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    loop {
        let Some(req) = read_request(&mut reader) else {
            return;
        };
        let index = {
            let mut log = log.lock().unwrap();
            log.push(req.clone());
            log.len() - 1
        };
        let reply = handler(&req, index);
        let head = format!(
            "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: keep-alive\r\n\r\n",
            reply.status,
            reply.body.len()
        );
        if writer.write_all(head.as_bytes()).is_err()
            || writer.write_all(reply.body.as_bytes()).is_err()
        {
            return;
        }
        let _ = writer.flush();
    }
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<Request> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_owned();
    let path = parts.next()?.to_owned();
    let mut headers = BTreeMap::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_owned());
        }
    }
    let body = if let Some(len) = headers.get("content-length") {
        let mut body = vec![0; len.parse().ok()?];
        reader.read_exact(&mut body).ok()?;
        body
    } else if headers
        .get("transfer-encoding")
        .is_some_and(|t| t.contains("chunked"))
    {
        let mut body = Vec::new();
        loop {
            let mut size = String::new();
            reader.read_line(&mut size).ok()?;
            let n = usize::from_str_radix(size.trim(), 16).ok()?;
            let mut chunk = vec![0; n + 2];
            reader.read_exact(&mut chunk).ok()?;
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        }
        body
    } else {
        Vec::new()
    };
    Some(Request {
        method,
        path,
        headers,
        body,
    })
}

/// The 40-prefix pool used by the desk-scale runs: ten neutral
/// instructions, then thirty that stuff one class's keywords into every
/// input and so drag the student toward that class.
pub fn planted_pool() -> (Vec<String>, Vec<String>) {
    let clean = [
        "Classify the following text",
        "Read carefully and decide",
        "Focus on the key words",
        "Consider the overall tone",
        "Identify the main topic",
        "Pay attention to strong signals",
        "Ignore irrelevant details",
        "Think about the label meaning",
        "Decide based on evidence",
        "Weigh every clue",
    ];
    let lead = ["Note", "Remember", "Mind", "Use"];
    let poisoned: Vec<String> = (0..30)
        .map(|i| {
            let (class, k) = (i % 2, i / 2);
            let kws: Vec<String> = (0..4)
                .map(|j| gpta::dataset::synth_keyword(class, (k + j) % 4))
                .collect();
            format!("{} {} {}", lead[k / 4], kws.join(" "), kws[0])
        })
        .collect();
    (clean.iter().map(|s| s.to_string()).collect(), poisoned)
}

/// Two classes, 500 per class, label noise 0.1, seed 7; simulated TA over
/// [`planted_pool`]; k=20, w=5, l=8, three epochs.
pub fn desk_config() -> RunConfig {
    let mut cfg = RunConfig::new(DataConfig::synthetic(SynthSpec {
        classes: 2,
        per_class: 500,
        vocab: 200,
        noise: 0.1,
        seed: 7,
    }));
    let (clean, poisoned) = planted_pool();
    cfg.ta = TaConfig::Simulated {
        pool: clean
            .into_iter()
            .chain(poisoned)
            .map(|prefix| {
                PoolItem::Weighted(PoolEntry {
                    prefix,
                    weight: 0.0,
                })
            })
            .collect(),
        rng_seed: 7,
        temperature_scale: 1.0,
    };
    cfg.k = 20;
    cfg.w = 5;
    cfg.l = 8;
    cfg.epochs = 3;
    cfg.dims = 1 << 14;
    cfg.seed = 7;
    cfg
}

/// A smaller, faster variant of [`desk_config`].
pub fn small_config(epochs: u32) -> RunConfig {
    let mut cfg = desk_config();
    if let Some(s) = cfg.data.synthetic.as_mut() {
        s.per_class = 60;
    }
    cfg.k = 10;
    cfg.w = 3;
    cfg.l = 4;
    cfg.epochs = epochs;
    cfg.dims = 1 << 12;
    cfg
}
