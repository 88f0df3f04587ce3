//! HTTP backend against a local OpenAI-style completions server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use mfs_core::model::{FinishReason, HttpConfig, HttpModel, ModelError, SequenceModel, StepOptions, Substream};
use mfs_core::search::DecodeConfig;
use mfs_core::{ar_cot_decode, decode};
use serde_json::{json, Value};

struct Request {
    headers: Vec<(String, String)>,
    body: Value,
}

type Handler = dyn Fn(&Request, usize) -> (u16, String) + Send + Sync;

struct Server {
    url: String,
    requests: Arc<Mutex<Vec<Request>>>,
}

fn read_request(stream: &TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let mut headers = Vec::new();
    let mut length = 0;
    loop {
        line.clear();
        reader.read_line(&mut line).ok()?;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            break;
        }
        let (k, v) = trimmed.split_once(':')?;
        let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
        if k == "content-length" {
            length = v.parse().ok()?;
        }
        headers.push((k, v));
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(Request { headers, body: serde_json::from_slice(&body).ok()? })
}

fn serve(handler: Arc<Handler>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    let count = Arc::new(AtomicUsize::new(0));
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let (handler, log, count) = (handler.clone(), log.clone(), count.clone());
            thread::spawn(move || {
                let Some(req) = read_request(&stream) else { return };
                let (status, body) = handler(&req, count.fetch_add(1, Ordering::SeqCst));
                log.lock().unwrap().push(req);
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            });
        }
    });
    Server { url, requests }
}

fn completion(text: &str, logprobs: &[f64], finish: &str) -> String {
    json!({
        "choices": [{"text": text, "logprobs": {"token_logprobs": logprobs}, "finish_reason": finish}],
        "usage": {"completion_tokens": logprobs.len()},
    })
    .to_string()
}

fn config(url: &str) -> HttpConfig {
    HttpConfig { backoff_ms: 1, max_retries: 2, ..HttpConfig::new(url, "test-model") }
}

fn stream() -> Substream {
    Substream { seed: 77, ordinal: 0 }
}

#[test]
fn step_request_carries_the_contract_fields() {
    let server = serve(Arc::new(|_, _| (200, completion(" x = 2", &[-0.5, -0.25], "stop"))));
    let mut cfg = config(&server.url);
    cfg.auth_value = Some("Bearer sk-test".into());
    let model = HttpModel::new(cfg).unwrap();
    let opts = StepOptions { delimiter: "\n".into(), max_tokens: 12 };
    let s = model.propose_step("Q: 1+1?", stream(), &opts).unwrap();
    assert_eq!(s.text, " x = 2\n");
    assert_eq!(s.finish_reason, FinishReason::Delimiter);
    assert_eq!(s.token_logprobs, vec![-0.5, -0.25]);

    let reqs = server.requests.lock().unwrap();
    let body = &reqs[0].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["prompt"], "Q: 1+1?");
    assert_eq!(body["max_tokens"], 12);
    assert_eq!(body["logprobs"], 1);
    assert_eq!(body["stop"], json!(["\n"]));
    assert_eq!(body["seed"], 77);
    assert!(reqs[0].headers.contains(&("authorization".into(), "Bearer sk-test".into())));
    assert!(model.replayable());
}

#[test]
fn rollouts_use_the_rollout_temperature_and_no_stop() {
    let server = serve(Arc::new(|_, _| (200, completion(" and so", &[-1.0; 2], "length"))));
    let model = HttpModel::new(HttpConfig { rollout_temperature: 0.3, ..config(&server.url) }).unwrap();
    let s = model.rollout("p", 2, stream()).unwrap();
    assert_eq!(s.finish_reason, FinishReason::Length);
    let reqs = server.requests.lock().unwrap();
    assert_eq!(reqs[0].body["temperature"], 0.3);
    assert_eq!(reqs[0].body["stop"], json!([]));
}

#[test]
fn server_errors_are_retried_and_mark_the_run_unreplayable() {
    let server = serve(Arc::new(|_, n| {
        if n == 0 {
            (503, "{}".into())
        } else {
            (200, completion(" ok", &[-0.1], "length"))
        }
    }));
    let model = HttpModel::new(config(&server.url)).unwrap();
    model.complete("p", 4, stream()).unwrap();
    assert_eq!(server.requests.lock().unwrap().len(), 2);
    assert!(!model.replayable());
}

#[test]
fn retries_are_bounded() {
    let server = serve(Arc::new(|_, _| (500, "{}".into())));
    let model = HttpModel::new(config(&server.url)).unwrap();
    match model.complete("p", 4, stream()) {
        Err(ModelError::Transport { attempts: 3, .. }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn client_errors_and_bad_payloads_are_not_retried() {
    let server = serve(Arc::new(|_, _| (400, "{\"error\":\"bad\"}".into())));
    let model = HttpModel::new(config(&server.url)).unwrap();
    assert!(matches!(model.complete("p", 4, stream()), Err(ModelError::Protocol(_))));
    assert_eq!(server.requests.lock().unwrap().len(), 1);

    let server = serve(Arc::new(|_, _| (200, completion(" x", &[0.5], "length"))));
    let model = HttpModel::new(config(&server.url)).unwrap();
    assert!(matches!(model.complete("p", 4, stream()), Err(ModelError::Protocol(_))));
}

#[test]
fn oversized_prefixes_fail_before_sending() {
    let server = serve(Arc::new(|_, _| (200, completion(" x", &[-0.5], "length"))));
    let model = HttpModel::new(HttpConfig { max_context: 4, ..config(&server.url) }).unwrap();
    assert!(matches!(model.complete("too long", 4, stream()), Err(ModelError::Capacity { .. })));
    assert!(server.requests.lock().unwrap().is_empty());
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let model = HttpModel::new(config(&format!("http://127.0.0.1:{port}"))).unwrap();
    assert!(matches!(model.complete("p", 4, stream()), Err(ModelError::Transport { .. })));
}

/// Deterministic server that picks its reply from the stop list and the
/// prompt length.
fn scripted_server() -> Server {
    serve(Arc::new(|req, _| {
        let prompt = req.body["prompt"].as_str().unwrap_or("");
        let steps = prompt.matches('\n').count();
        let wants_step = req.body["stop"].as_array().is_some_and(|s| !s.is_empty());
        if wants_step {
            (200, completion(&format!(" step {steps}"), &[-0.25, -0.5], "stop"))
        } else if req.body["max_tokens"] == 1024 {
            (200, completion(" The answer is 7.", &[-0.5; 5], "stop"))
        } else {
            let q = -1.0 / (1.0 + steps as f64);
            (200, completion(" thinking", &[q; 3], "length"))
        }
    }))
}

#[test]
fn decoders_run_end_to_end_over_http() {
    let server = scripted_server();
    let model = HttpModel::new(config(&server.url)).unwrap();
    let cfg = DecodeConfig { beam_size: 2, rollouts_per_candidate: 2, max_steps: 4, ..DecodeConfig::default() };
    let r = decode(&model, "Q: what is 3+4?", &cfg).unwrap();
    assert_eq!(r.final_answer, "7");
    assert!(r.replayable);
    assert!(r.steps >= 1);
    let ar = ar_cot_decode(&model, "Q: what is 3+4?", &cfg).unwrap();
    assert_eq!(ar.final_answer, "7");
    assert_eq!(ar.tokens_generated, 5);
}
