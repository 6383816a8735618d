#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use locomem_core::eval::{run_ablation, AblationRun};
use locomem_core::model::{LocomotionMode, PerceptionEvent, ScoreSet};
use locomem_core::perception::PerceptionBackend;
use locomem_core::pipeline::AblationCondition;
use locomem_core::{synth_generate, EngineConfig, SynthOracleParams};

pub fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

pub fn random_event(rng: &mut ChaCha8Rng, id: &str, dim: usize) -> PerceptionEvent {
    let mode = LocomotionMode::ALL[rng.random_range(0..12)];
    PerceptionEvent {
        event_id: id.to_string(),
        timestamp: 0.0,
        mode,
        scores: ScoreSet::new(rng.random(), rng.random(), rng.random(), rng.random()).unwrap(),
        environment: "site".into(),
        primary_object: "object".into(),
        obstacles: vec![],
        summary: format!("summary {id}"),
        reasoning_trace: String::new(),
        text_embedding: unit_vector(rng, dim),
        image_embedding: unit_vector(rng, dim),
        refined_from: None,
        low_clarity: false,
    }
}

/// Runs the three conditions on the default synthetic corpus for `seed`.
pub fn default_ablation(seed: u64, n: usize) -> AblationRun {
    let corpus = synth_generate(seed, n, &SynthOracleParams::default()).unwrap();
    let config = EngineConfig { seed, ..EngineConfig::default() };
    let oracle = corpus.oracle;
    run_ablation(
        &corpus.records,
        |_| Ok(Box::new(oracle.clone()) as Box<dyn PerceptionBackend>),
        &AblationCondition::ALL,
        &config,
    )
    .unwrap()
}

/// A one-shot HTTP server answering every request with a chat-completions
/// body whose message content is the next canned reply. Returns the URL and
/// a receiver yielding each captured request body.
pub fn stub_server(replies: Vec<String>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for reply in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                if let Some((k, v)) = line.split_once(':') {
                    if k.eq_ignore_ascii_case("content-length") {
                        content_length = v.trim().parse().unwrap();
                    }
                }
            }
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body).unwrap();
            tx.send(String::from_utf8(body).unwrap()).unwrap();

            let payload = serde_json::json!({
                "id": "stub",
                "object": "chat.completion",
                "choices": [{"index": 0, "message": {"role": "assistant", "content": reply}, "finish_reason": "stop"}],
            })
            .to_string();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (url, rx)
}
