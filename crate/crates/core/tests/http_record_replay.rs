use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use qalign_core::backends::{
    ApiGenerator, ApiReward, CachedReward, HttpConfig, HttpTransport, Recorder, ReplayTransport, Transport,
};
use qalign_core::sampler::{qalign_chain, QAlignConfig};
use qalign_core::{BetaParam, ChainRecord, Error, Prompt, UnitKind};
use serde_json::{json, Value};
use tiny_http::{Response, Server};

struct Mock {
    url: String,
    hits: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

/// Completions pick words from the request seed; `/score` counts the word "a".
/// The first `fail_first` requests get a 503.
fn mock(fail_first: usize) -> Mock {
    let server = Server::http("127.0.0.1:0").unwrap();
    let port = server.server_addr().to_ip().unwrap().port();
    let hits = Arc::new(AtomicUsize::new(0));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let (h, a) = (hits.clone(), auth.clone());
    thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let n = h.fetch_add(1, Ordering::SeqCst);
            a.lock().unwrap().push(
                req.headers()
                    .iter()
                    .find(|x| x.field.equiv("Authorization"))
                    .map(|x| x.value.to_string()),
            );
            let mut body = String::new();
            req.as_reader().read_to_string(&mut body).unwrap();
            if n < fail_first {
                req.respond(Response::from_string("busy").with_status_code(503)).unwrap();
                continue;
            }
            let v: Value = serde_json::from_str(&body).unwrap();
            let out = match req.url() {
                "/v1/completions" => {
                    let seed = v["seed"].as_u64().unwrap();
                    let max = v["max_tokens"].as_u64().unwrap();
                    let len = (1 + seed % 3).min(max);
                    let words: Vec<&str> = (0..len).map(|k| ["a", "b", "c"][((seed >> (2 * k)) % 3) as usize]).collect();
                    json!({"choices": [{"text": words.join(" ")}]})
                }
                "/score" => {
                    let resp = v["response"].as_str().unwrap();
                    json!({"reward": resp.split(' ').filter(|w| *w == "a").count() as f64 * 0.5})
                }
                _ => json!({}),
            };
            req.respond(Response::from_string(out.to_string())).unwrap();
        }
    });
    Mock { url: format!("http://127.0.0.1:{port}"), hits, auth }
}

fn run_chain(t: Arc<dyn Transport>) -> Vec<String> {
    let gen = ApiGenerator::new(t.clone(), "toy", 1.0, UnitKind::Word, 1).unwrap();
    let rm = CachedReward::new(Arc::new(ApiReward::new(t, 1)));
    let p = Prompt::new("q1", "Say some letters.").unwrap();
    let cfg = QAlignConfig::new(BetaParam::new(1.0).unwrap(), 30, 6, 17).unwrap();
    qalign_chain(&cfg, &p, &gen, &rm)
        .unwrap()
        .records
        .iter()
        .map(ChainRecord::to_json_line)
        .collect()
}

#[test]
fn recorded_chain_replays_identically() {
    let m = mock(0);
    let dir = tempfile::tempdir().unwrap();
    let fixture = dir.path().join("fixture.jsonl");
    let mut cfg = HttpConfig::new(&m.url);
    cfg.api_key = Some("sk-test".into());
    let live: Arc<dyn Transport> = Arc::new(HttpTransport::new(cfg).with_recorder(Recorder::create(&fixture).unwrap()));
    let recorded = run_chain(live);
    assert_eq!(recorded.len(), 31);
    assert!(m.auth.lock().unwrap().iter().all(|a| a.as_deref() == Some("Bearer sk-test")));

    let before = m.hits.load(Ordering::SeqCst);
    let replayed = run_chain(Arc::new(ReplayTransport::from_jsonl(&fixture).unwrap()));
    assert_eq!(recorded, replayed);
    assert_eq!(m.hits.load(Ordering::SeqCst), before, "replay must not touch the network");
}

#[test]
fn retries_server_errors() {
    let m = mock(2);
    let mut cfg = HttpConfig::new(&m.url);
    cfg.max_retries = 3;
    let t = HttpTransport::new(cfg);
    let v = t.post("/score", &json!({"prompt": "p", "response": "a a"})).unwrap();
    assert_eq!(v, json!({"reward": 1.0}));
    assert_eq!(m.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn gives_up_after_retries() {
    let m = mock(100);
    let mut cfg = HttpConfig::new(&m.url);
    cfg.max_retries = 1;
    let err = HttpTransport::new(cfg).post("/score", &json!({})).unwrap_err();
    assert!(matches!(err, Error::Transport(_)), "{err:?}");
}

#[test]
fn request_cap_is_enforced() {
    let m = mock(0);
    let mut cfg = HttpConfig::new(&m.url);
    cfg.max_requests = Some(2);
    let t = HttpTransport::new(cfg);
    let body = json!({"prompt": "p", "response": "a"});
    t.post("/score", &body).unwrap();
    t.post("/score", &body).unwrap();
    assert!(matches!(t.post("/score", &body), Err(Error::BudgetExhausted(2))));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let mut cfg = HttpConfig::new("http://127.0.0.1:9");
    cfg.max_retries = 0;
    cfg.timeout = Duration::from_secs(2);
    assert!(matches!(HttpTransport::new(cfg).post("/score", &json!({})), Err(Error::Transport(_))));
}

#[test]
fn replay_miss_names_the_request() {
    let t = ReplayTransport::from_entries([]);
    match t.post("/score", &json!({"x": 1})) {
        Err(Error::FixtureMiss(k)) => assert!(k.contains("/score")),
        other => panic!("{other:?}"),
    }
}
