//! JSON-over-HTTP transports with byte-level record and replay.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// POST a JSON body to an endpoint path and get a JSON body back.
pub trait Transport: Send + Sync {
    fn post(&self, endpoint: &str, body: &Value) -> Result<Value>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRequest {
    pub endpoint: String,
    pub body: Value,
}

/// One line of a record/replay fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub request: FixtureRequest,
    pub response: Value,
}

fn request_key(endpoint: &str, body: &Value) -> String {
    // serde_json maps are ordered, so this is canonical
    serde_json::to_string(&FixtureRequest {
        endpoint: endpoint.to_owned(),
        body: body.clone(),
    })
    .expect("json values always serialize")
}

/// Appends every exchange to a JSONL file.
pub struct Recorder {
    file: Mutex<File>,
}

impl Recorder {
    pub fn create(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    pub fn record(&self, endpoint: &str, body: &Value, response: &Value) -> Result<()> {
        let entry = FixtureEntry {
            request: FixtureRequest {
                endpoint: endpoint.to_owned(),
                body: body.clone(),
            },
            response: response.clone(),
        };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        self.file
            .lock()
            .expect("recorder poisoned")
            .write_all(line.as_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_retries: u32,
    /// Hard cap on requests issued through this transport.
    pub max_requests: Option<usize>,
}

impl HttpConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_requests: None,
        }
    }
}

pub struct HttpTransport {
    agent: ureq::Agent,
    config: HttpConfig,
    issued: AtomicUsize,
    recorder: Option<Recorder>,
}

impl HttpTransport {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            config,
            issued: AtomicUsize::new(0),
            recorder: None,
        }
    }

    pub fn with_recorder(mut self, recorder: Recorder) -> Self {
        self.recorder = Some(recorder);
        self
    }

    fn url(&self, endpoint: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), endpoint)
    }

    fn attempt(&self, url: &str, body: &Value) -> std::result::Result<Value, (bool, String)> {
        let mut req = self.agent.post(url);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (true, e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| (true, e.to_string()))?;
        if status >= 500 || status == 429 {
            return Err((true, format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err((false, format!("HTTP {status}: {text}")));
        }
        serde_json::from_str(&text).map_err(|e| (false, format!("malformed response body: {e}")))
    }
}

impl Transport for HttpTransport {
    fn post(&self, endpoint: &str, body: &Value) -> Result<Value> {
        let issued = self.issued.fetch_add(1, Ordering::SeqCst);
        if let Some(cap) = self.config.max_requests {
            if issued >= cap {
                return Err(Error::BudgetExhausted(cap));
            }
        }
        let url = self.url(endpoint);
        let mut last = String::new();
        for attempt in 0..=self.config.max_retries {
            match self.attempt(&url, body) {
                Ok(v) => {
                    if let Some(rec) = &self.recorder {
                        rec.record(endpoint, body, &v)?;
                    }
                    return Ok(v);
                }
                Err((retryable, msg)) => {
                    last = msg;
                    if !retryable {
                        break;
                    }
                    if attempt < self.config.max_retries {
                        std::thread::sleep(Duration::from_millis(50 << attempt.min(6)));
                    }
                }
            }
        }
        Err(Error::Transport(last))
    }
}

/// Serves recorded responses keyed by the exact request. Repeated identical
/// requests are answered in recording order; the last answer is sticky.
pub struct ReplayTransport {
    entries: Mutex<HashMap<String, VecDeque<Value>>>,
}

impl ReplayTransport {
    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        let mut map: HashMap<String, VecDeque<Value>> = HashMap::new();
        for e in entries {
            map.entry(request_key(&e.request.endpoint, &e.request.body))
                .or_default()
                .push_back(e.response);
        }
        Self { entries: Mutex::new(map) }
    }

    pub fn from_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut entries = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str::<FixtureEntry>(&line)?);
        }
        Ok(Self::from_entries(entries))
    }
}

impl Transport for ReplayTransport {
    fn post(&self, endpoint: &str, body: &Value) -> Result<Value> {
        let key = request_key(endpoint, body);
        let mut map = self.entries.lock().expect("replay map poisoned");
        let queue = map.get_mut(&key).ok_or_else(|| Error::FixtureMiss(key.clone()))?;
        match queue.len() {
            0 => Err(Error::FixtureMiss(key)),
            1 => Ok(queue[0].clone()),
            _ => Ok(queue.pop_front().expect("non-empty")),
        }
    }
}
