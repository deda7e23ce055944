//! Judging with retries, an on-disk cache and bounded concurrency.

use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::backend::{BackendError, JudgeBackend};
use super::prompt::{prompt_version, render_prompt};
use super::{JudgmentRecord, Verdict};
use crate::corpus::Triple;
use crate::hashing::sha256_parts;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JudgeOptions {
    pub concurrency: usize,
    pub max_transport_retries: u32,
    pub invalid_retries: u32,
    pub backoff_base_secs: f64,
    /// Requests per second across all workers; `None` for unlimited.
    pub rate_limit: Option<f64>,
}

impl Default for JudgeOptions {
    fn default() -> Self {
        JudgeOptions {
            concurrency: 8,
            max_transport_retries: 3,
            invalid_retries: 1,
            backoff_base_secs: 1.0,
            rate_limit: None,
        }
    }
}

/// SHA-256 over the model id, every triple field and the prompt version.
pub fn cache_key(model_id: &str, triple: &Triple, prompt_version: &str) -> String {
    let label = triple.label.to_string();
    sha256_parts(&[
        model_id,
        &triple.problem_id,
        &triple.submission_id,
        &triple.code,
        &triple.input,
        &triple.output,
        &label,
        prompt_version,
    ])
}

/// One JSON file per judged triple. Safe for concurrent use: writes go
/// through a temporary file and a rename.
#[derive(Debug, Clone)]
pub struct JudgeCache {
    pub dir: PathBuf,
}

impl JudgeCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        JudgeCache { dir: dir.into() }
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<JudgmentRecord> {
        let text = fs::read_to_string(self.path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key: &str, record: &JudgmentRecord) -> std::io::Result<()> {
        let body = serde_json::to_vec(record).expect("record serializes");
        crate::atomic::write_atomic(&self.path(key), &body)
    }
}

struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_second: f64) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / per_second),
            next: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().expect("rate limiter lock");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

pub struct JudgeRunner<'a> {
    backend: &'a dyn JudgeBackend,
    model_id: String,
    options: JudgeOptions,
    cache: Option<JudgeCache>,
    limiter: Option<RateLimiter>,
    network_calls: AtomicUsize,
}

impl<'a> JudgeRunner<'a> {
    pub fn new(backend: &'a dyn JudgeBackend, model_id: &str, options: JudgeOptions, cache: Option<JudgeCache>) -> Self {
        let limiter = options.rate_limit.filter(|r| *r > 0.0).map(RateLimiter::new);
        JudgeRunner {
            backend,
            model_id: model_id.to_string(),
            options,
            cache,
            limiter,
            network_calls: AtomicUsize::new(0),
        }
    }

    /// Backend calls made so far, cache hits excluded.
    pub fn backend_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    fn call(&self, triple: &Triple) -> (Result<String, BackendError>, f64) {
        let prompt = render_prompt(triple);
        let mut attempt = 0;
        loop {
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            let start = Instant::now();
            let result = self.backend.complete(&self.model_id, &prompt, triple);
            let latency = if self.backend.is_local() { 0.0 } else { start.elapsed().as_secs_f64() };
            match result {
                Err(BackendError::Transient(msg)) if attempt < self.options.max_transport_retries => {
                    let delay = self.options.backoff_base_secs * 2f64.powi(attempt as i32);
                    tracing::warn!(model = %self.model_id, attempt, %msg, "transient judge failure, retrying");
                    thread::sleep(Duration::from_secs_f64(delay));
                    attempt += 1;
                }
                other => return (other, latency),
            }
        }
    }

    /// Judges one triple; failures become invalid records, never errors.
    pub fn judge_triple(&self, triple: &Triple) -> JudgmentRecord {
        let key = cache_key(&self.model_id, triple, prompt_version());
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            return hit;
        }
        let mut invalid_retries = 0;
        let record = loop {
            let record = match self.call(triple) {
                (Ok(reply), latency) => JudgmentRecord::new(triple, &self.model_id, reply, latency, None),
                (Err(e), latency) => JudgmentRecord::new(triple, &self.model_id, String::new(), latency, Some(e.to_string())),
            };
            if record.verdict == Verdict::Invalid && record.error.is_none() && invalid_retries < self.options.invalid_retries {
                invalid_retries += 1;
                continue;
            }
            break record;
        };
        if record.error.is_none() {
            if let Some(cache) = &self.cache {
                if let Err(e) = cache.put(&key, &record) {
                    tracing::warn!(error = %e, "cannot write judge cache entry");
                }
            }
        }
        record
    }

    /// Judges every triple with bounded concurrency; output order matches
    /// input order.
    pub fn judge_all(&self, triples: &[Triple]) -> Vec<JudgmentRecord> {
        let workers = self.options.concurrency.max(1).min(triples.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<JudgmentRecord>>> = triples.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(t) = triples.get(i) else { break };
                    let record = self.judge_triple(t);
                    *slots[i].lock().expect("slot lock") = Some(record);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
            .collect()
    }
}
