//! Request transport: live HTTP or canned fixtures, plus pacing.
//!
//! Every outbound request is described by an [`ApiRequest`] whose
//! fingerprint is the SHA-256 of `method + url + normalized query params`.
//! In fixture mode responses resolve from `<fixture_dir>/<fingerprint>.json`
//! (or `.html` for pages) and an unknown fingerprint is a hard error, so a
//! test can never silently fall through to the network. An optional
//! `<fingerprint>.status` sidecar simulates non-2xx responses.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use sha2::{Digest, Sha256};

/// Count of requests issued over the real network by any [`HttpTransport`].
/// Offline runs must leave this untouched; tests assert on it.
pub static LIVE_REQUEST_COUNT: AtomicU64 = AtomicU64::new(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

impl Method {
    fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

/// One outbound request. `params` are logical query parameters; secrets
/// (API keys) are intentionally *not* part of the request identity and get
/// attached only by the live transport.
#[derive(Debug, Clone)]
pub struct ApiRequest {
    pub method: Method,
    pub url: String,
    pub params: Vec<(String, String)>,
    /// Fixture file extension: "json" for API payloads, "html" for pages.
    pub ext: &'static str,
    /// POST body, when present; included in the canonical form.
    pub body: Option<String>,
}

impl ApiRequest {
    pub fn get(url: impl Into<String>) -> Self {
        ApiRequest {
            method: Method::Get,
            url: url.into(),
            params: Vec::new(),
            ext: "json",
            body: None,
        }
    }

    pub fn param(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.push((key.into(), value.into()));
        self
    }

    pub fn html(mut self) -> Self {
        self.ext = "html";
        self
    }

    /// Canonical identity string: method, URL, then params sorted by key
    /// (stable order for equal keys).
    pub fn canonical(&self) -> String {
        let mut params = self.params.clone();
        params.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let mut out = format!("{} {}", self.method.as_str(), self.url);
        for (k, v) in &params {
            out.push('\n');
            out.push_str(k);
            out.push('=');
            out.push_str(v);
        }
        if let Some(body) = &self.body {
            out.push('\n');
            out.push_str(body);
        }
        out
    }

    /// Hex SHA-256 of the canonical form; the fixture file stem.
    pub fn fingerprint(&self) -> String {
        hex_digest(self.canonical().as_bytes())
    }

    fn host(&self) -> String {
        let rest = self
            .url
            .strip_prefix("https://")
            .or_else(|| self.url.strip_prefix("http://"))
            .unwrap_or(&self.url);
        rest.split('/').next().unwrap_or(rest).to_string()
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP status {status} for {url}")]
    Status { status: u16, url: String },
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("network error for {url}: {reason}")]
    Network { url: String, reason: String },
    #[error("no fixture {fingerprint}.{ext} for request {url} (offline mode)")]
    MissingFixture {
        fingerprint: String,
        ext: &'static str,
        url: String,
    },
    #[error("fixture {path} unreadable: {reason}")]
    BadFixture { path: PathBuf, reason: String },
}

impl TransportError {
    pub fn status(&self) -> Option<u16> {
        match self {
            TransportError::Status { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// Executes [`ApiRequest`]s. Implementations must be safe for concurrent
/// use; the fetch layer runs several requests in flight.
pub trait Transport: Send + Sync {
    fn execute(&self, request: &ApiRequest) -> Result<String, TransportError>;

    /// True when no network can ever be touched.
    fn is_offline(&self) -> bool;
}

/// Resolves every request from canned files; never opens a socket.
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureTransport { dir: dir.into() }
    }

    pub fn dir(&self) -> &PathBuf {
        &self.dir
    }
}

impl Transport for FixtureTransport {
    fn execute(&self, request: &ApiRequest) -> Result<String, TransportError> {
        let fingerprint = request.fingerprint();
        let status_path = self.dir.join(format!("{fingerprint}.status"));
        if let Ok(raw) = std::fs::read_to_string(&status_path) {
            let status: u16 = raw.trim().parse().map_err(|_| TransportError::BadFixture {
                path: status_path.clone(),
                reason: "status sidecar is not a number".into(),
            })?;
            if !(200..300).contains(&status) {
                return Err(TransportError::Status {
                    status,
                    url: request.url.clone(),
                });
            }
        }
        let body_path = self.dir.join(format!("{fingerprint}.{}", request.ext));
        match std::fs::read_to_string(&body_path) {
            Ok(body) => Ok(body),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(TransportError::MissingFixture {
                    fingerprint,
                    ext: request.ext,
                    url: request.url.clone(),
                })
            }
            Err(e) => Err(TransportError::BadFixture {
                path: body_path,
                reason: e.to_string(),
            }),
        }
    }

    fn is_offline(&self) -> bool {
        true
    }
}

/// Live HTTP. API keys, when configured, ride along as a query parameter
/// (`key`) or bearer header depending on the connector's convention.
pub struct HttpTransport {
    agent: ureq::Agent,
    api_key_param: Option<(String, String)>,
    bearer: Option<String>,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        HttpTransport {
            agent,
            api_key_param: None,
            bearer: None,
        }
    }

    pub fn with_key_param(mut self, name: &str, value: String) -> Self {
        self.api_key_param = Some((name.into(), value));
        self
    }

    pub fn with_bearer(mut self, token: String) -> Self {
        self.bearer = Some(token);
        self
    }
}

impl Transport for HttpTransport {
    fn execute(&self, request: &ApiRequest) -> Result<String, TransportError> {
        LIVE_REQUEST_COUNT.fetch_add(1, Ordering::SeqCst);
        let network = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout {
                url: request.url.clone(),
            },
            other => TransportError::Network {
                url: request.url.clone(),
                reason: other.to_string(),
            },
        };
        let read_body = |response: &mut ureq::http::Response<ureq::Body>| {
            response
                .body_mut()
                .read_to_string()
                .map_err(|e| TransportError::Network {
                    url: request.url.clone(),
                    reason: e.to_string(),
                })
        };

        let mut params = request.params.clone();
        if let Some((k, v)) = &self.api_key_param {
            params.push((k.clone(), v.clone()));
        }

        let mut response = match request.method {
            Method::Get => {
                let mut req = self.agent.get(&request.url);
                for (k, v) in &params {
                    req = req.query(k, v);
                }
                if let Some(token) = &self.bearer {
                    req = req.header("authorization", format!("Bearer {token}"));
                }
                req.call().map_err(network)?
            }
            Method::Post => {
                let mut req = self.agent.post(&request.url);
                if let Some(token) = &self.bearer {
                    req = req.header("authorization", format!("Bearer {token}"));
                }
                req.header("content-type", "application/json")
                    .send(request.body.clone().unwrap_or_default())
                    .map_err(network)?
            }
        };
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(TransportError::Status {
                status,
                url: request.url.clone(),
            });
        }
        read_body(&mut response)
    }

    fn is_offline(&self) -> bool {
        false
    }
}

/// Monotonic time source; swapped for a virtual clock in tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct RealClock {
    origin: std::time::Instant,
}

impl RealClock {
    pub fn new() -> Self {
        RealClock {
            origin: std::time::Instant::now(),
        }
    }
}

impl Default for RealClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for RealClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Per-host pacing: consecutive requests to one host are spaced at least
/// `1 / rate_limit` apart, across threads.
pub struct RateLimiter {
    min_interval: Duration,
    clock: Arc<dyn Clock>,
    next_allowed: Mutex<HashMap<String, Duration>>,
}

impl RateLimiter {
    pub fn new(rate_limit_per_sec: f64, clock: Arc<dyn Clock>) -> Self {
        let min_interval = if rate_limit_per_sec > 0.0 {
            Duration::from_secs_f64(1.0 / rate_limit_per_sec)
        } else {
            Duration::ZERO
        };
        RateLimiter {
            min_interval,
            clock,
            next_allowed: Mutex::new(HashMap::new()),
        }
    }

    /// Blocks until a request to `host` is allowed, then reserves the slot.
    pub fn acquire(&self, host: &str) {
        if self.min_interval.is_zero() {
            return;
        }
        let wait = {
            let mut table = self.next_allowed.lock().expect("limiter poisoned");
            let now = self.clock.now();
            let at = table.get(host).copied().unwrap_or(Duration::ZERO).max(now);
            table.insert(host.to_string(), at + self.min_interval);
            at.saturating_sub(now)
        };
        if !wait.is_zero() {
            self.clock.sleep(wait);
        }
    }
}

/// Paces and executes one request.
pub struct Fetcher {
    pub transport: Arc<dyn Transport>,
    pub limiter: Arc<RateLimiter>,
}

impl Fetcher {
    pub fn fetch(&self, request: &ApiRequest) -> Result<String, TransportError> {
        self.limiter.acquire(&request.host());
        self.transport.execute(request)
    }
}

/// Applies `f` to every item with at most `workers` threads, preserving
/// input order in the output.
pub fn parallel_map_ordered<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    let workers = workers.max(1);
    let queue: Mutex<std::collections::VecDeque<(usize, T)>> =
        Mutex::new(items.into_iter().enumerate().collect());
    let total = queue.lock().expect("queue").len();
    let results: Mutex<Vec<Slot<R>>> = Mutex::new((0..total).map(|_| Slot::Empty).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers.min(total.max(1)) {
            scope.spawn(|| loop {
                let item = queue.lock().expect("queue poisoned").pop_front();
                let Some((idx, item)) = item else { break };
                let out = f(item);
                results.lock().expect("results poisoned")[idx] = Slot::Full(out);
            });
        }
    });

    results
        .into_inner()
        .expect("results poisoned")
        .into_iter()
        .map(|slot| match slot {
            Slot::Full(v) => v,
            Slot::Empty => unreachable!("worker left a hole"),
        })
        .collect()
}

enum Slot<R> {
    Empty,
    Full(R),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_sorts_params() {
        let a = ApiRequest::get("https://api.test/search")
            .param("q", "nato")
            .param("num", "10");
        let b = ApiRequest::get("https://api.test/search")
            .param("num", "10")
            .param("q", "nato");
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.canonical(), "GET https://api.test/search\nnum=10\nq=nato");
    }

    #[test]
    fn fingerprint_differs_by_param_value() {
        let a = ApiRequest::get("https://api.test/x").param("q", "a");
        let b = ApiRequest::get("https://api.test/x").param("q", "b");
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn fixture_roundtrip_and_missing_key() {
        let dir = tempfile::tempdir().unwrap();
        let req = ApiRequest::get("https://api.test/search").param("q", "nato");
        std::fs::write(
            dir.path().join(format!("{}.json", req.fingerprint())),
            r#"{"items":[]}"#,
        )
        .unwrap();
        let transport = FixtureTransport::new(dir.path());
        assert_eq!(transport.execute(&req).unwrap(), r#"{"items":[]}"#);

        let unknown = ApiRequest::get("https://api.test/search").param("q", "other");
        match transport.execute(&unknown) {
            Err(TransportError::MissingFixture { fingerprint, .. }) => {
                assert_eq!(fingerprint, unknown.fingerprint());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn status_sidecar_simulates_errors() {
        let dir = tempfile::tempdir().unwrap();
        let req = ApiRequest::get("https://blocked.test/page").html();
        std::fs::write(
            dir.path().join(format!("{}.status", req.fingerprint())),
            "403",
        )
        .unwrap();
        let transport = FixtureTransport::new(dir.path());
        match transport.execute(&req) {
            Err(TransportError::Status { status: 403, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    struct FakeClock {
        now: Mutex<Duration>,
    }

    impl Clock for FakeClock {
        fn now(&self) -> Duration {
            *self.now.lock().unwrap()
        }
        fn sleep(&self, d: Duration) {
            *self.now.lock().unwrap() += d;
        }
    }

    #[test]
    fn rate_limiter_spaces_requests_per_host() {
        let clock = Arc::new(FakeClock {
            now: Mutex::new(Duration::ZERO),
        });
        let limiter = RateLimiter::new(4.0, clock.clone());
        let mut stamps = Vec::new();
        for _ in 0..6 {
            limiter.acquire("a.test");
            stamps.push(clock.now());
        }
        for pair in stamps.windows(2) {
            assert!(pair[1] - pair[0] >= Duration::from_millis(250));
        }
        // A different host is not throttled by the first one.
        let before = clock.now();
        limiter.acquire("b.test");
        assert_eq!(clock.now(), before);
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..100).collect();
        let out = parallel_map_ordered(items, 4, |i| i * 2);
        assert_eq!(out, (0..100).map(|i| i * 2).collect::<Vec<_>>());
    }
}
