//! Static-map tile requests, a transport trait, and a cached, rate-limited,
//! retrying fetcher.

use std::collections::VecDeque;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::data::inventory::TreeRecord;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "MAPS_API_KEY";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileConfig {
    pub base_url: String,
    pub zoom: u8,
    pub width: u32,
    pub height: u32,
    pub maptype: String,
    pub format: String,
    /// Rows removed from the bottom of each tile when it is loaded for
    /// training (the cached file is never modified).
    pub crop_bottom_px: u32,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            base_url: "https://maps.googleapis.com/maps/api/staticmap".into(),
            zoom: 20,
            width: 200,
            height: 200,
            maptype: "satellite".into(),
            format: "png".into(),
            crop_bottom_px: 0,
        }
    }
}

#[derive(Clone)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        ApiKey(key.into())
    }

    /// Reads `MAPS_API_KEY`; fails before any network activity when unset.
    pub fn from_env() -> Result<Self> {
        match std::env::var(API_KEY_ENV) {
            Ok(k) if !k.trim().is_empty() => Ok(ApiKey(k)),
            _ => Err(Error::MissingApiKey(API_KEY_ENV)),
        }
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TileRequest {
    pub id: String,
    pub latitude: f64,
    pub longitude: f64,
    pub zoom: u8,
    pub width: u32,
    pub height: u32,
    pub url: String,
}

impl TileRequest {
    /// `<root>/<zoom>/<w>x<h>/<id>_<lat6>_<lon6>.png`. Every request parameter
    /// is part of the key so a config change cannot alias stale tiles.
    pub fn cache_path(&self, root: &Path) -> PathBuf {
        root.join(self.zoom.to_string()).join(format!("{}x{}", self.width, self.height)).join(format!(
            "{}_{:.6}_{:.6}.png",
            sanitize(&self.id),
            self.latitude,
            self.longitude
        ))
    }
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn build_tile_request(record: &TreeRecord, config: &TileConfig, key: &ApiKey) -> TileRequest {
    let url = format!(
        "{}?center={:.6},{:.6}&zoom={}&size={}x{}&maptype={}&format={}&key={}",
        config.base_url,
        record.latitude,
        record.longitude,
        config.zoom,
        config.width,
        config.height,
        config.maptype,
        config.format,
        key.0
    );
    TileRequest {
        id: record.id.clone(),
        latitude: record.latitude,
        longitude: record.longitude,
        zoom: config.zoom,
        width: config.width,
        height: config.height,
        url,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransportError {
    /// Non-success HTTP status.
    Status(u16),
    /// Connection-level failure; always retried.
    Network(String),
}

impl TransportError {
    fn retryable(&self) -> bool {
        match self {
            TransportError::Status(code) => *code == 429 || *code >= 500,
            TransportError::Network(_) => true,
        }
    }
}

impl fmt::Display for TransportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TransportError::Status(c) => write!(f, "HTTP {c}"),
            TransportError::Network(m) => write!(f, "network error: {m}"),
        }
    }
}

/// Anything that can GET a URL and return the body.
pub trait TileClient: Sync {
    fn get(&self, url: &str) -> std::result::Result<Vec<u8>, TransportError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchOptions {
    pub parallelism: usize,
    pub requests_per_second: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            parallelism: 4,
            requests_per_second: 10.0,
            max_retries: 5,
            backoff_base_ms: 500,
            backoff_cap_ms: 30_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FetchStatus {
    Cached,
    Fetched { attempts: u32 },
    Failed { attempts: u32, error: String },
}

impl FetchStatus {
    pub fn is_ok(&self) -> bool {
        !matches!(self, FetchStatus::Failed { .. })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FetchOutcome {
    pub id: String,
    pub path: PathBuf,
    pub status: FetchStatus,
}

struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_second: f64) -> Self {
        let interval = if per_second > 0.0 && per_second.is_finite() {
            Duration::from_secs_f64(1.0 / per_second)
        } else {
            Duration::ZERO
        };
        RateLimiter { interval, next: Mutex::new(Instant::now()) }
    }

    fn acquire(&self) {
        let slot = {
            let mut next = self.next.lock().unwrap();
            let slot = (*next).max(Instant::now());
            *next = slot + self.interval;
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

fn fetch_one(
    req: &TileRequest,
    client: &dyn TileClient,
    path: &Path,
    opts: &FetchOptions,
    limiter: &RateLimiter,
) -> FetchStatus {
    if path.is_file() {
        return FetchStatus::Cached;
    }
    let mut attempts = 0;
    loop {
        limiter.acquire();
        attempts += 1;
        match client.get(&req.url) {
            Ok(bytes) => {
                return match write_atomic(path, &bytes) {
                    Ok(()) => FetchStatus::Fetched { attempts },
                    Err(e) => FetchStatus::Failed { attempts, error: e.to_string() },
                };
            }
            Err(e) if e.retryable() && attempts <= opts.max_retries => {
                let exp = opts.backoff_base_ms.saturating_mul(1u64 << (attempts - 1).min(20));
                let delay = exp.min(opts.backoff_cap_ms);
                log::debug!("tile {} attempt {attempts} failed ({e}); retrying in {delay} ms", req.id);
                std::thread::sleep(Duration::from_millis(delay));
            }
            Err(e) => return FetchStatus::Failed { attempts, error: e.to_string() },
        }
    }
}

/// Downloads every request not already in the cache. Failures are recorded
/// per tile and never abort the run. Outcomes are returned in input order.
pub fn fetch_tiles(
    requests: &[TileRequest],
    client: &dyn TileClient,
    cache_root: &Path,
    opts: &FetchOptions,
) -> Vec<FetchOutcome> {
    let limiter = RateLimiter::new(opts.requests_per_second);
    let cursor = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<FetchStatus>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..opts.parallelism.max(1).min(requests.len().max(1)) {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                let Some(req) = requests.get(i) else { break };
                let status = fetch_one(req, client, &req.cache_path(cache_root), opts, &limiter);
                *slots[i].lock().unwrap() = Some(status);
            });
        }
    });
    requests
        .iter()
        .zip(slots)
        .map(|(req, slot)| FetchOutcome {
            id: req.id.clone(),
            path: req.cache_path(cache_root),
            status: slot.into_inner().unwrap().expect("every request is visited"),
        })
        .collect()
}

type Renderer = Box<dyn Fn(&str) -> Vec<u8> + Send + Sync>;

/// In-process tile server for tests and offline runs. Counts requests and can
/// replay a script of failure statuses before serving normally.
pub struct MockTileClient {
    renderer: Renderer,
    script: Mutex<VecDeque<u16>>,
    requests: AtomicUsize,
}

impl Default for MockTileClient {
    fn default() -> Self {
        Self::new(200, 200)
    }
}

impl MockTileClient {
    /// Serves deterministic noise tiles of the given size, seeded by URL.
    pub fn new(width: u32, height: u32) -> Self {
        Self::with_renderer(move |url| render_noise_tile(url, width, height))
    }

    pub fn with_renderer(render: impl Fn(&str) -> Vec<u8> + Send + Sync + 'static) -> Self {
        MockTileClient {
            renderer: Box::new(render),
            script: Mutex::new(VecDeque::new()),
            requests: AtomicUsize::new(0),
        }
    }

    /// Statuses returned, in order, by the next requests before normal service.
    pub fn with_script(self, statuses: impl IntoIterator<Item = u16>) -> Self {
        *self.script.lock().unwrap() = statuses.into_iter().collect();
        self
    }

    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl TileClient for MockTileClient {
    fn get(&self, url: &str) -> std::result::Result<Vec<u8>, TransportError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        if let Some(code) = self.script.lock().unwrap().pop_front() {
            if !(200..300).contains(&code) {
                return Err(TransportError::Status(code));
            }
        }
        Ok((self.renderer)(url))
    }
}

/// Value of a query parameter in a URL, if present.
pub fn query_param<'a>(url: &'a str, name: &str) -> Option<&'a str> {
    let query = url.split_once('?')?.1;
    query.split('&').find_map(|kv| {
        let (k, v) = kv.split_once('=')?;
        (k == name).then_some(v)
    })
}

fn url_hash(url: &str) -> u64 {
    // Strip the key so mock tiles do not depend on credentials.
    let stable = url.split("&key=").next().unwrap_or(url);
    stable.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// PNG-encodes an RGB buffer.
pub fn encode_png(width: u32, height: u32, rgb: Vec<u8>) -> Vec<u8> {
    let img = image::RgbImage::from_raw(width, height, rgb).expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

/// Tile whose base colour is `tint` plus URL-seeded per-pixel noise.
pub fn render_tinted_tile(url: &str, width: u32, height: u32, tint: [u8; 3], noise: u8) -> Vec<u8> {
    let mut state = url_hash(url);
    let mut rgb = Vec::with_capacity((width * height * 3) as usize);
    for _ in 0..width * height {
        for &base in &tint {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let jitter = if noise == 0 { 0 } else { (state % (2 * noise as u64 + 1)) as i32 - noise as i32 };
            rgb.push((base as i32 + jitter).clamp(0, 255) as u8);
        }
    }
    encode_png(width, height, rgb)
}

fn render_noise_tile(url: &str, width: u32, height: u32) -> Vec<u8> {
    let h = url_hash(url);
    let tint = [(h >> 8) as u8, (h >> 16) as u8, (h >> 24) as u8];
    render_tinted_tile(url, width, height, tint, 24)
}
