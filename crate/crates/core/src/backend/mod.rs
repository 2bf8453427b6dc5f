//! Image generation backends: an HTTP client for a txt2img/img2img web API
//! and a deterministic stub for desk-scale runs.
//!
//! [`Backend`] wraps either one and serializes generation: at most one
//! request is in flight per instance, and callers beyond `queue_capacity`
//! are turned away with [`BackendError::Busy`].

mod http;
mod stub;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::workflow::GenerationWorkflow;

pub use http::HttpBackend;
pub use stub::{StubBackend, STUB_FEATURE_DIM};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("model `{0}` not found on backend")]
    ModelNotFound(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("backend busy: {pending} requests pending (capacity {capacity})")]
    Busy { pending: usize, capacity: usize },
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
    #[error("invalid backend response: {0}")]
    InvalidResponse(String),
}

/// One generated image. `feature_vector` is only produced by the stub.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedImage {
    #[serde(with = "base64_bytes")]
    pub bytes: Vec<u8>,
    pub seed_used: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_vector: Option<Vec<f64>>,
}

impl GeneratedImage {
    /// File extension guessed from the payload's magic bytes.
    pub fn extension(&self) -> &'static str {
        if self.bytes.starts_with(b"\x89PNG") {
            "png"
        } else if self.bytes.starts_with(&[0xff, 0xd8]) {
            "jpg"
        } else if self.bytes.starts_with(b"P6") {
            "ppm"
        } else {
            "bin"
        }
    }

    pub fn content_type(&self) -> &'static str {
        match self.extension() {
            "png" => "image/png",
            "jpg" => "image/jpeg",
            "ppm" => "image/x-portable-pixmap",
            _ => "application/octet-stream",
        }
    }
}

pub(crate) mod base64_bytes {
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Http,
    Stub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    pub mode: BackendMode,
    pub model_switch_timeout_secs: f64,
    pub request_timeout_secs: f64,
    /// Requests allowed to wait behind the one in flight.
    pub queue_capacity: usize,
    pub default_denoise: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:7860".into(),
            mode: BackendMode::Stub,
            model_switch_timeout_secs: 120.0,
            request_timeout_secs: 600.0,
            queue_capacity: 8,
            default_denoise: 0.5,
        }
    }
}

impl BackendConfig {
    pub fn stub() -> Self {
        Self::default()
    }

    pub fn http(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            mode: BackendMode::Http,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(self.model_switch_timeout_secs > 0.0 && self.request_timeout_secs > 0.0) {
            return Err(BackendError::InvalidInput("timeouts must be positive".into()));
        }
        if !(self.default_denoise >= 0.0 && self.default_denoise <= 1.0) {
            return Err(BackendError::InvalidInput("default_denoise must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub trait ImageBackend: Send + Sync {
    /// Generate `batch_size` images, switching checkpoint first if needed.
    fn txt2img(&self, w: &GenerationWorkflow) -> Result<Vec<GeneratedImage>, BackendError>;

    fn img2img(
        &self,
        image: &GeneratedImage,
        w: &GenerationWorkflow,
        denoise: f64,
    ) -> Result<Vec<GeneratedImage>, BackendError>;

    fn set_checkpoint(&self, checkpoint_id: &str) -> Result<(), BackendError>;
}

/// A serialized generation queue in front of one backend instance.
pub struct Backend {
    inner: Box<dyn ImageBackend>,
    gate: Mutex<()>,
    pending: AtomicUsize,
    capacity: usize,
    default_denoise: f64,
}

impl std::fmt::Debug for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Backend")
            .field("pending", &self.pending())
            .field("capacity", &self.capacity)
            .finish_non_exhaustive()
    }
}

struct PendingGuard<'a>(&'a AtomicUsize);

impl Drop for PendingGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Backend {
    pub fn from_config(cfg: &BackendConfig) -> Result<Self, BackendError> {
        cfg.validate()?;
        let inner: Box<dyn ImageBackend> = match cfg.mode {
            BackendMode::Stub => Box::new(StubBackend::new()),
            BackendMode::Http => Box::new(HttpBackend::new(cfg)?),
        };
        Ok(Self::new(inner, cfg.queue_capacity, cfg.default_denoise))
    }

    pub fn new(inner: Box<dyn ImageBackend>, queue_capacity: usize, default_denoise: f64) -> Self {
        Self {
            inner,
            gate: Mutex::new(()),
            pending: AtomicUsize::new(0),
            capacity: queue_capacity,
            default_denoise,
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.load(Ordering::SeqCst)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn default_denoise(&self) -> f64 {
        self.default_denoise
    }

    fn serialized<R>(&self, f: impl FnOnce(&dyn ImageBackend) -> Result<R, BackendError>) -> Result<R, BackendError> {
        let pending = self.pending.fetch_add(1, Ordering::SeqCst);
        let _guard = PendingGuard(&self.pending);
        // One in flight plus `capacity` waiting.
        if pending > self.capacity {
            return Err(BackendError::Busy {
                pending,
                capacity: self.capacity,
            });
        }
        let _lock = self.gate.lock().unwrap_or_else(|p| p.into_inner());
        f(self.inner.as_ref())
    }

    pub fn txt2img(&self, w: &GenerationWorkflow) -> Result<Vec<GeneratedImage>, BackendError> {
        self.serialized(|b| b.txt2img(w))
    }

    pub fn img2img(
        &self,
        image: &GeneratedImage,
        w: &GenerationWorkflow,
        denoise: f64,
    ) -> Result<Vec<GeneratedImage>, BackendError> {
        if image.bytes.is_empty() {
            return Err(BackendError::InvalidInput("input image is empty".into()));
        }
        if !(0.0..=1.0).contains(&denoise) {
            return Err(BackendError::InvalidInput(format!("denoise {denoise} outside [0, 1]")));
        }
        self.serialized(|b| b.img2img(image, w, denoise))
    }

    pub fn set_checkpoint(&self, checkpoint_id: &str) -> Result<(), BackendError> {
        self.serialized(|b| b.set_checkpoint(checkpoint_id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicBool;
    use std::sync::Arc;
    use std::time::Duration;

    struct Slow {
        active: AtomicBool,
        overlap: AtomicBool,
    }

    impl ImageBackend for Arc<Slow> {
        fn txt2img(&self, w: &GenerationWorkflow) -> Result<Vec<GeneratedImage>, BackendError> {
            if self.active.swap(true, Ordering::SeqCst) {
                self.overlap.store(true, Ordering::SeqCst);
            }
            std::thread::sleep(Duration::from_millis(20));
            self.active.store(false, Ordering::SeqCst);
            StubBackend::new().txt2img(w)
        }
        fn img2img(&self, _: &GeneratedImage, w: &GenerationWorkflow, _: f64) -> Result<Vec<GeneratedImage>, BackendError> {
            self.txt2img(w)
        }
        fn set_checkpoint(&self, _: &str) -> Result<(), BackendError> {
            Ok(())
        }
    }

    fn workflow() -> GenerationWorkflow {
        GenerationWorkflow {
            checkpoint_id: "c".into(),
            adapters: vec![],
            positive_prompt: "p".into(),
            negative_prompt: "n".into(),
            cfg_scale: 7.0,
            seed: 1,
            width: 512,
            height: 512,
            batch_size: 1,
        }
    }

    #[test]
    fn at_most_one_generation_in_flight() {
        let slow = Arc::new(Slow {
            active: AtomicBool::new(false),
            overlap: AtomicBool::new(false),
        });
        let backend = Arc::new(Backend::new(Box::new(Arc::clone(&slow)), 16, 0.5));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let backend = Arc::clone(&backend);
                std::thread::spawn(move || backend.txt2img(&workflow()).unwrap())
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(!slow.overlap.load(Ordering::SeqCst));
        assert_eq!(backend.pending(), 0);
    }

    #[test]
    fn beyond_capacity_is_busy() {
        let slow = Arc::new(Slow {
            active: AtomicBool::new(false),
            overlap: AtomicBool::new(false),
        });
        let backend = Arc::new(Backend::new(Box::new(slow), 0, 0.5));
        let b2 = Arc::clone(&backend);
        let first = std::thread::spawn(move || b2.txt2img(&workflow()));
        std::thread::sleep(Duration::from_millis(5));
        let second = backend.txt2img(&workflow());
        assert!(first.join().unwrap().is_ok());
        assert!(matches!(second, Err(BackendError::Busy { .. })));
    }

    #[test]
    fn img2img_input_validation() {
        let backend = Backend::from_config(&BackendConfig::stub()).unwrap();
        let img = GeneratedImage { bytes: vec![], seed_used: 0, feature_vector: None };
        assert!(matches!(backend.img2img(&img, &workflow(), 0.5), Err(BackendError::InvalidInput(_))));
        let img = backend.txt2img(&workflow()).unwrap().remove(0);
        assert!(backend.img2img(&img, &workflow(), 1.5).is_err());
    }

    #[test]
    fn image_serializes_as_base64() {
        let img = GeneratedImage { bytes: vec![1, 2, 3], seed_used: 9, feature_vector: None };
        let json = serde_json::to_value(&img).unwrap();
        assert_eq!(json["bytes"], "AQID");
        assert!(json.get("feature_vector").is_none());
        assert_eq!(serde_json::from_value::<GeneratedImage>(json).unwrap(), img);
    }
}
