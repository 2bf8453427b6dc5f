//! Client for a txt2img/img2img web API (`/sdapi/v1/...`).

use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use tracing::{debug, info};

use crate::workflow::GenerationWorkflow;

use super::{BackendConfig, BackendError, GeneratedImage, ImageBackend};

pub struct HttpBackend {
    base_url: String,
    client: reqwest::blocking::Client,
    switch_timeout: Duration,
    current_checkpoint: Mutex<Option<String>>,
}

#[derive(Deserialize)]
struct GenerationResponse {
    images: Vec<String>,
    #[serde(default)]
    info: Option<Value>,
}

fn transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(e.to_string())
    } else {
        BackendError::BackendUnavailable(e.to_string())
    }
}

/// `info` is either an object or a JSON-encoded string holding one.
fn seeds_from_info(info: Option<&Value>) -> Option<Vec<i64>> {
    let parsed;
    let info = match info? {
        Value::String(s) => {
            parsed = serde_json::from_str::<Value>(s).ok()?;
            &parsed
        }
        other => other,
    };
    info.get("all_seeds")?
        .as_array()?
        .iter()
        .map(Value::as_i64)
        .collect()
}

impl HttpBackend {
    pub fn new(cfg: &BackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_secs))
            .build()
            .map_err(|e| BackendError::BackendUnavailable(e.to_string()))?;
        Ok(Self {
            base_url: cfg.base_url.trim_end_matches('/').to_string(),
            client,
            switch_timeout: Duration::from_secs_f64(cfg.model_switch_timeout_secs),
            current_checkpoint: Mutex::new(None),
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/sdapi/v1/{path}", self.base_url)
    }

    fn ensure_checkpoint(&self, id: &str) -> Result<(), BackendError> {
        let mut current = self.current_checkpoint.lock().unwrap_or_else(|p| p.into_inner());
        if current.as_deref() == Some(id) {
            return Ok(());
        }
        info!(checkpoint = id, "switching checkpoint");
        let resp = self
            .client
            .post(self.url("options"))
            .timeout(self.switch_timeout)
            .json(&json!({ "sd_model_checkpoint": id }))
            .send()
            .map_err(transport)?;
        let status = resp.status();
        if status.is_success() {
            *current = Some(id.to_string());
            return Ok(());
        }
        let body = resp.text().unwrap_or_default();
        if status.as_u16() == 404 || status.is_client_error() || body.to_lowercase().contains("not found") {
            Err(BackendError::ModelNotFound(id.to_string()))
        } else {
            Err(BackendError::BackendUnavailable(format!("options returned {status}: {body}")))
        }
    }

    fn generate(&self, path: &str, w: &GenerationWorkflow, extra: Value) -> Result<Vec<GeneratedImage>, BackendError> {
        self.ensure_checkpoint(&w.checkpoint_id)?;
        let mut body = json!({
            "prompt": w.positive_prompt,
            "negative_prompt": w.negative_prompt,
            "cfg_scale": w.cfg_scale,
            "seed": w.seed,
            "width": w.width,
            "height": w.height,
            "batch_size": w.batch_size,
        });
        if let (Value::Object(body), Value::Object(extra)) = (&mut body, extra) {
            body.extend(extra);
        }
        debug!(path, seed = w.seed, "dispatching generation");
        let resp = self.client.post(self.url(path)).json(&body).send().map_err(transport)?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(BackendError::BackendUnavailable(format!("{path} returned {status}: {text}")));
        }
        let parsed: GenerationResponse = resp
            .json()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        let seeds = seeds_from_info(parsed.info.as_ref());
        parsed
            .images
            .iter()
            .enumerate()
            .map(|(i, b64)| {
                let bytes = base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| BackendError::InvalidResponse(format!("image {i}: {e}")))?;
                let seed_used = seeds
                    .as_ref()
                    .and_then(|s| s.get(i).copied())
                    .unwrap_or(w.seed + i as i64);
                Ok(GeneratedImage {
                    bytes,
                    seed_used,
                    feature_vector: None,
                })
            })
            .collect()
    }
}

impl ImageBackend for HttpBackend {
    fn txt2img(&self, w: &GenerationWorkflow) -> Result<Vec<GeneratedImage>, BackendError> {
        self.generate("txt2img", w, json!({}))
    }

    fn img2img(
        &self,
        image: &GeneratedImage,
        w: &GenerationWorkflow,
        denoise: f64,
    ) -> Result<Vec<GeneratedImage>, BackendError> {
        let init = base64::engine::general_purpose::STANDARD.encode(&image.bytes);
        self.generate(
            "img2img",
            w,
            json!({ "init_images": [init], "denoising_strength": denoise }),
        )
    }

    fn set_checkpoint(&self, checkpoint_id: &str) -> Result<(), BackendError> {
        self.ensure_checkpoint(checkpoint_id)
    }
}
