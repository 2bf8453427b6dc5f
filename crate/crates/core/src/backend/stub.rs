//! Deterministic stand-in for a diffusion backend.
//!
//! Each image carries a feature vector `base + spread(cfg) · noise_i`, where
//! `base` depends on the prompt, negative prompt, checkpoint and adapters,
//! `noise_i` additionally on the seed and batch index, and
//! `spread(cfg) = 0.15 · √cfg`. Batch diversity (mean pairwise distance)
//! therefore grows with cfg while staying a pure function of the workflow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hashing::{hex8, stable_hash};
use crate::workflow::GenerationWorkflow;

use super::{BackendError, GeneratedImage, ImageBackend};

pub const STUB_FEATURE_DIM: usize = 16;
const PIXELS: usize = 8;

#[derive(Debug, Clone, Copy, Default)]
pub struct StubBackend;

impl StubBackend {
    pub fn new() -> Self {
        StubBackend
    }

    pub fn spread(cfg_scale: f64) -> f64 {
        0.15 * cfg_scale.max(0.0).sqrt()
    }

    fn content_key(w: &GenerationWorkflow) -> Vec<String> {
        let mut parts = vec![
            w.positive_prompt.clone(),
            w.negative_prompt.clone(),
            w.checkpoint_id.clone(),
        ];
        parts.extend(w.adapters.iter().map(|a| format!("{}:{}", a.id, a.weight)));
        parts
    }

    fn unit_noise(key: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        (0..STUB_FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    pub fn features(w: &GenerationWorkflow, index: u32) -> Vec<f64> {
        let content = Self::content_key(w);
        let base = Self::unit_noise(stable_hash(content.iter().map(String::as_bytes)));
        let mut noise_key = content;
        noise_key.push(w.seed.to_string());
        noise_key.push(index.to_string());
        let noise = Self::unit_noise(stable_hash(noise_key.iter().map(String::as_bytes)));
        let spread = Self::spread(w.cfg_scale);
        base.iter().zip(&noise).map(|(b, n)| b + spread * n).collect()
    }

    /// A tiny binary PPM whose pixels and header comment encode the features.
    pub fn render(features: &[f64], seed_used: i64) -> GeneratedImage {
        let fingerprint = stable_hash(features.iter().map(|f| f.to_le_bytes()));
        let mut bytes = format!("P6\n# manta-stub {}\n{PIXELS} {PIXELS}\n255\n", hex8(fingerprint)).into_bytes();
        for i in 0..PIXELS * PIXELS * 3 {
            let f = features[i % features.len()] + (i / features.len()) as f64 * 0.1;
            let squashed = 1.0 / (1.0 + (-f).exp());
            bytes.push((squashed * 255.0).round() as u8);
        }
        GeneratedImage {
            bytes,
            seed_used,
            feature_vector: Some(features.to_vec()),
        }
    }
}

impl ImageBackend for StubBackend {
    fn txt2img(&self, w: &GenerationWorkflow) -> Result<Vec<GeneratedImage>, BackendError> {
        Ok((0..w.batch_size)
            .map(|i| Self::render(&Self::features(w, i), w.seed + i as i64))
            .collect())
    }

    /// Blend `(1 − denoise) · input + denoise · fresh` per output image.
    fn img2img(
        &self,
        image: &GeneratedImage,
        w: &GenerationWorkflow,
        denoise: f64,
    ) -> Result<Vec<GeneratedImage>, BackendError> {
        let input = image.feature_vector.clone().unwrap_or_else(|| {
            Self::unit_noise(stable_hash([image.bytes.as_slice()]))
        });
        if input.len() != STUB_FEATURE_DIM {
            return Err(BackendError::InvalidInput(format!(
                "feature vector has {} components, expected {STUB_FEATURE_DIM}",
                input.len()
            )));
        }
        Ok((0..w.batch_size)
            .map(|i| {
                let fresh = Self::features(w, i);
                let blended: Vec<f64> = if denoise == 0.0 {
                    input.clone()
                } else if denoise == 1.0 {
                    fresh
                } else {
                    input
                        .iter()
                        .zip(&fresh)
                        .map(|(a, b)| (1.0 - denoise) * a + denoise * b)
                        .collect()
                };
                Self::render(&blended, w.seed + i as i64)
            })
            .collect())
    }

    fn set_checkpoint(&self, _checkpoint_id: &str) -> Result<(), BackendError> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workflow(cfg: f64) -> GenerationWorkflow {
        GenerationWorkflow {
            checkpoint_id: "ckpt".into(),
            adapters: vec![],
            positive_prompt: "a red fox".into(),
            negative_prompt: "blurry".into(),
            cfg_scale: cfg,
            seed: 11,
            width: 512,
            height: 512,
            batch_size: 3,
        }
    }

    fn mean_pairwise(images: &[GeneratedImage]) -> f64 {
        let f: Vec<&Vec<f64>> = images.iter().map(|i| i.feature_vector.as_ref().unwrap()).collect();
        let mut sum = 0.0;
        let mut n = 0;
        for i in 0..f.len() {
            for j in i + 1..f.len() {
                sum += f[i].iter().zip(f[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                n += 1;
            }
        }
        sum / n as f64
    }

    #[test]
    fn deterministic_payloads() {
        let s = StubBackend::new();
        assert_eq!(s.txt2img(&workflow(7.0)).unwrap(), s.txt2img(&workflow(7.0)).unwrap());
        let imgs = s.txt2img(&workflow(7.0)).unwrap();
        assert_eq!(imgs.len(), 3);
        assert_eq!(imgs[2].seed_used, 13);
        assert!(imgs[0].bytes.starts_with(b"P6\n"));
    }

    #[test]
    fn cfg_changes_features_and_spread() {
        let s = StubBackend::new();
        let low = s.txt2img(&workflow(4.0)).unwrap();
        let high = s.txt2img(&workflow(11.0)).unwrap();
        assert_ne!(low[0].feature_vector, high[0].feature_vector);
        assert!(mean_pairwise(&high) > mean_pairwise(&low));
    }

    #[test]
    fn img2img_limits() {
        let s = StubBackend::new();
        let w = workflow(7.0);
        let parent = s.txt2img(&w).unwrap().remove(0);
        let kept = s.img2img(&parent, &w, 0.0).unwrap();
        assert!(kept.iter().all(|i| i.feature_vector == parent.feature_vector));
        let fresh = s.img2img(&parent, &w, 1.0).unwrap();
        assert_eq!(fresh, s.txt2img(&w).unwrap());
        let reseeded = GenerationWorkflow { seed: 99, ..w.clone() };
        let half = s.img2img(&parent, &reseeded, 0.5).unwrap();
        let fresh = StubBackend::features(&reseeded, 0);
        let expected: Vec<f64> = parent.feature_vector.as_ref().unwrap().iter().zip(&fresh).map(|(a, b)| 0.5 * a + 0.5 * b).collect();
        assert_eq!(half[0].feature_vector.as_ref().unwrap(), &expected);
    }
}
