//! Deterministic built-in backends.
//!
//! `stub` recognition, generation and scoring derive every output from a
//! SHA-256 of their inputs, so runs are reproducible without a GPU.
//! `laplacian-sharpness` and `color-histogram` compute real (if simple)
//! image statistics.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use stablemorph_core::{GenerationRequest, WeightArray};

use super::{
    Capabilities, FeatureExtractor, FineTuneJob, GeneratedImage, GenerationBackend, QualityScorer, RecognitionBackend,
};
use crate::error::BackendError;
use crate::fingerprint::request_digest;

fn read(path: &Path) -> Result<Vec<u8>, BackendError> {
    fs::read(path).map_err(|e| BackendError::new(format!("cannot read {}: {e}", path.display())))
}

fn rng_from(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, Clone)]
pub struct StubRecognition {
    pub dim: usize,
}

impl Default for StubRecognition {
    fn default() -> Self {
        Self { dim: 512 }
    }
}

impl RecognitionBackend for StubRecognition {
    fn name(&self) -> &str {
        "stub"
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, image: &Path) -> Result<Vec<f64>, BackendError> {
        let bytes = read(image)?;
        let mut rng = rng_from(&[b"embed", &bytes]);
        let v: Vec<f64> = (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / n).collect())
    }
}

#[derive(Debug, Clone)]
pub struct StubGenerator {
    pub resolution: u32,
    /// Width of the fake low-rank layers.
    pub hidden: usize,
    pub layers: usize,
}

impl Default for StubGenerator {
    fn default() -> Self {
        Self {
            resolution: 64,
            hidden: 8,
            layers: 2,
        }
    }
}

impl GenerationBackend for StubGenerator {
    fn name(&self) -> &str {
        "stub"
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            fine_tune: true,
            generate: true,
        }
    }

    fn fine_tune(&self, job: &FineTuneJob<'_>) -> Result<BTreeMap<String, WeightArray>, BackendError> {
        let mut h = Sha256::new();
        for p in job.images {
            h.update(read(p)?);
        }
        let content = h.finalize();
        let mut rng = rng_from(&[
            b"fine-tune",
            &content,
            &job.config.seed.to_le_bytes(),
            &job.config.steps.to_le_bytes(),
        ]);
        let rank = job.config.rank.max(1) as usize;
        let mut out = BTreeMap::new();
        for layer in 0..self.layers {
            let base = format!("unet.down_blocks.{layer}.attn1.to_q");
            let a: Vec<f32> = (0..rank * self.hidden).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let b: Vec<f32> = (0..self.hidden * rank).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let a = WeightArray::f32(vec![rank, self.hidden], a).map_err(|e| BackendError::new(e.to_string()))?;
            let b = WeightArray::f32(vec![self.hidden, rank], b).map_err(|e| BackendError::new(e.to_string()))?;
            out.insert(format!("{base}.lora_A.weight"), a);
            out.insert(format!("{base}.lora_B.weight"), b);
        }
        Ok(out)
    }

    fn generate(&self, request: &GenerationRequest, seed: u64) -> Result<GeneratedImage, BackendError> {
        let digest = request_digest(request);
        let mut rng = rng_from(&[b"generate", digest.as_bytes(), &seed.to_le_bytes()]);
        let n = (self.resolution * self.resolution * 3) as usize;
        let mut rgb = vec![0u8; n];
        rng.fill(&mut rgb[..]);
        Ok(GeneratedImage {
            width: self.resolution,
            height: self.resolution,
            rgb,
        })
    }
}

/// Score in `[0, 100)` derived from the image bytes.
#[derive(Debug, Clone)]
pub struct StubScorer {
    name: String,
}

impl StubScorer {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into() }
    }
}

impl QualityScorer for StubScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, image: &Path) -> Result<f64, BackendError> {
        let bytes = read(image)?;
        let mut rng = rng_from(&[b"score", self.name.as_bytes(), &bytes]);
        Ok(rng.gen_range(0.0..100.0))
    }
}

fn decode_luma(image: &Path) -> Result<image::GrayImage, BackendError> {
    image::open(image)
        .map(|i| i.to_luma8())
        .map_err(|e| BackendError::new(format!("cannot decode {}: {e}", image.display())))
}

/// Variance of the 4-neighbour Laplacian of the grey-level image.
#[derive(Debug, Clone, Copy)]
pub struct LaplacianSharpness;

impl QualityScorer for LaplacianSharpness {
    fn name(&self) -> &str {
        "laplacian-sharpness"
    }

    fn score(&self, image: &Path) -> Result<f64, BackendError> {
        let img = decode_luma(image)?;
        let (w, h) = img.dimensions();
        if w < 3 || h < 3 {
            return Err(BackendError::new("image smaller than 3x3"));
        }
        let px = |x: u32, y: u32| f64::from(img.get_pixel(x, y)[0]);
        let mut values = Vec::with_capacity(((w - 2) * (h - 2)) as usize);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                values.push(px(x - 1, y) + px(x + 1, y) + px(x, y - 1) + px(x, y + 1) - 4.0 * px(x, y));
            }
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64)
    }
}

/// Normalized per-channel intensity histogram.
#[derive(Debug, Clone)]
pub struct ColorHistogram {
    pub bins: usize,
}

impl Default for ColorHistogram {
    fn default() -> Self {
        Self { bins: 8 }
    }
}

impl FeatureExtractor for ColorHistogram {
    fn name(&self) -> &str {
        "color-histogram"
    }

    fn features(&self, image: &Path) -> Result<Vec<f64>, BackendError> {
        let img = image::open(image)
            .map_err(|e| BackendError::new(format!("cannot decode {}: {e}", image.display())))?
            .to_rgb8();
        let mut hist = vec![0.0; 3 * self.bins];
        for p in img.pixels() {
            for c in 0..3 {
                let bin = usize::from(p[c]) * self.bins / 256;
                hist[c * self.bins + bin] += 1.0;
            }
        }
        let total = f64::from(img.width() * img.height());
        Ok(hist.into_iter().map(|v| v / total).collect())
    }
}
