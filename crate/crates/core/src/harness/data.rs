//! Synthetic dataset generation.
//!
//! Classes are procedural patterns: class 0 horizontal stripes, class 1
//! vertical stripes, class 2 checkerboard, classes 3+ Gaussian blobs at
//! class-indexed positions. Additive Gaussian pixel noise, clamped to
//! [0, 1]. Labels are assigned round-robin so per-class counts differ by
//! at most one in both splits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::Sample;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub classes: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    /// Desk defaults: 16x16 grayscale, 4 classes, 512 train / 128 test,
    /// noise 0.1.
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            channels: 1,
            classes: 4,
            train_size: 512,
            test_size: 128,
            noise_std: 0.1,
            seed: 7,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::InvalidConfig("image dims must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.train_size < self.classes {
            return Err(Error::InvalidConfig(format!(
                "train_size {} must cover all {} classes",
                self.train_size, self.classes
            )));
        }
        if self.test_size == 0 {
            return Err(Error::InvalidConfig("test_size must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::InvalidConfig("noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width * self.channels
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub cfg: DatasetConfig,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Noise-free base pattern of one class, flat in sample pixel order.
fn class_pattern(label: usize, cfg: &DatasetConfig) -> Vec<f64> {
    let (h, w, c) = (cfg.height, cfg.width, cfg.channels);
    let band_h = (h / 8).max(1);
    let band_w = (w / 8).max(1);
    let mut pixels = vec![0.0; h * w * c];
    for r in 0..h {
        for col in 0..w {
            let value = match label {
                0 => ((r / band_h) % 2 == 0) as usize as f64,
                1 => ((col / band_w) % 2 == 0) as usize as f64,
                2 => ((r / band_h + col / band_w) % 2 == 0) as usize as f64,
                k => {
                    // Gaussian blob at a class-indexed position.
                    let cr = ((k * 2 + 1) * h / 8) % h;
                    let cc = ((k * 3 + 2) * w / 8) % w;
                    let sigma = (h.max(w) as f64 / 6.0).max(1.0);
                    let dr = r as f64 - cr as f64;
                    let dc = col as f64 - cc as f64;
                    (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
                }
            };
            for ch in 0..c {
                pixels[(r * w + col) * c + ch] = value;
            }
        }
    }
    pixels
}

/// Deterministic synthetic dataset: one ChaCha stream seeded by
/// `cfg.seed` drives all noise draws, train samples first, then test, in
/// flat pixel order within each sample.
pub fn gen_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = if cfg.noise_std > 0.0 {
        Some(Normal::new(0.0, cfg.noise_std).expect("finite std"))
    } else {
        None
    };

    let patterns: Vec<Vec<f64>> = (0..cfg.classes).map(|k| class_pattern(k, cfg)).collect();
    let mut make_split = |size: usize| -> Vec<Sample> {
        (0..size)
            .map(|i| {
                let label = i % cfg.classes;
                let pixels: Vec<f64> = patterns[label]
                    .iter()
                    .map(|&base| {
                        let n = noise.as_ref().map_or(0.0, |d| d.sample(&mut rng));
                        (base + n).clamp(0.0, 1.0)
                    })
                    .collect();
                Sample { pixels, label }
            })
            .collect()
    };

    let train = make_split(cfg.train_size);
    let test = make_split(cfg.test_size);
    Ok(Dataset {
        cfg: cfg.clone(),
        train,
        test,
    })
}
