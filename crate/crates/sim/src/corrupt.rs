use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rigidkit_core::{DenseField, FieldKind, Mask};

use crate::render::GroundTruth;
use crate::scene::{NoiseConfig, PriorModel};
use crate::{Result, SimError};

pub const OUTLIER_RANGE: f64 = 20.0;
pub const CONFIDENCE_INLIER: f64 = 0.9;
pub const CONFIDENCE_OUTLIER: f64 = 0.4;

// independent random streams per perturbation
const STREAM_FLOW: u64 = 1;
const STREAM_EXPANSION: u64 = 2;
const STREAM_OUTLIERS: u64 = 3;
const STREAM_PRIOR: u64 = 4;

/// Observations handed to the estimation pipeline.
#[derive(Debug, Clone)]
pub struct CorruptedInputs {
    pub flow: DenseField,
    pub expansion: DenseField,
    pub depth_prior: DenseField,
    pub confidence: DenseField,
    pub outliers: Mask,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| SimError::InvalidScene(format!("noise sigma: {e}")))
}

/// Applies the noise model to the ground truth. Empty pixels stay NaN.
pub fn corrupt(gt: &GroundTruth, noise: &NoiseConfig) -> Result<CorruptedInputs> {
    noise.validate()?;
    let (w, h) = (gt.width(), gt.height());
    let valid = gt.valid_mask();

    let mut flow = gt.flow.clone();
    if noise.flow_sigma > 0.0 {
        let dist = normal(noise.flow_sigma)?;
        let mut rng = rng_for(noise.seed, STREAM_FLOW);
        for idx in 0..w * h {
            if valid.get(idx) {
                for v in flow.at_mut(idx) {
                    *v += dist.sample(&mut rng);
                }
            }
        }
    }

    let mut expansion = gt.expansion.clone();
    if noise.expansion_sigma > 0.0 {
        let dist = normal(noise.expansion_sigma)?;
        let mut rng = rng_for(noise.seed, STREAM_EXPANSION);
        for idx in 0..w * h {
            if valid.get(idx) {
                expansion.at_mut(idx)[0] *= dist.sample(&mut rng).exp();
            }
        }
    }

    let candidates: Vec<usize> = (0..w * h).filter(|&i| valid.get(i)).collect();
    let n_out = (noise.outlier_fraction * candidates.len() as f64).floor() as usize;
    let mut outliers = Mask::new(w, h, false);
    if n_out > 0 {
        let mut rng = rng_for(noise.seed, STREAM_OUTLIERS);
        let mut picked = index::sample(&mut rng, candidates.len(), n_out).into_vec();
        picked.sort_unstable();
        for k in picked {
            let idx = candidates[k];
            outliers.set(idx, true);
            let f = flow.at_mut(idx);
            f[0] = rng.random_range(-OUTLIER_RANGE..=OUTLIER_RANGE);
            f[1] = rng.random_range(-OUTLIER_RANGE..=OUTLIER_RANGE);
        }
    }

    let depth_prior = match noise.prior {
        PriorModel::Exact => gt.z0.clone(),
        PriorModel::Scaled { k } => gt.z0.map(FieldKind::Depth, |z| z * k),
        PriorModel::SmoothRamp { lo, hi } => {
            let denom = (w.max(2) - 1) as f64;
            DenseField::from_fn(w, h, FieldKind::Depth, |r, c| {
                [gt.z0.get(r, c)[0] * (lo + (hi - lo) * c as f64 / denom)]
            })
        }
        PriorModel::Noisy { sigma_log } => {
            let mut z = gt.z0.clone();
            if sigma_log > 0.0 {
                let dist = normal(sigma_log)?;
                let mut rng = rng_for(noise.seed, STREAM_PRIOR);
                for idx in 0..w * h {
                    if valid.get(idx) {
                        z.at_mut(idx)[0] *= dist.sample(&mut rng).exp();
                    }
                }
            }
            z
        }
    };

    let confidence = if noise.is_noise_free() {
        gt.confidence.clone()
    } else {
        DenseField::from_fn(w, h, FieldKind::Confidence, |r, c| {
            let idx = r * w + c;
            [if !valid.get(idx) {
                0.0
            } else if outliers.get(idx) {
                CONFIDENCE_OUTLIER
            } else {
                CONFIDENCE_INLIER
            }]
        })
    };

    Ok(CorruptedInputs { flow, expansion, depth_prior, confidence, outliers })
}
