use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::DiffusionModel;
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::DenseMatrix;
use crate::vae::gaussian;

/// Rows sampled with one independent generator stream; fixes the work split
/// so results do not depend on the thread count.
pub const SAMPLE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    /// Denoise every sample from `T` down to 1.
    Full,
    /// Denoise each sample from its own uniform start `t ∈ {1..T}`.
    Multi,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" | "f" => Ok(Self::Full),
            "multi" | "m" => Ok(Self::Multi),
            other => Err(Error::Usage(format!("unknown sampler mode {other:?} (expected full|multi)"))),
        }
    }
}

impl std::fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::Multi => "multi",
        })
    }
}

/// Anything that predicts the noise component ε_θ(z, t) row by row.
pub trait NoisePredictor: Sync {
    fn latent_dim(&self) -> usize;
    fn predict_noise(&self, z: &DenseMatrix, t: &[usize]) -> Result<DenseMatrix>;
}

impl NoisePredictor for DiffusionModel {
    fn latent_dim(&self) -> usize {
        DiffusionModel::latent_dim(self)
    }

    fn predict_noise(&self, z: &DenseMatrix, t: &[usize]) -> Result<DenseMatrix> {
        DiffusionModel::predict_noise(self, z, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledLatents {
    pub latents: DenseMatrix,
    /// Start timestep of every sample.
    pub starts: Vec<usize>,
}

/// Ancestral sampling:
/// `ẑ_{t−1} = (ẑ_t − (1−α_t)/√(1−ᾱ_t) · ε_θ(ẑ_t, t)) / √α_t + σ_t·ζ`, with ζ = 0 at t = 1.
pub fn sample_latents<P: NoisePredictor + ?Sized, R: Rng + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    n: usize,
    mode: SamplerMode,
    rng: &mut R,
) -> Result<SampledLatents> {
    if n == 0 {
        return Err(Error::Usage("number of samples must be positive".into()));
    }
    let base: u64 = rng.random();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(SAMPLE_CHUNK)
        .map(|s| (s, (s + SAMPLE_CHUNK).min(n)))
        .collect();
    let parts = chunks
        .par_iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let mut r = ChaCha8Rng::seed_from_u64(base);
            r.set_stream(i as u64);
            sample_chunk(model, schedule, hi - lo, mode, &mut r)
        })
        .collect::<Result<Vec<_>>>()?;

    let k = model.latent_dim();
    let mut latents = DenseMatrix::zeros(n, k);
    let mut starts = Vec::with_capacity(n);
    let mut row = 0;
    for part in parts {
        for r in 0..part.latents.rows() {
            latents.row_mut(row).copy_from_slice(part.latents.row(r));
            row += 1;
        }
        starts.extend(part.starts);
    }
    Ok(SampledLatents { latents, starts })
}

fn sample_chunk<P: NoisePredictor + ?Sized>(
    model: &P,
    schedule: &NoiseSchedule,
    n: usize,
    mode: SamplerMode,
    rng: &mut ChaCha8Rng,
) -> Result<SampledLatents> {
    let k = model.latent_dim();
    let t_max = schedule.timesteps();
    let starts: Vec<usize> = match mode {
        SamplerMode::Full => vec![t_max; n],
        SamplerMode::Multi => (0..n).map(|_| rng.random_range(1..=t_max)).collect(),
    };
    let mut z = gaussian(n, k, rng);
    for t in (1..=t_max).rev() {
        let active: Vec<usize> = (0..n).filter(|&i| starts[i] >= t).collect();
        if active.is_empty() {
            continue;
        }
        let eps = model.predict_noise(&z.select_rows(&active), &vec![t; active.len()])?;
        let alpha = schedule.alpha(t);
        let coef = (1.0 - alpha) / (1.0 - schedule.alpha_bar(t)).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let sigma = schedule.sigma(t);
        let zeta = if t > 1 {
            Some(gaussian(active.len(), k, rng))
        } else {
            None
        };
        for (a, &i) in active.iter().enumerate() {
            let er = eps.row(a);
            let row = z.row_mut(i);
            for j in 0..k {
                let noise = zeta.as_ref().map_or(0.0, |zm| zm.get(a, j));
                row[j] = inv * (row[j] - coef * er[j]) + sigma * noise;
            }
        }
    }
    Ok(SampledLatents { latents: z, starts })
}
