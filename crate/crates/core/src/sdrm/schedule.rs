use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Linear β schedule with cumulative products. All accessors are 1-based in `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
    beta_start: f64,
    beta_end: f64,
    zero_sigma: bool,
}

impl NoiseSchedule {
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::config("diffusion needs at least one timestep"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "invalid beta range {beta_start}..{beta_end}; need 0 < start <= end < 1"
            )));
        }
        let betas: Vec<f64> = (0..timesteps)
            .map(|i| {
                if timesteps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (timesteps - 1) as f64
                }
            })
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self {
            betas,
            alpha_bars,
            beta_start,
            beta_end,
            zero_sigma: false,
        })
    }

    pub fn with_defaults(timesteps: usize) -> Result<Self> {
        Self::linear(timesteps, DEFAULT_BETA_START, DEFAULT_BETA_END)
    }

    /// Same schedule with the sampler noise scale σ_t forced to zero.
    pub fn without_sampling_noise(mut self) -> Self {
        self.zero_sigma = true;
        self
    }

    pub fn timesteps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_range(&self) -> (f64, f64) {
        (self.beta_start, self.beta_end)
    }

    fn idx(&self, t: usize) -> usize {
        assert!(
            (1..=self.timesteps()).contains(&t),
            "timestep {t} outside 1..={}",
            self.timesteps()
        );
        t - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[self.idx(t)]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        if self.zero_sigma {
            0.0
        } else {
            self.beta(t).sqrt()
        }
    }
}

/// `z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε`, with one timestep per row.
pub fn q_sample(z0: &DenseMatrix, t: &[usize], eps: &DenseMatrix, schedule: &NoiseSchedule) -> Result<DenseMatrix> {
    if z0.shape() != eps.shape() || t.len() != z0.rows() {
        return Err(Error::config("q_sample: z0, ε and t disagree in shape"));
    }
    let mut out = z0.clone();
    for (r, &tr) in t.iter().enumerate() {
        if !(1..=schedule.timesteps()).contains(&tr) {
            return Err(Error::config(format!(
                "timestep {tr} outside 1..={}",
                schedule.timesteps()
            )));
        }
        let ab = schedule.alpha_bar(tr);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (o, e) in out.row_mut(r).iter_mut().zip(eps.row(r)) {
            *o = a * *o + b * e;
        }
    }
    Ok(out)
}
