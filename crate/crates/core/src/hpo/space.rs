use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An evenly spaced grid `start, start+step, …, ≤ stop`, optionally bounded
/// below by the sampled value of another dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub start: f64,
    pub stop: f64,
    pub step: f64,
    #[serde(default)]
    pub integer: bool,
    /// Name of a dimension whose value is a lower bound for this one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_least: Option<String>,
}

impl Dimension {
    pub fn int(name: &str, start: i64, stop: i64, step: i64) -> Self {
        Self {
            name: name.into(),
            start: start as f64,
            stop: stop as f64,
            step: step as f64,
            integer: true,
            at_least: None,
        }
    }

    pub fn float(name: &str, start: f64, stop: f64, step: f64) -> Self {
        Self {
            name: name.into(),
            start,
            stop,
            step,
            integer: false,
            at_least: None,
        }
    }

    pub fn at_least(mut self, other: &str) -> Self {
        self.at_least = Some(other.into());
        self
    }

    pub fn len(&self) -> usize {
        if self.step <= 0.0 {
            return 1;
        }
        ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn value(&self, index: usize) -> f64 {
        let v = self.start + index as f64 * self.step;
        if self.integer {
            v.round()
        } else {
            round_sig(v)
        }
    }

    /// Grid index of `value`, if it lies on the grid.
    pub fn index_of(&self, value: f64) -> Option<usize> {
        if self.step <= 0.0 {
            return (value == self.value(0)).then_some(0);
        }
        let pos = (value - self.start) / self.step;
        let idx = pos.round();
        if idx < 0.0 || (pos - idx).abs() > 1e-6 || idx as usize >= self.len() {
            return None;
        }
        (self.value(idx as usize) == value).then_some(idx as usize)
    }

    fn validate(&self) -> Result<()> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.step.is_finite())
            || self.stop < self.start
            || self.step < 0.0
            || (self.step == 0.0 && self.stop != self.start)
        {
            return Err(Error::config(format!("dimension {} has an invalid grid", self.name)));
        }
        Ok(())
    }
}

/// Rounds away accumulated binary noise such as `0.30000000000000004`.
fn round_sig(v: f64) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let digits = 12 - v.abs().log10().ceil() as i32;
    let scale = 10f64.powi(digits);
    (v * scale).round() / scale
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dims: Vec<Dimension>,
}

/// Dimension values keyed by name.
pub type TrialConfig = BTreeMap<String, f64>;

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        let space = Self { dims };
        space.validate()?;
        Ok(space)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::config("search space has no dimensions"));
        }
        for (i, d) in self.dims.iter().enumerate() {
            d.validate()?;
            if self.dims[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::config(format!("dimension {} listed twice", d.name)));
            }
            if let Some(other) = &d.at_least {
                if !self.dims[..i].iter().any(|o| &o.name == other) {
                    return Err(Error::config(format!(
                        "{} depends on {other}, which must be declared before it",
                        d.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of grid points, ignoring conditional bounds.
    pub fn grid_size(&self) -> f64 {
        self.dims.iter().map(|d| d.len() as f64).product()
    }

    /// Admissible grid indices of `dim` given values already fixed in `config`.
    fn admissible(&self, dim: &Dimension, config: &TrialConfig) -> Vec<usize> {
        let floor = dim
            .at_least
            .as_ref()
            .and_then(|o| config.get(o))
            .copied()
            .unwrap_or(f64::NEG_INFINITY);
        let all: Vec<usize> = (0..dim.len()).filter(|&i| dim.value(i) >= floor).collect();
        if all.is_empty() {
            vec![dim.len() - 1]
        } else {
            all
        }
    }

    /// Uniform draw on each grid, honouring conditional lower bounds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialConfig {
        let mut config = TrialConfig::new();
        for d in &self.dims {
            let options = self.admissible(d, &config);
            let i = options[rng.random_range(0..options.len())];
            config.insert(d.name.clone(), d.value(i));
        }
        config
    }

    /// Move a random subset of coordinates of `base` by a few grid steps.
    pub fn perturb<R: Rng + ?Sized>(&self, base: &TrialConfig, rng: &mut R) -> TrialConfig {
        let forced = rng.random_range(0..self.dims.len());
        let mut config = TrialConfig::new();
        for (n, d) in self.dims.iter().enumerate() {
            let options = self.admissible(d, &config);
            let current = d.index_of(base[&d.name]).unwrap_or(options[0]);
            let pos = options.iter().position(|&i| i >= current).unwrap_or(options.len() - 1);
            let mut new_pos = pos as i64;
            if n == forced || rng.random_bool(0.3) {
                let reach = (options.len() / 10).max(1) as i64;
                let delta = rng.random_range(1..=reach) * if rng.random_bool(0.5) { 1 } else { -1 };
                new_pos = (pos as i64 + delta).clamp(0, options.len() as i64 - 1);
            }
            config.insert(d.name.clone(), d.value(options[new_pos as usize]));
        }
        config
    }

    /// Every value on its grid and every conditional bound met.
    pub fn contains(&self, config: &TrialConfig) -> bool {
        config.len() == self.dims.len()
            && self.dims.iter().all(|d| {
                let Some(&v) = config.get(&d.name) else {
                    return false;
                };
                let bound_ok = d.at_least.as_ref().is_none_or(|o| v >= config[o] || d.index_of(v) == Some(d.len() - 1));
                d.index_of(v).is_some() && bound_ok
            })
    }
}

pub const SDRM_EPOCHS: &str = "sdrm_epochs";
pub const SDRM_LR: &str = "sdrm_lr";
pub const NOISE_VARIANCE: &str = "noise_variance";
pub const TIMESTEPS: &str = "timesteps";
pub const SDRM_BATCH: &str = "sdrm_batch";
pub const HIDDEN_LAYERS: &str = "hidden_layers";
pub const LATENT: &str = "latent";
pub const VAE_HIDDEN: &str = "vae_hidden";
pub const VAE_LR: &str = "vae_lr";
pub const VAE_BATCH: &str = "vae_batch";

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            dims: vec![
                Dimension::int(SDRM_EPOCHS, 5, 501, 5),
                Dimension::float(SDRM_LR, 1e-6, 1e-4, 1e-6),
                Dimension::float(NOISE_VARIANCE, 0.01, 1.0, 0.1),
                Dimension::int(TIMESTEPS, 3, 200, 5),
                Dimension::int(SDRM_BATCH, 30, 1000, 10),
                Dimension::int(HIDDEN_LAYERS, 0, 5, 1),
                Dimension::int(LATENT, 50, 1000, 50),
                Dimension::int(VAE_HIDDEN, 50, 1000, 50).at_least(LATENT),
                Dimension::float(VAE_LR, 1e-4, 1e-2, 1e-4),
                Dimension::int(VAE_BATCH, 30, 1000, 10),
            ],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_lengths() {
        let s = SearchSpace::default();
        let len = |n: &str| s.dims.iter().find(|d| d.name == n).unwrap().len();
        assert_eq!(len(SDRM_EPOCHS), 100);
        assert_eq!(len(SDRM_LR), 100);
        assert_eq!(len(NOISE_VARIANCE), 10);
        assert_eq!(len(TIMESTEPS), 40);
        assert_eq!(len(SDRM_BATCH), 98);
        assert_eq!(len(HIDDEN_LAYERS), 6);
        assert_eq!(len(LATENT), 20);
        assert_eq!(len(VAE_LR), 100);
        let nv = s.dims.iter().find(|d| d.name == NOISE_VARIANCE).unwrap();
        assert_eq!(nv.value(3), 0.31);
        assert_eq!(nv.index_of(0.91), Some(9));
        assert_eq!(nv.index_of(0.3), None);
    }

    #[test]
    fn draws_are_valid_and_reproducible() {
        let s = SearchSpace::default();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let c = s.sample(&mut r);
            assert!(s.contains(&c), "{c:?}");
            assert!(c[VAE_HIDDEN] >= c[LATENT]);
            let p = s.perturb(&c, &mut r);
            assert!(s.contains(&p), "{p:?}");
            assert!(p[VAE_HIDDEN] >= p[LATENT]);
        }
        let a = s.sample(&mut ChaCha8Rng::seed_from_u64(2));
        let b = s.sample(&mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a, b);
    }

    #[test]
    fn single_point_space() {
        let s = SearchSpace::new(vec![Dimension::int("a", 3, 3, 1), Dimension::float("b", 0.5, 0.5, 0.0)]).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = s.sample(&mut r);
            assert_eq!(c["a"], 3.0);
            assert_eq!(c["b"], 0.5);
            assert_eq!(s.perturb(&c, &mut r), c);
        }
    }

    #[test]
    fn rejects_bad_spaces() {
        assert!(SearchSpace::new(vec![]).is_err());
        assert!(SearchSpace::new(vec![Dimension::int("a", 5, 1, 1)]).is_err());
        assert!(SearchSpace::new(vec![Dimension::int("a", 1, 5, 1).at_least("b"), Dimension::int("b", 1, 5, 1)]).is_err());
        assert!(SearchSpace::new(vec![Dimension::int("a", 1, 5, 1), Dimension::int("a", 1, 5, 1)]).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let s = SearchSpace::default();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<SearchSpace>(&text).unwrap(), s);
    }
}
