//! Cross-validated pipeline objective: VAE + SDRM per fold, scored by
//! Recall@k of an MF model trained on synthetic users.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::search::Objective;
use super::space::{
    TrialConfig, HIDDEN_LAYERS, LATENT, NOISE_VARIANCE, SDRM_BATCH, SDRM_EPOCHS, SDRM_LR, TIMESTEPS, VAE_BATCH,
    VAE_HIDDEN, VAE_LR,
};
use crate::dataset::{holdout_split, InjectConfig, InteractionMatrix};
use crate::error::{Error, Result};
use crate::eval::{evaluate_run, EvalData, MfHyper, Protocol, Recommender};
use crate::postprocess::{generate_synthetic, GenerateRequest};
use crate::sdrm::{train_sdrm, SamplerMode, SdrmHyper};
use crate::vae::{train_multivae, VaeHyper};

/// Split `0..n` into `folds` disjoint groups by a seeded shuffle; sizes differ
/// by at most one.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds == 0 || folds > n {
        return Err(Error::config(format!("cannot split {n} users into {folds} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (pos, u) in order.into_iter().enumerate() {
        out[pos % folds].push(u);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    Ok(out)
}

/// Overwrite the hyperparameters named in `config`. The MLP width follows the
/// latent size; names outside the standard space are ignored.
pub fn apply_config(config: &TrialConfig, vae: &mut VaeHyper, sdrm: &mut SdrmHyper) {
    let int = |name: &str| config.get(name).map(|v| v.round().max(0.0) as usize);
    if let Some(v) = int(SDRM_EPOCHS) {
        sdrm.epochs = v;
    }
    if let Some(&v) = config.get(SDRM_LR) {
        sdrm.learning_rate = v;
    }
    if let Some(&v) = config.get(NOISE_VARIANCE) {
        sdrm.noise_variance = v;
    }
    if let Some(v) = int(TIMESTEPS) {
        sdrm.timesteps = v;
    }
    if let Some(v) = int(SDRM_BATCH) {
        sdrm.batch_size = v;
    }
    if let Some(v) = int(HIDDEN_LAYERS) {
        sdrm.hidden_layers = v;
    }
    if let Some(v) = int(LATENT) {
        vae.latent_dim = v;
        sdrm.hidden_width = v;
    }
    if let Some(v) = int(VAE_HIDDEN) {
        vae.hidden = vec![v];
    }
    if let Some(&v) = config.get(VAE_LR) {
        vae.learning_rate = v;
    }
    if let Some(v) = int(VAE_BATCH) {
        vae.batch_size = v;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSettings {
    pub folds: usize,
    /// Seed of the fold partition, shared by every trial.
    pub fold_seed: u64,
    pub vae: VaeHyper,
    pub sdrm: SdrmHyper,
    pub mf: MfHyper,
    /// Share of each validation user's items held out as ground truth.
    pub holdout_fraction: f64,
    pub k: usize,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            folds: 5,
            fold_seed: 0,
            vae: VaeHyper::default(),
            sdrm: SdrmHyper::default(),
            mf: MfHyper::default(),
            holdout_fraction: 0.2,
            k: 10,
        }
    }
}

/// Each fold trains on the remaining users, generates as many synthetic users
/// as it trained on, and scores MF trained on those plus the fold's visible
/// items. Only training and validation users take part.
pub struct PipelineObjective {
    folds: Vec<(InteractionMatrix, InteractionMatrix)>,
    settings: PipelineSettings,
}

impl PipelineObjective {
    /// With one fold the given split is used as is; otherwise the pooled users
    /// are re-partitioned.
    pub fn new(train: &InteractionMatrix, validation: &InteractionMatrix, settings: PipelineSettings) -> Result<Self> {
        let folds = if settings.folds == 1 {
            vec![(train.clone(), validation.clone())]
        } else {
            let pool = InteractionMatrix::stack(&[train, validation])?;
            let parts = fold_partition(pool.n_users(), settings.folds, settings.fold_seed)?;
            (0..parts.len())
                .map(|f| {
                    let rest: Vec<usize> = parts
                        .iter()
                        .enumerate()
                        .filter(|&(g, _)| g != f)
                        .flat_map(|(_, p)| p.iter().copied())
                        .collect();
                    (pool.select_users(&rest), pool.select_users(&parts[f]))
                })
                .collect()
        };
        Ok(Self { folds, settings })
    }

    pub fn folds(&self) -> &[(InteractionMatrix, InteractionMatrix)] {
        &self.folds
    }

    fn run_fold(&self, fold: usize, vae_h: &VaeHyper, sdrm_h: &SdrmHyper, seed: u64) -> Result<f64> {
        let (train, val) = &self.folds[fold];
        let seed = seed.wrapping_add(fold as u64 * 1_000);
        let held = holdout_split(val, self.settings.holdout_fraction, seed)?;
        let vae = train_multivae(train, &held, vae_h, &mut ChaCha8Rng::seed_from_u64(seed), |_| {})?.model;
        let sdrm = train_sdrm(&vae, train, sdrm_h, &mut ChaCha8Rng::seed_from_u64(seed + 1), |_, _| {})?;
        let request = GenerateRequest {
            n_users: train.n_users(),
            mode: SamplerMode::Full,
            target_sparsity: train.sparsity(),
            seed: seed + 2,
        };
        let synthetic = generate_synthetic(&vae, &sdrm.model, &sdrm.schedule, train.item_ids(), &request)?;
        let data = EvalData {
            train,
            test: val,
            synthetic: Some(&synthetic.matrix),
            inject: InjectConfig {
                fraction: 1.0,
                holdout_fraction: self.settings.holdout_fraction,
            },
        };
        let run = evaluate_run(
            Protocol::Replace,
            &data,
            &Recommender::Mf(self.settings.mf.clone()),
            &[self.settings.k],
            seed + 3,
        )?;
        let score = run.recall[0];
        if !score.is_finite() {
            return Err(Error::Training(format!("fold {fold} produced a non-finite score")));
        }
        Ok(score)
    }
}

impl Objective for PipelineObjective {
    /// `budget` scales the SDRM epochs.
    fn evaluate(&self, config: &TrialConfig, budget: f64, seed: u64) -> Result<Vec<f64>> {
        let mut vae_h = self.settings.vae.clone();
        let mut sdrm_h = self.settings.sdrm.clone();
        apply_config(config, &mut vae_h, &mut sdrm_h);
        sdrm_h.epochs = ((sdrm_h.epochs as f64 * budget).ceil() as usize).max(1);
        (0..self.folds.len()).map(|f| self.run_fold(f, &vae_h, &sdrm_h, seed)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpo::space::SearchSpace;
    use rand::Rng;

    #[test]
    fn folds_partition_the_pool() {
        for (n, k) in [(10, 5), (93, 5), (7, 1), (5, 5)] {
            let parts = fold_partition(n, k, 4).unwrap();
            assert_eq!(parts.len(), k);
            let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
        assert_eq!(fold_partition(50, 5, 1).unwrap(), fold_partition(50, 5, 1).unwrap());
        assert!(fold_partition(3, 5, 0).is_err());
        assert!(fold_partition(3, 0, 0).is_err());
    }

    #[test]
    fn config_maps_onto_hyperparameters() {
        let config = SearchSpace::default().sample(&mut ChaCha8Rng::seed_from_u64(9));
        let (mut v, mut s) = (VaeHyper::default(), SdrmHyper::default());
        apply_config(&config, &mut v, &mut s);
        assert_eq!(v.latent_dim as f64, config[LATENT]);
        assert_eq!(s.hidden_width, v.latent_dim);
        assert_eq!(v.hidden, vec![config[VAE_HIDDEN] as usize]);
        assert_eq!(s.learning_rate, config[SDRM_LR]);
        assert_eq!(s.timesteps as f64, config[TIMESTEPS]);
    }

    fn blocks(n: usize, prefix: &str, seed: u64) -> InteractionMatrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|u| {
                let base = if u % 2 == 0 { 0 } else { 15 };
                (0..15u32).filter(|_| r.random_bool(0.4)).map(|i| i + base).collect()
            })
            .collect();
        InteractionMatrix::with_items((0..30).map(|i| i.to_string()).collect(), prefix, rows).unwrap()
    }

    fn small_settings(folds: usize) -> PipelineSettings {
        PipelineSettings {
            folds,
            vae: VaeHyper {
                latent_dim: 4,
                hidden: vec![16],
                max_epochs: 4,
                batch_size: 20,
                ..VaeHyper::default()
            },
            sdrm: SdrmHyper {
                epochs: 4,
                timesteps: 5,
                hidden_width: 4,
                batch_size: 20,
                ..SdrmHyper::default()
            },
            mf: MfHyper {
                factors: 4,
                epochs: 3,
                ..MfHyper::default()
            },
            ..PipelineSettings::default()
        }
    }

    #[test]
    fn one_fold_uses_the_given_split() {
        let (train, val) = (blocks(60, "t", 1), blocks(20, "v", 2));
        let obj = PipelineObjective::new(&train, &val, small_settings(1)).unwrap();
        assert_eq!(obj.folds().len(), 1);
        assert_eq!(obj.folds()[0].0, train);
        assert_eq!(obj.folds()[0].1, val);
        let scores = obj.evaluate(&TrialConfig::new(), 1.0, 3).unwrap();
        assert_eq!(scores.len(), 1);
        assert!((0.0..=1.0).contains(&scores[0]));
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let (train, val) = (blocks(60, "t", 1), blocks(20, "v", 2));
        let obj = PipelineObjective::new(&train, &val, small_settings(3)).unwrap();
        for (tr, va) in obj.folds() {
            assert_eq!(tr.n_users() + va.n_users(), 80);
            assert!(tr.user_ids().iter().all(|u| !va.user_ids().contains(u)));
        }
        let a = obj.evaluate(&TrialConfig::new(), 0.5, 7).unwrap();
        let b = obj.evaluate(&TrialConfig::new(), 0.5, 7).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
    }
}
