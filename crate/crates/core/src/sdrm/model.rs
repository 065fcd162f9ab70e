use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{q_sample, NoiseSchedule};
use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};
use crate::nn::{checkpoint, Activation, AdamConfig, AdamState, DenseMatrix, MlpGrads, MlpNet, Parameters, Trace};
use crate::vae::{gaussian, normalize_rows, reparameterize, VaeModel};

/// Width of the sinusoidal timestep embedding.
pub const EMBED_DIM: usize = 16;
/// Lower clamp on ‖Δ‖² in the loss denominator.
pub const DENOM_FLOOR: f64 = 1e-8;

/// Sinusoidal embedding: `[sin(t·ω₀), …, sin(t·ω₇), cos(t·ω₀), …]` with
/// `ωᵢ = 10000^(−i/8)`.
pub fn timestep_embedding(t: usize) -> [f64; EMBED_DIM] {
    let half = EMBED_DIM / 2;
    let mut out = [0.0; EMBED_DIM];
    for i in 0..half {
        let w = 10_000f64.powf(-(i as f64) / half as f64);
        out[i] = (t as f64 * w).sin();
        out[half + i] = (t as f64 * w).cos();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdrmHyper {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub timesteps: usize,
    /// Variance of the perturbation ν added to z_t.
    pub noise_variance: f64,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

impl Default for SdrmHyper {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 1e-5,
            batch_size: 100,
            timesteps: 98,
            noise_variance: 0.11,
            hidden_layers: 2,
            hidden_width: 50,
        }
    }
}

/// Architecture and schedule header stored beside a denoiser checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionHeader {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub noise_variance: f64,
    pub latent_dim: usize,
    pub embedding_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
}

/// Shared tanh trunk over `[z_t | emb(t)]` feeding a score head and a noise head.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionModel {
    trunk: MlpNet,
    score_head: MlpNet,
    noise_head: MlpNet,
    latent_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionGrads {
    pub trunk: MlpGrads,
    pub score_head: MlpGrads,
    pub noise_head: MlpGrads,
}

struct Pass {
    trunk: Trace,
    score: Trace,
    noise: Trace,
}

impl DiffusionModel {
    pub fn new<R: Rng + ?Sized>(latent_dim: usize, hidden_layers: usize, hidden_width: usize, rng: &mut R) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::config("latent dimension must be at least 1"));
        }
        let input = latent_dim + EMBED_DIM;
        let trunk = if hidden_layers == 0 {
            MlpNet::identity(input)
        } else {
            let mut dims = vec![input];
            dims.extend(std::iter::repeat_n(hidden_width, hidden_layers));
            MlpNet::new(&dims, Activation::Tanh, Activation::Tanh, rng)?
        };
        let width = trunk.output_dim();
        Ok(Self {
            score_head: MlpNet::new(&[width, latent_dim], Activation::Identity, Activation::Identity, rng)?,
            noise_head: MlpNet::new(&[width, latent_dim], Activation::Identity, Activation::Identity, rng)?,
            trunk,
            latent_dim,
        })
    }

    pub fn from_parts(trunk: MlpNet, score_head: MlpNet, noise_head: MlpNet) -> Result<Self> {
        let latent_dim = score_head.output_dim();
        if trunk.input_dim() != latent_dim + EMBED_DIM
            || noise_head.output_dim() != latent_dim
            || score_head.input_dim() != trunk.output_dim()
            || noise_head.input_dim() != trunk.output_dim()
        {
            return Err(Error::config("diffusion trunk and head widths are inconsistent"));
        }
        Ok(Self {
            trunk,
            score_head,
            noise_head,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn trunk(&self) -> &MlpNet {
        &self.trunk
    }

    pub fn score_head(&self) -> &MlpNet {
        &self.score_head
    }

    pub fn noise_head(&self) -> &MlpNet {
        &self.noise_head
    }

    pub fn score_head_mut(&mut self) -> &mut MlpNet {
        &mut self.score_head
    }

    pub fn noise_head_mut(&mut self) -> &mut MlpNet {
        &mut self.noise_head
    }

    fn input(&self, z: &DenseMatrix, t: &[usize]) -> Result<DenseMatrix> {
        if z.cols() != self.latent_dim || t.len() != z.rows() {
            return Err(Error::config(format!(
                "denoiser expects {} latent columns and one timestep per row",
                self.latent_dim
            )));
        }
        let mut x = DenseMatrix::zeros(z.rows(), self.latent_dim + EMBED_DIM);
        for (r, &tr) in t.iter().enumerate() {
            let row = x.row_mut(r);
            row[..self.latent_dim].copy_from_slice(z.row(r));
            row[self.latent_dim..].copy_from_slice(&timestep_embedding(tr));
        }
        Ok(x)
    }

    fn pass(&self, z: &DenseMatrix, t: &[usize]) -> Result<Pass> {
        let trunk = self.trunk.forward(&self.input(z, t)?)?;
        let score = self.score_head.forward(trunk.output())?;
        let noise = self.noise_head.forward(trunk.output())?;
        Ok(Pass { trunk, score, noise })
    }

    /// `(s_θ, ε_θ)` at `(z, t)`.
    pub fn heads(&self, z: &DenseMatrix, t: &[usize]) -> Result<(DenseMatrix, DenseMatrix)> {
        let p = self.pass(z, t)?;
        Ok((p.score.output().clone(), p.noise.output().clone()))
    }

    pub fn predict_noise(&self, z: &DenseMatrix, t: &[usize]) -> Result<DenseMatrix> {
        let h = self.trunk.predict(&self.input(z, t)?)?;
        self.noise_head.predict(&h)
    }

    pub fn header(&self, schedule: &NoiseSchedule, noise_variance: f64) -> DiffusionHeader {
        let (beta_start, beta_end) = schedule.beta_range();
        let dims = self.trunk.dims();
        DiffusionHeader {
            timesteps: schedule.timesteps(),
            beta_start,
            beta_end,
            noise_variance,
            latent_dim: self.latent_dim,
            embedding_dim: EMBED_DIM,
            hidden_layers: dims.len() - 1,
            hidden_width: if dims.len() > 1 { dims[1] } else { 0 },
        }
    }

    pub fn save(&self, path: &Path, header: &DiffusionHeader) -> Result<()> {
        checkpoint::save(path, self)?;
        crate::dataset::io::write_json(&path.with_extension("json"), header)
    }

    pub fn load(path: &Path) -> Result<(Self, DiffusionHeader)> {
        let header: DiffusionHeader = crate::dataset::io::read_json(&path.with_extension("json"))?;
        if header.embedding_dim != EMBED_DIM {
            return Err(Error::Checkpoint(format!(
                "embedding width {} unsupported",
                header.embedding_dim
            )));
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(header.latent_dim, header.hidden_layers, header.hidden_width, &mut rng)?;
        checkpoint::load_into(path, &mut model)?;
        Ok((model, header))
    }
}

macro_rules! three_part_params {
    ($ty:ty) => {
        impl Parameters for $ty {
            fn tensors(&self) -> Vec<&[f64]> {
                let mut t = self.trunk.tensors();
                t.extend(self.score_head.tensors());
                t.extend(self.noise_head.tensors());
                t
            }

            fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
                let mut t = self.trunk.tensors_mut();
                t.extend(self.score_head.tensors_mut());
                t.extend(self.noise_head.tensors_mut());
                t
            }

            fn shapes(&self) -> Vec<(usize, usize)> {
                let mut s = self.trunk.shapes();
                s.extend(self.score_head.shapes());
                s.extend(self.noise_head.shapes());
                s
            }
        }
    };
}

three_part_params!(DiffusionModel);
three_part_params!(DiffusionGrads);

/// Random draws of one loss evaluation, frozen for reproducible checks.
#[derive(Clone, Debug)]
pub struct SdrmDraws {
    pub t: Vec<usize>,
    pub eps: DenseMatrix,
    pub nu: DenseMatrix,
}

impl SdrmDraws {
    pub fn sample<R: Rng + ?Sized>(rows: usize, k: usize, schedule: &NoiseSchedule, noise_variance: f64, rng: &mut R) -> Self {
        let t = (0..rows).map(|_| rng.random_range(1..=schedule.timesteps())).collect();
        let eps = gaussian(rows, k, rng);
        let sd = noise_variance.sqrt();
        let nu = gaussian(rows, k, rng).map(|v| v * sd);
        Self { t, eps, nu }
    }
}

/// Batch-mean loss over already-noised latents `z_t` and perturbations `ν`:
///
/// ```text
/// [‖(s(z_t+ν) − s(z_t)) − Δ‖² + ‖s(z_t) − Δ‖²] / max(‖Δ‖², 1e-8),   Δ = ε(z_t) − z_t
/// ```
pub fn sdrm_loss_at(model: &DiffusionModel, z_t: &DenseMatrix, t: &[usize], nu: &DenseMatrix) -> Result<(f64, DiffusionGrads)> {
    if nu.shape() != z_t.shape() {
        return Err(Error::config("ν must match z_t in shape"));
    }
    let b = z_t.rows();
    let k = model.latent_dim;
    let base = model.pass(z_t, t)?;
    let mut z_hat = z_t.clone();
    for (z, n) in z_hat.as_slice_mut().iter_mut().zip(nu.as_slice()) {
        *z += n;
    }
    let pert_trunk = model.trunk.forward(&model.input(&z_hat, t)?)?;
    let pert_score = model.score_head.forward(pert_trunk.output())?;

    let s = base.score.output();
    let e = base.noise.output();
    let s_hat = pert_score.output();
    let mut d_s = DenseMatrix::zeros(b, k);
    let mut d_e = DenseMatrix::zeros(b, k);
    let mut d_s_hat = DenseMatrix::zeros(b, k);
    let mut total = 0.0;
    let scale = 1.0 / b.max(1) as f64;
    for r in 0..b {
        let zr = z_t.row(r);
        let delta: Vec<f64> = e.row(r).iter().zip(zr).map(|(ei, zi)| ei - zi).collect();
        let a: Vec<f64> = (0..k).map(|j| s_hat.get(r, j) - s.get(r, j) - delta[j]).collect();
        let bb: Vec<f64> = (0..k).map(|j| s.get(r, j) - delta[j]).collect();
        let delta_sq: f64 = delta.iter().map(|v| v * v).sum();
        let clamped = delta_sq < DENOM_FLOOR;
        let denom = delta_sq.max(DENOM_FLOOR);
        let num: f64 = a.iter().chain(&bb).map(|v| v * v).sum();
        total += num / denom;
        for j in 0..k {
            d_s_hat.row_mut(r)[j] = scale * 2.0 * a[j] / denom;
            d_s.row_mut(r)[j] = scale * 2.0 * (bb[j] - a[j]) / denom;
            let mut de = -2.0 * (a[j] + bb[j]) / denom;
            if !clamped {
                de -= num * 2.0 * delta[j] / (denom * denom);
            }
            d_e.row_mut(r)[j] = scale * de;
        }
    }
    let loss = total * scale;
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite diffusion loss {loss}")));
    }

    let (score_grads, dh_s) = model.score_head.backward(&base.score, &d_s)?;
    let (noise_grads, dh_e) = model.noise_head.backward(&base.noise, &d_e)?;
    let (pert_score_grads, dh_hat) = model.score_head.backward(&pert_score, &d_s_hat)?;
    let mut dh = dh_s;
    for (x, y) in dh.as_slice_mut().iter_mut().zip(dh_e.as_slice()) {
        *x += y;
    }
    let (mut trunk_grads, _) = model.trunk.backward(&base.trunk, &dh)?;
    let (pert_trunk_grads, _) = model.trunk.backward(&pert_trunk, &dh_hat)?;
    trunk_grads.add_assign(&pert_trunk_grads);
    let mut score_head = score_grads;
    score_head.add_assign(&pert_score_grads);
    Ok((
        loss,
        DiffusionGrads {
            trunk: trunk_grads,
            score_head,
            noise_head: noise_grads,
        },
    ))
}

/// Loss for clean latents `z0` under frozen draws.
pub fn sdrm_loss_with(
    model: &DiffusionModel,
    z0: &DenseMatrix,
    schedule: &NoiseSchedule,
    draws: &SdrmDraws,
) -> Result<(f64, DiffusionGrads)> {
    let z_t = q_sample(z0, &draws.t, &draws.eps, schedule)?;
    sdrm_loss_at(model, &z_t, &draws.t, &draws.nu)
}

/// Encode binary rows through the frozen VAE, draw `t`, `ε`, `ν` and return
/// the loss with gradients for the denoiser only.
pub fn sdrm_loss<R: Rng + ?Sized>(
    model: &DiffusionModel,
    vae: &VaeModel,
    x_batch: &DenseMatrix,
    schedule: &NoiseSchedule,
    noise_variance: f64,
    rng: &mut R,
) -> Result<(f64, DiffusionGrads)> {
    let (mu, logvar) = vae.encode(&normalize_rows(x_batch))?;
    let z0 = reparameterize(&mu, &logvar, rng)?;
    let draws = SdrmDraws::sample(z0.rows(), z0.cols(), schedule, noise_variance, rng);
    sdrm_loss_with(model, &z0, schedule, &draws)
}

#[derive(Clone, Debug)]
pub struct TrainedSdrm {
    pub model: DiffusionModel,
    pub schedule: NoiseSchedule,
    /// Mean loss per epoch.
    pub losses: Vec<f64>,
}

impl TrainedSdrm {
    pub fn header(&self, noise_variance: f64) -> DiffusionHeader {
        self.model.header(&self.schedule, noise_variance)
    }
}

/// Fixed-epoch Adam training of the denoiser on latents of the frozen VAE.
pub fn train_sdrm<R: Rng + ?Sized>(
    vae: &VaeModel,
    train: &InteractionMatrix,
    hyper: &SdrmHyper,
    rng: &mut R,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainedSdrm> {
    if hyper.batch_size == 0 || hyper.learning_rate <= 0.0 || hyper.noise_variance < 0.0 {
        return Err(Error::config("SDRM batch size, learning rate and noise variance must be positive"));
    }
    if train.n_items() != vae.n_items() {
        return Err(Error::config(format!(
            "training matrix has {} items but the VAE expects {}",
            train.n_items(),
            vae.n_items()
        )));
    }
    let schedule = NoiseSchedule::with_defaults(hyper.timesteps)?;
    let mut model = DiffusionModel::new(vae.latent_dim(), hyper.hidden_layers, hyper.hidden_width, rng)?;
    let mut adam = AdamState::new(&model, AdamConfig::with_learning_rate(hyper.learning_rate));
    let mut order: Vec<usize> = (0..train.n_users()).collect();
    let mut losses = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for (batch, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let x = train.dense_rows(chunk);
            let (loss, grads) = sdrm_loss(&model, vae, &x, &schedule, hyper.noise_variance, rng)
                .map_err(|e| Error::Training(format!("SDRM epoch {epoch} batch {batch}: {e}")))?;
            adam.step(&mut model, &grads)
                .map_err(|e| Error::Training(format!("SDRM epoch {epoch} batch {batch}: {e}")))?;
            sum += loss * chunk.len() as f64;
        }
        let mean = sum / train.n_users().max(1) as f64;
        log::debug!("sdrm epoch {epoch}: loss {mean:.4}");
        on_epoch(epoch, mean);
        losses.push(mean);
    }
    Ok(TrainedSdrm {
        model,
        schedule,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, GradCheck};
    use crate::vae::VaeArchitecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let a = timestep_embedding(1);
        let b = timestep_embedding(2);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
        assert_eq!(timestep_embedding(0)[EMBED_DIM / 2], 1.0);
    }

    #[test]
    fn heads_have_latent_width() {
        let m = DiffusionModel::new(5, 2, 16, &mut rng(1)).unwrap();
        assert_eq!(m.trunk().input_dim(), 5 + EMBED_DIM);
        let (s, e) = m.heads(&DenseMatrix::zeros(3, 5), &[1, 2, 3]).unwrap();
        assert_eq!(s.shape(), (3, 5));
        assert_eq!(e.shape(), (3, 5));
        assert!(m.heads(&DenseMatrix::zeros(3, 4), &[1, 2, 3]).is_err());
    }

    #[test]
    fn zero_noise_identity_holds() {
        let mut r = rng(2);
        for layers in [0, 1, 3] {
            let m = DiffusionModel::new(4, layers, 8, &mut r).unwrap();
            let z = gaussian(6, 4, &mut r);
            let t: Vec<usize> = (1..=6).collect();
            let (loss, _) = sdrm_loss_at(&m, &z, &t, &DenseMatrix::zeros(6, 4)).unwrap();
            let (s, e) = m.heads(&z, &t).unwrap();
            let mut expected = 0.0;
            for row in 0..6 {
                let mut dd = 0.0;
                let mut sd = 0.0;
                for j in 0..4 {
                    let d = e.get(row, j) - z.get(row, j);
                    dd += d * d;
                    sd += (s.get(row, j) - d).powi(2);
                }
                expected += 1.0 + sd / dd;
            }
            assert!((loss - expected / 6.0).abs() < 1e-9);
            assert!(loss >= 1.0);
        }
    }

    #[test]
    fn shared_head_degenerates() {
        let mut m = DiffusionModel::new(3, 1, 8, &mut rng(3)).unwrap();
        let copy = m.noise_head().clone();
        *m.score_head_mut() = copy;
        let z = gaussian(1, 3, &mut rng(4));
        let (_, e) = m.heads(&z, &[2]).unwrap();
        let (loss, _) = sdrm_loss_at(&m, &z, &[2], &DenseMatrix::zeros(1, 3)).unwrap();
        let dd: f64 = (0..3).map(|j| (e.get(0, j) - z.get(0, j)).powi(2)).sum();
        let zz: f64 = z.as_slice().iter().map(|v| v * v).sum();
        assert!((loss - (1.0 + zz / dd)).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(5);
        let schedule = NoiseSchedule::with_defaults(20).unwrap();
        for restart in 0..6 {
            let m = DiffusionModel::new(3, restart % 4, 12, &mut r).unwrap();
            let z0 = gaussian(4, 3, &mut r);
            let draws = SdrmDraws::sample(4, 3, &schedule, 0.3, &mut r);
            let (_, g) = sdrm_loss_with(&m, &z0, &schedule, &draws).unwrap();
            let err = gradient_check(
                &m,
                &g,
                |p: &DiffusionModel| sdrm_loss_with(p, &z0, &schedule, &draws).unwrap().0,
                &GradCheck::default(),
            );
            assert!(err < 1e-4, "restart {restart}: {err}");
        }
    }

    #[test]
    fn loss_is_non_negative() {
        let mut r = rng(6);
        let schedule = NoiseSchedule::with_defaults(10).unwrap();
        for _ in 0..20 {
            let m = DiffusionModel::new(4, 1, 8, &mut r).unwrap();
            let z0 = gaussian(5, 4, &mut r);
            let draws = SdrmDraws::sample(5, 4, &schedule, 1.0, &mut r);
            assert!(sdrm_loss_with(&m, &z0, &schedule, &draws).unwrap().0 >= 0.0);
        }
    }

    fn tiny_vae_and_data() -> (VaeModel, InteractionMatrix) {
        let arch = VaeArchitecture {
            n_items: 12,
            latent_dim: 3,
            hidden: vec![6],
        };
        let vae = VaeModel::new(&arch, &mut rng(7)).unwrap();
        let rows = (0..30u32).map(|u| vec![u % 12, (u + 3) % 12, (u * 5 + 1) % 12]).collect();
        let mut rows: Vec<Vec<u32>> = rows;
        for r in &mut rows {
            r.sort_unstable();
            r.dedup();
        }
        (vae, InteractionMatrix::from_rows(12, rows).unwrap())
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (vae, data) = tiny_vae_and_data();
        let hyper = SdrmHyper {
            epochs: 0,
            hidden_width: 8,
            ..SdrmHyper::default()
        };
        let trained = train_sdrm(&vae, &data, &hyper, &mut rng(8), |_, _| {}).unwrap();
        let fresh = DiffusionModel::new(3, hyper.hidden_layers, 8, &mut rng(8)).unwrap();
        assert_eq!(trained.model, fresh);
        assert!(trained.losses.is_empty());
    }

    #[test]
    fn training_leaves_vae_untouched_and_is_deterministic() {
        let (vae, data) = tiny_vae_and_data();
        let before = checkpoint::params_sha256(&vae);
        let hyper = SdrmHyper {
            epochs: 5,
            hidden_width: 8,
            batch_size: 7,
            learning_rate: 1e-3,
            timesteps: 8,
            ..SdrmHyper::default()
        };
        let a = train_sdrm(&vae, &data, &hyper, &mut rng(9), |_, _| {}).unwrap();
        let b = train_sdrm(&vae, &data, &hyper, &mut rng(9), |_, _| {}).unwrap();
        assert_eq!(checkpoint::params_sha256(&vae), before);
        assert_eq!(a.model, b.model);
        assert_eq!(a.losses.len(), 5);
    }

    #[test]
    fn save_and_load() {
        let m = DiffusionModel::new(4, 2, 8, &mut rng(10)).unwrap();
        let s = NoiseSchedule::with_defaults(13).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sdrm.sdrm");
        m.save(&path, &m.header(&s, 0.21)).unwrap();
        let (back, header) = DiffusionModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.timesteps, 13);
        assert_eq!(header.hidden_layers, 2);
    }
}
