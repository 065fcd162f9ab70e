//! Multinomial-likelihood variational autoencoder over item vectors.
//!
//! The encoder maps an L2-normalised interaction row to `2K` outputs, the first
//! `K` being μ and the last `K` being log σ². The decoder maps a latent `z` to
//! one logit per item. Training minimises
//!
//! ```text
//! −Σᵢ xᵢ · log softmax(logits)ᵢ + β · ½ Σₖ (σₖ² + μₖ² − 1 − log σₖ²)
//! ```
//!
//! averaged over the batch, with β annealed linearly from 0.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{HeldOutUsers, InteractionMatrix};
use crate::error::{Error, Result};
use crate::eval::metrics::{recall_at_k, recommend_topk};
use crate::nn::{checkpoint, Activation, AdamConfig, AdamState, DenseMatrix, MlpGrads, MlpNet, Parameters};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeHyper {
    pub latent_dim: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta_max: f64,
    /// Optimizer steps over which β ramps to `beta_max`. `None` means half of
    /// the steps in `max_epochs`.
    pub anneal_steps: Option<usize>,
    pub patience: usize,
    pub max_epochs: usize,
    /// Share of each validation user's items held out for early stopping.
    pub validation_holdout: f64,
}

impl Default for VaeHyper {
    fn default() -> Self {
        Self {
            latent_dim: 50,
            hidden: vec![400],
            learning_rate: 1e-3,
            batch_size: 100,
            beta_max: 1.0,
            anneal_steps: None,
            patience: 10,
            max_epochs: 200,
            validation_holdout: 0.2,
        }
    }
}

impl VaeHyper {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 {
            return Err(Error::config("latent dimension must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.beta_max) {
            return Err(Error::config(format!("beta_max {} outside [0, 1]", self.beta_max)));
        }
        if self.batch_size == 0 || self.learning_rate <= 0.0 {
            return Err(Error::config("batch size and learning rate must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Architecture header stored next to a VAE checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    pub n_items: usize,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    encoder: MlpNet,
    decoder: MlpNet,
    latent_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VaeGrads {
    pub encoder: MlpGrads,
    pub decoder: MlpGrads,
}

impl VaeModel {
    pub fn new<R: Rng + ?Sized>(arch: &VaeArchitecture, rng: &mut R) -> Result<Self> {
        if arch.latent_dim == 0 || arch.n_items == 0 {
            return Err(Error::config("VAE needs at least one item and one latent unit"));
        }
        let mut enc_dims = vec![arch.n_items];
        enc_dims.extend(&arch.hidden);
        enc_dims.push(2 * arch.latent_dim);
        let mut dec_dims = vec![arch.latent_dim];
        dec_dims.extend(arch.hidden.iter().rev());
        dec_dims.push(arch.n_items);
        Ok(Self {
            encoder: MlpNet::new(&enc_dims, Activation::Tanh, Activation::Identity, rng)?,
            decoder: MlpNet::new(&dec_dims, Activation::Tanh, Activation::Identity, rng)?,
            latent_dim: arch.latent_dim,
        })
    }

    pub fn from_parts(encoder: MlpNet, decoder: MlpNet) -> Result<Self> {
        let latent_dim = decoder.input_dim();
        if encoder.output_dim() != 2 * latent_dim {
            return Err(Error::config(format!(
                "encoder outputs {} values but the decoder expects latent width {latent_dim}",
                encoder.output_dim()
            )));
        }
        if encoder.input_dim() != decoder.output_dim() {
            return Err(Error::config("encoder input and decoder output widths differ"));
        }
        Ok(Self {
            encoder,
            decoder,
            latent_dim,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn n_items(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn encoder(&self) -> &MlpNet {
        &self.encoder
    }

    pub fn decoder(&self) -> &MlpNet {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut MlpNet {
        &mut self.decoder
    }

    pub fn encoder_mut(&mut self) -> &mut MlpNet {
        &mut self.encoder
    }

    pub fn architecture(&self) -> VaeArchitecture {
        let dims = self.encoder.dims();
        VaeArchitecture {
            n_items: self.n_items(),
            latent_dim: self.latent_dim,
            hidden: dims[1..dims.len() - 1].to_vec(),
        }
    }

    /// `(μ, log σ²)` for already-normalised input rows.
    pub fn encode(&self, x: &DenseMatrix) -> Result<(DenseMatrix, DenseMatrix)> {
        let out = self.encoder.predict(x)?;
        Ok(split_latent(&out, self.latent_dim))
    }

    /// Item logits for latent rows.
    pub fn decode(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        self.decoder.predict(z)
    }

    /// μ for the given users of `matrix`, normalising their rows first.
    pub fn encode_users(&self, matrix: &InteractionMatrix, users: &[usize]) -> Result<(DenseMatrix, DenseMatrix)> {
        self.encode(&normalize_rows(&matrix.dense_rows(users)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, self)?;
        crate::dataset::io::write_json(&path.with_extension("json"), &self.architecture())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let arch: VaeArchitecture = crate::dataset::io::read_json(&path.with_extension("json"))?;
        let mut model = Self::new(&arch, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))?;
        checkpoint::load_into(path, &mut model)?;
        Ok(model)
    }
}

impl Parameters for VaeModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = self.encoder.shapes();
        s.extend(self.decoder.shapes());
        s
    }
}

impl Parameters for VaeGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut s = self.encoder.shapes();
        s.extend(self.decoder.shapes());
        s
    }
}

fn split_latent(out: &DenseMatrix, k: usize) -> (DenseMatrix, DenseMatrix) {
    (out.col_range(0, k), out.col_range(k, 2 * k))
}

/// Scale every non-zero row to unit L2 norm.
pub fn normalize_rows(x: &DenseMatrix) -> DenseMatrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    out
}

/// Standard normal matrix.
pub fn gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized by construction")
}

/// `z = μ + ε ⊙ exp(½ log σ²)` with the supplied `ε`.
pub fn reparameterize_with(mu: &DenseMatrix, logvar: &DenseMatrix, eps: &DenseMatrix) -> Result<DenseMatrix> {
    if mu.shape() != logvar.shape() || mu.shape() != eps.shape() {
        return Err(Error::config("μ, log σ² and ε must share a shape"));
    }
    let mut z = mu.clone();
    for ((zv, lv), e) in z.as_slice_mut().iter_mut().zip(logvar.as_slice()).zip(eps.as_slice()) {
        *zv += e * (0.5 * lv).exp();
    }
    Ok(z)
}

/// Reparameterised draw with `ε ~ N(0, I)`.
pub fn reparameterize<R: Rng + ?Sized>(mu: &DenseMatrix, logvar: &DenseMatrix, rng: &mut R) -> Result<DenseMatrix> {
    let eps = gaussian(mu.rows(), mu.cols(), rng);
    reparameterize_with(mu, logvar, &eps)
}

/// Batch-mean KL(N(μ, σ²) ‖ N(0, I)).
pub fn kl_divergence(mu: &DenseMatrix, logvar: &DenseMatrix) -> f64 {
    let total: f64 = mu
        .as_slice()
        .iter()
        .zip(logvar.as_slice())
        .map(|(m, lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum();
    total / mu.rows().max(1) as f64
}

/// Batch-mean multinomial negative log-likelihood `−Σᵢ xᵢ log softmax(logits)ᵢ`.
pub fn multinomial_nll(logits: &DenseMatrix, x: &DenseMatrix) -> f64 {
    let mut total = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        total -= x.row(r).iter().zip(row).map(|(xi, li)| xi * (li - lse)).sum::<f64>();
    }
    total / logits.rows().max(1) as f64
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Gradients of [`multivae_loss`] with respect to its inputs.
#[derive(Clone, Debug)]
pub struct VaeLossGrads {
    pub logits: DenseMatrix,
    pub mu: DenseMatrix,
    pub logvar: DenseMatrix,
}

/// Batch-mean `NLL + β·KL` and its gradients.
pub fn multivae_loss(
    logits: &DenseMatrix,
    x: &DenseMatrix,
    mu: &DenseMatrix,
    logvar: &DenseMatrix,
    beta: f64,
) -> Result<(f64, VaeLossGrads)> {
    if logits.shape() != x.shape() || mu.shape() != logvar.shape() || logits.rows() != mu.rows() {
        return Err(Error::config("multivae_loss shape mismatch"));
    }
    let batch = logits.rows().max(1) as f64;
    let loss = multinomial_nll(logits, x) + beta * kl_divergence(mu, logvar);
    if !loss.is_finite() {
        return Err(Error::Training(format!("non-finite VAE loss {loss}")));
    }
    let mut d_logits = DenseMatrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let lse = log_sum_exp(row);
        let xr = x.row(r);
        let n: f64 = xr.iter().sum();
        for ((d, l), xi) in d_logits.row_mut(r).iter_mut().zip(row).zip(xr) {
            *d = ((l - lse).exp() * n - xi) / batch;
        }
    }
    let d_mu = mu.map(|m| beta * m / batch);
    let d_logvar = logvar.map(|lv| beta * 0.5 * (lv.exp() - 1.0) / batch);
    Ok((
        loss,
        VaeLossGrads {
            logits: d_logits,
            mu: d_mu,
            logvar: d_logvar,
        },
    ))
}

/// Full forward/backward through encoder, reparameterisation and decoder with
/// a fixed `ε`. `input` is the normalised encoder input, `target` the binary rows.
pub fn vae_loss_and_grads(
    model: &VaeModel,
    input: &DenseMatrix,
    target: &DenseMatrix,
    eps: &DenseMatrix,
    beta: f64,
) -> Result<(f64, VaeGrads)> {
    let k = model.latent_dim;
    let enc = model.encoder.forward(input)?;
    let (mu, logvar) = split_latent(enc.output(), k);
    let z = reparameterize_with(&mu, &logvar, eps)?;
    let dec = model.decoder.forward(&z)?;
    let (loss, g) = multivae_loss(dec.output(), target, &mu, &logvar, beta)?;
    let (dec_grads, dz) = model.decoder.backward(&dec, &g.logits)?;

    let mut d_enc = DenseMatrix::zeros(mu.rows(), 2 * k);
    for r in 0..mu.rows() {
        let dzr = dz.row(r);
        let er = eps.row(r);
        let lvr = logvar.row(r);
        let gm = g.mu.row(r).to_vec();
        let glv = g.logvar.row(r).to_vec();
        let out = d_enc.row_mut(r);
        for j in 0..k {
            out[j] = gm[j] + dzr[j];
            out[k + j] = glv[j] + dzr[j] * er[j] * 0.5 * (0.5 * lvr[j]).exp();
        }
    }
    let (enc_grads, _) = model.encoder.backward(&enc, &d_enc)?;
    Ok((
        loss,
        VaeGrads {
            encoder: enc_grads,
            decoder: dec_grads,
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub beta: f64,
    pub val_recall_at_10: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedVae {
    pub model: VaeModel,
    pub history: Vec<VaeEpochLog>,
    /// Epoch (1-based) of the returned checkpoint.
    pub best_epoch: usize,
    pub best_recall: f64,
}

/// Mean Recall@k of decoder scores for held-out users, decoding μ and masking
/// each user's fold-in items.
pub fn validation_recall(model: &VaeModel, users: &HeldOutUsers, k: usize) -> Result<f64> {
    let ids: Vec<usize> = (0..users.n_users()).collect();
    let (mu, _) = model.encode_users(&users.fold_in, &ids)?;
    let logits = model.decode(&mu)?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for u in ids {
        let ranked = recommend_topk(logits.row(u), k, users.fold_in.row(u));
        if let Some(r) = recall_at_k(&ranked, &users.held_out[u], k) {
            total += r;
            counted += 1;
        }
    }
    Ok(if counted == 0 { 0.0 } else { total / counted as f64 })
}

/// Adam training with linear β annealing and early stopping on validation
/// Recall@10. Returns the best-scoring checkpoint, not the last one.
pub fn train_multivae<R: Rng + ?Sized>(
    train: &InteractionMatrix,
    validation: &HeldOutUsers,
    hyper: &VaeHyper,
    rng: &mut R,
    mut on_epoch: impl FnMut(&VaeEpochLog),
) -> Result<TrainedVae> {
    hyper.validate()?;
    if train.n_users() == 0 {
        return Err(Error::Data("cannot train a VAE on zero users".into()));
    }
    let arch = VaeArchitecture {
        n_items: train.n_items(),
        latent_dim: hyper.latent_dim,
        hidden: hyper.hidden.clone(),
    };
    let mut model = VaeModel::new(&arch, rng)?;
    let mut adam = AdamState::new(&model, AdamConfig::with_learning_rate(hyper.learning_rate));
    let batches_per_epoch = train.n_users().div_ceil(hyper.batch_size);
    let anneal = hyper
        .anneal_steps
        .unwrap_or(hyper.max_epochs * batches_per_epoch / 2)
        .max(1);

    let mut best = TrainedVae {
        model: model.clone(),
        history: Vec::new(),
        best_epoch: 0,
        best_recall: f64::NEG_INFINITY,
    };
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train.n_users()).collect();
    let mut history = Vec::new();
    for epoch in 1..=hyper.max_epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        let mut beta = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            beta = hyper.beta_max * (adam.step_count() as f64 / anneal as f64).min(1.0);
            let target = train.dense_rows(chunk);
            let input = normalize_rows(&target);
            let eps = gaussian(chunk.len(), hyper.latent_dim, rng);
            let (loss, grads) = vae_loss_and_grads(&model, &input, &target, &eps, beta)
                .map_err(|e| Error::Training(format!("VAE epoch {epoch}: {e}")))?;
            adam.step(&mut model, &grads)
                .map_err(|e| Error::Training(format!("VAE epoch {epoch}: {e}")))?;
            epoch_loss += loss * chunk.len() as f64;
        }
        let recall = validation_recall(&model, validation, 10)?;
        let log = VaeEpochLog {
            epoch,
            loss: epoch_loss / train.n_users() as f64,
            beta,
            val_recall_at_10: recall,
        };
        log::debug!("vae epoch {epoch}: loss {:.4} recall@10 {recall:.4}", log.loss);
        on_epoch(&log);
        history.push(log);
        if recall > best.best_recall {
            best.model = model.clone();
            best.best_epoch = epoch;
            best.best_recall = recall;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > hyper.patience {
                break;
            }
        }
    }
    best.history = history;
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradient_check, GradCheck, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn zero_model(n_items: usize, k: usize) -> VaeModel {
        let enc = MlpNet::from_layers(vec![Layer::zeros(n_items, 2 * k, Activation::Identity)]).unwrap();
        let dec = MlpNet::from_layers(vec![Layer::zeros(k, n_items, Activation::Identity)]).unwrap();
        VaeModel::from_parts(enc, dec).unwrap()
    }

    #[test]
    fn zero_input_zero_bias_gives_standard_normal() {
        let m = zero_model(6, 3);
        let (mu, lv) = m.encode(&DenseMatrix::zeros(2, 6)).unwrap();
        assert_eq!(mu.shape(), (2, 3));
        assert!(mu.as_slice().iter().chain(lv.as_slice()).all(|&v| v == 0.0));
    }

    #[test]
    fn encoder_layout_first_half_is_mu() {
        let mut m = zero_model(2, 2);
        let bias = ndarray::Array1::from(vec![1.0, 2.0, 3.0, 4.0]);
        m.encoder_mut().layers_mut()[0].bias = bias;
        let (mu, lv) = m.encode(&DenseMatrix::zeros(1, 2)).unwrap();
        assert_eq!(mu.row(0), &[1.0, 2.0]);
        assert_eq!(lv.row(0), &[3.0, 4.0]);
    }

    #[test]
    fn encode_decode_shapes_round_trip() {
        let arch = VaeArchitecture {
            n_items: 12,
            latent_dim: 4,
            hidden: vec![8],
        };
        let m = VaeModel::new(&arch, &mut rng(1)).unwrap();
        let (mu, _) = m.encode(&DenseMatrix::zeros(5, 12)).unwrap();
        assert_eq!(m.decode(&mu).unwrap().shape(), (5, 12));
        assert!(m.encode(&DenseMatrix::zeros(1, 11)).is_err());
        assert!(m.decode(&DenseMatrix::zeros(1, 5)).is_err());
        assert_eq!(m.architecture(), arch);
    }

    #[test]
    fn zero_sigma_reparameterizes_to_mu() {
        let mut r = rng(2);
        let mu = random(3, 4, &mut r);
        let lv = DenseMatrix::filled(3, 4, f64::NEG_INFINITY);
        assert_eq!(reparameterize(&mu, &lv, &mut r).unwrap(), mu);
    }

    #[test]
    fn reparameterize_moments() {
        let mut r = rng(3);
        let n = 10_000;
        let z = reparameterize(&DenseMatrix::zeros(n, 2), &DenseMatrix::zeros(n, 2), &mut r).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..n).map(|i| z.get(i, c)).collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.05, "mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "var {var}");
        }
        let a = reparameterize(&DenseMatrix::zeros(4, 2), &DenseMatrix::zeros(4, 2), &mut rng(9)).unwrap();
        let b = reparameterize(&DenseMatrix::zeros(4, 2), &DenseMatrix::zeros(4, 2), &mut rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_decoder_returns_bias() {
        let mut m = zero_model(3, 2);
        m.decoder_mut().layers_mut()[0].bias = ndarray::Array1::from(vec![0.5, -1.0, 2.0]);
        let logits = m.decode(&random(4, 2, &mut rng(4))).unwrap();
        for r in 0..4 {
            assert_eq!(logits.row(r), &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_divergence(&DenseMatrix::zeros(3, 4), &DenseMatrix::zeros(3, 4)), 0.0);
        let one = DenseMatrix::filled(1, 1, 1.0);
        assert!((kl_divergence(&one, &DenseMatrix::zeros(1, 1)) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_is_non_negative_and_zero_only_at_prior() {
        let mut r = rng(5);
        for _ in 0..200 {
            let mu = random(2, 3, &mut r);
            let lv = random(2, 3, &mut r);
            let kl = kl_divergence(&mu, &lv);
            assert!(kl > 0.0);
        }
    }

    #[test]
    fn uniform_logits_give_n_log_i() {
        let items = 8;
        let x = DenseMatrix::from_rows(&[vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]]).unwrap();
        let nll = multinomial_nll(&DenseMatrix::filled(1, items, 0.3), &x);
        assert!((nll - 3.0 * (items as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn nll_is_shift_invariant_and_non_negative() {
        let mut r = rng(6);
        for _ in 0..50 {
            let logits = random(3, 7, &mut r);
            let x = random(3, 7, &mut r).map(|v| if v > 0.2 { 1.0 } else { 0.0 });
            let shifted = logits.map(|v| v + 3.7);
            let a = multinomial_nll(&logits, &x);
            assert!(a >= 0.0);
            assert!((a - multinomial_nll(&shifted, &x)).abs() < 1e-9);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut r = rng(7);
        for restart in 0..5 {
            let arch = VaeArchitecture {
                n_items: 10,
                latent_dim: 3,
                hidden: vec![16],
            };
            let model = VaeModel::new(&arch, &mut r).unwrap();
            let target = random(4, 10, &mut r).map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            let input = normalize_rows(&target);
            let eps = gaussian(4, 3, &mut r);
            let beta = 0.3 + 0.1 * restart as f64;
            let (_, grads) = vae_loss_and_grads(&model, &input, &target, &eps, beta).unwrap();
            let err = gradient_check(
                &model,
                &grads,
                |m: &VaeModel| vae_loss_and_grads(m, &input, &target, &eps, beta).unwrap().0,
                &GradCheck::default(),
            );
            assert!(err < 1e-4, "restart {restart}: {err}");
        }
    }

    fn block_data(users: usize, seed: u64) -> InteractionMatrix {
        // Two user groups, each preferring one half of 20 items.
        let mut r = rng(seed);
        let rows = (0..users)
            .map(|u| {
                let base = if u % 2 == 0 { 0 } else { 10 };
                (0..10u32).filter(|_| r.random_bool(0.7)).map(|i| i + base).collect()
            })
            .collect();
        InteractionMatrix::from_rows(20, rows).unwrap()
    }

    #[test]
    fn patience_zero_stops_after_first_non_improving_epoch() {
        let train = block_data(40, 1);
        let val = crate::dataset::holdout_split(&block_data(10, 2), 0.3, 3).unwrap();
        let hyper = VaeHyper {
            latent_dim: 2,
            hidden: vec![8],
            batch_size: 10,
            patience: 0,
            max_epochs: 60,
            learning_rate: 1e-2,
            ..VaeHyper::default()
        };
        let trained = train_multivae(&train, &val, &hyper, &mut rng(4), |_| {}).unwrap();
        let h = &trained.history;
        let last = h.last().unwrap();
        let prev_best = h[..h.len() - 1]
            .iter()
            .map(|l| l.val_recall_at_10)
            .fold(f64::NEG_INFINITY, f64::max);
        if h.len() < 60 {
            assert!(last.val_recall_at_10 <= prev_best);
            // every earlier epoch improved on its predecessor
            assert!(h[..h.len() - 1]
                .windows(2)
                .all(|w| w[1].val_recall_at_10 > w[0].val_recall_at_10));
        }
        let best = h.iter().map(|l| l.val_recall_at_10).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(trained.best_recall, best);
        assert_eq!(validation_recall(&trained.model, &val, 10).unwrap(), best);
    }

    #[test]
    fn checkpoint_is_best_not_last() {
        let train = block_data(60, 5);
        let val = crate::dataset::holdout_split(&block_data(20, 6), 0.3, 7).unwrap();
        let hyper = VaeHyper {
            latent_dim: 2,
            hidden: vec![8],
            batch_size: 20,
            patience: 5,
            max_epochs: 40,
            learning_rate: 5e-3,
            ..VaeHyper::default()
        };
        let trained = train_multivae(&train, &val, &hyper, &mut rng(8), |_| {}).unwrap();
        assert!(trained
            .history
            .iter()
            .all(|l| l.val_recall_at_10 <= trained.best_recall));
        assert_eq!(trained.history[trained.best_epoch - 1].val_recall_at_10, trained.best_recall);
        assert!(trained.best_recall > 0.6, "planted blocks should be learnable: {}", trained.best_recall);
    }

    #[test]
    fn save_and_load() {
        let arch = VaeArchitecture {
            n_items: 7,
            latent_dim: 2,
            hidden: vec![5],
        };
        let m = VaeModel::new(&arch, &mut rng(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.sdrm");
        m.save(&path).unwrap();
        assert_eq!(VaeModel::load(&path).unwrap(), m);
    }
}
