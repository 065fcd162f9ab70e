//! Latent decoding, global quantile thresholding and synthetic dataset I/O.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::io::{read_cells_csv, read_json, write_cells_csv, write_json};
use crate::dataset::InteractionMatrix;
use crate::error::{Error, Result};
use crate::nn::checkpoint::params_sha256;
use crate::nn::DenseMatrix;
use crate::sdrm::{sample_latents, DiffusionModel, NoiseSchedule, SamplerMode};
use crate::vae::VaeModel;

pub const SYNTHETIC_CELLS: &str = "synthetic.csv";
pub const SYNTHETIC_SIDECAR: &str = "synthetic.json";
pub const SYNTHETIC_USER_PREFIX: &str = "syn";

/// Decoder logits for sampled latents.
pub fn decode_latents(vae: &VaeModel, latents: &DenseMatrix) -> Result<DenseMatrix> {
    if latents.cols() != vae.latent_dim() {
        return Err(Error::config(format!(
            "latents have width {} but the decoder expects {}",
            latents.cols(),
            vae.latent_dim()
        )));
    }
    vae.decode(latents)
}

/// λ = sorted flat scores at index `min(⌊target·N⌋, N−1)`.
pub fn threshold_value(scores: &[f64], target_sparsity: f64) -> Result<f64> {
    if !(target_sparsity > 0.0 && target_sparsity < 1.0) {
        return Err(Error::config(format!("target sparsity {target_sparsity} outside (0, 1)")));
    }
    if scores.is_empty() {
        return Err(Error::Data("cannot threshold an empty score matrix".into()));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("score matrix contains non-finite values".into()));
    }
    if scores.iter().all(|&v| v == scores[0]) {
        return Err(Error::Data(format!(
            "all {} scores are tied at {}; no quantile separates them",
            scores.len(),
            scores[0]
        )));
    }
    let mut flat = scores.to_vec();
    let idx = ((target_sparsity * flat.len() as f64).floor() as usize).min(flat.len() - 1);
    let (_, lambda, _) = flat.select_nth_unstable_by(idx, f64::total_cmp);
    Ok(*lambda)
}

/// Cells with score ≥ λ become positives.
pub fn apply_threshold(scores: &DenseMatrix, lambda: f64) -> Vec<Vec<u32>> {
    (0..scores.rows())
        .into_par_iter()
        .map(|r| {
            scores
                .row(r)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v >= lambda)
                .map(|(i, _)| i as u32)
                .collect()
        })
        .collect()
}

/// Binarize at the global quantile for `target_sparsity`; returns rows and λ.
pub fn sparsity_threshold(scores: &DenseMatrix, target_sparsity: f64) -> Result<(Vec<Vec<u32>>, f64)> {
    let lambda = threshold_value(scores.as_slice(), target_sparsity)?;
    Ok((apply_threshold(scores, lambda), lambda))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub vae_sha256: String,
    pub sdrm_sha256: String,
    pub mode: SamplerMode,
    pub seed: u64,
    pub lambda: f64,
    pub target_sparsity: f64,
    pub achieved_sparsity: f64,
    pub n_users: usize,
    pub n_items: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub matrix: InteractionMatrix,
    pub provenance: Provenance,
}

#[derive(Clone, Debug)]
pub struct GenerateRequest {
    pub n_users: usize,
    pub mode: SamplerMode,
    pub target_sparsity: f64,
    pub seed: u64,
}

/// Sample latents, decode and threshold over the item vocabulary `item_ids`.
pub fn generate_synthetic(
    vae: &VaeModel,
    denoiser: &DiffusionModel,
    schedule: &NoiseSchedule,
    item_ids: &[String],
    req: &GenerateRequest,
) -> Result<SyntheticDataset> {
    if item_ids.len() != vae.n_items() {
        return Err(Error::config("item vocabulary does not match the VAE width"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let sampled = sample_latents(denoiser, schedule, req.n_users, req.mode, &mut rng)?;
    let scores = decode_latents(vae, &sampled.latents)?;
    let (rows, lambda) = sparsity_threshold(&scores, req.target_sparsity)?;
    let matrix = InteractionMatrix::with_items(item_ids.to_vec(), SYNTHETIC_USER_PREFIX, rows)?;
    let provenance = Provenance {
        vae_sha256: params_sha256(vae),
        sdrm_sha256: params_sha256(denoiser),
        mode: req.mode,
        seed: req.seed,
        lambda,
        target_sparsity: req.target_sparsity,
        achieved_sparsity: matrix.sparsity(),
        n_users: matrix.n_users(),
        n_items: matrix.n_items(),
    };
    Ok(SyntheticDataset { matrix, provenance })
}

/// Write `synthetic.csv` and `synthetic.json` into `dir`.
pub fn export_synthetic(dataset: &SyntheticDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_cells_csv(&dir.join(SYNTHETIC_CELLS), &dataset.matrix)?;
    write_json(&dir.join(SYNTHETIC_SIDECAR), &dataset.provenance)
}

pub fn load_synthetic(dir: &Path, item_ids: Vec<String>) -> Result<SyntheticDataset> {
    let provenance: Provenance = read_json(&dir.join(SYNTHETIC_SIDECAR))?;
    if item_ids.len() != provenance.n_items {
        return Err(Error::Data(format!(
            "synthetic data covers {} items, vocabulary has {}",
            provenance.n_items,
            item_ids.len()
        )));
    }
    let user_ids = (0..provenance.n_users)
        .map(|u| format!("{SYNTHETIC_USER_PREFIX}{u}"))
        .collect();
    let matrix = read_cells_csv(&dir.join(SYNTHETIC_CELLS), user_ids, item_ids)?;
    Ok(SyntheticDataset { matrix, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer, MlpNet};
    use crate::vae::VaeArchitecture;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn quantile_worked_example() {
        let scores = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let (rows, lambda) = sparsity_threshold(&scores, 0.75).unwrap();
        assert_eq!(lambda, 4.0);
        assert_eq!(rows, vec![vec![3]]);
    }

    #[test]
    fn ties_are_rejected() {
        let scores = DenseMatrix::filled(3, 3, 0.5);
        assert!(matches!(sparsity_threshold(&scores, 0.5), Err(Error::Data(_))));
        assert!(sparsity_threshold(&DenseMatrix::zeros(1, 2), 1.0).is_err());
        assert!(sparsity_threshold(&DenseMatrix::zeros(1, 2), 0.0).is_err());
    }

    #[test]
    fn constant_rows_from_zero_decoder() {
        let enc = MlpNet::from_layers(vec![Layer::zeros(3, 4, Activation::Identity)]).unwrap();
        let mut dec_layer = Layer::zeros(2, 3, Activation::Identity);
        dec_layer.bias = ndarray::Array1::from(vec![0.1, 0.2, 0.3]);
        let dec = MlpNet::from_layers(vec![dec_layer]).unwrap();
        let vae = VaeModel::from_parts(enc, dec).unwrap();
        let out = decode_latents(&vae, &DenseMatrix::filled(5, 2, 0.7)).unwrap();
        assert_eq!(out.shape(), (5, 3));
        assert!((0..5).all(|r| out.row(r) == [0.1, 0.2, 0.3]));
        assert!(decode_latents(&vae, &DenseMatrix::zeros(1, 3)).is_err());
    }

    proptest! {
        #[test]
        fn distinct_scores_keep_exact_top_share(n in 10usize..400, target in 0.05f64..0.95, seed in 0u64..1000) {
            // Distinct values in a seeded permutation: positives are exactly the
            // cells ranked at or above the quantile index.
            let mut values: Vec<f64> = (0..n).map(|i| i as f64).collect();
            rand::seq::SliceRandom::shuffle(values.as_mut_slice(), &mut rng(seed));
            let scores = DenseMatrix::from_vec(1, n, values.clone()).unwrap();
            let (rows, lambda) = sparsity_threshold(&scores, target).unwrap();
            let idx = ((target * n as f64).floor() as usize).min(n - 1);
            prop_assert_eq!(lambda, idx as f64);
            prop_assert_eq!(rows[0].len(), n - idx);
            for &i in &rows[0] {
                prop_assert!(values[i as usize] >= lambda);
            }
            let achieved = 1.0 - rows[0].len() as f64 / n as f64;
            prop_assert!((achieved - target).abs() <= 1.0 / n as f64 + 1e-12);
        }

        #[test]
        fn raising_target_never_adds_positives(seed in 0u64..500, lo in 0.05f64..0.9, step in 0.0f64..0.09) {
            let scores = crate::vae::gaussian(12, 9, &mut rng(seed));
            let (a, _) = sparsity_threshold(&scores, lo).unwrap();
            let (b, _) = sparsity_threshold(&scores, lo + step).unwrap();
            let count = |m: &Vec<Vec<u32>>| m.iter().map(Vec::len).sum::<usize>();
            prop_assert!(count(&b) <= count(&a));
        }
    }

    fn tiny_models() -> (VaeModel, DiffusionModel, NoiseSchedule, Vec<String>) {
        let arch = VaeArchitecture {
            n_items: 30,
            latent_dim: 4,
            hidden: vec![8],
        };
        let vae = VaeModel::new(&arch, &mut rng(1)).unwrap();
        let den = DiffusionModel::new(4, 1, 8, &mut rng(2)).unwrap();
        let schedule = NoiseSchedule::with_defaults(5).unwrap();
        let items = (0..30).map(|i| format!("i{i}")).collect();
        (vae, den, schedule, items)
    }

    #[test]
    fn generated_sparsity_and_lambda_reproduce() {
        let (vae, den, schedule, items) = tiny_models();
        for seed in 0..5 {
            let req = GenerateRequest {
                n_users: 200,
                mode: SamplerMode::Multi,
                target_sparsity: 0.9,
                seed,
            };
            let ds = generate_synthetic(&vae, &den, &schedule, &items, &req).unwrap();
            assert_eq!(ds.matrix.n_users(), 200);
            assert!((ds.matrix.sparsity() - 0.9).abs() <= 0.005);

            let mut r = rng(seed);
            let latents = sample_latents(&den, &schedule, 200, SamplerMode::Multi, &mut r).unwrap();
            let scores = decode_latents(&vae, &latents.latents).unwrap();
            assert_eq!(apply_threshold(&scores, ds.provenance.lambda), ds.matrix.rows());
        }
    }

    #[test]
    fn export_round_trip_and_hashes() {
        let (vae, den, schedule, items) = tiny_models();
        let req = GenerateRequest {
            n_users: 40,
            mode: SamplerMode::Full,
            target_sparsity: 0.8,
            seed: 3,
        };
        let ds = generate_synthetic(&vae, &den, &schedule, &items, &req).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_synthetic(&ds, dir.path()).unwrap();
        assert_eq!(load_synthetic(dir.path(), items.clone()).unwrap(), ds);

        let ckpt = dir.path().join("vae.sdrm");
        vae.save(&ckpt).unwrap();
        let bytes = std::fs::read(&ckpt).unwrap();
        assert_eq!(crate::nn::checkpoint::sha256_hex(&bytes), ds.provenance.vae_sha256);
    }

    #[test]
    fn empty_dataset_exports_header_only() {
        let matrix = InteractionMatrix::with_items(vec!["a".into()], SYNTHETIC_USER_PREFIX, vec![]).unwrap();
        let ds = SyntheticDataset {
            provenance: Provenance {
                vae_sha256: String::new(),
                sdrm_sha256: String::new(),
                mode: SamplerMode::Full,
                seed: 0,
                lambda: 0.0,
                target_sparsity: 0.5,
                achieved_sparsity: 1.0,
                n_users: 0,
                n_items: 1,
            },
            matrix,
        };
        let dir = tempfile::tempdir().unwrap();
        export_synthetic(&ds, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(SYNTHETIC_CELLS)).unwrap();
        assert_eq!(text, "user_idx,item_idx\n");
    }
}
