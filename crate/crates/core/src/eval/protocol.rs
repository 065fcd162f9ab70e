//! Original / augment / replace training protocols scored on injected test users.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{ndcg_at_k, recall_at_k, recommend_topk};
use super::mf::{train_mf, MfHyper};
use super::report::{EvalReport, MetricSummary};
use crate::dataset::{inject_ground_truth, GroundTruthInjection, InjectConfig, InteractionMatrix};
use crate::error::{Error, Result};

pub const DEFAULT_K_LIST: [usize; 6] = [1, 3, 5, 10, 20, 50];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Real training users plus the injected test users.
    Original,
    /// Real training users, synthetic users and the injected test users.
    Augment,
    /// Synthetic users plus the injected test users.
    Replace,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Original, Protocol::Augment, Protocol::Replace];

    pub fn needs_synthetic(self) -> bool {
        !matches!(self, Protocol::Original)
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Self::Original),
            "augment" => Ok(Self::Augment),
            "replace" => Ok(Self::Replace),
            other => Err(Error::Usage(format!(
                "unknown protocol {other:?} (expected original|augment|replace)"
            ))),
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Original => "original",
            Self::Augment => "augment",
            Self::Replace => "replace",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Recommender {
    Mf(MfHyper),
    /// Rank items by training-set interaction count.
    Popularity,
}

impl Recommender {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mf(_) => "mf",
            Self::Popularity => "popularity",
        }
    }
}

/// Inputs shared by every protocol.
#[derive(Clone, Copy, Debug)]
pub struct EvalData<'a> {
    pub train: &'a InteractionMatrix,
    pub test: &'a InteractionMatrix,
    pub synthetic: Option<&'a InteractionMatrix>,
    pub inject: InjectConfig,
}

/// Training matrix for `protocol`, the rows of the injected users in it and
/// the injection itself.
pub fn protocol_training(
    protocol: Protocol,
    data: &EvalData<'_>,
    seed: u64,
) -> Result<(InteractionMatrix, Vec<usize>, GroundTruthInjection)> {
    let (_, injection) = inject_ground_truth(data.train, data.test, data.inject, seed)?;
    let synthetic = || {
        data.synthetic
            .ok_or_else(|| Error::Usage(format!("protocol {protocol} requires synthetic data")))
    };
    let base = match protocol {
        Protocol::Original => data.train.clone(),
        Protocol::Augment => InteractionMatrix::stack(&[data.train, synthetic()?])?,
        Protocol::Replace => synthetic()?.clone(),
    };
    let (matrix, rows) = injection.append_to(&base)?;
    Ok((matrix, rows, injection))
}

/// Metrics of one seeded run, aligned with the report's k list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub users_evaluated: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

pub fn evaluate_run(
    protocol: Protocol,
    data: &EvalData<'_>,
    recommender: &Recommender,
    k_list: &[usize],
    seed: u64,
) -> Result<RunMetrics> {
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(Error::config("k list must contain positive values"));
    }
    let (matrix, rows, injection) = protocol_training(protocol, data, seed)?;
    let score_fn: Box<dyn Fn(usize) -> Vec<f64> + Sync> = match recommender {
        Recommender::Mf(hyper) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6d66_5f73_6565_6421);
            let model = train_mf(&matrix, hyper, &mut rng)?.model;
            Box::new(move |u| model.user_scores(u))
        }
        Recommender::Popularity => {
            let counts: Vec<f64> = matrix.item_degrees().into_iter().map(|d| d as f64).collect();
            Box::new(move |_| counts.clone())
        }
    };
    let k_max = *k_list.iter().max().expect("non-empty");
    let per_user: Vec<Option<(Vec<f64>, Vec<f64>)>> = rows
        .par_iter()
        .enumerate()
        .map(|(j, &row)| {
            let relevant = &injection.users.held_out[j];
            if relevant.is_empty() {
                return None;
            }
            let ranked = recommend_topk(&score_fn(row), k_max, matrix.row(row));
            let recall = k_list.iter().map(|&k| recall_at_k(&ranked, relevant, k).unwrap_or(0.0)).collect();
            let ndcg = k_list.iter().map(|&k| ndcg_at_k(&ranked, relevant, k).unwrap_or(0.0)).collect();
            Some((recall, ndcg))
        })
        .collect();
    let scored: Vec<_> = per_user.into_iter().flatten().collect();
    if scored.is_empty() {
        return Err(Error::Data("no injected user has held-out items".into()));
    }
    let n = scored.len() as f64;
    let mean = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>, idx: usize| -> f64 {
        scored.iter().map(|s| pick(s)[idx]).sum::<f64>() / n
    };
    Ok(RunMetrics {
        seed,
        users_evaluated: scored.len(),
        recall: (0..k_list.len()).map(|i| mean(|s| &s.0, i)).collect(),
        ndcg: (0..k_list.len()).map(|i| mean(|s| &s.1, i)).collect(),
    })
}

/// Mean and sample standard deviation over one run per seed. Runs execute in
/// parallel; the result does not depend on scheduling.
pub fn evaluate_protocol(
    protocol: Protocol,
    data: &EvalData<'_>,
    recommender: &Recommender,
    seeds: &[u64],
    k_list: &[usize],
    dataset: &str,
) -> Result<EvalReport> {
    if seeds.is_empty() {
        return Err(Error::config("at least one evaluation seed is required"));
    }
    let runs = seeds
        .par_iter()
        .map(|&s| evaluate_run(protocol, data, recommender, k_list, s))
        .collect::<Result<Vec<_>>>()?;
    let metrics = k_list
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let (recall_mean, recall_std) = mean_std(runs.iter().map(|r| r.recall[i]));
            let (ndcg_mean, ndcg_std) = mean_std(runs.iter().map(|r| r.ndcg[i]));
            MetricSummary {
                k,
                recall_mean,
                recall_std,
                ndcg_mean,
                ndcg_std,
            }
        })
        .collect();
    Ok(EvalReport {
        dataset: dataset.to_string(),
        protocol,
        recommender: recommender.name().to_string(),
        runs: runs.len(),
        seeds: seeds.to_vec(),
        k_list: k_list.to_vec(),
        metrics,
        per_run: runs,
    })
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn blocks(n_users: usize, prefix: &str, seed: u64) -> InteractionMatrix {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n_users)
            .map(|u| {
                let base = if u % 2 == 0 { 0 } else { 20 };
                (0..20u32).filter(|_| r.random_bool(0.5)).map(|i| i + base).collect()
            })
            .collect();
        let items = (0..40).map(|i| i.to_string()).collect();
        InteractionMatrix::with_items(items, prefix, rows).unwrap()
    }

    fn data<'a>(train: &'a InteractionMatrix, test: &'a InteractionMatrix, syn: Option<&'a InteractionMatrix>) -> EvalData<'a> {
        EvalData {
            train,
            test,
            synthetic: syn,
            inject: InjectConfig::default(),
        }
    }

    #[test]
    fn protocol_matrices_have_expected_users() {
        let (train, test, syn) = (blocks(60, "u", 1), blocks(30, "t", 2), blocks(25, "s", 3));
        let d = data(&train, &test, Some(&syn));
        let (orig, rows, inj) = protocol_training(Protocol::Original, &d, 4).unwrap();
        assert_eq!(inj.users.n_users(), 6);
        assert_eq!(orig.n_users(), 66);
        assert_eq!(rows, (60..66).collect::<Vec<_>>());
        let (aug, _, _) = protocol_training(Protocol::Augment, &d, 4).unwrap();
        assert_eq!(aug.n_users(), 60 + 25 + 6);
        let (rep, rows, _) = protocol_training(Protocol::Replace, &d, 4).unwrap();
        assert_eq!(rep.n_users(), 31);
        assert_eq!(rows[0], 25);
        let none = data(&train, &test, None);
        assert!(matches!(protocol_training(Protocol::Replace, &none, 4), Err(Error::Usage(_))));
    }

    #[test]
    fn reports_are_deterministic_and_bounded() {
        let (train, test) = (blocks(80, "u", 5), blocks(50, "t", 6));
        let d = data(&train, &test, None);
        let rec = Recommender::Mf(MfHyper {
            factors: 8,
            epochs: 10,
            ..MfHyper::default()
        });
        let a = evaluate_protocol(Protocol::Original, &d, &rec, &[1, 2, 3], &DEFAULT_K_LIST, "toy").unwrap();
        let b = evaluate_protocol(Protocol::Original, &d, &rec, &[1, 2, 3], &DEFAULT_K_LIST, "toy").unwrap();
        assert_eq!(a, b);
        for m in &a.metrics {
            assert!((0.0..=1.0).contains(&m.recall_mean) && (0.0..=1.0).contains(&m.ndcg_mean));
            assert!(m.recall_std >= 0.0 && m.ndcg_std >= 0.0);
        }
        assert!(a.metrics.windows(2).all(|w| w[1].recall_mean >= w[0].recall_mean));
    }

    #[test]
    fn mf_beats_popularity_on_blocks() {
        let (train, test) = (blocks(120, "u", 7), blocks(60, "t", 8));
        let d = data(&train, &test, None);
        let seeds = [1, 2, 3];
        let mf = Recommender::Mf(MfHyper {
            factors: 8,
            epochs: 20,
            ..MfHyper::default()
        });
        let a = evaluate_protocol(Protocol::Original, &d, &mf, &seeds, &[10], "toy").unwrap();
        let p = evaluate_protocol(Protocol::Original, &d, &Recommender::Popularity, &seeds, &[10], "toy").unwrap();
        assert!(a.metrics[0].recall_mean > p.metrics[0].recall_mean);
    }

    #[test]
    fn parses_protocols() {
        for p in Protocol::ALL {
            assert_eq!(p.to_string().parse::<Protocol>().unwrap(), p);
        }
        assert!("both".parse::<Protocol>().is_err());
    }
}
