use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::halving::{successive_halving, DEFAULT_RUNGS};
use super::space::{SearchSpace, TrialConfig};
use crate::error::{Error, Result};

/// Scores a configuration; higher is better.
pub trait Objective: Sync {
    /// Per-fold validation scores when training with `budget` ∈ (0, 1] of
    /// the configured epochs.
    fn evaluate(&self, config: &TrialConfig, budget: f64, seed: u64) -> Result<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    /// Number of trials.
    pub budget: usize,
    pub seed: u64,
    pub rungs: Vec<f64>,
    pub keep_fraction: f64,
    /// Trials per successive-halving bracket.
    pub bracket_size: usize,
    /// Trials drawn uniformly before local refinement starts.
    pub startup_trials: usize,
    /// Chance of a uniform draw after the startup phase.
    pub explore_probability: f64,
    /// Refinement perturbs one of this many best trials.
    pub elite: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            budget: 50,
            seed: 0,
            rungs: DEFAULT_RUNGS.to_vec(),
            keep_fraction: 0.5,
            bracket_size: 8,
            startup_trials: 16,
            explore_probability: 0.25,
            elite: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialResult {
    pub id: usize,
    pub bracket: usize,
    pub config: TrialConfig,
    /// Number of rungs the trial ran.
    pub rung_reached: usize,
    /// Mean fold score per rung run; `None` where the objective failed.
    pub rung_scores: Vec<Option<f64>>,
    /// Fold scores at the last rung run.
    pub fold_scores: Vec<f64>,
    /// Mean of `fold_scores`.
    pub mean: Option<f64>,
    /// Mean fold score at full budget; absent for pruned or failed trials.
    pub score: Option<f64>,
    pub pruned: bool,
    pub failed: bool,
    /// Seconds spent in the objective; not serialized and ignored by equality
    /// so traces stay reproducible.
    #[serde(skip)]
    pub wall_secs: f64,
}

impl PartialEq for TrialResult {
    fn eq(&self, o: &Self) -> bool {
        self.id == o.id
            && self.bracket == o.bracket
            && self.config == o.config
            && self.rung_reached == o.rung_reached
            && self.rung_scores == o.rung_scores
            && self.fold_scores == o.fold_scores
            && self.mean == o.mean
            && self.score == o.score
            && self.pruned == o.pruned
            && self.failed == o.failed
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: TrialResult,
    pub trace: Vec<TrialResult>,
}

/// Per-trial seed derived from the search seed.
pub fn trial_seed(search_seed: u64, id: usize) -> u64 {
    search_seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(id as u64 + 1)
}

/// Trials run in brackets of `bracket_size` under successive halving. The
/// first `startup_trials` configurations are uniform draws; later ones are
/// mostly perturbations of the current best trials.
pub fn search<O: Objective + ?Sized>(
    space: &SearchSpace,
    settings: &SearchSettings,
    objective: &O,
    mut on_trial: impl FnMut(&TrialResult),
) -> Result<SearchOutcome> {
    space.validate()?;
    if settings.budget == 0 {
        return Err(Error::Usage("search budget must be at least one trial".into()));
    }
    if settings.bracket_size == 0 {
        return Err(Error::config("bracket size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut trace: Vec<TrialResult> = Vec::with_capacity(settings.budget);
    let mut seen = BTreeSet::new();
    let full_rungs = settings.rungs.len();

    let mut bracket = 0;
    while trace.len() < settings.budget {
        let size = settings.bracket_size.min(settings.budget - trace.len());
        let mut configs = Vec::with_capacity(size);
        for _ in 0..size {
            let config = propose(space, settings, &trace, &seen, &mut rng);
            seen.insert(config_key(&config));
            configs.push(config);
        }
        let first_id = trace.len();
        let folds: Vec<Mutex<(Vec<f64>, bool, f64)>> =
            configs.iter().map(|_| Mutex::new((Vec::new(), false, 0.0))).collect();
        let outcomes = successive_halving(&configs, &settings.rungs, settings.keep_fraction, |i, config, budget| {
            let started = Instant::now();
            let result = objective.evaluate(config, budget, trial_seed(settings.seed, first_id + i));
            let mut slot = folds[i].lock().expect("fold slot");
            slot.2 += started.elapsed().as_secs_f64();
            match result {
                Ok(scores) if !scores.is_empty() && scores.iter().all(|s| s.is_finite()) => {
                    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
                    slot.0 = scores;
                    mean
                }
                _ => {
                    slot.1 = true;
                    f64::NEG_INFINITY
                }
            }
        })?;
        for (i, (config, outcome)) in configs.into_iter().zip(outcomes).enumerate() {
            let (fold_scores, failed, wall_secs) = folds[i].lock().expect("fold slot").clone();
            let reached = outcome.rung_scores.len();
            let mean = (!failed && !fold_scores.is_empty())
                .then(|| fold_scores.iter().sum::<f64>() / fold_scores.len() as f64);
            let score = if reached == full_rungs { mean } else { None };
            let result = TrialResult {
                id: first_id + i,
                bracket,
                config,
                rung_reached: reached,
                rung_scores: outcome.rung_scores.iter().map(|s| s.is_finite().then_some(*s)).collect(),
                fold_scores,
                mean,
                score,
                pruned: reached < full_rungs,
                failed,
                wall_secs,
            };
            on_trial(&result);
            trace.push(result);
        }
        bracket += 1;
    }
    let best = trace
        .iter()
        .filter_map(|t| t.score.map(|s| (s, t)))
        .fold(None::<(f64, &TrialResult)>, |acc, (s, t)| match acc {
            Some((bs, _)) if bs >= s => acc,
            _ => Some((s, t)),
        })
        .map(|(_, t)| t.clone())
        .ok_or_else(|| Error::Training("every trial failed".into()))?;
    Ok(SearchOutcome { best, trace })
}

fn config_key(config: &TrialConfig) -> Vec<(String, u64)> {
    config.iter().map(|(k, v)| (k.clone(), v.to_bits())).collect()
}

/// Rank for refinement: deeper rungs first, then the last score.
fn progress(t: &TrialResult) -> (usize, f64) {
    (t.rung_reached, t.rung_scores.last().copied().flatten().unwrap_or(f64::NEG_INFINITY))
}

fn propose<R: Rng + ?Sized>(
    space: &SearchSpace,
    settings: &SearchSettings,
    trace: &[TrialResult],
    seen: &BTreeSet<Vec<(String, u64)>>,
    rng: &mut R,
) -> TrialConfig {
    let refine = trace.len() >= settings.startup_trials && !rng.random_bool(settings.explore_probability.clamp(0.0, 1.0));
    let mut elite: Vec<&TrialResult> = trace.iter().filter(|t| !t.failed).collect();
    elite.sort_by(|a, b| {
        let (ra, sa) = progress(a);
        let (rb, sb) = progress(b);
        rb.cmp(&ra).then(sb.total_cmp(&sa)).then(a.id.cmp(&b.id))
    });
    elite.truncate(settings.elite.max(1));
    let mut candidate = space.sample(rng);
    for _ in 0..20 {
        candidate = if refine && !elite.is_empty() {
            let base = elite[rng.random_range(0..elite.len())];
            space.perturb(&base.config, rng)
        } else {
            space.sample(rng)
        };
        if !seen.contains(&config_key(&candidate)) {
            break;
        }
    }
    candidate
}

/// One JSON object per trial.
pub fn write_trace(path: &Path, trace: &[TrialResult]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for t in trace {
        serde_json::to_writer(&mut w, t)?;
        writeln!(w).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TrialResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
