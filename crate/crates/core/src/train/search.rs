//! Random hyperparameter search scored by mean validation MCC.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ParamRange {
    Uniform { lo: f64, hi: f64 },
    LogUniform { lo: f64, hi: f64 },
    /// Inclusive integer range.
    Int { lo: i64, hi: i64 },
}

impl ParamRange {
    fn validate(&self, name: &str) -> Result<()> {
        let ok = match *self {
            ParamRange::Uniform { lo, hi } => lo <= hi && lo.is_finite() && hi.is_finite(),
            ParamRange::LogUniform { lo, hi } => lo > 0.0 && lo <= hi && hi.is_finite(),
            ParamRange::Int { lo, hi } => lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid range for {name}: {self:?}")))
        }
    }

    fn draw(&self, rng: &mut crate::rng::Rng) -> f64 {
        match *self {
            ParamRange::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            ParamRange::LogUniform { lo, hi } => (lo.ln() + (hi.ln() - lo.ln()) * rng.gen::<f64>()).exp(),
            ParamRange::Int { lo, hi } => rng.gen_range(lo..=hi) as f64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamRange>,
}

impl SearchSpace {
    /// Optimizer, scheduler and head-size tunables.
    pub fn classifier_default() -> Self {
        let mut p = BTreeMap::new();
        p.insert("learning_rate".into(), ParamRange::LogUniform { lo: 1e-5, hi: 1e-1 });
        p.insert("weight_decay".into(), ParamRange::LogUniform { lo: 1e-6, hi: 1e-2 });
        p.insert("momentum".into(), ParamRange::Uniform { lo: 0.5, hi: 0.99 });
        p.insert("gamma".into(), ParamRange::Uniform { lo: 0.05, hi: 1.0 });
        p.insert("step_size".into(), ParamRange::Int { lo: 1, hi: 10 });
        p.insert("batch_size".into(), ParamRange::Int { lo: 8, hi: 128 });
        p.insert("hidden_layers".into(), ParamRange::Int { lo: 1, hi: 4 });
        p.insert("hidden_size".into(), ParamRange::Int { lo: 16, hi: 1024 });
        Self { params: p }
    }
}

pub type TrialParams = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub params: TrialParams,
    pub scores: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: usize,
    pub trials: Vec<Trial>,
}

impl SearchResult {
    pub fn best_trial(&self) -> &Trial {
        &self.trials[self.best]
    }
}

/// Sample `n_trials` configurations and score each by the mean of
/// `runs_per_trial` objective calls `objective(params, run)`. Ties keep the
/// earlier trial.
pub fn random_search(
    space: &SearchSpace,
    n_trials: usize,
    runs_per_trial: usize,
    seed: u64,
    mut objective: impl FnMut(&TrialParams, usize) -> Result<f64>,
) -> Result<SearchResult> {
    if space.params.is_empty() {
        return Err(Error::Config("search space is empty".into()));
    }
    if n_trials == 0 || runs_per_trial == 0 {
        return Err(Error::Argument("need at least one trial and one run per trial".into()));
    }
    for (k, r) in &space.params {
        r.validate(k)?;
    }
    let mut rng = seeded(seed);
    let mut trials: Vec<Trial> = Vec::with_capacity(n_trials);
    let mut best = 0;
    for index in 0..n_trials {
        let params: TrialParams = space.params.iter().map(|(k, r)| (k.clone(), r.draw(&mut rng))).collect();
        let scores = (0..runs_per_trial)
            .map(|run| objective(&params, run))
            .collect::<Result<Vec<f64>>>()?;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        if index > 0 && mean > trials[best].mean {
            best = index;
        }
        trials.push(Trial {
            index,
            params,
            scores,
            mean,
        });
    }
    Ok(SearchResult { best, trials })
}
