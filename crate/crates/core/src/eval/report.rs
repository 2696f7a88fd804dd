use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::{Level, Metrics, MetricsRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
}

pub fn mean_std(v: &[f64]) -> MeanStd {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 {
        0.0
    } else {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: Level,
    pub runs: usize,
    pub metrics: BTreeMap<String, MeanStd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub levels: Vec<LevelSummary>,
}

/// Mean ± sample std per level. Records of one run that carry fold ids are
/// first averaged over folds; the spread is then taken across runs.
pub fn report(records: &[MetricsRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::Validation("report needs at least one run".into()));
    }
    let mut cells: BTreeMap<(Level, usize), Vec<&Metrics>> = BTreeMap::new();
    for r in records {
        cells.entry((r.level, r.run)).or_default().push(&r.metrics);
    }
    let mut per_level: BTreeMap<Level, Vec<[f64; 8]>> = BTreeMap::new();
    for ((level, _), ms) in cells {
        let mut avg = [0.0; 8];
        for m in &ms {
            for (a, v) in avg.iter_mut().zip(m.values()) {
                *a += v / ms.len() as f64;
            }
        }
        per_level.entry(level).or_default().push(avg);
    }
    let levels = per_level
        .into_iter()
        .map(|(level, runs)| LevelSummary {
            level,
            runs: runs.len(),
            metrics: Metrics::NAMES
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    let col: Vec<f64> = runs.iter().map(|r| r[i]).collect();
                    (name.to_string(), mean_std(&col))
                })
                .collect(),
        })
        .collect();
    Ok(Summary { levels })
}

impl Summary {
    /// One row per level with `<metric>_mean` and `<metric>_std` columns.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,runs");
        for n in Metrics::NAMES {
            s.push_str(&format!(",{n}_mean,{n}_std"));
        }
        s.push('\n');
        for l in &self.levels {
            let name = match l.level {
                Level::Fragment => "fragment",
                Level::Subject => "subject",
            };
            s.push_str(&format!("{name},{}", l.runs));
            for n in Metrics::NAMES {
                let m = l.metrics[n];
                s.push_str(&format!(",{:.6},{:.6}", m.mean, m.std));
            }
            s.push('\n');
        }
        s
    }

    pub fn get(&self, level: Level, metric: &str) -> Option<MeanStd> {
        self.levels.iter().find(|l| l.level == level)?.metrics.get(metric).copied()
    }
}
