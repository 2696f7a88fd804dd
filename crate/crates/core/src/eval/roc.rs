use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal_io::Label;

pub const ROC_GRID_POINTS: usize = 101;

/// Empirical ROC, points ordered by decreasing threshold from (0,0) to (1,1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    /// Starts at +inf, written as the string `"inf"` in JSON.
    #[serde(with = "thresholds_serde")]
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

mod thresholds_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Value {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let out: Vec<Value> = v
            .iter()
            .map(|&x| match x {
                x if x.is_finite() => Value::Num(x),
                x if x > 0.0 => Value::Text("inf".into()),
                x if x < 0.0 => Value::Text("-inf".into()),
                _ => Value::Text("nan".into()),
            })
            .collect();
        out.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Value>::deserialize(d)?
            .into_iter()
            .map(|v| match v {
                Value::Num(x) => Ok(x),
                Value::Text(t) => match t.as_str() {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    other => Err(serde::de::Error::custom(format!("bad threshold {other:?}"))),
                },
            })
            .collect()
    }
}

/// Sweep every unique score as a threshold (`score >= t` is positive).
pub fn roc(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Validation(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("ROC scores must be finite".into()));
    }
    let pos = labels.iter().filter(|l| l.is_positive()).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Validation("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]].is_positive() {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
        thresholds.push(t);
    }
    let auc = fpr
        .windows(2)
        .zip(tpr.windows(2))
        .map(|(f, t)| (f[1] - f[0]) * (t[0] + t[1]) / 2.0)
        .sum();
    Ok(RocCurve {
        fpr,
        tpr,
        thresholds,
        auc,
    })
}

impl RocCurve {
    /// TPR at `f`, linear between points; on a vertical run the highest TPR.
    pub fn tpr_at(&self, f: f64) -> f64 {
        let i = self.fpr.partition_point(|&x| x <= f).saturating_sub(1);
        if self.fpr[i] == f || i + 1 == self.fpr.len() {
            return self.tpr[i];
        }
        let (f0, f1) = (self.fpr[i], self.fpr[i + 1]);
        let w = (f - f0) / (f1 - f0);
        self.tpr[i] + w * (self.tpr[i + 1] - self.tpr[i])
    }
}

/// Vertically averaged curve with a pointwise 2.5%–97.5% envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocBands {
    pub fpr: Vec<f64>,
    pub tpr_mean: Vec<f64>,
    pub tpr_lo: Vec<f64>,
    pub tpr_hi: Vec<f64>,
}

/// Outward-rounded empirical quantiles: the lower edge takes the order
/// statistic at `floor(q·(n−1))`, the upper at `ceil(q·(n−1))`. With two
/// runs this is the pointwise min and max.
pub fn roc_bands(curves: &[RocCurve]) -> Result<RocBands> {
    if curves.len() < 2 {
        return Err(Error::Validation(format!("ROC bands need at least 2 runs, got {}", curves.len())));
    }
    let n = curves.len();
    let lo_idx = (0.025 * (n - 1) as f64).floor() as usize;
    let hi_idx = ((0.975 * (n - 1) as f64).ceil() as usize).min(n - 1);
    let mut bands = RocBands {
        fpr: Vec::with_capacity(ROC_GRID_POINTS),
        tpr_mean: Vec::with_capacity(ROC_GRID_POINTS),
        tpr_lo: Vec::with_capacity(ROC_GRID_POINTS),
        tpr_hi: Vec::with_capacity(ROC_GRID_POINTS),
    };
    for k in 0..ROC_GRID_POINTS {
        let f = k as f64 / (ROC_GRID_POINTS - 1) as f64;
        let mut v: Vec<f64> = curves.iter().map(|c| c.tpr_at(f)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        v.sort_by(f64::total_cmp);
        bands.fpr.push(f);
        bands.tpr_mean.push(mean);
        bands.tpr_lo.push(v[lo_idx]);
        bands.tpr_hi.push(v[hi_idx]);
    }
    Ok(bands)
}

impl RocBands {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr_mean,tpr_lo,tpr_hi\n");
        for i in 0..self.fpr.len() {
            s.push_str(&format!(
                "{:.2},{:.6},{:.6},{:.6}\n",
                self.fpr[i], self.tpr_mean[i], self.tpr_lo[i], self.tpr_hi[i]
            ));
        }
        s
    }
}
