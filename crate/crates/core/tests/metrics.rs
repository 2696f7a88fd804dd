use cardioforge::eval::{metrics, ConfusionCounts, Metrics};
use proptest::prelude::*;

/// Metrics from explicit per-item outcomes, with 0 for every empty ratio.
fn oracle(truth: &[bool], pred: &[bool]) -> [f64; 8] {
    let n = truth.len() as f64;
    let count = |f: &dyn Fn(bool, bool) -> bool| truth.iter().zip(pred).filter(|(t, p)| f(**t, **p)).count() as f64;
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let tp = count(&|t, p| t && p);
    let tn = count(&|t, p| !t && !p);
    let fp = count(&|t, p| !t && p);
    let fn_ = count(&|t, p| t && !p);
    let tpr = div(tp, tp + fn_);
    let tnr = div(tn, tn + fp);
    let prec = div(tp, tp + fp);
    let f1 = if prec + tpr == 0.0 { 0.0 } else { 2.0 * prec * tpr / (prec + tpr) };
    let x: Vec<f64> = truth.iter().map(|&t| t as u8 as f64).collect();
    let y: Vec<f64> = pred.iter().map(|&p| p as u8 as f64).collect();
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let mcc = if sxx == 0.0 || syy == 0.0 { 0.0 } else { sxy / (sxx * syy).sqrt() };
    [(tp + tn) / n, (tpr + tnr) / 2.0, tpr, tnr, div(fp, tp + fp), div(fp, tn + fp), f1, mcc]
}

proptest! {
    #[test]
    fn counts_match_itemwise_oracle(items in prop::collection::vec((any::<bool>(), any::<bool>()), 1..300)) {
        let (truth, pred): (Vec<bool>, Vec<bool>) = items.into_iter().unzip();
        let c = |t: bool, p: bool| truth.iter().zip(&pred).filter(|(a, b)| **a == t && **b == p).count() as u64;
        let m = metrics(&ConfusionCounts::new(c(true, true), c(false, false), c(false, true), c(true, false))).unwrap();
        for (i, (got, want)) in m.values().iter().zip(oracle(&truth, &pred)).enumerate() {
            prop_assert!((got - want).abs() < 1e-12, "{}: {} vs {}", Metrics::NAMES[i], got, want);
        }
        prop_assert!((-1.0..=1.0).contains(&m.mcc));
    }
}

#[test]
fn empty_matrix_is_rejected() {
    assert!(metrics(&ConfusionCounts::new(0, 0, 0, 0)).is_err());
}
