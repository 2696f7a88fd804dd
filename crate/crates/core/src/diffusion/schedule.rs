use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Terminal cumulative signal fraction a usable schedule must fall below.
pub const MAX_TERMINAL_ALPHA_BAR: f64 = 0.01;

/// βₜ, αₜ = 1 − βₜ and ᾱₜ = ∏αₛ for t = 1..=T, stored zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Validated schedule: every β in (0, 1) and ᾱ_T below
    /// [`MAX_TERMINAL_ALPHA_BAR`].
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        let s = Self::from_betas(betas)?;
        let last = *s.alpha_bars.last().expect("non-empty");
        if last >= MAX_TERMINAL_ALPHA_BAR {
            return Err(Error::Config(format!(
                "terminal alpha_bar {last:.4} must be below {MAX_TERMINAL_ALPHA_BAR}; raise beta_end or T"
            )));
        }
        Ok(s)
    }

    /// Same as [`NoiseSchedule::new`] without the terminal check; for
    /// single-step and analytic tests.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::new(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn index(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::Argument(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.index(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.index(t)?])
    }
}

/// Schedule parameters as they appear in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
    }
}

/// `√ᾱ·x0 + √(1−ᾱ)·eps` for an explicit ᾱ.
pub fn forward_diffuse_with(x0: &[f64], alpha_bar: f64, eps: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!("x0 has {} samples, eps {}", x0.len(), eps.len())));
    }
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::Argument(format!("alpha_bar {alpha_bar} outside [0, 1]")));
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// Closed-form sample of `x_t` given `x0` and noise `eps`, `t` in `1..=T`.
pub fn forward_diffuse(x0: &[f64], t: usize, eps: &[f64], schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    forward_diffuse_with(x0, schedule.alpha_bar(t)?, eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, seeded};
    use proptest::prelude::*;

    #[test]
    fn default_schedule_reaches_noise() {
        let s = ScheduleConfig::default().build().unwrap();
        assert_eq!(s.steps(), 50);
        assert!(*s.alpha_bars.last().unwrap() < MAX_TERMINAL_ALPHA_BAR);
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn weak_schedule_is_rejected() {
        // T = 50 with beta up to 0.05 leaves alpha_bar_T near 0.28
        let e = NoiseSchedule::linear(50, 1e-4, 0.05).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        let s = NoiseSchedule::from_betas((0..50).map(|i| 1e-4 + (0.05 - 1e-4) * i as f64 / 49.0).collect()).unwrap();
        assert!((s.alpha_bars[49] - 0.2788).abs() < 1e-3, "{}", s.alpha_bars[49]);
    }

    #[test]
    fn forward_examples() {
        assert_eq!(forward_diffuse_with(&[1.0], 0.25, &[0.0]).unwrap(), vec![0.5]);
        assert_eq!(forward_diffuse_with(&[0.3, -0.2], 1.0, &[5.0, 1.0]).unwrap(), vec![0.3, -0.2]);
        let s = ScheduleConfig::default().build().unwrap();
        assert!(matches!(forward_diffuse(&[1.0], 0, &[0.0], &s), Err(Error::Argument(_))));
        assert!(matches!(forward_diffuse(&[1.0], 51, &[0.0], &s), Err(Error::Argument(_))));
    }

    #[test]
    fn forward_variance_matches() {
        let mut rng = seeded(21);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| forward_diffuse_with(&[0.0], 0.5, &[normal(&mut rng)]).unwrap()[0])
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.5).abs() < 0.01, "{var}");
    }

    proptest! {
        #[test]
        fn schedule_invariants(steps in 1usize..200, b0 in 1e-5f64..1e-2, span in 0.0f64..0.5) {
            if let Ok(s) = NoiseSchedule::linear(steps, b0, b0 + span) {
                prop_assert!(s.betas.iter().all(|b| *b > 0.0 && *b < 1.0));
                prop_assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
                prop_assert!(*s.alpha_bars.last().unwrap() < MAX_TERMINAL_ALPHA_BAR);
            }
        }
    }
}
