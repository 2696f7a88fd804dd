use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;

/// Closed interval for a uniformly drawn parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn draw(&self, rng: &mut Rng) -> f64 {
        if self.hi <= self.lo {
            return self.lo;
        }
        rng.gen_range(self.lo..=self.hi)
    }

    /// Log-uniform draw; both ends must be positive.
    pub fn draw_log(&self, rng: &mut Rng) -> f64 {
        if self.hi <= self.lo {
            return self.lo;
        }
        rng.gen_range(self.lo.ln()..=self.hi.ln()).exp()
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::Config(format!("{name}: bad range {}..{}", self.lo, self.hi)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Probabilities {
    pub hpss: f64,
    pub white_noise: f64,
    pub time_stretch: f64,
    pub amplitude_modulation: f64,
    pub baseline_wander: f64,
    pub parametric_eq: f64,
    pub clinical_noise: f64,
}

impl Default for Probabilities {
    fn default() -> Self {
        Self {
            hpss: 0.75,
            white_noise: 0.075,
            time_stretch: 0.25,
            amplitude_modulation: 0.75,
            baseline_wander: 0.75,
            parametric_eq: 0.25,
            clinical_noise: 0.5,
        }
    }
}

impl Probabilities {
    pub fn all(p: f64) -> Self {
        Self {
            hpss: p,
            white_noise: p,
            time_stretch: p,
            amplitude_modulation: p,
            baseline_wander: p,
            parametric_eq: p,
            clinical_noise: p,
        }
    }

    /// In pipeline order.
    pub fn as_array(&self) -> [f64; 7] {
        [
            self.hpss,
            self.white_noise,
            self.time_stretch,
            self.amplitude_modulation,
            self.baseline_wander,
            self.parametric_eq,
            self.clinical_noise,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    pub mask: f64,
    pub stretch: f64,
    /// Largest time mask as a fraction of STFT frames.
    pub max_time_frac: f64,
    /// Largest frequency mask in bands of an 80-band mel scale.
    pub max_mel_bands: usize,
    pub window_len: usize,
    pub hop: usize,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        Self {
            mask: 0.2,
            stretch: 0.2,
            max_time_frac: 0.1,
            max_mel_bands: 8,
            window_len: 1024,
            hop: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub probabilities: Probabilities,
    pub online: OnlineConfig,
    pub stretch_rate: Range,
    pub white_noise_snr_db: Range,
    pub clinical_noise_snr_db: Range,
    pub am_depth: Range,
    pub am_rate_hz: Range,
    pub wander_amp: Range,
    pub wander_rate_hz: Range,
    pub eq_center_pcg_hz: Range,
    pub eq_center_ecg_hz: Range,
    pub eq_gain_db: Range,
    pub eq_q: Range,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probabilities: Probabilities::default(),
            online: OnlineConfig::default(),
            stretch_rate: Range::new(0.85, 1.15),
            white_noise_snr_db: Range::new(15.0, 30.0),
            clinical_noise_snr_db: Range::new(5.0, 20.0),
            am_depth: Range::new(0.05, 0.4),
            am_rate_hz: Range::new(0.1, 1.0),
            wander_amp: Range::new(0.05, 0.3),
            wander_rate_hz: Range::new(0.1, 0.8),
            eq_center_pcg_hz: Range::new(30.0, 350.0),
            eq_center_ecg_hz: Range::new(3.0, 55.0),
            eq_gain_db: Range::new(-6.0, 6.0),
            eq_q: Range::new(0.7, 3.0),
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn with_probabilities(p: Probabilities) -> Self {
        Self {
            probabilities: p,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.probabilities;
        for (name, v) in ["hpss", "white_noise", "time_stretch", "amplitude_modulation", "baseline_wander", "parametric_eq", "clinical_noise"]
            .iter()
            .zip(p.as_array())
            .chain([(&"online.mask", self.online.mask), (&"online.stretch", self.online.stretch)])
        {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("probability {name} = {v} outside [0, 1]")));
            }
        }
        self.stretch_rate.check("stretch_rate")?;
        if self.stretch_rate.lo <= 0.0 {
            return Err(Error::Config("stretch_rate must be positive".into()));
        }
        self.white_noise_snr_db.check("white_noise_snr_db")?;
        self.clinical_noise_snr_db.check("clinical_noise_snr_db")?;
        self.am_depth.check("am_depth")?;
        if self.am_depth.lo < 0.0 || self.am_depth.hi >= 1.0 {
            return Err(Error::Config("am_depth must lie in [0, 1)".into()));
        }
        self.am_rate_hz.check("am_rate_hz")?;
        self.wander_amp.check("wander_amp")?;
        if self.wander_amp.hi > 0.5 || self.wander_rate_hz.hi > 1.0 {
            return Err(Error::Config("wander must stay below 0.5 amplitude and 1 Hz".into()));
        }
        self.wander_rate_hz.check("wander_rate_hz")?;
        for (n, r) in [("eq_center_pcg_hz", &self.eq_center_pcg_hz), ("eq_center_ecg_hz", &self.eq_center_ecg_hz)] {
            r.check(n)?;
            if r.lo <= 0.0 {
                return Err(Error::Config(format!("{n} must be positive")));
            }
        }
        self.eq_gain_db.check("eq_gain_db")?;
        if self.eq_gain_db.lo < -12.0 || self.eq_gain_db.hi > 12.0 {
            return Err(Error::Config("eq_gain_db must lie in [-12, 12]".into()));
        }
        self.eq_q.check("eq_q")?;
        if self.eq_q.lo < 0.5 || self.eq_q.hi > 5.0 {
            return Err(Error::Config("eq_q must lie in [0.5, 5]".into()));
        }
        if self.online.hop == 0 || self.online.hop > self.online.window_len {
            return Err(Error::Config("online hop must be in 1..=window_len".into()));
        }
        Ok(())
    }
}
