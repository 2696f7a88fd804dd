use super::denoiser::{Conditioning, Denoiser};
use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{Mat, Tape};
use crate::rng::{normal_vec, Rng};
use crate::signal_io::{Modality, Recording};

/// Magnitude beyond which a reverse trajectory counts as diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e3;

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`.
pub fn sample_waveform(
    den: &dyn Denoiser,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    length: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if length == 0 {
        return Err(Error::Argument("sample length must be positive".into()));
    }
    let mut x = normal_vec(rng, length);
    for t in (1..=schedule.steps()).rev() {
        let mut tape = Tape::new();
        let xv = tape.input(Mat::column(x.clone()));
        let eps = den.predict(&mut tape, xv, t, schedule, cond)?;
        let eps = &tape.value(eps).data;
        if eps.len() != length {
            return Err(Error::Shape(format!("denoiser returned {} samples for {length}", eps.len())));
        }
        let beta = schedule.beta(t)?;
        let alpha = schedule.alpha(t)?;
        let coef = beta / (1.0 - schedule.alpha_bar(t)?).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let z = if t > 1 { normal_vec(rng, length) } else { vec![0.0; length] };
        let sigma = beta.sqrt();
        for ((xi, e), zi) in x.iter_mut().zip(eps).zip(&z) {
            *xi = (*xi - coef * e) * inv + sigma * zi;
        }
        if let Some(bad) = x.iter().find(|v| !(v.abs() <= DIVERGENCE_LIMIT)) {
            return Err(Error::Sampling(format!("trajectory diverged at t={t} (|x| = {bad:e})")));
        }
    }
    Ok(x)
}

/// [`sample_waveform`] wrapped as a PCG recording at `fs`.
pub fn sample(
    den: &dyn Denoiser,
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    length: usize,
    fs: u32,
    rng: &mut Rng,
) -> Result<Recording> {
    Ok(Recording::new(sample_waveform(den, cond, schedule, length, rng)?, fs, Modality::Pcg))
}
