//! Cardiac-cycle rearrangement used to augment denoiser training data.
//!
//! Cycle boundaries come from a Shannon-energy envelope: the beat period is
//! the strongest envelope autocorrelation lag between 0.4 s and 2 s. Each
//! beat's envelope peak is tracked and a mark placed at the lag where the
//! period-folded envelope is quietest. The head before the
//! first mark and the tail after the last stay in place; the cycles between
//! are grouped into units, shuffled, and re-joined.
//!
//! At a join the first `F` samples of the incoming unit are blended with the
//! source continuation of the outgoing unit using equal-power gains, so the
//! output length equals the input length. Joins between units that were
//! already adjacent in the source are left untouched.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Flag, Flagged, Result};
use crate::rng::Rng;
use crate::signal_io::Recording;

pub const CROSSFADE_S: f64 = 0.010;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RearrangeMode {
    /// Two or three large contiguous groups.
    Groups,
    /// Chunks of one to four cycles.
    Chunks1To4,
    /// Individual cycles.
    Single,
}

impl RearrangeMode {
    pub const ALL: [RearrangeMode; 3] = [RearrangeMode::Groups, RearrangeMode::Chunks1To4, RearrangeMode::Single];
}

/// Envelope rate used for period estimation.
const ENV_RATE: f64 = 100.0;

fn shannon_envelope(x: &[f64], fs: u32) -> Vec<f64> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let block = ((fs as f64 / ENV_RATE).round() as usize).max(1);
    if peak == 0.0 {
        return vec![0.0; x.len() / block];
    }
    let se: Vec<f64> = x
        .iter()
        .map(|v| {
            let p = (v / peak).powi(2);
            if p > 0.0 {
                -p * p.ln()
            } else {
                0.0
            }
        })
        .collect();
    let env: Vec<f64> = se.chunks_exact(block).map(|c| c.iter().sum::<f64>() / block as f64).collect();
    // 50 ms moving average
    let half = 2usize;
    (0..env.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(env.len());
            env[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Ascending cycle boundaries at the quiet phase of each beat. Returns an
/// empty list when no periodicity between 0.4 s and 2 s is found.
pub fn detect_cycle_marks(x: &[f64], fs: u32) -> Vec<usize> {
    let env = shannon_envelope(x, fs);
    let block = ((fs as f64 / ENV_RATE).round() as usize).max(1);
    let (min_lag, max_lag) = ((0.4 * ENV_RATE) as usize, (2.0 * ENV_RATE) as usize);
    if env.len() < 2 * min_lag {
        return Vec::new();
    }
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    let c: Vec<f64> = env.iter().map(|v| v - mean).collect();
    let energy: f64 = c.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return Vec::new();
    }
    let max_lag = max_lag.min(env.len() - 1);
    let mut best = (0usize, 0.0f64);
    for lag in min_lag..=max_lag {
        let r: f64 = c[..c.len() - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / energy;
        if r > best.1 {
            best = (lag, r);
        }
    }
    let period = best.0;
    if period == 0 || best.1 < 0.1 {
        return Vec::new();
    }
    // fold the envelope over one period; the quiet phase is the centre of
    // the lowest smoothed stretch, the loud phase its maximum
    let mut fold = vec![0.0; period];
    let mut hits = vec![0usize; period];
    for (i, v) in env.iter().enumerate() {
        fold[i % period] += v;
        hits[i % period] += 1;
    }
    for (f, h) in fold.iter_mut().zip(&hits) {
        *f /= (*h).max(1) as f64;
    }
    let w = (period / 10).max(1);
    let smooth: Vec<f64> = (0..period)
        .map(|p| (0..=2 * w).map(|k| fold[(p + period + k - w) % period]).sum::<f64>())
        .collect();
    let argmax = |v: &[f64], lo: usize, hi: usize| {
        (lo..hi).max_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite envelope")).expect("non-empty window")
    };
    let argmin = |v: &[f64]| (0..v.len()).min_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("finite envelope")).expect("non-empty");
    let loud = argmax(&fold, 0, period);
    let quiet = argmin(&smooth);
    let offset = (quiet + period - loud) % period;
    // track the loud peak beat by beat, placing marks a fixed lag after it
    let mut env_marks = Vec::new();
    let mut expect = loud as isize;
    while expect < env.len() as isize {
        let lo = (expect - period as isize / 4).max(0) as usize;
        let hi = ((expect + period as isize / 4 + 1) as usize).min(env.len());
        if lo >= hi {
            break;
        }
        let peak = argmax(&env, lo, hi);
        let mark = peak + offset;
        if mark < env.len() {
            env_marks.push(mark);
        }
        // also a mark before the first tracked peak when it fits
        if env_marks.len() == 1 && mark >= period {
            env_marks.insert(0, mark - period);
        }
        expect = (peak + period) as isize;
    }
    // refine each mark to the smallest sample within one envelope block
    let mut marks: Vec<usize> = env_marks
        .into_iter()
        .map(|m| {
            let centre = m * block + block / 2;
            let lo = centre.saturating_sub(block / 2);
            let hi = (centre + block / 2 + 1).min(x.len());
            (lo..hi)
                .min_by(|&a, &b| x[a].abs().partial_cmp(&x[b].abs()).expect("finite samples"))
                .unwrap_or(centre.min(x.len().saturating_sub(1)))
        })
        .filter(|&m| m > 0 && m < x.len())
        .collect();
    marks.dedup();
    marks
}

/// Unit sizes (in cycles) for a mode, in source order.
fn unit_sizes(n_cycles: usize, mode: RearrangeMode, rng: &mut Rng) -> Vec<usize> {
    match mode {
        RearrangeMode::Single => vec![1; n_cycles],
        RearrangeMode::Chunks1To4 => {
            let mut sizes = Vec::new();
            let mut left = n_cycles;
            while left > 0 {
                let s = rng.gen_range(1..=4usize).min(left);
                sizes.push(s);
                left -= s;
            }
            sizes
        }
        RearrangeMode::Groups => {
            let groups = rng.gen_range(2..=3usize).min(n_cycles);
            let mut cuts: Vec<usize> = (1..n_cycles).collect();
            cuts.shuffle(rng);
            let mut cuts: Vec<usize> = cuts.into_iter().take(groups - 1).collect();
            cuts.sort_unstable();
            let mut sizes = Vec::with_capacity(groups);
            let mut prev = 0;
            for c in cuts.into_iter().chain(std::iter::once(n_cycles)) {
                sizes.push(c - prev);
                prev = c;
            }
            sizes
        }
    }
}

/// Source sample ranges of the rearranged units, in output order, including
/// the fixed head and tail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RearrangePlan {
    pub pieces: Vec<(usize, usize)>,
}

impl RearrangePlan {
    /// Head, cycles in source order, tail.
    pub fn identity(len: usize, marks: &[usize]) -> Self {
        let mut bounds = vec![0];
        bounds.extend_from_slice(marks);
        bounds.push(len);
        Self {
            pieces: bounds.windows(2).map(|w| (w[0], w[1])).filter(|(a, b)| b > a).collect(),
        }
    }
}

fn validate_marks(len: usize, marks: &[usize]) -> Result<()> {
    if marks.windows(2).any(|w| w[1] <= w[0]) || marks.iter().any(|&m| m == 0 || m >= len) {
        return Err(Error::Argument("cycle marks must be ascending and inside the signal".into()));
    }
    Ok(())
}

pub fn draw_rearrangement(len: usize, marks: &[usize], mode: RearrangeMode, rng: &mut Rng) -> Result<Option<RearrangePlan>> {
    validate_marks(len, marks)?;
    if marks.len() < 3 {
        return Ok(None);
    }
    let cycles: Vec<(usize, usize)> = marks.windows(2).map(|w| (w[0], w[1])).collect();
    let sizes = unit_sizes(cycles.len(), mode, rng);
    let mut units = Vec::with_capacity(sizes.len());
    let mut i = 0;
    for s in sizes {
        units.push((cycles[i].0, cycles[i + s - 1].1));
        i += s;
    }
    units.shuffle(rng);
    let mut pieces = Vec::with_capacity(units.len() + 2);
    pieces.push((0, marks[0]));
    pieces.extend(units);
    pieces.push((*marks.last().expect("marks"), len));
    Ok(Some(RearrangePlan { pieces }))
}

/// Concatenates the plan's pieces from `x`, crossfading every join that
/// is not already contiguous in the source.
pub fn apply_rearrangement(x: &[f64], plan: &RearrangePlan, fade: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut prev_end: Option<usize> = None;
    for &(start, end) in &plan.pieces {
        let join = prev_end.filter(|&pe| pe != start);
        for (j, i) in (start..end).enumerate() {
            let v = match join {
                Some(pe) if j < fade && pe + j < x.len() => {
                    let th = std::f64::consts::FRAC_PI_2 * (j as f64 + 0.5) / fade as f64;
                    th.cos() * x[pe + j] + th.sin() * x[i]
                }
                _ => x[i],
            };
            out.push(v);
        }
        prev_end = Some(end);
    }
    out
}

/// Shuffles cycle units of `rec`; fewer than two cycles passes through
/// flagged [`Flag::TooFewCycles`].
pub fn cycle_rearrange(rec: &Recording, marks: &[usize], mode: RearrangeMode, rng: &mut Rng) -> Result<Flagged<Recording>> {
    match draw_rearrangement(rec.len(), marks, mode, rng)? {
        None => Ok(Flagged::flagged(rec.clone(), Flag::TooFewCycles)),
        Some(plan) => {
            let fade = ((CROSSFADE_S * rec.fs as f64).round() as usize).max(1);
            Ok(Flagged::ok(rec.with_samples(apply_rearrangement(&rec.samples, &plan, fade))))
        }
    }
}
