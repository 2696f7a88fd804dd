use rand::Rng as _;

use super::denoiser::{Conditioning, Denoiser};
use super::schedule::{forward_diffuse, NoiseSchedule};
use crate::error::{Error, Result};
use crate::nn::{Grads, Mat, Tape};
use crate::rng::{normal_vec, Rng};

/// Scalar loss with gradients for every denoiser parameter.
pub struct LossOutput {
    pub loss: f64,
    pub grads: Grads,
}

/// Mean absolute error between `eps` and the prediction from `x_t`, at a
/// fixed step and noise draw.
pub fn diffusion_loss_at(
    den: &dyn Denoiser,
    x0: &[f64],
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    t: usize,
    eps: &[f64],
) -> Result<LossOutput> {
    if x0.is_empty() {
        return Err(Error::Shape("empty training example".into()));
    }
    let xt = forward_diffuse(x0, t, eps, schedule)?;
    let mut tape = Tape::new();
    let x = tape.input(Mat::column(xt));
    let pred = den.predict(&mut tape, x, t, schedule, cond)?;
    if tape.value(pred).shape() != (x0.len(), 1) {
        return Err(Error::Shape(format!(
            "denoiser returned {:?} for {} samples",
            tape.value(pred).shape(),
            x0.len()
        )));
    }
    let loss = tape.l1(pred, Mat::column(eps.to_vec()));
    let value = tape.value(loss).data[0];
    if !value.is_finite() {
        let pmax = tape.value(pred).max_abs();
        return Err(Error::Training(format!(
            "non-finite diffusion loss at t={t} (|pred| max {pmax:e}, {} samples)",
            x0.len()
        )));
    }
    let grads = tape.backward(loss, den.params().len());
    Ok(LossOutput { loss: value, grads })
}

/// Draws `t ~ U{1..T}` and `eps ~ N(0, I)`, then evaluates
/// [`diffusion_loss_at`].
pub fn diffusion_loss(
    den: &dyn Denoiser,
    x0: &[f64],
    cond: &Conditioning,
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<LossOutput> {
    let t = rng.gen_range(1..=schedule.steps());
    let eps = normal_vec(rng, x0.len());
    diffusion_loss_at(den, x0, cond, schedule, t, &eps)
}

/// Batch mean of [`diffusion_loss`]; gradients are averaged too.
pub fn diffusion_loss_batch(
    den: &dyn Denoiser,
    batch: &[(Vec<f64>, Conditioning)],
    schedule: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let n = den.params().len();
    let mut total = 0.0;
    let mut acc: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
    let scale = 1.0 / batch.len() as f64;
    for (x0, cond) in batch {
        let out = diffusion_loss(den, x0, cond, schedule, rng)?;
        total += out.loss * scale;
        for (slot, g) in acc.iter_mut().zip(out.grads.by_param) {
            let Some(mut g) = g else { continue };
            g.scale(scale);
            match slot {
                Some(a) => a.add_assign(&g),
                None => *slot = Some(g),
            }
        }
    }
    Ok(LossOutput {
        loss: total,
        grads: Grads { by_param: acc },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::diffusion::denoiser::tests::tiny_config;
    use crate::diffusion::denoiser::{CondLabel, ConvDenoiser, DenoiserStyle};
    use crate::diffusion::schedule::ScheduleConfig;
    use crate::nn::{ParamStore, Var};
    use crate::rng::seeded;
    use crate::signal_io::Label;

    /// Predicts zero everywhere.
    pub(crate) struct ZeroDenoiser(pub ParamStore);

    impl Denoiser for ZeroDenoiser {
        fn params(&self) -> &ParamStore {
            &self.0
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.0
        }
        fn predict(&self, tape: &mut Tape, x_t: Var, _: usize, _: &NoiseSchedule, _: &Conditioning) -> Result<Var> {
            Ok(tape.scale(x_t, 0.0))
        }
    }

    /// Knows the clean signal, so it can invert the forward process.
    struct OracleDenoiser {
        store: ParamStore,
        x0: Vec<f64>,
    }

    impl Denoiser for OracleDenoiser {
        fn params(&self) -> &ParamStore {
            &self.store
        }
        fn params_mut(&mut self) -> &mut ParamStore {
            &mut self.store
        }
        fn predict(&self, tape: &mut Tape, x_t: Var, t: usize, s: &NoiseSchedule, _: &Conditioning) -> Result<Var> {
            let ab = s.alpha_bar(t)?;
            let xt = tape.value(x_t).clone();
            let eps: Vec<f64> = xt
                .data
                .iter()
                .zip(&self.x0)
                .map(|(x, x0)| (x - ab.sqrt() * x0) / (1.0 - ab).sqrt())
                .collect();
            Ok(tape.input(Mat::column(eps)))
        }
    }

    fn label_cond() -> Conditioning {
        Conditioning::label_only(CondLabel::disease(Label::Normal))
    }

    #[test]
    fn zero_denoiser_gives_half_normal_mean() {
        let s = ScheduleConfig::default().build().unwrap();
        let d = ZeroDenoiser(ParamStore::new());
        let x0 = vec![0.0; 100_000];
        let out = diffusion_loss(&d, &x0, &label_cond(), &s, &mut seeded(4)).unwrap();
        let expect = (2.0 / std::f64::consts::PI).sqrt();
        assert!((out.loss - expect).abs() < 0.01, "{}", out.loss);
    }

    #[test]
    fn exact_noise_prediction_gives_zero_loss() {
        let s = ScheduleConfig::default().build().unwrap();
        let x0: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).sin()).collect();
        let d = OracleDenoiser {
            store: ParamStore::new(),
            x0: x0.clone(),
        };
        let out = diffusion_loss(&d, &x0, &label_cond(), &s, &mut seeded(5)).unwrap();
        assert!(out.loss < 1e-12, "{}", out.loss);
    }

    /// Central differences over every parameter of a ~100-parameter model.
    pub(crate) fn fd_check(style: DenoiserStyle) -> f64 {
        let s = NoiseSchedule::linear(20, 1e-3, 0.4).unwrap();
        let mut d = ConvDenoiser::new(tiny_config(style), 9).unwrap();
        let mut rng = seeded(10);
        let x0: Vec<f64> = (0..24).map(|i| (i as f64 * 0.4).sin() * 0.8).collect();
        let eps = normal_vec(&mut rng, x0.len());
        let cond = Conditioning {
            mel: Some(Mat::from_vec(4, 2, normal_vec(&mut rng, 8))),
            hop: 8,
            label: CondLabel::disease(Label::Abnormal),
        };
        let t = 7;
        let out = diffusion_loss_at(&d, &x0, &cond, &s, t, &eps).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let ids: Vec<_> = d.params().ids().collect();
        for id in ids {
            for k in 0..d.params().value(id).len() {
                let orig = d.params().value(id).data[k];
                d.params_mut().value_mut(id).data[k] = orig + h;
                let lp = diffusion_loss_at(&d, &x0, &cond, &s, t, &eps).unwrap().loss;
                d.params_mut().value_mut(id).data[k] = orig - h;
                let lm = diffusion_loss_at(&d, &x0, &cond, &s, t, &eps).unwrap().loss;
                d.params_mut().value_mut(id).data[k] = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let analytic = out.grads.get(id).map_or(0.0, |g| g.data[k]);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        for style in [DenoiserStyle::DiffWave, DenoiserStyle::WaveGrad] {
            let worst = fd_check(style);
            assert!(worst < 1e-4, "{style:?}: {worst:e}");
        }
    }

    #[test]
    fn batch_loss_averages() {
        let s = ScheduleConfig::default().build().unwrap();
        let d = ZeroDenoiser(ParamStore::new());
        let batch = vec![(vec![0.0; 8], label_cond()), (vec![0.0; 8], label_cond())];
        let out = diffusion_loss_batch(&d, &batch, &s, &mut seeded(1)).unwrap();
        assert!(out.loss > 0.0 && out.loss.is_finite());
        assert!(matches!(
            diffusion_loss_batch(&d, &[], &s, &mut seeded(1)),
            Err(Error::Argument(_))
        ));
    }
}
