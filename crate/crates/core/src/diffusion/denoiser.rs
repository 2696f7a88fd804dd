//! Noise-prediction networks.
//!
//! [`ConvDenoiser`] is a stack of gated dilated convolutions with residual
//! and skip paths. Local conditioning is a mel matrix at frame rate,
//! projected per layer and upsampled to the sample rate by nearest
//! neighbour. Global conditioning is a one-hot label (disease, plus
//! conditioning and target sites in multichannel mode). The two styles
//! differ in how the step enters (step index or continuous noise level) and
//! how the mel features act (additive bias or feature-wise affine).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal, ConvGeom, Mat, ParamId, ParamStore, Tape, Var};
use crate::signal_io::Label;

/// Global conditioning label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CondLabel {
    pub disease: Label,
    /// `(conditioning site, target site)` in multichannel mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_pair: Option<(String, String)>,
}

impl CondLabel {
    pub fn disease(disease: Label) -> Self {
        Self {
            disease,
            channel_pair: None,
        }
    }

    pub fn pair(disease: Label, cond_site: impl Into<String>, target_site: impl Into<String>) -> Self {
        Self {
            disease,
            channel_pair: Some((cond_site.into(), target_site.into())),
        }
    }
}

/// Everything a denoiser sees besides the noisy audio and the step.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    /// `frames × n_mels`, frame `f` centred on sample `f·hop`.
    pub mel: Option<Mat>,
    pub hop: usize,
    pub label: CondLabel,
}

impl Conditioning {
    pub fn label_only(label: CondLabel) -> Self {
        Self {
            mel: None,
            hop: 1,
            label,
        }
    }

    /// Nearest mel frame for every output sample.
    pub fn frame_index(&self, len: usize) -> Vec<usize> {
        let frames = self.mel.as_ref().map_or(1, |m| m.rows);
        (0..len)
            .map(|i| (((i as f64) / self.hop as f64).round() as usize).min(frames - 1))
            .collect()
    }
}

/// Callable noise predictor: `(x_t, t, conditioning) -> ε̂` of the same
/// shape as `x_t` (`L×1`).
pub trait Denoiser {
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn predict(&self, tape: &mut Tape, x_t: Var, t: usize, schedule: &NoiseSchedule, cond: &Conditioning) -> Result<Var>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserStyle {
    /// Step-index embedding, additive mel bias.
    DiffWave,
    /// Noise-level embedding, feature-wise affine mel modulation.
    WaveGrad,
}

impl DenoiserStyle {
    pub fn tag(self) -> &'static str {
        match self {
            DenoiserStyle::DiffWave => "diffwave_style",
            DenoiserStyle::WaveGrad => "wavegrad_style",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub style: DenoiserStyle,
    pub layers: usize,
    pub channels: usize,
    pub kernel: usize,
    /// Dilation doubles each layer and wraps after this many layers.
    pub dilation_cycle: usize,
    pub embed_dim: usize,
    /// Zero disables local conditioning.
    pub n_mels: usize,
    /// Site vocabulary for multichannel labels; empty in single-channel mode.
    #[serde(default)]
    pub sites: Vec<String>,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            style: DenoiserStyle::DiffWave,
            layers: 4,
            channels: 16,
            kernel: 3,
            dilation_cycle: 4,
            embed_dim: 16,
            n_mels: 80,
            sites: Vec::new(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.channels == 0 || self.embed_dim < 2 || self.dilation_cycle == 0 {
            return Err(Error::Config("denoiser sizes must be positive".into()));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Config("denoiser kernel must be odd".into()));
        }
        Ok(())
    }

    fn label_dim(&self) -> usize {
        2 + 2 * self.sites.len()
    }

    fn mel_width(&self) -> usize {
        match self.style {
            DenoiserStyle::DiffWave => 2 * self.channels,
            DenoiserStyle::WaveGrad => 4 * self.channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerIds {
    step: ParamId,
    dil_w: ParamId,
    dil_b: ParamId,
    mel: Option<ParamId>,
    label: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Ids {
    in_w: ParamId,
    in_b: ParamId,
    emb_w: ParamId,
    emb_b: ParamId,
    layers: Vec<LayerIds>,
    skip_w: ParamId,
    skip_b: ParamId,
    final_w: ParamId,
    final_b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvDenoiser {
    pub config: DenoiserConfig,
    store: ParamStore,
    ids: Ids,
}

impl ConvDenoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let c = config.channels;
        let e = config.embed_dim;
        let in_w = s.add_uniform("in.w", c, 1, 1, &mut rng);
        let in_b = s.add_const("in.b", 1, c, 0.0);
        let emb_w = s.add_uniform("emb.w", e, e, e, &mut rng);
        let emb_b = s.add_const("emb.b", 1, e, 0.0);
        let layers = (0..config.layers)
            .map(|l| LayerIds {
                step: s.add_uniform(format!("l{l}.step"), c, e, e, &mut rng),
                dil_w: s.add_uniform(format!("l{l}.dil.w"), 2 * c, config.kernel * c, config.kernel * c, &mut rng),
                dil_b: s.add_const(format!("l{l}.dil.b"), 1, 2 * c, 0.0),
                mel: (config.n_mels > 0)
                    .then(|| s.add_uniform(format!("l{l}.mel"), config.mel_width(), config.n_mels, config.n_mels, &mut rng)),
                label: s.add_uniform(format!("l{l}.label"), 2 * c, config.label_dim(), config.label_dim(), &mut rng),
                out_w: s.add_uniform(format!("l{l}.out.w"), 2 * c, c, c, &mut rng),
                out_b: s.add_const(format!("l{l}.out.b"), 1, 2 * c, 0.0),
            })
            .collect();
        let skip_w = s.add_uniform("skip.w", c, c, c, &mut rng);
        let skip_b = s.add_uniform("skip.b", 1, c, c, &mut rng);
        let final_w = s.add_uniform("final.w", 1, c, c, &mut rng);
        let final_b = s.add_const("final.b", 1, 1, 0.0);
        Ok(Self {
            config,
            store: s,
            ids: Ids {
                in_w,
                in_b,
                emb_w,
                emb_b,
                layers,
                skip_w,
                skip_b,
                final_w,
                final_b,
            },
        })
    }

    fn label_vector(&self, label: &CondLabel) -> Result<Vec<f64>> {
        let n = self.config.sites.len();
        let mut v = vec![0.0; 2 + 2 * n];
        v[label.disease.index()] = 1.0;
        match (&label.channel_pair, n) {
            (None, 0) => {}
            (Some((a, b)), n) if n > 0 => {
                let find = |site: &str| {
                    self.config
                        .sites
                        .iter()
                        .position(|s| s == site)
                        .ok_or_else(|| Error::Config(format!("unknown site {site:?}")))
                };
                v[2 + find(a)?] = 1.0;
                v[2 + n + find(b)?] = 1.0;
            }
            (None, _) => return Err(Error::Config("multichannel denoiser needs a channel pair".into())),
            (Some(_), _) => return Err(Error::Config("single-channel denoiser got a channel pair".into())),
        }
        Ok(v)
    }

    fn step_position(&self, t: usize, schedule: &NoiseSchedule) -> Result<f64> {
        Ok(match self.config.style {
            DenoiserStyle::DiffWave => t as f64,
            DenoiserStyle::WaveGrad => 1000.0 * schedule.alpha_bar(t)?.sqrt(),
        })
    }
}

impl Denoiser for ConvDenoiser {
    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn predict(&self, tape: &mut Tape, x_t: Var, t: usize, schedule: &NoiseSchedule, cond: &Conditioning) -> Result<Var> {
        let cfg = &self.config;
        let c = cfg.channels;
        let s = &self.store;
        let ids = &self.ids;
        let len = tape.value(x_t).rows;
        if tape.value(x_t).cols != 1 || len == 0 {
            return Err(Error::Shape("denoiser input must be a non-empty L×1 column".into()));
        }
        let mel = match (&cond.mel, cfg.n_mels) {
            (Some(m), n) if n > 0 => {
                if m.cols != n || m.rows == 0 {
                    return Err(Error::Shape(format!("mel has {}×{}, expected frames×{n}", m.rows, m.cols)));
                }
                Some(tape.input(m.clone()))
            }
            (None, 0) => None,
            (None, _) => return Err(Error::Config("denoiser expects mel conditioning".into())),
            (Some(_), _) => return Err(Error::Config("denoiser has no mel input".into())),
        };
        let up_idx = cond.frame_index(len);

        let w = tape.param(s, ids.in_w);
        let b = tape.param(s, ids.in_b);
        let h0 = tape.matmul_bt(x_t, w);
        let h0 = tape.add_row(h0, b);
        let mut h = tape.relu(h0);

        let pos = self.step_position(t, schedule)?;
        let e = tape.input(Mat::row_vector(sinusoidal(pos, cfg.embed_dim)));
        let ew = tape.param(s, ids.emb_w);
        let eb = tape.param(s, ids.emb_b);
        let e1 = tape.matmul_bt(e, ew);
        let e1 = tape.add_row(e1, eb);
        let emb = tape.gelu(e1);
        let g = tape.input(Mat::row_vector(self.label_vector(&cond.label)?));

        let mut skip: Option<Var> = None;
        for (l, li) in ids.layers.iter().enumerate() {
            let dilation = 1usize << (l % cfg.dilation_cycle);
            let pad = dilation * (cfg.kernel - 1) / 2;
            let sw = tape.param(s, li.step);
            let d = tape.matmul_bt(emb, sw);
            let y = tape.add_row(h, d);
            let dw = tape.param(s, li.dil_w);
            let z = tape.conv1d(
                y,
                dw,
                ConvGeom {
                    kernel: cfg.kernel,
                    stride: 1,
                    dilation,
                    pad_left: pad,
                    pad_right: pad,
                },
            );
            let db = tape.param(s, li.dil_b);
            let z = tape.add_row(z, db);
            let lw = tape.param(s, li.label);
            let gl = tape.matmul_bt(g, lw);
            let mut z = tape.add_row(z, gl);
            if let (Some(m), Some(mid)) = (mel, li.mel) {
                let mw = tape.param(s, mid);
                let proj = tape.matmul_bt(m, mw);
                let up = tape.gather_rows(proj, up_idx.clone());
                z = match cfg.style {
                    DenoiserStyle::DiffWave => tape.add(z, up),
                    DenoiserStyle::WaveGrad => {
                        let gamma = tape.slice_cols(up, 0, 2 * c);
                        let beta = tape.slice_cols(up, 2 * c, 4 * c);
                        let zg = tape.mul(z, gamma);
                        let z2 = tape.add(z, zg);
                        tape.add(z2, beta)
                    }
                };
            }
            let za = tape.slice_cols(z, 0, c);
            let zb = tape.slice_cols(z, c, 2 * c);
            let ta = tape.tanh(za);
            let sb = tape.sigmoid(zb);
            let gated = tape.mul(ta, sb);
            let ow = tape.param(s, li.out_w);
            let ob = tape.param(s, li.out_b);
            let r = tape.matmul_bt(gated, ow);
            let r = tape.add_row(r, ob);
            let res = tape.slice_cols(r, 0, c);
            let sk = tape.slice_cols(r, c, 2 * c);
            let hr = tape.add(h, res);
            h = tape.scale(hr, std::f64::consts::FRAC_1_SQRT_2);
            skip = Some(match skip {
                None => sk,
                Some(acc) => tape.add(acc, sk),
            });
        }
        let sk = skip.expect("at least one layer");
        let sk = tape.scale(sk, 1.0 / (cfg.layers as f64).sqrt());
        let sk = tape.relu(sk);
        let w = tape.param(s, ids.skip_w);
        let b = tape.param(s, ids.skip_b);
        let o = tape.matmul_bt(sk, w);
        let o = tape.add_row(o, b);
        let o = tape.relu(o);
        let w = tape.param(s, ids.final_w);
        let b = tape.param(s, ids.final_b);
        let o = tape.matmul_bt(o, w);
        Ok(tape.add_row(o, b))
    }
}
