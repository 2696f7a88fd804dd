//! Waveform encoder: strided conv blocks (biased conv, layer norm, GELU) followed
//! by a pre-norm transformer with additive sinusoidal positions.

use serde::{Deserialize, Serialize};

use super::config::EncoderConfig;
use super::layers::{Linear, Norm};
use crate::error::{Error, Result};
use crate::nn::{sinusoidal, ConvGeom, Mat, ParamId, ParamStore, Tape, Var};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ConvLayer {
    w: ParamId,
    b: ParamId,
    norm: Norm,
    kernel: usize,
    stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct Block {
    ln1: Norm,
    pub(crate) q: Linear,
    k: Linear,
    pub(crate) v: Linear,
    pub(crate) o: Linear,
    ln2: Norm,
    pub(crate) mlp1: Linear,
    pub(crate) mlp2: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    convs: Vec<ConvLayer>,
    proj_norm: Norm,
    proj: Linear,
    pub(crate) blocks: Vec<Block>,
    final_norm: Norm,
    d_model: usize,
    heads: usize,
    first_param: usize,
    end_param: usize,
}

/// Contextual frame features plus the attention node of every layer.
pub struct Encoded {
    pub seq: Var,
    pub attention: Vec<Var>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &EncoderConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let first_param = store.len();
        let mut cin = 1;
        let mut convs = Vec::with_capacity(cfg.conv.len());
        for (i, b) in cfg.conv.iter().enumerate() {
            convs.push(ConvLayer {
                w: store.add_uniform(format!("{name}.conv{i}.w"), b.channels, b.kernel * cin, b.kernel * cin, rng),
                b: store.add_const(format!("{name}.conv{i}.b"), 1, b.channels, 0.0),
                norm: Norm::new(store, &format!("{name}.conv{i}.ln"), b.channels),
                kernel: b.kernel,
                stride: b.stride,
            });
            cin = b.channels;
        }
        let t = cfg.transformer;
        let proj_norm = Norm::new(store, &format!("{name}.proj.ln"), cin);
        let proj = Linear::new(store, &format!("{name}.proj"), cin, t.d_model, rng);
        let blocks = (0..t.layers)
            .map(|l| {
                let p = format!("{name}.block{l}");
                Block {
                    ln1: Norm::new(store, &format!("{p}.ln1"), t.d_model),
                    q: Linear::new(store, &format!("{p}.q"), t.d_model, t.d_model, rng),
                    k: Linear::new(store, &format!("{p}.k"), t.d_model, t.d_model, rng),
                    v: Linear::new(store, &format!("{p}.v"), t.d_model, t.d_model, rng),
                    o: Linear::new(store, &format!("{p}.o"), t.d_model, t.d_model, rng),
                    ln2: Norm::new(store, &format!("{p}.ln2"), t.d_model),
                    mlp1: Linear::new(store, &format!("{p}.mlp1"), t.d_model, t.d_mlp, rng),
                    mlp2: Linear::new(store, &format!("{p}.mlp2"), t.d_mlp, t.d_model, rng),
                }
            })
            .collect();
        let final_norm = Norm::new(store, &format!("{name}.final_ln"), t.d_model);
        Ok(Self {
            convs,
            proj_norm,
            proj,
            blocks,
            final_norm,
            d_model: t.d_model,
            heads: t.heads,
            first_param,
            end_param: store.len(),
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    /// Parameter ids created for this encoder (adapters added later are
    /// not included).
    pub fn param_range(&self) -> std::ops::Range<usize> {
        self.first_param..self.end_param
    }

    /// Conv feature extractor: `L×1` waveform to `frames × d_model`.
    pub fn features(&self, tape: &mut Tape, store: &ParamStore, x: &[f64]) -> Result<Var> {
        let r = self.receptive_field();
        if x.len() < r {
            return Err(Error::Shape(format!("input of {} samples is shorter than the receptive field {r}", x.len())));
        }
        let mut h = tape.input(Mat::column(x.to_vec()));
        for c in &self.convs {
            let w = tape.param(store, c.w);
            let z = tape.conv1d(
                h,
                w,
                ConvGeom {
                    kernel: c.kernel,
                    stride: c.stride,
                    dilation: 1,
                    pad_left: 0,
                    pad_right: 0,
                },
            );
            // the bias keeps frame energy visible through the per-frame norm
            let b = tape.param(store, c.b);
            let z = tape.add_row(z, b);
            let z = c.norm.forward(tape, store, z);
            h = tape.gelu(z);
        }
        let h = self.proj_norm.forward(tape, store, h);
        Ok(self.proj.forward(tape, store, h))
    }

    fn receptive_field(&self) -> usize {
        let mut r = 1;
        let mut jump = 1;
        for c in &self.convs {
            r += (c.kernel - 1) * jump;
            jump *= c.stride;
        }
        r
    }

    /// Pre-norm transformer over `frames × d_model` features.
    pub fn transform(&self, tape: &mut Tape, store: &ParamStore, feats: Var) -> Result<Encoded> {
        let (n, d) = tape.value(feats).shape();
        if d != self.d_model || n == 0 {
            return Err(Error::Shape(format!("features are {n}×{d}, expected frames×{}", self.d_model)));
        }
        let mut pos = Mat::zeros(n, d);
        for f in 0..n {
            pos.row_mut(f).copy_from_slice(&sinusoidal(f as f64, d));
        }
        let pos = tape.input(pos);
        let mut h = tape.add(feats, pos);
        let mut attention = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let x = b.ln1.forward(tape, store, h);
            let q = b.q.forward(tape, store, x);
            let k = b.k.forward(tape, store, x);
            let v = b.v.forward(tape, store, x);
            let a = tape.attention(q, k, v, self.heads);
            attention.push(a);
            let o = b.o.forward(tape, store, a);
            h = tape.add(h, o);
            let x = b.ln2.forward(tape, store, h);
            let m = b.mlp1.forward(tape, store, x);
            let m = tape.gelu(m);
            let m = b.mlp2.forward(tape, store, m);
            h = tape.add(h, m);
        }
        let seq = self.final_norm.forward(tape, store, h);
        Ok(Encoded { seq, attention })
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, x: &[f64]) -> Result<Encoded> {
        let f = self.features(tape, store, x)?;
        self.transform(tape, store, f)
    }
}
