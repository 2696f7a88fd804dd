//! Concatenated-encoder classifier: one encoder per input channel, frames
//! mean-pooled, pooled vectors concatenated in channel order, then an MLP
//! head (or an SVM fitted on the head's first hidden layer).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::encoder::Encoder;
use super::layers::Linear;
use super::svm::SvmHead;
use crate::error::{Error, Result};
use crate::nn::{softmax_in_place, ParamStore, Tape, Var};
use crate::rng::seeded;
use crate::signal_io::Label;

pub const MODEL_CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub config: ModelConfig,
    store: ParamStore,
    encoders: Vec<Encoder>,
    hidden: Vec<Linear>,
    out: Linear,
    #[serde(default)]
    pub svm: Option<SvmHead>,
}

/// Nodes of one forward pass.
pub struct Forward {
    pub logits: Var,
    /// First hidden layer after its activation.
    pub penultimate: Var,
    pub fused: Var,
    /// Per input, the attention node of every transformer layer.
    pub attention: Vec<Vec<Var>>,
}

impl Classifier {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let mut store = ParamStore::new();
        let encoders = (0..config.n_inputs)
            .map(|i| Encoder::new(&mut store, &format!("enc{i}"), &config.encoder, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let d = config.encoder.transformer.d_model * config.n_inputs;
        let h = config.head;
        let mut hidden = Vec::with_capacity(h.hidden_layers);
        let mut din = d;
        for l in 0..h.hidden_layers {
            hidden.push(Linear::new(&mut store, &format!("head.hidden{l}"), din, h.hidden_size, &mut rng));
            din = h.hidden_size;
        }
        let out = Linear::new(&mut store, "head.out", din, h.n_classes, &mut rng);
        let mut model = Self {
            config,
            store,
            encoders,
            hidden,
            out,
            svm: None,
        };
        if model.config.freeze_encoders {
            model.set_encoders_trainable(false);
        }
        if let Some(l) = model.config.lora {
            model.wrap_lora(l.rank, l.alpha, seed)?;
        }
        Ok(model)
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn fused_dim(&self) -> usize {
        self.config.encoder.transformer.d_model * self.config.n_inputs
    }

    pub fn set_encoders_trainable(&mut self, trainable: bool) {
        for e in &self.encoders {
            for i in e.param_range() {
                self.store.set_trainable(crate::nn::ParamId(i), trainable);
            }
        }
    }

    /// Adapters on the query, value and first MLP maps of every encoder
    /// block. All other encoder weights are frozen; the head stays
    /// trainable.
    pub fn wrap_lora(&mut self, rank: usize, alpha: f64, seed: u64) -> Result<()> {
        self.set_encoders_trainable(false);
        let mut rng = seeded(seed ^ 0x10ca);
        for (ei, e) in self.encoders.iter_mut().enumerate() {
            for (bi, b) in e.blocks.iter_mut().enumerate() {
                b.q.wrap_lora(&mut self.store, &format!("enc{ei}.block{bi}.q"), rank, alpha, &mut rng)?;
                b.v.wrap_lora(&mut self.store, &format!("enc{ei}.block{bi}.v"), rank, alpha, &mut rng)?;
                b.mlp1.wrap_lora(&mut self.store, &format!("enc{ei}.block{bi}.mlp1"), rank, alpha, &mut rng)?;
            }
        }
        Ok(())
    }

    /// Fold every adapter into its base weight.
    pub fn merge_lora(&mut self) {
        for e in &mut self.encoders {
            for b in &mut e.blocks {
                b.q.merge_lora(&mut self.store);
                b.v.merge_lora(&mut self.store);
                b.mlp1.merge_lora(&mut self.store);
            }
        }
        self.config.lora = None;
    }

    /// Copy encoder `src_idx` of `src` into encoder `dst`. Adapter tensors
    /// are left alone; both encoders must share one configuration.
    pub fn copy_encoder_from(&mut self, dst: usize, src: &Classifier, src_idx: usize) -> Result<()> {
        if dst >= self.encoders.len() || src_idx >= src.encoders.len() {
            return Err(Error::Argument(format!("no encoder {dst} / {src_idx} to copy")));
        }
        if self.config.encoder != src.config.encoder {
            return Err(Error::Config("encoder configurations differ".into()));
        }
        let (from, to) = (format!("enc{src_idx}."), format!("enc{dst}."));
        for i in src.encoders[src_idx].param_range() {
            let p = &src.store.params()[i];
            let Some(rest) = p.name.strip_prefix(&from) else { continue };
            let id = self
                .store
                .find(&format!("{to}{rest}"))
                .ok_or_else(|| Error::Config(format!("parameter {to}{rest} missing")))?;
            *self.store.value_mut(id) = p.value.clone();
        }
        Ok(())
    }

    /// Mean-pooled encodings concatenated in input order.
    pub fn fuse(&self, tape: &mut Tape, inputs: &[&[f64]]) -> Result<(Var, Vec<Vec<Var>>)> {
        if inputs.len() != self.encoders.len() {
            return Err(Error::Shape(format!(
                "model takes {} inputs, got {}",
                self.encoders.len(),
                inputs.len()
            )));
        }
        let mut pooled = Vec::with_capacity(inputs.len());
        let mut attention = Vec::with_capacity(inputs.len());
        for (e, x) in self.encoders.iter().zip(inputs) {
            let enc = e.encode(tape, &self.store, x)?;
            pooled.push(tape.mean_rows(enc.seq));
            attention.push(enc.attention);
        }
        let fused = if pooled.len() == 1 { pooled[0] } else { tape.concat_cols(&pooled) };
        Ok((fused, attention))
    }

    /// MLP head on a `1 × fused_dim` row.
    pub fn head(&self, tape: &mut Tape, fused: Var) -> Result<(Var, Var)> {
        let w = tape.value(fused).cols;
        if w != self.fused_dim() {
            return Err(Error::Shape(format!("fused width {w}, head expects {}", self.fused_dim())));
        }
        let mut h = fused;
        let mut penultimate = None;
        for l in &self.hidden {
            let z = l.forward(tape, &self.store, h);
            h = tape.relu(z);
            penultimate.get_or_insert(h);
        }
        let logits = self.out.forward(tape, &self.store, h);
        Ok((logits, penultimate.expect("at least one hidden layer")))
    }

    pub fn forward(&self, tape: &mut Tape, inputs: &[&[f64]]) -> Result<Forward> {
        let (fused, attention) = self.fuse(tape, inputs)?;
        let (logits, penultimate) = self.head(tape, fused)?;
        Ok(Forward {
            logits,
            penultimate,
            fused,
            attention,
        })
    }

    /// Class-weighted cross-entropy of one example, with gradients.
    pub fn loss_and_grads(&self, inputs: &[&[f64]], label: Label, weight: f64) -> Result<(f64, crate::nn::Grads)> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, inputs)?;
        let loss = tape.softmax_xent(f.logits, label.index(), weight);
        let value = tape.value(loss).data[0];
        if !value.is_finite() {
            return Err(Error::Training(format!("non-finite classifier loss for label {label:?}")));
        }
        Ok((value, tape.backward(loss, self.store.len())))
    }

    /// Class probabilities `[normal, abnormal]` and the first hidden
    /// activation. With an SVM head the probability comes from its score.
    pub fn predict(&self, inputs: &[&[f64]]) -> Result<Prediction> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, inputs)?;
        let pen = tape.value(f.penultimate).data.clone();
        let p_abn = match &self.svm {
            Some(svm) => svm.score(&pen),
            None => {
                let mut p = tape.value(f.logits).data.clone();
                softmax_in_place(&mut p);
                p[Label::Abnormal.index()]
            }
        };
        Ok(Prediction {
            probs: [1.0 - p_abn, p_abn],
            penultimate: pen,
        })
    }

    /// Per-sample importance of input `channel`: final-layer attention each
    /// frame receives, averaged over heads and query frames, held constant
    /// across the frame's stride and scaled so the maximum is 1.
    pub fn attention_importance(&self, inputs: &[&[f64]], channel: usize) -> Result<Vec<f64>> {
        let len = inputs
            .get(channel)
            .ok_or_else(|| Error::Argument(format!("no input channel {channel}")))?
            .len();
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, inputs)?;
        let stride = self.config.encoder.total_stride();
        let Some(&last) = f.attention[channel].last() else {
            return Ok(vec![1.0; len]);
        };
        let probs = tape.attention_probs(last).expect("attention node");
        let frames = probs[0].rows;
        let mut recv = vec![0.0; frames];
        for p in probs {
            for r in 0..frames {
                for (c, v) in p.row(r).iter().enumerate() {
                    recv[c] += v / (frames * probs.len()) as f64;
                }
            }
        }
        let max = recv.iter().cloned().fold(0.0, f64::max);
        let (min, _) = recv.iter().fold((f64::INFINITY, 0), |(m, _), v| (m.min(*v), 0));
        let norm: Vec<f64> = if max - min <= 1e-12 * max.max(1e-300) {
            vec![1.0; frames]
        } else {
            recv.iter().map(|v| v / max).collect()
        };
        Ok((0..len).map(|n| norm[(n / stride).min(frames - 1)]).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>, position: &SchedulePosition) -> Result<()> {
        let ck = Checkpoint {
            version: MODEL_CHECKPOINT_VERSION,
            position: position.clone(),
            model: self.clone(),
        };
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string(&ck)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, SchedulePosition)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if ck.version != MODEL_CHECKPOINT_VERSION {
            return Err(Error::Format(format!("model checkpoint version {} unsupported", ck.version)));
        }
        Ok((ck.model, ck.position))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: [f64; 2],
    pub penultimate: Vec<f64>,
}

/// Where in a training schedule a checkpoint was taken.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchedulePosition {
    pub stage: usize,
    pub epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    position: SchedulePosition,
    model: Classifier,
}
