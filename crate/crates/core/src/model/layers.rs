use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{matmul, Mat, ParamId, ParamStore, Tape, Var};
use crate::rng::Rng;

/// Low-rank update `(α/r)·B·A` on top of a frozen base map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoraIds {
    /// `r × d_in`
    pub a: ParamId,
    /// `d_out × r`, zero at wrap time.
    pub b: ParamId,
    pub scale: f64,
}

/// `y = x·Wᵀ + b`, weight `d_out × d_in`, with an optional LoRA branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub lora: Option<LoraIds>,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut Rng) -> Self {
        Self {
            w: store.add_uniform(format!("{name}.w"), d_out, d_in, d_in, rng),
            b: store.add_const(format!("{name}.b"), 1, d_out, 0.0),
            lora: None,
        }
    }

    pub fn d_in(&self, store: &ParamStore) -> usize {
        store.value(self.w).cols
    }

    pub fn d_out(&self, store: &ParamStore) -> usize {
        store.value(self.w).rows
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        let y = tape.matmul_bt(x, w);
        let mut y = tape.add_row(y, b);
        if let Some(l) = self.lora {
            let a = tape.param(store, l.a);
            let bb = tape.param(store, l.b);
            let xa = tape.matmul_bt(x, a);
            let xab = tape.matmul_bt(xa, bb);
            let s = tape.scale(xab, l.scale);
            y = tape.add(y, s);
        }
        y
    }

    /// Attach a LoRA branch and freeze the base weight and bias. Only the
    /// `r·(d_in + d_out)` adapter scalars stay trainable.
    pub fn wrap_lora(&mut self, store: &mut ParamStore, name: &str, rank: usize, alpha: f64, rng: &mut Rng) -> Result<()> {
        let (d_out, d_in) = store.value(self.w).shape();
        if rank == 0 || rank > d_in.min(d_out) {
            return Err(Error::Argument(format!(
                "LoRA rank {rank} must be in 1..={}",
                d_in.min(d_out)
            )));
        }
        if self.lora.is_some() {
            return Err(Error::Argument(format!("{name} already has a LoRA adapter")));
        }
        let a = store.add_uniform(format!("{name}.lora_a"), rank, d_in, d_in, rng);
        let b = store.add_const(format!("{name}.lora_b"), d_out, rank, 0.0);
        store.set_trainable(self.w, false);
        store.set_trainable(self.b, false);
        self.lora = Some(LoraIds {
            a,
            b,
            scale: alpha / rank as f64,
        });
        Ok(())
    }

    /// Fold the adapter into the base weight: `W ← W + (α/r)·B·A`. The
    /// adapter tensors are zeroed and the base made trainable again.
    pub fn merge_lora(&mut self, store: &mut ParamStore) {
        let Some(l) = self.lora.take() else { return };
        let mut delta = matmul(store.value(l.b), store.value(l.a));
        delta.scale(l.scale);
        store.value_mut(self.w).add_assign(&delta);
        let (ra, ca) = store.value(l.a).shape();
        let (rb, cb) = store.value(l.b).shape();
        *store.value_mut(l.a) = Mat::zeros(ra, ca);
        *store.value_mut(l.b) = Mat::zeros(rb, cb);
        store.set_trainable(l.a, false);
        store.set_trainable(l.b, false);
        store.set_trainable(self.w, true);
        store.set_trainable(self.b, true);
    }
}

/// Learned gain and shift for layer normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add_const(format!("{name}.gain"), 1, width, 1.0),
            shift: store.add_const(format!("{name}.shift"), 1, width, 0.0),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gain);
        let s = tape.param(store, self.shift);
        tape.layer_norm(x, g, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};
    use rand::Rng as _;

    #[test]
    fn lora_zero_init_and_merge() {
        let mut rng = seeded(1);
        let mut store = ParamStore::new();
        let mut lin = Linear::new(&mut store, "l", 6, 5, &mut rng);
        let x = Mat::from_vec(3, 6, normal_vec(&mut rng, 18));
        let run = |lin: &Linear, store: &ParamStore| {
            let mut t = Tape::new();
            let xv = t.input(x.clone());
            let y = lin.forward(&mut t, store, xv);
            t.value(y).clone()
        };
        let base = run(&lin, &store);
        let before = store.count(true);
        lin.wrap_lora(&mut store, "l", 2, 4.0, &mut rng).unwrap();
        assert_eq!(run(&lin, &store), base);
        assert_eq!(store.count(true), 2 * (6 + 5));
        assert!(before > store.count(true));

        let l = lin.lora.unwrap();
        for v in store.value_mut(l.b).data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let adapted = run(&lin, &store);
        assert!(adapted.data.iter().zip(&base.data).any(|(a, b)| (a - b).abs() > 1e-3));
        lin.merge_lora(&mut store);
        let merged = run(&lin, &store);
        let diff = merged.data.iter().zip(&adapted.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "{diff}");
    }

    #[test]
    fn lora_rank_is_checked() {
        let mut rng = seeded(1);
        let mut store = ParamStore::new();
        let mut lin = Linear::new(&mut store, "l", 3, 4, &mut rng);
        assert!(matches!(lin.wrap_lora(&mut store, "l", 0, 1.0, &mut rng), Err(Error::Argument(_))));
        assert!(matches!(lin.wrap_lora(&mut store, "l", 4, 1.0, &mut rng), Err(Error::Argument(_))));
    }
}
