//! Single-block self-attention text encoder producing z_text.

use rand::Rng;

use super::vocab::PAD_ID;
use super::ModelConfig;
use crate::error::{CotError, Result};
use crate::tensorkit::{uniform_init, ParamLeaves, ParamSet, Tape, Tensor, Var};

/// Parameter indices of the text encoder inside a shared [`ParamSet`].
///
/// Blocks live under the `text.` prefix; the `top_block` unfreeze policy
/// covers `text.attn.wo` and `text.out.*`.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    pub cfg: ModelConfig,
    emb: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    out_w: usize,
    out_b: usize,
}

/// Names of the blocks unfrozen by the `top_block` policy.
pub const TOP_BLOCK_PREFIXES: [&str; 2] = ["text.attn.wo", "text.out."];

impl TextEncoder {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        cfg: &ModelConfig,
        vocab_size: usize,
        rng: &mut R,
    ) -> Self {
        let e = cfg.embed_dim;
        assert!(e % 2 == 0, "embed_dim must be even for sinusoidal positions");
        Self {
            cfg: cfg.clone(),
            emb: params.add("text.emb", uniform_init(rng, vocab_size, e, e)),
            wq: params.add("text.attn.wq", uniform_init(rng, e, e, e)),
            wk: params.add("text.attn.wk", uniform_init(rng, e, e, e)),
            wv: params.add("text.attn.wv", uniform_init(rng, e, e, e)),
            wo: params.add("text.attn.wo", uniform_init(rng, e, e, e)),
            out_w: params.add("text.out.w", uniform_init(rng, e, cfg.shared_dim, e)),
            out_b: params.add("text.out.b", Tensor::zeros(1, cfg.shared_dim)),
        }
    }

    fn positional(&self, len: usize) -> Tensor {
        let e = self.cfg.embed_dim;
        let mut t = Tensor::zeros(len, e);
        for pos in 0..len {
            for i in 0..e / 2 {
                let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / e as f64);
                t.set(pos, 2 * i, angle.sin());
                t.set(pos, 2 * i + 1, angle.cos());
            }
        }
        t
    }

    /// Differentiable forward pass. `ids` come from `tokenize`; trailing
    /// padding does not change the result.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        leaves: &mut ParamLeaves,
        ids: &[usize],
    ) -> Result<Var> {
        if ids.is_empty() {
            return Err(CotError::Data("empty token sequence".into()));
        }
        let mask: Vec<bool> = ids.iter().map(|&id| id != PAD_ID).collect();
        if !mask.iter().any(|&m| m) {
            return Err(CotError::Data("all-pad token sequence".into()));
        }
        let e = self.cfg.embed_dim;

        let emb = leaves.get(tape, params, self.emb);
        let x = tape.gather_rows(emb, ids)?;
        let x = tape.add_const(x, &self.positional(ids.len()))?;

        let wq = leaves.get(tape, params, self.wq);
        let wk = leaves.get(tape, params, self.wk);
        let wv = leaves.get(tape, params, self.wv);
        let wo = leaves.get(tape, params, self.wo);
        let q = tape.matmul(x, wq)?;
        let k = tape.matmul(x, wk)?;
        let v = tape.matmul(x, wv)?;
        let kt = tape.transpose(k);
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (e as f64).sqrt());
        let attn = tape.softmax_rows_masked(scores, &mask)?;
        let ctx = tape.matmul(attn, v)?;
        let ctx = tape.matmul(ctx, wo)?;

        let pooled = tape.masked_mean_rows(ctx, &mask)?;
        let out_w = leaves.get(tape, params, self.out_w);
        let out_b = leaves.get(tape, params, self.out_b);
        let z = tape.linear(pooled, out_w, out_b)?;
        tape.l2_normalize_rows(z)
    }

    /// Non-differentiable convenience returning the plain embedding row.
    pub fn encode(&self, params: &ParamSet, ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let mut leaves = ParamLeaves::new(params);
        let z = self.forward(&mut tape, params, &mut leaves, ids)?;
        Ok(tape.value(z).clone())
    }
}
