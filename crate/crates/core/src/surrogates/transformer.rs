//! Post-LN transformer encoder over setting tokens, pooled at CLS.

use rand_chacha::ChaCha8Rng;

use super::{EncoderConfig, SurrogateError};
use crate::autodiff::layers::{LayerNorm, Linear};
use crate::autodiff::{Graph, Init, ParamId, ParamStore, Var};

struct Block {
    q: Linear,
    /// Bias-free: a key bias only shifts every score in a row, which the
    /// softmax ignores, so its gradient is identically zero.
    k: ParamId,
    v: Linear,
    o: Linear,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

pub(crate) struct Encoder {
    cfg: EncoderConfig,
    tok: ParamId,
    pos: ParamId,
    emb_ln: LayerNorm,
    blocks: Vec<Block>,
}

/// All encoder parameter names start with this prefix.
pub const ENCODER_PREFIX: &str = "encoder.";

impl Encoder {
    pub fn new(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        let tok = store.add("encoder.token_embedding", vec![cfg.vocab, d], Init::Normal(0.02), rng);
        let pos = store.add("encoder.position_embedding", vec![cfg.max_len, d], Init::Normal(0.02), rng);
        let emb_ln = LayerNorm::new(store, "encoder.embedding_ln", d, rng);
        let blocks = (0..cfg.layers)
            .map(|i| {
                let p = format!("encoder.block{i}");
                Block {
                    q: Linear::new(store, &format!("{p}.query"), d, d, rng),
                    k: store.add(&format!("{p}.key.weight"), vec![d, d], Init::XavierUniform, rng),
                    v: Linear::new(store, &format!("{p}.value"), d, d, rng),
                    o: Linear::new(store, &format!("{p}.attn_out"), d, d, rng),
                    ln1: LayerNorm::new(store, &format!("{p}.attn_ln"), d, rng),
                    ff1: Linear::new(store, &format!("{p}.ff_in"), d, cfg.ff_dim, rng),
                    ff2: Linear::new(store, &format!("{p}.ff_out"), cfg.ff_dim, d, rng),
                    ln2: LayerNorm::new(store, &format!("{p}.ff_ln"), d, rng),
                }
            })
            .collect();
        Self { cfg: cfg.clone(), tok, pos, emb_ln, blocks }
    }

    /// CLS hidden states, `batch x d_model`. `ids` holds `batch` sequences of
    /// length `seq` back to back.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        ids: &[u32],
        batch: usize,
        seq: usize,
    ) -> Result<Var, SurrogateError> {
        if seq > self.cfg.max_len {
            return Err(SurrogateError::SequenceTooLong { len: seq, max: self.cfg.max_len });
        }
        if ids.len() != batch * seq {
            return Err(SurrogateError::Config(format!("{} token ids for {batch} sequences of {seq}", ids.len())));
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= self.cfg.vocab) {
            return Err(SurrogateError::TokenOutOfVocab { token: bad, vocab: self.cfg.vocab });
        }
        let ids_usize: Vec<usize> = ids.iter().map(|&t| t as usize).collect();
        let positions: Vec<usize> = (0..batch * seq).map(|i| i % seq).collect();
        let tok_table = g.param(store, self.tok);
        let pos_table = g.param(store, self.pos);
        let te = g.embedding(tok_table, &ids_usize)?;
        let pe = g.embedding(pos_table, &positions)?;
        let x = g.add(te, pe)?;
        let x = self.emb_ln.forward(g, store, x)?;
        let mut h = g.dropout(x, self.cfg.dropout);
        let p = self.cfg.dropout;
        for blk in &self.blocks {
            let q = blk.q.forward(g, store, h)?;
            let wk = g.param(store, blk.k);
            let k = g.matmul(h, wk)?;
            let v = blk.v.forward(g, store, h)?;
            let a = g.attention(q, k, v, batch, seq, self.cfg.heads)?;
            let a = blk.o.forward(g, store, a)?;
            let a = g.dropout(a, p);
            let r = g.add(h, a)?;
            h = blk.ln1.forward(g, store, r)?;
            let f = blk.ff1.forward(g, store, h)?;
            let f = g.gelu(f);
            let f = blk.ff2.forward(g, store, f)?;
            let f = g.dropout(f, p);
            let r = g.add(h, f)?;
            h = blk.ln2.forward(g, store, r)?;
        }
        let cls_rows: Vec<usize> = (0..batch).map(|b| b * seq).collect();
        Ok(g.select_rows(h, &cls_rows)?)
    }
}
