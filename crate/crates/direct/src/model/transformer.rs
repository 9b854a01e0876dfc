//! The compact trainable encoder: learned token embeddings, fixed sinusoidal
//! positions, and pre-norm self-attention blocks. The same code serves the
//! full-size configuration; only the dimensions differ.

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub n_blocks: usize,
    pub ffn: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    /// Desk-scale backend: whitespace tokenizer, hidden 128, 2 blocks, 4 heads.
    pub fn toy(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 128,
            n_heads: 4,
            n_blocks: 2,
            ffn: 256,
            max_len: 128,
        }
    }

    /// Full-size configuration matching a 12-layer, hidden-768 transformer.
    pub fn pretrained(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 768,
            n_heads: 12,
            n_blocks: 12,
            ffn: 3072,
            max_len: 128,
        }
    }
}

/// Classic sinusoidal position table, `(max_len, hidden)`.
pub fn sinusoidal_positions(max_len: usize, hidden: usize) -> Array2<f64> {
    let mut pe = Array2::zeros((max_len, hidden));
    for pos in 0..max_len {
        for i in 0..hidden / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / hidden as f64);
            pe[[pos, 2 * i]] = angle.sin();
            pe[[pos, 2 * i + 1]] = angle.cos();
        }
    }
    pe
}

/// Create encoder parameters with the usual small-normal initialization.
pub fn init_encoder_params(cfg: &EncoderConfig, store: &mut ParamStore, rng: &mut impl Rng) {
    let h = cfg.hidden;
    store.normal("enc.emb", (cfg.vocab_size, h), 0.02, rng);
    for b in 0..cfg.n_blocks {
        let p = format!("enc.blk{b}");
        store.ones(&format!("{p}.ln1.g"), (1, h));
        store.zeros(&format!("{p}.ln1.b"), (1, h));
        for w in ["wq", "wk", "wv", "wo"] {
            store.normal(&format!("{p}.attn.{w}"), (h, h), 0.02, rng);
        }
        for bn in ["bq", "bk", "bv", "bo"] {
            store.zeros(&format!("{p}.attn.{bn}"), (1, h));
        }
        store.ones(&format!("{p}.ln2.g"), (1, h));
        store.zeros(&format!("{p}.ln2.b"), (1, h));
        store.normal(&format!("{p}.ffn.w1"), (h, cfg.ffn), 0.02, rng);
        store.zeros(&format!("{p}.ffn.b1"), (1, cfg.ffn));
        store.normal(&format!("{p}.ffn.w2"), (cfg.ffn, h), 0.02, rng);
        store.zeros(&format!("{p}.ffn.b2"), (1, h));
    }
    store.ones("enc.ln_f.g", (1, h));
    store.zeros("enc.ln_f.b", (1, h));
}

/// Lazily binds named parameters to tape leaves, recording the mapping so the
/// caller can collect per-parameter gradients after backward.
pub struct TapeBinder<'a> {
    store: &'a ParamStore,
    bound: HashMap<String, NodeId>,
}

impl<'a> TapeBinder<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        TapeBinder {
            store,
            bound: HashMap::new(),
        }
    }

    pub fn get(&mut self, tape: &mut Tape, name: &str) -> NodeId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let id = tape.leaf(self.store.get(name).clone());
        self.bound.insert(name.to_string(), id);
        id
    }

    pub fn bound(&self) -> &HashMap<String, NodeId> {
        &self.bound
    }
}

fn linear(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    x: NodeId,
    w: &str,
    b: &str,
) -> NodeId {
    let wid = binder.get(tape, w);
    let bid = binder.get(tape, b);
    let m = tape.matmul(x, wid);
    tape.add_bias(m, bid)
}

/// Build the encoder forward graph for one input id sequence; returns the
/// node holding the `(L, hidden)` output.
pub fn encoder_forward(
    tape: &mut Tape,
    binder: &mut TapeBinder,
    cfg: &EncoderConfig,
    positions: &Array2<f64>,
    ids: &[u32],
) -> NodeId {
    let emb_table = binder.get(tape, "enc.emb");
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let emb = tape.embedding(emb_table, idx);
    let pos = positions.slice(ndarray::s![..ids.len(), ..]).to_owned();
    let mut x = tape.add_const(emb, &pos);

    let dk = cfg.hidden / cfg.n_heads;
    for b in 0..cfg.n_blocks {
        let p = format!("enc.blk{b}");
        // attention sub-layer, pre-norm
        let g1 = binder.get(tape, &format!("{p}.ln1.g"));
        let b1 = binder.get(tape, &format!("{p}.ln1.b"));
        let n1 = tape.layer_norm(x, g1, b1);
        let q = linear(tape, binder, n1, &format!("{p}.attn.wq"), &format!("{p}.attn.bq"));
        let k = linear(tape, binder, n1, &format!("{p}.attn.wk"), &format!("{p}.attn.bk"));
        let v = linear(tape, binder, n1, &format!("{p}.attn.wv"), &format!("{p}.attn.bv"));
        let mut head_outs = Vec::with_capacity(cfg.n_heads);
        for hd in 0..cfg.n_heads {
            let qh = tape.slice_cols(q, hd * dk, dk);
            let kh = tape.slice_cols(k, hd * dk, dk);
            let vh = tape.slice_cols(v, hd * dk, dk);
            let scores = tape.matmul_nt(qh, kh);
            let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
            let attn = tape.softmax_rows(scaled);
            head_outs.push(tape.matmul(attn, vh));
        }
        let cat = tape.concat_cols(head_outs);
        let proj = linear(tape, binder, cat, &format!("{p}.attn.wo"), &format!("{p}.attn.bo"));
        x = tape.add(x, proj);

        // feed-forward sub-layer, pre-norm
        let g2 = binder.get(tape, &format!("{p}.ln2.g"));
        let b2 = binder.get(tape, &format!("{p}.ln2.b"));
        let n2 = tape.layer_norm(x, g2, b2);
        let f1 = linear(tape, binder, n2, &format!("{p}.ffn.w1"), &format!("{p}.ffn.b1"));
        let act = tape.gelu(f1);
        let f2 = linear(tape, binder, act, &format!("{p}.ffn.w2"), &format!("{p}.ffn.b2"));
        x = tape.add(x, f2);
    }

    let gf = binder.get(tape, "enc.ln_f.g");
    let bf = binder.get(tape, "enc.ln_f.b");
    tape.layer_norm(x, gf, bf)
}
