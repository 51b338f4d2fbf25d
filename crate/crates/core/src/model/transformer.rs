//! ViT-style encoder: linear patch embedding with learned positions, then
//! pre-norm blocks of multi-head self-attention and a GELU MLP.

use super::config::ModelConfig;
use super::layers::{Builder, LayerNorm, Linear};
use super::params::{Bound, ParamId};
use super::patch::patchify_var;
use crate::error::Result;
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct Block {
    ln1: LayerNorm,
    qkv: Linear,
    out: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct TransformerEncoder {
    embed: Linear,
    pos: ParamId,
    blocks: Vec<Block>,
    heads: usize,
    patch: usize,
    grid: [usize; 3],
    taps: Vec<usize>,
}

/// Tapped features, each reshaped to an `(E, g0, g1, g2)` grid.
pub struct EncoderOutput<'t> {
    pub taps: Vec<Var<'t>>,
    /// Layer index (1-based) of each tap.
    pub tap_layers: Vec<usize>,
    /// Per layer `(heads, N, N)` attention weights, when requested.
    pub attention: Vec<Tensor>,
}

impl TransformerEncoder {
    pub(crate) fn build(b: &mut Builder<'_>, prefix: &str, cfg: &ModelConfig) -> Self {
        let e = cfg.embed_dim;
        let hidden = cfg.mlp_ratio * e;
        let embed = b.linear(&format!("{prefix}.embed"), cfg.token_len(), e);
        let pos = b.embedding(&format!("{prefix}.pos"), &[cfg.num_tokens(), e]);
        let blocks = (0..cfg.depth)
            .map(|i| {
                let n = format!("{prefix}.blocks.{i}");
                Block {
                    ln1: b.layer_norm(&format!("{n}.ln1"), e),
                    qkv: b.linear(&format!("{n}.qkv"), e, 3 * e),
                    out: b.linear(&format!("{n}.out"), e, e),
                    ln2: b.layer_norm(&format!("{n}.ln2"), e),
                    fc1: b.linear(&format!("{n}.fc1"), e, hidden),
                    fc2: b.linear(&format!("{n}.fc2"), hidden, e),
                }
            })
            .collect();
        Self {
            embed,
            pos,
            blocks,
            heads: cfg.num_heads,
            patch: cfg.patch_size,
            grid: cfg.grid(),
            taps: cfg.taps(),
        }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    fn attention<'t>(
        &self,
        p: &Bound<'t>,
        block: &Block,
        x: &Var<'t>,
        keep: Option<&mut Vec<Tensor>>,
    ) -> Result<Var<'t>> {
        let (n, e) = (x.shape()[0], x.shape()[1]);
        let h = self.heads;
        let d = e / h;
        let qkv = block.qkv.forward(p, x)?;
        let split = |k: usize| -> Result<Var<'t>> {
            qkv.slice(1, k * e, (k + 1) * e)?
                .reshape(&[n, h, d])?
                .permute(&[1, 0, 2])
        };
        let q = split(0)?;
        let k = split(1)?.permute(&[0, 2, 1])?;
        let v = split(2)?;
        let scores = q.matmul(&k)?.scale(1.0 / (d as f32).sqrt());
        let attn = scores.softmax(2)?;
        if let Some(keep) = keep {
            keep.push(attn.value().clone());
        }
        let ctx = attn.matmul(&v)?.permute(&[1, 0, 2])?.reshape(&[n, e])?;
        block.out.forward(p, &ctx)
    }

    /// Run the encoder on a `(C, d0, d1, d2)` input.
    pub fn encode<'t>(
        &self,
        p: &Bound<'t>,
        x: &Var<'t>,
        record_attention: bool,
    ) -> Result<EncoderOutput<'t>> {
        let tokens = patchify_var(x, self.patch)?;
        let mut h = self.embed.forward(p, &tokens)?.add(p.get(self.pos))?;
        let mut attention = Vec::new();
        let mut taps = Vec::with_capacity(self.taps.len());
        let [g0, g1, g2] = self.grid;
        for (i, block) in self.blocks.iter().enumerate() {
            let normed = block.ln1.forward(p, &h)?;
            let keep = record_attention.then_some(&mut attention);
            h = h.add(&self.attention(p, block, &normed, keep)?)?;
            let normed = block.ln2.forward(p, &h)?;
            let mlp = block
                .fc2
                .forward(p, &block.fc1.forward(p, &normed)?.gelu())?;
            h = h.add(&mlp)?;
            if self.taps.contains(&(i + 1)) {
                let e = h.shape()[1];
                taps.push(h.reshape(&[g0, g1, g2, e])?.permute(&[3, 0, 1, 2])?);
            }
        }
        Ok(EncoderOutput {
            taps,
            tap_layers: self.taps.clone(),
            attention,
        })
    }
}
