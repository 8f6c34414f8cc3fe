//! Bin refinement head: multi-level feature enhancement, coarse-to-fine
//! query readout, bin prediction and the expectation height map.

use tsonet_tensor::{ParamId, Real, Var};

use crate::nn::{ChannelNorm, Conv2d, Init, Mlp, Params};

/// Restormer-style block: channel-transposed attention and a gated
/// depth-wise feed-forward, both pre-normalised and residual.
#[derive(Clone, Debug)]
pub struct RestormerBlock {
    pub norm1: ChannelNorm,
    pub qkv: Conv2d,
    pub qkv_dw: Conv2d,
    pub temperature: ParamId,
    pub proj: Conv2d,
    pub norm2: ChannelNorm,
    pub ffn_in: Conv2d,
    pub ffn_dw: Conv2d,
    pub ffn_out: Conv2d,
    pub heads: usize,
}

impl RestormerBlock {
    pub const QK_EPS: f64 = 1e-6;

    pub fn new(init: &mut Init, c: usize, heads: usize, ffn_expansion: f64) -> Self {
        assert_eq!(c % heads, 0, "{c} channels do not split into {heads} heads");
        let hidden = ((c as f64 * ffn_expansion).round() as usize).max(1);
        Self {
            norm1: ChannelNorm::new(&mut init.sub("norm1"), c),
            qkv: Conv2d::new(&mut init.sub("qkv"), c, 3 * c, 1, 1, false),
            qkv_dw: Conv2d::new(&mut init.sub("qkv_dw"), 3 * c, 3 * c, 3, 3 * c, false),
            temperature: init.constant("temperature", &[1, heads, 1, 1], 1.0),
            proj: Conv2d::new(&mut init.sub("proj"), c, c, 1, 1, false),
            norm2: ChannelNorm::new(&mut init.sub("norm2"), c),
            ffn_in: Conv2d::new(&mut init.sub("ffn_in"), c, 2 * hidden, 1, 1, false),
            ffn_dw: Conv2d::new(&mut init.sub("ffn_dw"), 2 * hidden, 2 * hidden, 3, 2 * hidden, false),
            ffn_out: Conv2d::new(&mut init.sub("ffn_out"), hidden, c, 1, 1, false),
            heads,
        }
    }

    pub fn forward<'g, T: Real>(&self, p: Params<'_, 'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let qkv = self.qkv_dw.forward(p, self.qkv.forward(p, self.norm1.forward(p, x)));
        let parts = qkv.chunk(3, 1);
        let attended = channel_attention(parts[0], parts[1], parts[2], p.var(self.temperature), self.heads);
        let x = x + self.proj.forward(p, attended);

        let h = self.ffn_dw.forward(p, self.ffn_in.forward(p, self.norm2.forward(p, x)));
        let halves = h.chunk(2, 1);
        x + self.ffn_out.forward(p, halves[0].gelu() * halves[1])
    }
}

/// Multi-head attention across channels. `q`, `k`, `v` are `[B, C, H, W]`;
/// each head attends over its `C/heads x C/heads` channel similarity matrix
/// built from spatially L2-normalised queries and keys, scaled by a
/// per-head temperature of shape `[1, heads, 1, 1]`.
pub fn channel_attention<'g, T: Real>(
    q: Var<'g, T>,
    k: Var<'g, T>,
    v: Var<'g, T>,
    temperature: Var<'g, T>,
    heads: usize,
) -> Var<'g, T> {
    let s = q.shape();
    let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
    let split = |t: Var<'g, T>| t.reshape([b, heads, c / heads, hw]);
    let q = split(q).l2_normalize(3, RestormerBlock::QK_EPS);
    let k = split(k).l2_normalize(3, RestormerBlock::QK_EPS);
    let v = split(v);
    let flat = |t: Var<'g, T>| t.reshape([b * heads, c / heads, hw]);
    let logits = flat(q).matmul_with(flat(k), false, true).reshape([b, heads, c / heads, c / heads]);
    let attn = (logits * temperature).softmax(3);
    attn.reshape([b * heads, c / heads, c / heads])
        .matmul(flat(v))
        .reshape(s)
}

/// One coarse-to-fine readout step on batched queries.
///
/// `q_prev` is `[B, K, C]`, `feature` is `[B, C, H, W]`. Returns the new
/// queries and the `[B, K, H*W]` attention map.
pub fn cfqr_update<'g, T: Real>(q_prev: Var<'g, T>, feature: Var<'g, T>, eps: f64) -> (Var<'g, T>, Var<'g, T>) {
    let s = feature.shape();
    let tokens = feature.reshape([s[0], s[1], s[2] * s[3]]).permute(&[0, 2, 1]);
    let sim = q_prev.l2_normalize(2, eps).matmul_with(tokens.l2_normalize(2, eps), false, true);
    let attn = sim.softmax(2);
    let readout = attn.matmul(tokens);
    ((q_prev + readout).l2_normalize(2, eps), attn)
}

/// Per-pixel bin probabilities. `embeddings` is `[B, K, C]` and `features`
/// `[B, C, Hs, Ws]`; dot products are scaled by `1/sqrt(C)` and upsampled
/// to `out_hw` before the softmax over bins. Returns `(logits, probs)`,
/// both `[B, K, H, W]`.
pub fn bin_logits<'g, T: Real>(
    embeddings: Var<'g, T>,
    features: Var<'g, T>,
    out_hw: (usize, usize),
) -> (Var<'g, T>, Var<'g, T>) {
    let e = embeddings.shape();
    let f = features.shape();
    assert_eq!(e[2], f[1], "embedding width {} does not match feature channels {}", e[2], f[1]);
    let low = embeddings
        .matmul(features.reshape([f[0], f[1], f[2] * f[3]]))
        .reshape([f[0], e[1], f[2], f[3]])
        .scale(1.0 / (e[2] as f64).sqrt());
    let logits = low.resize_bilinear(out_hw.0, out_hw.1);
    (logits, logits.softmax(1))
}

/// `sum_k p_k b_k` for probabilities `[B, K, H, W]` and bin values `[B, K]`.
pub fn height_expectation<'g, T: Real>(probs: Var<'g, T>, values: Var<'g, T>) -> Var<'g, T> {
    let v = values.shape();
    (probs * values.reshape([v[0], v[1], 1, 1])).sum_axes(&[1])
}

#[derive(Clone, Debug)]
pub struct FebrConfig {
    pub channels: usize,
    pub num_bins: usize,
    pub levels: usize,
    pub heads: usize,
    pub ffn_expansion: f64,
    pub l2_eps: f64,
    pub height_unit: f64,
}

#[derive(Clone, Debug)]
pub struct FebrLevel {
    pub align: Conv2d,
    pub block: RestormerBlock,
}

impl FebrLevel {
    /// 1x1 alignment, optional fusion with the upsampled coarser result,
    /// then the Restormer block.
    pub fn enhance<'g, T: Real>(&self, p: Params<'_, 'g, T>, feature: Var<'g, T>, prev: Option<Var<'g, T>>) -> Var<'g, T> {
        let mut x = self.align.forward(p, feature);
        if let Some(prev) = prev {
            let s = x.shape();
            x = x + prev.resize_bilinear(s[2], s[3]);
        }
        self.block.forward(p, x)
    }
}

#[derive(Clone, Debug)]
pub struct Febr {
    pub levels: Vec<FebrLevel>,
    /// Learned per-bin identity added to the final queries.
    pub bin_identity: ParamId,
    pub value_mlp: Mlp,
    pub embed_mlp: Mlp,
    pub config: FebrConfig,
}

pub struct BinOutputs<'g, T: Real> {
    pub values: Var<'g, T>,
    pub embeddings: Var<'g, T>,
    pub logits: Var<'g, T>,
    pub probs: Var<'g, T>,
    pub height: Var<'g, T>,
    pub queries: Vec<Var<'g, T>>,
    pub attention: Vec<Var<'g, T>>,
}

impl Febr {
    pub fn new(init: &mut Init, config: FebrConfig) -> Self {
        let c = config.channels;
        let levels = (0..config.levels)
            .map(|i| {
                let mut l = init.sub(format!("level{i}"));
                FebrLevel {
                    align: Conv2d::new(&mut l.sub("align"), c, c, 1, 1, true),
                    block: RestormerBlock::new(&mut l.sub("block"), c, config.heads, config.ffn_expansion),
                }
            })
            .collect();
        Self {
            levels,
            bin_identity: init.normal("bin_identity", &[config.num_bins, c], 1.0),
            value_mlp: Mlp::new(&mut init.sub("value_mlp"), c, c, 1),
            embed_mlp: Mlp::new(&mut init.sub("embed_mlp"), c, c, c),
            config,
        }
    }

    /// `b = unit * softplus(MLP_v(q))` and `E = MLP_e(q)` on `[B, K, C]`
    /// queries, after adding the per-bin identity.
    pub fn predict_bins<'g, T: Real>(&self, p: Params<'_, 'g, T>, q_final: Var<'g, T>) -> (Var<'g, T>, Var<'g, T>) {
        let q = q_final + p.var(self.bin_identity);
        let s = q.shape();
        let values = self
            .value_mlp
            .forward(p, q)
            .softplus()
            .scale(self.config.height_unit)
            .reshape([s[0], s[1]]);
        (values, self.embed_mlp.forward(p, q))
    }

    /// `pyramid` holds decoded height levels finest first; the coarsest
    /// `levels` of them are consumed coarse to fine.
    pub fn forward<'g, T: Real>(
        &self,
        p: Params<'_, 'g, T>,
        pyramid: &[Var<'g, T>],
        refined: Var<'g, T>,
        out_hw: (usize, usize),
    ) -> BinOutputs<'g, T> {
        let n = self.levels.len();
        assert!(pyramid.len() >= n, "pyramid has {} levels, need {n}", pyramid.len());
        let batch = refined.shape()[0];
        let g = p.graph();
        let mut q = g.constant(tsonet_tensor::Tensor::zeros([batch, self.config.num_bins, self.config.channels]));
        let mut prev = None;
        let mut queries = Vec::with_capacity(n);
        let mut attention = Vec::with_capacity(n);
        for (i, level) in self.levels.iter().enumerate() {
            let feature = pyramid[pyramid.len() - 1 - i];
            let enhanced = level.enhance(p, feature, prev);
            let (q_next, attn) = cfqr_update(q, enhanced, self.config.l2_eps);
            q = q_next;
            queries.push(q);
            attention.push(attn);
            prev = Some(enhanced);
        }
        let (values, embeddings) = self.predict_bins(p, q);
        let (logits, probs) = bin_logits(embeddings, refined, out_hw);
        let height = height_expectation(probs, values);
        BinOutputs {
            values,
            embeddings,
            logits,
            probs,
            height,
            queries,
            attention,
        }
    }
}
