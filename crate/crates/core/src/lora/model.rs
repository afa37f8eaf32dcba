//! A small encoder-decoder transformer with frozen base weights and
//! optional low-rank updates on the attention projections.
//!
//! Layers are pre-norm (parameter-free RMS norm), attention has no
//! biases, the feed-forward block is `gelu(x·W1)·W2`, and positions use
//! fixed random embeddings. Everything runs at `f64`, one example at a
//! time, so there is no padding anywhere.

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adapter::{merge_weights, AdapterMatrix, AttentionBlock, LoraAdapter, Projection, Site};
use super::vocab::BOS;
use super::LoraError;

const RMS_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Per-head width of queries, keys and values.
    pub d_kv: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub max_input_len: usize,
    pub max_output_len: usize,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        ToyModelConfig {
            vocab_size: 1024,
            d_model: 64,
            n_heads: 4,
            d_kv: 16,
            d_ff: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            max_input_len: 512,
            max_output_len: 128,
        }
    }
}

impl ToyModelConfig {
    /// Config with `d_kv = d_model / n_heads`.
    pub fn sized(
        vocab_size: usize,
        d_model: usize,
        n_heads: usize,
        layers: usize,
    ) -> ToyModelConfig {
        ToyModelConfig {
            vocab_size,
            d_model,
            n_heads,
            d_kv: d_model / n_heads.max(1),
            d_ff: 2 * d_model,
            encoder_layers: layers,
            decoder_layers: layers,
            ..ToyModelConfig::default()
        }
    }

    pub fn inner_dim(&self) -> usize {
        self.n_heads * self.d_kv
    }

    pub fn validate(&self) -> Result<(), LoraError> {
        let bad = |m: &str| Err(LoraError::Config(m.to_string()));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by the head count");
        }
        if self.vocab_size < 5 || self.d_model == 0 || self.d_kv == 0 || self.d_ff == 0 {
            return bad(
                "model dimensions must be positive and the vocabulary must exceed the specials",
            );
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return bad("encoder and decoder need at least one layer each");
        }
        if self.max_input_len == 0 || self.max_output_len == 0 {
            return bad("sequence limits must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Attention {
    wq: Array2<f64>,
    wk: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
}

impl Attention {
    fn weight(&self, p: Projection) -> &Array2<f64> {
        match p {
            Projection::Query => &self.wq,
            Projection::Key => &self.wk,
            Projection::Value => &self.wv,
        }
    }

    fn weight_mut(&mut self, p: Projection) -> &mut Array2<f64> {
        match p {
            Projection::Query => &mut self.wq,
            Projection::Key => &mut self.wk,
            Projection::Value => &mut self.wv,
        }
    }
}

#[derive(Debug, Clone)]
struct Ffn {
    w1: Array2<f64>,
    w2: Array2<f64>,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: Attention,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: Attention,
    cross_attn: Attention,
    ffn: Ffn,
}

/// Frozen base model. Weights are private and never mutated after
/// construction.
#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ToyModelConfig,
    embed: Array2<f64>,
    enc_pos: Array2<f64>,
    dec_pos: Array2<f64>,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    lm_head: Array2<f64>,
    fingerprint: [u8; 32],
}

fn gaussian(rng: &mut ChaCha8Rng, shape: (usize, usize), std: f64) -> Array2<f64> {
    let n = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_simple_fn(shape, || n.sample(rng))
}

impl ToyModel {
    pub fn random(config: ToyModelConfig, seed: u64) -> Result<ToyModel, LoraError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, i, f, v) = (
            config.d_model,
            config.inner_dim(),
            config.d_ff,
            config.vocab_size,
        );
        let sd = 1.0 / (d as f64).sqrt();
        let attn = |rng: &mut ChaCha8Rng| Attention {
            wq: gaussian(rng, (d, i), sd),
            wk: gaussian(rng, (d, i), sd),
            wv: gaussian(rng, (d, i), sd),
            wo: gaussian(rng, (i, d), 1.0 / (i as f64).sqrt()),
        };
        let ffn = |rng: &mut ChaCha8Rng| Ffn {
            w1: gaussian(rng, (d, f), sd),
            w2: gaussian(rng, (f, d), 1.0 / (f as f64).sqrt()),
        };
        let embed = gaussian(&mut rng, (v, d), 1.0);
        let enc_pos = gaussian(&mut rng, (config.max_input_len, d), 0.5);
        let dec_pos = gaussian(&mut rng, (config.max_output_len, d), 0.5);
        let encoder = (0..config.encoder_layers)
            .map(|_| EncoderLayer {
                attn: attn(&mut rng),
                ffn: ffn(&mut rng),
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|_| DecoderLayer {
                self_attn: attn(&mut rng),
                cross_attn: attn(&mut rng),
                ffn: ffn(&mut rng),
            })
            .collect();
        let lm_head = gaussian(&mut rng, (d, v), sd);
        let mut model = ToyModel {
            config,
            embed,
            enc_pos,
            dec_pos,
            encoder,
            decoder,
            lm_head,
            fingerprint: [0; 32],
        };
        model.fingerprint = model.weights_hash();
        Ok(model)
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    /// SHA-256 of the weights, computed at construction.
    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    /// Recomputes SHA-256 over the config and every weight.
    pub fn weights_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        let mut feed = |m: &Array2<f64>| {
            for x in m.iter() {
                h.update(x.to_le_bytes());
            }
        };
        feed(&self.embed);
        feed(&self.enc_pos);
        feed(&self.dec_pos);
        for l in &self.encoder {
            for m in [
                &l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo, &l.ffn.w1, &l.ffn.w2,
            ] {
                feed(m);
            }
        }
        for l in &self.decoder {
            for a in [&l.self_attn, &l.cross_attn] {
                for m in [&a.wq, &a.wk, &a.wv, &a.wo] {
                    feed(m);
                }
            }
            feed(&l.ffn.w1);
            feed(&l.ffn.w2);
        }
        feed(&self.lm_head);
        h.finalize().into()
    }

    /// Every adaptable site, encoder first, in a fixed order.
    pub fn sites(&self) -> Vec<Site> {
        let mut out = Vec::new();
        for layer in 0..self.config.encoder_layers {
            for projection in Projection::ALL {
                out.push(Site {
                    block: AttentionBlock::EncoderSelf,
                    layer,
                    projection,
                });
            }
        }
        for layer in 0..self.config.decoder_layers {
            for block in [AttentionBlock::DecoderSelf, AttentionBlock::DecoderCross] {
                for projection in Projection::ALL {
                    out.push(Site {
                        block,
                        layer,
                        projection,
                    });
                }
            }
        }
        out
    }

    fn attention(&self, block: AttentionBlock, layer: usize) -> Option<&Attention> {
        match block {
            AttentionBlock::EncoderSelf => self.encoder.get(layer).map(|l| &l.attn),
            AttentionBlock::DecoderSelf => self.decoder.get(layer).map(|l| &l.self_attn),
            AttentionBlock::DecoderCross => self.decoder.get(layer).map(|l| &l.cross_attn),
        }
    }

    pub fn site_weight(&self, site: Site) -> Option<&Array2<f64>> {
        self.attention(site.block, site.layer)
            .map(|a| a.weight(site.projection))
    }

    /// `(d, k)` of the weight at `site`.
    pub fn site_shape(&self, site: Site) -> Option<(usize, usize)> {
        self.site_weight(site).map(|w| w.dim())
    }

    /// A copy of this model with the adapter folded into the weights.
    pub fn merged(&self, adapter: &LoraAdapter) -> Result<ToyModel, LoraError> {
        adapter.check_base(self)?;
        let mut m = self.clone();
        for am in &adapter.matrices {
            let a = am.a.mapv(f64::from);
            let b = am.b.mapv(f64::from);
            let site = am.site;
            let attn = match site.block {
                AttentionBlock::EncoderSelf => &mut m.encoder[site.layer].attn,
                AttentionBlock::DecoderSelf => &mut m.decoder[site.layer].self_attn,
                AttentionBlock::DecoderCross => &mut m.decoder[site.layer].cross_attn,
            };
            let w = attn.weight_mut(site.projection);
            *w = merge_weights(w, &a, &b, f64::from(adapter.alpha), adapter.rank)?;
        }
        m.fingerprint = m.weights_hash();
        Ok(m)
    }
}

/// Low-rank pair at `f64` for training and inference.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    pub a: Array2<f64>,
    pub b: Array2<f64>,
}

/// Working copy of an adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraWeights {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub sites: BTreeMap<Site, LoraPair>,
}

impl LoraWeights {
    pub fn from_adapter(adapter: &LoraAdapter, dropout: f64) -> LoraWeights {
        let sites = adapter
            .matrices
            .iter()
            .map(|m| {
                (
                    m.site,
                    LoraPair {
                        a: m.a.mapv(f64::from),
                        b: m.b.mapv(f64::from),
                    },
                )
            })
            .collect();
        LoraWeights {
            rank: adapter.rank,
            alpha: f64::from(adapter.alpha),
            dropout,
            sites,
        }
    }

    pub fn to_adapter(&self, base_fingerprint: [u8; 32]) -> LoraAdapter {
        let matrices = self
            .sites
            .iter()
            .map(|(&site, p)| AdapterMatrix {
                site,
                a: p.a.mapv(|x| x as f32),
                b: p.b.mapv(|x| x as f32),
            })
            .collect();
        LoraAdapter {
            rank: self.rank,
            alpha: self.alpha as f32,
            matrices,
            base_fingerprint,
        }
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn zeros_like(&self) -> BTreeMap<Site, LoraPair> {
        self.sites
            .iter()
            .map(|(&s, p)| {
                (
                    s,
                    LoraPair {
                        a: Array2::zeros(p.a.dim()),
                        b: Array2::zeros(p.b.dim()),
                    },
                )
            })
            .collect()
    }
}

/// Gradients keyed like [`LoraWeights::sites`].
pub type LoraGrads = BTreeMap<Site, LoraPair>;

struct Run<'r> {
    lora: Option<&'r LoraWeights>,
    rng: Option<&'r mut ChaCha8Rng>,
}

/// Adapter-path input after dropout, its product with `A`, and the
/// dropout mask when one was applied.
type LoraPath = (Array2<f64>, Array2<f64>, Option<Array2<f64>>);

struct ProjCache {
    lora: Option<LoraPath>,
}

struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    cq: ProjCache,
    ck: ProjCache,
    cv: ProjCache,
}

struct Norm {
    y: Array2<f64>,
    inv: Vec<f64>,
}

struct FfnCache {
    h: Array2<f64>,
}

struct EncCache {
    n1: Norm,
    attn: AttnCache,
    n2: Norm,
    ffn: FfnCache,
}

struct DecCache {
    n1: Norm,
    self_attn: AttnCache,
    n2: Norm,
    cross: AttnCache,
    n3: Norm,
    ffn: FfnCache,
}

struct Trace {
    enc: Vec<EncCache>,
    enc_final: Norm,
    dec: Vec<DecCache>,
    dec_final: Norm,
}

fn rms_fwd(x: &Array2<f64>) -> Norm {
    let d = x.ncols() as f64;
    let mut y = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in y.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d;
        let r = 1.0 / (ms + RMS_EPS).sqrt();
        row.mapv_inplace(|v| v * r);
        inv.push(r);
    }
    Norm { y, inv }
}

fn rms_bwd(dy: &Array2<f64>, n: &Norm) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let mut dx = dy.clone();
    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
        let y = n.y.row(i);
        let m = row.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        let r = n.inv[i];
        for (v, yv) in row.iter_mut().zip(y.iter()) {
            *v = r * (*v - yv * m);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn ffn_fwd(f: &Ffn, x: &Array2<f64>) -> (Array2<f64>, FfnCache) {
    let h = x.dot(&f.w1);
    (h.mapv(gelu).dot(&f.w2), FfnCache { h })
}

fn ffn_bwd(f: &Ffn, dout: &Array2<f64>, c: &FfnCache) -> Array2<f64> {
    let mut dh = dout.dot(&f.w2.t());
    dh.zip_mut_with(&c.h, |g, &h| *g *= gelu_grad(h));
    dh.dot(&f.w1.t())
}

fn softmax_rows(scores: &mut Array2<f64>, causal: bool) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let limit = if causal { i + 1 } else { row.len() };
        let max = row
            .iter()
            .take(limit)
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j < limit {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

/// A base model plus an optional working adapter.
#[derive(Debug, Clone)]
pub struct AdaptedModel<'a> {
    base: &'a ToyModel,
    lora: Option<LoraWeights>,
}

impl<'a> AdaptedModel<'a> {
    pub fn new(
        base: &'a ToyModel,
        adapter: Option<&LoraAdapter>,
    ) -> Result<AdaptedModel<'a>, LoraError> {
        let lora = match adapter {
            Some(a) => {
                a.check_base(base)?;
                Some(LoraWeights::from_adapter(a, 0.0))
            }
            None => None,
        };
        Ok(AdaptedModel { base, lora })
    }

    pub fn from_weights(base: &'a ToyModel, lora: LoraWeights) -> AdaptedModel<'a> {
        AdaptedModel {
            base,
            lora: Some(lora),
        }
    }

    pub fn base(&self) -> &ToyModel {
        self.base
    }

    pub fn weights(&self) -> Option<&LoraWeights> {
        self.lora.as_ref()
    }

    pub fn weights_mut(&mut self) -> Option<&mut LoraWeights> {
        self.lora.as_mut()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.lora.as_ref().map_or(0, |l| {
            l.sites
                .values()
                .map(|p| l.rank * (p.a.nrows() + p.b.ncols()))
                .sum()
        })
    }

    fn proj_fwd(
        &self,
        x: &Array2<f64>,
        w: &Array2<f64>,
        site: Site,
        run: &mut Run,
    ) -> (Array2<f64>, ProjCache) {
        let mut y = x.dot(w);
        let Some((lw, pair)) = run.lora.and_then(|l| l.sites.get(&site).map(|p| (l, p))) else {
            return (y, ProjCache { lora: None });
        };
        let (xm, mask) = match run.rng.as_deref_mut() {
            Some(rng) if lw.dropout > 0.0 => {
                let keep = 1.0 / (1.0 - lw.dropout);
                let mask = Array2::from_shape_simple_fn(x.dim(), || {
                    if rng.random::<f64>() < lw.dropout {
                        0.0
                    } else {
                        keep
                    }
                });
                (x * &mask, Some(mask))
            }
            _ => (x.clone(), None),
        };
        let xa = xm.dot(&pair.a);
        y += &(xa.dot(&pair.b) * lw.scale());
        (
            y,
            ProjCache {
                lora: Some((xm, xa, mask)),
            },
        )
    }

    fn proj_bwd(
        &self,
        dy: &Array2<f64>,
        w: &Array2<f64>,
        site: Site,
        c: &ProjCache,
        grads: &mut LoraGrads,
    ) -> Array2<f64> {
        let mut dx = dy.dot(&w.t());
        if let (Some((xm, xa, mask)), Some(lw)) = (&c.lora, &self.lora) {
            let pair = &lw.sites[&site];
            let s = lw.scale();
            let g = grads.get_mut(&site).expect("grad slot per site");
            let dyb = dy.dot(&pair.b.t());
            g.b.scaled_add(s, &xa.t().dot(dy));
            g.a.scaled_add(s, &xm.t().dot(&dyb));
            let mut dxm = dyb.dot(&pair.a.t()) * s;
            if let Some(m) = mask {
                dxm *= m;
            }
            dx += &dxm;
        }
        dx
    }

    fn attn_fwd(
        &self,
        att: &Attention,
        block: AttentionBlock,
        layer: usize,
        x: &Array2<f64>,
        ctx: &Array2<f64>,
        run: &mut Run,
    ) -> (Array2<f64>, AttnCache) {
        let site = |projection| Site {
            block,
            layer,
            projection,
        };
        let (q, cq) = self.proj_fwd(x, &att.wq, site(Projection::Query), run);
        let (k, ck) = self.proj_fwd(ctx, &att.wk, site(Projection::Key), run);
        let (v, cv) = self.proj_fwd(ctx, &att.wv, site(Projection::Value), run);
        let dk = self.base.config.d_kv;
        let scale = 1.0 / (dk as f64).sqrt();
        let causal = block == AttentionBlock::DecoderSelf;
        let mut o = Array2::zeros((x.nrows(), self.base.config.inner_dim()));
        let mut probs = Vec::with_capacity(self.base.config.n_heads);
        for h in 0..self.base.config.n_heads {
            let r = h * dk..(h + 1) * dk;
            let mut p = q
                .slice(s![.., r.clone()])
                .dot(&k.slice(s![.., r.clone()]).t())
                * scale;
            softmax_rows(&mut p, causal);
            o.slice_mut(s![.., r.clone()])
                .assign(&p.dot(&v.slice(s![.., r])));
            probs.push(p);
        }
        (
            o.dot(&att.wo),
            AttnCache {
                q,
                k,
                v,
                probs,
                cq,
                ck,
                cv,
            },
        )
    }

    /// Returns gradients w.r.t. the query-side input and the context.
    fn attn_bwd(
        &self,
        att: &Attention,
        block: AttentionBlock,
        layer: usize,
        dout: &Array2<f64>,
        c: &AttnCache,
        grads: &mut LoraGrads,
    ) -> (Array2<f64>, Array2<f64>) {
        let dk = self.base.config.d_kv;
        let scale = 1.0 / (dk as f64).sqrt();
        let d_o = dout.dot(&att.wo.t());
        let mut dq = Array2::zeros(c.q.dim());
        let mut dkm = Array2::zeros(c.k.dim());
        let mut dv = Array2::zeros(c.v.dim());
        for (h, p) in c.probs.iter().enumerate() {
            let r = h * dk..(h + 1) * dk;
            let doh = d_o.slice(s![.., r.clone()]);
            dv.slice_mut(s![.., r.clone()]).assign(&p.t().dot(&doh));
            let mut ds = doh.dot(&c.v.slice(s![.., r.clone()]).t());
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = drow.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                for (dv_, pv) in drow.iter_mut().zip(prow.iter()) {
                    *dv_ = pv * (*dv_ - dot);
                }
            }
            dq.slice_mut(s![.., r.clone()])
                .assign(&(ds.dot(&c.k.slice(s![.., r.clone()])) * scale));
            dkm.slice_mut(s![.., r.clone()])
                .assign(&(ds.t().dot(&c.q.slice(s![.., r])) * scale));
        }
        let site = |projection| Site {
            block,
            layer,
            projection,
        };
        let dx = self.proj_bwd(&dq, &att.wq, site(Projection::Query), &c.cq, grads);
        let mut dctx = self.proj_bwd(&dkm, &att.wk, site(Projection::Key), &c.ck, grads);
        dctx += &self.proj_bwd(&dv, &att.wv, site(Projection::Value), &c.cv, grads);
        (dx, dctx)
    }

    fn embed(&self, ids: &[u32], pos: &Array2<f64>) -> Array2<f64> {
        let d = self.base.config.d_model;
        let mut x = Array2::zeros((ids.len(), d));
        for (i, &id) in ids.iter().enumerate() {
            let id = (id as usize).min(self.base.config.vocab_size - 1);
            let mut row = x.row_mut(i);
            row.assign(&self.base.embed.row(id));
            row += &pos.row(i);
        }
        x
    }

    fn encoder_fwd(&self, src: &[u32], run: &mut Run) -> (Array2<f64>, Vec<EncCache>, Norm) {
        let mut x = self.embed(src, &self.base.enc_pos);
        let mut caches = Vec::with_capacity(self.base.encoder.len());
        for (li, l) in self.base.encoder.iter().enumerate() {
            let n1 = rms_fwd(&x);
            let (a, attn) =
                self.attn_fwd(&l.attn, AttentionBlock::EncoderSelf, li, &n1.y, &n1.y, run);
            x += &a;
            let n2 = rms_fwd(&x);
            let (f, ffn) = ffn_fwd(&l.ffn, &n2.y);
            x += &f;
            caches.push(EncCache { n1, attn, n2, ffn });
        }
        let fin = rms_fwd(&x);
        (fin.y.clone(), caches, fin)
    }

    fn decoder_fwd(
        &self,
        dec_in: &[u32],
        enc: &Array2<f64>,
        run: &mut Run,
    ) -> (Array2<f64>, Vec<DecCache>) {
        let mut x = self.embed(dec_in, &self.base.dec_pos);
        let mut caches = Vec::with_capacity(self.base.decoder.len());
        for (li, l) in self.base.decoder.iter().enumerate() {
            let n1 = rms_fwd(&x);
            let (a, self_attn) = self.attn_fwd(
                &l.self_attn,
                AttentionBlock::DecoderSelf,
                li,
                &n1.y,
                &n1.y,
                run,
            );
            x += &a;
            let n2 = rms_fwd(&x);
            let (c, cross) = self.attn_fwd(
                &l.cross_attn,
                AttentionBlock::DecoderCross,
                li,
                &n2.y,
                enc,
                run,
            );
            x += &c;
            let n3 = rms_fwd(&x);
            let (f, ffn) = ffn_fwd(&l.ffn, &n3.y);
            x += &f;
            caches.push(DecCache {
                n1,
                self_attn,
                n2,
                cross,
                n3,
                ffn,
            });
        }
        (x, caches)
    }

    fn clip_src<'s>(&self, src: &'s [u32]) -> &'s [u32] {
        &src[..src.len().min(self.base.config.max_input_len)]
    }

    fn forward(&self, src: &[u32], dec_in: &[u32], run: &mut Run) -> (Array2<f64>, Trace) {
        let (enc, enc_caches, enc_final) = self.encoder_fwd(self.clip_src(src), run);
        let (x, dec_caches) = self.decoder_fwd(dec_in, &enc, run);
        let dec_final = rms_fwd(&x);
        let logits = dec_final.y.dot(&self.base.lm_head);
        (
            logits,
            Trace {
                enc: enc_caches,
                enc_final,
                dec: dec_caches,
                dec_final,
            },
        )
    }

    /// Logits for every decoder position (`dec_in.len() × vocab`).
    pub fn logits(&self, src: &[u32], dec_in: &[u32]) -> Array2<f64> {
        assert!(
            dec_in.len() <= self.base.config.max_output_len,
            "decoder input longer than the position table"
        );
        self.forward(
            src,
            dec_in,
            &mut Run {
                lora: self.lora.as_ref(),
                rng: None,
            },
        )
        .0
    }

    /// Encoder output for `src`, reused across decoding steps.
    pub fn encode(&self, src: &[u32]) -> Array2<f64> {
        self.encoder_fwd(
            self.clip_src(src),
            &mut Run {
                lora: self.lora.as_ref(),
                rng: None,
            },
        )
        .0
    }

    /// Log-probabilities of the next token after `BOS + prefix`,
    /// restricted to the first `active` ids.
    pub fn next_log_probs(&self, enc: &Array2<f64>, prefix: &[u32], active: usize) -> Vec<f64> {
        let mut dec_in = Vec::with_capacity(prefix.len() + 1);
        dec_in.push(BOS);
        dec_in.extend_from_slice(prefix);
        let (x, _) = self.decoder_fwd(
            &dec_in,
            enc,
            &mut Run {
                lora: self.lora.as_ref(),
                rng: None,
            },
        );
        let last = x.slice(s![x.nrows() - 1..x.nrows(), ..]).to_owned();
        let h = rms_fwd(&last).y;
        let active = active.clamp(1, self.base.config.vocab_size);
        let head: ArrayView2<f64> = self.base.lm_head.slice(s![.., ..active]);
        log_softmax_row(h.dot(&head).row(0).as_slice().expect("contiguous row"))
    }

    /// Decoder input and labels for a target sequence ending in EOS,
    /// clipped to the decoder's position table.
    pub fn teacher_forcing(&self, target: &[u32]) -> (Vec<u32>, Vec<u32>) {
        let labels: Vec<u32> = target[..target.len().min(self.base.config.max_output_len)].to_vec();
        let mut dec_in = vec![BOS];
        dec_in.extend_from_slice(&labels[..labels.len().saturating_sub(1)]);
        (dec_in, labels)
    }

    /// Mean token cross-entropy of `target` given `src`.
    pub fn loss(&self, src: &[u32], target: &[u32]) -> f64 {
        let (dec_in, labels) = self.teacher_forcing(target);
        let logits = self.logits(src, &dec_in);
        cross_entropy(&logits, &labels).0
    }

    /// Loss and its gradient w.r.t. every adapter matrix. Dropout on
    /// the adapter path is active when `rng` is given.
    pub fn loss_and_grads(
        &self,
        src: &[u32],
        target: &[u32],
        rng: Option<&mut ChaCha8Rng>,
    ) -> (f64, LoraGrads) {
        let lw = self.lora.as_ref().expect("gradients need an adapter");
        let mut grads = lw.zeros_like();
        let (dec_in, labels) = self.teacher_forcing(target);
        let (logits, trace) = self.forward(
            src,
            &dec_in,
            &mut Run {
                lora: Some(lw),
                rng,
            },
        );
        let (loss, dlogits) = cross_entropy(&logits, &labels);
        self.backward(&dlogits, &trace, &mut grads);
        (loss, grads)
    }

    fn backward(&self, dlogits: &Array2<f64>, t: &Trace, grads: &mut LoraGrads) {
        let base = self.base;
        let mut dx = rms_bwd(&dlogits.dot(&base.lm_head.t()), &t.dec_final);
        let mut denc = Array2::zeros(t.enc_final.y.dim());
        for (li, (l, c)) in base.decoder.iter().zip(&t.dec).enumerate().rev() {
            dx += &rms_bwd(&ffn_bwd(&l.ffn, &dx, &c.ffn), &c.n3);
            let (dq, dctx) = self.attn_bwd(
                &l.cross_attn,
                AttentionBlock::DecoderCross,
                li,
                &dx,
                &c.cross,
                grads,
            );
            denc += &dctx;
            dx += &rms_bwd(&dq, &c.n2);
            let (dq, dctx) = self.attn_bwd(
                &l.self_attn,
                AttentionBlock::DecoderSelf,
                li,
                &dx,
                &c.self_attn,
                grads,
            );
            dx += &rms_bwd(&(dq + dctx), &c.n1);
        }
        let mut dx = rms_bwd(&denc, &t.enc_final);
        for (li, (l, c)) in base.encoder.iter().zip(&t.enc).enumerate().rev() {
            dx += &rms_bwd(&ffn_bwd(&l.ffn, &dx, &c.ffn), &c.n2);
            let (dq, dctx) = self.attn_bwd(
                &l.attn,
                AttentionBlock::EncoderSelf,
                li,
                &dx,
                &c.attn,
                grads,
            );
            dx += &rms_bwd(&(dq + dctx), &c.n1);
        }
    }
}

/// Mean cross-entropy over rows and its gradient w.r.t. the logits.
fn cross_entropy(logits: &Array2<f64>, labels: &[u32]) -> (f64, Array2<f64>) {
    let n = labels.len() as f64;
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let lp = log_softmax_row(&logits.row(i).to_vec());
        loss -= lp[y as usize];
        for (j, g) in grad.row_mut(i).iter_mut().enumerate() {
            *g = lp[j].exp() / n;
        }
        grad[[i, y as usize]] -= 1.0 / n;
    }
    (loss / n, grad)
}
