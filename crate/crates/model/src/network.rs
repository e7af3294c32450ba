//! The relationship transformer: conv backbone, encoder, object pair decoder,
//! distance and occlusion decoders, and the prediction heads.

use ndarray::{s, Array2};
use occlu_core::loss::QueryGrad;
use occlu_core::{PredictionSet, QueryOutput, NUM_DISTANCE, NUM_OCCLUSION};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::{he, normal, xavier, ParamId, ParamStore};
use crate::tape::{AttnShape, ConvGeom, Tape, Var};
use crate::{ModelConfig, ModelError, Real};

/// Fixed 2-D sinusoidal encoding of an `h x w` grid, shape `(h * w, d)`.
///
/// The first half of the channels encodes the row, the second half the
/// column, each as interleaved sine/cosine pairs over geometric frequencies of
/// the position normalized to `(0, 2 pi]`.
pub fn positional_encoding<F: Real>(h: usize, w: usize, d: usize) -> Result<Array2<F>, ModelError> {
    if d == 0 || !d.is_multiple_of(4) {
        return Err(ModelError::Config(format!("positional encoding width {d} must be a positive multiple of 4")));
    }
    let half = d / 2;
    let mut pe = Array2::zeros((h * w, d));
    for y in 0..h {
        for x in 0..w {
            let row = y * w + x;
            let py = (y as f64 + 1.0) / h as f64 * std::f64::consts::TAU;
            let px = (x as f64 + 1.0) / w as f64 * std::f64::consts::TAU;
            for i in 0..half / 2 {
                let freq = 10_000f64.powf(2.0 * i as f64 / half as f64);
                pe[[row, 2 * i]] = F::lit((py / freq).sin());
                pe[[row, 2 * i + 1]] = F::lit((py / freq).cos());
                pe[[row, half + 2 * i]] = F::lit((px / freq).sin());
                pe[[row, half + 2 * i + 1]] = F::lit((px / freq).cos());
            }
        }
    }
    Ok(pe)
}

/// Images stacked channels-last: row `(b * height + y) * width + x`, three
/// normalized color columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch<F> {
    pub data: Array2<F>,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl<F: Real> ImageBatch<F> {
    pub fn new(data: Array2<F>, batch: usize, height: usize, width: usize) -> Result<Self, ModelError> {
        if data.dim() != (batch * height * width, 3) {
            return Err(ModelError::Shape(format!(
                "image data {:?} does not match {batch} images of {height}x{width}x3",
                data.dim()
            )));
        }
        Ok(Self { data, batch, height, width })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Pair,
    Distance,
    Occlusion,
}

impl DecoderKind {
    pub fn name(self) -> &'static str {
        match self {
            DecoderKind::Pair => "pair",
            DecoderKind::Distance => "distance",
            DecoderKind::Occlusion => "occlusion",
        }
    }
}

impl std::str::FromStr for DecoderKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pair" => Ok(DecoderKind::Pair),
            "distance" => Ok(DecoderKind::Distance),
            "occlusion" => Ok(DecoderKind::Occlusion),
            other => Err(ModelError::Config(format!("unknown decoder {other:?}, expected pair, distance or occlusion"))),
        }
    }
}

struct Linear {
    w: ParamId,
    b: ParamId,
}

enum Init {
    Xavier,
    He,
}

struct Builder<'a, F: Real> {
    store: &'a mut ParamStore<F>,
    rng: ChaCha8Rng,
}

impl<F: Real> Builder<'_, F> {
    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Linear {
        let w = match init {
            Init::Xavier => xavier(&mut self.rng, fan_in, fan_out),
            Init::He => he(&mut self.rng, fan_in, fan_out),
        };
        Linear {
            w: self.store.add(format!("{name}.weight"), w),
            b: self.store.add(format!("{name}.bias"), Array2::zeros((1, fan_out))),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            gamma: self.store.add(format!("{name}.gamma"), Array2::ones((1, d))),
            beta: self.store.add(format!("{name}.beta"), Array2::zeros((1, d))),
        }
    }

    fn attention(&mut self, name: &str, d: usize) -> Attention {
        let mut proj = |p: &str| self.store.add(format!("{name}.{p}"), xavier(&mut self.rng, d, d));
        let (wq, wk, wv) = (proj("wq"), proj("wk"), proj("wv"));
        Attention { wq, wk, wv, out: self.linear(&format!("{name}.out"), d, d, Init::Xavier), norm: self.norm(&format!("{name}.norm"), d) }
    }

    fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> Ffn {
        Ffn {
            l1: self.linear(&format!("{name}.linear1"), d, hidden, Init::He),
            l2: self.linear(&format!("{name}.linear2"), hidden, d, Init::Xavier),
            norm: self.norm(&format!("{name}.norm"), d),
        }
    }

    fn decoder(&mut self, name: &str, layers: usize, cfg: &ModelConfig) -> Vec<DecoderLayer> {
        let d = cfg.hidden_dim;
        (0..layers)
            .map(|k| DecoderLayer {
                self_attn: self.attention(&format!("{name}.{k}.self_attn"), d),
                cross_attn: self.attention(&format!("{name}.{k}.cross_attn"), d),
                ffn: self.ffn(&format!("{name}.{k}.ffn"), d, cfg.ffn_dim),
            })
            .collect()
    }

    fn mlp(&mut self, name: &str, d: usize, out: usize) -> Mlp {
        Mlp {
            layers: vec![
                self.linear(&format!("{name}.0"), d, d, Init::He),
                self.linear(&format!("{name}.1"), d, d, Init::He),
                self.linear(&format!("{name}.2"), d, out, Init::Xavier),
            ],
        }
    }
}

impl Linear {
    fn forward<F: Real>(&self, t: &mut Tape<'_, F>, x: Var) -> Var {
        let w = t.param(self.w);
        let y = t.matmul(x, w);
        let b = t.param(self.b);
        t.add_row(y, b)
    }
}

struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    fn forward<F: Real>(&self, t: &mut Tape<'_, F>, x: Var) -> Var {
        let (g, b) = (t.param(self.gamma), t.param(self.beta));
        t.layer_norm(x, g, b)
    }
}

/// Multi-head attention followed by `Linear(Dropout(A) + residual)` and a
/// layer norm.
struct Attention {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    out: Linear,
    norm: Norm,
}

impl Attention {
    /// Returns the block output and the raw attention node.
    fn forward<F: Real>(
        &self,
        t: &mut Tape<'_, F>,
        (q, k, v): (Var, Var, Var),
        residual: Var,
        shape: AttnShape<F>,
    ) -> (Var, Var) {
        let (wq, wk, wv) = (t.param(self.wq), t.param(self.wk), t.param(self.wv));
        let (q, k, v) = (t.matmul(q, wq), t.matmul(k, wk), t.matmul(v, wv));
        let a = t.attention(q, k, v, shape);
        let dropped = t.dropout(a);
        let sum = t.add(dropped, residual);
        let y = self.out.forward(t, sum);
        (self.norm.forward(t, y), a)
    }
}

/// Two linear layers with ReLU and dropout, a residual and a layer norm.
struct Ffn {
    l1: Linear,
    l2: Linear,
    norm: Norm,
}

impl Ffn {
    fn forward<F: Real>(&self, t: &mut Tape<'_, F>, x: Var) -> Var {
        let h = self.l1.forward(t, x);
        let h = t.relu(h);
        let h = t.dropout(h);
        let y = self.l2.forward(t, h);
        let y = t.dropout(y);
        let sum = t.add(x, y);
        self.norm.forward(t, sum)
    }
}

struct EncoderLayer {
    attn: Attention,
    ffn: Ffn,
}

struct DecoderLayer {
    self_attn: Attention,
    cross_attn: Attention,
    ffn: Ffn,
}

struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    fn forward<F: Real>(&self, t: &mut Tape<'_, F>, x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(t, h);
            if i + 1 < self.layers.len() {
                h = t.relu(h);
            }
        }
        h
    }
}

struct ConvStage {
    kernel: usize,
    stride: usize,
    linear: Linear,
}

/// Kernel, stride and output channels of the hidden backbone stages; the last
/// stage outputs `backbone_channels`. Total stride is 32.
const STAGES: [(usize, usize, usize); 4] = [(4, 4, 16), (3, 2, 32), (3, 2, 64), (3, 2, 0)];

struct Heads {
    class_a: Mlp,
    class_b: Mlp,
    box_a: Mlp,
    box_b: Mlp,
    distance: Mlp,
    occlusion: Mlp,
    intersection: Option<Mlp>,
}

struct Arch {
    backbone: Vec<ConvStage>,
    input_proj: Linear,
    encoder: Vec<EncoderLayer>,
    query_embed: ParamId,
    pair: Vec<DecoderLayer>,
    distance: Vec<DecoderLayer>,
    occlusion: Vec<DecoderLayer>,
    heads: Heads,
}

/// One cross-attention layer of one decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossAttention {
    pub decoder: DecoderKind,
    pub layer: usize,
    pub weights: Var,
}

/// Tape handles of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub batch: usize,
    pub queries: usize,
    pub grid: (usize, usize),
    pub memory: Var,
    /// Object class logits, `(batch * queries, num_classes + 1)`, background last.
    pub class_a: Var,
    pub class_b: Var,
    /// Center-form boxes after the sigmoid, `(batch * queries, 4)`.
    pub box_a: Var,
    pub box_b: Var,
    pub distance: Var,
    pub occlusion: Var,
    pub intersection: Option<Var>,
    /// Output of every pair decoder layer.
    pub pair_stack: Vec<Var>,
    pub distance_embed: Var,
    pub occlusion_embed: Var,
    pub cross_attention: Vec<CrossAttention>,
}

/// Cross-attention weights of one image: for each decoder layer, one
/// `(queries, h * w)` matrix per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord<F> {
    pub grid: (usize, usize),
    pub layers: Vec<LayerAttention<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttention<F> {
    pub decoder: DecoderKind,
    pub layer: usize,
    pub heads: Vec<Array2<F>>,
}

impl<F> AttentionRecord<F> {
    pub fn get(&self, decoder: DecoderKind, layer: usize) -> Option<&LayerAttention<F>> {
        self.layers.iter().find(|l| l.decoder == decoder && l.layer == layer)
    }
}

pub struct Model<F: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<F>,
    arch: Arch,
}

fn softmax_row<F: Real>(logits: ndarray::ArrayView1<F>) -> Vec<F> {
    let max = logits.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn fixed<const N: usize, F: Copy>(v: &[F]) -> [F; N] {
    std::array::from_fn(|i| v[i])
}

impl<F: Real> Model<F> {
    /// Freshly initialized model; initialization is a function of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut b = Builder { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
        let d = config.hidden_dim;

        let mut channels = 3;
        let backbone = STAGES
            .iter()
            .enumerate()
            .map(|(i, &(kernel, stride, out))| {
                let out = if out == 0 { config.backbone_channels } else { out };
                let fan_in = kernel * kernel * channels;
                channels = out;
                ConvStage { kernel, stride, linear: b.linear(&format!("backbone.{i}"), fan_in, out, Init::He) }
            })
            .collect();
        let input_proj = b.linear("input_proj", config.backbone_channels, d, Init::Xavier);
        let encoder = (0..config.encoder_layers)
            .map(|k| EncoderLayer {
                attn: b.attention(&format!("encoder.{k}.self_attn"), d),
                ffn: b.ffn(&format!("encoder.{k}.ffn"), d, config.ffn_dim),
            })
            .collect();
        let query_embed = b.store.add("query_embed", normal(&mut b.rng, config.queries, d));
        let pair = b.decoder("pair_decoder", config.pair_layers, &config);
        let (distance, occlusion) = if config.single_decoder {
            (Vec::new(), Vec::new())
        } else {
            (
                b.decoder("distance_decoder", config.distance_layers, &config),
                b.decoder("occlusion_decoder", config.occlusion_layers, &config),
            )
        };
        let classes = config.num_classes + 1;
        let heads = Heads {
            class_a: b.mlp("heads.class_a", d, classes),
            class_b: b.mlp("heads.class_b", d, classes),
            box_a: b.mlp("heads.box_a", d, 4),
            box_b: b.mlp("heads.box_b", d, 4),
            distance: b.mlp("heads.distance", d, NUM_DISTANCE),
            occlusion: b.mlp("heads.occlusion", d, NUM_OCCLUSION),
            intersection: config.git.then(|| b.mlp("heads.intersection", d, 4)),
        };
        let arch = Arch { backbone, input_proj, encoder, query_embed, pair, distance, occlusion, heads };
        Ok(Self { config, params, arch })
    }

    /// Backbone and input projection: `(batch * h * w, hidden_dim)`.
    pub fn backbone<'p>(&'p self, t: &mut Tape<'p, F>, images: &ImageBatch<F>) -> Result<(Var, (usize, usize)), ModelError> {
        if images.height < crate::config::MIN_IMAGE_SIDE || images.width < crate::config::MIN_IMAGE_SIDE {
            return Err(ModelError::Shape(format!(
                "images must be at least {0}x{0}, got {1}x{2}",
                crate::config::MIN_IMAGE_SIDE,
                images.height,
                images.width
            )));
        }
        let mut x = t.input(images.data.clone());
        let (mut h, mut w, mut c) = (images.height, images.width, 3);
        for stage in &self.arch.backbone {
            let geom = ConvGeom::same(images.batch, h, w, c, stage.kernel, stage.stride);
            let cols = t.im2col(x, geom);
            let y = stage.linear.forward(t, cols);
            x = t.relu(y);
            (h, w, c) = (geom.out_height, geom.out_width, t.value(x).ncols());
        }
        Ok((self.arch.input_proj.forward(t, x), (h, w)))
    }

    pub fn forward<'p>(&'p self, t: &mut Tape<'p, F>, images: &ImageBatch<F>) -> Result<Outputs, ModelError> {
        let cfg = &self.config;
        let (batch, nq, d) = (images.batch, cfg.queries, cfg.hidden_dim);
        let (feat, grid) = self.backbone(t, images)?;
        let hw = grid.0 * grid.1;
        let pe = positional_encoding::<F>(grid.0, grid.1, d)?;
        let pe = t.input(pe);
        let pe = t.tile(pe, batch);
        let scale = F::one() / F::from_count(d).sqrt();
        let self_enc = AttnShape { batch, nq: hw, nk: hw, heads: cfg.heads, scale };
        let self_dec = AttnShape { batch, nq, nk: nq, heads: cfg.heads, scale };
        let cross = AttnShape { batch, nq, nk: hw, heads: cfg.heads, scale };

        let mut f = feat;
        for layer in &self.arch.encoder {
            let qk = t.add(f, pe);
            let (attn, _) = layer.attn.forward(t, (qk, qk, f), f, self_enc);
            f = layer.ffn.forward(t, attn);
        }
        let memory = f;
        let memory_pe = t.add(memory, pe);

        let qe = t.param(self.arch.query_embed);
        let qe = t.tile(qe, batch);
        let zeros = t.input(Array2::zeros((batch * nq, d)));
        let mut cross_attention = Vec::new();
        let mut pair_stack = Vec::with_capacity(self.arch.pair.len());
        let mut prev = zeros;
        for (k, layer) in self.arch.pair.iter().enumerate() {
            let fin = t.add(prev, qe);
            let (fattn, _) = layer.self_attn.forward(t, (fin, fin, prev), fin, self_dec);
            let (fx, weights) = layer.cross_attn.forward(t, (fattn, memory_pe, memory), fattn, cross);
            cross_attention.push(CrossAttention { decoder: DecoderKind::Pair, layer: k, weights });
            prev = layer.ffn.forward(t, fx);
            pair_stack.push(prev);
        }
        let pair_out = prev;

        let mut relationship = |t: &mut Tape<'p, F>, layers: &'p [DecoderLayer], kind: DecoderKind| {
            let mut prev = zeros;
            for (k, layer) in layers.iter().enumerate() {
                let fin = t.add(prev, pair_out);
                let (fattn, _) = layer.self_attn.forward(t, (fin, fin, prev), fin, self_dec);
                let (fx, weights) = layer.cross_attn.forward(t, (pair_out, memory_pe, memory), fattn, cross);
                cross_attention.push(CrossAttention { decoder: kind, layer: k, weights });
                prev = layer.ffn.forward(t, fx);
            }
            prev
        };
        let (distance_embed, occlusion_embed) = if cfg.single_decoder {
            (pair_out, pair_out)
        } else {
            (
                relationship(t, &self.arch.distance, DecoderKind::Distance),
                relationship(t, &self.arch.occlusion, DecoderKind::Occlusion),
            )
        };

        let h = &self.arch.heads;
        let class_a = h.class_a.forward(t, pair_out);
        let class_b = h.class_b.forward(t, pair_out);
        let box_a = h.box_a.forward(t, pair_out);
        let box_a = t.sigmoid(box_a);
        let box_b = h.box_b.forward(t, pair_out);
        let box_b = t.sigmoid(box_b);
        let distance = h.distance.forward(t, distance_embed);
        let occlusion = h.occlusion.forward(t, occlusion_embed);
        let intersection = h.intersection.as_ref().map(|m| {
            let y = m.forward(t, occlusion_embed);
            t.sigmoid(y)
        });
        Ok(Outputs {
            batch,
            queries: nq,
            grid,
            memory,
            class_a,
            class_b,
            box_a,
            box_b,
            distance,
            occlusion,
            intersection,
            pair_stack,
            distance_embed,
            occlusion_embed,
            cross_attention,
        })
    }

    /// Softmax the class logits and split the outputs per image.
    pub fn predictions(&self, t: &Tape<'_, F>, out: &Outputs) -> Vec<PredictionSet<F>> {
        let (ca, cb) = (t.value(out.class_a), t.value(out.class_b));
        let (ba, bb) = (t.value(out.box_a), t.value(out.box_b));
        let (dv, ov) = (t.value(out.distance), t.value(out.occlusion));
        let iv = out.intersection.map(|v| t.value(v));
        (0..out.batch)
            .map(|b| PredictionSet {
                queries: (b * out.queries..(b + 1) * out.queries)
                    .map(|r| QueryOutput {
                        class_a: softmax_row(ca.row(r)),
                        class_b: softmax_row(cb.row(r)),
                        box_a: fixed(ba.row(r).as_slice().expect("contiguous")),
                        box_b: fixed(bb.row(r).as_slice().expect("contiguous")),
                        distance: fixed(&softmax_row(dv.row(r))),
                        occlusion: fixed(&softmax_row(ov.row(r))),
                        intersection: iv.map(|m| fixed(m.row(r).as_slice().expect("contiguous"))),
                    })
                    .collect(),
            })
            .collect()
    }

    /// Turn per-image, per-query loss gradients into backward seeds.
    pub fn gradient_seeds(&self, out: &Outputs, grads: &[Vec<QueryGrad<F>>]) -> Vec<(Var, Array2<F>)> {
        let rows = out.batch * out.queries;
        let classes = self.config.num_classes + 1;
        let mut ca = Array2::zeros((rows, classes));
        let mut cb = Array2::zeros((rows, classes));
        let mut ba = Array2::zeros((rows, 4));
        let mut bb = Array2::zeros((rows, 4));
        let mut dv = Array2::zeros((rows, NUM_DISTANCE));
        let mut ov = Array2::zeros((rows, NUM_OCCLUSION));
        let mut iv = Array2::zeros((rows, 4));
        for (b, image) in grads.iter().enumerate() {
            for (q, g) in image.iter().enumerate() {
                let r = b * out.queries + q;
                for (dst, src) in [
                    (&mut ca, g.class_a.as_slice()),
                    (&mut cb, g.class_b.as_slice()),
                    (&mut ba, g.box_a.as_slice()),
                    (&mut bb, g.box_b.as_slice()),
                    (&mut dv, g.distance.as_slice()),
                    (&mut ov, g.occlusion.as_slice()),
                    (&mut iv, g.intersection.as_slice()),
                ] {
                    dst.row_mut(r).assign(&ndarray::ArrayView1::from(src));
                }
            }
        }
        let mut seeds = vec![
            (out.class_a, ca),
            (out.class_b, cb),
            (out.box_a, ba),
            (out.box_b, bb),
            (out.distance, dv),
            (out.occlusion, ov),
        ];
        if let Some(v) = out.intersection {
            seeds.push((v, iv));
        }
        seeds
    }

    /// Cross-attention weights of image `image` in the batch.
    pub fn attention_record(&self, t: &Tape<'_, F>, out: &Outputs, image: usize) -> AttentionRecord<F> {
        let heads = self.config.heads;
        let layers = out
            .cross_attention
            .iter()
            .map(|c| {
                let w = t.attention_weights(c.weights).expect("attention node");
                LayerAttention {
                    decoder: c.decoder,
                    layer: c.layer,
                    heads: w[image * heads..(image + 1) * heads].to_vec(),
                }
            })
            .collect();
        AttentionRecord { grid: out.grid, layers }
    }

    /// Parameter ids by decoder, for gradient-flow checks.
    pub fn decoder_params(&self, kind: DecoderKind) -> Vec<ParamId> {
        let prefix = format!("{}_decoder.", kind.name());
        self.params.ids().filter(|&id| self.params.name(id).starts_with(&prefix)).collect()
    }
}

/// Rows `[b * n, (b + 1) * n)` of a batched tensor.
pub fn image_rows<F: Real>(m: &Array2<F>, b: usize, n: usize) -> Array2<F> {
    m.slice(s![b * n..(b + 1) * n, ..]).to_owned()
}
