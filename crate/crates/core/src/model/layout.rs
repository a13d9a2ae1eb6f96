//! Registration order, shapes and initialization of every parameter tensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::config::{CodecConfig, ModelConfig};
use crate::params::{ParamGroup, ParamStore};
use crate::tensor::Mat;

/// Two affine layers with a SiLU between them.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Pre-norm transformer block: attention then a SiLU-gated feed-forward.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub attn_norm: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub ffn_norm: usize,
    pub w_gate: usize,
    pub w_up: usize,
    pub w_down: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct UndEncoderParams {
    pub patch_w: usize,
    pub patch_b: usize,
    pub pos: usize,
    pub block: BlockParams,
    pub norm: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TokenizerParams {
    pub enc: Mlp2,
    pub codebook: usize,
    pub dec: Mlp2,
}

#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub blocks: Vec<BlockParams>,
    pub text_norm: usize,
    pub text_bias: usize,
    pub image_norm: usize,
    pub image_head: Mlp2,
    pub und_adaptor: Mlp2,
    pub gen_adaptor: Mlp2,
    pub und: UndEncoderParams,
    pub vq: TokenizerParams,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, rows: usize, cols: usize, std: f64) -> Mat<f32> {
        let d = Normal::new(0.0, std).expect("valid std");
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| d.sample(&mut self.rng) as f32).collect())
    }

    fn uniform(&mut self, rows: usize, cols: usize, bound: f64) -> Mat<f32> {
        let d = Uniform::new(-bound, bound).expect("valid bound");
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| d.sample(&mut self.rng) as f32).collect())
    }

    fn linear(&mut self, fan_in: usize, fan_out: usize, gain: f64) -> Mat<f32> {
        self.normal(fan_in, fan_out, gain / (fan_in as f64).sqrt())
    }
}

fn ones(n: usize) -> Mat<f32> {
    Mat::from_vec(1, n, vec![1.0; n])
}

fn mlp2(
    store: &mut ParamStore<f32>,
    init: &mut Init,
    prefix: &str,
    group: ParamGroup,
    dims: (usize, usize, usize),
    out_gain: f64,
) -> Mlp2 {
    let (i, h, o) = dims;
    Mlp2 {
        w1: store.push(format!("{prefix}.w1"), group, init.linear(i, h, 1.0)),
        b1: store.push(format!("{prefix}.b1"), group, Mat::zeros(1, h)),
        w2: store.push(format!("{prefix}.w2"), group, init.linear(h, o, out_gain)),
        b2: store.push(format!("{prefix}.b2"), group, Mat::zeros(1, o)),
    }
}

fn block(
    store: &mut ParamStore<f32>,
    init: &mut Init,
    prefix: &str,
    group: ParamGroup,
    width: usize,
    ffn: usize,
    residual_gain: f64,
) -> BlockParams {
    BlockParams {
        attn_norm: store.push(format!("{prefix}.attn_norm"), group, ones(width)),
        wq: store.push(format!("{prefix}.wq"), group, init.linear(width, width, 1.0)),
        wk: store.push(format!("{prefix}.wk"), group, init.linear(width, width, 1.0)),
        wv: store.push(format!("{prefix}.wv"), group, init.linear(width, width, 1.0)),
        wo: store.push(format!("{prefix}.wo"), group, init.linear(width, width, residual_gain)),
        ffn_norm: store.push(format!("{prefix}.ffn_norm"), group, ones(width)),
        w_gate: store.push(format!("{prefix}.w_gate"), group, init.linear(width, ffn, 1.0)),
        w_up: store.push(format!("{prefix}.w_up"), group, init.linear(width, ffn, 1.0)),
        w_down: store.push(format!("{prefix}.w_down"), group, init.linear(ffn, width, residual_gain)),
    }
}

impl ModelLayout {
    /// Registers and randomly initializes every parameter. Registration order is
    /// fixed, so two models built from the same configs share parameter ids.
    pub fn build(cfg: &ModelConfig, codec: &CodecConfig, seed: u64) -> (Self, ParamStore<f32>) {
        use ParamGroup::*;
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let mut s = ParamStore::new();
        let e = cfg.embed_dim;
        let residual_gain = 1.0 / ((2 * cfg.n_layers) as f64).sqrt();

        let tok_emb = s.push("tok_emb", TextEmbedding, init.normal(cfg.vocab_size, e, 1.0 / (e as f64).sqrt()));
        let pos_emb = s.push(
            "pos_emb",
            TransformerBlocks,
            init.normal(cfg.context_window, e, 0.5 / (e as f64).sqrt()),
        );
        let blocks = (0..cfg.n_layers)
            .map(|i| {
                block(
                    &mut s,
                    &mut init,
                    &format!("blocks.{i}"),
                    TransformerBlocks,
                    e,
                    cfg.ffn_dim,
                    residual_gain,
                )
            })
            .collect();

        let text_norm = s.push("text_head.norm", TextHead, ones(e));
        let text_bias = s.push("text_head.bias", TextHead, Mat::zeros(1, cfg.vocab_size));

        let image_norm = s.push("image_head.norm", ImageHead, ones(e));
        let image_head = mlp2(&mut s, &mut init, "image_head", ImageHead, (e, e, cfg.codebook_size), 0.1);

        let und_adaptor = mlp2(
            &mut s,
            &mut init,
            "und_adaptor",
            UndAdaptor,
            (codec.und_feat_dim, cfg.adaptor_hidden_dim, e),
            1.0,
        );
        let gen_adaptor = mlp2(
            &mut s,
            &mut init,
            "gen_adaptor",
            GenAdaptor,
            (codec.code_dim, cfg.adaptor_hidden_dim, e),
            1.0,
        );

        let f = codec.und_feat_dim;
        let und = UndEncoderParams {
            patch_w: s.push("und_encoder.patch_w", UndEncoder, init.linear(codec.und_patch_len(), f, 1.0)),
            patch_b: s.push("und_encoder.patch_b", UndEncoder, Mat::zeros(1, f)),
            pos: s.push(
                "und_encoder.pos",
                UndEncoder,
                init.normal(codec.und_positions(), f, 0.5 / (f as f64).sqrt()),
            ),
            block: block(&mut s, &mut init, "und_encoder.block", UndEncoder, f, 2 * f, 1.0 / 2f64.sqrt()),
            norm: s.push("und_encoder.norm", UndEncoder, ones(f)),
        };

        let k = cfg.codebook_size;
        let d = codec.code_dim;
        let hv = codec.vq_hidden_dim;
        let enc = mlp2(&mut s, &mut init, "gen_tokenizer.enc", GenTokenizer, (codec.vq_patch_len(), hv, d), 1.0);
        let codebook = s.push("gen_tokenizer.codebook", GenTokenizer, init.uniform(k, d, 1.0 / k as f64));
        let dec = mlp2(&mut s, &mut init, "gen_tokenizer.dec", GenTokenizer, (d, hv, codec.vq_patch_len()), 1.0);

        let layout = ModelLayout {
            tok_emb,
            pos_emb,
            blocks,
            text_norm,
            text_bias,
            image_norm,
            image_head,
            und_adaptor,
            gen_adaptor,
            und,
            vq: TokenizerParams { enc, codebook, dec },
        };
        (layout, s)
    }
}
