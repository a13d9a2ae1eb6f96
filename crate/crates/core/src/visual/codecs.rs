//! Understanding encoder, VQ tokenizer and the two adaptors, as methods on the model.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{AttnLayout, Var};
use crate::model::network::Binder;
use crate::model::{Gradients, JanusModel};
use crate::params::{GroupSet, ParamGroup};
use crate::tensor::{Mat, Scalar};
use crate::visual::codebook::{nearest_code, Quantized, VqCodebook};
use crate::visual::{FeatureGrid, ImageBuffer};

/// Commitment weight of the VQ objective.
pub const VQ_BETA: f64 = 0.25;

/// The three VQ loss terms, each a mean over elements.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct VqLosses {
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
}

impl VqLosses {
    pub fn total(&self) -> f64 {
        self.reconstruction + self.codebook + self.commitment
    }
}

/// Quantization decisions held fixed while differentiating the VQ objective
/// numerically: the chosen ids, the straight-through offset `e - z`, and the
/// stop-gradient copies of `z` and `e` used by the codebook and commitment terms.
#[derive(Debug, Clone)]
pub struct VqSnapshot<T> {
    pub ids: Vec<usize>,
    pub offset: Mat<T>,
    pub latents: Mat<T>,
    pub codes: Mat<T>,
}

impl<T: Scalar> JanusModel<T> {
    fn check_side(&self, img: &ImageBuffer) -> Result<()> {
        if !img.is_square(self.codec.image_side) {
            return Err(Error::shape(format!(
                "expected a {s}x{s} image, got {}x{}",
                img.width,
                img.height,
                s = self.codec.image_side
            )));
        }
        Ok(())
    }

    fn patches(&self, images: &[&ImageBuffer], p: usize) -> Result<Mat<T>> {
        let mut rows = 0;
        let mut data = Vec::new();
        for img in images {
            self.check_side(img)?;
            let m = img.patchify(p)?;
            rows += m.rows;
            data.extend(m.data.iter().map(|&v| T::lift(v as f64)));
        }
        Ok(Mat::from_vec(rows, p * p * 3, data))
    }

    /// Patch projection only, before positions and the encoder block.
    pub fn und_patch_embeddings(&self, img: &ImageBuffer) -> Result<Mat<T>> {
        let mut b = self.binder(GroupSet::empty());
        let x = b.g.input(self.patches(&[img], self.codec.patch_size)?);
        let u = &self.layout.und;
        let y = b.linear(x, u.patch_w, Some(u.patch_b));
        Ok(b.g.into_value(y))
    }

    /// Encoder over a batch of images; `[n_images * cells, feat_dim]`, image-major.
    /// Attention is bidirectional inside each image and never crosses images.
    pub(crate) fn und_encoder_graph(&self, b: &mut Binder<'_, T>, images: &[&ImageBuffer]) -> Result<Var> {
        let cells = self.codec.und_positions();
        let u = &self.layout.und;
        let x = b.g.input(self.patches(images, self.codec.patch_size)?);
        let x = b.linear(x, u.patch_w, Some(u.patch_b));
        let pos_table = b.p(u.pos);
        let pos = b.g.gather(pos_table, (0..images.len()).flat_map(|_| 0..cells).collect());
        let x = b.g.add(x, pos);
        let layout = Arc::new(AttnLayout {
            segments: (0..images.len()).map(|i| (i * cells, cells)).collect(),
            causal: false,
        });
        let x = b.block(x, &u.block, layout, self.codec.und_heads);
        Ok(b.norm(x, u.norm))
    }

    pub fn und_encode(&self, img: &ImageBuffer) -> Result<FeatureGrid> {
        let mut b = self.binder(GroupSet::empty());
        let y = self.und_encoder_graph(&mut b, &[img])?;
        let side = self.codec.und_grid_side();
        let m = b.g.into_value(y);
        FeatureGrid::new(side, side, m.cols, m.data.iter().map(|v| v.as_f64() as f32).collect())
    }

    fn adaptor(&self, m: &crate::model::layout::Mlp2, x: &Mat<T>, width: usize) -> Result<Mat<T>> {
        if x.cols != width {
            return Err(Error::shape(format!("adaptor expects width {width}, got {}", x.cols)));
        }
        let mut b = self.binder(GroupSet::empty());
        let v = b.g.input(x.clone());
        let y = b.mlp2(v, m);
        Ok(b.g.into_value(y))
    }

    /// Understanding features `[n, feat_dim]` to `[n, embed_dim]`.
    pub fn und_adaptor(&self, features: &Mat<T>) -> Result<Mat<T>> {
        self.adaptor(&self.layout.und_adaptor, features, self.codec.und_feat_dim)
    }

    /// Code vectors `[n, D]` to `[n, embed_dim]`.
    pub fn gen_adaptor(&self, codes: &Mat<T>) -> Result<Mat<T>> {
        self.adaptor(&self.layout.gen_adaptor, codes, self.codec.code_dim)
    }

    pub fn codebook(&self) -> VqCodebook<'_, T> {
        VqCodebook::new(self.params.value(self.layout.vq.codebook), Some(&self.usage))
    }

    /// Latent grid in raster order, `[(S/f)², D]`.
    pub fn vq_encode(&self, img: &ImageBuffer) -> Result<Mat<T>> {
        self.vq_encode_batch(&[img])
    }

    pub fn vq_encode_batch(&self, images: &[&ImageBuffer]) -> Result<Mat<T>> {
        let mut b = self.binder(GroupSet::empty());
        let x = b.g.input(self.patches(images, self.codec.downsample_factor)?);
        let z = b.mlp2(x, &self.layout.vq.enc);
        Ok(b.g.into_value(z))
    }

    pub fn quantize(&self, latents: &Mat<T>) -> Result<Quantized<T>> {
        self.codebook().quantize(latents)
    }

    /// Image ids for an image: encode then quantize.
    pub fn tokenize(&self, img: &ImageBuffer) -> Result<Vec<u32>> {
        Ok(self.quantize(&self.vq_encode(img)?)?.ids)
    }

    /// Decodes exactly `(S/f)²` ids into an image clamped to `[0, 1]`.
    pub fn vq_decode(&self, ids: &[u32]) -> Result<ImageBuffer> {
        let n = self.codec.tokens_per_image();
        if ids.len() != n {
            return Err(Error::shape(format!("decode needs {n} ids, got {}", ids.len())));
        }
        let codes = self.codebook().lookup(ids)?;
        let mut b = self.binder(GroupSet::empty());
        let x = b.g.input(codes);
        let y = b.mlp2(x, &self.layout.vq.dec);
        let m = b.g.into_value(y);
        let patches = Mat::from_vec(m.rows, m.cols, m.data.iter().map(|v| v.as_f64() as f32).collect());
        let s = self.codec.image_side;
        ImageBuffer::from_patches(&patches, s, s, self.codec.downsample_factor)
    }

    /// VQ objective over a batch. Without a snapshot the quantization is
    /// recomputed and gradients reach the encoder through the straight-through
    /// estimator. With a snapshot, ids and offset are taken from it, which makes
    /// the objective a smooth function of every tokenizer parameter.
    pub fn vq_objective(
        &self,
        images: &[&ImageBuffer],
        snapshot: Option<&VqSnapshot<T>>,
        want_grads: bool,
    ) -> Result<(VqLosses, Gradients<T>, VqSnapshot<T>)> {
        if images.is_empty() {
            return Err(Error::shape("empty tokenizer batch"));
        }
        let trainable = if want_grads {
            GroupSet::from_groups(&[ParamGroup::GenTokenizer])
        } else {
            GroupSet::empty()
        };
        let f = self.codec.downsample_factor;
        let targets = self.patches(images, f)?;
        let mut b = self.binder(trainable);
        let x = b.g.input(targets.clone());
        let z = b.mlp2(x, &self.layout.vq.enc);
        let zv = b.g.value(z).clone();
        let cb = b.p(self.layout.vq.codebook);
        let ids = match snapshot {
            Some(s) => s.ids.clone(),
            None => {
                let codes = b.g.value(cb);
                (0..zv.rows).map(|r| nearest_code(codes, zv.row(r))).collect()
            }
        };
        if !want_grads && snapshot.is_none() {
            for &id in &ids {
                self.usage.hit(id);
            }
        }
        let e = b.g.gather(cb, ids.clone());
        let ev = b.g.value(e).clone();
        let offset = match snapshot {
            Some(s) => s.offset.clone(),
            None => {
                let mut o = ev.clone();
                for (a, &zz) in o.data.iter_mut().zip(&zv.data) {
                    *a = *a - zz;
                }
                o
            }
        };
        let n_lat = T::lift(1.0 / zv.len() as f64);
        let n_pix = T::lift(1.0 / targets.len() as f64);

        let (z_sg, e_sg) = match snapshot {
            Some(s) => (s.latents.clone(), s.codes.clone()),
            None => (zv.clone(), ev.clone()),
        };
        let zc = b.g.input(z_sg.clone());
        let d_cb = b.g.sub(zc, e);
        let cb_loss = b.g.sum_squares(d_cb);
        let cb_loss = b.g.scale(cb_loss, n_lat);

        let ec = b.g.input(e_sg.clone());
        let d_commit = b.g.sub(z, ec);
        let commit = b.g.sum_squares(d_commit);
        let commit = b.g.scale(commit, n_lat * T::lift(VQ_BETA));

        let off = b.g.input(offset.clone());
        let zq = b.g.add(z, off);
        let recon = b.mlp2(zq, &self.layout.vq.dec);
        let tgt = b.g.input(targets);
        let d_rec = b.g.sub(recon, tgt);
        let rec = b.g.sum_squares(d_rec);
        let rec = b.g.scale(rec, n_pix);

        let losses = VqLosses {
            reconstruction: b.g.value(rec).data[0].as_f64(),
            codebook: b.g.value(cb_loss).data[0].as_f64(),
            commitment: b.g.value(commit).data[0].as_f64(),
        };
        let grads = if want_grads {
            let t = b.g.add(rec, cb_loss);
            let t = b.g.add(t, commit);
            Gradients::from_pairs(self.params.len(), b.g.backward(t))
        } else {
            Gradients::zeros_like(self.params.len())
        };
        Ok((
            losses,
            grads,
            VqSnapshot {
                ids,
                offset,
                latents: z_sg,
                codes: e_sg,
            },
        ))
    }

    /// Losses and tokenizer gradients for one batch. Only legal before stage 1.
    pub fn vq_train_step(&self, images: &[&ImageBuffer]) -> Result<(VqLosses, Gradients<T>)> {
        if self.stage != 0 {
            return Err(Error::Freezing(format!(
                "tokenizer is frozen after pretraining; model is in stage {}",
                self.stage
            )));
        }
        let (l, g, _) = self.vq_objective(images, None, true)?;
        Ok((l, g))
    }

    /// Mean per-pixel squared error of `decode(quantize(encode(x)))`.
    pub fn reconstruction_mse(&self, images: &[&ImageBuffer]) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for img in images {
            let rec = self.vq_decode(&self.tokenize(img)?)?;
            total += rec
                .data
                .iter()
                .zip(&img.data)
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>();
            n += img.data.len();
        }
        Ok(total / n.max(1) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{CodecConfig, ModelConfig};

    fn tiny() -> JanusModel<f32> {
        JanusModel::new(ModelConfig::tiny(), CodecConfig::tiny(), 3).unwrap()
    }

    #[test]
    fn grid_sizes() {
        let m = tiny();
        let img = ImageBuffer::filled(16, 16, [0.2, 0.4, 0.6]).unwrap();
        let g = m.und_encode(&img).unwrap();
        assert_eq!((g.grid_h, g.grid_w), (2, 2));
        assert_eq!(m.vq_encode(&img).unwrap().rows, 4);
        let toy = JanusModel::new(ModelConfig::toy(), CodecConfig::toy(), 0).unwrap();
        let img = ImageBuffer::filled(48, 48, [0.0; 3]).unwrap();
        assert_eq!(toy.vq_encode(&img).unwrap().rows, 9);
        assert!(m.und_encode(&ImageBuffer::filled(8, 16, [0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn constant_image_patches_are_identical() {
        let m = tiny();
        let img = ImageBuffer::filled(16, 16, [0.7, 0.1, 0.3]).unwrap();
        let p = m.und_patch_embeddings(&img).unwrap();
        for r in 1..p.rows {
            assert_eq!(p.row(r), p.row(0));
        }
    }

    #[test]
    fn adaptors_check_width_and_zero_weights_give_bias() {
        let mut m = tiny();
        assert!(m.gen_adaptor(&Mat::zeros(1, m.codec.code_dim + 1)).is_err());
        let a = m.layout.gen_adaptor;
        for id in [a.w1, a.w2] {
            m.params.value_mut(id).data.fill(0.0);
        }
        m.params.value_mut(a.b2).data.iter_mut().enumerate().for_each(|(i, v)| *v = i as f32);
        let out = m.gen_adaptor(&Mat::from_vec(1, m.codec.code_dim, vec![3.0; m.codec.code_dim])).unwrap();
        assert_eq!(out.data, m.params.value(a.b2).data);
        assert_eq!(out.cols, m.config.embed_dim);
    }

    #[test]
    fn decode_shape_and_errors() {
        let m = tiny();
        let img = m.vq_decode(&[0, 1, 2, 3]).unwrap();
        assert!(img.is_square(16));
        assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(matches!(m.vq_decode(&[0, 1, 2, 99]), Err(Error::Domain(_))));
        assert!(m.vq_decode(&[0]).is_err());
    }

    #[test]
    fn train_step_refused_after_stage_zero() {
        let mut m = tiny();
        let img = ImageBuffer::filled(16, 16, [0.5; 3]).unwrap();
        assert!(m.vq_train_step(&[&img]).is_ok());
        m.stage = 1;
        assert!(matches!(m.vq_train_step(&[&img]), Err(Error::Freezing(_))));
    }

    #[test]
    fn straight_through_copies_decoder_gradient() {
        // With the codebook and commitment terms removed, the encoder output
        // gradient equals the gradient at the quantized vector.
        let m = tiny().cast::<f64>();
        let img = ImageBuffer::from_data(16, 16, (0..768).map(|i| (i % 17) as f32 / 17.0).collect()).unwrap();
        let f = m.codec.downsample_factor;
        let mut b = m.binder(GroupSet::empty());
        let x = b.g.input(m.patches(&[&img], f).unwrap());
        let z = b.mlp2(x, &m.layout.vq.enc);
        let zv = b.g.value(z).clone();
        let q = m.quantize(&zv).unwrap();
        let mut off = q.vectors.clone();
        for (o, &zz) in off.data.iter_mut().zip(&zv.data) {
            *o -= zz;
        }
        // evaluate reconstruction at e directly and at z + sg(e - z)
        let grad_at = |use_ste: bool| {
            let mut g = crate::graph::Graph::<f64>::new();
            let leaf = if use_ste {
                g.param(0, zv.clone(), true)
            } else {
                g.param(0, q.vectors.clone(), true)
            };
            let input = if use_ste {
                let o = g.input(off.clone());
                g.add(leaf, o)
            } else {
                leaf
            };
            let dec = &m.layout.vq.dec;
            let w1 = g.param(1, m.params.value(dec.w1).clone(), false);
            let b1 = g.param(2, m.params.value(dec.b1).clone(), false);
            let w2 = g.param(3, m.params.value(dec.w2).clone(), false);
            let b2 = g.param(4, m.params.value(dec.b2).clone(), false);
            let h = g.matmul(input, w1);
            let h = g.add_row(h, b1);
            let h = g.silu(h);
            let y = g.matmul(h, w2);
            let y = g.add_row(y, b2);
            let s = g.sum_squares(y);
            g.backward(s).remove(0).1
        };
        let a = grad_at(true);
        let e = grad_at(false);
        for (x, y) in a.data.iter().zip(&e.data) {
            assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn encode_and_decode_are_deterministic() {
        let m = tiny();
        let img = ImageBuffer::filled(16, 16, [0.9, 0.0, 0.3]).unwrap();
        assert_eq!(m.vq_encode(&img).unwrap(), m.vq_encode(&img).unwrap());
        assert_eq!(m.vq_decode(&[3, 2, 1, 0]).unwrap(), m.vq_decode(&[3, 2, 1, 0]).unwrap());
    }
}
