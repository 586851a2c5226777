//! Full models and their training losses.
//!
//! [`HitModel`] runs the encoder with the history injection at the fuse
//! stage, updates the embedding through the adapter, and decodes tap
//! features into a change map. [`BaselineModel`] is the bitemporal
//! reference: two frames channel-concatenated into one 12-band input to an
//! otherwise identical encoder/decoder. Both carry hand-written backward
//! passes; the series loss backpropagates through the whole embedding chain
//! including every branch fork.

use alloc::vec;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::data::TileSeries;
use crate::decoder::{fpn_backward, fpn_decode, DecoderCache, DecoderParams, SegmentationOutput};
use crate::encoder::{
    block_backward, block_forward, sincos_pos_encoding, AttnMask, BlockCache, BlockParams,
    EncoderParams,
};
use crate::error::{Error, Result};
use crate::hit::{
    adapter_apply, adapter_backward, he_init, he_project_in, he_project_in_backward, hit_fuse,
    AdapterCache, HistoryEmbedding, HitParams,
};
use crate::loss::composite_loss;
use crate::ops;
use crate::params::{GradSet, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stacks two `[C, H, W]` maps along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 3 || b.rank() != 3 || a.shape()[1..] != b.shape()[1..] {
        return Err(Error::ShapeMismatch {
            op: "concat_channels",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::new(
        vec![a.shape()[0] + b.shape()[0], a.shape()[1], a.shape()[2]],
        data,
    )
}

/// Runs a plain block stack, collecting outputs of the 1-based `taps`.
fn run_blocks<T: Scalar>(
    ps: &ParamSet<T>,
    blocks: &[BlockParams],
    mut x: Tensor<T>,
    heads: usize,
    taps: &[usize],
) -> Result<(Vec<Tensor<T>>, Vec<BlockCache<T>>)> {
    let mut tap_feats = Vec::with_capacity(taps.len());
    let mut caches = Vec::with_capacity(blocks.len());
    for (i, bp) in blocks.iter().enumerate() {
        let (y, cache) = block_forward(ps, bp, &x, heads, AttnMask::None)?;
        x = y;
        caches.push(cache);
        if taps.contains(&(i + 1)) {
            tap_feats.push(x.clone());
        }
    }
    Ok((tap_feats, caches))
}

/// Adjoint of [`run_blocks`]; returns the gradient on the stack input.
fn run_blocks_backward<T: Scalar>(
    ps: &ParamSet<T>,
    blocks: &[BlockParams],
    caches: &[BlockCache<T>],
    heads: usize,
    taps: &[usize],
    dtaps: &[Tensor<T>],
    token_shape: &[usize],
    grads: &mut GradSet<T>,
) -> Result<Tensor<T>> {
    let mut dx = Tensor::zeros(token_shape);
    for blk in (1..=blocks.len()).rev() {
        if let Some(ti) = taps.iter().position(|&t| t == blk) {
            dx.add_assign(&dtaps[ti])?;
        }
        dx = block_backward(ps, &blocks[blk - 1], &caches[blk - 1], &dx, heads, grads)?;
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// History-injection model
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct HitModel<T> {
    pub cfg: ModelConfig,
    pub encoder: EncoderParams,
    pub hit: HitParams,
    pub decoder: DecoderParams,
    /// Fixed position table for the image token grid.
    pub img_pos: Tensor<T>,
    /// Fixed position table for the history grid.
    pub he_pos: Tensor<T>,
}

/// Everything one observation step produces.
#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    pub taps: Vec<Tensor<T>>,
    pub seg: SegmentationOutput<T>,
    pub he_next: HistoryEmbedding<T>,
}

/// Saved activations for one observation step.
#[derive(Debug, Clone)]
pub struct StepCache<T> {
    patches: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    he_values_in: Tensor<T>,
    adapter: AdapterCache<T>,
    decoder: DecoderCache<T>,
}

impl<T: Scalar> HitModel<T> {
    /// Validates the configuration and registers all parameters (encoder,
    /// injection path, decoder — in that order) into a fresh set.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamSet<T>)> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = Rng::derive(seed, 1);
        let encoder = EncoderParams::init("encoder", &cfg, cfg.bands, &mut ps, &mut rng);
        let hit = HitParams::init("hit", &cfg, &mut ps, &mut rng);
        let decoder = DecoderParams::init("decoder", &cfg, &mut ps, &mut rng);
        let g = cfg.grid_size();
        let img_pos = sincos_pos_encoding(g, g, cfg.embed_dim)?;
        let he_pos = sincos_pos_encoding(cfg.he_grid, cfg.he_grid, cfg.embed_dim)?;
        Ok((
            Self {
                cfg,
                encoder,
                hit,
                decoder,
                img_pos,
                he_pos,
            },
            ps,
        ))
    }

    /// Re-types the model structure (parameter ids carry over; pair with
    /// `ParamSet::cast`).
    pub fn cast<U: Scalar>(&self) -> HitModel<U> {
        HitModel {
            cfg: self.cfg.clone(),
            encoder: self.encoder.clone(),
            hit: self.hit.clone(),
            decoder: self.decoder.clone(),
            img_pos: self.img_pos.cast(),
            he_pos: self.he_pos.cast(),
        }
    }

    /// Fresh embedding for an unseen tile.
    pub fn initial_he(&self, ps: &ParamSet<T>, tile_key: &str) -> HistoryEmbedding<T> {
        he_init(&self.cfg, ps, &self.hit, tile_key)
    }

    /// One observation: inject the embedding at the fuse stage, decode the
    /// change map, and emit the updated embedding. Pure with respect to
    /// `he`, so callers may fork freely. `timestamp` is recorded on the
    /// returned embedding.
    pub fn hit_step(
        &self,
        ps: &ParamSet<T>,
        image: &Tensor<T>,
        he: &HistoryEmbedding<T>,
        timestamp: u64,
        mask: AttnMask,
    ) -> Result<(StepOutput<T>, StepCache<T>)> {
        let cfg = &self.cfg;
        if image.shape() != [cfg.bands, cfg.image_size, cfg.image_size] {
            return Err(Error::ShapeMismatch {
                op: "hit_step",
                lhs: image.shape().to_vec(),
                rhs: vec![cfg.bands, cfg.image_size, cfg.image_size],
            });
        }
        if he.values.shape() != [cfg.he_tokens(), cfg.he_dim] {
            return Err(Error::ShapeMismatch {
                op: "hit_step",
                lhs: he.values.shape().to_vec(),
                rhs: vec![cfg.he_tokens(), cfg.he_dim],
            });
        }
        let (mut x, patches) = self.encoder.patch.forward(ps, image, cfg.patch_size)?;
        x.add_assign(&self.img_pos)?;
        let mut blocks = Vec::with_capacity(cfg.depth);
        let mut taps = Vec::with_capacity(cfg.decoder_taps.len());
        let mut he_out_raw = None;
        for blk in 1..=cfg.depth {
            let bp = &self.encoder.blocks[blk - 1];
            if blk == cfg.fuse_stage {
                let he_tokens = he_project_in(ps, &self.hit, he, &self.he_pos, cfg.hash())?;
                let (img_out, raw, cache) = hit_fuse(ps, bp, &x, &he_tokens, cfg.heads, mask)?;
                x = img_out;
                he_out_raw = Some(raw);
                blocks.push(cache);
            } else {
                let (y, cache) = block_forward(ps, bp, &x, cfg.heads, AttnMask::None)?;
                x = y;
                blocks.push(cache);
            }
            if cfg.decoder_taps.contains(&blk) {
                taps.push(x.clone());
            }
        }
        let he_out_raw = he_out_raw.expect("fuse stage lies within depth");
        let (he_values, adapter) = adapter_apply(ps, &self.hit, &he_out_raw)?;
        let (seg, decoder) = fpn_decode(ps, &self.decoder, &taps, cfg)?;
        let he_next = HistoryEmbedding {
            values: he_values,
            tile_key: he.tile_key.clone(),
            config_hash: cfg.hash(),
            timestamp,
            step_count: he.step_count + 1,
        };
        Ok((
            StepOutput {
                taps,
                seg,
                he_next,
            },
            StepCache {
                patches,
                blocks,
                he_values_in: he.values.clone(),
                adapter,
                decoder,
            },
        ))
    }

    /// Adjoint of [`Self::hit_step`]. Takes the loss gradient on the logits
    /// and the gradient flowing back into `he_next.values`; accumulates
    /// parameter gradients and returns the gradient on the input embedding
    /// values.
    pub fn hit_step_backward(
        &self,
        ps: &ParamSet<T>,
        cache: &StepCache<T>,
        dlogits: &Tensor<T>,
        dhe_next: &Tensor<T>,
        grads: &mut GradSet<T>,
    ) -> Result<Tensor<T>> {
        let cfg = &self.cfg;
        let d_he_raw = adapter_backward(ps, &self.hit, &cache.adapter, dhe_next, grads)?;
        let dtaps = fpn_backward(ps, &self.decoder, &cache.decoder, dlogits, grads)?;
        let mut dx = Tensor::zeros(&[cfg.n_tokens(), cfg.embed_dim]);
        let mut dhe_values = None;
        for blk in (1..=cfg.depth).rev() {
            if let Some(ti) = cfg.decoder_taps.iter().position(|&t| t == blk) {
                dx.add_assign(&dtaps[ti])?;
            }
            let bp = &self.encoder.blocks[blk - 1];
            if blk == cfg.fuse_stage {
                let djoint = ops::concat_rows(&dx, &d_he_raw)?;
                let din = block_backward(ps, bp, &cache.blocks[blk - 1], &djoint, cfg.heads, grads)?;
                let (dimg, dhe_tok) = ops::split_rows(&din, cfg.n_tokens());
                dx = dimg;
                dhe_values = Some(he_project_in_backward(
                    ps,
                    &self.hit,
                    &cache.he_values_in,
                    &dhe_tok,
                    grads,
                )?);
            } else {
                dx = block_backward(ps, bp, &cache.blocks[blk - 1], &dx, cfg.heads, grads)?;
            }
        }
        self.encoder.patch.backward(ps, &cache.patches, &dx, grads)?;
        Ok(dhe_values.expect("fuse stage traversed"))
    }

    /// Tap features of the encoder run without any injection (diagnostic
    /// reference path).
    pub fn encode_plain(&self, ps: &ParamSet<T>, image: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let (mut x, _) = self.encoder.patch.forward(ps, image, self.cfg.patch_size)?;
        x.add_assign(&self.img_pos)?;
        let (taps, _) = run_blocks(
            ps,
            &self.encoder.blocks,
            x,
            self.cfg.heads,
            &self.cfg.decoder_taps,
        )?;
        Ok(taps)
    }

    /// Fold the first `s` frames into a fresh embedding, then fork and
    /// predict against the post frame (the stored trajectory is a local
    /// variable, so the fork is free).
    pub fn predict_prefix_post(
        &self,
        ps: &ParamSet<T>,
        series: &TileSeries<T>,
        s: usize,
    ) -> Result<SegmentationOutput<T>> {
        let n = series.len();
        if s == 0 || s > n {
            return Err(Error::StepOutOfRange { step: s, total: n });
        }
        let mut he = self.initial_he(ps, &series.tile_key);
        for i in 1..=s {
            let (out, _) = self.hit_step(
                ps,
                &series.frames[i - 1].bands,
                &he,
                i as u64,
                AttnMask::None,
            )?;
            he = out.he_next;
        }
        let (out, _) = self.hit_step(
            ps,
            &series.post.bands,
            &he,
            (s + 1) as u64,
            AttnMask::None,
        )?;
        Ok(out.seg)
    }

    /// Composite series loss: the main chain folds the embedding over all
    /// `n` frames scoring change-vs-previous at each step, and after every
    /// prefix a branch forks the embedding to score the post frame against
    /// that prefix's change mask. `n` main plus `n` branch terms, averaged.
    pub fn series_loss(
        &self,
        ps: &ParamSet<T>,
        series: &TileSeries<T>,
    ) -> Result<(T, SeriesCaches<T>)> {
        let n = series.len();
        if n == 0 {
            return Err(Error::InvalidInput("series has no pre-event frames".into()));
        }
        let scale = T::ONE / T::from_f64((2 * n) as f64);
        let mut he = self.initial_he(ps, &series.tile_key);
        let mut total = T::ZERO;
        let mut main = Vec::with_capacity(n);
        let mut branch = Vec::with_capacity(n);
        for i in 1..=n {
            let (out, cache) = self.hit_step(
                ps,
                &series.frames[i - 1].bands,
                &he,
                i as u64,
                AttnMask::None,
            )?;
            let mask = series.step_mask(i)?;
            let (loss, dlogits) = composite_loss(&out.seg.logits, &out.seg.probabilities, &mask)?;
            total += loss;
            main.push((cache, dlogits.scale(scale)));
            he = out.he_next;

            let (bout, bcache) = self.hit_step(
                ps,
                &series.post.bands,
                &he,
                (n + 1) as u64,
                AttnMask::None,
            )?;
            let bmask = series.branch_mask(i)?;
            let (bloss, bdlogits) =
                composite_loss(&bout.seg.logits, &bout.seg.probabilities, &bmask)?;
            total += bloss;
            branch.push((bcache, bdlogits.scale(scale)));
        }
        let mean = total * scale;
        if !mean.is_finite() {
            return Err(Error::NonFinite {
                context: "series_loss".into(),
            });
        }
        Ok((mean, SeriesCaches { main, branch }))
    }

    /// Backpropagation through the whole series: walks the chain in
    /// reverse, merging each branch's embedding gradient into the main
    /// trajectory, and finally deposits the remaining gradient on the
    /// learned initial embedding.
    pub fn series_backward(
        &self,
        ps: &ParamSet<T>,
        caches: &SeriesCaches<T>,
        grads: &mut GradSet<T>,
    ) -> Result<()> {
        let n = caches.main.len();
        let zero = Tensor::zeros(&[self.cfg.he_tokens(), self.cfg.he_dim]);
        let mut dhe = zero.clone();
        for i in (1..=n).rev() {
            let (bcache, bdlogits) = &caches.branch[i - 1];
            let from_branch = self.hit_step_backward(ps, bcache, bdlogits, &zero, grads)?;
            dhe.add_assign(&from_branch)?;
            let (mcache, mdlogits) = &caches.main[i - 1];
            dhe = self.hit_step_backward(ps, mcache, mdlogits, &dhe, grads)?;
        }
        if self.cfg.learned_initial_he {
            grads.accumulate(self.hit.initial, &dhe);
        }
        Ok(())
    }

    /// Forward and backward in one call; returns the mean series loss.
    pub fn series_loss_and_grad(
        &self,
        ps: &ParamSet<T>,
        series: &TileSeries<T>,
        grads: &mut GradSet<T>,
    ) -> Result<T> {
        let (loss, caches) = self.series_loss(ps, series)?;
        self.series_backward(ps, &caches, grads)?;
        Ok(loss)
    }
}

/// Per-term caches of one series pass (public so harnesses can count terms).
#[derive(Debug, Clone)]
pub struct SeriesCaches<T> {
    pub main: Vec<(StepCache<T>, Tensor<T>)>,
    pub branch: Vec<(StepCache<T>, Tensor<T>)>,
}

// ---------------------------------------------------------------------------
// Bitemporal baseline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BaselineModel<T> {
    pub cfg: ModelConfig,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub img_pos: Tensor<T>,
}

/// Saved activations for one baseline pair pass.
#[derive(Debug, Clone)]
pub struct PairCache<T> {
    patches: Tensor<T>,
    blocks: Vec<BlockCache<T>>,
    decoder: DecoderCache<T>,
}

impl<T: Scalar> BaselineModel<T> {
    /// Same encoder/decoder as the injection model but with 2x bands
    /// channel-concatenated at the input and no history path.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<(Self, ParamSet<T>)> {
        cfg.validate()?;
        let mut ps = ParamSet::new();
        let mut rng = Rng::derive(seed, 2);
        let encoder = EncoderParams::init("encoder", &cfg, cfg.bands * 2, &mut ps, &mut rng);
        let decoder = DecoderParams::init("decoder", &cfg, &mut ps, &mut rng);
        let g = cfg.grid_size();
        let img_pos = sincos_pos_encoding(g, g, cfg.embed_dim)?;
        Ok((
            Self {
                cfg,
                encoder,
                decoder,
                img_pos,
            },
            ps,
        ))
    }

    pub fn cast<U: Scalar>(&self) -> BaselineModel<U> {
        BaselineModel {
            cfg: self.cfg.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            img_pos: self.img_pos.cast(),
        }
    }

    pub fn forward(
        &self,
        ps: &ParamSet<T>,
        pre: &Tensor<T>,
        post: &Tensor<T>,
    ) -> Result<(SegmentationOutput<T>, PairCache<T>)> {
        let joint = concat_channels(pre, post)?;
        let (mut x, patches) = self.encoder.patch.forward(ps, &joint, self.cfg.patch_size)?;
        x.add_assign(&self.img_pos)?;
        let (taps, blocks) = run_blocks(
            ps,
            &self.encoder.blocks,
            x,
            self.cfg.heads,
            &self.cfg.decoder_taps,
        )?;
        let (seg, decoder) = fpn_decode(ps, &self.decoder, &taps, &self.cfg)?;
        Ok((
            seg,
            PairCache {
                patches,
                blocks,
                decoder,
            },
        ))
    }

    pub fn backward(
        &self,
        ps: &ParamSet<T>,
        cache: &PairCache<T>,
        dlogits: &Tensor<T>,
        grads: &mut GradSet<T>,
    ) -> Result<()> {
        let dtaps = fpn_backward(ps, &self.decoder, &cache.decoder, dlogits, grads)?;
        let dx = run_blocks_backward(
            ps,
            &self.encoder.blocks,
            &cache.blocks,
            self.cfg.heads,
            &self.cfg.decoder_taps,
            &dtaps,
            &[self.cfg.n_tokens(), self.cfg.embed_dim],
            grads,
        )?;
        self.encoder.patch.backward(ps, &cache.patches, &dx, grads)
    }

    /// Composite loss on one (pre, post, mask) pair with gradients.
    pub fn pair_loss_and_grad(
        &self,
        ps: &ParamSet<T>,
        pre: &Tensor<T>,
        post: &Tensor<T>,
        mask: &Tensor<T>,
        grads: &mut GradSet<T>,
    ) -> Result<T> {
        let (seg, cache) = self.forward(ps, pre, post)?;
        let (loss, dlogits) = composite_loss(&seg.logits, &seg.probabilities, mask)?;
        self.backward(ps, &cache, &dlogits, grads)?;
        Ok(loss)
    }
}
