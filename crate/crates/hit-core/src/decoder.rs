//! Pyramid decoder: turns same-resolution encoder taps into a multi-scale
//! pyramid, merges it top-down, and emits a per-pixel change probability map.
//!
//! All m taps arrive as g x g token grids. Tap i (1-based) is synthesized at
//! scale 2^(m-1-i) relative to g: the earliest taps are upsampled by stacked
//! stride-2 transposed convolutions (GELU between stages), tap m-1 passes
//! through unchanged, and tap m is downsampled once by a stride-2 conv. The
//! pyramid then goes through 1x1 laterals to a common width, a top-down
//! nearest-upsample-and-add pass, 3x3 smoothing, a sum merge at the finest
//! level, bilinear resize to the tile size, and a 1x1 sigmoid head.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::conv;
use crate::error::{Error, Result};
use crate::ops;
use crate::params::{init_trunc_normal, GradSet, ParamId, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dense change prediction over one tile.
#[derive(Debug, Clone)]
pub struct SegmentationOutput<T> {
    /// Raw head outputs, `[1, H, W]`.
    pub logits: Tensor<T>,
    /// `sigmoid(logits)`, elementwise in `[0, 1]`.
    pub probabilities: Tensor<T>,
}

/// Reorders `[g*g, c]` tokens (row-major grid) into a `[c, g, g]` map.
pub fn tokens_to_grid<T: Scalar>(tokens: &Tensor<T>, grid: usize) -> Result<Tensor<T>> {
    if tokens.rows() != grid * grid {
        return Err(Error::ShapeMismatch {
            op: "tokens_to_grid",
            lhs: tokens.shape().to_vec(),
            rhs: vec![grid, grid],
        });
    }
    let c = tokens.cols();
    let mut out = vec![T::ZERO; c * grid * grid];
    for t in 0..grid * grid {
        for (ch, &v) in tokens.row(t).iter().enumerate() {
            out[ch * grid * grid + t] = v;
        }
    }
    Tensor::new(vec![c, grid, grid], out)
}

/// Adjoint of [`tokens_to_grid`].
pub fn grid_to_tokens<T: Scalar>(dgrid: &Tensor<T>) -> Tensor<T> {
    let (c, g, _) = (dgrid.shape()[0], dgrid.shape()[1], dgrid.shape()[2]);
    let mut out = vec![T::ZERO; g * g * c];
    let src = dgrid.data();
    for t in 0..g * g {
        for ch in 0..c {
            out[t * c + ch] = src[ch * g * g + t];
        }
    }
    Tensor::new(vec![g * g, c], out).expect("grid_to_tokens shape")
}

/// Per-tap synthesis operation.
#[derive(Debug, Clone)]
pub enum TapSynth {
    /// Stacked stride-2 transposed convs, GELU between stages.
    Up { stages: Vec<(ParamId, ParamId)> },
    Identity,
    /// One stride-2 2x2 conv.
    Down { w: ParamId, b: ParamId },
}

/// Parameter handles for the whole decoder.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub synth: Vec<TapSynth>,
    /// 1x1 convs embed -> decoder_channels, one per level.
    pub lateral: Vec<(ParamId, ParamId)>,
    /// 3x3 convs at decoder_channels, one per level.
    pub smooth: Vec<(ParamId, ParamId)>,
    /// 1x1 conv decoder_channels -> 1.
    pub head_w: ParamId,
    pub head_b: ParamId,
}

impl DecoderParams {
    pub fn init<T: Scalar>(
        prefix: &str,
        cfg: &ModelConfig,
        ps: &mut ParamSet<T>,
        rng: &mut Rng,
    ) -> Self {
        let m = cfg.decoder_taps.len();
        let (e, dc) = (cfg.embed_dim, cfg.decoder_channels);
        let mut synth = Vec::with_capacity(m);
        for i in 1..=m {
            if i + 1 < m {
                let n_stages = m - 1 - i;
                let stages = (0..n_stages)
                    .map(|j| {
                        let w = ps.add(
                            &format!("{prefix}.tap{i}.up{j}.w"),
                            init_trunc_normal(&[e, e, 2, 2], rng),
                        );
                        let b = ps.add(&format!("{prefix}.tap{i}.up{j}.b"), Tensor::zeros(&[e]));
                        (w, b)
                    })
                    .collect();
                synth.push(TapSynth::Up { stages });
            } else if i + 1 == m {
                synth.push(TapSynth::Identity);
            } else {
                let w = ps.add(
                    &format!("{prefix}.tap{i}.down.w"),
                    init_trunc_normal(&[e, e, 2, 2], rng),
                );
                let b = ps.add(&format!("{prefix}.tap{i}.down.b"), Tensor::zeros(&[e]));
                synth.push(TapSynth::Down { w, b });
            }
        }
        let lateral = (0..m)
            .map(|i| {
                let w = ps.add(
                    &format!("{prefix}.lateral{i}.w"),
                    init_trunc_normal(&[dc, e, 1, 1], rng),
                );
                let b = ps.add(&format!("{prefix}.lateral{i}.b"), Tensor::zeros(&[dc]));
                (w, b)
            })
            .collect();
        let smooth = (0..m)
            .map(|i| {
                let w = ps.add(
                    &format!("{prefix}.smooth{i}.w"),
                    init_trunc_normal(&[dc, dc, 3, 3], rng),
                );
                let b = ps.add(&format!("{prefix}.smooth{i}.b"), Tensor::zeros(&[dc]));
                (w, b)
            })
            .collect();
        let head_w = ps.add(
            &format!("{prefix}.head.w"),
            init_trunc_normal(&[1, dc, 1, 1], rng),
        );
        let head_b = ps.add(&format!("{prefix}.head.b"), Tensor::zeros(&[1]));
        Self {
            synth,
            lateral,
            smooth,
            head_w,
            head_b,
        }
    }
}

/// Saved activations for [`fpn_backward`].
#[derive(Debug, Clone)]
pub struct DecoderCache<T> {
    /// Per tap, per conv stage: (input, output) of that stage.
    synth_io: Vec<Vec<(Tensor<T>, Tensor<T>)>>,
    synth_out: Vec<Tensor<T>>,
    /// Top-down accumulated level features (inputs to smoothing).
    td: Vec<Tensor<T>>,
    merge_factors: Vec<usize>,
    resized: Tensor<T>,
}

/// Full decoder forward pass over `taps[i] = [g*g, embed]` token matrices.
pub fn fpn_decode<T: Scalar>(
    ps: &ParamSet<T>,
    dp: &DecoderParams,
    taps: &[Tensor<T>],
    cfg: &ModelConfig,
) -> Result<(SegmentationOutput<T>, DecoderCache<T>)> {
    let m = cfg.decoder_taps.len();
    if taps.len() != m {
        return Err(Error::InvalidInput(format!(
            "decoder expects {m} tap feature sets, got {}",
            taps.len()
        )));
    }
    let g = cfg.grid_size();

    // 1. token grids -> pyramid synthesis
    let mut synth_io: Vec<Vec<(Tensor<T>, Tensor<T>)>> = Vec::with_capacity(m);
    let mut synth_out = Vec::with_capacity(m);
    for (i, tap) in taps.iter().enumerate() {
        let grid = tokens_to_grid(tap, g)?;
        let mut io = Vec::new();
        let out = match &dp.synth[i] {
            TapSynth::Up { stages } => {
                let mut cur = grid.clone();
                for (j, &(w, b)) in stages.iter().enumerate() {
                    let input = if j == 0 { cur.clone() } else { ops::gelu(&cur) };
                    let out = conv::conv_transpose2x2(&input, ps.get(w), ps.get(b))?;
                    io.push((input, cur));
                    cur = out;
                }
                cur
            }
            TapSynth::Identity => grid.clone(),
            TapSynth::Down { w, b } => {
                let out = conv::conv2d(&grid, ps.get(*w), ps.get(*b), 2, 0)?;
                io.push((grid.clone(), out.clone()));
                out
            }
        };
        synth_io.push(io);
        synth_out.push(out);
    }

    // 2. laterals to the common width
    let mut lat = Vec::with_capacity(m);
    for (i, s) in synth_out.iter().enumerate() {
        let (w, b) = dp.lateral[i];
        lat.push(conv::conv2d(s, ps.get(w), ps.get(b), 1, 0)?);
    }

    // 3. top-down: coarsest lateral flows down with nearest x2 upsampling
    let mut td: Vec<Option<Tensor<T>>> = vec![None; m];
    td[m - 1] = Some(lat[m - 1].clone());
    for i in (0..m.saturating_sub(1)).rev() {
        let above = td[i + 1].as_ref().expect("top-down order");
        let up = conv::nearest_upsample(above, 2);
        if up.shape() != lat[i].shape() {
            return Err(Error::ShapeMismatch {
                op: "fpn_topdown",
                lhs: up.shape().to_vec(),
                rhs: lat[i].shape().to_vec(),
            });
        }
        td[i] = Some(lat[i].add(&up)?);
    }
    let td: Vec<Tensor<T>> = td.into_iter().map(|t| t.expect("filled")).collect();

    // 4. smoothing + sum merge at the finest level
    let finest = td[0].shape()[1];
    let mut merged = Tensor::zeros(&[cfg.decoder_channels, finest, finest]);
    let mut merge_factors = Vec::with_capacity(m);
    for (i, t) in td.iter().enumerate() {
        let (w, b) = dp.smooth[i];
        let s = conv::conv2d(t, ps.get(w), ps.get(b), 1, 1)?;
        let size = s.shape()[1];
        if finest % size != 0 {
            return Err(Error::InvalidConfig(format!(
                "pyramid level size {size} does not divide finest size {finest}"
            )));
        }
        let f = finest / size;
        merge_factors.push(f);
        let up = if f == 1 { s } else { conv::nearest_upsample(&s, f) };
        merged.add_assign(&up)?;
    }

    // 5. resize + head + sigmoid
    let resized = conv::bilinear_resize(&merged, cfg.image_size, cfg.image_size);
    let logits = conv::conv2d(&resized, ps.get(dp.head_w), ps.get(dp.head_b), 1, 0)?;
    let probabilities = logits.map(ops::sigmoid_scalar);
    logits.debug_assert_finite("fpn_decode");

    Ok((
        SegmentationOutput {
            logits,
            probabilities,
        },
        DecoderCache {
            synth_io,
            synth_out,
            td,
            merge_factors,
            resized,
        },
    ))
}

/// Adjoint of [`fpn_decode`]: accumulates decoder parameter gradients and
/// returns the gradient for each tap's token matrix.
pub fn fpn_backward<T: Scalar>(
    ps: &ParamSet<T>,
    dp: &DecoderParams,
    cache: &DecoderCache<T>,
    dlogits: &Tensor<T>,
    grads: &mut GradSet<T>,
) -> Result<Vec<Tensor<T>>> {
    let m = cache.td.len();

    // head
    let (dresized, dhw, dhb) =
        conv::conv2d_backward(&cache.resized, ps.get(dp.head_w), dlogits, 1, 0);
    grads.accumulate(dp.head_w, &dhw);
    grads.accumulate(dp.head_b, &dhb);

    // resize
    let finest = cache.td[0].shape()[1];
    let dmerged = conv::bilinear_resize_backward(&dresized, finest, finest);

    // merge + smoothing -> per-level gradients on td
    let mut dtd = Vec::with_capacity(m);
    for (i, t) in cache.td.iter().enumerate() {
        let f = cache.merge_factors[i];
        let ds = if f == 1 {
            dmerged.clone()
        } else {
            conv::nearest_upsample_backward(&dmerged, f)
        };
        let (w, _) = dp.smooth[i];
        let (dt, dsw, dsb) = conv::conv2d_backward(t, ps.get(w), &ds, 1, 1);
        grads.accumulate(w, &dsw);
        grads.accumulate(dp.smooth[i].1, &dsb);
        dtd.push(dt);
    }

    // top-down chain: gradient flows from fine levels back up to coarse ones
    let mut dlat: Vec<Tensor<T>> = Vec::with_capacity(m);
    for i in 0..m {
        if i > 0 {
            let carried = conv::nearest_upsample_backward(&dlat[i - 1], 2);
            dtd[i].add_assign(&carried)?;
        }
        dlat.push(dtd[i].clone());
    }

    // laterals
    let mut dsynth = Vec::with_capacity(m);
    for (i, dl) in dlat.iter().enumerate() {
        let (w, b) = dp.lateral[i];
        let (ds, dlw, dlb) = conv::conv2d_backward(&cache.synth_out[i], ps.get(w), dl, 1, 0);
        grads.accumulate(w, &dlw);
        grads.accumulate(b, &dlb);
        dsynth.push(ds);
    }

    // synthesis, reversed per tap
    let mut dtaps = Vec::with_capacity(m);
    for i in 0..m {
        let dgrid = match &dp.synth[i] {
            TapSynth::Up { stages } => {
                let mut dcur = dsynth[i].clone();
                for (j, &(w, b)) in stages.iter().enumerate().rev() {
                    let (input, pre_gelu) = &cache.synth_io[i][j];
                    let (dinput, dw, db) =
                        conv::conv_transpose2x2_backward(input, ps.get(w), &dcur);
                    grads.accumulate(w, &dw);
                    grads.accumulate(b, &db);
                    dcur = if j == 0 {
                        dinput
                    } else {
                        ops::gelu_backward(pre_gelu, &dinput)
                    };
                }
                dcur
            }
            TapSynth::Identity => dsynth[i].clone(),
            TapSynth::Down { w, b } => {
                let (input, _) = &cache.synth_io[i][0];
                let (dinput, dw, db) = conv::conv2d_backward(input, ps.get(*w), &dsynth[i], 2, 0);
                grads.accumulate(*w, &dw);
                grads.accumulate(*b, &db);
                dinput
            }
        };
        dtaps.push(grid_to_tokens(&dgrid));
    }
    Ok(dtaps)
}
