//! ViT encoder pieces: patch embedding, fixed 2-D sin/cos position codes,
//! and pre-norm transformer blocks with hand-written backward passes.
//!
//! A block computes `x + MHSA(LN(x))` followed by `+ MLP(LN(·))`. Blocks are
//! stateless; parameters live in a [`ParamSet`] and are addressed through the
//! ids collected in [`BlockParams`]. The history-injection orchestration
//! (concatenating extra tokens before one block) sits in `model`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::ops::{self, LayerNormCache};
use crate::params::{init_trunc_normal, GradSet, ParamId, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Epsilon used by every layer norm in the network.
pub const LN_EPS: f64 = 1e-6;

/// Attention masking mode for one block invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttnMask {
    /// Dense attention over all tokens.
    None,
    /// Queries among the first `n_img` tokens cannot attend to keys at or
    /// beyond `n_img`; trailing (history) queries still see everything.
    /// Diagnostic mode proving appended tokens can be made influence-free.
    ImageIgnoresTail { n_img: usize },
}

// ---------------------------------------------------------------------------
// Position codes
// ---------------------------------------------------------------------------

/// Fixed 2-D sine/cosine position table, `[grid_h*grid_w, dim]`, row-major
/// positions. Channel layout: the first half encodes the row index, the
/// second half the column index, each split into `dim/4` sin channels
/// followed by `dim/4` cos channels over the geometric frequency ladder
/// `omega_k = 10000^(-k / (dim/4))`.
pub fn sincos_pos_encoding<T: Scalar>(
    grid_h: usize,
    grid_w: usize,
    dim: usize,
) -> Result<Tensor<T>> {
    if dim == 0 || dim % 4 != 0 {
        return Err(Error::InvalidConfig(format!(
            "position encoding dim {dim} must be a positive multiple of 4"
        )));
    }
    if grid_h == 0 || grid_w == 0 {
        return Err(Error::InvalidConfig("position grid must be non-empty".into()));
    }
    let q = dim / 4;
    let mut data = vec![T::ZERO; grid_h * grid_w * dim];
    for t in 0..grid_h * grid_w {
        let row = (t / grid_w) as f64;
        let col = (t % grid_w) as f64;
        let base = t * dim;
        for k in 0..q {
            let omega = libm::pow(10000.0, -(k as f64) / q as f64);
            data[base + k] = T::from_f64(libm::sin(row * omega));
            data[base + q + k] = T::from_f64(libm::cos(row * omega));
            data[base + 2 * q + k] = T::from_f64(libm::sin(col * omega));
            data[base + 3 * q + k] = T::from_f64(libm::cos(col * omega));
        }
    }
    Tensor::new(vec![grid_h * grid_w, dim], data)
}

// ---------------------------------------------------------------------------
// Patch embedding
// ---------------------------------------------------------------------------

/// Rearranges `[bands, H, W]` into `[n_patches, bands*p*p]`, patches in
/// row-major grid order. Within a patch vector the layout is band-major:
/// index = band*p*p + py*p + px.
pub fn extract_patches<T: Scalar>(image: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    if image.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "extract_patches",
            lhs: image.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (bands, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidConfig(format!(
            "image {h}x{w} not divisible into {patch}x{patch} patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let plen = bands * patch * patch;
    let mut out = vec![T::ZERO; gh * gw * plen];
    let src = image.data();
    for gy in 0..gh {
        for gx in 0..gw {
            let t = gy * gw + gx;
            for b in 0..bands {
                for py in 0..patch {
                    let src_row = (b * h + gy * patch + py) * w + gx * patch;
                    let dst = t * plen + b * patch * patch + py * patch;
                    out[dst..dst + patch].copy_from_slice(&src[src_row..src_row + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, plen], out)
}

/// Parameter handles for the patch projection.
#[derive(Debug, Clone)]
pub struct PatchEmbedParams {
    pub w: ParamId,
    pub b: ParamId,
}

impl PatchEmbedParams {
    /// Registers a `[in_dim, embed] + [embed]` projection under `prefix`.
    pub fn init<T: Scalar>(
        prefix: &str,
        in_dim: usize,
        embed: usize,
        ps: &mut ParamSet<T>,
        rng: &mut Rng,
    ) -> Self {
        let w = ps.add(
            &format!("{prefix}.patch.w"),
            init_trunc_normal(&[in_dim, embed], rng),
        );
        let b = ps.add(&format!("{prefix}.patch.b"), Tensor::zeros(&[embed]));
        Self { w, b }
    }

    /// Projects extracted patches to tokens; returns (tokens, patches) where
    /// `patches` is the cache needed by [`Self::backward`].
    pub fn forward<T: Scalar>(
        &self,
        ps: &ParamSet<T>,
        image: &Tensor<T>,
        patch: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let patches = extract_patches(image, patch)?;
        let tokens = ops::linear_forward(&patches, ps.get(self.w), ps.get(self.b))?;
        Ok((tokens, patches))
    }

    /// Accumulates projection gradients. Image gradients are discarded
    /// (inputs are data, never trained).
    pub fn backward<T: Scalar>(
        &self,
        ps: &ParamSet<T>,
        patches: &Tensor<T>,
        dtokens: &Tensor<T>,
        grads: &mut GradSet<T>,
    ) -> Result<()> {
        let (_dx, dw, db) = ops::linear_backward(patches, ps.get(self.w), dtokens)?;
        grads.accumulate(self.w, &dw);
        grads.accumulate(self.b, &db);
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Transformer block
// ---------------------------------------------------------------------------

/// Parameter handles for one pre-norm block.
#[derive(Debug, Clone)]
pub struct BlockParams {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    /// Fused query/key/value projection, `[d, 3d]`.
    pub qkv_w: ParamId,
    /// Query bias. There is deliberately no key bias: a constant added to
    /// every key shifts each score row uniformly, and row softmax is
    /// invariant to uniform shifts, so such a parameter could never affect
    /// the output or receive real gradient.
    pub q_b: ParamId,
    pub v_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub fc1_w: ParamId,
    pub fc1_b: ParamId,
    pub fc2_w: ParamId,
    pub fc2_b: ParamId,
}

impl BlockParams {
    pub fn init<T: Scalar>(
        prefix: &str,
        embed: usize,
        hidden: usize,
        ps: &mut ParamSet<T>,
        rng: &mut Rng,
    ) -> Self {
        let add_w = |ps: &mut ParamSet<T>, rng: &mut Rng, name: &str, shape: &[usize]| {
            ps.add(&format!("{prefix}.{name}"), init_trunc_normal(shape, rng))
        };
        let add_zeros = |ps: &mut ParamSet<T>, name: &str, len: usize| {
            ps.add(&format!("{prefix}.{name}"), Tensor::zeros(&[len]))
        };
        let add_ones = |ps: &mut ParamSet<T>, name: &str, len: usize| {
            ps.add(&format!("{prefix}.{name}"), Tensor::ones(&[len]))
        };
        let ln1_g = add_ones(ps, "ln1.g", embed);
        let ln1_b = add_zeros(ps, "ln1.b", embed);
        let qkv_w = add_w(ps, rng, "attn.qkv_w", &[embed, 3 * embed]);
        let q_b = add_zeros(ps, "attn.q_b", embed);
        let v_b = add_zeros(ps, "attn.v_b", embed);
        let proj_w = add_w(ps, rng, "attn.proj_w", &[embed, embed]);
        let proj_b = add_zeros(ps, "attn.proj_b", embed);
        let ln2_g = add_ones(ps, "ln2.g", embed);
        let ln2_b = add_zeros(ps, "ln2.b", embed);
        let fc1_w = add_w(ps, rng, "mlp.fc1_w", &[embed, hidden]);
        let fc1_b = add_zeros(ps, "mlp.fc1_b", hidden);
        let fc2_w = add_w(ps, rng, "mlp.fc2_w", &[hidden, embed]);
        let fc2_b = add_zeros(ps, "mlp.fc2_b", embed);
        Self {
            ln1_g,
            ln1_b,
            qkv_w,
            q_b,
            v_b,
            proj_w,
            proj_b,
            ln2_g,
            ln2_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
        }
    }
}

/// Saved activations for one block's backward pass.
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    pub ln1: LayerNormCache<T>,
    /// Normed input, the operand of the qkv projection.
    pub xn1: Tensor<T>,
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    /// Post-softmax attention per head, `[n, n]` each.
    pub attn: Vec<Tensor<T>>,
    /// Concatenated head outputs, the operand of the output projection.
    pub heads_out: Tensor<T>,
    pub ln2: LayerNormCache<T>,
    pub xn2: Tensor<T>,
    /// Pre-activation of the MLP hidden layer.
    pub h1: Tensor<T>,
    /// GELU output, the operand of the second MLP linear.
    pub a1: Tensor<T>,
}

fn slice_cols<T: Scalar>(x: &Tensor<T>, from: usize, to: usize) -> Tensor<T> {
    let n = x.rows();
    let mut out = vec![T::ZERO; n * (to - from)];
    for i in 0..n {
        out[i * (to - from)..(i + 1) * (to - from)].copy_from_slice(&x.row(i)[from..to]);
    }
    Tensor::new(vec![n, to - from], out).expect("slice_cols shape")
}

fn add_into_cols<T: Scalar>(dst: &mut Tensor<T>, src: &Tensor<T>, from: usize) {
    for i in 0..src.rows() {
        let drow = dst.row_mut(i);
        for (j, &v) in src.row(i).iter().enumerate() {
            drow[from + j] += v;
        }
    }
}

fn add_bias_rows<T: Scalar>(x: &mut Tensor<T>, b: &Tensor<T>) {
    for i in 0..x.rows() {
        for (v, &bv) in x.row_mut(i).iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
}

/// One pre-norm transformer block over an `[n, d]` token matrix.
pub fn block_forward<T: Scalar>(
    ps: &ParamSet<T>,
    bp: &BlockParams,
    x: &Tensor<T>,
    heads: usize,
    mask: AttnMask,
) -> Result<(Tensor<T>, BlockCache<T>)> {
    let (n, d) = (x.rows(), x.cols());
    if d % heads != 0 {
        return Err(Error::InvalidConfig(format!(
            "token width {d} not divisible by {heads} heads"
        )));
    }
    let hd = d / heads;
    let eps = T::from_f64(LN_EPS);

    let (xn1, ln1) = ops::layer_norm_forward(x, ps.get(bp.ln1_g), ps.get(bp.ln1_b), eps)?;
    let qkv = ops::matmul(&xn1, ps.get(bp.qkv_w))?;
    let mut q = slice_cols(&qkv, 0, d);
    let k = slice_cols(&qkv, d, 2 * d);
    let mut v = slice_cols(&qkv, 2 * d, 3 * d);
    add_bias_rows(&mut q, ps.get(bp.q_b));
    add_bias_rows(&mut v, ps.get(bp.v_b));

    let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));
    let mut attn = Vec::with_capacity(heads);
    let mut heads_out = Tensor::zeros(&[n, d]);
    for h in 0..heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let qh = slice_cols(&q, lo, hi);
        let kh = slice_cols(&k, lo, hi);
        let vh = slice_cols(&v, lo, hi);
        let mut scores = ops::matmul_nt(&qh, &kh)?.scale(scale);
        if let AttnMask::ImageIgnoresTail { n_img } = mask {
            for i in 0..n_img.min(n) {
                let row = scores.row_mut(i);
                for s in row.iter_mut().skip(n_img) {
                    *s = T::neg_infinity();
                }
            }
        }
        let a = ops::softmax_rows(&scores);
        let oh = ops::matmul(&a, &vh)?;
        add_into_cols(&mut heads_out, &oh, lo);
        attn.push(a);
    }
    let attn_out = ops::linear_forward(&heads_out, ps.get(bp.proj_w), ps.get(bp.proj_b))?;
    let x_mid = x.add(&attn_out)?;

    let (xn2, ln2) = ops::layer_norm_forward(&x_mid, ps.get(bp.ln2_g), ps.get(bp.ln2_b), eps)?;
    let h1 = ops::linear_forward(&xn2, ps.get(bp.fc1_w), ps.get(bp.fc1_b))?;
    let a1 = ops::gelu(&h1);
    let h2 = ops::linear_forward(&a1, ps.get(bp.fc2_w), ps.get(bp.fc2_b))?;
    let y = x_mid.add(&h2)?;
    y.debug_assert_finite("block_forward");

    Ok((
        y,
        BlockCache {
            ln1,
            xn1,
            q,
            k,
            v,
            attn,
            heads_out,
            ln2,
            xn2,
            h1,
            a1,
        },
    ))
}

/// Adjoint of [`block_forward`]. Accumulates parameter gradients into
/// `grads` and returns the gradient with respect to the block input.
/// Masked attention needs no special handling: masked weights are exact
/// zeros, so the softmax adjoint zeroes their score gradients.
pub fn block_backward<T: Scalar>(
    ps: &ParamSet<T>,
    bp: &BlockParams,
    cache: &BlockCache<T>,
    dy: &Tensor<T>,
    heads: usize,
    grads: &mut GradSet<T>,
) -> Result<Tensor<T>> {
    let (n, d) = (dy.rows(), dy.cols());
    let hd = d / heads;
    let scale = T::from_f64(1.0 / libm::sqrt(hd as f64));

    // MLP branch: y = x_mid + fc2(gelu(fc1(ln2(x_mid))))
    let (da1, dfc2w, dfc2b) = ops::linear_backward(&cache.a1, ps.get(bp.fc2_w), dy)?;
    grads.accumulate(bp.fc2_w, &dfc2w);
    grads.accumulate(bp.fc2_b, &dfc2b);
    let dh1 = ops::gelu_backward(&cache.h1, &da1);
    let (dxn2, dfc1w, dfc1b) = ops::linear_backward(&cache.xn2, ps.get(bp.fc1_w), &dh1)?;
    grads.accumulate(bp.fc1_w, &dfc1w);
    grads.accumulate(bp.fc1_b, &dfc1b);
    let (dx_ln2, dg2, db2) = ops::layer_norm_backward(&cache.ln2, ps.get(bp.ln2_g), &dxn2);
    grads.accumulate(bp.ln2_g, &dg2);
    grads.accumulate(bp.ln2_b, &db2);
    let mut dx_mid = dy.add(&dx_ln2)?;

    // Attention branch: x_mid = x + proj(heads_out)
    let (dheads, dpw, dpb) = ops::linear_backward(&cache.heads_out, ps.get(bp.proj_w), &dx_mid)?;
    grads.accumulate(bp.proj_w, &dpw);
    grads.accumulate(bp.proj_b, &dpb);

    let mut dq = Tensor::zeros(&[n, d]);
    let mut dk = Tensor::zeros(&[n, d]);
    let mut dv = Tensor::zeros(&[n, d]);
    for h in 0..heads {
        let (lo, hi) = (h * hd, (h + 1) * hd);
        let doh = slice_cols(&dheads, lo, hi);
        let a = &cache.attn[h];
        let vh = slice_cols(&cache.v, lo, hi);
        let da = ops::matmul_nt(&doh, &vh)?;
        let dvh = ops::matmul_tn(a, &doh)?;
        let dscores = ops::softmax_rows_backward(a, &da).scale(scale);
        let qh = slice_cols(&cache.q, lo, hi);
        let kh = slice_cols(&cache.k, lo, hi);
        let dqh = ops::matmul(&dscores, &kh)?;
        let dkh = ops::matmul_tn(&dscores, &qh)?;
        add_into_cols(&mut dq, &dqh, lo);
        add_into_cols(&mut dk, &dkh, lo);
        add_into_cols(&mut dv, &dvh, lo);
    }
    grads.accumulate(bp.q_b, &ops::col_sum(&dq));
    grads.accumulate(bp.v_b, &ops::col_sum(&dv));
    let mut dqkv = Tensor::zeros(&[n, 3 * d]);
    add_into_cols(&mut dqkv, &dq, 0);
    add_into_cols(&mut dqkv, &dk, d);
    add_into_cols(&mut dqkv, &dv, 2 * d);
    let dxn1 = ops::matmul_nt(&dqkv, ps.get(bp.qkv_w))?;
    grads.accumulate(bp.qkv_w, &ops::matmul_tn(&cache.xn1, &dqkv)?);
    let (dx_ln1, dg1, db1) = ops::layer_norm_backward(&cache.ln1, ps.get(bp.ln1_g), &dxn1);
    grads.accumulate(bp.ln1_g, &dg1);
    grads.accumulate(bp.ln1_b, &db1);
    dx_mid.add_assign(&dx_ln1)?;
    Ok(dx_mid)
}

// ---------------------------------------------------------------------------
// Encoder assembly
// ---------------------------------------------------------------------------

/// Parameter handles for a full encoder stack.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub patch: PatchEmbedParams,
    pub blocks: Vec<BlockParams>,
}

impl EncoderParams {
    /// Registers all encoder parameters under `prefix` ("encoder" for the
    /// shared stack). `in_bands` may differ from `cfg.bands` so the
    /// bitemporal baseline can reuse the stack with concatenated frames.
    pub fn init<T: Scalar>(
        prefix: &str,
        cfg: &ModelConfig,
        in_bands: usize,
        ps: &mut ParamSet<T>,
        rng: &mut Rng,
    ) -> Self {
        let in_dim = in_bands * cfg.patch_size * cfg.patch_size;
        let patch = PatchEmbedParams::init(prefix, in_dim, cfg.embed_dim, ps, rng);
        let blocks = (0..cfg.depth)
            .map(|i| {
                BlockParams::init(
                    &format!("{prefix}.block{i}"),
                    cfg.embed_dim,
                    cfg.mlp_hidden(),
                    ps,
                    rng,
                )
            })
            .collect();
        Self { patch, blocks }
    }
}
