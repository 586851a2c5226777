//! History-injection mechanism: the history-embedding lifecycle around one
//! encoder block — project the stored `r^2 x d` grid up to token width, add
//! its own position codes, run it through the fuse block alongside the image
//! tokens, then map the returned rows back down through the adapter
//! (layer norm + linear) to produce the next stored embedding.

use alloc::format;
use alloc::string::String;

use crate::config::ModelConfig;
use crate::encoder::{block_forward, AttnMask, BlockCache, BlockParams, LN_EPS};
use crate::error::{Error, Result};
use crate::ops::{self, LayerNormCache};
use crate::params::{init_trunc_normal, GradSet, ParamId, ParamSet};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Compact per-tile state carried between observations: an `r^2 x d` grid of
/// vectors plus the bookkeeping needed to persist it safely.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEmbedding<T> {
    pub values: Tensor<T>,
    pub tile_key: String,
    /// Digest of the architecture that wrote these values.
    pub config_hash: u64,
    /// Epoch seconds of the last absorbed observation.
    pub timestamp: u64,
    /// Number of frames absorbed so far.
    pub step_count: u64,
}

impl<T: Scalar> HistoryEmbedding<T> {
    pub fn grid(&self) -> usize {
        let tokens = self.values.rows();
        let mut r = 1;
        while r * r < tokens {
            r += 1;
        }
        r
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn cast<U: Scalar>(&self) -> HistoryEmbedding<U> {
        HistoryEmbedding {
            values: self.values.cast(),
            tile_key: self.tile_key.clone(),
            config_hash: self.config_hash,
            timestamp: self.timestamp,
            step_count: self.step_count,
        }
    }
}

/// Parameter handles for the injection path.
#[derive(Debug, Clone)]
pub struct HitParams {
    /// `[d, embed]` decompression applied per stored token.
    pub project_in_w: ParamId,
    pub project_in_b: ParamId,
    /// Adapter layer norm over token width.
    pub adapter_g: ParamId,
    pub adapter_b: ParamId,
    /// `[embed, d]` compression back to storage width.
    pub adapter_w: ParamId,
    pub adapter_bias: ParamId,
    /// Learned shared starting state, `[r^2, d]`.
    pub initial: ParamId,
}

impl HitParams {
    pub fn init<T: Scalar>(
        prefix: &str,
        cfg: &ModelConfig,
        ps: &mut ParamSet<T>,
        rng: &mut Rng,
    ) -> Self {
        let (d, embed) = (cfg.he_dim, cfg.embed_dim);
        let project_in_w = ps.add(
            &format!("{prefix}.project_in.w"),
            init_trunc_normal(&[d, embed], rng),
        );
        let project_in_b = ps.add(&format!("{prefix}.project_in.b"), Tensor::zeros(&[embed]));
        let adapter_g = ps.add(&format!("{prefix}.adapter.ln.g"), Tensor::ones(&[embed]));
        let adapter_b = ps.add(&format!("{prefix}.adapter.ln.b"), Tensor::zeros(&[embed]));
        let adapter_w = ps.add(
            &format!("{prefix}.adapter.w"),
            init_trunc_normal(&[embed, d], rng),
        );
        let adapter_bias = ps.add(&format!("{prefix}.adapter.b"), Tensor::zeros(&[d]));
        let initial = ps.add(
            &format!("{prefix}.initial"),
            init_trunc_normal(&[cfg.he_tokens(), d], rng),
        );
        Self {
            project_in_w,
            project_in_b,
            adapter_g,
            adapter_b,
            adapter_w,
            adapter_bias,
            initial,
        }
    }
}

/// Fresh embedding for a tile that has never been observed: the learned
/// shared starting state (or zeros when disabled), step count zero.
pub fn he_init<T: Scalar>(
    cfg: &ModelConfig,
    ps: &ParamSet<T>,
    hp: &HitParams,
    tile_key: &str,
) -> HistoryEmbedding<T> {
    let values = if cfg.learned_initial_he {
        ps.get(hp.initial).clone()
    } else {
        Tensor::zeros(&[cfg.he_tokens(), cfg.he_dim])
    };
    HistoryEmbedding {
        values,
        tile_key: String::from(tile_key),
        config_hash: cfg.hash(),
        timestamp: 0,
        step_count: 0,
    }
}

/// Decompress stored values to token width and add the history grid's own
/// position codes. Fails if the embedding was written by a different
/// architecture.
pub fn he_project_in<T: Scalar>(
    ps: &ParamSet<T>,
    hp: &HitParams,
    he: &HistoryEmbedding<T>,
    pos: &Tensor<T>,
    expected_hash: u64,
) -> Result<Tensor<T>> {
    if he.config_hash != expected_hash {
        return Err(Error::StaleEmbedding {
            expected: expected_hash,
            found: he.config_hash,
        });
    }
    let mut tokens =
        ops::linear_forward(&he.values, ps.get(hp.project_in_w), ps.get(hp.project_in_b))?;
    tokens.add_assign(pos)?;
    Ok(tokens)
}

/// Adjoint of [`he_project_in`]; returns the gradient with respect to the
/// stored values (position codes are constants).
pub fn he_project_in_backward<T: Scalar>(
    ps: &ParamSet<T>,
    hp: &HitParams,
    he_values: &Tensor<T>,
    dtokens: &Tensor<T>,
    grads: &mut GradSet<T>,
) -> Result<Tensor<T>> {
    let (dvalues, dw, db) = ops::linear_backward(he_values, ps.get(hp.project_in_w), dtokens)?;
    grads.accumulate(hp.project_in_w, &dw);
    grads.accumulate(hp.project_in_b, &db);
    Ok(dvalues)
}

/// Runs the fuse block over `[image; history]` and splits the output back at
/// the image-token count.
pub fn hit_fuse<T: Scalar>(
    ps: &ParamSet<T>,
    block: &BlockParams,
    image_tokens: &Tensor<T>,
    he_tokens: &Tensor<T>,
    heads: usize,
    mask: AttnMask,
) -> Result<(Tensor<T>, Tensor<T>, BlockCache<T>)> {
    if image_tokens.cols() != he_tokens.cols() {
        return Err(Error::HookContract(format!(
            "injected tokens have width {}, image tokens have width {}",
            he_tokens.cols(),
            image_tokens.cols()
        )));
    }
    let n_img = image_tokens.rows();
    let joint = ops::concat_rows(image_tokens, he_tokens)?;
    let (out, cache) = block_forward(ps, block, &joint, heads, mask)?;
    let (image_out, he_out_raw) = ops::split_rows(&out, n_img);
    Ok((image_out, he_out_raw, cache))
}

/// Saved activations for [`adapter_apply`]'s backward pass.
#[derive(Debug, Clone)]
pub struct AdapterCache<T> {
    pub ln: LayerNormCache<T>,
    /// Normed rows, the operand of the compression linear.
    pub xn: Tensor<T>,
}

/// Layer norm then linear `embed -> d`: the approximate inverse of the fuse
/// block, producing the next stored embedding values.
pub fn adapter_apply<T: Scalar>(
    ps: &ParamSet<T>,
    hp: &HitParams,
    he_out_raw: &Tensor<T>,
) -> Result<(Tensor<T>, AdapterCache<T>)> {
    let (xn, ln) = ops::layer_norm_forward(
        he_out_raw,
        ps.get(hp.adapter_g),
        ps.get(hp.adapter_b),
        T::from_f64(LN_EPS),
    )?;
    let out = ops::linear_forward(&xn, ps.get(hp.adapter_w), ps.get(hp.adapter_bias))?;
    Ok((out, AdapterCache { ln, xn }))
}

/// Adjoint of [`adapter_apply`]; returns the gradient with respect to the
/// raw fuse-block history rows.
pub fn adapter_backward<T: Scalar>(
    ps: &ParamSet<T>,
    hp: &HitParams,
    cache: &AdapterCache<T>,
    dout: &Tensor<T>,
    grads: &mut GradSet<T>,
) -> Result<Tensor<T>> {
    let (dxn, dw, db) = ops::linear_backward(&cache.xn, ps.get(hp.adapter_w), dout)?;
    grads.accumulate(hp.adapter_w, &dw);
    grads.accumulate(hp.adapter_bias, &db);
    let (dx, dg, dbeta) = ops::layer_norm_backward(&cache.ln, ps.get(hp.adapter_g), &dxn);
    grads.accumulate(hp.adapter_g, &dg);
    grads.accumulate(hp.adapter_b, &dbeta);
    Ok(dx)
}
