//! 2-D convolution and resampling primitives for the pyramid decoder.
//!
//! Feature maps are `[C, H, W]` tensors. Kernels stay tiny (1x1, 2x2, 3x3)
//! so everything is a direct loop; no im2col.

use alloc::vec;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn expect_3d<T: Scalar>(x: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    }
    Ok((x.shape()[0], x.shape()[1], x.shape()[2]))
}

/// `x [Ci,H,W]` * `w [Co,Ci,kh,kw]` + `b [Co]`, zero padding.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (ci, h, wd) = expect_3d(x, "conv2d")?;
    let (co, wci, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if wci != ci || b.numel() != co {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let mut y = vec![T::ZERO; co * ho * wo];
    let xd = x.data();
    let wdat = w.data();
    for o in 0..co {
        let bias = b.data()[o];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = bias;
                for c in 0..ci {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= wd {
                                continue;
                            }
                            acc += xd[(c * h + iy as usize) * wd + ix as usize]
                                * wdat[((o * ci + c) * kh + ky) * kw + kx];
                        }
                    }
                }
                y[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    Tensor::new(vec![co, ho, wo], y)
}

/// Adjoint of [`conv2d`]: returns `(dx, dw, db)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (ho, wo) = (dy.shape()[1], dy.shape()[2]);
    let mut dx = vec![T::ZERO; ci * h * wd];
    let mut dw = vec![T::ZERO; w.numel()];
    let mut db = vec![T::ZERO; co];
    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    for o in 0..co {
        for oy in 0..ho {
            for ox in 0..wo {
                let g = dyd[(o * ho + oy) * wo + ox];
                db[o] += g;
                for c in 0..ci {
                    for ky in 0..kh {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix < 0 || ix as usize >= wd {
                                continue;
                            }
                            let xi = (c * h + iy as usize) * wd + ix as usize;
                            let wi = ((o * ci + c) * kh + ky) * kw + kx;
                            dx[xi] += g * wdat[wi];
                            dw[wi] += g * xd[xi];
                        }
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx shape"),
        Tensor::new(w.shape().to_vec(), dw).expect("dw shape"),
        Tensor::new(vec![co], db).expect("db shape"),
    )
}

/// Transposed convolution with a 2x2 kernel and stride 2 (exact 2x
/// upsampling; every output pixel receives one contribution).
/// Weight layout `[Ci, Co, 2, 2]`.
pub fn conv_transpose2x2<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (ci, h, wd) = expect_3d(x, "conv_transpose2x2")?;
    if w.shape()[0] != ci || w.shape()[2] != 2 || w.shape()[3] != 2 {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2x2",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let co = w.shape()[1];
    let (ho, wo) = (2 * h, 2 * wd);
    let mut y = vec![T::ZERO; co * ho * wo];
    let xd = x.data();
    let wdat = w.data();
    for o in 0..co {
        let bias = b.data()[o];
        for iy in 0..h {
            for ix in 0..wd {
                for ky in 0..2 {
                    for kx in 0..2 {
                        let mut acc = T::ZERO;
                        for c in 0..ci {
                            acc += xd[(c * h + iy) * wd + ix]
                                * wdat[((c * co + o) * 2 + ky) * 2 + kx];
                        }
                        y[(o * ho + 2 * iy + ky) * wo + 2 * ix + kx] = acc + bias;
                    }
                }
            }
        }
    }
    Tensor::new(vec![co, ho, wo], y)
}

/// Adjoint of [`conv_transpose2x2`]: returns `(dx, dw, db)`.
pub fn conv_transpose2x2_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let co = w.shape()[1];
    let (ho, wo) = (dy.shape()[1], dy.shape()[2]);
    let mut dx = vec![T::ZERO; ci * h * wd];
    let mut dw = vec![T::ZERO; w.numel()];
    let mut db = vec![T::ZERO; co];
    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    for o in 0..co {
        for iy in 0..h {
            for ix in 0..wd {
                for ky in 0..2 {
                    for kx in 0..2 {
                        let g = dyd[(o * ho + 2 * iy + ky) * wo + 2 * ix + kx];
                        for c in 0..ci {
                            let xi = (c * h + iy) * wd + ix;
                            let wi = ((c * co + o) * 2 + ky) * 2 + kx;
                            dx[xi] += g * wdat[wi];
                            dw[wi] += g * xd[xi];
                        }
                    }
                }
            }
        }
    }
    for o in 0..co {
        for i in 0..ho * wo {
            db[o] += dyd[o * ho * wo + i];
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx shape"),
        Tensor::new(w.shape().to_vec(), dw).expect("dw shape"),
        Tensor::new(vec![co], db).expect("db shape"),
    )
}

/// Integer-factor nearest-neighbour upsampling.
pub fn nearest_upsample<T: Scalar>(x: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (ho, wo) = (h * factor, w * factor);
    let mut y = vec![T::ZERO; c * ho * wo];
    let xd = x.data();
    for ch in 0..c {
        for oy in 0..ho {
            let iy = oy / factor;
            for ox in 0..wo {
                y[(ch * ho + oy) * wo + ox] = xd[(ch * h + iy) * w + ox / factor];
            }
        }
    }
    Tensor::new(vec![c, ho, wo], y).expect("nearest shape")
}

/// Adjoint of [`nearest_upsample`]: sums each factor-by-factor block.
pub fn nearest_upsample_backward<T: Scalar>(dy: &Tensor<T>, factor: usize) -> Tensor<T> {
    let (c, ho, wo) = (dy.shape()[0], dy.shape()[1], dy.shape()[2]);
    let (h, w) = (ho / factor, wo / factor);
    let mut dx = vec![T::ZERO; c * h * w];
    let dyd = dy.data();
    for ch in 0..c {
        for oy in 0..ho {
            let iy = oy / factor;
            for ox in 0..wo {
                dx[(ch * h + iy) * w + ox / factor] += dyd[(ch * ho + oy) * wo + ox];
            }
        }
    }
    Tensor::new(vec![c, h, w], dx).expect("nearest backward shape")
}

/// Source coordinate and blend weights for one output index under
/// half-pixel-centred bilinear resampling with edge clamping.
fn bilinear_axis(out_i: usize, scale: f64, in_len: usize) -> (usize, usize, f64) {
    let src = (out_i as f64 + 0.5) * scale - 0.5;
    let src = src.max(0.0);
    let i0 = src as usize;
    let i0 = i0.min(in_len - 1);
    let i1 = (i0 + 1).min(in_len - 1);
    let frac = (src - i0 as f64).min(1.0);
    (i0, i1, frac)
}

/// Bilinear resize to an arbitrary target size (half-pixel centres).
pub fn bilinear_resize<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut y = vec![T::ZERO; c * out_h * out_w];
    let xd = x.data();
    for oy in 0..out_h {
        let (y0, y1, fy) = bilinear_axis(oy, sy, h);
        for ox in 0..out_w {
            let (x0, x1, fx) = bilinear_axis(ox, sx, w);
            let w00 = T::from_f64((1.0 - fy) * (1.0 - fx));
            let w01 = T::from_f64((1.0 - fy) * fx);
            let w10 = T::from_f64(fy * (1.0 - fx));
            let w11 = T::from_f64(fy * fx);
            for ch in 0..c {
                let base = ch * h * w;
                y[(ch * out_h + oy) * out_w + ox] = xd[base + y0 * w + x0] * w00
                    + xd[base + y0 * w + x1] * w01
                    + xd[base + y1 * w + x0] * w10
                    + xd[base + y1 * w + x1] * w11;
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], y).expect("bilinear shape")
}

/// Adjoint of [`bilinear_resize`]: scatters with the same weights.
pub fn bilinear_resize_backward<T: Scalar>(
    dy: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Tensor<T> {
    let (c, out_h, out_w) = (dy.shape()[0], dy.shape()[1], dy.shape()[2]);
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    let mut dx = vec![T::ZERO; c * in_h * in_w];
    let dyd = dy.data();
    for oy in 0..out_h {
        let (y0, y1, fy) = bilinear_axis(oy, sy, in_h);
        for ox in 0..out_w {
            let (x0, x1, fx) = bilinear_axis(ox, sx, in_w);
            let w00 = T::from_f64((1.0 - fy) * (1.0 - fx));
            let w01 = T::from_f64((1.0 - fy) * fx);
            let w10 = T::from_f64(fy * (1.0 - fx));
            let w11 = T::from_f64(fy * fx);
            for ch in 0..c {
                let g = dyd[(ch * out_h + oy) * out_w + ox];
                let base = ch * in_h * in_w;
                dx[base + y0 * in_w + x0] += g * w00;
                dx[base + y0 * in_w + x1] += g * w01;
                dx[base + y1 * in_w + x0] += g * w10;
                dx[base + y1 * in_w + x1] += g * w11;
            }
        }
    }
    Tensor::new(vec![c, in_h, in_w], dx).expect("bilinear backward shape")
}
