//! Segmentation losses: binary cross-entropy from logits, Dice, and the
//! composite of the two with its gradient back to the logits.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops::sigmoid_scalar;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DICE_SMOOTH: f64 = 1.0;

fn check_pair<T: Scalar>(op: &'static str, a: &Tensor<T>, mask: &Tensor<T>) -> Result<()> {
    if a.shape() != mask.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: mask.shape().to_vec(),
        });
    }
    if !mask.data().iter().all(|&v| v == T::ZERO || v == T::ONE) {
        return Err(Error::NonBinaryMask);
    }
    Ok(())
}

/// Mean binary cross-entropy computed directly from logits:
/// `max(z,0) - z*y + ln(1 + exp(-|z|))` per element (stable for any z).
pub fn bce_loss<T: Scalar>(logits: &Tensor<T>, mask: &Tensor<T>) -> Result<T> {
    check_pair("bce_loss", logits, mask)?;
    let mut total = T::ZERO;
    for (&z, &y) in logits.data().iter().zip(mask.data()) {
        let pos = if z > T::ZERO { z } else { T::ZERO };
        total += pos - z * y + (T::ONE + (-z.abs()).exp()).ln();
    }
    let loss = total / T::from_f64(logits.numel() as f64);
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "bce_loss".into(),
        });
    }
    Ok(loss)
}

/// Gradient of [`bce_loss`] with respect to the logits:
/// `(sigmoid(z) - y) / N`.
pub fn bce_loss_backward<T: Scalar>(logits: &Tensor<T>, mask: &Tensor<T>) -> Tensor<T> {
    let inv_n = T::ONE / T::from_f64(logits.numel() as f64);
    let data: Vec<T> = logits
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&z, &y)| (sigmoid_scalar(z) - y) * inv_n)
        .collect();
    Tensor::new(logits.shape().to_vec(), data).expect("bce grad shape")
}

/// `1 - (2*sum(p*y) + smooth) / (sum(p) + sum(y) + smooth)`.
pub fn dice_loss<T: Scalar>(probs: &Tensor<T>, mask: &Tensor<T>, smooth: T) -> Result<T> {
    check_pair("dice_loss", probs, mask)?;
    let mut inter = T::ZERO;
    let mut psum = T::ZERO;
    let mut ysum = T::ZERO;
    for (&p, &y) in probs.data().iter().zip(mask.data()) {
        inter += p * y;
        psum += p;
        ysum += y;
    }
    let two = T::from_f64(2.0);
    Ok(T::ONE - (two * inter + smooth) / (psum + ysum + smooth))
}

/// Gradient of [`dice_loss`] with respect to the probabilities:
/// with `A = 2*sum(p*y) + s` and `B = sum(p) + sum(y) + s`,
/// `d/dp_i = (A - 2*y_i*B) / B^2`.
pub fn dice_loss_backward<T: Scalar>(probs: &Tensor<T>, mask: &Tensor<T>, smooth: T) -> Tensor<T> {
    let mut inter = T::ZERO;
    let mut psum = T::ZERO;
    let mut ysum = T::ZERO;
    for (&p, &y) in probs.data().iter().zip(mask.data()) {
        inter += p * y;
        psum += p;
        ysum += y;
    }
    let two = T::from_f64(2.0);
    let a = two * inter + smooth;
    let b = psum + ysum + smooth;
    let inv_b2 = T::ONE / (b * b);
    let data: Vec<T> = mask
        .data()
        .iter()
        .map(|&y| (a - two * y * b) * inv_b2)
        .collect();
    Tensor::new(probs.shape().to_vec(), data).expect("dice grad shape")
}

/// Cross-entropy plus Dice for one prediction, with the combined gradient
/// taken back through the sigmoid to the logits. Returns `(loss, dlogits)`.
pub fn composite_loss<T: Scalar>(
    logits: &Tensor<T>,
    probs: &Tensor<T>,
    mask: &Tensor<T>,
) -> Result<(T, Tensor<T>)> {
    let smooth = T::from_f64(DICE_SMOOTH);
    let loss = bce_loss(logits, mask)? + dice_loss(probs, mask, smooth)?;
    let mut dlogits = bce_loss_backward(logits, mask);
    let ddice = dice_loss_backward(probs, mask, smooth);
    for ((dz, &dp), &p) in dlogits
        .data_mut()
        .iter_mut()
        .zip(ddice.data())
        .zip(probs.data())
    {
        *dz += dp * p * (T::ONE - p);
    }
    Ok((loss, dlogits))
}
