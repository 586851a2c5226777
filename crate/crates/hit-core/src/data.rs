//! Tile-series data model and preprocessing: normalization, tiling,
//! geometric/color augmentation, the temporal paste augmentation, and the
//! event bookkeeping that change masks are derived from.
//!
//! A series holds `n` pre-event frames plus one post frame (index `n+1`).
//! Change is tracked as a list of events, each a binary region appearing at
//! a 1-based step and persisting afterwards. The mask between observations
//! `i < j` is the union of regions with `i < event_step <= j`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One observation of a tile: `[bands, S, S]` normalized reflectances.
#[derive(Debug, Clone, PartialEq)]
pub struct TileFrame<T> {
    pub bands: Tensor<T>,
    /// 1-based position within the series; the post frame is `n+1`.
    pub acquisition_index: usize,
}

/// A persistent change: `region` appears at `event_step` and stays.
/// `event_step == n+1` marks a post-only event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventMap<T> {
    pub event_step: usize,
    /// `[1, S, S]` binary map.
    pub region: Tensor<T>,
}

/// A full training/evaluation sample: pre-event frames, the post frame, and
/// the events that generated them.
#[derive(Debug, Clone, PartialEq)]
pub struct TileSeries<T> {
    pub frames: Vec<TileFrame<T>>,
    pub post: TileFrame<T>,
    pub events: Vec<EventMap<T>>,
    pub tile_key: String,
}

impl<T: Scalar> TileSeries<T> {
    /// Number of pre-event frames.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn tile_size(&self) -> usize {
        self.post.bands.shape()[1]
    }

    /// Change mask between observations `i` and `j` (1-based, `j <= n+1`
    /// where `n+1` addresses the post frame): union of events strictly after
    /// `i` and at or before `j`.
    pub fn mask_between(&self, i: usize, j: usize) -> Result<Tensor<T>> {
        let n = self.len();
        if i == 0 || i > j || j > n + 1 {
            return Err(Error::StepOutOfRange {
                step: j,
                total: n + 1,
            });
        }
        let s = self.tile_size();
        let mut mask = Tensor::zeros(&[1, s, s]);
        for e in &self.events {
            if i < e.event_step && e.event_step <= j {
                for (m, &r) in mask.data_mut().iter_mut().zip(e.region.data()) {
                    if r == T::ONE {
                        *m = T::ONE;
                    }
                }
            }
        }
        Ok(mask)
    }

    /// Target for main-chain step `s`: change versus the previous frame.
    /// Step 1 has no predecessor and targets the all-zero mask.
    pub fn step_mask(&self, s: usize) -> Result<Tensor<T>> {
        if s == 0 || s > self.len() {
            return Err(Error::StepOutOfRange {
                step: s,
                total: self.len(),
            });
        }
        if s == 1 {
            let sz = self.tile_size();
            return Ok(Tensor::zeros(&[1, sz, sz]));
        }
        self.mask_between(s - 1, s)
    }

    /// Target for the branch forked after prefix `i`: change between frame
    /// `i` and the post frame.
    pub fn branch_mask(&self, i: usize) -> Result<Tensor<T>> {
        self.mask_between(i, self.len() + 1)
    }

    pub fn cast<U: Scalar>(&self) -> TileSeries<U> {
        TileSeries {
            frames: self
                .frames
                .iter()
                .map(|f| TileFrame {
                    bands: f.bands.cast(),
                    acquisition_index: f.acquisition_index,
                })
                .collect(),
            post: TileFrame {
                bands: self.post.bands.cast(),
                acquisition_index: self.post.acquisition_index,
            },
            events: self
                .events
                .iter()
                .map(|e| EventMap {
                    event_step: e.event_step,
                    region: e.region.cast(),
                })
                .collect(),
            tile_key: self.tile_key.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Min-max normalization of raw reflectance counts: clamp to `[0, 10000]`,
/// divide by 10000. Expects raw sensor counts, not already-scaled data.
pub fn normalize<T: Scalar>(raw: &Tensor<T>) -> Tensor<T> {
    let hi = T::from_f64(10_000.0);
    raw.map(|v| v.clamp(T::ZERO, hi) / hi)
}

/// Cuts a `[C, H, W]` scene into non-overlapping `[C, tile, tile]` pieces in
/// row-major order; trailing remainders smaller than a tile are dropped.
pub fn cut_tiles<T: Scalar>(scene: &Tensor<T>, tile: usize) -> Result<Vec<Tensor<T>>> {
    if scene.rank() != 3 {
        return Err(Error::ShapeMismatch {
            op: "cut_tiles",
            lhs: scene.shape().to_vec(),
            rhs: vec![],
        });
    }
    let (c, h, w) = (scene.shape()[0], scene.shape()[1], scene.shape()[2]);
    if tile == 0 || h < tile || w < tile {
        return Err(Error::InvalidInput(alloc::format!(
            "scene {h}x{w} smaller than one {tile}x{tile} tile"
        )));
    }
    let (ty, tx) = (h / tile, w / tile);
    let src = scene.data();
    let mut out = Vec::with_capacity(ty * tx);
    for gy in 0..ty {
        for gx in 0..tx {
            let mut data = vec![T::ZERO; c * tile * tile];
            for ch in 0..c {
                for y in 0..tile {
                    let s = (ch * h + gy * tile + y) * w + gx * tile;
                    let d = (ch * tile + y) * tile;
                    data[d..d + tile].copy_from_slice(&src[s..s + tile]);
                }
            }
            out.push(Tensor::new(vec![c, tile, tile], data)?);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Geometric + color augmentation
// ---------------------------------------------------------------------------

/// One sampled geometric transform: rotation by `rot_k * 90` degrees
/// (counter-clockwise), then horizontal flip, then vertical flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeoTransform {
    pub rot_k: u8,
    pub flip_h: bool,
    pub flip_v: bool,
}

impl GeoTransform {
    pub const IDENTITY: GeoTransform = GeoTransform {
        rot_k: 0,
        flip_h: false,
        flip_v: false,
    };

    /// Draws rotation (uniform over 0..4 quarter turns) and both flips
    /// (p = 0.5 each), in that order.
    pub fn sample(rng: &mut Rng) -> Self {
        Self {
            rot_k: rng.below(4) as u8,
            flip_h: rng.chance(0.5),
            flip_v: rng.chance(0.5),
        }
    }
}

fn rot90_ccw<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, s, _) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let src = x.data();
    let mut out = vec![T::ZERO; c * s * s];
    for ch in 0..c {
        for y in 0..s {
            for xx in 0..s {
                // output row y takes input column (s-1-y)
                out[(ch * s + y) * s + xx] = src[(ch * s + xx) * s + (s - 1 - y)];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("rot90 shape")
}

fn flip<T: Scalar>(x: &Tensor<T>, horizontal: bool) -> Tensor<T> {
    let (c, s, _) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let src = x.data();
    let mut out = vec![T::ZERO; c * s * s];
    for ch in 0..c {
        for y in 0..s {
            for xx in 0..s {
                let (sy, sx) = if horizontal { (y, s - 1 - xx) } else { (s - 1 - y, xx) };
                out[(ch * s + y) * s + xx] = src[(ch * s + sy) * s + sx];
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("flip shape")
}

/// Applies a transform to a square `[C, S, S]` map.
pub fn apply_geo<T: Scalar>(x: &Tensor<T>, t: GeoTransform) -> Tensor<T> {
    let mut cur = x.clone();
    for _ in 0..t.rot_k {
        cur = rot90_ccw(&cur);
    }
    if t.flip_h {
        cur = flip(&cur, true);
    }
    if t.flip_v {
        cur = flip(&cur, false);
    }
    cur
}

/// One shared geometric transform for every frame, the post frame, and all
/// event regions, plus per-frame per-band color jitter (gain in
/// `[0.9, 1.1]`, offset in `[-0.02, 0.02]`, re-clamped to `[0, 1]`).
/// Draw order: transform, then per frame in series order (post last) one
/// (gain, offset) pair per band.
pub fn augment_geometric<T: Scalar>(series: TileSeries<T>, rng: &mut Rng) -> TileSeries<T> {
    let t = GeoTransform::sample(rng);
    let jitter = |bands: &Tensor<T>, rng: &mut Rng| -> Tensor<T> {
        let (c, s, _) = (bands.shape()[0], bands.shape()[1], bands.shape()[2]);
        let mut out = apply_geo(bands, t);
        for ch in 0..c {
            let gain = T::from_f64(rng.uniform_range(0.9, 1.1));
            let offset = T::from_f64(rng.uniform_range(-0.02, 0.02));
            let plane = &mut out.data_mut()[ch * s * s..(ch + 1) * s * s];
            for v in plane {
                *v = (*v * gain + offset).clamp(T::ZERO, T::ONE);
            }
        }
        out
    };
    let frames = series
        .frames
        .iter()
        .map(|f| TileFrame {
            bands: jitter(&f.bands, rng),
            acquisition_index: f.acquisition_index,
        })
        .collect();
    let post = TileFrame {
        bands: jitter(&series.post.bands, rng),
        acquisition_index: series.post.acquisition_index,
    };
    let events = series
        .events
        .iter()
        .map(|e| EventMap {
            event_step: e.event_step,
            region: apply_geo(&e.region, t),
        })
        .collect();
    TileSeries {
        frames,
        post,
        events,
        tile_key: series.tile_key,
    }
}

// ---------------------------------------------------------------------------
// Temporal paste (modified CutMix)
// ---------------------------------------------------------------------------

/// Copies donor pixels into `bands` wherever `region` is one.
pub fn paste_region<T: Scalar>(bands: &mut Tensor<T>, donor: &Tensor<T>, region: &Tensor<T>) {
    let (c, s, _) = (bands.shape()[0], bands.shape()[1], bands.shape()[2]);
    let reg = region.data();
    let don = donor.data();
    let dst = bands.data_mut();
    for p in 0..s * s {
        if reg[p] == T::ONE {
            for ch in 0..c {
                dst[ch * s * s + p] = don[ch * s * s + p];
            }
        }
    }
}

fn popcount<T: Scalar>(region: &Tensor<T>) -> usize {
    region.data().iter().filter(|&&v| v == T::ONE).count()
}

/// Inserts a persistent change event: an insertion step `s` is drawn
/// uniformly over frames `2..=n`, donor pixels are pasted into frames
/// `s..=n` and the post frame, and the event is recorded so every derived
/// mask reflects it. Frames before `s` are untouched. A series shorter than
/// two frames or an empty region passes through unchanged.
pub fn cutmix_temporal<T: Scalar>(
    mut series: TileSeries<T>,
    donor: &Tensor<T>,
    region: &Tensor<T>,
    rng: &mut Rng,
) -> Result<TileSeries<T>> {
    if region.shape() != [1, series.tile_size(), series.tile_size()] {
        return Err(Error::ShapeMismatch {
            op: "cutmix_temporal",
            lhs: region.shape().to_vec(),
            rhs: vec![1, series.tile_size(), series.tile_size()],
        });
    }
    if popcount(region) == 0 || series.len() < 2 {
        return Ok(series);
    }
    let n = series.len();
    let s = 2 + rng.below(n - 1);
    for f in series.frames.iter_mut().skip(s - 1) {
        paste_region(&mut f.bands, donor, region);
    }
    paste_region(&mut series.post.bands, donor, region);
    series.events.push(EventMap {
        event_step: s,
        region: region.clone(),
    });
    Ok(series)
}

// ---------------------------------------------------------------------------
// Frame corruption (low-quality observation stand-in)
// ---------------------------------------------------------------------------

/// Degrades one frame in place: every spatial pixel is either dropped to
/// zero across all bands (p = 0.5) or perturbed per band by Gaussian noise
/// with sigma 0.3, then re-clamped to `[0, 1]`.
pub fn corrupt_frame<T: Scalar>(bands: &mut Tensor<T>, rng: &mut Rng) {
    let (c, s, _) = (bands.shape()[0], bands.shape()[1], bands.shape()[2]);
    let data = bands.data_mut();
    for p in 0..s * s {
        if rng.chance(0.5) {
            for ch in 0..c {
                data[ch * s * s + p] = T::ZERO;
            }
        } else {
            for ch in 0..c {
                let noisy =
                    data[ch * s * s + p] + T::from_f64(rng.normal() * 0.3);
                data[ch * s * s + p] = noisy.clamp(T::ZERO, T::ONE);
            }
        }
    }
}
