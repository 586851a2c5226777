//! Synthetic multispectral scene generator.
//!
//! Produces tile series with a smooth terrain background, optional
//! pre-existing water bodies, and elliptical flooding events that appear
//! either partway through the series (visible from some step `s` onward and
//! in the post frame) or in the post frame only. Band reflectances follow
//! the usual optical signatures: water suppresses the NIR/SWIR bands hard,
//! which gives any detector a clean physical cue while the per-frame sensor
//! noise keeps the task non-trivial.
//!
//! Every random draw comes from streams derived from the series seed, so a
//! series is a pure function of `(config, seed)`.

use alloc::format;
use alloc::vec::Vec;

use crate::conv::bilinear_resize;
use crate::data::{EventMap, TileFrame, TileSeries};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Number of spectral bands (blue, green, red, NIR, SWIR-1, SWIR-2).
pub const BANDS: usize = 6;

/// Per-band terrain reflectance model `offset + slope * elevation`.
const BAND_PROFILES: [(f64, f64); BANDS] = [
    (0.08, 0.10), // blue
    (0.10, 0.12), // green
    (0.12, 0.15), // red
    (0.30, 0.30), // NIR
    (0.20, 0.25), // SWIR-1
    (0.15, 0.20), // SWIR-2
];

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub tile_size: usize,
    /// Number of pre-event frames per series.
    pub series_len: usize,
    /// Probability of drawing each of the two candidate events
    /// (one mid-series, one post-only).
    pub event_prob: f64,
    /// Standard deviation of the additive per-pixel sensor noise.
    pub noise_level: f64,
    /// Probability of a pre-existing (unchanging) water body.
    pub water_prob: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            tile_size: 32,
            series_len: 4,
            event_prob: 0.7,
            noise_level: 0.01,
            water_prob: 0.3,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size < 8 {
            return Err(Error::InvalidConfig(format!(
                "tile_size {} below minimum 8",
                self.tile_size
            )));
        }
        if self.series_len == 0 {
            return Err(Error::InvalidConfig("series_len must be positive".into()));
        }
        for (name, p) in [("event_prob", self.event_prob), ("water_prob", self.water_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise_level {} must be finite and non-negative",
                self.noise_level
            )));
        }
        Ok(())
    }
}

/// Smooth elevation field in [0, 1]: a coarse random grid upsampled
/// bilinearly to the tile resolution.
fn elevation<T: Scalar>(size: usize, rng: &mut Rng) -> Tensor<T> {
    const COARSE: usize = 5;
    let coarse = Tensor::new(
        alloc::vec![1, COARSE, COARSE],
        (0..COARSE * COARSE)
            .map(|_| T::from_f64(rng.uniform()))
            .collect(),
    )
    .expect("coarse grid construction");
    bilinear_resize(&coarse, size, size)
}

/// Terrain reflectances `[BANDS, size, size]` from an elevation field.
fn terrain_bands<T: Scalar>(elev: &Tensor<T>, size: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(BANDS * size * size);
    for &(offset, slope) in &BAND_PROFILES {
        for &e in elev.data() {
            data.push(T::from_f64(offset) + T::from_f64(slope) * e);
        }
    }
    Tensor::new(alloc::vec![BANDS, size, size], data).expect("terrain construction")
}

/// Filled-ellipse mask `[1, size, size]` with center in the middle half of
/// the tile and radii between size/8 and size/4.
fn ellipse_region<T: Scalar>(size: usize, rng: &mut Rng) -> Tensor<T> {
    let s = size as f64;
    let cy = rng.uniform_range(s * 0.25, s * 0.75);
    let cx = rng.uniform_range(s * 0.25, s * 0.75);
    let ry = rng.uniform_range(s / 8.0, s / 4.0);
    let rx = rng.uniform_range(s / 8.0, s / 4.0);
    let mut mask = Tensor::zeros(&[1, size, size]);
    for y in 0..size {
        for x in 0..size {
            let dy = (y as f64 + 0.5 - cy) / ry;
            let dx = (x as f64 + 0.5 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                mask.data_mut()[y * size + x] = T::ONE;
            }
        }
    }
    mask
}

/// Zeroes `region` wherever `minus` is set; returns the surviving area.
fn subtract_region<T: Scalar>(region: &mut Tensor<T>, minus: &Tensor<T>) -> usize {
    let mut area = 0;
    for (r, &m) in region.data_mut().iter_mut().zip(minus.data()) {
        if m != T::ZERO {
            *r = T::ZERO;
        }
        if *r != T::ZERO {
            area += 1;
        }
    }
    area
}

/// Pixel count of an event region (used for dataset statistics).
pub fn region_area<T: Scalar>(region: &Tensor<T>) -> usize {
    region.data().iter().filter(|&&v| v != T::ZERO).count()
}

/// Stamps the spectral water signature into `bands` over `region`:
/// NIR collapses to the water level `w`, SWIR follows, and the blue/green
/// bands brighten slightly.
fn apply_water<T: Scalar>(bands: &mut Tensor<T>, region: &Tensor<T>, w: f64) {
    let size2 = region.numel();
    let adjust: [Option<f64>; BANDS] = [None, None, None, Some(w), Some(0.9 * w), Some(0.8 * w)];
    let brighten: [f64; BANDS] = [0.05, 0.04, 0.0, 0.0, 0.0, 0.0];
    for (b, (set, bright)) in adjust.iter().zip(brighten).enumerate() {
        for p in 0..size2 {
            if region.data()[p] == T::ZERO {
                continue;
            }
            let v = &mut bands.data_mut()[b * size2 + p];
            *v = match set {
                Some(level) => T::from_f64(*level),
                None => (*v + T::from_f64(bright)).clamp(T::ZERO, T::ONE),
            };
        }
    }
}

/// Adds clamped Gaussian sensor noise to a reflectance map.
fn noisy_copy<T: Scalar>(bands: &Tensor<T>, sigma: f64, rng: &mut Rng) -> Tensor<T> {
    bands.map(|v| (v + T::from_f64(rng.normal() * sigma)).clamp(T::ZERO, T::ONE))
}

/// Generates one tile series as a pure function of `(cfg, seed)`.
///
/// At most two events are drawn: a mid-series flood that appears from a
/// uniformly chosen step `s` in `2..=n` onward (requires `n >= 2`), and a
/// post-only flood. Event regions are carved so they never overlap each
/// other or a pre-existing water body; a candidate whose region is fully
/// swallowed is dropped.
pub fn synth_series<T: Scalar>(cfg: &GenConfig, seed: u64) -> Result<TileSeries<T>> {
    cfg.validate()?;
    let size = cfg.tile_size;
    let n = cfg.series_len;
    let mut terrain_rng = Rng::derive(seed, 1);
    let mut water_rng = Rng::derive(seed, 2);
    let mut event_rng = Rng::derive(seed, 3);
    let mut noise_rng = Rng::derive(seed, 4);

    let elev = elevation::<T>(size, &mut terrain_rng);
    let mut terrain = terrain_bands(&elev, size);

    let mut existing = Tensor::zeros(&[1, size, size]);
    if water_rng.chance(cfg.water_prob) {
        existing = ellipse_region(size, &mut water_rng);
        let w = water_rng.uniform_range(0.02, 0.08);
        apply_water(&mut terrain, &existing, w);
    }

    let mut events = Vec::new();

    // Mid-series event: visible in frames s..=n and in the post frame.
    let mut mid: Option<(usize, Tensor<T>)> = None;
    if n >= 2 && event_rng.chance(cfg.event_prob) {
        let mut region = ellipse_region::<T>(size, &mut event_rng);
        let area = subtract_region(&mut region, &existing);
        let s = 2 + event_rng.below(n - 1);
        let w = event_rng.uniform_range(0.02, 0.08);
        if area > 0 {
            let mut flooded = terrain.clone();
            apply_water(&mut flooded, &region, w);
            events.push(EventMap {
                event_step: s,
                region,
            });
            mid = Some((s, flooded));
        }
    }

    // Post-only event: visible in the post frame alone.
    let mut post_bands = match &mid {
        Some((_, flooded)) => flooded.clone(),
        None => terrain.clone(),
    };
    if event_rng.chance(cfg.event_prob) {
        let mut region = ellipse_region::<T>(size, &mut event_rng);
        let mut area = subtract_region(&mut region, &existing);
        if let Some(first) = events.first() {
            area = subtract_region(&mut region, &first.region);
        }
        let w = event_rng.uniform_range(0.02, 0.08);
        if area > 0 {
            apply_water(&mut post_bands, &region, w);
            events.push(EventMap {
                event_step: n + 1,
                region,
            });
        }
    }

    let frames = (1..=n)
        .map(|i| {
            let src = match &mid {
                Some((s, flooded)) if i >= *s => flooded,
                _ => &terrain,
            };
            TileFrame {
                bands: noisy_copy(src, cfg.noise_level, &mut noise_rng),
                acquisition_index: i,
            }
        })
        .collect();
    let post = TileFrame {
        bands: noisy_copy(&post_bands, cfg.noise_level, &mut noise_rng),
        acquisition_index: n + 1,
    };

    Ok(TileSeries {
        frames,
        post,
        events,
        tile_key: format!("synth-{seed:016x}"),
    })
}

/// A deterministic dataset: series `i` uses a stream derived from
/// `(base_seed, i)`.
pub fn synth_dataset<T: Scalar>(
    cfg: &GenConfig,
    base_seed: u64,
    count: usize,
) -> Result<Vec<TileSeries<T>>> {
    (0..count)
        .map(|i| {
            let mut mix = Rng::derive(base_seed, 0x00da_7a00 + i as u64);
            synth_series(cfg, mix.next_u64())
        })
        .collect()
}
