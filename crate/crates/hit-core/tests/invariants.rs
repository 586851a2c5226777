//! Property-based checks for the numeric kernels, the mask algebra, and the
//! wire formats, plus a smoke test of the smallest legal model shape.

use hit_core::config::ModelConfig;
use hit_core::data::{cutmix_temporal, EventMap, TileFrame, TileSeries};
use hit_core::encoder::{block_forward, AttnMask, BlockParams};
use hit_core::metrics::f1_change;
use hit_core::model::HitModel;
use hit_core::ops;
use hit_core::params::ParamSet;
use hit_core::rng::Rng;
use hit_core::tensor::Tensor;
use hit_core::wire;
use proptest::prelude::*;

fn tensor_from(shape: Vec<usize>, values: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape, values).expect("generated shape matches value count")
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(
        rows in 1usize..5,
        cols in 1usize..7,
        raw in prop::collection::vec(-30.0f64..30.0, 1..35),
    ) {
        prop_assume!(raw.len() >= rows * cols);
        let x = tensor_from(vec![rows, cols], raw[..rows * cols].to_vec());
        let y = ops::softmax_rows(&x);
        for i in 0..rows {
            let row = y.row(i);
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-6, "row {i} sums to {sum}");
            for &v in row {
                prop_assert!((0.0..=1.0).contains(&v), "entry {v} outside [0,1]");
            }
        }
    }

    #[test]
    fn layer_norm_standardizes_rows_before_affine(
        rows in 1usize..4,
        cols in 2usize..9,
        raw in prop::collection::vec(-10.0f64..10.0, 2..36),
    ) {
        prop_assume!(raw.len() >= rows * cols);
        let vals = &raw[..rows * cols];
        // Skip near-constant rows, where the eps guard dominates the variance.
        for i in 0..rows {
            let row = &vals[i * cols..(i + 1) * cols];
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &v in row {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            prop_assume!(hi - lo > 0.5);
        }
        let x = tensor_from(vec![rows, cols], vals.to_vec());
        let gamma = Tensor::ones(&[cols]);
        let beta = Tensor::zeros(&[cols]);
        let (_, cache) = ops::layer_norm_forward(&x, &gamma, &beta, 1e-6).unwrap();
        for i in 0..rows {
            let row = cache.xhat.row(i);
            let mean: f64 = row.iter().sum::<f64>() / cols as f64;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                / cols as f64;
            prop_assert!(mean.abs() < 1e-6, "row {i} mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-4, "row {i} variance {var}");
        }
    }

    #[test]
    fn attention_rows_are_distributions_with_and_without_mask(
        seed in any::<u64>(),
        n_img in 2usize..5,
        n_tail in 0usize..3,
    ) {
        let n = n_img + n_tail;
        let mut rng = Rng::derive(seed, 0xa77);
        let mut ps = ParamSet::<f64>::new();
        let bp = BlockParams::init("b", 8, 16, &mut ps, &mut rng);
        let x = tensor_from(
            vec![n, 8],
            (0..n * 8).map(|_| rng.uniform_range(-1.0, 1.0)).collect(),
        );
        for mask in [AttnMask::None, AttnMask::ImageIgnoresTail { n_img }] {
            let (_, cache) = block_forward(&ps, &bp, &x, 2, mask).unwrap();
            for (h, a) in cache.attn.iter().enumerate() {
                for i in 0..n {
                    let row = a.row(i);
                    let sum: f64 = row.iter().sum();
                    prop_assert!(
                        (sum - 1.0).abs() <= 1e-6,
                        "head {h} row {i} sums to {sum} under {mask:?}"
                    );
                    for (j, &v) in row.iter().enumerate() {
                        prop_assert!((0.0..=1.0).contains(&v));
                        if matches!(mask, AttnMask::ImageIgnoresTail { .. })
                            && i < n_img
                            && j >= n_img
                        {
                            prop_assert!(v == 0.0, "masked weight {v} at ({i},{j})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pairwise_masks_compose_by_union(
        n in 2usize..6,
        specs in prop::collection::vec((0usize..64, 2usize..7), 0..4),
        region_seed in any::<u64>(),
    ) {
        let size = 8;
        let mut rng = Rng::derive(region_seed, 0x5e6);
        let events: Vec<EventMap<f64>> = specs
            .iter()
            .map(|&(_, step_raw)| {
                let step = 2 + step_raw % n; // in 2..=n+1
                let region = tensor_from(
                    vec![1, size, size],
                    (0..size * size)
                        .map(|_| if rng.chance(0.2) { 1.0 } else { 0.0 })
                        .collect(),
                );
                EventMap { event_step: step, region }
            })
            .collect();
        let series = blank_series(n, size, events);

        for i in 1..=n {
            let same = series.mask_between(i, i).unwrap();
            prop_assert!(same.data().iter().all(|&v| v == 0.0));
        }
        for i in 1..=n {
            for j in i..=n + 1 {
                for k in j..=n + 1 {
                    let ik = series.mask_between(i, k).unwrap();
                    let ij = series.mask_between(i, j).unwrap();
                    let jk = series.mask_between(j, k).unwrap();
                    for ((&a, &b), &c) in
                        ik.data().iter().zip(ij.data()).zip(jk.data())
                    {
                        let union = if b == 1.0 || c == 1.0 { 1.0 } else { 0.0 };
                        prop_assert!(a == union, "mask({i},{k}) disagrees with union");
                    }
                }
            }
        }
    }

    #[test]
    fn cutmix_preserves_history_before_the_insertion_step(
        n in 2usize..6,
        seed in any::<u64>(),
    ) {
        let size = 8;
        let mut rng = Rng::derive(seed, 0xc07);
        let base = blank_series(n, size, Vec::new());
        let donor = tensor_from(
            vec![6, size, size],
            (0..6 * size * size).map(|_| rng.uniform()).collect(),
        );
        let region = tensor_from(
            vec![1, size, size],
            (0..size * size)
                .map(|_| if rng.chance(0.3) { 1.0 } else { 0.0 })
                .collect(),
        );
        let mixed = cutmix_temporal(base.clone(), &donor, &region, &mut rng).unwrap();
        if region.data().iter().all(|&v| v == 0.0) {
            prop_assert!(mixed == base);
            return Ok(());
        }
        let event = mixed.events.last().expect("insertion recorded");
        let s = event.event_step;
        prop_assert!((2..=n).contains(&s));
        prop_assert!(event.region == region);
        for i in 0..s - 1 {
            prop_assert!(
                mixed.frames[i].bands == base.frames[i].bands,
                "frame {} changed before insertion step {s}",
                i + 1
            );
        }
        // Pasted pixels carry donor values in every frame from s on.
        let reg = region.data();
        for f in mixed.frames[s - 1..].iter().chain([&mixed.post]) {
            for p in 0..size * size {
                if reg[p] == 1.0 {
                    for c in 0..6 {
                        let idx = c * size * size + p;
                        prop_assert!(f.bands.data()[idx] == donor.data()[idx]);
                    }
                }
            }
        }
        // The recorded event flows into the derived masks.
        let full = mixed.mask_between(1, n + 1).unwrap();
        for (p, &r) in reg.iter().enumerate() {
            if r == 1.0 {
                prop_assert!(full.data()[p] == 1.0);
            }
        }
    }

    #[test]
    fn f1_is_invariant_under_monotone_probability_transforms(
        raw in prop::collection::vec(0.0f64..1.0, 16),
        mask_bits in prop::collection::vec(any::<bool>(), 16),
    ) {
        let probs = tensor_from(vec![1, 4, 4], raw.clone());
        // p -> p^2 is strictly monotone on [0,1]; the threshold maps with it.
        let squared = tensor_from(vec![1, 4, 4], raw.iter().map(|&p| p * p).collect());
        let mask = tensor_from(
            vec![1, 4, 4],
            mask_bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        );
        let a = f1_change(&probs, &mask, 0.5).unwrap();
        let b = f1_change(&squared, &mask, 0.25).unwrap();
        prop_assert!(a == b, "f1 {a} changed to {b} under p -> p^2");
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        shapes in prop::collection::vec(prop::collection::vec(1usize..4, 1..4), 1..4),
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::derive(seed, 0xc4e);
        let mut ps = ParamSet::<f32>::new();
        for (i, shape) in shapes.iter().enumerate() {
            let n: usize = shape.iter().product();
            let vals: Vec<f32> = (0..n)
                .map(|_| rng.uniform_range(-1e4, 1e4) as f32)
                .collect();
            ps.add(&format!("p{i}"), Tensor::new(shape.clone(), vals).unwrap());
        }
        let bytes = wire::encode_checkpoint(&ps);
        let mut restored = ps.clone();
        for (j, _) in shapes.iter().enumerate() {
            let id = restored.id_of(&format!("p{j}")).unwrap();
            for v in restored.get_mut(id).data_mut() {
                *v = 0.0;
            }
        }
        wire::load_checkpoint(&mut restored, &bytes).unwrap();
        for (i, _) in shapes.iter().enumerate() {
            let id = ps.id_of(&format!("p{i}")).unwrap();
            prop_assert!(ps.get(id) == restored.get(id));
        }
    }

    #[test]
    fn raster_round_trips_are_bit_exact(
        c in 1usize..4,
        h in 1usize..5,
        w in 1usize..5,
        seed in any::<u64>(),
    ) {
        let mut rng = Rng::derive(seed, 0x4a5);
        let f32_vals: Vec<f32> = (0..c * h * w)
            .map(|_| rng.uniform_range(-100.0, 100.0) as f32)
            .collect();
        let x = Tensor::new(vec![c, h, w], f32_vals).unwrap();
        let bytes = wire::encode_raster(&x, wire::RasterDtype::F32).unwrap();
        prop_assert!(wire::decode_raster(&bytes).unwrap() == x);

        let u8_vals: Vec<f32> = (0..c * h * w)
            .map(|_| rng.below(256) as f32)
            .collect();
        let m = Tensor::new(vec![c, h, w], u8_vals).unwrap();
        let bytes = wire::encode_raster(&m, wire::RasterDtype::U8).unwrap();
        prop_assert!(wire::decode_raster(&bytes).unwrap() == m);
    }
}

fn blank_series(n: usize, size: usize, events: Vec<EventMap<f64>>) -> TileSeries<f64> {
    let frames = (1..=n)
        .map(|i| TileFrame {
            bands: Tensor::full(&[6, size, size], 0.4),
            acquisition_index: i,
        })
        .collect();
    TileSeries {
        frames,
        post: TileFrame {
            bands: Tensor::full(&[6, size, size], 0.4),
            acquisition_index: n + 1,
        },
        events,
        tile_key: "prop".to_string(),
    }
}

/// The smallest configuration every shape rule permits: one block that is
/// both the fuse stage and the only decoder tap.
#[test]
fn minimal_depth_one_model_trains_a_step() {
    let cfg = ModelConfig {
        image_size: 8,
        patch_size: 4,
        bands: 2,
        embed_dim: 8,
        depth: 1,
        heads: 2,
        mlp_ratio: 2.0,
        fuse_stage: 1,
        he_grid: 2,
        he_dim: 4,
        decoder_taps: vec![1],
        decoder_channels: 4,
        learned_initial_he: true,
    };
    let (model, mut ps) = HitModel::<f64>::new(cfg, 7).unwrap();
    for n in [1usize, 2] {
        let mut rng = Rng::derive(99, n as u64);
        let mut series = blank_series(n, 8, Vec::new());
        for f in series.frames.iter_mut().chain([&mut series.post]) {
            f.bands = Tensor::new(
                vec![2, 8, 8],
                (0..2 * 8 * 8).map(|_| rng.uniform()).collect(),
            )
            .unwrap();
        }
        let mut grads = ps.zero_grads();
        let loss = model
            .series_loss_and_grad(&ps, &series, &mut grads)
            .unwrap();
        assert!(loss.is_finite() && loss > 0.0, "n={n} loss {loss}");
        let moved: usize = grads
            .iter()
            .map(|g| g.data().iter().filter(|v| **v != 0.0).count())
            .sum();
        assert!(moved > 0, "n={n}: no gradient reached any parameter");
    }
    let _ = &mut ps;
}
