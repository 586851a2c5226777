//! Oracle for the packaged encoder path: composing the individually verified
//! layer operations by hand must reproduce `encode_plain` exactly, and the
//! masked injection path with a zeroed history projection must reproduce
//! both. Dual routes through independent code paths; equality is bitwise.

use hit_core::config::ModelConfig;
use hit_core::encoder::{block_forward, sincos_pos_encoding, AttnMask};
use hit_core::hit::HistoryEmbedding;
use hit_core::model::HitModel;
use hit_core::rng::Rng;
use hit_core::tensor::Tensor;

fn toy_config() -> ModelConfig {
    ModelConfig {
        image_size: 16,
        patch_size: 4,
        bands: 3,
        embed_dim: 8,
        depth: 4,
        heads: 2,
        mlp_ratio: 2.0,
        fuse_stage: 2,
        he_grid: 2,
        he_dim: 4,
        decoder_taps: vec![1, 2, 4],
        decoder_channels: 4,
        learned_initial_he: true,
    }
}

fn random_image(cfg: &ModelConfig, rng: &mut Rng) -> Tensor<f64> {
    let n = cfg.bands * cfg.image_size * cfg.image_size;
    Tensor::new(
        vec![cfg.bands, cfg.image_size, cfg.image_size],
        (0..n).map(|_| rng.uniform()).collect(),
    )
    .unwrap()
}

#[test]
fn packaged_encoder_equals_hand_composed_layer_stack() {
    let cfg = toy_config();
    let (model, ps) = HitModel::<f64>::new(cfg.clone(), 21).unwrap();
    let mut rng = Rng::derive(22, 0);
    let image = random_image(&cfg, &mut rng);

    let packaged = model.encode_plain(&ps, &image).unwrap();

    // Hand composition from the primitive layer calls, including an
    // independently rebuilt positional table.
    let grid = cfg.image_size / cfg.patch_size;
    let pos = sincos_pos_encoding::<f64>(grid, grid, cfg.embed_dim).unwrap();
    let (mut x, _) = model
        .encoder
        .patch
        .forward(&ps, &image, cfg.patch_size)
        .unwrap();
    x.add_assign(&pos).unwrap();
    let mut manual = Vec::new();
    for (i, bp) in model.encoder.blocks.iter().enumerate() {
        let (next, _) = block_forward(&ps, bp, &x, cfg.heads, AttnMask::None).unwrap();
        x = next;
        if cfg.decoder_taps.contains(&(i + 1)) {
            manual.push(x.clone());
        }
    }

    assert_eq!(manual.len(), packaged.len());
    for (m, p) in manual.iter().zip(&packaged) {
        assert!(m == p, "hand-composed tap differs from packaged encoder");
    }
}

#[test]
fn masked_injection_with_zero_projection_equals_hand_composition() {
    let cfg = toy_config();
    let (model, mut ps) = HitModel::<f64>::new(cfg.clone(), 23).unwrap();
    let mut rng = Rng::derive(24, 0);
    let image = random_image(&cfg, &mut rng);

    // Silence the history pathway: zero projection makes the appended
    // tokens constant, and the mask removes even their normalization
    // influence on image queries.
    for id in [model.hit.project_in_w, model.hit.project_in_b] {
        for v in ps.get_mut(id).data_mut() {
            *v = 0.0;
        }
    }
    let he = HistoryEmbedding {
        values: Tensor::zeros(&[cfg.he_grid * cfg.he_grid, cfg.he_dim]),
        tile_key: "oracle".to_string(),
        config_hash: cfg.hash(),
        timestamp: 0,
        step_count: 0,
    };
    let n_img = (cfg.image_size / cfg.patch_size).pow(2);
    let (out, _) = model
        .hit_step(
            &ps,
            &image,
            &he,
            1,
            AttnMask::ImageIgnoresTail { n_img },
        )
        .unwrap();

    let plain = model.encode_plain(&ps, &image).unwrap();
    for (a, b) in out.taps.iter().zip(&plain) {
        assert!(a == b, "masked injection tap differs from plain encoder");
    }
}
