//! On-disk datasets of synthetic tile series, plus deterministic in-memory
//! generation for runs that do not need files.
//!
//! A dataset directory holds one subdirectory per series:
//!
//! ```text
//! out/
//!   manifest.txt                # count, generator settings, content hash
//!   series_00000/
//!     frame_000.hitr ...        # f32 rasters, 6 bands
//!     post.hitr
//!     event_000.hitr ...        # u8 masks, one per event
//!     events.txt                # tile key + event bookkeeping
//! ```

use crate::config::DataParams;
use crate::CliError;
use hit_core::config::Fnv64;
use hit_core::data::{EventMap, TileFrame, TileSeries};
use hit_core::rng::Rng;
use hit_core::synth::synth_dataset;
use hit_core::wire;
use std::fs;
use std::path::Path;

fn runtime(context: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {err}"))
}

/// Deterministic train/validation generation from disjoint seed streams.
pub fn generate_splits(
    data: &DataParams,
    seed: u64,
) -> Result<(Vec<TileSeries<f32>>, Vec<TileSeries<f32>>), CliError> {
    let gen = data.gen_config();
    let train_seed = Rng::derive(seed, 0xda7a_0051).next_u64();
    let val_seed = Rng::derive(seed, 0xda7a_0052).next_u64();
    let train = synth_dataset::<f32>(&gen, train_seed, data.train_count)
        .map_err(|e| runtime("generate training data", e))?;
    let val = synth_dataset::<f32>(&gen, val_seed, data.val_count)
        .map_err(|e| runtime("generate validation data", e))?;
    Ok((train, val))
}

/// Identifier that pins an in-memory dataset: generator settings plus seed.
pub fn generated_hash(data: &DataParams, seed: u64) -> u64 {
    let mut h = Fnv64::new();
    h.write(
        format!(
            "{} {} {} {} {} {} {} {seed}",
            data.tile_size,
            data.series_len,
            data.event_prob,
            data.noise_level,
            data.water_prob,
            data.train_count,
            data.val_count,
        )
        .as_bytes(),
    );
    h.finish()
}

fn write_raster(path: &Path, x: &hit_core::Tensor<f32>, dtype: wire::RasterDtype) -> Result<(), CliError> {
    let bytes = wire::encode_raster(x, dtype).map_err(|e| runtime("encode raster", e))?;
    fs::write(path, bytes).map_err(|e| runtime(&format!("write {}", path.display()), e))
}

fn read_raster(path: &Path) -> Result<hit_core::Tensor<f32>, CliError> {
    let bytes = fs::read(path).map_err(|e| runtime(&format!("read {}", path.display()), e))?;
    wire::decode_raster(&bytes).map_err(|e| runtime(&format!("decode {}", path.display()), e))
}

/// Writes every series and a manifest carrying the content hash.
pub fn write_dataset(
    dir: &Path,
    series: &[TileSeries<f32>],
    settings: &str,
) -> Result<u64, CliError> {
    fs::create_dir_all(dir).map_err(|e| runtime("create dataset directory", e))?;
    for (i, s) in series.iter().enumerate() {
        let sdir = dir.join(format!("series_{i:05}"));
        fs::create_dir_all(&sdir).map_err(|e| runtime("create series directory", e))?;
        for (f, frame) in s.frames.iter().enumerate() {
            write_raster(
                &sdir.join(format!("frame_{f:03}.hitr")),
                &frame.bands,
                wire::RasterDtype::F32,
            )?;
        }
        write_raster(&sdir.join("post.hitr"), &s.post.bands, wire::RasterDtype::F32)?;
        let mut events = format!("tile_key = {}\ncount = {}\n", s.tile_key, s.events.len());
        for (e, ev) in s.events.iter().enumerate() {
            write_raster(
                &sdir.join(format!("event_{e:03}.hitr")),
                &ev.region,
                wire::RasterDtype::U8,
            )?;
            events.push_str(&format!(
                "event_{e:03}.step = {}\nevent_{e:03}.mask = event_{e:03}.hitr\n",
                ev.event_step
            ));
        }
        fs::write(sdir.join("events.txt"), events)
            .map_err(|e| runtime("write events manifest", e))?;
    }
    let hash = content_hash(dir)?;
    let manifest = format!(
        "count = {}\nhash = {hash:016x}\n# generator settings\n{settings}",
        series.len()
    );
    fs::write(dir.join("manifest.txt"), manifest)
        .map_err(|e| runtime("write dataset manifest", e))?;
    Ok(hash)
}

/// FNV-1a over every series file, in sorted relative-path order. The
/// top-level manifest itself is excluded so the hash can be stored in it.
pub fn content_hash(dir: &Path) -> Result<u64, CliError> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files.sort();
    let mut h = Fnv64::new();
    for rel in files {
        if rel == "manifest.txt" {
            continue;
        }
        h.write(rel.as_bytes());
        let bytes =
            fs::read(dir.join(&rel)).map_err(|e| runtime(&format!("hash {rel}"), e))?;
        h.write(&bytes);
    }
    Ok(h.finish())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), CliError> {
    let entries = fs::read_dir(dir).map_err(|e| runtime("list dataset", e))?;
    for entry in entries {
        let path = entry.map_err(|e| runtime("list dataset", e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("walk stays under the root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

/// Loads every series directory back into memory, in index order.
pub fn load_dataset(dir: &Path) -> Result<Vec<TileSeries<f32>>, CliError> {
    let mut series_dirs = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| runtime("list dataset", e))?;
    for entry in entries {
        let path = entry.map_err(|e| runtime("list dataset", e))?.path();
        if path.is_dir()
            && path
                .file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with("series_"))
        {
            series_dirs.push(path);
        }
    }
    series_dirs.sort();
    let mut out = Vec::new();
    for sdir in series_dirs {
        out.push(load_series(&sdir)?);
    }
    if out.is_empty() {
        return Err(CliError::Runtime(format!(
            "no series directories under {}",
            dir.display()
        )));
    }
    Ok(out)
}

fn load_series(sdir: &Path) -> Result<TileSeries<f32>, CliError> {
    let events_text = fs::read_to_string(sdir.join("events.txt"))
        .map_err(|e| runtime(&format!("read {}/events.txt", sdir.display()), e))?;
    let mut tile_key = None;
    let mut count = None;
    let mut steps = std::collections::BTreeMap::new();
    let mut masks = std::collections::BTreeMap::new();
    for line in events_text.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if k == "tile_key" {
            tile_key = Some(v.to_string());
        } else if k == "count" {
            count = v.parse::<usize>().ok();
        } else if let Some(stem) = k.strip_suffix(".step") {
            steps.insert(
                stem.to_string(),
                v.parse::<usize>()
                    .map_err(|e| runtime("parse event step", e))?,
            );
        } else if let Some(stem) = k.strip_suffix(".mask") {
            masks.insert(stem.to_string(), v.to_string());
        }
    }
    let tile_key =
        tile_key.ok_or_else(|| CliError::Runtime("events.txt lacks tile_key".to_string()))?;
    let count =
        count.ok_or_else(|| CliError::Runtime("events.txt lacks event count".to_string()))?;
    if steps.len() != count || masks.len() != count {
        return Err(CliError::Runtime(format!(
            "events.txt claims {count} events but lists {} steps / {} masks",
            steps.len(),
            masks.len()
        )));
    }
    let mut events = Vec::new();
    for (stem, step) in &steps {
        let mask_file = masks
            .get(stem)
            .ok_or_else(|| CliError::Runtime(format!("event {stem} lacks a mask entry")))?;
        events.push(EventMap {
            event_step: *step,
            region: read_raster(&sdir.join(mask_file))?,
        });
    }

    let mut frames = Vec::new();
    for f in 0.. {
        let path = sdir.join(format!("frame_{f:03}.hitr"));
        if !path.exists() {
            break;
        }
        frames.push(TileFrame {
            bands: read_raster(&path)?,
            acquisition_index: f + 1,
        });
    }
    if frames.is_empty() {
        return Err(CliError::Runtime(format!(
            "series {} has no frames",
            sdir.display()
        )));
    }
    let n = frames.len();
    Ok(TileSeries {
        frames,
        post: TileFrame {
            bands: read_raster(&sdir.join("post.hitr"))?,
            acquisition_index: n + 1,
        },
        events,
        tile_key,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn tiny_params() -> DataParams {
        DataParams {
            tile_size: 16,
            series_len: 3,
            event_prob: 0.8,
            noise_level: 0.01,
            water_prob: 0.5,
            train_count: 4,
            val_count: 2,
        }
    }

    #[test]
    fn generation_is_deterministic_and_splits_are_disjoint() {
        let p = tiny_params();
        let (tr1, va1) = generate_splits(&p, 11).unwrap();
        let (tr2, va2) = generate_splits(&p, 11).unwrap();
        assert_eq!(tr1, tr2);
        assert_eq!(va1, va2);
        assert_eq!(tr1.len(), 4);
        assert_eq!(va1.len(), 2);
        let train_keys: Vec<_> = tr1.iter().map(|s| s.tile_key.clone()).collect();
        assert!(va1.iter().all(|s| !train_keys.contains(&s.tile_key)));
    }

    #[test]
    fn write_then_load_round_trips_exactly() {
        let dir = tempdir().unwrap();
        let (train, _) = generate_splits(&tiny_params(), 5).unwrap();
        let hash = write_dataset(dir.path(), &train, "tile_size = 16\n").unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, train);
        assert_eq!(content_hash(dir.path()).unwrap(), hash);
    }

    #[test]
    fn content_hash_tracks_file_changes() {
        let dir = tempdir().unwrap();
        let (train, _) = generate_splits(&tiny_params(), 5).unwrap();
        let h1 = write_dataset(dir.path(), &train, "").unwrap();
        let frame = dir.path().join("series_00000/frame_000.hitr");
        let mut bytes = fs::read(&frame).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&frame, bytes).unwrap();
        assert_ne!(content_hash(dir.path()).unwrap(), h1);
    }

    #[test]
    fn generated_hash_depends_on_settings_and_seed() {
        let p = tiny_params();
        let a = generated_hash(&p, 1);
        assert_eq!(a, generated_hash(&p, 1));
        assert_ne!(a, generated_hash(&p, 2));
        let mut q = p.clone();
        q.event_prob = 0.9;
        assert_ne!(a, generated_hash(&q, 1));
    }
}
