//! Persistent tile-keyed storage for history embeddings.
//!
//! Layout: one record file per tile key inside the store directory, plus a
//! `manifest.txt` holding the owning model's configuration hash and the
//! record count. Every write goes to a temporary file first and is then
//! renamed over the destination, so a crash mid-write leaves the previous
//! record intact. Writes to the same key must be serialized by the caller
//! (one writer per tile); reads are always safe.

use crate::CliError;
use hit_core::config::Fnv64;
use hit_core::hit::HistoryEmbedding;
use hit_core::wire;
use std::fs;
use std::path::{Path, PathBuf};

const MANIFEST: &str = "manifest.txt";
const RECORD_EXT: &str = "hes";

pub struct HeStore {
    dir: PathBuf,
    config_hash: u64,
}

fn runtime(context: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{context}: {err}"))
}

/// Maps an arbitrary tile key to a unique, filesystem-safe stem: safe
/// characters pass through, everything else is dropped, and a hash of the
/// raw key is appended so distinct keys can never collide.
fn record_stem(key: &str) -> String {
    let safe: String = key
        .chars()
        .filter(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        .collect();
    let mut h = Fnv64::new();
    h.write(key.as_bytes());
    format!("{safe}-{:016x}", h.finish())
}

impl HeStore {
    /// Creates the directory (if needed) and writes a fresh manifest.
    /// Fails if a store with a different configuration hash already lives
    /// there.
    pub fn create(dir: &Path, config_hash: u64) -> Result<Self, CliError> {
        if dir.join(MANIFEST).exists() {
            let existing = Self::open(dir)?;
            if existing.config_hash != config_hash {
                return Err(CliError::Runtime(format!(
                    "store at {} belongs to configuration {:016x}, not {:016x}",
                    dir.display(),
                    existing.config_hash,
                    config_hash
                )));
            }
            return Ok(existing);
        }
        fs::create_dir_all(dir).map_err(|e| runtime("create store directory", e))?;
        let store = Self {
            dir: dir.to_path_buf(),
            config_hash,
        };
        store.write_manifest(0)?;
        Ok(store)
    }

    /// Opens an existing store and checks the manifest against the records
    /// actually present.
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(dir.join(MANIFEST))
            .map_err(|e| runtime(&format!("open store manifest in {}", dir.display()), e))?;
        let mut config_hash = None;
        let mut records = None;
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                match k.trim() {
                    "config_hash" => {
                        config_hash = u64::from_str_radix(v.trim(), 16).ok();
                    }
                    "records" => {
                        records = v.trim().parse::<usize>().ok();
                    }
                    _ => {}
                }
            }
        }
        let config_hash = config_hash
            .ok_or_else(|| CliError::Runtime("store manifest lacks config_hash".to_string()))?;
        let records = records
            .ok_or_else(|| CliError::Runtime("store manifest lacks record count".to_string()))?;
        let store = Self {
            dir: dir.to_path_buf(),
            config_hash,
        };
        let found = store.record_paths()?.len();
        if found != records {
            return Err(CliError::Runtime(format!(
                "store manifest claims {records} records but {found} are present"
            )));
        }
        Ok(store)
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{}.{RECORD_EXT}", record_stem(key)))
    }

    fn record_paths(&self) -> Result<Vec<PathBuf>, CliError> {
        let mut out = Vec::new();
        let entries = fs::read_dir(&self.dir).map_err(|e| runtime("list store", e))?;
        for entry in entries {
            let path = entry.map_err(|e| runtime("list store", e))?.path();
            if path.extension().is_some_and(|e| e == RECORD_EXT) {
                out.push(path);
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn len(&self) -> Result<usize, CliError> {
        Ok(self.record_paths()?.len())
    }

    pub fn is_empty(&self) -> Result<bool, CliError> {
        Ok(self.len()? == 0)
    }

    /// All stored tile keys, sorted.
    pub fn keys(&self) -> Result<Vec<String>, CliError> {
        let mut keys = Vec::new();
        for path in self.record_paths()? {
            let bytes = fs::read(&path).map_err(|e| runtime("read record", e))?;
            let he = wire::decode_he_record(&bytes)
                .map_err(|e| runtime(&format!("decode {}", path.display()), e))?;
            keys.push(he.tile_key);
        }
        keys.sort();
        Ok(keys)
    }

    fn write_manifest(&self, records: usize) -> Result<(), CliError> {
        let body = format!(
            "config_hash = {:016x}\nrecords = {records}\n",
            self.config_hash
        );
        let tmp = self.dir.join(format!("{MANIFEST}.tmp"));
        fs::write(&tmp, body).map_err(|e| runtime("write store manifest", e))?;
        fs::rename(&tmp, self.dir.join(MANIFEST))
            .map_err(|e| runtime("commit store manifest", e))?;
        Ok(())
    }

    fn put_inner(
        &self,
        he: &HistoryEmbedding<f32>,
        fail_before_rename: bool,
    ) -> Result<(), CliError> {
        if he.config_hash != self.config_hash {
            return Err(CliError::Runtime(format!(
                "embedding for {:?} carries configuration {:016x}, store expects {:016x}",
                he.tile_key, he.config_hash, self.config_hash
            )));
        }
        let dest = self.record_path(&he.tile_key);
        let existed = dest.exists();
        let tmp = dest.with_extension("tmp");
        fs::write(&tmp, wire::encode_he_record(he)).map_err(|e| runtime("write record", e))?;
        if fail_before_rename {
            return Err(CliError::Runtime(format!(
                "injected failure before committing {:?}",
                he.tile_key
            )));
        }
        fs::rename(&tmp, &dest).map_err(|e| runtime("commit record", e))?;
        if !existed {
            self.write_manifest(self.len()?)?;
        }
        Ok(())
    }

    /// Stores (or atomically replaces) the record for `he.tile_key`.
    pub fn put(&self, he: &HistoryEmbedding<f32>) -> Result<(), CliError> {
        self.put_inner(he, false)
    }

    /// Test hook for the crash-consistency contract: performs the write up
    /// to (but excluding) the final rename, then fails. The previous record
    /// must survive.
    pub fn put_interrupted(&self, he: &HistoryEmbedding<f32>) -> Result<(), CliError> {
        self.put_inner(he, true)
    }

    pub fn get(&self, key: &str) -> Result<HistoryEmbedding<f32>, CliError> {
        let path = self.record_path(key);
        let bytes = fs::read(&path).map_err(|_| {
            CliError::Runtime(format!("no record for tile key {key:?} in the store"))
        })?;
        let he = wire::decode_he_record(&bytes)
            .map_err(|e| runtime(&format!("decode record for {key:?}"), e))?;
        if he.tile_key != key {
            return Err(CliError::Runtime(format!(
                "record file for {key:?} contains key {:?}",
                he.tile_key
            )));
        }
        Ok(he)
    }

    /// Independent snapshot of a record. The caller may fold further
    /// observations into the copy without affecting the stored trajectory
    /// until it chooses to `put` the result back.
    pub fn fork(&self, key: &str) -> Result<HistoryEmbedding<f32>, CliError> {
        self.get(key)
    }
}
