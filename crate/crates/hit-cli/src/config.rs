//! Flat `key = value` configuration covering the model, the training
//! schedule, and the synthetic-data generator. Keys are namespaced with
//! dots (`model.fuse_stage`, `train.epochs`, `data.tile_size`); parsing an
//! unknown key is a usage error naming the offending token. Serialization
//! emits every key in a fixed order, so parse -> serialize -> parse is a
//! fixed point.

use crate::CliError;
use hit_core::config::ModelConfig;
use hit_core::synth::GenConfig;

/// Training-schedule settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    /// Independent runs (fresh seeds) per configuration in sweeps.
    pub runs: usize,
    /// Stop once validation F1 reaches this value; 0 disables.
    pub early_stop_f1: f64,
    /// Probability of degrading one random pre frame of a training series
    /// per epoch (robustness augmentation); 0 disables.
    pub corrupt_prob: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 50,
            lr_max: 1e-4,
            lr_min: 1e-6,
            batch_size: 4,
            runs: 3,
            early_stop_f1: 0.0,
            corrupt_prob: 0.0,
        }
    }
}

/// Synthetic-dataset settings: generator knobs plus sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DataParams {
    pub tile_size: usize,
    pub series_len: usize,
    pub event_prob: f64,
    pub noise_level: f64,
    pub water_prob: f64,
    pub train_count: usize,
    pub val_count: usize,
}

impl Default for DataParams {
    fn default() -> Self {
        let g = GenConfig::default();
        Self {
            tile_size: g.tile_size,
            series_len: g.series_len,
            event_prob: g.event_prob,
            noise_level: g.noise_level,
            water_prob: g.water_prob,
            train_count: 200,
            val_count: 50,
        }
    }
}

impl DataParams {
    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            tile_size: self.tile_size,
            series_len: self.series_len,
            event_prob: self.event_prob,
            noise_level: self.noise_level,
            water_prob: self.water_prob,
        }
    }
}

/// Everything a run needs, with all defaults materialized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AppConfig {
    pub model: ModelConfig,
    pub train: TrainParams,
    pub data: DataParams,
}

fn usage(msg: String) -> CliError {
    CliError::Usage(msg)
}

fn parse_num<T: core::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .trim()
        .parse()
        .map_err(|_| usage(format!("invalid value {value:?} for key {key:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(usage(format!(
            "invalid value {other:?} for key {key:?} (expected true or false)"
        ))),
    }
}

fn parse_taps(key: &str, value: &str) -> Result<Vec<usize>, CliError> {
    value
        .split(',')
        .map(|p| parse_num(key, p))
        .collect::<Result<Vec<usize>, _>>()
}

fn taps_to_string(taps: &[usize]) -> String {
    taps.iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl AppConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key.trim() {
            "model.image_size" => self.model.image_size = parse_num(key, v)?,
            "model.patch_size" => self.model.patch_size = parse_num(key, v)?,
            "model.bands" => self.model.bands = parse_num(key, v)?,
            "model.embed_dim" => self.model.embed_dim = parse_num(key, v)?,
            "model.depth" => self.model.depth = parse_num(key, v)?,
            "model.heads" => self.model.heads = parse_num(key, v)?,
            "model.mlp_ratio" => self.model.mlp_ratio = parse_num(key, v)?,
            "model.fuse_stage" => self.model.fuse_stage = parse_num(key, v)?,
            "model.he_grid" => self.model.he_grid = parse_num(key, v)?,
            "model.he_dim" => self.model.he_dim = parse_num(key, v)?,
            "model.decoder_taps" => self.model.decoder_taps = parse_taps(key, v)?,
            "model.decoder_channels" => self.model.decoder_channels = parse_num(key, v)?,
            "model.learned_initial_he" => self.model.learned_initial_he = parse_bool(key, v)?,
            "train.epochs" => self.train.epochs = parse_num(key, v)?,
            "train.lr_max" => self.train.lr_max = parse_num(key, v)?,
            "train.lr_min" => self.train.lr_min = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.runs" => self.train.runs = parse_num(key, v)?,
            "train.early_stop_f1" => self.train.early_stop_f1 = parse_num(key, v)?,
            "train.corrupt_prob" => self.train.corrupt_prob = parse_num(key, v)?,
            "data.tile_size" => self.data.tile_size = parse_num(key, v)?,
            "data.series_len" => self.data.series_len = parse_num(key, v)?,
            "data.event_prob" => self.data.event_prob = parse_num(key, v)?,
            "data.noise_level" => self.data.noise_level = parse_num(key, v)?,
            "data.water_prob" => self.data.water_prob = parse_num(key, v)?,
            "data.train_count" => self.data.train_count = parse_num(key, v)?,
            "data.val_count" => self.data.val_count = parse_num(key, v)?,
            unknown => return Err(usage(format!("unknown configuration key {unknown:?}"))),
        }
        Ok(())
    }

    /// Parses a whole file body. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines on top of the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                usage(format!(
                    "line {}: expected `key = value`, got {line:?}",
                    lineno + 1
                ))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    /// Emits every key in a fixed order.
    pub fn serialize(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        format!(
            "model.image_size = {}\n\
             model.patch_size = {}\n\
             model.bands = {}\n\
             model.embed_dim = {}\n\
             model.depth = {}\n\
             model.heads = {}\n\
             model.mlp_ratio = {}\n\
             model.fuse_stage = {}\n\
             model.he_grid = {}\n\
             model.he_dim = {}\n\
             model.decoder_taps = {}\n\
             model.decoder_channels = {}\n\
             model.learned_initial_he = {}\n\
             train.epochs = {}\n\
             train.lr_max = {}\n\
             train.lr_min = {}\n\
             train.batch_size = {}\n\
             train.runs = {}\n\
             train.early_stop_f1 = {}\n\
             train.corrupt_prob = {}\n\
             data.tile_size = {}\n\
             data.series_len = {}\n\
             data.event_prob = {}\n\
             data.noise_level = {}\n\
             data.water_prob = {}\n\
             data.train_count = {}\n\
             data.val_count = {}\n",
            m.image_size,
            m.patch_size,
            m.bands,
            m.embed_dim,
            m.depth,
            m.heads,
            m.mlp_ratio,
            m.fuse_stage,
            m.he_grid,
            m.he_dim,
            taps_to_string(&m.decoder_taps),
            m.decoder_channels,
            m.learned_initial_he,
            t.epochs,
            t.lr_max,
            t.lr_min,
            t.batch_size,
            t.runs,
            t.early_stop_f1,
            t.corrupt_prob,
            d.tile_size,
            d.series_len,
            d.event_prob,
            d.noise_level,
            d.water_prob,
            d.train_count,
            d.val_count,
        )
    }

    /// Validates the combined settings before a run starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.model
            .validate()
            .map_err(|e| usage(format!("model configuration: {e}")))?;
        self.data
            .gen_config()
            .validate()
            .map_err(|e| usage(format!("data configuration: {e}")))?;
        if self.train.epochs == 0 {
            return Err(usage("train.epochs must be at least 1".to_string()));
        }
        if self.train.batch_size == 0 {
            return Err(usage("train.batch_size must be at least 1".to_string()));
        }
        if self.train.runs == 0 {
            return Err(usage("train.runs must be at least 1".to_string()));
        }
        if !(0.0..=1.0).contains(&self.train.corrupt_prob) {
            return Err(usage("train.corrupt_prob must lie in [0, 1]".to_string()));
        }
        Ok(())
    }
}
