use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geom::AugmentParams;
use crate::model::{Branch, DecoderConfig, EncoderConfig};

/// Optimization settings shared by pre-training and fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub points_per_cloud: usize,
    pub seed: u64,
    /// Contrastive weight; only used by pre-training.
    pub lambda: f64,
    pub deterministic: bool,
    pub threads: usize,
    pub augment: AugmentParams,
    /// Epochs between intermediate checkpoints; 0 keeps only the final one.
    pub save_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 12,
            epochs: 200,
            lr0: 0.1,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            points_per_cloud: 1024,
            seed: 0,
            lambda: 1.0,
            deterministic: false,
            threads: 1,
            augment: AugmentParams::default(),
            save_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.batch_size > 0
            && self.epochs > 0
            && self.points_per_cloud > 0
            && self.threads > 0
            && self.lr0 > 0.0
            && self.lr0.is_finite()
            && self.adam_eps > 0.0;
        let betas = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        let aug = self.augment.jitter_sigma >= 0.0
            && self.augment.jitter_clip >= 0.0
            && self.augment.scale_lo > 0.0
            && self.augment.scale_lo <= self.augment.scale_hi;
        if !positive || !betas || !aug || !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    /// Worker count actually used; deterministic runs use one.
    pub fn effective_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(format!("train.{k}"), v);
        };
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("lr0", self.lr0.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("adam_eps", self.adam_eps.to_string());
        put("points", self.points_per_cloud.to_string());
        put("seed", self.seed.to_string());
        put("lambda", self.lambda.to_string());
        put("deterministic", self.deterministic.to_string());
        put("jitter_sigma", self.augment.jitter_sigma.to_string());
        put("jitter_clip", self.augment.jitter_clip.to_string());
        put("scale_lo", self.augment.scale_lo.to_string());
        put("scale_hi", self.augment.scale_hi.to_string());
        put("save_interval", self.save_interval.to_string());
        m
    }
}

/// Architecture of encoder and decoder, stored in every checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            decoder: DecoderConfig::default(),
        }
    }
}

pub(crate) fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

pub fn parse_list<T: FromStr>(key: &str, text: &str) -> Result<Vec<T>> {
    text.split(',')
        .map(|s| s.trim().parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("bad list for `{key}`: {text:?}")))
}

pub fn lookup<T: FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = map
        .get(key)
        .ok_or_else(|| Error::ShapeTableMismatch(format!("config snapshot lacks `{key}`")))?;
    v.parse()
        .map_err(|_| Error::ShapeTableMismatch(format!("bad value for `{key}`: {v:?}")))
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let d = &self.decoder;
        let mut m = encoder_to_map(&self.encoder);
        m.insert("model.decoder_widths".into(), join(&d.unit_widths));
        m.insert("model.dropout".into(), d.dropout.to_string());
        m.insert("model.denoise_hidden".into(), d.denoise_hidden.to_string());
        m
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let cfg = Self {
            encoder: encoder_from_map(map)?,
            decoder: DecoderConfig {
                unit_widths: lookup_list(map, "model.decoder_widths")?,
                dropout: lookup(map, "model.dropout")?,
                denoise_hidden: lookup(map, "model.denoise_hidden")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn encoder_to_map(e: &EncoderConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("model.branch".into(), e.branch.as_str().into());
    m.insert("model.k".into(), e.k.to_string());
    m.insert("model.cls_channels".into(), join(&e.cls_channels));
    m.insert("model.seg_channels".into(), join(&e.seg_channels));
    m.insert("model.embedding_dim".into(), e.embedding_dim.to_string());
    m.insert("model.num_categories".into(), e.num_categories.to_string());
    m
}

fn lookup_list(map: &BTreeMap<String, String>, key: &str) -> Result<Vec<usize>> {
    let text: String = lookup(map, key)?;
    parse_list(key, &text).map_err(|e| Error::ShapeTableMismatch(e.to_string()))
}

pub fn encoder_from_map(map: &BTreeMap<String, String>) -> Result<EncoderConfig> {
    let branch: String = lookup(map, "model.branch")?;
    let cfg = EncoderConfig {
        branch: Branch::parse(&branch)?,
        k: lookup(map, "model.k")?,
        cls_channels: lookup_list(map, "model.cls_channels")?,
        seg_channels: lookup_list(map, "model.seg_channels")?,
        embedding_dim: lookup(map, "model.embedding_dim")?,
        num_categories: lookup(map, "model.num_categories")?,
    };
    cfg.validate()?;
    Ok(cfg)
}
