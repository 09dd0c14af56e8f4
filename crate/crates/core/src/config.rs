//! Model and training configuration plus the flat `key = value` file format.
//!
//! Config files hold one assignment per line; `#` starts a comment, values
//! may be quoted, and `[section]` lines are ignored so simple TOML files
//! are accepted too. Later assignments override earlier ones, which is how
//! CLI flags take precedence over file values.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::SegmentationKind;
use crate::tensor::Norm;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    PatReFormer,
    TransE,
    DistMult,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionVariant {
    /// Entity patches attend to relation patches and vice versa.
    Cross,
    /// Entity and relation patches joined into one self-attended sequence.
    FullSelf,
    /// Each tower attends only to its own patches.
    SeparateSelf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PositionalEncoding {
    None,
    Trainable,
    Sinusoidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum UpdateOrder {
    /// The relation tower of a layer reads the already-updated entity tower.
    Sequential,
    /// Both towers read the previous layer's states.
    Simultaneous,
}

/// Denominator of the attention logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionScale {
    /// `sqrt(d)`, the model width.
    Model,
    /// `sqrt(d / H)`, the per-head width.
    Head,
}

macro_rules! names {
    ($ty:ty, $what:literal, { $($v:path => $s:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($v => $s),+ }
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!(
                        concat!("unknown ", $what, " {:?} (expected one of: {})"),
                        other,
                        [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

names!(ModelKind, "model", {
    ModelKind::PatReFormer => "patreformer",
    ModelKind::TransE => "transe",
    ModelKind::DistMult => "distmult",
});
names!(AttentionVariant, "attention variant", {
    AttentionVariant::Cross => "cross",
    AttentionVariant::FullSelf => "full-self",
    AttentionVariant::SeparateSelf => "separate-self",
});
names!(PositionalEncoding, "positional encoding", {
    PositionalEncoding::None => "none",
    PositionalEncoding::Trainable => "trainable",
    PositionalEncoding::Sinusoidal => "sinusoidal",
});
names!(UpdateOrder, "update order", {
    UpdateOrder::Sequential => "sequential",
    UpdateOrder::Simultaneous => "simultaneous",
});
names!(AttentionScale, "attention scale", {
    AttentionScale::Model => "model",
    AttentionScale::Head => "head",
});

fn norm_str(n: Norm) -> &'static str {
    match n {
        Norm::L1 => "l1",
        Norm::L2 => "l2",
    }
}

fn parse_norm(s: &str) -> Result<Norm> {
    match s {
        "l1" => Ok(Norm::L1),
        "l2" => Ok(Norm::L2),
        other => Err(Error::Config(format!("unknown norm {other:?} (l1|l2)"))),
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub patch_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_dim: usize,
    /// Dropout on segmented patches.
    pub p1: f64,
    /// Dropout on attention probabilities and FFN outputs.
    pub p2: f64,
    /// Dropout before the scorer's linear layer.
    pub p3: f64,
    pub attention: AttentionVariant,
    pub positional_encoding: PositionalEncoding,
    pub segmentation: SegmentationKind,
    pub update_order: UpdateOrder,
    pub attention_scale: AttentionScale,
    pub transe_margin: f64,
    pub transe_norm: Norm,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model: ModelKind::PatReFormer,
            entity_dim: 100,
            relation_dim: 500,
            patch_dim: 50,
            heads: 5,
            layers: 2,
            ffn_dim: 200,
            p1: 0.1,
            p2: 0.1,
            p3: 0.4,
            attention: AttentionVariant::Cross,
            positional_encoding: PositionalEncoding::None,
            segmentation: SegmentationKind::Frozen,
            update_order: UpdateOrder::Sequential,
            attention_scale: AttentionScale::Model,
            transe_margin: 12.0,
            transe_norm: Norm::L1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [("p1", self.p1), ("p2", self.p2), ("p3", self.p3)] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1), got {p}"));
            }
        }
        if self.entity_dim == 0 {
            return bad("entity_dim must be positive".into());
        }
        if self.model != ModelKind::PatReFormer {
            return Ok(());
        }
        if self.patch_dim == 0 || self.heads == 0 || !self.patch_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "patch_dim {} must be a positive multiple of heads {}",
                self.patch_dim, self.heads
            ));
        }
        if self.relation_dim == 0 || self.ffn_dim == 0 {
            return bad("relation_dim and ffn_dim must be positive".into());
        }
        if self.segmentation != SegmentationKind::NoSegmentation {
            for (name, dim) in [("entity_dim", self.entity_dim), ("relation_dim", self.relation_dim)] {
                if dim % self.patch_dim != 0 {
                    return bad(format!(
                        "{name} {dim} is not divisible by patch_dim {} ({} segmentation)",
                        self.patch_dim,
                        self.segmentation.as_str()
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub seed: u64,
    /// Validation cadence in epochs; 0 disables validation.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 256,
            epochs: 100,
            label_smoothing: 0.1,
            seed: 0,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label_smoothing must be in [0, 0.5), got {}",
                self.label_smoothing
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

/// Everything needed to reproduce a training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Applies one assignment. Keys accept their canonical names and the
    /// short symbols used in hyperparameter tables (`d_e`, `eta`, ...).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let v = value.trim().trim_matches('"').trim_matches('\'');
        match key.trim() {
            "model" => m.model = v.parse()?,
            "entity_dim" | "d_e" => m.entity_dim = num(key, v)?,
            "relation_dim" | "d_r" => m.relation_dim = num(key, v)?,
            "patch_dim" | "d" => m.patch_dim = num(key, v)?,
            "heads" | "H" => m.heads = num(key, v)?,
            "layers" | "L" => m.layers = num(key, v)?,
            "ffn_dim" | "d_f" => m.ffn_dim = num(key, v)?,
            "p1" => m.p1 = num(key, v)?,
            "p2" => m.p2 = num(key, v)?,
            "p3" => m.p3 = num(key, v)?,
            "attention" => m.attention = v.parse()?,
            "positional_encoding" | "pe" => m.positional_encoding = v.parse()?,
            "segmentation" => m.segmentation = v.parse()?,
            "update_order" => m.update_order = v.parse()?,
            "attention_scale" => m.attention_scale = v.parse()?,
            "transe_margin" => m.transe_margin = num(key, v)?,
            "transe_norm" => m.transe_norm = parse_norm(v)?,
            "lr" | "eta" => t.lr = num(key, v)?,
            "batch_size" | "B" => t.batch_size = num(key, v)?,
            "epochs" => t.epochs = num(key, v)?,
            "label_smoothing" | "epsilon" => t.label_smoothing = num(key, v)?,
            "seed" => t.seed = num(key, v)?,
            "eval_every" => t.eval_every = num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() || line.starts_with('[') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Canonical flat rendering; parsing it back yields an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model", m.model.as_str().into());
        kv("entity_dim", m.entity_dim.to_string());
        kv("relation_dim", m.relation_dim.to_string());
        kv("patch_dim", m.patch_dim.to_string());
        kv("heads", m.heads.to_string());
        kv("layers", m.layers.to_string());
        kv("ffn_dim", m.ffn_dim.to_string());
        kv("p1", m.p1.to_string());
        kv("p2", m.p2.to_string());
        kv("p3", m.p3.to_string());
        kv("attention", m.attention.as_str().into());
        kv("positional_encoding", m.positional_encoding.as_str().into());
        kv("segmentation", m.segmentation.as_str().into());
        kv("update_order", m.update_order.as_str().into());
        kv("attention_scale", m.attention_scale.as_str().into());
        kv("transe_margin", m.transe_margin.to_string());
        kv("transe_norm", norm_str(m.transe_norm).into());
        kv("lr", t.lr.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("label_smoothing", t.label_smoothing.to_string());
        kv("seed", t.seed.to_string());
        kv("eval_every", t.eval_every.to_string());
        s
    }
}
