//! Ablation and relation-dimension sweep harnesses.

use std::fmt::Write as _;

use crate::config::{AttentionVariant, ModelConfig, ModelKind, PositionalEncoding, RunConfig, UpdateOrder};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metrics};
use crate::kg::{Split, TripleStore};
use crate::scalar::Scalar;
use crate::segmentation::SegmentationKind;
use crate::train::{train, TrainOptions};

pub const ABLATION_VARIANTS: [&str; 10] = [
    "full-self-attn",
    "sep-self-attn",
    "tpe",
    "fpe",
    "no-seg",
    "folding",
    "trainable-seg",
    "frozen-seg",
    "simultaneous",
    "sequential",
];

/// The base configuration with the single deviation named by `variant`.
pub fn apply_variant(base: &ModelConfig, variant: &str) -> Result<ModelConfig> {
    let mut c = base.clone();
    match variant {
        "full-self-attn" => c.attention = AttentionVariant::FullSelf,
        "sep-self-attn" => c.attention = AttentionVariant::SeparateSelf,
        "tpe" => c.positional_encoding = PositionalEncoding::Trainable,
        "fpe" => c.positional_encoding = PositionalEncoding::Sinusoidal,
        "no-seg" => c.segmentation = SegmentationKind::NoSegmentation,
        "folding" => c.segmentation = SegmentationKind::Folding,
        "trainable-seg" => c.segmentation = SegmentationKind::Trainable,
        "frozen-seg" => c.segmentation = SegmentationKind::Frozen,
        "simultaneous" => c.update_order = UpdateOrder::Simultaneous,
        "sequential" => c.update_order = UpdateOrder::Sequential,
        other => {
            return Err(Error::Config(format!(
                "unknown variant {other:?}; valid variants: {}",
                ABLATION_VARIANTS.join(", ")
            )))
        }
    }
    c.validate()?;
    Ok(c)
}

/// Trains and evaluates one configuration, returning overall metrics on `split`.
pub fn train_and_score<T: Scalar>(store: &TripleStore, config: &RunConfig, split: Split, opts: &TrainOptions) -> Result<Metrics> {
    let out = train::<T>(store, config, opts, |_| {})?;
    Ok(evaluate(&out.model, store, split, opts.eval_batch.max(1), None)?.overall)
}

fn signed(delta: f64) -> String {
    let marker = if delta > 0.0 {
        "↑"
    } else if delta < 0.0 {
        "↓"
    } else {
        " "
    };
    format!("{delta:+.4}{marker}")
}

/// Base metrics followed by one signed-delta row per variant, in
/// MRR / H@1 / H@3 / H@10 column order.
pub fn delta_table(base_name: &str, base: &Metrics, variants: &[(String, Metrics)]) -> String {
    let width = variants
        .iter()
        .map(|(n, _)| n.len())
        .chain([base_name.len(), 7])
        .max()
        .unwrap_or(7);
    let mut s = format!(
        "{:<width$} {:>9} {:>9} {:>9} {:>9}\n",
        "variant", "MRR", "H@1", "H@3", "H@10"
    );
    let _ = writeln!(
        s,
        "{:<width$} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
        base_name, base.mrr, base.hits1, base.hits3, base.hits10
    );
    for (name, m) in variants {
        let _ = writeln!(
            s,
            "{:<width$} {:>9} {:>9} {:>9} {:>9}",
            name,
            signed(m.mrr - base.mrr),
            signed(m.hits1 - base.hits1),
            signed(m.hits3 - base.hits3),
            signed(m.hits10 - base.hits10)
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub base: Metrics,
    pub variants: Vec<(String, Metrics)>,
}

impl AblationResult {
    pub fn table(&self) -> String {
        delta_table("base", &self.base, &self.variants)
    }
}

/// Trains the base configuration and each named variant with the same
/// budget and seed, evaluating all of them on `split`.
pub fn run_ablation<T: Scalar>(
    store: &TripleStore,
    base: &RunConfig,
    variants: &[&str],
    split: Split,
    opts: &TrainOptions,
) -> Result<AblationResult> {
    let configs = variants
        .iter()
        .map(|v| {
            apply_variant(&base.model, v).map(|model| RunConfig {
                model,
                train: base.train.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let base_metrics = train_and_score::<T>(store, base, split, opts)?;
    let mut out = Vec::with_capacity(variants.len());
    for (name, cfg) in variants.iter().zip(&configs) {
        out.push((name.to_string(), train_and_score::<T>(store, cfg, split, opts)?));
    }
    Ok(AblationResult {
        base: base_metrics,
        variants: out,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub model: ModelKind,
    pub dim: usize,
    pub valid_mrr: f64,
}

/// For the patch model each value sets `d_r`; the baselines share one
/// width for entities and relations, so there it sets `d_e`.
pub fn sweep_config(base: &RunConfig, model: ModelKind, dim: usize) -> Result<RunConfig> {
    let mut c = base.clone();
    c.model.model = model;
    match model {
        ModelKind::PatReFormer => c.model.relation_dim = dim,
        ModelKind::TransE | ModelKind::DistMult => c.model.entity_dim = dim,
    }
    c.validate()?;
    Ok(c)
}

/// Validation MRR for every `(model, dim)` pair, models outermost.
pub fn sweep_relation_dim<T: Scalar>(
    store: &TripleStore,
    dims: &[usize],
    base: &RunConfig,
    models: &[ModelKind],
    opts: &TrainOptions,
) -> Result<Vec<SweepRow>> {
    let configs = models
        .iter()
        .flat_map(|&m| dims.iter().map(move |&d| (m, d)))
        .map(|(m, d)| sweep_config(base, m, d).map(|c| (m, d, c)))
        .collect::<Result<Vec<_>>>()?;
    configs
        .into_iter()
        .map(|(model, dim, cfg)| {
            let valid_mrr = train_and_score::<T>(store, &cfg, Split::Valid, opts)?.mrr;
            Ok(SweepRow { model, dim, valid_mrr })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("model,dim,valid_mrr\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{:.6}", r.model.as_str(), r.dim, r.valid_mrr);
    }
    s
}
