//! 1-vs-all training with label-smoothed binary cross entropy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::kg::{EntityId, RelationId, Split, TripleStore};
use crate::model::{AnyModel, Mode};
use crate::optim::Adam;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};
use crate::SeededRng;

/// Distinct `(entity, relation)` training queries in both directions with
/// their train-split answers, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct QuerySet {
    pub queries: Vec<(EntityId, RelationId)>,
    pub answers: Vec<Vec<EntityId>>,
}

impl QuerySet {
    pub fn from_train(store: &TripleStore) -> Self {
        let mut map: BTreeMap<(EntityId, RelationId), Vec<EntityId>> = BTreeMap::new();
        for t in store.split(Split::Train) {
            map.entry((t.head, t.relation)).or_default().push(t.tail);
            map.entry((t.tail, store.reverse(t.relation))).or_default().push(t.head);
        }
        let (queries, answers) = map
            .into_iter()
            .map(|(q, mut a)| {
                a.sort_unstable();
                a.dedup();
                (q, a)
            })
            .unzip();
        QuerySet { queries, answers }
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    /// Multi-hot `[b × n]` targets for the queries at `idx`.
    pub fn targets<T: Scalar>(&self, idx: &[usize], num_entities: usize) -> Tensor<T> {
        let mut data = vec![T::zero(); idx.len() * num_entities];
        for (row, &i) in idx.iter().enumerate() {
            for &a in &self.answers[i] {
                data[row * num_entities + a] = T::one();
            }
        }
        Tensor::new(&[idx.len(), num_entities], data).expect("target buffer matches shape")
    }
}

/// Label-smoothed BCE of a batch of queries against all entities.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss<T: Scalar>(
    model: &AnyModel<T>,
    g: &Graph<T>,
    heads: &[EntityId],
    rels: &[RelationId],
    targets: &Tensor<T>,
    label_smoothing: f64,
    mode: Mode,
    rng: &mut SeededRng,
) -> Result<Var> {
    let logits = model.logits(g, heads, rels, mode, rng)?;
    let scores = g.sigmoid(logits)?;
    g.bce_smoothed(scores, targets, label_smoothing)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub valid_mrr: Option<f64>,
}

impl EpochLog {
    pub fn csv_line(&self) -> String {
        match self.valid_mrr {
            Some(m) => format!("{},{:.6},{:.6}", self.epoch, self.loss, m),
            None => format!("{},{:.6},", self.epoch, self.loss),
        }
    }
}

pub const LOG_HEADER: &str = "epoch,loss,valid_mrr";

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// When set, the run directory receives `config.txt`, `log.csv` and
    /// `best.ckpt`.
    pub out_dir: Option<PathBuf>,
    pub eval_batch: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Weights with the best validation MRR (the final weights when
    /// validation is disabled).
    pub model: AnyModel<T>,
    pub best_epoch: usize,
    pub best_valid_mrr: Option<f64>,
    pub history: Vec<EpochLog>,
}

impl<T> TrainOutcome<T> {
    pub fn log_csv(&self) -> String {
        let mut s = format!("{LOG_HEADER}\n");
        for e in &self.history {
            let _ = writeln!(s, "{}", e.csv_line());
        }
        s
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Runs one epoch over `queries` in shuffled order and returns the mean
/// batch loss.
pub fn run_epoch<T: Scalar>(
    model: &mut AnyModel<T>,
    opt: &mut Adam,
    queries: &QuerySet,
    batch_size: usize,
    label_smoothing: f64,
    rng: &mut SeededRng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..queries.len()).collect();
    order.shuffle(rng);
    let n = model.num_entities();
    let (mut total, mut batches) = (0.0, 0usize);
    for idx in order.chunks(batch_size.max(1)) {
        let heads: Vec<_> = idx.iter().map(|&i| queries.queries[i].0).collect();
        let rels: Vec<_> = idx.iter().map(|&i| queries.queries[i].1).collect();
        let targets = queries.targets::<T>(idx, n);
        let g = Graph::new();
        let loss = batch_loss(model, &g, &heads, &rels, &targets, label_smoothing, Mode::Train, rng)?;
        let lv = g.value(loss).data()[0].f64();
        if !lv.is_finite() {
            return Err(Error::NonFinite("training loss".into()));
        }
        let grads = g.backward(loss)?;
        opt.step(model.params_mut(), &grads.params())?;
        total += lv;
        batches += 1;
    }
    Ok(total / batches.max(1) as f64)
}

/// Trains the model described by `config` on the train split of `store`,
/// validating every `eval_every` epochs and on the last epoch.
pub fn train<T: Scalar>(
    store: &TripleStore,
    config: &RunConfig,
    opts: &TrainOptions,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let tc = &config.train;
    let mut init_rng = crate::seeded_rng(tc.seed);
    let mut model = AnyModel::<T>::build(&config.model, store.num_entities(), store.num_relation_ids(), &mut init_rng)?;
    let mut rng = crate::seeded_rng(tc.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let queries = QuerySet::from_train(store);
    let mut opt = Adam::new(tc.lr);
    let eval_batch = if opts.eval_batch == 0 { 256 } else { opts.eval_batch };

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("config.txt"), config.to_text().as_bytes())?;
    }

    let mut best: Option<(f64, usize, AnyModel<T>)> = None;
    let mut history = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        let loss = run_epoch(&mut model, &mut opt, &queries, tc.batch_size, tc.label_smoothing, &mut rng)?;
        let validate = tc.eval_every > 0 && (epoch % tc.eval_every == 0 || epoch == tc.epochs);
        let valid_mrr = if validate {
            Some(evaluate(&model, store, Split::Valid, eval_batch, None)?.overall.mrr)
        } else {
            None
        };
        if let Some(m) = valid_mrr {
            if best.as_ref().is_none_or(|(b, _, _)| m > *b) {
                best = Some((m, epoch, model.clone()));
                if let Some(dir) = &opts.out_dir {
                    checkpoint::save(dir.join("best.ckpt"), &model, config, epoch, Some(m))?;
                }
            }
        }
        let entry = EpochLog { epoch, loss, valid_mrr };
        on_epoch(&entry);
        history.push(entry);
        if let Some(dir) = &opts.out_dir {
            let mut s = format!("{LOG_HEADER}\n");
            for e in &history {
                let _ = writeln!(s, "{}", e.csv_line());
            }
            write(&dir.join("log.csv"), s.as_bytes())?;
        }
    }

    let (model, best_epoch, best_valid_mrr) = match best {
        Some((m, e, b)) => (b, e, Some(m)),
        None => {
            if let Some(dir) = &opts.out_dir {
                checkpoint::save(dir.join("best.ckpt"), &model, config, tc.epochs, None)?;
            }
            (model, tc.epochs, None)
        }
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_valid_mrr,
        history,
    })
}
