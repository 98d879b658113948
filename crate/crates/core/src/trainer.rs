//! Warm-started sequential training with consolidation and the None, Joint
//! and EWC reference methods.

use indexmap::IndexMap;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::interp::{consolidate, pad_head, Consolidation};
use crate::metrics::AccuracyMatrix;
use crate::nn::{sgd_step, Architecture, BackboneConfig, Mode, Network, SgdConfig};
use crate::params::ParamTree;
use crate::scenarios::{Dataset, TaskStream};

/// Continual-learning strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ClMethod {
    /// Plain fine-tuning.
    None,
    /// Retrain from scratch on the union of all training sets so far.
    Joint,
    /// Merge each newly trained model with the carried one.
    Consolidate(Consolidation),
    /// Quadratic penalty `reg * sum F (theta - theta*)^2` anchored at the
    /// previous task's solution.
    Ewc { reg: f64, fisher_samples: usize },
}

impl ClMethod {
    pub fn validate(&self) -> Result<()> {
        match self {
            ClMethod::Consolidate(c) => c.validate(),
            ClMethod::Ewc { reg, fisher_samples } => {
                if !(*reg > 0.0 && reg.is_finite()) || *fisher_samples == 0 {
                    return Err(Error::Config("ewc needs reg > 0 and fisher_samples >= 1".into()));
                }
                Ok(())
            }
            ClMethod::None | ClMethod::Joint => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ClMethod::None => "none",
            ClMethod::Joint => "joint",
            ClMethod::Consolidate(_) => "consolidate",
            ClMethod::Ewc { .. } => "ewc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    CompactCnn(BackboneConfig),
    Linear,
}

impl Default for Backbone {
    fn default() -> Self {
        Backbone::CompactCnn(BackboneConfig::default())
    }
}

impl Backbone {
    pub fn build(&self, input_dim: usize, n_classes: usize) -> Result<Architecture> {
        match self {
            Backbone::CompactCnn(cfg) => Architecture::compact_cnn(input_dim, n_classes, cfg),
            Backbone::Linear => Ok(Architecture::linear(input_dim, n_classes)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub sgd: SgdConfig,
    pub backbone: Backbone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Train,
    Consolidate,
    Evaluate,
}

/// One JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub task: usize,
    pub event: Event,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epoch_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub shifts: IndexMap<String, f64>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub lambdas: IndexMap<String, f64>,
    /// Accuracy per task index; `None` where the head cannot score the task.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub accuracies: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

impl RunLog {
    pub fn to_json_lines(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record serializes") + "\n")
            .collect()
    }

    /// Per-layer coefficients chosen at each consolidation, keyed by task.
    pub fn lambda_trace(&self) -> Vec<(usize, &IndexMap<String, f64>)> {
        self.records
            .iter()
            .filter(|r| r.event == Event::Consolidate)
            .map(|r| (r.task, &r.lambdas))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub accuracy: AccuracyMatrix,
    /// Model carried out of each task (after consolidation, if any).
    pub carried: Vec<Checkpoint>,
    /// Model produced by training on each task, before consolidation.
    pub trained: Vec<Checkpoint>,
    pub log: RunLog,
}

fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const TAG_INIT: u64 = 1;
const TAG_HEAD: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const TAG_FISHER: u64 = 4;

const EVAL_CHUNK: usize = 1024;

/// Fraction of argmax-correct eval-mode predictions (ties go to the lowest
/// class index).
pub fn evaluate(net: &Network, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let k = net.n_classes();
    if let Some(&bad) = dataset.labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let logits = net.predict(&dataset.features.select_rows(chunk))?;
        correct += logits
            .argmax_rows()
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p == dataset.labels[i])
            .count();
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Anchor for the EWC penalty.
struct EwcAnchor {
    fisher: ParamTree,
    optimum: ParamTree,
}

/// Adds `2 reg F (theta - theta*)` over the leading entries each tensor
/// shares with the anchor (a grown head keeps its old rows first).
fn add_ewc_grad(grads: &mut ParamTree, params: &ParamTree, anchor: &EwcAnchor, reg: f64) {
    for (key, g) in grads.iter_mut() {
        let (Some(f), Some(opt), Some(p)) = (anchor.fisher.get(key), anchor.optimum.get(key), params.get(key)) else {
            continue;
        };
        let n = f.len().min(p.len());
        let g = g.data_mut();
        for i in 0..n {
            g[i] += 2.0 * reg * f.data()[i] * (p.data()[i] - opt.data()[i]);
        }
    }
}

/// Diagonal Fisher from squared minibatch gradients of labels sampled from
/// the model's own eval-mode predictive distribution.
fn estimate_fisher(net: &Network, data: &Dataset, batch_size: usize, samples: usize, seed: u64) -> Result<ParamTree> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fisher = net.params().zeros_like();
    for _ in 0..samples {
        let rows: Vec<usize> = (0..batch_size.min(data.len()))
            .map(|_| rng.random_range(0..data.len()))
            .collect();
        let x = data.features.select_rows(&rows);
        let (logits, cache) = net.forward(&x, Mode::Eval, &mut rng)?;
        let labels = (0..logits.rows())
            .map(|i| {
                let row = logits.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = row.iter().map(|z| (z - max).exp()).collect();
                WeightedIndex::new(&w)
                    .map(|d| d.sample(&mut rng))
                    .map_err(|e| Error::Tensor(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let (_, grads) = net.backward(&cache, &labels)?;
        for ((_, f), (_, g)) in fisher.iter_mut().zip(grads.iter()) {
            for (fv, gv) in f.data_mut().iter_mut().zip(g.data()) {
                *fv += gv * gv / samples as f64;
            }
        }
    }
    Ok(fisher)
}

/// Minibatch SGD over `data` for `sgd.epochs` epochs with a fresh velocity.
/// Returns the mean training loss of each epoch.
pub fn train(
    net: &mut Network,
    data: &Dataset,
    sgd: &SgdConfig,
    rng: &mut ChaCha8Rng,
    mut penalty: impl FnMut(&mut ParamTree, &ParamTree),
) -> Result<Vec<f64>> {
    sgd.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut velocity = net.params().zeros_like();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(sgd.epochs);
    for _ in 0..sgd.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(sgd.batch_size) {
            let x = data.features.select_rows(batch);
            let y: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let (_, cache) = net.forward(&x, Mode::Train, rng)?;
            let (loss, mut grads) = net.backward(&cache, &y)?;
            penalty(&mut grads, net.params());
            net.update_bn_stats(&cache);
            sgd_step(net.params_mut(), &grads, sgd, &mut velocity)?;
            total += loss * batch.len() as f64;
        }
        losses.push(total / data.len() as f64);
    }
    Ok(losses)
}

/// Trains through the stream task by task, warm-starting each task from the
/// carried model and growing the head when the label space widens.
pub fn run_sequence(
    stream: &TaskStream,
    method: &ClMethod,
    settings: &TrainSettings,
    seed: u64,
) -> Result<RunOutcome> {
    method.validate()?;
    settings.sgd.validate()?;
    if stream.is_empty() {
        return Err(Error::Empty("task stream"));
    }
    let n = stream.len();
    let dim = stream.dim();
    let mut carried: Vec<Checkpoint> = Vec::with_capacity(n);
    let mut trained: Vec<Checkpoint> = Vec::with_capacity(n);
    let mut log = RunLog::default();
    let mut rows = Vec::with_capacity(n);
    let mut anchor: Option<EwcAnchor> = None;

    for (t, task) in stream.tasks.iter().enumerate() {
        let width = task.n_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, TAG_SHUFFLE, t as u64));
        let (mut net, data) = match (method, carried.last()) {
            (ClMethod::Joint, _) | (_, None) => {
                let arch = settings.backbone.build(dim, width)?;
                let net = Network::new(arch, derive_seed(seed, TAG_INIT, 0))?;
                let data = if matches!(method, ClMethod::Joint) && t > 0 {
                    let parts: Vec<&Dataset> = stream.tasks[..=t].iter().map(|k| &k.train).collect();
                    Dataset::concat(&parts)?
                } else {
                    task.train.clone()
                };
                (net, data)
            }
            (_, Some(prev)) => {
                let mut net = prev.to_network(seed)?;
                net.grow_head(width, derive_seed(seed, TAG_HEAD, t as u64))?;
                (net, task.train.clone())
            }
        };

        let origin = Checkpoint::from_network(&net, t as u32);
        let losses = match (method, &anchor) {
            (ClMethod::Ewc { reg, .. }, Some(a)) => {
                let reg = *reg;
                train(&mut net, &data, &settings.sgd, &mut rng, |g, p| add_ewc_grad(g, p, a, reg))?
            }
            _ => train(&mut net, &data, &settings.sgd, &mut rng, |_, _| {})?,
        };
        log.records.push(LogRecord {
            task: t,
            event: Event::Train,
            epoch_losses: losses,
            shifts: IndexMap::new(),
            lambdas: IndexMap::new(),
            accuracies: Vec::new(),
        });

        let current = Checkpoint::from_network(&net, t as u32);
        let next = match method {
            ClMethod::Consolidate(cfg) if t > 0 => {
                // Knots are widened with the rows this task's head started
                // from, so the new rows move from their init like any other
                // parameter.
                let keep = cfg.path.window().saturating_sub(1).min(carried.len());
                let knots = carried[carried.len() - keep..]
                    .iter()
                    .map(|k| pad_head(k, &origin))
                    .collect::<Result<Vec<_>>>()?;
                let merged = consolidate(&knots, &current, cfg)?;
                log.records.push(LogRecord {
                    task: t,
                    event: Event::Consolidate,
                    epoch_losses: Vec::new(),
                    shifts: merged.shifts,
                    lambdas: merged.lambdas,
                    accuracies: Vec::new(),
                });
                merged.checkpoint
            }
            _ => current.clone(),
        };
        if let ClMethod::Ewc { fisher_samples, .. } = method {
            anchor = Some(EwcAnchor {
                fisher: estimate_fisher(
                    &net,
                    &task.train,
                    settings.sgd.batch_size,
                    *fisher_samples,
                    derive_seed(seed, TAG_FISHER, t as u64),
                )?,
                optimum: net.params().clone(),
            });
        }

        let model = next.to_network(seed)?;
        let row = stream
            .tasks
            .iter()
            .map(|other| {
                if other.test.labels.iter().all(|&l| l < model.n_classes()) {
                    evaluate(&model, &other.test).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        log.records.push(LogRecord {
            task: t,
            event: Event::Evaluate,
            epoch_losses: Vec::new(),
            shifts: IndexMap::new(),
            lambdas: IndexMap::new(),
            accuracies: row.clone(),
        });
        rows.push(row);
        trained.push(current);
        carried.push(next);
    }

    Ok(RunOutcome {
        accuracy: AccuracyMatrix::new(rows)?,
        carried,
        trained,
        log,
    })
}
