use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, Pool};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamVariant {
    ClassIl {
        initial_classes: usize,
        increment: usize,
        n_tasks: usize,
    },
    DomainIl {
        n_tasks: usize,
    },
}

impl StreamVariant {
    pub fn n_tasks(&self) -> usize {
        match *self {
            StreamVariant::ClassIl { n_tasks, .. } | StreamVariant::DomainIl { n_tasks } => n_tasks,
        }
    }

    /// Output width after task `t`.
    pub fn width(&self, t: usize) -> usize {
        match *self {
            StreamVariant::ClassIl {
                initial_classes,
                increment,
                ..
            } => initial_classes + t * increment,
            StreamVariant::DomainIl { .. } => 2,
        }
    }

    pub fn is_class_incremental(&self) -> bool {
        matches!(self, StreamVariant::ClassIl { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub train: Dataset,
    pub test: Dataset,
    /// Pool class indices whose samples make up this task.
    pub pool_classes: Vec<usize>,
}

impl Task {
    pub fn n_classes(&self) -> usize {
        self.train.n_classes()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub variant: StreamVariant,
    pub tasks: Vec<Task>,
    /// Union of the test splits of tasks `0..=t`.
    pub cumulative_tests: Vec<Dataset>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.tasks[0].train.dim()
    }

    /// Test set used for the final evaluation after task `t`: the cumulative
    /// set in Class-IL, the task's own split in Domain-IL.
    pub fn eval_set(&self, t: usize) -> &Dataset {
        if self.variant.is_class_incremental() {
            &self.cumulative_tests[t]
        } else {
            &self.tasks[t].test
        }
    }
}

/// Stratified 80/20 split of one class block: first rows train, rest test.
fn split_rows(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::Config(format!("need >= 2 samples per class to split, got {n}")));
    }
    let n_train = ((n as f64 * TRAIN_FRACTION).round() as usize).clamp(1, n - 1);
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..n).collect();
    Ok((x.select_rows(&train), x.select_rows(&test)))
}

fn assemble(blocks: &[(Tensor, usize)], dim: usize, names: &[String]) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (x, label) in blocks {
        data.extend_from_slice(x.data());
        labels.extend(std::iter::repeat_n(*label, x.rows()));
    }
    Dataset::new(Tensor::new(vec![labels.len(), dim], data)?, labels, names.to_vec())
}

/// Sequences a pool into tasks. Class-IL draws a seeded class order, numbers
/// classes by order of introduction and takes class samples from the step
/// equal to the task index (clamped to the last step). Domain-IL splits the
/// classes into two seeded halves labelled 0 and 1 and uses step `t` for
/// task `t`.
pub fn build_stream(pool: &Pool, variant: StreamVariant, seed: u64) -> Result<TaskStream> {
    let n_tasks = variant.n_tasks();
    if n_tasks == 0 {
        return Err(Error::Config("stream needs at least one task".into()));
    }
    if pool.n_epochs() == 0 {
        return Err(Error::Empty("pool"));
    }
    let mut order: Vec<usize> = (0..pool.n_classes()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut tasks = Vec::with_capacity(n_tasks);
    match variant {
        StreamVariant::ClassIl {
            initial_classes,
            increment,
            ..
        } => {
            if initial_classes == 0 || (n_tasks > 1 && increment == 0) {
                return Err(Error::Config("class counts must be >= 1".into()));
            }
            let needed = variant.width(n_tasks - 1);
            if needed > pool.n_classes() {
                return Err(Error::InsufficientClasses {
                    needed,
                    available: pool.n_classes(),
                });
            }
            let names: Vec<String> = order[..needed].iter().map(|&c| pool.class_names[c].clone()).collect();
            for t in 0..n_tasks {
                let lo = if t == 0 { 0 } else { variant.width(t - 1) };
                let hi = variant.width(t);
                let epoch = t.min(pool.n_epochs() - 1);
                let mut train = Vec::new();
                let mut test = Vec::new();
                for label in lo..hi {
                    let (a, b) = split_rows(pool.get(order[label], epoch)?)?;
                    train.push((a, label));
                    test.push((b, label));
                }
                tasks.push(Task {
                    train: assemble(&train, pool.dim, &names[..hi])?,
                    test: assemble(&test, pool.dim, &names[..hi])?,
                    pool_classes: order[lo..hi].to_vec(),
                });
            }
        }
        StreamVariant::DomainIl { .. } => {
            if pool.n_classes() < 2 {
                return Err(Error::InsufficientClasses {
                    needed: 2,
                    available: pool.n_classes(),
                });
            }
            if pool.n_epochs() < n_tasks {
                return Err(Error::Config(format!(
                    "{n_tasks} domain tasks need {n_tasks} time steps, pool has {}",
                    pool.n_epochs()
                )));
            }
            let half = order.len() / 2;
            let names = vec!["benign".to_string(), "malicious".to_string()];
            for t in 0..n_tasks {
                let mut train = Vec::new();
                let mut test = Vec::new();
                for (pos, &class) in order.iter().enumerate() {
                    let label = usize::from(pos >= half);
                    let (a, b) = split_rows(pool.get(class, t)?)?;
                    train.push((a, label));
                    test.push((b, label));
                }
                tasks.push(Task {
                    train: assemble(&train, pool.dim, &names)?,
                    test: assemble(&test, pool.dim, &names)?,
                    pool_classes: order.clone(),
                });
            }
        }
    }
    let mut cumulative_tests = Vec::with_capacity(n_tasks);
    for t in 0..n_tasks {
        let parts: Vec<&Dataset> = tasks[..=t].iter().map(|k| &k.test).collect();
        cumulative_tests.push(Dataset::concat(&parts)?);
    }
    Ok(TaskStream {
        variant,
        tasks,
        cumulative_tests,
    })
}
