//! Task streams: synthetic drifting Gaussian classes, CSV ingestion and the
//! class-incremental / domain-incremental sequencing on top of them.

mod csv_io;
mod drift;
mod stream;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use csv_io::{load_csv, write_csv, CsvSchema};
pub use drift::{generate_synthetic, DriftConfig};
pub use stream::{build_stream, StreamVariant, Task, TaskStream};

/// Labeled feature matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Tensor(format!("features must be 2-D, got {:?}", features.shape())));
        }
        if features.rows() != labels.len() {
            return Err(Error::Tensor(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: class_names.len(),
            });
        }
        Ok(Self {
            features,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.row_len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Rows at `idx`, keeping the class list.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Row-wise concatenation; the longest class list wins and must extend
    /// the others.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::Empty("datasets to concatenate"))?;
        let names = parts
            .iter()
            .map(|d| &d.class_names)
            .max_by_key(|n| n.len())
            .expect("nonempty")
            .clone();
        let dim = first.dim();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for d in parts {
            if d.dim() != dim {
                return Err(Error::Tensor(format!("cannot concatenate dims {dim} and {}", d.dim())));
            }
            if names[..d.class_names.len()] != d.class_names[..] {
                return Err(Error::Tensor("class lists disagree".into()));
            }
            data.extend_from_slice(d.features.data());
            labels.extend_from_slice(&d.labels);
        }
        Dataset::new(Tensor::new(vec![labels.len(), dim], data)?, labels, names)
    }
}

/// Samples grouped by class and time step ("epoch" of the drift process).
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    pub class_names: Vec<String>,
    pub dim: usize,
    /// `samples[class][epoch]`, `None` when a class has no rows at that step.
    pub samples: Vec<Vec<Option<Tensor>>>,
}

impl Pool {
    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn n_epochs(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn get(&self, class: usize, epoch: usize) -> Result<&Tensor> {
        self.samples[class][epoch].as_ref().ok_or_else(|| {
            Error::Config(format!("class `{}` has no samples at step {epoch}", self.class_names[class]))
        })
    }

    /// Groups one dataset per time step by class name.
    pub fn from_datasets(epochs: &[Dataset]) -> Result<Pool> {
        let first = epochs.first().ok_or(Error::Empty("datasets"))?;
        let dim = first.dim();
        let mut names: Vec<String> = Vec::new();
        for d in epochs {
            if d.dim() != dim {
                return Err(Error::Tensor(format!("feature width {} differs from {dim}", d.dim())));
            }
            for n in &d.class_names {
                if !names.contains(n) {
                    names.push(n.clone());
                }
            }
        }
        let mut samples = vec![vec![None; epochs.len()]; names.len()];
        for (e, d) in epochs.iter().enumerate() {
            for (local, name) in d.class_names.iter().enumerate() {
                let rows: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == local).collect();
                if rows.is_empty() {
                    continue;
                }
                let class = names.iter().position(|n| n == name).expect("collected");
                samples[class][e] = Some(d.features.select_rows(&rows));
            }
        }
        Ok(Pool {
            class_names: names,
            dim,
            samples,
        })
    }
}
