//! Transfer and forgetting metrics from the task accuracy matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `entries[i][j]`: accuracy on task `j` after training task `i`. The
/// diagonal and lower triangle are always defined; upper entries may be
/// `None` when the head at step `i` cannot score task `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    entries: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(entries: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let n = entries.len();
        if n == 0 {
            return Err(Error::Empty("accuracy matrix"));
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Config(format!("accuracy matrix row {i} has {} entries, expected {n}", row.len())));
            }
            for (j, v) in row.iter().enumerate() {
                match v {
                    None if j <= i => {
                        return Err(Error::Config(format!("accuracy ({i},{j}) must be defined")));
                    }
                    Some(a) if !(0.0..=1.0).contains(a) => {
                        return Err(Error::Config(format!("accuracy ({i},{j}) = {a} outside [0,1]")));
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { entries })
    }

    /// Dense matrix with every entry defined.
    pub fn from_dense(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.entries[i][j]
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.entries
    }

    /// Mean over the defined entries of row `i`.
    pub fn row_mean(&self, i: usize) -> f64 {
        let vals: Vec<f64> = self.entries[i].iter().flatten().copied().collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    /// Mean over tasks `0..=i` of row `i`: the average accuracy on everything
    /// seen so far.
    pub fn seen_mean(&self, i: usize) -> f64 {
        self.entries[i][..=i].iter().map(|v| v.expect("defined")).sum::<f64>() / (i + 1) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub avg_final_acc: f64,
    pub fwt: f64,
    pub bwt: f64,
    pub bwt_plus: f64,
    pub forgetting: f64,
    pub rem: f64,
    /// Set when N = 1 and the transfer metrics are reported as zero.
    pub single_task: bool,
    /// Number of upper-triangle entries that entered FWT.
    pub fwt_entries: usize,
}

/// `(BWT+, F, REM)` implied by a backward-transfer value.
pub fn derived_from_bwt(bwt: f64) -> (f64, f64, f64) {
    let forgetting = -bwt.min(0.0);
    (bwt.max(0.0), forgetting, 1.0 - forgetting)
}

pub fn compute_metrics(r: &AccuracyMatrix) -> MetricBundle {
    let n = r.len();
    let last = n - 1;
    let avg_final_acc = r.row_mean(last);
    if n < 2 {
        return MetricBundle {
            avg_final_acc,
            fwt: 0.0,
            bwt: 0.0,
            bwt_plus: 0.0,
            forgetting: 0.0,
            rem: 1.0,
            single_task: true,
            fwt_entries: 0,
        };
    }
    let mut fwt_sum = 0.0;
    let mut fwt_entries = 0;
    let mut bwt_sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if j > i {
                if let Some(v) = r.get(i, j) {
                    fwt_sum += v;
                    fwt_entries += 1;
                }
            } else if j < i {
                bwt_sum += r.get(i, j).expect("lower") - r.get(j, j).expect("diagonal");
            }
        }
    }
    let fwt = if fwt_entries == 0 { 0.0 } else { fwt_sum / fwt_entries as f64 };
    let bwt = 2.0 * bwt_sum / (n * (n - 1)) as f64;
    let (bwt_plus, forgetting, rem) = derived_from_bwt(bwt);
    MetricBundle {
        avg_final_acc,
        fwt,
        bwt,
        bwt_plus,
        forgetting,
        rem,
        single_task: false,
        fwt_entries,
    }
}
