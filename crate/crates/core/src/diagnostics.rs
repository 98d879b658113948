//! Loss barriers along straight paths between checkpoints and the
//! activation-variance ratio of a merged model.

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::interp::{interpolate_pair, BlockMask, HeadMerge, LambdaPolicy};
use crate::scenarios::Dataset;

pub const DEFAULT_GRID: usize = 11;
pub const DEFAULT_COLLAPSE_THRESHOLD: f64 = 0.8;
pub const DEFAULT_PROBE_LAYER: &str = "block2.relu";
pub const DEFAULT_PROBE_SIZE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierProfile {
    pub positions: Vec<f64>,
    pub losses: Vec<f64>,
    pub chord: Vec<f64>,
    pub deviations: Vec<f64>,
    pub barrier: f64,
    pub argmax: f64,
}

/// Profile of `loss` over a uniform grid of `points` positions in [0, 1]
/// against the chord between its endpoint values.
pub fn barrier_profile(points: usize, mut loss: impl FnMut(f64) -> Result<f64>) -> Result<BarrierProfile> {
    if points < 3 {
        return Err(Error::Config(format!("barrier grid needs >= 3 points, got {points}")));
    }
    let m = points - 1;
    let positions: Vec<f64> = (0..=m).map(|i| i as f64 / m as f64).collect();
    let losses = positions.iter().map(|&s| loss(s)).collect::<Result<Vec<_>>>()?;
    let (la, lb) = (losses[0], losses[m]);
    let chord: Vec<f64> = positions.iter().map(|&s| (1.0 - s) * la + s * lb).collect();
    let deviations: Vec<f64> = losses.iter().zip(&chord).map(|(l, c)| l - c).collect();
    let (best, barrier) = deviations
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    Ok(BarrierProfile {
        argmax: positions[best],
        positions,
        losses,
        chord,
        deviations,
        barrier,
    })
}

/// Barrier of the straight path `(1 - s) a + s b` (batch-norm statistics
/// included) under held-out eval-mode cross-entropy on `eval_set`.
pub fn loss_barrier(a: &Checkpoint, b: &Checkpoint, eval_set: &Dataset, points: usize) -> Result<BarrierProfile> {
    if a.fingerprint() != b.fingerprint() {
        return Err(Error::Incompatible(format!(
            "architectures differ (fingerprints {:#018x} and {:#018x})",
            a.fingerprint(),
            b.fingerprint()
        )));
    }
    if eval_set.is_empty() {
        return Err(Error::Empty("barrier evaluation set"));
    }
    barrier_profile(points, |s| {
        let point = interpolate_pair(a, b, &LambdaPolicy::FixedGlobal(s), &BlockMask::all(), HeadMerge::CopyCurrent)?;
        point
            .checkpoint
            .to_network(0)?
            .eval_loss(&eval_set.features, &eval_set.labels)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub ratio: f64,
    pub var_interp: f64,
    pub var_prev: f64,
    pub var_curr: f64,
    pub lambda: f64,
    pub collapsed: bool,
}

/// `R = Var(phi(interp)) / ((1 - lambda) Var(phi(prev)) + lambda Var(phi(curr)))`
/// with population variance over every activation entry of the probe batch.
pub fn variance_ratio(
    prev: &Checkpoint,
    curr: &Checkpoint,
    interp: &Checkpoint,
    probe_layer: &str,
    probe: &Dataset,
    lambda: f64,
    threshold: f64,
) -> Result<VarianceReport> {
    if probe.is_empty() {
        return Err(Error::Empty("probe batch"));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let var = |c: &Checkpoint| -> Result<f64> { Ok(c.to_network(0)?.activations(&probe.features, probe_layer)?.variance()) };
    let (var_prev, var_curr, var_interp) = (var(prev)?, var(curr)?, var(interp)?);
    let denom = (1.0 - lambda) * var_prev + lambda * var_curr;
    if denom <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let ratio = var_interp / denom;
    Ok(VarianceReport {
        ratio,
        var_interp,
        var_prev,
        var_curr,
        lambda,
        collapsed: ratio < threshold,
    })
}
