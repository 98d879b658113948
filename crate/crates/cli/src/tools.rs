//! Standalone checkpoint tools: barrier profile and pairwise merge.

use std::path::Path;

use anyhow::{bail, Context};
use interpcl_core::checkpoint::Checkpoint;
use interpcl_core::diagnostics::{loss_barrier, BarrierProfile};
use interpcl_core::interp::{interpolate_pair, BlockMask, HeadMerge, LambdaPolicy, Merged};
use interpcl_core::scenarios::{load_csv, CsvSchema, Dataset};

/// Uses integer class names as the label values when every name is one;
/// otherwise keeps first-appearance numbering.
pub fn numeric_labels(data: Dataset) -> anyhow::Result<Dataset> {
    let parsed: Option<Vec<usize>> = data.class_names.iter().map(|n| n.parse().ok()).collect();
    let Some(values) = parsed else {
        return Ok(data);
    };
    let width = values.iter().max().map_or(0, |m| m + 1);
    let labels = data.labels.iter().map(|&l| values[l]).collect();
    let names = (0..width).map(|c| c.to_string()).collect();
    Ok(Dataset::new(data.features, labels, names)?)
}

pub fn barrier(a: &Path, b: &Path, data: &Path, schema: &CsvSchema, grid: usize) -> anyhow::Result<BarrierProfile> {
    let ca = Checkpoint::load(a)?;
    let cb = Checkpoint::load(b)?;
    let eval = numeric_labels(load_csv(data, schema)?)?;
    if eval.dim() != ca.arch.input_dim {
        bail!(
            "{} has {} features, the checkpoints expect {}",
            data.display(),
            eval.dim(),
            ca.arch.input_dim
        );
    }
    loss_barrier(&ca, &cb, &eval, grid).context("barrier evaluation failed")
}

pub fn profile_csv(p: &BarrierProfile) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["s", "loss", "chord", "deviation"])?;
    for i in 0..p.positions.len() {
        w.write_record([
            p.positions[i].to_string(),
            p.losses[i].to_string(),
            p.chord[i].to_string(),
            p.deviations[i].to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn interp(
    prev: &Path,
    curr: &Path,
    policy: LambdaPolicy,
    mask: BlockMask,
    head: HeadMerge,
    out: &Path,
) -> anyhow::Result<Merged> {
    policy.validate()?;
    let cp = Checkpoint::load(prev)?;
    let cc = Checkpoint::load(curr)?;
    let merged = interpolate_pair(&cp, &cc, &policy, &mask, head)?;
    merged.checkpoint.save(out)?;
    Ok(merged)
}

pub fn lambda_csv(m: &Merged) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["layer", "shift", "lambda"])?;
    for (layer, lambda) in &m.lambdas {
        let shift = m.shifts.get(layer).map(f64::to_string).unwrap_or_default();
        w.write_record([layer.clone(), shift, lambda.to_string()])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
