//! Parameter-space consolidation of consecutive task solutions.
//!
//! A consolidation step merges the previously carried model with the model
//! just trained on the new task, either pairwise (linear, one coefficient per
//! layer) or along a spline/polynomial path through a short window of
//! carried checkpoints.

mod weights;

use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::params::{layer_of, ParamTree};
use crate::tensor::Tensor;

pub use weights::weights as knot_weights;

pub const DEFAULT_LAMBDA: f64 = 0.6;
pub const DEFAULT_LAMBDA_MIN: f64 = 0.4;
pub const DEFAULT_LAMBDA_MAX: f64 = 0.6;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_WINDOW: usize = 4;
pub const MAX_POLYNOMIAL_WINDOW: usize = 5;

/// How much of the current model each layer keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    FixedGlobal(f64),
    AdaptiveLayerwise { min: f64, max: f64, epsilon: f64 },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::AdaptiveLayerwise {
            min: DEFAULT_LAMBDA_MIN,
            max: DEFAULT_LAMBDA_MAX,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl LambdaPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaPolicy::FixedGlobal(l) if (0.0..=1.0).contains(&l) => Ok(()),
            LambdaPolicy::FixedGlobal(l) => Err(Error::Config(format!("lambda {l} outside [0, 1]"))),
            LambdaPolicy::AdaptiveLayerwise { min, max, epsilon } => {
                if !(0.0 <= min && min <= max && max <= 1.0) {
                    return Err(Error::Config(format!(
                        "need 0 <= lambda_min <= lambda_max <= 1, got [{min}, {max}]"
                    )));
                }
                if !(epsilon > 0.0) {
                    return Err(Error::Config(format!("epsilon must be > 0, got {epsilon}")));
                }
                Ok(())
            }
        }
    }
}

/// Layer-name prefixes whose parameters get interpolated; every other layer
/// is taken from the current model unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockMask {
    pub prefixes: Vec<String>,
}

impl Default for BlockMask {
    fn default() -> Self {
        Self::all()
    }
}

impl BlockMask {
    pub fn all() -> Self {
        Self {
            prefixes: vec![String::new()],
        }
    }

    /// Interpolates nothing; consolidation then returns the current model.
    pub fn none() -> Self {
        Self { prefixes: vec![] }
    }

    pub fn only<I, S>(prefixes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            prefixes: prefixes.into_iter().map(Into::into).collect(),
        }
    }

    pub fn covers(&self, layer: &str) -> bool {
        self.prefixes.iter().any(|p| layer.starts_with(p.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathKind {
    Linear,
    CubicSpline { window: usize },
    Polynomial { window: usize },
}

impl PathKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PathKind::Linear => Ok(()),
            PathKind::CubicSpline { window } if window >= 3 => Ok(()),
            PathKind::Polynomial { window } if (2..=MAX_POLYNOMIAL_WINDOW).contains(&window) => Ok(()),
            other => Err(Error::Config(format!("invalid path window in {other:?}"))),
        }
    }

    /// Number of knots the path uses, counting the current model.
    pub fn window(&self) -> usize {
        match *self {
            PathKind::Linear => 2,
            PathKind::CubicSpline { window } | PathKind::Polynomial { window } => window,
        }
    }
}

/// What happens to tensors whose leading axis grew between knots (a widened
/// class head).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMerge {
    /// Take the whole tensor from the current model.
    #[default]
    CopyCurrent,
    /// Interpolate the rows every knot has; copy the new rows from the
    /// current model.
    InterpolateShared,
}

/// Full consolidation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Consolidation {
    pub path: PathKind,
    pub policy: LambdaPolicy,
    pub mask: BlockMask,
    pub head: HeadMerge,
}

impl Default for Consolidation {
    fn default() -> Self {
        Self {
            path: PathKind::Linear,
            policy: LambdaPolicy::default(),
            mask: BlockMask::all(),
            head: HeadMerge::default(),
        }
    }
}

impl Consolidation {
    pub fn validate(&self) -> Result<()> {
        self.path.validate()?;
        self.policy.validate()
    }
}

/// Result of a consolidation step.
#[derive(Debug, Clone, PartialEq)]
pub struct Merged {
    pub checkpoint: Checkpoint,
    /// Mean absolute shift per interpolated layer between the newest carried
    /// model and the current one.
    pub shifts: IndexMap<String, f64>,
    /// Coefficient applied to each interpolated layer.
    pub lambdas: IndexMap<String, f64>,
}

impl Merged {
    /// Global coefficient, or the mean of the per-layer ones.
    pub fn effective_lambda(&self) -> Option<f64> {
        if self.lambdas.is_empty() {
            None
        } else {
            Some(self.lambdas.values().sum::<f64>() / self.lambdas.len() as f64)
        }
    }
}

/// Maps per-layer shifts to coefficients:
/// `s_hat = (s - s_min) / (s_max - s_min + eps)`,
/// `lambda = lambda_min + (1 - s_hat) * (lambda_max - lambda_min)`.
pub fn adaptive_lambdas(
    shifts: &IndexMap<String, f64>,
    lambda_min: f64,
    lambda_max: f64,
    epsilon: f64,
) -> Result<IndexMap<String, f64>> {
    if shifts.is_empty() {
        return Err(Error::Empty("layer shifts"));
    }
    if let Some((layer, s)) = shifts.iter().find(|(_, s)| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("shift for `{layer}` must be finite and >= 0, got {s}")));
    }
    let s_min = shifts.values().copied().fold(f64::INFINITY, f64::min);
    let s_max = shifts.values().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = s_max - s_min + epsilon;
    Ok(shifts
        .iter()
        .map(|(layer, &s)| {
            let normalized = (s - s_min) / span;
            (layer.clone(), lambda_min + (1.0 - normalized) * (lambda_max - lambda_min))
        })
        .collect())
}

/// Region of a tensor shared by all knots: `Some(rows)` when the leading
/// `rows` slices can be interpolated, `None` when it must be copied.
fn shared_rows(knots: &[&Tensor], curr: &Tensor, head: HeadMerge) -> Option<usize> {
    if knots.iter().all(|t| t.shape() == curr.shape()) {
        return Some(curr.rows());
    }
    if head == HeadMerge::CopyCurrent {
        return None;
    }
    let tail = &curr.shape()[1..];
    if knots.iter().any(|t| t.shape().len() != curr.shape().len() || &t.shape()[1..] != tail) {
        return None;
    }
    let rows = knots.iter().map(|t| t.rows()).min().expect("nonempty");
    (rows <= curr.rows()).then_some(rows)
}

/// Mean absolute shift per layer over the interpolable region of each key.
fn layer_shifts(prev: &ParamTree, curr: &ParamTree, plan: &IndexMap<String, usize>) -> IndexMap<String, f64> {
    let mut sums: IndexMap<String, (f64, usize)> = IndexMap::new();
    for (key, &rows) in plan {
        let (Some(a), Some(b)) = (prev.get(key), curr.get(key)) else {
            continue;
        };
        let n = rows * b.row_len();
        let l1: f64 = a.data()[..n]
            .iter()
            .zip(&b.data()[..n])
            .map(|(x, y)| (y - x).abs())
            .sum();
        let slot = sums.entry(layer_of(key).to_owned()).or_insert((0.0, 0));
        slot.0 += l1;
        slot.1 += n;
    }
    sums.into_iter()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(l, (s, n))| (l, s / n as f64))
        .collect()
}

/// Decides, per parameter key of `curr`, how many leading rows are
/// interpolated across `knots` (keys absent from the plan are copied).
fn plan_keys(
    knots: &[&Checkpoint],
    curr: &Checkpoint,
    mask: &BlockMask,
    head: HeadMerge,
    tree: impl Fn(&Checkpoint) -> &ParamTree,
) -> IndexMap<String, usize> {
    let mut plan = IndexMap::new();
    for (key, c) in tree(curr).iter() {
        if !mask.covers(layer_of(key)) {
            continue;
        }
        let found: Option<Vec<&Tensor>> = knots.iter().map(|k| tree(k).get(key)).collect();
        let Some(found) = found else { continue };
        if let Some(rows) = shared_rows(&found, c, head) {
            if rows > 0 {
                plan.insert(key.to_owned(), rows);
            }
        }
    }
    plan
}

fn check_compatible(knots: &[&Checkpoint], curr: &Checkpoint) -> Result<()> {
    for k in knots {
        if !k.arch.same_trunk(&curr.arch) {
            return Err(Error::Incompatible(format!(
                "task {} and task {} models differ beyond the class head",
                k.task, curr.task
            )));
        }
    }
    Ok(())
}

/// Weighted sum of knot values; zero weights are skipped so endpoint
/// positions reproduce their knot bit for bit.
fn combine(values: &[&[f64]], w: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc: Option<f64> = None;
        for (vals, &wk) in values.iter().zip(w) {
            if wk != 0.0 {
                let term = wk * vals[i];
                acc = Some(acc.map_or(term, |a| a + term));
            }
        }
        *o = acc.unwrap_or(0.0);
    }
}

/// Evaluates the path through `knots` (last knot = `curr`) with a
/// per-layer position, honoring the plan.
fn evaluate_plan(
    knots: &[&Checkpoint],
    kind: &PathKind,
    positions: &IndexMap<String, f64>,
    param_plan: &IndexMap<String, usize>,
    stat_plan: &IndexMap<String, usize>,
) -> Checkpoint {
    let curr = *knots.last().expect("at least one knot");
    let mut cache: Vec<(u64, Vec<f64>)> = Vec::new();
    let mut weights_for = |p: f64| -> Vec<f64> {
        if let Some((_, w)) = cache.iter().find(|(bits, _)| *bits == p.to_bits()) {
            return w.clone();
        }
        let w = knot_weights(kind, knots.len(), p);
        cache.push((p.to_bits(), w.clone()));
        w
    };
    let mut merge_tree = |tree: fn(&Checkpoint) -> &ParamTree, plan: &IndexMap<String, usize>| -> ParamTree {
        tree(curr)
            .iter()
            .map(|(key, c)| {
                let layer = layer_of(key);
                let (Some(&rows), Some(&pos)) = (plan.get(key), positions.get(layer)) else {
                    return (key.to_owned(), c.clone());
                };
                let w = weights_for(pos);
                let n = rows * c.row_len();
                let values: Vec<&[f64]> = knots.iter().map(|k| &tree(k).get(key).expect("planned").data()[..n]).collect();
                let mut data = c.data().to_vec();
                combine(&values, &w, &mut data[..n]);
                if key.ends_with(".running_var") {
                    // non-linear paths may overshoot below zero
                    for v in &mut data[..n] {
                        *v = v.max(0.0);
                    }
                }
                (key.to_owned(), Tensor::from_parts(c.shape().to_vec(), data))
            })
            .collect()
    };
    let params = merge_tree(|c| &c.params, param_plan);
    let bn_stats = merge_tree(|c| &c.bn_stats, stat_plan);
    Checkpoint {
        arch: curr.arch.clone(),
        task: curr.task,
        params,
        bn_stats,
    }
}

fn resolve_lambdas(
    policy: &LambdaPolicy,
    prev: &Checkpoint,
    curr: &Checkpoint,
    param_plan: &IndexMap<String, usize>,
) -> Result<(IndexMap<String, f64>, IndexMap<String, f64>)> {
    policy.validate()?;
    let shifts = layer_shifts(&prev.params, &curr.params, param_plan);
    let lambdas = match *policy {
        LambdaPolicy::FixedGlobal(l) => shifts.keys().map(|k| (k.clone(), l)).collect(),
        LambdaPolicy::AdaptiveLayerwise { min, max, epsilon } => {
            if shifts.is_empty() {
                IndexMap::new()
            } else {
                adaptive_lambdas(&shifts, min, max, epsilon)?
            }
        }
    };
    Ok((shifts, lambdas))
}

/// `theta^(l) = (1 - lambda_l) prev^(l) + lambda_l curr^(l)` on every
/// interpolable, masked layer; everything else comes from `curr`.
pub fn interpolate_pair(
    prev: &Checkpoint,
    curr: &Checkpoint,
    policy: &LambdaPolicy,
    mask: &BlockMask,
    head: HeadMerge,
) -> Result<Merged> {
    check_compatible(&[prev], curr)?;
    let knots = [prev, curr];
    let param_plan = plan_keys(&knots, curr, mask, head, |c| &c.params);
    let stat_plan = plan_keys(&knots, curr, mask, head, |c| &c.bn_stats);
    let (shifts, lambdas) = resolve_lambdas(policy, prev, curr, &param_plan)?;
    let checkpoint = evaluate_plan(&knots, &PathKind::Linear, &lambdas, &param_plan, &stat_plan);
    Ok(Merged {
        checkpoint,
        shifts,
        lambdas,
    })
}

/// Point on the path through `history` (knots at positions 0..K-1).
/// Integer positions return the knot exactly. Splines need three knots and
/// otherwise degrade to linear.
pub fn path_point(history: &[Checkpoint], kind: &PathKind, position: f64, head: HeadMerge) -> Result<Checkpoint> {
    if history.len() < 2 {
        return Err(Error::Empty("path needs at least two checkpoints"));
    }
    let max = (history.len() - 1) as f64;
    if !(0.0..=max).contains(&position) {
        return Err(Error::PositionOutOfRange { position, max });
    }
    let curr = history.last().expect("nonempty");
    let knots: Vec<&Checkpoint> = history.iter().collect();
    check_compatible(&knots, curr)?;
    let mask = BlockMask::all();
    let param_plan = plan_keys(&knots, curr, &mask, head, |c| &c.params);
    let stat_plan = plan_keys(&knots, curr, &mask, head, |c| &c.bn_stats);
    let positions: IndexMap<String, f64> = curr
        .params
        .keys()
        .chain(curr.bn_stats.keys())
        .map(|k| (layer_of(k).to_owned(), position))
        .collect();
    Ok(evaluate_plan(&knots, kind, &positions, &param_plan, &stat_plan))
}

/// One consolidation step. `carried` holds previously carried models, oldest
/// first; its last element is the model the current task warm-started from.
/// Linear paths merge that model with `curr`. Spline and polynomial paths
/// run through the last `window - 1` carried models plus `curr` and are read
/// at `(K - 1) - (1 - lambda)` per layer.
pub fn consolidate(carried: &[Checkpoint], curr: &Checkpoint, cfg: &Consolidation) -> Result<Merged> {
    cfg.validate()?;
    let prev = carried.last().ok_or(Error::Empty("carried checkpoint chain"))?;
    let window = cfg.path.window().min(carried.len() + 1);
    if cfg.path == PathKind::Linear || window == 2 {
        return interpolate_pair(prev, curr, &cfg.policy, &cfg.mask, cfg.head);
    }
    let mut knots: Vec<&Checkpoint> = carried[carried.len() + 1 - window..].iter().collect();
    knots.push(curr);
    check_compatible(&knots, curr)?;
    let param_plan = plan_keys(&knots, curr, &cfg.mask, cfg.head, |c| &c.params);
    let stat_plan = plan_keys(&knots, curr, &cfg.mask, cfg.head, |c| &c.bn_stats);
    let (shifts, lambdas) = resolve_lambdas(&cfg.policy, prev, curr, &param_plan)?;
    let last = (knots.len() - 1) as f64;
    let positions: IndexMap<String, f64> = lambdas.iter().map(|(l, lam)| (l.clone(), last - (1.0 - lam))).collect();
    let checkpoint = evaluate_plan(&knots, &cfg.path, &positions, &param_plan, &stat_plan);
    Ok(Merged {
        checkpoint,
        shifts,
        lambdas,
    })
}

/// `ckpt` widened to `donor`'s head: rows it lacks are taken from `donor`.
/// Trunks must agree and `donor`'s head must be at least as wide.
pub fn pad_head(ckpt: &Checkpoint, donor: &Checkpoint) -> Result<Checkpoint> {
    check_compatible(&[ckpt], donor)?;
    if ckpt.n_classes() > donor.n_classes() {
        return Err(Error::Incompatible(format!(
            "cannot pad a {}-class head to {} classes",
            ckpt.n_classes(),
            donor.n_classes()
        )));
    }
    let mut params = ParamTree::new();
    for (key, d) in donor.params.iter() {
        let own = ckpt.params.get(key).ok_or_else(|| Error::KeyMismatch {
            only_left: vec![],
            only_right: vec![key.to_owned()],
        })?;
        let tensor = if own.shape() == d.shape() {
            own.clone()
        } else {
            if own.shape()[1..] != d.shape()[1..] || own.rows() > d.rows() {
                return Err(Error::ParamShape {
                    key: key.to_owned(),
                    left: own.shape().to_vec(),
                    right: d.shape().to_vec(),
                });
            }
            let mut data = own.data().to_vec();
            data.extend_from_slice(&d.data()[own.len()..]);
            Tensor::new(d.shape().to_vec(), data)?
        };
        params.insert(key, tensor)?;
    }
    Ok(Checkpoint {
        arch: donor.arch.clone(),
        task: ckpt.task,
        params,
        bn_stats: ckpt.bn_stats.clone(),
    })
}

/// Layers (by name) that a consolidation with `mask` would touch in `ckpt`.
pub fn masked_layers(ckpt: &Checkpoint, mask: &BlockMask) -> BTreeSet<String> {
    ckpt.params.layers().into_iter().filter(|l| mask.covers(l)).collect()
}

#[cfg(test)]
mod tests;
