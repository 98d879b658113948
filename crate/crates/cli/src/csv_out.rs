//! Plain CSV tables derived from a report. Numbers use shortest round-trip
//! formatting so identical runs give identical bytes.

use std::path::Path;

use anyhow::Context;

use crate::run::ExperimentReport;

pub const METRICS_HEADER: [&str; 9] = [
    "seed",
    "method",
    "avg_final_acc",
    "fwt",
    "bwt",
    "bwt_plus",
    "forgetting",
    "rem",
    "fwt_entries",
];

pub fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn table(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn write_report_csvs(report: &ExperimentReport, dir: &Path) -> anyhow::Result<()> {
    let cells = &report.cells;
    table(
        &dir.join("metrics.csv"),
        &METRICS_HEADER,
        cells
            .iter()
            .map(|c| {
                let m = &c.metrics;
                vec![
                    c.seed.to_string(),
                    c.label.clone(),
                    num(m.avg_final_acc),
                    num(m.fwt),
                    num(m.bwt),
                    num(m.bwt_plus),
                    num(m.forgetting),
                    num(m.rem),
                    m.fwt_entries.to_string(),
                ]
            })
            .collect(),
    )?;

    let mut rows = Vec::new();
    for c in cells {
        for (i, row) in c.accuracy.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    rows.push(vec![c.seed.to_string(), c.label.clone(), i.to_string(), j.to_string(), num(*v)]);
                }
            }
        }
    }
    table(&dir.join("accuracy.csv"), &["seed", "method", "after_task", "task", "accuracy"], rows)?;

    let mut rows = Vec::new();
    for c in cells {
        for (t, v) in c.accuracy_curve.iter().enumerate() {
            rows.push(vec![c.seed.to_string(), c.label.clone(), t.to_string(), num(*v)]);
        }
    }
    table(&dir.join("accuracy_curve.csv"), &["seed", "method", "task", "seen_accuracy"], rows)?;

    let mut rows = Vec::new();
    for c in cells {
        for b in &c.barriers {
            let p = &b.profile;
            for i in 0..p.positions.len() {
                rows.push(vec![
                    c.seed.to_string(),
                    c.label.clone(),
                    b.transition.clone(),
                    num(p.positions[i]),
                    num(p.losses[i]),
                    num(p.chord[i]),
                    num(p.deviations[i]),
                ]);
            }
        }
    }
    table(
        &dir.join("barrier_profiles.csv"),
        &["seed", "method", "transition", "s", "loss", "chord", "deviation"],
        rows,
    )?;

    let mut rows = Vec::new();
    for c in cells {
        for b in &c.barriers {
            rows.push(vec![
                c.seed.to_string(),
                c.label.clone(),
                b.transition.clone(),
                num(b.profile.barrier),
                num(b.profile.argmax),
            ]);
        }
    }
    table(&dir.join("barriers.csv"), &["seed", "method", "transition", "barrier", "argmax_s"], rows)?;

    let mut rows = Vec::new();
    for c in cells {
        for v in &c.variance {
            let r = &v.report;
            rows.push(vec![
                c.seed.to_string(),
                c.label.clone(),
                v.transition.clone(),
                num(r.lambda),
                num(r.var_prev),
                num(r.var_curr),
                num(r.var_interp),
                num(r.ratio),
                r.collapsed.to_string(),
            ]);
        }
    }
    table(
        &dir.join("variance.csv"),
        &["seed", "method", "transition", "lambda", "var_prev", "var_curr", "var_interp", "ratio", "collapsed"],
        rows,
    )?;

    let mut rows = Vec::new();
    for c in cells {
        for l in &c.lambda_trace {
            for (layer, lambda) in &l.lambdas {
                let shift = l.shifts.get(layer).copied().unwrap_or(f64::NAN);
                rows.push(vec![
                    c.seed.to_string(),
                    c.label.clone(),
                    l.task.to_string(),
                    layer.clone(),
                    num(shift),
                    num(*lambda),
                ]);
            }
        }
    }
    table(&dir.join("lambdas.csv"), &["seed", "method", "task", "layer", "shift", "lambda"], rows)?;
    Ok(())
}
