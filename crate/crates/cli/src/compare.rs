//! Side-by-side comparison of experiment reports.

use anyhow::bail;
use interpcl_core::trainer::ClMethod;

use crate::run::ExperimentReport;

pub const COMPARE_HEADER: [&str; 12] = [
    "report",
    "method",
    "seeds",
    "avg_final_acc",
    "fwt",
    "bwt",
    "forgetting",
    "rem",
    "delta_vs_none",
    "delta_vs_joint",
    "gap_recovery",
    "delta_vs_first_report",
];

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub report: usize,
    pub method: String,
    pub kind: &'static str,
    pub seeds: usize,
    pub avg_final_acc: f64,
    pub fwt: f64,
    pub bwt: f64,
    pub forgetting: f64,
    pub rem: f64,
    pub delta_vs_none: Option<f64>,
    pub delta_vs_joint: Option<f64>,
    pub gap_recovery: Option<f64>,
    pub delta_vs_first_report: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Seed-averaged metrics per (report, method). The None and Joint rows of
/// the first report that has them anchor the delta and gap-recovery columns.
pub fn compare(reports: &[ExperimentReport]) -> anyhow::Result<Vec<CompareRow>> {
    if reports.len() < 2 {
        bail!("compare needs at least two reports, got {}", reports.len());
    }
    let scenario = &reports[0].scenario_hash;
    if let Some((i, r)) = reports.iter().enumerate().find(|(_, r)| &r.scenario_hash != scenario) {
        bail!(
            "report {i} was produced on a different scenario ({} vs {})",
            &r.scenario_hash[..12],
            &scenario[..12]
        );
    }
    let mut rows = Vec::new();
    for (k, report) in reports.iter().enumerate() {
        let mut labels: Vec<&str> = Vec::new();
        for c in &report.cells {
            if !labels.contains(&c.label.as_str()) {
                labels.push(&c.label);
            }
        }
        for label in labels {
            let cells: Vec<_> = report.cells.iter().filter(|c| c.label == label).collect();
            let m = |f: fn(&interpcl_core::metrics::MetricBundle) -> f64| mean(cells.iter().map(|c| f(&c.metrics)));
            rows.push(CompareRow {
                report: k,
                method: label.to_owned(),
                kind: cells[0].method.label(),
                seeds: cells.len(),
                avg_final_acc: m(|b| b.avg_final_acc),
                fwt: m(|b| b.fwt),
                bwt: m(|b| b.bwt),
                forgetting: m(|b| b.forgetting),
                rem: m(|b| b.rem),
                delta_vs_none: None,
                delta_vs_joint: None,
                gap_recovery: None,
                delta_vs_first_report: 0.0,
            });
        }
    }
    let anchor = |kind: &str| {
        rows.iter()
            .find(|r| r.kind == kind)
            .map(|r| r.avg_final_acc)
    };
    let none = anchor(ClMethod::None.label());
    let joint = anchor(ClMethod::Joint.label());
    let firsts: Vec<(String, f64)> = rows
        .iter()
        .fold(Vec::<(String, f64)>::new(), |mut acc, r| {
            if !acc.iter().any(|(m, _)| *m == r.method) {
                acc.push((r.method.clone(), r.avg_final_acc));
            }
            acc
        });
    for r in &mut rows {
        r.delta_vs_none = none.map(|n| r.avg_final_acc - n);
        r.delta_vs_joint = joint.map(|j| r.avg_final_acc - j);
        r.gap_recovery = match (none, joint) {
            (Some(n), Some(j)) if j != n => Some((r.avg_final_acc - n) / (j - n)),
            _ => None,
        };
        let first = firsts.iter().find(|(m, _)| *m == r.method).expect("collected").1;
        r.delta_vs_first_report = r.avg_final_acc - first;
    }
    Ok(rows)
}

pub fn to_csv(rows: &[CompareRow]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COMPARE_HEADER)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.report.to_string(),
            r.method.clone(),
            r.seeds.to_string(),
            r.avg_final_acc.to_string(),
            r.fwt.to_string(),
            r.bwt.to_string(),
            r.forgetting.to_string(),
            r.rem.to_string(),
            opt(r.delta_vs_none),
            opt(r.delta_vs_joint),
            opt(r.gap_recovery),
            r.delta_vs_first_report.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
