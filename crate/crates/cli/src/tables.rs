//! Fixed report layouts. Column order and row order never depend on which
//! inputs are present; absent values render as `--`.

use std::collections::BTreeSet;

use flipkit::metrics::MetricValue;

use crate::outputs::{AttentionReport, ClampReport, MetricsReport, PatchReport};
use crate::table::{num, opt, pct, Table, MISSING};

pub const DATASETS: [&str; 3] = ["mimic", "padchest", "vindr"];

fn est(m: Option<&MetricValue>) -> Option<f64> {
    m.map(|m| m.estimate)
}

/// Accuracy, question-level flip rate and pairwise flip rate per dataset.
pub fn behavior(metrics: Option<&MetricsReport>) -> Table {
    let mut datasets: Vec<String> = DATASETS.iter().map(|s| s.to_string()).collect();
    let extra: BTreeSet<&String> = metrics
        .iter()
        .flat_map(|m| m.models.values())
        .flat_map(|m| m.by_dataset.keys())
        .filter(|d| !DATASETS.contains(&d.as_str()))
        .collect();
    datasets.extend(extra.into_iter().cloned());
    let mut header = vec!["model".to_string()];
    for d in &datasets {
        header.extend([format!("{d}_acc"), format!("{d}_flip_question"), format!("{d}_flip_pairwise")]);
    }
    let mut t = Table::new(&header);
    for (model, m) in metrics.iter().flat_map(|r| &r.models) {
        let mut row = vec![model.clone()];
        for d in &datasets {
            let ds = m.by_dataset.get(d);
            row.push(pct(ds.and_then(|x| est(x.accuracy.as_ref()))));
            row.push(pct(ds.and_then(|x| est(x.flip_rate.as_ref()))));
            row.push(pct(ds.and_then(|x| est(x.pairwise_disagreement.as_ref()))));
        }
        t.push(row);
    }
    t
}

/// Real-image flip rate beside text-only agreement and swap sensitivity.
pub fn grounding(metrics: Option<&MetricsReport>) -> Table {
    let mut t = Table::new(&["model", "flip", "text_only", "swap"]);
    for (model, m) in metrics.iter().flat_map(|r| &r.models) {
        let real = m.conditions.get("real").and_then(|c| c.flip_rate.as_ref());
        t.push(vec![
            model.clone(),
            pct(est(real)),
            pct(est(m.text_only_agreement.as_ref())),
            pct(est(m.swap_sensitivity.as_ref())),
        ]);
    }
    t
}

pub fn attention(report: Option<&AttentionReport>) -> Table {
    let mut t = Table::new(&["model", "metric", "flip", "no_flip", "relative_difference", "p_value"]);
    for (model, m) in report.iter().flat_map(|r| &r.models) {
        for (name, g) in [("coverage", &m.coverage), ("precision", &m.precision)] {
            t.push(vec![
                model.clone(),
                name.into(),
                pct(g.mean_flip),
                pct(g.mean_no_flip),
                pct(g.relative_difference),
                num(g.mann_whitney.as_ref().and_then(|s| s.p_value), 4),
            ]);
        }
    }
    t
}

pub fn patch(report: Option<&PatchReport>) -> Table {
    let mut t = Table::new(&["feature", "metric", "value", "ci_low", "ci_high"]);
    for s in report.iter().flat_map(|r| &r.summaries) {
        let f = s.feature.to_string();
        let m = s.mean_recovery.as_ref();
        let row = |metric: &str, v: String, lo: String, hi: String| vec![f.clone(), metric.to_string(), v, lo, hi];
        t.push(row("mean_recovery", pct(est(m)), pct(m.map(|m| m.ci_low)), pct(m.map(|m| m.ci_high))));
        t.push(row("median_recovery", pct(s.median_recovery), MISSING.into(), MISSING.into()));
        t.push(row(
            "cases_over_half",
            format!("{}/{}", s.n_recovery_over_half, s.n_cases),
            MISSING.into(),
            MISSING.into(),
        ));
        t.push(row("full_reversals", format!("{}/{}", s.n_reversed, s.n_cases), MISSING.into(), MISSING.into()));
        t.push(row("mean_margin_shift", num(s.mean_margin_shift, 2), MISSING.into(), MISSING.into()));
        t.push(row("cohens_d", num(s.cohens_d, 2), MISSING.into(), MISSING.into()));
    }
    t
}

/// Baseline row from the first evaluation, then one row per method.
pub fn mitigation(reports: &[ClampReport]) -> Table {
    let mut t = Table::new(&["method", "flip", "accuracy", "text_only", "swap", "flip_relative_change", "flip_p_value"]);
    let Some(first) = reports.first() else {
        return t;
    };
    let e = &first.evaluation;
    t.push(vec![
        "baseline".into(),
        pct(Some(e.flip_rate.before.estimate)),
        pct(e.accuracy.as_ref().map(|m| m.before.estimate)),
        pct(e.text_only_agreement.as_ref().map(|m| m.before.estimate)),
        pct(e.swap_sensitivity.as_ref().map(|m| m.before.estimate)),
        MISSING.into(),
        MISSING.into(),
    ]);
    for r in reports {
        let e = &r.evaluation;
        t.push(vec![
            r.method.clone(),
            pct(Some(e.flip_rate.after.estimate)),
            pct(e.accuracy.as_ref().map(|m| m.after.estimate)),
            pct(e.text_only_agreement.as_ref().map(|m| m.after.estimate)),
            pct(e.swap_sensitivity.as_ref().map(|m| m.after.estimate)),
            pct(e.flip_rate.relative_change),
            opt(e.flip_rate.p_value.map(|p| format!("{p:.4}"))),
        ]);
    }
    t
}
