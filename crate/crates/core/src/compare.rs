//! Side-by-side comparison of two finished runs.
//!
//! Every `(entity, metric)` pair is reduced to its mean over the post-warmup
//! reporting window common to both runs; because consecutive report windows
//! tile the timeline, the mean of `throughput_bps` rows equals the cumulative
//! rate over the compared span. Runs with different horizons are truncated to
//! the shorter one (noted in the report header).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::sim::RunOutput;

/// One aligned entity/metric pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub entity: String,
    pub metric: String,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
}

impl CompareRow {
    pub fn delta(&self) -> Option<f64> {
        Some(self.mean_b? - self.mean_a?)
    }
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub label_a: String,
    pub label_b: String,
    /// Start (exclusive of warmup) and end of the compared span, seconds.
    pub from_s: f64,
    pub to_s: f64,
    pub truncated: bool,
    pub rows: Vec<CompareRow>,
    pub csv: String,
    pub text: String,
}

fn collect_means(run: &RunOutput, from_s: f64, to_s: f64) -> BTreeMap<(String, String), f64> {
    let mut sums: BTreeMap<(String, String), (f64, u64)> = BTreeMap::new();
    for cell in &run.cells {
        for row in &cell.rows {
            if row.time_s > from_s && row.time_s <= to_s {
                let entry = sums
                    .entry((row.entity.clone(), row.metric.clone()))
                    .or_insert((0.0, 0));
                entry.0 += row.value;
                entry.1 += 1;
            }
        }
    }
    sums.into_iter()
        .map(|(key, (sum, n))| (key, sum / n as f64))
        .collect()
}

/// Aligns two runs over their common post-warmup span.
pub fn compare_runs(a: &RunOutput, b: &RunOutput) -> CompareReport {
    let to_s = a.duration_s.min(b.duration_s) as f64;
    let from_s = a.warmup_s.max(b.warmup_s) as f64;
    let truncated = a.duration_s != b.duration_s;

    let means_a = collect_means(a, from_s, to_s);
    let means_b = collect_means(b, from_s, to_s);

    let mut keys: Vec<(String, String)> = means_a.keys().cloned().collect();
    for key in means_b.keys() {
        if !means_a.contains_key(key) {
            keys.push(key.clone());
        }
    }
    keys.sort();

    let rows: Vec<CompareRow> = keys
        .into_iter()
        .map(|(entity, metric)| CompareRow {
            mean_a: means_a.get(&(entity.clone(), metric.clone())).copied(),
            mean_b: means_b.get(&(entity.clone(), metric.clone())).copied(),
            entity,
            metric,
        })
        .collect();

    let mut csv = String::from("entity,metric,mean_a,mean_b,delta\n");
    for row in &rows {
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.6}"));
        let _ = writeln!(
            csv,
            "{},{},{},{},{}",
            row.entity,
            row.metric,
            fmt(row.mean_a),
            fmt(row.mean_b),
            fmt(row.delta()),
        );
    }

    let mut text = String::new();
    let _ = writeln!(text, "comparison: A = {}, B = {}", a.scenario, b.scenario);
    let _ = writeln!(text, "span: {from_s:.0}..{to_s:.0} s (post-warmup means)");
    if truncated {
        let _ = writeln!(
            text,
            "note: horizons differ ({} s vs {} s); compared up to {to_s:.0} s",
            a.duration_s, b.duration_s
        );
    }
    let _ = writeln!(
        text,
        "{:<22} {:<18} {:>14} {:>14} {:>14}",
        "entity", "metric", "A", "B", "B-A"
    );
    for row in &rows {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
        let _ = writeln!(
            text,
            "{:<22} {:<18} {:>14} {:>14} {:>14}",
            row.entity,
            row.metric,
            fmt(row.mean_a),
            fmt(row.mean_b),
            fmt(row.delta()),
        );
    }

    CompareReport {
        label_a: a.scenario.clone(),
        label_b: b.scenario.clone(),
        from_s,
        to_s,
        truncated,
        rows,
        csv,
        text,
    }
}
