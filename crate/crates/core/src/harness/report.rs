//! Quartile summaries and budget curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::stats::quantile_sorted;
use crate::tuners::{select_final, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Quartiles> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Quartiles {
            count: v.len(),
            median: quantile_sorted(&v, 0.5),
            q1: quantile_sorted(&v, 0.25),
            q3: quantile_sorted(&v, 0.75),
        })
    }
}

/// Quartiles per group; empty groups never appear.
pub fn summarize<K: Ord>(items: impl IntoIterator<Item = (K, f64)>) -> BTreeMap<K, Quartiles> {
    let mut groups: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for (k, v) in items {
        groups.entry(k).or_default().push(v);
    }
    groups
        .into_iter()
        .filter_map(|(k, v)| Quartiles::of(&v).map(|q| (k, q)))
        .collect()
}

/// `(rounds consumed, full-validation error of the config the tuner would
/// pick)` after every observation. The last point is replaced by the trial's
/// reported result, which may come from a final private selection.
pub fn budget_curve(trace: &[Observation], final_rounds: usize, final_error: f64) -> Vec<(usize, f64)> {
    let mut points: Vec<(usize, f64)> = Vec::new();
    for i in 0..trace.len() {
        let prefix = &trace[..=i];
        let Some(id) = select_final(prefix) else { continue };
        let err = prefix
            .iter()
            .rev()
            .find(|o| o.config_id == id)
            .map(|o| o.full_error)
            .expect("selected config was observed");
        let at = trace[i].consumed;
        match points.last_mut() {
            Some(last) if last.0 == at => last.1 = err,
            _ => points.push((at, err)),
        }
    }
    match points.last_mut() {
        Some(last) if last.0 == final_rounds => last.1 = final_error,
        _ => points.push((final_rounds, final_error)),
    }
    points
}

/// Quartiles across trials at every budget where any trial has a point;
/// each trial contributes its latest point at or below the budget.
pub fn curve_quantiles(curves: &[Vec<(usize, f64)>]) -> Vec<(usize, Quartiles)> {
    let mut budgets: Vec<usize> = curves.iter().flatten().map(|p| p.0).collect();
    budgets.sort_unstable();
    budgets.dedup();
    budgets
        .into_iter()
        .filter_map(|b| {
            let vals: Vec<f64> = curves
                .iter()
                .filter_map(|c| c.iter().take_while(|p| p.0 <= b).last().map(|p| p.1))
                .collect();
            Quartiles::of(&vals).map(|q| (b, q))
        })
        .collect()
}
