//! Metrics rows and the text artifacts: CSV tables, JSON-lines curves,
//! and gnuplot-ready columns. Writers sort their input so reruns emit
//! byte-identical files.

use serde::{Deserialize, Serialize};

use super::experiments::{ConvergenceCurve, SweepCell};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scheme: String,
    pub high_rate_ratio: f64,
    pub seed: u64,
    pub episode: usize,
    pub mean_uncertainty: f64,
    pub mean_reward: f64,
    /// Constraint violations observed by the environment; zero on success.
    pub violations: u64,
}

fn sort_rows(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        (&a.scheme, &a.seed, a.episode)
            .cmp(&(&b.scheme, &b.seed, b.episode))
            .then(a.high_rate_ratio.total_cmp(&b.high_rate_ratio))
    });
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let mut out =
        String::from("scheme,high_rate_ratio,seed,episode,mean_uncertainty,mean_reward,violations\n");
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.scheme, r.high_rate_ratio, r.seed, r.episode, r.mean_uncertainty, r.mean_reward,
            r.violations
        ));
    }
    out
}

pub fn sweep_csv(cells: &[SweepCell]) -> String {
    let mut cells = cells.to_vec();
    cells.sort_by(|a, b| {
        a.ratio
            .total_cmp(&b.ratio)
            .then_with(|| a.scheme.cmp(&b.scheme))
    });
    let mut out = String::from("high_rate_ratio,scheme,mean_uncertainty,seeds\n");
    for c in &cells {
        out.push_str(&format!(
            "{},{},{},{}\n",
            c.ratio,
            c.scheme,
            c.mean_uncertainty,
            c.per_seed.len()
        ));
    }
    out
}

pub fn convergence_jsonl(curves: &[ConvergenceCurve]) -> String {
    let mut curves = curves.to_vec();
    curves.sort_by_key(|c| (c.artificial_updates, c.seed));
    let mut out = String::new();
    for c in &curves {
        out.push_str(&serde_json::to_string(c).expect("curve serializes"));
        out.push('\n');
    }
    out
}

/// Gnuplot-ready whitespace columns: ratio then one mean-uncertainty
/// column per scheme (sorted by name).
pub fn plot_data_columns(cells: &[SweepCell]) -> String {
    let mut schemes: Vec<String> = cells.iter().map(|c| c.scheme.clone()).collect();
    schemes.sort();
    schemes.dedup();
    let mut ratios: Vec<f64> = cells.iter().map(|c| c.ratio).collect();
    ratios.sort_by(f64::total_cmp);
    ratios.dedup();

    let mut out = String::from("# ratio");
    for s in &schemes {
        out.push(' ');
        out.push_str(s);
    }
    out.push('\n');
    for &ratio in &ratios {
        out.push_str(&format!("{ratio}"));
        for s in &schemes {
            let cell = cells
                .iter()
                .find(|c| c.ratio == ratio && &c.scheme == s)
                .map(|c| c.mean_uncertainty)
                .unwrap_or(f64::NAN);
            out.push_str(&format!(" {cell}"));
        }
        out.push('\n');
    }
    out
}
