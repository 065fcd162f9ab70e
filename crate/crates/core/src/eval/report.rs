use serde::{Deserialize, Serialize};

use super::protocol::{Protocol, RunMetrics};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub k: usize,
    pub recall_mean: f64,
    pub recall_std: f64,
    pub ndcg_mean: f64,
    pub ndcg_std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub protocol: Protocol,
    pub recommender: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub k_list: Vec<usize>,
    pub metrics: Vec<MetricSummary>,
    pub per_run: Vec<RunMetrics>,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.k == k)
    }

    pub fn label(&self) -> String {
        format!("{} ({})", self.protocol, self.recommender)
    }
}

/// One row per report and one column per metric and k; across rows the best
/// mean is bold and the second best underlined.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let ks = &first.k_list;
    let mut out = format!("Dataset: {} ({} runs)\n\n| Setting |", first.dataset, first.runs);
    for k in ks {
        out.push_str(&format!(" Recall@{k} |"));
    }
    for k in ks {
        out.push_str(&format!(" NDCG@{k} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(2 * ks.len()));
    out.push('\n');

    let column = |f: &dyn Fn(&MetricSummary) -> (f64, f64), k: usize| -> Vec<Option<(f64, f64)>> {
        reports.iter().map(|r| r.at(k).map(f)).collect()
    };
    let mut columns = Vec::new();
    for &k in ks {
        columns.push(column(&|m| (m.recall_mean, m.recall_std), k));
    }
    for &k in ks {
        columns.push(column(&|m| (m.ndcg_mean, m.ndcg_std), k));
    }
    let ranks: Vec<Vec<Option<usize>>> = columns.iter().map(|c| rank_positions(c)).collect();
    for (row, report) in reports.iter().enumerate() {
        out.push_str(&format!("| {} |", report.label()));
        for (col, values) in columns.iter().enumerate() {
            let cell = match values[row] {
                None => "-".to_string(),
                Some((mean, std)) => {
                    let text = format!("{mean:.4} ± {std:.4}");
                    match ranks[col][row] {
                        Some(0) if reports.len() > 1 => format!("**{text}**"),
                        Some(1) if reports.len() > 2 => format!("<u>{text}</u>"),
                        _ => text,
                    }
                }
            };
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

/// Dense rank of every mean (0 = best); equal means share a rank.
fn rank_positions(values: &[Option<(f64, f64)>]) -> Vec<Option<usize>> {
    let mut distinct: Vec<f64> = values.iter().flatten().map(|v| v.0).collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    values
        .iter()
        .map(|v| v.map(|(m, _)| distinct.iter().position(|d| *d == m).expect("present")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(protocol: Protocol, recall: f64) -> EvalReport {
        EvalReport {
            dataset: "toy".into(),
            protocol,
            recommender: "mf".into(),
            runs: 1,
            seeds: vec![0],
            k_list: vec![10],
            metrics: vec![MetricSummary {
                k: 10,
                recall_mean: recall,
                recall_std: 0.0,
                ndcg_mean: 1.0 - recall,
                ndcg_std: 0.0,
            }],
            per_run: vec![],
        }
    }

    #[test]
    fn markdown_marks_best_and_second() {
        let md = render_markdown(&[
            report(Protocol::Original, 0.3),
            report(Protocol::Augment, 0.5),
            report(Protocol::Replace, 0.4),
        ]);
        assert!(md.contains("| augment (mf) | **0.5000 ± 0.0000** |"), "{md}");
        assert!(md.contains("| replace (mf) | <u>0.4000 ± 0.0000</u> | <u>0.6000 ± 0.0000</u> |"), "{md}");
        assert!(md.contains("| original (mf) | 0.3000 ± 0.0000 | **0.7000 ± 0.0000** |"), "{md}");
    }

    #[test]
    fn json_round_trip() {
        let r = report(Protocol::Replace, 0.25);
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&text).unwrap(), r);
    }
}
