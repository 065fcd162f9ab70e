//! Recommender training and ranking evaluation.

pub mod metrics;
pub mod mf;
pub mod protocol;
pub mod report;

pub use metrics::{ndcg_at_k, recall_at_k, recommend_topk};
pub use mf::{train_mf, MfFit, MfHyper, MfModel};
pub use protocol::{
    evaluate_protocol, evaluate_run, protocol_training, EvalData, Protocol, Recommender, RunMetrics, DEFAULT_K_LIST,
};
pub use report::{render_markdown, EvalReport, MetricSummary};
